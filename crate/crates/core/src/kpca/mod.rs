//! Kernel PCA with an inhomogeneous polynomial kernel.
//!
//! Fitting builds the Gram matrix over (optionally standardized) training
//! rows, double-centers it, diagonalizes it with [`symmetric_eig`] and keeps
//! the leading `k` components as dual coefficients `v / sqrt(lambda)`.

mod eig;

use std::path::Path;

pub use eig::{symmetric_eig, SquareMatrix, SymmetricEigen};

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

/// `k(x, y) = (gain * <x, y> + offset) ^ degree`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub degree: u32,
    pub gain: f64,
    pub offset: f64,
}

impl KernelConfig {
    /// Degree-3 kernel with `gain = 1 / dim` and unit offset.
    pub fn cubic_for_dim(dim: usize) -> Self {
        KernelConfig {
            degree: 3,
            gain: 1.0 / dim.max(1) as f64,
            offset: 1.0,
        }
    }

    pub fn linear() -> Self {
        KernelConfig {
            degree: 1,
            gain: 1.0,
            offset: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree < 1 || !(self.gain > 0.0) || !(self.offset >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "kernel needs degree >= 1, gain > 0, offset >= 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

pub fn poly_kernel(x: &[f64], y: &[f64], cfg: &KernelConfig) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("kernel inputs of length {} and {}", x.len(), y.len())));
    }
    Ok(kernel_unchecked(x, y, cfg))
}

#[inline]
fn kernel_unchecked(x: &[f64], y: &[f64], cfg: &KernelConfig) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (cfg.gain * dot + cfg.offset).powi(cfg.degree as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Standardize each input column with training mean/std before the kernel.
    pub standardize: bool,
    /// Training rows are uniformly subsampled down to this many.
    pub max_rows: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            standardize: true,
            max_rows: 2000,
        }
    }
}

impl FitOptions {
    /// No standardization, no subsampling.
    pub fn raw() -> Self {
        FitOptions {
            standardize: false,
            max_rows: usize::MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KpcaModel {
    pub kernel: KernelConfig,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Column means subtracted before the kernel (zeros when not standardizing).
    pub feature_mean: Vec<f64>,
    /// Column scales divided out before the kernel (ones when not standardizing).
    pub feature_std: Vec<f64>,
    /// `N x in_dim` standardized training rows.
    pub training: Vec<f64>,
    pub kernel_row_means: Vec<f64>,
    pub kernel_grand_mean: f64,
    /// Retained eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Sum of all positive eigenvalues of the centered Gram matrix.
    pub spectrum_total: f64,
    /// `N x out_dim` dual coefficients.
    pub coefficients: Vec<f64>,
    /// Row count before subsampling.
    pub source_rows: u64,
    pub row_cap: u64,
}

/// Evenly strided subset of `n` indices of size `min(n, cap)`.
fn subsample_indices(n: usize, cap: usize) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    (0..cap).map(|i| ((i as u128 * n as u128) / cap as u128) as usize).collect()
}

/// Double-centers a symmetric Gram matrix in place and returns its row means
/// and grand mean.
pub fn center_gram(k: &mut SquareMatrix) -> (Vec<f64>, f64) {
    let n = k.n;
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let row_means: Vec<f64> = k.data.chunks_exact(n).map(|r| r.iter().sum::<f64>() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            let v = k.get(i, j) - row_means[i] - row_means[j] + grand;
            k.set(i, j, v);
        }
    }
    (row_means, grand)
}

pub fn fit(rows: &[Vec<f64>], out_dim: usize, cfg: &KernelConfig) -> Result<KpcaModel> {
    fit_with(rows, out_dim, cfg, &FitOptions::raw())
}

pub fn fit_with(rows: &[Vec<f64>], out_dim: usize, cfg: &KernelConfig, opts: &FitOptions) -> Result<KpcaModel> {
    cfg.validate()?;
    if out_dim < 1 {
        return Err(Error::InvalidInput("output dimension must be >= 1".into()));
    }
    let source_rows = rows.len();
    let idx = subsample_indices(source_rows, opts.max_rows.max(1));
    let n = idx.len();
    if n <= out_dim {
        return Err(Error::InvalidInput(format!(
            "need more than {out_dim} training rows, got {n}"
        )));
    }
    let dim = rows[0].len();
    if dim == 0 {
        return Err(Error::InvalidInput("training rows are empty".into()));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != dim {
            return Err(Error::Shape(format!("row {i} has {} columns, expected {dim}", r.len())));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("row {i} has non-finite values")));
        }
    }

    let (feature_mean, feature_std) = if opts.standardize {
        column_stats(idx.iter().map(|&i| rows[i].as_slice()), dim, n)
    } else {
        (vec![0.0; dim], vec![1.0; dim])
    };
    let mut training = Vec::with_capacity(n * dim);
    for &i in &idx {
        training.extend(rows[i].iter().zip(&feature_mean).zip(&feature_std).map(|((v, m), s)| (v - m) / s));
    }

    let mut gram = SquareMatrix::zeros(n);
    for i in 0..n {
        let xi = &training[i * dim..(i + 1) * dim];
        for j in i..n {
            let v = kernel_unchecked(xi, &training[j * dim..(j + 1) * dim], cfg);
            gram.set(i, j, v);
            gram.set(j, i, v);
        }
    }
    let (kernel_row_means, kernel_grand_mean) = center_gram(&mut gram);
    let eig = symmetric_eig(&gram)?;

    let lambda_max = eig.values.first().copied().unwrap_or(0.0);
    let threshold = 1e-10 * lambda_max;
    let available = if lambda_max > 0.0 {
        eig.values.iter().take_while(|&&v| v > threshold).count()
    } else {
        0
    };
    if available < out_dim {
        return Err(Error::RankDeficient {
            requested: out_dim,
            available,
        });
    }
    let spectrum_total: f64 = eig.values.iter().filter(|&&v| v > 0.0).sum();
    let eigenvalues: Vec<f64> = eig.values[..out_dim].to_vec();
    let mut coefficients = vec![0.0; n * out_dim];
    for (j, (v, &lambda)) in eig.vectors.iter().zip(&eigenvalues).enumerate() {
        let inv = 1.0 / lambda.sqrt();
        for i in 0..n {
            coefficients[i * out_dim + j] = v[i] * inv;
        }
    }

    Ok(KpcaModel {
        kernel: *cfg,
        in_dim: dim,
        out_dim,
        feature_mean,
        feature_std,
        training,
        kernel_row_means,
        kernel_grand_mean,
        eigenvalues,
        spectrum_total,
        coefficients,
        source_rows: source_rows as u64,
        row_cap: opts.max_rows as u64,
    })
}

fn column_stats<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, dim: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; dim];
    for r in rows.clone() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .into_iter()
        .map(|s| {
            let sd = (s / n as f64).sqrt();
            // constant columns pass through unscaled
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

impl KpcaModel {
    pub fn training_rows(&self) -> usize {
        self.kernel_row_means.len()
    }

    /// Projects one input vector onto the retained components.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::Shape(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.in_dim
            )));
        }
        let z: Vec<f64> = x
            .iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_std)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        let n = self.training_rows();
        let kv: Vec<f64> = self
            .training
            .chunks_exact(self.in_dim)
            .map(|row| kernel_unchecked(&z, row, &self.kernel))
            .collect();
        let kmean = kv.iter().sum::<f64>() / n as f64;
        let mut out = vec![0.0; self.out_dim];
        for i in 0..n {
            let centered = kv[i] - kmean - self.kernel_row_means[i] + self.kernel_grand_mean;
            let coef = &self.coefficients[i * self.out_dim..(i + 1) * self.out_dim];
            for (o, c) in out.iter_mut().zip(coef) {
                *o += centered * c;
            }
        }
        Ok(out)
    }

    pub fn transform_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.transform(r)).collect()
    }

    /// Prefix sums of the retained eigenvalues over the total positive spectrum.
    pub fn cumulative_explained_variance(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.eigenvalues
            .iter()
            .map(|&l| {
                acc += l;
                (acc / self.spectrum_total).min(1.0)
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(KPCA_MAGIC);
        w.u32(KPCA_VERSION);
        w.u32(self.in_dim as u32);
        w.u32(self.training_rows() as u32);
        w.u32(self.out_dim as u32);
        w.f64(self.kernel.degree as f64);
        w.f64(self.kernel.gain);
        w.f64(self.kernel.offset);
        w.f64s(&self.feature_mean);
        w.f64s(&self.feature_std);
        w.f64s(&self.training);
        w.f64s(&self.kernel_row_means);
        w.f64(self.kernel_grand_mean);
        w.f64s(&self.eigenvalues);
        w.f64s(&self.coefficients);
        w.f64(self.spectrum_total);
        w.u64(self.source_rows);
        w.u64(self.row_cap);
        w.buf
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new("KPCA", KPCA_MAGIC, buf)?;
        let version = r.u32("version")?;
        if version != KPCA_VERSION {
            return Err(r.err("version", format!("unsupported version {version}")));
        }
        let d = r.u32("D")? as usize;
        let n = r.u32("N")? as usize;
        let k = r.u32("k")? as usize;
        if d == 0 || k == 0 || n <= k {
            return Err(r.err("extents", format!("invalid D={d} N={n} k={k}")));
        }
        let degree = r.f64("kernel.degree")?;
        if !(degree >= 1.0 && degree.fract() == 0.0 && degree <= u32::MAX as f64) {
            return Err(r.err("kernel.degree", format!("{degree} is not a positive integer")));
        }
        let kernel = KernelConfig {
            degree: degree as u32,
            gain: r.f64("kernel.gain")?,
            offset: r.f64("kernel.offset")?,
        };
        kernel.validate().map_err(|e| r.err("kernel", e.to_string()))?;
        let feature_mean = r.f64s(d, "feature_mean")?;
        let feature_std = r.f64s(d, "feature_std")?;
        let training = r.f64s(r.count((n * d) as u64, 8, "training")?, "training")?;
        let kernel_row_means = r.f64s(n, "row_means")?;
        let kernel_grand_mean = r.f64("grand_mean")?;
        let eigenvalues = r.f64s(k, "eigenvalues")?;
        let coefficients = r.f64s(r.count((n * k) as u64, 8, "coefficients")?, "coefficients")?;
        let spectrum_total = r.f64("spectrum_total")?;
        let source_rows = r.u64("source_rows")?;
        let row_cap = r.u64("row_cap")?;
        r.finish()?;
        Ok(KpcaModel {
            kernel,
            in_dim: d,
            out_dim: k,
            feature_mean,
            feature_std,
            training,
            kernel_row_means,
            kernel_grand_mean,
            eigenvalues,
            spectrum_total,
            coefficients,
            source_rows,
            row_cap,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

const KPCA_MAGIC: &[u8; 4] = b"KPCA";
const KPCA_VERSION: u32 = 1;

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(data: &[&[f64]]) -> Vec<Vec<f64>> {
        data.iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn kernel_examples() {
        let cfg = KernelConfig { degree: 3, gain: 1.0, offset: 1.0 };
        assert_eq!(poly_kernel(&[1.0, 2.0], &[3.0, 1.0], &cfg).unwrap(), 216.0);
        assert_eq!(poly_kernel(&[0.0, 0.0], &[7.0, -2.0], &cfg).unwrap(), 1.0);
        assert_eq!(poly_kernel(&[1.5, 2.0], &[3.0, -1.0], &KernelConfig::linear()).unwrap(), 2.5);
        assert!(poly_kernel(&[1.0], &[1.0, 2.0], &cfg).is_err());
    }

    #[test]
    fn identical_rows_are_rank_deficient() {
        let x = vec![vec![1.0, 2.0, 3.0]; 6];
        let err = fit(&x, 2, &KernelConfig::cubic_for_dim(3)).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { available: 0, .. }));
    }

    #[test]
    fn too_few_rows() {
        let x = rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(fit(&x, 2, &KernelConfig::linear()).is_err());
    }

    #[test]
    fn cumulative_variance_hand_spectrum() {
        // Orthogonal, centered design whose centered Gram spectrum is [4,3,2,1]
        // up to scale: rows +-a_i e_i.
        let mut x = Vec::new();
        for (i, s) in [4.0f64, 3.0, 2.0, 1.0].iter().enumerate() {
            let a = (s / 2.0).sqrt();
            let mut p = vec![0.0; 4];
            p[i] = a;
            x.push(p.clone());
            p[i] = -a;
            x.push(p);
        }
        let m = fit(&x, 4, &KernelConfig::linear()).unwrap();
        let evr = m.cumulative_explained_variance();
        for (got, want) in evr.iter().zip([0.4, 0.7, 0.9, 1.0]) {
            assert!((got - want).abs() < 1e-12, "{evr:?}");
        }
    }

    #[test]
    fn rank_one_gives_full_variance() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let m = fit(&x, 1, &KernelConfig::linear()).unwrap();
        assert!((m.cumulative_explained_variance()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transform_reproduces_training_projection() {
        let x: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                let t = i as f64;
                vec![t.sin(), (1.3 * t).cos(), 0.1 * t, (t * 0.7).sin() * t]
            })
            .collect();
        let m = fit_with(&x, 3, &KernelConfig::cubic_for_dim(4), &FitOptions::default()).unwrap();
        // training projection straight from the eigenvectors: sqrt(lambda) * v
        for (i, r) in x.iter().enumerate() {
            let p = m.transform(r).unwrap();
            for j in 0..3 {
                let direct = m.coefficients[i * 3 + j] * m.eigenvalues[j];
                assert!((p[j] - direct).abs() < 1e-10, "row {i} comp {j}: {} vs {direct}", p[j]);
            }
        }
        assert!(m.transform(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn subsampling_caps_rows() {
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos()]).collect();
        let opts = FitOptions { standardize: true, max_rows: 10 };
        let m = fit_with(&x, 2, &KernelConfig::cubic_for_dim(2), &opts).unwrap();
        assert_eq!(m.training_rows(), 10);
        assert_eq!(m.source_rows, 50);
        assert_eq!(subsample_indices(50, 10), vec![0, 5, 10, 15, 20, 25, 30, 35, 40, 45]);
    }

    #[test]
    fn bytes_roundtrip_and_corruption() {
        let x: Vec<Vec<f64>> = (0..9).map(|i| vec![(i as f64).sin(), (i as f64).cos(), i as f64]).collect();
        let m = fit_with(&x, 2, &KernelConfig::cubic_for_dim(3), &FitOptions::default()).unwrap();
        let bytes = m.to_bytes();
        let back = KpcaModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(KpcaModel::from_bytes(&bad), Err(Error::Format { .. })));
        assert!(KpcaModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
