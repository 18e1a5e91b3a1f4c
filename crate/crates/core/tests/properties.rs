use nalgebra::DMatrix;
use neuroframe::data::{split_counts, split_dataset, DatasetManifest, ManifestEntry, Split, DEFAULT_RATIOS};
use neuroframe::eval::rmse_slices;
use neuroframe::features::{kurtosis, power_spectral_entropy, rms, zero_crossing_rate};
use neuroframe::kpca::{self, symmetric_eig, FitOptions, KernelConfig, SquareMatrix};
use neuroframe::signal::design_bandpass;
use neuroframe::WindowConfig;
use proptest::prelude::*;

fn window() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, 8..128)
}

fn manifest(n: usize) -> DatasetManifest {
    DatasetManifest::new(
        (0..n)
            .map(|i| ManifestEntry {
                subject: "s01".into(),
                utterance: format!("{i}"),
                eeg: format!("{i}.eegr"),
                video: format!("{i}.vidg"),
                split: None,
            })
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn feature_ranges(x in window()) {
        prop_assert!(rms(&x).unwrap() >= 0.0);
        let z = zero_crossing_rate(&x).unwrap();
        prop_assert!((0.0..=1.0).contains(&z));
        let cfg = WindowConfig { window_len: x.len(), hop: 1, fft_len: x.len().next_power_of_two() };
        let p = power_spectral_entropy(&x, &cfg).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&p));
    }

    #[test]
    fn feature_scaling(x in window(), c in 0.01f64..50.0, shift in -20.0f64..20.0) {
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        prop_assert!((rms(&scaled).unwrap() - c * rms(&x).unwrap()).abs() <= 1e-9 * c * rms(&x).unwrap().max(1.0));
        prop_assert_eq!(zero_crossing_rate(&scaled).unwrap(), zero_crossing_rate(&x).unwrap());
        let cfg = WindowConfig { window_len: x.len(), hop: 1, fft_len: x.len().next_power_of_two() };
        let p = power_spectral_entropy(&x, &cfg).unwrap();
        prop_assert!((power_spectral_entropy(&scaled, &cfg).unwrap() - p).abs() < 1e-9);
        if let Ok(k) = kurtosis(&x) {
            let affine: Vec<f64> = x.iter().map(|v| v * c + shift).collect();
            prop_assert!((kurtosis(&affine).unwrap() - k).abs() < 1e-6 * k);
        }
    }

    #[test]
    fn split_partitions(n in 3usize..1000, seed in 0u64..1000) {
        let m = manifest(n);
        let a = split_dataset(&m, DEFAULT_RATIOS, seed).unwrap();
        prop_assert_eq!(&a, &split_dataset(&m, DEFAULT_RATIOS, seed).unwrap());
        let mut ids: Vec<usize> = a.entries.iter().map(|e| e.utterance.parse().unwrap()).collect();
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..n).collect::<Vec<_>>());
        let sizes = [Split::Train, Split::Val, Split::Test].map(|s| a.entries.iter().filter(|e| e.split == Some(s)).count());
        prop_assert_eq!(sizes, split_counts(n, DEFAULT_RATIOS).unwrap());
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().all(|&s| s > 0));
    }

    #[test]
    fn eigen_reconstructs_and_is_orthonormal(n in 1usize..16, vals in prop::collection::vec(-10.0f64..10.0, 256)) {
        let mut m = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let v = vals[i * 16 + j];
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        let e = symmetric_eig(&m).unwrap();
        let scale = e.values.iter().fold(1e-12f64, |a, v| a.max(v.abs()));
        prop_assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        for i in 0..n {
            for j in 0..n {
                let r: f64 = (0..n).map(|k| e.values[k] * e.vectors[k][i] * e.vectors[k][j]).sum();
                prop_assert!((r - m.get(i, j)).abs() <= 1e-9 * scale);
                let dot: f64 = (0..n).map(|k| e.vectors[i][k] * e.vectors[j][k]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn linear_kpca_matches_pca_variances(n in 6usize..24, d in 1usize..6, vals in prop::collection::vec(-3.0f64..3.0, 24 * 6)) {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vals[i * 6..i * 6 + d].to_vec()).collect();
        let k = d.min(n - 1);
        let model = match kpca::fit_with(&rows, k, &KernelConfig::linear(), &FitOptions::raw()) {
            Ok(m) => m,
            Err(e) => { prop_assert!(e.is_numeric()); return Ok(()); }
        };
        // eigenvalues of the centered Gram equal those of the scatter matrix
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let xc = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
        let mut ev: Vec<f64> = (xc.transpose() * &xc).symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in model.eigenvalues.iter().zip(&ev) {
            prop_assert!((a - b).abs() <= 1e-8 * ev[0].max(1.0));
        }
        let scores = model.transform_rows(&rows).unwrap();
        for c in 0..model.out_dim {
            let var: f64 = scores.iter().map(|s| s[c] * s[c]).sum();
            prop_assert!((var - model.eigenvalues[c]).abs() <= 1e-8 * ev[0].max(1.0));
        }
    }

    #[test]
    fn rmse_permutation_invariant(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..200), rot in 0usize..200) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let r = rmse_slices(&a, &b).unwrap();
        let k = rot % a.len();
        let (mut ra, mut rb) = (a.clone(), b.clone());
        ra.rotate_left(k);
        rb.rotate_left(k);
        prop_assert!((rmse_slices(&ra, &rb).unwrap() - r).abs() <= 1e-9 * r.max(1.0));
        prop_assert!((rmse_slices(&b, &a).unwrap() - r).abs() <= 1e-12 * r.max(1.0));
        prop_assert_eq!(rmse_slices(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn bandpass_designs_are_stable(low in 0.05f64..20.0, width in 5.0f64..300.0, half_order in 1usize..5) {
        let high = (low + width).min(450.0);
        let f = design_bandpass(low, high, 2 * half_order, 1000.0).unwrap();
        prop_assert!(f.is_stable());
        prop_assert_eq!(f.stages.len(), half_order);
    }
}
