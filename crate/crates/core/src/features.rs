//! Windowed per-channel statistical features.
//!
//! Every channel contributes five values per tick, in this order: root mean
//! square, zero-crossing rate, moving window average, Pearson kurtosis and
//! normalized power spectral entropy.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::EegRecording;

pub const FEATURES_PER_CHANNEL: usize = 5;
pub const FEATURE_NAMES: [&str; FEATURES_PER_CHANNEL] = ["rms", "zcr", "mwa", "kurt", "pse"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_len: usize,
    pub hop: usize,
    pub fft_len: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_len: 100,
            hop: 10,
            fft_len: 128,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop < 1 {
            return Err(Error::InvalidInput("hop must be >= 1".into()));
        }
        if self.window_len < 2 {
            return Err(Error::InvalidInput("window length must be >= 2".into()));
        }
        if !self.fft_len.is_power_of_two() || self.fft_len < self.window_len {
            return Err(Error::InvalidInput(format!(
                "fft length {} must be a power of two >= window length {}",
                self.fft_len, self.window_len
            )));
        }
        Ok(())
    }
}

/// Row-major `T x dim` feature matrix sampled at `rate` Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub rate: u32,
    pub dim: usize,
    pub data: Vec<f64>,
    pub layout: Vec<String>,
}

impl FeatureSequence {
    /// Sequence with generic column names `f0..f{dim-1}`.
    pub fn new(rate: u32, dim: usize, data: Vec<f64>) -> Result<Self> {
        Self::with_layout(rate, (0..dim).map(|j| format!("f{j}")).collect(), data)
    }

    pub fn with_layout(rate: u32, layout: Vec<String>, data: Vec<f64>) -> Result<Self> {
        let dim = layout.len();
        if dim == 0 {
            return Err(Error::InvalidInput("feature dimension must be positive".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        Ok(FeatureSequence { rate, dim, data, layout })
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }
}

/// Channel-major feature names: `ch0.rms, ch0.zcr, ..., ch1.rms, ...`.
pub fn channel_layout(channels: usize) -> Vec<String> {
    (0..channels)
        .flat_map(|c| FEATURE_NAMES.iter().map(move |f| format!("ch{c}.{f}")))
        .collect()
}

pub fn rms(window: &[f64]) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::InvalidInput("rms of an empty window".into()));
    }
    let ms = window.iter().map(|v| v * v).sum::<f64>() / window.len() as f64;
    Ok(ms.sqrt())
}

/// Fraction of adjacent pairs with differing sign. Zeros inherit the sign of
/// the previous nonzero sample; leading zeros count as positive.
pub fn zero_crossing_rate(window: &[f64]) -> Result<f64> {
    if window.len() < 2 {
        return Err(Error::InvalidInput("zero-crossing rate needs at least 2 samples".into()));
    }
    let mut positive = true;
    let mut prev = None;
    let mut crossings = 0usize;
    for &v in window {
        if v > 0.0 {
            positive = true;
        } else if v < 0.0 {
            positive = false;
        }
        if let Some(p) = prev {
            if p != positive {
                crossings += 1;
            }
        }
        prev = Some(positive);
    }
    Ok(crossings as f64 / (window.len() - 1) as f64)
}

pub fn moving_window_average(window: &[f64]) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::InvalidInput("mean of an empty window".into()));
    }
    Ok(window.iter().sum::<f64>() / window.len() as f64)
}

/// Pearson (non-excess) kurtosis `m4 / m2^2` with 1/N central moments.
pub fn kurtosis(window: &[f64]) -> Result<f64> {
    if window.len() < 4 {
        return Err(Error::InvalidInput("kurtosis needs at least 4 samples".into()));
    }
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let mean_sq = window.iter().map(|v| v * v).sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &v in window {
        let d = (v - mean) * (v - mean);
        m2 += d;
        m4 += d * d;
    }
    m2 /= n;
    m4 /= n;
    if m2 <= 1e-12 * mean_sq || m2 == 0.0 {
        return Err(Error::DegenerateWindow(format!("variance {m2:e} too small for kurtosis")));
    }
    Ok(m4 / (m2 * m2))
}

/// Reusable periodogram plan for [`power_spectral_entropy`].
pub struct SpectralEntropy {
    fft: Arc<dyn Fft<f64>>,
    fft_len: usize,
    buf: Vec<Complex64>,
}

impl SpectralEntropy {
    pub fn new(fft_len: usize) -> Result<Self> {
        if fft_len < 2 || !fft_len.is_power_of_two() {
            return Err(Error::InvalidInput(format!("fft length {fft_len} must be a power of two >= 2")));
        }
        let fft = FftPlanner::new().plan_fft_forward(fft_len);
        Ok(SpectralEntropy {
            fft,
            fft_len,
            buf: vec![Complex64::new(0.0, 0.0); fft_len],
        })
    }

    /// Normalized Shannon entropy in `[0, 1]` of the one-sided periodogram
    /// bins `1..=fft_len/2`. Returns 0 for a window with no spectral power.
    pub fn compute(&mut self, window: &[f64]) -> Result<f64> {
        if window.len() < 2 {
            return Err(Error::InvalidInput("spectral entropy needs at least 2 samples".into()));
        }
        if window.len() > self.fft_len {
            return Err(Error::InvalidInput(format!(
                "window of {} samples exceeds fft length {}",
                window.len(),
                self.fft_len
            )));
        }
        for (slot, &v) in self.buf.iter_mut().zip(window.iter().chain(std::iter::repeat(&0.0))) {
            *slot = Complex64::new(v, 0.0);
        }
        self.fft.process(&mut self.buf);
        let bins = self.fft_len / 2;
        let power = &self.buf[1..=bins];
        let total: f64 = power.iter().map(|c| c.norm_sqr()).sum();
        if !(total > 0.0) || bins < 2 {
            return Ok(0.0);
        }
        let h: f64 = power
            .iter()
            .map(|c| c.norm_sqr() / total)
            .filter(|&p| p > 0.0)
            .map(|p| -p * p.ln())
            .sum();
        Ok((h / (bins as f64).ln()).clamp(0.0, 1.0))
    }
}

pub fn power_spectral_entropy(window: &[f64], cfg: &WindowConfig) -> Result<f64> {
    SpectralEntropy::new(cfg.fft_len)?.compute(window)
}

/// Extracts `channels * 5` features per hop-aligned tick.
pub fn extract_features(recording: &EegRecording, cfg: &WindowConfig) -> Result<FeatureSequence> {
    cfg.validate()?;
    recording.validate()?;
    let len = recording.len();
    if len < cfg.window_len {
        return Err(Error::InvalidInput(format!(
            "recording of {len} samples is shorter than one {}-sample window",
            cfg.window_len
        )));
    }
    if !(recording.sample_rate as usize).is_multiple_of(cfg.hop) {
        return Err(Error::InvalidInput(format!(
            "hop {} does not divide sample rate {}",
            cfg.hop, recording.sample_rate
        )));
    }
    let rate = recording.sample_rate / cfg.hop as u32;
    let ticks = (len - cfg.window_len) / cfg.hop + 1;
    let dim = recording.num_channels() * FEATURES_PER_CHANNEL;
    let mut pse = SpectralEntropy::new(cfg.fft_len)?;
    let mut data = vec![0.0; ticks * dim];
    for (t, row) in data.chunks_exact_mut(dim).enumerate() {
        let start = t * cfg.hop;
        for (c, ch) in recording.channels.iter().enumerate() {
            let w = &ch[start..start + cfg.window_len];
            let out = &mut row[c * FEATURES_PER_CHANNEL..(c + 1) * FEATURES_PER_CHANNEL];
            out[0] = rms(w)?;
            out[1] = zero_crossing_rate(w)?;
            out[2] = moving_window_average(w)?;
            out[3] = match kurtosis(w) {
                Ok(k) => k,
                Err(Error::DegenerateWindow(_)) => 0.0,
                Err(e) => return Err(e),
            };
            out[4] = pse.compute(w)?;
        }
    }
    FeatureSequence::with_layout(rate, channel_layout(recording.num_channels()), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rms_examples() {
        assert_eq!(rms(&[2.0, 2.0, 2.0]).unwrap(), 2.0);
        assert_eq!(rms(&[0.0; 3]).unwrap(), 0.0);
        assert_relative_eq!(rms(&[3.0, 4.0]).unwrap(), 3.5355339059327378, epsilon = 1e-12);
        assert!(rms(&[]).is_err());
    }

    #[test]
    fn zcr_examples() {
        assert_eq!(zero_crossing_rate(&[1.0, -1.0, 1.0, -1.0]).unwrap(), 1.0);
        assert_eq!(zero_crossing_rate(&[5.0, 5.0, 5.0]).unwrap(), 0.0);
        assert_eq!(zero_crossing_rate(&[1.0, 2.0, -3.0, 4.0, 5.0]).unwrap(), 0.5);
        assert!(zero_crossing_rate(&[1.0]).is_err());
    }

    #[test]
    fn zcr_zero_carries_previous_sign() {
        // 0 after a negative stays negative: one crossing (-1 -> 2)
        assert_eq!(zero_crossing_rate(&[-1.0, 0.0, 0.0, 2.0]).unwrap(), 1.0 / 3.0);
        // leading zeros are positive
        assert_eq!(zero_crossing_rate(&[0.0, 0.0, 3.0]).unwrap(), 0.0);
        assert_eq!(zero_crossing_rate(&[0.0, -3.0]).unwrap(), 1.0);
    }

    #[test]
    fn mean_examples() {
        assert_eq!(moving_window_average(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert_eq!(moving_window_average(&[7.5; 9]).unwrap(), 7.5);
        assert_relative_eq!(moving_window_average(&[-1.0, 4.0, 7.0]).unwrap(), 10.0 / 3.0);
        assert!(moving_window_average(&[]).is_err());
    }

    #[test]
    fn kurtosis_examples() {
        assert_relative_eq!(kurtosis(&[1.0, 1.0, -1.0, -1.0]).unwrap(), 1.0);
        assert!(matches!(kurtosis(&[3.0; 4]), Err(Error::DegenerateWindow(_))));
        assert!(matches!(kurtosis(&[0.0; 8]), Err(Error::DegenerateWindow(_))));
        assert!(kurtosis(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn pse_degenerate_and_on_bin() {
        let cfg = WindowConfig::default();
        assert_eq!(power_spectral_entropy(&[0.0; 100], &cfg).unwrap(), 0.0);
        let cfg = WindowConfig { window_len: 128, hop: 10, fft_len: 128 };
        let x: Vec<f64> = (0..128)
            .map(|i| (2.0 * std::f64::consts::PI * 9.0 * i as f64 / 128.0).sin())
            .collect();
        assert!(power_spectral_entropy(&x, &cfg).unwrap() <= 0.05);
        assert!(power_spectral_entropy(&[1.0; 200], &cfg).is_err());
    }

    #[test]
    fn extract_shapes() {
        let rec = EegRecording::new(
            1000,
            (0..2).map(|c| (0..200).map(|i| ((i * (c + 3)) as f64).sin()).collect()).collect(),
            "s",
        )
        .unwrap();
        let fs = extract_features(&rec, &WindowConfig::default()).unwrap();
        assert_eq!(fs.rows(), 11);
        assert_eq!(fs.dim, 10);
        assert_eq!(fs.rate, 100);
        assert_eq!(fs.layout[0], "ch0.rms");
        assert_eq!(fs.layout[9], "ch1.pse");

        let short = EegRecording::new(1000, vec![vec![0.0; 50]], "s").unwrap();
        assert!(extract_features(&short, &WindowConfig::default()).is_err());
    }

    #[test]
    fn flat_channel_emits_zero_kurtosis() {
        let rec = EegRecording::new(1000, vec![vec![1.0; 120]], "s").unwrap();
        let fs = extract_features(&rec, &WindowConfig::default()).unwrap();
        assert!(fs.iter_rows().all(|r| r[3] == 0.0 && r[0] == 1.0));
    }
}
