//! IIR filtering of raw multichannel EEG.
//!
//! Band-pass filters are Butterworth designs obtained through the bilinear
//! transform with frequency pre-warping and factored into second-order
//! sections. All filtering runs causally in direct-form II transposed with
//! `f64` state.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

/// Floor used for the magnitude response when the transfer function has an
/// exact zero on the unit circle.
pub const MAGNITUDE_FLOOR_DB: f64 = -300.0;

/// Default notch quality factor.
pub const DEFAULT_NOTCH_Q: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EegRecording {
    pub sample_rate: u32,
    /// One time series per channel; all of equal length.
    pub channels: Vec<Vec<f64>>,
    pub subject_id: String,
}

impl EegRecording {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>, subject_id: impl Into<String>) -> Result<Self> {
        let rec = EegRecording {
            sample_rate,
            channels,
            subject_id: subject_id.into(),
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        let Some(first) = self.channels.first() else {
            return Err(Error::InvalidInput("recording has no channels".into()));
        };
        if first.is_empty() {
            return Err(Error::InvalidInput("recording has no samples".into()));
        }
        if let Some(i) = self.channels.iter().position(|c| c.len() != first.len()) {
            return Err(Error::InvalidInput(format!(
                "channel {i} has {} samples, expected {}",
                self.channels[i].len(),
                first.len()
            )));
        }
        Ok(())
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Second-order section with `a0` normalized to 1.
///
/// `y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2]`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    pub const IDENTITY: Biquad = Biquad {
        b0: 1.0,
        b1: 0.0,
        b2: 0.0,
        a1: 0.0,
        a2: 0.0,
    };

    /// Largest pole magnitude of the section.
    pub fn pole_radius(&self) -> f64 {
        // roots of z^2 + a1 z + a2
        let disc = self.a1 * self.a1 - 4.0 * self.a2;
        if disc >= 0.0 {
            let s = disc.sqrt();
            let r1 = (-self.a1 + s) / 2.0;
            let r2 = (-self.a1 - s) / 2.0;
            r1.abs().max(r2.abs())
        } else {
            // complex pair: |z|^2 = a2
            self.a2.sqrt()
        }
    }

    pub fn is_stable(&self) -> bool {
        self.pole_radius() < 1.0
    }

    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        let num = self.b0 + z_inv * self.b1 + z2 * self.b2;
        let den = 1.0 + z_inv * self.a1 + z2 * self.a2;
        num / den
    }

    fn scaled(self, g: f64) -> Biquad {
        Biquad {
            b0: self.b0 * g,
            b1: self.b1 * g,
            b2: self.b2 * g,
            ..self
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterKind {
    BandPass { low_hz: f64, high_hz: f64, order: usize },
    Notch { freq_hz: f64, q: f64 },
    /// Hand-built or chained cascade.
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterCascade {
    pub stages: Vec<Biquad>,
    pub kind: FilterKind,
    /// Sample rate the coefficients were designed for.
    pub sample_rate: f64,
}

impl FilterCascade {
    pub fn from_stages(stages: Vec<Biquad>, sample_rate: f64) -> Self {
        FilterCascade {
            stages,
            kind: FilterKind::Custom,
            sample_rate,
        }
    }

    /// Series connection of `self` followed by `other`.
    pub fn then(&self, other: &FilterCascade) -> Result<FilterCascade> {
        if self.sample_rate != other.sample_rate {
            return Err(Error::Design(format!(
                "cannot chain cascades designed at {} Hz and {} Hz",
                self.sample_rate, other.sample_rate
            )));
        }
        let mut stages = self.stages.clone();
        stages.extend_from_slice(&other.stages);
        Ok(FilterCascade::from_stages(stages, self.sample_rate))
    }

    pub fn is_stable(&self) -> bool {
        self.stages.iter().all(Biquad::is_stable)
    }

    /// Filters one channel in place with zero initial state.
    pub fn filter_in_place(&self, x: &mut [f64]) {
        for st in &self.stages {
            let (mut s1, mut s2) = (0.0, 0.0);
            for v in x.iter_mut() {
                let input = *v;
                let y = st.b0 * input + s1;
                s1 = st.b1 * input - st.a1 * y + s2;
                s2 = st.b2 * input - st.a2 * y;
                *v = y;
            }
        }
    }

    fn complex_response(&self, freq: f64, fs: f64) -> Complex64 {
        let w = 2.0 * PI * freq / fs;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.stages
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, st| acc * st.response(z_inv))
    }
}

fn prewarp(f: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * f / fs).tan()
}

fn bilinear(s: Complex64, fs: f64) -> Complex64 {
    let k = 2.0 * fs;
    (k + s) / (k - s)
}

/// Butterworth band-pass of total order `order` (`order / 2` biquads).
pub fn design_bandpass(low_hz: f64, high_hz: f64, order: usize, fs: f64) -> Result<FilterCascade> {
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::Design(format!("sample rate {fs} must be positive")));
    }
    let nyquist = fs / 2.0;
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist) {
        return Err(Error::Design(format!(
            "band-pass cutoffs must satisfy 0 < low < high < fs/2, got low={low_hz} high={high_hz} fs={fs}"
        )));
    }
    if order < 2 || !order.is_multiple_of(2) {
        return Err(Error::Design(format!("band-pass order must be even and >= 2, got {order}")));
    }
    let n = order / 2;
    let w_lo = prewarp(low_hz, fs);
    let w_hi = prewarp(high_hz, fs);
    let bw = w_hi - w_lo;
    let w0_sq = w_lo * w_hi;

    // Upper-half-plane prototype poles (plus the real pole for odd n); the
    // conjugates are implied by each section.
    let mut stages = Vec::with_capacity(n);
    for k in 0..n {
        let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
        let p = Complex64::from_polar(1.0, theta);
        if p.im < -1e-12 {
            continue;
        }
        let half = p * (bw / 2.0);
        let root = (half * half - w0_sq).sqrt();
        let (s1, s2) = (half + root, half - root);
        if p.im.abs() <= 1e-12 {
            // real prototype pole: s1, s2 are a conjugate pair or both real
            let (z1, z2) = (bilinear(s1, fs), bilinear(s2, fs));
            stages.push(Biquad {
                b0: 1.0,
                b1: 0.0,
                b2: -1.0,
                a1: -(z1 + z2).re,
                a2: (z1 * z2).re,
            });
        } else {
            for s in [s1, s2] {
                let z = bilinear(s, fs);
                stages.push(Biquad {
                    b0: 1.0,
                    b1: 0.0,
                    b2: -1.0,
                    a1: -2.0 * z.re,
                    a2: z.norm_sqr(),
                });
            }
        }
    }
    debug_assert_eq!(stages.len(), n);

    // unit gain at the digital image of the analog center frequency
    let w0 = w0_sq.sqrt();
    let f_center = fs / PI * (w0 / (2.0 * fs)).atan();
    let mut cascade = FilterCascade {
        stages,
        kind: FilterKind::BandPass { low_hz, high_hz, order },
        sample_rate: fs,
    };
    let g = cascade.complex_response(f_center, fs).norm();
    let per_stage = g.powf(-1.0 / n as f64);
    for st in &mut cascade.stages {
        *st = st.scaled(per_stage);
    }
    Ok(cascade)
}

/// Second-order IIR notch centered at `freq_hz` with bandwidth `freq_hz / q`.
pub fn design_notch(freq_hz: f64, q: f64, fs: f64) -> Result<FilterCascade> {
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::Design(format!("sample rate {fs} must be positive")));
    }
    if !(freq_hz > 0.0 && freq_hz < fs / 2.0) {
        return Err(Error::Design(format!(
            "notch frequency {freq_hz} Hz must lie in (0, {}) Hz",
            fs / 2.0
        )));
    }
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::Design(format!("notch quality factor must be positive, got {q}")));
    }
    let w0 = 2.0 * PI * freq_hz / fs;
    let bw = w0 / q;
    let gain = 1.0 / (1.0 + (bw / 2.0).tan());
    let c = -2.0 * gain * w0.cos();
    Ok(FilterCascade {
        stages: vec![Biquad {
            b0: gain,
            b1: c,
            b2: gain,
            a1: c,
            a2: 2.0 * gain - 1.0,
        }],
        kind: FilterKind::Notch { freq_hz, q },
        sample_rate: fs,
    })
}

/// Filters every channel independently. Output length equals input length.
pub fn apply_filter(cascade: &FilterCascade, recording: &EegRecording) -> Result<EegRecording> {
    recording.validate()?;
    if (cascade.sample_rate - recording.sample_rate as f64).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "cascade designed for {} Hz applied to a {} Hz recording",
            cascade.sample_rate, recording.sample_rate
        )));
    }
    let channels = recording
        .channels
        .iter()
        .map(|ch| {
            let mut out = ch.clone();
            cascade.filter_in_place(&mut out);
            out
        })
        .collect();
    Ok(EegRecording {
        sample_rate: recording.sample_rate,
        channels,
        subject_id: recording.subject_id.clone(),
    })
}

/// Magnitude response in dB at `freq`, clamped below at [`MAGNITUDE_FLOOR_DB`].
pub fn frequency_response(cascade: &FilterCascade, freq: f64, fs: f64) -> Result<f64> {
    if !(fs > 0.0) || !(0.0..=fs / 2.0).contains(&freq) {
        return Err(Error::InvalidInput(format!(
            "frequency {freq} Hz outside [0, {}] Hz",
            fs / 2.0
        )));
    }
    let mag = cascade.complex_response(freq, fs).norm();
    let db = 20.0 * mag.log10();
    Ok(if db.is_finite() { db.max(MAGNITUDE_FLOOR_DB) } else { MAGNITUDE_FLOOR_DB })
}

#[cfg(test)]
mod tests {
    use super::*;

    // Analog Butterworth band-pass magnitude evaluated at the pre-warped
    // frequency; the bilinear transform maps it exactly onto the digital
    // response, so this is an independent closed-form oracle.
    fn analytic_bandpass_db(f: f64, lo: f64, hi: f64, order: usize, fs: f64) -> f64 {
        let w = |x: f64| 2.0 * fs * (PI * x / fs).tan();
        let (w1, w2, wf) = (w(lo), w(hi), w(f));
        let omega = (wf * wf - w1 * w2) / (wf * (w2 - w1));
        -10.0 * (1.0 + omega.powi(order as i32)).log10()
    }

    #[test]
    fn bandpass_matches_analytic_butterworth() {
        let bp = design_bandpass(0.1, 70.0, 4, 1000.0).unwrap();
        assert_eq!(bp.stages.len(), 2);
        assert!(bp.is_stable());
        for f in [1.0, 10.0, 50.0, 70.0, 120.0, 200.0, 400.0] {
            let got = frequency_response(&bp, f, 1000.0).unwrap();
            let want = analytic_bandpass_db(f, 0.1, 70.0, 4, 1000.0);
            assert!((got - want).abs() < 1e-6, "f={f} got={got} want={want}");
        }
        // frozen from the oracle above
        let at200 = frequency_response(&bp, 200.0, 1000.0).unwrap();
        assert!((at200 - -20.537944066).abs() < 1e-6);
    }

    #[test]
    fn higher_orders_are_stable() {
        for order in [2, 4, 6, 8] {
            let bp = design_bandpass(1.0, 40.0, order, 250.0).unwrap();
            assert_eq!(bp.stages.len(), order / 2);
            assert!(bp.is_stable());
            let mid = frequency_response(&bp, (1.0f64 * 40.0).sqrt(), 250.0).unwrap();
            assert!(mid.abs() < 0.5, "order {order}: {mid}");
        }
    }

    #[test]
    fn bandpass_rejects_bad_cutoffs() {
        assert!(design_bandpass(70.0, 0.1, 4, 1000.0).is_err());
        assert!(design_bandpass(10.0, 10.0, 4, 1000.0).is_err());
        assert!(design_bandpass(0.1, 500.0, 4, 1000.0).is_err());
        assert!(design_bandpass(0.0, 70.0, 4, 1000.0).is_err());
        assert!(design_bandpass(0.1, 70.0, 3, 1000.0).is_err());
    }

    #[test]
    fn notch_response() {
        let n = design_notch(60.0, 30.0, 1000.0).unwrap();
        assert!(n.is_stable());
        assert!(frequency_response(&n, 60.0, 1000.0).unwrap() <= -30.0);
        for f in [10.0, 120.0] {
            assert!(frequency_response(&n, f, 1000.0).unwrap().abs() <= 1.0);
        }
        assert!(design_notch(600.0, 30.0, 1000.0).is_err());
        assert!(design_notch(60.0, 0.0, 1000.0).is_err());
    }

    #[test]
    fn response_floor_and_identity() {
        let id = FilterCascade::from_stages(vec![Biquad::IDENTITY], 1000.0);
        for f in [0.0, 13.0, 500.0] {
            assert_eq!(frequency_response(&id, f, 1000.0).unwrap(), 0.0);
        }
        let bp = design_bandpass(0.1, 70.0, 4, 1000.0).unwrap();
        assert_eq!(frequency_response(&bp, 0.0, 1000.0).unwrap(), MAGNITUDE_FLOOR_DB);
        assert!(frequency_response(&bp, 600.0, 1000.0).is_err());
    }

    #[test]
    fn zero_in_zero_out() {
        let bp = design_bandpass(0.1, 70.0, 4, 1000.0).unwrap();
        let rec = EegRecording::new(1000, vec![vec![0.0; 500]; 3], "s").unwrap();
        let out = apply_filter(&bp, &rec).unwrap();
        assert_eq!(out.len(), 500);
        assert!(out.channels.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn passband_sinusoid_keeps_amplitude() {
        let bp = design_bandpass(0.1, 70.0, 4, 1000.0).unwrap();
        let x: Vec<f64> = (0..3000).map(|i| (2.0 * PI * 10.0 * i as f64 / 1000.0).sin()).collect();
        let rec = EegRecording::new(1000, vec![x], "s").unwrap();
        let out = apply_filter(&bp, &rec).unwrap();
        let peak = out.channels[0][1000..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 1.0).abs() < 0.12, "peak {peak}");
    }

    #[test]
    fn sample_rate_mismatch_is_rejected() {
        let bp = design_bandpass(0.1, 70.0, 4, 1000.0).unwrap();
        let rec = EegRecording::new(500, vec![vec![1.0; 10]], "s").unwrap();
        assert!(apply_filter(&bp, &rec).is_err());
    }
}
