use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::manifest::{split_per_subject, DatasetManifest, ManifestEntry, DEFAULT_RATIOS};
use super::{save_eeg, save_video, VideoSequence, DEFAULT_FPS, FRAME_PIXELS};
use crate::error::{Error, Result};
use crate::features::WindowConfig;
use crate::models::FRAME_SIZE;
use crate::signal::{design_bandpass, EegRecording};

pub const SYNTH_SAMPLE_RATE: u32 = 1000;
/// Scale of the mixed latent signal in the synthetic EEG, in microvolts.
const EEG_SCALE: f64 = 20.0;
const SINUSOIDS_PER_LATENT: usize = 3;
/// Ellipse parameters driven by the latent: center x/y, semi-axes x/y, intensity.
const RENDER_PARAMS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub subjects: usize,
    pub utterances: usize,
    /// Feature ticks (and frames) per utterance.
    pub ticks: usize,
    pub latent_dim: usize,
    pub channels: usize,
    /// Standard deviation of the band-limited EEG noise relative to the signal scale.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects: 7,
            utterances: 10,
            ticks: 64,
            latent_dim: 4,
            channels: 31,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("subjects", self.subjects),
            ("utterances", self.utterances),
            ("ticks", self.ticks),
            ("latent_dim", self.latent_dim),
            ("channels", self.channels),
        ] {
            if v == 0 {
                return Err(Error::InvalidInput(format!("synth {name} must be >= 1")));
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidInput(format!("synth noise {} must be >= 0", self.noise)));
        }
        Ok(())
    }

    /// Raw EEG samples per utterance so that default windowing yields `ticks` rows.
    pub fn samples_per_utterance(&self) -> usize {
        let w = WindowConfig::default();
        (self.ticks - 1) * w.hop + w.window_len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthUtterance {
    pub subject: String,
    pub utterance: String,
    pub eeg: EegRecording,
    pub video: VideoSequence,
}

impl SynthUtterance {
    pub fn file_stem(&self) -> String {
        format!("{}_{}", self.subject, self.utterance)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub utterances: Vec<SynthUtterance>,
    /// Entries point at `eeg/<stem>.eegr` and `video/<stem>.vidg`.
    pub manifest: DatasetManifest,
}

struct Subject {
    id: String,
    mixing: Vec<Vec<f64>>,
    background: f64,
    offset: (f64, f64),
}

fn latent_trajectory(rng: &mut ChaCha8Rng, latent_dim: usize) -> Vec<[(f64, f64, f64); SINUSOIDS_PER_LATENT]> {
    (0..latent_dim)
        .map(|_| {
            std::array::from_fn(|_| {
                let freq = rng.gen_range(0.5..4.0);
                let phase = rng.gen_range(0.0..2.0 * PI);
                let amp = rng.gen_range(0.5..1.0) / (SINUSOIDS_PER_LATENT as f64).sqrt();
                (freq, phase, amp)
            })
        })
        .collect()
}

fn latent_at(traj: &[[(f64, f64, f64); SINUSOIDS_PER_LATENT]], t: f64) -> Vec<f64> {
    traj.iter()
        .map(|parts| parts.iter().map(|&(f, p, a)| a * (2.0 * PI * f * t + p).sin()).sum())
        .collect()
}

fn render_frame(params: &[f64], subject: &Subject, out: &mut [u8]) {
    let cx = 50.0 + subject.offset.0 + 12.0 * params[0];
    let cy = 60.0 + subject.offset.1 + 6.0 * params[1];
    let ax = (20.0 + 6.0 * params[2]).max(3.0);
    let ay = (10.0 + 6.0 * params[3]).max(2.0);
    let fg = (200.0 + 40.0 * params[4]).clamp(0.0, 255.0).round() as u8;
    let bg = subject.background.round() as u8;
    for y in 0..FRAME_SIZE {
        let dy = (y as f64 + 0.5 - cy) / ay;
        for x in 0..FRAME_SIZE {
            let dx = (x as f64 + 0.5 - cx) / ax;
            out[y * FRAME_SIZE + x] = if dx * dx + dy * dy <= 1.0 { fg } else { bg };
        }
    }
}

/// Paired synthetic recordings driven by one latent trajectory per utterance.
///
/// EEG channels are a fixed per-subject linear mixture of the latent plus
/// 1-40 Hz band-limited noise at 1000 Hz, faded in over the first feature
/// window. Frame `k` is rendered at the center of feature window `k`, as a
/// filled ellipse whose center, semi-axes and intensity are affine in the
/// latent. Each subject has its own background level and mouth offset.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let render_scale = 1.0 / (cfg.latent_dim as f64).sqrt();
    let render: Vec<Vec<f64>> = (0..RENDER_PARAMS)
        .map(|_| (0..cfg.latent_dim).map(|_| unit.sample(&mut rng) * render_scale).collect())
        .collect();
    let subjects: Vec<Subject> = (0..cfg.subjects)
        .map(|s| Subject {
            id: format!("s{:02}", s + 1),
            mixing: (0..cfg.channels)
                .map(|_| (0..cfg.latent_dim).map(|_| unit.sample(&mut rng)).collect())
                .collect(),
            background: 20.0 + 90.0 * (s as f64 / cfg.subjects.max(2) as f64),
            offset: (rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)),
        })
        .collect();

    let fs = SYNTH_SAMPLE_RATE as f64;
    let win = WindowConfig::default();
    let n = cfg.samples_per_utterance();
    let noise_filter = design_bandpass(1.0, 40.0, 4, fs)?;
    let noise_dist = Normal::new(0.0, cfg.noise * EEG_SCALE).map_err(|e| Error::InvalidInput(e.to_string()))?;

    // Raised-cosine onset over the first window: a recording that starts at
    // full amplitude rings the zero-state band-pass and produces kurtosis
    // outliers in the first tick.
    let fade: Vec<f64> = (0..win.window_len.min(n))
        .map(|i| 0.5 - 0.5 * (PI * i as f64 / win.window_len as f64).cos())
        .collect();
    let mut utterances = Vec::with_capacity(cfg.subjects * cfg.utterances);
    for subject in &subjects {
        for u in 0..cfg.utterances {
            let traj = latent_trajectory(&mut rng, cfg.latent_dim);
            let z: Vec<Vec<f64>> = (0..n).map(|i| latent_at(&traj, i as f64 / fs)).collect();
            let channels = subject
                .mixing
                .iter()
                .map(|row| {
                    let mut ch: Vec<f64> = z
                        .iter()
                        .map(|zt| EEG_SCALE * row.iter().zip(zt).map(|(a, b)| a * b).sum::<f64>())
                        .collect();
                    if cfg.noise > 0.0 {
                        let mut noise: Vec<f64> = (0..n).map(|_| noise_dist.sample(&mut rng)).collect();
                        noise_filter.filter_in_place(&mut noise);
                        ch.iter_mut().zip(noise).for_each(|(c, e)| *c += e);
                    }
                    for (c, g) in ch.iter_mut().zip(&fade) {
                        *c *= g;
                    }
                    ch
                })
                .collect();
            let eeg = EegRecording::new(SYNTH_SAMPLE_RATE, channels, subject.id.clone())?;

            let mut frames = vec![0u8; cfg.ticks * FRAME_PIXELS];
            for (k, frame) in frames.chunks_exact_mut(FRAME_PIXELS).enumerate() {
                let t = (k * win.hop) as f64 / fs + win.window_len as f64 / (2.0 * fs);
                let zt = latent_at(&traj, t);
                let params: Vec<f64> = render
                    .iter()
                    .map(|row| row.iter().zip(&zt).map(|(a, b)| a * b).sum())
                    .collect();
                render_frame(&params, subject, frame);
            }
            let video = VideoSequence::new(DEFAULT_FPS, frames, subject.id.clone())?;
            utterances.push(SynthUtterance {
                subject: subject.id.clone(),
                utterance: format!("u{u:03}"),
                eeg,
                video,
            });
        }
    }

    let entries = utterances
        .iter()
        .map(|u| ManifestEntry {
            subject: u.subject.clone(),
            utterance: u.utterance.clone(),
            eeg: format!("eeg/{}.eegr", u.file_stem()),
            video: format!("video/{}.vidg", u.file_stem()),
            split: None,
        })
        .collect();
    let mut manifest = DatasetManifest::new(entries);
    if cfg.utterances >= 3 {
        manifest = split_per_subject(&manifest, DEFAULT_RATIOS, cfg.seed)?;
    } else {
        manifest.seed = Some(cfg.seed);
    }
    Ok(SynthDataset { utterances, manifest })
}

/// Writes `eeg/`, `video/` and `manifest.json` under `dir`; returns the manifest path.
pub fn write_synth(ds: &SynthDataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("eeg"))?;
    fs::create_dir_all(dir.join("video"))?;
    for (u, e) in ds.utterances.iter().zip(&ds.manifest.entries) {
        save_eeg(dir.join(&e.eeg), &u.eeg)?;
        save_video(dir.join(&e.video), &u.video)?;
    }
    let path = dir.join("manifest.json");
    ds.manifest.save(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::extract_features;

    fn small(noise: f64) -> SynthConfig {
        SynthConfig {
            subjects: 2,
            utterances: 3,
            ticks: 12,
            channels: 8,
            noise,
            seed: 4,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn seven_subjects_in_manifest() {
        let ds = synth_generate(&SynthConfig {
            utterances: 3,
            ticks: 2,
            channels: 2,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_eq!(ds.manifest.subjects().len(), 7);
        assert!(ds.manifest.entries.iter().all(|e| e.split.is_some()));
    }

    #[test]
    fn same_seed_identical() {
        assert_eq!(synth_generate(&small(0.1)).unwrap(), synth_generate(&small(0.1)).unwrap());
        assert_ne!(
            synth_generate(&small(0.1)).unwrap(),
            synth_generate(&SynthConfig { seed: 5, ..small(0.1) }).unwrap()
        );
    }

    #[test]
    fn tick_count_matches_frames() {
        let ds = synth_generate(&small(0.1)).unwrap();
        for u in &ds.utterances {
            let f = extract_features(&u.eeg, &WindowConfig::default()).unwrap();
            assert_eq!(f.rows(), u.video.len());
            assert_eq!(f.rate, u.video.fps);
        }
    }

    /// Smallest-magnitude pivots of a Gaussian elimination on the channel
    /// covariance; with no noise everything past the latent dimension vanishes.
    fn covariance_rank(eeg: &EegRecording, tol: f64) -> usize {
        let c = eeg.num_channels();
        let n = eeg.len() as f64;
        let means: Vec<f64> = eeg.channels.iter().map(|ch| ch.iter().sum::<f64>() / n).collect();
        let mut m: Vec<Vec<f64>> = (0..c)
            .map(|i| {
                (0..c)
                    .map(|j| {
                        eeg.channels[i]
                            .iter()
                            .zip(&eeg.channels[j])
                            .map(|(a, b)| (a - means[i]) * (b - means[j]))
                            .sum::<f64>()
                            / n
                    })
                    .collect()
            })
            .collect();
        let scale = (0..c).map(|i| m[i][i]).fold(0.0, f64::max);
        let mut rank = 0;
        for col in 0..c {
            let Some(p) = (rank..c).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())) else { break };
            if m[p][col].abs() <= tol * scale {
                continue;
            }
            m.swap(rank, p);
            for r in 0..c {
                if r != rank {
                    let f = m[r][col] / m[rank][col];
                    for k in 0..c {
                        m[r][k] -= f * m[rank][k];
                    }
                }
            }
            rank += 1;
        }
        rank
    }

    #[test]
    fn noiseless_eeg_lies_in_latent_subspace() {
        let ds = synth_generate(&small(0.0)).unwrap();
        for u in &ds.utterances {
            assert_eq!(covariance_rank(&u.eeg, 1e-9), 4);
        }
        let noisy = synth_generate(&small(0.1)).unwrap();
        assert_eq!(covariance_rank(&noisy.utterances[0].eeg, 1e-9), 8);
    }

    #[test]
    fn frames_use_subject_background() {
        let ds = synth_generate(&small(0.1)).unwrap();
        let corner = |u: &SynthUtterance| u.video.frame(0)[0];
        assert_eq!(corner(&ds.utterances[0]), 20);
        assert_eq!(corner(&ds.utterances[3]), 65);
        assert!(ds.utterances[0].video.frame(0).iter().any(|&p| p != 20));
    }

    #[test]
    fn written_files_load_back() {
        let ds = synth_generate(&small(0.1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = write_synth(&ds, dir.path()).unwrap();
        let m = DatasetManifest::load(&path).unwrap();
        assert_eq!(m, ds.manifest);
        let v = super::super::load_video(dir.path().join(&m.entries[2].video)).unwrap();
        assert_eq!(v.frames, ds.utterances[2].video.frames);
    }
}
