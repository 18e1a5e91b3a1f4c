//! Manifest to model-ready tensors: filtering, feature extraction, kernel PCA
//! reduction and fixed-length chunking.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{eeg_from_bytes, features_from_bytes, load_video, resolve, DatasetManifest, Split, FRAME_PIXELS};
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureSequence, WindowConfig};
use crate::kpca::{self, FitOptions, KernelConfig, KpcaModel};
use crate::models::{build, fit, Direction, EpochLog, Model, Pair, SubjectModels, TrainConfig, TrainingLog, FRAME_SIZE, REDUCED_DIM};
use crate::nn::Tensor;
use crate::signal::{apply_filter, design_bandpass, design_notch, EegRecording, FilterCascade, DEFAULT_NOTCH_Q};

/// Pixels enter and leave the networks divided by this.
pub const PIXEL_SCALE: f32 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KpcaScope {
    /// One reduction per subject, fitted on that subject's training utterances.
    PerSubject,
    /// One reduction fitted on every subject's training utterances.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepConfig {
    pub band: (f64, f64),
    pub band_order: usize,
    pub notch_hz: Option<f64>,
    pub notch_q: f64,
    pub window: WindowConfig,
    pub kpca_dim: usize,
    pub kpca_degree: u32,
    /// Training rows kept for the kernel PCA fit (evenly strided subsample).
    pub kpca_rows: usize,
    pub kpca_scope: KpcaScope,
    /// Ticks per training sequence.
    pub chunk: usize,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            band: (0.1, 70.0),
            band_order: 4,
            notch_hz: Some(60.0),
            notch_q: DEFAULT_NOTCH_Q,
            window: WindowConfig::default(),
            kpca_dim: REDUCED_DIM,
            kpca_degree: 3,
            kpca_rows: 2000,
            kpca_scope: KpcaScope::PerSubject,
            chunk: 16,
        }
    }
}

impl PrepConfig {
    pub fn filter(&self, fs: f64) -> Result<FilterCascade> {
        let band = design_bandpass(self.band.0, self.band.1, self.band_order, fs)?;
        match self.notch_hz {
            Some(f) => band.then(&design_notch(f, self.notch_q, fs)?),
            None => Ok(band),
        }
    }

    /// Band-pass (and optional notch) filtering followed by windowed features.
    pub fn eeg_features(&self, rec: &EegRecording) -> Result<FeatureSequence> {
        let filtered = apply_filter(&self.filter(rec.sample_rate as f64)?, rec)?;
        extract_features(&filtered, &self.window)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedUtterance {
    pub subject: String,
    pub utterance: String,
    pub split: Split,
    pub ticks: usize,
    /// `ticks x kpca_dim`, row-major.
    pub reduced: Vec<f64>,
    /// `ticks x 100 x 100`.
    pub frames: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDataset {
    pub config: PrepConfig,
    pub utterances: Vec<PreparedUtterance>,
    /// Keyed by subject id, or by `"*"` for a pooled reduction.
    pub reductions: BTreeMap<String, KpcaModel>,
}

pub const POOLED_KEY: &str = "*";

/// Loads an EEGR recording (filtered and featurized) or an already extracted FEAT file.
fn load_features_any(path: &Path, cfg: &PrepConfig) -> Result<FeatureSequence> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"FEAT") {
        features_from_bytes(&bytes)
    } else {
        cfg.eeg_features(&eeg_from_bytes(&bytes)?)
    }
}

/// Loads every assigned manifest entry, reduces features with kernel PCA
/// fitted on training utterances only, and pairs them with their frames.
pub fn prepare(manifest: &DatasetManifest, base_dir: &Path, cfg: &PrepConfig) -> Result<PreparedDataset> {
    if cfg.chunk == 0 {
        return Err(Error::InvalidInput("chunk length must be >= 1".into()));
    }
    let mut loaded = Vec::new();
    for e in &manifest.entries {
        let split = e
            .split
            .ok_or_else(|| Error::InvalidInput(format!("entry {}/{} has no split", e.subject, e.utterance)))?;
        let feats = load_features_any(&resolve(base_dir, &e.eeg), cfg)?;
        let video = load_video(resolve(base_dir, &e.video))?;
        if feats.rows() != video.len() {
            return Err(Error::Shape(format!(
                "{}/{}: {} feature ticks but {} frames",
                e.subject,
                e.utterance,
                feats.rows(),
                video.len()
            )));
        }
        loaded.push((e, split, feats, video));
    }

    let fit_rows = |subject: Option<&str>| -> Vec<Vec<f64>> {
        loaded
            .iter()
            .filter(|(e, split, _, _)| *split == Split::Train && subject.is_none_or(|s| e.subject == s))
            .flat_map(|(_, _, f, _)| f.iter_rows().map(<[f64]>::to_vec))
            .collect()
    };
    let fit = |rows: Vec<Vec<f64>>, key: &str| -> Result<KpcaModel> {
        if rows.is_empty() {
            return Err(Error::InvalidInput(format!("no training utterances for reduction {key}")));
        }
        let kernel = KernelConfig {
            degree: cfg.kpca_degree,
            ..KernelConfig::cubic_for_dim(rows[0].len())
        };
        let opts = FitOptions {
            standardize: true,
            max_rows: cfg.kpca_rows,
        };
        kpca::fit_with(&rows, cfg.kpca_dim, &kernel, &opts)
    };
    let mut reductions = BTreeMap::new();
    match cfg.kpca_scope {
        KpcaScope::Pooled => {
            reductions.insert(POOLED_KEY.to_string(), fit(fit_rows(None), POOLED_KEY)?);
        }
        KpcaScope::PerSubject => {
            for s in manifest.subjects() {
                let model = fit(fit_rows(Some(&s)), &s)?;
                reductions.insert(s, model);
            }
        }
    }

    let mut utterances = Vec::with_capacity(loaded.len());
    for (e, split, feats, video) in loaded {
        let key = match cfg.kpca_scope {
            KpcaScope::Pooled => POOLED_KEY,
            KpcaScope::PerSubject => e.subject.as_str(),
        };
        let model = &reductions[key];
        let mut reduced = Vec::with_capacity(feats.rows() * cfg.kpca_dim);
        for row in feats.iter_rows() {
            reduced.extend(model.transform(row)?);
        }
        utterances.push(PreparedUtterance {
            subject: e.subject.clone(),
            utterance: e.utterance.clone(),
            split,
            ticks: video.len(),
            reduced,
            frames: video.frames,
        });
    }
    Ok(PreparedDataset {
        config: cfg.clone(),
        utterances,
        reductions,
    })
}

impl PreparedUtterance {
    /// Network input and target for ticks `start..end`, without a batch axis.
    pub fn tensors(&self, direction: Direction, start: usize, end: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
        if start >= end || end > self.ticks {
            return Err(Error::InvalidInput(format!("tick range {start}..{end} outside 0..{}", self.ticks)));
        }
        let t = end - start;
        let dim = self.reduced.len() / self.ticks;
        let reduced = Tensor::new(
            &[t, dim],
            self.reduced[start * dim..end * dim].iter().map(|&v| v as f32).collect(),
        )?;
        let frames = Tensor::new(
            &[t, FRAME_SIZE, FRAME_SIZE],
            self.frames[start * FRAME_PIXELS..end * FRAME_PIXELS]
                .iter()
                .map(|&p| p as f32 / PIXEL_SCALE)
                .collect(),
        )?;
        Ok(match direction {
            Direction::Eeg2Video => (reduced, frames),
            Direction::Video2Eeg => (frames, reduced),
        })
    }

    pub fn full_tensors(&self, direction: Direction) -> Result<(Tensor<f32>, Tensor<f32>)> {
        self.tensors(direction, 0, self.ticks)
    }
}

impl PreparedDataset {
    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &PreparedUtterance> {
        self.utterances.iter().filter(move |u| u.split == split)
    }

    pub fn subjects(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for u in &self.utterances {
            if !out.contains(&u.subject) {
                out.push(u.subject.clone());
            }
        }
        out
    }

    /// Non-overlapping `chunk`-tick sequences from every utterance in `split`,
    /// in manifest order; trailing ticks that do not fill a chunk are dropped.
    pub fn pairs(&self, direction: Direction, split: Split) -> Result<Vec<Pair>> {
        let chunk = self.config.chunk;
        let mut out = Vec::new();
        for u in self.in_split(split) {
            if u.ticks < chunk {
                return Err(Error::InvalidInput(format!(
                    "{}/{} has {} ticks, shorter than the chunk length {chunk}",
                    u.subject, u.utterance, u.ticks
                )));
            }
            for k in 0..u.ticks / chunk {
                let (input, target) = u.tensors(direction, k * chunk, (k + 1) * chunk)?;
                out.push(Pair { input, target });
            }
        }
        Ok(out)
    }

    /// The utterances of one subject, with that subject's reduction.
    pub fn for_subject(&self, subject: &str) -> PreparedDataset {
        PreparedDataset {
            config: self.config.clone(),
            utterances: self.utterances.iter().filter(|u| u.subject == subject).cloned().collect(),
            reductions: self
                .reductions
                .iter()
                .filter(|(k, _)| k.as_str() == subject || k.as_str() == POOLED_KEY)
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Training and validation sequences. The manifest's val utterances are
    /// used when there are any; otherwise the last `cfg.val_split` fraction
    /// of the training sequences is held out.
    pub fn train_val_pairs(&self, direction: Direction, cfg: &TrainConfig) -> Result<(Vec<Pair>, Vec<Pair>)> {
        let mut train = self.pairs(direction, Split::Train)?;
        let val = self.pairs(direction, Split::Val)?;
        if !val.is_empty() {
            return Ok((train, val));
        }
        let n_val = cfg.validation_count(train.len());
        let val = train.split_off(train.len() - n_val);
        Ok((train, val))
    }
}

/// Trains one model per listed subject, each on that subject's sequences only
/// and each starting from the same seeded initialization.
pub fn train_subjects<F>(
    ds: &PreparedDataset,
    direction: Direction,
    subjects: &[String],
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<(SubjectModels, Vec<(String, TrainingLog)>)>
where
    F: FnMut(&str, &Model, &EpochLog) -> Result<()>,
{
    cfg.validate()?;
    let mut models = SubjectModels::new(direction, cfg.seed);
    let mut logs = Vec::new();
    for subject in subjects {
        let view = ds.for_subject(subject);
        let (train, val) = view.train_val_pairs(direction, cfg)?;
        if train.is_empty() {
            return Err(Error::InvalidInput(format!("subject {subject:?} has no training sequences")));
        }
        let mut model = build(direction, cfg.seed);
        let log = fit(&mut model, &train, &val, cfg, |m, e| on_epoch(subject, m, e))?;
        models.models.insert(subject.clone(), model);
        logs.push((subject.clone(), log));
    }
    Ok((models, logs))
}

/// Per-subject logs as one CSV with a leading subject column.
pub fn subject_logs_csv(logs: &[(String, TrainingLog)]) -> String {
    let mut out = String::from("subject,epoch,train_mse,val_mse\n");
    for (subject, log) in logs {
        for line in log.to_csv().lines().skip(1) {
            out.push_str(subject);
            out.push(',');
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}
