//! The EEG-to-video and video-to-EEG architectures and their training loop.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Checkpoint, LayerSpec, Network, Tape, Tensor};

/// Frames are `FRAME_SIZE x FRAME_SIZE` grayscale.
pub const FRAME_SIZE: usize = 100;
/// Width of the reduced EEG feature vector.
pub const REDUCED_DIM: usize = 30;
pub const TCN_FILTERS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    /// EEG features to video frames.
    Eeg2Video,
    /// Video frames to EEG features.
    Video2Eeg,
}

impl Direction {
    pub fn id(self) -> &'static str {
        match self {
            Direction::Eeg2Video => "e2v",
            Direction::Video2Eeg => "v2e",
        }
    }

    fn architecture(self) -> &'static str {
        match self {
            Direction::Eeg2Video => "eeg2video",
            Direction::Video2Eeg => "video2eeg",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "e2v" | "eeg2video" => Ok(Direction::Eeg2Video),
            "v2e" | "video2eeg" => Ok(Direction::Video2Eeg),
            other => Err(Error::InvalidInput(format!("unknown direction {other:?}, expected e2v or v2e"))),
        }
    }
}

/// TCN(128) -> dense(10000) -> reshape 100x100 -> 2x conv-transpose(100,
/// (1,1), ReLU) -> upsample (1,1) -> dense(100) over the last axis.
pub fn eeg2video_specs() -> Vec<LayerSpec> {
    let convt = LayerSpec::Conv2dTranspose {
        filters: FRAME_SIZE,
        kernel: (1, 1),
        stride: (1, 1),
        activation: Activation::Relu,
    };
    vec![
        LayerSpec::Tcn {
            filters: TCN_FILTERS,
            kernel: 3,
            dilations: vec![1, 2],
        },
        LayerSpec::DenseTd {
            units: FRAME_SIZE * FRAME_SIZE,
            activation: Activation::Linear,
        },
        LayerSpec::Reshape {
            dims: vec![FRAME_SIZE, FRAME_SIZE],
        },
        convt.clone(),
        convt,
        LayerSpec::Upsample2d { size: (1, 1) },
        LayerSpec::DenseTd {
            units: FRAME_SIZE,
            activation: Activation::Linear,
        },
    ]
}

/// 2x conv2d(100, (1,3), ReLU) -> maxpool (1,2) -> flatten -> dense(30).
pub fn video2eeg_specs() -> Vec<LayerSpec> {
    let conv = LayerSpec::Conv2d {
        filters: FRAME_SIZE,
        kernel: (1, 3),
        activation: Activation::Relu,
    };
    vec![
        conv.clone(),
        conv,
        LayerSpec::MaxPool2d { pool: (1, 2) },
        LayerSpec::FlattenTd,
        LayerSpec::DenseTd {
            units: REDUCED_DIM,
            activation: Activation::Linear,
        },
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub direction: Direction,
    pub seed: u64,
    pub net: Network,
}

pub fn build_eeg2video(seed: u64) -> Model {
    Model {
        direction: Direction::Eeg2Video,
        seed,
        net: Network::build(&eeg2video_specs(), &[REDUCED_DIM], seed).expect("eeg2video architecture is valid"),
    }
}

pub fn build_video2eeg(seed: u64) -> Model {
    Model {
        direction: Direction::Video2Eeg,
        seed,
        net: Network::build(&video2eeg_specs(), &[FRAME_SIZE, FRAME_SIZE], seed)
            .expect("video2eeg architecture is valid"),
    }
}

pub fn build(direction: Direction, seed: u64) -> Model {
    match direction {
        Direction::Eeg2Video => build_eeg2video(seed),
        Direction::Video2Eeg => build_video2eeg(seed),
    }
}

impl Model {
    /// Raw forward pass; `input` is `[B, T, ..]`.
    pub fn predict(&self, input: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.net.predict(input)
    }

    /// Batched prediction for a long `[B, T, ..]` input, `chunk` sequences at a time.
    pub fn predict_batched(&self, input: &Tensor<f32>, chunk: usize) -> Result<Tensor<f32>> {
        let b = input.shape().first().copied().unwrap_or(0);
        let mut parts = Vec::new();
        let mut start = 0;
        while start < b {
            let end = (start + chunk.max(1)).min(b);
            parts.push(self.predict(&input.slice_outer(start, end)?)?);
            start = end;
        }
        Tensor::stack_outer(&parts.iter().collect::<Vec<_>>())
    }

    pub fn to_checkpoint(&self, epoch: usize, extra: serde_json::Value) -> Checkpoint {
        let mut meta = json!({
            "architecture": self.direction.architecture(),
            "seed": self.seed,
            "epoch": epoch,
        });
        if let (Some(m), serde_json::Value::Object(e)) = (meta.as_object_mut(), extra) {
            m.extend(e);
        }
        Checkpoint::from_params(&self.net.params, meta)
    }

    /// Rebuilds the architecture named in the metadata and loads every
    /// parameter by name.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Model> {
        let (direction, seed) = checkpoint_header(ck)?;
        let mut model = build(direction, seed);
        model.load_params(&ck.params.iter().collect::<Vec<_>>(), "")?;
        Ok(model)
    }

    fn load_params(&mut self, params: &[&(String, Tensor<f32>)], prefix: &str) -> Result<()> {
        if params.len() != self.net.params.len() {
            return Err(Error::format(
                "NNCK",
                "param_count",
                format!("{} parameters, architecture has {}", params.len(), self.net.params.len()),
            ));
        }
        for (p, (name, t)) in self.net.params.iter_mut().zip(params.iter().map(|e| (&e.0, &e.1))) {
            if name.strip_prefix(prefix) != Some(p.name.as_str()) || p.value.shape() != t.shape() {
                return Err(Error::format(
                    "NNCK",
                    name.clone(),
                    format!("expected {prefix}{} {:?}, found {name} {:?}", p.name, p.value.shape(), t.shape()),
                ));
            }
            p.value = t.clone();
        }
        Ok(())
    }
}

fn checkpoint_header(ck: &Checkpoint) -> Result<(Direction, u64)> {
    let arch = ck
        .metadata
        .get("architecture")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::format("NNCK", "metadata.architecture", "missing"))?;
    let direction = arch
        .parse()
        .map_err(|_| Error::format("NNCK", "metadata.architecture", format!("unknown architecture {arch:?}")))?;
    let seed = ck.metadata.get("seed").and_then(|v| v.as_u64()).unwrap_or(0);
    Ok((direction, seed))
}

/// One network per subject, all for the same direction. In a checkpoint the
/// parameters of subject `s` are stored as `s/<name>` and the metadata lists
/// the subjects in order.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectModels {
    pub direction: Direction,
    pub seed: u64,
    pub models: BTreeMap<String, Model>,
}

impl SubjectModels {
    pub fn new(direction: Direction, seed: u64) -> Self {
        SubjectModels {
            direction,
            seed,
            models: BTreeMap::new(),
        }
    }

    pub fn get(&self, subject: &str) -> Result<&Model> {
        self.models.get(subject).ok_or_else(|| {
            Error::InvalidInput(format!(
                "no {} model for subject {subject:?}; available: {:?}",
                self.direction,
                self.models.keys().collect::<Vec<_>>()
            ))
        })
    }

    pub fn to_checkpoint(&self, epoch: usize, extra: serde_json::Value) -> Checkpoint {
        let mut meta = json!({
            "architecture": self.direction.architecture(),
            "seed": self.seed,
            "epoch": epoch,
            "subjects": self.models.keys().collect::<Vec<_>>(),
        });
        if let (Some(m), serde_json::Value::Object(e)) = (meta.as_object_mut(), extra) {
            m.extend(e);
        }
        let params = self
            .models
            .iter()
            .flat_map(|(s, m)| m.net.params.iter().map(move |p| (format!("{s}/{}", p.name), p.value.clone())))
            .collect();
        Checkpoint { params, metadata: meta }
    }

    /// Reads a per-subject checkpoint. A plain single-model checkpoint loads
    /// as one model under the subject id `*`.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<SubjectModels> {
        let (direction, seed) = checkpoint_header(ck)?;
        let mut out = SubjectModels::new(direction, seed);
        let Some(subjects) = ck.metadata.get("subjects") else {
            out.models.insert(ANY_SUBJECT.to_string(), Model::from_checkpoint(ck)?);
            return Ok(out);
        };
        let subjects: Vec<String> = serde_json::from_value(subjects.clone())
            .map_err(|e| Error::format("NNCK", "metadata.subjects", e.to_string()))?;
        for s in subjects {
            let prefix = format!("{s}/");
            let params: Vec<&(String, Tensor<f32>)> = ck.params.iter().filter(|(n, _)| n.starts_with(&prefix)).collect();
            let mut model = build(direction, seed);
            model.load_params(&params, &prefix)?;
            out.models.insert(s, model);
        }
        let loaded: usize = out.models.values().map(|m| m.net.params.len()).sum();
        if loaded != ck.params.len() {
            return Err(Error::format(
                "NNCK",
                "params",
                format!("{} parameters do not belong to a listed subject", ck.params.len() - loaded),
            ));
        }
        Ok(out)
    }

    /// The model for `subject`, falling back to a single `*` model.
    pub fn for_subject(&self, subject: &str) -> Result<&Model> {
        match self.models.get(ANY_SUBJECT) {
            Some(m) if self.models.len() == 1 => Ok(m),
            _ => self.get(subject),
        }
    }
}

/// Subject key of a model that serves every subject.
pub const ANY_SUBJECT: &str = "*";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub val_split: f64,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 100,
            val_split: 0.05,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Full-length schedule: 500 epochs for EEG-to-video, 1000 for video-to-EEG.
    pub fn full_schedule(direction: Direction) -> Self {
        TrainConfig {
            epochs: match direction {
                Direction::Eeg2Video => 500,
                Direction::Video2Eeg => 1000,
            },
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.val_split > 0.0 && self.val_split < 1.0) {
            return Err(Error::InvalidInput(format!("val_split {} must be in (0, 1)", self.val_split)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidInput(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        Ok(())
    }

    /// Validation count for `n` sequences: `round(n * val_split)`, taken from the end.
    pub fn validation_count(&self, n: usize) -> usize {
        ((n as f64 * self.val_split).round() as usize).min(n.saturating_sub(1))
    }
}

/// One aligned sequence: `input` is `[T, ..]`, `target` is `[T, ..]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 0 is the evaluation before any update.
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub steps: usize,
    pub train_count: usize,
    pub val_count: usize,
}

impl TrainingLog {
    pub fn initial_train_mse(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.train_mse)
    }

    pub fn final_train_mse(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_mse)
    }

    /// `epoch,train_mse,val_mse` rows; wall-clock time is not written so the
    /// file is reproducible.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_mse,val_mse\n");
        for e in &self.epochs {
            let val = e.val_mse.map(|v| format!("{v:e}")).unwrap_or_default();
            out.push_str(&format!("{},{:e},{}\n", e.epoch, e.train_mse, val));
        }
        out
    }
}

fn batch_of(pairs: &[&Pair]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let inputs: Vec<Tensor<f32>> = pairs.iter().map(|p| with_batch_axis(&p.input)).collect::<Result<_>>()?;
    let targets: Vec<Tensor<f32>> = pairs.iter().map(|p| with_batch_axis(&p.target)).collect::<Result<_>>()?;
    Ok((
        Tensor::stack_outer(&inputs.iter().collect::<Vec<_>>())?,
        Tensor::stack_outer(&targets.iter().collect::<Vec<_>>())?,
    ))
}

fn with_batch_axis(t: &Tensor<f32>) -> Result<Tensor<f32>> {
    let mut shape = vec![1];
    shape.extend_from_slice(t.shape());
    t.clone().reshape(&shape)
}

/// Per-sequence sums of squared error between a batch prediction and target.
fn per_sequence_sse(pred: &Tensor<f32>, target: &Tensor<f32>) -> Vec<f64> {
    let b = pred.shape()[0];
    let per = pred.len() / b.max(1);
    pred.data()
        .chunks_exact(per)
        .zip(target.data().chunks_exact(per))
        .map(|(p, t)| {
            p.iter()
                .zip(t)
                .map(|(&a, &b)| {
                    let d = a as f64 - b as f64;
                    d * d
                })
                .sum()
        })
        .collect()
}

/// Mean squared error of `model` over `pairs`, in batches of `batch`.
pub fn evaluate_mse(model: &Model, pairs: &[Pair], batch: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no sequences to evaluate".into()));
    }
    let mut sse = 0.0;
    let mut count = 0usize;
    for chunk in pairs.chunks(batch.max(1)) {
        let refs: Vec<&Pair> = chunk.iter().collect();
        let (x, y) = batch_of(&refs)?;
        let pred = model.predict(&x)?;
        if pred.shape() != y.shape() {
            return Err(Error::Shape(format!("prediction {:?} vs target {:?}", pred.shape(), y.shape())));
        }
        sse += per_sequence_sse(&pred, &y).iter().sum::<f64>();
        count += y.len();
    }
    Ok(sse / count as f64)
}

/// Mini-batch Adam on mean squared error.
///
/// The last `round(n * val_split)` sequences are held out for validation.
/// Training order is reshuffled every epoch from `cfg.seed`; the final
/// partial batch is kept. Epoch 0 in the log is the loss before training.
pub fn train(model: &mut Model, pairs: &[Pair], cfg: &TrainConfig) -> Result<TrainingLog> {
    cfg.validate()?;
    let n_val = cfg.validation_count(pairs.len());
    let (train_set, val_set) = pairs.split_at(pairs.len() - n_val);
    fit(model, train_set, val_set, cfg, |_, _| Ok(()))
}

/// Training with an explicit validation set (`cfg.val_split` is not used)
/// and a hook invoked after every epoch, including epoch 0.
pub fn fit<F>(model: &mut Model, train_set: &[Pair], val_set: &[Pair], cfg: &TrainConfig, mut on_epoch: F) -> Result<TrainingLog>
where
    F: FnMut(&Model, &EpochLog) -> Result<()>,
{
    if cfg.batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be >= 1".into()));
    }
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(Error::InvalidInput(format!("learning rate {} must be finite and >= 0", cfg.lr)));
    }
    if train_set.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let (s_in, s_out) = (train_set[0].input.shape(), train_set[0].target.shape());
    if let Some(i) = train_set
        .iter()
        .chain(val_set)
        .position(|p| p.input.shape() != s_in || p.target.shape() != s_out)
    {
        return Err(Error::Shape(format!("sequence {i} differs in shape from sequence 0")));
    }
    if s_in.first() != s_out.first() {
        return Err(Error::Shape(format!("input length {:?} vs target length {:?}", s_in, s_out)));
    }
    model.net.check_input(&[&[1][..], s_in].concat())?;

    let adam = Adam::with_lr(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = TrainingLog {
        train_count: train_set.len(),
        val_count: val_set.len(),
        ..TrainingLog::default()
    };
    let eval_batch = cfg.batch_size.min(16);

    let start = Instant::now();
    let val_mse = |m: &Model| -> Result<Option<f64>> {
        if val_set.is_empty() {
            Ok(None)
        } else {
            evaluate_mse(m, val_set, eval_batch).map(Some)
        }
    };
    let initial = EpochLog {
        epoch: 0,
        train_mse: check_finite(evaluate_mse(model, train_set, eval_batch)?, "initial training loss")?,
        val_mse: val_mse(model)?,
        seconds: start.elapsed().as_secs_f64(),
    };
    on_epoch(model, &initial)?;
    log.epochs.push(initial);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let per_seq_elems = train_set[0].target.len() as f64;
    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let mut sse = vec![0.0f64; train_set.len()];
        for batch_idx in order.chunks(cfg.batch_size) {
            let refs: Vec<&Pair> = batch_idx.iter().map(|&i| &train_set[i]).collect();
            let (x, y) = batch_of(&refs)?;
            let mut tape = Tape::new();
            let params = model.net.bind(&mut tape);
            let xv = tape.leaf(x, false);
            let yv = tape.leaf(y, false);
            let pred = model.net.forward(&mut tape, &params, xv)?;
            let loss = tape.mse(pred, yv)?;
            let lv = tape.value(loss).data()[0];
            if !lv.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss became {lv} in epoch {epoch} (step {})",
                    log.steps + 1
                )));
            }
            for (&i, s) in batch_idx.iter().zip(per_sequence_sse(tape.value(pred), tape.value(yv))) {
                sse[i] = s;
            }
            let mut grads = tape.backward(loss)?;
            let grads: Vec<Vec<f32>> = params
                .iter()
                .zip(&model.net.params)
                .map(|(&v, p)| grads.take(v).unwrap_or_else(|| vec![0.0; p.value.len()]))
                .collect();
            adam.step(&mut model.net.params, &grads)?;
            log.steps += 1;
        }
        // summed in sequence order so the value does not depend on batching
        let train_mse = sse.iter().sum::<f64>() / (per_seq_elems * train_set.len() as f64);
        let entry = EpochLog {
            epoch,
            train_mse: check_finite(train_mse, "training loss")?,
            val_mse: val_mse(model)?,
            seconds: t0.elapsed().as_secs_f64(),
        };
        on_epoch(model, &entry)?;
        log.epochs.push(entry);
    }
    Ok(log)
}

fn check_finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("{what} is {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn architecture_shapes() {
        let e2v = build_eeg2video(1);
        let out = e2v.predict(&Tensor::zeros(&[2, 4, 30])).unwrap();
        assert_eq!(out.shape(), &[2, 4, 100, 100]);
        assert!(out.data().iter().all(|v| v.is_finite()));

        let v2e = build_video2eeg(1);
        let out = v2e.predict(&Tensor::zeros(&[2, 4, 100, 100])).unwrap();
        assert_eq!(out.shape(), &[2, 4, 30]);
        assert!(v2e.predict(&Tensor::zeros(&[1, 4, 99, 100])).is_err());
    }

    #[test]
    fn flatten_width_after_pool() {
        let v2e = build_video2eeg(0);
        let dense = v2e.net.params.iter().find(|p| p.name.ends_with("dense.w")).unwrap();
        assert_eq!(dense.value.shape(), &[50 * 100, 30]);
    }

    #[test]
    fn parameter_count_is_seed_independent() {
        assert_eq!(build_eeg2video(1).net.parameter_count(), build_eeg2video(2).net.parameter_count());
        assert_ne!(build_eeg2video(1).net.params, build_eeg2video(2).net.params);
    }

    #[test]
    fn validation_count_rounding() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.validation_count(100), 5);
        assert_eq!(cfg.validation_count(72), 4);
        assert_eq!(cfg.validation_count(4), 0);
        assert_eq!(TrainConfig::full_schedule(Direction::Eeg2Video).epochs, 500);
        assert_eq!(TrainConfig::full_schedule(Direction::Video2Eeg).epochs, 1000);
    }

    #[test]
    fn checkpoint_restores_model() {
        let m = build_video2eeg(5);
        let ck = m.to_checkpoint(3, json!({"log": "train.csv"}));
        assert_eq!(ck.metadata["architecture"], "video2eeg");
        assert_eq!(ck.metadata["log"], "train.csv");
        let back = Model::from_checkpoint(&ck).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn subject_bundle_round_trip() {
        let mut set = SubjectModels::new(Direction::Video2Eeg, 3);
        set.models.insert("s01".into(), build_video2eeg(3));
        set.models.insert("s02".into(), build_video2eeg(4));
        let ck = set.to_checkpoint(7, json!({}));
        assert!(ck.params[0].0.starts_with("s01/"));
        let bytes = ck.to_bytes().unwrap();
        let back = SubjectModels::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.models.len(), 2);
        // seeds are reassigned from the header, the weights come from the file
        assert_eq!(back.models["s02"].net.params, set.models["s02"].net.params);
        assert!(back.get("s03").is_err());

        let single = SubjectModels::from_checkpoint(&build_video2eeg(1).to_checkpoint(0, json!({}))).unwrap();
        assert!(single.for_subject("anyone").is_ok());

        let mut bad = ck.clone();
        bad.params.pop();
        assert!(SubjectModels::from_checkpoint(&bad).unwrap_err().is_format());
    }

    #[test]
    fn direction_parsing() {
        assert_eq!("e2v".parse::<Direction>().unwrap(), Direction::Eeg2Video);
        assert_eq!("v2e".parse::<Direction>().unwrap(), Direction::Video2Eeg);
        assert!("x".parse::<Direction>().is_err());
    }
}
