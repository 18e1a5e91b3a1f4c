use std::fs;
use std::path::{Path, PathBuf};

use neuroframe::data::{
    eeg_from_csv, export_pgm_frames, load_eeg, load_features, load_video, save_eeg, save_features, save_pgm,
    synth_generate, write_synth, DatasetManifest, PgmImage, Split, SynthConfig, VideoSequence, DEFAULT_FPS,
};
use neuroframe::eval::{evaluate, report_csv, report_svg, SubjectResult};
use neuroframe::features::{extract_features, FeatureSequence, WindowConfig};
use neuroframe::kpca::{self, FitOptions, KernelConfig, KpcaModel};
use neuroframe::models::{Direction, SubjectModels, TrainConfig, FRAME_SIZE};
use neuroframe::nn::{Checkpoint, Tensor};
use neuroframe::pipeline::{
    prepare, subject_logs_csv, train_subjects, KpcaScope, PrepConfig, PreparedDataset, PIXEL_SCALE,
};
use neuroframe::signal::{apply_filter, design_bandpass, design_notch, EegRecording};
use neuroframe::{Error, Result};
use serde_json::json;

use crate::{Command, EvalArgs, FeaturesArgs, FilterArgs, KpcaCommand, PredictArgs, SynthArgs, TrainArgs};

/// 2 for malformed files, 3 for numeric failures, 1 for everything else.
pub fn exit_code(e: &Error) -> u8 {
    if e.is_format() {
        2
    } else if e.is_numeric() {
        3
    } else {
        1
    }
}

/// All computation here is single-threaded, so any cap of at least one
/// worker is already satisfied; the variable is only validated.
pub fn check_threads() -> std::result::Result<(), String> {
    match std::env::var("NEUROFRAME_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(()),
            _ => Err(format!("NEUROFRAME_THREADS must be a positive integer, got {v:?}")),
        },
        Err(_) => Ok(()),
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Filter(a) => filter(a),
        Command::Features(a) => features(a),
        Command::Kpca(KpcaCommand::Fit(a)) => {
            let mut rows = Vec::new();
            for path in &a.input {
                rows.extend(load_features(path)?.iter_rows().map(<[f64]>::to_vec));
            }
            let d = rows.first().map(Vec::len).ok_or_else(|| Error::InvalidInput("no feature rows".into()))?;
            let kernel = KernelConfig {
                degree: a.degree,
                ..KernelConfig::cubic_for_dim(d)
            };
            let opts = FitOptions {
                standardize: !a.no_standardize,
                max_rows: a.max_rows,
            };
            let model = kpca::fit_with(&rows, a.dim, &kernel, &opts)?;
            model.save(&a.out)?;
            if let Some(evr) = a.evr {
                let mut csv = String::from("component,cumulative_explained_variance\n");
                for (i, v) in model.cumulative_explained_variance().iter().enumerate() {
                    csv.push_str(&format!("{},{v:e}\n", i + 1));
                }
                fs::write(evr, csv)?;
            }
            Ok(())
        }
        Command::Kpca(KpcaCommand::Transform(a)) => {
            let model = KpcaModel::load(&a.model)?;
            let seq = load_features(&a.input)?;
            let mut data = Vec::with_capacity(seq.rows() * model.out_dim);
            for row in seq.iter_rows() {
                data.extend(model.transform(row)?);
            }
            save_features(&a.out, &FeatureSequence::new(seq.rate, model.out_dim, data)?)
        }
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        subjects: a.subjects,
        utterances: a.utterances,
        ticks: a.ticks,
        latent_dim: a.latent_dim,
        channels: a.channels,
        noise: a.noise,
        seed: a.seed,
    };
    let ds = synth_generate(&cfg)?;
    let path = write_synth(&ds, &a.out)?;
    eprintln!("wrote {} utterances, manifest {}", ds.utterances.len(), path.display());
    Ok(())
}

fn read_eeg(path: &Path, rate: u32) -> Result<EegRecording> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        eeg_from_csv(&fs::read_to_string(path)?, rate, "")
    } else {
        load_eeg(path)
    }
}

fn parse_band(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::InvalidInput(format!("band {s:?} must look like LOW:HIGH"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

fn filter(a: FilterArgs) -> Result<()> {
    let rec = read_eeg(&a.input, a.rate)?;
    let fs = rec.sample_rate as f64;
    let (lo, hi) = parse_band(&a.band)?;
    let mut cascade = design_bandpass(lo, hi, a.order, fs)?;
    if !a.no_notch {
        cascade = cascade.then(&design_notch(a.notch, a.notch_q, fs)?)?;
    }
    save_eeg(&a.out, &apply_filter(&cascade, &rec)?)
}

fn features(a: FeaturesArgs) -> Result<()> {
    let rec = read_eeg(&a.input, a.rate)?;
    let cfg = WindowConfig {
        window_len: a.window,
        hop: a.hop,
        fft_len: a.fft,
    };
    let seq = extract_features(&rec, &cfg)?;
    if a.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        fs::write(&a.out, neuroframe::data::features_to_csv(&seq)?)?;
        Ok(())
    } else {
        save_features(&a.out, &seq)
    }
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load_prepared(manifest: &Path, prep: &PrepConfig) -> Result<PreparedDataset> {
    let m = DatasetManifest::load(manifest)?;
    prepare(&m, &manifest_dir(manifest), prep)
}

fn train(a: TrainArgs) -> Result<()> {
    let prep = PrepConfig {
        kpca_rows: a.kpca_rows,
        kpca_scope: if a.pooled_kpca { KpcaScope::Pooled } else { KpcaScope::PerSubject },
        chunk: a.chunk,
        ..PrepConfig::default()
    };
    let ds = load_prepared(&a.manifest, &prep)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        val_split: a.val_split,
        lr: a.lr,
        seed: a.seed,
    };
    cfg.validate()?;
    let subjects = match &a.subject {
        Some(s) if ds.subjects().contains(s) => vec![s.clone()],
        Some(s) => return Err(Error::InvalidInput(format!("subject {s:?} is not in the manifest"))),
        None => ds.subjects(),
    };
    if ds.in_split(Split::Val).next().is_none() {
        eprintln!("manifest has no val entries; holding out {} of each subject's training sequences", cfg.val_split);
    }
    let mut samples = Vec::new();
    if let (Some(dir), Direction::Eeg2Video) = (&a.samples, a.direction) {
        fs::create_dir_all(dir)?;
        for s in &subjects {
            let mine = |split| ds.in_split(split).filter(move |u| &u.subject == s);
            if let Some(u) = mine(Split::Val).chain(mine(Split::Train)).next() {
                samples.push((s.clone(), u.tensors(Direction::Eeg2Video, 0, 1)?.0));
            }
        }
    }

    let (models, logs) = train_subjects(&ds, a.direction, &subjects, &cfg, |subject, m, e| {
        eprintln!(
            "{subject} epoch {:>4}  train_mse {:.6e}  val_mse {}  ({:.1}s)",
            e.epoch,
            e.train_mse,
            e.val_mse.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "-".into()),
            e.seconds
        );
        if let (Some(dir), Some((_, x))) = (&a.samples, samples.iter().find(|(s, _)| s == subject)) {
            let mut shape = vec![1];
            shape.extend_from_slice(x.shape());
            let pred = m.predict(&x.clone().reshape(&shape)?)?;
            let pixels = pred.data().iter().map(|&v| to_pixel(v)).collect();
            save_pgm(
                dir.join(format!("{subject}_epoch_{:05}.pgm", e.epoch)),
                &PgmImage {
                    width: FRAME_SIZE,
                    height: FRAME_SIZE,
                    pixels,
                },
            )?;
        }
        Ok(())
    })?;
    fs::write(&a.log, subject_logs_csv(&logs))?;
    let log_ref = a.log.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let per_subject: serde_json::Map<String, serde_json::Value> = logs
        .iter()
        .map(|(s, log)| (s.clone(), json!({ "steps": log.steps, "final_train_mse": log.final_train_mse() })))
        .collect();
    let meta = json!({
        "prep": serde_json::to_value(&prep)?,
        "train": {
            "epochs": cfg.epochs,
            "batch_size": cfg.batch_size,
            "val_split": cfg.val_split,
            "lr": cfg.lr,
            "seed": cfg.seed,
        },
        "log": log_ref,
        "subject_logs": per_subject,
    });
    models.to_checkpoint(cfg.epochs, meta).save(&a.out)
}

fn to_pixel(v: f32) -> u8 {
    (v * PIXEL_SCALE).round().clamp(0.0, 255.0) as u8
}

fn load_models(path: &Path, expected: Direction) -> Result<(SubjectModels, Checkpoint)> {
    let ck = Checkpoint::load(path)?;
    let models = SubjectModels::from_checkpoint(&ck)?;
    if models.direction != expected {
        return Err(Error::InvalidInput(format!(
            "{} holds {} models, expected {expected}",
            path.display(),
            models.direction
        )));
    }
    Ok((models, ck))
}

fn predict(a: PredictArgs) -> Result<()> {
    let (models, _) = load_models(&a.ckpt, a.direction)?;
    let model = match &a.subject {
        Some(s) => models.for_subject(s)?,
        None if models.models.len() == 1 => models.models.values().next().expect("one model"),
        None => {
            return Err(Error::InvalidInput(format!(
                "the checkpoint holds models for {:?}; choose one with --subject",
                models.models.keys().collect::<Vec<_>>()
            )))
        }
    };
    fs::create_dir_all(&a.out)?;
    match a.direction {
        Direction::Eeg2Video => {
            let seq = load_features(&a.input)?;
            let x = Tensor::new(&[1, seq.rows(), seq.dim], seq.data.iter().map(|&v| v as f32).collect())?;
            let pred = model.predict(&x)?;
            let video = VideoSequence::new(DEFAULT_FPS, pred.data().iter().map(|&v| to_pixel(v)).collect(), "")?;
            let paths = export_pgm_frames(&video, &a.out)?;
            eprintln!("wrote {} frames to {}", paths.len(), a.out.display());
        }
        Direction::Video2Eeg => {
            let video = load_video(&a.input)?;
            let x = Tensor::new(
                &[1, video.len(), FRAME_SIZE, FRAME_SIZE],
                video.frames.iter().map(|&p| p as f32 / PIXEL_SCALE).collect(),
            )?;
            let pred = model.predict(&x)?;
            let dim = pred.shape()[2];
            let seq = FeatureSequence::new(video.fps, dim, pred.data().iter().map(|&v| v as f64).collect())?;
            let path = a.out.join("prediction.feat");
            save_features(&path, &seq)?;
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn prep_of(ck: &Checkpoint) -> Result<PrepConfig> {
    match ck.metadata.get("prep") {
        Some(v) => serde_json::from_value(v.clone()).map_err(Error::from),
        None => Ok(PrepConfig::default()),
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    let (e2v, ck_e) = load_models(&a.ckpt_e2v, Direction::Eeg2Video)?;
    let (v2e, ck_v) = load_models(&a.ckpt_v2e, Direction::Video2Eeg)?;
    let (prep_e, prep_v) = (prep_of(&ck_e)?, prep_of(&ck_v)?);
    let ds_e = load_prepared(&a.manifest, &prep_e)?;
    let mut results: Vec<SubjectResult> = evaluate(&ds_e, &e2v)?;
    let ds_v = if prep_v == prep_e { ds_e } else { load_prepared(&a.manifest, &prep_v)? };
    results.extend(evaluate(&ds_v, &v2e)?);
    results.sort_by(|x, y| x.subject.cmp(&y.subject).then(x.direction.cmp(&y.direction)));
    fs::write(&a.report, report_csv(&results))?;
    if let Some(svg) = a.svg {
        fs::write(svg, report_svg(&results))?;
    }
    for r in &results {
        eprintln!(
            "{} {}: model {:.4} baseline {:.4}",
            r.subject, r.direction, r.model_rmse, r.baseline_rmse
        );
    }
    Ok(())
}
