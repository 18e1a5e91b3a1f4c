mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use neuroframe::models::Direction;

/// EEG/video cross-modal pipeline: synthesize, filter, featurize, reduce, train, predict, evaluate.
#[derive(Debug, Parser)]
#[command(name = "neuroframe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a paired synthetic EEG/video dataset and its manifest.
    Synth(SynthArgs),
    /// Band-pass and notch filter a raw EEG recording.
    Filter(FilterArgs),
    /// Extract windowed per-channel features from an EEG recording.
    Features(FeaturesArgs),
    /// Fit or apply a polynomial kernel PCA reduction.
    #[command(subcommand)]
    Kpca(KpcaCommand),
    /// Train an EEG-to-video or video-to-EEG model on a manifest.
    Train(TrainArgs),
    /// Run a trained model on one input file.
    Predict(PredictArgs),
    /// Per-subject test RMSE of both models against training-mean baselines.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Seed for every random draw in the dataset.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 7)]
    subjects: usize,
    /// Utterances per subject.
    #[arg(long, default_value_t = 10)]
    utterances: usize,
    /// Feature ticks (and video frames) per utterance.
    #[arg(long, default_value_t = 64)]
    ticks: usize,
    /// Dimension of the hidden articulator trajectory shared by EEG and video.
    #[arg(long, default_value_t = 4)]
    latent_dim: usize,
    /// EEG channels.
    #[arg(long, default_value_t = 31)]
    channels: usize,
    /// Band-limited EEG noise relative to the signal scale.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Output directory; receives eeg/, video/ and manifest.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FilterArgs {
    /// EEGR file, or CSV with a ch0..chN header.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output EEGR file.
    #[arg(long)]
    out: PathBuf,
    /// Pass band as LOW:HIGH in Hz.
    #[arg(long, default_value = "0.1:70")]
    band: String,
    /// Butterworth order (even).
    #[arg(long, default_value_t = 4)]
    order: usize,
    /// Notch frequency in Hz.
    #[arg(long, default_value_t = 60.0)]
    notch: f64,
    /// Notch quality factor.
    #[arg(long, default_value_t = 30.0)]
    notch_q: f64,
    /// Skip the notch stage.
    #[arg(long)]
    no_notch: bool,
    /// Sample rate for CSV input, in Hz.
    #[arg(long, default_value_t = 1000)]
    rate: u32,
}

#[derive(Debug, Args)]
struct FeaturesArgs {
    /// EEGR file, or CSV with a ch0..chN header.
    #[arg(long = "in")]
    input: PathBuf,
    /// FEAT file, or CSV when the name ends in .csv.
    #[arg(long)]
    out: PathBuf,
    /// Window length in samples.
    #[arg(long, default_value_t = 100)]
    window: usize,
    /// Samples between window starts.
    #[arg(long, default_value_t = 10)]
    hop: usize,
    /// FFT length for spectral entropy (power of two, at least the window).
    #[arg(long, default_value_t = 128)]
    fft: usize,
    /// Sample rate for CSV input, in Hz.
    #[arg(long, default_value_t = 1000)]
    rate: u32,
}

#[derive(Debug, Subcommand)]
enum KpcaCommand {
    /// Fit on the rows of one or more FEAT files.
    Fit(KpcaFitArgs),
    /// Project every row of a FEAT file.
    Transform(KpcaTransformArgs),
}

#[derive(Debug, Args)]
struct KpcaFitArgs {
    /// FEAT files whose rows are pooled for the fit.
    #[arg(long = "in", num_args = 1.., required = true)]
    input: Vec<PathBuf>,
    /// Components kept.
    #[arg(long, default_value_t = 30)]
    dim: usize,
    /// Polynomial kernel degree.
    #[arg(long, default_value_t = 3)]
    degree: u32,
    /// Training rows kept (evenly strided) for the fit.
    #[arg(long, default_value_t = 2000)]
    max_rows: usize,
    /// Use the raw features instead of per-column standardized ones.
    #[arg(long)]
    no_standardize: bool,
    /// Output KPCA model.
    #[arg(long)]
    out: PathBuf,
    /// Cumulative explained variance CSV.
    #[arg(long)]
    evr: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct KpcaTransformArgs {
    /// KPCA model written by `kpca fit`.
    #[arg(long)]
    model: PathBuf,
    /// FEAT file to project.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output FEAT of reduced rows.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// e2v or v2e.
    direction: Direction,
    /// Dataset manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Epochs; the full schedule is 500 for e2v and 1000 for v2e.
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    /// Sequences per Adam step.
    #[arg(long, default_value_t = 100)]
    batch: usize,
    /// Held-out fraction, used only when the manifest has no val entries.
    #[arg(long, default_value_t = 0.05)]
    val_split: f64,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Seed for initialization and shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ticks per training sequence.
    #[arg(long, default_value_t = 16)]
    chunk: usize,
    /// Training rows kept for each kernel PCA fit.
    #[arg(long, default_value_t = 2000)]
    kpca_rows: usize,
    /// Fit one kernel PCA on all subjects instead of one per subject.
    #[arg(long)]
    pooled_kpca: bool,
    /// Train only this subject's model (default: one model per subject).
    #[arg(long)]
    subject: Option<String>,
    /// Output checkpoint (NNCK) holding one model per subject.
    #[arg(long)]
    out: PathBuf,
    /// Training log CSV (subject, epoch, train_mse, val_mse).
    #[arg(long)]
    log: PathBuf,
    /// Directory for one predicted sample frame per epoch (e2v only).
    #[arg(long)]
    samples: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// e2v or v2e.
    direction: Direction,
    /// Checkpoint written by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    /// FEAT of reduced features (e2v) or VIDG video (v2e).
    #[arg(long = "in")]
    input: PathBuf,
    /// Receives PGM frames (e2v) or prediction.feat (v2e).
    #[arg(long)]
    out: PathBuf,
    /// Whose model to use when the checkpoint holds several.
    #[arg(long)]
    subject: Option<String>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Dataset manifest (JSON); its test utterances are scored.
    #[arg(long)]
    manifest: PathBuf,
    /// EEG-to-video checkpoint.
    #[arg(long)]
    ckpt_e2v: PathBuf,
    /// Video-to-EEG checkpoint.
    #[arg(long)]
    ckpt_v2e: PathBuf,
    /// Output CSV with one row per subject and direction.
    #[arg(long)]
    report: PathBuf,
    /// Optional bar chart of the report.
    #[arg(long)]
    svg: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(msg) = commands::check_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
