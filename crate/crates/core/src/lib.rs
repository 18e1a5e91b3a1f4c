//! EEG/video cross-modal toolkit: IIR filtering, windowed EEG features,
//! polynomial kernel PCA, a small reverse-mode network library with the two
//! EEG-to-video and video-to-EEG models, synthetic paired data and RMSE
//! evaluation.

mod binio;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod kpca;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod signal;

pub use error::{Error, Result};
pub use features::{extract_features, FeatureSequence, WindowConfig};
pub use kpca::{KernelConfig, KpcaModel};
pub use signal::{apply_filter, design_bandpass, design_notch, EegRecording, FilterCascade};
