//! Dataset formats, the pairing manifest, seeded splits and the synthetic
//! paired EEG/video generator.

mod formats;
mod manifest;
mod synth;

pub use formats::{
    eeg_from_bytes, eeg_from_csv, eeg_to_bytes, eeg_to_csv, export_pgm_frames, features_from_bytes,
    features_from_csv, features_to_bytes, features_to_csv, load_eeg, load_features, load_pgm, load_video,
    pgm_decode, pgm_encode, save_eeg, save_features, save_pgm, save_video, video_from_bytes, video_to_bytes,
    PgmImage,
};
pub use manifest::{resolve, split_counts, split_dataset, split_per_subject, DatasetManifest, ManifestEntry, Split, DEFAULT_RATIOS};
pub use synth::{synth_generate, write_synth, SynthConfig, SynthDataset, SynthUtterance, SYNTH_SAMPLE_RATE};

use crate::error::{Error, Result};
use crate::models::FRAME_SIZE;

pub const DEFAULT_FPS: u32 = 100;
pub const FRAME_PIXELS: usize = FRAME_SIZE * FRAME_SIZE;

/// Grayscale 100x100 frames stored back to back, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoSequence {
    pub fps: u32,
    pub frames: Vec<u8>,
    pub subject_id: String,
}

impl VideoSequence {
    pub fn new(fps: u32, frames: Vec<u8>, subject_id: impl Into<String>) -> Result<Self> {
        if !frames.len().is_multiple_of(FRAME_PIXELS) {
            return Err(Error::Shape(format!(
                "{} bytes is not a whole number of {FRAME_SIZE}x{FRAME_SIZE} frames",
                frames.len()
            )));
        }
        Ok(VideoSequence {
            fps,
            frames,
            subject_id: subject_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len() / FRAME_PIXELS
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, k: usize) -> &[u8] {
        &self.frames[k * FRAME_PIXELS..(k + 1) * FRAME_PIXELS]
    }
}
