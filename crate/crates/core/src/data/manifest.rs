use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Train / validation / test fractions.
pub const DEFAULT_RATIOS: [f64; 3] = [0.85, 0.05, 0.10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject: String,
    pub utterance: String,
    /// EEGR or FEAT path, relative to the manifest's directory unless absolute.
    pub eeg: String,
    pub video: String,
    #[serde(default)]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_ratios")]
    pub ratios: [f64; 3],
    pub entries: Vec<ManifestEntry>,
}

fn default_ratios() -> [f64; 3] {
    DEFAULT_RATIOS
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        DatasetManifest {
            seed: None,
            ratios: DEFAULT_RATIOS,
            entries,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Subject ids in order of first appearance.
    pub fn subjects(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.subject) {
                out.push(e.subject.clone());
            }
        }
        out
    }

    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == Some(split))
    }

    pub fn split_sizes(&self) -> [usize; 3] {
        Split::ALL.map(|s| self.entries_in(s).count())
    }
}

/// Resolves a manifest-relative path against the manifest's directory.
pub fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn check_ratios(ratios: [f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::InvalidInput(format!("split ratios {ratios:?} must be finite and non-negative")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("split ratios {ratios:?} sum to {sum}, not 1")));
    }
    Ok(())
}

/// Split sizes for `n` items: largest-remainder rounding of `n * ratio`
/// (ties go to the earlier split), after which any split with a positive
/// ratio that rounded to zero takes one item from the currently largest split.
pub fn split_counts(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    check_ratios(ratios)?;
    if n < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 entries to split, got {n}")));
    }
    let quotas = ratios.map(|r| n as f64 * r);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    for i in 0..3 {
        if counts[i] == 0 && ratios[i] > 0.0 {
            let donor = (0..3).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap();
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    Ok(counts)
}

fn assign(indices: &mut [usize], counts: [usize; 3], rng: &mut ChaCha8Rng, out: &mut [ManifestEntry]) {
    indices.shuffle(rng);
    let mut k = 0;
    for (split, &c) in Split::ALL.iter().zip(&counts) {
        for &i in &indices[k..k + c] {
            out[i].split = Some(*split);
        }
        k += c;
    }
}

/// Seeded uniform shuffle of the whole manifest, then contiguous assignment
/// of `split_counts` items to train, val and test.
pub fn split_dataset(manifest: &DatasetManifest, ratios: [f64; 3], seed: u64) -> Result<DatasetManifest> {
    let counts = split_counts(manifest.entries.len(), ratios)?;
    let mut out = manifest.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..out.entries.len()).collect();
    assign(&mut idx, counts, &mut rng, &mut out.entries);
    out.seed = Some(seed);
    out.ratios = ratios;
    Ok(out)
}

/// [`split_dataset`] applied within each subject, so every subject has
/// utterances in every split. One generator is drawn from in subject order.
pub fn split_per_subject(manifest: &DatasetManifest, ratios: [f64; 3], seed: u64) -> Result<DatasetManifest> {
    check_ratios(ratios)?;
    let mut out = manifest.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for subject in manifest.subjects() {
        let mut idx: Vec<usize> = (0..out.entries.len()).filter(|&i| out.entries[i].subject == subject).collect();
        let counts = split_counts(idx.len(), ratios)
            .map_err(|e| Error::InvalidInput(format!("subject {subject}: {e}")))?;
        assign(&mut idx, counts, &mut rng, &mut out.entries);
    }
    out.seed = Some(seed);
    out.ratios = ratios;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(n: usize, subjects: usize) -> DatasetManifest {
        DatasetManifest::new(
            (0..n)
                .map(|i| ManifestEntry {
                    subject: format!("s{}", i % subjects),
                    utterance: format!("u{i}"),
                    eeg: format!("eeg/{i}.eegr"),
                    video: format!("video/{i}.vidg"),
                    split: None,
                })
                .collect(),
        )
    }

    #[test]
    fn hundred_entries_split_85_5_10() {
        assert_eq!(split_counts(100, DEFAULT_RATIOS).unwrap(), [85, 5, 10]);
        let m = split_dataset(&manifest(100, 1), DEFAULT_RATIOS, 3).unwrap();
        assert_eq!(m.split_sizes(), [85, 5, 10]);
    }

    #[test]
    fn three_entries_one_each() {
        assert_eq!(split_counts(3, DEFAULT_RATIOS).unwrap(), [1, 1, 1]);
    }

    #[test]
    fn twenty_entries() {
        assert_eq!(split_counts(20, DEFAULT_RATIOS).unwrap(), [17, 1, 2]);
    }

    #[test]
    fn same_seed_same_assignment() {
        let m = manifest(40, 1);
        assert_eq!(split_dataset(&m, DEFAULT_RATIOS, 9).unwrap(), split_dataset(&m, DEFAULT_RATIOS, 9).unwrap());
        assert_ne!(split_dataset(&m, DEFAULT_RATIOS, 9).unwrap(), split_dataset(&m, DEFAULT_RATIOS, 10).unwrap());
    }

    #[test]
    fn bad_ratios_and_sizes() {
        assert!(split_counts(10, [0.5, 0.5, 0.1]).is_err());
        assert!(split_counts(10, [1.2, -0.1, -0.1]).is_err());
        assert!(split_counts(2, DEFAULT_RATIOS).is_err());
        assert_eq!(split_counts(10, [0.9, 0.1, 0.0]).unwrap(), [9, 1, 0]);
    }

    #[test]
    fn per_subject_split_covers_each_subject() {
        let m = split_per_subject(&manifest(40, 2), DEFAULT_RATIOS, 1).unwrap();
        for s in ["s0", "s1"] {
            let sizes = Split::ALL.map(|sp| m.entries_in(sp).filter(|e| e.subject == s).count());
            assert_eq!(sizes, [17, 1, 2]);
        }
    }

    #[test]
    fn json_round_trip() {
        let m = split_dataset(&manifest(5, 2), DEFAULT_RATIOS, 1).unwrap();
        let text = m.to_json().unwrap();
        assert!(text.contains("\"split\": \"train\""));
        assert_eq!(DatasetManifest::from_json(&text).unwrap(), m);
        assert!(DatasetManifest::from_json("{\"entries\": 3}").unwrap_err().is_format());
    }
}
