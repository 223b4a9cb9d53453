//! Audio ingestion, dataset splits, long-sequence task constructions and a
//! synthetic tone corpus.

mod manifest;
mod synthetic;
mod tasks;
pub mod wav;

pub use manifest::{load_manifest, write_manifest, ManifestEntry};
pub use synthetic::{generate_synthetic, template_classify, SyntheticSpec};
pub use tasks::{make_concat_example, split_per_speaker, stitch_speaker_clip, ConcatTaskSpec};

use crate::error::{Error, Result};
use crate::frontend::Waveform;

#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub waveform: Waveform,
    pub label: usize,
    pub source_id: String,
    pub speaker_id: Option<String>,
}

/// Labelled clips with a known label space.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub clips: Vec<AudioClip>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(clips: Vec<AudioClip>, n_classes: usize) -> Result<Self> {
        if let Some(c) = clips.iter().find(|c| c.label >= n_classes) {
            return Err(Error::Data(format!(
                "clip {} has label {} outside {n_classes} classes",
                c.source_id, c.label
            )));
        }
        Ok(Self { clips, n_classes })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            clips: idx.iter().map(|&i| self.clips[i].clone()).collect(),
            n_classes: self.n_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for c in &self.clips {
            counts[c.label] += 1;
        }
        counts
    }
}

/// Fold index of every clip of a dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldAssignment {
    pub folds: Vec<usize>,
    pub n_folds: usize,
}

impl FoldAssignment {
    pub fn new(folds: Vec<usize>) -> Result<Self> {
        let n_folds = folds.iter().max().map_or(0, |&m| m + 1);
        let fa = Self { folds, n_folds };
        for f in 0..n_folds {
            if fa.members(f).is_empty() {
                return Err(Error::Data(format!("fold {f} is empty")));
            }
        }
        Ok(fa)
    }

    /// Round-robin assignment of `n` clips to `k` folds.
    pub fn round_robin(n: usize, k: usize) -> Result<Self> {
        Self::new((0..n).map(|i| i % k.max(1)).collect())
    }

    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len())
            .filter(|&i| self.folds[i] == fold)
            .collect()
    }

    /// Train and test indices for holding out `fold`.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.folds.len()).partition(|&i| self.folds[i] != fold)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition() {
        let fa = FoldAssignment::round_robin(11, 5).unwrap();
        assert_eq!(fa.n_folds, 5);
        let mut seen = [0; 11];
        for f in 0..5 {
            let (train, test) = fa.split(f);
            assert_eq!(train.len() + test.len(), 11);
            for i in test {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert!(FoldAssignment::new(vec![0, 2, 2]).is_err());
    }

    #[test]
    fn labels_checked() {
        let clip = AudioClip {
            waveform: Waveform::new(vec![0.0; 4], 16_000).unwrap(),
            label: 3,
            source_id: "a".into(),
            speaker_id: None,
        };
        assert!(Dataset::new(vec![clip.clone()], 3).is_err());
        assert_eq!(
            Dataset::new(vec![clip], 4).unwrap().class_counts(),
            [0, 0, 0, 1]
        );
    }
}
