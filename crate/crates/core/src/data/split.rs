use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Sample, UnlabeledSample};
use crate::error::{Error, Result};

const STREAM_TRAIN_TEST: u64 = 0;
const STREAM_LABELED: u64 = 1;
const STREAM_VIEWS: u64 = 2;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Train/test partition with a labeled subset of the training pool.
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train_labeled: Vec<Sample>,
    pub train_unlabeled: Vec<UnlabeledSample>,
    pub test: Vec<Sample>,
    pub train_fraction: f64,
    pub label_fraction: f64,
    pub seed: u64,
}

/// Sample ids of a split, persisted with every run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub labeled_ids: Vec<usize>,
    pub unlabeled_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub train_fraction: f64,
    pub label_fraction: f64,
    pub seed: u64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl SplitManifest {
    /// Hash of the whole manifest.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("manifest serializes"))
    }

    /// Hash of the test ids alone; equal for every label fraction drawn with the same seed.
    pub fn test_hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(&self.test_ids).expect("ids serialize"))
    }
}

fn check_fraction(name: &str, v: f64, allow_one: bool) -> Result<()> {
    let ok = v > 0.0 && (v < 1.0 || (allow_one && v == 1.0));
    if ok {
        Ok(())
    } else {
        let range = if allow_one { "(0, 1]" } else { "(0, 1)" };
        Err(Error::config(name, format!("{v} is outside {range}")))
    }
}

/// Shuffles `samples`, splits train/test, then draws the labeled subset
/// uniformly from the training pool. Remaining training samples lose their masks.
pub fn make_split(samples: Vec<Sample>, train_fraction: f64, label_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    check_fraction("train_fraction", train_fraction, false)?;
    check_fraction("label_fraction", label_fraction, true)?;
    let n = samples.len();
    if n < 5 {
        return Err(Error::config("samples", format!("need at least 5 samples, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng(seed, STREAM_TRAIN_TEST));
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(2, n - 1);
    let (train, test) = order.split_at(n_train);
    let mut train = train.to_vec();
    train.shuffle(&mut rng(seed, STREAM_LABELED));
    let n_labeled = ((label_fraction * n_train as f64).round() as usize).clamp(2, n_train);
    let (labeled, unlabeled) = train.split_at(n_labeled);

    let mut slots: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
    let mut take = |i: usize| slots[i].take().expect("indices are a permutation");
    let train_labeled = labeled.iter().map(|&i| take(i)).collect();
    let train_unlabeled = unlabeled
        .iter()
        .map(|&i| {
            let s = take(i);
            UnlabeledSample {
                id: s.id,
                image: s.image,
            }
        })
        .collect();
    let test = test.iter().map(|&i| take(i)).collect();
    Ok(DatasetSplit {
        train_labeled,
        train_unlabeled,
        test,
        train_fraction,
        label_fraction,
        seed,
    })
}

impl DatasetSplit {
    pub fn manifest(&self) -> SplitManifest {
        SplitManifest {
            labeled_ids: self.train_labeled.iter().map(|s| s.id).collect(),
            unlabeled_ids: self.train_unlabeled.iter().map(|s| s.id).collect(),
            test_ids: self.test.iter().map(|s| s.id).collect(),
            train_fraction: self.train_fraction,
            label_fraction: self.label_fraction,
            seed: self.seed,
        }
    }

    /// Rebuilds a split from persisted ids; `samples` are looked up by id.
    pub fn from_manifest(samples: Vec<Sample>, manifest: &SplitManifest) -> Result<Self> {
        let mut by_id: std::collections::HashMap<usize, Sample> = samples.into_iter().map(|s| (s.id, s)).collect();
        let mut take = |id: usize| {
            by_id
                .remove(&id)
                .ok_or_else(|| Error::config("split", format!("sample id {id} missing or repeated")))
        };
        let train_labeled = manifest.labeled_ids.iter().map(|&i| take(i)).collect::<Result<_>>()?;
        let train_unlabeled = manifest
            .unlabeled_ids
            .iter()
            .map(|&i| {
                take(i).map(|s| UnlabeledSample {
                    id: s.id,
                    image: s.image,
                })
            })
            .collect::<Result<_>>()?;
        let test = manifest.test_ids.iter().map(|&i| take(i)).collect::<Result<_>>()?;
        Ok(Self {
            train_labeled,
            train_unlabeled,
            test,
            train_fraction: manifest.train_fraction,
            label_fraction: manifest.label_fraction,
            seed: manifest.seed,
        })
    }
}

/// Disjoint labeled subsets X¹ and X², as indices into `train_labeled`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledViewAssignment {
    pub view1: Vec<usize>,
    pub view2: Vec<usize>,
}

/// Seeded shuffle of the labeled indices, then alternating assignment.
pub fn assign_views(split: &DatasetSplit, seed: u64) -> Result<LabeledViewAssignment> {
    let n = split.train_labeled.len();
    if n < 2 {
        return Err(Error::TooFewLabeled(n));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng(seed, STREAM_VIEWS));
    let (mut view1, mut view2) = (Vec::new(), Vec::new());
    for (k, i) in idx.into_iter().enumerate() {
        if k % 2 == 0 {
            view1.push(i);
        } else {
            view2.push(i);
        }
    }
    Ok(LabeledViewAssignment { view1, view2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ImageTensor, MaskTensor};

    fn dummy(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|id| {
                Sample::new(
                    id,
                    ImageTensor::new(1, 2, 2, vec![0.0; 4]).unwrap(),
                    MaskTensor::new(2, 2, vec![0; 4]).unwrap(),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn five_percent_of_eighty() {
        let s = make_split(dummy(100), 0.8, 0.05, 1).unwrap();
        assert_eq!(s.train_labeled.len(), 4);
        assert_eq!(s.train_unlabeled.len(), 76);
        assert_eq!(s.test.len(), 20);
    }

    #[test]
    fn full_labels_leave_no_unlabeled() {
        let s = make_split(dummy(20), 0.8, 1.0, 1).unwrap();
        assert!(s.train_unlabeled.is_empty());
        assert_eq!(s.train_labeled.len(), 16);
    }

    #[test]
    fn same_seed_same_partition() {
        let a = make_split(dummy(50), 0.8, 0.2, 9).unwrap().manifest();
        let b = make_split(dummy(50), 0.8, 0.2, 9).unwrap().manifest();
        assert_eq!(a, b);
        let c = make_split(dummy(50), 0.8, 0.2, 10).unwrap().manifest();
        assert_ne!(a, c);
    }

    #[test]
    fn test_set_does_not_depend_on_label_fraction() {
        let a = make_split(dummy(50), 0.8, 0.05, 3).unwrap().manifest();
        let b = make_split(dummy(50), 0.8, 0.5, 3).unwrap().manifest();
        assert_eq!(a.test_hash(), b.test_hash());
    }

    #[test]
    fn fractions_out_of_range_are_rejected() {
        assert!(make_split(dummy(10), 1.0, 0.5, 0).is_err());
        assert!(make_split(dummy(10), 0.8, 0.0, 0).is_err());
        assert!(make_split(dummy(10), 0.8, 1.5, 0).is_err());
        assert!(make_split(dummy(4), 0.8, 0.5, 0).is_err());
    }

    #[test]
    fn manifest_round_trip_rebuilds_split() {
        let s = make_split(dummy(30), 0.8, 0.2, 4).unwrap();
        let m = s.manifest();
        let rebuilt = DatasetSplit::from_manifest(dummy(30), &m).unwrap();
        assert_eq!(rebuilt.manifest(), m);
    }

    #[test]
    fn views_split_evenly() {
        let s = make_split(dummy(25), 0.8, 0.2, 2).unwrap();
        assert_eq!(s.train_labeled.len(), 4);
        let v = assign_views(&s, 3).unwrap();
        assert_eq!((v.view1.len(), v.view2.len()), (2, 2));
        let s5 = make_split(dummy(30), 5.0 / 6.0, 0.2, 2).unwrap();
        assert_eq!(s5.train_labeled.len(), 5);
        let v5 = assign_views(&s5, 3).unwrap();
        assert_eq!((v5.view1.len(), v5.view2.len()), (3, 2));
        assert_eq!(v5, assign_views(&s5, 3).unwrap());
    }
}
