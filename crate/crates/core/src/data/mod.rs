//! Sample pools for training: synthetic shifted blobs or IDX image files,
//! the known / source-unknown / target-unknown class protocol, and batch
//! drawing.

mod blobs;
mod idx;

pub use blobs::{gen_shifted_blobs, read_blobs_csv, write_blobs_csv, BlobShiftConfig, BLOBS_HEADER};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Feature rows with one integer label each.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSamples {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledSamples {
    pub fn new(features: Tensor, labels: Vec<usize>) -> Result<Self> {
        if features.rank() != 2 || features.rows() != labels.len() {
            return Err(Error::Format(format!(
                "{:?} features for {} labels",
                features.shape(),
                labels.len()
            )));
        }
        Ok(LabeledSamples { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    fn subset(&self, keep: &[usize], relabel: impl Fn(usize) -> usize) -> LabeledSamples {
        LabeledSamples {
            features: self.features.select_rows(keep),
            labels: keep.iter().map(|&i| relabel(self.labels[i])).collect(),
        }
    }
}

/// Labeled samples of both domains before the role protocol is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDomains {
    pub source: LabeledSamples,
    pub target: LabeledSamples,
}

/// Class roles. Known classes are re-indexed `0..K` by their position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleSplit {
    pub known: Vec<usize>,
    pub source_unknown: Vec<usize>,
    pub target_unknown: Vec<usize>,
}

impl RoleSplit {
    /// Known `{0,1,2,3}`, source-unknown `{4,5,6}`, target-unknown `{7,8,9}`.
    pub fn digits() -> Self {
        RoleSplit {
            known: vec![0, 1, 2, 3],
            source_unknown: vec![4, 5, 6],
            target_unknown: vec![7, 8, 9],
        }
    }

    pub fn classes(&self) -> usize {
        self.known.len()
    }

    /// Checks disjointness and that every class id is below `class_count`.
    pub fn validate(&self, class_count: usize) -> Result<()> {
        if self.known.is_empty() {
            return Err(Error::Config("the known class list is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for &c in self
            .known
            .iter()
            .chain(&self.source_unknown)
            .chain(&self.target_unknown)
        {
            if c >= class_count {
                return Err(Error::Config(format!(
                    "class {c} in the role split does not exist among {class_count} classes"
                )));
            }
            if !seen.insert(c) {
                return Err(Error::Config(format!("class {c} appears in more than one role")));
            }
        }
        Ok(())
    }

    fn known_index(&self, class: usize) -> Option<usize> {
        self.known.iter().position(|&k| k == class)
    }
}

impl Default for RoleSplit {
    fn default() -> Self {
        RoleSplit::digits()
    }
}

/// Ground-truth role of a target sample. Only the evaluator sees these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetRole {
    Known(usize),
    Unknown,
}

/// The three training pools plus the hidden target ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPool {
    source_known: LabeledSamples,
    source_unknown: Tensor,
    target: Tensor,
    target_truth: Vec<TargetRole>,
    classes: usize,
}

/// What a trainer may see: no target labels.
///
/// ```compile_fail
/// # use adagev::data::*;
/// # let raw = gen_shifted_blobs(&BlobShiftConfig::default()).unwrap();
/// # let pool = apply_roles(&raw.source, &raw.target, &RoleSplit::digits()).unwrap();
/// let view = pool.train_view();
/// let _ = view.target_truth();
/// ```
#[derive(Debug, Clone, Copy)]
pub struct TrainView<'a> {
    pub source_known: &'a LabeledSamples,
    pub source_unknown: &'a Tensor,
    pub target: &'a Tensor,
    pub classes: usize,
}

impl<'a> TrainView<'a> {
    pub fn dim(&self) -> usize {
        self.source_known.dim()
    }
}

impl DatasetPool {
    pub fn train_view(&self) -> TrainView<'_> {
        TrainView {
            source_known: &self.source_known,
            source_unknown: &self.source_unknown,
            target: &self.target,
            classes: self.classes,
        }
    }

    pub fn target_features(&self) -> &Tensor {
        &self.target
    }

    pub fn target_truth(&self) -> &[TargetRole] {
        &self.target_truth
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.source_known.dim()
    }

    /// Keeps an evenly spaced `fraction` of each source pool, for
    /// reduced-source runs. The target is untouched.
    pub fn with_source_fraction(&self, fraction: f64) -> Result<DatasetPool> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!(
                "source fraction must lie in (0, 1], got {fraction}"
            )));
        }
        let spaced = |n: usize| -> Vec<usize> {
            let m = ((n as f64 * fraction).ceil() as usize).min(n);
            (0..m).map(|j| j * n / m).collect()
        };
        let idx_k = spaced(self.source_known.len());
        let idx_u = spaced(self.source_unknown.rows());
        Ok(DatasetPool {
            source_known: self.source_known.subset(&idx_k, |y| y),
            source_unknown: self.source_unknown.select_rows(&idx_u),
            target: self.target.clone(),
            target_truth: self.target_truth.clone(),
            classes: self.classes,
        })
    }
}

/// Applies the class-role protocol.
///
/// Source samples of known classes keep their (re-indexed) labels, samples
/// of source-unknown classes lose them, and target-unknown classes are
/// dropped from the source. The target keeps known and target-unknown
/// classes; its source-unknown-class samples are dropped.
pub fn apply_roles(source: &LabeledSamples, target: &LabeledSamples, rs: &RoleSplit) -> Result<DatasetPool> {
    let class_count = source
        .labels
        .iter()
        .chain(&target.labels)
        .chain(rs.known.iter().chain(&rs.source_unknown).chain(&rs.target_unknown))
        .max()
        .map_or(0, |m| m + 1);
    rs.validate(class_count)?;
    if source.dim() != target.dim() {
        return Err(Error::Format(format!(
            "source dimension {} differs from target dimension {}",
            source.dim(),
            target.dim()
        )));
    }

    let present = |samples: &LabeledSamples, class: usize| samples.labels.contains(&class);
    for &c in rs.known.iter().chain(&rs.source_unknown) {
        if !present(source, c) {
            return Err(Error::MissingRoleClass {
                class: c,
                domain: "source",
            });
        }
    }
    for &c in rs.known.iter().chain(&rs.target_unknown) {
        if !present(target, c) {
            return Err(Error::MissingRoleClass {
                class: c,
                domain: "target",
            });
        }
    }

    let mut known_idx = Vec::new();
    let mut unknown_idx = Vec::new();
    for (i, &y) in source.labels.iter().enumerate() {
        if rs.known.contains(&y) {
            known_idx.push(i);
        } else if rs.source_unknown.contains(&y) {
            unknown_idx.push(i);
        }
    }
    let mut target_idx = Vec::new();
    let mut target_truth = Vec::new();
    for (i, &y) in target.labels.iter().enumerate() {
        if let Some(k) = rs.known_index(y) {
            target_idx.push(i);
            target_truth.push(TargetRole::Known(k));
        } else if rs.target_unknown.contains(&y) {
            target_idx.push(i);
            target_truth.push(TargetRole::Unknown);
        }
    }

    Ok(DatasetPool {
        source_known: source.subset(&known_idx, |y| rs.known_index(y).expect("known class")),
        source_unknown: source.features.select_rows(&unknown_idx),
        target: target.features.select_rows(&target_idx),
        target_truth,
        classes: rs.classes(),
    })
}

/// One training draw: `B` labeled source-known samples, `B` source-unknown
/// samples and `B` target samples, plus an optional second target batch for
/// estimating the partition function.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBatch {
    pub source_x: Tensor,
    pub source_y: Vec<usize>,
    pub unknown_x: Tensor,
    pub target_x: Tensor,
    pub aux_target_x: Option<Tensor>,
}

fn draw_indices(n: usize, b: usize, rng: &mut impl Rng, name: &'static str) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::EmptyPool(name));
    }
    Ok((0..b).map(|_| rng.random_range(0..n)).collect())
}

/// Three independent uniform draws with replacement, in the order source
/// known, source unknown, target.
pub fn sample_batch_triple(view: &TrainView<'_>, batch_size: usize, rng: &mut impl Rng) -> Result<DomainBatch> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let ks = draw_indices(view.source_known.len(), batch_size, rng, "source known")?;
    let us = draw_indices(view.source_unknown.rows(), batch_size, rng, "source unknown")?;
    let ts = draw_indices(view.target.rows(), batch_size, rng, "target")?;
    Ok(DomainBatch {
        source_x: view.source_known.features.select_rows(&ks),
        source_y: ks.iter().map(|&i| view.source_known.labels[i]).collect(),
        unknown_x: view.source_unknown.select_rows(&us),
        target_x: view.target.select_rows(&ts),
        aux_target_x: None,
    })
}

/// An extra target batch for partition-function estimation.
pub fn sample_target(view: &TrainView<'_>, batch_size: usize, rng: &mut impl Rng) -> Result<Tensor> {
    let ts = draw_indices(view.target.rows(), batch_size, rng, "target")?;
    Ok(view.target.select_rows(&ts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn raw() -> RawDomains {
        gen_shifted_blobs(&BlobShiftConfig {
            source_per_class: 5,
            target_per_class: 4,
            ..BlobShiftConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn digits_protocol() {
        let raw = raw();
        let pool = apply_roles(&raw.source, &raw.target, &RoleSplit::digits()).unwrap();
        let view = pool.train_view();
        assert_eq!(view.classes, 4);
        assert_eq!(view.source_known.len(), 4 * 5);
        assert!(view.source_known.labels.iter().all(|&y| y < 4));
        assert_eq!(view.source_unknown.rows(), 3 * 5);
        assert_eq!(view.target.rows(), 7 * 4);

        // known labels keep their identity under the digits split
        for (i, &y) in view.source_known.labels.iter().enumerate() {
            assert_eq!(y, i / 5);
        }
        let unknown = pool
            .target_truth()
            .iter()
            .filter(|r| **r == TargetRole::Unknown)
            .count();
        assert_eq!(unknown, 12);
    }

    #[test]
    fn roles_follow_class_membership() {
        let features = Tensor::from_rows(&[[0.0], [1.0], [2.0], [3.0]]).unwrap();
        let source = LabeledSamples::new(features.clone(), vec![2, 5, 9, 0]).unwrap();
        let target = LabeledSamples::new(features, vec![8, 2, 5, 0]).unwrap();
        let rs = RoleSplit {
            known: vec![2, 0],
            source_unknown: vec![5],
            target_unknown: vec![8],
        };
        let pool = apply_roles(&source, &target, &rs).unwrap();
        let v = pool.train_view();
        // class 2 -> 0, class 0 -> 1; class 9 dropped
        assert_eq!(v.source_known.labels, vec![0, 1]);
        assert_eq!(v.source_known.features.data(), &[0.0, 3.0]);
        assert_eq!(v.source_unknown.data(), &[1.0]);
        // target class 5 dropped, class 8 unknown
        assert_eq!(
            pool.target_truth(),
            &[TargetRole::Unknown, TargetRole::Known(0), TargetRole::Known(1)]
        );
        assert_eq!(v.target.data(), &[0.0, 1.0, 3.0]);
    }

    #[test]
    fn missing_role_class() {
        let features = Tensor::from_rows(&[[0.0], [1.0]]).unwrap();
        let source = LabeledSamples::new(features.clone(), vec![0, 1]).unwrap();
        let target = LabeledSamples::new(features, vec![0, 0]).unwrap();
        let rs = RoleSplit {
            known: vec![0],
            source_unknown: vec![1],
            target_unknown: vec![2],
        };
        assert!(matches!(
            apply_roles(&source, &target, &rs),
            Err(Error::MissingRoleClass {
                class: 2,
                domain: "target"
            })
        ));
    }

    #[test]
    fn split_validation() {
        assert!(RoleSplit::digits().validate(10).is_ok());
        assert!(RoleSplit::digits().validate(3).is_err());
        let overlapping = RoleSplit {
            known: vec![0, 1],
            source_unknown: vec![1],
            target_unknown: vec![],
        };
        assert!(overlapping.validate(5).is_err());
    }

    #[test]
    fn batch_shapes_and_determinism() {
        let raw = raw();
        let pool = apply_roles(&raw.source, &raw.target, &RoleSplit::digits()).unwrap();
        let view = pool.train_view();
        let draw = |seed| sample_batch_triple(&view, 64, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = draw(1);
        assert_eq!(b.source_x.rows(), 64);
        assert_eq!(b.source_y.len(), 64);
        assert_eq!(b.unknown_x.rows(), 64);
        assert_eq!(b.target_x.rows(), 64);
        assert_eq!(b, draw(1));
        assert_ne!(b, draw(2));
    }

    #[test]
    fn single_sample_pool_repeats() {
        let one = LabeledSamples::new(Tensor::from_rows(&[[7.0, 8.0]]).unwrap(), vec![0]).unwrap();
        let unknown = Tensor::from_rows(&[[1.0, 1.0]]).unwrap();
        let target = Tensor::from_rows(&[[2.0, 2.0]]).unwrap();
        let view = TrainView {
            source_known: &one,
            source_unknown: &unknown,
            target: &target,
            classes: 1,
        };
        let b = sample_batch_triple(&view, 5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(b.source_x.data(), &[7.0, 8.0].repeat(5)[..]);
        assert_eq!(b.target_x.data(), &[2.0; 10]);

        let empty = Tensor::zeros(vec![0, 2]);
        let view = TrainView {
            source_unknown: &empty,
            ..view
        };
        assert!(matches!(
            sample_batch_triple(&view, 5, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::EmptyPool("source unknown"))
        ));
    }

    #[test]
    fn source_fraction_spreads_over_classes() {
        let raw = raw();
        let pool = apply_roles(&raw.source, &raw.target, &RoleSplit::digits()).unwrap();
        let half = pool.with_source_fraction(0.5).unwrap();
        assert_eq!(half.train_view().source_known.len(), 10);
        assert_eq!(half.train_view().source_unknown.rows(), 8);
        assert_eq!(half.target_truth(), pool.target_truth());
    }
}
