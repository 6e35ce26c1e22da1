use serde::{Deserialize, Serialize};

use crate::data::TargetRole;
use crate::evt::GevParams;

/// Outcome of classifying one target sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Prediction {
    Known(usize),
    Unknown,
}

impl Prediction {
    /// Row/column index in a `(K+1) x (K+1)` confusion matrix.
    pub fn index(self, classes: usize) -> usize {
        match self {
            Prediction::Known(k) => k,
            Prediction::Unknown => classes,
        }
    }
}

pub fn truth_index(role: TargetRole, classes: usize) -> usize {
    match role {
        TargetRole::Known(k) => k,
        TargetRole::Unknown => classes,
    }
}

/// Open-set evaluation summary.
///
/// Rows of `confusion` are true classes (K known, then unknown), columns
/// are predictions. Classes without target samples have no recall and are
/// left out of both averages; they are listed in `excluded`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: usize,
    pub confusion: Vec<Vec<u64>>,
    pub recalls: Vec<Option<f64>>,
    /// Mean recall over all K+1 classes.
    pub os: f64,
    /// Mean recall over the K known classes.
    pub os_star: f64,
    /// Recall of the unknown class.
    pub unk: Option<f64>,
    pub samples: u64,
    pub excluded: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub variant: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gev: Option<GevParams>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl EvalReport {
    pub fn from_predictions(classes: usize, truth: &[TargetRole], predictions: &[Prediction]) -> Self {
        assert_eq!(truth.len(), predictions.len(), "one prediction per target sample");
        let size = classes + 1;
        let mut confusion = vec![vec![0u64; size]; size];
        for (&t, &p) in truth.iter().zip(predictions) {
            confusion[truth_index(t, classes)][p.index(classes)] += 1;
        }
        let recalls: Vec<Option<f64>> = confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let total: u64 = row.iter().sum();
                (total > 0).then(|| row[i] as f64 / total as f64)
            })
            .collect();
        let excluded = recalls
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_none())
            .map(|(i, _)| i)
            .collect();
        EvalReport {
            classes,
            os: mean(recalls.iter().flatten().copied()),
            os_star: mean(recalls[..classes].iter().flatten().copied()),
            unk: recalls[classes],
            samples: truth.len() as u64,
            confusion,
            recalls,
            excluded,
            variant: None,
            gev: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use TargetRole::{Known as T, Unknown as TU};

    #[test]
    fn hand_computed_case() {
        // class 0: 2/2 right, class 1: 1/2 right, unknown: 0/1 right
        let truth = [T(0), T(0), T(1), T(1), TU];
        let preds = [
            Prediction::Known(0),
            Prediction::Known(0),
            Prediction::Known(1),
            Prediction::Unknown,
            Prediction::Known(0),
        ];
        let r = EvalReport::from_predictions(2, &truth, &preds);
        assert_eq!(r.recalls, vec![Some(1.0), Some(0.5), Some(0.0)]);
        assert!((r.os - 0.5).abs() < 1e-15);
        assert!((r.os_star - 0.75).abs() < 1e-15);
        assert_eq!(r.unk, Some(0.0));
        assert_eq!(r.samples, 5);
        assert_eq!(r.confusion.iter().flatten().sum::<u64>(), 5);
        assert_eq!(r.confusion[1][2], 1);
    }

    #[test]
    fn all_correct() {
        let truth = [T(0), T(1), TU];
        let preds = [Prediction::Known(0), Prediction::Known(1), Prediction::Unknown];
        let r = EvalReport::from_predictions(2, &truth, &preds);
        assert_eq!((r.os, r.os_star), (1.0, 1.0));
    }

    #[test]
    fn empty_classes_are_excluded() {
        let truth = [T(0), T(0), T(1)];
        let preds = [Prediction::Known(0), Prediction::Known(1), Prediction::Known(1)];
        let r = EvalReport::from_predictions(3, &truth, &preds);
        assert_eq!(r.excluded, vec![2, 3]);
        assert_eq!(r.unk, None);
        // OS* is plain macro recall over the populated known classes
        assert!((r.os_star - 0.75).abs() < 1e-15);
        assert!((r.os - 0.75).abs() < 1e-15);
    }
}
