//! Confusion-matrix metrics and split summaries.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    /// Classes never predicted; their precision is reported as 0.
    pub undefined_precision: Vec<usize>,
    /// Classes absent from the ground truth; their recall is reported as 0.
    pub undefined_recall: Vec<usize>,
    pub macro_precision: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub count: usize,
}

impl MetricsReport {
    pub fn classes(&self) -> usize {
        self.confusion.len()
    }

    pub fn correct(&self) -> usize {
        (0..self.classes()).map(|c| self.confusion[c][c]).sum()
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(predicted: &[usize], truth: &[usize], classes: usize) -> Result<MetricsReport> {
    if predicted.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Empty("no predictions to score".into()));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p >= classes || t >= classes {
            return Err(Error::Data(format!("label pair ({t}, {p}) out of range for {classes} classes")));
        }
        confusion[t][p] += 1;
    }
    let mut precision = Vec::with_capacity(classes);
    let mut recall = Vec::with_capacity(classes);
    let mut f1 = Vec::with_capacity(classes);
    let mut undefined_precision = Vec::new();
    let mut undefined_recall = Vec::new();
    for c in 0..classes {
        let tp = confusion[c][c];
        let predicted_c: usize = (0..classes).map(|t| confusion[t][c]).sum();
        let actual_c: usize = confusion[c].iter().sum();
        let p = ratio(tp, predicted_c).unwrap_or_else(|| {
            undefined_precision.push(c);
            0.0
        });
        let r = ratio(tp, actual_c).unwrap_or_else(|| {
            undefined_recall.push(c);
            0.0
        });
        precision.push(p);
        recall.push(r);
        f1.push(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let count = truth.len();
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    Ok(MetricsReport {
        macro_precision: mean(&precision),
        macro_f1: mean(&f1),
        accuracy: correct as f64 / count as f64,
        confusion,
        precision,
        recall,
        f1,
        undefined_precision,
        undefined_recall,
        count,
    })
}

/// Mean and population standard deviation of one metric across splits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Spread {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Spread {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSummary {
    pub macro_precision: Spread,
    pub macro_f1: Spread,
    pub accuracy: Spread,
}

pub fn summarize(reports: &[MetricsReport]) -> SplitSummary {
    let pick = |f: fn(&MetricsReport) -> f64| Spread::of(&reports.iter().map(f).collect::<Vec<_>>());
    SplitSummary {
        macro_precision: pick(|r| r.macro_precision),
        macro_f1: pick(|r| r.macro_f1),
        accuracy: pick(|r| r.accuracy),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::SeededRng;
    use proptest::prelude::*;

    #[test]
    fn perfect_classifier() {
        let y = [0, 1, 2, 2, 1, 0];
        let m = metrics(&y, &y, 3).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert!(m.f1.iter().all(|&f| f == 1.0));
        assert_eq!(m.macro_precision, 1.0);
    }

    #[test]
    fn two_by_two_confusion() {
        // truth 0: predicted 0,0,1 ; truth 1: predicted 1,1,0
        let truth = [0, 0, 0, 1, 1, 1];
        let pred = [0, 0, 1, 1, 1, 0];
        let m = metrics(&pred, &truth, 2).unwrap();
        assert_eq!(m.confusion, vec![vec![2, 1], vec![1, 2]]);
        assert_eq!(m.accuracy, 4.0 / 6.0);
        assert_eq!(m.precision[0], 2.0 / 3.0);
        assert!((m.f1[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_prediction() {
        let truth = [0, 0, 1, 1];
        let m = metrics(&[0, 0, 0, 0], &truth, 2).unwrap();
        assert_eq!(m.recall[0], 1.0);
        assert_eq!(m.precision[0], 0.5);
        assert_eq!(m.undefined_precision, vec![1]);
        assert_eq!(m.precision[1], 0.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(metrics(&[], &[], 2), Err(Error::Empty(_))));
        assert!(matches!(metrics(&[0], &[0, 1], 2), Err(Error::Shape(_))));
        assert!(matches!(metrics(&[2], &[0], 2), Err(Error::Data(_))));
    }

    #[test]
    fn spread() {
        let s = Spread::of(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std), (2.0, 1.0));
    }

    proptest! {
        #[test]
        fn internal_consistency(seed in 0u64..10_000, n in 1usize..80, c in 1usize..7) {
            let mut rng = SeededRng::new(seed);
            let truth: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
            let pred: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
            let m = metrics(&pred, &truth, c).unwrap();
            let total: usize = m.confusion.iter().flatten().sum();
            prop_assert_eq!(total, n);
            prop_assert_eq!(m.accuracy, m.correct() as f64 / n as f64);
            for k in 0..c {
                let (p, r) = (m.precision[k], m.recall[k]);
                let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
                prop_assert!((m.f1[k] - f).abs() <= 1e-12);
            }
        }
    }
}
