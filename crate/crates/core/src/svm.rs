//! One-vs-rest linear SVM over network output vectors, plus Platt scaling.
//!
//! Each binary problem minimizes `(1/2)||w||^2 + C sum_i max(0, 1 - y_i s_i)`
//! with `s_i = w . [x_i, 1]`, using deterministic Pegasos sub-gradient steps
//! `1 / (lambda t)` with `lambda = 1 / (N C)`, visiting examples in their
//! given order every epoch.

use crate::error::{Error, Result};
use crate::numeric::{argmax, dot, sigmoid_scalar, Matrix};

pub const SVM_EPOCHS: usize = 200;

const PLATT_ITERS: usize = 3000;
const PLATT_STEP: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    /// One row per class.
    pub weights: Matrix,
    pub biases: Vec<f64>,
    pub c_svm: f64,
}

impl LinearSvm {
    pub fn classes(&self) -> usize {
        self.biases.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn zeros(classes: usize, input_dim: usize, c_svm: f64) -> Self {
        Self {
            weights: Matrix::zeros(classes, input_dim),
            biases: vec![0.0; classes],
            c_svm,
        }
    }
}

/// Per-class objective values recorded at the end of every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmTrace {
    pub objective: Vec<Vec<f64>>,
}

fn binary_objective(w: &[f64], xs: &Matrix, ys: &[f64], c_svm: f64) -> f64 {
    let d = xs.cols();
    let hinge: f64 = xs
        .iter_rows()
        .zip(ys)
        .map(|(x, &y)| (1.0 - y * (dot(&w[..d], x) + w[d])).max(0.0))
        .sum();
    0.5 * dot(w, w) + c_svm * hinge
}

/// Pegasos on one binary problem. Returns the augmented weight vector
/// (bias last) and the objective after each epoch. The returned weights are
/// the best end-of-epoch iterate, so the recorded objective never rises.
fn pegasos(xs: &Matrix, ys: &[f64], c_svm: f64, epochs: usize) -> (Vec<f64>, Vec<f64>) {
    let n = xs.rows();
    let d = xs.cols();
    let lambda = 1.0 / (n as f64 * c_svm);
    let radius = 1.0 / lambda.sqrt();
    let mut w = vec![0.0; d + 1];
    let mut t = 0u64;
    let mut best = w.clone();
    let mut best_obj = binary_objective(&w, xs, ys, c_svm);
    let mut history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        for (x, &y) in xs.iter_rows().zip(ys) {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let margin = y * (dot(&w[..d], x) + w[d]);
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            if margin < 1.0 {
                for (wj, xj) in w.iter_mut().zip(x) {
                    *wj += eta * y * xj;
                }
                w[d] += eta * y;
            }
            let norm = dot(&w, &w).sqrt();
            if norm > radius {
                let s = radius / norm;
                w.iter_mut().for_each(|v| *v *= s);
            }
        }
        let obj = binary_objective(&w, xs, ys, c_svm);
        if obj <= best_obj {
            best_obj = obj;
            best.copy_from_slice(&w);
        }
        history.push(best_obj);
    }
    (best, history)
}

pub fn train_linear_svm(
    features: &Matrix,
    labels: &[usize],
    classes: usize,
    c_svm: f64,
) -> Result<LinearSvm> {
    train_linear_svm_traced(features, labels, classes, c_svm).map(|(m, _)| m)
}

pub fn train_linear_svm_traced(
    features: &Matrix,
    labels: &[usize],
    classes: usize,
    c_svm: f64,
) -> Result<(LinearSvm, SvmTrace)> {
    if features.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{} feature rows but {} labels",
            features.rows(),
            labels.len()
        )));
    }
    if !(c_svm > 0.0) {
        return Err(Error::Config(format!("SVM regularization C must be > 0, got {c_svm}")));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Data(format!("label {bad} is out of range for {classes} classes")));
    }
    let distinct = {
        let mut seen = vec![false; classes];
        labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if features.rows() < 2 || distinct < 2 {
        return Err(Error::Data(format!(
            "SVM needs at least two examples from two classes (got {} examples, {distinct} classes)",
            features.rows()
        )));
    }
    if !features.is_finite() {
        return Err(Error::Numeric("SVM features contain non-finite values".into()));
    }

    let d = features.cols();
    let mut model = LinearSvm::zeros(classes, d, c_svm);
    let mut objective = Vec::with_capacity(classes);
    for c in 0..classes {
        let ys: Vec<f64> = labels.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
        let (w, hist) = pegasos(features, &ys, c_svm, SVM_EPOCHS);
        model.weights.row_mut(c).copy_from_slice(&w[..d]);
        model.biases[c] = w[d];
        objective.push(hist);
    }
    Ok((model, SvmTrace { objective }))
}

/// `s_c = w_c . x + b_c` for every class.
pub fn svm_scores(model: &LinearSvm, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != model.input_dim() {
        return Err(Error::shape(format!(
            "SVM expects {} features, got {}",
            model.input_dim(),
            x.len()
        )));
    }
    Ok(model
        .weights
        .iter_rows()
        .zip(&model.biases)
        .map(|(w, b)| dot(w, x) + b)
        .collect())
}

pub fn svm_decision(model: &LinearSvm, x: &[f64]) -> Result<usize> {
    svm_scores(model, x).map(|s| argmax(&s))
}

/// Per-class sigmoid `1 / (1 + exp(A s + B))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlattParams {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl PlattParams {
    pub fn classes(&self) -> usize {
        self.a.len()
    }

    /// Calibrated one-vs-rest probabilities, each strictly inside (0, 1).
    pub fn probabilities(&self, scores: &[f64]) -> Result<Vec<f64>> {
        if scores.len() != self.classes() {
            return Err(Error::shape(format!(
                "Platt model has {} classes, got {} scores",
                self.classes(),
                scores.len()
            )));
        }
        Ok(scores
            .iter()
            .zip(self.a.iter().zip(&self.b))
            .map(|(&s, (&a, &b))| sigmoid_scalar(-(a * s + b)))
            .collect())
    }

    /// Calibrated probabilities renormalized to sum to one across classes.
    pub fn distribution(&self, scores: &[f64]) -> Result<Vec<f64>> {
        let mut p = self.probabilities(scores)?;
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        Ok(p)
    }
}

/// Fits `(A, B)` for one class by gradient descent on the binary cross-entropy.
fn fit_sigmoid(scores: &[f64], targets: &[f64]) -> (f64, f64) {
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let constant = std <= 1e-12 * mean.abs().max(1.0);
    let scaled: Vec<f64> = if !constant {
        scores.iter().map(|s| (s - mean) / std).collect()
    } else {
        vec![0.0; scores.len()]
    };

    // u = a s' + b and p = sigmoid(-u): dL/du = t - p
    let (mut a, mut b) = (0.0, 0.0);
    for _ in 0..PLATT_ITERS {
        let (mut ga, mut gb) = (0.0, 0.0);
        for (&s, &t) in scaled.iter().zip(targets) {
            let p = sigmoid_scalar(-(a * s + b));
            ga += (t - p) * s;
            gb += t - p;
        }
        a -= PLATT_STEP * ga / n;
        b -= PLATT_STEP * gb / n;
    }
    if !constant {
        (a / std, b - a * mean / std)
    } else {
        (0.0, b)
    }
}

/// Fits one sigmoid per class from held-out `N x C` scores and labels.
pub fn platt_scale(scores: &Matrix, labels: &[usize]) -> Result<PlattParams> {
    if scores.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{} score rows but {} labels",
            scores.rows(),
            labels.len()
        )));
    }
    let classes = scores.cols();
    let mut a = Vec::with_capacity(classes);
    let mut b = Vec::with_capacity(classes);
    for c in 0..classes {
        let targets: Vec<f64> = labels.iter().map(|&l| if l == c { 1.0 } else { 0.0 }).collect();
        let positives = targets.iter().filter(|&&t| t == 1.0).count();
        if positives == 0 || positives == targets.len() {
            return Err(Error::Calibration {
                class: c,
                reason: format!("{positives} positives among {} examples", targets.len()),
            });
        }
        let column: Vec<f64> = scores.iter_rows().map(|r| r[c]).collect();
        let (ac, bc) = fit_sigmoid(&column, &targets);
        a.push(ac);
        b.push(bc);
    }
    Ok(PlattParams { a, b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::SeededRng;

    fn clouds(n_per: usize, centers: &[[f64; 2]], spread: f64, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = SeededRng::new(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n_per {
            for (c, ctr) in centers.iter().enumerate() {
                let _ = i;
                rows.push(vec![ctr[0] + spread * rng.normal(), ctr[1] + spread * rng.normal()]);
                labels.push(c);
            }
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    fn accuracy(model: &LinearSvm, xs: &Matrix, labels: &[usize]) -> f64 {
        let ok = xs
            .iter_rows()
            .zip(labels)
            .filter(|(x, &l)| svm_decision(model, x).unwrap() == l)
            .count();
        ok as f64 / labels.len() as f64
    }

    #[test]
    fn symmetric_pair() {
        let xs = Matrix::from_rows(&[[-1.0], [1.0]]).unwrap();
        let m = train_linear_svm(&xs, &[0, 1], 2, 1.0).unwrap();
        assert_eq!(svm_decision(&m, &[-1.0]).unwrap(), 0);
        assert_eq!(svm_decision(&m, &[1.0]).unwrap(), 1);
        // class-1 score crosses zero between the two points
        let s_neg = svm_scores(&m, &[-1.0]).unwrap()[1];
        let s_pos = svm_scores(&m, &[1.0]).unwrap()[1];
        assert!(s_neg < 0.0 && s_pos > 0.0);
        assert!(svm_scores(&m, &[-0.05]).unwrap()[1] < 0.0 || svm_scores(&m, &[0.05]).unwrap()[1] > 0.0);
    }

    #[test]
    fn separable_clouds_are_fit_exactly() {
        let (xs, ys) = clouds(40, &[[-3.0, 0.0], [3.0, 0.5]], 0.5, 1);
        let m = train_linear_svm(&xs, &ys, 2, 1.0).unwrap();
        assert_eq!(accuracy(&m, &xs, &ys), 1.0);
        let (xs, ys) = clouds(30, &[[-4.0, 0.0], [4.0, 0.0], [0.0, 5.0]], 0.6, 2);
        let m = train_linear_svm(&xs, &ys, 3, 1.0).unwrap();
        assert_eq!(accuracy(&m, &xs, &ys), 1.0);
    }

    #[test]
    fn duplicated_training_set_keeps_decisions() {
        let (xs, ys) = clouds(20, &[[-3.0, 0.0], [3.0, 0.0], [0.0, 4.0]], 0.6, 3);
        let a = train_linear_svm(&xs, &ys, 3, 1.0).unwrap();
        let mut rows: Vec<Vec<f64>> = xs.iter_rows().map(|r| r.to_vec()).collect();
        rows.extend(xs.iter_rows().map(|r| r.to_vec()));
        let dup = Matrix::from_rows(&rows).unwrap();
        let dup_labels: Vec<usize> = ys.iter().chain(&ys).copied().collect();
        let b = train_linear_svm(&dup, &dup_labels, 3, 1.0).unwrap();
        let (probe, _) = clouds(50, &[[-3.0, 0.0], [3.0, 0.0], [0.0, 4.0]], 0.6, 4);
        for x in probe.iter_rows() {
            assert_eq!(svm_decision(&a, x).unwrap(), svm_decision(&b, x).unwrap());
        }
    }

    #[test]
    fn epoch_objective_does_not_increase() {
        let (xs, ys) = clouds(30, &[[-2.0, 0.0], [2.0, 0.0], [0.0, 3.0]], 0.8, 5);
        let (_, trace) = train_linear_svm_traced(&xs, &ys, 3, 1.0).unwrap();
        for hist in &trace.objective {
            for w in hist.windows(2) {
                assert!(w[1] <= w[0], "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn svm_errors() {
        let xs = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert!(matches!(train_linear_svm(&xs, &[0, 0], 2, 1.0), Err(Error::Data(_))));
        assert!(matches!(train_linear_svm(&xs, &[0], 2, 1.0), Err(Error::Shape(_))));
        assert!(matches!(train_linear_svm(&xs, &[0, 1], 2, 0.0), Err(Error::Config(_))));
        let m = LinearSvm::zeros(2, 3, 1.0);
        assert!(matches!(svm_scores(&m, &[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn scores_by_hand() {
        let mut m = LinearSvm::zeros(3, 2, 1.0);
        assert_eq!(svm_scores(&m, &[5.0, -1.0]).unwrap(), vec![0.0, 0.0, 0.0]);
        m.biases = vec![0.5, -0.5, 0.25];
        assert_eq!(svm_scores(&m, &[5.0, -1.0]).unwrap(), m.biases);
        m.weights = Matrix::from_rows(&[[1.0, 2.0], [-1.0, 0.5], [0.0, 3.0]]).unwrap();
        // 1*2 + 2*(-1) + 0.5 = 0.5; -2 - 0.5 - 0.5 = -3; 0 - 3 + 0.25 = -2.75
        assert_eq!(svm_scores(&m, &[2.0, -1.0]).unwrap(), vec![0.5, -3.0, -2.75]);
        let before = svm_decision(&m, &[2.0, -1.0]).unwrap();
        m.biases.iter_mut().for_each(|b| *b += 10.0);
        assert_eq!(svm_decision(&m, &[2.0, -1.0]).unwrap(), before);
    }

    #[test]
    fn platt_on_separated_scores() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..50 {
            let jitter = (i as f64) * 0.01;
            rows.push(vec![2.0 + jitter, -2.0 - jitter]);
            labels.push(0);
            rows.push(vec![-2.0 - jitter, 2.0 + jitter]);
            labels.push(1);
        }
        let scores = Matrix::from_rows(&rows).unwrap();
        let p = platt_scale(&scores, &labels).unwrap();
        assert!(p.a.iter().all(|&a| a < 0.0));
        for (row, &l) in scores.iter_rows().zip(&labels) {
            let probs = p.probabilities(row).unwrap();
            assert!(probs[l] >= 0.99, "{probs:?}");
            assert!(probs.iter().all(|&q| q > 0.0 && q < 1.0));
        }
    }

    #[test]
    fn platt_on_constant_scores_recovers_base_rate() {
        let scores = Matrix::from_rows(&vec![[0.7, 0.7]; 10]).unwrap();
        let labels = [0, 0, 0, 1, 1, 1, 1, 1, 1, 1];
        let p = platt_scale(&scores, &labels).unwrap();
        let probs = p.probabilities(&[0.7, 0.7]).unwrap();
        assert!((probs[0] - 0.3).abs() < 1e-3);
        assert!((probs[1] - 0.7).abs() < 1e-3);
    }

    #[test]
    fn platt_rejects_one_sided_class() {
        let scores = Matrix::from_rows(&[[0.1, 0.2, 0.0], [0.3, -0.1, 0.0]]).unwrap();
        assert!(matches!(
            platt_scale(&scores, &[0, 1]),
            Err(Error::Calibration { class: 2, .. })
        ));
    }
}
