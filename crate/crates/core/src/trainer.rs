//! Mini-batch training of the GRU network: cross-entropy with an L2 penalty
//! on every parameter, inverted dropout, and Adam.

use std::borrow::Borrow;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::gru::{backward_accumulate, forward_subsequence, init_network, Mode, NetworkParams};
use crate::numeric::{softmax, Matrix, SeededRng};

/// Lower clamp applied to probabilities inside the log.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub layers: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub l2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden: 256,
            learning_rate: 1e-4,
            dropout_rate: 0.1,
            l2: 1e-3,
            epochs: 100,
            batch_size: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.layers == 0 || self.hidden == 0 {
            return bad(format!("layers ({}) and hidden ({}) must be >= 1", self.layers, self.hidden));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate));
        }
        if !(self.l2 >= 0.0) {
            return bad(format!("l2 must be >= 0, got {}", self.l2));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        Ok(())
    }
}

/// One training example: a subsequence and the label of the sequence it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSubsequence {
    pub x: Matrix,
    pub label: usize,
    pub parent_id: usize,
    pub stream_id: usize,
}

impl LabeledSubsequence {
    pub fn one_hot(&self, classes: usize) -> Vec<f64> {
        let mut y = vec![0.0; classes];
        y[self.label] = 1.0;
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn apply<'a, I>(&mut self, chunks: I, lr: f64)
    where
        I: IntoIterator<Item = (&'a mut [f64], &'a [f64])>,
    {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut offset = 0;
        for (theta, grad) in chunks {
            let m = &mut self.m[offset..offset + theta.len()];
            let v = &mut self.v[offset..offset + theta.len()];
            for i in 0..theta.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            offset += theta.len();
        }
    }
}

/// One Adam update on a flat parameter slice.
pub fn adam_step(theta: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if theta.len() != grad.len() || state.m.len() != theta.len() {
        return Err(Error::shape(format!(
            "adam: theta {}, grad {}, state {}",
            theta.len(),
            grad.len(),
            state.m.len()
        )));
    }
    state.apply([(theta, grad)], lr);
    Ok(())
}

/// Adam update applied tensor by tensor to a network.
pub fn adam_step_network(
    params: &mut NetworkParams,
    grads: &NetworkParams,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if state.m.len() != params.param_count() || grads.param_count() != params.param_count() {
        return Err(Error::shape("adam state, gradient and parameters differ in size"));
    }
    let g = grads.tensors();
    state.apply(params.tensors_mut().into_iter().zip(g), lr);
    Ok(())
}

fn check_batch<B: Borrow<LabeledSubsequence>>(batch: &[B], params: &NetworkParams) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Empty("batch has no examples".into()));
    }
    for (i, ex) in batch.iter().enumerate() {
        let ex = ex.borrow();
        if ex.x.cols() != params.input_dim() {
            return Err(Error::shape(format!(
                "example {i} has width {}, network expects {}",
                ex.x.cols(),
                params.input_dim()
            )));
        }
        if ex.label >= params.num_classes() {
            return Err(Error::Data(format!(
                "example {i} has label {} but the network has {} classes",
                ex.label,
                params.num_classes()
            )));
        }
    }
    Ok(())
}

/// Mean cross-entropy plus `(lambda / 2) ||theta||^2`, evaluated without dropout.
pub fn loss(batch: &[LabeledSubsequence], params: &NetworkParams, lambda: f64) -> Result<f64> {
    check_batch(batch, params)?;
    let mut ce = 0.0;
    for ex in batch {
        let (o, _) = forward_subsequence(&ex.x, params, Mode::Infer)?;
        ce -= softmax(&o)[ex.label].max(LOG_FLOOR).ln();
    }
    Ok(ce / batch.len() as f64 + 0.5 * lambda * params.sum_squares())
}

/// Loss and its gradient on one batch. With `dropout > 0` masks are drawn
/// from `rng` in batch order.
pub fn loss_and_grad<B: Borrow<LabeledSubsequence>>(
    batch: &[B],
    params: &NetworkParams,
    lambda: f64,
    dropout: f64,
    rng: &mut SeededRng,
    grads: &mut NetworkParams,
) -> Result<f64> {
    check_batch(batch, params)?;
    grads.scale(0.0);
    let mut ce = 0.0;
    for ex in batch {
        let ex = ex.borrow();
        let mode = if dropout > 0.0 {
            Mode::Train { dropout, rng: &mut *rng }
        } else {
            Mode::Infer
        };
        let (o, cache) = forward_subsequence(&ex.x, params, mode)?;
        let mut grad_o = softmax(&o);
        ce -= grad_o[ex.label].max(LOG_FLOOR).ln();
        grad_o[ex.label] -= 1.0;
        backward_accumulate(&cache, &grad_o, params, grads)?;
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    if lambda != 0.0 {
        grads.add_scaled(lambda, params);
    }
    Ok(ce / n + 0.5 * lambda * params.sum_squares())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_secs: f64,
}

impl EpochStats {
    /// `epoch<TAB>mean_loss<TAB>wall_time`
    pub fn log_line(&self) -> String {
        format!("{}\t{:.8}\t{:.3}", self.epoch, self.mean_loss, self.wall_secs)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub history: Vec<EpochStats>,
}

pub fn train(
    dataset: &[LabeledSubsequence],
    classes: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_log(dataset, classes, cfg, |_| {})
}

/// Trains from a fresh initialization; `on_epoch` sees every epoch's stats.
pub fn train_with_log<F>(
    dataset: &[LabeledSubsequence],
    classes: usize,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochStats),
{
    cfg.validate()?;
    let first = dataset
        .first()
        .ok_or_else(|| Error::Empty("training set has no examples".into()))?;
    let input_dim = first.x.cols();
    let mut rng = SeededRng::new(cfg.seed);
    let mut params = init_network(input_dim, cfg.hidden, cfg.layers, classes, &mut rng)?;
    check_batch(dataset, &params)?;

    let mut adam = AdamState::new(params.param_count());
    let mut grads = params.zeros_like();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut batch: Vec<&LabeledSubsequence> = Vec::with_capacity(cfg.batch_size);
    let mut history = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| &dataset[i]));
            let batch_loss =
                loss_and_grad(&batch, &params, cfg.l2, cfg.dropout_rate, &mut rng, &mut grads)?;
            total += batch_loss * chunk.len() as f64;
            adam_step_network(&mut params, &grads, &mut adam, cfg.learning_rate)?;
        }
        if !params.is_finite() {
            return Err(Error::Numeric(format!("parameters diverged in epoch {}", epoch + 1)));
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            mean_loss: total / dataset.len() as f64,
            wall_secs: start.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(TrainOutcome { params, history })
}

/// Pre-softmax outputs, one row per example.
pub fn extract_outputs(params: &NetworkParams, dataset: &[LabeledSubsequence]) -> Result<Matrix> {
    let mut data = Vec::with_capacity(dataset.len() * params.num_classes());
    for ex in dataset {
        let (o, _) = forward_subsequence(&ex.x, params, Mode::Infer)?;
        data.extend(o);
    }
    Matrix::from_vec(dataset.len(), params.num_classes(), data)
}

/// Softmax class probabilities of one subsequence.
pub fn predict_proba(params: &NetworkParams, x: &Matrix) -> Result<Vec<f64>> {
    let (o, _) = forward_subsequence(x, params, Mode::Infer)?;
    Ok(softmax(&o))
}

/// Analytic and central-difference gradients of [`loss`] at `params`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheck {
    /// Per-coordinate `|a - n| / max(|a|, |n|, floor)`.
    pub fn relative_errors(&self, floor: f64) -> Vec<f64> {
        self.analytic
            .iter()
            .zip(&self.numeric)
            .map(|(a, n)| {
                let d = (a - n).abs();
                if d == 0.0 {
                    0.0
                } else {
                    d / a.abs().max(n.abs()).max(floor)
                }
            })
            .collect()
    }

    /// Largest relative error and its coordinate.
    pub fn worst(&self, floor: f64) -> (usize, f64) {
        self.relative_errors(floor)
            .into_iter()
            .enumerate()
            .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best })
    }
}

pub fn gradient_check(
    batch: &[LabeledSubsequence],
    params: &NetworkParams,
    lambda: f64,
    eps: f64,
) -> Result<GradCheck> {
    let mut grads = params.zeros_like();
    let mut rng = SeededRng::new(0);
    loss_and_grad(batch, params, lambda, 0.0, &mut rng, &mut grads)?;
    let mut probe = params.clone();
    let mut failure = None;
    let numeric = crate::numeric::finite_diff_grad(
        |theta| {
            let r = probe.load_flat(theta).and_then(|_| loss(batch, &probe, lambda));
            r.unwrap_or_else(|e| {
                failure.get_or_insert(e);
                f64::NAN
            })
        },
        &params.flatten(),
        eps,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(GradCheck {
        analytic: grads.flatten(),
        numeric: numeric?,
    })
}
