//! Deep GRU network for sequence-to-label classification.
//!
//! ```text
//! r_t = sigm(W_xr x_t + W_hr h_{t-1} + b_r)
//! z_t = sigm(W_xz x_t + W_hz h_{t-1} + b_z)
//! h~_t = tanh(W_xh x_t + W_hh (r_t * h_{t-1}) + b_h)
//! h_t = z_t * h_{t-1} + (1 - z_t) * h~_t
//! o = W_hy drop(h_T^L) + b_y
//! ```
//!
//! Layer `l` consumes the hidden sequence of layer `l - 1`; layer 1 consumes
//! the input sequence. Every layer starts from a zero state. Dropout is
//! inverted dropout on the final top-layer state and is only active in
//! training mode.

use crate::error::{Error, Result};
use crate::numeric::{
    glorot_init, matvec_add, matvec_into, matvec_t_add, outer_add, sigmoid_scalar, tanh_scalar,
    Matrix, SeededRng,
};

#[derive(Debug, Clone, PartialEq)]
pub struct GruLayerParams {
    pub w_xr: Matrix,
    pub w_hr: Matrix,
    pub w_xz: Matrix,
    pub w_hz: Matrix,
    pub w_xh: Matrix,
    pub w_hh: Matrix,
    pub b_r: Vec<f64>,
    pub b_z: Vec<f64>,
    pub b_h: Vec<f64>,
}

impl GruLayerParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w_xr: Matrix::zeros(hidden, input_dim),
            w_hr: Matrix::zeros(hidden, hidden),
            w_xz: Matrix::zeros(hidden, input_dim),
            w_hz: Matrix::zeros(hidden, hidden),
            w_xh: Matrix::zeros(hidden, input_dim),
            w_hh: Matrix::zeros(hidden, hidden),
            b_r: vec![0.0; hidden],
            b_z: vec![0.0; hidden],
            b_h: vec![0.0; hidden],
        }
    }

    fn glorot(input_dim: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        Self {
            w_xr: glorot_init(hidden, input_dim, rng),
            w_hr: glorot_init(hidden, hidden, rng),
            w_xz: glorot_init(hidden, input_dim, rng),
            w_hz: glorot_init(hidden, hidden, rng),
            w_xh: glorot_init(hidden, input_dim, rng),
            w_hh: glorot_init(hidden, hidden, rng),
            b_r: vec![0.0; hidden],
            b_z: vec![0.0; hidden],
            b_h: vec![0.0; hidden],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_xr.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_xr.rows()
    }

    fn check(&self) -> Result<()> {
        let (h, d) = (self.hidden_dim(), self.input_dim());
        let input_ok = [&self.w_xr, &self.w_xz, &self.w_xh]
            .iter()
            .all(|m| m.rows() == h && m.cols() == d);
        let hidden_ok = [&self.w_hr, &self.w_hz, &self.w_hh]
            .iter()
            .all(|m| m.rows() == h && m.cols() == h);
        let bias_ok = [&self.b_r, &self.b_z, &self.b_h].iter().all(|b| b.len() == h);
        if input_ok && hidden_ok && bias_ok {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "GRU layer with hidden {h} and input {d} has inconsistent tensors"
            )))
        }
    }

    /// Tensors in checkpoint order: W_xr, W_hr, b_r, W_xz, W_hz, b_z, W_xh, W_hh, b_h.
    fn tensors(&self) -> [&[f64]; 9] {
        [
            self.w_xr.data(),
            self.w_hr.data(),
            &self.b_r,
            self.w_xz.data(),
            self.w_hz.data(),
            &self.b_z,
            self.w_xh.data(),
            self.w_hh.data(),
            &self.b_h,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 9] {
        [
            self.w_xr.data_mut(),
            self.w_hr.data_mut(),
            &mut self.b_r,
            self.w_xz.data_mut(),
            self.w_hz.data_mut(),
            &mut self.b_z,
            self.w_xh.data_mut(),
            self.w_hh.data_mut(),
            &mut self.b_h,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputParams {
    pub w_hy: Matrix,
    pub b_y: Vec<f64>,
}

/// The full trainable parameter set. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<GruLayerParams>,
    pub output: OutputParams,
}

impl NetworkParams {
    pub fn zeros(input_dim: usize, hidden: usize, num_layers: usize, classes: usize) -> Self {
        let layers = (0..num_layers)
            .map(|l| GruLayerParams::zeros(if l == 0 { input_dim } else { hidden }, hidden))
            .collect();
        Self {
            layers,
            output: OutputParams {
                w_hy: Matrix::zeros(classes, hidden),
                b_y: vec![0.0; classes],
            },
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(
            self.input_dim(),
            self.hidden_dim(),
            self.num_layers(),
            self.num_classes(),
        )
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.output.w_hy.cols()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_classes(&self) -> usize {
        self.output.b_y.len()
    }

    /// Validates the stacking invariants.
    pub fn check(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::shape("network has no layers"));
        }
        let hidden = self.hidden_dim();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.check()?;
            if layer.hidden_dim() != hidden {
                return Err(Error::shape(format!(
                    "layer {} has hidden size {}, expected {hidden}",
                    l + 1,
                    layer.hidden_dim()
                )));
            }
            if l > 0 && layer.input_dim() != hidden {
                return Err(Error::shape(format!(
                    "layer {} takes input {}, but layer {} emits {hidden}",
                    l + 1,
                    layer.input_dim(),
                    l
                )));
            }
        }
        if self.output.w_hy.rows() != self.num_classes() {
            return Err(Error::shape("output weights and bias disagree on class count"));
        }
        Ok(())
    }

    /// All tensors in checkpoint order: every layer bottom-up, then W_hy, b_y.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.layers.iter().flat_map(|l| l.tensors()).collect();
        out.push(self.output.w_hy.data());
        out.push(&self.output.b_y);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self
            .layers
            .iter_mut()
            .flat_map(|l| l.tensors_mut())
            .collect();
        out.push(self.output.w_hy.data_mut());
        out.push(&mut self.output.b_y);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(format!(
                "flat parameter vector has {} entries, network has {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    pub fn sum_squares(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum()
    }

    /// `self += alpha * other`; shapes must match.
    pub fn add_scaled(&mut self, alpha: f64, other: &NetworkParams) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= alpha;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn same_shape(&self, other: &NetworkParams) -> bool {
        self.num_layers() == other.num_layers()
            && self.input_dim() == other.input_dim()
            && self.hidden_dim() == other.hidden_dim()
            && self.num_classes() == other.num_classes()
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_network(
    input_dim: usize,
    hidden: usize,
    num_layers: usize,
    classes: usize,
    rng: &mut SeededRng,
) -> Result<NetworkParams> {
    if input_dim == 0 || hidden == 0 || num_layers == 0 || classes == 0 {
        return Err(Error::Config(format!(
            "network dims must be >= 1 (D={input_dim}, hidden={hidden}, L={num_layers}, C={classes})"
        )));
    }
    let layers = (0..num_layers)
        .map(|l| GruLayerParams::glorot(if l == 0 { input_dim } else { hidden }, hidden, rng))
        .collect();
    Ok(NetworkParams {
        layers,
        output: OutputParams {
            w_hy: glorot_init(classes, hidden, rng),
            b_y: vec![0.0; classes],
        },
    })
}

/// Forward values of one cell at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCellActivations {
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub h_tilde: Vec<f64>,
    pub h: Vec<f64>,
}

fn cell_step(x: &[f64], h_prev: &[f64], p: &GruLayerParams) -> GruCellActivations {
    let n = p.hidden_dim();

    let mut r = p.b_r.clone();
    matvec_add(&p.w_xr, x, &mut r);
    matvec_add(&p.w_hr, h_prev, &mut r);
    r.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));

    let mut z = p.b_z.clone();
    matvec_add(&p.w_xz, x, &mut z);
    matvec_add(&p.w_hz, h_prev, &mut z);
    z.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));

    let gated: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let mut h_tilde = vec![0.0; n];
    matvec_into(&p.w_hh, &gated, &mut h_tilde);
    matvec_add(&p.w_xh, x, &mut h_tilde);
    for (v, b) in h_tilde.iter_mut().zip(&p.b_h) {
        *v = tanh_scalar(*v + b);
    }

    let h = (0..n)
        .map(|i| z[i] * h_prev[i] + (1.0 - z[i]) * h_tilde[i])
        .collect();
    GruCellActivations { r, z, h_tilde, h }
}

/// One GRU step.
pub fn gru_cell_forward(
    x: &[f64],
    h_prev: &[f64],
    p: &GruLayerParams,
) -> Result<GruCellActivations> {
    p.check()?;
    if x.len() != p.input_dim() || h_prev.len() != p.hidden_dim() {
        return Err(Error::shape(format!(
            "cell expects input {} and state {}, got {} and {}",
            p.input_dim(),
            p.hidden_dim(),
            x.len(),
            h_prev.len()
        )));
    }
    Ok(cell_step(x, h_prev, p))
}

/// Inverted-dropout mask: entries are 0 or `1 / (1 - rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub rate: f64,
    pub scale: Vec<f64>,
}

impl DropoutMask {
    pub fn sample(dim: usize, rate: f64, rng: &mut SeededRng) -> Self {
        let keep = 1.0 / (1.0 - rate);
        let scale = (0..dim)
            .map(|_| if rng.bernoulli(rate) { 0.0 } else { keep })
            .collect();
        Self { rate, scale }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            rate: 0.0,
            scale: vec![1.0; dim],
        }
    }
}

pub enum Mode<'a> {
    Infer,
    /// Samples a fresh dropout mask from `rng`.
    Train { dropout: f64, rng: &'a mut SeededRng },
    /// Reuses a given mask, e.g. for gradient checks.
    Replay(&'a DropoutMask),
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Matrix,
    /// `steps[l][t]` holds layer `l` at time `t`.
    pub steps: Vec<Vec<GruCellActivations>>,
    pub mask: Option<DropoutMask>,
    /// Masked top-layer final state, the input of the output projection.
    pub features: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ForwardCache {
    pub fn final_state(&self) -> &[f64] {
        &self.steps.last().expect("at least one layer").last().expect("T >= 1").h
    }
}

/// Runs all layers over a `T x D` sequence and projects the final top state.
pub fn forward_subsequence(
    x: &Matrix,
    params: &NetworkParams,
    mode: Mode<'_>,
) -> Result<(Vec<f64>, ForwardCache)> {
    params.check()?;
    if x.rows() == 0 {
        return Err(Error::Empty("sequence has no time steps".into()));
    }
    if x.cols() != params.input_dim() {
        return Err(Error::shape(format!(
            "sequence width {} does not match network input {}",
            x.cols(),
            params.input_dim()
        )));
    }
    let hidden = params.hidden_dim();
    let t_len = x.rows();

    let mut steps: Vec<Vec<GruCellActivations>> = Vec::with_capacity(params.num_layers());
    for (l, layer) in params.layers.iter().enumerate() {
        let mut acts: Vec<GruCellActivations> = Vec::with_capacity(t_len);
        let zero = vec![0.0; hidden];
        for t in 0..t_len {
            let input = if l == 0 { x.row(t) } else { &steps[l - 1][t].h };
            let h_prev: &[f64] = if t == 0 { &zero } else { &acts[t - 1].h };
            let a = cell_step(input, h_prev, layer);
            acts.push(a);
        }
        steps.push(acts);
    }

    let top = &steps.last().unwrap().last().unwrap().h;
    let mask = match mode {
        Mode::Infer => None,
        Mode::Train { dropout, rng } => {
            if dropout > 0.0 {
                Some(DropoutMask::sample(hidden, dropout, rng))
            } else {
                None
            }
        }
        Mode::Replay(m) => {
            if m.scale.len() != hidden {
                return Err(Error::shape(format!(
                    "dropout mask has {} entries, hidden size is {hidden}",
                    m.scale.len()
                )));
            }
            Some(m.clone())
        }
    };
    let features: Vec<f64> = match &mask {
        Some(m) => top.iter().zip(&m.scale).map(|(h, s)| h * s).collect(),
        None => top.clone(),
    };
    let mut logits = params.output.b_y.clone();
    matvec_add(&params.output.w_hy, &features, &mut logits);

    let cache = ForwardCache {
        input: x.clone(),
        steps,
        mask,
        features,
        logits: logits.clone(),
    };
    Ok((logits, cache))
}

/// Adds the gradient of `o · grad_o` into `grads` (no regularizer).
pub fn backward_accumulate(
    cache: &ForwardCache,
    grad_o: &[f64],
    params: &NetworkParams,
    grads: &mut NetworkParams,
) -> Result<()> {
    if !params.same_shape(grads) {
        return Err(Error::Consistency("gradient container shape differs from parameters".into()));
    }
    let hidden = params.hidden_dim();
    if cache.steps.len() != params.num_layers()
        || cache.input.cols() != params.input_dim()
        || cache.features.len() != hidden
        || cache.steps.iter().any(|s| s.len() != cache.input.rows())
        || cache.steps[0].first().map_or(true, |a| a.h.len() != hidden)
    {
        return Err(Error::Consistency(
            "forward cache was produced by a differently shaped network".into(),
        ));
    }
    if grad_o.len() != params.num_classes() {
        return Err(Error::shape(format!(
            "output gradient has {} entries, network has {} classes",
            grad_o.len(),
            params.num_classes()
        )));
    }

    let t_len = cache.input.rows();
    let num_layers = params.num_layers();

    outer_add(&mut grads.output.w_hy, grad_o, &cache.features);
    for (g, d) in grads.output.b_y.iter_mut().zip(grad_o) {
        *g += d;
    }
    let mut d_top = vec![0.0; hidden];
    matvec_t_add(&params.output.w_hy, grad_o, &mut d_top);
    if let Some(m) = &cache.mask {
        for (d, s) in d_top.iter_mut().zip(&m.scale) {
            *d *= s;
        }
    }

    // Gradient flowing into each layer's hidden output at each step, from above.
    let mut d_from_above: Vec<Vec<f64>> = vec![vec![0.0; hidden]; t_len];
    d_from_above[t_len - 1] = d_top;

    let zero = vec![0.0; hidden];
    let mut da_r = vec![0.0; hidden];
    let mut da_z = vec![0.0; hidden];
    let mut da_h = vec![0.0; hidden];
    let mut d_gated = vec![0.0; hidden];
    let mut gated = vec![0.0; hidden];

    for l in (0..num_layers).rev() {
        let p = &params.layers[l];
        let g = &mut grads.layers[l];
        let in_dim = p.input_dim();
        let acts = &cache.steps[l];
        let mut d_input: Vec<Vec<f64>> = if l > 0 {
            vec![vec![0.0; in_dim]; t_len]
        } else {
            Vec::new()
        };
        let mut d_carry = vec![0.0; hidden];

        for t in (0..t_len).rev() {
            let a = &acts[t];
            let h_prev: &[f64] = if t == 0 { &zero } else { &acts[t - 1].h };
            let x: &[f64] = if l == 0 {
                cache.input.row(t)
            } else {
                &cache.steps[l - 1][t].h
            };

            let mut d_prev = vec![0.0; hidden];
            for i in 0..hidden {
                let dh = d_from_above[t][i] + d_carry[i];
                let (z, ht, hp) = (a.z[i], a.h_tilde[i], h_prev[i]);
                da_z[i] = dh * (hp - ht) * z * (1.0 - z);
                da_h[i] = dh * (1.0 - z) * (1.0 - ht * ht);
                d_prev[i] = dh * z;
                gated[i] = a.r[i] * hp;
            }

            outer_add(&mut g.w_xh, &da_h, x);
            outer_add(&mut g.w_hh, &da_h, &gated);
            d_gated.iter_mut().for_each(|v| *v = 0.0);
            matvec_t_add(&p.w_hh, &da_h, &mut d_gated);
            for i in 0..hidden {
                let r = a.r[i];
                da_r[i] = d_gated[i] * h_prev[i] * r * (1.0 - r);
                d_prev[i] += d_gated[i] * r;
            }

            outer_add(&mut g.w_xz, &da_z, x);
            outer_add(&mut g.w_xr, &da_r, x);
            if t > 0 {
                outer_add(&mut g.w_hz, &da_z, h_prev);
                outer_add(&mut g.w_hr, &da_r, h_prev);
            }
            for i in 0..hidden {
                g.b_r[i] += da_r[i];
                g.b_z[i] += da_z[i];
                g.b_h[i] += da_h[i];
            }
            matvec_t_add(&p.w_hz, &da_z, &mut d_prev);
            matvec_t_add(&p.w_hr, &da_r, &mut d_prev);

            if l > 0 {
                let dx = &mut d_input[t];
                matvec_t_add(&p.w_xr, &da_r, dx);
                matvec_t_add(&p.w_xz, &da_z, dx);
                matvec_t_add(&p.w_xh, &da_h, dx);
            }
            d_carry = d_prev;
        }
        if l > 0 {
            d_from_above = d_input;
        }
    }
    Ok(())
}

/// Gradient of `o · grad_o + (lambda / 2) ||theta||^2` with respect to every parameter.
pub fn backward_subsequence(
    cache: &ForwardCache,
    grad_o: &[f64],
    params: &NetworkParams,
    lambda: f64,
) -> Result<NetworkParams> {
    let mut grads = params.zeros_like();
    backward_accumulate(cache, grad_o, params, &mut grads)?;
    if lambda != 0.0 {
        grads.add_scaled(lambda, params);
    }
    Ok(grads)
}
