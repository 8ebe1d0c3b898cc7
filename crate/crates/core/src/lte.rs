//! Label tree embedding: a binary tree over the classes whose internal nodes
//! carry logistic left/right posteriors, mapping a segment vector to the
//! concatenation of every node's `(p_left, 1 - p_left)` pair.

use std::io::{Read, Write};

use crate::codec::{
    expect_magic, expect_version, get_f64s, get_u32, get_u8, put_f64s, put_len, put_u32, put_u8,
    NoiseCondition, SeqKind,
};
use crate::error::{Error, Result};
use crate::numeric::{dot, sigmoid_scalar, Matrix, SeededRng};

pub const KMEANS_RESTARTS: usize = 20;
pub const LOGISTIC_ITERS: usize = 500;
pub const LOGISTIC_STEP: f64 = 0.1;
pub const LOGISTIC_L2: f64 = 1.0;

pub const TREE_MAGIC: &[u8; 8] = b"LTETREE\0";
pub const TREE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub classes: Vec<usize>,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    /// Logistic model for `P(left | x)` on standardized inputs.
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelTree {
    pub kind: SeqKind,
    pub noise: NoiseCondition,
    pub classes: usize,
    /// Per-column shift and scale applied before every node model.
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Internal nodes in pre-order.
    pub nodes: Vec<TreeNode>,
}

impl LabelTree {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.nodes.len()
    }

    /// Checks the topology: `C - 1` nodes, partitioned subsets, root covers
    /// all classes and every class ends in exactly one leaf.
    pub fn check(&self) -> Result<()> {
        let d = self.input_dim();
        if self.scale.len() != d {
            return Err(Error::shape(format!("{} means but {} scales", d, self.scale.len())));
        }
        if self.classes < 2 || self.nodes.len() != self.classes - 1 {
            return Err(Error::Consistency(format!(
                "{} internal nodes for {} classes",
                self.nodes.len(),
                self.classes
            )));
        }
        let mut leaves = vec![0usize; self.classes];
        let mut pos = 0;
        self.check_subtree(&(0..self.classes).collect::<Vec<_>>(), &mut pos, &mut leaves)?;
        if pos != self.nodes.len() {
            return Err(Error::Consistency("nodes left over after pre-order traversal".into()));
        }
        if leaves.iter().any(|&n| n != 1) {
            return Err(Error::Consistency(format!("leaf multiplicities {leaves:?}")));
        }
        Ok(())
    }

    fn check_subtree(&self, expected: &[usize], pos: &mut usize, leaves: &mut [usize]) -> Result<()> {
        if expected.len() == 1 {
            leaves[expected[0]] += 1;
            return Ok(());
        }
        let node = self
            .nodes
            .get(*pos)
            .ok_or_else(|| Error::Consistency("pre-order traversal ran out of nodes".into()))?;
        *pos += 1;
        let mut joined: Vec<usize> = node.left.iter().chain(&node.right).copied().collect();
        joined.sort_unstable();
        let mut own = node.classes.clone();
        own.sort_unstable();
        if node.left.is_empty() || node.right.is_empty() || joined != own || own != expected {
            return Err(Error::Consistency(format!(
                "node {} does not partition {:?}",
                *pos - 1,
                expected
            )));
        }
        if node.weights.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "node {} has {} weights for {} inputs",
                *pos - 1,
                node.weights.len(),
                self.input_dim()
            )));
        }
        let (l, r) = (node.left.clone(), node.right.clone());
        self.check_subtree(&l, pos, leaves)?;
        self.check_subtree(&r, pos, leaves)
    }

    fn standardize(&self, x: &[f64], out: &mut [f64]) {
        for ((o, v), (m, s)) in out.iter_mut().zip(x).zip(self.mean.iter().zip(&self.scale)) {
            *o = (v - m) * s;
        }
    }
}

fn logistic_fit(xs: &[&[f64]], ys: &[f64], d: usize) -> (Vec<f64>, f64) {
    let n = xs.len() as f64;
    let reg = LOGISTIC_L2 / n;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut gw = vec![0.0; d];
    for _ in 0..LOGISTIC_ITERS {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let err = sigmoid_scalar(dot(&w, x) + b) - y;
            for (g, xi) in gw.iter_mut().zip(x.iter()) {
                *g += err * xi;
            }
            gb += err;
        }
        for (wj, g) in w.iter_mut().zip(&gw) {
            *wj -= LOGISTIC_STEP * (g / n + reg * *wj);
        }
        b -= LOGISTIC_STEP * gb / n;
    }
    (w, b)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Splits `subset` in two by 2-means over the class means. Falls back to an
/// index-order halving when every restart collapses to one cluster.
fn two_means(subset: &[usize], means: &[Vec<f64>], rng: &mut SeededRng) -> (Vec<usize>, Vec<usize>) {
    let k = subset.len();
    if k == 2 {
        return (vec![subset[0]], vec![subset[1]]);
    }
    let mut best: Option<(f64, Vec<bool>)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let a = rng.below(k);
        let mut b = rng.below(k - 1);
        if b >= a {
            b += 1;
        }
        let mut centers = [means[subset[a]].clone(), means[subset[b]].clone()];
        let mut assign = vec![false; k];
        for _ in 0..100 {
            let next: Vec<bool> = subset
                .iter()
                .map(|&c| sq_dist(&means[c], &centers[1]) < sq_dist(&means[c], &centers[0]))
                .collect();
            let changed = next != assign;
            assign = next;
            for (side, center) in centers.iter_mut().enumerate() {
                let members: Vec<usize> = subset
                    .iter()
                    .zip(&assign)
                    .filter(|(_, &s)| s == (side == 1))
                    .map(|(&c, _)| c)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                center.iter_mut().for_each(|v| *v = 0.0);
                for &c in &members {
                    for (v, m) in center.iter_mut().zip(&means[c]) {
                        *v += m / members.len() as f64;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let ones = assign.iter().filter(|&&s| s).count();
        if ones == 0 || ones == k {
            continue;
        }
        let sse: f64 = subset
            .iter()
            .zip(&assign)
            .map(|(&c, &s)| sq_dist(&means[c], &centers[s as usize]))
            .sum();
        if best.as_ref().map_or(true, |(b, _)| sse < *b) {
            best = Some((sse, assign));
        }
    }
    match best {
        Some((_, assign)) => {
            let (mut l, mut r): (Vec<usize>, Vec<usize>) = (Vec::new(), Vec::new());
            for (&c, &s) in subset.iter().zip(&assign) {
                if s { r.push(c) } else { l.push(c) }
            }
            // the side holding the smallest class index goes left
            if r.first() < l.first() {
                std::mem::swap(&mut l, &mut r);
            }
            (l, r)
        }
        None => {
            let half = k / 2;
            (subset[..half].to_vec(), subset[half..].to_vec())
        }
    }
}

struct Builder<'a> {
    rows: Vec<Vec<f64>>,
    labels: &'a [usize],
    means: Vec<Vec<f64>>,
    rng: SeededRng,
    nodes: Vec<TreeNode>,
}

impl Builder<'_> {
    fn grow(&mut self, subset: Vec<usize>) {
        if subset.len() < 2 {
            return;
        }
        let (left, right) = two_means(&subset, &self.means, &mut self.rng);
        let mut in_left = vec![None; self.means.len()];
        left.iter().for_each(|&c| in_left[c] = Some(true));
        right.iter().for_each(|&c| in_left[c] = Some(false));
        let (xs, ys): (Vec<&[f64]>, Vec<f64>) = self
            .rows
            .iter()
            .zip(self.labels)
            .filter_map(|(x, &l)| in_left[l].map(|s| (x.as_slice(), if s { 1.0 } else { 0.0 })))
            .unzip();
        let d = self.means[0].len();
        let (weights, bias) = logistic_fit(&xs, &ys, d);
        self.nodes.push(TreeNode {
            classes: subset,
            left: left.clone(),
            right: right.clone(),
            weights,
            bias,
        });
        self.grow(left);
        self.grow(right);
    }
}

/// Builds the tree from labeled training segments (`N x D`, one label each).
/// Inputs are standardized per column and scaled by `1/sqrt(D)`.
pub fn build_label_tree(
    segments: &Matrix,
    labels: &[usize],
    classes: usize,
    kind: SeqKind,
    noise: NoiseCondition,
    seed: u64,
) -> Result<LabelTree> {
    if segments.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{} segments but {} labels",
            segments.rows(),
            labels.len()
        )));
    }
    if classes < 2 {
        return Err(Error::Data(format!("a label tree needs at least 2 classes, got {classes}")));
    }
    if segments.cols() == 0 {
        return Err(Error::Empty("segments have no features".into()));
    }
    if !segments.is_finite() {
        return Err(Error::Numeric("segment features contain non-finite values".into()));
    }
    let mut counts = vec![0usize; classes];
    for &l in labels {
        *counts.get_mut(l).ok_or_else(|| Error::Data(format!("label {l} out of range for {classes} classes")))? += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Data(format!("class {c} has no training segments")));
    }

    let d = segments.cols();
    let n = segments.rows() as f64;
    let mut mean = vec![0.0; d];
    for r in segments.iter_rows() {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
    }
    let mut var = vec![0.0; d];
    for r in segments.iter_rows() {
        var.iter_mut().zip(r.iter().zip(&mean)).for_each(|(s, (v, m))| *s += (v - m).powi(2) / n);
    }
    let norm = 1.0 / (d as f64).sqrt();
    let scale: Vec<f64> = var
        .iter()
        .map(|&v| if v.sqrt() > 1e-12 { norm / v.sqrt() } else { norm })
        .collect();

    let mut tree = LabelTree {
        kind,
        noise,
        classes,
        mean,
        scale,
        nodes: Vec::with_capacity(classes - 1),
    };
    let rows: Vec<Vec<f64>> = segments
        .iter_rows()
        .map(|r| {
            let mut z = vec![0.0; d];
            tree.standardize(r, &mut z);
            z
        })
        .collect();
    let mut means = vec![vec![0.0; d]; classes];
    for (r, &l) in rows.iter().zip(labels) {
        means[l].iter_mut().zip(r).for_each(|(m, v)| *m += v / counts[l] as f64);
    }

    let mut b = Builder {
        rows,
        labels,
        means,
        rng: SeededRng::new(seed),
        nodes: Vec::with_capacity(classes - 1),
    };
    b.grow((0..classes).collect());
    tree.nodes = b.nodes;
    Ok(tree)
}

/// `(p_left, 1 - p_left)` for every internal node in pre-order.
pub fn lte_transform(tree: &LabelTree, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != tree.input_dim() {
        return Err(Error::shape(format!(
            "tree expects {} features, got {}",
            tree.input_dim(),
            x.len()
        )));
    }
    let mut z = vec![0.0; x.len()];
    tree.standardize(x, &mut z);
    let mut out = Vec::with_capacity(tree.output_dim());
    for node in &tree.nodes {
        let p = sigmoid_scalar(dot(&node.weights, &z) + node.bias);
        out.push(p);
        out.push(1.0 - p);
    }
    Ok(out)
}

pub fn lte_transform_seq(tree: &LabelTree, seq: &Matrix) -> Result<Matrix> {
    let rows = seq
        .iter_rows()
        .map(|r| lte_transform(tree, r))
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, tree.output_dim()));
    }
    Matrix::from_rows(&rows)
}

/// Raw-condition embedding followed by the denoised-condition embedding.
pub fn dual_channel_lte(
    kind: SeqKind,
    raw: &Matrix,
    denoised: &Matrix,
    raw_tree: &LabelTree,
    denoised_tree: &LabelTree,
) -> Result<Matrix> {
    for (tree, want) in [(raw_tree, NoiseCondition::Raw), (denoised_tree, NoiseCondition::Denoised)] {
        if tree.kind != kind || tree.noise != want {
            return Err(Error::Config(format!(
                "tree trained on {:?}/{:?} used for {kind:?}/{want:?}",
                tree.kind, tree.noise
            )));
        }
    }
    if raw.rows() != denoised.rows() {
        return Err(Error::shape(format!(
            "raw has {} segments, denoised has {}",
            raw.rows(),
            denoised.rows()
        )));
    }
    let a = lte_transform_seq(raw_tree, raw)?;
    let b = lte_transform_seq(denoised_tree, denoised)?;
    concat_columns(&[&a, &b])
}

fn concat_columns(parts: &[&Matrix]) -> Result<Matrix> {
    let t = parts.first().map_or(0, |m| m.rows());
    if let Some(bad) = parts.iter().find(|m| m.rows() != t) {
        return Err(Error::shape(format!("sequence lengths {} and {} differ", t, bad.rows())));
    }
    let width: usize = parts.iter().map(|m| m.cols()).sum();
    let mut out = Matrix::zeros(t, width);
    for i in 0..t {
        let row = out.row_mut(i);
        let mut at = 0;
        for m in parts {
            row[at..at + m.cols()].copy_from_slice(m.row(i));
            at += m.cols();
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LteSequence {
    pub stream: SeqKind,
    pub data: Matrix,
}

fn fusion_rank(kind: SeqKind) -> Option<usize> {
    match kind {
        SeqKind::LteGam => Some(0),
        SeqKind::LteMfcc => Some(1),
        SeqKind::LteLog => Some(2),
        _ => None,
    }
}

/// Row-wise concatenation in Gam, MFCC, Log order.
pub fn fuse_streams(seqs: &[LteSequence]) -> Result<LteSequence> {
    match seqs {
        [] => Err(Error::Empty("no streams to fuse".into())),
        [one] => Ok(one.clone()),
        _ => {
            let mut ranked = Vec::with_capacity(seqs.len());
            for s in seqs {
                let r = fusion_rank(s.stream)
                    .ok_or_else(|| Error::Config(format!("{:?} cannot be fused", s.stream)))?;
                ranked.push((r, s));
            }
            ranked.sort_by_key(|(r, _)| *r);
            if ranked.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::Config("the same stream was given twice".into()));
            }
            let parts: Vec<&Matrix> = ranked.iter().map(|(_, s)| &s.data).collect();
            Ok(LteSequence {
                stream: SeqKind::LteFused,
                data: concat_columns(&parts)?,
            })
        }
    }
}

const TREE: &str = "label tree";

fn put_indices<W: Write>(w: &mut W, v: &[usize]) -> Result<()> {
    put_len(w, v.len(), TREE)?;
    for &i in v {
        put_len(w, i, TREE)?;
    }
    Ok(())
}

fn get_indices<R: Read>(r: &mut R, limit: usize) -> Result<Vec<usize>> {
    let n = get_u32(r, TREE)? as usize;
    if n > limit {
        return Err(Error::format(TREE, format!("subset of {n} exceeds {limit} classes")));
    }
    (0..n).map(|_| get_u32(r, TREE).map(|v| v as usize)).collect()
}

pub fn write_tree<W: Write>(w: &mut W, tree: &LabelTree) -> Result<()> {
    tree.check()?;
    w.write_all(TREE_MAGIC)?;
    put_u32(w, TREE_VERSION)?;
    put_u8(w, tree.kind.code())?;
    put_u8(w, tree.noise.code())?;
    put_len(w, tree.classes, TREE)?;
    put_len(w, tree.input_dim(), TREE)?;
    put_f64s(w, &tree.mean)?;
    put_f64s(w, &tree.scale)?;
    for node in &tree.nodes {
        put_indices(w, &node.classes)?;
        put_indices(w, &node.left)?;
        put_indices(w, &node.right)?;
        put_f64s(w, &node.weights)?;
        put_f64s(w, &[node.bias])?;
    }
    Ok(())
}

pub fn read_tree<R: Read>(r: &mut R) -> Result<LabelTree> {
    expect_magic(r, TREE_MAGIC, TREE)?;
    expect_version(r, TREE_VERSION, TREE)?;
    let kc = get_u8(r, TREE)?;
    let kind = SeqKind::from_code(kc).ok_or_else(|| Error::format(TREE, format!("unknown kind code {kc}")))?;
    let nc = get_u8(r, TREE)?;
    let noise = NoiseCondition::from_code(nc).ok_or_else(|| Error::format(TREE, format!("unknown noise code {nc}")))?;
    let classes = get_u32(r, TREE)? as usize;
    let d = get_u32(r, TREE)? as usize;
    if classes < 2 {
        return Err(Error::format(TREE, format!("{classes} classes")));
    }
    let mut mean = vec![0.0; d];
    let mut scale = vec![0.0; d];
    get_f64s(r, &mut mean, TREE)?;
    get_f64s(r, &mut scale, TREE)?;
    let mut nodes = Vec::with_capacity(classes - 1);
    for _ in 0..classes - 1 {
        let cls = get_indices(r, classes)?;
        let left = get_indices(r, classes)?;
        let right = get_indices(r, classes)?;
        let mut weights = vec![0.0; d];
        get_f64s(r, &mut weights, TREE)?;
        let mut bias = [0.0];
        get_f64s(r, &mut bias, TREE)?;
        nodes.push(TreeNode {
            classes: cls,
            left,
            right,
            weights,
            bias: bias[0],
        });
    }
    let tree = LabelTree {
        kind,
        noise,
        classes,
        mean,
        scale,
        nodes,
    };
    tree.check().map_err(|e| Error::format(TREE, e.to_string()))?;
    Ok(tree)
}
