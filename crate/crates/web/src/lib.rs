//! Browser bindings: sequence voting, subsequence layout and segment feature
//! maps of synthetic scenes. The `*_impl` functions are the native entry points.

use wasm_bindgen::prelude::*;

use lte_gru::audio::segment_features;
use lte_gru::codec::{NoiseCondition, SeqKind};
use lte_gru::numeric::{Matrix, SeededRng};
use lte_gru::pipeline::{aggregate_multi, LastRule, SubsequencePlan, VotingScheme};
use lte_gru::synth::{audio_recipe, synth_audio_clip};

#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct Vote {
    likelihood: Vec<f64>,
    decision: usize,
}

#[wasm_bindgen]
impl Vote {
    #[wasm_bindgen(getter)]
    pub fn likelihood(&self) -> Vec<f64> {
        self.likelihood.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn decision(&self) -> usize {
        self.decision
    }
}

/// `weights` holds `subsequences x streams x classes` non-negative scores;
/// each row is normalized to a distribution before voting.
pub fn vote_impl(weights: &[f64], subsequences: usize, streams: usize, classes: usize, scheme: &str) -> Result<Vote, String> {
    let scheme: VotingScheme = scheme.parse().map_err(|e: lte_gru::Error| e.to_string())?;
    if subsequences * streams * classes != weights.len() || weights.is_empty() {
        return Err(format!(
            "{} scores do not fill {subsequences} x {streams} x {classes}",
            weights.len()
        ));
    }
    let mut grid = Vec::with_capacity(subsequences);
    for m in weights.chunks(streams * classes) {
        let mut rows = Vec::with_capacity(streams);
        for row in m.chunks(classes) {
            if row.iter().any(|v| !(*v >= 0.0)) {
                return Err("scores must be non-negative numbers".into());
            }
            let total: f64 = row.iter().sum();
            if total <= 0.0 {
                return Err("every row needs a positive score".into());
            }
            rows.push(row.iter().map(|v| v / total).collect::<Vec<f64>>());
        }
        grid.push(rows);
    }
    let agg = aggregate_multi(&grid, scheme).map_err(|e| e.to_string())?;
    Ok(Vote {
        likelihood: agg.likelihood,
        decision: agg.decision,
    })
}

#[wasm_bindgen]
pub fn vote(weights: &[f64], subsequences: usize, streams: usize, classes: usize, scheme: &str) -> Result<Vote, JsError> {
    vote_impl(weights, subsequences, streams, classes, scheme).map_err(|e| JsError::new(&e))
}

/// Flat `[start, length, start, length, ...]` of the windows over `steps` segments.
pub fn windows_impl(steps: usize, len: usize, overlap: f64, short_tail: bool) -> Result<Vec<u32>, String> {
    let plan = SubsequencePlan {
        len,
        overlap,
        last_rule: if short_tail { LastRule::ShortTail } else { LastRule::TailWindow },
    };
    let w = plan.windows(steps).map_err(|e| e.to_string())?;
    Ok(w.into_iter().flat_map(|(s, l)| [s as u32, l as u32]).collect())
}

#[wasm_bindgen]
pub fn windows(steps: usize, len: usize, overlap: f64, short_tail: bool) -> Result<Vec<u32>, JsError> {
    windows_impl(steps, len, overlap, short_tail).map_err(|e| JsError::new(&e))
}

/// Segment-by-feature map; `values` are scaled per column to [0, 1] for display.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

#[wasm_bindgen]
impl FeatureMap {
    #[wasm_bindgen(getter)]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[wasm_bindgen(getter)]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f32> {
        self.values.clone()
    }
}

fn column_scaled(m: &Matrix) -> Vec<f32> {
    let (r, c) = (m.rows(), m.cols());
    let mut out = vec![0.0f32; r * c];
    for j in 0..c {
        let (lo, hi) = (0..r)
            .map(|i| m.get(i, j))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        for i in 0..r {
            out[i * c + j] = ((m.get(i, j) - lo) / span) as f32;
        }
    }
    out
}

/// Features of a synthetic clip of scene `class` out of `classes`.
pub fn scene_features_impl(class: usize, classes: usize, secs: usize, seed: u64, kind: &str, denoise: bool) -> Result<FeatureMap, String> {
    if classes < 2 || class >= classes {
        return Err(format!("class {class} is outside 0..{classes} (need at least 2 classes)"));
    }
    if !(2..=30).contains(&secs) {
        return Err(format!("clip length must be 2 to 30 s, got {secs}"));
    }
    let kind = match kind {
        "gam" => SeqKind::Gam,
        "mfcc" => SeqKind::Mfcc,
        "log" => SeqKind::Log,
        other => return Err(format!("unknown feature kind {other:?}")),
    };
    let mut rng = SeededRng::new(seed);
    let clip = synth_audio_clip(&audio_recipe(class, classes), secs, &mut rng);
    let noise = if denoise { NoiseCondition::Denoised } else { NoiseCondition::Raw };
    let m = segment_features(&clip, kind, noise).map_err(|e| e.to_string())?;
    Ok(FeatureMap {
        rows: m.rows(),
        cols: m.cols(),
        values: column_scaled(&m),
    })
}

#[wasm_bindgen]
pub fn scene_features(class: usize, classes: usize, secs: usize, seed: u64, kind: &str, denoise: bool) -> Result<FeatureMap, JsError> {
    scene_features_impl(class, classes, secs, seed, kind, denoise).map_err(|e| JsError::new(&e))
}
