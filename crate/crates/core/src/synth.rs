//! Synthetic corpora: LTE-level sequences from class-specific Markov chains,
//! and 30 s audio scenes built from class-specific mixture recipes.

use std::f64::consts::PI;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::{write_wav, AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::manifest::{rotating_splits, Manifest, ManifestEntry};
use crate::numeric::{Matrix, SeededRng};

pub const LTE_JITTER: f64 = 0.05;
pub const CLIP_SECS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub label: usize,
    /// Index of this sequence among those of its class.
    pub index_in_class: usize,
    /// One `T x 4(C-1)` matrix per stream.
    pub streams: Vec<Matrix>,
}

/// Per-class generative recipe: two activation patterns per stream (one value
/// per left/right pair) and the chain's stay probabilities.
struct ChainRecipe {
    patterns: Vec<[Vec<f64>; 2]>,
    stay: [f64; 2],
}

fn chain_recipes(classes: usize, streams: usize, pairs: usize, seed: u64) -> Vec<ChainRecipe> {
    let mut rng = SeededRng::new(seed).fork(0);
    let background: Vec<Vec<f64>> = (0..streams)
        .map(|_| (0..pairs).map(|_| rng.uniform_range(0.1, 0.9)).collect())
        .collect();
    (0..classes)
        .map(|_| {
            let patterns = background
                .iter()
                .map(|bg| {
                    let own: Vec<f64> = (0..pairs).map(|_| rng.uniform_range(0.05, 0.95)).collect();
                    // the second state mostly shows the shared background
                    let mixed: Vec<f64> = bg
                        .iter()
                        .map(|b| 0.7 * b + 0.3 * rng.uniform_range(0.05, 0.95))
                        .collect();
                    [own, mixed]
                })
                .collect();
            ChainRecipe {
                patterns,
                stay: [rng.uniform_range(0.75, 0.95), rng.uniform_range(0.5, 0.8)],
            }
        })
        .collect()
}

fn jittered_pair(a: f64, rng: &mut SeededRng) -> (f64, f64) {
    let l = (a + LTE_JITTER * rng.normal()).clamp(0.0, 1.0);
    let r = (1.0 - a + LTE_JITTER * rng.normal()).clamp(0.0, 1.0);
    let s = l + r;
    if s > 0.0 {
        (l / s, r / s)
    } else {
        (0.5, 0.5)
    }
}

fn synth_lte(classes: usize, per_class: usize, length: usize, streams: usize, seed: u64) -> Result<Vec<SynthSequence>> {
    if classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
    }
    if length < 32 {
        return Err(Error::Config(format!("sequence length must be at least 32, got {length}")));
    }
    // raw and denoised channels: 2 (C - 1) pairs
    let pairs = 2 * (classes - 1);
    let recipes = chain_recipes(classes, streams, pairs, seed);
    let mut out = Vec::with_capacity(classes * per_class);
    for i in 0..per_class {
        for (c, recipe) in recipes.iter().enumerate() {
            let mut rng = SeededRng::new(seed).fork(1 + (i * classes + c) as u64);
            let mut mats: Vec<Matrix> = (0..streams).map(|_| Matrix::zeros(length, 2 * pairs)).collect();
            let mut state = usize::from(rng.bernoulli(0.5));
            for t in 0..length {
                if t > 0 && !rng.bernoulli(recipe.stay[state]) {
                    state = 1 - state;
                }
                for (m, pats) in mats.iter_mut().zip(&recipe.patterns) {
                    let row = m.row_mut(t);
                    for (j, &a) in pats[state].iter().enumerate() {
                        let (l, r) = jittered_pair(a, &mut rng);
                        row[2 * j] = l;
                        row[2 * j + 1] = r;
                    }
                }
            }
            out.push(SynthSequence {
                label: c,
                index_in_class: i,
                streams: mats,
            });
        }
    }
    Ok(out)
}

/// Single-stream LTE sequences of width `4(C-1)`.
pub fn synth_lte_dataset(classes: usize, per_class: usize, length: usize, seed: u64) -> Result<Vec<SynthSequence>> {
    synth_lte(classes, per_class, length, 1, seed)
}

/// Three streams per sequence (Gam, MFCC, Log order) driven by one shared
/// hidden state path.
pub fn synth_lte_streams(classes: usize, per_class: usize, length: usize, seed: u64) -> Result<Vec<SynthSequence>> {
    synth_lte(classes, per_class, length, 3, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioRecipe {
    pub tones: [f64; 3],
    /// Pass band of the coloured noise component, Hz.
    pub band: (f64, f64),
    pub am_rate: f64,
}

/// Class recipes spread log-uniformly over the spectrum.
pub fn audio_recipe(class: usize, classes: usize) -> AudioRecipe {
    let u = class as f64 / (classes.max(2) - 1) as f64;
    let f0 = 110.0 * 8f64.powf(u);
    let centre = 300.0 * 25f64.powf(u);
    AudioRecipe {
        tones: [f0, 2.3 * f0, 3.7 * f0],
        band: (0.7 * centre, 1.3 * centre),
        am_rate: 0.5 + 3.0 * u,
    }
}

fn band_noise(n: usize, band: (f64, f64), rms: f64, rng: &mut SeededRng) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(rng.normal(), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let fs = SAMPLE_RATE as f64;
    for (k, v) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * fs / n as f64;
        if f < band.0 || f > band.1 {
            *v = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut x: Vec<f64> = buf.iter().map(|v| v.re).collect();
    let cur = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if cur > 0.0 {
        x.iter_mut().for_each(|v| *v *= rms / cur);
    }
    x
}

/// One clip: jittered AM tone complex plus band noise plus broadband noise.
pub fn synth_audio_clip(recipe: &AudioRecipe, secs: usize, rng: &mut SeededRng) -> AudioClip {
    let n = secs * SAMPLE_RATE as usize;
    let fs = SAMPLE_RATE as f64;
    let mut x = band_noise(n, recipe.band, 0.05, rng);
    let am = recipe.am_rate * rng.uniform_range(0.9, 1.1);
    let am_phase = rng.uniform_range(0.0, 2.0 * PI);
    for &f in &recipe.tones {
        let f = f * rng.uniform_range(0.97, 1.03);
        let phase = rng.uniform_range(0.0, 2.0 * PI);
        let amp = rng.uniform_range(0.06, 0.1);
        for (i, v) in x.iter_mut().enumerate() {
            let t = i as f64 / fs;
            let env = 1.0 + 0.5 * (2.0 * PI * am * t + am_phase).sin();
            *v += amp * env * (2.0 * PI * f * t + phase).sin();
        }
    }
    for v in x.iter_mut() {
        *v += 0.01 * rng.normal();
    }
    AudioClip::new(x, SAMPLE_RATE)
}

pub fn class_name(c: usize) -> String {
    format!("class_{c:02}")
}

/// Writes `clips_per_class` WAVs per class into `dir` and returns the
/// manifest (also written as `dir/manifest.csv`). A quarter of each class is
/// held out per split, rotating across splits.
pub fn synth_audio_dataset(
    dir: impl AsRef<Path>,
    classes: usize,
    clips_per_class: usize,
    splits: usize,
    seed: u64,
) -> Result<Manifest> {
    synth_audio_dataset_with_length(dir, classes, clips_per_class, splits, CLIP_SECS, seed)
}

pub fn synth_audio_dataset_with_length(
    dir: impl AsRef<Path>,
    classes: usize,
    clips_per_class: usize,
    splits: usize,
    secs: usize,
    seed: u64,
) -> Result<Manifest> {
    if classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
    }
    if clips_per_class < 2 || splits == 0 {
        return Err(Error::Config("need at least 2 clips per class and 1 split".into()));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for i in 0..clips_per_class {
        for c in 0..classes {
            let recipe = audio_recipe(c, classes);
            let mut rng = SeededRng::new(seed).fork((c * clips_per_class + i) as u64);
            let clip = synth_audio_clip(&recipe, secs, &mut rng);
            let name = format!("{}_{i:03}.wav", class_name(c));
            write_wav(dir.join(&name), &clip)?;
            entries.push(ManifestEntry {
                path: name,
                label: class_name(c),
                test: rotating_splits(i, splits, folds(clips_per_class)),
            });
        }
    }
    let manifest = Manifest {
        split_names: (1..=splits).map(|s| format!("split_{s}")).collect(),
        entries,
        base_dir: dir.to_path_buf(),
    };
    manifest.write(dir.join("manifest.csv"))?;
    Ok(manifest)
}

/// Hold out a quarter when possible, else every other item.
pub fn folds(per_class: usize) -> usize {
    if per_class >= 4 {
        4
    } else {
        2
    }
}
