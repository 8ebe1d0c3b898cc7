//! WAV ingestion, framing, spectra, the three low-level feature kinds,
//! minimum-statistics noise subtraction and segment averaging.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::codec::{NoiseCondition, SeqKind};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const SAMPLE_RATE: u32 = 22050;
pub const LOG_FLOOR: f64 = 1e-10;

pub const MFCC_BANDS: usize = 40;
pub const MFCC_COEFFS: usize = 20;
pub const GAMMATONE_BANDS: usize = 64;
pub const LOGFREQ_BANDS: usize = 20;
pub const MIN_FREQ: f64 = 20.0;
pub const SUBBAND_EDGES: [f64; 5] = [20.0, 187.0, 1091.0, 4320.0, 11025.0];

pub const NOISE_SMOOTHING: f64 = 0.85;
pub const NOISE_WINDOW_SECS: f64 = 1.5;
pub const NOISE_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    /// Samples scaled to [-1, 1).
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::WavLayout(format!(
            "{}: {:?} {}-bit samples, expected 16-bit PCM",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    if spec.channels != 1 {
        return Err(Error::WavLayout(format!(
            "{}: {} channels, expected mono",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::SampleRate {
            found: spec.sample_rate,
            expected: SAMPLE_RATE,
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(AudioClip::new(samples, SAMPLE_RATE))
}

/// Writes 16-bit mono PCM, clipping samples to the representable range.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in &clip.samples {
        w.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?;
    }
    w.finalize()?;
    Ok(())
}

/// Frame and segment geometry in samples and frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSpec {
    pub frame_len: usize,
    pub frame_hop: usize,
    /// Frames per segment.
    pub segment_frames: usize,
    /// Frame stride between segment starts.
    pub segment_hop_frames: usize,
}

impl FrameSpec {
    /// 50 ms frames every 25 ms, 250 ms segments every 125 ms.
    pub fn for_rate(fs: u32) -> Self {
        let frame_len = (0.050 * fs as f64).floor() as usize;
        let frame_hop = (0.025 * fs as f64).floor() as usize;
        Self {
            frame_len,
            frame_hop,
            segment_frames: (250 - 50) / 25 + 1,
            segment_hop_frames: 125 / 25,
        }
    }

    pub fn frame_count(&self, n_samples: usize) -> usize {
        if n_samples < self.frame_len {
            0
        } else {
            (n_samples - self.frame_len) / self.frame_hop + 1
        }
    }

    /// Segments under the drop-last rule: the final full segment is discarded.
    pub fn segment_count(&self, n_frames: usize) -> usize {
        if n_frames < self.segment_frames {
            0
        } else {
            (n_frames - self.segment_frames) / self.segment_hop_frames
        }
    }
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self::for_rate(SAMPLE_RATE)
    }
}

/// Frames start at `0, hop, 2 hop, ...`; only frames that fit are emitted.
pub fn frame_signal(clip: &[f64], len: usize, hop: usize) -> Result<Matrix> {
    if len == 0 || hop == 0 {
        return Err(Error::Config(format!("frame length {len} and hop {hop} must be positive")));
    }
    if clip.len() < len {
        return Err(Error::Empty(format!(
            "clip of {} samples is shorter than one {len}-sample frame",
            clip.len()
        )));
    }
    let count = (clip.len() - len) / hop + 1;
    let mut data = Vec::with_capacity(count * len);
    for i in 0..count {
        data.extend_from_slice(&clip[i * hop..i * hop + len]);
    }
    Matrix::from_vec(count, len, data)
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Hann-windowed one-sided power spectrum over `n/2 + 1` bins, scaled so that
/// the bins sum to the windowed frame's energy.
pub struct SpectrumAnalyzer {
    n: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl SpectrumAnalyzer {
    pub fn new(n: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(n);
        let scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        Self {
            n,
            window: hann(n),
            fft,
            buf: vec![Complex::default(); n],
            scratch,
        }
    }

    pub fn bins(&self) -> usize {
        self.n / 2 + 1
    }

    pub fn power(&mut self, frame: &[f64], out: &mut [f64]) {
        debug_assert_eq!(frame.len(), self.n);
        for ((b, &x), &w) in self.buf.iter_mut().zip(frame).zip(&self.window) {
            *b = Complex::new(x * w, 0.0);
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        let n = self.n as f64;
        for (k, o) in out.iter_mut().enumerate().take(self.bins()) {
            let mag = self.buf[k].norm_sqr() / n;
            let mirrored = k != 0 && 2 * k != self.n;
            *o = if mirrored { 2.0 * mag } else { mag };
        }
    }
}

pub fn power_spectrum(frame: &[f64]) -> Result<Vec<f64>> {
    if frame.is_empty() {
        return Err(Error::Empty("cannot take the spectrum of an empty frame".into()));
    }
    let mut a = SpectrumAnalyzer::new(frame.len());
    let mut out = vec![0.0; a.bins()];
    a.power(frame, &mut out);
    Ok(out)
}

fn spectra(frames: &Matrix) -> Matrix {
    let mut a = SpectrumAnalyzer::new(frames.cols());
    let mut out = Matrix::zeros(frames.rows(), a.bins());
    for (i, f) in frames.iter_rows().enumerate() {
        a.power(f, out.row_mut(i));
    }
    out
}

fn bin_freq(k: usize, n_fft: usize, fs: f64) -> f64 {
    k as f64 * fs / n_fft as f64
}

/// Sparse filter: first bin index and its weights.
#[derive(Debug, Clone)]
struct Filter {
    start: usize,
    weights: Vec<f64>,
}

impl Filter {
    fn apply(&self, spec: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(&spec[self.start..])
            .map(|(w, p)| w * p)
            .sum()
    }

    /// Triangular response over bin frequencies; a filter narrower than the
    /// bin spacing falls back to the bin nearest its peak.
    fn triangle(lo: f64, peak: f64, hi: f64, n_fft: usize, fs: f64) -> Filter {
        let bins = n_fft / 2 + 1;
        let w: Vec<f64> = (0..bins)
            .map(|k| {
                let f = bin_freq(k, n_fft, fs);
                if f <= lo || f >= hi {
                    0.0
                } else if f <= peak {
                    (f - lo) / (peak - lo)
                } else {
                    (hi - f) / (hi - peak)
                }
            })
            .collect();
        match (w.iter().position(|&v| v > 0.0), w.iter().rposition(|&v| v > 0.0)) {
            (Some(a), Some(b)) => Filter {
                start: a,
                weights: w[a..=b].to_vec(),
            },
            _ => Filter {
                start: ((peak * n_fft as f64 / fs).round() as usize).min(bins - 1),
                weights: vec![1.0],
            },
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

fn erb(f: f64) -> f64 {
    24.7 * (4.37e-3 * f + 1.0)
}

fn hz_to_erb_rate(f: f64) -> f64 {
    21.4 * (1.0 + 4.37e-3 * f).log10()
}

fn erb_rate_to_hz(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) / 4.37e-3
}

/// Gammatone centre frequencies, equally spaced on the ERB-rate scale over
/// `[20, fs/2]`.
pub fn gammatone_centers(fs: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_erb_rate(MIN_FREQ), hz_to_erb_rate(fs / 2.0));
    (0..GAMMATONE_BANDS)
        .map(|i| erb_rate_to_hz(lo + (hi - lo) * i as f64 / (GAMMATONE_BANDS - 1) as f64))
        .collect()
}

fn mel_bank(n_fft: usize, fs: f64) -> Vec<Filter> {
    let (lo, hi) = (hz_to_mel(0.0), hz_to_mel(fs / 2.0));
    let edges: Vec<f64> = (0..MFCC_BANDS + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (MFCC_BANDS + 1) as f64))
        .collect();
    edges
        .windows(3)
        .map(|e| Filter::triangle(e[0], e[1], e[2], n_fft, fs))
        .collect()
}

/// Triangles of half-width `1.019 ERB(fc)`, the equivalent rectangular
/// bandwidth of a 4th-order gammatone.
fn gammatone_bank(n_fft: usize, fs: f64) -> Vec<Filter> {
    gammatone_centers(fs)
        .into_iter()
        .map(|fc| {
            let b = 1.019 * erb(fc);
            Filter::triangle(fc - b, fc, fc + b, n_fft, fs)
        })
        .collect()
}

fn logfreq_bank(n_fft: usize, fs: f64) -> Vec<Filter> {
    let (lo, hi) = (MIN_FREQ.ln(), (fs / 2.0).ln());
    let edges: Vec<f64> = (0..LOGFREQ_BANDS + 2)
        .map(|i| (lo + (hi - lo) * i as f64 / (LOGFREQ_BANDS + 1) as f64).exp())
        .collect();
    edges
        .windows(3)
        .map(|e| Filter::triangle(e[0], e[1], e[2], n_fft, fs))
        .collect()
}

/// Orthonormal DCT-II basis, `keep` rows of length `n`.
fn dct_basis(n: usize, keep: usize) -> Matrix {
    let mut m = Matrix::zeros(keep, n);
    for k in 0..keep {
        let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            m.set(k, i, s * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos());
        }
    }
    m
}

fn log_energies(bank: &[Filter], spec: &[f64]) -> Vec<f64> {
    bank.iter().map(|f| f.apply(spec).max(LOG_FLOOR).ln()).collect()
}

/// Two-frame regression slope with replicated edge frames.
pub fn deltas(x: &Matrix) -> Matrix {
    let t = x.rows() as isize;
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let at = |i: isize| x.row(i.clamp(0, t - 1) as usize);
    for i in 0..t {
        let o = out.row_mut(i as usize);
        for n in 1..=2isize {
            let (fwd, bwd) = (at(i + n), at(i - n));
            for j in 0..o.len() {
                o[j] += n as f64 * (fwd[j] - bwd[j]);
            }
        }
        o.iter_mut().for_each(|v| *v /= 10.0);
    }
    out
}

/// Statics followed by their first and second temporal derivatives.
fn with_deltas(statics: Matrix) -> Matrix {
    let d1 = deltas(&statics);
    let d2 = deltas(&d1);
    let w = statics.cols();
    let mut out = Matrix::zeros(statics.rows(), 3 * w);
    for i in 0..statics.rows() {
        let r = out.row_mut(i);
        r[..w].copy_from_slice(statics.row(i));
        r[w..2 * w].copy_from_slice(d1.row(i));
        r[2 * w..].copy_from_slice(d2.row(i));
    }
    out
}

fn mfcc_from_spectra(spectra: &Matrix, n_fft: usize, fs: f64) -> Matrix {
    let bank = mel_bank(n_fft, fs);
    let dct = dct_basis(MFCC_BANDS, MFCC_COEFFS);
    let mut statics = Matrix::zeros(spectra.rows(), MFCC_COEFFS);
    for (i, s) in spectra.iter_rows().enumerate() {
        let e = log_energies(&bank, s);
        for (k, basis) in dct.iter_rows().enumerate() {
            statics.set(i, k, crate::numeric::dot(basis, &e));
        }
    }
    with_deltas(statics)
}

fn gammatone_from_spectra(spectra: &Matrix, n_fft: usize, fs: f64) -> Matrix {
    let bank = gammatone_bank(n_fft, fs);
    let dct = dct_basis(GAMMATONE_BANDS, GAMMATONE_BANDS);
    let mut out = Matrix::zeros(spectra.rows(), GAMMATONE_BANDS);
    for (i, s) in spectra.iter_rows().enumerate() {
        let e = log_energies(&bank, s);
        for (k, basis) in dct.iter_rows().enumerate() {
            out.set(i, k, crate::numeric::dot(basis, &e));
        }
    }
    out
}

pub fn zero_crossing_rate(frame: &[f64]) -> f64 {
    if frame.len() < 2 {
        return 0.0;
    }
    let crossings = frame.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
    crossings as f64 / (frame.len() - 1) as f64
}

/// Power-weighted mean frequency and spread around it, in Hz.
pub fn spectral_centroid_bandwidth(spec: &[f64], n_fft: usize, fs: f64) -> (f64, f64) {
    let total: f64 = spec.iter().sum();
    if total <= 0.0 {
        return (0.0, 0.0);
    }
    let centroid = spec
        .iter()
        .enumerate()
        .map(|(k, p)| bin_freq(k, n_fft, fs) * p)
        .sum::<f64>()
        / total;
    let spread = spec
        .iter()
        .enumerate()
        .map(|(k, p)| (bin_freq(k, n_fft, fs) - centroid).powi(2) * p)
        .sum::<f64>()
        / total;
    (centroid, spread.sqrt())
}

fn subband_energies(spec: &[f64], n_fft: usize, fs: f64) -> [f64; 4] {
    let mut e = [0.0; 4];
    for (k, &p) in spec.iter().enumerate() {
        let f = bin_freq(k, n_fft, fs);
        let band = SUBBAND_EDGES
            .windows(2)
            .position(|w| f >= w[0] && (f < w[1] || (w[1] == SUBBAND_EDGES[4] && f <= w[1])));
        if let Some(b) = band {
            e[b] += p;
        }
    }
    e.map(|v| v.max(LOG_FLOOR).ln())
}

fn logfreq_from_spectra(frames: &Matrix, spectra: &Matrix, fs: f64) -> Matrix {
    let n_fft = frames.cols();
    let bank = logfreq_bank(n_fft, fs);
    let mut statics = Matrix::zeros(spectra.rows(), LOGFREQ_BANDS);
    for (i, s) in spectra.iter_rows().enumerate() {
        statics.row_mut(i).copy_from_slice(&log_energies(&bank, s));
    }
    let dyn_part = with_deltas(statics);
    let w = dyn_part.cols();
    let mut out = Matrix::zeros(spectra.rows(), w + 8);
    for (i, (frame, s)) in frames.iter_rows().zip(spectra.iter_rows()).enumerate() {
        let r = out.row_mut(i);
        r[..w].copy_from_slice(dyn_part.row(i));
        r[w] = zero_crossing_rate(frame);
        let mean_sq = frame.iter().map(|x| x * x).sum::<f64>() / frame.len() as f64;
        r[w + 1] = mean_sq.max(LOG_FLOOR).ln();
        r[w + 2..w + 6].copy_from_slice(&subband_energies(s, n_fft, fs));
        let (c, b) = spectral_centroid_bandwidth(s, n_fft, fs);
        r[w + 6] = c;
        r[w + 7] = b;
    }
    out
}

/// Per-frame 60-dim MFCC vectors (20 statics including c0, Δ, ΔΔ).
pub fn mfcc60(frames: &Matrix, fs: u32) -> Matrix {
    mfcc_from_spectra(&spectra(frames), frames.cols(), fs as f64)
}

/// Per-frame 64-dim gammatone cepstral vectors.
pub fn gammatone64(frames: &Matrix, fs: u32) -> Matrix {
    gammatone_from_spectra(&spectra(frames), frames.cols(), fs as f64)
}

/// Per-frame 68-dim vectors: 20 log-frequency band energies with Δ and ΔΔ,
/// zero-crossing rate, log energy, 4 subband log energies, spectral centroid
/// and bandwidth.
pub fn logfreq68(frames: &Matrix, fs: u32) -> Matrix {
    logfreq_from_spectra(frames, &spectra(frames), fs as f64)
}

pub fn feature_width(kind: SeqKind) -> Option<usize> {
    match kind {
        SeqKind::Gam => Some(64),
        SeqKind::Mfcc => Some(60),
        SeqKind::Log => Some(68),
        _ => None,
    }
}

/// Minimum-statistics spectral subtraction. The noise power per bin is the
/// minimum of first-order-smoothed periodograms over a trailing 1.5 s window;
/// `|S|^2 = max(|Y|^2 - N, beta |Y|^2)` keeps the noisy phase, and the
/// signal is resynthesized by overlap-add of the Hann-analysed frames.
pub fn noise_subtract(clip: &AudioClip) -> Result<AudioClip> {
    let fs = clip.sample_rate as f64;
    let min_len = (NOISE_WINDOW_SECS * fs).round() as usize;
    if clip.samples.len() < min_len {
        return Err(Error::Length(format!(
            "noise subtraction needs at least {NOISE_WINDOW_SECS} s ({min_len} samples), got {}",
            clip.samples.len()
        )));
    }
    let spec = FrameSpec::for_rate(clip.sample_rate);
    let n = spec.frame_len & !1;
    let hop = n / 2;
    let window_frames = ((NOISE_WINDOW_SECS * fs) / hop as f64).round() as usize;

    // pad so every original sample lies under exactly two frames
    let len = clip.samples.len();
    let frames = len.div_ceil(hop) + 1;
    let mut padded = vec![0.0; hop + frames * hop + hop];
    padded[hop..hop + len].copy_from_slice(&clip.samples);

    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let window = hann(n);
    let bins = n / 2 + 1;

    let mut stft: Vec<Vec<Complex<f64>>> = Vec::with_capacity(frames);
    for f in 0..frames {
        let mut buf: Vec<Complex<f64>> = padded[f * hop..f * hop + n]
            .iter()
            .zip(&window)
            .map(|(x, w)| Complex::new(x * w, 0.0))
            .collect();
        fwd.process(&mut buf);
        stft.push(buf);
    }

    let mut smoothed = vec![0.0; bins];
    let mut history: Vec<Vec<f64>> = Vec::with_capacity(frames);
    let mut out = vec![0.0; padded.len()];
    for (f, spec_f) in stft.iter_mut().enumerate() {
        for k in 0..bins {
            let p = spec_f[k].norm_sqr();
            smoothed[k] = if f == 0 {
                p
            } else {
                NOISE_SMOOTHING * smoothed[k] + (1.0 - NOISE_SMOOTHING) * p
            };
        }
        history.push(smoothed.clone());
        let from = (f + 1).saturating_sub(window_frames);
        for k in 0..bins {
            let noise = history[from..=f].iter().map(|h| h[k]).fold(f64::INFINITY, f64::min);
            let p = spec_f[k].norm_sqr();
            let gain = if p > 0.0 {
                (1.0 - noise / p).max(NOISE_FLOOR).sqrt()
            } else {
                0.0
            };
            spec_f[k] *= gain;
            if k != 0 && k != n - k {
                spec_f[n - k] = spec_f[k].conj();
            }
        }
        inv.process(spec_f);
        for (o, v) in out[f * hop..f * hop + n].iter_mut().zip(spec_f.iter()) {
            *o += v.re / n as f64;
        }
    }
    Ok(AudioClip::new(out[hop..hop + len].to_vec(), clip.sample_rate))
}

/// Averages consecutive frame vectors into segment vectors under the
/// drop-last rule.
pub fn average_segments(per_frame: &Matrix, spec: &FrameSpec) -> Result<Matrix> {
    let count = spec.segment_count(per_frame.rows());
    if count == 0 {
        return Err(Error::Length(format!(
            "{} frames are too few for one segment",
            per_frame.rows()
        )));
    }
    let mut out = Matrix::zeros(count, per_frame.cols());
    let scale = 1.0 / spec.segment_frames as f64;
    for s in 0..count {
        let r = out.row_mut(s);
        for f in 0..spec.segment_frames {
            for (o, v) in r.iter_mut().zip(per_frame.row(s * spec.segment_hop_frames + f)) {
                *o += v * scale;
            }
        }
    }
    Ok(out)
}

fn prepare(clip: &AudioClip, noise: NoiseCondition) -> Result<(Matrix, Matrix)> {
    if clip.sample_rate != SAMPLE_RATE {
        return Err(Error::SampleRate {
            found: clip.sample_rate,
            expected: SAMPLE_RATE,
        });
    }
    let denoised;
    let source = match noise {
        NoiseCondition::Raw => clip,
        NoiseCondition::Denoised => {
            denoised = noise_subtract(clip)?;
            &denoised
        }
        NoiseCondition::Dual => {
            return Err(Error::Config("segment features need a single noise condition".into()))
        }
    };
    let spec = FrameSpec::default();
    let frames = frame_signal(&source.samples, spec.frame_len, spec.frame_hop)?;
    let sp = spectra(&frames);
    Ok((frames, sp))
}

fn per_frame(kind: SeqKind, frames: &Matrix, sp: &Matrix) -> Result<Matrix> {
    let fs = SAMPLE_RATE as f64;
    Ok(match kind {
        SeqKind::Gam => gammatone_from_spectra(sp, frames.cols(), fs),
        SeqKind::Mfcc => mfcc_from_spectra(sp, frames.cols(), fs),
        SeqKind::Log => logfreq_from_spectra(frames, sp, fs),
        other => return Err(Error::Config(format!("{other:?} is not a low-level feature kind"))),
    })
}

/// Segment-level features: per-frame features over the whole clip, then the
/// mean over each segment's frames.
pub fn segment_features(clip: &AudioClip, kind: SeqKind, noise: NoiseCondition) -> Result<Matrix> {
    let (frames, sp) = prepare(clip, noise)?;
    average_segments(&per_frame(kind, &frames, &sp)?, &FrameSpec::default())
}

/// All three kinds in `[Gam, Mfcc, Log]` order, sharing one spectral analysis.
pub fn segment_features_all(clip: &AudioClip, noise: NoiseCondition) -> Result<[Matrix; 3]> {
    let (frames, sp) = prepare(clip, noise)?;
    let spec = FrameSpec::default();
    let one = |k| per_frame(k, &frames, &sp).and_then(|m| average_segments(&m, &spec));
    Ok([one(SeqKind::Gam)?, one(SeqKind::Mfcc)?, one(SeqKind::Log)?])
}
