//! Experiment orchestration: run configuration, corpus loading, per-split
//! tree building / training / calibration / prediction, and reports.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::audio::segment_features_all;
use crate::codec::{read_featseq, write_featseq, Calibration, Checkpoint, FeatureFile, NoiseCondition, SeqKind};
use crate::error::{Error, Result};
use crate::gru::{forward_subsequence, Mode};
use crate::codec::{read_checkpoint, write_checkpoint};
use crate::lte::{build_label_tree, dual_channel_lte, fuse_streams, read_tree, write_tree, LabelTree, LteSequence};
use crate::manifest::Manifest;
use crate::metrics::{metrics, summarize, MetricsReport, SplitSummary};
use crate::numeric::{argmax, softmax, Matrix, SeededRng};
use crate::pipeline::{aggregate_multi, aggregate_single, split_subsequences, LastRule, SubsequencePlan, VotingScheme};
use crate::svm::{platt_scale, svm_scores, train_linear_svm};
use crate::synth::SynthSequence;
use crate::trainer::{extract_outputs, train_with_log, EpochStats, LabeledSubsequence, TrainConfig};

pub const SVM_C: f64 = 1.0;

const LOW_LEVEL: [SeqKind; 3] = [SeqKind::Gam, SeqKind::Mfcc, SeqKind::Log];
const EMBEDDED: [SeqKind; 3] = [SeqKind::LteGam, SeqKind::LteMfcc, SeqKind::LteLog];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamSelection {
    Gam,
    Mfcc,
    Log,
    Fusion,
    Multi,
}

impl StreamSelection {
    pub fn name(self) -> &'static str {
        match self {
            StreamSelection::Gam => "gam",
            StreamSelection::Mfcc => "mfcc",
            StreamSelection::Log => "log",
            StreamSelection::Fusion => "fusion",
            StreamSelection::Multi => "multi",
        }
    }

    /// Low-level kinds whose embeddings this selection needs.
    fn kinds(self) -> Vec<usize> {
        match self {
            StreamSelection::Gam => vec![0],
            StreamSelection::Mfcc => vec![1],
            StreamSelection::Log => vec![2],
            StreamSelection::Fusion | StreamSelection::Multi => vec![0, 1, 2],
        }
    }
}

impl fmt::Display for StreamSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StreamSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "gam" => StreamSelection::Gam,
            "mfcc" => StreamSelection::Mfcc,
            "log" => StreamSelection::Log,
            "fusion" => StreamSelection::Fusion,
            "multi" => StreamSelection::Multi,
            other => {
                return Err(Error::Config(format!(
                    "unknown stream {other:?} (expected gam, mfcc, log, fusion or multi)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub plan: SubsequencePlan,
    pub scheme: VotingScheme,
    pub stream: StreamSelection,
    pub svm_calibration: bool,
    /// Run only the first `n` splits of the manifest.
    pub splits: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            plan: SubsequencePlan::default(),
            scheme: VotingScheme::MulPv,
            stream: StreamSelection::Fusion,
            svm_calibration: false,
            splits: None,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

impl RunConfig {
    /// Every key accepted by [`RunConfig::set`]; each matches a CLI flag.
    pub const KEYS: [&'static str; 15] = [
        "layers",
        "hidden",
        "learning-rate",
        "dropout",
        "l2",
        "epochs",
        "batch-size",
        "seed",
        "subseq-len",
        "overlap",
        "last-rule",
        "scheme",
        "stream",
        "svm-calibration",
        "splits",
    ];

    /// Sets one key; underscores and hyphens are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let t = &mut self.train;
        match key.as_str() {
            "layers" => t.layers = parse_num(&key, value)?,
            "hidden" => t.hidden = parse_num(&key, value)?,
            "learning-rate" => t.learning_rate = parse_num(&key, value)?,
            "dropout" => t.dropout_rate = parse_num(&key, value)?,
            "l2" => t.l2 = parse_num(&key, value)?,
            "epochs" => t.epochs = parse_num(&key, value)?,
            "batch-size" => t.batch_size = parse_num(&key, value)?,
            "seed" => t.seed = parse_num(&key, value)?,
            "subseq-len" => self.plan.len = parse_num(&key, value)?,
            "overlap" => self.plan.overlap = parse_num(&key, value)?,
            "last-rule" => {
                self.plan.last_rule = match value {
                    "tail-window" => LastRule::TailWindow,
                    "short-tail" => LastRule::ShortTail,
                    _ => return Err(Error::Config(format!("last-rule: expected tail-window or short-tail, got {value:?}"))),
                }
            }
            "scheme" => self.scheme = value.parse()?,
            "stream" => self.stream = value.parse()?,
            "svm-calibration" => self.svm_calibration = parse_bool(&key, value)?,
            "splits" => {
                self.splits = match value {
                    "all" => None,
                    v => Some(parse_num(&key, v)?),
                }
            }
            other => return Err(Error::Config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` text; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let t = &self.train;
        let last = match self.plan.last_rule {
            LastRule::TailWindow => "tail-window",
            LastRule::ShortTail => "short-tail",
        };
        let splits = self.splits.map_or("all".to_string(), |n| n.to_string());
        format!(
            "layers = {}\nhidden = {}\nlearning-rate = {}\ndropout = {}\nl2 = {}\nepochs = {}\n\
             batch-size = {}\nseed = {}\nsubseq-len = {}\noverlap = {}\nlast-rule = {last}\n\
             scheme = {}\nstream = {}\nsvm-calibration = {}\nsplits = {splits}\n",
            t.layers,
            t.hidden,
            t.learning_rate,
            t.dropout_rate,
            t.l2,
            t.epochs,
            t.batch_size,
            t.seed,
            self.plan.len,
            self.plan.overlap,
            self.scheme,
            self.stream,
            self.svm_calibration,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.plan.len == 0 || !(0.0..1.0).contains(&self.plan.overlap) {
            return Err(Error::Config(format!(
                "subseq-len must be >= 1 and overlap in [0, 1) (got {}, {})",
                self.plan.len, self.plan.overlap
            )));
        }
        if self.splits == Some(0) {
            return Err(Error::Config("splits must be >= 1".into()));
        }
        Ok(())
    }
}

/// Segment features of one clip, indexed `[kind][noise]` with kinds in
/// Gam, MFCC, Log order and noise raw then denoised.
pub type SegmentSet = [[Matrix; 2]; 3];

#[derive(Debug, Clone, PartialEq)]
pub enum CorpusContent {
    Segments(Vec<SegmentSet>),
    Embedded {
        streams: Vec<SeqKind>,
        items: Vec<Vec<Matrix>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub vocab: Vec<String>,
    /// `test_masks[split][item]`.
    pub test_masks: Vec<Vec<bool>>,
    pub content: CorpusContent,
}

pub fn kind_suffix(kind: SeqKind) -> &'static str {
    match kind {
        SeqKind::Gam | SeqKind::LteGam => "gam",
        SeqKind::Mfcc | SeqKind::LteMfcc => "mfcc",
        SeqKind::Log | SeqKind::LteLog => "log",
        SeqKind::LteFused => "fused",
    }
}

pub fn noise_suffix(noise: NoiseCondition) -> &'static str {
    match noise {
        NoiseCondition::Raw => "raw",
        NoiseCondition::Denoised => "denoised",
        NoiseCondition::Dual => "dual",
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Cached segment features next to a clip: `<clip>.<kind>.<noise>.featseq`.
pub fn feature_cache_path(wav: &Path, kind: SeqKind, noise: NoiseCondition) -> PathBuf {
    with_suffix(wav, &format!(".{}.{}.featseq", kind_suffix(kind), noise_suffix(noise)))
}

/// Embedded stream file for a sequence stem: `<stem>.<stream>.featseq`.
pub fn stream_path(stem: &Path, kind: SeqKind) -> PathBuf {
    with_suffix(stem, &format!(".{}.featseq", kind_suffix(kind)))
}

fn read_feature(path: &Path, stage: &'static str) -> Result<FeatureFile> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact {
            stage,
            path: path.to_path_buf(),
        },
        _ => Error::Io(e),
    })?;
    read_featseq(&mut bytes.as_slice())
}

pub fn write_feature(path: &Path, file: &FeatureFile) -> Result<()> {
    let mut buf = Vec::new();
    write_featseq(&mut buf, file)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Segment features for one clip, from cache files when all six exist,
/// otherwise computed from the WAV.
pub fn clip_segments(wav: &Path) -> Result<SegmentSet> {
    let cached: Vec<PathBuf> = LOW_LEVEL
        .iter()
        .flat_map(|&k| [NoiseCondition::Raw, NoiseCondition::Denoised].map(|n| feature_cache_path(wav, k, n)))
        .collect();
    if cached.iter().all(|p| p.exists()) {
        let mut it = cached.iter();
        let mut next = || -> Result<Matrix> { Ok(read_feature(it.next().expect("six paths"), "features")?.data) };
        return Ok([[next()?, next()?], [next()?, next()?], [next()?, next()?]]);
    }
    if !wav.exists() {
        return Err(Error::MissingArtifact {
            stage: "audio",
            path: wav.to_path_buf(),
        });
    }
    let clip = crate::audio::read_wav(wav)?;
    let [rg, rm, rl] = segment_features_all(&clip, NoiseCondition::Raw)?;
    let [dg, dm, dl] = segment_features_all(&clip, NoiseCondition::Denoised)?;
    Ok([[rg, dg], [rm, dm], [rl, dl]])
}

impl Corpus {
    pub fn classes(&self) -> usize {
        self.vocab.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split_count(&self) -> usize {
        self.test_masks.len()
    }

    /// Loads a manifest. Rows ending in `.wav` are clips; other rows are
    /// stems of embedded sequence files.
    pub fn load(manifest: &Manifest) -> Result<Corpus> {
        let audio = manifest.entries.iter().all(|e| e.path.to_ascii_lowercase().ends_with(".wav"));
        let paths: Vec<PathBuf> = manifest.entries.iter().map(|e| manifest.resolve(e)).collect();
        let content = if audio {
            CorpusContent::Segments(paths.iter().map(|p| clip_segments(p)).collect::<Result<_>>()?)
        } else {
            let candidates = [SeqKind::LteGam, SeqKind::LteMfcc, SeqKind::LteLog, SeqKind::LteFused];
            let streams: Vec<SeqKind> = candidates
                .into_iter()
                .filter(|&k| stream_path(&paths[0], k).exists())
                .collect();
            if streams.is_empty() {
                return Err(Error::MissingArtifact {
                    stage: "lte-transform",
                    path: stream_path(&paths[0], SeqKind::LteGam),
                });
            }
            let items = paths
                .iter()
                .map(|p| {
                    streams
                        .iter()
                        .map(|&k| read_feature(&stream_path(p, k), "lte-transform").map(|f| f.data))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            CorpusContent::Embedded { streams, items }
        };
        let corpus = Corpus {
            ids: manifest.entries.iter().map(|e| e.path.clone()).collect(),
            labels: manifest.label_indices(),
            vocab: manifest.vocabulary(),
            test_masks: (0..manifest.split_count())
                .map(|s| manifest.test_mask(s))
                .collect::<Result<_>>()?,
            content,
        };
        corpus.check()?;
        Ok(corpus)
    }

    /// In-memory corpus from synthetic sequences. One stream is tagged as
    /// fused; three streams as Gam, MFCC, Log.
    pub fn from_synth(seqs: &[SynthSequence], classes: usize, test_masks: Vec<Vec<bool>>) -> Result<Corpus> {
        let k = seqs.first().map_or(0, |s| s.streams.len());
        let streams = match k {
            1 => vec![SeqKind::LteFused],
            3 => EMBEDDED.to_vec(),
            _ => return Err(Error::Config(format!("synthetic corpus with {k} streams"))),
        };
        let corpus = Corpus {
            ids: seqs
                .iter()
                .map(|s| format!("{}_{:03}", crate::synth::class_name(s.label), s.index_in_class))
                .collect(),
            labels: seqs.iter().map(|s| s.label).collect(),
            vocab: (0..classes).map(crate::synth::class_name).collect(),
            test_masks,
            content: CorpusContent::Embedded {
                streams,
                items: seqs.iter().map(|s| s.streams.clone()).collect(),
            },
        };
        corpus.check()?;
        Ok(corpus)
    }

    fn check(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::Empty("corpus has no items".into()));
        }
        if self.ids.len() != n || self.test_masks.iter().any(|m| m.len() != n) {
            return Err(Error::Consistency("corpus columns have different lengths".into()));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.classes()) {
            return Err(Error::Data(format!("label {l} outside a vocabulary of {}", self.classes())));
        }
        match &self.content {
            CorpusContent::Segments(items) if items.len() != n => {
                Err(Error::Consistency("segment items do not match labels".into()))
            }
            CorpusContent::Embedded { streams, items } => {
                if items.len() != n || items.iter().any(|i| i.len() != streams.len()) {
                    return Err(Error::Consistency("embedded items do not match labels".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn train_items(&self, split: usize) -> Result<Vec<usize>> {
        let mask = self.mask(split)?;
        Ok((0..self.len()).filter(|&i| !mask[i]).collect())
    }

    pub fn test_items(&self, split: usize) -> Result<Vec<usize>> {
        let mask = self.mask(split)?;
        Ok((0..self.len()).filter(|&i| mask[i]).collect())
    }

    fn mask(&self, split: usize) -> Result<&Vec<bool>> {
        self.test_masks.get(split).ok_or_else(|| {
            Error::Config(format!("split {} requested, corpus has {}", split + 1, self.split_count()))
        })
    }
}

/// Deterministic child seed for a (split, role) pair.
pub fn derive_seed(base: u64, split: usize, role: u64) -> u64 {
    SeededRng::new(base).fork(((split as u64) << 32) | role).seed()
}

/// Which items fed each fitted stage of a split.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub tree_items: BTreeSet<usize>,
    pub network_items: BTreeSet<usize>,
    pub calibration_items: BTreeSet<usize>,
}

impl Provenance {
    /// Fails if any test item touched a fitted stage.
    pub fn check_disjoint(&self, test: &[usize]) -> Result<()> {
        for (stage, set) in [
            ("tree", &self.tree_items),
            ("network", &self.network_items),
            ("calibration", &self.calibration_items),
        ] {
            if let Some(i) = test.iter().find(|i| set.contains(i)) {
                return Err(Error::Consistency(format!("test item {i} was used to fit the {stage} stage")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StreamModel {
    pub stream: SeqKind,
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
}

#[derive(Debug, Clone)]
pub struct SplitModel {
    /// Built trees, `[kind][noise]` flattened; empty for embedded corpora.
    pub trees: Vec<LabelTree>,
    pub streams: Vec<StreamModel>,
}

fn tree_index(kind: usize, noise: usize) -> usize {
    2 * kind + noise
}

/// Builds the label trees a selection needs from the given training items.
pub fn build_trees(corpus: &Corpus, items: &[usize], selection: StreamSelection, split: usize, seed: u64) -> Result<Vec<LabelTree>> {
    let CorpusContent::Segments(sets) = &corpus.content else {
        return Ok(Vec::new());
    };
    let mut trees = Vec::new();
    for k in 0..3 {
        for (n, noise) in [NoiseCondition::Raw, NoiseCondition::Denoised].into_iter().enumerate() {
            if !selection.kinds().contains(&k) {
                continue;
            }
            let rows: usize = items.iter().map(|&i| sets[i][k][n].rows()).sum();
            let width = sets[items[0]][k][n].cols();
            let mut data = Vec::with_capacity(rows * width);
            let mut labels = Vec::with_capacity(rows);
            for &i in items {
                data.extend_from_slice(sets[i][k][n].data());
                labels.extend(std::iter::repeat(corpus.labels[i]).take(sets[i][k][n].rows()));
            }
            let x = Matrix::from_vec(rows, width, data)?;
            let role = 1000 + tree_index(k, n) as u64;
            trees.push(build_label_tree(&x, &labels, corpus.classes(), LOW_LEVEL[k], noise, derive_seed(seed, split, role))?);
        }
    }
    Ok(trees)
}

fn find_tree(trees: &[LabelTree], kind: SeqKind, noise: NoiseCondition) -> Result<&LabelTree> {
    trees
        .iter()
        .find(|t| t.kind == kind && t.noise == noise)
        .ok_or_else(|| Error::Config(format!("no {kind:?}/{noise:?} tree available")))
}

/// Network input sequences of one item, one per network stream.
pub fn network_inputs(corpus: &Corpus, trees: &[LabelTree], selection: StreamSelection, item: usize) -> Result<Vec<LteSequence>> {
    let embedded: Vec<LteSequence> = match &corpus.content {
        CorpusContent::Segments(sets) => selection
            .kinds()
            .into_iter()
            .map(|k| {
                let kind = LOW_LEVEL[k];
                let raw = find_tree(trees, kind, NoiseCondition::Raw)?;
                let den = find_tree(trees, kind, NoiseCondition::Denoised)?;
                Ok(LteSequence {
                    stream: EMBEDDED[k],
                    data: dual_channel_lte(kind, &sets[item][k][0], &sets[item][k][1], raw, den)?,
                })
            })
            .collect::<Result<_>>()?,
        CorpusContent::Embedded { streams, items } => {
            let get = |kind: SeqKind| -> Option<LteSequence> {
                streams.iter().position(|&s| s == kind).map(|p| LteSequence {
                    stream: kind,
                    data: items[item][p].clone(),
                })
            };
            if selection == StreamSelection::Fusion {
                if let Some(f) = get(SeqKind::LteFused) {
                    return Ok(vec![f]);
                }
            }
            selection
                .kinds()
                .into_iter()
                .map(|k| {
                    get(EMBEDDED[k]).ok_or_else(|| {
                        Error::Config(format!(
                            "stream selection {selection} needs {} sequences, corpus has {streams:?}",
                            kind_suffix(EMBEDDED[k])
                        ))
                    })
                })
                .collect::<Result<_>>()?
        }
    };
    if selection == StreamSelection::Fusion {
        Ok(vec![fuse_streams(&embedded)?])
    } else {
        Ok(embedded)
    }
}

fn subsequence_set(
    corpus: &Corpus,
    inputs: &[(usize, Vec<LteSequence>)],
    stream: usize,
    plan: &SubsequencePlan,
) -> Result<Vec<LabeledSubsequence>> {
    let mut out = Vec::new();
    for (item, seqs) in inputs {
        for x in split_subsequences(&seqs[stream].data, plan)? {
            out.push(LabeledSubsequence {
                x,
                label: corpus.labels[*item],
                parent_id: *item,
                stream_id: stream,
            });
        }
    }
    Ok(out)
}

/// Fits trees, networks and (optionally) the SVM head on a split's training items.
pub fn fit_split<F>(cfg: &RunConfig, corpus: &Corpus, split: usize, mut on_epoch: F) -> Result<(SplitModel, Provenance)>
where
    F: FnMut(SeqKind, &EpochStats),
{
    cfg.validate()?;
    let train = corpus.train_items(split)?;
    if train.is_empty() {
        return Err(Error::Data(format!("split {} has no training items", split + 1)));
    }
    let mut prov = Provenance::default();
    let trees = build_trees(corpus, &train, cfg.stream, split, cfg.train.seed)?;
    if !trees.is_empty() {
        prov.tree_items.extend(&train);
    }
    let inputs: Vec<(usize, Vec<LteSequence>)> = train
        .iter()
        .map(|&i| network_inputs(corpus, &trees, cfg.stream, i).map(|s| (i, s)))
        .collect::<Result<_>>()?;
    let k = inputs[0].1.len();
    let mut streams = Vec::with_capacity(k);
    for s in 0..k {
        let kind = inputs[0].1[s].stream;
        let data = subsequence_set(corpus, &inputs, s, &cfg.plan)?;
        let mut tc = cfg.train.clone();
        tc.seed = derive_seed(cfg.train.seed, split, s as u64);
        let outcome = train_with_log(&data, corpus.classes(), &tc, |e| on_epoch(kind, e))?;
        prov.network_items.extend(data.iter().map(|d| d.parent_id));

        let calibration = if cfg.svm_calibration {
            let outputs = extract_outputs(&outcome.params, &data)?;
            let labels: Vec<usize> = data.iter().map(|d| d.label).collect();
            let svm = train_linear_svm(&outputs, &labels, corpus.classes(), SVM_C)?;
            let scores: Vec<Vec<f64>> = outputs.iter_rows().map(|o| svm_scores(&svm, o)).collect::<Result<_>>()?;
            let platt = platt_scale(&Matrix::from_rows(&scores)?, &labels)?;
            prov.calibration_items.extend(data.iter().map(|d| d.parent_id));
            Some(Calibration {
                svm,
                platt: Some(platt),
            })
        } else {
            None
        };
        streams.push(StreamModel {
            stream: kind,
            checkpoint: Checkpoint {
                params: outcome.params,
                calibration,
            },
            history: outcome.history,
        });
    }
    Ok((SplitModel { trees, streams }, prov))
}

/// `<dir>/<kind>.<noise>.tree`
pub fn tree_path(dir: &Path, kind: SeqKind, noise: NoiseCondition) -> PathBuf {
    dir.join(format!("{}.{}.tree", kind_suffix(kind), noise_suffix(noise)))
}

/// `<dir>/network.<stream>.ckpt`
pub fn checkpoint_path(dir: &Path, stream: SeqKind) -> PathBuf {
    dir.join(format!("network.{}.ckpt", kind_suffix(stream)))
}

fn read_artifact(path: &Path, stage: &'static str) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact {
            stage,
            path: path.to_path_buf(),
        },
        _ => Error::Io(e),
    })
}

pub fn save_trees(dir: &Path, trees: &[LabelTree]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for t in trees {
        let mut buf = Vec::new();
        write_tree(&mut buf, t)?;
        std::fs::write(tree_path(dir, t.kind, t.noise), buf)?;
    }
    Ok(())
}

/// Loads every tree a selection needs from `dir`.
pub fn load_trees(dir: &Path, selection: StreamSelection) -> Result<Vec<LabelTree>> {
    let mut trees = Vec::new();
    for k in selection.kinds() {
        for noise in [NoiseCondition::Raw, NoiseCondition::Denoised] {
            let bytes = read_artifact(&tree_path(dir, LOW_LEVEL[k], noise), "lte-build")?;
            trees.push(read_tree(&mut bytes.as_slice())?);
        }
    }
    Ok(trees)
}

/// Writes `config.txt`, `classes.txt`, trees and one checkpoint per stream.
pub fn save_model(dir: &Path, cfg: &RunConfig, vocab: &[String], model: &SplitModel) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.txt"), cfg.to_text())?;
    std::fs::write(dir.join("classes.txt"), vocab.join("\n") + "\n")?;
    save_trees(&dir.join("trees"), &model.trees)?;
    for sm in &model.streams {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sm.checkpoint)?;
        std::fs::write(checkpoint_path(dir, sm.stream), buf)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SavedModel {
    pub config: RunConfig,
    pub vocab: Vec<String>,
    pub model: SplitModel,
}

/// Reads a model directory written by [`save_model`]. Trees are loaded only
/// when `with_trees` is set (audio corpora).
pub fn load_model(dir: &Path, with_trees: bool) -> Result<SavedModel> {
    let text = String::from_utf8_lossy(&read_artifact(&dir.join("config.txt"), "train")?).into_owned();
    let config = RunConfig::from_text(&text)?;
    let vocab: Vec<String> = String::from_utf8_lossy(&read_artifact(&dir.join("classes.txt"), "train")?)
        .lines()
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    let trees = if with_trees {
        load_trees(&dir.join("trees"), config.stream)?
    } else {
        Vec::new()
    };
    let kinds: Vec<SeqKind> = match config.stream {
        StreamSelection::Fusion => vec![SeqKind::LteFused],
        StreamSelection::Multi => EMBEDDED.to_vec(),
        s => vec![EMBEDDED[s.kinds()[0]]],
    };
    let mut streams = Vec::new();
    for kind in kinds {
        let bytes = read_artifact(&checkpoint_path(dir, kind), "train")?;
        streams.push(StreamModel {
            stream: kind,
            checkpoint: read_checkpoint(&mut bytes.as_slice())?,
            history: Vec::new(),
        });
    }
    Ok(SavedModel {
        config,
        vocab,
        model: SplitModel { trees, streams },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemPrediction {
    pub item: usize,
    pub decision: usize,
    pub likelihood: Vec<f64>,
    /// Decision of the plain softmax pipeline (equal to `decision` without calibration).
    pub softmax_decision: usize,
}

fn one_hot(c: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[c] = 1.0;
    v
}

fn aggregate(rows: &[Vec<Vec<f64>>], scheme: VotingScheme) -> Result<crate::pipeline::Aggregate> {
    if rows.first().map_or(0, Vec::len) == 1 {
        let single: Vec<&Vec<f64>> = rows.iter().map(|r| &r[0]).collect();
        aggregate_single(&single, scheme)
    } else {
        aggregate_multi(rows, scheme)
    }
}

/// Classifies items with a fitted split model.
pub fn predict_items(cfg: &RunConfig, corpus: &Corpus, model: &SplitModel, items: &[usize]) -> Result<Vec<ItemPrediction>> {
    let c = corpus.classes();
    let mut out = Vec::with_capacity(items.len());
    for &item in items {
        let seqs = network_inputs(corpus, &model.trees, cfg.stream, item)?;
        if seqs.len() != model.streams.len() {
            return Err(Error::Consistency(format!(
                "item has {} streams, model has {}",
                seqs.len(),
                model.streams.len()
            )));
        }
        // [m][k] rows
        let mut soft: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut calibrated: Vec<Vec<Vec<f64>>> = Vec::new();
        for (k, (seq, sm)) in seqs.iter().zip(&model.streams).enumerate() {
            let subs = split_subsequences(&seq.data, &cfg.plan)?;
            if k == 0 {
                soft.resize(subs.len(), Vec::new());
                calibrated.resize(subs.len(), Vec::new());
            }
            for (m, x) in subs.iter().enumerate() {
                let (logits, _) = forward_subsequence(x, &sm.checkpoint.params, Mode::Infer)?;
                soft[m].push(softmax(&logits));
                if let Some(cal) = &sm.checkpoint.calibration {
                    let scores = svm_scores(&cal.svm, &logits)?;
                    let row = match (&cal.platt, cfg.scheme) {
                        (Some(p), s) if s != VotingScheme::Majority => p.distribution(&scores)?,
                        _ => one_hot(argmax(&scores), c),
                    };
                    calibrated[m].push(row);
                }
            }
        }
        let base = aggregate(&soft, cfg.scheme)?;
        let chosen = if cfg.svm_calibration {
            aggregate(&calibrated, cfg.scheme)?
        } else {
            base.clone()
        };
        out.push(ItemPrediction {
            item,
            decision: chosen.decision,
            likelihood: chosen.likelihood,
            softmax_decision: base.decision,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub split: usize,
    pub report: MetricsReport,
    /// Softmax pipeline scores when the SVM head is enabled.
    pub softmax_report: Option<MetricsReport>,
    /// Fraction of test items on which calibrated and softmax decisions agree.
    pub agreement: Option<f64>,
    pub predictions: Vec<ItemPrediction>,
    pub provenance: Provenance,
    pub model: SplitModel,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub splits: Vec<SplitOutcome>,
    pub summary: SplitSummary,
    pub softmax_summary: Option<SplitSummary>,
}

pub fn run_split<F>(cfg: &RunConfig, corpus: &Corpus, split: usize, on_epoch: F) -> Result<SplitOutcome>
where
    F: FnMut(SeqKind, &EpochStats),
{
    let (model, provenance) = fit_split(cfg, corpus, split, on_epoch)?;
    let test = corpus.test_items(split)?;
    provenance.check_disjoint(&test)?;
    let predictions = predict_items(cfg, corpus, &model, &test)?;
    let truth: Vec<usize> = test.iter().map(|&i| corpus.labels[i]).collect();
    let decided: Vec<usize> = predictions.iter().map(|p| p.decision).collect();
    let report = metrics(&decided, &truth, corpus.classes())?;
    let (softmax_report, agreement) = if cfg.svm_calibration {
        let soft: Vec<usize> = predictions.iter().map(|p| p.softmax_decision).collect();
        let agree = predictions.iter().filter(|p| p.decision == p.softmax_decision).count();
        (
            Some(metrics(&soft, &truth, corpus.classes())?),
            Some(agree as f64 / predictions.len() as f64),
        )
    } else {
        (None, None)
    };
    Ok(SplitOutcome {
        split,
        report,
        softmax_report,
        agreement,
        predictions,
        provenance,
        model,
    })
}

/// Runs every selected split and summarizes them.
pub fn run_experiment<F>(cfg: &RunConfig, corpus: &Corpus, mut on_epoch: F) -> Result<ExperimentOutcome>
where
    F: FnMut(usize, SeqKind, &EpochStats),
{
    cfg.validate()?;
    let n = cfg.splits.unwrap_or(corpus.split_count());
    if n > corpus.split_count() {
        return Err(Error::Config(format!(
            "{n} splits requested, corpus defines {}",
            corpus.split_count()
        )));
    }
    let splits = (0..n)
        .map(|s| run_split(cfg, corpus, s, |k, e| on_epoch(s, k, e)))
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<MetricsReport> = splits.iter().map(|s| s.report.clone()).collect();
    let softmax: Option<Vec<MetricsReport>> = splits.iter().map(|s| s.softmax_report.clone()).collect();
    Ok(ExperimentOutcome {
        summary: summarize(&reports),
        softmax_summary: softmax.map(|r| summarize(&r)),
        splits,
    })
}

/// `split,accuracy,macro_precision,macro_f1`, one row per split plus a mean row.
pub fn metrics_csv(outcome: &ExperimentOutcome) -> String {
    let mut s = String::from("split,accuracy,macro_precision,macro_f1\n");
    for sp in &outcome.splits {
        let r = &sp.report;
        let _ = writeln!(s, "{},{:.6},{:.6},{:.6}", sp.split + 1, r.accuracy, r.macro_precision, r.macro_f1);
    }
    let m = &outcome.summary;
    let _ = writeln!(
        s,
        "mean,{:.6},{:.6},{:.6}",
        m.accuracy.mean, m.macro_precision.mean, m.macro_f1.mean
    );
    s
}

/// `split,stream,epoch,mean_loss` for plotting.
pub fn loss_csv(outcome: &ExperimentOutcome) -> String {
    let mut s = String::from("split,stream,epoch,mean_loss\n");
    for sp in &outcome.splits {
        for sm in &sp.model.streams {
            for e in &sm.history {
                let _ = writeln!(s, "{},{},{},{:.8}", sp.split + 1, kind_suffix(sm.stream), e.epoch, e.mean_loss);
            }
        }
    }
    s
}

pub fn summary_text(cfg: &RunConfig, corpus: &Corpus, outcome: &ExperimentOutcome) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "items {}  classes {}  stream {}  scheme {}  svm-calibration {}",
        corpus.len(),
        corpus.classes(),
        cfg.stream,
        cfg.scheme,
        cfg.svm_calibration
    );
    for sp in &outcome.splits {
        let r = &sp.report;
        let _ = write!(
            s,
            "split {:>2}: accuracy {:.4}  precision {:.4}  f1 {:.4}  ({}/{})",
            sp.split + 1,
            r.accuracy,
            r.macro_precision,
            r.macro_f1,
            r.correct(),
            r.count
        );
        if let (Some(b), Some(a)) = (&sp.softmax_report, sp.agreement) {
            let _ = write!(s, "  softmax accuracy {:.4}  agreement {:.4}", b.accuracy, a);
        }
        if !r.undefined_precision.is_empty() {
            let _ = write!(s, "  never predicted: {:?}", r.undefined_precision);
        }
        s.push('\n');
    }
    let m = &outcome.summary;
    let _ = writeln!(
        s,
        "mean: accuracy {:.4} ± {:.4}  precision {:.4} ± {:.4}  f1 {:.4} ± {:.4}",
        m.accuracy.mean, m.accuracy.std, m.macro_precision.mean, m.macro_precision.std, m.macro_f1.mean, m.macro_f1.std
    );
    if let Some(b) = &outcome.softmax_summary {
        let _ = writeln!(s, "softmax baseline: accuracy {:.4} ± {:.4}", b.accuracy.mean, b.accuracy.std);
    }
    s
}
