use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use lte_gru::audio::{read_wav, segment_features};
use lte_gru::codec::{FeatureFile, NoiseCondition, SeqKind};
use lte_gru::experiment::{
    build_trees, feature_cache_path, fit_split, kind_suffix, load_model, load_trees, loss_csv, metrics_csv,
    network_inputs, predict_items, run_experiment, save_model, save_trees, stream_path, summary_text, write_feature,
    Corpus, CorpusContent, RunConfig, StreamSelection,
};
use lte_gru::gru::init_network;
use lte_gru::manifest::{rotating_splits, Manifest, ManifestEntry};
use lte_gru::metrics::metrics;
use lte_gru::numeric::{Matrix, SeededRng};
use lte_gru::synth::{class_name, folds, synth_audio_dataset_with_length, synth_lte_dataset, synth_lte_streams};
use lte_gru::trainer::{gradient_check, EpochStats, LabeledSubsequence};

#[derive(Parser)]
#[command(name = "lte-gru", version, about = "Acoustic scene classification with GRU networks over label tree embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic audio scene corpus (WAVs plus manifest.csv).
    SynthAudio(SynthAudioArgs),
    /// Write a synthetic corpus of embedded sequences (FEATSEQ files plus manifest.csv).
    SynthLte(SynthLteArgs),
    /// Cache segment-level features next to every clip of a manifest.
    Features(FeaturesArgs),
    /// Build label trees on one split's training clips.
    LteBuild(LteBuildArgs),
    /// Embed every clip with previously built trees.
    LteTransform(LteTransformArgs),
    /// Fit trees, networks and the optional SVM head on one split.
    Train(TrainArgs),
    /// Classify clips with a trained model directory.
    Predict(PredictArgs),
    /// Train and score every split; write metrics, summary and loss curves.
    Evaluate(EvaluateArgs),
    /// Compare backpropagated gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// Tabulate one or more metrics.csv files.
    Report(ReportArgs),
}

/// Run configuration: `--config FILE` followed by per-key overrides.
#[derive(Args, Clone, Default)]
struct RunArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    learning_rate: Option<String>,
    #[arg(long)]
    dropout: Option<String>,
    #[arg(long)]
    l2: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    subseq_len: Option<String>,
    #[arg(long)]
    overlap: Option<String>,
    #[arg(long, value_parser = ["tail-window", "short-tail"])]
    last_rule: Option<String>,
    #[arg(long, value_parser = ["mv", "maxpv", "addpv", "mulpv"])]
    scheme: Option<String>,
    #[arg(long, value_parser = ["gam", "mfcc", "log", "fusion", "multi"])]
    stream: Option<String>,
    /// Classify through a linear SVM with Platt scaling on the network outputs.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    svm_calibration: Option<String>,
    /// Number of manifest splits to run (`all` for every split).
    #[arg(long)]
    splits: Option<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            cfg.apply_text(&text).with_context(|| format!("in config {}", path.display()))?;
        }
        let overrides = [
            ("seed", &self.seed),
            ("layers", &self.layers),
            ("hidden", &self.hidden),
            ("learning-rate", &self.learning_rate),
            ("dropout", &self.dropout),
            ("l2", &self.l2),
            ("epochs", &self.epochs),
            ("batch-size", &self.batch_size),
            ("subseq-len", &self.subseq_len),
            ("overlap", &self.overlap),
            ("last-rule", &self.last_rule),
            ("scheme", &self.scheme),
            ("stream", &self.stream),
            ("svm-calibration", &self.svm_calibration),
            ("splits", &self.splits),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, v).with_context(|| format!("--{key}"))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthAudioArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 12)]
    clips: usize,
    #[arg(long, default_value_t = 1)]
    splits: usize,
    /// Clip length in seconds.
    #[arg(long, default_value_t = 30)]
    secs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthLteArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 80)]
    per_class: usize,
    /// Sequence length in segments.
    #[arg(long, default_value_t = 238)]
    length: usize,
    /// 1 writes a single fused stream; 3 writes Gam, MFCC and Log streams.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
    streams: u8,
    #[arg(long, default_value_t = 1)]
    splits: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "all", value_parser = ["gam", "mfcc", "log", "all"])]
    kind: String,
    #[arg(long, default_value = "both", value_parser = ["raw", "denoised", "both"])]
    noise: String,
}

#[derive(Args)]
struct LteBuildArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// 1-based split whose training clips fit the trees.
    #[arg(long, default_value_t = 1)]
    split: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct LteTransformArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory written by `lte-build`.
    #[arg(long)]
    trees: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = ["gam", "mfcc", "log", "fusion", "multi"])]
    stream: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 1)]
    split: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct PredictArgs {
    /// Directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Classify the test clips of this 1-based split.
    #[arg(long, default_value_t = 1, conflicts_with = "all")]
    split: usize,
    /// Classify every clip of the manifest.
    #[arg(long)]
    all: bool,
    #[arg(long, value_parser = ["mv", "maxpv", "addpv", "mulpv"])]
    scheme: Option<String>,
    /// Output CSV (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    cases: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fix the layer count instead of drawing 1 or 2.
    #[arg(long)]
    layers: Option<usize>,
    /// Fix the hidden size instead of drawing from 1..=16.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
}

#[derive(Args)]
struct ReportArgs {
    /// metrics.csv files or directories containing one.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SynthAudio(a) => synth_audio(a),
        Command::SynthLte(a) => synth_lte(a),
        Command::Features(a) => features(a),
        Command::LteBuild(a) => lte_build(a),
        Command::LteTransform(a) => lte_transform(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Gradcheck(a) => return gradcheck(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn synth_audio(a: SynthAudioArgs) -> Result<()> {
    let m = synth_audio_dataset_with_length(&a.out, a.classes, a.clips, a.splits, a.secs, a.seed)?;
    println!("wrote {} clips and {}", m.entries.len(), a.out.join("manifest.csv").display());
    Ok(())
}

fn synth_lte(a: SynthLteArgs) -> Result<()> {
    let seqs = match a.streams {
        1 => synth_lte_dataset(a.classes, a.per_class, a.length, a.seed)?,
        3 => synth_lte_streams(a.classes, a.per_class, a.length, a.seed)?,
        n => bail!("--streams must be 1 or 3, got {n}"),
    };
    let kinds: &[SeqKind] = if a.streams == 1 {
        &[SeqKind::LteFused]
    } else {
        &[SeqKind::LteGam, SeqKind::LteMfcc, SeqKind::LteLog]
    };
    fs::create_dir_all(&a.out)?;
    let mut entries = Vec::with_capacity(seqs.len());
    for s in &seqs {
        let stem = format!("{}_{:03}", class_name(s.label), s.index_in_class);
        for (data, &kind) in s.streams.iter().zip(kinds) {
            let file = FeatureFile {
                kind,
                noise: NoiseCondition::Dual,
                data: data.clone(),
            };
            write_feature(&stream_path(&a.out.join(&stem), kind), &file)?;
        }
        entries.push(ManifestEntry {
            path: stem,
            label: class_name(s.label),
            test: rotating_splits(s.index_in_class, a.splits, folds(a.per_class)),
        });
    }
    let manifest = Manifest {
        split_names: (1..=a.splits).map(|s| format!("split_{s}")).collect(),
        entries,
        base_dir: a.out.clone(),
    };
    manifest.write(a.out.join("manifest.csv"))?;
    println!("wrote {} sequences and {}", seqs.len(), a.out.join("manifest.csv").display());
    Ok(())
}

fn features(a: FeaturesArgs) -> Result<()> {
    let manifest = Manifest::read(&a.manifest)?;
    let kinds: Vec<SeqKind> = match a.kind.as_str() {
        "gam" => vec![SeqKind::Gam],
        "mfcc" => vec![SeqKind::Mfcc],
        "log" => vec![SeqKind::Log],
        _ => vec![SeqKind::Gam, SeqKind::Mfcc, SeqKind::Log],
    };
    let noises: Vec<NoiseCondition> = match a.noise.as_str() {
        "raw" => vec![NoiseCondition::Raw],
        "denoised" => vec![NoiseCondition::Denoised],
        _ => vec![NoiseCondition::Raw, NoiseCondition::Denoised],
    };
    for entry in &manifest.entries {
        let wav = manifest.resolve(entry);
        let clip = read_wav(&wav).with_context(|| format!("reading {}", wav.display()))?;
        for &noise in &noises {
            for &kind in &kinds {
                let data = segment_features(&clip, kind, noise)?;
                write_feature(&feature_cache_path(&wav, kind, noise), &FeatureFile { kind, noise, data })?;
            }
        }
    }
    println!(
        "cached {} feature files for {} clips",
        manifest.entries.len() * kinds.len() * noises.len(),
        manifest.entries.len()
    );
    Ok(())
}

fn split_index(split: usize, corpus: &Corpus) -> Result<usize> {
    if split == 0 || split > corpus.split_count() {
        bail!("--split {split} is outside 1..={}", corpus.split_count());
    }
    Ok(split - 1)
}

fn load_audio(manifest: &Path) -> Result<Corpus> {
    let corpus = Corpus::load(&Manifest::read(manifest)?)?;
    if !matches!(corpus.content, CorpusContent::Segments(_)) {
        bail!("{} lists embedded sequences; this command needs audio clips", manifest.display());
    }
    Ok(corpus)
}

fn lte_build(a: LteBuildArgs) -> Result<()> {
    let cfg = a.run.resolve()?;
    let corpus = load_audio(&a.manifest)?;
    let split = split_index(a.split, &corpus)?;
    let train = corpus.train_items(split)?;
    let trees = build_trees(&corpus, &train, cfg.stream, split, cfg.train.seed)?;
    save_trees(&a.out, &trees)?;
    fs::write(a.out.join("split.txt"), format!("{}\n", a.split))?;
    println!("built {} trees on {} training clips of split {}", trees.len(), train.len(), a.split);
    Ok(())
}

fn lte_transform(a: LteTransformArgs) -> Result<()> {
    let selection: StreamSelection = a.stream.as_deref().unwrap_or("multi").parse()?;
    // per-stream files; fusion happens when a corpus is loaded
    let selection = if selection == StreamSelection::Fusion {
        StreamSelection::Multi
    } else {
        selection
    };
    let split: usize = fs::read_to_string(a.trees.join("split.txt"))
        .with_context(|| format!("{} was not written by lte-build", a.trees.display()))?
        .trim()
        .parse()
        .context("split.txt")?;
    let manifest = Manifest::read(&a.manifest)?;
    let corpus = load_audio(&a.manifest)?;
    let s = split_index(split, &corpus)?;
    let trees = load_trees(&a.trees, selection)?;
    fs::create_dir_all(&a.out)?;
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(corpus.len());
    for (i, entry) in manifest.entries.iter().enumerate() {
        let stem = Path::new(&entry.path)
            .file_stem()
            .context("manifest path without a file name")?
            .to_string_lossy()
            .into_owned();
        if !seen.insert(stem.clone()) {
            bail!("two clips share the file name {stem}");
        }
        for seq in network_inputs(&corpus, &trees, selection, i)? {
            let file = FeatureFile {
                kind: seq.stream,
                noise: NoiseCondition::Dual,
                data: seq.data,
            };
            write_feature(&stream_path(&a.out.join(&stem), seq.stream), &file)?;
        }
        entries.push(ManifestEntry {
            path: stem,
            label: entry.label.clone(),
            test: vec![entry.test[s]],
        });
    }
    // trees saw this split's training clips only, so only this split stays valid
    let out_manifest = Manifest {
        split_names: vec![manifest.split_names[s].clone()],
        entries,
        base_dir: a.out.clone(),
    };
    out_manifest.write(a.out.join("manifest.csv"))?;
    println!("embedded {} clips into {}", corpus.len(), a.out.display());
    Ok(())
}

fn log_epoch(log: &mut String, split: usize, stream: SeqKind, e: &EpochStats, header: &mut Option<(usize, SeqKind)>) {
    if *header != Some((split, stream)) {
        let _ = writeln!(log, "# split {} stream {}", split + 1, kind_suffix(stream));
        *header = Some((split, stream));
    }
    let _ = writeln!(log, "{}", e.log_line());
    eprintln!("split {} {} epoch {}\tloss {:.6}\t{:.1}s", split + 1, kind_suffix(stream), e.epoch, e.mean_loss, e.wall_secs);
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = a.run.resolve()?;
    let corpus = Corpus::load(&Manifest::read(&a.manifest)?)?;
    let split = split_index(a.split, &corpus)?;
    let mut log = String::from("# epoch\tmean_loss\twall_secs\n");
    let mut header = None;
    let (model, _) = fit_split(&cfg, &corpus, split, |k, e| log_epoch(&mut log, split, k, e, &mut header))?;
    save_model(&a.out, &cfg, &corpus.vocab, &model)?;
    let mut loss = String::from("stream,epoch,mean_loss\n");
    for sm in &model.streams {
        for e in &sm.history {
            let _ = writeln!(loss, "{},{},{:.8}", kind_suffix(sm.stream), e.epoch, e.mean_loss);
        }
    }
    fs::write(a.out.join("loss.csv"), loss)?;
    fs::write(a.out.join("train.log"), log)?;
    println!("trained {} network(s) on split {}; model in {}", model.streams.len(), a.split, a.out.display());
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let corpus = Corpus::load(&Manifest::read(&a.manifest)?)?;
    let audio = matches!(corpus.content, CorpusContent::Segments(_));
    let saved = load_model(&a.model, audio)?;
    if saved.vocab != corpus.vocab {
        bail!(
            "model classes {:?} differ from manifest classes {:?}",
            saved.vocab,
            corpus.vocab
        );
    }
    let mut cfg = saved.config;
    if let Some(s) = &a.scheme {
        cfg.scheme = s.parse()?;
    }
    let items: Vec<usize> = if a.all {
        (0..corpus.len()).collect()
    } else {
        corpus.test_items(split_index(a.split, &corpus)?)?
    };
    let preds = predict_items(&cfg, &corpus, &saved.model, &items)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["path".to_string(), "label".into(), "predicted".into()];
    header.extend(corpus.vocab.iter().cloned());
    w.write_record(&header)?;
    for p in &preds {
        let mut rec = vec![
            corpus.ids[p.item].clone(),
            corpus.vocab[corpus.labels[p.item]].clone(),
            corpus.vocab[p.decision].clone(),
        ];
        rec.extend(p.likelihood.iter().map(|v| format!("{v:.6e}")));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner()?;
    match &a.out {
        Some(path) => fs::write(path, &bytes)?,
        None => std::io::stdout().write_all(&bytes)?,
    }
    let truth: Vec<usize> = preds.iter().map(|p| corpus.labels[p.item]).collect();
    let decided: Vec<usize> = preds.iter().map(|p| p.decision).collect();
    let m = metrics(&decided, &truth, corpus.classes())?;
    eprintln!("{} clips, accuracy {:.4} ({} scheme)", m.count, m.accuracy, cfg.scheme);
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let cfg = a.run.resolve()?;
    let corpus = Corpus::load(&Manifest::read(&a.manifest)?)?;
    let mut log = String::from("# epoch\tmean_loss\twall_secs\n");
    let mut header = None;
    let outcome = run_experiment(&cfg, &corpus, |s, k, e| log_epoch(&mut log, s, k, e, &mut header))?;
    fs::create_dir_all(&a.out)?;
    let summary = summary_text(&cfg, &corpus, &outcome);
    fs::write(a.out.join("config.txt"), cfg.to_text())?;
    fs::write(a.out.join("metrics.csv"), metrics_csv(&outcome))?;
    fs::write(a.out.join("summary.txt"), &summary)?;
    fs::write(a.out.join("loss.csv"), loss_csv(&outcome))?;
    fs::write(a.out.join("train.log"), log)?;
    print!("{summary}");
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> ExitCode {
    match run_gradcheck(&a) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Coordinates whose finite-difference reference cannot resolve 1e-5
/// relative error are judged against this absolute floor instead.
const FD_NOISE_FLOOR: f64 = 1e-10;

fn run_gradcheck(a: &GradcheckArgs) -> Result<bool> {
    let mut rng = SeededRng::new(a.seed);
    let mut all_ok = true;
    println!("case\tlayers\thidden\tinput\tsteps\tclasses\tl2\tcoords\tmax_rel\tbeyond_tol");
    for case in 1..=a.cases {
        let l = a.layers.unwrap_or_else(|| 1 + rng.below(2));
        let h = a.hidden.unwrap_or_else(|| 1 + rng.below(16));
        let d = 1 + rng.below(8);
        let t = 1 + rng.below(12);
        let c = 2 + rng.below(4);
        let l2 = if rng.bernoulli(0.5) { 0.0 } else { 1e-3 };
        let mut params = init_network(d, h, l, c, &mut rng)?;
        for tensor in params.tensors_mut() {
            for v in tensor.iter_mut().filter(|v| **v == 0.0) {
                *v = rng.uniform_range(-0.5, 0.5);
            }
        }
        let batch: Vec<LabeledSubsequence> = (0..3)
            .map(|_| -> Result<LabeledSubsequence> {
                Ok(LabeledSubsequence {
                    x: Matrix::from_vec(t, d, (0..t * d).map(|_| rng.normal()).collect())?,
                    label: rng.below(c),
                    parent_id: 0,
                    stream_id: 0,
                })
            })
            .collect::<Result<_>>()?;
        let g = gradient_check(&batch, &params, l2, a.eps)?;
        let rel = g.relative_errors(0.0);
        let beyond = rel
            .iter()
            .zip(g.analytic.iter().zip(&g.numeric))
            .filter(|(e, (x, y))| **e > 1e-5 && (*x - *y).abs() > FD_NOISE_FLOOR)
            .count();
        let max_rel = rel.iter().cloned().fold(0.0, f64::max);
        all_ok &= beyond == 0;
        println!("{case}\t{l}\t{h}\t{d}\t{t}\t{c}\t{l2}\t{}\t{max_rel:.3e}\t{beyond}", rel.len());
    }
    println!("{}", if all_ok { "gradients agree" } else { "gradient mismatch" });
    Ok(all_ok)
}

fn report(a: ReportArgs) -> Result<()> {
    println!("{:<40} {:>6} {:>17} {:>17} {:>17}", "run", "splits", "accuracy", "precision", "f1");
    for run in &a.runs {
        let path = if run.is_dir() { run.join("metrics.csv") } else { run.clone() };
        let mut reader = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
        let mut cols: [Vec<f64>; 3] = Default::default();
        for rec in reader.records() {
            let rec = rec?;
            if rec.get(0) == Some("mean") {
                continue;
            }
            for (j, col) in cols.iter_mut().enumerate() {
                let v = rec.get(j + 1).context("short metrics row")?;
                col.push(v.parse().with_context(|| format!("{}: bad number {v:?}", path.display()))?);
            }
        }
        if cols[0].is_empty() {
            bail!("{} has no split rows", path.display());
        }
        let cell = |v: &[f64]| {
            let s = lte_gru::metrics::Spread::of(v);
            format!("{:.4} ± {:.4}", s.mean, s.std)
        };
        println!(
            "{:<40} {:>6} {:>17} {:>17} {:>17}",
            run.display().to_string(),
            cols[0].len(),
            cell(&cols[0]),
            cell(&cols[1]),
            cell(&cols[2])
        );
    }
    Ok(())
}
