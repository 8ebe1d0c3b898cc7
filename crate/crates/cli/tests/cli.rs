use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lte-gru"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: [&str; 10] = [
    "--hidden", "6", "--layers", "1", "--epochs", "3", "--learning-rate", "0.01", "--subseq-len", "16",
];

#[test]
fn synthetic_lte_evaluation_writes_reports_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth-lte", "--out", p(&data), "--classes", "3", "--per-class", "8", "--length", "40", "--splits", "2", "--seed", "4"]);
    let manifest = data.join("manifest.csv");
    let mut outputs = Vec::new();
    for run_dir in ["a", "b"] {
        let out = dir.path().join(run_dir);
        let mut args = vec!["evaluate", "--manifest", p(&manifest), "--out", p(&out), "--seed", "3"];
        args.extend(SMALL);
        let stdout = ok(&args);
        assert!(stdout.contains("mean: accuracy"));
        let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
        let rows: Vec<&str> = metrics.lines().collect();
        assert_eq!(rows[0], "split,accuracy,macro_precision,macro_f1");
        assert_eq!(rows.len(), 4);
        assert!(rows[3].starts_with("mean,"));
        let loss = fs::read_to_string(out.join("loss.csv")).unwrap();
        assert_eq!(loss.lines().count(), 1 + 2 * 3);
        let log = fs::read_to_string(out.join("train.log")).unwrap();
        let epochs: Vec<&str> = log.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(epochs.len(), 6);
        assert!(epochs.iter().all(|l| l.split('\t').count() == 3));
        outputs.push((metrics, loss, fs::read_to_string(out.join("summary.txt")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);

    let table = ok(&["report", p(&dir.path().join("a")), p(&dir.path().join("b").join("metrics.csv"))]);
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth-lte", "--out", p(&data), "--classes", "2", "--per-class", "4", "--length", "32", "--streams", "3"]);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# small run\nhidden = 4\nlayers = 1\nepochs = 1\nsubseq_len = 8\nstream = fusion\nscheme = maxpv\n").unwrap();
    let out = dir.path().join("eval");
    ok(&[
        "evaluate", "--manifest", p(&data.join("manifest.csv")), "--out", p(&out), "--config", p(&cfg), "--hidden", "5",
        "--scheme", "mv", "--svm-calibration",
    ]);
    let used = fs::read_to_string(out.join("config.txt")).unwrap();
    for line in ["hidden = 5", "epochs = 1", "subseq-len = 8", "scheme = mv", "stream = fusion", "svm-calibration = true"] {
        assert!(used.contains(line), "{line} missing from\n{used}");
    }
    assert!(fs::read_to_string(out.join("summary.txt")).unwrap().contains("softmax baseline"));
}

#[test]
fn audio_pipeline_through_cached_stages() {
    let dir = tempfile::tempdir().unwrap();
    let audio = dir.path().join("audio");
    ok(&["synth-audio", "--out", p(&audio), "--classes", "2", "--clips", "4", "--secs", "4", "--seed", "2"]);
    let manifest = audio.join("manifest.csv");
    ok(&["features", "--manifest", p(&manifest), "--kind", "all", "--noise", "both"]);
    assert!(audio.join("class_00_000.wav.mfcc.denoised.featseq").exists());

    let trees = dir.path().join("trees");
    ok(&["lte-build", "--manifest", p(&manifest), "--out", p(&trees), "--stream", "gam"]);
    assert!(trees.join("gam.raw.tree").exists() && trees.join("gam.denoised.tree").exists());
    let emb = dir.path().join("emb");
    ok(&["lte-transform", "--manifest", p(&manifest), "--trees", p(&trees), "--out", p(&emb), "--stream", "gam"]);
    assert!(emb.join("class_01_003.gam.featseq").exists());
    let (emb_manifest, eval) = (emb.join("manifest.csv"), dir.path().join("eval"));
    let mut args = vec!["evaluate", "--manifest", p(&emb_manifest), "--out", p(&eval), "--stream", "gam"];
    args.extend(SMALL);
    ok(&args);

    let model = dir.path().join("model");
    let mut args = vec!["train", "--manifest", p(&manifest), "--out", p(&model), "--stream", "log"];
    args.extend(SMALL);
    ok(&args);
    for f in ["config.txt", "classes.txt", "network.log.ckpt", "trees/log.raw.tree", "loss.csv", "train.log"] {
        assert!(model.join(f).exists(), "{f}");
    }
    let csv = ok(&["predict", "--model", p(&model), "--manifest", p(&manifest), "--all"]);
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "path,label,predicted,class_00,class_01");
    assert_eq!(rows.len(), 9);
}

#[test]
fn missing_artifacts_and_bad_flags_fail_with_messages() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["evaluate", "--manifest", p(&dir.path().join("none.csv")), "--out", p(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest"));

    fs::write(dir.path().join("m.csv"), "path,label,split_1\nx.wav,a,train\ny.wav,b,test\n").unwrap();
    let out = run(&["train", "--manifest", p(&dir.path().join("m.csv")), "--out", p(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("x.wav"));

    assert!(!run(&["evaluate", "--manifest", "m.csv", "--out", ".", "--scheme", "sum"]).status.success());
    assert!(!run(&["predict", "--model", p(dir.path()), "--manifest", p(&dir.path().join("m.csv"))]).status.success());
}

#[test]
fn gradcheck_reports_agreement() {
    let stdout = ok(&["gradcheck", "--cases", "3", "--seed", "1"]);
    assert_eq!(stdout.lines().count(), 5);
    assert!(stdout.ends_with("gradients agree\n"));
}
