use std::path::Path;
use std::process::{Command, Output};

use vididi_core::config::ExperimentConfig;
use vididi_core::eval::{self, LabeledEmbeddings, MetricSettings, ProbeSettings, Report};
use vididi_core::synth::Split;

fn vididi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vididi")).args(args).env_remove("VIDIDI_SEED").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = vididi(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn generate(dir: &Path, videos: usize) {
    ok(&["generate", "--videos", &videos.to_string(), "--g-classes", "4", "--bg-classes", "2", "--frames", "16", "--size", "16", "--seed", "4", "--out", p(dir)]);
}

/// A config small enough to train in well under a second.
fn write_config(dir: &Path, dataset: &Path, edit: impl FnOnce(&mut ExperimentConfig)) -> std::path::PathBuf {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset = dataset.to_path_buf();
    cfg.clip.frames = 3;
    cfg.clip.stride = 2;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 4;
    cfg.augment.out_height = 8;
    cfg.augment.out_width = 8;
    cfg.net.encoder_hidden = vec![16];
    cfg.net.feature_dim = 8;
    cfg.net.projector_hidden_dim = 16;
    cfg.net.projector_out = 8;
    cfg.net.predictor_hidden_dim = 16;
    cfg.eval.clips = 2;
    cfg.eval.ks = vec![1, 3];
    cfg.eval.probe_epochs = 20;
    edit(&mut cfg);
    let path = dir.join("exp.toml");
    cfg.save(&path).unwrap();
    path
}

fn log_pairs(run: &Path) -> Vec<(u8, u8)> {
    let text = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&header[..8], ["step", "epoch", "batch", "order_a", "order_b", "lr", "tau", "loss"]);
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[3].parse().unwrap(), f[4].parse().unwrap())
        })
        .collect()
}

#[test]
fn generate_writes_a_reproducible_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let summary = ok(&["generate", "--videos", "64", "--frames", "12", "--size", "16", "--seed", "9", "--out", p(&a)]);
    assert!(summary.contains("videos=64"), "{summary}");
    ok(&["generate", "--videos", "64", "--frames", "12", "--size", "16", "--seed", "9", "--out", p(&b), "--workers", "3"]);
    let dirs = std::fs::read_dir(&a).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(dirs, 64);
    let manifest = std::fs::read(a.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.iter().filter(|&&c| c == b'\n').count(), 64);
    assert_eq!(manifest, std::fs::read(b.join("manifest.jsonl")).unwrap());
    for i in [0, 31, 63] {
        let clip = format!("video_{i:05}/clip.vddi");
        assert_eq!(std::fs::read(a.join(&clip)).unwrap(), std::fs::read(b.join(&clip)).unwrap());
    }
}

#[test]
fn infeasible_generation_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vididi(&["generate", "--videos", "3", "--g-classes", "4", "--out", p(&tmp.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn base_schedule_never_differentiates() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, 16);
    let cfg = write_config(tmp.path(), &data, |c| c.schedule = "base".parse().unwrap());
    let run = tmp.path().join("run");
    ok(&["train", "-c", p(&cfg), "--out", p(&run)]);
    let pairs = log_pairs(&run);
    // 8 training videos in batches of 4 over 2 epochs.
    assert_eq!(pairs.len(), 2 * 2);
    assert!(pairs.iter().all(|&pr| pr == (0, 0)));
    assert!(run.join("checkpoint.vddi").exists());
    assert!(run.join("config.toml").exists());
}

#[test]
fn frozen_coin_follows_the_epoch_cycle() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, 8);
    let cfg = write_config(tmp.path(), &data, |_| {});
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["train", "-c", p(&cfg), "--epochs", "4", "--freeze-random-diff", "--out", p(&a)]);
    let pairs = log_pairs(&a);
    let per_epoch = pairs.len() / 4;
    let cycle = [(1, 1), (1, 0), (0, 1), (0, 0)];
    for (i, pr) in pairs.iter().enumerate() {
        assert_eq!(*pr, cycle[i / per_epoch], "step {i}");
    }
    ok(&["train", "-c", p(&cfg), "--epochs", "4", "--freeze-random-diff", "--out", p(&b)]);
    assert_eq!(std::fs::read(a.join("train_log.csv")).unwrap(), std::fs::read(b.join("train_log.csv")).unwrap());
}

#[test]
fn overrides_and_seed_flags_apply() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, 8);
    let cfg = write_config(tmp.path(), &data, |_| {});
    let run = tmp.path().join("run");
    ok(&["train", "-c", p(&cfg), "--override", "objective=simclr", "--override", "train.epochs=1", "--seed", "42", "--out", p(&run)]);
    let saved = ExperimentConfig::load(&run.join("config.toml")).unwrap();
    assert_eq!(saved.objective.name(), "simclr");
    assert_eq!(saved.seed, 42);
    assert_eq!(log_pairs(&run).len(), 2);
    let out = vididi(&["train", "-c", p(&cfg), "--override", "train.nope=1", "--out", p(&run)]);
    assert_eq!(out.status.code(), Some(2));
}

fn read_report(path: &Path) -> Report {
    Report::parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn eval_report_matches_recomputed_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, 16);
    let cfg = write_config(tmp.path(), &data, |_| {});
    let run = tmp.path().join("run");
    ok(&["train", "-c", p(&cfg), "--out", p(&run)]);
    let out = tmp.path().join("eval");
    ok(&["eval", "--checkpoint", p(&run.join("checkpoint.vddi")), "--labels", "both", "--svg", "--out", p(&out)]);
    let report = read_report(&out.join("report.txt"));
    assert_eq!(report.get("videos"), Some("16"));
    let settings = MetricSettings { ks: vec![1, 3], metric: eval::Metric::Cosine, probe: ProbeSettings { epochs: 20, lr: 0.5, seed: 0 } };
    for kind in ["dynamic", "static"] {
        for key in ["recall@1", "recall@3", "silhouette", "probe_accuracy"] {
            assert!(report.get(&format!("{kind}.{key}")).is_some(), "{kind}.{key} missing");
        }
        let e = LabeledEmbeddings::load_csv(&out.join(format!("embeddings_{kind}.csv"))).unwrap();
        assert_eq!(e.len(), 16);
        let recall = eval::knn_recall(&e.split(Split::Train).unwrap(), &e.split(Split::Test).unwrap(), &[1, 3], eval::Metric::Cosine).unwrap();
        for (k, r) in recall {
            assert_eq!(report.get_f64(&format!("{kind}.recall@{k}")), Some(r));
        }
        let mut again = Report::default();
        eval::evaluate(&e, &settings, &format!("{kind}."), &mut again).unwrap();
        for (key, value) in &again.entries {
            assert_eq!(report.get(key), Some(value.as_str()), "{key}");
        }
        assert!(std::fs::read_to_string(out.join(format!("scatter_{kind}.svg"))).unwrap().starts_with("<svg"));
    }
    // Static labels differ from dynamic ones, so at least one metric should too.
    assert_ne!(
        (report.get("dynamic.recall@1"), report.get("dynamic.silhouette")),
        (report.get("static.recall@1"), report.get("static.silhouette"))
    );
}

#[test]
fn compare_emits_two_rows_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, 16);
    let cfg = write_config(tmp.path(), &data, |_| {});
    let out = tmp.path().join("cmp");
    ok(&["compare", "-c", p(&cfg), "--seeds", "2", "--epochs", "1", "--workers", "2", "--out", p(&out)]);
    let table = std::fs::read_to_string(out.join("compare.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for (row, (seed, schedule)) in rows.iter().zip([(0, "base"), (0, "vididi"), (1, "base"), (1, "vididi")]) {
        assert!(row.starts_with(&format!("{seed},{schedule},")), "{row}");
    }
    let summary = read_report(&out.join("summary.txt"));
    assert!(summary.get_f64("vididi.dynamic.recall@1.mean").is_some());
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = vididi(&["train", "-c", "/nonexistent/exp.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn non_finite_loss_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, 8);
    let cfg = write_config(tmp.path(), &data, |c| {
        c.objective = "simclr".parse().unwrap();
        c.loss.temperature = 1e-320;
    });
    let out = vididi(&["train", "-c", p(&cfg), "--out", p(&tmp.path().join("run"))]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite loss at step 0"));
}
