//! End-to-end behaviour of the `watchdog` binary on a tiny configuration.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use watchdog_cli::RunManifest;
use watchdog_core::data::{load_dataset, netpbm, Image};
use watchdog_core::pipeline::EvaluationReport;

const TINY: &str = r#"
[dataset]
seed = 11
train_in = 160
val_in = 40
val_ood = 40
eval_in = 30
eval_ood = 60
generated = 30

[dataset.synthetic]
classes = 4
height = 12
width = 12
position_jitter = 0.5

[autoencoder]
hidden = [48, 16, 48]

[autoencoder.train]
epochs = 6
batch_size = 16

[generator]
target = 0.6
tolerance = 0.05
max_iterations = 80
retry_budget = 300

[binary]
hidden = [16]

[binary.train]
epochs = 4
batch_size = 16
validation_fraction = 0.25

[core]
hidden = [24]

[core.train]
epochs = 4
batch_size = 16

[pipeline]
triptychs = 2
"#;

fn watchdog(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_watchdog"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Run {
    _tmp: tempfile::TempDir,
    config: PathBuf,
    out: PathBuf,
}

impl Run {
    fn new(config_text: &str) -> Run {
        let tmp = tempfile::tempdir().unwrap();
        let config = tmp.path().join("experiment.toml");
        std::fs::write(&config, config_text).unwrap();
        let out = tmp.path().join("out");
        Run {
            _tmp: tmp,
            config,
            out,
        }
    }

    fn cmd(&self, stage: &str) -> Output {
        self.cmd_with(stage, &[])
    }

    fn cmd_with(&self, stage: &str, extra: &[&str]) -> Output {
        let mut args = vec![
            stage,
            "--config",
            self.config.to_str().unwrap(),
            "--out",
            self.out.to_str().unwrap(),
            "--quiet",
        ];
        args.extend_from_slice(extra);
        watchdog(&args)
    }

    fn ok(&self, stage: &str) {
        let o = self.cmd(stage);
        assert_eq!(o.status.code(), Some(0), "{stage}: {}", stderr(&o));
    }

    fn manifest(&self) -> RunManifest {
        RunManifest::load(&self.out)
            .unwrap()
            .expect("manifest written")
    }
}

fn checksums(m: &RunManifest, stage: &str) -> Vec<(String, String)> {
    m.stages[stage]
        .files
        .iter()
        .map(|f| (f.path.clone(), f.sha256.clone()))
        .collect()
}

#[test]
fn stages_refuse_to_run_before_their_dependencies() {
    let run = Run::new(TINY);
    let o = run.cmd("train-ae");
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("synth-data"), "{}", stderr(&o));

    run.ok("synth-data");
    for stage in ["gen-boundary", "calibrate", "train-binary"] {
        let o = run.cmd(stage);
        assert_eq!(o.status.code(), Some(3), "{stage}");
        assert!(stderr(&o).contains("train-ae"), "{}", stderr(&o));
    }
    let o = run.cmd("evaluate");
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn malformed_config_names_the_key() {
    let run = Run::new("[autoencoder.train]\nepochs = \"many\"\n");
    let o = run.cmd("synth-data");
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("autoencoder.train.epochs"),
        "{}",
        stderr(&o)
    );

    let run = Run::new("[dataset]\nbogus = 1\n");
    let o = run.cmd("synth-data");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));

    let run = Run::new("[calibration]\ngrid_step = 0.3\n");
    let o = run.cmd("synth-data");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("calibration"), "{}", stderr(&o));

    let run = Run::new("[dataset\n");
    assert_eq!(run.cmd("synth-data").status.code(), Some(2));

    assert_eq!(watchdog(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn unwritable_output_directory_is_a_config_error() {
    let run = Run::new(TINY);
    let blocker = run.config.parent().unwrap().join("plain-file");
    std::fs::write(&blocker, b"x").unwrap();
    let out = blocker.join("out");
    let o = watchdog(&[
        "synth-data",
        "--config",
        run.config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not writable"), "{}", stderr(&o));
}

#[test]
fn corrupt_image_is_bad_input() {
    let run = Run::new(TINY);
    let bad = run.config.parent().unwrap().join("bad.pgm");
    std::fs::write(&bad, b"P5\n12 x\n255\n").unwrap();
    let o = run.cmd_with("score", &["--image", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("byte"), "{}", stderr(&o));
    let missing = run.config.parent().unwrap().join("missing.pgm");
    let o = run.cmd_with("score", &["--image", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn a_locked_output_directory_is_refused() {
    let run = Run::new(TINY);
    std::fs::create_dir_all(&run.out).unwrap();
    let lock = std::fs::File::create(run.out.join(".lock")).unwrap();
    lock.try_lock().unwrap();
    let o = run.cmd("synth-data");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("locked"), "{}", stderr(&o));
}

#[test]
fn synth_data_is_reproducible_and_seed_override_changes_it() {
    let run = Run::new(TINY);
    run.ok("synth-data");
    let first = checksums(&run.manifest(), "synth-data");
    run.ok("synth-data");
    assert_eq!(first, checksums(&run.manifest(), "synth-data"));
    let mixed = load_dataset(run.out.join("data/eval-mixed")).unwrap();
    assert_eq!(mixed.count_by_distribution(), (30, 60));
    assert_eq!(
        load_dataset(run.out.join("data/train-in")).unwrap().len(),
        160
    );

    let o = run.cmd_with("synth-data", &["--seed", "99"]);
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(first, checksums(&run.manifest(), "synth-data"));
}

fn write_image(path: &Path, image: &Image) {
    netpbm::write(image, path).unwrap();
}

#[test]
fn full_run_is_complete_reproducible_and_auditable() {
    let run = Run::new(TINY);
    run.ok("run");
    let manifest = run.manifest();
    assert_eq!(manifest.stages.len(), 7);
    assert_eq!(run.cmd("audit").status.code(), Some(0));

    // every stage reproduces its files exactly
    for stage in [
        "synth-data",
        "train-ae",
        "calibrate",
        "gen-boundary",
        "train-binary",
        "train-core",
        "evaluate",
    ] {
        run.ok(stage);
        assert_eq!(
            checksums(&manifest, stage),
            checksums(&run.manifest(), stage),
            "{stage} changed on rerun"
        );
    }

    let text = std::fs::read_to_string(run.out.join("evaluation/report.json")).unwrap();
    let report: EvaluationReport = serde_json::from_str(&text).unwrap();
    for m in [&report.unguarded, &report.guarded] {
        assert_eq!(m.counts.total(), 90);
        assert!((0.0..=1.0).contains(&m.auc));
    }
    assert_eq!(report.baseline.samples, 30);
    let csv = std::fs::read_to_string(run.out.join("evaluation/comparison_roc.csv")).unwrap();
    let mut curves: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    curves.dedup();
    assert_eq!(curves, ["unguarded", "guarded", "baseline"]);
    for name in ["autoencoder", "binary", "core"] {
        let hist = std::fs::read_to_string(run.out.join(name).join("history.csv")).unwrap();
        assert!(hist.starts_with("epoch,train_loss,val_loss,train_acc,val_acc\n"));
    }

    // single-image scoring prints a parsable verdict
    let sample = load_dataset(run.out.join("data/eval-in"))
        .unwrap()
        .samples()[0]
        .image
        .clone();
    let img = run.config.parent().unwrap().join("probe.pgm");
    write_image(&img, &sample);
    let o = run.cmd_with("score", &["--image", img.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["outcome"].is_string());
    assert!(v["tier1_score"].is_number());

    let wrong = Image::filled(8, 8, 1, 0.5).unwrap();
    write_image(&img, &wrong);
    assert_eq!(
        run.cmd_with("score", &["--image", img.to_str().unwrap()])
            .status
            .code(),
        Some(4)
    );

    // tampering is caught by the audit
    std::fs::write(run.out.join("core/report.json"), b"{}").unwrap();
    let o = run.cmd("audit");
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("core/report.json"), "{}", stderr(&o));
}
