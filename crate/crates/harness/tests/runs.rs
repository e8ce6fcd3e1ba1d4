//! End-to-end runs: config strictness, artifact layout, reproducibility
//! and cleanup after a failed write.

use std::fs;
use std::path::Path;
use std::process::Command;

use lhuc_harness::config::{load_config, parse_config, ExperimentConfig, ExperimentKind};
use lhuc_harness::experiments::Outcome;
use lhuc_harness::metrics::read_metrics;
use lhuc_harness::run::{run, run_config_file, METRICS_FILE, RESOLVED_CONFIG, SUMMARY_FILE};

/// A small two-pass setup: 20 held-out speakers, few training frames.
fn small_two_pass(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(ExperimentKind::TwoPass, dir);
    cfg.task.n_train_speakers = 8;
    cfg.task.frames_per_speaker_per_env = 60;
    cfg.network.hidden = vec![16, 16];
    cfg.train.max_epochs = 4;
    cfg
}

#[test]
fn unknown_keys_are_rejected_by_name() {
    let base = "kind = \"train_si\"\noutput_dir = \"out\"\n";
    assert!(parse_config(base).is_ok());
    let err = parse_config(&format!("{base}learning_rate = 0.1\n")).unwrap_err().to_string();
    assert!(err.contains("learning_rate"), "{err}");
    let err = parse_config(&format!("{base}[train]\nintial_lr = 0.1\n")).unwrap_err().to_string();
    assert!(err.contains("intial_lr"), "{err}");
    assert!(parse_config("kind = \"train_mlp\"\noutput_dir = \"o\"\n").is_err());
    assert!(parse_config(&format!("{base}[sat]\ngamma = 1.5\n")).is_err());
    assert!(parse_config(&format!("{base}[network]\nhidden = []\n")).is_err());
}

#[test]
fn rerun_from_resolved_config_is_byte_identical() {
    let root = tempfile::tempdir().unwrap();
    let first = root.path().join("a");
    let report = run(&small_two_pass(&first)).unwrap();
    assert!(report.files.iter().all(|f| f.exists()));

    // point the resolved config at a new directory and run it again
    let mut again = load_config(&first.join(RESOLVED_CONFIG)).unwrap();
    let second = root.path().join("b");
    again.output_dir = second.clone();
    let path = root.path().join("again.toml");
    fs::write(&path, again.to_toml().unwrap()).unwrap();
    run_config_file(&path).unwrap();

    for f in [METRICS_FILE, SUMMARY_FILE, "per_speaker.csv", "si.ckpt"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn two_pass_reports_every_speaker_and_one_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let report = run(&small_two_pass(dir.path())).unwrap();
    let recs = read_metrics(&dir.path().join(METRICS_FILE)).unwrap();
    let adapted: Vec<_> = recs.iter().filter(|r| r.metric == "adapted_fer").collect();
    assert_eq!(adapted.iter().filter(|r| r.cluster.is_some()).count(), 20);
    assert_eq!(adapted.iter().filter(|r| r.cluster.is_none()).count(), 1);
    assert!(recs.iter().all(|r| r.experiment == "two_pass" && r.schema == 1));
    let Outcome::TwoPass(o) = report.outcome else { panic!("wrong outcome") };
    assert_eq!(o.lhuc.len(), 20);
    let table = fs::read_to_string(dir.path().join("per_speaker.csv")).unwrap();
    assert_eq!(table.lines().count(), 21);
}

#[test]
fn failed_write_removes_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    // a directory where the summary file should go makes the last write fail
    fs::create_dir_all(out.join(SUMMARY_FILE)).unwrap();
    let mut cfg = ExperimentConfig::new(ExperimentKind::Gradcheck, &out);
    cfg.gradcheck.cases = 2;
    assert!(run(&cfg).is_err());
    let left: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(left, vec![std::ffi::OsString::from(SUMMARY_FILE)]);

    // a fresh directory is removed entirely
    let blocked = dir.path().join("file");
    fs::write(&blocked, b"x").unwrap();
    let mut cfg = ExperimentConfig::new(ExperimentKind::Gradcheck, blocked.join("sub"));
    cfg.gradcheck.cases = 2;
    assert!(run(&cfg).is_err());
    assert_eq!(fs::read(&blocked).unwrap(), b"x");
}

#[test]
fn bump_demo_writes_a_sorted_curve_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(ExperimentKind::BumpDemo, dir.path());
    cfg.bump.mixture_seeds = vec![1];
    let Outcome::BumpDemo(o) = run(&cfg).unwrap().outcome else { panic!("wrong outcome") };
    assert!(o.adapted_mse < o.unadapted_mse);
    let text = fs::read_to_string(dir.path().join("bump_fig1.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "x,target,si_prediction,adapted_prediction");
    let xs: Vec<f64> = lines
        .map(|l| {
            let cols: Vec<f64> = l.split(',').map(|c| c.parse().unwrap()).collect();
            assert_eq!(cols.len(), 4);
            cols[0]
        })
        .collect();
    assert_eq!(xs.len(), cfg.bump.spec.n_points);
    assert!(xs.windows(2).all(|w| w[0] <= w[1]));
    assert!(dir.path().join("bump_mixture.csv").exists());
}

#[test]
fn cli_runs_configs_and_inspects_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("c.toml");
    let out = dir.path().join("out");
    fs::write(
        &cfg_path,
        format!(
            "kind = \"train_si\"\noutput_dir = {:?}\n[network]\nhidden = [8]\n[train]\nmax_epochs = 2\n\
             [task]\nn_train_speakers = 3\nn_test_speakers = 2\nframes_per_speaker_per_env = 40\n",
            out.display().to_string()
        ),
    )
    .unwrap();
    let bin = env!("CARGO_BIN_EXE_lhuc");
    let status = Command::new(bin).args(["run"]).arg(&cfg_path).status().unwrap();
    assert!(status.success());
    let inspect = Command::new(bin).arg("inspect").arg(out.join("si.ckpt")).output().unwrap();
    assert!(inspect.status.success());
    assert!(!inspect.stdout.is_empty());

    fs::write(&cfg_path, "kind = \"train_si\"\noutput_dir = \"x\"\nbogus = 1\n").unwrap();
    let bad = Command::new(bin).arg("run").arg(&cfg_path).output().unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("bogus"));

    let corrupt = dir.path().join("bad.ckpt");
    let mut bytes = fs::read(out.join("si.ckpt")).unwrap();
    bytes.truncate(bytes.len() / 2);
    fs::write(&corrupt, bytes).unwrap();
    assert!(!Command::new(bin).arg("inspect").arg(&corrupt).output().unwrap().status.success());
}
