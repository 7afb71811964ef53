use std::path::Path;
use std::process::Command;

use rsmp::metrics::read_matrix_csv;
use rsmp::schedule::read_schedule_csv;
use rsmp::tables::AccuracyTable;
use rsmp::ExperimentConfig;
use rsmp_cli::{
    evaluate, itr, rsq, simulate, BundledTable, ConfigArgs, EvaluateArgs, ItrArgs, Mode, RsqArgs, SimulateArgs,
    TimingArgs,
};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rsmp"))
}

fn small_config(dir: &Path, seed: u64) -> std::path::PathBuf {
    let cfg = ExperimentConfig {
        trials_per_run: 2,
        n_runs_train: 2,
        n_runs_test: 1,
        repetitions: 4,
        rng_seed: seed,
        ..ExperimentConfig::exp2(0.25)
    };
    let path = dir.join("small.txt");
    cfg.write(&path).unwrap();
    path
}

fn sim_args(config: ConfigArgs, out: &Path) -> SimulateArgs {
    SimulateArgs {
        config,
        out: out.to_path_buf(),
    }
}

#[test]
fn exp1_preset_gives_ten_trials() {
    let dir = tempfile::tempdir().unwrap();
    let config = ConfigArgs {
        preset: Some("exp1-v".into()),
        ..Default::default()
    };
    let summary = simulate(&sim_args(config, dir.path())).unwrap();
    assert_eq!(summary.len(), 1);
    assert_eq!(summary[0].n_trials, 10);
    assert_eq!(summary[0].n_events, 750);
    let events = read_schedule_csv(std::fs::File::open(dir.path().join("train_schedule.csv")).unwrap()).unwrap();
    assert_eq!(events.len(), 750);
    assert!(dir.path().join("manifest.json").is_file());
    assert!(!dir.path().join("test.meta.json").exists());
}

#[test]
fn short_soa_trials_span_seven_and_a_half_seconds() {
    let dir = tempfile::tempdir().unwrap();
    let config = ConfigArgs {
        preset: Some("exp2-soa100".into()),
        ..Default::default()
    };
    simulate(&sim_args(config, dir.path())).unwrap();
    let events = read_schedule_csv(std::fs::File::open(dir.path().join("train_schedule.csv")).unwrap()).unwrap();
    let first: Vec<_> = events.iter().filter(|e| e.trial_id == 0).collect();
    assert_eq!(first.len(), 75);
    let span = first.last().unwrap().onset_s - first[0].onset_s + 0.1;
    assert!((span - 7.5).abs() < 1e-9);
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 5);
    for run in ["a", "b"] {
        let config = ConfigArgs {
            config: Some(cfg.clone()),
            ..Default::default()
        };
        simulate(&sim_args(config, &dir.path().join(run))).unwrap();
    }
    for f in ["config.txt", "train.f32", "train.meta.json", "test.f32", "train_schedule.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}

#[test]
fn evaluate_writes_one_row_per_repetition() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 6);
    let data = dir.path().join("data");
    let config = ConfigArgs {
        config: Some(cfg),
        ..Default::default()
    };
    simulate(&sim_args(config, &data)).unwrap();
    for (mode, out) in [(Mode::Loo, "loo"), (Mode::TrainTest, "tt")] {
        let out = dir.path().join(out);
        let report = evaluate(&EvaluateArgs {
            input: data.clone(),
            mode,
            repetitions: None,
            allow_overlap: false,
            out: out.clone(),
        })
        .unwrap();
        assert_eq!(report.per_repetition.len(), 4);
        let text = std::fs::read_to_string(out.join("accuracy.csv")).unwrap();
        let table = AccuracyTable::parse(&text).unwrap();
        let rs: Vec<usize> = table.rows.iter().map(|r| r.repetitions).collect();
        assert_eq!(rs, vec![1, 2, 3, 4]);
        for (row, acc) in table.rows.iter().zip(&report.per_repetition) {
            assert!((row.accuracy - acc.accuracy).abs() < 1e-12);
        }
        let decisions = std::fs::read_to_string(out.join("decisions.csv")).unwrap();
        let expected_trials = if mode == Mode::Loo { 4 } else { 2 };
        assert_eq!(decisions.lines().count(), expected_trials + 1);
        assert_eq!(out.join("model.json").is_file(), mode == Mode::TrainTest);
    }
}

#[test]
fn itr_on_bundled_tables() {
    let report = itr(&ItrArgs {
        table: None,
        bundled: Some(BundledTable::Table2),
        timing: TimingArgs::default(),
        soa: None,
        repetitions: None,
        out: None,
    })
    .unwrap();
    let means: Vec<f64> = report.cells.iter().map(|c| c.mean_itr).collect();
    for (got, want) in means.iter().zip([1.23, 4.28, 1.76]) {
        assert!((got - want).abs() <= 0.02);
    }
    let av = itr(&ItrArgs {
        table: None,
        bundled: Some(BundledTable::Table1),
        timing: TimingArgs::default(),
        soa: None,
        repetitions: Some(1),
        out: None,
    })
    .unwrap();
    assert!((av.cell("AV", 1).unwrap().mean_itr - 2.73).abs() <= 0.01);
}

#[test]
fn itr_on_a_file_writes_documents() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("one.csv");
    std::fs::write(&table, "group,soa_s,subject,repetitions,accuracy\nx,1,s1,15,0.2\n").unwrap();
    let out = dir.path().join("out");
    let report = itr(&ItrArgs {
        table: Some(table),
        bundled: None,
        timing: TimingArgs::default(),
        soa: None,
        repetitions: None,
        out: Some(out.clone()),
    })
    .unwrap();
    assert_eq!(report.cells[0].mean_itr, 0.0);
    for f in ["itr.json", "itr.csv", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn rsq_documents_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 7);
    let data = dir.path().join("data");
    let config = ConfigArgs {
        config: Some(cfg),
        ..Default::default()
    };
    simulate(&sim_args(config, &data)).unwrap();
    let out = dir.path().join("rsq");
    let summary = rsq(&RsqArgs {
        input: data,
        alpha: 0.05,
        out: out.clone(),
    })
    .unwrap();
    assert_eq!(summary.n_cells, 1120);
    let (channels, times, values) = read_matrix_csv(std::fs::File::open(out.join("rsq.csv")).unwrap()).unwrap();
    assert_eq!(channels.len(), 8);
    assert_eq!(times.len(), 140);
    assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
    let (_, _, mask) = read_matrix_csv(std::fs::File::open(out.join("significance.csv")).unwrap()).unwrap();
    assert_eq!(mask.iter().filter(|&&m| m == 1.0).count(), summary.n_significant);
    let ga = std::fs::read_to_string(out.join("grand_average.csv")).unwrap();
    assert_eq!(ga.lines().count(), 1 + 16);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let status = |args: &[&str]| bin().args(args).output().unwrap().status.code().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = dir.path().join("out");
    let (e, o) = (empty.to_str().unwrap(), out.to_str().unwrap());
    assert_eq!(status(&["rsq", "--input", e, "--out", o]), 2);
    assert_eq!(status(&["evaluate", "--input", e, "--out", o]), 2);
    assert_eq!(status(&["simulate", "--preset", "nope", "--out", o]), 1);
    assert_eq!(status(&["evaluate", "--input", e, "--out", o, "--mode", "sideways"]), 1);
    assert_eq!(status(&["itr"]), 1);
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "sg_window: 68\n").unwrap();
    assert_eq!(status(&["simulate", "--config", bad.to_str().unwrap(), "--out", o]), 1);
    std::fs::write(&bad, "colour: blue\n").unwrap();
    assert_eq!(status(&["simulate", "--config", bad.to_str().unwrap(), "--out", o]), 1);
    assert_eq!(status(&["--help"]), 0);

    let table = dir.path().join("t.csv");
    std::fs::write(&table, "group,soa_s,subject,repetitions,accuracy\nx,1,s1,15,150\n").unwrap();
    assert_eq!(status(&["itr", "--table", table.to_str().unwrap()]), 2);
    let out = bin()
        .env("RSMP_THREADS", "zero")
        .args(["itr", "--bundled", "table2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_test_rejects_shared_trials_and_missing_split() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        trials_per_run: 2,
        n_runs_train: 2,
        n_runs_test: 0,
        repetitions: 3,
        ..ExperimentConfig::exp2(0.25)
    };
    let cfg_path = dir.path().join("c.txt");
    cfg.write(&cfg_path).unwrap();
    let data = dir.path().join("data");
    let d = data.to_str().unwrap();
    let o = dir.path().join("out");
    let o = o.to_str().unwrap();
    let run = |args: &[&str]| bin().args(args).output().unwrap().status.code().unwrap();
    assert_eq!(run(&["simulate", "--config", cfg_path.to_str().unwrap(), "--out", d]), 0);
    assert_eq!(run(&["evaluate", "--input", d, "--mode", "train-test", "--out", o]), 2);
    std::fs::copy(data.join("train.meta.json"), data.join("test.meta.json")).unwrap();
    std::fs::copy(data.join("train.f32"), data.join("test.f32")).unwrap();
    let out = bin()
        .args(["evaluate", "--input", d, "--mode", "train-test", "--out", o])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("share trial ids"));
    assert_eq!(run(&["evaluate", "--input", d, "--mode", "train-test", "--allow-overlap", "--out", o]), 0);
    assert_eq!(run(&["evaluate", "--input", d, "--repetitions", "4", "--out", o]), 1);
}

#[test]
fn report_writes_everything_with_one_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 8);
    let data = dir.path().join("data");
    let out = dir.path().join("report");
    let run = |args: &[&str]| bin().args(args).output().unwrap();
    let s = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    assert!(s.status.success());
    let r = run(&["report", "--input", data.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let mut names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "accuracy.csv",
            "decisions.csv",
            "evaluation.json",
            "grand_average.csv",
            "itr.csv",
            "itr.json",
            "manifest.json",
            "model.json",
            "rsq.csv",
            "rsq_summary.json",
            "significance.csv"
        ]
    );
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"command\": \"report\""));
    assert!(manifest.contains("\"seed\": 8"));
}
