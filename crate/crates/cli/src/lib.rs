//! Commands behind the `rsmp` binary.
//!
//! Each command reads its inputs, writes its documents into one output
//! directory together with a `manifest.json`, and returns a summary. Errors
//! carry the exit code class: usage/config problems versus data problems.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use rsmp::decoder::{loo_cv, train_test, EvalReport};
use rsmp::dsp::features_from_recording;
use rsmp::io::{create_file, read_recording, recording_paths, write_json, write_recording};
use rsmp::metrics::{grand_average_recording, rsq_map, rsq_times, write_grand_average_csv, write_matrix_csv, RsqMap};
use rsmp::schedule::{write_schedule_csv, Phase};
use rsmp::synth::simulate_session;
use rsmp::tables::{itr_report, AccuracyRow, AccuracyTable, ItrReport, Timing, TABLE1_OFFLINE_EXP1, TABLE2_ONLINE_EXP2, TABLE3_OFFLINE_EXP2};
use rsmp::{ContinuousRecording, ExperimentConfig};
use serde::Serialize;

pub mod manifest;

use manifest::Manifest;

pub const CONFIG_FILE: &str = "config.txt";

#[derive(Debug)]
pub enum Failure {
    /// Bad arguments or configuration; exit code 1.
    Usage(String),
    /// Missing, malformed or unusable data; exit code 2.
    Data(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

impl From<rsmp::Error> for Failure {
    fn from(e: rsmp::Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

pub type CmdResult<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn data(msg: impl Into<String>) -> Failure {
    Failure::Data(msg.into())
}

fn ensure_dir(dir: &Path) -> CmdResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| data(format!("{}: {e}", dir.display())))
}

/// Output files written so far, relative to the output directory.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> CmdResult<Self> {
        ensure_dir(dir)?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn file(&mut self, name: &str) -> CmdResult<std::io::BufWriter<std::fs::File>> {
        let p = self.path(name);
        Ok(create_file(&p)?)
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Configuration file (`key: value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named preset: exp1-av, exp1-v, exp1-a, exp2-soa1000, exp2-soa250, exp2-soa100.
    #[arg(long)]
    pub preset: Option<String>,
    /// Overrides the RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the SOA in seconds (stimulus duration becomes half the SOA).
    #[arg(long)]
    pub soa: Option<f64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> CmdResult<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(_), Some(_)) => return Err(usage("--config and --preset are mutually exclusive")),
            (Some(path), None) => ExperimentConfig::read(path).map_err(|e| match e {
                rsmp::Error::Io { .. } => usage(e.to_string()),
                other => other.into(),
            })?,
            (None, Some(name)) => ExperimentConfig::preset(name).ok_or_else(|| {
                usage(format!(
                    "unknown preset '{name}'; expected one of {}",
                    ExperimentConfig::PRESETS.join(", ")
                ))
            })?,
            (None, None) => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.rng_seed = seed;
        }
        if let Some(soa) = self.soa {
            cfg.soa_s = soa;
            cfg.stim_duration_s = soa / 2.0;
        }
        cfg.ensure_valid()?;
        Ok(cfg)
    }
}

fn read_data_config(dir: &Path) -> CmdResult<ExperimentConfig> {
    let path = dir.join(CONFIG_FILE);
    if !path.is_file() {
        return Err(data(format!("{}: no {CONFIG_FILE}; not a simulation output directory", dir.display())));
    }
    let cfg = ExperimentConfig::read(&path).map_err(|e| data(e.to_string()))?;
    cfg.ensure_valid().map_err(|e| data(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

fn read_phase(dir: &Path, phase: Phase, cfg: &ExperimentConfig) -> CmdResult<Option<ContinuousRecording>> {
    let (meta, _) = recording_paths(dir, phase.as_str());
    if !meta.is_file() {
        return Ok(None);
    }
    let rec = read_recording(dir, phase.as_str())?;
    if rec.channel_names != cfg.channel_names || rec.fs != cfg.sampling_rate_fs {
        return Err(data(format!(
            "{}: recording does not match {CONFIG_FILE}",
            meta.display()
        )));
    }
    Ok(Some(rec))
}

fn group_label(cfg: &ExperimentConfig) -> String {
    format!("{}", (cfg.soa_s * 1000.0).round() as i64)
}

fn subject_label(cfg: &ExperimentConfig) -> String {
    format!("seed{}", cfg.rng_seed)
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseSummary {
    pub phase: String,
    pub n_trials: usize,
    pub n_events: usize,
    pub n_samples: usize,
}

pub fn simulate(args: &SimulateArgs) -> CmdResult<Vec<PhaseSummary>> {
    let start = Instant::now();
    let cfg = args.config.resolve()?;
    let mut out = Outputs::new(&args.out)?;
    cfg.write(&out.path(CONFIG_FILE))?;
    let mut summary = Vec::new();
    for phase in [Phase::Training, Phase::Testing] {
        let runs = match phase {
            Phase::Training => cfg.n_runs_train,
            Phase::Testing => cfg.n_runs_test,
        };
        if runs == 0 {
            continue;
        }
        let (plan, rec) = simulate_session(&cfg, phase)?;
        let stem = phase.as_str();
        write_recording(&rec, &args.out, stem)?;
        out.files.push(format!("{stem}.meta.json"));
        out.files.push(format!("{stem}.f32"));
        write_schedule_csv(&rec.events, out.file(&format!("{stem}_schedule.csv"))?)?;
        summary.push(PhaseSummary {
            phase: stem.to_string(),
            n_trials: plan.n_trials(),
            n_events: rec.events.len(),
            n_samples: rec.n_samples(),
        });
    }
    Manifest::new("simulate", Some(&cfg), vec![], out.files, start).write(&args.out)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Leave-one-trial-out over the training session.
    Loo,
    /// Fit on the training session, decode the testing session.
    TrainTest,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Directory written by `simulate`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "loo")]
    pub mode: Mode,
    /// Largest repetition count to evaluate (defaults to the configured R).
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// Allow train and test trial ids to overlap (resubstitution).
    #[arg(long)]
    pub allow_overlap: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// One row per repetition count, in the layout of the bundled tables.
fn accuracy_table(cfg: &ExperimentConfig, report: &EvalReport) -> AccuracyTable {
    AccuracyTable {
        rows: report
            .per_repetition
            .iter()
            .map(|a| AccuracyRow {
                group: group_label(cfg),
                soa_s: cfg.soa_s,
                subject: subject_label(cfg),
                repetitions: a.repetitions,
                accuracy: a.accuracy,
            })
            .collect(),
    }
}

fn run_evaluation(
    input: &Path,
    mode: Mode,
    repetitions: Option<usize>,
    allow_overlap: bool,
    out: &mut Outputs,
) -> CmdResult<(ExperimentConfig, EvalReport)> {
    let cfg = read_data_config(input)?;
    let r_max = repetitions.unwrap_or(cfg.repetitions);
    if r_max == 0 || r_max > cfg.repetitions {
        return Err(usage(format!("--repetitions must lie in 1..={}", cfg.repetitions)));
    }
    let train = read_phase(input, Phase::Training, &cfg)?
        .ok_or_else(|| data(format!("{}: no training recording", input.display())))?;
    let train_features = features_from_recording(&train, &cfg)?;
    drop(train);
    let report = match mode {
        Mode::Loo => loo_cv(&train_features, &cfg, r_max)?,
        Mode::TrainTest => {
            let test = read_phase(input, Phase::Testing, &cfg)?
                .ok_or_else(|| data(format!("{}: train-test mode needs a testing recording", input.display())))?;
            let test_features = features_from_recording(&test, &cfg)?;
            let (model, report) = train_test(&train_features, &test_features, &cfg, r_max, allow_overlap)?;
            model.write_json(out.file("model.json")?)?;
            report
        }
    };
    accuracy_table(&cfg, &report).write(out.file("accuracy.csv")?)?;
    report.write_decisions_csv(r_max, out.file("decisions.csv")?)?;
    write_json(&out.path("evaluation.json"), &report)?;
    Ok((cfg, report))
}

pub fn evaluate(args: &EvaluateArgs) -> CmdResult<EvalReport> {
    let start = Instant::now();
    read_data_config(&args.input)?;
    let mut out = Outputs::new(&args.out)?;
    let (cfg, report) = run_evaluation(&args.input, args.mode, args.repetitions, args.allow_overlap, &mut out)?;
    Manifest::new("evaluate", Some(&cfg), vec![args.input.display().to_string()], out.files, start).write(&args.out)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// itr
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BundledTable {
    /// Offline exp. 1 accuracies (AV, V, A).
    Table1,
    /// Online exp. 2 accuracies at R = 15.
    Table2,
    /// Offline exp. 2 accuracies (SOA 1000/250/100 ms).
    Table3,
}

impl BundledTable {
    pub fn text(self) -> &'static str {
        match self {
            BundledTable::Table1 => TABLE1_OFFLINE_EXP1,
            BundledTable::Table2 => TABLE2_ONLINE_EXP2,
            BundledTable::Table3 => TABLE3_OFFLINE_EXP2,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TimingArgs {
    #[arg(long, default_value_t = 2.0)]
    pub t_cue: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t_buffer: f64,
    #[arg(long, default_value_t = 5)]
    pub n_stimuli: usize,
    /// Report ITR below chance as zero instead of the formula's value.
    #[arg(long)]
    pub clip_negative_itr: bool,
}

impl Default for TimingArgs {
    fn default() -> Self {
        TimingArgs {
            t_cue: 2.0,
            t_buffer: 1.0,
            n_stimuli: 5,
            clip_negative_itr: false,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ItrArgs {
    /// Accuracy table in long CSV form (group,soa_s,subject,repetitions,accuracy).
    #[arg(long, conflicts_with = "bundled", required_unless_present = "bundled")]
    pub table: Option<PathBuf>,
    /// Use one of the bundled published tables instead of a file.
    #[arg(long, value_enum)]
    pub bundled: Option<BundledTable>,
    #[command(flatten)]
    pub timing: TimingArgs,
    /// Overrides the table's SOA column (seconds).
    #[arg(long)]
    pub soa: Option<f64>,
    /// Only report this repetition count.
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// Output directory for itr.json / itr.csv; printed only when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn check_timing(t: &TimingArgs, soa: Option<f64>) -> CmdResult<Timing> {
    let ok = |v: f64| v.is_finite() && v >= 0.0;
    if !ok(t.t_cue) || !ok(t.t_buffer) {
        return Err(usage("--t-cue and --t-buffer must be nonnegative"));
    }
    if t.n_stimuli < 2 {
        return Err(usage("--n-stimuli must be at least 2"));
    }
    if let Some(s) = soa {
        if !(s.is_finite() && s > 0.0) {
            return Err(usage("--soa must be positive"));
        }
    }
    Ok(Timing {
        t_cue_s: t.t_cue,
        t_buffer_s: t.t_buffer,
        n_stimuli: t.n_stimuli,
        soa_s: soa,
    })
}

fn write_itr(report: &ItrReport, out: &mut Outputs) -> CmdResult<()> {
    write_json(&out.path("itr.json"), report)?;
    #[derive(Serialize)]
    struct Row<'a> {
        group: &'a str,
        soa_s: f64,
        repetitions: usize,
        period_s: f64,
        outputs_per_min: f64,
        mean_accuracy: f64,
        mean_itr: f64,
        sd_itr: f64,
    }
    let mut w = csv::Writer::from_writer(out.file("itr.csv")?);
    for c in &report.cells {
        w.serialize(Row {
            group: &c.group,
            soa_s: c.soa_s,
            repetitions: c.repetitions,
            period_s: c.period_s,
            outputs_per_min: c.outputs_per_min,
            mean_accuracy: c.mean_accuracy,
            mean_itr: c.mean_itr,
            sd_itr: c.sd_itr,
        })
        .map_err(|e| data(e.to_string()))?;
    }
    w.flush().map_err(|e| data(e.to_string()))?;
    Ok(())
}

pub fn itr(args: &ItrArgs) -> CmdResult<ItrReport> {
    let start = Instant::now();
    let timing = check_timing(&args.timing, args.soa)?;
    let (mut table, source) = match (&args.table, args.bundled) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
            (AccuracyTable::parse(&text)?, path.display().to_string())
        }
        (None, Some(b)) => (AccuracyTable::parse(b.text())?, format!("bundled:{b:?}").to_lowercase()),
        (None, None) => return Err(usage("one of --table or --bundled is required")),
    };
    if let Some(r) = args.repetitions {
        table.rows.retain(|row| row.repetitions == r);
        if table.rows.is_empty() {
            return Err(data(format!("no rows with repetitions = {r}")));
        }
    }
    let report = itr_report(&table, &timing, args.timing.clip_negative_itr)?;
    if let Some(dir) = &args.out {
        let mut out = Outputs::new(dir)?;
        write_itr(&report, &mut out)?;
        Manifest::new("itr", None, vec![source], out.files, start).write(dir)?;
    }
    Ok(report)
}

/// One line per cell: group, SOA, R, period, mean ± SD.
pub fn format_itr(report: &ItrReport) -> String {
    let mut s = String::from("group\tsoa_s\tR\tT_s\tacc_%\titr_bit_min\n");
    for c in &report.cells {
        s.push_str(&format!(
            "{}\t{}\t{}\t{:.2}\t{:.1}\t{:.3} ± {:.3}\n",
            c.group,
            c.soa_s,
            c.repetitions,
            c.period_s,
            100.0 * c.mean_accuracy,
            c.mean_itr,
            c.sd_itr
        ));
    }
    s
}

// ---------------------------------------------------------------------------
// rsq
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args)]
pub struct RsqArgs {
    /// Directory written by `simulate`.
    #[arg(long)]
    pub input: PathBuf,
    /// Family-wise significance level (Bonferroni over all cells).
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakCell {
    pub channel: String,
    pub time_s: f64,
    pub rsq: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RsqSummary {
    pub n_target: usize,
    pub n_nontarget: usize,
    pub alpha: f64,
    pub n_cells: usize,
    pub n_significant: usize,
    pub n_zero_variance: usize,
    pub peak_significant: Option<PeakCell>,
}

fn run_rsq(input: &Path, alpha: f64, out: &mut Outputs) -> CmdResult<(ExperimentConfig, RsqSummary)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(usage("--alpha must lie in (0, 1)"));
    }
    let cfg = read_data_config(input)?;
    let rec = read_phase(input, Phase::Training, &cfg)?
        .ok_or_else(|| data(format!("{}: no training recording", input.display())))?;
    let features = features_from_recording(&rec, &cfg)?;
    let map: RsqMap = rsq_map(&features, cfg.n_channels())?.with_significance(alpha);
    let times = rsq_times(&cfg);
    write_matrix_csv(&map.values(), map.n_times, &cfg.channel_names, &times, out.file("rsq.csv")?)?;
    let mask: Vec<f64> = map.significant.iter().map(|&s| s as u8 as f64).collect();
    write_matrix_csv(&mask, map.n_times, &cfg.channel_names, &times, out.file("significance.csv")?)?;
    let ga = grand_average_recording(&rec, &cfg)?;
    write_grand_average_csv(&ga, &cfg.channel_names, out.file("grand_average.csv")?)?;
    let peak_significant = map.max_significant().map(|i| PeakCell {
        channel: cfg.channel_names[i / map.n_times].clone(),
        time_s: times[i % map.n_times],
        rsq: map.rsq(i),
        r: map.r[i],
    });
    let summary = RsqSummary {
        n_target: map.n_target,
        n_nontarget: map.n_nontarget,
        alpha,
        n_cells: map.r.len(),
        n_significant: map.significant.iter().filter(|&&s| s).count(),
        n_zero_variance: map.zero_variance.iter().filter(|&&z| z).count(),
        peak_significant,
    };
    write_json(&out.path("rsq_summary.json"), &summary)?;
    Ok((cfg, summary))
}

pub fn rsq(args: &RsqArgs) -> CmdResult<RsqSummary> {
    let start = Instant::now();
    read_data_config(&args.input)?;
    let mut out = Outputs::new(&args.out)?;
    let (cfg, summary) = run_rsq(&args.input, args.alpha, &mut out)?;
    Manifest::new("rsq", Some(&cfg), vec![args.input.display().to_string()], out.files, start).write(&args.out)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Directory written by `simulate`.
    #[arg(long)]
    pub input: PathBuf,
    /// Defaults to train-test when a testing recording exists, otherwise loo.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub clip_negative_itr: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub mode: Mode,
    pub evaluation: EvalReport,
    pub itr: ItrReport,
    pub rsq: RsqSummary,
}

/// evaluate + itr on its accuracy table + rsq, into one directory.
pub fn report(args: &ReportArgs) -> CmdResult<Report> {
    let start = Instant::now();
    read_data_config(&args.input)?;
    let mut out = Outputs::new(&args.out)?;
    let mode = match args.mode {
        Some(m) => m,
        None if recording_paths(&args.input, Phase::Testing.as_str()).0.is_file() => Mode::TrainTest,
        None => Mode::Loo,
    };
    let (cfg, evaluation) = run_evaluation(&args.input, mode, args.repetitions, false, &mut out)?;
    let table = accuracy_table(&cfg, &evaluation);
    let timing = Timing {
        t_cue_s: cfg.t_cue_s,
        t_buffer_s: cfg.t_buffer_s,
        n_stimuli: cfg.n_stimuli,
        soa_s: None,
    };
    let itr = itr_report(&table, &timing, args.clip_negative_itr)?;
    write_itr(&itr, &mut out)?;
    let (_, rsq) = run_rsq(&args.input, args.alpha, &mut out)?;
    let result = Report {
        mode,
        evaluation,
        itr,
        rsq,
    };
    Manifest::new("report", Some(&cfg), vec![args.input.display().to_string()], out.files, start).write(&args.out)?;
    Ok(result)
}
