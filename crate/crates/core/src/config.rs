//! Experiment configuration.
//!
//! [`ExperimentConfig`] carries every paradigm, recording, simulation and
//! pipeline parameter. It is stored on disk as a flat `key: value` text
//! document whose keys are exactly the field names; unknown or repeated keys
//! are rejected and missing keys fall back to [`ExperimentConfig::default`].

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Quality factor of the software notch.
pub const NOTCH_Q: f64 = 30.0;

/// Default electrode montage, in vectorization order.
pub const DEFAULT_CHANNELS: [&str; 8] = ["C3", "Cz", "C4", "P3", "Pz", "P4", "O1", "O2"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    White,
    OneOverF,
}

impl NoiseModel {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseModel::White => "white",
            NoiseModel::OneOverF => "one-over-f",
        }
    }
}

impl FromStr for NoiseModel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "white" => Ok(NoiseModel::White),
            "one-over-f" => Ok(NoiseModel::OneOverF),
            other => Err(format!("unknown noise model '{other}' (expected white | one-over-f)")),
        }
    }
}

/// Stimulus content conditions, realized only as target/nontarget separation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    AudioVisual,
    Visual,
    Auditory,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::AudioVisual, Condition::Visual, Condition::Auditory];

    /// Separation between the target and nontarget parietal response.
    pub fn effect(self) -> f64 {
        match self {
            Condition::AudioVisual => 6.0,
            Condition::Visual => 4.5,
            Condition::Auditory => 3.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Condition::AudioVisual => "AV",
            Condition::Visual => "V",
            Condition::Auditory => "A",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n_stimuli: usize,
    pub soa_s: f64,
    pub stim_duration_s: f64,
    pub repetitions: usize,
    pub trials_per_run: usize,
    pub n_runs_train: usize,
    pub n_runs_test: usize,
    pub sampling_rate_fs: f64,
    pub channel_names: Vec<String>,
    pub epoch_len_s: f64,
    pub baseline_len_s: f64,
    pub notch_hz: f64,
    pub sg_order: usize,
    pub sg_window: usize,
    pub downsample_to: usize,
    pub pca_threshold: f64,
    pub t_cue_s: f64,
    pub t_buffer_s: f64,
    pub rng_seed: u64,
    pub condition_effect: f64,
    pub noise_model: NoiseModel,
    pub noise_rms: f64,
    pub line_noise_amp: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::exp1(Condition::AudioVisual)
    }
}

impl ExperimentConfig {
    /// Five runs of two trials at SOA 1 s, evaluated by leave-one-out.
    pub fn exp1(condition: Condition) -> Self {
        ExperimentConfig {
            n_stimuli: 5,
            soa_s: 1.0,
            stim_duration_s: 0.5,
            repetitions: 15,
            trials_per_run: 2,
            n_runs_train: 5,
            n_runs_test: 0,
            sampling_rate_fs: 500.0,
            channel_names: DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect(),
            epoch_len_s: 1.0,
            baseline_len_s: 0.1,
            notch_hz: 50.0,
            sg_order: 3,
            sg_window: 69,
            downsample_to: 140,
            pca_threshold: 0.9999,
            t_cue_s: 2.0,
            t_buffer_s: 1.0,
            rng_seed: 0,
            condition_effect: condition.effect(),
            noise_model: NoiseModel::OneOverF,
            noise_rms: 10.0,
            line_noise_amp: 5.0,
        }
    }

    /// Audiovisual stimuli at the given SOA; 5 training runs and 2 testing
    /// runs of three trials each. Stimulus duration is half the SOA.
    pub fn exp2(soa_s: f64) -> Self {
        ExperimentConfig {
            soa_s,
            stim_duration_s: soa_s / 2.0,
            trials_per_run: 3,
            n_runs_train: 5,
            n_runs_test: 2,
            notch_hz: 60.0,
            ..Self::exp1(Condition::AudioVisual)
        }
    }

    /// Named presets accepted by the CLI.
    pub fn preset(name: &str) -> Option<Self> {
        let cfg = match name {
            "exp1-av" => Self::exp1(Condition::AudioVisual),
            "exp1-v" => Self::exp1(Condition::Visual),
            "exp1-a" => Self::exp1(Condition::Auditory),
            "exp2-soa1000" => Self::exp2(1.0),
            "exp2-soa250" => Self::exp2(0.25),
            "exp2-soa100" => Self::exp2(0.1),
            _ => return None,
        };
        Some(cfg)
    }

    pub const PRESETS: [&'static str; 6] = [
        "exp1-av",
        "exp1-v",
        "exp1-a",
        "exp2-soa1000",
        "exp2-soa250",
        "exp2-soa100",
    ];

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    /// Converts seconds to a sample count by rounding.
    pub fn samples(&self, t_s: f64) -> usize {
        (t_s * self.sampling_rate_fs).round() as usize
    }

    pub fn baseline_samples(&self) -> usize {
        self.samples(self.baseline_len_s)
    }

    pub fn post_samples(&self) -> usize {
        self.samples(self.epoch_len_s)
    }

    pub fn epoch_samples(&self) -> usize {
        self.samples(self.baseline_len_s + self.epoch_len_s)
    }

    pub fn feature_len(&self) -> usize {
        self.n_channels() * self.downsample_to
    }

    pub fn events_per_trial(&self) -> usize {
        self.repetitions * self.n_stimuli
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|c| c == name)
    }

    /// Returns every violated invariant; empty means valid.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                errs.push(msg.to_string());
            }
        };
        check(self.n_stimuli >= 2, "n_stimuli must be at least 2");
        check(self.repetitions >= 1, "repetitions must be at least 1");
        check(self.trials_per_run >= 1, "trials_per_run must be at least 1");
        check(self.n_runs_train >= 1, "n_runs_train must be at least 1");
        check(
            self.sampling_rate_fs.is_finite() && self.sampling_rate_fs > 0.0,
            "sampling_rate_fs must be positive",
        );
        check(
            self.soa_s.is_finite() && self.soa_s > 0.0,
            "soa_s must be positive",
        );
        check(
            self.stim_duration_s > 0.0 && self.stim_duration_s <= self.soa_s,
            "stim_duration_s must satisfy 0 < stim_duration_s <= soa_s",
        );
        check(
            self.epoch_len_s.is_finite() && self.epoch_len_s > 0.0,
            "epoch_len_s must be positive",
        );
        check(
            self.baseline_len_s > 0.0 && self.baseline_len_s < 1.0,
            "baseline_len_s must satisfy 0 < baseline_len_s < 1",
        );
        check(!self.channel_names.is_empty(), "channel_names must not be empty");
        {
            let mut seen = std::collections::HashSet::new();
            check(
                self.channel_names.iter().all(|c| !c.is_empty() && seen.insert(c)),
                "channel_names must be unique and non-empty",
            );
        }
        check(
            self.notch_hz > 0.0 && self.notch_hz < self.sampling_rate_fs / 2.0,
            "notch_hz must lie strictly between 0 and the Nyquist frequency",
        );
        check(self.sg_window % 2 == 1, "sg_window must be odd");
        check(self.sg_window > self.sg_order, "sg_window must exceed sg_order");
        check(
            self.sg_window <= self.epoch_samples(),
            "sg_window exceeds the epoch length in samples",
        );
        check(self.downsample_to >= 1, "downsample_to must be at least 1");
        check(
            (self.downsample_to as f64) <= self.epoch_len_s * self.sampling_rate_fs,
            "downsample exceeds source length",
        );
        check(
            self.pca_threshold > 0.0 && self.pca_threshold <= 1.0,
            "pca_threshold must lie in (0, 1]",
        );
        check(self.t_cue_s >= 0.0, "t_cue_s must be nonnegative");
        check(self.t_buffer_s >= 0.0, "t_buffer_s must be nonnegative");
        check(
            self.t_cue_s >= self.baseline_len_s,
            "t_cue_s must cover the baseline window of the first stimulus",
        );
        check(
            self.condition_effect.is_finite() && self.condition_effect >= 0.0,
            "condition_effect must be nonnegative",
        );
        check(
            self.noise_rms.is_finite() && self.noise_rms >= 0.0,
            "noise_rms must be nonnegative",
        );
        check(
            self.line_noise_amp.is_finite() && self.line_noise_amp >= 0.0,
            "line_noise_amp must be nonnegative",
        );
        errs
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Serializes to the flat `key: value` document.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k}: {v}");
        };
        put("n_stimuli", self.n_stimuli.to_string());
        put("soa_s", self.soa_s.to_string());
        put("stim_duration_s", self.stim_duration_s.to_string());
        put("repetitions", self.repetitions.to_string());
        put("trials_per_run", self.trials_per_run.to_string());
        put("n_runs_train", self.n_runs_train.to_string());
        put("n_runs_test", self.n_runs_test.to_string());
        put("sampling_rate_fs", self.sampling_rate_fs.to_string());
        put("channel_names", self.channel_names.join(", "));
        put("epoch_len_s", self.epoch_len_s.to_string());
        put("baseline_len_s", self.baseline_len_s.to_string());
        put("notch_hz", self.notch_hz.to_string());
        put("sg_order", self.sg_order.to_string());
        put("sg_window", self.sg_window.to_string());
        put("downsample_to", self.downsample_to.to_string());
        put("pca_threshold", self.pca_threshold.to_string());
        put("t_cue_s", self.t_cue_s.to_string());
        put("t_buffer_s", self.t_buffer_s.to_string());
        put("rng_seed", self.rng_seed.to_string());
        put("condition_effect", self.condition_effect.to_string());
        put("noise_model", self.noise_model.as_str().to_string());
        put("noise_rms", self.noise_rms.to_string());
        put("line_noise_amp", self.line_noise_amp.to_string());
        s
    }

    /// Parses the flat `key: value` document. Blank lines and lines starting
    /// with `#` are ignored. Does not validate; see [`Self::validate`].
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once(':').ok_or_else(|| Error::ConfigParse {
                line: line_no,
                msg: format!("expected 'key: value', got '{line}'"),
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::ConfigParse {
                    line: line_no,
                    msg: format!("duplicate key '{key}'"),
                });
            }
            cfg.set(key, value).map_err(|msg| Error::ConfigParse { line: line_no, msg })?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse()
                .map_err(|_| format!("cannot parse value '{v}' for key '{key}'"))
        }
        match key {
            "n_stimuli" => self.n_stimuli = num(key, value)?,
            "soa_s" => self.soa_s = num(key, value)?,
            "stim_duration_s" => self.stim_duration_s = num(key, value)?,
            "repetitions" => self.repetitions = num(key, value)?,
            "trials_per_run" => self.trials_per_run = num(key, value)?,
            "n_runs_train" => self.n_runs_train = num(key, value)?,
            "n_runs_test" => self.n_runs_test = num(key, value)?,
            "sampling_rate_fs" => self.sampling_rate_fs = num(key, value)?,
            "channel_names" => {
                self.channel_names = value
                    .split(',')
                    .map(|c| c.trim().to_string())
                    .filter(|c| !c.is_empty())
                    .collect()
            }
            "epoch_len_s" => self.epoch_len_s = num(key, value)?,
            "baseline_len_s" => self.baseline_len_s = num(key, value)?,
            "notch_hz" => self.notch_hz = num(key, value)?,
            "sg_order" => self.sg_order = num(key, value)?,
            "sg_window" => self.sg_window = num(key, value)?,
            "downsample_to" => self.downsample_to = num(key, value)?,
            "pca_threshold" => self.pca_threshold = num(key, value)?,
            "t_cue_s" => self.t_cue_s = num(key, value)?,
            "t_buffer_s" => self.t_buffer_s = num(key, value)?,
            "rng_seed" => self.rng_seed = num(key, value)?,
            "condition_effect" => self.condition_effect = num(key, value)?,
            "noise_model" => self.noise_model = value.parse()?,
            "noise_rms" => self.noise_rms = num(key, value)?,
            "line_noise_amp" => self.line_noise_amp = num(key, value)?,
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the canonical text form, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
