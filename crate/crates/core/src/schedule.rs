//! Stimulus timelines for trials and sessions.
//!
//! A trial presents each of the `Ns` stimuli `R` times as `R` concatenated
//! blocks, each block a fresh uniform permutation. A block whose first
//! stimulus would repeat the previous block's last stimulus is re-drawn (up to
//! [`MAX_REDRAWS`] times, after which its first two entries are swapped), so
//! no stimulus is ever shown twice in a row.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::model::{StimulusEvent, Trial};

pub const MAX_REDRAWS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Training,
    Testing,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Training => "train",
            Phase::Testing => "test",
        }
    }

    /// Independent random stream used for this phase's schedule.
    pub fn stream(self) -> u64 {
        match self {
            Phase::Training => 1,
            Phase::Testing => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionPlan {
    pub phase: Phase,
    pub runs: Vec<Vec<Trial>>,
}

impl SessionPlan {
    pub fn trials(&self) -> impl Iterator<Item = &Trial> {
        self.runs.iter().flatten()
    }

    pub fn n_trials(&self) -> usize {
        self.runs.iter().map(Vec::len).sum()
    }

    pub fn events(&self) -> Vec<StimulusEvent> {
        self.trials().flat_map(|t| t.events.iter().copied()).collect()
    }

    /// Recording length needed to hold every event's post-onset window.
    pub fn recording_len_s(&self, config: &ExperimentConfig) -> f64 {
        let last = self.trials().last().map_or(0.0, Trial::last_onset);
        last + config.epoch_len_s.max(config.t_buffer_s)
    }
}

fn shuffled_block<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut block: Vec<usize> = (0..n).collect();
    block.shuffle(rng);
    block
}

/// Builds one trial of `R` permutation blocks starting at `start_s`.
pub fn build_trial<R: Rng + ?Sized>(
    config: &ExperimentConfig,
    cued_target: usize,
    trial_id: usize,
    start_s: f64,
    rng: &mut R,
) -> Result<Trial> {
    let ns = config.n_stimuli;
    if cued_target >= ns {
        return Err(Error::InvalidArgument(format!(
            "cued target {cued_target} outside [0, {ns})"
        )));
    }
    let mut order = Vec::with_capacity(config.events_per_trial());
    for _ in 0..config.repetitions {
        let mut block = shuffled_block(ns, rng);
        if let Some(&prev) = order.last() {
            let mut tries = 0;
            while block[0] == prev && tries < MAX_REDRAWS {
                block = shuffled_block(ns, rng);
                tries += 1;
            }
            if block[0] == prev {
                block.swap(0, 1);
            }
        }
        order.extend(block);
    }
    let events = order
        .into_iter()
        .enumerate()
        .map(|(k, stimulus_id)| StimulusEvent {
            onset_s: start_s + k as f64 * config.soa_s,
            stimulus_id,
            trial_id,
            repetition_idx: k / ns,
            cued_target,
        })
        .collect();
    Ok(Trial {
        trial_id,
        cued_target,
        events,
    })
}

/// Cued targets assigned round-robin over the stimuli, then shuffled.
pub fn balanced_targets<R: Rng + ?Sized>(n_trials: usize, n_stimuli: usize, rng: &mut R) -> Vec<usize> {
    let mut cues: Vec<usize> = (0..n_trials).map(|i| i % n_stimuli).collect();
    cues.shuffle(rng);
    cues
}

/// Lays out all runs of one phase back to back. Trial `k` of the session has
/// its first onset at `t_cue + k * T`, with `T` the output period, so
/// consecutive trials are separated by `t_buffer + t_cue`. Testing trial ids
/// continue after the training ids so the two phases never overlap.
pub fn build_session<R: Rng + ?Sized>(
    config: &ExperimentConfig,
    phase: Phase,
    rng: &mut R,
) -> Result<SessionPlan> {
    let n_runs = match phase {
        Phase::Training => config.n_runs_train,
        Phase::Testing => config.n_runs_test,
    };
    let first_id = match phase {
        Phase::Training => 0,
        Phase::Testing => config.n_runs_train * config.trials_per_run,
    };
    let n_trials = n_runs * config.trials_per_run;
    let cues = balanced_targets(n_trials, config.n_stimuli, rng);
    let period = crate::metrics::output_period(
        config.t_cue_s,
        config.soa_s,
        config.repetitions,
        config.n_stimuli,
        config.t_buffer_s,
    );
    let mut runs = Vec::with_capacity(n_runs);
    let mut k = 0;
    for _ in 0..n_runs {
        let mut run = Vec::with_capacity(config.trials_per_run);
        for _ in 0..config.trials_per_run {
            let start = config.t_cue_s + k as f64 * period;
            run.push(build_trial(config, cues[k], first_id + k, start, rng)?);
            k += 1;
        }
        runs.push(run);
    }
    Ok(SessionPlan { phase, runs })
}

#[derive(Debug, Serialize, Deserialize)]
struct ScheduleRow {
    trial_id: usize,
    repetition_idx: usize,
    onset_s: f64,
    stimulus_id: usize,
    is_target: u8,
    cued_target: usize,
}

/// Writes events as CSV: `trial_id, repetition_idx, onset_s, stimulus_id, is_target, cued_target`.
pub fn write_schedule_csv<W: Write>(events: &[StimulusEvent], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for e in events {
        w.serialize(ScheduleRow {
            trial_id: e.trial_id,
            repetition_idx: e.repetition_idx,
            onset_s: e.onset_s,
            stimulus_id: e.stimulus_id,
            is_target: e.is_target() as u8,
            cued_target: e.cued_target,
        })?;
    }
    w.flush().map_err(|e| Error::io("<schedule csv>", e))?;
    Ok(())
}

pub fn read_schedule_csv<R: Read>(input: R) -> Result<Vec<StimulusEvent>> {
    let mut r = csv::Reader::from_reader(input);
    let mut events = Vec::new();
    for row in r.deserialize() {
        let row: ScheduleRow = row?;
        let e = StimulusEvent {
            onset_s: row.onset_s,
            stimulus_id: row.stimulus_id,
            trial_id: row.trial_id,
            repetition_idx: row.repetition_idx,
            cued_target: row.cued_target,
        };
        if e.is_target() != (row.is_target != 0) {
            return Err(Error::Format(format!(
                "is_target disagrees with cued_target for trial {} onset {}",
                row.trial_id, row.onset_s
            )));
        }
        events.push(e);
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn full_trial_counts() {
        let cfg = ExperimentConfig::default();
        let t = build_trial(&cfg, 2, 0, 2.0, &mut rng(1)).unwrap();
        assert_eq!(t.events.len(), 75);
        for s in 0..5 {
            assert_eq!(t.events.iter().filter(|e| e.stimulus_id == s).count(), 15);
        }
        assert_eq!(t.events.iter().filter(|e| e.is_target()).count(), 15);
    }

    #[test]
    fn single_block_is_permutation() {
        let cfg = ExperimentConfig {
            repetitions: 1,
            ..Default::default()
        };
        let t = build_trial(&cfg, 0, 0, 0.5, &mut rng(3)).unwrap();
        let mut ids: Vec<_> = t.events.iter().map(|e| e.stimulus_id).collect();
        ids.sort();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
        for (k, e) in t.events.iter().enumerate() {
            assert!((e.onset_s - (0.5 + k as f64 * cfg.soa_s)).abs() < 1e-12);
        }
    }

    #[test]
    fn seeded_trials_identical() {
        let cfg = ExperimentConfig::default();
        let a = build_trial(&cfg, 1, 0, 0.0, &mut rng(42)).unwrap();
        let b = build_trial(&cfg, 1, 0, 0.0, &mut rng(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cue_out_of_range() {
        let cfg = ExperimentConfig::default();
        assert!(build_trial(&cfg, 5, 0, 0.0, &mut rng(0)).is_err());
    }

    #[test]
    fn two_stimuli_never_repeat() {
        // Ns = 2 forces the swap fallback to be reachable.
        let cfg = ExperimentConfig {
            n_stimuli: 2,
            repetitions: 200,
            ..Default::default()
        };
        let t = build_trial(&cfg, 0, 0, 0.0, &mut rng(9)).unwrap();
        assert!(t.events.windows(2).all(|w| w[0].stimulus_id != w[1].stimulus_id));
    }

    #[test]
    fn exp1_session_shape() {
        let cfg = ExperimentConfig::default();
        let s = build_session(&cfg, Phase::Training, &mut rng(0)).unwrap();
        assert_eq!(s.runs.len(), 5);
        assert!(s.runs.iter().all(|r| r.len() == 2));
        assert_eq!(s.n_trials(), 10);
    }

    #[test]
    fn exp2_testing_session() {
        let cfg = ExperimentConfig::exp2(0.25);
        let train = build_session(&cfg, Phase::Training, &mut rng(0)).unwrap();
        let test = build_session(&cfg, Phase::Testing, &mut rng(0)).unwrap();
        assert_eq!(train.n_trials(), 15);
        assert_eq!(test.n_trials(), 6);
        let train_ids: Vec<_> = train.trials().map(|t| t.trial_id).collect();
        assert!(test.trials().all(|t| !train_ids.contains(&t.trial_id)));
    }

    #[test]
    fn balanced_cues_count_oracle() {
        // 10 trials over 5 stimuli: every stimulus is cued 10 / 5 = 2 times.
        for seed in 0..20 {
            let cues = balanced_targets(10, 5, &mut rng(seed));
            let mut counts = [0usize; 5];
            for c in cues {
                counts[c] += 1;
            }
            assert_eq!(counts, [2; 5]);
        }
        let cues = balanced_targets(7, 5, &mut rng(1));
        let mut counts = [0usize; 5];
        for c in cues {
            counts[c] += 1;
        }
        assert!(counts.iter().all(|&c| c == 1 || c == 2));
        assert_eq!(counts.iter().sum::<usize>(), 7);
    }

    #[test]
    fn trials_spaced_by_output_period() {
        let cfg = ExperimentConfig::exp2(0.25);
        let s = build_session(&cfg, Phase::Training, &mut rng(5)).unwrap();
        let trials: Vec<_> = s.trials().collect();
        for w in trials.windows(2) {
            let gap = w[1].first_onset() - w[0].last_onset();
            assert!((gap - (cfg.t_buffer_s + cfg.t_cue_s)).abs() < 1e-9);
        }
        assert_eq!(trials[0].first_onset(), cfg.t_cue_s);
    }

    #[test]
    fn csv_round_trip() {
        let cfg = ExperimentConfig::exp2(0.1);
        let s = build_session(&cfg, Phase::Testing, &mut rng(11)).unwrap();
        let events = s.events();
        let mut buf = Vec::new();
        write_schedule_csv(&events, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("trial_id,repetition_idx,onset_s,stimulus_id,is_target,cued_target\n"));
        assert_eq!(read_schedule_csv(buf.as_slice()).unwrap(), events);
    }
}
