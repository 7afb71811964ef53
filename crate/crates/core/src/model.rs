//! Shared value types: stimulus events, trials, recordings and epochs.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StimulusEvent {
    /// Seconds from the start of the recording.
    pub onset_s: f64,
    pub stimulus_id: usize,
    pub trial_id: usize,
    pub repetition_idx: usize,
    pub cued_target: usize,
}

impl StimulusEvent {
    pub fn is_target(&self) -> bool {
        self.stimulus_id == self.cued_target
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub trial_id: usize,
    pub cued_target: usize,
    /// `R * Ns` events in presentation order.
    pub events: Vec<StimulusEvent>,
}

impl Trial {
    pub fn first_onset(&self) -> f64 {
        self.events.first().map_or(0.0, |e| e.onset_s)
    }

    pub fn last_onset(&self) -> f64 {
        self.events.last().map_or(0.0, |e| e.onset_s)
    }
}

/// Multichannel continuous signal with its stimulus log.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousRecording {
    pub fs: f64,
    pub channel_names: Vec<String>,
    /// channels x samples.
    pub samples: Array2<f64>,
    pub events: Vec<StimulusEvent>,
}

impl ContinuousRecording {
    pub fn n_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.fs
    }
}

/// Time-locked window `[-baseline, +epoch_len)` around one stimulus onset.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    /// channels x samples, first `baseline_samples` columns are the pre-window.
    pub data: Array2<f64>,
    pub stimulus_id: usize,
    pub trial_id: usize,
    pub repetition_idx: usize,
    pub cued_target: usize,
    pub is_target: bool,
}

impl Epoch {
    pub fn from_event(event: &StimulusEvent, data: Array2<f64>) -> Self {
        Epoch {
            data,
            stimulus_id: event.stimulus_id,
            trial_id: event.trial_id,
            repetition_idx: event.repetition_idx,
            cued_target: event.cued_target,
            is_target: event.is_target(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochSet {
    pub epochs: Vec<Epoch>,
    pub config: ExperimentConfig,
    by_trial: BTreeMap<usize, Vec<usize>>,
}

impl EpochSet {
    pub fn new(epochs: Vec<Epoch>, config: ExperimentConfig) -> Result<Self> {
        if let Some(first) = epochs.first() {
            let shape = first.data.dim();
            if let Some(bad) = epochs.iter().find(|e| e.data.dim() != shape) {
                return Err(Error::DimensionMismatch {
                    expected: shape.0 * shape.1,
                    got: bad.data.len(),
                });
            }
        }
        let mut by_trial: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, e) in epochs.iter().enumerate() {
            by_trial.entry(e.trial_id).or_default().push(i);
        }
        Ok(EpochSet {
            epochs,
            config,
            by_trial,
        })
    }

    /// Concatenates sets that share a configuration.
    pub fn concat(sets: Vec<EpochSet>) -> Result<Self> {
        let mut iter = sets.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::InvalidArgument("no epoch sets to concatenate".into()))?;
        let config = first.config;
        let mut epochs = first.epochs;
        for s in iter {
            epochs.extend(s.epochs);
        }
        Self::new(epochs, config)
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn trial_ids(&self) -> Vec<usize> {
        self.by_trial.keys().copied().collect()
    }

    /// Indices into `epochs` belonging to `trial_id`, in insertion order.
    pub fn trial_indices(&self, trial_id: usize) -> &[usize] {
        self.by_trial.get(&trial_id).map_or(&[], |v| v.as_slice())
    }

    pub fn cued_target(&self, trial_id: usize) -> Option<usize> {
        self.trial_indices(trial_id)
            .first()
            .map(|&i| self.epochs[i].cued_target)
    }

    pub fn count_targets(&self) -> (usize, usize) {
        let t = self.epochs.iter().filter(|e| e.is_target).count();
        (t, self.epochs.len() - t)
    }
}
