//! Rapid serial multimodal presentation (RSMP) P300 decoding.
//!
//! The crate covers the whole offline chain of a five-class P300 BCI:
//!
//! - [`schedule`]: block-randomized stimulus timelines for trials and sessions
//! - [`synth`]: synthetic EEG with linearly overlapping ERPs and 1/f noise
//! - [`dsp`]: epoching, baseline, zero-phase notch, Savitzky-Golay, bin-mean downsampling
//! - [`decoder`]: PCA + LDA, the summed-score argmax decision rule, LOO and train/test harnesses
//! - [`metrics`]: output period, information transfer rate, r² maps, grand averages
//! - [`io`]: binary recordings and the CSV/JSON documents exchanged with plotting tools

pub mod config;
pub mod decoder;
pub mod dsp;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod schedule;
pub mod synth;
pub mod tables;

pub use config::{Condition, ExperimentConfig, NoiseModel};
pub use error::{Error, Result};
pub use model::{ContinuousRecording, Epoch, EpochSet, StimulusEvent, Trial};
