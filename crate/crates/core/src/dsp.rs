//! Preprocessing from continuous recording to feature vectors.
//!
//! Per epoch: baseline correction over the pre-stimulus window, zero-phase
//! notch, Savitzky-Golay smoothing, removal of the pre-stimulus window,
//! bin-average downsampling, then channel-major vectorization. Every stage is
//! linear in the signal.

use std::io::{Read, Write};

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, NOTCH_Q};
use crate::error::{Error, Result};
use crate::model::{ContinuousRecording, Epoch, EpochSet, StimulusEvent};

// ---------------------------------------------------------------------------
// Epoching
// ---------------------------------------------------------------------------

/// Sample range `[start, end)` of the epoch for `event`.
fn epoch_bounds(event: &StimulusEvent, config: &ExperimentConfig, n_samples: usize) -> Result<(usize, usize)> {
    let onset = (event.onset_s * config.sampling_rate_fs).round();
    let n_base = config.baseline_samples() as f64;
    let out_of_bounds = || Error::EventOutOfBounds {
        trial_id: event.trial_id,
        repetition_idx: event.repetition_idx,
        stimulus_id: event.stimulus_id,
        onset_s: event.onset_s,
    };
    if event.onset_s - config.baseline_len_s < -1e-9 || onset < n_base {
        return Err(out_of_bounds());
    }
    let start = (onset - n_base) as usize;
    let end = start + config.epoch_samples();
    if end > n_samples {
        return Err(out_of_bounds());
    }
    Ok((start, end))
}

pub fn epoch_view<'a>(
    recording: &'a ContinuousRecording,
    event: &StimulusEvent,
    config: &ExperimentConfig,
) -> Result<ArrayView2<'a, f64>> {
    let (start, end) = epoch_bounds(event, config, recording.n_samples())?;
    Ok(recording.samples.slice(s![.., start..end]))
}

/// One epoch per logged event. Windows of neighbouring events overlap when
/// the SOA is shorter than the epoch.
pub fn extract_epochs(recording: &ContinuousRecording, config: &ExperimentConfig) -> Result<EpochSet> {
    check_channels(recording, config)?;
    let epochs = recording
        .events
        .iter()
        .map(|e| Ok(Epoch::from_event(e, epoch_view(recording, e, config)?.to_owned())))
        .collect::<Result<Vec<_>>>()?;
    EpochSet::new(epochs, config.clone())
}

fn check_channels(recording: &ContinuousRecording, config: &ExperimentConfig) -> Result<()> {
    if recording.channel_names != config.channel_names {
        return Err(Error::Format(format!(
            "recording channels {:?} do not match config channels {:?}",
            recording.channel_names, config.channel_names
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Baseline
// ---------------------------------------------------------------------------

/// Subtracts, per channel, the mean of the first `n_base` samples.
pub fn baseline_correct(epoch: &Array2<f64>, n_base: usize) -> Array2<f64> {
    let mut out = epoch.clone();
    baseline_correct_in_place(&mut out, n_base);
    out
}

fn baseline_correct_in_place(epoch: &mut Array2<f64>, n_base: usize) {
    if n_base == 0 {
        return;
    }
    for mut row in epoch.rows_mut() {
        let mean = row.slice(s![..n_base]).sum() / n_base as f64;
        row.mapv_inplace(|v| v - mean);
    }
}

// ---------------------------------------------------------------------------
// Notch
// ---------------------------------------------------------------------------

/// Second-order IIR section, `a[0] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    /// Notch at `f0` with quality factor `q` (bandwidth `f0 / q`).
    pub fn notch(f0: f64, fs: f64, q: f64) -> Result<Self> {
        if !(f0 > 0.0 && f0 < fs / 2.0) {
            return Err(Error::InvalidArgument(format!(
                "notch frequency {f0} Hz must lie in (0, {}) Hz",
                fs / 2.0
            )));
        }
        if !(q > 0.0) {
            return Err(Error::InvalidArgument(format!("notch quality must be positive, got {q}")));
        }
        let w0 = 2.0 * std::f64::consts::PI * f0 / fs;
        let bw = w0 / q;
        let gain = 1.0 / (1.0 + (bw / 2.0).tan());
        let c = w0.cos();
        Ok(Biquad {
            b: [gain, -2.0 * gain * c, gain],
            a: [1.0, -2.0 * gain * c, 2.0 * gain - 1.0],
        })
    }

    /// Initial state giving a steady-state response to a unit step.
    fn step_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let r1 = b1 - a1 * b0;
        let r2 = b2 - a2 * b0;
        let z0 = (r1 + r2) / (1.0 + a1 + a2);
        [z0, r2 - a2 * z0]
    }

    /// Direct form II transposed, in place, from state `z`.
    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + z[0];
            z[0] = b1 * input - a1 * y + z[1];
            z[1] = b2 * input - a2 * y;
            *v = y;
        }
    }

    /// Forward-backward application with odd-extension padding of
    /// `3 * 3` samples and steady-state initial conditions on both passes.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        let pad = 9;
        if n <= pad {
            return Err(Error::InvalidArgument(format!(
                "signal of length {n} is too short for zero-phase filtering (needs > {pad})"
            )));
        }
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        let zi = self.step_state();
        let x0 = ext[0];
        self.run(&mut ext, [zi[0] * x0, zi[1] * x0]);
        ext.reverse();
        let y0 = ext[0];
        self.run(&mut ext, [zi[0] * y0, zi[1] * y0]);
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }

    /// Magnitude of the single-pass frequency response at `f` Hz.
    pub fn magnitude(&self, f: f64, fs: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * f / fs;
        let eval = |c: &[f64; 3]| {
            let re = c[0] + c[1] * w.cos() + c[2] * (2.0 * w).cos();
            let im = -(c[1] * w.sin() + c[2] * (2.0 * w).sin());
            (re, im)
        };
        let (nr, ni) = eval(&self.b);
        let (dr, di) = eval(&self.a);
        ((nr * nr + ni * ni) / (dr * dr + di * di)).sqrt()
    }
}

/// Zero-phase notch at `f0` Hz.
pub fn notch_filter(signal: &[f64], f0: f64, fs: f64, q: f64) -> Result<Vec<f64>> {
    Biquad::notch(f0, fs, q)?.filtfilt(signal)
}

// ---------------------------------------------------------------------------
// Savitzky-Golay
// ---------------------------------------------------------------------------

/// How the first and last `window / 2` output samples are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeMode {
    /// Evaluate the polynomial fitted to the first (last) full window.
    Interp,
    /// Reflect about the end samples (`x[1], x[2], ...`) and filter as usual.
    Mirror,
}

/// Least-squares polynomial smoother.
#[derive(Debug, Clone)]
pub struct SavitzkyGolay {
    order: usize,
    window: usize,
    /// Hat matrix of the windowed fit, `window x window` row-major; row `i`
    /// gives the fitted value at position `i` from the window's samples.
    hat: Vec<f64>,
}

impl SavitzkyGolay {
    pub fn new(order: usize, window: usize) -> Result<Self> {
        if window % 2 == 0 {
            return Err(Error::InvalidArgument(format!("window {window} must be odd")));
        }
        if window <= order {
            return Err(Error::InvalidArgument(format!(
                "window {window} must exceed polynomial order {order}"
            )));
        }
        let half = (window / 2) as f64;
        let scale = if half > 0.0 { half } else { 1.0 };
        let design = faer::Mat::<f64>::from_fn(window, order + 1, |i, j| {
            ((i as f64 - half) / scale).powi(j as i32)
        });
        let q = design.qr().compute_thin_Q();
        let hat_mat = &q * q.transpose();
        let mut hat = Vec::with_capacity(window * window);
        for i in 0..window {
            for j in 0..window {
                hat.push(hat_mat[(i, j)]);
            }
        }
        Ok(SavitzkyGolay { order, window, hat })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Convolution weights of the central (smoothing) position.
    pub fn coefficients(&self) -> &[f64] {
        let m = self.window / 2;
        &self.hat[m * self.window..(m + 1) * self.window]
    }

    fn hat_row(&self, i: usize) -> &[f64] {
        &self.hat[i * self.window..(i + 1) * self.window]
    }

    pub fn apply(&self, x: &[f64], mode: EdgeMode) -> Result<Vec<f64>> {
        let n = x.len();
        let w = self.window;
        let m = w / 2;
        if n < w {
            return Err(Error::InvalidArgument(format!(
                "signal of length {n} is shorter than the window {w}"
            )));
        }
        let coef = self.coefficients();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let mut out = vec![0.0; n];
        for i in m..n - m {
            out[i] = dot(coef, &x[i - m..i + m + 1]);
        }
        match mode {
            EdgeMode::Interp => {
                let head = &x[..w];
                let tail = &x[n - w..];
                for i in 0..m {
                    out[i] = dot(self.hat_row(i), head);
                    out[n - m + i] = dot(self.hat_row(m + 1 + i), tail);
                }
            }
            EdgeMode::Mirror => {
                let at = |k: isize| -> f64 {
                    let last = n as isize - 1;
                    let idx = if k < 0 {
                        -k
                    } else if k > last {
                        2 * last - k
                    } else {
                        k
                    };
                    x[idx as usize]
                };
                for i in (0..m).chain(n - m..n) {
                    out[i] = coef
                        .iter()
                        .enumerate()
                        .map(|(j, c)| c * at(i as isize + j as isize - m as isize))
                        .sum();
                }
            }
        }
        Ok(out)
    }
}

/// Savitzky-Golay smoothing with polynomial-fit edges.
pub fn savitzky_golay(signal: &[f64], order: usize, window: usize) -> Result<Vec<f64>> {
    SavitzkyGolay::new(order, window)?.apply(signal, EdgeMode::Interp)
}

// ---------------------------------------------------------------------------
// Downsampling
// ---------------------------------------------------------------------------

/// Bin `j` of `target` covers `[floor(j*L/target), floor((j+1)*L/target))`.
pub fn bin_edges(len: usize, target: usize) -> Vec<usize> {
    (0..=target).map(|j| j * len / target).collect()
}

/// Mean over each of `target` equal-width bins.
pub fn downsample(x: &[f64], target: usize) -> Result<Vec<f64>> {
    if target == 0 || target > x.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot downsample {} samples to {target}",
            x.len()
        )));
    }
    let edges = bin_edges(x.len(), target);
    Ok(edges
        .windows(2)
        .map(|e| x[e[0]..e[1]].iter().sum::<f64>() / (e[1] - e[0]) as f64)
        .collect())
}

/// Post-onset time (seconds) at the centre of each downsampled bin.
pub fn bin_times(config: &ExperimentConfig) -> Vec<f64> {
    let edges = bin_edges(config.post_samples(), config.downsample_to);
    edges
        .windows(2)
        .map(|e| (e[0] + e[1] - 1) as f64 / 2.0 / config.sampling_rate_fs)
        .collect()
}

// ---------------------------------------------------------------------------
// Full chain
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    /// `channels * downsample_to`, channel-major.
    pub values: Vec<f64>,
    pub trial_id: usize,
    pub repetition_idx: usize,
    pub stimulus_id: usize,
    pub cued_target: usize,
    pub is_target: bool,
}

/// Precomputed filters for one configuration.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    n_base: usize,
    n_post: usize,
    n_channels: usize,
    downsample_to: usize,
    notch: Biquad,
    sg: SavitzkyGolay,
}

impl Preprocessor {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.ensure_valid()?;
        Ok(Preprocessor {
            n_base: config.baseline_samples(),
            n_post: config.post_samples(),
            n_channels: config.n_channels(),
            downsample_to: config.downsample_to,
            notch: Biquad::notch(config.notch_hz, config.sampling_rate_fs, NOTCH_Q)?,
            sg: SavitzkyGolay::new(config.sg_order, config.sg_window)?,
        })
    }

    fn check_shape(&self, epoch: &ArrayView2<f64>) -> Result<()> {
        let expected = (self.n_channels, self.n_base + self.n_post);
        if epoch.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected: expected.0 * expected.1,
                got: epoch.len(),
            });
        }
        Ok(())
    }

    /// Baseline, notch and smoothing over the full window (pre-window kept).
    pub fn filtered(&self, epoch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_shape(&epoch)?;
        let mut data = epoch.to_owned();
        baseline_correct_in_place(&mut data, self.n_base);
        for mut row in data.rows_mut() {
            let x: Vec<f64> = row.iter().copied().collect();
            let y = self.sg.apply(&self.notch.filtfilt(&x)?, EdgeMode::Interp)?;
            row.iter_mut().zip(y).for_each(|(o, v)| *o = v);
        }
        Ok(data)
    }

    /// Full chain to a channel-major feature vector.
    pub fn features(&self, epoch: ArrayView2<f64>) -> Result<Vec<f64>> {
        let data = self.filtered(epoch)?;
        let mut out = Vec::with_capacity(self.n_channels * self.downsample_to);
        for row in data.rows() {
            let post: Vec<f64> = row.slice(s![self.n_base..]).iter().copied().collect();
            out.extend(downsample(&post, self.downsample_to)?);
        }
        Ok(out)
    }
}

impl FeatureVector {
    fn new(values: Vec<f64>, e: &StimulusEvent) -> Self {
        FeatureVector {
            values,
            trial_id: e.trial_id,
            repetition_idx: e.repetition_idx,
            stimulus_id: e.stimulus_id,
            cued_target: e.cued_target,
            is_target: e.is_target(),
        }
    }
}

pub fn preprocess(epochs: &EpochSet, config: &ExperimentConfig) -> Result<Vec<FeatureVector>> {
    let pre = Preprocessor::new(config)?;
    epochs
        .epochs
        .par_iter()
        .map(|e| {
            Ok(FeatureVector {
                values: pre.features(e.data.view())?,
                trial_id: e.trial_id,
                repetition_idx: e.repetition_idx,
                stimulus_id: e.stimulus_id,
                cued_target: e.cued_target,
                is_target: e.is_target,
            })
        })
        .collect()
}

/// Epoching and preprocessing fused, without materializing the epoch set.
pub fn features_from_recording(recording: &ContinuousRecording, config: &ExperimentConfig) -> Result<Vec<FeatureVector>> {
    check_channels(recording, config)?;
    let pre = Preprocessor::new(config)?;
    recording
        .events
        .par_iter()
        .map(|e| {
            Ok(FeatureVector::new(pre.features(epoch_view(recording, e, config)?)?, e))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

const FEATURE_META: [&str; 5] = ["trial_id", "repetition_idx", "stimulus_id", "is_target", "cued_target"];

/// One row per epoch: provenance columns, then `v0..v{n-1}`.
pub fn write_features_csv<W: Write>(features: &[FeatureVector], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let width = features.first().map_or(0, |f| f.values.len());
    let mut header: Vec<String> = FEATURE_META.iter().map(|s| s.to_string()).collect();
    header.extend((0..width).map(|i| format!("v{i}")));
    w.write_record(&header)?;
    for f in features {
        if f.values.len() != width {
            return Err(Error::DimensionMismatch {
                expected: width,
                got: f.values.len(),
            });
        }
        let mut rec = vec![
            f.trial_id.to_string(),
            f.repetition_idx.to_string(),
            f.stimulus_id.to_string(),
            (f.is_target as u8).to_string(),
            f.cued_target.to_string(),
        ];
        rec.extend(f.values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<feature csv>", e))?;
    Ok(())
}

pub fn read_features_csv<R: Read>(input: R) -> Result<Vec<FeatureVector>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.len() < FEATURE_META.len() || FEATURE_META.iter().zip(header.iter()).any(|(a, b)| *a != b) {
        return Err(Error::Format(format!("unexpected feature header {header:?}")));
    }
    let parse_usize = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad integer '{s}'")));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let values = rec
            .iter()
            .skip(FEATURE_META.len())
            .map(|s| s.parse::<f64>().map_err(|_| Error::Format(format!("bad number '{s}'"))))
            .collect::<Result<Vec<_>>>()?;
        out.push(FeatureVector {
            values,
            trial_id: parse_usize(&rec[0])?,
            repetition_idx: parse_usize(&rec[1])?,
            stimulus_id: parse_usize(&rec[2])?,
            is_target: parse_usize(&rec[3])? != 0,
            cued_target: parse_usize(&rec[4])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{build_session, Phase};
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    fn sine(f: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / fs).sin()).collect()
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn recording(config: &ExperimentConfig, events: Vec<StimulusEvent>, n_samples: usize) -> ContinuousRecording {
        ContinuousRecording {
            fs: config.sampling_rate_fs,
            channel_names: config.channel_names.clone(),
            samples: Array2::zeros((config.n_channels(), n_samples)),
            events,
        }
    }

    #[test]
    fn one_trial_gives_75_epochs() {
        let cfg = ExperimentConfig::exp1(crate::Condition::AudioVisual);
        let plan = build_session(&cfg, Phase::Training, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let trial = plan.trials().next().unwrap();
        let n = ((trial.last_onset() + 1.5) * cfg.sampling_rate_fs) as usize;
        let set = extract_epochs(&recording(&cfg, trial.events.clone(), n), &cfg).unwrap();
        assert_eq!(set.len(), 75);
        assert!(set.epochs.iter().all(|e| e.data.dim() == (8, 550)));
    }

    #[test]
    fn short_soa_epochs_overlap() {
        let cfg = ExperimentConfig::exp2(0.25);
        let ev = |onset_s, stimulus_id| StimulusEvent {
            onset_s,
            stimulus_id,
            trial_id: 0,
            repetition_idx: 0,
            cued_target: 0,
        };
        let rec = recording(&cfg, vec![ev(1.0, 0), ev(1.25, 1)], 2000);
        let (a0, a1) = epoch_bounds(&rec.events[0], &cfg, 2000).unwrap();
        let (b0, _) = epoch_bounds(&rec.events[1], &cfg, 2000).unwrap();
        let post_a = a0 + cfg.baseline_samples();
        let post_b = b0 + cfg.baseline_samples();
        assert_eq!(a1 - post_b, 375);
        assert_eq!(post_b - post_a, 125);
    }

    #[test]
    fn early_event_out_of_bounds() {
        let cfg = ExperimentConfig::default();
        let e = StimulusEvent {
            onset_s: 0.05,
            stimulus_id: 2,
            trial_id: 4,
            repetition_idx: 1,
            cued_target: 0,
        };
        let err = extract_epochs(&recording(&cfg, vec![e], 5000), &cfg).unwrap_err();
        assert!(matches!(err, Error::EventOutOfBounds { trial_id: 4, stimulus_id: 2, .. }));
        let late = StimulusEvent { onset_s: 9.5, ..e };
        assert!(extract_epochs(&recording(&cfg, vec![late], 5000), &cfg).is_err());
    }

    #[test]
    fn baseline_examples() {
        let c = Array2::from_elem((2, 10), 7.0);
        assert!(baseline_correct(&c, 3).iter().all(|&v| v == 0.0));
        let z = Array2::<f64>::zeros((2, 10));
        assert_eq!(baseline_correct(&z, 3), z);
        let mut x = Array2::zeros((1, 4));
        x[[0, 0]] = 2.0;
        x[[0, 1]] = 3.0;
        x[[0, 3]] = 4.0;
        assert!((baseline_correct(&x, 2)[[0, 3]] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn notch_coefficients_match_reference_design() {
        // scipy.signal.iirnotch(50, 30, 500)
        let f = Biquad::notch(50.0, 500.0, 30.0).unwrap();
        let b = [0.98963618, -1.60126497, 0.98963618];
        let a = [1.0, -1.60126497, 0.97927235];
        for i in 0..3 {
            assert!((f.b[i] - b[i]).abs() < 1e-8);
            assert!((f.a[i] - a[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn notch_removes_line_frequency() {
        let x = sine(50.0, 500.0, 5000);
        let y = notch_filter(&x, 50.0, 500.0, NOTCH_Q).unwrap();
        // Steady state: skip the first and last second.
        assert!(rms(&y[500..4500]) <= 0.03 * rms(&x[500..4500]));
        let f = Biquad::notch(50.0, 500.0, NOTCH_Q).unwrap();
        assert!(20.0 * (f.magnitude(50.0, 500.0).powi(2)).max(1e-300).log10() <= -30.0);
    }

    #[test]
    fn notch_passes_dc_and_distant_tones() {
        let y = notch_filter(&vec![1.0; 1000], 50.0, 500.0, NOTCH_Q).unwrap();
        assert!(y.iter().all(|v| (v - 1.0).abs() < 1e-6));
        let x = sine(10.0, 500.0, 5000);
        let y = notch_filter(&x, 50.0, 500.0, NOTCH_Q).unwrap();
        assert!((rms(&y[500..4500]) / rms(&x[500..4500]) - 1.0).abs() < 0.01);
        let f = Biquad::notch(50.0, 500.0, NOTCH_Q).unwrap();
        for hz in [0.0, 25.0, 100.0, 200.0] {
            let db = 20.0 * f.magnitude(hz, 500.0).powi(2).log10();
            assert!(db.abs() < 0.5, "{hz} Hz: {db} dB");
        }
    }

    #[test]
    fn notch_rejects_bad_frequency() {
        assert!(Biquad::notch(250.0, 500.0, 30.0).is_err());
        assert!(Biquad::notch(300.0, 500.0, 30.0).is_err());
        assert!(Biquad::notch(0.0, 500.0, 30.0).is_err());
        assert!(Biquad::notch(50.0, 500.0, 0.0).is_err());
    }

    #[test]
    fn filtfilt_matches_reference_output() {
        // scipy.signal.filtfilt(*iirnotch(50, 30, 500), x)
        let x: Vec<f64> = (0..500)
            .map(|i| (0.37 * i as f64).sin() + 0.1 * (i % 7) as f64 - 0.02 * i as f64)
            .collect();
        let y = notch_filter(&x, 50.0, 500.0, 30.0).unwrap();
        for (i, want) in [
            (0, -0.01476187670738019),
            (1, 0.41699082795858416),
            (250, -5.4837931152273764),
            (499, -9.137721689423799),
        ] {
            assert!((y[i] - want).abs() < 1e-9, "y[{i}] = {}", y[i]);
        }
    }

    #[test]
    fn savitzky_golay_reproduces_cubics() {
        let x: Vec<f64> = (0..550)
            .map(|i| {
                let t = (i as f64 - 275.0) / 100.0;
                t * t * t - 2.0 * t
            })
            .collect();
        let y = savitzky_golay(&x, 3, 69).unwrap();
        let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() <= 1e-9 * scale);
        }
        let c = savitzky_golay(&vec![5.0; 200], 3, 69).unwrap();
        assert!(c.iter().all(|v| (v - 5.0).abs() < 1e-12));
    }

    #[test]
    fn savitzky_golay_matches_reference_output() {
        // scipy.signal.savgol_filter(x, 69, 3, mode=...)
        let x: Vec<f64> = (0..500)
            .map(|i| (0.37 * i as f64).sin() + 0.1 * (i % 7) as f64 - 0.02 * i as f64)
            .collect();
        let sg = SavitzkyGolay::new(3, 69).unwrap();
        let interp = sg.apply(&x, EdgeMode::Interp).unwrap();
        let mirror = sg.apply(&x, EdgeMode::Mirror).unwrap();
        let check = |y: &[f64], want: [(usize, f64); 4]| {
            for (i, w) in want {
                assert!((y[i] - w).abs() < 1e-9, "y[{i}] = {}, want {w}", y[i]);
            }
        };
        check(&interp, [(0, 0.8373511885708699), (10, 0.1569704942979564), (250, -4.6307572757305175), (499, -9.15326706895442)]);
        check(&mirror, [(0, 0.4184508434998762), (10, 0.16738389982383373), (250, -4.6307572757305175), (499, -9.402571059436566)]);
    }

    #[test]
    fn smoothed_white_noise_variance_is_coefficient_energy() {
        let sg = SavitzkyGolay::new(3, 69).unwrap();
        let energy: f64 = sg.coefficients().iter().map(|c| c * c).sum();
        let y = sg.apply(&noise(100_000, 3), EdgeMode::Interp).unwrap();
        let inner = &y[34..y.len() - 34];
        let mean = inner.iter().sum::<f64>() / inner.len() as f64;
        let var = inner.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / inner.len() as f64;
        assert!((var / energy - 1.0).abs() < 0.05, "{var} vs {energy}");
    }

    #[test]
    fn savitzky_golay_preconditions() {
        assert!(SavitzkyGolay::new(3, 68).is_err());
        assert!(SavitzkyGolay::new(3, 3).is_err());
        assert!(savitzky_golay(&[1.0; 10], 3, 69).is_err());
    }

    #[test]
    fn downsample_examples() {
        let c = downsample(&vec![3.0; 500], 140).unwrap();
        assert_eq!(c.len(), 140);
        assert!(c.iter().all(|v| (v - 3.0).abs() < 1e-12));
        let ramp: Vec<f64> = (0..500).map(|i| i as f64).collect();
        let r = downsample(&ramp, 140).unwrap();
        assert!(r.windows(2).all(|w| w[1] > w[0]));
        assert!(downsample(&ramp, 501).is_err());
        let e = bin_edges(500, 140);
        assert_eq!((e[0], e[1], e[2], e[140]), (0, 3, 7, 500));
    }

    #[test]
    fn zero_epoch_gives_zero_features() {
        let cfg = ExperimentConfig::default();
        let pre = Preprocessor::new(&cfg).unwrap();
        let f = pre.features(Array2::zeros((8, 550)).view()).unwrap();
        assert_eq!(f.len(), 1120);
        assert!(f.iter().all(|&v| v == 0.0));
        assert!(pre.features(Array2::zeros((8, 549)).view()).is_err());
    }

    #[test]
    fn filtered_epoch_has_zero_baseline_after_first_stage() {
        let x = Array2::from_shape_vec((2, 550), noise(1100, 9)).unwrap();
        let y = baseline_correct(&x, 50);
        for row in y.rows() {
            let m = row.slice(s![..50]).sum() / 50.0;
            assert!(m.abs() < 1e-12 * row.iter().fold(1.0f64, |a, v| a.max(v.abs())));
        }
    }

    #[test]
    fn feature_csv_round_trip() {
        let f = vec![FeatureVector {
            values: vec![0.1, -2.5e-7, 3.0],
            trial_id: 3,
            repetition_idx: 2,
            stimulus_id: 4,
            cued_target: 1,
            is_target: false,
        }];
        let mut buf = Vec::new();
        write_features_csv(&f, &mut buf).unwrap();
        assert_eq!(read_features_csv(buf.as_slice()).unwrap(), f);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn pipeline_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let cfg = ExperimentConfig::default();
            let pre = Preprocessor::new(&cfg).unwrap();
            let x = Array2::from_shape_vec((8, 550), noise(4400, seed)).unwrap();
            let y = Array2::from_shape_vec((8, 550), noise(4400, seed + 5000)).unwrap();
            let mix = &x * a + &y * b;
            let fx = pre.features(x.view()).unwrap();
            let fy = pre.features(y.view()).unwrap();
            let fm = pre.features(mix.view()).unwrap();
            let scale = fm.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for i in 0..fm.len() {
                prop_assert!((fm[i] - (a * fx[i] + b * fy[i])).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn stages_are_linear(seed in 0u64..1000, a in -3.0f64..3.0) {
            let x = noise(600, seed);
            let y = noise(600, seed + 1);
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + q).collect();
            let close = |m: Vec<f64>, p: Vec<f64>, q: Vec<f64>| {
                m.iter().zip(p.iter().zip(&q)).all(|(m, (p, q))| (m - (a * p + q)).abs() < 1e-9)
            };
            prop_assert!(close(notch_filter(&mix, 50.0, 500.0, 30.0).unwrap(), notch_filter(&x, 50.0, 500.0, 30.0).unwrap(), notch_filter(&y, 50.0, 500.0, 30.0).unwrap()));
            prop_assert!(close(savitzky_golay(&mix, 3, 69).unwrap(), savitzky_golay(&x, 3, 69).unwrap(), savitzky_golay(&y, 3, 69).unwrap()));
            prop_assert!(close(downsample(&mix, 140).unwrap(), downsample(&x, 140).unwrap(), downsample(&y, 140).unwrap()));
        }

        #[test]
        fn feature_length_is_fixed(seed in 0u64..100, target in 1usize..=500) {
            let cfg = ExperimentConfig { downsample_to: target, ..ExperimentConfig::default() };
            let pre = Preprocessor::new(&cfg).unwrap();
            let x = Array2::from_shape_vec((8, 550), noise(4400, seed)).unwrap();
            prop_assert_eq!(pre.features(x.view()).unwrap().len(), 8 * target);
        }
    }
}
