//! Synthetic continuous EEG.
//!
//! Every stimulus onset receives a copy of the target or nontarget response
//! of an [`ErpTemplate`]; the copies are summed linearly, so responses to
//! stimuli closer together than the template duration overlap. Background
//! noise (white or 1/f) and an optional powerline sinusoid are added on top.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, NoiseModel};
use crate::error::{Error, Result};
use crate::model::{ContinuousRecording, StimulusEvent};
use crate::schedule::{build_session, Phase, SessionPlan};

/// Latency of the target-only parietal bump.
pub const P300_LATENCY_S: f64 = 0.5;
const P300_WIDTH_S: f64 = 0.075;
/// Early bipolar transient shared by both classes: (latency, width, amplitude).
const EARLY_COMPONENTS: [(f64, f64, f64); 2] = [(0.1, 0.02, -3.0), (0.2, 0.03, 4.0)];
/// Raised-cosine ramp at both ends of the template so it starts and ends at zero.
const TAPER_S: f64 = 0.05;
/// Passband of the 1/f background; mirrors the amplifier's analog filters.
pub const NOISE_BAND_HZ: (f64, f64) = (0.1, 30.0);

/// Per-channel gain of the target-specific parietal component.
pub fn p300_gain(channel: &str) -> f64 {
    match channel {
        "P3" | "Pz" | "P4" => 1.0,
        "Cz" => 0.6,
        "C3" | "C4" => 0.4,
        "O1" | "O2" => 0.3,
        _ => 0.5,
    }
}

/// Per-channel gain of the early sensory transient.
pub fn early_gain(channel: &str) -> f64 {
    match channel {
        "O1" | "O2" => 1.5,
        "P3" | "Pz" | "P4" => 1.2,
        _ => 1.0,
    }
}

fn gaussian(t: f64, mu: f64, sigma: f64) -> f64 {
    let z = (t - mu) / sigma;
    (-0.5 * z * z).exp()
}

fn taper(t: f64, duration: f64) -> f64 {
    let edge = t.min(duration - t);
    if edge <= 0.0 {
        0.0
    } else if edge >= TAPER_S {
        1.0
    } else {
        0.5 * (1.0 - (std::f64::consts::PI * edge / TAPER_S).cos())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErpTemplate {
    pub duration_s: f64,
    pub fs: f64,
    /// channels x samples.
    pub target_response: Array2<f64>,
    pub nontarget_response: Array2<f64>,
    pub gains: Vec<f64>,
}

impl ErpTemplate {
    pub fn n_samples(&self) -> usize {
        self.target_response.ncols()
    }

    pub fn response(&self, is_target: bool) -> &Array2<f64> {
        if is_target {
            &self.target_response
        } else {
            &self.nontarget_response
        }
    }
}

/// Builds the deterministic template for the configured montage.
/// `condition_effect` is the target minus nontarget amplitude at the parietal
/// peak.
pub fn make_template(config: &ExperimentConfig, condition_effect: f64) -> Result<ErpTemplate> {
    if !(condition_effect >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "condition_effect must be nonnegative, got {condition_effect}"
        )));
    }
    let duration = config.epoch_len_s;
    let fs = config.sampling_rate_fs;
    let n = config.samples(duration);
    let chans = config.n_channels();
    let gains: Vec<f64> = config.channel_names.iter().map(|c| p300_gain(c)).collect();
    let mut nontarget = Array2::zeros((chans, n));
    let mut target = Array2::zeros((chans, n));
    for (c, name) in config.channel_names.iter().enumerate() {
        let eg = early_gain(name);
        for i in 0..n {
            let t = i as f64 / fs;
            let w = taper(t, duration);
            let early: f64 = EARLY_COMPONENTS
                .iter()
                .map(|&(mu, sd, a)| a * gaussian(t, mu, sd))
                .sum();
            let base = w * eg * early;
            nontarget[[c, i]] = base;
            target[[c, i]] = base + condition_effect * gains[c] * w * gaussian(t, P300_LATENCY_S, P300_WIDTH_S);
        }
    }
    Ok(ErpTemplate {
        duration_s: duration,
        fs,
        target_response: target,
        nontarget_response: nontarget,
        gains,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub model: NoiseModel,
    pub rms: f64,
    pub seed: u64,
}

/// Sums template responses at each onset into a zeroed `channels x n_samples` array.
pub fn superpose(
    events: &[StimulusEvent],
    template: &ErpTemplate,
    n_channels: usize,
    n_samples: usize,
) -> Result<Array2<f64>> {
    if template.target_response.nrows() != n_channels {
        return Err(Error::DimensionMismatch {
            expected: n_channels,
            got: template.target_response.nrows(),
        });
    }
    let len = template.n_samples();
    let mut out = Array2::zeros((n_channels, n_samples));
    for e in events {
        let start = (e.onset_s * template.fs).round();
        if !(e.onset_s >= 0.0) || start as usize + len > n_samples {
            return Err(Error::EventOutOfBounds {
                trial_id: e.trial_id,
                repetition_idx: e.repetition_idx,
                stimulus_id: e.stimulus_id,
                onset_s: e.onset_s,
            });
        }
        let start = start as usize;
        let resp = template.response(e.is_target());
        out.slice_mut(ndarray::s![.., start..start + len])
            .zip_mut_with(resp, |o, &r| *o += r);
    }
    Ok(out)
}

/// Background noise, one independent realization per channel.
pub fn noise(spec: &NoiseSpec, n_channels: usize, n_samples: usize, fs: f64) -> Array2<f64> {
    let mut out = Array2::zeros((n_channels, n_samples));
    if spec.rms == 0.0 || n_samples == 0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n_samples);
    let inv = planner.plan_fft_inverse(n_samples);
    for mut row in out.rows_mut() {
        let white: Vec<f64> = (0..n_samples).map(|_| rng.sample(StandardNormal)).collect();
        let shaped = match spec.model {
            NoiseModel::White => white,
            NoiseModel::OneOverF => {
                let mut buf: Vec<Complex<f64>> = white.iter().map(|&x| Complex::new(x, 0.0)).collect();
                fwd.process(&mut buf);
                let (lo, hi) = NOISE_BAND_HZ;
                for (k, v) in buf.iter_mut().enumerate() {
                    // Bin k and n - k share the same physical frequency.
                    let f = k.min(n_samples - k) as f64 * fs / n_samples as f64;
                    *v *= if f >= lo && f <= hi { 1.0 / f.sqrt() } else { 0.0 };
                }
                inv.process(&mut buf);
                buf.iter().map(|v| v.re).collect()
            }
        };
        let rms = (shaped.iter().map(|x| x * x).sum::<f64>() / n_samples as f64).sqrt();
        let scale = if rms > 0.0 { spec.rms / rms } else { 0.0 };
        for (o, x) in row.iter_mut().zip(&shaped) {
            *o = x * scale;
        }
    }
    out
}

/// Powerline interference: a sinusoid at `freq_hz` with a random phase per channel.
pub fn line_noise(amp: f64, freq_hz: f64, seed: u64, n_channels: usize, n_samples: usize, fs: f64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((n_channels, n_samples));
    if amp == 0.0 {
        return out;
    }
    for mut row in out.rows_mut() {
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        for (i, v) in row.iter_mut().enumerate() {
            *v = amp * (std::f64::consts::TAU * freq_hz * i as f64 / fs + phase).sin();
        }
    }
    out
}

/// Synthesizes the recording for a whole session plan.
pub fn synthesize(
    plan: &SessionPlan,
    template: &ErpTemplate,
    noise_spec: &NoiseSpec,
    config: &ExperimentConfig,
) -> Result<ContinuousRecording> {
    if template.duration_s > config.epoch_len_s + 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "template duration {} s exceeds epoch length {} s",
            template.duration_s, config.epoch_len_s
        )));
    }
    let n_samples = (plan.recording_len_s(config) * config.sampling_rate_fs).ceil() as usize + 1;
    synthesize_events(&plan.events(), n_samples, template, noise_spec, config)
}

/// Synthesizes `n_samples` of signal for an arbitrary event list.
pub fn synthesize_events(
    events: &[StimulusEvent],
    n_samples: usize,
    template: &ErpTemplate,
    noise_spec: &NoiseSpec,
    config: &ExperimentConfig,
) -> Result<ContinuousRecording> {
    let chans = config.n_channels();
    let fs = config.sampling_rate_fs;
    let mut samples = superpose(events, template, chans, n_samples)?;
    samples += &noise(noise_spec, chans, n_samples, fs);
    if config.line_noise_amp > 0.0 {
        let seed = noise_spec.seed ^ 0x5851_f42d_4c95_7f2d;
        samples += &line_noise(config.line_noise_amp, config.notch_hz, seed, chans, n_samples, fs);
    }
    Ok(ContinuousRecording {
        fs,
        channel_names: config.channel_names.clone(),
        samples,
        events: events.to_vec(),
    })
}

/// Derives an independent seed for a named stream of the base seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Schedule plus recording for one phase, seeded from `config.rng_seed`.
pub fn simulate_session(config: &ExperimentConfig, phase: Phase) -> Result<(SessionPlan, ContinuousRecording)> {
    config.ensure_valid()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.rng_seed, phase.stream()));
    let plan = build_session(config, phase, &mut rng)?;
    let template = make_template(config, config.condition_effect)?;
    let noise_spec = NoiseSpec {
        model: config.noise_model,
        rms: config.noise_rms,
        seed: derive_seed(config.rng_seed, 100 + phase.stream()),
    };
    let rec = synthesize(&plan, &template, &noise_spec, config)?;
    Ok((plan, rec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::build_trial;

    fn quiet() -> ExperimentConfig {
        ExperimentConfig {
            noise_rms: 0.0,
            line_noise_amp: 0.0,
            ..Default::default()
        }
    }

    fn zero_noise() -> NoiseSpec {
        NoiseSpec {
            model: NoiseModel::White,
            rms: 0.0,
            seed: 0,
        }
    }

    fn event(onset_s: f64, stimulus_id: usize, cued_target: usize) -> StimulusEvent {
        StimulusEvent {
            onset_s,
            stimulus_id,
            trial_id: 0,
            repetition_idx: 0,
            cued_target,
        }
    }

    #[test]
    fn zero_effect_gives_identical_classes() {
        let t = make_template(&quiet(), 0.0).unwrap();
        assert_eq!(t.target_response, t.nontarget_response);
    }

    #[test]
    fn effect_sets_pz_peak_difference() {
        let cfg = quiet();
        let t = make_template(&cfg, 2.0).unwrap();
        let pz = cfg.channel_index("Pz").unwrap();
        let diff = &t.target_response.row(pz) - &t.nontarget_response.row(pz);
        let (lo, hi) = (cfg.samples(0.4), cfg.samples(0.6));
        let peak = diff.slice(ndarray::s![lo..=hi]).iter().cloned().fold(f64::MIN, f64::max);
        assert!((peak - 2.0).abs() < 1e-12, "{peak}");
        let argmax = diff.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(argmax, cfg.samples(P300_LATENCY_S));
    }

    #[test]
    fn parietal_channels_carry_full_effect() {
        let cfg = quiet();
        let t = make_template(&cfg, 3.0).unwrap();
        let i = cfg.samples(P300_LATENCY_S);
        for ch in ["P3", "Pz", "P4"] {
            let c = cfg.channel_index(ch).unwrap();
            let d = t.target_response[[c, i]] - t.nontarget_response[[c, i]];
            assert!((d - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn difference_is_linear_in_effect() {
        let cfg = quiet();
        let a = make_template(&cfg, 1.5).unwrap();
        let b = make_template(&cfg, 3.0).unwrap();
        let da = &a.target_response - &a.nontarget_response;
        let db = &b.target_response - &b.nontarget_response;
        for (x, y) in da.iter().zip(db.iter()) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn responses_start_at_zero() {
        let t = make_template(&quiet(), 4.0).unwrap();
        assert!(t.target_response.column(0).iter().all(|&v| v == 0.0));
        assert!(t.nontarget_response.column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negative_effect_rejected() {
        assert!(make_template(&quiet(), -1.0).is_err());
    }

    #[test]
    fn single_event_reproduces_template() {
        let cfg = quiet();
        let t = make_template(&cfg, 2.0).unwrap();
        let onset = 0.3;
        let rec = synthesize_events(&[event(onset, 1, 1)], 1000, &t, &zero_noise(), &cfg).unwrap();
        let start = cfg.samples(onset);
        for c in 0..cfg.n_channels() {
            for i in 0..1000 {
                let expect = if i >= start && i < start + t.n_samples() {
                    t.target_response[[c, i - start]]
                } else {
                    0.0
                };
                assert_eq!(rec.samples[[c, i]], expect);
            }
        }
    }

    #[test]
    fn overlapping_responses_add() {
        let cfg = ExperimentConfig {
            soa_s: 0.25,
            stim_duration_s: 0.125,
            ..quiet()
        };
        let t = make_template(&cfg, 2.0).unwrap();
        let e1 = event(1.0, 0, 0);
        let e2 = event(1.25, 1, 0);
        let rec = synthesize_events(&[e1, e2], 2000, &t, &zero_noise(), &cfg).unwrap();
        let i = cfg.samples(1.25 + 0.1);
        let pz = cfg.channel_index("Pz").unwrap();
        let expect = t.nontarget_response[[pz, cfg.samples(0.1)]] + t.target_response[[pz, cfg.samples(0.35)]];
        assert!((rec.samples[[pz, i]] - expect).abs() < 1e-12);
    }

    #[test]
    fn superposition_is_linear() {
        let cfg = ExperimentConfig {
            soa_s: 0.1,
            stim_duration_s: 0.05,
            repetitions: 3,
            ..quiet()
        };
        let t = make_template(&cfg, 5.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trial = build_trial(&cfg, 2, 0, 0.5, &mut rng).unwrap();
        let (a, b): (Vec<_>, Vec<_>) = trial.events.iter().enumerate().partition(|(i, _)| i % 3 == 0);
        let a: Vec<_> = a.into_iter().map(|(_, e)| *e).collect();
        let b: Vec<_> = b.into_iter().map(|(_, e)| *e).collect();
        let n = 1500;
        let spec = NoiseSpec {
            model: NoiseModel::OneOverF,
            rms: 3.0,
            seed: 8,
        };
        let all = synthesize_events(&trial.events, n, &t, &spec, &cfg).unwrap().samples;
        let ra = superpose(&a, &t, 8, n).unwrap();
        let rb = superpose(&b, &t, 8, n).unwrap();
        let nz = noise(&spec, 8, n, cfg.sampling_rate_fs);
        let recomposed = &ra + &rb + &nz;
        for (x, y) in all.iter().zip(recomposed.iter()) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn out_of_bounds_event() {
        let cfg = quiet();
        let t = make_template(&cfg, 1.0).unwrap();
        let err = superpose(&[event(1.8, 0, 0)], &t, 8, 1000).unwrap_err();
        assert!(matches!(err, Error::EventOutOfBounds { .. }));
        assert!(superpose(&[event(-0.1, 0, 0)], &t, 8, 1000).is_err());
    }

    #[test]
    fn noise_rms_is_exact_and_seeded() {
        for model in [NoiseModel::White, NoiseModel::OneOverF] {
            let spec = NoiseSpec { model, rms: 7.5, seed: 99 };
            let a = noise(&spec, 2, 5000, 500.0);
            let b = noise(&spec, 2, 5000, 500.0);
            assert_eq!(a, b);
            let row = a.row(0);
            let rms = (row.iter().map(|x| x * x).sum::<f64>() / 5000.0).sqrt();
            let tol = if model == NoiseModel::White { 0.3 } else { 1e-9 };
            assert!((rms - 7.5).abs() < tol, "{model:?} {rms}");
        }
    }

    #[test]
    fn one_over_f_is_band_limited() {
        let n = 8192;
        let fs = 500.0;
        let spec = NoiseSpec {
            model: NoiseModel::OneOverF,
            rms: 1.0,
            seed: 4,
        };
        let x = noise(&spec, 1, n, fs);
        let mut buf: Vec<Complex<f64>> = x.row(0).iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let power = |lo: f64, hi: f64| -> f64 {
            (0..n / 2)
                .filter(|&k| {
                    let f = k as f64 * fs / n as f64;
                    f >= lo && f < hi
                })
                .map(|k| buf[k].norm_sqr())
                .sum()
        };
        assert!(power(40.0, 250.0) < 1e-12 * power(1.0, 30.0));
        // Equal power per octave, within sampling fluctuation.
        let ratio = power(2.0, 4.0) / power(8.0, 16.0);
        assert!(ratio > 0.6 && ratio < 1.6, "{ratio}");
    }

    #[test]
    fn seeded_sessions_identical() {
        let cfg = ExperimentConfig {
            n_runs_train: 1,
            ..Default::default()
        };
        let (p1, r1) = simulate_session(&cfg, Phase::Training).unwrap();
        let (p2, r2) = simulate_session(&cfg, Phase::Training).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(r1, r2);
        let other = ExperimentConfig { rng_seed: 1, ..cfg };
        let (_, r3) = simulate_session(&other, Phase::Training).unwrap();
        assert_ne!(r1.samples, r3.samples);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(0, 1), derive_seed(0, 2));
        assert_ne!(derive_seed(0, 1), derive_seed(1, 1));
    }
}
