//! Bit rates, point-biserial r² maps and grand averages.

use std::io::Write;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::ExperimentConfig;
use crate::dsp::{bin_times, epoch_view, FeatureVector, Preprocessor};
use crate::error::{Error, Result};
use crate::model::{ContinuousRecording, EpochSet};

// ---------------------------------------------------------------------------
// Information transfer rate
// ---------------------------------------------------------------------------

/// Seconds per selection: cue, `R * Ns - 1` onset intervals, then the buffer
/// that holds the last response.
pub fn output_period(t_cue_s: f64, soa_s: f64, repetitions: usize, n_stimuli: usize, t_buffer_s: f64) -> f64 {
    t_cue_s + soa_s * (repetitions * n_stimuli) as f64 - soa_s + t_buffer_s
}

/// Bits per selection for accuracy `a` among `n_stimuli` equiprobable classes.
///
/// Written as `a log2(a Ns) + (1-a) log2((1-a) Ns / (Ns-1))`, which equals
/// `log2 Ns + a log2 a + (1-a) log2((1-a)/(Ns-1))` and is exactly zero at
/// chance. The `0 log 0` terms at `a = 0` and `a = 1` are taken as zero.
pub fn bits_per_selection(a: f64, n_stimuli: usize) -> f64 {
    let ns = n_stimuli as f64;
    let hit = if a > 0.0 { a * (a * ns).log2() } else { 0.0 };
    let miss = if a < 1.0 {
        (1.0 - a) * ((1.0 - a) * ns / (ns - 1.0)).log2()
    } else {
        0.0
    };
    hit + miss
}

/// Bit rate in bit/min. The expression never goes negative: accuracies below
/// chance score the same distance from uniform as accuracies above it.
pub fn itr(a: f64, n_stimuli: usize, period_s: f64) -> f64 {
    60.0 / period_s * bits_per_selection(a, n_stimuli)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItrSummary {
    pub per_subject: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n - 1); zero for a single subject.
    pub sd: f64,
}

/// Per-subject ITRs, then their mean and sample SD.
pub fn mean_itr(accuracies: &[f64], n_stimuli: usize, period_s: f64) -> Result<ItrSummary> {
    if accuracies.is_empty() {
        return Err(Error::InvalidArgument("no accuracies".into()));
    }
    let per_subject: Vec<f64> = accuracies.iter().map(|&a| itr(a, n_stimuli, period_s)).collect();
    let (mean, sd) = mean_sd(&per_subject);
    Ok(ItrSummary { per_subject, mean, sd })
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

// ---------------------------------------------------------------------------
// Grand average
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct GrandAverage {
    /// Seconds relative to onset for each column (starts at `-baseline`).
    pub times: Vec<f64>,
    pub target: Array2<f64>,
    pub nontarget: Array2<f64>,
    pub n_target: usize,
    pub n_nontarget: usize,
}

impl GrandAverage {
    pub fn difference(&self) -> Array2<f64> {
        &self.target - &self.nontarget
    }
}

/// Per-class mean of baseline-corrected, notched and smoothed epochs.
/// No downsampling.
pub fn grand_average(epochs: &EpochSet, config: &ExperimentConfig) -> Result<GrandAverage> {
    accumulate_average(
        epochs.epochs.iter().map(|e| Ok((e.data.view(), e.is_target))),
        config,
    )
}

/// [`grand_average`] straight from a recording's event log.
pub fn grand_average_recording(recording: &ContinuousRecording, config: &ExperimentConfig) -> Result<GrandAverage> {
    accumulate_average(
        recording
            .events
            .iter()
            .map(|e| Ok((epoch_view(recording, e, config)?, e.is_target()))),
        config,
    )
}

fn accumulate_average<'a>(
    epochs: impl Iterator<Item = Result<(ArrayView2<'a, f64>, bool)>>,
    config: &ExperimentConfig,
) -> Result<GrandAverage> {
    let pre = Preprocessor::new(config)?;
    let shape = (config.n_channels(), config.epoch_samples());
    let mut target = Array2::zeros(shape);
    let mut nontarget = Array2::zeros(shape);
    let (mut nt, mut nn) = (0usize, 0usize);
    for item in epochs {
        let (data, is_target) = item?;
        let f = pre.filtered(data)?;
        if is_target {
            target += &f;
            nt += 1;
        } else {
            nontarget += &f;
            nn += 1;
        }
    }
    if nt == 0 || nn == 0 {
        return Err(Error::MissingClass(format!(
            "grand average needs both classes, got {nt} target and {nn} nontarget epochs"
        )));
    }
    target /= nt as f64;
    nontarget /= nn as f64;
    let n_base = config.baseline_samples() as f64;
    let times = (0..shape.1)
        .map(|i| (i as f64 - n_base) / config.sampling_rate_fs)
        .collect();
    Ok(GrandAverage {
        times,
        target,
        nontarget,
        n_target: nt,
        n_nontarget: nn,
    })
}

pub fn write_grand_average_csv<W: Write>(ga: &GrandAverage, channels: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["class".to_string(), "channel".to_string()];
    header.extend(ga.times.iter().map(|t| t.to_string()));
    w.write_record(&header)?;
    for (label, data) in [("target", &ga.target), ("nontarget", &ga.nontarget)] {
        for (c, row) in data.rows().into_iter().enumerate() {
            let mut rec = vec![label.to_string(), channels[c].clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io("<grand average csv>", e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// r² maps
// ---------------------------------------------------------------------------

/// Point-biserial `r = sqrt(N2 N1)/(N2 + N1) * (mu2 - mu1)/sigma` where
/// class 2 is the target class and `sigma` is the population standard
/// deviation of both classes pooled. Returns `None` when `sigma` is zero.
pub fn point_biserial(target: &[f64], nontarget: &[f64]) -> Option<f64> {
    let n2 = target.len() as f64;
    let n1 = nontarget.len() as f64;
    let n = n1 + n2;
    let mu2 = target.iter().sum::<f64>() / n2;
    let mu1 = nontarget.iter().sum::<f64>() / n1;
    let mu = (mu2 * n2 + mu1 * n1) / n;
    let var = target
        .iter()
        .chain(nontarget)
        .map(|x| (x - mu).powi(2))
        .sum::<f64>()
        / n;
    if !(var > 0.0) {
        return None;
    }
    let r = (n2 * n1).sqrt() / n * (mu2 - mu1) / var.sqrt();
    Some(r.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RsqMap {
    pub n_channels: usize,
    pub n_times: usize,
    /// Signed r, channel-major.
    pub r: Vec<f64>,
    /// Cells whose pooled variance was zero (r set to 0).
    pub zero_variance: Vec<bool>,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub alpha: Option<f64>,
    pub significant: Vec<bool>,
}

impl RsqMap {
    pub fn rsq(&self, idx: usize) -> f64 {
        self.r[idx] * self.r[idx]
    }

    pub fn values(&self) -> Vec<f64> {
        self.r.iter().map(|r| r * r).collect()
    }

    pub fn signs(&self) -> Vec<f64> {
        self.r.iter().map(|r| if *r < 0.0 { -1.0 } else { 1.0 }).collect()
    }

    /// Index of the largest r² among significant cells.
    pub fn max_significant(&self) -> Option<usize> {
        (0..self.r.len())
            .filter(|&i| self.significant.get(i).copied().unwrap_or(false))
            .max_by(|&a, &b| self.rsq(a).total_cmp(&self.rsq(b)).then(b.cmp(&a)))
    }

    pub fn with_significance(mut self, alpha: f64) -> Self {
        self.significant = significance_mask(&self, alpha);
        self.alpha = Some(alpha);
        self
    }
}

/// r² per (channel, time bin) over downsampled feature vectors.
pub fn rsq_map(features: &[FeatureVector], n_channels: usize) -> Result<RsqMap> {
    let d = features.first().map_or(0, |f| f.values.len());
    if d == 0 || n_channels == 0 || d % n_channels != 0 {
        return Err(Error::InvalidArgument(format!(
            "feature length {d} is not a multiple of {n_channels} channels"
        )));
    }
    let (t, n): (Vec<&FeatureVector>, Vec<&FeatureVector>) = features.iter().partition(|f| f.is_target);
    if t.len() < 2 || n.len() < 2 {
        return Err(Error::MissingClass(format!(
            "r² needs at least 2 epochs per class, got {} target and {} nontarget",
            t.len(),
            n.len()
        )));
    }
    let mut r = Vec::with_capacity(d);
    let mut zero_variance = Vec::with_capacity(d);
    let mut xt = vec![0.0; t.len()];
    let mut xn = vec![0.0; n.len()];
    for j in 0..d {
        for (x, f) in xt.iter_mut().zip(&t) {
            *x = f.values[j];
        }
        for (x, f) in xn.iter_mut().zip(&n) {
            *x = f.values[j];
        }
        match point_biserial(&xt, &xn) {
            Some(v) => {
                r.push(v);
                zero_variance.push(false);
            }
            None => {
                r.push(0.0);
                zero_variance.push(true);
            }
        }
    }
    Ok(RsqMap {
        n_channels,
        n_times: d / n_channels,
        r,
        zero_variance,
        n_target: t.len(),
        n_nontarget: n.len(),
        alpha: None,
        significant: vec![false; d],
    })
}

/// Two-sided test of zero correlation per cell, `t = r sqrt(n-2)/sqrt(1-r²)`
/// with `n - 2` degrees of freedom, Bonferroni-corrected over all cells.
pub fn significance_mask(map: &RsqMap, alpha: f64) -> Vec<bool> {
    let n = (map.n_target + map.n_nontarget) as f64;
    let m = map.r.len() as f64;
    let dist = StudentsT::new(0.0, 1.0, n - 2.0).expect("n >= 4 gives positive degrees of freedom");
    map.r
        .iter()
        .map(|&r| {
            if r == 0.0 {
                return false;
            }
            let r2 = r * r;
            let p = if r2 >= 1.0 {
                0.0
            } else {
                let t = r.abs() * (n - 2.0).sqrt() / (1.0 - r2).sqrt();
                2.0 * dist.sf(t)
            };
            p * m < alpha
        })
        .collect()
}

/// Channel-by-time matrix with a header row of bin-centre times.
pub fn write_matrix_csv<W: Write>(
    values: &[f64],
    n_times: usize,
    channels: &[String],
    times: &[f64],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["channel".to_string()];
    header.extend(times.iter().map(|t| t.to_string()));
    w.write_record(&header)?;
    for (c, name) in channels.iter().enumerate() {
        let mut rec = vec![name.clone()];
        rec.extend(values[c * n_times..(c + 1) * n_times].iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<matrix csv>", e))?;
    Ok(())
}

/// Reads a matrix written by [`write_matrix_csv`]: (channels, times, values).
pub fn read_matrix_csv<R: std::io::Read>(input: R) -> Result<(Vec<String>, Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let parse = |s: &str| s.parse::<f64>().map_err(|_| Error::Format(format!("bad number '{s}'")));
    let times = header.iter().skip(1).map(parse).collect::<Result<Vec<_>>>()?;
    let mut channels = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        channels.push(rec[0].to_string());
        for v in rec.iter().skip(1) {
            values.push(parse(v)?);
        }
    }
    Ok((channels, times, values))
}

/// Post-onset time of each r² map column.
pub fn rsq_times(config: &ExperimentConfig) -> Vec<f64> {
    bin_times(config)
}
