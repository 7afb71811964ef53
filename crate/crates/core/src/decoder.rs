//! PCA + LDA decoding and the evaluation harnesses.
//!
//! Training data are summarized by per-class sufficient statistics (count,
//! sum and scatter about a fixed shift vector). Both the PCA covariance and
//! the LDA pooled within-class covariance are functions of these statistics,
//! so a leave-one-trial-out fold is fitted from the full-data statistics minus
//! those of the held-out trial without revisiting the remaining epochs.
//!
//! A trial is decoded by summing LDA scores over the first `R` repetitions of
//! every stimulus and taking the argmax; ties go to the lowest stimulus id.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dsp::FeatureVector;
use crate::error::{Error, Result};

/// Ridge added to the pooled covariance, relative to its mean eigenvalue.
pub const RIDGE_SCALE: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Sufficient statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct ClassStats {
    n: usize,
    /// Sum of shifted rows.
    sum: Vec<f64>,
    /// Sum of outer products of shifted rows.
    scatter: Mat<f64>,
}

impl ClassStats {
    fn from_rows(rows: &[&[f64]], shift: &[f64]) -> Self {
        let d = shift.len();
        let x = Mat::<f64>::from_fn(rows.len(), d, |i, j| rows[i][j] - shift[j]);
        let mut sum = vec![0.0; d];
        for r in rows {
            for (s, (v, m)) in sum.iter_mut().zip(r.iter().zip(shift)) {
                *s += v - m;
            }
        }
        let scatter = if rows.is_empty() {
            Mat::zeros(d, d)
        } else {
            x.transpose() * &x
        };
        ClassStats {
            n: rows.len(),
            sum,
            scatter,
        }
    }

    fn minus(&self, other: &ClassStats) -> ClassStats {
        ClassStats {
            n: self.n - other.n,
            sum: self.sum.iter().zip(&other.sum).map(|(a, b)| a - b).collect(),
            scatter: &self.scatter - &other.scatter,
        }
    }

    /// Shifted class mean.
    fn mean(&self) -> Vec<f64> {
        self.sum.iter().map(|s| s / self.n as f64).collect()
    }

    /// Scatter about the class mean.
    fn centered_scatter(&self) -> Mat<f64> {
        let m = self.mean();
        let n = self.n as f64;
        Mat::from_fn(m.len(), m.len(), |i, j| self.scatter[(i, j)] - n * m[i] * m[j])
    }
}

/// Two-class sufficient statistics of a feature set.
#[derive(Debug, Clone)]
pub struct FeatureStats {
    shift: Vec<f64>,
    target: ClassStats,
    nontarget: ClassStats,
}

impl FeatureStats {
    pub fn new(rows: &[&[f64]], labels: &[bool], shift: Vec<f64>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                got: labels.len(),
            });
        }
        let d = shift.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        let (t, n): (Vec<_>, Vec<_>) = rows.iter().zip(labels).partition(|(_, &l)| l);
        let t: Vec<&[f64]> = t.into_iter().map(|(r, _)| *r).collect();
        let n: Vec<&[f64]> = n.into_iter().map(|(r, _)| *r).collect();
        Ok(FeatureStats {
            target: ClassStats::from_rows(&t, &shift),
            nontarget: ClassStats::from_rows(&n, &shift),
            shift,
        })
    }

    pub fn from_features(features: &[&FeatureVector], shift: Vec<f64>) -> Result<Self> {
        let rows: Vec<&[f64]> = features.iter().map(|f| f.values.as_slice()).collect();
        let labels: Vec<bool> = features.iter().map(|f| f.is_target).collect();
        Self::new(&rows, &labels, shift)
    }

    /// Statistics of the data in `self` but not in `other` (same shift).
    pub fn minus(&self, other: &FeatureStats) -> Result<Self> {
        if self.shift != other.shift || other.target.n > self.target.n || other.nontarget.n > self.nontarget.n {
            return Err(Error::InvalidArgument("statistics are not nested".into()));
        }
        Ok(FeatureStats {
            shift: self.shift.clone(),
            target: self.target.minus(&other.target),
            nontarget: self.nontarget.minus(&other.nontarget),
        })
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn counts(&self) -> (usize, usize) {
        (self.target.n, self.nontarget.n)
    }

    fn total(&self) -> usize {
        self.target.n + self.nontarget.n
    }

    /// Mean over both classes.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.total() as f64;
        self.shift
            .iter()
            .zip(self.target.sum.iter().zip(&self.nontarget.sum))
            .map(|(s, (a, b))| s + (a + b) / n)
            .collect()
    }

    /// Sample covariance of both classes pooled as one population.
    pub fn covariance(&self) -> Mat<f64> {
        let n = self.total() as f64;
        let m: Vec<f64> = self
            .target
            .sum
            .iter()
            .zip(&self.nontarget.sum)
            .map(|(a, b)| (a + b) / n)
            .collect();
        let d = self.dim();
        Mat::from_fn(d, d, |i, j| {
            (self.target.scatter[(i, j)] + self.nontarget.scatter[(i, j)] - n * m[i] * m[j]) / (n - 1.0)
        })
    }

    /// Within-class covariance pooled over the two classes.
    pub fn pooled_within_covariance(&self) -> Mat<f64> {
        let dof = (self.total() - 2) as f64;
        let st = self.target.centered_scatter();
        let sn = self.nontarget.centered_scatter();
        let d = self.dim();
        Mat::from_fn(d, d, |i, j| (st[(i, j)] + sn[(i, j)]) / dof)
    }

    fn class_mean(&self, c: &ClassStats) -> Vec<f64> {
        c.mean().iter().zip(&self.shift).map(|(m, s)| m + s).collect()
    }
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k x d`, row-major; rows are orthonormal.
    pub components: Vec<f64>,
    pub explained_ratio: Vec<f64>,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.explained_ratio.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn component(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.components[i * d..(i + 1) * d]
    }

    #[cfg(test)]
    fn components_mat(&self) -> Mat<f64> {
        let d = self.dim();
        Mat::from_fn(self.n_components(), d, |i, j| self.components[i * d + j])
    }

    /// `components * (x - mean)`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok((0..self.n_components())
            .map(|i| dot(self.component(i), &centered))
            .collect())
    }

    pub fn cumulative_ratio(&self) -> f64 {
        self.explained_ratio.iter().sum()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Eigendecomposition of a covariance matrix, keeping the fewest leading
/// components whose cumulative variance ratio reaches `threshold`.
pub fn pca_from_covariance(mean: Vec<f64>, cov: &Mat<f64>, threshold: f64) -> Result<PcaModel> {
    Ok(pca_eigen(mean, cov, threshold)?.0)
}

/// PCA model plus the retained eigenvalues (component variances).
fn pca_eigen(mean: Vec<f64>, cov: &Mat<f64>, threshold: f64) -> Result<(PcaModel, Vec<f64>)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!("PCA threshold {threshold} outside (0, 1]")));
    }
    let d = cov.nrows();
    let evd = cov
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Degenerate(format!("eigendecomposition failed: {e:?}")))?;
    let values = evd.S().column_vector();
    let vectors = evd.U();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let lmax = values[order[0]].max(0.0);
    // Eigenvalues below this are roundoff of exact zeros.
    let tol = lmax * d as f64 * f64::EPSILON;
    let kept: Vec<usize> = order.into_iter().filter(|&i| values[i] > tol).collect();
    if kept.is_empty() || lmax <= 0.0 {
        return Err(Error::Degenerate("features have zero variance".into()));
    }
    let total: f64 = kept.iter().map(|&i| values[i]).sum();
    let mut cum = 0.0;
    let mut k = kept.len();
    for (n, &i) in kept.iter().enumerate() {
        cum += values[i];
        if cum >= threshold * total {
            k = n + 1;
            break;
        }
    }
    let mut components = Vec::with_capacity(k * d);
    for &i in &kept[..k] {
        let col = vectors.col(i);
        let mut v: Vec<f64> = (0..d).map(|r| col[r]).collect();
        let pivot = v
            .iter()
            .enumerate()
            .fold(0, |best, (j, x)| if x.abs() > v[best].abs() { j } else { best });
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.extend(v);
    }
    let explained_ratio = kept[..k].iter().map(|&i| values[i] / total).collect();
    let variances = kept[..k].iter().map(|&i| values[i]).collect();
    Ok((
        PcaModel {
            mean,
            components,
            explained_ratio,
        },
        variances,
    ))
}

/// PCA of the rows of `data` (`n x d`).
pub fn fit_pca(data: &[Vec<f64>], threshold: f64) -> Result<PcaModel> {
    if data.len() < 2 {
        return Err(Error::InvalidArgument(format!("PCA needs at least 2 rows, got {}", data.len())));
    }
    let d = data[0].len();
    if let Some(bad) = data.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    let n = data.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let x = Mat::<f64>::from_fn(data.len(), d, |i, j| data[i][j] - mean[j]);
    let mut cov = x.transpose() * &x;
    cov *= faer::Scale(1.0 / (n - 1.0));
    pca_from_covariance(mean, &cov, threshold)
}

// ---------------------------------------------------------------------------
// LDA
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub mean_target: Vec<f64>,
    pub mean_nontarget: Vec<f64>,
}

impl LdaModel {
    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x)
    }
}

/// Fisher discriminant from class means and the pooled within-class
/// covariance: `w = (S + lambda I)^-1 (mu_t - mu_n)`, `lambda = 1e-6 tr(S) / k`.
pub fn lda_from_moments(mean_target: Vec<f64>, mean_nontarget: Vec<f64>, pooled: &Mat<f64>) -> Result<LdaModel> {
    let k = mean_target.len();
    if pooled.nrows() != k || pooled.ncols() != k || mean_nontarget.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: pooled.nrows(),
        });
    }
    let delta: Vec<f64> = mean_target.iter().zip(&mean_nontarget).map(|(a, b)| a - b).collect();
    let trace: f64 = (0..k).map(|i| pooled[(i, i)]).sum();
    if !(trace > 0.0) {
        return Err(Error::Degenerate("within-class covariance is zero".into()));
    }
    let lambda = RIDGE_SCALE * trace / k as f64;
    let mut system = pooled.clone();
    for i in 0..k {
        system[(i, i)] += lambda;
    }
    let rhs = Mat::<f64>::from_fn(k, 1, |i, _| delta[i]);
    let llt = system
        .llt(Side::Lower)
        .map_err(|e| Error::Degenerate(format!("pooled covariance is not positive definite: {e:?}")))?;
    let sol = llt.solve(&rhs);
    let weights: Vec<f64> = (0..k).map(|i| sol[(i, 0)]).collect();
    let residual = &system * &sol - &rhs;
    let res_norm = residual.norm_l2();
    let rhs_norm = rhs.norm_l2();
    if !weights.iter().all(|w| w.is_finite()) || res_norm > 1e-6 * rhs_norm.max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate(format!(
            "LDA solve residual {res_norm:e} too large for rhs norm {rhs_norm:e}"
        )));
    }
    let mid: Vec<f64> = mean_target.iter().zip(&mean_nontarget).map(|(a, b)| (a + b) / 2.0).collect();
    let bias = -dot(&weights, &mid);
    Ok(LdaModel {
        weights,
        bias,
        mean_target,
        mean_nontarget,
    })
}

/// LDA on already-projected rows.
pub fn fit_lda(projected: &[Vec<f64>], labels: &[bool]) -> Result<LdaModel> {
    let rows: Vec<&[f64]> = projected.iter().map(Vec::as_slice).collect();
    let k = rows.first().map_or(0, |r| r.len());
    let stats = FeatureStats::new(&rows, labels, vec![0.0; k])?;
    check_classes(&stats)?;
    lda_from_moments(
        stats.class_mean(&stats.target),
        stats.class_mean(&stats.nontarget),
        &stats.pooled_within_covariance(),
    )
}

fn check_classes(stats: &FeatureStats) -> Result<()> {
    let (t, n) = stats.counts();
    if t < 2 || n < 2 {
        return Err(Error::MissingClass(format!(
            "LDA needs at least 2 samples per class, got {t} target and {n} nontarget"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

/// Fitted PCA + LDA pipeline. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderModel {
    pub config_hash: String,
    pub pca: PcaModel,
    pub lda: LdaModel,
    /// `components^T w`, so that a score is one inner product in feature space.
    #[serde(skip)]
    full_weights: Vec<f64>,
    #[serde(skip)]
    offset: f64,
}

impl DecoderModel {
    pub fn new(config: &ExperimentConfig, pca: PcaModel, lda: LdaModel) -> Result<Self> {
        if lda.weights.len() != pca.n_components() {
            return Err(Error::DimensionMismatch {
                expected: pca.n_components(),
                got: lda.weights.len(),
            });
        }
        let mut m = DecoderModel {
            config_hash: config.hash(),
            pca,
            lda,
            full_weights: Vec::new(),
            offset: 0.0,
        };
        m.refresh();
        Ok(m)
    }

    fn refresh(&mut self) {
        let d = self.pca.dim();
        let mut full = vec![0.0; d];
        for (i, w) in self.lda.weights.iter().enumerate() {
            for (f, c) in full.iter_mut().zip(self.pca.component(i)) {
                *f += w * c;
            }
        }
        self.offset = -dot(&full, &self.pca.mean);
        self.full_weights = full;
    }

    /// Fits PCA then LDA on labelled feature vectors.
    pub fn fit(features: &[&FeatureVector], config: &ExperimentConfig) -> Result<Self> {
        let d = features.first().map_or(0, |f| f.values.len());
        let shift = mean_of(features, d);
        let stats = FeatureStats::from_features(features, shift)?;
        Self::fit_stats(&stats, config)
    }

    pub fn fit_stats(stats: &FeatureStats, config: &ExperimentConfig) -> Result<Self> {
        check_classes(stats)?;
        let mean = stats.mean();
        let (pca, variances) = pca_eigen(mean.clone(), &stats.covariance(), config.pca_threshold)?;
        let center = |m: Vec<f64>| -> Vec<f64> {
            let centered: Vec<f64> = m.iter().zip(&mean).map(|(a, b)| a - b).collect();
            (0..pca.n_components()).map(|i| dot(pca.component(i), &centered)).collect()
        };
        let mt = center(stats.class_mean(&stats.target));
        let mn = center(stats.class_mean(&stats.nontarget));
        // Total scatter = within + between, and the between-class part is
        // rank one, so in the component basis the pooled within-class
        // covariance is ((n-1) diag(variances) - nt nn / n dd^T) / (n-2).
        let (nt, nn) = stats.counts();
        let n = (nt + nn) as f64;
        let between = (nt * nn) as f64 / n;
        let delta: Vec<f64> = mt.iter().zip(&mn).map(|(a, b)| a - b).collect();
        let k = pca.n_components();
        let pooled = Mat::<f64>::from_fn(k, k, |i, j| {
            let diag = if i == j { (n - 1.0) * variances[i] } else { 0.0 };
            (diag - between * delta[i] * delta[j]) / (n - 2.0)
        });
        let lda = lda_from_moments(mt, mn, &pooled)?;
        Self::new(config, pca, lda)
    }

    /// `w . project(x)`; the LDA bias is not included.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.full_weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.full_weights.len(),
                got: x.len(),
            });
        }
        Ok(dot(&self.full_weights, x) + self.offset)
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer(out, self)?;
        Ok(())
    }

    pub fn read_json(input: impl std::io::Read) -> Result<Self> {
        let mut m: DecoderModel = serde_json::from_reader(input)?;
        if m.lda.weights.len() != m.pca.n_components() || m.pca.components.len() != m.pca.n_components() * m.pca.dim() {
            return Err(Error::Format("inconsistent model dimensions".into()));
        }
        m.refresh();
        Ok(m)
    }
}

fn mean_of(features: &[&FeatureVector], d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d];
    for f in features {
        for (a, v) in m.iter_mut().zip(&f.values) {
            *a += v;
        }
    }
    let n = features.len().max(1) as f64;
    m.iter_mut().for_each(|a| *a /= n);
    m
}

// ---------------------------------------------------------------------------
// Decision rule
// ---------------------------------------------------------------------------

/// `scores[r][i] = w . x_{r,i}` for one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub scores: Vec<Vec<f64>>,
}

impl ScoreTable {
    pub fn repetitions(&self) -> usize {
        self.scores.len()
    }

    pub fn n_stimuli(&self) -> usize {
        self.scores.first().map_or(0, Vec::len)
    }

    /// Argmax over stimuli of the score summed over the first `r` repetitions.
    pub fn decide(&self, r: usize) -> Result<usize> {
        if r == 0 || r > self.repetitions() {
            return Err(Error::InvalidArgument(format!(
                "repetition count {r} outside 1..={}",
                self.repetitions()
            )));
        }
        let ns = self.n_stimuli();
        let mut best = 0;
        let mut best_sum = f64::NEG_INFINITY;
        for i in 0..ns {
            let sum: f64 = self.scores[..r].iter().map(|row| row[i]).sum();
            if sum > best_sum {
                best = i;
                best_sum = sum;
            }
        }
        Ok(best)
    }
}

/// Arranges a trial's feature vectors into the `R x Ns` grid and scores them.
pub fn score_trial(
    model: &DecoderModel,
    trial: &[&FeatureVector],
    repetitions: usize,
    n_stimuli: usize,
) -> Result<ScoreTable> {
    let mut grid: Vec<Vec<Option<f64>>> = vec![vec![None; n_stimuli]; repetitions];
    let trial_id = trial.first().map_or(0, |f| f.trial_id);
    for f in trial {
        if f.repetition_idx < repetitions && f.stimulus_id < n_stimuli {
            grid[f.repetition_idx][f.stimulus_id] = Some(model.score(&f.values)?);
        }
    }
    let scores = grid
        .into_iter()
        .enumerate()
        .map(|(r, row)| {
            row.into_iter()
                .enumerate()
                .map(|(i, s)| {
                    s.ok_or(Error::MissingCell {
                        trial_id,
                        repetition_idx: r,
                        stimulus_id: i,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreTable { scores })
}

/// Estimated stimulus for one trial using its first `repetitions` repetitions.
pub fn decode_trial(
    model: &DecoderModel,
    trial: &[&FeatureVector],
    repetitions: usize,
    n_stimuli: usize,
) -> Result<usize> {
    score_trial(model, trial, repetitions, n_stimuli)?.decide(repetitions)
}

/// `#correct / #output`.
pub fn accuracy(decisions: &[usize], cues: &[usize]) -> Result<f64> {
    if decisions.is_empty() || decisions.len() != cues.len() {
        return Err(Error::InvalidArgument(format!(
            "accuracy needs equal nonzero lengths, got {} decisions and {} cues",
            decisions.len(),
            cues.len()
        )));
    }
    let correct = decisions.iter().zip(cues).filter(|(d, c)| d == c).count();
    Ok(correct as f64 / decisions.len() as f64)
}

// ---------------------------------------------------------------------------
// Evaluation harnesses
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialDecision {
    pub trial_id: usize,
    pub cued_target: usize,
    /// Decision using the first `r + 1` repetitions at index `r`.
    pub decisions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepetitionAccuracy {
    pub repetitions: usize,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_repetition: Vec<RepetitionAccuracy>,
    pub trials: Vec<TrialDecision>,
}

impl EvalReport {
    fn from_trials(trials: Vec<TrialDecision>, r_max: usize) -> Result<Self> {
        let per_repetition = (1..=r_max)
            .map(|r| {
                let d: Vec<usize> = trials.iter().map(|t| t.decisions[r - 1]).collect();
                let c: Vec<usize> = trials.iter().map(|t| t.cued_target).collect();
                let acc = accuracy(&d, &c)?;
                Ok(RepetitionAccuracy {
                    repetitions: r,
                    correct: d.iter().zip(&c).filter(|(a, b)| a == b).count(),
                    total: d.len(),
                    accuracy: acc,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalReport { per_repetition, trials })
    }

    pub fn accuracy_at(&self, r: usize) -> Option<f64> {
        self.per_repetition.get(r.checked_sub(1)?).map(|a| a.accuracy)
    }

    /// Per-trial log `trial_id, cued_target, decision, correct` at `r` repetitions.
    pub fn write_decisions_csv<W: Write>(&self, r: usize, out: W) -> Result<()> {
        if r == 0 || self.trials.iter().any(|t| t.decisions.len() < r) {
            return Err(Error::InvalidArgument(format!("no decisions at R = {r}")));
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["trial_id", "cued_target", "decision", "correct"])?;
        for t in &self.trials {
            let d = t.decisions[r - 1];
            w.write_record([
                t.trial_id.to_string(),
                t.cued_target.to_string(),
                d.to_string(),
                ((d == t.cued_target) as u8).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<decisions csv>", e))?;
        Ok(())
    }
}

fn group_by_trial(features: &[FeatureVector]) -> BTreeMap<usize, Vec<&FeatureVector>> {
    let mut by: BTreeMap<usize, Vec<&FeatureVector>> = BTreeMap::new();
    for f in features {
        by.entry(f.trial_id).or_default().push(f);
    }
    by
}

fn trial_decision(
    model: &DecoderModel,
    trial: &[&FeatureVector],
    config: &ExperimentConfig,
    r_max: usize,
) -> Result<TrialDecision> {
    let table = score_trial(model, trial, r_max, config.n_stimuli)?;
    let decisions = (1..=r_max).map(|r| table.decide(r)).collect::<Result<Vec<_>>>()?;
    Ok(TrialDecision {
        trial_id: trial[0].trial_id,
        cued_target: trial[0].cued_target,
        decisions,
    })
}

fn check_r_max(r_max: usize, config: &ExperimentConfig) -> Result<()> {
    if r_max == 0 || r_max > config.repetitions {
        return Err(Error::InvalidArgument(format!(
            "R-max {r_max} outside 1..={}",
            config.repetitions
        )));
    }
    Ok(())
}

/// Leave-one-trial-out cross-validation. Each fold refits PCA and LDA on all
/// other trials and decodes the held-out trial with `R = 1..=r_max`.
pub fn loo_cv(features: &[FeatureVector], config: &ExperimentConfig, r_max: usize) -> Result<EvalReport> {
    check_r_max(r_max, config)?;
    let by_trial = group_by_trial(features);
    if by_trial.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "leave-one-out needs at least 2 trials, got {}",
            by_trial.len()
        )));
    }
    let all: Vec<&FeatureVector> = features.iter().collect();
    let d = all[0].values.len();
    let shift = mean_of(&all, d);
    let total = FeatureStats::from_features(&all, shift.clone())?;
    let trials: Vec<(&usize, &Vec<&FeatureVector>)> = by_trial.iter().collect();
    let decisions = trials
        .par_iter()
        .map(|(_, held)| {
            let held_stats = FeatureStats::from_features(held, shift.clone())?;
            let model = DecoderModel::fit_stats(&total.minus(&held_stats)?, config)?;
            trial_decision(&model, held, config, r_max)
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_trials(decisions, r_max)
}

/// Fits on `train`, decodes every trial of `test` with `R = 1..=r_max`.
/// Trial ids must be disjoint unless `allow_overlap` is set.
pub fn train_test(
    train: &[FeatureVector],
    test: &[FeatureVector],
    config: &ExperimentConfig,
    r_max: usize,
    allow_overlap: bool,
) -> Result<(DecoderModel, EvalReport)> {
    check_r_max(r_max, config)?;
    if test.is_empty() {
        return Err(Error::InvalidArgument("test set is empty".into()));
    }
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if !allow_overlap {
        let train_ids: BTreeSet<usize> = train.iter().map(|f| f.trial_id).collect();
        let shared: BTreeSet<usize> = test
            .iter()
            .map(|f| f.trial_id)
            .filter(|id| train_ids.contains(id))
            .collect();
        if !shared.is_empty() {
            return Err(Error::TrialOverlap(shared.into_iter().collect()));
        }
    }
    let refs: Vec<&FeatureVector> = train.iter().collect();
    let model = DecoderModel::fit(&refs, config)?;
    let by_trial = group_by_trial(test);
    let trials: Vec<&Vec<&FeatureVector>> = by_trial.values().collect();
    let decisions = trials
        .par_iter()
        .map(|held| trial_decision(&model, held, config, r_max))
        .collect::<Result<Vec<_>>>()?;
    let report = EvalReport::from_trials(decisions, r_max)?;
    Ok((model, report))
}
