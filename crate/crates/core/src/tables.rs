//! Accuracy tables in long form and the bundled published results.
//!
//! One row per (group, subject, repetition count):
//! `group,soa_s,subject,repetitions,accuracy`. Accuracies may be ratios or
//! percentages; a table whose largest entry exceeds 1 is read as percent.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{itr, mean_sd, output_period};

/// Offline leave-one-out accuracy, AV/V/A conditions, 11 subjects, R = 1..15.
pub const TABLE1_OFFLINE_EXP1: &str = include_str!("../paper-tables/table1_offline_exp1.csv");
/// Online accuracy at R = 15 for SOA 1000/250/100 ms, 7 subjects.
pub const TABLE2_ONLINE_EXP2: &str = include_str!("../paper-tables/table2_online_exp2.csv");
/// Offline train/test accuracy for SOA 1000/250/100 ms, 7 subjects, R = 1..15.
pub const TABLE3_OFFLINE_EXP2: &str = include_str!("../paper-tables/table3_offline_exp2.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub group: String,
    pub soa_s: f64,
    pub subject: String,
    pub repetitions: usize,
    /// Ratio in [0, 1] once loaded.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AccuracyTable {
    pub rows: Vec<AccuracyRow>,
}

impl AccuracyTable {
    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut rows = Vec::new();
        for row in r.deserialize() {
            let row: AccuracyRow = row.map_err(|e| Error::Format(format!("accuracy table: {e}")))?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Format("accuracy table has no rows".into()));
        }
        let max = rows.iter().map(|r| r.accuracy).fold(f64::MIN, f64::max);
        let scale = if max > 1.0 { 100.0 } else { 1.0 };
        for row in &mut rows {
            row.accuracy /= scale;
            if !(0.0..=1.0).contains(&row.accuracy) {
                return Err(Error::Format(format!(
                    "accuracy {} for subject {} out of range",
                    row.accuracy * scale,
                    row.subject
                )));
            }
            if row.repetitions == 0 || !(row.soa_s > 0.0) {
                return Err(Error::Format(format!(
                    "row for subject {} needs repetitions >= 1 and soa_s > 0",
                    row.subject
                )));
            }
        }
        Ok(AccuracyTable { rows })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::read(text.as_bytes())
    }

    /// Writes accuracies as percentages.
    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(AccuracyRow {
                accuracy: row.accuracy * 100.0,
                ..row.clone()
            })?;
        }
        w.flush().map_err(|e| Error::io("<accuracy table>", e))?;
        Ok(())
    }

    /// Rows grouped by (group, repetitions), in first-appearance order of groups.
    pub fn cells(&self) -> Vec<((String, usize), Vec<&AccuracyRow>)> {
        let mut order: Vec<String> = Vec::new();
        let mut map: BTreeMap<(usize, usize), Vec<&AccuracyRow>> = BTreeMap::new();
        for row in &self.rows {
            let g = match order.iter().position(|g| g == &row.group) {
                Some(i) => i,
                None => {
                    order.push(row.group.clone());
                    order.len() - 1
                }
            };
            map.entry((g, row.repetitions)).or_default().push(row);
        }
        map.into_iter()
            .map(|((g, r), rows)| ((order[g].clone(), r), rows))
            .collect()
    }

    /// Accuracies of one group at one repetition count, in table order.
    pub fn accuracies(&self, group: &str, repetitions: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.group == group && r.repetitions == repetitions)
            .map(|r| r.accuracy)
            .collect()
    }
}

/// Timing needed to turn accuracies into bit rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub t_cue_s: f64,
    pub t_buffer_s: f64,
    pub n_stimuli: usize,
    /// Overrides the table's SOA column when set.
    pub soa_s: Option<f64>,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            t_cue_s: 2.0,
            t_buffer_s: 1.0,
            n_stimuli: 5,
            soa_s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectItr {
    pub subject: String,
    pub accuracy: f64,
    pub itr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItrCell {
    pub group: String,
    pub soa_s: f64,
    pub repetitions: usize,
    pub period_s: f64,
    pub outputs_per_min: f64,
    pub subjects: Vec<SubjectItr>,
    pub mean_accuracy: f64,
    pub mean_itr: f64,
    pub sd_itr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItrReport {
    pub n_stimuli: usize,
    pub t_cue_s: f64,
    pub t_buffer_s: f64,
    pub clipped_below_chance: bool,
    pub cells: Vec<ItrCell>,
}

impl ItrReport {
    pub fn cell(&self, group: &str, repetitions: usize) -> Option<&ItrCell> {
        self.cells
            .iter()
            .find(|c| c.group == group && c.repetitions == repetitions)
    }
}

/// Per-subject and aggregate ITR for every (group, R) cell of the table.
/// The aggregate is the mean of per-subject ITRs. With `clip_below_chance`,
/// subjects under `1/Ns` accuracy count as zero bits instead of the formula's
/// positive value.
pub fn itr_report(table: &AccuracyTable, timing: &Timing, clip_below_chance: bool) -> Result<ItrReport> {
    if timing.n_stimuli < 2 {
        return Err(Error::InvalidArgument("n_stimuli must be at least 2".into()));
    }
    let mut cells = Vec::new();
    for ((group, repetitions), rows) in table.cells() {
        let soa_s = timing.soa_s.unwrap_or(rows[0].soa_s);
        if timing.soa_s.is_none() && rows.iter().any(|r| r.soa_s != soa_s) {
            return Err(Error::Format(format!("group {group} mixes SOA values")));
        }
        let period_s = output_period(timing.t_cue_s, soa_s, repetitions, timing.n_stimuli, timing.t_buffer_s);
        let subjects: Vec<SubjectItr> = rows
            .iter()
            .map(|r| {
                let below_chance = r.accuracy * (timing.n_stimuli as f64) < 1.0;
                let b = if clip_below_chance && below_chance {
                    0.0
                } else {
                    itr(r.accuracy, timing.n_stimuli, period_s)
                };
                SubjectItr {
                    subject: r.subject.clone(),
                    accuracy: r.accuracy,
                    itr: b,
                }
            })
            .collect();
        let itrs: Vec<f64> = subjects.iter().map(|s| s.itr).collect();
        let accs: Vec<f64> = subjects.iter().map(|s| s.accuracy).collect();
        let (mean_itr, sd_itr) = mean_sd(&itrs);
        cells.push(ItrCell {
            group,
            soa_s,
            repetitions,
            period_s,
            outputs_per_min: 60.0 / period_s,
            subjects,
            mean_accuracy: mean_sd(&accs).0,
            mean_itr,
            sd_itr,
        });
    }
    Ok(ItrReport {
        n_stimuli: timing.n_stimuli,
        t_cue_s: timing.t_cue_s,
        t_buffer_s: timing.t_buffer_s,
        clipped_below_chance: clip_below_chance,
        cells,
    })
}
