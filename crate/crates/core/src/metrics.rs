//! SINR to system metrics: Shannon capacity, modcod throughput, availability
//! and the throughput index of dispersion.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{BeamError, Result};
use crate::link::{Direction, LinkResult};

const FORWARD_TABLE: &str = include_str!("../data/dvb_s2_forward.csv");
const RETURN_TABLE: &str = include_str!("../data/dvb_rcs_return.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Modcod {
    pub name: String,
    pub threshold_db: f64,
    /// bits/symbol
    pub efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModcodTable {
    pub direction: Direction,
    entries: Vec<Modcod>,
}

impl ModcodTable {
    /// Parses `name,threshold_dB,efficiency` lines; `#` starts a comment line.
    pub fn parse(direction: Direction, text: &str) -> Result<Self> {
        let mut entries: Vec<Modcod> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(BeamError::Table { line, msg: format!("expected 3 fields, found {}", fields.len()) });
            }
            let num = |s: &str, what: &str| -> Result<f64> {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| BeamError::Table { line, msg: format!("bad {what} '{s}'") })
            };
            let entry = Modcod {
                name: fields[0].to_string(),
                threshold_db: num(fields[1], "threshold")?,
                efficiency: num(fields[2], "efficiency")?,
            };
            if entry.efficiency <= 0.0 {
                return Err(BeamError::Table { line, msg: "efficiency must be positive".into() });
            }
            if let Some(prev) = entries.last() {
                if entry.threshold_db <= prev.threshold_db {
                    return Err(BeamError::Table { line, msg: "thresholds must be strictly increasing".into() });
                }
                if entry.efficiency <= prev.efficiency {
                    return Err(BeamError::Table { line, msg: "efficiencies must be strictly increasing".into() });
                }
            }
            entries.push(entry);
        }
        if entries.is_empty() {
            return Err(BeamError::Table { line: 0, msg: "table has no entries".into() });
        }
        Ok(Self { direction, entries })
    }

    pub fn load(direction: Direction, path: &Path) -> Result<Self> {
        Self::parse(direction, &std::fs::read_to_string(path)?)
    }

    /// The tables shipped in `data/`: DVB-S2 forward, DVB-RCS return.
    pub fn builtin(direction: Direction) -> Self {
        let text = match direction {
            Direction::Forward => FORWARD_TABLE,
            Direction::Return => RETURN_TABLE,
        };
        Self::parse(direction, text).expect("shipped modcod table is valid")
    }

    pub fn entries(&self) -> &[Modcod] {
        &self.entries
    }

    pub fn outage_floor(&self) -> f64 {
        self.entries[0].threshold_db
    }
}

pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

pub fn shannon(sinr: f64) -> Result<f64> {
    if !(sinr >= 0.0) {
        return Err(BeamError::NegativeSinr(sinr));
    }
    Ok((1.0 + sinr).log2())
}

/// Efficiency of the highest modcod whose threshold is met; 0 in outage.
pub fn modcod_lookup(sinr_db: f64, table: &ModcodTable) -> f64 {
    let met = table.entries.partition_point(|m| m.threshold_db <= sinr_db);
    if met == 0 {
        0.0
    } else {
        table.entries[met - 1].efficiency
    }
}

pub fn availability(sinr_db: f64, table: &ModcodTable) -> bool {
    sinr_db >= table.outage_floor()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispersionConvention {
    #[default]
    VarianceOverMean,
    StdOverMean,
}

/// Population variance (or standard deviation) over mean.
pub fn dispersion_index(throughputs: &[f64], convention: DispersionConvention) -> Result<f64> {
    if throughputs.is_empty() {
        return Err(BeamError::EmptyEnsemble);
    }
    let n = throughputs.len() as f64;
    let mean = throughputs.iter().sum::<f64>() / n;
    if !(mean > 0.0) {
        return Err(BeamError::ZeroMeanThroughput);
    }
    let var = throughputs.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    Ok(match convention {
        DispersionConvention::VarianceOverMean => var / mean,
        DispersionConvention::StdOverMean => var.sqrt() / mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    /// bits/symbol per user
    pub mean_throughput: f64,
    pub availability: f64,
    /// `None` when every user is in outage.
    pub dispersion_index: Option<f64>,
    pub shannon_mean: f64,
}

/// Pools users over all drops.
pub fn summarize(
    results: &[LinkResult],
    table: &ModcodTable,
    convention: DispersionConvention,
) -> Result<MetricsSummary> {
    let first = results.first().ok_or(BeamError::EmptyEnsemble)?;
    if results.iter().any(|r| r.direction != first.direction) || table.direction != first.direction {
        return Err(BeamError::DirectionMismatch);
    }
    let mut throughputs = Vec::new();
    let mut shannon_sum = 0.0;
    let mut available = 0usize;
    for sinr in results.iter().flat_map(|r| r.sinr.iter().copied()) {
        let db = to_db(sinr);
        throughputs.push(modcod_lookup(db, table));
        shannon_sum += shannon(sinr)?;
        if availability(db, table) {
            available += 1;
        }
    }
    let count = throughputs.len();
    if count == 0 {
        return Err(BeamError::EmptyEnsemble);
    }
    let dispersion = match dispersion_index(&throughputs, convention) {
        Ok(v) => Some(v),
        Err(BeamError::ZeroMeanThroughput) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsSummary {
        mean_throughput: throughputs.iter().sum::<f64>() / count as f64,
        availability: available as f64 / count as f64,
        dispersion_index: dispersion,
        shannon_mean: shannon_sum / count as f64,
    })
}
