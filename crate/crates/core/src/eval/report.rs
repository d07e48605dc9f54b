use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::GanVariant;

/// Training-data regime for the SSVEP classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Regime {
    RealOnly,
    /// Half real, half generated, same total size.
    Augmented(GanVariant),
    /// Generated only, same total size.
    SyntheticOnly(GanVariant),
}

impl Regime {
    pub fn variant(self) -> Option<GanVariant> {
        match self {
            Regime::RealOnly => None,
            Regime::Augmented(v) | Regime::SyntheticOnly(v) => Some(v),
        }
    }

    pub fn real_ratio(self) -> f64 {
        match self {
            Regime::RealOnly => 1.0,
            Regime::Augmented(_) => 0.5,
            Regime::SyntheticOnly(_) => 0.0,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::RealOnly => write!(f, "real_only"),
            Regime::Augmented(v) => write!(f, "augmented_{}", v.name()),
            Regime::SyntheticOnly(v) => write!(f, "synthetic_only_{}", v.name()),
        }
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let variant = |v: &str| match v {
            "dcgan" => Ok(GanVariant::DcGan),
            "acgan" => Ok(GanVariant::AcGan),
            "sisgan" => Ok(GanVariant::SisGan),
            _ => Err(Error::Config(format!("unknown regime {s:?}"))),
        };
        if s == "real_only" {
            Ok(Regime::RealOnly)
        } else if let Some(v) = s.strip_prefix("augmented_") {
            Ok(Regime::Augmented(variant(v)?))
        } else if let Some(v) = s.strip_prefix("synthetic_only_") {
            Ok(Regime::SyntheticOnly(variant(v)?))
        } else {
            Err(Error::Config(format!("unknown regime {s:?}")))
        }
    }
}

impl TryFrom<String> for Regime {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Regime> for String {
    fn from(r: Regime) -> String {
        r.to_string()
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Rows divided by their sums; all-zero rows stay zero.
pub fn row_normalize(counts: &[Vec<f64>]) -> Vec<Vec<f64>> {
    counts
        .iter()
        .map(|row| {
            let s: f64 = row.iter().sum();
            row.iter().map(|v| if s > 0.0 { v / s } else { 0.0 }).collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// One (unit, regime) cell aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub unit: String,
    pub regime: Regime,
    /// One accuracy per seed, in seed order.
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Row-normalized confusion matrix pooled over seeds.
    pub confusion: Vec<Vec<f64>>,
    /// Training-set size per seed.
    pub train_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSummary {
    pub regime: Regime,
    /// Mean over units, per seed.
    pub per_seed_means: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub protocol: String,
    pub regimes: Vec<Regime>,
    pub seeds: Vec<u64>,
    pub units: Vec<String>,
    pub cells: Vec<CellResult>,
    pub summary: Vec<RegimeSummary>,
    pub audits: Vec<AuditRecord>,
    pub config_hash: String,
    pub note: String,
}

impl ProtocolReport {
    pub fn audits_passed(&self) -> bool {
        self.audits.iter().all(|a| a.passed)
    }

    pub fn cell(&self, unit: &str, regime: Regime) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.unit == unit && c.regime == regime)
    }

    pub fn summary_for(&self, regime: Regime) -> Option<&RegimeSummary> {
        self.summary.iter().find(|s| s.regime == regime)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Rows are units, columns are `<regime>_mean,<regime>_std`; the final
    /// row holds the regime summaries.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("unit");
        for r in &self.regimes {
            out.push_str(&format!(",{r}_mean,{r}_std"));
        }
        out.push('\n');
        for u in &self.units {
            out.push_str(u);
            for &r in &self.regimes {
                match self.cell(u, r) {
                    Some(c) => out.push_str(&format!(",{:.6},{:.6}", c.mean, c.std)),
                    None => out.push_str(",,"),
                }
            }
            out.push('\n');
        }
        out.push_str("mean");
        for &r in &self.regimes {
            match self.summary_for(r) {
                Some(s) => out.push_str(&format!(",{:.6},{:.6}", s.mean, s.std)),
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
        out
    }
}
