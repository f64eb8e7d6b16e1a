//! Social price of time by income group and the aggregate welfare change of
//! a time saving.

use serde::{Deserialize, Serialize};

use crate::numeric::compensated_sum;
use crate::{Error, Result};

/// Income that anchors the marginal-utility ratios (yuan/month).
pub const DEFAULT_REFERENCE_INCOME: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncomeGroup {
    pub bracket: String,
    /// Representative monthly income in yuan.
    pub income: f64,
    pub size: Option<u64>,
    #[serde(default = "one")]
    pub omega: f64,
}

fn one() -> f64 {
    1.0
}

impl IncomeGroup {
    pub fn new(bracket: &str, income: f64, size: u64) -> Self {
        Self {
            bracket: bracket.to_owned(),
            income,
            size: Some(size),
            omega: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.income.is_finite() && self.income > 0.0) {
            return Err(Error::Input(format!(
                "group `{}`: income must be positive, got {}",
                self.bracket, self.income
            )));
        }
        if !(self.omega.is_finite() && self.omega >= 0.0) {
            return Err(Error::Input(format!(
                "group `{}`: social weight must be non-negative, got {}",
                self.bracket, self.omega
            )));
        }
        Ok(())
    }
}

/// The six monthly-income brackets of the replication sample.
pub fn replication_groups() -> Vec<IncomeGroup> {
    [
        ("Under 4000", 2000.0, 20),
        ("4000-8000", 6000.0, 87),
        ("8000-12000", 10000.0, 192),
        ("12000-16000", 14000.0, 112),
        ("16000-20000", 18000.0, 74),
        ("Above 20000", 22000.0, 40),
    ]
    .iter()
    .map(|(b, i, n)| IncomeGroup::new(b, *i, *n))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SptRow {
    pub group: IncomeGroup,
    /// lambda_s / lambda_q, taken as income_q / reference income.
    pub lambda_ratio: f64,
    /// Social price of time, yuan/hour.
    pub spt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SptTable {
    pub svtt: f64,
    pub reference_income: f64,
    pub rows: Vec<SptRow>,
}

pub fn spt_table(svtt: f64, groups: &[IncomeGroup], reference_income: f64) -> Result<SptTable> {
    if !(svtt.is_finite() && svtt > 0.0) {
        return Err(Error::Input(format!("svtt must be positive, got {svtt}")));
    }
    if !(reference_income.is_finite() && reference_income > 0.0) {
        return Err(Error::Input(format!(
            "reference income must be positive, got {reference_income}"
        )));
    }
    let rows = groups
        .iter()
        .map(|g| {
            g.validate()?;
            Ok(SptRow {
                group: g.clone(),
                lambda_ratio: g.income / reference_income,
                spt: svtt * g.income / reference_income,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SptTable {
        svtt,
        reference_income,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Use each group's `omega` (1 by default).
    #[default]
    Given,
    /// `omega_q = reference income / income_q`.
    IncomeInverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareRow {
    pub bracket: String,
    pub income: f64,
    pub size: u64,
    pub omega: f64,
    pub spt: f64,
    pub delta_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareReport {
    pub svtt: f64,
    pub reference_income: f64,
    /// Hours saved per person.
    pub delta_t: f64,
    pub weight_mode: WeightMode,
    pub rows: Vec<WelfareRow>,
    pub total_per_hour: f64,
    pub total_per_minute: f64,
}

/// Order-independent total of row contributions.
pub fn total_of(rows: &[WelfareRow]) -> f64 {
    let mut v: Vec<f64> = rows.iter().map(|r| r.delta_w).collect();
    v.sort_by(f64::total_cmp);
    compensated_sum(v)
}

pub fn welfare_change(table: &SptTable, delta_t: f64, mode: WeightMode) -> Result<WelfareReport> {
    if !(delta_t.is_finite() && delta_t >= 0.0) {
        return Err(Error::Input(format!("delta_t must be non-negative, got {delta_t}")));
    }
    let rows = table
        .rows
        .iter()
        .map(|r| {
            let size = r.group.size.ok_or_else(|| {
                Error::Input(format!("group `{}` has no size", r.group.bracket))
            })?;
            let omega = match mode {
                WeightMode::Given => r.group.omega,
                WeightMode::IncomeInverse => table.reference_income / r.group.income,
            };
            Ok(WelfareRow {
                bracket: r.group.bracket.clone(),
                income: r.group.income,
                size,
                omega,
                spt: r.spt,
                delta_w: omega * size as f64 * r.spt * delta_t,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let total = total_of(&rows);
    Ok(WelfareReport {
        svtt: table.svtt,
        reference_income: table.reference_income,
        delta_t,
        weight_mode: mode,
        rows,
        total_per_hour: total,
        total_per_minute: total / 60.0,
    })
}

impl WelfareReport {
    /// Relative gap to an externally supplied total.
    pub fn relative_gap(&self, reference_total: f64) -> f64 {
        (self.total_per_hour - reference_total) / reference_total
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        s.push_str("| Income bracket | Income value (¥) | Size | Ω | SPT (¥/hour) | ΔW (¥) |\n");
        s.push_str("|---|---:|---:|---:|---:|---:|\n");
        for r in &self.rows {
            s.push_str(&format!(
                "| {} | {:.0} | {} | {:.4} | {:.2} | {:.2} |\n",
                r.bracket, r.income, r.size, r.omega, r.spt, r.delta_w
            ));
        }
        s.push_str(&format!(
            "| **Total per hour** | | {} | | | {:.2} |\n",
            self.rows.iter().map(|r| r.size).sum::<u64>(),
            self.total_per_hour
        ));
        s.push_str(&format!("| **Total per minute** | | | | | {:.2} |\n", self.total_per_minute));
        s
    }
}

/// Consumer surplus left after the current fee: `svtt * time_saved - fee`.
pub fn pricing_headroom(svtt: f64, time_saved: f64, current_fee: f64) -> Result<f64> {
    if !(time_saved >= 0.0) || !(current_fee >= 0.0) {
        return Err(Error::Input(format!(
            "time_saved and current_fee must be non-negative, got {time_saved} and {current_fee}"
        )));
    }
    Ok(svtt * time_saved - current_fee)
}
