//! CSV schemas for SBDC responses, paired-choice responses and income groups,
//! with ingestion-time validation and quality filters.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::covariates::{CovariateEncoding, CovariateRow, CovariateValue};
use crate::model::{AttributeProfile, ChoiceTask, Dataset, Observation, RespondentId, Scenario};
use crate::sbdc::{SbdcDataset, SbdcObservation, COMPENSATION_LEVELS};
use crate::welfare::IncomeGroup;
use crate::{Error, Result};

pub const SBDC_HEADER: [&str; 4] = ["respondent_id", "task_no", "compensation_yuan", "accepted"];
pub const SCE_HEADER: [&str; 8] = [
    "respondent_id",
    "scenario",
    "task_no",
    "alt_index",
    "wait_min",
    "cost_yuan",
    "unrel_min",
    "chosen",
];
pub const GROUPS_HEADER: [&str; 4] = ["bracket", "income_yuan", "size", "omega"];
/// Optional survey-metadata column of the SBDC file; not a covariate.
pub const COMPLETION_COLUMN: &str = "completion_sec";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Reject attribute levels and compensations outside the survey grid.
    pub replication: bool,
    /// Respondents faster than this are dropped (needs `completion_sec`).
    pub min_completion_sec: f64,
    /// Exclude flagged straight-liners instead of only reporting them.
    pub strict: bool,
    #[serde(default)]
    pub encoding: CovariateEncoding,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            replication: true,
            min_completion_sec: 120.0,
            strict: false,
            encoding: CovariateEncoding::standard(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SbdcIngest {
    pub data: SbdcDataset,
    pub covariate_names: Vec<String>,
    pub completion_sec: BTreeMap<RespondentId, f64>,
    pub excluded_fast: Vec<RespondentId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceIngest {
    pub data: Dataset,
    pub straight_liners: Vec<RespondentId>,
    pub excluded: Vec<RespondentId>,
}

fn schema(row: u64, column: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        row: row as usize,
        column: column.to_owned(),
        message: message.into(),
    }
}

fn check_header(found: &csv::StringRecord, expected: &[&str], exact: bool) -> Result<()> {
    let got: Vec<&str> = found.iter().collect();
    let ok = if exact {
        got == expected
    } else {
        got.len() >= expected.len() && got[..expected.len()] == *expected
    };
    if !ok {
        return Err(schema(
            1,
            "header",
            format!("expected `{}`, found `{}`", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<&'a str> {
    rec.get(idx)
        .map(str::trim)
        .ok_or_else(|| schema(line, name, "missing field"))
}

fn parse_f64(rec: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<f64> {
    let s = field(rec, idx, name, line)?;
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| schema(line, name, format!("expected a number, got `{s}`")))
}

fn parse_u32(rec: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<u32> {
    let s = field(rec, idx, name, line)?;
    s.parse::<u32>()
        .map_err(|_| schema(line, name, format!("expected a non-negative integer, got `{s}`")))
}

fn parse_flag(rec: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<bool> {
    match field(rec, idx, name, line)? {
        "1" => Ok(true),
        "0" => Ok(false),
        s => Err(schema(line, name, format!("expected 0 or 1, got `{s}`"))),
    }
}

fn parse_covariate(encoding: &CovariateEncoding, name: &str, raw: &str, line: u64) -> Result<CovariateValue> {
    match encoding.spec(name) {
        Some(spec) => {
            let v = spec.parse_cell(raw).map_err(|e| schema(line, name, e.to_string()))?;
            if let CovariateValue::Label(l) = &v {
                if !spec.categories.iter().any(|c| c == l) {
                    return Err(schema(
                        line,
                        name,
                        format!(
                            "unknown category `{l}`; allowed: [{}]\nencoding table:\n{encoding}",
                            spec.categories.join(", ")
                        ),
                    ));
                }
            }
            Ok(v)
        }
        None => Ok(raw
            .parse::<f64>()
            .map(CovariateValue::Number)
            .unwrap_or_else(|_| CovariateValue::Label(raw.to_owned()))),
    }
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(r)
}

pub fn read_sbdc<R: Read>(r: R, opts: &IngestOptions) -> Result<SbdcIngest> {
    let mut rdr = reader(r);
    let header = rdr.headers()?.clone();
    check_header(&header, &SBDC_HEADER, false)?;
    let extra: Vec<(usize, String)> = header
        .iter()
        .enumerate()
        .skip(SBDC_HEADER.len())
        .map(|(i, h)| (i, h.trim().to_owned()))
        .collect();
    let completion_idx = extra.iter().find(|(_, h)| h == COMPLETION_COLUMN).map(|(i, _)| *i);
    let covariate_cols: Vec<(usize, String)> =
        extra.into_iter().filter(|(_, h)| h != COMPLETION_COLUMN).collect();

    let mut observations = Vec::new();
    let mut covariates: BTreeMap<RespondentId, CovariateRow> = BTreeMap::new();
    let mut completion = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = RespondentId::new(field(&rec, 0, "respondent_id", line)?);
        if id.as_str().is_empty() {
            return Err(schema(line, "respondent_id", "empty respondent id"));
        }
        let task_no = parse_u32(&rec, 1, "task_no", line)?;
        let compensation = parse_f64(&rec, 2, "compensation_yuan", line)?;
        if !(compensation > 0.0) {
            return Err(schema(line, "compensation_yuan", "compensation must be positive"));
        }
        if opts.replication && !COMPENSATION_LEVELS.contains(&compensation) {
            return Err(schema(
                line,
                "compensation_yuan",
                format!("{compensation} is outside the replication levels {COMPENSATION_LEVELS:?}"),
            ));
        }
        let accepted = parse_flag(&rec, 3, "accepted", line)?;
        if !seen.insert((id.clone(), task_no)) {
            return Err(schema(
                line,
                "task_no",
                format!("duplicate (respondent, task) pair ({id}, {task_no})"),
            ));
        }
        let mut row = CovariateRow::new();
        for (i, name) in &covariate_cols {
            let raw = field(&rec, *i, name, line)?;
            row.insert(name.clone(), parse_covariate(&opts.encoding, name, raw, line)?);
        }
        match covariates.get(&id) {
            Some(prev) if *prev != row => {
                return Err(schema(line, "covariates", format!("covariates of respondent {id} differ between rows")));
            }
            Some(_) => {}
            None => {
                covariates.insert(id.clone(), row);
            }
        }
        if let Some(i) = completion_idx {
            let c = parse_f64(&rec, i, COMPLETION_COLUMN, line)?;
            completion.insert(id.clone(), c);
        }
        observations.push(SbdcObservation {
            respondent_id: id,
            task_no,
            compensation,
            accepted,
        });
    }
    let excluded_fast: Vec<RespondentId> = completion
        .iter()
        .filter(|(_, c)| **c < opts.min_completion_sec)
        .map(|(id, _)| id.clone())
        .collect();
    let drop: BTreeSet<&RespondentId> = excluded_fast.iter().collect();
    observations.retain(|o| !drop.contains(&o.respondent_id));
    covariates.retain(|id, _| !drop.contains(id));
    Ok(SbdcIngest {
        data: SbdcDataset::new(observations, covariates)?,
        covariate_names: covariate_cols.into_iter().map(|(_, n)| n).collect(),
        completion_sec: completion,
        excluded_fast,
    })
}

struct RawAlt {
    line: u64,
    scenario: Scenario,
    alt_index: u32,
    profile: AttributeProfile,
    chosen: bool,
}

/// Reads paired-choice responses. `covariates` supplies respondent rows
/// (e.g. from the SBDC file); respondents without one get an empty row.
pub fn read_sce<R: Read>(
    r: R,
    opts: &IngestOptions,
    covariates: Option<&BTreeMap<RespondentId, CovariateRow>>,
) -> Result<SceIngest> {
    let mut rdr = reader(r);
    check_header(rdr.headers()?, &SCE_HEADER, true)?;
    let mut tasks: BTreeMap<(RespondentId, u32), Vec<RawAlt>> = BTreeMap::new();
    let mut order: Vec<(RespondentId, u32)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = RespondentId::new(field(&rec, 0, "respondent_id", line)?);
        if id.as_str().is_empty() {
            return Err(schema(line, "respondent_id", "empty respondent id"));
        }
        let scenario: Scenario = field(&rec, 1, "scenario", line)?
            .parse()
            .map_err(|e: Error| schema(line, "scenario", e.to_string()))?;
        let task_no = parse_u32(&rec, 2, "task_no", line)?;
        let alt_index = parse_u32(&rec, 3, "alt_index", line)?;
        let profile = AttributeProfile {
            wait: parse_f64(&rec, 4, "wait_min", line)?,
            cost: parse_f64(&rec, 5, "cost_yuan", line)?,
            unrel: parse_f64(&rec, 6, "unrel_min", line)?,
        };
        profile.validate().map_err(|e| schema(line, "attributes", e.to_string()))?;
        if opts.replication {
            profile.check_replication_grid().map_err(|e| {
                let col = ["wait_min", "cost_yuan", "unrel_min"]
                    .into_iter()
                    .find(|c| e.to_string().contains(c))
                    .unwrap_or("attributes");
                schema(line, col, e.to_string())
            })?;
        }
        let chosen = parse_flag(&rec, 7, "chosen", line)?;
        let key = (id, task_no);
        let entry = tasks.entry(key.clone()).or_insert_with(|| {
            order.push(key.clone());
            Vec::new()
        });
        if entry.iter().any(|a| a.alt_index == alt_index) {
            return Err(schema(
                line,
                "alt_index",
                format!("duplicate (respondent, task) row: ({}, {task_no}) alternative {alt_index}", key.0),
            ));
        }
        if let Some(first) = entry.first() {
            if first.scenario != scenario {
                return Err(schema(line, "scenario", "scenario differs between rows of one task"));
            }
        }
        entry.push(RawAlt {
            line,
            scenario,
            alt_index,
            profile,
            chosen,
        });
    }

    let mut observations = Vec::with_capacity(order.len());
    for key in &order {
        let mut alts = tasks.remove(key).expect("task recorded");
        alts.sort_by_key(|a| a.alt_index);
        let line = alts[0].line;
        for (i, a) in alts.iter().enumerate() {
            if a.alt_index as usize != i {
                return Err(schema(a.line, "alt_index", format!("alternatives of task ({}, {}) must be numbered 0..", key.0, key.1)));
            }
        }
        let chosen: Vec<usize> = alts.iter().enumerate().filter(|(_, a)| a.chosen).map(|(i, _)| i).collect();
        if chosen.len() != 1 {
            return Err(schema(
                line,
                "chosen",
                format!("task ({}, {}) has {} chosen alternatives; expected exactly one", key.0, key.1, chosen.len()),
            ));
        }
        let task = ChoiceTask::new(
            key.1,
            Some(alts[0].scenario),
            alts.iter().map(|a| a.profile).collect(),
        )
        .map_err(|e| schema(line, "attributes", e.to_string()))?;
        observations.push(Observation {
            respondent_id: key.0.clone(),
            task_no: key.1,
            task,
            chosen_index: chosen[0],
        });
    }

    let mut positions: BTreeMap<&RespondentId, BTreeSet<usize>> = BTreeMap::new();
    let mut counts: BTreeMap<&RespondentId, usize> = BTreeMap::new();
    for o in &observations {
        positions.entry(&o.respondent_id).or_default().insert(o.chosen_index);
        *counts.entry(&o.respondent_id).or_default() += 1;
    }
    let straight_liners: Vec<RespondentId> = positions
        .iter()
        .filter(|(id, p)| p.len() == 1 && counts[*id] >= 2)
        .map(|(id, _)| (*id).clone())
        .collect();
    let excluded = if opts.strict {
        straight_liners.clone()
    } else {
        Vec::new()
    };
    let drop: BTreeSet<&RespondentId> = excluded.iter().collect();
    let observations: Vec<Observation> = observations
        .into_iter()
        .filter(|o| !drop.contains(&o.respondent_id))
        .collect();
    let mut cov = BTreeMap::new();
    for o in &observations {
        if !cov.contains_key(&o.respondent_id) {
            let row = covariates
                .and_then(|c| c.get(&o.respondent_id).cloned())
                .unwrap_or_default();
            cov.insert(o.respondent_id.clone(), row);
        }
    }
    Ok(SceIngest {
        data: Dataset::new(observations, cov)?,
        straight_liners,
        excluded,
    })
}

pub fn read_groups<R: Read>(r: R) -> Result<Vec<IncomeGroup>> {
    let mut rdr = reader(r);
    check_header(rdr.headers()?, &GROUPS_HEADER, true)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bracket = field(&rec, 0, "bracket", line)?.to_owned();
        let income = parse_f64(&rec, 1, "income_yuan", line)?;
        if !(income > 0.0) {
            return Err(schema(line, "income_yuan", "income must be positive"));
        }
        let size_raw = field(&rec, 2, "size", line)?;
        let size = if size_raw.is_empty() {
            None
        } else {
            Some(
                size_raw
                    .parse::<u64>()
                    .map_err(|_| schema(line, "size", format!("expected a count, got `{size_raw}`")))?,
            )
        };
        let omega_raw = field(&rec, 3, "omega", line)?;
        let omega = if omega_raw.is_empty() {
            1.0
        } else {
            parse_f64(&rec, 3, "omega", line)?
        };
        if !(omega >= 0.0) {
            return Err(schema(line, "omega", "social weight must be non-negative"));
        }
        out.push(IncomeGroup {
            bracket,
            income,
            size,
            omega,
        });
    }
    Ok(out)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Input(format!("cannot open {}: {e}", path.display())))
}

pub fn ingest_sbdc(path: &Path, opts: &IngestOptions) -> Result<SbdcIngest> {
    read_sbdc(open(path)?, opts)
}

pub fn ingest_sce(
    path: &Path,
    opts: &IngestOptions,
    covariates: Option<&BTreeMap<RespondentId, CovariateRow>>,
) -> Result<SceIngest> {
    read_sce(open(path)?, opts, covariates)
}

pub fn ingest_groups(path: &Path) -> Result<Vec<IncomeGroup>> {
    read_groups(open(path)?)
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Writes SBDC rows with the given covariate columns (values repeated on
/// every row of a respondent). Missing covariates are written empty.
pub fn write_sbdc<W: Write>(
    data: &SbdcDataset,
    covariate_names: &[String],
    completion_sec: Option<&BTreeMap<RespondentId, f64>>,
    w: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = SBDC_HEADER.iter().map(|s| s.to_string()).collect();
    header.extend(covariate_names.iter().cloned());
    if completion_sec.is_some() {
        header.push(COMPLETION_COLUMN.into());
    }
    wtr.write_record(&header)?;
    for o in &data.observations {
        let mut rec = vec![
            o.respondent_id.to_string(),
            o.task_no.to_string(),
            o.compensation.to_string(),
            flag(o.accepted).to_string(),
        ];
        let row = data.covariates.get(&o.respondent_id);
        for n in covariate_names {
            rec.push(row.and_then(|r| r.get(n)).map(|v| v.to_string()).unwrap_or_default());
        }
        if let Some(c) = completion_sec {
            rec.push(c.get(&o.respondent_id).map(|v| v.to_string()).unwrap_or_default());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_sce<W: Write>(data: &Dataset, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(SCE_HEADER)?;
    for o in &data.observations {
        let scenario = o
            .task
            .scenario
            .ok_or_else(|| Error::Input(format!("respondent {} task {} has no scenario", o.respondent_id, o.task_no)))?;
        for (j, a) in o.task.alternatives.iter().enumerate() {
            wtr.write_record([
                o.respondent_id.to_string(),
                scenario.to_string(),
                o.task_no.to_string(),
                j.to_string(),
                a.wait.to_string(),
                a.cost.to_string(),
                a.unrel.to_string(),
                flag(j == o.chosen_index).to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_groups<W: Write>(groups: &[IncomeGroup], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(GROUPS_HEADER)?;
    for g in groups {
        wtr.write_record([
            g.bracket.clone(),
            g.income.to_string(),
            g.size.map(|s| s.to_string()).unwrap_or_default(),
            g.omega.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
