//! Choice-design construction: the full pair universe, dominance pruning,
//! D-efficient subset selection and design audits.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{
    task_information, AttributeProfile, ChoiceTask, Coefficients, PanelTask, COST, COST_LEVELS,
    UNREL, UNREL_LEVELS, WAIT, WAIT_LEVELS,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LowerIsBetter,
    HigherIsBetter,
}

/// One experimental attribute. `name` selects the profile field it drives
/// (`wait`, `cost` or `unrel`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeLevels {
    pub name: String,
    pub unit: String,
    pub levels: Vec<f64>,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeSpec {
    pub attributes: Vec<AttributeLevels>,
}

/// Value used for profile fields the spec does not vary.
const FIXED_FIELD_VALUE: f64 = 1.0;

fn field_index(name: &str) -> Option<usize> {
    match name {
        WAIT => Some(0),
        COST => Some(1),
        UNREL => Some(2),
        _ => None,
    }
}

impl AttributeSpec {
    /// Three attributes at three levels each, all lower-is-better.
    pub fn replication() -> Self {
        let attr = |name: &str, unit: &str, levels: [f64; 3]| AttributeLevels {
            name: name.into(),
            unit: unit.into(),
            levels: levels.to_vec(),
            direction: Direction::LowerIsBetter,
        };
        Self {
            attributes: vec![
                attr(WAIT, "minutes", WAIT_LEVELS),
                attr(COST, "yuan", COST_LEVELS),
                attr(UNREL, "minutes", UNREL_LEVELS),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.attributes.is_empty() {
            return Err(Error::Input("attribute spec is empty".into()));
        }
        let mut seen = [false; 3];
        for a in &self.attributes {
            let idx = field_index(&a.name).ok_or_else(|| {
                Error::Input(format!(
                    "unknown attribute `{}` (expected wait|cost|unrel)",
                    a.name
                ))
            })?;
            if std::mem::replace(&mut seen[idx], true) {
                return Err(Error::Input(format!("attribute `{}` listed twice", a.name)));
            }
            if a.levels.len() < 2 {
                return Err(Error::Input(format!(
                    "attribute `{}` needs at least 2 levels",
                    a.name
                )));
            }
            if a.levels.windows(2).any(|w| !(w[0] < w[1])) || a.levels[0] <= 0.0 {
                return Err(Error::Input(format!(
                    "levels of `{}` must be positive and strictly increasing",
                    a.name
                )));
            }
        }
        Ok(())
    }

    fn field_indices(&self) -> Vec<usize> {
        self.attributes
            .iter()
            .map(|a| field_index(&a.name).expect("validated"))
            .collect()
    }

    /// Full factorial profile list in lexicographic level order.
    pub fn profiles(&self) -> Result<Vec<AttributeProfile>> {
        self.validate()?;
        let fields = self.field_indices();
        let mut out = vec![[FIXED_FIELD_VALUE; 3]];
        for (a, &f) in self.attributes.iter().zip(&fields) {
            out = out
                .into_iter()
                .flat_map(|p| {
                    a.levels.iter().map(move |&l| {
                        let mut q = p;
                        q[f] = l;
                        q
                    })
                })
                .collect();
        }
        Ok(out.into_iter().map(AttributeProfile::from_array).collect())
    }

    /// `true` when `a` is weakly better on every attribute and strictly
    /// better on at least one.
    pub fn dominates(&self, a: &AttributeProfile, b: &AttributeProfile) -> bool {
        let (xa, xb) = (a.as_array(), b.as_array());
        let mut strict = false;
        for attr in &self.attributes {
            let f = field_index(&attr.name).expect("validated");
            let (va, vb) = match attr.direction {
                Direction::LowerIsBetter => (xa[f], xb[f]),
                Direction::HigherIsBetter => (-xa[f], -xb[f]),
            };
            if va > vb {
                return false;
            }
            if va < vb {
                strict = true;
            }
        }
        strict
    }

    pub fn is_dominated_pair(&self, task: &ChoiceTask) -> bool {
        let alts = &task.alternatives;
        alts.iter()
            .enumerate()
            .any(|(i, a)| alts.iter().enumerate().any(|(j, b)| i != j && self.dominates(a, b)))
    }
}

/// All unordered pairs of distinct profiles; task ids run from 1 in
/// enumeration order.
pub fn enumerate_pairs(spec: &AttributeSpec) -> Result<Vec<ChoiceTask>> {
    let profiles = spec.profiles()?;
    if profiles.len() < 2 {
        return Err(Error::Input("spec yields a single profile; no pairs exist".into()));
    }
    let mut tasks = Vec::with_capacity(profiles.len() * (profiles.len() - 1) / 2);
    let mut id = 1;
    for i in 0..profiles.len() {
        for j in i + 1..profiles.len() {
            tasks.push(ChoiceTask {
                task_id: id,
                scenario: None,
                alternatives: vec![profiles[i], profiles[j]],
            });
            id += 1;
        }
    }
    Ok(tasks)
}

pub fn filter_dominated(spec: &AttributeSpec, pairs: &[ChoiceTask]) -> Vec<ChoiceTask> {
    pairs
        .iter()
        .filter(|t| !spec.is_dominated_pair(t))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCount {
    pub level: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeBalance {
    pub attribute: String,
    pub levels: Vec<LevelCount>,
    /// Count each level would have in a perfectly balanced design.
    pub expected: f64,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub attributes: AttributeSpec,
    pub tasks: Vec<ChoiceTask>,
    pub d_error: f64,
    pub prior: Coefficients,
    #[serde(skip)]
    pub balance_report: Vec<AttributeBalance>,
}

impl Design {
    pub fn new(attributes: AttributeSpec, tasks: Vec<ChoiceTask>, prior: Coefficients) -> Result<Self> {
        let d_error = d_error(&attributes, &tasks, &prior)?;
        let balance_report = balance(&attributes, &tasks);
        Ok(Self {
            attributes,
            tasks,
            d_error,
            prior,
            balance_report,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut d: Design = serde_json::from_str(s)?;
        d.attributes.validate()?;
        for t in &d.tasks {
            t.validate()?;
        }
        d.balance_report = balance(&d.attributes, &d.tasks);
        Ok(d)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn balance(spec: &AttributeSpec, tasks: &[ChoiceTask]) -> Vec<AttributeBalance> {
    let n_slots: usize = tasks.iter().map(|t| t.alternatives.len()).sum();
    spec.attributes
        .iter()
        .map(|a| {
            let f = field_index(&a.name).expect("validated");
            let levels: Vec<LevelCount> = a
                .levels
                .iter()
                .map(|&l| LevelCount {
                    level: l,
                    count: tasks
                        .iter()
                        .flat_map(|t| &t.alternatives)
                        .filter(|p| p.as_array()[f] == l)
                        .count(),
                })
                .collect();
            let expected = n_slots as f64 / a.levels.len() as f64;
            let max_deviation = levels
                .iter()
                .map(|c| (c.count as f64 - expected).abs())
                .fold(0.0, f64::max);
            AttributeBalance {
                attribute: a.name.clone(),
                levels,
                expected,
                max_deviation,
            }
        })
        .collect()
}

fn prior_vector(spec: &AttributeSpec, prior: &Coefficients) -> Result<[f64; 3]> {
    let mut b = [0.0; 3];
    for a in &spec.attributes {
        let v = prior.get(&a.name)?;
        if !v.is_finite() {
            return Err(Error::Input(format!("prior for `{}` is not finite", a.name)));
        }
        b[field_index(&a.name).expect("validated")] = v;
    }
    Ok(b)
}

fn task_info(task: &ChoiceTask, beta: &[f64; 3]) -> [[f64; 3]; 3] {
    task_information(
        &PanelTask {
            rows: task.attribute_rows(),
            chosen: 0,
        },
        beta,
    )
}

/// `det(M)^(-1/K)` of the K x K information sub-matrix over the varied
/// attributes; infinite when singular.
fn d_error_from_info(info: &[[f64; 3]; 3], fields: &[usize]) -> f64 {
    let k = fields.len();
    let m = DMatrix::from_fn(k, k, |a, b| info[fields[a]][fields[b]]);
    let det = m.determinant();
    if det > 0.0 && det.is_finite() {
        det.powf(-1.0 / k as f64)
    } else {
        f64::INFINITY
    }
}

/// D-error of a design under the conditional-logit information matrix at
/// `prior`.
pub fn d_error(spec: &AttributeSpec, tasks: &[ChoiceTask], prior: &Coefficients) -> Result<f64> {
    spec.validate()?;
    let beta = prior_vector(spec, prior)?;
    let mut info = [[0.0; 3]; 3];
    for t in tasks {
        add_info(&mut info, &task_info(t, &beta), 1.0);
    }
    Ok(d_error_from_info(&info, &spec.field_indices()))
}

fn add_info(acc: &mut [[f64; 3]; 3], m: &[[f64; 3]; 3], sign: f64) {
    for a in 0..3 {
        for b in 0..3 {
            acc[a][b] += sign * m[a][b];
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectConfig {
    pub spec: AttributeSpec,
    pub restarts: usize,
    pub max_sweeps: usize,
    /// Weight on the level-imbalance penalty added to the D-error.
    pub balance_weight: f64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            spec: AttributeSpec::replication(),
            restarts: 50,
            max_sweeps: 1000,
            balance_weight: 0.0,
        }
    }
}

/// Objective trace of one exchange restart.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartTrace {
    pub objective: Vec<f64>,
    pub d_error: Vec<f64>,
}

struct Candidates {
    tasks: Vec<ChoiceTask>,
    info: Vec<[[f64; 3]; 3]>,
    /// Level counts, flattened over attributes.
    levels: Vec<Vec<f64>>,
    expected_per_task: Vec<f64>,
    fields: Vec<usize>,
}

impl Candidates {
    fn new(spec: &AttributeSpec, tasks: Vec<ChoiceTask>, beta: &[f64; 3]) -> Self {
        let info = tasks.iter().map(|t| task_info(t, beta)).collect();
        let mut expected_per_task = Vec::new();
        for a in &spec.attributes {
            for _ in &a.levels {
                expected_per_task.push(2.0 / a.levels.len() as f64);
            }
        }
        let levels = tasks
            .iter()
            .map(|t| {
                let mut counts = Vec::new();
                for a in &spec.attributes {
                    let f = field_index(&a.name).expect("validated");
                    for &l in &a.levels {
                        counts.push(
                            t.alternatives.iter().filter(|p| p.as_array()[f] == l).count()
                                as f64,
                        );
                    }
                }
                counts
            })
            .collect();
        Self {
            tasks,
            info,
            levels,
            expected_per_task,
            fields: spec.field_indices(),
        }
    }

    fn objective(&self, info: &[[f64; 3]; 3], levels: &[f64], n: usize, weight: f64) -> (f64, f64) {
        let de = d_error_from_info(info, &self.fields);
        if weight == 0.0 {
            return (de, de);
        }
        let imbalance: f64 = levels
            .iter()
            .zip(&self.expected_per_task)
            .map(|(c, e)| (c - e * n as f64).powi(2))
            .sum::<f64>()
            / n as f64;
        (de + weight * imbalance, de)
    }
}

struct RestartResult {
    members: Vec<usize>,
    objective: f64,
    trace: RestartTrace,
}

fn sorted_ids(members: &[usize], cands: &Candidates) -> Vec<u32> {
    let mut ids: Vec<u32> = members.iter().map(|&i| cands.tasks[i].task_id).collect();
    ids.sort_unstable();
    ids
}

fn run_restart(
    cands: &Candidates,
    n_tasks: usize,
    cfg: &SelectConfig,
    seed: u64,
    restart: usize,
) -> RestartResult {
    let n_c = cands.tasks.len();
    let n_lev = cands.expected_per_task.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    let mut order: Vec<usize> = (0..n_c).collect();
    order.shuffle(&mut rng);

    // Greedy seeding: a random nucleus, then the candidate that most improves
    // a ridge-regularized D-error.
    let nucleus = cands.fields.len().min(n_tasks);
    let mut members: Vec<usize> = order[..nucleus].to_vec();
    let mut in_design = vec![false; n_c];
    let mut info = [[0.0; 3]; 3];
    let mut levels = vec![0.0; n_lev];
    for &m in &members {
        in_design[m] = true;
        add_info(&mut info, &cands.info[m], 1.0);
        for (l, c) in levels.iter_mut().zip(&cands.levels[m]) {
            *l += c;
        }
    }
    while members.len() < n_tasks {
        let ridge = 1e-9 * (1.0 + info[0][0] + info[1][1] + info[2][2]);
        let mut best: Option<(f64, usize)> = None;
        for &c in &order {
            if in_design[c] {
                continue;
            }
            let mut trial = info;
            add_info(&mut trial, &cands.info[c], 1.0);
            for &f in &cands.fields {
                trial[f][f] += ridge;
            }
            let lv: Vec<f64> = levels.iter().zip(&cands.levels[c]).map(|(a, b)| a + b).collect();
            let (obj, _) = cands.objective(&trial, &lv, members.len() + 1, cfg.balance_weight);
            if best.is_none_or(|(b, _)| obj < b) {
                best = Some((obj, c));
            }
        }
        let (_, c) = best.expect("enough candidates");
        members.push(c);
        in_design[c] = true;
        add_info(&mut info, &cands.info[c], 1.0);
        for (l, x) in levels.iter_mut().zip(&cands.levels[c]) {
            *l += x;
        }
    }

    let (mut obj, mut de) = cands.objective(&info, &levels, n_tasks, cfg.balance_weight);
    let mut trace = RestartTrace {
        objective: vec![obj],
        d_error: vec![de],
    };
    // Fedorov exchange: best improving swap per design position.
    for _ in 0..cfg.max_sweeps {
        let mut improved = false;
        for pos in 0..n_tasks {
            let out = members[pos];
            let mut base = info;
            add_info(&mut base, &cands.info[out], -1.0);
            let base_lv: Vec<f64> =
                levels.iter().zip(&cands.levels[out]).map(|(a, b)| a - b).collect();
            let mut best: Option<(f64, f64, usize)> = None;
            for c in 0..n_c {
                if in_design[c] {
                    continue;
                }
                let mut trial = base;
                add_info(&mut trial, &cands.info[c], 1.0);
                let lv: Vec<f64> =
                    base_lv.iter().zip(&cands.levels[c]).map(|(a, b)| a + b).collect();
                let (o, d) = cands.objective(&trial, &lv, n_tasks, cfg.balance_weight);
                if best.is_none_or(|(b, _, _)| o < b) {
                    best = Some((o, d, c));
                }
            }
            if let Some((o, d, c)) = best {
                if o < obj * (1.0 - 1e-12) {
                    in_design[out] = false;
                    in_design[c] = true;
                    members[pos] = c;
                    add_info(&mut info, &cands.info[out], -1.0);
                    add_info(&mut info, &cands.info[c], 1.0);
                    for ((l, a), b) in levels.iter_mut().zip(&cands.levels[out]).zip(&cands.levels[c]) {
                        *l += b - a;
                    }
                    obj = o;
                    de = d;
                    trace.objective.push(obj);
                    trace.d_error.push(de);
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    RestartResult {
        members,
        objective: obj,
        trace,
    }
}

fn canonical_candidates(candidates: &[ChoiceTask]) -> Result<Vec<ChoiceTask>> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by_key(|t| t.task_id);
    if sorted.windows(2).any(|w| w[0].task_id == w[1].task_id) {
        return Err(Error::Input("candidate task ids must be unique".into()));
    }
    Ok(sorted)
}

/// Greedy seeding plus Fedorov exchange over `cfg.restarts` seeded restarts.
pub fn select_design(
    candidates: &[ChoiceTask],
    n_tasks: usize,
    prior: &Coefficients,
    seed: u64,
    cfg: &SelectConfig,
) -> Result<Design> {
    select_design_traced(candidates, n_tasks, prior, seed, cfg).map(|(d, _)| d)
}

/// As [`select_design`], also returning every restart's objective trace.
pub fn select_design_traced(
    candidates: &[ChoiceTask],
    n_tasks: usize,
    prior: &Coefficients,
    seed: u64,
    cfg: &SelectConfig,
) -> Result<(Design, Vec<RestartTrace>)> {
    cfg.spec.validate()?;
    if n_tasks == 0 {
        return Err(Error::Input("n_tasks must be positive".into()));
    }
    if n_tasks > candidates.len() {
        return Err(Error::Input(format!(
            "requested {n_tasks} tasks from {} candidates",
            candidates.len()
        )));
    }
    if cfg.restarts == 0 {
        return Err(Error::Config("at least one restart required".into()));
    }
    for t in candidates {
        t.validate()?;
        if t.alternatives.len() != 2 {
            return Err(Error::Input("designs are built from two-alternative tasks".into()));
        }
    }
    let beta = prior_vector(&cfg.spec, prior)?;
    let sorted = canonical_candidates(candidates)?;
    let cands = Candidates::new(&cfg.spec, sorted, &beta);

    let results: Vec<RestartResult> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| run_restart(&cands, n_tasks, cfg, seed, r))
        .collect();

    let best = results
        .iter()
        .min_by(|a, b| {
            a.objective
                .total_cmp(&b.objective)
                .then_with(|| sorted_ids(&a.members, &cands).cmp(&sorted_ids(&b.members, &cands)))
        })
        .expect("at least one restart");
    let mut members = best.members.clone();
    members.sort_unstable();
    let tasks: Vec<ChoiceTask> = members.iter().map(|&i| cands.tasks[i].clone()).collect();
    let design = Design::new(cfg.spec.clone(), tasks, prior.clone())?;
    Ok((design, results.into_iter().map(|r| r.trace).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOverlap {
    pub task_id: u32,
    /// Share of attributes whose level is identical across alternatives.
    pub overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignAudit {
    pub n_tasks: usize,
    pub balance: Vec<AttributeBalance>,
    pub max_balance_deviation: f64,
    pub overlap: Vec<TaskOverlap>,
    pub mean_overlap: f64,
    pub dominance_violations: usize,
    pub d_error: f64,
}

pub fn audit_design(design: &Design) -> Result<DesignAudit> {
    if design.tasks.is_empty() {
        return Err(Error::Input("design has no tasks".into()));
    }
    let spec = &design.attributes;
    spec.validate()?;
    let bal = balance(spec, &design.tasks);
    let max_balance_deviation = bal.iter().map(|b| b.max_deviation).fold(0.0, f64::max);
    let fields = spec.field_indices();
    let overlap: Vec<TaskOverlap> = design
        .tasks
        .iter()
        .map(|t| {
            let same = fields
                .iter()
                .filter(|&&f| {
                    let v = t.alternatives[0].as_array()[f];
                    t.alternatives.iter().all(|a| a.as_array()[f] == v)
                })
                .count();
            TaskOverlap {
                task_id: t.task_id,
                overlap: same as f64 / fields.len() as f64,
            }
        })
        .collect();
    let mean_overlap = overlap.iter().map(|o| o.overlap).sum::<f64>() / overlap.len() as f64;
    let dominance_violations = design.tasks.iter().filter(|t| spec.is_dominated_pair(t)).count();
    Ok(DesignAudit {
        n_tasks: design.tasks.len(),
        balance: bal,
        max_balance_deviation,
        overlap,
        mean_overlap,
        dominance_violations,
        d_error: d_error(spec, &design.tasks, &design.prior)?,
    })
}

/// Per-attribute level frequencies keyed by level, for reporting.
pub fn level_frequencies(design: &Design) -> BTreeMap<String, Vec<(f64, usize)>> {
    balance(&design.attributes, &design.tasks)
        .into_iter()
        .map(|b| (b.attribute, b.levels.into_iter().map(|l| (l.level, l.count)).collect()))
        .collect()
}

pub fn zero_prior(spec: &AttributeSpec) -> Coefficients {
    let mut c = Coefficients::new();
    for a in &spec.attributes {
        c.set(&a.name, 0.0);
    }
    c
}
