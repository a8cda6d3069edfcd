//! Experiment configuration, the explore/estimate/plan pipeline, exact
//! evaluation, sweeps to CSV and the self-normalized sum checks.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::{log_factor, VisitCounts};
use crate::error::{Error, Result, StageExt};
use crate::estimator::{baseline_uniform, estimate_dynamics, sample_budget, theory_penalty_constant, Estimate, Setting};
use crate::explorer::{
    create_exploration_policy, exploration_constants_with, mixture_occupancy, Exploration, PracticalConstants, Profile,
};
use crate::hard::{HardInstanceParams, HardMdp};
use crate::mdp::{
    dp_optimal, dp_policy_eval, random_kernel, random_reward, MarkovPolicy, MdpInstance, MdpSpec, RewardFunction,
    TransitionKernel,
};
use crate::occupancy::{coverage_ratios, occupancy_from_policy, significance_set, OccupancyMeasure};
use crate::planner::{pessimistic_plan, PenaltyKind};
use crate::rng::Seed;

/// Largest dataset a single run will collect.
pub const DATASET_CAP: u64 = 100_000_000;

const TAG_MDP: u64 = 1;
const TAG_EXPLORE: u64 = 2;
const TAG_ESTIMATE: u64 = 3;
const TAG_REWARDS: u64 = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NuKind {
    #[default]
    Zero,
    Uniform,
}

/// Where the true environment comes from. Without a seed, each run seed builds its own instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MdpSource {
    File {
        path: PathBuf,
    },
    Random {
        states: usize,
        actions: usize,
        horizon: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    Hard {
        n: usize,
        horizon: usize,
        exit_step: usize,
        target: usize,
        actions: usize,
        #[serde(default)]
        nu: NuKind,
        #[serde(default)]
        seed: Option<u64>,
    },
}

impl MdpSource {
    pub fn instance(&self, run_seed: Seed) -> Result<MdpInstance> {
        let pick = |fixed: &Option<u64>| fixed.map(Seed).unwrap_or_else(|| run_seed.derive(TAG_MDP));
        match self {
            MdpSource::File { path } => MdpInstance::load(path),
            MdpSource::Random { states, actions, horizon, seed } => {
                let spec = MdpSpec::new(*states, *actions, *horizon)?;
                Ok(MdpInstance { kernel: random_kernel(spec, pick(seed)), reward: None })
            }
            MdpSource::Hard { n, horizon, exit_step, target, actions, nu, seed } => {
                let seed = pick(seed);
                let mut params = HardInstanceParams::new(*n, *horizon, *exit_step, *target, *actions)?;
                if *nu == NuKind::Uniform {
                    params = params.with_uniform_nu(seed.derive(1));
                }
                Ok(HardMdp::build(&params, seed)?.instance())
            }
        }
    }
}

/// Rewards revealed after exploration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardSource {
    /// The reward stored in the instance file.
    Instance,
    Files(Vec<PathBuf>),
    /// This many i.i.d. uniform rewards, drawn from the run seed.
    Random(usize),
}

/// Planner constants; unset values take the profile default (48/64 theory, 1/1 practical).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConstants {
    pub c_a: Option<f64>,
    pub c_f: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Collector {
    #[default]
    Explore,
    Uniform,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grid {
    #[serde(rename = "N")]
    pub n: Vec<u64>,
    #[serde(rename = "T")]
    pub t: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mdp: MdpSource,
    pub epsilon: f64,
    pub delta: f64,
    pub setting: Setting,
    #[serde(default)]
    pub rewards: Option<RewardSource>,
    #[serde(default)]
    pub profile: Profile,
    #[serde(default)]
    pub practical: PracticalConstants,
    #[serde(default)]
    pub planner: PlannerConstants,
    /// Leading constant of the practical sample budget.
    #[serde(default = "one")]
    pub budget_leading: f64,
    #[serde(default)]
    pub collector: Collector,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Record wall-clock time per run; off by default so outputs are reproducible byte for byte.
    #[serde(default)]
    pub timing: bool,
}

fn one() -> f64 {
    1.0
}

impl ExperimentConfig {
    pub fn new(mdp: MdpSource, epsilon: f64, delta: f64, setting: Setting, seeds: Vec<u64>) -> Self {
        ExperimentConfig {
            mdp,
            epsilon,
            delta,
            setting,
            rewards: None,
            profile: Profile::Practical,
            practical: PracticalConstants::default(),
            planner: PlannerConstants::default(),
            budget_leading: 1.0,
            collector: Collector::Explore,
            seeds,
            grid: Grid::default(),
            out: None,
            timing: false,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seed list is empty"));
        }
        if self.grid.n.contains(&0) || self.grid.t.contains(&0) {
            return Err(Error::config("grid values must be positive"));
        }
        Ok(())
    }

    fn penalty(&self, class_size: usize) -> PenaltyKind {
        let default = match self.profile {
            Profile::Theory => theory_penalty_constant(self.setting),
            Profile::Practical => 1.0,
        };
        match self.setting {
            Setting::Rae => PenaltyKind::Rae { c_a: self.planner.c_a.unwrap_or(default), class_size },
            Setting::Rfe => PenaltyKind::Rfe { c_f: self.planner.c_f.unwrap_or(default) },
        }
    }

    fn practical_for(&self, episodes: Option<usize>) -> PracticalConstants {
        PracticalConstants { episodes: episodes.or(self.practical.episodes), ..self.practical.clone() }
    }
}

/// Exact `E_{s ~ mu1}[V*_1(s) - V^pi_1(s)]`.
pub fn evaluate_suboptimality(policy: &MarkovPolicy, kernel: &TransitionKernel, reward: &RewardFunction) -> Result<f64> {
    let (best, _) = dp_optimal(kernel, reward)?;
    let own = dp_policy_eval(kernel, reward, policy)?;
    Ok(best.initial_value(kernel.initial()) - own.initial_value(kernel.initial()))
}

/// One `(seed, N, T)` outcome. Numeric fields are `None` when the run failed or
/// the quantity does not apply.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind: String,
    pub seed: Option<u64>,
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "T")]
    pub t: Option<usize>,
    pub profile: Profile,
    pub setting: Option<Setting>,
    /// Worst gap over the revealed rewards.
    pub gap: Option<f64>,
    pub gaps: Vec<f64>,
    pub ratio_sig: Option<f64>,
    pub mass_nonsig: Option<f64>,
    pub learner_reward: Option<f64>,
    #[serde(rename = "G_bound")]
    pub g_bound: Option<f64>,
    pub mean_penalty: Option<f64>,
    /// Smallest visit count over the significant triples.
    pub min_significant_count: Option<u64>,
    pub wall_ms: Option<f64>,
    pub error: Option<String>,
    #[serde(skip)]
    pub exit_code: Option<i32>,
}

impl RunRecord {
    fn failed(base: RunRecord, err: &Error) -> Self {
        RunRecord { error: Some(err.to_string()), exit_code: Some(err.exit_code()), ..base }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "T")]
    pub t: Option<usize>,
    pub runs: usize,
    pub failures: usize,
    pub gap: Option<Quantiles>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub records: Vec<RunRecord>,
    /// One median row per grid cell.
    pub aggregates: Vec<RunRecord>,
    pub cells: Vec<CellSummary>,
}

impl RunReport {
    /// Records followed by aggregates.
    pub fn rows(&self) -> impl Iterator<Item = &RunRecord> {
        self.records.iter().chain(&self.aggregates)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_COLUMNS)?;
        for r in self.rows() {
            w.write_record(csv_row(r))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn first_error(&self) -> Option<&RunRecord> {
        self.records.iter().find(|r| r.error.is_some())
    }
}

pub const CSV_COLUMNS: [&str; 13] = [
    "kind",
    "seed",
    "N",
    "T",
    "profile",
    "setting",
    "gap",
    "ratio_sig",
    "mass_nonsig",
    "learner_reward",
    "G_bound",
    "wall_ms",
    "error",
];

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_row(r: &RunRecord) -> Vec<String> {
    vec![
        r.kind.clone(),
        cell(r.seed),
        r.n.to_string(),
        cell(r.t),
        r.profile.to_string(),
        cell(r.setting),
        cell(r.gap),
        cell(r.ratio_sig),
        cell(r.mass_nonsig),
        cell(r.learner_reward),
        cell(r.g_bound),
        cell(r.wall_ms),
        r.error.clone().unwrap_or_default(),
    ]
}

/// Environment and revealed rewards for one seed.
struct Stage1 {
    env: TransitionKernel,
    rewards: Vec<RewardFunction>,
    l0: f64,
}

fn prepare(cfg: &ExperimentConfig, seed: Seed) -> Result<Stage1> {
    let instance = cfg.mdp.instance(seed).stage("load")?;
    let spec = instance.spec();
    let l0 = log_factor(&spec, cfg.delta, cfg.epsilon).stage("load")?;
    let default = match (&instance.reward, cfg.setting) {
        (Some(_), _) => RewardSource::Instance,
        (None, Setting::Rae) => RewardSource::Random(4),
        (None, Setting::Rfe) => RewardSource::Random(10),
    };
    let rewards = match cfg.rewards.clone().unwrap_or(default) {
        RewardSource::Instance => match instance.reward {
            Some(r) => vec![r],
            None => return Err(Error::config("instance has no reward").in_stage("observe")),
        },
        RewardSource::Files(paths) => paths
            .iter()
            .map(|p| crate::mdp::reward_from_json(&std::fs::read_to_string(p)?, &spec))
            .collect::<Result<_>>()
            .stage("observe")?,
        RewardSource::Random(k) => {
            let base = seed.derive(TAG_REWARDS);
            (0..k).map(|i| random_reward(spec, base.derive(i as u64))).collect()
        }
    };
    if rewards.is_empty() {
        return Err(Error::config("no rewards to plan for").in_stage("observe"));
    }
    Ok(Stage1 { env: instance.kernel, rewards, l0 })
}

fn explore(cfg: &ExperimentConfig, env: &TransitionKernel, episodes: Option<usize>, seed: Seed) -> Result<Exploration> {
    let spec = env.spec();
    let consts = exploration_constants_with(&spec, cfg.epsilon, cfg.delta, cfg.profile, &cfg.practical_for(episodes))
        .stage("explore")?;
    let consts = match (cfg.profile, episodes) {
        (Profile::Theory, Some(t)) => consts.with_episodes(&spec, t).stage("explore")?,
        _ => consts,
    };
    create_exploration_policy(env, &consts, seed.derive(TAG_EXPLORE)).stage("explore")
}

fn dataset_size(cfg: &ExperimentConfig, spec: &MdpSpec, n: Option<u64>) -> Result<u64> {
    let n = match n {
        Some(n) => n,
        None => sample_budget(cfg.setting, spec, cfg.epsilon, cfg.delta, cfg.profile, cfg.budget_leading)?,
    };
    if n > DATASET_CAP {
        return Err(Error::CapExceeded(format!("dataset size {n} exceeds the cap {DATASET_CAP}")));
    }
    Ok(n)
}

fn min_significant(counts: &VisitCounts, mu: &OccupancyMeasure, omega: f64) -> Result<Option<u64>> {
    let psi = significance_set(mu, omega)?;
    let (h, s, a) = mu.spec_shape();
    let mut best = None;
    for hh in 0..h {
        for ss in 0..s {
            for aa in 0..a {
                if psi.contains(hh, ss, aa) {
                    let n = counts.n(hh, ss, aa);
                    best = Some(best.map_or(n, |b: u64| b.min(n)));
                }
            }
        }
    }
    Ok(best)
}

/// Estimation, planning and evaluation for one dataset size, given the exploration outcome.
fn finish(
    cfg: &ExperimentConfig,
    stage1: &Stage1,
    exploration: Option<&Exploration>,
    n: u64,
    seed: Seed,
    base: &RunRecord,
) -> Result<RunRecord> {
    let env = &stage1.env;
    let (estimate, mu_ref, omega): (Estimate, OccupancyMeasure, f64) = match exploration {
        Some(x) => {
            let est = estimate_dynamics(env, &x.mixture, n as usize, seed.derive(TAG_ESTIMATE), stage1.l0)
                .stage("estimate")?;
            (est, mixture_occupancy(&x.mixture, env).stage("evaluate")?, x.config.omega)
        }
        None => {
            let est = baseline_uniform(env, n as usize, seed.derive(TAG_ESTIMATE), stage1.l0).stage("estimate")?;
            let spec = env.spec();
            let consts = exploration_constants_with(&spec, cfg.epsilon, cfg.delta, cfg.profile, &cfg.practical)
                .stage("estimate")?;
            let mu = occupancy_from_policy(env, &MarkovPolicy::uniform(spec)).stage("evaluate")?;
            (est, mu, consts.omega)
        }
    };
    let kind = cfg.penalty(stage1.rewards.len());
    let mut gaps = Vec::with_capacity(stage1.rewards.len());
    let mut penalty_total = 0.0;
    for r in &stage1.rewards {
        let plan = pessimistic_plan(r, &estimate.model, &estimate.counts, kind).stage("plan")?;
        penalty_total += plan.penalty.mean().unwrap_or(0.0);
        gaps.push(evaluate_suboptimality(&plan.policy, env, r).stage("evaluate")?);
    }
    let coverage = coverage_ratios(&mu_ref, omega, env).stage("evaluate")?;
    Ok(RunRecord {
        gap: gaps.iter().copied().reduce(f64::max),
        gaps,
        ratio_sig: Some(coverage.ratio_sig),
        mass_nonsig: Some(coverage.mass_nonsig),
        mean_penalty: Some(penalty_total / stage1.rewards.len() as f64),
        min_significant_count: min_significant(&estimate.counts, &mu_ref, omega).stage("evaluate")?,
        ..base.clone()
    })
}

fn base_record(cfg: &ExperimentConfig, seed: u64, n: u64, t: Option<usize>, exploration: Option<&Exploration>) -> RunRecord {
    RunRecord {
        kind: "record".into(),
        seed: Some(seed),
        n,
        t: exploration.map(|x| x.config.episodes).or(t),
        profile: cfg.profile,
        setting: Some(cfg.setting),
        learner_reward: exploration.map(|x| x.diagnostics.learner_reward),
        g_bound: exploration.map(|x| x.diagnostics.reward_bound),
        ..RunRecord::default()
    }
}

/// Environment and exploration shared by every dataset size of one `(seed, T)`.
struct Prepared {
    stage1: Stage1,
    exploration: Option<Exploration>,
}

fn prepare_seed(cfg: &ExperimentConfig, seed: u64, t: Option<usize>) -> Result<Prepared> {
    let stage1 = prepare(cfg, Seed(seed))?;
    let exploration = match cfg.collector {
        Collector::Explore => Some(explore(cfg, &stage1.env, t, Seed(seed))?),
        Collector::Uniform => None,
    };
    Ok(Prepared { stage1, exploration })
}

fn run_size(cfg: &ExperimentConfig, prepared: &Prepared, seed: u64, t: Option<usize>, n: Option<u64>) -> Result<RunRecord> {
    let spec = prepared.stage1.env.spec();
    let n = dataset_size(cfg, &spec, n).stage("estimate")?;
    let base = base_record(cfg, seed, n, t, prepared.exploration.as_ref());
    finish(cfg, &prepared.stage1, prepared.exploration.as_ref(), n, Seed(seed), &base)
}

/// All dataset sizes for one `(seed, T)`: one exploration, then one dataset per size.
///
/// Datasets for different sizes share a prefix, since episode `i` always uses the same substream.
fn run_seed(cfg: &ExperimentConfig, seed: u64, t: Option<usize>, sizes: &[Option<u64>]) -> Vec<RunRecord> {
    let started = Instant::now();
    let prepared = match prepare_seed(cfg, seed, t) {
        Ok(p) => p,
        Err(e) => {
            return sizes.iter().map(|n| RunRecord::failed(base_record(cfg, seed, n.unwrap_or(0), t, None), &e)).collect()
        }
    };
    let explore_ms = started.elapsed().as_secs_f64() * 1e3;
    sizes
        .iter()
        .map(|&n| {
            let started = Instant::now();
            let mut record = run_size(cfg, &prepared, seed, t, n).unwrap_or_else(|e| {
                RunRecord::failed(base_record(cfg, seed, n.unwrap_or(0), t, prepared.exploration.as_ref()), &e)
            });
            if cfg.timing {
                record.wall_ms = Some(explore_ms + started.elapsed().as_secs_f64() * 1e3);
            }
            record
        })
        .collect()
}

/// Steps of the meta-algorithm for one seed: explore, estimate, observe, plan, evaluate.
///
/// Uses the first grid values when present, otherwise the formula values.
pub fn run_pipeline(cfg: &ExperimentConfig, seed: u64) -> Result<RunRecord> {
    cfg.validate()?;
    let t = cfg.grid.t.first().copied();
    let started = Instant::now();
    let prepared = prepare_seed(cfg, seed, t)?;
    let mut record = run_size(cfg, &prepared, seed, t, cfg.grid.n.first().copied())?;
    if cfg.timing {
        record.wall_ms = Some(started.elapsed().as_secs_f64() * 1e3);
    }
    Ok(record)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Median of the present values.
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(quantile(&v, 0.5))
}

fn summarize(cfg: &ExperimentConfig, n: u64, t: Option<usize>, records: &[RunRecord]) -> (RunRecord, CellSummary) {
    let ok: Vec<&RunRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let med = |f: fn(&RunRecord) -> Option<f64>| median(ok.iter().filter_map(|r| f(r)));
    let mut gaps: Vec<f64> = ok.iter().filter_map(|r| r.gap).collect();
    gaps.sort_by(f64::total_cmp);
    let row = RunRecord {
        kind: "median".into(),
        seed: None,
        n,
        t: records.iter().find_map(|r| r.t).or(t),
        profile: cfg.profile,
        setting: Some(cfg.setting),
        gap: med(|r| r.gap),
        ratio_sig: med(|r| r.ratio_sig),
        mass_nonsig: med(|r| r.mass_nonsig),
        learner_reward: med(|r| r.learner_reward),
        g_bound: med(|r| r.g_bound),
        mean_penalty: med(|r| r.mean_penalty),
        wall_ms: med(|r| r.wall_ms),
        error: (ok.len() < records.len()).then(|| format!("{} of {} runs failed", records.len() - ok.len(), records.len())),
        ..RunRecord::default()
    };
    let summary = CellSummary {
        n,
        t: row.t,
        runs: records.len(),
        failures: records.len() - ok.len(),
        gap: (!gaps.is_empty()).then(|| Quantiles {
            q25: quantile(&gaps, 0.25),
            median: quantile(&gaps, 0.5),
            q75: quantile(&gaps, 0.75),
        }),
    };
    (row, summary)
}

/// Grid over `N` and `T`, every seed per cell; records sorted by `(cell, seed)`, then one
/// median row per cell. Failures become rows with the error column set.
pub fn sweep(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let sizes: Vec<Option<u64>> =
        if cfg.grid.n.is_empty() { vec![None] } else { cfg.grid.n.iter().map(|&n| Some(n)).collect() };
    let horizons: Vec<Option<usize>> =
        if cfg.grid.t.is_empty() { vec![None] } else { cfg.grid.t.iter().map(|&t| Some(t)).collect() };
    let jobs: Vec<(usize, usize)> =
        (0..horizons.len()).flat_map(|ti| (0..cfg.seeds.len()).map(move |si| (ti, si))).collect();
    let results: Vec<((usize, usize), Vec<RunRecord>)> = jobs
        .par_iter()
        .map(|&(ti, si)| ((ti, si), run_seed(cfg, cfg.seeds[si], horizons[ti], &sizes)))
        .collect();

    let mut report = RunReport::default();
    for (ni, &n) in sizes.iter().enumerate() {
        for (ti, &t) in horizons.iter().enumerate() {
            let mut rows: Vec<RunRecord> = Vec::with_capacity(cfg.seeds.len());
            for si in 0..cfg.seeds.len() {
                let (_, records) = results.iter().find(|(key, _)| *key == (ti, si)).expect("every job ran");
                rows.push(records[ni].clone());
            }
            let n_value = rows.iter().map(|r| r.n).find(|&n| n > 0).or(n).unwrap_or(0);
            let (aggregate, summary) = summarize(cfg, n_value, t, &rows);
            report.records.extend(rows);
            report.aggregates.push(aggregate);
            report.cells.push(summary);
        }
    }
    Ok(report)
}

/// A sequence that broke one of the two inequalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaFailure {
    pub form: char,
    pub sequence: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub checked: usize,
    pub failures: Vec<LemmaFailure>,
}

/// `sum a_i / (1 + sum_{j<i} a_j)` and `2 ln(1 + sum a_i)`.
pub fn self_normalized_shifted(a: &[f64]) -> (f64, f64) {
    let mut prefix = 0.0;
    let mut lhs = 0.0;
    for &x in a {
        lhs += x / (1.0 + prefix);
        prefix += x;
    }
    (lhs, 2.0 * prefix.ln_1p())
}

/// `sum a_i / sum_{j<=i} a_j` and `1 + ln(S_n / S_1)`.
pub fn self_normalized_ratio(a: &[f64]) -> (f64, f64) {
    let mut prefix = 0.0;
    let mut lhs = 0.0;
    for &x in a {
        prefix += x;
        lhs += x / prefix;
    }
    (lhs, 1.0 + (prefix / a[0]).ln())
}

/// Rounding slack for the comparison; the inequalities can be tight to first order.
const LEMMA_SLACK: f64 = 1e-12;

/// `count` random sequences per form: entries in `(0, 1]` for the shifted form, log-uniform
/// positives over ten orders of magnitude for the ratio form.
pub fn lemma_checks(seed: Seed, count: usize) -> LemmaReport {
    let mut rng = seed.rng();
    let mut report = LemmaReport::default();
    let mut check = |form: char, sequence: Vec<f64>, (lhs, rhs): (f64, f64)| {
        report.checked += 1;
        if lhs > rhs + LEMMA_SLACK * rhs.abs().max(1.0) {
            report.failures.push(LemmaFailure { form, sequence, lhs, rhs });
        }
    };
    for _ in 0..count {
        let len = rng.random_range(1..=64);
        let a: Vec<f64> = (0..len).map(|_| 1.0 - rng.random::<f64>()).collect();
        let r = self_normalized_shifted(&a);
        check('a', a, r);
    }
    for _ in 0..count {
        let len = rng.random_range(1..=64);
        let b: Vec<f64> = (0..len).map(|_| 10f64.powf(rng.random_range(-5.0..5.0))).collect();
        let r = self_normalized_ratio(&b);
        check('b', b, r);
    }
    report
}
