//! Finite-horizon, time-inhomogeneous tabular MDPs: kernels, rewards, policies,
//! exact dynamic programming and seeded trajectory simulation.
//!
//! Steps are indexed `0..H` internally. `V_{H}` (one past the last step) is
//! identically zero and never stored.

use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{sample_index, Seed};
use crate::tensor::{self, Nested3, Nested4};

/// Row-sum tolerance enforced when a kernel or policy is constructed.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Row-sum tolerance used by [`validate_kernel`] reports.
pub const REPORT_TOL: f64 = 1e-9;
/// Two Q-values closer than this are treated as tied (lowest action wins).
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MdpSpec {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
}

impl MdpSpec {
    pub fn new(num_states: usize, num_actions: usize, horizon: usize) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || horizon == 0 {
            return Err(Error::config(format!(
                "MDP dimensions must be positive (|S|={num_states}, |A|={num_actions}, H={horizon})"
            )));
        }
        Ok(MdpSpec { num_states, num_actions, horizon })
    }

    /// |S|·|A|·H
    pub fn sah(&self) -> usize {
        self.num_states * self.num_actions * self.horizon
    }

    pub fn sa_shape(&self) -> (usize, usize, usize) {
        (self.horizon, self.num_states, self.num_actions)
    }

    pub fn sas_shape(&self) -> (usize, usize, usize, usize) {
        (self.horizon, self.num_states, self.num_actions, self.num_states)
    }

    pub(crate) fn check_sa(&self, shape: &[usize], what: &str) -> Result<()> {
        let expected = [self.horizon, self.num_states, self.num_actions];
        if shape != expected {
            return Err(Error::shape(format!("{what}: expected {expected:?}, got {shape:?}")));
        }
        Ok(())
    }
}

/// Transition kernel `P_h(s'|s,a)` plus initial distribution `mu1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    spec: MdpSpec,
    probs: Array4<f64>,
    initial: Array1<f64>,
}

impl TransitionKernel {
    /// Build a kernel, rejecting rows that are not distributions within 1e-12.
    pub fn new(probs: Array4<f64>, initial: Array1<f64>) -> Result<Self> {
        let kernel = Self::from_parts_unchecked(probs, initial)?;
        let report = validate_kernel_with_tol(&kernel.probs, &kernel.initial, STOCHASTIC_TOL);
        if let Some(v) = report.violations.first() {
            return Err(Error::config(format!(
                "invalid transition kernel ({} violations, first: {v})",
                report.violations.len()
            )));
        }
        Ok(kernel)
    }

    /// Build a kernel checking only shapes. Useful for deliberately broken fixtures.
    pub fn from_parts_unchecked(probs: Array4<f64>, initial: Array1<f64>) -> Result<Self> {
        let (h, s, a, s2) = probs.dim();
        if s != s2 || s != initial.len() {
            return Err(Error::shape(format!(
                "kernel shape {:?} inconsistent with |mu1| = {}",
                probs.dim(),
                initial.len()
            )));
        }
        let spec = MdpSpec::new(s, a, h)?;
        Ok(TransitionKernel { spec, probs, initial })
    }

    pub fn spec(&self) -> MdpSpec {
        self.spec
    }

    pub fn probs(&self) -> &Array4<f64> {
        &self.probs
    }

    pub fn probs_mut(&mut self) -> &mut Array4<f64> {
        &mut self.probs
    }

    pub fn initial(&self) -> &Array1<f64> {
        &self.initial
    }

    pub fn row(&self, h: usize, s: usize, a: usize) -> ArrayView1<'_, f64> {
        self.probs.slice(s![h, s, a, ..])
    }
}

/// Reward table `r_h(s,a)` with entries in `[0, bound]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardFunction {
    values: Array3<f64>,
    bound: f64,
}

impl RewardFunction {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        Self::with_bound(values, 1.0)
    }

    /// Rewards bounded by `bound` rather than 1 (used for internal count-based rewards).
    pub fn with_bound(values: Array3<f64>, bound: f64) -> Result<Self> {
        if !(bound > 0.0) || !bound.is_finite() {
            return Err(Error::config(format!("reward bound must be positive, got {bound}")));
        }
        if let Some(bad) = values.iter().find(|&&v| !(0.0..=bound).contains(&v)) {
            return Err(Error::config(format!("reward entry {bad} outside [0, {bound}]")));
        }
        Ok(RewardFunction { values, bound })
    }

    pub fn zeros(spec: MdpSpec) -> Self {
        RewardFunction { values: Array3::zeros(spec.sa_shape()), bound: 1.0 }
    }

    pub fn constant(spec: MdpSpec, value: f64) -> Result<Self> {
        Self::with_bound(Array3::from_elem(spec.sa_shape(), value), value.max(1.0))
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn spec_matches(&self, spec: &MdpSpec) -> Result<()> {
        spec.check_sa(self.values.shape(), "reward")
    }
}

/// Markov policy `pi_h(a|s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovPolicy {
    probs: Array3<f64>,
}

impl MarkovPolicy {
    pub fn new(probs: Array3<f64>) -> Result<Self> {
        let (hh, ss, _) = probs.dim();
        for h in 0..hh {
            for s in 0..ss {
                let row = probs.slice(s![h, s, ..]);
                let sum = row.sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL || row.iter().any(|&p| p < 0.0) {
                    return Err(Error::config(format!("policy row (h={h}, s={s}) is not a distribution (sum {sum})")));
                }
            }
        }
        Ok(MarkovPolicy { probs })
    }

    pub(crate) fn from_probs_unchecked(probs: Array3<f64>) -> Self {
        MarkovPolicy { probs }
    }

    pub fn uniform(spec: MdpSpec) -> Self {
        let p = 1.0 / spec.num_actions as f64;
        MarkovPolicy { probs: Array3::from_elem(spec.sa_shape(), p) }
    }

    /// Deterministic policy from an `[h][s]` table of action indices.
    pub fn deterministic(spec: MdpSpec, actions: &Array2<usize>) -> Result<Self> {
        if actions.dim() != (spec.horizon, spec.num_states) {
            return Err(Error::shape(format!("action table {:?} does not match spec", actions.dim())));
        }
        let mut probs = Array3::zeros(spec.sa_shape());
        for ((h, s), &a) in actions.indexed_iter() {
            if a >= spec.num_actions {
                return Err(Error::shape(format!("action {a} out of range at (h={h}, s={s})")));
            }
            probs[[h, s, a]] = 1.0;
        }
        Ok(MarkovPolicy { probs })
    }

    pub fn probs(&self) -> &Array3<f64> {
        &self.probs
    }

    pub fn horizon(&self) -> usize {
        self.probs.dim().0
    }

    pub fn action_probs(&self, h: usize, s: usize) -> ArrayView1<'_, f64> {
        self.probs.slice(s![h, s, ..])
    }

    /// Greedy action table when the policy is deterministic (argmax per row).
    pub fn greedy_actions(&self) -> Array2<usize> {
        let (hh, ss, _) = self.probs.dim();
        Array2::from_shape_fn((hh, ss), |(h, s)| argmax_lowest(self.probs.slice(s![h, s, ..])).0)
    }
}

/// Value tables; `v` is `[h][s]`, `q` is `[h][s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub v: Array2<f64>,
    pub q: Array3<f64>,
}

impl ValueTable {
    /// `E_{s ~ mu1}[V_1(s)]`
    pub fn initial_value(&self, initial: &Array1<f64>) -> f64 {
        self.v.row(0).dot(initial)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `s_1..s_{H+1}` (length H+1)
    pub states: Vec<usize>,
    /// `a_1..a_H` (length H)
    pub actions: Vec<usize>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn validate(&self, spec: &MdpSpec) -> Result<()> {
        if self.actions.len() != spec.horizon || self.states.len() != spec.horizon + 1 {
            return Err(Error::shape(format!(
                "trajectory has {} actions / {} states for horizon {}",
                self.actions.len(),
                self.states.len(),
                spec.horizon
            )));
        }
        if let Some(s) = self.states.iter().find(|&&s| s >= spec.num_states) {
            return Err(Error::shape(format!("trajectory state {s} out of range")));
        }
        if let Some(a) = self.actions.iter().find(|&&a| a >= spec.num_actions) {
            return Err(Error::shape(format!("trajectory action {a} out of range")));
        }
        Ok(())
    }
}

/// Index of the maximum, lowest index among entries within [`TIE_TOL`] of it,
/// together with the exact maximum.
pub(crate) fn argmax_lowest(row: ArrayView1<'_, f64>) -> (usize, f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let idx = row.iter().position(|&v| v >= max - TIE_TOL).unwrap_or(0);
    (idx, max)
}

fn check_policy(kernel: &TransitionKernel, policy: &MarkovPolicy) -> Result<()> {
    kernel.spec.check_sa(policy.probs.shape(), "policy")
}

/// Continuation `sum_{s'} P_h(s'|s,a) V_{h+1}(s')`, zero at the last step.
fn continuation(kernel: &TransitionKernel, v: &Array2<f64>, h: usize, s: usize, a: usize) -> f64 {
    if h + 1 == kernel.spec.horizon {
        0.0
    } else {
        kernel.row(h, s, a).dot(&v.row(h + 1))
    }
}

/// Backward-induction evaluation of `policy` under `kernel` and `reward`.
pub fn dp_policy_eval(kernel: &TransitionKernel, reward: &RewardFunction, policy: &MarkovPolicy) -> Result<ValueTable> {
    let spec = kernel.spec;
    reward.spec_matches(&spec)?;
    check_policy(kernel, policy)?;
    let mut v = Array2::zeros((spec.horizon, spec.num_states));
    let mut q = Array3::zeros(spec.sa_shape());
    for h in (0..spec.horizon).rev() {
        for s in 0..spec.num_states {
            let mut vs = 0.0;
            for a in 0..spec.num_actions {
                let qa = reward.values[[h, s, a]] + continuation(kernel, &v, h, s, a);
                q[[h, s, a]] = qa;
                vs += policy.probs[[h, s, a]] * qa;
            }
            v[[h, s]] = vs;
        }
    }
    Ok(ValueTable { v, q })
}

/// Bellman-optimal values and the deterministic greedy policy (lowest-index ties).
pub fn dp_optimal(kernel: &TransitionKernel, reward: &RewardFunction) -> Result<(ValueTable, MarkovPolicy)> {
    dp_optimal_values(kernel, reward.values()).map(|(table, actions)| {
        let policy = MarkovPolicy::deterministic(kernel.spec, &actions).expect("greedy actions are in range");
        (table, policy)
    })
}

/// [`dp_optimal`] on a raw reward array with no range restriction.
pub(crate) fn dp_optimal_values(kernel: &TransitionKernel, reward: &Array3<f64>) -> Result<(ValueTable, Array2<usize>)> {
    let spec = kernel.spec;
    spec.check_sa(reward.shape(), "reward")?;
    let mut v = Array2::zeros((spec.horizon, spec.num_states));
    let mut q = Array3::zeros(spec.sa_shape());
    let mut actions = Array2::zeros((spec.horizon, spec.num_states));
    for h in (0..spec.horizon).rev() {
        for s in 0..spec.num_states {
            for a in 0..spec.num_actions {
                q[[h, s, a]] = reward[[h, s, a]] + continuation(kernel, &v, h, s, a);
            }
            let (best, value) = argmax_lowest(q.slice(s![h, s, ..]));
            actions[[h, s]] = best;
            v[[h, s]] = value;
        }
    }
    Ok((ValueTable { v, q }, actions))
}

/// Roll out one episode with an explicit RNG.
pub fn rollout<R: Rng + ?Sized>(kernel: &TransitionKernel, policy: &MarkovPolicy, rng: &mut R) -> Trajectory {
    let spec = kernel.spec;
    let mut states = Vec::with_capacity(spec.horizon + 1);
    let mut actions = Vec::with_capacity(spec.horizon);
    let mut s = sample_index(kernel.initial.iter().copied(), rng);
    states.push(s);
    for h in 0..spec.horizon {
        let a = sample_index(policy.action_probs(h, s).iter().copied(), rng);
        let next = sample_index(kernel.row(h, s, a).iter().copied(), rng);
        actions.push(a);
        states.push(next);
        s = next;
    }
    Trajectory { states, actions }
}

/// Seeded episode: `s_1 ~ mu1`, `a_h ~ pi_h(.|s_h)`, `s_{h+1} ~ P_h(.|s_h,a_h)`.
pub fn sample_trajectory(kernel: &TransitionKernel, policy: &MarkovPolicy, seed: Seed) -> Result<Trajectory> {
    check_policy(kernel, policy)?;
    Ok(rollout(kernel, policy, &mut seed.rng()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelViolation {
    RowSum { h: usize, s: usize, a: usize, sum: f64 },
    Negative { h: usize, s: usize, a: usize, next: usize, value: f64 },
    InitialSum { sum: f64 },
    InitialNegative { s: usize, value: f64 },
}

impl std::fmt::Display for KernelViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelViolation::RowSum { h, s, a, sum } => write!(f, "row (h={h}, s={s}, a={a}) sums to {sum}"),
            KernelViolation::Negative { h, s, a, next, value } => {
                write!(f, "entry (h={h}, s={s}, a={a}, s'={next}) is negative ({value})")
            }
            KernelViolation::InitialSum { sum } => write!(f, "initial distribution sums to {sum}"),
            KernelViolation::InitialNegative { s, value } => write!(f, "initial entry {s} is negative ({value})"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub violations: Vec<KernelViolation>,
}

impl KernelReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Report every row whose sum is off by more than 1e-9 and every negative entry.
pub fn validate_kernel(probs: &Array4<f64>, initial: &Array1<f64>) -> KernelReport {
    validate_kernel_with_tol(probs, initial, REPORT_TOL)
}

fn validate_kernel_with_tol(probs: &Array4<f64>, initial: &Array1<f64>, tol: f64) -> KernelReport {
    let mut violations = Vec::new();
    let (hh, ss, aa, _) = probs.dim();
    for h in 0..hh {
        for s in 0..ss {
            for a in 0..aa {
                let row = probs.slice(s![h, s, a, ..]);
                for (next, &value) in row.iter().enumerate() {
                    if value < 0.0 {
                        violations.push(KernelViolation::Negative { h, s, a, next, value });
                    }
                }
                let sum = row.sum();
                if (sum - 1.0).abs() > tol {
                    violations.push(KernelViolation::RowSum { h, s, a, sum });
                }
            }
        }
    }
    for (s, &value) in initial.iter().enumerate() {
        if value < 0.0 {
            violations.push(KernelViolation::InitialNegative { s, value });
        }
    }
    let sum = initial.sum();
    if (sum - 1.0).abs() > tol {
        violations.push(KernelViolation::InitialSum { sum });
    }
    KernelReport { violations }
}

/// Random kernel with Dirichlet(1,...,1) rows (normalized unit exponentials) and uniform `mu1`.
pub fn random_kernel(spec: MdpSpec, seed: Seed) -> TransitionKernel {
    let mut rng = seed.rng();
    let s = spec.num_states;
    let mut probs = Array4::zeros(spec.sas_shape());
    if s == 1 {
        probs.fill(1.0);
    } else {
        for mut row in probs.rows_mut() {
            row.iter_mut().for_each(|v| *v = Exp1.sample(&mut rng));
            let total = row.sum();
            row.mapv_inplace(|v| v / total);
        }
    }
    let initial = Array1::from_elem(s, 1.0 / s as f64);
    TransitionKernel { spec, probs, initial }
}

/// Random reward with i.i.d. uniform `[0,1]` entries.
pub fn random_reward(spec: MdpSpec, seed: Seed) -> RewardFunction {
    let mut rng = seed.rng();
    let values = Array3::from_shape_simple_fn(spec.sa_shape(), || rng.random::<f64>());
    RewardFunction { values, bound: 1.0 }
}

/// A kernel with an optional reward: the exchange format for instances.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpInstance {
    pub kernel: TransitionKernel,
    pub reward: Option<RewardFunction>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MdpDocument {
    spec: MdpSpec,
    mu1: Vec<f64>,
    #[serde(rename = "P")]
    p: Nested4,
    #[serde(rename = "r", default, skip_serializing_if = "Option::is_none")]
    r: Option<Nested3>,
}

impl MdpInstance {
    pub fn spec(&self) -> MdpSpec {
        self.kernel.spec
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = MdpDocument {
            spec: self.kernel.spec,
            mu1: self.kernel.initial.to_vec(),
            p: tensor::to_nested4(&self.kernel.probs),
            r: self.reward.as_ref().map(|r| tensor::to_nested3(&r.values)),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        let spec = MdpSpec::new(doc.spec.num_states, doc.spec.num_actions, doc.spec.horizon)?;
        let probs = tensor::from_nested4(&doc.p, "P")?;
        if probs.dim() != spec.sas_shape() {
            return Err(Error::shape(format!("P has shape {:?}, spec says {:?}", probs.dim(), spec.sas_shape())));
        }
        let initial = tensor::from_nested1(&doc.mu1, spec.num_states, "mu1")?;
        let kernel = TransitionKernel::new(probs, initial)?;
        let reward = match doc.r {
            Some(r) => {
                let values = tensor::from_nested3(&r, "r")?;
                spec.check_sa(values.shape(), "r")?;
                let bound = values.iter().copied().fold(1.0, f64::max);
                Some(RewardFunction::with_bound(values, bound)?)
            }
            None => None,
        };
        Ok(MdpInstance { kernel, reward })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Reward file layout: nested `[h][s][a]` arrays.
pub fn reward_from_json(text: &str, spec: &MdpSpec) -> Result<RewardFunction> {
    let nested: Nested3 = serde_json::from_str(text)?;
    let values = tensor::from_nested3(&nested, "reward")?;
    spec.check_sa(values.shape(), "reward")?;
    RewardFunction::new(values)
}

pub fn reward_to_json(reward: &RewardFunction) -> Result<String> {
    Ok(serde_json::to_string(&tensor::to_nested3(reward.values()))?)
}
