//! Pessimistic model-based planning with Bernstein penalties.

use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::confidence::{EmpiricalModel, VisitCounts};
use crate::error::{Error, Result};
use crate::mdp::{argmax_lowest, MarkovPolicy, RewardFunction, ValueTable};
use crate::tensor::{self, Nested2, Nested3};

/// `sum rho V^2 - (sum rho V)^2`, clamped at zero; `rho` may be sub-stochastic.
pub fn variance(rho: ArrayView1<'_, f64>, values: ArrayView1<'_, f64>) -> f64 {
    let mut first = 0.0;
    let mut second = 0.0;
    for (&p, &v) in rho.iter().zip(values.iter()) {
        first += p * v;
        second += p * v * v;
    }
    (second - first * first).max(0.0)
}

/// Which penalty to subtract, with its leading constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PenaltyKind {
    /// Known reward class of `class_size` rewards; its log enters the log factor.
    Rae { c_a: f64, class_size: usize },
    Rfe { c_f: f64 },
}

impl PenaltyKind {
    fn scale_and_log(&self, num_states: usize, log_factor: f64) -> (f64, f64) {
        match *self {
            PenaltyKind::Rae { c_a, class_size } => (c_a, log_factor + (class_size.max(1) as f64).ln()),
            PenaltyKind::Rfe { c_f } => (c_f * num_states as f64, log_factor),
        }
    }
}

/// `min{ sqrt(k l Var / n) + k H l / n, H }` with `k = c_a` (RAE) or `c_f |S|` (RFE);
/// `n = 0` gives `H`.
pub fn bernstein_penalty(
    kind: PenaltyKind,
    n: u64,
    p_row: ArrayView1<'_, f64>,
    v_next: ArrayView1<'_, f64>,
    log_factor: f64,
    horizon: usize,
) -> f64 {
    let h = horizon as f64;
    if n == 0 {
        return h;
    }
    let (k, l) = kind.scale_and_log(p_row.len(), log_factor);
    let n = n as f64;
    ((k * l * variance(p_row, v_next) / n).sqrt() + k * h * l / n).min(h)
}

/// Penalties, pessimistic values and the greedy policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PessimisticPlan {
    pub penalty: Array3<f64>,
    pub values: ValueTable,
    pub actions: Array2<usize>,
    pub policy: MarkovPolicy,
    pub kind: PenaltyKind,
    pub log_factor: f64,
}

/// Backward pass `Q_h = max{r_h + P̂_h V_{h+1} - b_h, 0}`, `V_h = max_a Q_h`,
/// greedy with the lowest-index tie-break. All-zero rows of `P̂` are used as is.
pub fn pessimistic_plan(
    reward: &RewardFunction,
    model: &EmpiricalModel,
    counts: &VisitCounts,
    kind: PenaltyKind,
) -> Result<PessimisticPlan> {
    plan_with(reward, model, counts, kind, false)
}

/// [`pessimistic_plan`] with every penalty forced to zero.
pub fn plan_without_penalty(reward: &RewardFunction, model: &EmpiricalModel, counts: &VisitCounts) -> Result<PessimisticPlan> {
    plan_with(reward, model, counts, PenaltyKind::Rfe { c_f: 0.0 }, true)
}

fn plan_with(
    reward: &RewardFunction,
    model: &EmpiricalModel,
    counts: &VisitCounts,
    kind: PenaltyKind,
    zero_penalty: bool,
) -> Result<PessimisticPlan> {
    let spec = model.spec();
    reward.spec_matches(&spec)?;
    if counts.pair().dim() != spec.sa_shape() {
        return Err(Error::shape("counts do not match the empirical model"));
    }
    if !(model.log_factor > 0.0) {
        return Err(Error::config("log factor must be positive"));
    }
    let (hh, ss, aa) = spec.sa_shape();
    let top = hh as f64;
    let mut penalty = Array3::zeros(spec.sa_shape());
    let mut v = Array2::zeros((hh, ss));
    let mut q = Array3::zeros(spec.sa_shape());
    let mut actions = Array2::zeros((hh, ss));
    let zeros = ndarray::Array1::zeros(ss);
    for h in (0..hh).rev() {
        let next = if h + 1 < hh { v.slice(s![h + 1, ..]).to_owned() } else { zeros.clone() };
        for s in 0..ss {
            for a in 0..aa {
                let row = model.kernel.slice(s![h, s, a, ..]);
                let b = if zero_penalty {
                    0.0
                } else {
                    bernstein_penalty(kind, counts.n(h, s, a), row, next.view(), model.log_factor, hh)
                };
                let raw = reward.values()[[h, s, a]] + row.dot(&next) - b;
                let value = raw.max(0.0);
                debug_assert!(value <= 1.0 + top + 1e-9);
                penalty[[h, s, a]] = b;
                q[[h, s, a]] = value;
            }
            let (best, value) = argmax_lowest(q.slice(s![h, s, ..]));
            actions[[h, s]] = best;
            v[[h, s]] = value;
        }
    }
    let bound = top * reward.bound();
    if q.iter().any(|&x| !(-1e-12..=bound + 1e-9).contains(&x)) {
        return Err(Error::config(format!("pessimistic Q left [0, {bound}]")));
    }
    let policy = MarkovPolicy::deterministic(spec, &actions)?;
    Ok(PessimisticPlan { penalty, values: ValueTable { v, q }, actions, policy, kind, log_factor: model.log_factor })
}

/// Serialized plan: `{b, Qhat, Vhat, pihat, kind, constants}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanArtifact {
    pub b: Nested3,
    #[serde(rename = "Qhat")]
    pub q: Nested3,
    #[serde(rename = "Vhat")]
    pub v: Nested2,
    pub pihat: Vec<Vec<usize>>,
    pub kind: PenaltyKind,
    pub constants: PlanConstants,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanConstants {
    pub log_factor: f64,
    pub horizon: usize,
}

impl PlanArtifact {
    pub fn new(plan: &PessimisticPlan) -> Self {
        PlanArtifact {
            b: tensor::to_nested3(&plan.penalty),
            q: tensor::to_nested3(&plan.values.q),
            v: tensor::to_nested2(&plan.values.v),
            pihat: plan.actions.outer_iter().map(|r| r.to_vec()).collect(),
            kind: plan.kind,
            constants: PlanConstants { log_factor: plan.log_factor, horizon: plan.actions.nrows() },
        }
    }

    pub fn policy(&self) -> Result<MarkovPolicy> {
        let q = tensor::from_nested3(&self.q, "Qhat")?;
        let (h, s, a) = q.dim();
        let spec = crate::mdp::MdpSpec::new(s, a, h)?;
        let rows: Vec<usize> = self.pihat.iter().flatten().copied().collect();
        let actions = Array2::from_shape_vec((h, s), rows).map_err(|e| Error::shape(format!("pihat: {e}")))?;
        MarkovPolicy::deterministic(spec, &actions)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn variance_closed_forms() {
        assert_eq!(variance(array![0.5, 0.5].view(), array![0.0, 2.0].view()), 1.0);
        assert_eq!(variance(array![0.3, 0.7].view(), array![4.0, 4.0].view()), 0.0);
    }

    #[test]
    fn penalty_values() {
        let row = array![0.5, 0.5];
        let flat = array![1.0, 1.0];
        let rae = PenaltyKind::Rae { c_a: 48.0, class_size: 1 };
        assert_eq!(bernstein_penalty(rae, 0, row.view(), flat.view(), 1.0, 5), 5.0);
        assert_eq!(bernstein_penalty(rae, 10, row.view(), flat.view(), 1.0, 5), 5.0);
        let small = PenaltyKind::Rae { c_a: 1.0, class_size: 1 };
        assert!((bernstein_penalty(small, 10, row.view(), flat.view(), 1.0, 5) - 0.5).abs() < 1e-15);
        let rfe = PenaltyKind::Rfe { c_f: 1.0 };
        let spread = array![0.0, 3.0];
        assert!(
            bernstein_penalty(rfe, 40, row.view(), spread.view(), 1.0, 5)
                >= bernstein_penalty(small, 40, row.view(), spread.view(), 1.0, 5)
        );
    }
}
