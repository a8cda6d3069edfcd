//! Occupancy measures, the policy/occupancy bijection, divergences, the
//! log-barrier exploration objective and exact coverage diagnostics.

use ndarray::{s, Array1, Array3, Array4, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{dp_optimal_values, MarkovPolicy, MdpSpec, RewardFunction, TransitionKernel};
use crate::tensor::{self, Nested3, Nested4};

/// Residual tolerance for the normalization and flow constraints.
pub const OCCUPANCY_TOL: f64 = 1e-8;
/// Action-mass below which the induced policy row falls back to uniform.
pub const DEGENERATE_ROW: f64 = 1e-15;
/// Clamp for zero entries inside [`log_barrier`].
pub const LOG_CLAMP: f64 = 1e-300;

/// `mu_h(s,a)`: probability of visiting `(s,a)` at step `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    values: Array3<f64>,
}

/// `mu_h(s,a,s')`: occupancy of the augmented MDP whose actions are `(a, s')`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedOccupancy {
    values: Array4<f64>,
}

/// Constraint residuals of a measure checked against a kernel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OccupancyReport {
    /// max_h |sum_{s,a} mu_h(s,a) - 1|
    pub normalization: f64,
    /// max_{h,s'} |sum_{s,a} mu_h(s,a) P_h(s'|s,a) - sum_a mu_{h+1}(s',a)|
    pub flow: f64,
    /// max(0, -min entry)
    pub negativity: f64,
}

impl OccupancyReport {
    pub fn max_residual(&self) -> f64 {
        self.normalization.max(self.flow).max(self.negativity)
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.max_residual() <= tol
    }
}

impl OccupancyMeasure {
    pub fn new(values: Array3<f64>) -> Self {
        OccupancyMeasure { values }
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn spec_shape(&self) -> (usize, usize, usize) {
        self.values.dim()
    }

    /// Convex combination `alpha * self + (1 - alpha) * other`.
    pub fn mix(&self, other: &OccupancyMeasure, alpha: f64) -> Result<OccupancyMeasure> {
        if self.values.dim() != other.values.dim() {
            return Err(Error::shape("mixing occupancies of different shapes"));
        }
        Ok(OccupancyMeasure { values: &self.values * alpha + &other.values * (1.0 - alpha) })
    }

    /// Residuals of the normalization and flow-conservation constraints under `kernel`.
    pub fn validate(&self, kernel: &TransitionKernel) -> Result<OccupancyReport> {
        let spec = kernel.spec();
        spec.check_sa(self.values.shape(), "occupancy")?;
        let mut report = OccupancyReport {
            negativity: self.values.iter().fold(0.0_f64, |m, &v| m.max(-v)),
            ..Default::default()
        };
        for h in 0..spec.horizon {
            let total = self.values.slice(s![h, .., ..]).sum();
            report.normalization = report.normalization.max((total - 1.0).abs());
        }
        for h in 0..spec.horizon.saturating_sub(1) {
            let inflow = next_state_mass(kernel, &self.values, h);
            for next in 0..spec.num_states {
                let out = self.values.slice(s![h + 1, next, ..]).sum();
                report.flow = report.flow.max((inflow[next] - out).abs());
            }
        }
        Ok(report)
    }
}

/// `sum_{s,a} mu_h(s,a) P_h(s'|s,a)` as a vector over `s'`.
fn next_state_mass(kernel: &TransitionKernel, mu: &Array3<f64>, h: usize) -> Array1<f64> {
    let spec = kernel.spec();
    let mut mass = Array1::zeros(spec.num_states);
    for s in 0..spec.num_states {
        for a in 0..spec.num_actions {
            let w = mu[[h, s, a]];
            if w != 0.0 {
                mass.scaled_add(w, &kernel.row(h, s, a));
            }
        }
    }
    mass
}

impl AugmentedOccupancy {
    pub fn new(values: Array4<f64>) -> Self {
        AugmentedOccupancy { values }
    }

    /// Every entry `1 / (|S|^2 |A|)`.
    pub fn uniform(spec: MdpSpec) -> Self {
        let v = 1.0 / (spec.num_states * spec.num_states * spec.num_actions) as f64;
        AugmentedOccupancy { values: Array4::from_elem(spec.sas_shape(), v) }
    }

    /// Augmented occupancy of `policy` under `kernel`: `mu_h(s,a) P_h(s'|s,a)`.
    pub fn from_policy(kernel: &TransitionKernel, policy: &MarkovPolicy) -> Result<Self> {
        let mu = occupancy_from_policy(kernel, policy)?;
        let spec = kernel.spec();
        let values = Array4::from_shape_fn(spec.sas_shape(), |(h, s, a, next)| {
            mu.values[[h, s, a]] * kernel.probs()[[h, s, a, next]]
        });
        Ok(AugmentedOccupancy { values })
    }

    pub fn values(&self) -> &Array4<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array4<f64> {
        &mut self.values
    }

    pub fn spec(&self) -> Result<MdpSpec> {
        let (h, s, a, _) = self.values.dim();
        MdpSpec::new(s, a, h)
    }

    /// `sum_{s'} mu_h(s,a,s')`
    pub fn marginal(&self) -> OccupancyMeasure {
        OccupancyMeasure { values: self.values.sum_axis(ndarray::Axis(3)) }
    }

    /// The induced policy `pi_h(a|s) = sum_{s'} mu_h(s,a,s') / sum_{a',s'} mu_h(s,a',s')`.
    pub fn induced_policy(&self) -> MarkovPolicy {
        policy_from_occupancy(&self.marginal())
    }

    /// The induced kernel `P_h(s'|s,a) = mu_h(s,a,s') / sum_{s''} mu_h(s,a,s'')`;
    /// degenerate rows become uniform. The initial distribution is the step-1 state marginal.
    pub fn induced_kernel(&self) -> Result<TransitionKernel> {
        let (hh, ss, aa, _) = self.values.dim();
        let mut probs = self.values.clone();
        for h in 0..hh {
            for s in 0..ss {
                for a in 0..aa {
                    let mut row = probs.slice_mut(s![h, s, a, ..]);
                    let total = row.sum();
                    if total < DEGENERATE_ROW {
                        row.fill(1.0 / ss as f64);
                    } else {
                        row.mapv_inplace(|v| v / total);
                    }
                }
            }
        }
        let step1 = self.values.slice(s![0, .., .., ..]);
        let mut initial = Array1::from_shape_fn(ss, |s| step1.slice(s![s, .., ..]).sum());
        let total = initial.sum();
        if total < DEGENERATE_ROW {
            initial.fill(1.0 / ss as f64);
        } else {
            initial.mapv_inplace(|v| v / total);
        }
        TransitionKernel::new(probs, initial)
    }

    /// Reward lifted to the augmented space: `r_h(s,a,s') = r_h(s,a)`.
    pub fn inner_with_reward(&self, reward: &Array3<f64>) -> f64 {
        let marginal = self.values.sum_axis(ndarray::Axis(3));
        (&marginal * reward).sum()
    }
}

/// Forward recursion `mu_1(s,a) = mu1(s) pi_1(a|s)`,
/// `mu_{h+1}(s',a') = pi_{h+1}(a'|s') sum_{s,a} mu_h(s,a) P_h(s'|s,a)`.
pub fn occupancy_from_policy(kernel: &TransitionKernel, policy: &MarkovPolicy) -> Result<OccupancyMeasure> {
    let spec = kernel.spec();
    spec.check_sa(policy.probs().shape(), "policy")?;
    let mut values = Array3::zeros(spec.sa_shape());
    let mut state_mass = kernel.initial().clone();
    for h in 0..spec.horizon {
        for s in 0..spec.num_states {
            for a in 0..spec.num_actions {
                values[[h, s, a]] = state_mass[s] * policy.probs()[[h, s, a]];
            }
        }
        if h + 1 < spec.horizon {
            state_mass = next_state_mass(kernel, &values, h);
        }
    }
    Ok(OccupancyMeasure { values })
}

/// `pi_h(a|s) = mu_h(s,a) / sum_{a'} mu_h(s,a')`, uniform when the row mass is below 1e-15.
pub fn policy_from_occupancy(mu: &OccupancyMeasure) -> MarkovPolicy {
    let (hh, ss, aa) = mu.values.dim();
    let mut probs = mu.values.clone();
    for h in 0..hh {
        for s in 0..ss {
            let mut row = probs.slice_mut(s![h, s, ..]);
            let total = row.sum();
            if total < DEGENERATE_ROW {
                row.fill(1.0 / aa as f64);
            } else {
                row.mapv_inplace(|v| (v / total).max(0.0));
            }
        }
    }
    MarkovPolicy::from_probs_unchecked(probs)
}

/// `<mu, r> = sum_{h,s,a} mu_h(s,a) r_h(s,a)`
pub fn expected_return(mu: &OccupancyMeasure, reward: &RewardFunction) -> Result<f64> {
    if mu.values.dim() != reward.values().dim() {
        return Err(Error::shape("occupancy and reward shapes differ"));
    }
    Ok((&mu.values * reward.values()).sum())
}

/// Log-barrier objective `f(mu) = -sum ln mu_h(s,a)`, zero entries clamped at 1e-300.
pub fn log_barrier(mu: &OccupancyMeasure) -> f64 {
    -mu.values.iter().map(|&v| v.max(LOG_CLAMP).ln()).sum::<f64>()
}

/// `f(mu_T) - f(mu_star)`; nonnegative when `mu_star` minimizes the barrier.
pub fn log_barrier_gap(mu_t: &OccupancyMeasure, mu_star: &OccupancyMeasure) -> f64 {
    log_barrier(mu_t) - log_barrier(mu_star)
}

/// Triples whose reference occupancy strictly exceeds `threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceSet {
    pub members: ndarray::Array3<bool>,
    pub threshold: f64,
}

impl SignificanceSet {
    pub fn contains(&self, h: usize, s: usize, a: usize) -> bool {
        self.members[[h, s, a]]
    }

    pub fn len(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Membership iff `mu_ref_h(s,a) > omega` (strict).
pub fn significance_set(mu_ref: &OccupancyMeasure, omega: f64) -> Result<SignificanceSet> {
    if !(omega > 0.0) {
        return Err(Error::config(format!("significance threshold must be positive, got {omega}")));
    }
    Ok(SignificanceSet { members: mu_ref.values.mapv(|v| v > omega), threshold: omega })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageRatios {
    /// max_pi sum_{psi} mu^pi / mu_ref
    pub ratio_sig: f64,
    /// max_pi sum_{not psi} mu^pi
    pub mass_nonsig: f64,
}

/// Exact coverage maxima over all policies, computed by planning with the
/// rewards `1/mu_ref` on the significant set and indicators off it.
pub fn coverage_ratios(mu_ref: &OccupancyMeasure, omega: f64, kernel: &TransitionKernel) -> Result<CoverageRatios> {
    let spec = kernel.spec();
    spec.check_sa(mu_ref.values.shape(), "reference occupancy")?;
    let psi = significance_set(mu_ref, omega)?;
    let mut inverse = Array3::zeros(spec.sa_shape());
    let mut outside = Array3::zeros(spec.sa_shape());
    Zip::from(&mut inverse)
        .and(&mut outside)
        .and(&psi.members)
        .and(&mu_ref.values)
        .for_each(|inv, out, &member, &m| {
            if member {
                assert!(m > 0.0, "significant triples have positive reference occupancy");
                *inv = 1.0 / m;
            } else {
                *out = 1.0;
            }
        });
    let (sig, _) = dp_optimal_values(kernel, &inverse)?;
    let (non, _) = dp_optimal_values(kernel, &outside)?;
    Ok(CoverageRatios {
        ratio_sig: sig.initial_value(kernel.initial()),
        mass_nonsig: non.initial_value(kernel.initial()),
    })
}

/// Unnormalized KL divergence `sum mu ln(mu/mu') - sum mu + sum mu'`.
/// Returns `+inf` when `mu` is positive where `mu'` is zero.
pub fn kl_bregman(mu: &AugmentedOccupancy, other: &AugmentedOccupancy) -> Result<f64> {
    if mu.values.dim() != other.values.dim() {
        return Err(Error::shape("divergence between occupancies of different shapes"));
    }
    Ok(kl_slices(mu.values.as_slice_memory_order(), other.values.as_slice_memory_order()))
}

pub(crate) fn kl_slices(x: Option<&[f64]>, y: Option<&[f64]>) -> f64 {
    let (x, y) = (x.expect("contiguous"), y.expect("contiguous"));
    let mut total = 0.0;
    for (&p, &q) in x.iter().zip(y) {
        if p > 0.0 {
            if q <= 0.0 {
                return f64::INFINITY;
            }
            total += p * (p / q).ln() - p + q;
        } else {
            total += q;
        }
    }
    total
}

/// JSON layout shared with reward files, tagged by kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum OccupancyDocument {
    Plain(Nested3),
    Augmented(Nested4),
}

impl From<&OccupancyMeasure> for OccupancyDocument {
    fn from(mu: &OccupancyMeasure) -> Self {
        OccupancyDocument::Plain(tensor::to_nested3(&mu.values))
    }
}

impl From<&AugmentedOccupancy> for OccupancyDocument {
    fn from(mu: &AugmentedOccupancy) -> Self {
        OccupancyDocument::Augmented(tensor::to_nested4(&mu.values))
    }
}

impl OccupancyDocument {
    pub fn into_plain(self) -> Result<OccupancyMeasure> {
        match self {
            OccupancyDocument::Plain(v) => Ok(OccupancyMeasure::new(tensor::from_nested3(&v, "occupancy")?)),
            OccupancyDocument::Augmented(_) => Err(Error::shape("expected a plain occupancy, found augmented")),
        }
    }

    pub fn into_augmented(self) -> Result<AugmentedOccupancy> {
        match self {
            OccupancyDocument::Augmented(v) => Ok(AugmentedOccupancy::new(tensor::from_nested4(&v, "occupancy")?)),
            OccupancyDocument::Plain(_) => Err(Error::shape("expected an augmented occupancy, found plain")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{dp_policy_eval, random_kernel, random_reward};
    use crate::rng::Seed;
    use ndarray::array;

    fn chain(horizon: usize) -> TransitionKernel {
        let spec = MdpSpec::new(3, 2, horizon).unwrap();
        let mut p = Array4::zeros(spec.sas_shape());
        for h in 0..horizon {
            for s in 0..3 {
                p[[h, s, 0, (s + 1) % 3]] = 1.0;
                p[[h, s, 1, s]] = 1.0;
            }
        }
        TransitionKernel::new(p, array![1.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn deterministic_chain_gives_indicators() {
        let k = chain(4);
        let pi = MarkovPolicy::deterministic(k.spec(), &ndarray::Array2::zeros((4, 3))).unwrap();
        let mu = occupancy_from_policy(&k, &pi).unwrap();
        for h in 0..4 {
            assert_eq!(mu.values()[[h, h % 3, 0]], 1.0);
            assert_eq!(mu.values().slice(s![h, .., ..]).sum(), 1.0);
        }
    }

    #[test]
    fn symmetric_instance_gives_uniform_occupancy() {
        let spec = MdpSpec::new(2, 3, 3).unwrap();
        let mut p = Array4::zeros(spec.sas_shape());
        for h in 0..3 {
            for s in 0..2 {
                for a in 0..3 {
                    p[[h, s, a, s]] = 1.0;
                }
            }
        }
        let k = TransitionKernel::new(p, array![0.5, 0.5]).unwrap();
        let mu = occupancy_from_policy(&k, &MarkovPolicy::uniform(spec)).unwrap();
        assert!(mu.values().iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn return_matches_dp() {
        let k = random_kernel(MdpSpec::new(4, 3, 5).unwrap(), Seed(21));
        let r = random_reward(k.spec(), Seed(22));
        let pi = MarkovPolicy::uniform(k.spec());
        let mu = occupancy_from_policy(&k, &pi).unwrap();
        let dp = dp_policy_eval(&k, &r, &pi).unwrap().initial_value(k.initial());
        assert!((expected_return(&mu, &r).unwrap() - dp).abs() < 1e-10);
        assert!(mu.validate(&k).unwrap().is_valid(1e-10));
    }

    #[test]
    fn induced_policy_normalizes_and_handles_empty_rows() {
        let mu = OccupancyMeasure::new(array![[[0.2, 0.6], [0.0, 0.0]]]);
        let pi = policy_from_occupancy(&mu);
        assert!((pi.probs()[[0, 0, 0]] - 0.25).abs() < 1e-15);
        assert!((pi.probs()[[0, 0, 1]] - 0.75).abs() < 1e-15);
        assert_eq!(pi.action_probs(0, 1).to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn expected_return_of_constant_rewards() {
        let k = random_kernel(MdpSpec::new(3, 2, 4).unwrap(), Seed(5));
        let mu = occupancy_from_policy(&k, &MarkovPolicy::uniform(k.spec())).unwrap();
        assert!((expected_return(&mu, &RewardFunction::constant(k.spec(), 1.0).unwrap()).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(expected_return(&mu, &RewardFunction::zeros(k.spec())).unwrap(), 0.0);
    }

    #[test]
    fn log_barrier_closed_form_and_clamp() {
        let (s, a, h) = (3usize, 2usize, 4usize);
        let mu = OccupancyMeasure::new(Array3::from_elem((h, s, a), 1.0 / (s * a) as f64));
        let expected = (s * a * h) as f64 * ((s * a) as f64).ln();
        assert!((log_barrier(&mu) - expected).abs() < 1e-12);

        let mut v = Array3::from_elem((1, 2, 1), 0.5);
        v[[0, 0, 0]] = 0.0;
        let f = log_barrier(&OccupancyMeasure::new(v));
        assert!(f.is_finite());
        assert!((f - (-(1e-300_f64).ln() - 0.5_f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn coverage_on_deterministic_chain() {
        // a single action per state forces a single policy
        let spec = MdpSpec::new(3, 1, 3).unwrap();
        let mut p = Array4::zeros(spec.sas_shape());
        for h in 0..3 {
            for s in 0..3 {
                p[[h, s, 0, (s + 1) % 3]] = 1.0;
            }
        }
        let k1 = TransitionKernel::new(p, array![1.0, 0.0, 0.0]).unwrap();
        let mu = occupancy_from_policy(&k1, &MarkovPolicy::uniform(spec)).unwrap();
        let cov = coverage_ratios(&mu, 0.5, &k1).unwrap();
        assert!((cov.ratio_sig - 3.0).abs() < 1e-12);
        assert_eq!(cov.mass_nonsig, 0.0);

        let cov = coverage_ratios(&mu, 1.0, &k1).unwrap();
        assert_eq!(cov.ratio_sig, 0.0);
    }

    #[test]
    fn significance_rules() {
        let mu = OccupancyMeasure::new(array![[[0.25, 0.0], [0.75, 0.0]]]);
        let psi = significance_set(&mu, 1e-300).unwrap();
        assert_eq!(psi.len(), 2);
        assert!(significance_set(&mu, 1.0).unwrap().is_empty());
        // boundary value is excluded
        assert!(!significance_set(&mu, 0.25).unwrap().contains(0, 0, 0));
    }

    #[test]
    fn kl_identity_and_zero_reduction() {
        let k = random_kernel(MdpSpec::new(2, 2, 2).unwrap(), Seed(8));
        let mu = AugmentedOccupancy::from_policy(&k, &MarkovPolicy::uniform(k.spec())).unwrap();
        assert_eq!(kl_bregman(&mu, &mu).unwrap(), 0.0);
        let zero = AugmentedOccupancy::new(Array4::zeros(mu.values().dim()));
        assert!((kl_bregman(&zero, &mu).unwrap() - mu.values().sum()).abs() < 1e-15);
        assert_eq!(kl_bregman(&mu, &zero).unwrap(), f64::INFINITY);
    }

    #[test]
    fn document_kind_tag() {
        let mu = OccupancyMeasure::new(array![[[0.5, 0.5]]]);
        let text = serde_json::to_string(&OccupancyDocument::from(&mu)).unwrap();
        assert!(text.contains("\"kind\":\"plain\""));
        let back: OccupancyDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(back.into_plain().unwrap(), mu);
    }
}
