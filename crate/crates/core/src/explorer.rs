//! Exploration-policy creation: drive the online learner with count-inverse
//! rewards `1 / (c + N)` and return the uniform mixture of the played policies.

use std::path::Path;

use ndarray::{Array3, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::confidence::{CountsDocument, VisitCounts};
use crate::error::{Error, Result};
use crate::mdp::{MarkovPolicy, MdpSpec, TransitionKernel};
use crate::occupancy::{occupancy_from_policy, policy_from_occupancy, OccupancyMeasure};
use crate::omd::{regret_diagnostic, ucoreps_run, OnlineConfig, StepRecord};
use crate::rng::Seed;
use crate::tensor::{self, Nested3};

pub use crate::occupancy::significance_set;

/// Largest theory-profile episode count accepted before asking for the practical profile.
pub const THEORY_EPISODE_CAP: f64 = 1e7;
/// Default clamp on practical-profile episode counts.
pub const PRACTICAL_EPISODE_CLAMP: usize = 2000;

/// Which constant schedule to use.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Theory,
    #[default]
    Practical,
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Profile::Theory => "theory",
            Profile::Practical => "practical",
        })
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theory" => Ok(Profile::Theory),
            "practical" => Ok(Profile::Practical),
            other => Err(Error::config(format!("unknown profile {other:?}; expected theory or practical"))),
        }
    }
}

/// Multipliers applied to `c`, `omega` and `T` in the practical profile.
///
/// Unset multipliers default to `1/(H l0)`, `l0^2` and `1/(|S| H^2 l0)`, so that
/// `c = 4 |S| H` and `omega = eps / (885 |S||A| H^2)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PracticalConstants {
    pub c_mult: Option<f64>,
    pub omega_mult: Option<f64>,
    pub t_mult: Option<f64>,
    /// Clamp on the formula's episode count; `None` means [`PRACTICAL_EPISODE_CLAMP`].
    pub max_episodes: Option<usize>,
    /// Exact episode count, bypassing formula and clamp.
    pub episodes: Option<usize>,
}

/// Every constant of the exploration phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationConfig {
    pub profile: Profile,
    pub log_factor: f64,
    pub c: f64,
    pub omega: f64,
    /// Episodes actually run.
    pub episodes: usize,
    /// `mult * 2c / omega` before rounding and clamping.
    pub formula_episodes: f64,
    /// `B = 1/c`
    pub reward_bound: f64,
    /// `G = 4 |S||A| H ln T`
    pub reward_budget: f64,
    /// `(c, omega, T)` multipliers; all one in the theory profile.
    pub multipliers: [f64; 3],
}

impl ExplorationConfig {
    /// Same schedule with a fixed episode count (and the budget recomputed for it).
    pub fn with_episodes(&self, spec: &MdpSpec, episodes: usize) -> Result<Self> {
        if episodes == 0 {
            return Err(Error::config("exploration needs at least one episode"));
        }
        Ok(ExplorationConfig { episodes, reward_budget: reward_budget(spec, episodes), ..self.clone() })
    }
}

/// `4 |S||A| H ln T`, with `T` floored at 2 so the budget stays positive.
pub fn reward_budget(spec: &MdpSpec, episodes: usize) -> f64 {
    4.0 * spec.sah() as f64 * (episodes.max(2) as f64).ln()
}

pub fn exploration_constants(spec: &MdpSpec, epsilon: f64, delta: f64, profile: Profile) -> Result<ExplorationConfig> {
    exploration_constants_with(spec, epsilon, delta, profile, &PracticalConstants::default())
}

pub fn exploration_constants_with(
    spec: &MdpSpec,
    epsilon: f64,
    delta: f64,
    profile: Profile,
    practical: &PracticalConstants,
) -> Result<ExplorationConfig> {
    let l0 = crate::confidence::log_factor(spec, delta, epsilon)?;
    if !(l0 > 0.0) {
        return Err(Error::config(format!(
            "log factor ln(|S||A|H/(delta eps)) = {l0} must be positive; lower delta or epsilon"
        )));
    }
    let (s, a, h) = (spec.num_states as f64, spec.num_actions as f64, spec.horizon as f64);
    let multipliers = match profile {
        Profile::Theory => [1.0, 1.0, 1.0],
        Profile::Practical => [
            practical.c_mult.unwrap_or(1.0 / (h * l0)),
            practical.omega_mult.unwrap_or(l0 * l0),
            practical.t_mult.unwrap_or(1.0 / (s * h * h * l0)),
        ],
    };
    if multipliers.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
        return Err(Error::config(format!("practical multipliers must be positive, got {multipliers:?}")));
    }
    let c = multipliers[0] * 4.0 * s * h * h * l0;
    let omega = multipliers[1] * epsilon / (885.0 * s * a * h * h * l0 * l0);
    let formula_episodes = multipliers[2] * 2.0 * c / omega;
    let episodes = match profile {
        Profile::Theory => {
            if !(formula_episodes.ceil() <= THEORY_EPISODE_CAP) {
                return Err(Error::CapExceeded(format!(
                    "theory profile needs T = {:.3e} episodes (cap {:.0e}); use the practical profile",
                    formula_episodes.ceil(),
                    THEORY_EPISODE_CAP
                )));
            }
            formula_episodes.ceil() as usize
        }
        Profile::Practical => match practical.episodes {
            Some(t) => t,
            None => {
                let clamp = practical.max_episodes.unwrap_or(PRACTICAL_EPISODE_CLAMP) as f64;
                formula_episodes.ceil().min(clamp).max(1.0) as usize
            }
        },
    };
    if episodes == 0 {
        return Err(Error::config("exploration needs at least one episode"));
    }
    Ok(ExplorationConfig {
        profile,
        log_factor: l0,
        c,
        omega,
        episodes,
        formula_episodes,
        reward_bound: 1.0 / c,
        reward_budget: reward_budget(spec, episodes),
        multipliers,
    })
}

/// `lambda_h(s,a) = 1 / (c + N_h(s,a))`.
pub fn lambda_rewards(counts: &VisitCounts, c: f64) -> Array3<f64> {
    counts.pair().mapv(|n| 1.0 / (c + n as f64))
}

/// Uniform mixture over Markov policies: each episode draws one component.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePolicy {
    components: Vec<MarkovPolicy>,
}

impl MixturePolicy {
    pub fn new(components: Vec<MarkovPolicy>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::config("a mixture needs at least one component"));
        };
        let shape = first.probs().dim();
        if components.iter().any(|p| p.probs().dim() != shape) {
            return Err(Error::shape("mixture components differ in shape"));
        }
        Ok(MixturePolicy { components })
    }

    pub fn components(&self) -> &[MarkovPolicy] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.components.len() as f64
    }

    pub fn spec(&self) -> MdpSpec {
        let (h, s, a) = self.components[0].probs().dim();
        MdpSpec { num_states: s, num_actions: a, horizon: h }
    }

    pub fn sample_component<R: Rng + ?Sized>(&self, rng: &mut R) -> &MarkovPolicy {
        &self.components[rng.random_range(0..self.components.len())]
    }

    /// SHA-256 over the little-endian bytes of every component, hex encoded.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.components {
            for v in p.probs() {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    /// Markov policy with the mixture's occupancy under `kernel`.
    pub fn to_markov(&self, kernel: &TransitionKernel) -> Result<MarkovPolicy> {
        Ok(policy_from_occupancy(&mixture_occupancy(self, kernel)?))
    }
}

/// `(1/T) sum_t mu^{pi^t}`
pub fn mixture_occupancy(mixture: &MixturePolicy, kernel: &TransitionKernel) -> Result<OccupancyMeasure> {
    let mut total = Array3::zeros(kernel.spec().sa_shape());
    for p in mixture.components() {
        total += occupancy_from_policy(kernel, p)?.values();
    }
    Ok(OccupancyMeasure::new(total / mixture.len() as f64))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplorationDiagnostics {
    pub episodes: usize,
    /// `sum_t <lambda^t, mu^{pi^t}>` with true occupancies
    pub learner_reward: f64,
    /// `sum_t <lambda^t, mu^t>` with the optimistic iterates
    pub optimistic_reward: f64,
    /// `4 |S||A| H ln T`
    pub reward_bound: f64,
    /// Regret of the played policies against the best fixed policy, under the true kernel.
    pub regret: f64,
    pub max_constraint_residual: f64,
    pub eta: f64,
}

#[derive(Debug, Clone)]
pub struct Exploration {
    pub config: ExplorationConfig,
    pub mixture: MixturePolicy,
    pub counts: VisitCounts,
    pub diagnostics: ExplorationDiagnostics,
    pub steps: Vec<StepRecord>,
}

pub fn create_exploration_policy(env: &TransitionKernel, config: &ExplorationConfig, seed: Seed) -> Result<Exploration> {
    explore(env, config, seed, false)
}

/// [`create_exploration_policy`] that also records the running regret per episode.
pub fn create_exploration_policy_traced(env: &TransitionKernel, config: &ExplorationConfig, seed: Seed) -> Result<Exploration> {
    explore(env, config, seed, true)
}

fn explore(env: &TransitionKernel, config: &ExplorationConfig, seed: Seed, track_regret: bool) -> Result<Exploration> {
    let c = config.c;
    let mut stream = |_t: usize, counts: &VisitCounts| Ok(lambda_rewards(counts, c));
    let online = OnlineConfig {
        episodes: config.episodes,
        reward_bound: config.reward_bound,
        reward_budget: config.reward_budget,
        log_factor: config.log_factor,
        track_regret,
    };
    let run = ucoreps_run(env, &mut stream, &online, seed)?;

    let truth: Vec<OccupancyMeasure> =
        run.policies.iter().map(|p| occupancy_from_policy(env, p)).collect::<Result<_>>()?;
    let learner_reward = truth.iter().zip(&run.rewards).map(|(mu, r)| (mu.values() * r).sum()).sum();
    let optimistic_reward = run.occupancies.iter().zip(&run.rewards).map(|(mu, r)| mu.inner_with_reward(r)).sum();
    let regret = regret_diagnostic(&run.rewards, &truth, env)?;
    let diagnostics = ExplorationDiagnostics {
        episodes: config.episodes,
        learner_reward,
        optimistic_reward,
        reward_bound: config.reward_budget,
        regret,
        max_constraint_residual: run.steps.iter().map(|s| s.constraint_residual).fold(0.0, f64::max),
        eta: run.eta,
    };
    Ok(Exploration {
        config: config.clone(),
        mixture: MixturePolicy::new(run.policies)?,
        counts: run.counts,
        diagnostics,
        steps: run.steps,
    })
}

/// Policies stored as the first table plus `(flat index, new value)` changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaPolicies {
    pub first: Nested3,
    pub deltas: Vec<Vec<(usize, f64)>>,
}

impl DeltaPolicies {
    pub fn encode(mixture: &MixturePolicy) -> Self {
        let comps = mixture.components();
        let deltas = comps
            .windows(2)
            .map(|w| {
                w[0].probs()
                    .iter()
                    .zip(w[1].probs().iter())
                    .enumerate()
                    .filter(|(_, (a, b))| a.to_bits() != b.to_bits())
                    .map(|(i, (_, &b))| (i, b))
                    .collect()
            })
            .collect();
        DeltaPolicies { first: tensor::to_nested3(comps[0].probs()), deltas }
    }

    pub fn decode(&self) -> Result<MixturePolicy> {
        let first = tensor::from_nested3(&self.first, "policies.first")?;
        let mut current = first.clone();
        let mut out = vec![MarkovPolicy::new(first)?];
        for (t, delta) in self.deltas.iter().enumerate() {
            let flat = current.as_slice_mut().expect("standard layout");
            for &(i, v) in delta {
                *flat.get_mut(i).ok_or_else(|| Error::shape(format!("policy delta {t} index {i} out of range")))? = v;
            }
            out.push(MarkovPolicy::new(current.clone())?);
        }
        MixturePolicy::new(out)
    }
}

/// Serialized output of the exploration phase.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplorationArtifact {
    pub config: ExplorationConfig,
    pub policies: DeltaPolicies,
    pub counts: CountsDocument,
    pub diagnostics: ExplorationDiagnostics,
}

impl ExplorationArtifact {
    pub fn new(exploration: &Exploration) -> Self {
        ExplorationArtifact {
            config: exploration.config.clone(),
            policies: DeltaPolicies::encode(&exploration.mixture),
            counts: (&exploration.counts).into(),
            diagnostics: exploration.diagnostics.clone(),
        }
    }

    pub fn mixture(&self) -> Result<MixturePolicy> {
        self.policies.decode()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Whether every component of `mixture` matches the same shape as `kernel`.
pub(crate) fn check_mixture(mixture: &MixturePolicy, kernel: &TransitionKernel) -> Result<()> {
    let spec = kernel.spec();
    if mixture.spec() != spec {
        return Err(Error::shape(format!("mixture is for {:?}, kernel is {:?}", mixture.spec(), spec)));
    }
    Ok(())
}

/// Elementwise check that `lambda` never increases between two count snapshots.
pub fn lambda_nonincreasing(before: &VisitCounts, after: &VisitCounts, c: f64) -> bool {
    Zip::from(&lambda_rewards(before, c)).and(&lambda_rewards(after, c)).all(|&a, &b| b <= a)
}
