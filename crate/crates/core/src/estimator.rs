//! Dataset collection with the exploration mixture, the empirical model built
//! from it, and the sample-budget formulas.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::{EmpiricalModel, VisitCounts};
use crate::error::{Error, Result};
use crate::explorer::{check_mixture, MixturePolicy, Profile};
use crate::mdp::{rollout, MarkovPolicy, MdpSpec, Trajectory, TransitionKernel};
use crate::rng::Seed;

/// Trajectories collected by one run, with the seed and the policy that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub seed: Seed,
    pub policy_hash: String,
    pub spec: MdpSpec,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    seed: Seed,
    #[serde(rename = "N")]
    n: usize,
    policy_hash: String,
    spec: MdpSpec,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn counts(&self) -> Result<VisitCounts> {
        let mut counts = VisitCounts::new(self.spec);
        for t in &self.trajectories {
            counts.update(t)?;
        }
        Ok(counts)
    }

    /// One header line, then one trajectory per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        let header =
            DatasetHeader { seed: self.seed, n: self.len(), policy_hash: self.policy_hash.clone(), spec: self.spec };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for t in &self.trajectories {
            serde_json::to_writer(&mut out, t)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header: DatasetHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line?)?,
            None => return Err(Error::config("dataset file is empty")),
        };
        let mut trajectories = Vec::with_capacity(header.n);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Trajectory = serde_json::from_str(&line)?;
            t.validate(&header.spec)?;
            trajectories.push(t);
        }
        if trajectories.len() != header.n {
            return Err(Error::config(format!(
                "dataset header says N = {} but {} trajectories follow",
                header.n,
                trajectories.len()
            )));
        }
        Ok(Dataset { seed: header.seed, policy_hash: header.policy_hash, spec: header.spec, trajectories })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_jsonl(BufReader::new(std::fs::File::open(path)?))
    }
}

/// Dataset, counts and empirical model of one collection run.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub dataset: Dataset,
    pub model: EmpiricalModel,
    pub counts: VisitCounts,
}

/// Play `mixture` for `episodes` episodes; each episode draws its own component.
///
/// Episode `i` uses substream `i` of `seed`, so the first `k` episodes of a
/// larger dataset equal a dataset of size `k`.
pub fn estimate_dynamics(
    env: &TransitionKernel,
    mixture: &MixturePolicy,
    episodes: usize,
    seed: Seed,
    log_factor: f64,
) -> Result<Estimate> {
    check_mixture(mixture, env)?;
    collect(env, episodes, seed, log_factor, mixture.hash(), |i| {
        let mut rng = seed.substream(i as u64);
        let policy = mixture.sample_component(&mut rng);
        rollout(env, policy, &mut rng)
    })
}

/// Same outputs as [`estimate_dynamics`] with the uniform policy playing every episode.
pub fn baseline_uniform(env: &TransitionKernel, episodes: usize, seed: Seed, log_factor: f64) -> Result<Estimate> {
    let uniform = MarkovPolicy::uniform(env.spec());
    let hash = MixturePolicy::new(vec![uniform.clone()])?.hash();
    collect(env, episodes, seed, log_factor, hash, |i| rollout(env, &uniform, &mut seed.substream(i as u64)))
}

fn collect<F>(env: &TransitionKernel, episodes: usize, seed: Seed, log_factor: f64, policy_hash: String, episode: F) -> Result<Estimate>
where
    F: Fn(usize) -> Trajectory + Sync + Send,
{
    if episodes == 0 {
        return Err(Error::config("dataset size N must be at least 1"));
    }
    let trajectories: Vec<Trajectory> = (0..episodes).into_par_iter().map(episode).collect();
    let dataset = Dataset { seed, policy_hash, spec: env.spec(), trajectories };
    let counts = dataset.counts()?;
    let model = EmpiricalModel::from_counts(&counts, log_factor)?;
    Ok(Estimate { dataset, model, counts })
}

/// Reward-agnostic (known reward class) or reward-free (any reward).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Rae,
    Rfe,
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Setting::Rae => "rae",
            Setting::Rfe => "rfe",
        })
    }
}

/// Penalty constant of the theory profile: 48 for RAE, 64 for RFE.
pub fn theory_penalty_constant(setting: Setting) -> f64 {
    match setting {
        Setting::Rae => 48.0,
        Setting::Rfe => 64.0,
    }
}

/// Real-valued budget before the ceiling.
///
/// Theory: `81 * 9440 * 48 |S||A|H^3 l0^3 / eps^2` (RAE) and
/// `81 * 28320 * 64 |S|^2|A|H^3 l0^3 / eps^2` (RFE).
/// Practical: `k |S||A|H^3 l0 / eps^2` and `k |S|^2|A|H^3 l0 / eps^2`.
pub fn sample_budget_real(setting: Setting, spec: &MdpSpec, epsilon: f64, delta: f64, profile: Profile, leading: f64) -> Result<f64> {
    let l0 = crate::confidence::log_factor(spec, delta, epsilon)?;
    if !(leading > 0.0) {
        return Err(Error::config(format!("leading constant must be positive, got {leading}")));
    }
    let (s, a, h) = (spec.num_states as f64, spec.num_actions as f64, spec.horizon as f64);
    let states = match setting {
        Setting::Rae => s,
        Setting::Rfe => s * s,
    };
    // Evaluated in the order of the closed form: exact integer coefficient, log power, then eps^2.
    let size = states * a * h.powi(3);
    Ok(match profile {
        Profile::Theory => {
            let lead = match setting {
                Setting::Rae => 81.0 * 9440.0 * 48.0,
                Setting::Rfe => 81.0 * 28320.0 * 64.0,
            };
            lead * size * l0.powi(3) / (epsilon * epsilon)
        }
        Profile::Practical => leading * size * l0 / (epsilon * epsilon),
    })
}

/// `ceil` of [`sample_budget_real`]; errors when the count does not fit in a `u64`.
pub fn sample_budget(setting: Setting, spec: &MdpSpec, epsilon: f64, delta: f64, profile: Profile, leading: f64) -> Result<u64> {
    let n = sample_budget_real(setting, spec, epsilon, delta, profile, leading)?.ceil();
    if !(n <= u64::MAX as f64) {
        return Err(Error::CapExceeded(format!("sample budget {n:.3e} does not fit in a 64-bit count")));
    }
    Ok(n as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::MdpSpec;

    #[test]
    fn budget_laws() {
        let spec = MdpSpec::new(2, 2, 2).unwrap();
        let rae = sample_budget_real(Setting::Rae, &spec, 0.5, 0.1, Profile::Theory, 1.0).unwrap();
        let half = sample_budget_real(Setting::Rae, &spec, 0.25, 0.1, Profile::Theory, 1.0).unwrap();
        let l0 = (8.0_f64 / 0.05).ln();
        let l0_half = (8.0_f64 / 0.025).ln();
        assert!((half / rae - 4.0 * (l0_half / l0).powi(3)).abs() < 1e-12);
        let direct = 81.0 * 9440.0 * 48.0 * 2.0 * 2.0 * 8.0 * l0.powi(3) / 0.25;
        assert!((rae - direct).abs() <= 1e-9 * direct);
    }

    #[test]
    fn overflow_is_reported() {
        let spec = MdpSpec::new(1000, 1000, 1000).unwrap();
        let err = sample_budget(Setting::Rfe, &spec, 1e-6, 1e-3, Profile::Theory, 1.0).unwrap_err();
        assert!(matches!(err, Error::CapExceeded(_)));
    }
}
