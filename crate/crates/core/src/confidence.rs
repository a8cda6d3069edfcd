//! Visit counts, the empirical kernel and Bernstein confidence radii.

use ndarray::{s, Array3, Array4, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{MdpSpec, TransitionKernel, Trajectory};
use crate::tensor::{self, Nested4};

/// `n_h(s,a)` and `n_h(s,a,s')` accumulated over episodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitCounts {
    pair: Array3<u64>,
    triple: Array4<u64>,
}

impl VisitCounts {
    pub fn new(spec: MdpSpec) -> Self {
        VisitCounts { pair: Array3::zeros(spec.sa_shape()), triple: Array4::zeros(spec.sas_shape()) }
    }

    pub fn spec(&self) -> MdpSpec {
        let (h, s, a) = self.pair.dim();
        MdpSpec { num_states: s, num_actions: a, horizon: h }
    }

    pub fn pair(&self) -> &Array3<u64> {
        &self.pair
    }

    pub fn triple(&self) -> &Array4<u64> {
        &self.triple
    }

    pub fn n(&self, h: usize, s: usize, a: usize) -> u64 {
        self.pair[[h, s, a]]
    }

    /// Add one episode: exactly H pair increments and H triple increments.
    pub fn update(&mut self, trajectory: &Trajectory) -> Result<()> {
        trajectory.validate(&self.spec())?;
        for (h, &a) in trajectory.actions.iter().enumerate() {
            let (s, next) = (trajectory.states[h], trajectory.states[h + 1]);
            self.pair[[h, s, a]] += 1;
            self.triple[[h, s, a, next]] += 1;
        }
        Ok(())
    }

    /// Functional form of [`VisitCounts::update`].
    pub fn with_trajectory(&self, trajectory: &Trajectory) -> Result<Self> {
        let mut next = self.clone();
        next.update(trajectory)?;
        Ok(next)
    }

    /// Merge counts from a disjoint batch of episodes.
    pub fn absorb(&mut self, other: &VisitCounts) -> Result<()> {
        if self.pair.dim() != other.pair.dim() {
            return Err(Error::shape("merging counts of different shapes"));
        }
        self.pair += &other.pair;
        self.triple += &other.triple;
        Ok(())
    }

    pub fn total_episodes_at(&self, h: usize) -> u64 {
        self.pair.slice(s![h, .., ..]).sum()
    }
}

pub fn update_counts(counts: &VisitCounts, trajectory: &Trajectory) -> Result<VisitCounts> {
    counts.with_trajectory(trajectory)
}

/// `P̂_h(s'|s,a) = N_h(s,a,s') / max{1, N_h(s,a)}`; unvisited rows stay all-zero.
pub fn empirical_kernel(counts: &VisitCounts) -> Array4<f64> {
    let mut p = Array4::zeros(counts.triple.dim());
    Zip::indexed(&mut p).for_each(|(h, s, a, next), v| {
        let n = counts.pair[[h, s, a]].max(1) as f64;
        *v = counts.triple[[h, s, a, next]] as f64 / n;
    });
    p
}

/// `eps_h(s'|s,a) = 2 sqrt(P̂ l0 / max{N,1}) + 14 l0 / (3 max{N,1})`.
pub fn bernstein_radius(p_hat: &Array4<f64>, counts: &VisitCounts, log_factor: f64) -> Result<Array4<f64>> {
    if !(log_factor > 0.0) {
        return Err(Error::config(format!("log factor must be positive, got {log_factor}")));
    }
    if p_hat.dim() != counts.triple.dim() {
        return Err(Error::shape("empirical kernel and counts differ in shape"));
    }
    let mut eps = Array4::zeros(p_hat.dim());
    Zip::indexed(&mut eps).and(p_hat).for_each(|(h, s, a, _), e, &p| {
        let n = counts.pair[[h, s, a]].max(1) as f64;
        *e = radius_value(p, n, log_factor);
    });
    Ok(eps)
}

pub(crate) fn radius_value(p_hat: f64, n: f64, log_factor: f64) -> f64 {
    2.0 * (p_hat * log_factor / n).sqrt() + 14.0 * log_factor / (3.0 * n)
}

/// `l0 = ln(|S||A|H / (delta eps))`.
pub fn log_factor(spec: &MdpSpec, delta: f64, epsilon: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::config(format!("delta must lie in (0,1), got {delta}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::config(format!("epsilon must be positive, got {epsilon}")));
    }
    let arg = spec.sah() as f64 / (delta * epsilon);
    if !(arg > 0.0) || !arg.is_finite() {
        return Err(Error::config(format!("log factor argument {arg} is not positive")));
    }
    Ok(arg.ln())
}

/// Empirical kernel, its confidence radii and the log factor they were built with.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalModel {
    pub kernel: Array4<f64>,
    pub radius: Array4<f64>,
    pub log_factor: f64,
}

impl EmpiricalModel {
    pub fn from_counts(counts: &VisitCounts, log_factor: f64) -> Result<Self> {
        let kernel = empirical_kernel(counts);
        let radius = bernstein_radius(&kernel, counts, log_factor)?;
        Ok(EmpiricalModel { kernel, radius, log_factor })
    }

    pub fn spec(&self) -> MdpSpec {
        let (h, s, a, _) = self.kernel.dim();
        MdpSpec { num_states: s, num_actions: a, horizon: h }
    }

    /// Whether `truth` lies inside the band `|P - P̂| <= eps` elementwise.
    pub fn contains(&self, truth: &TransitionKernel) -> bool {
        self.band_violations(truth) == 0
    }

    pub fn band_violations(&self, truth: &TransitionKernel) -> usize {
        let mut count = 0;
        Zip::from(truth.probs()).and(&self.kernel).and(&self.radius).for_each(|&p, &q, &e| {
            if (p - q).abs() > e {
                count += 1;
            }
        });
        count
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CountsDocument {
    pub pair: Vec<Vec<Vec<u64>>>,
    pub triple: Vec<Vec<Vec<Vec<u64>>>>,
}

impl From<&VisitCounts> for CountsDocument {
    fn from(c: &VisitCounts) -> Self {
        CountsDocument {
            pair: c.pair.outer_iter().map(|m| m.outer_iter().map(|r| r.to_vec()).collect()).collect(),
            triple: c
                .triple
                .outer_iter()
                .map(|t| t.outer_iter().map(|m| m.outer_iter().map(|r| r.to_vec()).collect()).collect())
                .collect(),
        }
    }
}

impl CountsDocument {
    pub fn into_counts(self, spec: MdpSpec) -> Result<VisitCounts> {
        let mut counts = VisitCounts::new(spec);
        let bad = || Error::shape("counts document does not match the MDP spec");
        if self.pair.len() != spec.horizon || self.triple.len() != spec.horizon {
            return Err(bad());
        }
        for (h, m) in self.pair.iter().enumerate() {
            for (s, r) in m.iter().enumerate() {
                for (a, &v) in r.iter().enumerate() {
                    *counts.pair.get_mut([h, s, a]).ok_or_else(bad)? = v;
                }
            }
        }
        for (h, t) in self.triple.iter().enumerate() {
            for (s, m) in t.iter().enumerate() {
                for (a, r) in m.iter().enumerate() {
                    for (next, &v) in r.iter().enumerate() {
                        *counts.triple.get_mut([h, s, a, next]).ok_or_else(bad)? = v;
                    }
                }
            }
        }
        let consistent = Zip::from(&counts.pair)
            .and(counts.triple.lanes(ndarray::Axis(3)))
            .all(|&n, row| row.sum() == n);
        if !consistent {
            return Err(Error::config("triple counts do not sum to pair counts"));
        }
        Ok(counts)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub log_factor: f64,
    #[serde(rename = "P_hat")]
    pub kernel: Nested4,
    pub radius: Nested4,
    pub counts: CountsDocument,
}

impl ModelDocument {
    pub fn new(model: &EmpiricalModel, counts: &VisitCounts) -> Self {
        ModelDocument {
            log_factor: model.log_factor,
            kernel: tensor::to_nested4(&model.kernel),
            radius: tensor::to_nested4(&model.radius),
            counts: counts.into(),
        }
    }

    pub fn into_parts(self) -> Result<(EmpiricalModel, VisitCounts)> {
        let kernel = tensor::from_nested4(&self.kernel, "P_hat")?;
        let radius = tensor::from_nested4(&self.radius, "radius")?;
        let (h, s, a, _) = kernel.dim();
        let counts = self.counts.into_counts(MdpSpec::new(s, a, h)?)?;
        Ok((EmpiricalModel { kernel, radius, log_factor: self.log_factor }, counts))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(states: &[usize], actions: &[usize]) -> Trajectory {
        Trajectory { states: states.to_vec(), actions: actions.to_vec() }
    }

    #[test]
    fn counts_from_one_and_two_trajectories() {
        let spec = MdpSpec::new(3, 2, 2).unwrap();
        let t = traj(&[0, 2, 1], &[1, 0]);
        let once = update_counts(&VisitCounts::new(spec), &t).unwrap();
        assert_eq!(once.n(0, 0, 1), 1);
        assert_eq!(once.n(1, 2, 0), 1);
        assert_eq!(once.pair().sum(), 2);
        assert_eq!(once.triple()[[1, 2, 0, 1]], 1);
        let twice = update_counts(&once, &t).unwrap();
        assert_eq!(twice.n(0, 0, 1), 2);
        assert_eq!(twice.pair().sum(), 4);
    }

    #[test]
    fn out_of_range_trajectory_is_rejected() {
        let mut c = VisitCounts::new(MdpSpec::new(2, 2, 1).unwrap());
        assert!(c.update(&traj(&[0, 5], &[0])).is_err());
        assert!(c.update(&traj(&[0, 1], &[2])).is_err());
        assert_eq!(c.pair().sum(), 0);
    }

    #[test]
    fn empirical_ratio_and_zero_rows() {
        let spec = MdpSpec::new(2, 1, 1).unwrap();
        let mut c = VisitCounts::new(spec);
        for next in [0, 0, 0, 1] {
            c.update(&traj(&[0, next], &[0])).unwrap();
        }
        let p = empirical_kernel(&c);
        assert_eq!(p[[0, 0, 0, 0]], 0.75);
        assert_eq!(p[[0, 0, 0, 1]], 0.25);
        assert_eq!(p[[0, 1, 0, 0]], 0.0);
        assert_eq!(p[[0, 1, 0, 1]], 0.0);
    }

    #[test]
    fn radius_values() {
        assert!((radius_value(0.0, 1.0, 2.0) - 28.0 / 3.0).abs() < 1e-15);
        let v = radius_value(0.25, 4.0, 2.0);
        let expected = 2.0 * 0.125_f64.sqrt() + 28.0 / 12.0;
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 3.040440).abs() < 1e-6);
        assert!(radius_value(0.25, 16.0, 2.0) < v);
    }

    #[test]
    fn unvisited_radius_uses_count_one() {
        let c = VisitCounts::new(MdpSpec::new(2, 1, 1).unwrap());
        let eps = bernstein_radius(&empirical_kernel(&c), &c, 1.5).unwrap();
        assert!(eps.iter().all(|&e| (e - 14.0 * 1.5 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn log_factor_values() {
        let spec = MdpSpec::new(4, 2, 3).unwrap();
        let l = log_factor(&spec, 0.1, 0.2).unwrap();
        assert!((l - 1200_f64.ln()).abs() < 1e-12);
        assert!((l - 7.090077).abs() < 1e-6);
        let halved = log_factor(&spec, 0.05, 0.2).unwrap();
        assert!((halved - l - 2_f64.ln()).abs() < 1e-12);
        // |S||A|H = delta * eps gives ln 1 = 0
        let unit = MdpSpec::new(1, 1, 1).unwrap();
        assert!(log_factor(&unit, 0.5, 2.0).unwrap().abs() < 1e-15);
        assert!(log_factor(&spec, 1.5, 0.2).is_err());
        assert!(log_factor(&spec, 0.1, 0.0).is_err());
    }
}
