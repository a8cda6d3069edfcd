//! Entropic mirror-descent steps over the augmented occupancy polytope and the
//! online loop with trajectory feedback and shrinking confidence sets.
//!
//! The projection is solved in its dual. Only the step-1 normalization and the
//! flow equations carry multipliers (the remaining normalizations follow from
//! flow). Given multipliers, each `(h,s,a)` block is solved in closed form: the
//! block is `m * q` with `q` in the band simplex `{lo <= q <= hi, sum q = 1}`,
//! which is a clipped softmax with exact breakpoints. The concave dual is then
//! maximized by damped Newton on the equality multipliers.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array3, Array4, Zip};
use serde::{Deserialize, Serialize};

use crate::confidence::{EmpiricalModel, VisitCounts};
use crate::error::{Error, Result};
use crate::mdp::{dp_optimal_values, rollout, MarkovPolicy, MdpSpec, TransitionKernel, Trajectory};
use crate::occupancy::{occupancy_from_policy, AugmentedOccupancy, OccupancyMeasure};
use crate::rng::Seed;

/// Entries of every iterate are kept at or above this floor.
pub const ITERATE_FLOOR: f64 = 1e-300;
/// Feasibility promised by [`entropic_projection`] (L-infinity).
pub const FEASIBILITY_TOL: f64 = 1e-8;
/// Residual below which line search also accepts steps that shrink the residual.
const RESIDUAL_SWITCH: f64 = 1e-6;
/// Newton iterations without a new best residual before giving up.
const STALL_ITERATIONS: usize = 50;
/// Per-block slack for `sum lo <= 1 <= sum hi`.
const BLOCK_SLACK: f64 = 1e-12;

/// The set of augmented occupancies whose induced kernel lies in an elementwise band.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintPolytope {
    lower: Array4<f64>,
    upper: Array4<f64>,
}

impl ConstraintPolytope {
    pub fn new(lower: Array4<f64>, upper: Array4<f64>) -> Result<Self> {
        if lower.dim() != upper.dim() {
            return Err(Error::shape("band bounds differ in shape"));
        }
        let (hh, ss, aa, nn) = lower.dim();
        if hh == 0 || ss == 0 || aa == 0 || nn != ss {
            return Err(Error::shape(format!("band of shape {:?} is not [h][s][a][s']", lower.dim())));
        }
        for ((idx, &lo), &hi) in lower.indexed_iter().zip(upper.iter()) {
            if !(lo >= 0.0) || !(hi >= lo) || hi > 1.0 {
                return Err(Error::Infeasible(format!("band at {idx:?} is [{lo}, {hi}]")));
            }
        }
        for h in 0..hh {
            for s in 0..ss {
                for a in 0..aa {
                    let lo = lower.slice(s![h, s, a, ..]).sum();
                    let hi = upper.slice(s![h, s, a, ..]).sum();
                    if lo > 1.0 + BLOCK_SLACK || hi < 1.0 - BLOCK_SLACK {
                        return Err(Error::Infeasible(format!(
                            "no distribution fits the band at (h={h}, s={s}, a={a}): sum lo {lo}, sum hi {hi}"
                        )));
                    }
                }
            }
        }
        Ok(ConstraintPolytope { lower, upper })
    }

    /// Known dynamics: the band collapses to `P` itself.
    pub fn exact(kernel: &TransitionKernel) -> Self {
        ConstraintPolytope { lower: kernel.probs().clone(), upper: kernel.probs().clone() }
    }

    pub fn spec(&self) -> MdpSpec {
        let (h, s, a, _) = self.lower.dim();
        MdpSpec { num_states: s, num_actions: a, horizon: h }
    }

    pub fn lower(&self) -> &Array4<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &Array4<f64> {
        &self.upper
    }

    /// Whether `kernel` lies inside the band elementwise.
    pub fn contains_kernel(&self, kernel: &TransitionKernel, tol: f64) -> bool {
        Zip::from(kernel.probs())
            .and(&self.lower)
            .and(&self.upper)
            .all(|&p, &lo, &hi| p >= lo - tol && p <= hi + tol)
    }
}

/// Band `[max(P̂ - eps, 0), min(P̂ + eps, 1)]` around the empirical kernel.
pub fn build_polytope(model: &EmpiricalModel) -> Result<ConstraintPolytope> {
    let lower = Zip::from(&model.kernel).and(&model.radius).map_collect(|&p, &e| (p - e).max(0.0));
    let upper = Zip::from(&model.kernel).and(&model.radius).map_collect(|&p, &e| (p + e).min(1.0));
    ConstraintPolytope::new(lower, upper)
}

/// L-infinity violations of each constraint family.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintResiduals {
    pub normalization: f64,
    pub flow: f64,
    pub band: f64,
    pub negativity: f64,
}

impl ConstraintResiduals {
    pub fn max(&self) -> f64 {
        self.normalization.max(self.flow).max(self.band).max(self.negativity)
    }
}

pub fn constraint_residuals(mu: &AugmentedOccupancy, polytope: &ConstraintPolytope) -> Result<ConstraintResiduals> {
    let x = mu.values();
    if x.dim() != polytope.lower.dim() {
        return Err(Error::shape("occupancy and polytope differ in shape"));
    }
    let (hh, ss, aa, _) = x.dim();
    let mut out = ConstraintResiduals::default();
    for h in 0..hh {
        out.normalization = out.normalization.max((x.slice(s![h, .., .., ..]).sum() - 1.0).abs());
    }
    for h in 0..hh.saturating_sub(1) {
        for s in 0..ss {
            let inflow = x.slice(s![h, .., .., s]).sum();
            let outflow = x.slice(s![h + 1, s, .., ..]).sum();
            out.flow = out.flow.max((inflow - outflow).abs());
        }
    }
    for h in 0..hh {
        for s in 0..ss {
            for a in 0..aa {
                let row = x.slice(s![h, s, a, ..]);
                let m = row.sum();
                for (j, &v) in row.iter().enumerate() {
                    let lo = polytope.lower[[h, s, a, j]] * m;
                    let hi = polytope.upper[[h, s, a, j]] * m;
                    out.band = out.band.max(v - hi).max(lo - v);
                    out.negativity = out.negativity.max(-v);
                }
            }
        }
    }
    Ok(out)
}

/// `eta <mu, r> - D(mu || prev)` with `r` lifted to the augmented space.
pub fn projection_objective(mu: &AugmentedOccupancy, prev: &AugmentedOccupancy, reward: &Array3<f64>, eta: f64) -> f64 {
    let mut total = 0.0;
    Zip::indexed(mu.values()).and(prev.values()).for_each(|(h, s, a, _), &x, &p| {
        let p = p.max(ITERATE_FLOOR);
        let kl = if x > 0.0 { x * (x / p).ln() - x + p } else { p };
        total += eta * x * reward[[h, s, a]] - kl;
    });
    total
}

/// Solver settings; the defaults are what the online loop uses.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionOptions {
    pub max_iter: usize,
    /// Newton stops once every equality residual is below this.
    pub tol: f64,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        ProjectionOptions { max_iter: 100_000, tol: 1e-11 }
    }
}

#[derive(Debug, Clone)]
pub struct Projection {
    pub occupancy: AugmentedOccupancy,
    pub residuals: ConstraintResiduals,
    pub objective: f64,
    pub iterations: usize,
}

/// The maximizer of `eta <mu, r> - D(mu || prev)` over the polytope.
pub fn entropic_projection(
    prev: &AugmentedOccupancy,
    reward: &Array3<f64>,
    eta: f64,
    polytope: &ConstraintPolytope,
) -> Result<AugmentedOccupancy> {
    Ok(project(prev, reward, eta, polytope, ProjectionOptions::default())?.occupancy)
}

/// [`entropic_projection`] with residuals, objective and iteration count.
pub fn project(
    prev: &AugmentedOccupancy,
    reward: &Array3<f64>,
    eta: f64,
    polytope: &ConstraintPolytope,
    options: ProjectionOptions,
) -> Result<Projection> {
    let spec = polytope.spec();
    if prev.values().dim() != spec.sas_shape() {
        return Err(Error::shape("previous iterate and polytope differ in shape"));
    }
    spec.check_sa(reward.shape(), "reward")?;
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::config(format!("step size must be finite and nonnegative, got {eta}")));
    }
    let dual = Dual::new(prev, reward, eta, polytope);
    let (x, iterations) = dual.solve(options)?;
    let occupancy = AugmentedOccupancy::new(x);
    let residuals = constraint_residuals(&occupancy, polytope)?;
    let objective = projection_objective(&occupancy, prev, reward, eta);
    Ok(Projection { occupancy, residuals, objective, iterations })
}

/// Solution of one band-simplex block for fixed multipliers.
struct BlockSolution {
    /// Optimal KL value `min_q sum q (ln q - u)`.
    value: f64,
    free_mass: f64,
}

/// `min sum_j q_j (ln q_j - u_j)` over `{lo <= q <= hi, sum q = 1}`.
///
/// The minimizer is `q_j = clip(exp(t + u_j), lo_j, hi_j)` for the unique `t`
/// making it sum to one. Breakpoints in `t` are `ln lo_j - u_j` and
/// `ln hi_j - u_j`; the right segment is found by bisection over them and `t`
/// is then exact on that segment.
fn solve_block(u: &[f64], lo: &[f64], hi: &[f64], q: &mut [f64], free: &mut [bool]) -> BlockSolution {
    let n = u.len();
    let sum_lo: f64 = lo.iter().sum();
    let sum_hi: f64 = hi.iter().sum();
    let eval = |t: f64, q: &mut [f64]| -> f64 {
        let mut total = 0.0;
        for j in 0..n {
            q[j] = (t + u[j]).exp().clamp(lo[j], hi[j]);
            total += q[j];
        }
        total
    };

    if sum_lo >= 1.0 || sum_hi <= 1.0 {
        let pinned = if sum_lo >= 1.0 { lo } else { hi };
        q.copy_from_slice(pinned);
        free.iter_mut().for_each(|f| *f = false);
    } else {
        let mut points: Vec<f64> = Vec::with_capacity(2 * n);
        for j in 0..n {
            if hi[j] > 0.0 {
                if lo[j] > 0.0 {
                    points.push(lo[j].ln() - u[j]);
                }
                points.push(hi[j].ln() - u[j]);
            }
        }
        points.sort_by(f64::total_cmp);
        points.dedup();
        // first breakpoint whose clipped sum reaches one
        let (mut left, mut right) = (0usize, points.len() - 1);
        while left < right {
            let mid = (left + right) / 2;
            if eval(points[mid], q) >= 1.0 {
                right = mid;
            } else {
                left = mid + 1;
            }
        }
        let t_hi = points[left];
        let t_lo = if left == 0 { f64::NEG_INFINITY } else { points[left - 1] };
        let mut fixed = 0.0;
        let mut max_u = f64::NEG_INFINITY;
        for j in 0..n {
            let below = if lo[j] > 0.0 { lo[j].ln() - u[j] } else { f64::NEG_INFINITY };
            let above = if hi[j] > 0.0 { hi[j].ln() - u[j] } else { f64::NEG_INFINITY };
            free[j] = hi[j] > 0.0 && below <= t_lo && above >= t_hi;
            if free[j] {
                max_u = max_u.max(u[j]);
            } else if above <= t_lo {
                fixed += hi[j];
            } else {
                fixed += lo[j];
            }
        }
        let rest = 1.0 - fixed;
        if max_u == f64::NEG_INFINITY || rest <= 0.0 {
            eval(if rest <= 0.0 { t_lo.max(-1e300) } else { t_hi }, q);
            free.iter_mut().for_each(|f| *f = false);
        } else {
            let spread: f64 = (0..n).filter(|&j| free[j]).map(|j| (u[j] - max_u).exp()).sum();
            let t = rest.ln() - max_u - spread.ln();
            for j in 0..n {
                q[j] = (t + u[j]).exp().clamp(lo[j], hi[j]);
            }
        }
    }

    let mut value = 0.0;
    let mut free_mass = 0.0;
    for j in 0..n {
        if q[j] > 0.0 {
            value += q[j] * (q[j].ln() - u[j]);
        }
        if free[j] {
            free_mass += q[j];
        }
    }
    BlockSolution { value, free_mass }
}

/// Dual of the projection restricted to the equality multipliers.
///
/// Row 0 is the step-1 normalization; row `1 + h*S + s` is the flow equation
/// into state `s` between steps `h` and `h+1`.
struct Dual<'a> {
    spec: MdpSpec,
    /// `ln prev + eta * r`, per augmented entry.
    base: Array4<f64>,
    polytope: &'a ConstraintPolytope,
    rows: usize,
}

/// Primal point, dual value and curvature at a fixed multiplier vector.
struct DualPoint {
    value: f64,
    x: Array4<f64>,
    residual: DVector<f64>,
    q: Array4<f64>,
    free: Array4<bool>,
    mass: Array3<f64>,
    free_mass: Array3<f64>,
}

impl<'a> Dual<'a> {
    fn new(prev: &AugmentedOccupancy, reward: &Array3<f64>, eta: f64, polytope: &'a ConstraintPolytope) -> Self {
        let spec = polytope.spec();
        let base = Array4::from_shape_fn(spec.sas_shape(), |(h, s, a, j)| {
            prev.values()[[h, s, a, j]].max(ITERATE_FLOOR).ln() + eta * reward[[h, s, a]]
        });
        let rows = 1 + (spec.horizon - 1) * spec.num_states;
        Dual { spec, base, polytope, rows }
    }

    fn flow_row(&self, h: usize, s: usize) -> usize {
        1 + h * self.spec.num_states + s
    }

    /// Sparse coefficients of entry `(h, s, ·, next)` in the constraint rows.
    fn coefficients(&self, h: usize, s: usize, next: usize) -> [(usize, f64); 2] {
        let first = if h == 0 { (0, 1.0) } else { (self.flow_row(h - 1, s), -1.0) };
        let second = if h + 1 < self.spec.horizon { (self.flow_row(h, next), 1.0) } else { (0, 0.0) };
        [first, second]
    }

    fn evaluate(&self, y: &DVector<f64>) -> DualPoint {
        let MdpSpec { num_states: ss, num_actions: aa, horizon: hh } = self.spec;
        let mut x = Array4::zeros(self.spec.sas_shape());
        let mut q = Array4::zeros(self.spec.sas_shape());
        let mut free = Array4::from_elem(self.spec.sas_shape(), false);
        let mut mass = Array3::zeros(self.spec.sa_shape());
        let mut free_mass = Array3::zeros(self.spec.sa_shape());
        let mut u = vec![0.0; ss];
        let mut qb = vec![0.0; ss];
        let mut fb = vec![false; ss];
        let mut total_mass = 0.0;
        for h in 0..hh {
            for s in 0..ss {
                for a in 0..aa {
                    for j in 0..ss {
                        let shift: f64 = self.coefficients(h, s, j).iter().map(|&(r, c)| c * y[r]).sum();
                        u[j] = self.base[[h, s, a, j]] - shift;
                    }
                    let lo = self.polytope.lower.slice(s![h, s, a, ..]);
                    let hi = self.polytope.upper.slice(s![h, s, a, ..]);
                    let block = solve_block(
                        &u,
                        lo.as_slice().expect("standard layout"),
                        hi.as_slice().expect("standard layout"),
                        &mut qb,
                        &mut fb,
                    );
                    let m = (-block.value).exp();
                    total_mass += m;
                    mass[[h, s, a]] = m;
                    free_mass[[h, s, a]] = block.free_mass;
                    for j in 0..ss {
                        q[[h, s, a, j]] = qb[j];
                        free[[h, s, a, j]] = fb[j];
                        x[[h, s, a, j]] = m * qb[j];
                    }
                }
            }
        }
        let mut residual = DVector::zeros(self.rows);
        residual[0] = -1.0;
        Zip::indexed(&x).for_each(|(h, s, _, j), &v| {
            for (r, c) in self.coefficients(h, s, j) {
                residual[r] += c * v;
            }
        });
        DualPoint { value: -total_mass - y[0], x, residual, q, free, mass, free_mass }
    }

    /// `E J E^T`, with `J = dx/du` blockwise `m [q q^T + diag(q_F) - q_F q_F^T / R]`.
    fn curvature(&self, point: &DualPoint) -> DMatrix<f64> {
        let MdpSpec { num_states: ss, num_actions: aa, horizon: hh } = self.spec;
        let mut hess = DMatrix::zeros(self.rows, self.rows);
        let mut eq: Vec<(usize, f64)> = Vec::with_capacity(2 * ss);
        let mut eqf: Vec<(usize, f64)> = Vec::with_capacity(2 * ss);
        let outer = |hess: &mut DMatrix<f64>, v: &[(usize, f64)], w: f64| {
            for &(r, a) in v {
                for &(c, b) in v {
                    hess[(r, c)] += w * a * b;
                }
            }
        };
        for h in 0..hh {
            for s in 0..ss {
                for a in 0..aa {
                    let m = point.mass[[h, s, a]];
                    if m == 0.0 {
                        continue;
                    }
                    eq.clear();
                    eqf.clear();
                    for j in 0..ss {
                        let qj = point.q[[h, s, a, j]];
                        let coefs = self.coefficients(h, s, j);
                        for &(r, c) in &coefs {
                            if c != 0.0 {
                                eq.push((r, c * qj));
                                if point.free[[h, s, a, j]] {
                                    eqf.push((r, c * qj));
                                }
                            }
                        }
                        if point.free[[h, s, a, j]] {
                            for &(r, cr) in &coefs {
                                for &(c, cc) in &coefs {
                                    hess[(r, c)] += m * qj * cr * cc;
                                }
                            }
                        }
                    }
                    outer(&mut hess, &eq, m);
                    let rf = point.free_mass[[h, s, a]];
                    if rf > 0.0 {
                        outer(&mut hess, &eqf, -m / rf);
                    }
                }
            }
        }
        hess
    }

    fn solve(&self, options: ProjectionOptions) -> Result<(Array4<f64>, usize)> {
        let mut y = DVector::zeros(self.rows);
        let mut point = self.evaluate(&y);
        let mut best = (point.residual.amax(), point.x.clone());
        let mut last_gain = 0;
        let mut iterations = options.max_iter;
        for iteration in 0..options.max_iter {
            let residual = point.residual.amax();
            if residual < best.0 {
                best = (residual, point.x.clone());
                last_gain = iteration;
            }
            if residual <= options.tol {
                return Ok((floor(point.x), iteration));
            }
            if iteration - last_gain > STALL_ITERATIONS {
                iterations = iteration;
                break;
            }
            let hess = self.curvature(&point);
            let Some(step) = newton_direction(hess, &point.residual) else {
                break;
            };
            let slope = point.residual.dot(&step);
            if !(slope > 0.0) {
                break;
            }
            let mut alpha = 1.0;
            let mut accepted = None;
            let norm = point.residual.norm();
            for _ in 0..80 {
                let trial_y = &y + alpha * &step;
                let trial = self.evaluate(&trial_y);
                // near the optimum dual gains fall below rounding, so the residual decides
                let ascent = trial.value >= point.value + 1e-4 * alpha * slope;
                let closer = residual < RESIDUAL_SWITCH && trial.residual.norm() < (1.0 - 1e-4 * alpha) * norm;
                if trial.value.is_finite() && (ascent || closer) {
                    accepted = Some((trial_y, trial));
                    break;
                }
                alpha *= 0.5;
            }
            let Some((next_y, next)) = accepted else {
                break;
            };
            y = next_y;
            point = next;
        }
        let residual = point.residual.amax();
        if residual < best.0 {
            best = (residual, point.x.clone());
        }
        if best.0 <= FEASIBILITY_TOL {
            return Ok((floor(best.1), iterations));
        }
        Err(Error::Convergence {
            iterations,
            residual: best.0,
            best: Some(Box::new(AugmentedOccupancy::new(best.1))),
        })
    }
}

fn floor(mut x: Array4<f64>) -> Array4<f64> {
    x.mapv_inplace(|v| v.max(ITERATE_FLOOR));
    x
}

/// Solve `(A + reg I) d = g`, raising `reg` until the Cholesky factorization succeeds.
fn newton_direction(mut hess: DMatrix<f64>, gradient: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = (0..hess.nrows()).map(|i| hess[(i, i)]).fold(0.0, f64::max).max(1e-300);
    let mut reg = 1e-14 * scale;
    for i in 0..hess.nrows() {
        hess[(i, i)] += reg;
    }
    for _ in 0..30 {
        if let Some(chol) = hess.clone().cholesky() {
            let d = chol.solve(gradient);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        for i in 0..hess.nrows() {
            hess[(i, i)] += 99.0 * reg;
        }
        reg *= 100.0;
    }
    None
}

/// `eta = sqrt(4 H ln(|S||A|) / (B G))`.
pub fn omd_step_size(reward_bound: f64, reward_budget: f64, spec: &MdpSpec) -> Result<f64> {
    if !(reward_bound > 0.0) || !(reward_budget > 0.0) {
        return Err(Error::config(format!(
            "reward bound and cumulative budget must be positive, got B = {reward_bound}, G = {reward_budget}"
        )));
    }
    let sa = (spec.num_states * spec.num_actions) as f64;
    if sa <= 1.0 {
        return Err(Error::config("step size is zero when |S||A| = 1"));
    }
    Ok((4.0 * spec.horizon as f64 * sa.ln() / (reward_bound * reward_budget)).sqrt())
}

/// Source of the per-episode reward tables fed to the online learner.
pub trait RewardStream {
    /// Reward for episode `t` (1-based). `counts` excludes episode `t`'s trajectory.
    fn reward(&mut self, t: usize, counts: &VisitCounts) -> Result<Array3<f64>>;
}

impl<F> RewardStream for F
where
    F: FnMut(usize, &VisitCounts) -> Result<Array3<f64>>,
{
    fn reward(&mut self, t: usize, counts: &VisitCounts) -> Result<Array3<f64>> {
        self(t, counts)
    }
}

/// Inputs of the online loop besides the environment and the reward stream.
#[derive(Debug, Clone, Copy)]
pub struct OnlineConfig {
    pub episodes: usize,
    /// `B`: bound on every reward entry.
    pub reward_bound: f64,
    /// `G`: bound on the learner's cumulative reward; sets the step size.
    pub reward_budget: f64,
    /// Log factor of the confidence radii.
    pub log_factor: f64,
    /// Compute the regret against the true kernel after every episode.
    pub track_regret: bool,
}

/// One line of the per-episode trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub constraint_residual: f64,
    pub objective: f64,
    pub regret_so_far: Option<f64>,
    pub eta: f64,
}

#[derive(Debug, Clone)]
pub struct OnlineRun {
    /// `pi^1 .. pi^T`
    pub policies: Vec<MarkovPolicy>,
    /// `mu^1 .. mu^T`, the optimistic iterates
    pub occupancies: Vec<AugmentedOccupancy>,
    /// `r^1 .. r^T`
    pub rewards: Vec<Array3<f64>>,
    pub trajectories: Vec<Trajectory>,
    pub counts: VisitCounts,
    pub eta: f64,
    /// Episodes `1 .. T-1`; the last episode has no update.
    pub steps: Vec<StepRecord>,
}

impl OnlineRun {
    pub fn write_trace<W: Write>(&self, mut out: W) -> Result<()> {
        for step in &self.steps {
            serde_json::to_writer(&mut out, step)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// The optimistic online learner: traverse with `pi^t`, refresh counts and the
/// confidence band, observe `r^t`, take an entropic step over the new band and
/// play its induced policy next.
pub fn ucoreps_run<R: RewardStream + ?Sized>(
    env: &TransitionKernel,
    rewards: &mut R,
    config: &OnlineConfig,
    seed: Seed,
) -> Result<OnlineRun> {
    let spec = env.spec();
    if config.episodes == 0 {
        return Err(Error::config("online loop needs at least one episode"));
    }
    if !(config.log_factor > 0.0) {
        return Err(Error::config(format!("log factor must be positive, got {}", config.log_factor)));
    }
    let eta = if spec.num_states * spec.num_actions == 1 {
        0.0
    } else {
        omd_step_size(config.reward_bound, config.reward_budget, &spec)?
    };
    let mut rng = seed.rng();
    let mut mu = AugmentedOccupancy::uniform(spec);
    let mut policy = MarkovPolicy::uniform(spec);
    let mut counts = VisitCounts::new(spec);
    let mut run = OnlineRun {
        policies: Vec::with_capacity(config.episodes),
        occupancies: Vec::with_capacity(config.episodes),
        rewards: Vec::with_capacity(config.episodes),
        trajectories: Vec::with_capacity(config.episodes),
        counts: counts.clone(),
        eta,
        steps: Vec::new(),
    };
    let mut tracker = config.track_regret.then(|| RegretTracker::new(spec));

    for t in 1..=config.episodes {
        let trajectory = rollout(env, &policy, &mut rng);
        let reward = rewards.reward(t, &counts)?;
        spec.check_sa(reward.shape(), "reward")?;
        let worst = reward.iter().copied().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if !(worst <= config.reward_bound * (1.0 + 1e-12)) {
            return Err(Error::config(format!(
                "reward at episode {t} has magnitude {worst}, above the bound {}",
                config.reward_bound
            )));
        }
        counts.update(&trajectory)?;
        let regret_so_far = match tracker.as_mut() {
            Some(tr) => Some(tr.push(env, &policy, &reward)?),
            None => None,
        };

        if t < config.episodes {
            let model = EmpiricalModel::from_counts(&counts, config.log_factor)?;
            let polytope = build_polytope(&model)?;
            let step = project(&mu, &reward, eta, &polytope, ProjectionOptions::default())?;
            run.steps.push(StepRecord {
                t,
                constraint_residual: step.residuals.max(),
                objective: step.objective,
                regret_so_far,
                eta,
            });
            run.policies.push(std::mem::replace(&mut policy, step.occupancy.induced_policy()));
            run.occupancies.push(std::mem::replace(&mut mu, step.occupancy));
        } else {
            run.policies.push(policy.clone());
            run.occupancies.push(mu.clone());
        }
        run.rewards.push(reward);
        run.trajectories.push(trajectory);
    }
    run.counts = counts;
    Ok(run)
}

struct RegretTracker {
    reward_sum: Array3<f64>,
    learner: f64,
}

impl RegretTracker {
    fn new(spec: MdpSpec) -> Self {
        RegretTracker { reward_sum: Array3::zeros(spec.sa_shape()), learner: 0.0 }
    }

    fn push(&mut self, env: &TransitionKernel, policy: &MarkovPolicy, reward: &Array3<f64>) -> Result<f64> {
        let mu = occupancy_from_policy(env, policy)?;
        self.learner += (mu.values() * reward).sum();
        self.reward_sum += reward;
        let (table, _) = dp_optimal_values(env, &self.reward_sum)?;
        Ok(table.initial_value(env.initial()) - self.learner)
    }
}

/// `max_mu sum_t <r^t, mu> - sum_t <r^t, mu^{pi^t}>` under the true kernel.
///
/// `occupancies` are the true occupancies of the played policies, not the
/// optimistic iterates.
pub fn regret_diagnostic(rewards: &[Array3<f64>], occupancies: &[OccupancyMeasure], kernel: &TransitionKernel) -> Result<f64> {
    if rewards.len() != occupancies.len() {
        return Err(Error::shape(format!(
            "{} rewards but {} occupancies",
            rewards.len(),
            occupancies.len()
        )));
    }
    let spec = kernel.spec();
    let mut total = Array3::zeros(spec.sa_shape());
    let mut learner = 0.0;
    for (r, mu) in rewards.iter().zip(occupancies) {
        spec.check_sa(r.shape(), "reward")?;
        spec.check_sa(mu.values().shape(), "occupancy")?;
        total += r;
        learner += (mu.values() * r).sum();
    }
    let (table, _) = dp_optimal_values(kernel, &total)?;
    Ok(table.initial_value(kernel.initial()) - learner)
}
