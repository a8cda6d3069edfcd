//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use ndarray::{Array2, Array3, Array4};
use rfexplore::mdp::{MarkovPolicy, MdpSpec, TransitionKernel};

/// Exact expected return of `policy` by enumerating every trajectory.
pub fn enumerate_return(kernel: &TransitionKernel, reward: &Array3<f64>, policy: &MarkovPolicy) -> f64 {
    let spec = kernel.spec();
    let mut total = 0.0;
    for s0 in 0..spec.num_states {
        total += kernel.initial()[s0] * walk(kernel, reward, policy, 0, s0);
    }
    total
}

fn walk(kernel: &TransitionKernel, reward: &Array3<f64>, policy: &MarkovPolicy, h: usize, s: usize) -> f64 {
    let spec = kernel.spec();
    if h == spec.horizon {
        return 0.0;
    }
    let mut total = 0.0;
    for a in 0..spec.num_actions {
        let pa = policy.probs()[[h, s, a]];
        if pa == 0.0 {
            continue;
        }
        let mut tail = 0.0;
        for next in 0..spec.num_states {
            let p = kernel.probs()[[h, s, a, next]];
            if p > 0.0 {
                tail += p * walk(kernel, reward, policy, h + 1, next);
            }
        }
        total += pa * (reward[[h, s, a]] + tail);
    }
    total
}

/// Value of a deterministic policy from state `s` at step 0, by enumeration.
pub fn enumerate_state_value(kernel: &TransitionKernel, reward: &Array3<f64>, policy: &MarkovPolicy, s: usize) -> f64 {
    walk(kernel, reward, policy, 0, s)
}

/// Every deterministic time-dependent policy, `A^(S H)` of them.
pub fn all_deterministic_policies(spec: MdpSpec) -> Vec<MarkovPolicy> {
    let cells = spec.num_states * spec.horizon;
    let count = spec.num_actions.pow(cells as u32);
    (0..count)
        .map(|mut code| {
            let mut actions = Array2::zeros((spec.horizon, spec.num_states));
            for h in 0..spec.horizon {
                for s in 0..spec.num_states {
                    actions[[h, s]] = code % spec.num_actions;
                    code /= spec.num_actions;
                }
            }
            MarkovPolicy::deterministic(spec, &actions).unwrap()
        })
        .collect()
}

/// Maximum expected return over all deterministic policies.
pub fn best_return_by_enumeration(kernel: &TransitionKernel, reward: &Array3<f64>) -> f64 {
    all_deterministic_policies(kernel.spec())
        .iter()
        .map(|p| enumerate_return(kernel, reward, p))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Double-double accumulator (Knuth two-sum) for extended-precision sums.
#[derive(Default, Clone, Copy)]
pub struct TwoSum {
    hi: f64,
    lo: f64,
}

impl TwoSum {
    pub fn add(&mut self, v: f64) {
        let s = self.hi + v;
        let bv = s - self.hi;
        let err = (self.hi - (s - bv)) + (v - bv);
        self.hi = s;
        self.lo += err;
    }

    pub fn value(&self) -> f64 {
        self.hi + self.lo
    }
}

/// `sum x ln(x/y) - x + y` accumulated in double-double arithmetic.
pub fn kl_extended(x: &Array4<f64>, y: &Array4<f64>) -> f64 {
    let mut acc = TwoSum::default();
    for (&a, &b) in x.iter().zip(y.iter()) {
        if a > 0.0 {
            acc.add(a * (a / b).ln());
        }
        acc.add(-a);
        acc.add(b);
    }
    acc.value()
}

/// Two-pass variance with compensated sums.
pub fn variance_extended(rho: &[f64], v: &[f64]) -> f64 {
    let mut mean = TwoSum::default();
    for (&p, &x) in rho.iter().zip(v) {
        mean.add(p * x);
    }
    let m = mean.value();
    let mut var = TwoSum::default();
    let mut mass = TwoSum::default();
    for (&p, &x) in rho.iter().zip(v) {
        var.add(p * (x - m) * (x - m));
        mass.add(p);
    }
    // sum p x^2 - m^2 = sum p (x - m)^2 + m^2 (1 - sum p)
    (var.value() + m * m * (1.0 - mass.value())).max(0.0)
}

/// One linear constraint `sum_j coef_j x_j (= or <=) rhs` over flattened entries.
struct Row {
    entries: Vec<(usize, f64)>,
    rhs: f64,
    inequality: bool,
}

pub struct OracleSolution {
    pub x: Array4<f64>,
    pub objective: f64,
    pub duality_gap: f64,
    pub max_violation: f64,
    pub sweeps: usize,
}

/// Hildreth-style dual coordinate ascent for
/// `max eta <r, x> - KL(x || prev)` subject to every normalization, flow and
/// band constraint written out as individual rows.
///
/// The primal iterate is `prev * exp(eta r - A^T lambda)`; each sweep solves
/// the one-dimensional dual problem of every row in turn, clamping inequality
/// multipliers at zero.
pub fn bregman_row_action(
    prev: &Array4<f64>,
    reward: &Array3<f64>,
    eta: f64,
    lower: &Array4<f64>,
    upper: &Array4<f64>,
    tol: f64,
    max_sweeps: usize,
) -> OracleSolution {
    let (hh, ss, aa, _) = prev.dim();
    let idx = |h: usize, s: usize, a: usize, j: usize| ((h * ss + s) * aa + a) * ss + j;
    let mut rows: Vec<Row> = Vec::new();
    for h in 0..hh {
        let mut e = Vec::new();
        for s in 0..ss {
            for a in 0..aa {
                for j in 0..ss {
                    e.push((idx(h, s, a, j), 1.0));
                }
            }
        }
        rows.push(Row { entries: e, rhs: 1.0, inequality: false });
    }
    for h in 0..hh.saturating_sub(1) {
        for s in 0..ss {
            let mut e = Vec::new();
            for s0 in 0..ss {
                for a in 0..aa {
                    e.push((idx(h, s0, a, s), 1.0));
                }
            }
            for a in 0..aa {
                for j in 0..ss {
                    e.push((idx(h + 1, s, a, j), -1.0));
                }
            }
            rows.push(Row { entries: e, rhs: 0.0, inequality: false });
        }
    }
    for h in 0..hh {
        for s in 0..ss {
            for a in 0..aa {
                for j in 0..ss {
                    let hi = upper[[h, s, a, j]];
                    let lo = lower[[h, s, a, j]];
                    // x_j - hi * sum_k x_k <= 0
                    let up: Vec<_> = (0..ss).map(|k| (idx(h, s, a, k), if k == j { 1.0 - hi } else { -hi })).collect();
                    rows.push(Row { entries: up, rhs: 0.0, inequality: true });
                    // lo * sum_k x_k - x_j <= 0
                    let down: Vec<_> = (0..ss).map(|k| (idx(h, s, a, k), if k == j { lo - 1.0 } else { lo })).collect();
                    rows.push(Row { entries: down, rhs: 0.0, inequality: true });
                }
            }
        }
    }

    let n = prev.len();
    let mut log_x = vec![0.0; n];
    for h in 0..hh {
        for s in 0..ss {
            for a in 0..aa {
                for j in 0..ss {
                    log_x[idx(h, s, a, j)] = prev[[h, s, a, j]].ln() + eta * reward[[h, s, a]];
                }
            }
        }
    }
    let mut lambda = vec![0.0; rows.len()];
    let mut sweeps = 0;
    let violation = |log_x: &[f64], rows: &[Row]| -> f64 {
        rows.iter()
            .map(|r| {
                let v: f64 = r.entries.iter().map(|&(j, c)| c * log_x[j].exp()).sum::<f64>() - r.rhs;
                if r.inequality { v.max(0.0) } else { v.abs() }
            })
            .fold(0.0, f64::max)
    };
    while sweeps < max_sweeps {
        sweeps += 1;
        for (i, row) in rows.iter().enumerate() {
            // g(d) = sum_j c_j x_j exp(-d c_j) - rhs is strictly decreasing in d
            let g = |d: f64| -> (f64, f64) {
                let mut val = -row.rhs;
                let mut der = 0.0;
                for &(j, c) in &row.entries {
                    let xj = (log_x[j] - d * c).exp();
                    val += c * xj;
                    der -= c * c * xj;
                }
                (val, der)
            };
            let (g0, _) = g(0.0);
            if row.inequality && g0 <= 0.0 && lambda[i] == 0.0 {
                continue;
            }
            let (mut lo_d, mut hi_d) = (-1.0, 1.0);
            while g(lo_d).0 < 0.0 && lo_d > -1e12 {
                lo_d *= 2.0;
            }
            while g(hi_d).0 > 0.0 && hi_d < 1e12 {
                hi_d *= 2.0;
            }
            let mut d = 0.0_f64.clamp(lo_d, hi_d);
            for _ in 0..200 {
                let (v, dv) = g(d);
                if v == 0.0 || (hi_d - lo_d).abs() < 1e-16 * (1.0 + d.abs()) {
                    break;
                }
                if v > 0.0 { lo_d = d } else { hi_d = d }
                let newton = d - v / dv;
                d = if newton > lo_d && newton < hi_d { newton } else { 0.5 * (lo_d + hi_d) };
            }
            if row.inequality && lambda[i] + d < 0.0 {
                d = -lambda[i];
            }
            if d != 0.0 {
                lambda[i] += d;
                for &(j, c) in &row.entries {
                    log_x[j] -= d * c;
                }
            }
        }
        let viol = violation(&log_x, &rows);
        let gap = duality_gap(&log_x, &rows, &lambda);
        if viol <= tol && gap.abs() <= tol {
            break;
        }
    }
    let mut x = Array4::zeros(prev.dim());
    for h in 0..hh {
        for s in 0..ss {
            for a in 0..aa {
                for j in 0..ss {
                    x[[h, s, a, j]] = log_x[idx(h, s, a, j)].exp();
                }
            }
        }
    }
    let mut objective = 0.0;
    for h in 0..hh {
        for s in 0..ss {
            for a in 0..aa {
                for j in 0..ss {
                    let (v, p) = (x[[h, s, a, j]], prev[[h, s, a, j]]);
                    objective += eta * reward[[h, s, a]] * v - (v * (v / p).ln() - v + p);
                }
            }
        }
    }
    OracleSolution {
        duality_gap: duality_gap(&log_x, &rows, &lambda),
        max_violation: violation(&log_x, &rows),
        x,
        objective,
        sweeps,
    }
}

/// For `x = x(lambda)` the Lagrangian is minimized, so primal minus dual is `-lambda^T (A x - b)`.
fn duality_gap(log_x: &[f64], rows: &[Row], lambda: &[f64]) -> f64 {
    rows.iter()
        .zip(lambda)
        .map(|(r, &l)| {
            let v: f64 = r.entries.iter().map(|&(j, c)| c * log_x[j].exp()).sum::<f64>() - r.rhs;
            -l * v
        })
        .sum()
}

/// Stochastic policy with i.i.d. uniform weights per row, normalized.
pub fn random_policy(spec: MdpSpec, seed: u64) -> MarkovPolicy {
    use rand::Rng;
    let mut rng = rfexplore::Seed(seed).derive(0x9e37).rng();
    let mut probs = Array3::from_shape_simple_fn(spec.sa_shape(), || rng.random::<f64>() + 1e-3);
    for mut row in probs.rows_mut() {
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    MarkovPolicy::new(probs).unwrap()
}

/// Chain of `len` states where action 0 moves right and every other action stays.
pub fn deterministic_chain(len: usize, actions: usize, horizon: usize) -> TransitionKernel {
    let spec = MdpSpec::new(len, actions, horizon).unwrap();
    let mut probs = Array4::zeros(spec.sas_shape());
    for h in 0..horizon {
        for s in 0..len {
            for a in 0..actions {
                let next = if a == 0 { (s + 1).min(len - 1) } else { s };
                probs[[h, s, a, next]] = 1.0;
            }
        }
    }
    let mut initial = ndarray::Array1::zeros(len);
    initial[0] = 1.0;
    TransitionKernel::new(probs, initial).unwrap()
}

/// L-infinity distance between two equally shaped arrays.
pub fn max_abs_diff<D: ndarray::Dimension>(x: &ndarray::Array<f64, D>, y: &ndarray::Array<f64, D>) -> f64 {
    assert_eq!(x.shape(), y.shape());
    x.iter().zip(y.iter()).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
}
