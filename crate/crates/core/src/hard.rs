//! The lower-bound family: a deterministic binary tree whose leaves fan out to
//! a final layer through near-uniform random rows, with rewards that force the
//! optimal policy to leave the root at one chosen step.
//!
//! Layout for `n` leaves (`n` a power of two, `n >= 2`): layer `l` of the tree
//! holds `2^l` states at indices `2^l - 1 ..`, the final layer holds `2n`
//! absorbing states at indices `2n - 1 ..`, `4n - 1` states in total.

use std::fmt;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, Array4};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{dp_optimal, MarkovPolicy, MdpInstance, MdpSpec, RewardFunction, TransitionKernel};
use crate::rng::Seed;

const CHECK_TOL: f64 = 1e-12;

/// Sizes of the stay, up and down action classes, in that index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionClasses {
    pub stay: usize,
    pub up: usize,
    pub down: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Stay,
    Up,
    Down,
}

impl ActionClasses {
    /// `floor(A/3)` stay and up actions, the rest down.
    pub fn balanced(num_actions: usize) -> Self {
        let k = num_actions / 3;
        ActionClasses { stay: k, up: k, down: num_actions.saturating_sub(2 * k) }
    }

    pub fn num_actions(&self) -> usize {
        self.stay + self.up + self.down
    }

    pub fn class_of(&self, action: usize) -> Move {
        if action < self.stay {
            Move::Stay
        } else if action < self.stay + self.up {
            Move::Up
        } else {
            Move::Down
        }
    }

    /// Lowest action index of a class.
    pub fn first(&self, class: Move) -> usize {
        match class {
            Move::Stay => 0,
            Move::Up => self.stay,
            Move::Down => self.stay + self.up,
        }
    }
}

/// Parameters of one member of the family. `exit_step` and `target` are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardInstanceParams {
    /// Number of tree leaves.
    pub n: usize,
    pub horizon: usize,
    /// Step at which the optimal policy leaves the root, in `1..=ceil(H/4)`.
    pub exit_step: usize,
    /// Leaf that pays 1 at `exit_step + depth`, in `1..=n`.
    pub target: usize,
    /// Final-layer rewards after the target step, one per final state.
    pub nu: Vec<f64>,
    pub classes: ActionClasses,
}

impl HardInstanceParams {
    /// Balanced action classes and `nu = 0`.
    pub fn new(n: usize, horizon: usize, exit_step: usize, target: usize, num_actions: usize) -> Result<Self> {
        let params = HardInstanceParams {
            n,
            horizon,
            exit_step,
            target,
            nu: vec![0.0; 2 * n],
            classes: ActionClasses::balanced(num_actions),
        };
        params.validate()?;
        Ok(params)
    }

    /// Replace `nu` with independent uniform draws on `[0, 1]`.
    pub fn with_uniform_nu(mut self, seed: Seed) -> Self {
        let mut rng = seed.rng();
        self.nu = (0..2 * self.n).map(|_| rng.random::<f64>()).collect();
        self
    }

    pub fn with_nu(mut self, nu: Vec<f64>) -> Result<Self> {
        self.nu = nu;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::config(msg));
        if self.n < 2 || !self.n.is_power_of_two() {
            return fail(format!("tree size n = {} must be a power of two and at least 2", self.n));
        }
        if self.exit_step < 1 || self.exit_step > self.horizon.div_ceil(4) {
            return fail(format!("exit step {} outside 1..={}", self.exit_step, self.horizon.div_ceil(4)));
        }
        if self.horizon < self.depth() + self.exit_step + 1 {
            return fail(format!(
                "horizon {} too short for exit step {} and tree depth {}",
                self.horizon,
                self.exit_step,
                self.depth()
            ));
        }
        if self.target < 1 || self.target > self.n {
            return fail(format!("target leaf {} outside 1..={}", self.target, self.n));
        }
        if self.nu.len() != 2 * self.n || self.nu.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return fail(format!("nu must hold {} values in [0, 1]", 2 * self.n));
        }
        let c = self.classes;
        if c.stay == 0 || c.up == 0 || c.down == 0 {
            return fail(format!("every action class must be nonempty, got {c:?}"));
        }
        Ok(())
    }

    /// Tree depth `log2 n`; leaves sit on this layer.
    pub fn depth(&self) -> usize {
        self.n.trailing_zeros() as usize
    }

    /// Leaf perturbation `1 / (8H)`.
    pub fn epsilon0(&self) -> f64 {
        1.0 / (8.0 * self.horizon as f64)
    }

    pub fn num_states(&self) -> usize {
        4 * self.n - 1
    }

    pub fn spec(&self) -> Result<MdpSpec> {
        MdpSpec::new(self.num_states(), self.classes.num_actions(), self.horizon)
    }

    /// Move taken at tree layer `layer` on the way to the target leaf.
    pub fn path_move(&self, layer: usize) -> Move {
        let bit = ((self.target - 1) >> (self.depth() - 1 - layer)) & 1;
        if bit == 0 {
            Move::Up
        } else {
            Move::Down
        }
    }
}

/// Largest power of two `n` with `4n <= num_states`.
pub fn largest_tree_size(num_states: usize) -> Option<usize> {
    let limit = num_states / 4;
    (limit >= 1).then(|| 1usize << (usize::BITS - 1 - limit.leading_zeros()))
}

/// Position of a state in the layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Tree { layer: usize, index: usize },
    Final { index: usize },
}

fn tree_state(layer: usize, index: usize) -> usize {
    (1 << layer) - 1 + index
}

fn final_state(n: usize, index: usize) -> usize {
    2 * n - 1 + index
}

fn node_of(n: usize, state: usize) -> Node {
    if state >= 2 * n - 1 {
        return Node::Final { index: state - (2 * n - 1) };
    }
    let layer = (usize::BITS - 1 - (state + 1).leading_zeros()) as usize;
    Node::Tree { layer, index: state + 1 - (1 << layer) }
}

/// Deterministic successor of a non-leaf tree state; stay-class actions move up off the root.
fn tree_successor(params: &HardInstanceParams, layer: usize, index: usize, action: usize) -> usize {
    match (params.classes.class_of(action), layer) {
        (Move::Stay, 0) => 0,
        (Move::Down, _) => tree_state(layer + 1, 2 * index + 1),
        _ => tree_state(layer + 1, 2 * index),
    }
}

/// Tree rows, balanced-sign leaf rows drawn per `(h, leaf, a)`, absorbing final layer.
pub fn build_hard_transitions(params: &HardInstanceParams, seed: Seed) -> Result<TransitionKernel> {
    params.validate()?;
    let spec = params.spec()?;
    let (n, depth) = (params.n, params.depth());
    let mut probs = Array4::zeros(spec.sas_shape());
    let mut rng = seed.rng();
    let (high, low) = ((1.0 + params.epsilon0()) / (2 * n) as f64, (1.0 - params.epsilon0()) / (2 * n) as f64);
    let mut signs: Vec<bool> = (0..2 * n).map(|i| i < n).collect();
    for h in 0..spec.horizon {
        for s in 0..spec.num_states {
            for a in 0..spec.num_actions {
                match node_of(n, s) {
                    Node::Tree { layer, .. } if layer == depth => {
                        signs.shuffle(&mut rng);
                        for (x, &plus) in signs.iter().enumerate() {
                            probs[[h, s, a, final_state(n, x)]] = if plus { high } else { low };
                        }
                    }
                    Node::Tree { layer, index } => probs[[h, s, a, tree_successor(params, layer, index, a)]] = 1.0,
                    Node::Final { .. } => probs[[h, s, a, s]] = 1.0,
                }
            }
        }
    }
    let mut initial = Array1::zeros(spec.num_states);
    initial[0] = 1.0;
    TransitionKernel::new(probs, initial)
}

fn expected_reward(params: &HardInstanceParams, h: usize, s: usize, a: usize) -> f64 {
    let exit = params.exit_step - 1;
    let payday = exit + params.depth();
    match node_of(params.n, s) {
        Node::Tree { layer: 0, .. } => {
            let class = params.classes.class_of(a);
            let hit = (h < exit && class == Move::Stay) || (h == exit && class == params.path_move(0));
            f64::from(u8::from(hit))
        }
        Node::Tree { layer, index } if layer == params.depth() => {
            f64::from(u8::from(h == payday && index == params.target - 1))
        }
        Node::Tree { .. } => 0.0,
        Node::Final { index } => {
            if h > payday {
                params.nu[index]
            } else {
                0.0
            }
        }
    }
}

/// The exit-time reward table.
pub fn build_hard_reward(params: &HardInstanceParams) -> Result<RewardFunction> {
    params.validate()?;
    let spec = params.spec()?;
    let values = Array3::from_shape_fn(spec.sa_shape(), |(h, s, a)| expected_reward(params, h, s, a));
    RewardFunction::new(values)
}

/// Kernel, reward and layout of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct HardMdp {
    pub kernel: TransitionKernel,
    pub reward: RewardFunction,
    pub nodes: Vec<Node>,
    pub params: HardInstanceParams,
}

impl HardMdp {
    pub fn build(params: &HardInstanceParams, seed: Seed) -> Result<Self> {
        let kernel = build_hard_transitions(params, seed)?;
        let reward = build_hard_reward(params)?;
        let nodes = (0..params.num_states()).map(|s| node_of(params.n, s)).collect();
        Ok(HardMdp { kernel, reward, nodes, params: params.clone() })
    }

    pub fn instance(&self) -> MdpInstance {
        MdpInstance { kernel: self.kernel.clone(), reward: Some(self.reward.clone()) }
    }

    /// Instance JSON at `path`, parameters next to it.
    pub fn save(&self, path: &Path, sidecar: &Path) -> Result<()> {
        self.instance().save(path)?;
        let doc = HardParamsDocument {
            params: self.params.clone(),
            depth: self.params.depth(),
            epsilon0: self.params.epsilon0(),
            num_states: self.params.num_states(),
            nodes: self.nodes.clone(),
        };
        std::fs::write(sidecar, serde_json::to_string_pretty(&doc)?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HardParamsDocument {
    #[serde(flatten)]
    pub params: HardInstanceParams,
    pub depth: usize,
    pub epsilon0: f64,
    pub num_states: usize,
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HardViolation {
    Shape(String),
    NearUniform { h: usize, s: usize, a: usize, next: usize, value: f64 },
    LeafRowSum { h: usize, s: usize, a: usize, sum: f64 },
    LeafSupport { h: usize, s: usize, a: usize, next: usize },
    TreeRow { h: usize, s: usize, a: usize },
    NotAbsorbing { h: usize, s: usize, a: usize },
    Reward { h: usize, s: usize, a: usize, expected: f64, actual: f64 },
}

impl fmt::Display for HardViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HardViolation::Shape(msg) => write!(f, "shape: {msg}"),
            HardViolation::NearUniform { h, s, a, next, value } => {
                write!(f, "leaf row ({h},{s},{a}) entry {next} = {value} not near uniform")
            }
            HardViolation::LeafRowSum { h, s, a, sum } => write!(f, "leaf row ({h},{s},{a}) sums to {sum}"),
            HardViolation::LeafSupport { h, s, a, next } => {
                write!(f, "leaf row ({h},{s},{a}) puts mass on non-final state {next}")
            }
            HardViolation::TreeRow { h, s, a } => write!(f, "tree row ({h},{s},{a}) is not the expected unit row"),
            HardViolation::NotAbsorbing { h, s, a } => write!(f, "final state row ({h},{s},{a}) is not absorbing"),
            HardViolation::Reward { h, s, a, expected, actual } => {
                write!(f, "reward ({h},{s},{a}) = {actual}, expected {expected}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HardReport {
    pub violations: Vec<HardViolation>,
}

impl HardReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, pred: impl Fn(&HardViolation) -> bool) -> usize {
        self.violations.iter().filter(|v| pred(v)).count()
    }
}

fn unit_row(row: ndarray::ArrayView1<'_, f64>, at: usize) -> bool {
    row.iter().enumerate().all(|(j, &p)| if j == at { (p - 1.0).abs() <= CHECK_TOL } else { p.abs() <= CHECK_TOL })
}

/// Check every row and reward cell against the construction.
pub fn verify_hard_instance(mdp: &HardMdp, params: &HardInstanceParams) -> HardReport {
    let mut report = HardReport::default();
    let v = &mut report.violations;
    let spec = match params.validate().and_then(|_| params.spec()) {
        Ok(spec) => spec,
        Err(e) => {
            v.push(HardViolation::Shape(e.to_string()));
            return report;
        }
    };
    if mdp.kernel.spec() != spec || mdp.reward.values().dim() != spec.sa_shape() {
        v.push(HardViolation::Shape(format!("instance is {:?}, parameters need {spec:?}", mdp.kernel.spec())));
        return report;
    }
    let n = params.n;
    let centre = 1.0 / (2 * n) as f64;
    let width = params.epsilon0() / (2 * n) as f64;
    let probs = mdp.kernel.probs();
    for h in 0..spec.horizon {
        for s in 0..spec.num_states {
            for a in 0..spec.num_actions {
                let row = probs.slice(ndarray::s![h, s, a, ..]);
                match node_of(n, s) {
                    Node::Tree { layer, .. } if layer == params.depth() => {
                        for (next, &p) in row.iter().enumerate() {
                            match node_of(n, next) {
                                Node::Final { .. } if (p - centre).abs() > width * (1.0 + 1e-9) => {
                                    v.push(HardViolation::NearUniform { h, s, a, next, value: p })
                                }
                                Node::Tree { .. } if p != 0.0 => v.push(HardViolation::LeafSupport { h, s, a, next }),
                                _ => {}
                            }
                        }
                        let sum = row.sum();
                        if (sum - 1.0).abs() > CHECK_TOL {
                            v.push(HardViolation::LeafRowSum { h, s, a, sum });
                        }
                    }
                    Node::Tree { layer, index } => {
                        if !unit_row(row, tree_successor(params, layer, index, a)) {
                            v.push(HardViolation::TreeRow { h, s, a });
                        }
                    }
                    Node::Final { .. } => {
                        if !unit_row(row, s) {
                            v.push(HardViolation::NotAbsorbing { h, s, a });
                        }
                    }
                }
                let expected = expected_reward(params, h, s, a);
                let actual = mdp.reward.values()[[h, s, a]];
                if actual != expected {
                    v.push(HardViolation::Reward { h, s, a, expected, actual });
                }
            }
        }
    }
    report
}

/// 1-based step at which the optimal greedy policy first leaves the root, if it does.
pub fn optimal_exit_time(mdp: &HardMdp) -> Result<Option<usize>> {
    let (_, policy) = dp_optimal(&mdp.kernel, &mdp.reward)?;
    let actions = policy.greedy_actions();
    Ok((0..mdp.params.horizon)
        .find(|&h| mdp.params.classes.class_of(actions[[h, 0]]) != Move::Stay)
        .map(|h| h + 1))
}

/// Deterministic policy that stays at the root before `exit_step` (1-based), then
/// walks the tree to the target leaf.
pub fn exit_policy(params: &HardInstanceParams, exit_step: usize) -> Result<MarkovPolicy> {
    params.validate()?;
    let spec = params.spec()?;
    let c = params.classes;
    let actions = Array2::from_shape_fn((spec.horizon, spec.num_states), |(h, s)| match node_of(params.n, s) {
        Node::Tree { layer: 0, .. } if h + 1 < exit_step => c.first(Move::Stay),
        Node::Tree { layer, .. } if layer < params.depth() => c.first(params.path_move(layer)),
        _ => 0,
    });
    MarkovPolicy::deterministic(spec, &actions)
}
