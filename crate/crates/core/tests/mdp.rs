mod common;

use common::{all_deterministic_policies, deterministic_chain, enumerate_return, enumerate_state_value, random_policy};
use ndarray::{array, Array1, Array3, Array4};
use proptest::prelude::*;
use rfexplore::mdp::{
    dp_optimal, dp_policy_eval, random_kernel, random_reward, sample_trajectory, validate_kernel, KernelViolation,
    MarkovPolicy, MdpInstance, MdpSpec, RewardFunction, TransitionKernel,
};
use rfexplore::occupancy::occupancy_from_policy;
use rfexplore::Seed;

#[test]
fn one_step_value() {
    let spec = MdpSpec::new(1, 2, 1).unwrap();
    let kernel = TransitionKernel::new(Array4::ones((1, 1, 2, 1)), array![1.0]).unwrap();
    let reward = RewardFunction::new(array![[[0.3, 0.7]]]).unwrap();
    let first = MarkovPolicy::deterministic(spec, &array![[0]]).unwrap();
    let table = dp_policy_eval(&kernel, &reward, &first).unwrap();
    assert_eq!(table.v[[0, 0]], 0.3);

    let (best, policy) = dp_optimal(&kernel, &reward).unwrap();
    assert_eq!(best.v[[0, 0]], 0.7);
    assert_eq!(policy.greedy_actions()[[0, 0]], 1);
}

#[test]
fn zero_and_unit_rewards() {
    let spec = MdpSpec::new(3, 2, 4).unwrap();
    let kernel = random_kernel(spec, Seed(5));
    let zero = RewardFunction::zeros(spec);
    let table = dp_policy_eval(&kernel, &zero, &random_policy(spec, 1)).unwrap();
    assert!(table.v.iter().chain(table.q.iter()).all(|&x| x == 0.0));

    let ones = RewardFunction::constant(spec, 1.0).unwrap();
    let (best, _) = dp_optimal(&kernel, &ones).unwrap();
    for s in 0..3 {
        assert!((best.v[[0, s]] - 4.0).abs() < 1e-12);
    }
}

#[test]
fn evaluation_matches_trajectory_enumeration() {
    let spec = MdpSpec::new(3, 2, 3).unwrap();
    for seed in 0..20 {
        let kernel = random_kernel(spec, Seed(seed));
        let reward = random_reward(spec, Seed(seed + 100));
        for k in 0..5 {
            let policy = random_policy(spec, seed * 10 + k);
            let table = dp_policy_eval(&kernel, &reward, &policy).unwrap();
            let oracle = enumerate_return(&kernel, reward.values(), &policy);
            assert!((table.initial_value(kernel.initial()) - oracle).abs() <= 1e-10);
            for s in 0..3 {
                let v = enumerate_state_value(&kernel, reward.values(), &policy, s);
                assert!((table.v[[0, s]] - v).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn optimum_dominates_every_deterministic_policy() {
    let spec = MdpSpec::new(3, 2, 3).unwrap();
    let kernel = random_kernel(spec, Seed(17));
    let reward = random_reward(spec, Seed(18));
    let (best, _) = dp_optimal(&kernel, &reward).unwrap();
    let policies = all_deterministic_policies(spec);
    assert_eq!(policies.len(), 512);
    let mut top = f64::NEG_INFINITY;
    for p in &policies {
        let v = dp_policy_eval(&kernel, &reward, p).unwrap();
        for ((h, s), &x) in v.v.indexed_iter() {
            assert!(best.v[[h, s]] >= x - 1e-12);
        }
        top = top.max(enumerate_return(&kernel, reward.values(), p));
    }
    assert!((best.initial_value(kernel.initial()) - top).abs() <= 1e-10);
}

#[test]
fn deterministic_rollout_ignores_seed() {
    let kernel = deterministic_chain(4, 2, 5);
    let spec = kernel.spec();
    let policy = MarkovPolicy::deterministic(spec, &ndarray::Array2::zeros((5, 4))).unwrap();
    let first = sample_trajectory(&kernel, &policy, Seed(1)).unwrap();
    for seed in 2..20 {
        assert_eq!(sample_trajectory(&kernel, &policy, Seed(seed)).unwrap(), first);
    }
    assert_eq!(first.states, vec![0, 1, 2, 3, 3, 3]);
    assert_eq!(first.actions, vec![0; 5]);
}

#[test]
fn same_seed_same_trajectory() {
    let spec = MdpSpec::new(4, 3, 6).unwrap();
    let kernel = random_kernel(spec, Seed(2));
    let policy = random_policy(spec, 3);
    let a = sample_trajectory(&kernel, &policy, Seed(99)).unwrap();
    let b = sample_trajectory(&kernel, &policy, Seed(99)).unwrap();
    assert_eq!(a, b);
    a.validate(&spec).unwrap();
}

#[test]
fn visit_frequencies_within_four_sigma() {
    let spec = MdpSpec::new(2, 2, 3).unwrap();
    let kernel = random_kernel(spec, Seed(4));
    let policy = random_policy(spec, 4);
    let mu = occupancy_from_policy(&kernel, &policy).unwrap();
    let runs = 100_000usize;
    let mut freq = Array3::<f64>::zeros(spec.sa_shape());
    for i in 0..runs {
        let t = sample_trajectory(&kernel, &policy, Seed(1_000_000 + i as u64)).unwrap();
        for h in 0..3 {
            freq[[h, t.states[h], t.actions[h]]] += 1.0;
        }
    }
    for ((h, s, a), &count) in freq.indexed_iter() {
        let p = mu.values()[[h, s, a]];
        let sigma = (p * (1.0 - p) / runs as f64).sqrt();
        assert!((count / runs as f64 - p).abs() <= 4.0 * sigma + 1e-12, "({h},{s},{a})");
    }
}

#[test]
fn short_row_is_reported() {
    let spec = MdpSpec::new(2, 2, 2).unwrap();
    let kernel = random_kernel(spec, Seed(0));
    assert!(validate_kernel(kernel.probs(), kernel.initial()).is_valid());

    let mut probs = kernel.probs().clone();
    let total: f64 = (0..2).map(|j| probs[[1, 0, 1, j]]).sum();
    for j in 0..2 {
        probs[[1, 0, 1, j]] *= 0.9 / total;
    }
    let report = validate_kernel(&probs, kernel.initial());
    assert_eq!(report.violations.len(), 1);
    assert!(matches!(report.violations[0], KernelViolation::RowSum { h: 1, s: 0, a: 1, .. }));
}

#[test]
fn negative_entry_is_reported() {
    let mut probs = Array4::zeros((1, 2, 1, 2));
    probs[[0, 0, 0, 0]] = 1.1;
    probs[[0, 0, 0, 1]] = -0.1;
    probs[[0, 1, 0, 1]] = 1.0;
    let report = validate_kernel(&probs, &Array1::from_elem(2, 0.5));
    assert!(report
        .violations
        .iter()
        .any(|v| matches!(v, KernelViolation::Negative { h: 0, s: 0, a: 0, next: 1, .. })));
    assert!(TransitionKernel::new(probs, Array1::from_elem(2, 0.5)).is_err());
}

#[test]
fn instance_json_is_lossless() {
    let spec = MdpSpec::new(3, 2, 4).unwrap();
    let instance = MdpInstance { kernel: random_kernel(spec, Seed(8)), reward: Some(random_reward(spec, Seed(9))) };
    let back = MdpInstance::from_json(&instance.to_json().unwrap()).unwrap();
    assert_eq!(back, instance);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn optimum_dominates_random_policies(seed in 0u64..10_000, s in 1usize..4, a in 1usize..3, h in 1usize..4) {
        let spec = MdpSpec::new(s, a, h).unwrap();
        let kernel = random_kernel(spec, Seed(seed));
        let reward = random_reward(spec, Seed(seed ^ 0xff));
        let (best, _) = dp_optimal(&kernel, &reward).unwrap();
        let policy = random_policy(spec, seed);
        let table = dp_policy_eval(&kernel, &reward, &policy).unwrap();
        for ((hh, ss), &x) in table.v.indexed_iter() {
            prop_assert!(best.v[[hh, ss]] >= x - 1e-12);
        }
        let oracle = enumerate_return(&kernel, reward.values(), &policy);
        prop_assert!((table.initial_value(kernel.initial()) - oracle).abs() <= 1e-10);
    }
}
