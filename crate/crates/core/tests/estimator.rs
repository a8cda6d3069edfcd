mod common;

use common::{deterministic_chain, random_policy};
use ndarray::Array2;
use rfexplore::estimator::{
    baseline_uniform, estimate_dynamics, sample_budget, sample_budget_real, Dataset, Setting,
};
use rfexplore::explorer::{create_exploration_policy, exploration_constants, mixture_occupancy, MixturePolicy, Profile};
use rfexplore::mdp::{random_kernel, MarkovPolicy, MdpSpec};
use rfexplore::occupancy::significance_set;
use rfexplore::{Error, Seed};

#[test]
fn deterministic_env_single_component() {
    let kernel = deterministic_chain(4, 2, 3);
    let spec = kernel.spec();
    let policy = MarkovPolicy::deterministic(spec, &Array2::zeros((3, 4))).unwrap();
    let est = estimate_dynamics(&kernel, &MixturePolicy::new(vec![policy]).unwrap(), 25, Seed(1), 1.0).unwrap();
    for h in 0..3 {
        assert_eq!(est.counts.n(h, h, 0), 25);
        assert_eq!(est.model.kernel[[h, h, 0, h + 1]], 1.0);
    }
}

#[test]
fn one_episode_counts() {
    let spec = MdpSpec::new(3, 2, 4).unwrap();
    let kernel = random_kernel(spec, Seed(2));
    let mix = MixturePolicy::new(vec![random_policy(spec, 1), random_policy(spec, 2)]).unwrap();
    let est = estimate_dynamics(&kernel, &mix, 1, Seed(2), 1.0).unwrap();
    for h in 0..4 {
        assert_eq!(est.counts.total_episodes_at(h), 1);
    }
    assert_eq!(est.dataset.len(), 1);
}

#[test]
fn zero_episodes_is_a_config_error() {
    let spec = MdpSpec::new(2, 2, 2).unwrap();
    let kernel = random_kernel(spec, Seed(0));
    let mix = MixturePolicy::new(vec![MarkovPolicy::uniform(spec)]).unwrap();
    let err = estimate_dynamics(&kernel, &mix, 0, Seed(0), 1.0).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(baseline_uniform(&kernel, 0, Seed(0), 1.0).is_err());
}

#[test]
fn counts_sum_to_episodes_times_horizon() {
    let spec = MdpSpec::new(3, 2, 5).unwrap();
    let kernel = random_kernel(spec, Seed(3));
    let est = baseline_uniform(&kernel, 777, Seed(3), 1.0).unwrap();
    assert_eq!(est.counts.pair().sum(), 777 * 5);
    assert_eq!(est.counts.triple().sum(), 777 * 5);
}

#[test]
fn larger_datasets_extend_smaller_ones() {
    let spec = MdpSpec::new(3, 2, 3).unwrap();
    let kernel = random_kernel(spec, Seed(4));
    let mix = MixturePolicy::new((0..4).map(|i| random_policy(spec, i)).collect()).unwrap();
    let small = estimate_dynamics(&kernel, &mix, 50, Seed(9), 1.0).unwrap();
    let large = estimate_dynamics(&kernel, &mix, 200, Seed(9), 1.0).unwrap();
    assert_eq!(&large.dataset.trajectories[..50], &small.dataset.trajectories[..]);
    assert_eq!(small.dataset.policy_hash, large.dataset.policy_hash);
    let again = estimate_dynamics(&kernel, &mix, 200, Seed(9), 1.0).unwrap();
    assert_eq!(again.dataset, large.dataset);
}

#[test]
fn dataset_round_trip() {
    let spec = MdpSpec::new(3, 2, 3).unwrap();
    let kernel = random_kernel(spec, Seed(5));
    let est = baseline_uniform(&kernel, 40, Seed(5), 1.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.jsonl");
    est.dataset.save(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 41);
    assert!(text.lines().next().unwrap().contains("\"N\":40"));
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back, est.dataset);
    assert_eq!(back.counts().unwrap(), est.counts);

    let truncated: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
    assert!(Dataset::read_jsonl(truncated.as_bytes()).is_err());
}

#[test]
fn empirical_model_concentrates() {
    let spec = MdpSpec::new(3, 2, 2).unwrap();
    let kernel = random_kernel(spec, Seed(6));
    let est = baseline_uniform(&kernel, 100_000, Seed(6), 1.0).unwrap();
    for ((h, s, a), &n) in est.counts.pair().indexed_iter() {
        if n >= 1000 {
            let l1: f64 = (0..3).map(|j| (est.model.kernel[[h, s, a, j]] - kernel.probs()[[h, s, a, j]]).abs()).sum();
            assert!(l1 <= 0.05);
        }
    }
}

#[test]
fn significant_triples_get_half_their_share() {
    let spec = MdpSpec::new(3, 2, 3).unwrap();
    let mut good = 0;
    for run in 0..100u64 {
        let kernel = random_kernel(spec, Seed(run));
        let cfg = exploration_constants(&spec, 0.1, 0.1, Profile::Practical).unwrap().with_episodes(&spec, 60).unwrap();
        let x = create_exploration_policy(&kernel, &cfg, Seed(run)).unwrap();
        let mu = mixture_occupancy(&x.mixture, &kernel).unwrap();
        let est = estimate_dynamics(&kernel, &x.mixture, 5000, Seed(run + 1000), 1.0).unwrap();
        let psi = significance_set(&mu, cfg.omega).unwrap();
        let ok = mu.values().indexed_iter().all(|((h, s, a), &m)| {
            !psi.contains(h, s, a) || est.counts.n(h, s, a) as f64 >= 0.5 * 5000.0 * m
        });
        good += ok as usize;
    }
    assert!(good >= 90, "{good}/100");
}

#[test]
fn budget_closed_forms() {
    let spec = MdpSpec::new(2, 2, 2).unwrap();
    let l0 = (8.0_f64 / 0.05).ln();
    let direct = 81.0 * 9440.0 * 48.0 * 2.0 * 2.0 * 8.0 * l0.powi(3) / 0.25;
    let n = sample_budget(Setting::Rae, &spec, 0.5, 0.1, Profile::Theory, 1.0).unwrap();
    assert_eq!(n, direct.ceil() as u64);

    let rae = sample_budget_real(Setting::Rae, &spec, 0.5, 0.1, Profile::Theory, 1.0).unwrap();
    let rfe = sample_budget_real(Setting::Rfe, &spec, 0.5, 0.1, Profile::Theory, 1.0).unwrap();
    assert!((rfe / rae - 8.0).abs() < 1e-12);
}

#[test]
fn halving_epsilon_quadruples_the_practical_budget_up_to_the_log() {
    let spec = MdpSpec::new(3, 2, 3).unwrap();
    let a = sample_budget_real(Setting::Rfe, &spec, 0.2, 0.1, Profile::Practical, 1.0).unwrap();
    let b = sample_budget_real(Setting::Rfe, &spec, 0.1, 0.1, Profile::Practical, 1.0).unwrap();
    let (l_a, l_b) = ((18.0_f64 / 0.02).ln(), (18.0_f64 / 0.01).ln());
    assert!((b / a - 4.0 * l_b / l_a).abs() < 1e-12);
    assert!(matches!(
        sample_budget(Setting::Rae, &spec, 0.1, 0.1, Profile::Practical, 0.0),
        Err(Error::Config(_))
    ));
}
