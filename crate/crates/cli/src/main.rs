use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rfexplore::confidence::{log_factor, ModelDocument};
use rfexplore::estimator::{estimate_dynamics, Setting};
use rfexplore::explorer::{
    create_exploration_policy, exploration_constants_with, ExplorationArtifact, PracticalConstants, Profile,
};
use rfexplore::hard::{HardInstanceParams, HardMdp};
use rfexplore::harness::{evaluate_suboptimality, lemma_checks, run_pipeline, sweep, ExperimentConfig};
use rfexplore::mdp::{reward_from_json, MdpInstance};
use rfexplore::planner::{pessimistic_plan, PenaltyKind, PlanArtifact};
use rfexplore::{Error, Result, Seed};

#[derive(Parser)]
#[command(name = "rfexplore", version, about = "Reward-free exploration and pessimistic planning for tabular MDPs")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Theory,
    Practical,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Theory => Profile::Theory,
            ProfileArg::Practical => Profile::Practical,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SettingArg {
    Rae,
    Rfe,
}

#[derive(Clone, Copy, ValueEnum)]
enum NuArg {
    Zero,
    Uniform,
}

#[derive(Subcommand)]
enum Command {
    /// Build the exploration mixture for an MDP.
    Explore {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        /// Fixed episode count.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Collect a dataset with a saved mixture and write the empirical model.
    Estimate {
        #[arg(long)]
        mdp: PathBuf,
        /// Exploration artifact from `explore`.
        #[arg(long)]
        policy: PathBuf,
        #[arg(long = "N")]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        /// Where to write the trajectories (JSONL).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Plan pessimistically on a saved model for one reward.
    Plan {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        reward: PathBuf,
        #[arg(long, value_enum, default_value = "rfe")]
        setting: SettingArg,
        #[arg(long, default_value_t = 1)]
        class_size: usize,
        #[arg(long)]
        c_a: Option<f64>,
        #[arg(long)]
        c_f: Option<f64>,
    },
    /// One explore, estimate, plan, evaluate run from a config.
    Pipeline,
    /// Grid sweep from a config, written as CSV.
    Sweep,
    /// Generate a lower-bound instance and its parameter sidecar.
    HardGen {
        #[arg(long)]
        n: usize,
        #[arg(long = "H")]
        horizon: usize,
        #[arg(long)]
        hprime: usize,
        #[arg(long)]
        xprime: usize,
        #[arg(long, default_value_t = 3)]
        actions: usize,
        #[arg(long, value_enum, default_value = "zero")]
        nu: NuArg,
    },
    /// Exact suboptimality of a planned policy.
    Eval {
        #[arg(long)]
        mdp: PathBuf,
        /// Plan artifact from `plan`.
        #[arg(long)]
        policy: PathBuf,
        /// Reward file; defaults to the reward stored in the instance.
        #[arg(long)]
        reward: Option<PathBuf>,
    },
    /// Check the self-normalized sum inequalities on random sequences.
    LemmaCheck {
        #[arg(long, default_value_t = 1000)]
        count: usize,
    },
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                stdout.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().ok_or_else(|| Error::config("--config is required"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(p) = cli.profile {
        cfg.profile = p.into();
    }
    Ok(cfg)
}

fn sidecar_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "hard".into());
    out.with_file_name(format!("{stem}.params.json"))
}

fn run(cli: &Cli) -> Result<()> {
    let seed = Seed(cli.seed);
    let profile = cli.profile.map(Profile::from).unwrap_or_default();
    match &cli.command {
        Command::Explore { mdp, epsilon, delta, episodes } => {
            let instance = MdpInstance::load(mdp)?;
            let practical = PracticalConstants { episodes: *episodes, ..Default::default() };
            let mut cfg = exploration_constants_with(&instance.spec(), *epsilon, *delta, profile, &practical)?;
            if let (Profile::Theory, Some(t)) = (profile, episodes) {
                cfg = cfg.with_episodes(&instance.spec(), *t)?;
            }
            eprintln!(
                "profile {profile}: c = {}, omega = {:e}, T = {} (formula {:.3e}), B = {:e}, G = {}",
                cfg.c, cfg.omega, cfg.episodes, cfg.formula_episodes, cfg.reward_bound, cfg.reward_budget
            );
            let exploration = create_exploration_policy(&instance.kernel, &cfg, seed)?;
            emit(&cli.out, &serde_json::to_string(&ExplorationArtifact::new(&exploration))?)
        }
        Command::Estimate { mdp, policy, n, epsilon, delta, dataset } => {
            let instance = MdpInstance::load(mdp)?;
            let mixture = ExplorationArtifact::load(policy)?.mixture()?;
            let l0 = log_factor(&instance.spec(), *delta, *epsilon)?;
            let est = estimate_dynamics(&instance.kernel, &mixture, *n, seed, l0)?;
            if let Some(path) = dataset {
                est.dataset.save(path)?;
            }
            emit(&cli.out, &serde_json::to_string(&ModelDocument::new(&est.model, &est.counts))?)
        }
        Command::Plan { model, reward, setting, class_size, c_a, c_f } => {
            let doc: ModelDocument = serde_json::from_str(&fs::read_to_string(model)?)?;
            let (model, counts) = doc.into_parts()?;
            let reward = reward_from_json(&fs::read_to_string(reward)?, &model.spec())?;
            let default = |s| match profile {
                Profile::Theory => rfexplore::estimator::theory_penalty_constant(s),
                Profile::Practical => 1.0,
            };
            let kind = match setting {
                SettingArg::Rae => {
                    PenaltyKind::Rae { c_a: c_a.unwrap_or(default(Setting::Rae)), class_size: *class_size }
                }
                SettingArg::Rfe => PenaltyKind::Rfe { c_f: c_f.unwrap_or(default(Setting::Rfe)) },
            };
            let plan = pessimistic_plan(&reward, &model, &counts, kind)?;
            emit(&cli.out, &serde_json::to_string_pretty(&PlanArtifact::new(&plan))?)
        }
        Command::Pipeline => {
            let cfg = load_config(cli)?;
            let record = run_pipeline(&cfg, cli.seed)?;
            emit(&cli.out, &serde_json::to_string_pretty(&record)?)
        }
        Command::Sweep => {
            let cfg = load_config(cli)?;
            let report = sweep(&cfg)?;
            let out = cli.out.clone().or_else(|| cfg.out.as_ref().map(|d| d.join("sweep.csv")));
            match &out {
                Some(path) => {
                    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                        fs::create_dir_all(dir)?;
                    }
                    report.save_csv(path)?;
                }
                None => report.write_csv(io::stdout().lock())?,
            }
            if let Some(bad) = report.first_error() {
                eprintln!("{} failed runs; first: {}", report.records.iter().filter(|r| r.error.is_some()).count(),
                    bad.error.as_deref().unwrap_or(""));
            }
            Ok(())
        }
        Command::HardGen { n, horizon, hprime, xprime, actions, nu } => {
            let mut params = HardInstanceParams::new(*n, *horizon, *hprime, *xprime, *actions)?;
            if let NuArg::Uniform = nu {
                params = params.with_uniform_nu(seed.derive(1));
            }
            let hard = HardMdp::build(&params, seed)?;
            match &cli.out {
                Some(path) => hard.save(path, &sidecar_path(path)),
                None => emit(&None, &hard.instance().to_json()?),
            }
        }
        Command::Eval { mdp, policy, reward } => {
            let instance = MdpInstance::load(mdp)?;
            let policy = PlanArtifact::load(policy)?.policy()?;
            let reward = match reward {
                Some(path) => reward_from_json(&fs::read_to_string(path)?, &instance.spec())?,
                None => instance.reward.clone().ok_or_else(|| Error::config("instance has no reward; pass --reward"))?,
            };
            let gap = evaluate_suboptimality(&policy, &instance.kernel, &reward)?;
            emit(&cli.out, &serde_json::json!({ "gap": gap }).to_string())
        }
        Command::LemmaCheck { count } => {
            let report = lemma_checks(seed, *count);
            emit(&cli.out, &serde_json::to_string_pretty(&report)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
