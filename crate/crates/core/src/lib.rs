//! Reward-free and reward-agnostic exploration for tabular episodic MDPs.
//!
//! The pipeline: build an exploration mixture by mirror descent over occupancy
//! measures ([`explorer`]), collect a dataset with it ([`estimator`]), then plan
//! pessimistically for any reward revealed afterwards ([`planner`]).

pub mod confidence;
pub mod error;
pub mod estimator;
pub mod explorer;
pub mod hard;
pub mod harness;
pub mod mdp;
pub mod occupancy;
pub mod omd;
pub mod planner;
pub mod rng;
pub mod tensor;

pub use confidence::{EmpiricalModel, VisitCounts};
pub use error::{Error, Result};
pub use mdp::{MarkovPolicy, MdpInstance, MdpSpec, RewardFunction, Trajectory, TransitionKernel, ValueTable};
pub use occupancy::{AugmentedOccupancy, OccupancyMeasure, SignificanceSet};
pub use rng::Seed;
