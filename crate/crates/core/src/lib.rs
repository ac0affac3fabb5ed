//! Orchestrator for supplement generation training: sample typed supplements
//! from a generator model, score them through a frozen actor with a binary
//! proxy reward, build warm-start SFT and iterative DPO preference datasets,
//! and report scores and supplement-type distributions.

pub mod analytics;
pub mod backend;
pub mod bench;
pub mod dpo;
pub mod journal;
pub mod pipeline;
pub mod reward;
pub mod sampling;
pub mod seed;
pub mod sft;
pub mod stratify;
pub mod supplement;
pub mod synthetic;

pub use bench::{Split, TaskInstance};
pub use reward::{Reward, RewardKind, ScoredSample};
pub use supplement::{parse_supplement, Predefined, Supplement, SupplementType};
