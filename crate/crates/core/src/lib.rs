//! Reasoning-alignment toolkit for survival-outcome prediction.

pub mod coldstart;
pub mod config;
pub mod embed;
pub mod grpo;
pub mod jsonl;
pub mod metrics;
pub mod pipeline;
pub mod policy;
pub mod records;
pub mod reward;
pub mod sft;
pub mod toy;
pub mod trace;
