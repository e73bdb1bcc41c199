//! Distribution-aware preference-pair construction for DPO.
//!
//! Rewards of the `n` sampled responses to a prompt are treated as a normal
//! distribution. Responses are picked at anchor points of that distribution
//! (`min`, `mu ± k sigma`, `max`) and paired into preference datasets. The
//! crate also provides the conventional max/min pairing, the scalable
//! pairing (rejected from a fixed pool of the first five generations, chosen
//! from all `n`), and a small lab for checking how those choices behave:
//!
//! * [`synth`]: seeded Gaussian reward populations,
//! * [`evt`]: extreme-value approximations with Monte Carlo checks,
//! * [`dpo`]: a toy DPO trainer with exact gradients,
//! * [`harness`]: sweeps over strategies, budgets and seeds.
//!
//! Records move between stages as JSONL ([`data`]); reports are CSV.

pub mod data;
pub mod dpo;
pub mod evt;
pub mod harness;
pub mod numeric;
pub mod pairs;
pub mod pipeline;
pub mod seed;
pub mod stats;
pub mod synth;

pub use data::{DatasetManifest, PreferencePair, PromptGroup, ScoredSample};
pub use pairs::{PairOutcome, StrategySpec};
pub use stats::{Anchor, AnchorSelection, RewardStats};
