//! Recurrent policy that emits per-group hyper-parameters, and its training loop.

pub mod features;
pub mod model;
pub mod policy;
pub mod reward;
pub mod search;
pub mod updater;

pub use features::{Decision, Layout};
pub use model::Model;
pub use policy::{greedy, sample, SampleOptions, Trace};
pub use reward::{compute_reward, Baseline};
pub use search::{search, search_with, write_trace_csv, Evaluation, Evaluator, SearchResult, TrainConfig};
pub use updater::{updaters, PolicyUpdater, Rollout, UpdateParams};
