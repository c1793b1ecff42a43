//! Keeping a deployed index tuned as data and queries drift.

pub mod classes;
pub mod episodes;
pub mod outliers;
pub mod predictor;
pub mod retune;

pub use classes::{ClassMap, CLASSES};
pub use episodes::{
    drifting_workloads, modes, prepare, run_episodes, write_episode_csv, Adaptation, EpisodeConfig,
    EpisodeMode, EpisodeRow, Prepared,
};
pub use outliers::{detect_outliers, BlockPerfRecord, OutlierConfig, PerfRecords};
pub use predictor::{query_keys, CostPredictor, SampleTree};
pub use retune::{retune, Scope, ScopeOutcome};
