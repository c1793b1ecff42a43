//! Hybrid in-memory index built from ordered and hashed blocks, with a
//! policy-gradient search over its structure.

pub mod block;
pub mod controller;
pub mod bloom;
pub mod error;
pub mod group;
pub mod hash;
pub mod incremental;
pub mod index;
pub mod key;
pub mod ops;
pub mod param_index;
pub mod params;
pub mod registry;
pub mod shapes;
pub mod stats;
pub mod tree;
pub mod workload;

pub use error::{Error, Result};
pub use index::{LogicalIndex, PhysicalIndex};
pub use key::{Key, KeyRange, Offset};
pub use ops::QueryResult;
pub use param_index::ParameterIndex;
pub use params::{BlockKind, HyperParams};
