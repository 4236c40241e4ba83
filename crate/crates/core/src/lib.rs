//! Category generation over an entity/category knowledge base.

pub mod candidates;
pub mod context;
pub mod dataset;
pub mod error;
pub mod features;
pub mod files;
pub mod forest;
pub mod index;
pub mod kb;
pub mod metrics;
pub mod pipeline;
pub mod ranking;
pub mod synth;
pub mod text;
pub mod topic;

pub use context::KbContext;
pub use error::{Error, Result};
pub use kb::{CategoryHierarchy, CategoryId, CategoryRecord, EntityId, EntityRecord, EntitySetInput};
