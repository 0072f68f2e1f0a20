//! Knowledge-graph-aware recommendation with ripple-set item encoding and a
//! recurrent user encoder.

pub mod bundle;
pub mod cli;
pub mod config;
pub mod data;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod graph;
pub mod ids;
pub mod item_encoder;
pub mod model;
pub mod movielens;
pub mod numeric;
pub mod rng;
pub mod synthetic;
pub mod trainer;
pub mod user_encoder;
pub mod vocab;

pub use config::TrainConfig;
pub use dataset::Dataset;
pub use error::{Error, Result};
pub use ids::{EntityId, ItemId, RelationId, UserId};
