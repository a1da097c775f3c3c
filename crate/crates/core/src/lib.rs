//! Aggregation of pairwise human preference data into model leaderboards,
//! with demographic, diversity and welfare analyses over the same corpus.

pub mod aggregate;
pub mod corpus;
pub mod demostats;
pub mod error;
pub mod neighborhood;
pub mod ols;
pub mod rng;
pub mod resample;
pub mod scoring;
pub mod stats;
pub mod synthetic;
pub mod textfeat;
pub mod welfare;

pub use error::{Error, Result};
