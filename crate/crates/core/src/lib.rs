//! Analytics for online restaurant-rating data.
//!
//! The pipeline ingests rating tables (JSON-lines or CSV), computes per-user
//! and per-restaurant statistics, segments raters into deflating / inflating
//! cohorts by percentile thresholds on their mean rating, fits two rating
//! regressions, and runs a seeded bootstrap experiment that measures how well
//! each cohort's samples predict restaurant score categories. A synthetic-data
//! generator with known latent structure backs the test suite.

pub mod aggregates;
pub mod bootstrap;
pub mod cli;
pub mod error;
pub mod ingest;
pub mod pipeline;
pub mod regression;
pub mod report;
pub mod segmentation;
pub mod synthdata;
pub mod table;

pub use error::{Error, Result};
