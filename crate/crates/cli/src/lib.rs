//! Experiment runner library behind the `misrank` binary: declarative
//! configs, fold orchestration across feature pipelines and model grids,
//! and persistence of metrics, rankings, and fold plans.

pub mod config;
pub mod experiment;
pub mod report;
