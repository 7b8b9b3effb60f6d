//! Datasets, run directories, plots and oracle self-tests around
//! `msnode-core`.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod plot;
pub mod report;
pub mod selftest;
