//! Graph-guided de-identification of psychiatric case narratives.

pub mod baselines;
pub mod cli;
pub mod converter;
pub mod evaluator;
pub mod gateway;
pub mod graph;
pub mod narrator;
pub mod perturber;
pub mod relations;
pub mod structured;
pub mod temporal;
pub mod text;
