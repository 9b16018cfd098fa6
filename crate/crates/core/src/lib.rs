//! Bayesian phylogeographic and ecological clustering.
//!
//! Given non-recombinant DNA sequences, sampling coordinates and optional
//! environmental covariates, this crate infers a posterior over haplotype-tree
//! roots, migration counts and geographically coherent clusters via MCMC, and
//! exports summaries and geospatial artifacts.
//!
//! Pipeline: [`seqio`] parses inputs and collapses sequences to haplotypes,
//! [`haplonet`] builds the relaxed-parsimony network, [`ordering`] scores
//! rooted trees through temporal-ordering counts, [`clustmodel`] defines the
//! migration-constrained Gaussian clustering model, [`sampler`] runs the
//! chains, and [`summaries`]/[`export`] turn the archive into reports, KML,
//! Newick, SVG and JSON outputs. [`synthgen`] forward-simulates datasets for
//! recovery testing.

pub mod archive;
pub mod cli;
pub mod clustmodel;
pub mod error;
pub mod export;
pub mod haplonet;
pub mod ordering;
pub mod relabel;
pub mod sampler;
pub mod seqio;
pub mod stats;
pub mod summaries;
pub mod synthgen;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
