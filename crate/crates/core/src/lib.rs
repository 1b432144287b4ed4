//! Community assembly graphs for lexicase selection.
//!
//! The crate models evolution under lexicase selection as a random walk over
//! stable communities of phenotypes. The pipeline is:
//!
//! 1. obtain a [`PhenotypeNetwork`] (mutation probabilities between score
//!    vectors), either from an exhaustively enumerated [`NkLandscape`] or by
//!    aggregating externally sampled mutants ([`phenonet::aggregate_samples`]);
//! 2. build an [`AssemblyGraph`] over stable communities, exhaustively
//!    ([`cag::build_full`]) or with a node budget ([`cag::build_bounded`]);
//! 3. ask reachability questions of the graph ([`analysis`]);
//! 4. check the predictions against simulated evolution ([`evosim`]).

pub mod analysis;
pub mod cag;
pub mod evosim;
pub mod landscape;
pub mod lexicase;
pub mod phenonet;

pub use analysis::{ReachabilityReport, Target};
pub use cag::{AssemblyGraph, CagEdge, CagNode, NodeStatus, SelfLoops};
pub use landscape::{Genotype, NkLandscape};
pub use lexicase::{Community, ScoreLookup, SelectionDistribution, StabilityConfig};
pub use phenonet::{MutantSampleRecord, Phenotype, PhenotypeNetwork};
