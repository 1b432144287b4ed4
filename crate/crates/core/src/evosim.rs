//! Generational lexicase evolution on NK landscapes.
//!
//! Used to check assembly-graph predictions: runs start from an all-zeros
//! population, reproduce asexually through lexicase selection and
//! independent per-site bit flips, and report which phenotypes are present
//! at the end.
//!
//! Randomness: replicate `r` of a run seeded with `s` draws from
//! `ChaCha8Rng::seed_from_u64(s)` switched to stream `r`, so replicates are
//! independent of each other and of the number of worker threads.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::sinks;
use crate::cag::AssemblyGraph;
use crate::landscape::{LandscapeError, NkLandscape, PhenotypeIndex, DEFAULT_ENUMERATION_CAP};
use crate::lexicase::Community;
use crate::phenonet::score_fingerprint;

/// Phenotypes below this share of the final population are treated as
/// transient mutants by the filtered matcher.
pub const ABUNDANCE_FLOOR: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("population is empty")]
    EmptyPopulation,
    #[error("individual {index} has {found} scores, expected {expected}")]
    RaggedScores {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid simulation configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Landscape(#[from] LandscapeError),
    #[error("graph was not built from this landscape")]
    GraphMismatch,
}

/// One lexicase selection event: criteria in random order, keep only the
/// elite of the pool on each, then a uniform draw among what is left.
pub fn lexicase_select<R: Rng + ?Sized>(population: &[&[f64]], rng: &mut R) -> Result<usize, SimError> {
    let first = population.first().ok_or(SimError::EmptyPopulation)?;
    let width = first.len();
    if let Some((index, s)) = population.iter().enumerate().find(|(_, s)| s.len() != width) {
        return Err(SimError::RaggedScores {
            index,
            expected: width,
            found: s.len(),
        });
    }
    let mut order: Vec<usize> = (0..width).collect();
    order.shuffle(rng);
    let mut pool: Vec<usize> = (0..population.len()).collect();
    for c in order {
        if pool.len() == 1 {
            break;
        }
        let best = pool
            .iter()
            .map(|&i| population[i][c])
            .fold(f64::NEG_INFINITY, f64::max);
        pool.retain(|&i| population[i][c] == best);
    }
    Ok(pool[rng.gen_range(0..pool.len())])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub population_size: usize,
    pub generations: usize,
    pub per_site_mutation_rate: f64,
    pub seed: u64,
    /// Record the phenotypes present after every generation.
    #[serde(default)]
    pub record_trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            population_size: 100,
            generations: 500,
            per_site_mutation_rate: 0.001,
            seed: 0,
            record_trace: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.population_size == 0 {
            return Err(SimError::InvalidConfig("population size must be positive".into()));
        }
        if self.generations == 0 {
            return Err(SimError::InvalidConfig("generations must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.per_site_mutation_rate) {
            return Err(SimError::InvalidConfig(format!(
                "mutation rate {} is not in [0, 1)",
                self.per_site_mutation_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    /// Every phenotype present in the final generation.
    pub final_community: Community,
    /// Phenotypes holding at least [`ABUNDANCE_FLOOR`] of the final
    /// population.
    pub filtered_community: Community,
    /// Final `(phenotype, individuals)` counts, by phenotype id.
    pub abundances: Vec<(usize, usize)>,
    /// Genotype index of every final individual.
    pub final_genotypes: Vec<u64>,
    pub trace: Option<Vec<Community>>,
}

pub fn run_evolution(landscape: &NkLandscape, cfg: &SimConfig) -> Result<SimResult, SimError> {
    let index = landscape.phenotype_index(DEFAULT_ENUMERATION_CAP)?;
    run_stream(landscape, &index, cfg, 0)
}

fn run_stream(landscape: &NkLandscape, index: &PhenotypeIndex, cfg: &SimConfig, stream: u64) -> Result<SimResult, SimError> {
    cfg.validate()?;
    let n = landscape.n();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let mut population = vec![0u64; cfg.population_size];
    let mut trace = cfg.record_trace.then(Vec::new);

    for _ in 0..cfg.generations {
        // Lexicase over individuals only ever ends in a tie between copies
        // of one phenotype, so select a phenotype over the distinct score
        // vectors and then an individual of it uniformly.
        let mut groups: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
        for &g in &population {
            groups.entry(index.phenotype_of(g)).or_default().push(g);
        }
        let members: Vec<(&usize, &Vec<u64>)> = groups.iter().collect();
        let scores: Vec<&[f64]> = members.iter().map(|(&p, _)| index.scores(p)).collect();
        let mut next = Vec::with_capacity(cfg.population_size);
        for _ in 0..cfg.population_size {
            let winner = lexicase_select(&scores, &mut rng)?;
            let individuals = members[winner].1;
            let mut child = individuals[rng.gen_range(0..individuals.len())];
            if cfg.per_site_mutation_rate > 0.0 {
                for site in 0..n {
                    if rng.gen::<f64>() < cfg.per_site_mutation_rate {
                        child ^= 1 << (n - 1 - site);
                    }
                }
            }
            next.push(child);
        }
        population = next;
        if let Some(t) = trace.as_mut() {
            t.push(Community::new(population.iter().map(|&g| index.phenotype_of(g))).expect("non-empty"));
        }
    }

    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &g in &population {
        *counts.entry(index.phenotype_of(g)).or_default() += 1;
    }
    let final_community = Community::new(counts.keys().copied()).expect("non-empty");
    let floor = ABUNDANCE_FLOOR * cfg.population_size as f64;
    let filtered = counts
        .iter()
        .filter(|&(_, &c)| c as f64 >= floor)
        .map(|(&p, _)| p);
    let filtered_community = Community::new(filtered).unwrap_or_else(|_| {
        let (&top, _) = counts.iter().max_by_key(|&(p, c)| (*c, std::cmp::Reverse(*p))).expect("non-empty");
        Community::singleton(top)
    });
    Ok(SimResult {
        final_community,
        filtered_community,
        abundances: counts.into_iter().collect(),
        final_genotypes: population,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: u64,
    pub final_community: Community,
    pub filtered_community: Community,
    /// Sink node equal to the unfiltered final community.
    pub exact_sink: Option<usize>,
    /// Sink node equal to the abundance-filtered final community.
    pub filtered_sink: Option<usize>,
}

/// Final communities of `replicates` independent runs; no graph involved.
pub fn run_replicates(landscape: &NkLandscape, cfg: &SimConfig, replicates: u64) -> Result<Vec<SimResult>, SimError> {
    cfg.validate()?;
    let index = landscape.phenotype_index(DEFAULT_ENUMERATION_CAP)?;
    (0..replicates)
        .into_par_iter()
        .map(|r| run_stream(landscape, &index, cfg, r))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationTally {
    pub per_site_mutation_rate: f64,
    pub replicates: Vec<ReplicateOutcome>,
    /// `(sink node, community, filtered matches)` for every predicted sink.
    pub sink_counts: Vec<(usize, Community, usize)>,
    /// Replicates whose filtered community is not a predicted sink.
    pub other: usize,
    pub exact_matches: usize,
    pub filtered_matches: usize,
}

impl ValidationTally {
    pub fn filtered_fraction(&self) -> f64 {
        if self.replicates.is_empty() {
            0.0
        } else {
            self.filtered_matches as f64 / self.replicates.len() as f64
        }
    }
}

/// Whether `graph` was built from the phenotype network of `landscape`.
pub fn graph_matches_landscape(landscape: &NkLandscape, graph: &AssemblyGraph) -> Result<bool, SimError> {
    let index = landscape.phenotype_index(DEFAULT_ENUMERATION_CAP)?;
    let fingerprint = score_fingerprint((0..index.len()).map(|p| index.scores(p)));
    let meta = graph.metadata();
    Ok(meta.network_fingerprint == fingerprint && meta.phenotype_count == index.len())
}

/// Runs replicates and compares their final communities with the sinks of
/// `graph`.
pub fn validate(
    landscape: &NkLandscape,
    cfg: &SimConfig,
    replicates: u64,
    graph: &AssemblyGraph,
) -> Result<ValidationTally, SimError> {
    if !graph_matches_landscape(landscape, graph)? {
        return Err(SimError::GraphMismatch);
    }
    let sink_nodes = sinks(graph);
    let sink_of = |c: &Community| {
        sink_nodes
            .iter()
            .copied()
            .find(|&s| &graph.nodes()[s].community == c)
    };
    let results = run_replicates(landscape, cfg, replicates)?;
    let outcomes: Vec<ReplicateOutcome> = results
        .into_iter()
        .enumerate()
        .map(|(r, res)| ReplicateOutcome {
            replicate: r as u64,
            exact_sink: sink_of(&res.final_community),
            filtered_sink: sink_of(&res.filtered_community),
            final_community: res.final_community,
            filtered_community: res.filtered_community,
        })
        .collect();
    let sink_counts = sink_nodes
        .iter()
        .map(|&s| {
            let hits = outcomes.iter().filter(|o| o.filtered_sink == Some(s)).count();
            (s, graph.nodes()[s].community.clone(), hits)
        })
        .collect();
    let filtered_matches = outcomes.iter().filter(|o| o.filtered_sink.is_some()).count();
    Ok(ValidationTally {
        per_site_mutation_rate: cfg.per_site_mutation_rate,
        exact_matches: outcomes.iter().filter(|o| o.exact_sink.is_some()).count(),
        other: outcomes.len() - filtered_matches,
        filtered_matches,
        sink_counts,
        replicates: outcomes,
    })
}
