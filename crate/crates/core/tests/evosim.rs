mod common;

use common::*;
use lexcag::cag::{self, BuildConfig};
use lexcag::evosim::{self, SimConfig, SimError};
use lexcag::landscape;
use lexcag::lexicase::{self, Arithmetic};
use lexcag::Community;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn frequencies(pool: &[Vec<f64>], draws: usize, seed: u64) -> Vec<f64> {
    let refs: Vec<&[f64]> = pool.iter().map(Vec::as_slice).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; pool.len()];
    for _ in 0..draws {
        counts[evosim::lexicase_select(&refs, &mut rng).unwrap()] += 1;
    }
    counts.into_iter().map(|c| c as f64 / draws as f64).collect()
}

#[test]
fn symmetric_pair_splits_evenly() {
    let f = frequencies(&[vec![2.0, 0.0], vec![0.0, 2.0], vec![1.0, 1.0]], 100_000, 1);
    assert!((f[0] - 0.5).abs() < 0.01, "{f:?}");
    assert_eq!(f[2], 0.0);
}

#[test]
fn selection_frequencies_follow_exact_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..20 {
        let pool = random_pool(&mut rng, 6, 4, 3);
        let refs: Vec<&[f64]> = pool.iter().map(Vec::as_slice).collect();
        let p = lexicase::p_lex_scores(&refs, Arithmetic::Exact).unwrap();
        let f = frequencies(&pool, 20_000, case);
        for (a, b) in p.iter().zip(&f) {
            assert!((a - b).abs() < 0.02, "case {case}: {p:?} vs {f:?}");
        }
    }
}

#[test]
fn low_mutation_runs_end_in_sinks() {
    let l = landscape::generate_nk(3, 2, 1000).unwrap();
    let net = landscape::nk_to_network(&l, 0.001).unwrap();
    let graph = cag::build_full(&net, &Community::singleton(0), &BuildConfig::default(), 10_000).unwrap();
    let cfg = SimConfig {
        seed: 1000,
        ..SimConfig::default()
    };
    let tally = evosim::validate(&l, &cfg, 10, &graph).unwrap();
    assert!(tally.filtered_matches >= 9, "{tally:?}");
    assert_eq!(tally.other, 10 - tally.filtered_matches);
    assert_eq!(tally.sink_counts.iter().map(|s| s.2).sum::<usize>(), tally.filtered_matches);
}

#[test]
fn zero_replicates_give_an_empty_tally() {
    let l = landscape::generate_nk(3, 2, 4).unwrap();
    let net = landscape::nk_to_network(&l, 0.001).unwrap();
    let graph = cag::build_full(&net, &Community::singleton(0), &BuildConfig::default(), 10_000).unwrap();
    let tally = evosim::validate(&l, &SimConfig::default(), 0, &graph).unwrap();
    assert!(tally.replicates.is_empty());
    assert_eq!(tally.other, 0);
    assert_eq!(tally.filtered_fraction(), 0.0);
}

#[test]
fn mismatched_graph_is_rejected() {
    let l = landscape::generate_nk(3, 2, 4).unwrap();
    let other = landscape::nk_to_network(&landscape::generate_nk(3, 2, 5).unwrap(), 0.001).unwrap();
    let graph = cag::build_full(&other, &Community::singleton(0), &BuildConfig::default(), 10_000).unwrap();
    assert!(matches!(
        evosim::validate(&l, &SimConfig::default(), 1, &graph),
        Err(SimError::GraphMismatch)
    ));
}

#[test]
fn replicates_ignore_worker_count() {
    let l = landscape::generate_nk(4, 1, 8).unwrap();
    let cfg = SimConfig {
        generations: 60,
        per_site_mutation_rate: 0.02,
        seed: 3,
        record_trace: true,
        ..SimConfig::default()
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| evosim::run_replicates(&l, &cfg, 6).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    // replicate 0 of the batch is the single-run stream
    assert_eq!(one[0], evosim::run_evolution(&l, &cfg).unwrap());
    assert_ne!(one[0].trace, one[1].trace);
}

#[test]
fn no_mutation_never_leaves_the_start() {
    let l = landscape::generate_nk(5, 2, 9).unwrap();
    let cfg = SimConfig {
        generations: 50,
        per_site_mutation_rate: 0.0,
        record_trace: true,
        ..SimConfig::default()
    };
    let res = evosim::run_evolution(&l, &cfg).unwrap();
    assert_eq!(res.final_community, Community::singleton(0));
    assert!(res.final_genotypes.iter().all(|&g| g == 0));
    assert_eq!(res.abundances, vec![(0, 100)]);
}
