//! Exact lexicase selection probabilities and community stability.
//!
//! [`p_lex`] returns, for every member of a pool, the probability that one
//! lexicase selection event picks it: the average over every ordering of the
//! criteria of iterated elite filtering, with a uniform draw among whatever
//! is left at the end. The recursion is exponential in the number of
//! criteria, so the solver
//!
//! * collapses members with identical score vectors into one entry and
//!   splits that entry's probability evenly across the copies,
//! * drops criteria on which every member of the current pool ties,
//! * treats criteria whose columns rank the current pool identically as
//!   interchangeable (only their multiplicity matters), and
//! * memoizes subproblems on `(pool, remaining criteria)`.
//!
//! None of these change the result; they only shrink the recursion tree.
//! Small problems are solved in exact rational arithmetic and converted to
//! `f64` at the end; larger ones run the same recursion in `f64`.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Div, Mul};
use std::rc::Rc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Above either limit [`Arithmetic::Auto`] switches from rationals to `f64`.
pub const EXACT_MAX_MEMBERS: usize = 24;
pub const EXACT_MAX_CRITERIA: usize = 10;

/// Tolerance on the sum of a float-path distribution.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LexicaseError {
    #[error("community is empty")]
    EmptyCommunity,
    #[error("score vectors must have at least one criterion")]
    NoCriteria,
    #[error("member {member} has {found} scores, expected {expected}")]
    RaggedScores {
        member: usize,
        expected: usize,
        found: usize,
    },
    #[error("unknown phenotype {0}")]
    UnknownPhenotype(usize),
    #[error("phenotype {0} is already a member of the community")]
    AlreadyMember(usize),
    #[error("every member was removed during stabilization")]
    Collapsed,
    #[error("invalid stability configuration: {0}")]
    InvalidConfig(String),
}

/// Access to phenotype score vectors by id.
pub trait ScoreLookup {
    fn criteria_count(&self) -> usize;
    fn scores(&self, id: usize) -> Option<&[f64]>;
}

impl ScoreLookup for [Vec<f64>] {
    fn criteria_count(&self) -> usize {
        self.first().map_or(0, Vec::len)
    }

    fn scores(&self, id: usize) -> Option<&[f64]> {
        self.get(id).map(Vec::as_slice)
    }
}

impl ScoreLookup for Vec<Vec<f64>> {
    fn criteria_count(&self) -> usize {
        self.as_slice().criteria_count()
    }

    fn scores(&self, id: usize) -> Option<&[f64]> {
        self.as_slice().scores(id)
    }
}

/// A non-empty set of phenotype ids, kept sorted so equal sets compare
/// equal. The derived ordering (lexicographic on the sorted ids) is the
/// canonical community order used for tie-breaking.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Community(Vec<usize>);

impl Community {
    pub fn new(members: impl IntoIterator<Item = usize>) -> Result<Self, LexicaseError> {
        let mut members: Vec<usize> = members.into_iter().collect();
        members.sort_unstable();
        members.dedup();
        if members.is_empty() {
            return Err(LexicaseError::EmptyCommunity);
        }
        Ok(Self(members))
    }

    pub fn singleton(id: usize) -> Self {
        Self(vec![id])
    }

    pub fn members(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.0.binary_search(&id).is_ok()
    }

    /// The community with `id` added.
    pub fn with(&self, id: usize) -> Self {
        let mut members = self.0.clone();
        if let Err(pos) = members.binary_search(&id) {
            members.insert(pos, id);
        }
        Self(members)
    }
}

impl TryFrom<Vec<usize>> for Community {
    type Error = LexicaseError;

    fn try_from(v: Vec<usize>) -> Result<Self, Self::Error> {
        Community::new(v)
    }
}

impl From<Community> for Vec<usize> {
    fn from(c: Community) -> Self {
        c.0
    }
}

impl fmt::Display for Community {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, m) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{m}")?;
        }
        Ok(())
    }
}

/// Selection probability of each community member, in member order.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionDistribution {
    members: Vec<usize>,
    probabilities: Vec<f64>,
}

impl SelectionDistribution {
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn get(&self, id: usize) -> Option<f64> {
        self.members
            .iter()
            .position(|&m| m == id)
            .map(|i| self.probabilities[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.members.iter().copied().zip(self.probabilities.iter().copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arithmetic {
    /// Rationals when the deduplicated pool and criteria are small enough.
    #[default]
    Auto,
    Exact,
    Float,
}

/// Parameters of the survival model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    /// Population size `S`.
    pub population_size: u32,
    /// Generations `G` a member must survive.
    pub generations: u32,
    /// Members whose survival probability falls below this are removed.
    pub survival_threshold: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            population_size: 100,
            generations: 1,
            survival_threshold: 0.5,
        }
    }
}

impl StabilityConfig {
    pub fn new(population_size: u32, generations: u32, survival_threshold: f64) -> Result<Self, LexicaseError> {
        let cfg = Self {
            population_size,
            generations,
            survival_threshold,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), LexicaseError> {
        if self.population_size == 0 {
            return Err(LexicaseError::InvalidConfig("population size must be positive".into()));
        }
        if self.generations == 0 {
            return Err(LexicaseError::InvalidConfig("generations must be positive".into()));
        }
        if !(self.survival_threshold > 0.0 && self.survival_threshold < 1.0) {
            return Err(LexicaseError::InvalidConfig(format!(
                "survival threshold {} is not in (0, 1)",
                self.survival_threshold
            )));
        }
        Ok(())
    }
}

trait Prob: Clone + Zero + One + Add<Output = Self> + Mul<Output = Self> + Div<Output = Self> {
    fn from_count(n: usize) -> Self;
}

impl Prob for f64 {
    fn from_count(n: usize) -> Self {
        n as f64
    }
}

impl Prob for BigRational {
    fn from_count(n: usize) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }
}

type MemoKey = (Vec<u32>, Vec<(u32, u32)>);

struct Solver<P> {
    // columns[c][u]: score of unique member u on criterion c.
    columns: Vec<Vec<f64>>,
    memo: HashMap<MemoKey, Rc<Vec<P>>>,
}

impl<P: Prob> Solver<P> {
    fn new(columns: Vec<Vec<f64>>) -> Self {
        Self {
            columns,
            memo: HashMap::new(),
        }
    }

    fn rank_pattern(&self, crit: u32, pool: &[u32]) -> Vec<u32> {
        let col = &self.columns[crit as usize];
        let mut values: Vec<f64> = pool.iter().map(|&u| col[u as usize]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        pool.iter()
            .map(|&u| {
                let v = col[u as usize];
                values.partition_point(|&x| x < v) as u32
            })
            .collect()
    }

    /// Groups the remaining criteria by their ranking of `pool`, dropping
    /// those that do not separate anyone. Each class keeps its lowest
    /// criterion id as representative.
    fn classes(&self, pool: &[u32], remaining: &[(u32, u32)]) -> Vec<(u32, u32)> {
        let mut by_pattern: Vec<(Vec<u32>, u32, u32)> = Vec::new();
        for &(crit, mult) in remaining {
            let pattern = self.rank_pattern(crit, pool);
            if pattern.iter().all(|&r| r == 0) {
                continue;
            }
            match by_pattern.iter_mut().find(|(p, _, _)| *p == pattern) {
                Some(entry) => {
                    entry.1 = entry.1.min(crit);
                    entry.2 += mult;
                }
                None => by_pattern.push((pattern, crit, mult)),
            }
        }
        let mut classes: Vec<(u32, u32)> = by_pattern.into_iter().map(|(_, c, m)| (c, m)).collect();
        classes.sort_unstable();
        classes
    }

    fn solve(&mut self, pool: &[u32], remaining: &[(u32, u32)]) -> Rc<Vec<P>> {
        if pool.len() == 1 {
            return Rc::new(vec![P::one()]);
        }
        let classes = self.classes(pool, remaining);
        if classes.is_empty() {
            let share = P::one() / P::from_count(pool.len());
            return Rc::new(vec![share; pool.len()]);
        }
        let key = (pool.to_vec(), classes);
        if let Some(hit) = self.memo.get(&key) {
            return Rc::clone(hit);
        }
        let classes = &key.1;
        let total: u32 = classes.iter().map(|&(_, m)| m).sum();
        let total = P::from_count(total as usize);
        let mut result = vec![P::zero(); pool.len()];
        for (i, &(crit, mult)) in classes.iter().enumerate() {
            let col = &self.columns[crit as usize];
            let best = pool
                .iter()
                .map(|&u| col[u as usize])
                .fold(f64::NEG_INFINITY, f64::max);
            let positions: Vec<usize> = (0..pool.len())
                .filter(|&k| col[pool[k] as usize] == best)
                .collect();
            let elites: Vec<u32> = positions.iter().map(|&k| pool[k]).collect();
            let mut rest = classes.clone();
            if mult == 1 {
                rest.remove(i);
            } else {
                rest[i].1 -= 1;
            }
            let sub = self.solve(&elites, &rest);
            let weight = P::from_count(mult as usize) / total.clone();
            for (j, &k) in positions.iter().enumerate() {
                result[k] = result[k].clone() + weight.clone() * sub[j].clone();
            }
        }
        let result = Rc::new(result);
        self.memo.insert(key, Rc::clone(&result));
        result
    }
}

/// Validated pool: unique score vectors and, per input position, its group.
struct Pool {
    width: usize,
    unique: Vec<Vec<f64>>,
    group_of: Vec<usize>,
    group_size: Vec<usize>,
}

fn prepare(pool: &[&[f64]]) -> Result<Pool, LexicaseError> {
    let first = pool.first().ok_or(LexicaseError::EmptyCommunity)?;
    let width = first.len();
    if width == 0 {
        return Err(LexicaseError::NoCriteria);
    }
    let mut unique: Vec<Vec<f64>> = Vec::new();
    let mut group_of = Vec::with_capacity(pool.len());
    for (member, scores) in pool.iter().enumerate() {
        if scores.len() != width {
            return Err(LexicaseError::RaggedScores {
                member,
                expected: width,
                found: scores.len(),
            });
        }
        let g = match unique.iter().position(|u| u.as_slice() == *scores) {
            Some(g) => g,
            None => {
                unique.push(scores.to_vec());
                unique.len() - 1
            }
        };
        group_of.push(g);
    }
    let mut group_size = vec![0; unique.len()];
    for &g in &group_of {
        group_size[g] += 1;
    }
    Ok(Pool {
        width,
        unique,
        group_of,
        group_size,
    })
}

fn solve_pool<P: Prob>(pool: &Pool) -> Vec<P> {
    let columns: Vec<Vec<f64>> = (0..pool.width)
        .map(|c| pool.unique.iter().map(|u| u[c]).collect())
        .collect();
    let mut solver = Solver::<P>::new(columns);
    let members: Vec<u32> = (0..pool.unique.len() as u32).collect();
    let criteria: Vec<(u32, u32)> = (0..pool.width as u32).map(|c| (c, 1)).collect();
    let per_group = solver.solve(&members, &criteria);
    pool.group_of
        .iter()
        .map(|&g| per_group[g].clone() / P::from_count(pool.group_size[g]))
        .collect()
}

fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Exact selection probabilities for each entry of `pool`, in input order.
pub fn p_lex_exact(pool: &[&[f64]]) -> Result<Vec<BigRational>, LexicaseError> {
    let pool = prepare(pool)?;
    Ok(solve_pool::<BigRational>(&pool))
}

/// Selection probabilities for each entry of `pool`, in input order.
pub fn p_lex_scores(pool: &[&[f64]], arithmetic: Arithmetic) -> Result<Vec<f64>, LexicaseError> {
    let prepared = prepare(pool)?;
    let exact = match arithmetic {
        Arithmetic::Exact => true,
        Arithmetic::Float => false,
        Arithmetic::Auto => {
            prepared.unique.len() <= EXACT_MAX_MEMBERS && prepared.width <= EXACT_MAX_CRITERIA
        }
    };
    if exact {
        Ok(solve_pool::<BigRational>(&prepared)
            .iter()
            .map(rational_to_f64)
            .collect())
    } else {
        Ok(solve_pool::<f64>(&prepared))
    }
}

fn member_scores<'a, L: ScoreLookup + ?Sized>(
    community: &Community,
    scores: &'a L,
) -> Result<Vec<&'a [f64]>, LexicaseError> {
    community
        .members()
        .iter()
        .map(|&id| scores.scores(id).ok_or(LexicaseError::UnknownPhenotype(id)))
        .collect()
}

/// Selection distribution of a community whose members are looked up in
/// `scores`.
pub fn p_lex<L: ScoreLookup + ?Sized>(
    community: &Community,
    scores: &L,
) -> Result<SelectionDistribution, LexicaseError> {
    let pool = member_scores(community, scores)?;
    let probabilities = p_lex_scores(&pool, Arithmetic::Auto)?;
    Ok(SelectionDistribution {
        members: community.members().to_vec(),
        probabilities,
    })
}

/// Probability that a member selected with probability `p` per event
/// survives `G` generations of `S` selection events: `(1 - (1 - p)^S)^G`.
pub fn p_survival(p: f64, cfg: &StabilityConfig) -> f64 {
    let p = p.clamp(0.0, 1.0);
    let per_generation = 1.0 - pow(1.0 - p, cfg.population_size);
    pow(per_generation, cfg.generations)
}

fn pow(base: f64, exp: u32) -> f64 {
    match i32::try_from(exp) {
        Ok(e) => base.powi(e),
        Err(_) => base.powf(exp as f64),
    }
}

/// Repeatedly removes every member whose survival probability is below the
/// threshold, all at once, until nothing changes. `Ok(None)` means every
/// member was removed.
pub fn stabilize<L: ScoreLookup + ?Sized>(
    candidate: &Community,
    scores: &L,
    cfg: &StabilityConfig,
) -> Result<Option<Community>, LexicaseError> {
    cfg.validate()?;
    let mut current = candidate.clone();
    loop {
        let dist = p_lex(&current, scores)?;
        let survivors: Vec<usize> = dist
            .iter()
            .filter(|&(_, p)| p_survival(p, cfg) >= cfg.survival_threshold)
            .map(|(id, _)| id)
            .collect();
        if survivors.len() == current.len() {
            return Ok(Some(current));
        }
        if survivors.is_empty() {
            return Ok(None);
        }
        current = Community(survivors);
    }
}

pub fn is_stable<L: ScoreLookup + ?Sized>(
    candidate: &Community,
    scores: &L,
    cfg: &StabilityConfig,
) -> Result<bool, LexicaseError> {
    Ok(stabilize(candidate, scores, cfg)?.as_ref() == Some(candidate))
}

/// Outcome of introducing `invader` into `community`: the stabilized union.
/// The result equals `community` when the invasion fails.
pub fn invade<L: ScoreLookup + ?Sized>(
    community: &Community,
    invader: usize,
    scores: &L,
    cfg: &StabilityConfig,
) -> Result<Community, LexicaseError> {
    if community.contains(invader) {
        return Err(LexicaseError::AlreadyMember(invader));
    }
    if scores.scores(invader).is_none() {
        return Err(LexicaseError::UnknownPhenotype(invader));
    }
    stabilize(&community.with(invader), scores, cfg)?.ok_or(LexicaseError::Collapsed)
}
