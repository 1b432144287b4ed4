//! NK fitness landscapes.
//!
//! Site `i` of a genotype contributes `tables[i][w]`, where `w` is the
//! window of bits at sites `i, i+1, ..., i+k` (indices taken modulo `n`)
//! read as a binary number with site `i` as the most significant bit. Each
//! contribution is its own lexicase criterion.
//!
//! Tables are filled from `ChaCha8Rng::seed_from_u64(seed)`, site by site
//! and entry by entry within a site, one `f64` per entry drawn uniformly
//! from `[0, 1)`. ChaCha output is platform independent, so a seed fully
//! determines a landscape.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use thiserror::Error;

use crate::phenonet::{NetworkEdge, Phenotype, PhenotypeNetwork};

/// Largest `n` enumerated exhaustively unless a caller raises the cap.
pub const DEFAULT_ENUMERATION_CAP: usize = 20;

pub const LANDSCAPE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LandscapeError {
    #[error("n must be positive")]
    ZeroLength,
    #[error("k = {k} must be smaller than n = {n}")]
    EpistasisTooLarge { n: usize, k: usize },
    #[error("k = {0} is too large for a lookup table")]
    TableTooLarge(usize),
    #[error("genotype has {found} sites, landscape has {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("site {site} table has {found} entries, expected {expected}")]
    TableSize {
        site: usize,
        expected: usize,
        found: usize,
    },
    #[error("site {site} has contribution {value} outside [0, 1)")]
    ContributionRange { site: usize, value: f64 },
    #[error("n = {n} exceeds the enumeration cap of {cap}")]
    TooLargeToEnumerate { n: usize, cap: usize },
    #[error("mutation rate {0} is not in (0, 1)")]
    InvalidRate(f64),
    #[error("invalid genotype string {0:?}")]
    InvalidGenotype(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// A bit string; site 0 is written first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Genotype {
    bits: Vec<bool>,
}

impl Genotype {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            bits: vec![false; n],
        }
    }

    /// The genotype whose string, read as a binary number, equals `index`.
    /// Site 0 is the most significant bit, so `from_index(4, 3)` is `100`.
    pub fn from_index(index: u64, n: usize) -> Self {
        Self {
            bits: (0..n).map(|i| (index >> (n - 1 - i)) & 1 == 1).collect(),
        }
    }

    /// Inverse of [`Genotype::from_index`]; only meaningful for `n <= 64`.
    pub fn index(&self) -> u64 {
        self.bits.iter().fold(0, |acc, &b| (acc << 1) | b as u64)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bit(&self, site: usize) -> bool {
        self.bits[site]
    }

    pub fn flipped(&self, site: usize) -> Self {
        let mut bits = self.bits.clone();
        bits[site] = !bits[site];
        Self { bits }
    }
}

impl fmt::Display for Genotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for Genotype {
    type Err = LandscapeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(LandscapeError::InvalidGenotype(s.to_string())),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Genotype::new)
    }
}

/// All single-bit mutants of `g`, in ascending site order.
pub fn neighbors(g: &Genotype) -> Vec<Genotype> {
    (0..g.len()).map(|site| g.flipped(site)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NkLandscape {
    n: usize,
    k: usize,
    seed: u64,
    tables: Vec<Vec<f64>>,
}

fn table_len(k: usize) -> Result<usize, LandscapeError> {
    u32::try_from(k + 1)
        .ok()
        .and_then(|e| 1usize.checked_shl(e))
        .filter(|_| k < 32)
        .ok_or(LandscapeError::TableTooLarge(k))
}

fn check_shape(n: usize, k: usize) -> Result<usize, LandscapeError> {
    if n == 0 {
        return Err(LandscapeError::ZeroLength);
    }
    if k >= n {
        return Err(LandscapeError::EpistasisTooLarge { n, k });
    }
    table_len(k)
}

/// Draws a landscape from the seeded generator described in the module docs.
pub fn generate_nk(n: usize, k: usize, seed: u64) -> Result<NkLandscape, LandscapeError> {
    let len = check_shape(n, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tables = (0..n)
        .map(|_| (0..len).map(|_| rng.gen::<f64>()).collect())
        .collect();
    Ok(NkLandscape { n, k, seed, tables })
}

impl NkLandscape {
    /// A landscape with explicit tables; `seed` is only recorded.
    pub fn from_tables(k: usize, seed: u64, tables: Vec<Vec<f64>>) -> Result<Self, LandscapeError> {
        let n = tables.len();
        let len = check_shape(n, k)?;
        for (site, t) in tables.iter().enumerate() {
            if t.len() != len {
                return Err(LandscapeError::TableSize {
                    site,
                    expected: len,
                    found: t.len(),
                });
            }
            if let Some(&value) = t.iter().find(|v| !(0.0..1.0).contains(*v)) {
                return Err(LandscapeError::ContributionRange { site, value });
            }
        }
        Ok(Self { n, k, seed, tables })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tables(&self) -> &[Vec<f64>] {
        &self.tables
    }

    /// Index into site `site`'s table for the given bits.
    pub fn window(&self, bits: &[bool], site: usize) -> usize {
        (0..=self.k).fold(0, |acc, j| (acc << 1) | bits[(site + j) % self.n] as usize)
    }

    /// Per-site contributions of `g`.
    pub fn evaluate(&self, g: &Genotype) -> Result<Vec<f64>, LandscapeError> {
        if g.len() != self.n {
            return Err(LandscapeError::LengthMismatch {
                expected: self.n,
                found: g.len(),
            });
        }
        Ok((0..self.n)
            .map(|site| self.tables[site][self.window(g.bits(), site)])
            .collect())
    }

    /// Groups all `2^n` genotypes into phenotypes (identical score vectors).
    pub fn phenotype_index(&self, cap: usize) -> Result<PhenotypeIndex, LandscapeError> {
        if self.n > cap || self.n >= 63 {
            return Err(LandscapeError::TooLargeToEnumerate { n: self.n, cap });
        }
        let mut ids: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut scores: Vec<Vec<f64>> = Vec::new();
        let mut members: Vec<Vec<u64>> = Vec::new();
        let mut genotype_phenotype = Vec::with_capacity(1 << self.n);
        for index in 0..(1u64 << self.n) {
            let s = self.evaluate(&Genotype::from_index(index, self.n))?;
            let key: Vec<u64> = s.iter().map(|v| v.to_bits()).collect();
            let id = *ids.entry(key).or_insert_with(|| {
                scores.push(s);
                members.push(Vec::new());
                scores.len() - 1
            });
            members[id].push(index);
            genotype_phenotype.push(id);
        }
        Ok(PhenotypeIndex {
            n: self.n,
            genotype_phenotype,
            scores,
            members,
        })
    }
}

/// Genotype-to-phenotype map of an enumerated landscape. Phenotype ids are
/// assigned in order of their smallest genotype index, so the all-zeros
/// genotype always belongs to phenotype 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PhenotypeIndex {
    n: usize,
    genotype_phenotype: Vec<usize>,
    scores: Vec<Vec<f64>>,
    members: Vec<Vec<u64>>,
}

impl PhenotypeIndex {
    pub fn phenotype_of(&self, genotype_index: u64) -> usize {
        self.genotype_phenotype[genotype_index as usize]
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self, phenotype: usize) -> &[f64] {
        &self.scores[phenotype]
    }

    pub fn genotypes(&self, phenotype: usize) -> &[u64] {
        &self.members[phenotype]
    }

    /// Space-separated genotype strings of a phenotype.
    pub fn label(&self, phenotype: usize) -> String {
        self.members[phenotype]
            .iter()
            .map(|&g| Genotype::from_index(g, self.n).to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Phenotype mutation network of an enumerated landscape under a
/// single-flip model: from a uniformly chosen genotype of phenotype `a`,
/// each single-bit mutant occurs with probability
/// `rate * (1 - rate)^(n - 1)`; `weight(a -> b)` averages the mass landing
/// on genotypes of `b` over `a`'s genotypes. Unchanged phenotypes and
/// multi-bit events are dropped, not renormalized.
pub fn nk_to_network(landscape: &NkLandscape, per_site_mutation_rate: f64) -> Result<PhenotypeNetwork, LandscapeError> {
    nk_to_network_capped(landscape, per_site_mutation_rate, DEFAULT_ENUMERATION_CAP)
}

pub fn nk_to_network_capped(
    landscape: &NkLandscape,
    rate: f64,
    cap: usize,
) -> Result<PhenotypeNetwork, LandscapeError> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(LandscapeError::InvalidRate(rate));
    }
    let index = landscape.phenotype_index(cap)?;
    let n = landscape.n;
    let single_flip = rate * (1.0 - rate).powi(n as i32 - 1);

    let mut tallies: Vec<HashMap<usize, u64>> = vec![HashMap::new(); index.len()];
    for g in 0..(1u64 << n) {
        let a = index.phenotype_of(g);
        for site in 0..n {
            let b = index.phenotype_of(g ^ (1 << (n - 1 - site)));
            if a != b {
                *tallies[a].entry(b).or_default() += 1;
            }
        }
    }

    let phenotypes = (0..index.len())
        .map(|id| Phenotype {
            id,
            scores: index.scores(id).to_vec(),
            label: Some(index.label(id)),
        })
        .collect();
    let edges: Vec<NetworkEdge> = tallies
        .iter()
        .enumerate()
        .flat_map(|(source, row)| {
            let genotypes = index.genotypes(source).len() as f64;
            row.iter().map(move |(&target, &count)| NetworkEdge {
                source,
                target,
                probability: count as f64 * single_flip / genotypes,
            })
        })
        .collect();
    Ok(PhenotypeNetwork::new(n, phenotypes, edges).expect("enumerated network is valid"))
}

/// Text form: `#` comment lines, then `version`, `n`, `k`, `seed` lines and
/// one `site <i> <values...>` line per site. Values use the shortest decimal
/// that parses back to the same `f64`.
pub fn write_landscape(landscape: &NkLandscape, manifest: Option<&Value>) -> String {
    let mut out = String::from("# lexcag nk-landscape\n");
    if let Some(m) = manifest {
        out.push_str(&format!("# manifest: {m}\n"));
    }
    out.push_str(&format!(
        "version {LANDSCAPE_FORMAT_VERSION}\nn {}\nk {}\nseed {}\n",
        landscape.n, landscape.k, landscape.seed
    ));
    for (site, table) in landscape.tables.iter().enumerate() {
        out.push_str(&format!("site {site}"));
        for v in table {
            out.push_str(&format!(" {v:?}"));
        }
        out.push('\n');
    }
    out
}

pub fn serialize_landscape(landscape: &NkLandscape) -> String {
    write_landscape(landscape, None)
}

pub fn parse_landscape(text: &str) -> Result<NkLandscape, LandscapeError> {
    let mut fields: HashMap<&str, (usize, u64)> = HashMap::new();
    let mut tables: Vec<Vec<f64>> = Vec::new();
    let err = |line: usize, message: String| LandscapeError::Parse { line, message };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let mut parts = raw.split_whitespace();
        let key = parts.next().unwrap_or_default();
        match key {
            "version" | "n" | "k" | "seed" => {
                let value = parts
                    .next()
                    .and_then(|v| v.parse::<u64>().ok())
                    .ok_or_else(|| err(line, format!("expected an integer after `{key}`")))?;
                if parts.next().is_some() {
                    return Err(err(line, format!("trailing text after `{key}`")));
                }
                if fields.insert(key, (line, value)).is_some() {
                    return Err(err(line, format!("duplicate `{key}`")));
                }
            }
            "site" => {
                let site: usize = parts
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| err(line, "expected a site index".into()))?;
                if site != tables.len() {
                    return Err(err(line, format!("expected site {}, found {site}", tables.len())));
                }
                let values = parts
                    .map(|v| v.parse::<f64>().map_err(|_| err(line, format!("invalid number {v:?}"))))
                    .collect::<Result<Vec<_>, _>>()?;
                tables.push(values);
            }
            other => return Err(err(line, format!("unknown field `{other}`"))),
        }
    }
    let get = |key: &str| {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| err(0, format!("missing `{key}`")))
    };
    let (line, version) = get("version")?;
    if version != LANDSCAPE_FORMAT_VERSION as u64 {
        return Err(err(line, format!("unsupported version {version}")));
    }
    let (line, n) = get("n")?;
    if n as usize != tables.len() {
        return Err(err(line, format!("n = {n} but {} site lines", tables.len())));
    }
    let (_, k) = get("k")?;
    let (_, seed) = get("seed")?;
    NkLandscape::from_tables(k as usize, seed, tables)
}
