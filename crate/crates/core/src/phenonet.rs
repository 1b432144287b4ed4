//! Phenotype mutation networks.
//!
//! A [`PhenotypeNetwork`] is a directed graph whose nodes are phenotypes
//! (score vectors over the fitness criteria) and whose edge weights are the
//! probability that one reproduction of the source phenotype yields the
//! target phenotype. The residual mass of a row (`1 - sum`) is the
//! probability that the phenotype does not change; it is never stored as a
//! self-edge.
//!
//! Networks are read and written as a versioned JSON document, see
//! `docs/formats.md`. Mutant samples produced by an external system are read
//! from a tab-separated file and pooled with [`aggregate_samples`].

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lexicase::ScoreLookup;

pub const NETWORK_FORMAT_VERSION: u32 = 1;

/// Slack allowed on a row sum before it is rejected.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phenotype {
    pub id: usize,
    pub scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkEdge {
    pub source: usize,
    pub target: usize,
    pub probability: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error at line {line}, column {column}: {message}")]
    Schema {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported network format version {0}")]
    UnsupportedVersion(u32),
    #[error("criteria_count must be at least 1")]
    ZeroCriteria,
    #[error("network has no phenotypes")]
    NoPhenotypes,
    #[error("duplicate phenotype id {0}")]
    DuplicateId(usize),
    #[error("phenotype ids are not dense: id {0} is missing")]
    NonDenseIds(usize),
    #[error("phenotype {id} has {found} scores, expected {expected}")]
    RaggedScores {
        id: usize,
        expected: usize,
        found: usize,
    },
    #[error("phenotype {id} has a non-finite score")]
    NonFiniteScore { id: usize },
    #[error("edge {source_id} -> {target} references an unknown phenotype")]
    UnknownPhenotype { source_id: usize, target: usize },
    #[error("self-edge on phenotype {0}")]
    SelfEdge(usize),
    #[error("duplicate edge {source_id} -> {target}")]
    DuplicateEdge { source_id: usize, target: usize },
    #[error("edge {source_id} -> {target} has negative or non-finite weight {weight}")]
    NegativeWeight {
        source_id: usize,
        target: usize,
        weight: f64,
    },
    #[error("edge {source_id} -> {target} has weight {weight} above 1")]
    WeightOutOfRange {
        source_id: usize,
        target: usize,
        weight: f64,
    },
    #[error("outgoing weights of phenotype {source_id} sum to {sum}, above 1")]
    RowSumExceeded { source_id: usize, sum: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhenotypeNetwork {
    criteria_count: usize,
    phenotypes: Vec<Phenotype>,
    // Outgoing edges per source, sorted by target.
    out: Vec<Vec<(usize, f64)>>,
}

impl PhenotypeNetwork {
    /// Builds a network and checks every invariant. Phenotypes may be given
    /// in any order; they are stored by id.
    pub fn new(
        criteria_count: usize,
        phenotypes: Vec<Phenotype>,
        edges: impl IntoIterator<Item = NetworkEdge>,
    ) -> Result<Self, NetworkError> {
        if criteria_count == 0 {
            return Err(NetworkError::ZeroCriteria);
        }
        if phenotypes.is_empty() {
            return Err(NetworkError::NoPhenotypes);
        }
        let count = phenotypes.len();
        let mut ids: Vec<usize> = phenotypes.iter().map(|p| p.id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(NetworkError::DuplicateId(w[0]));
        }
        if let Some(gap) = ids.iter().enumerate().position(|(i, &id)| i != id) {
            return Err(NetworkError::NonDenseIds(gap));
        }
        let mut slots: Vec<Option<Phenotype>> = vec![None; count];
        for mut p in phenotypes {
            if p.scores.len() != criteria_count {
                return Err(NetworkError::RaggedScores {
                    id: p.id,
                    expected: criteria_count,
                    found: p.scores.len(),
                });
            }
            if p.scores.iter().any(|s| !s.is_finite()) {
                return Err(NetworkError::NonFiniteScore { id: p.id });
            }
            for s in p.scores.iter_mut() {
                if *s == 0.0 {
                    *s = 0.0; // fold -0.0
                }
            }
            let id = p.id;
            slots[id] = Some(p);
        }
        let phenotypes: Vec<Phenotype> = slots.into_iter().map(|p| p.expect("dense")).collect();

        let mut out: Vec<Vec<(usize, f64)>> = vec![Vec::new(); count];
        for e in edges {
            if e.source >= count || e.target >= count {
                return Err(NetworkError::UnknownPhenotype {
                    source_id: e.source,
                    target: e.target,
                });
            }
            if e.source == e.target {
                return Err(NetworkError::SelfEdge(e.source));
            }
            if !e.probability.is_finite() || e.probability < 0.0 {
                return Err(NetworkError::NegativeWeight {
                    source_id: e.source,
                    target: e.target,
                    weight: e.probability,
                });
            }
            if e.probability > 1.0 {
                return Err(NetworkError::WeightOutOfRange {
                    source_id: e.source,
                    target: e.target,
                    weight: e.probability,
                });
            }
            out[e.source].push((e.target, e.probability));
        }
        for (source, row) in out.iter_mut().enumerate() {
            row.sort_by_key(|&(t, _)| t);
            if let Some(w) = row.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(NetworkError::DuplicateEdge {
                    source_id: source,
                    target: w[0].0,
                });
            }
            let sum: f64 = row.iter().map(|&(_, p)| p).sum();
            if sum > 1.0 + ROW_SUM_TOLERANCE {
                return Err(NetworkError::RowSumExceeded {
                    source_id: source,
                    sum,
                });
            }
        }
        Ok(Self {
            criteria_count,
            phenotypes,
            out,
        })
    }

    pub fn criteria_count(&self) -> usize {
        self.criteria_count
    }

    pub fn len(&self) -> usize {
        self.phenotypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phenotypes.is_empty()
    }

    pub fn phenotypes(&self) -> &[Phenotype] {
        &self.phenotypes
    }

    pub fn phenotype(&self, id: usize) -> Option<&Phenotype> {
        self.phenotypes.get(id)
    }

    /// Outgoing `(target, probability)` pairs of `source`, sorted by target.
    pub fn out_edges(&self, source: usize) -> &[(usize, f64)] {
        self.out.get(source).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn weight(&self, source: usize, target: usize) -> f64 {
        let row = self.out_edges(source);
        row.binary_search_by_key(&target, |&(t, _)| t)
            .map(|i| row[i].1)
            .unwrap_or(0.0)
    }

    pub fn edges(&self) -> impl Iterator<Item = NetworkEdge> + '_ {
        self.out.iter().enumerate().flat_map(|(source, row)| {
            row.iter().map(move |&(target, probability)| NetworkEdge {
                source,
                target,
                probability,
            })
        })
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    /// Id of the phenotype with exactly these scores, if any.
    pub fn find(&self, scores: &[f64]) -> Option<usize> {
        self.phenotypes
            .iter()
            .position(|p| p.scores.as_slice() == scores)
    }

    /// Phenotypes scoring the maximum of the whole network on every
    /// criterion at once. Usually empty or a single id.
    pub fn optimal_phenotypes(&self) -> Vec<usize> {
        let maxima: Vec<f64> = (0..self.criteria_count)
            .map(|c| {
                self.phenotypes
                    .iter()
                    .map(|p| p.scores[c])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        self.phenotypes
            .iter()
            .filter(|p| p.scores == maxima)
            .map(|p| p.id)
            .collect()
    }

    /// The phenotype scoring the network minimum on every criterion, if one
    /// exists.
    pub fn minimal_phenotype(&self) -> Option<usize> {
        let minima: Vec<f64> = (0..self.criteria_count)
            .map(|c| {
                self.phenotypes
                    .iter()
                    .map(|p| p.scores[c])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        self.phenotypes
            .iter()
            .find(|p| p.scores == minima)
            .map(|p| p.id)
    }
}

impl ScoreLookup for PhenotypeNetwork {
    fn criteria_count(&self) -> usize {
        self.criteria_count
    }

    fn scores(&self, id: usize) -> Option<&[f64]> {
        self.phenotypes.get(id).map(|p| p.scores.as_slice())
    }
}

/// SHA-256 over phenotype score vectors in id order, as lowercase hex.
/// Graphs record it so simulations can check they are compared against the
/// network they were built from.
pub fn score_fingerprint<'a>(scores: impl IntoIterator<Item = &'a [f64]>) -> String {
    let mut hasher = Sha256::new();
    for row in scores {
        hasher.update((row.len() as u64).to_le_bytes());
        for v in row {
            hasher.update(v.to_bits().to_le_bytes());
        }
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl PhenotypeNetwork {
    pub fn fingerprint(&self) -> String {
        score_fingerprint(self.phenotypes.iter().map(|p| p.scores.as_slice()))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDocument {
    version: u32,
    criteria_count: usize,
    phenotypes: Vec<Phenotype>,
    edges: Vec<NetworkEdge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    manifest: Option<Value>,
}

fn json_error(e: serde_json::Error) -> NetworkError {
    let (line, column, message) = (e.line(), e.column(), e.to_string());
    match e.classify() {
        serde_json::error::Category::Data => NetworkError::Schema {
            line,
            column,
            message,
        },
        _ => NetworkError::Syntax {
            line,
            column,
            message,
        },
    }
}

/// Parses a network document, returning the embedded run manifest if present.
pub fn parse_network_document(text: &str) -> Result<(PhenotypeNetwork, Option<Value>), NetworkError> {
    let doc: NetworkDocument = serde_json::from_str(text).map_err(json_error)?;
    if doc.version != NETWORK_FORMAT_VERSION {
        return Err(NetworkError::UnsupportedVersion(doc.version));
    }
    let net = PhenotypeNetwork::new(doc.criteria_count, doc.phenotypes, doc.edges)?;
    Ok((net, doc.manifest))
}

pub fn parse_network(text: &str) -> Result<PhenotypeNetwork, NetworkError> {
    parse_network_document(text).map(|(net, _)| net)
}

/// Canonical serialization: phenotypes by id, edges by (source, target),
/// shortest round-trip decimals.
pub fn serialize_network(net: &PhenotypeNetwork) -> String {
    write_network(net, None)
}

pub fn write_network(net: &PhenotypeNetwork, manifest: Option<&Value>) -> String {
    let doc = NetworkDocument {
        version: NETWORK_FORMAT_VERSION,
        criteria_count: net.criteria_count,
        phenotypes: net.phenotypes.clone(),
        edges: net.edges().collect(),
        manifest: manifest.cloned(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("network serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct MutantSampleRecord {
    pub source_scores: Vec<f64>,
    pub mutant_scores: Vec<f64>,
    pub count: u64,
    pub total_samples: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("no mutant sample records")]
    Empty,
    #[error("line {line}: expected 4 tab-separated fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: invalid {field}: {value:?}")]
    BadNumber {
        line: usize,
        field: &'static str,
        value: String,
    },
    #[error("record {record}: score vectors have length {found}, expected {expected}")]
    InconsistentLength {
        record: usize,
        expected: usize,
        found: usize,
    },
    #[error("record {record}: count {count} exceeds total_samples {total}")]
    CountExceedsTotal { record: usize, count: u64, total: u64 },
    #[error("record {record}: total_samples must be positive")]
    ZeroTotal { record: usize },
}

fn parse_scores(field: &str, line: usize, name: &'static str) -> Result<Vec<f64>, IngestError> {
    let bad = || IngestError::BadNumber {
        line,
        field: name,
        value: field.to_string(),
    };
    if field.trim().is_empty() {
        return Err(bad());
    }
    field
        .split(',')
        .map(|s| {
            let v: f64 = s.trim().parse().map_err(|_| bad())?;
            if v.is_finite() {
                Ok(if v == 0.0 { 0.0 } else { v })
            } else {
                Err(bad())
            }
        })
        .collect()
}

/// Reads the tab-separated mutant sample format. Blank lines and lines
/// starting with `#` are skipped. Line numbers in errors are 1-based.
pub fn parse_samples(text: &str) -> Result<Vec<MutantSampleRecord>, IngestError> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 4 {
            return Err(IngestError::FieldCount {
                line,
                found: fields.len(),
            });
        }
        let count_of = |s: &str, name: &'static str| {
            s.trim().parse::<u64>().map_err(|_| IngestError::BadNumber {
                line,
                field: name,
                value: s.to_string(),
            })
        };
        records.push(MutantSampleRecord {
            source_scores: parse_scores(fields[0], line, "source_scores")?,
            mutant_scores: parse_scores(fields[1], line, "mutant_scores")?,
            count: count_of(fields[2], "count")?,
            total_samples: count_of(fields[3], "total_samples")?,
        });
    }
    Ok(records)
}

fn score_key(scores: &[f64]) -> Vec<u64> {
    scores.iter().map(|s| s.to_bits()).collect()
}

fn cmp_scores(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Pools mutant samples into a network.
///
/// Phenotypes are the distinct score vectors seen anywhere in the records,
/// numbered in lexicographic score order. `weight(a -> b)` is the summed
/// count of `a -> b` records over the summed `total_samples` of every record
/// whose source is `a`; records with an unchanged phenotype only add to the
/// denominator.
pub fn aggregate_samples(records: &[MutantSampleRecord]) -> Result<PhenotypeNetwork, IngestError> {
    let first = records.first().ok_or(IngestError::Empty)?;
    let width = first.source_scores.len();
    for (record, r) in records.iter().enumerate() {
        for found in [r.source_scores.len(), r.mutant_scores.len()] {
            if found != width || found == 0 {
                return Err(IngestError::InconsistentLength {
                    record,
                    expected: width,
                    found,
                });
            }
        }
        if r.total_samples == 0 {
            return Err(IngestError::ZeroTotal { record });
        }
        if r.count > r.total_samples {
            return Err(IngestError::CountExceedsTotal {
                record,
                count: r.count,
                total: r.total_samples,
            });
        }
    }

    let mut distinct: Vec<&[f64]> = records
        .iter()
        .flat_map(|r| [r.source_scores.as_slice(), r.mutant_scores.as_slice()])
        .collect();
    distinct.sort_by(|a, b| cmp_scores(a, b));
    distinct.dedup_by(|a, b| score_key(a) == score_key(b));
    let ids: HashMap<Vec<u64>, usize> = distinct
        .iter()
        .enumerate()
        .map(|(i, s)| (score_key(s), i))
        .collect();

    let mut denominators = vec![0u64; distinct.len()];
    let mut numerators: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for r in records {
        let a = ids[&score_key(&r.source_scores)];
        let b = ids[&score_key(&r.mutant_scores)];
        denominators[a] += r.total_samples;
        if a != b {
            *numerators.entry((a, b)).or_default() += r.count;
        }
    }

    let phenotypes = distinct
        .iter()
        .enumerate()
        .map(|(id, s)| Phenotype {
            id,
            scores: s.to_vec(),
            label: None,
        })
        .collect();
    let edges = numerators
        .into_iter()
        .filter(|&(_, n)| n > 0)
        .map(|((source, target), n)| NetworkEdge {
            source,
            target,
            probability: n as f64 / denominators[source] as f64,
        });
    Ok(PhenotypeNetwork::new(width, phenotypes, edges).expect("aggregated network is valid"))
}
