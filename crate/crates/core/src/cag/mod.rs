//! Community assembly graphs.
//!
//! Nodes are stable communities; an edge `u -> v` labelled with invader `x`
//! says that introducing the mutationally adjacent phenotype `x` into `u`
//! and letting selection settle yields `v`. Edge probabilities out of a node
//! are the invaders' summed mutation weights from the residents,
//! renormalized over successful invasions.
//!
//! [`build_full`] closes the graph breadth-first. [`build_bounded`] explores
//! best-first by an estimated hitting probability and stops after a fixed
//! number of explored nodes, keeping the discovered-but-unexplored
//! communities as `frontier` nodes.

pub mod queue;

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::lexicase::{invade, is_stable, stabilize, Community, LexicaseError, StabilityConfig};
use crate::phenonet::PhenotypeNetwork;
use queue::UpdatableMaxQueue;

pub const GRAPH_FORMAT_VERSION: u32 = 1;

/// Tolerance on the outgoing probability sum of an explored node.
pub const ROW_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CagError {
    #[error(transparent)]
    Lexicase(#[from] LexicaseError),
    #[error("community {0} is not stable")]
    Unstable(Community),
    #[error("start community {0} collapses under selection")]
    StartCollapses(Community),
    #[error("node cap of {cap} exceeded ({reached} communities discovered)")]
    CapExceeded { cap: usize, reached: usize },
    #[error("node budget must be positive")]
    ZeroBudget,
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported graph format version {0}")]
    UnsupportedVersion(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeStatus {
    Explored,
    /// Discovered but not explored; its outgoing edges are unknown.
    Frontier,
    /// Never discovered. Nodes in a built graph never carry this status; it
    /// is what [`AssemblyGraph::status_of`] reports for absent communities.
    Undiscovered,
}

/// What to do with invasions that leave the community unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelfLoops {
    /// Discard them and renormalize over successful invasions.
    #[default]
    Drop,
    /// Keep them as self-loop edges carrying their share of the mass. A
    /// community where every invasion fails still has no edges.
    Keep,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BuildConfig {
    pub stability: StabilityConfig,
    pub self_loops: SelfLoops,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CagNode {
    pub id: usize,
    pub community: Community,
    pub status: NodeStatus,
    /// Estimated hitting probability from the start node.
    pub priority: f64,
    /// Position in exploration order, for explored nodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CagEdge {
    pub source: usize,
    pub target: usize,
    pub invader: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuildMode {
    Full,
    Bounded,
    Manual,
}

/// Build parameters and facts about the source network, echoed into the
/// serialized graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMetadata {
    pub mode: BuildMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_budget: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_cap: Option<usize>,
    pub config: BuildConfig,
    pub phenotype_count: usize,
    pub criteria_count: usize,
    /// [`PhenotypeNetwork::fingerprint`] of the source network.
    pub network_fingerprint: String,
    /// Phenotypes with the network maximum on every criterion.
    pub optimal_phenotypes: Vec<usize>,
}

impl GraphMetadata {
    fn for_network(net: &PhenotypeNetwork, mode: BuildMode, cfg: &BuildConfig) -> Self {
        Self {
            mode,
            node_budget: None,
            node_cap: None,
            config: *cfg,
            phenotype_count: net.len(),
            criteria_count: net.criteria_count(),
            network_fingerprint: net.fingerprint(),
            optimal_phenotypes: net.optimal_phenotypes(),
        }
    }

    /// Metadata for graphs assembled by hand (fixtures, tests).
    pub fn manual(optimal_phenotypes: Vec<usize>) -> Self {
        Self {
            mode: BuildMode::Manual,
            node_budget: None,
            node_cap: None,
            config: BuildConfig::default(),
            phenotype_count: 0,
            criteria_count: 0,
            network_fingerprint: String::new(),
            optimal_phenotypes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyGraph {
    nodes: Vec<CagNode>,
    edges: Vec<CagEdge>,
    start: usize,
    metadata: GraphMetadata,
    out: Vec<Vec<usize>>,
}

impl AssemblyGraph {
    /// Assembles a graph from parts, checking every structural invariant.
    pub fn from_parts(
        nodes: Vec<CagNode>,
        edges: Vec<CagEdge>,
        start: usize,
        metadata: GraphMetadata,
    ) -> Result<Self, CagError> {
        let invalid = |m: String| Err(CagError::Invalid(m));
        for (i, n) in nodes.iter().enumerate() {
            if n.id != i {
                return invalid(format!("node at position {i} has id {}", n.id));
            }
            if n.status == NodeStatus::Undiscovered {
                return invalid(format!("node {i} is marked undiscovered"));
            }
            if !(0.0..=1.0).contains(&n.priority) {
                return invalid(format!("node {i} priority {} outside [0, 1]", n.priority));
            }
        }
        let mut seen = HashSet::new();
        for n in &nodes {
            if !seen.insert(&n.community) {
                return invalid(format!("community {} appears twice", n.community));
            }
        }
        match nodes.get(start) {
            Some(n) if n.status == NodeStatus::Explored => {}
            Some(_) => return invalid(format!("start node {start} is not explored")),
            None => return invalid(format!("start node {start} does not exist")),
        }
        let mut out = vec![Vec::new(); nodes.len()];
        let mut triples = HashSet::new();
        for (i, e) in edges.iter().enumerate() {
            if e.source >= nodes.len() || e.target >= nodes.len() {
                return invalid(format!("edge {} -> {} has an unknown endpoint", e.source, e.target));
            }
            if nodes[e.source].status != NodeStatus::Explored {
                return invalid(format!("edge source {} is not explored", e.source));
            }
            if !(e.probability > 0.0 && e.probability <= 1.0) {
                return invalid(format!(
                    "edge {} -> {} has probability {} outside (0, 1]",
                    e.source, e.target, e.probability
                ));
            }
            if !triples.insert((e.source, e.target, e.invader)) {
                return invalid(format!(
                    "duplicate edge {} -> {} via {}",
                    e.source, e.target, e.invader
                ));
            }
            out[e.source].push(i);
        }
        for (source, row) in out.iter().enumerate() {
            if row.is_empty() {
                continue;
            }
            let sum: f64 = row.iter().map(|&i| edges[i].probability).sum();
            if (sum - 1.0).abs() > ROW_TOLERANCE {
                return invalid(format!("outgoing probabilities of node {source} sum to {sum}"));
            }
        }
        Ok(Self {
            nodes,
            edges,
            start,
            metadata,
            out,
        })
    }

    pub fn nodes(&self) -> &[CagNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> Option<&CagNode> {
        self.nodes.get(id)
    }

    pub fn edges(&self) -> &[CagEdge] {
        &self.edges
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn metadata(&self) -> &GraphMetadata {
        &self.metadata
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn out_edges(&self, node: usize) -> impl Iterator<Item = &CagEdge> + '_ {
        self.out
            .get(node)
            .into_iter()
            .flatten()
            .map(move |&i| &self.edges[i])
    }

    pub fn successors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.out_edges(node).map(|e| e.target)
    }

    pub fn find(&self, community: &Community) -> Option<usize> {
        self.nodes.iter().position(|n| &n.community == community)
    }

    pub fn status_of(&self, community: &Community) -> NodeStatus {
        self.find(community)
            .map_or(NodeStatus::Undiscovered, |i| self.nodes[i].status)
    }

    pub fn explored_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.status == NodeStatus::Explored)
            .count()
    }
}

/// One possible invasion outcome of a community.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub invader: usize,
    pub community: Community,
    pub probability: f64,
}

/// Outgoing transitions of a stable community, sorted by invader. An empty
/// list marks a sink.
pub fn transition_probabilities(
    community: &Community,
    net: &PhenotypeNetwork,
    cfg: &BuildConfig,
) -> Result<Vec<Transition>, CagError> {
    if !is_stable(community, net, &cfg.stability)? {
        return Err(CagError::Unstable(community.clone()));
    }
    transitions_of_stable(community, net, cfg)
}

fn transitions_of_stable(
    community: &Community,
    net: &PhenotypeNetwork,
    cfg: &BuildConfig,
) -> Result<Vec<Transition>, CagError> {
    // Raw weight of an invader: summed mutation weight from every resident,
    // regardless of how abundant the resident is.
    let mut raw: BTreeMap<usize, f64> = BTreeMap::new();
    for &m in community.members() {
        for &(v, w) in net.out_edges(m) {
            if w > 0.0 && !community.contains(v) {
                *raw.entry(v).or_default() += w;
            }
        }
    }
    let candidates: Vec<(usize, f64)> = raw.into_iter().collect();
    let outcomes = candidates
        .par_iter()
        .map(|&(v, _)| invade(community, v, net, &cfg.stability))
        .collect::<Result<Vec<_>, _>>()?;

    let mut kept: Vec<(usize, f64, Community)> = Vec::new();
    let mut any_success = false;
    for ((invader, weight), result) in candidates.into_iter().zip(outcomes) {
        let changed = &result != community;
        any_success |= changed;
        if changed || cfg.self_loops == SelfLoops::Keep {
            kept.push((invader, weight, result));
        }
    }
    if !any_success {
        return Ok(Vec::new());
    }
    let total: f64 = kept.iter().map(|k| k.1).sum();
    Ok(kept
        .into_iter()
        .map(|(invader, weight, community)| Transition {
            invader,
            community,
            probability: weight / total,
        })
        .collect())
}

fn stable_start(net: &PhenotypeNetwork, start: &Community, cfg: &BuildConfig) -> Result<Community, CagError> {
    cfg.stability.validate()?;
    stabilize(start, net, &cfg.stability)?.ok_or_else(|| CagError::StartCollapses(start.clone()))
}

/// Breadth-first closure from `start` (stabilized first). Fails once more
/// than `node_cap` communities have been discovered.
///
/// Priorities are cycle-ignoring path sums accumulated in breadth-first
/// order; they are informational here.
pub fn build_full(
    net: &PhenotypeNetwork,
    start: &Community,
    cfg: &BuildConfig,
    node_cap: usize,
) -> Result<AssemblyGraph, CagError> {
    let start = stable_start(net, start, cfg)?;
    let mut nodes = vec![CagNode {
        id: 0,
        community: start.clone(),
        status: NodeStatus::Frontier,
        priority: 1.0,
        order: None,
    }];
    let mut index: HashMap<Community, usize> = HashMap::from([(start, 0)]);
    let mut edges = Vec::new();
    let mut queue = VecDeque::from([0usize]);
    let mut order = 0;
    while let Some(u) = queue.pop_front() {
        nodes[u].status = NodeStatus::Explored;
        nodes[u].order = Some(order);
        order += 1;
        let h = nodes[u].priority;
        for t in transitions_of_stable(&nodes[u].community, net, cfg)? {
            let v = match index.get(&t.community) {
                Some(&v) => v,
                None => {
                    let v = nodes.len();
                    if v >= node_cap {
                        return Err(CagError::CapExceeded {
                            cap: node_cap,
                            reached: v + 1,
                        });
                    }
                    nodes.push(CagNode {
                        id: v,
                        community: t.community.clone(),
                        status: NodeStatus::Frontier,
                        priority: 0.0,
                        order: None,
                    });
                    index.insert(t.community, v);
                    queue.push_back(v);
                    v
                }
            };
            if nodes[v].status != NodeStatus::Explored {
                nodes[v].priority = (nodes[v].priority + h * t.probability).min(1.0);
            }
            edges.push(CagEdge {
                source: u,
                target: v,
                invader: t.invader,
                probability: t.probability,
            });
        }
    }
    let mut metadata = GraphMetadata::for_network(net, BuildMode::Full, cfg);
    metadata.node_cap = Some(node_cap);
    AssemblyGraph::from_parts(nodes, edges, 0, metadata)
}

/// One exploration step of [`build_bounded`]: the node popped, its priority,
/// and the highest priority left in the queue at that moment.
#[derive(Debug, Clone, PartialEq)]
pub struct PopEvent {
    pub node: usize,
    pub priority: f64,
    pub next_best: Option<f64>,
}

/// Best-first traversal from `start` that stops after `budget` nodes are
/// explored.
///
/// The start node has priority 1. Exploring `u` with priority `H(u)` adds
/// `H(u) * p` to every not-yet-explored successor reached with probability
/// `p`. Edges into explored nodes add nothing (cycles are ignored) and a
/// node's priority is frozen when it is explored. Ties pop the smaller
/// community first.
pub fn build_bounded(
    net: &PhenotypeNetwork,
    start: &Community,
    cfg: &BuildConfig,
    budget: usize,
) -> Result<AssemblyGraph, CagError> {
    build_bounded_traced(net, start, cfg, budget).map(|(g, _)| g)
}

pub fn build_bounded_traced(
    net: &PhenotypeNetwork,
    start: &Community,
    cfg: &BuildConfig,
    budget: usize,
) -> Result<(AssemblyGraph, Vec<PopEvent>), CagError> {
    if budget == 0 {
        return Err(CagError::ZeroBudget);
    }
    let start = stable_start(net, start, cfg)?;
    let mut nodes = vec![CagNode {
        id: 0,
        community: start.clone(),
        status: NodeStatus::Frontier,
        priority: 1.0,
        order: None,
    }];
    let mut index: HashMap<Community, usize> = HashMap::from([(start.clone(), 0)]);
    let mut queue = UpdatableMaxQueue::new();
    queue.insert(start, 1.0).expect("empty queue");
    let mut edges = Vec::new();
    let mut trace = Vec::new();
    let mut explored = 0;
    while explored < budget {
        let Some((community, h)) = queue.pop_max() else {
            break;
        };
        let u = index[&community];
        trace.push(PopEvent {
            node: u,
            priority: h,
            next_best: queue.peek_max().map(|(_, p)| p),
        });
        nodes[u].status = NodeStatus::Explored;
        nodes[u].priority = h;
        nodes[u].order = Some(explored);
        explored += 1;
        for t in transitions_of_stable(&community, net, cfg)? {
            let gain = h * t.probability;
            let v = match index.get(&t.community) {
                Some(&v) => {
                    if nodes[v].status == NodeStatus::Frontier {
                        let raised = (nodes[v].priority + gain).min(1.0);
                        nodes[v].priority = raised;
                        queue
                            .increase_priority(&t.community, raised)
                            .expect("frontier nodes are queued");
                    }
                    v
                }
                None => {
                    let v = nodes.len();
                    let priority = gain.min(1.0);
                    nodes.push(CagNode {
                        id: v,
                        community: t.community.clone(),
                        status: NodeStatus::Frontier,
                        priority,
                        order: None,
                    });
                    index.insert(t.community.clone(), v);
                    queue.insert(t.community, priority).expect("new community");
                    v
                }
            };
            edges.push(CagEdge {
                source: u,
                target: v,
                invader: t.invader,
                probability: t.probability,
            });
        }
    }
    let mut metadata = GraphMetadata::for_network(net, BuildMode::Bounded, cfg);
    metadata.node_budget = Some(budget);
    let graph = AssemblyGraph::from_parts(nodes, edges, 0, metadata)?;
    Ok((graph, trace))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDocument {
    version: u32,
    start: usize,
    metadata: GraphMetadata,
    nodes: Vec<CagNode>,
    edges: Vec<CagEdge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    manifest: Option<Value>,
}

pub fn write_graph(graph: &AssemblyGraph, manifest: Option<&Value>) -> String {
    let doc = GraphDocument {
        version: GRAPH_FORMAT_VERSION,
        start: graph.start,
        metadata: graph.metadata.clone(),
        nodes: graph.nodes.clone(),
        edges: graph.edges.clone(),
        manifest: manifest.cloned(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("graph serializes");
    s.push('\n');
    s
}

pub fn serialize_graph(graph: &AssemblyGraph) -> String {
    write_graph(graph, None)
}

pub fn parse_graph_document(text: &str) -> Result<(AssemblyGraph, Option<Value>), CagError> {
    let doc: GraphDocument = serde_json::from_str(text).map_err(|e| CagError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if doc.version != GRAPH_FORMAT_VERSION {
        return Err(CagError::UnsupportedVersion(doc.version));
    }
    let graph = AssemblyGraph::from_parts(doc.nodes, doc.edges, doc.start, doc.metadata)?;
    Ok((graph, doc.manifest))
}

pub fn parse_graph(text: &str) -> Result<AssemblyGraph, CagError> {
    parse_graph_document(text).map(|(g, _)| g)
}
