//! Reachability questions on an assembly graph.
//!
//! Random walks follow edge probabilities and halt at nodes without
//! outgoing edges: true sinks, and frontier nodes whose edges were never
//! explored. Frontier nodes therefore count as failures when computing
//! hitting probabilities, which makes those values lower bounds.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::cag::{AssemblyGraph, NodeStatus, ROW_TOLERANCE};

/// Residual bound for the hitting probability solver.
pub const HITTING_RESIDUAL: f64 = 1e-10;

/// Above this many transient nodes the hitting system is solved by
/// Gauss-Seidel sweeps instead of a dense LU factorization.
pub const DIRECT_SOLVE_LIMIT: usize = 2000;

const MAX_SWEEPS: usize = 1_000_000;

pub const DEFAULT_DAMPING: f64 = 0.85;
pub const DEFAULT_TOLERANCE: f64 = 1e-12;
const MAX_PAGERANK_ITERATIONS: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("outgoing probabilities of node {node} sum to {sum}, not 1")]
    NotNormalized { node: usize, sum: f64 },
    #[error("damping {0} is not in (0, 1]")]
    InvalidDamping(f64),
    #[error("tolerance {0} must be positive")]
    InvalidTolerance(f64),
    #[error("{0} did not converge")]
    NotConverged(&'static str),
}

fn check_node(graph: &AssemblyGraph, id: usize) -> Result<(), AnalysisError> {
    if id < graph.len() {
        Ok(())
    } else {
        Err(AnalysisError::UnknownNode(id))
    }
}

fn check_rows(graph: &AssemblyGraph) -> Result<(), AnalysisError> {
    for node in 0..graph.len() {
        let mut any = false;
        let mut sum = 0.0;
        for e in graph.out_edges(node) {
            any = true;
            sum += e.probability;
        }
        if any && (sum - 1.0).abs() > ROW_TOLERANCE {
            return Err(AnalysisError::NotNormalized { node, sum });
        }
    }
    Ok(())
}

/// Explored nodes with no way out. Self-loops do not count as a way out;
/// nodes whose edges lead only to frontier nodes are not sinks.
pub fn sinks(graph: &AssemblyGraph) -> Vec<usize> {
    graph
        .nodes()
        .iter()
        .filter(|n| n.status == NodeStatus::Explored)
        .filter(|n| graph.successors(n.id).all(|v| v == n.id))
        .map(|n| n.id)
        .collect()
}

fn forward_closure(graph: &AssemblyGraph, from: usize) -> Vec<bool> {
    let mut seen = vec![false; graph.len()];
    let mut queue = VecDeque::from([from]);
    seen[from] = true;
    while let Some(u) = queue.pop_front() {
        for v in graph.successors(u) {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

/// Nodes with a path into `targets` (targets included).
fn backward_closure(graph: &AssemblyGraph, targets: &[usize]) -> Vec<bool> {
    let mut preds = vec![Vec::new(); graph.len()];
    for e in graph.edges() {
        preds[e.target].push(e.source);
    }
    let mut seen = vec![false; graph.len()];
    let mut queue = VecDeque::new();
    for &t in targets {
        if !seen[t] {
            seen[t] = true;
            queue.push_back(t);
        }
    }
    while let Some(v) = queue.pop_front() {
        for &u in &preds[v] {
            if !seen[u] {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    seen
}

pub fn reachable(graph: &AssemblyGraph, from: usize, to: usize) -> Result<bool, AnalysisError> {
    check_node(graph, from)?;
    check_node(graph, to)?;
    Ok(forward_closure(graph, from)[to])
}

/// Whether every explored node reachable from `from` can still reach one of
/// `targets`, i.e. evolution cannot get stuck anywhere else.
fn guaranteed_any(graph: &AssemblyGraph, from: usize, targets: &[usize]) -> bool {
    if targets.is_empty() {
        return false;
    }
    let forward = forward_closure(graph, from);
    let backward = backward_closure(graph, targets);
    graph
        .nodes()
        .iter()
        .filter(|n| forward[n.id] && n.status == NodeStatus::Explored)
        .all(|n| backward[n.id])
}

pub fn guaranteed(graph: &AssemblyGraph, from: usize, target: usize) -> Result<bool, AnalysisError> {
    check_node(graph, from)?;
    check_node(graph, target)?;
    Ok(guaranteed_any(graph, from, &[target]))
}

/// Probability that a walk from each node ever visits one of `targets`.
///
/// Targets are made absorbing (their outgoing edges are ignored). Nodes
/// that cannot reach a target are fixed at 0; the remaining unknowns solve
/// `h(u) = sum_v p(u -> v) h(v)` with `h = 1` on targets.
pub fn hitting_probabilities(graph: &AssemblyGraph, targets: &[usize]) -> Result<Vec<f64>, AnalysisError> {
    for &t in targets {
        check_node(graph, t)?;
    }
    check_rows(graph)?;
    let n = graph.len();
    let is_target = {
        let mut v = vec![false; n];
        for &t in targets {
            v[t] = true;
        }
        v
    };
    let can_reach = backward_closure(graph, targets);
    let transient: Vec<usize> = (0..n).filter(|&u| can_reach[u] && !is_target[u]).collect();
    let mut slot = vec![usize::MAX; n];
    for (i, &u) in transient.iter().enumerate() {
        slot[u] = i;
    }

    // Row i: (u, constant term, [(slot j, p)]).
    let rows: Vec<(f64, Vec<(usize, f64)>)> = transient
        .iter()
        .map(|&u| {
            let mut constant = 0.0;
            let mut coeffs = Vec::new();
            for e in graph.out_edges(u) {
                if is_target[e.target] {
                    constant += e.probability;
                } else if slot[e.target] != usize::MAX {
                    coeffs.push((slot[e.target], e.probability));
                }
            }
            (constant, coeffs)
        })
        .collect();

    let m = transient.len();
    let mut h = if m == 0 {
        Vec::new()
    } else if m <= DIRECT_SOLVE_LIMIT {
        let mut a = DMatrix::<f64>::identity(m, m);
        let mut b = DVector::<f64>::zeros(m);
        for (i, (constant, coeffs)) in rows.iter().enumerate() {
            b[i] = *constant;
            for &(j, p) in coeffs {
                a[(i, j)] -= p;
            }
        }
        match a.lu().solve(&b) {
            Some(x) => x.iter().copied().collect(),
            None => vec![0.0; m],
        }
    } else {
        vec![0.0; m]
    };
    for x in h.iter_mut() {
        *x = x.clamp(0.0, 1.0);
    }

    let residual = |h: &[f64]| {
        rows.iter()
            .enumerate()
            .map(|(i, (c, coeffs))| {
                let rhs = c + coeffs.iter().map(|&(j, p)| p * h[j]).sum::<f64>();
                (h[i] - rhs).abs()
            })
            .fold(0.0, f64::max)
    };
    let mut sweeps = 0;
    while m > 0 && residual(&h) >= HITTING_RESIDUAL {
        if sweeps == MAX_SWEEPS {
            return Err(AnalysisError::NotConverged("hitting probability"));
        }
        for (i, (c, coeffs)) in rows.iter().enumerate() {
            let mut diag = 0.0;
            let mut acc = *c;
            for &(j, p) in coeffs {
                if j == i {
                    diag += p;
                } else {
                    acc += p * h[j];
                }
            }
            h[i] = (acc / (1.0 - diag)).clamp(0.0, 1.0);
        }
        sweeps += 1;
    }

    let mut out = vec![0.0; n];
    for (u, value) in out.iter_mut().enumerate() {
        if is_target[u] {
            *value = 1.0;
        } else if slot[u] != usize::MAX {
            *value = h[slot[u]];
        }
    }
    Ok(out)
}

/// Probability that a walk from `start` ever visits `target`.
pub fn hitting_probability(graph: &AssemblyGraph, start: usize, target: usize) -> Result<f64, AnalysisError> {
    check_node(graph, start)?;
    Ok(hitting_probabilities(graph, &[target])?[start])
}

/// PageRank by power iteration with uniform teleportation at rate
/// `1 - damping`; nodes without outgoing edges spread their mass uniformly.
/// Iterates until the L1 change drops below `tolerance`.
pub fn pagerank(graph: &AssemblyGraph, damping: f64, tolerance: f64) -> Result<Vec<f64>, AnalysisError> {
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(AnalysisError::InvalidDamping(damping));
    }
    if tolerance.is_nan() || tolerance <= 0.0 {
        return Err(AnalysisError::InvalidTolerance(tolerance));
    }
    check_rows(graph)?;
    let n = graph.len();
    let uniform = 1.0 / n as f64;
    let dangling: Vec<usize> = (0..n).filter(|&u| graph.out_edges(u).next().is_none()).collect();
    let mut rank = vec![uniform; n];
    for _ in 0..MAX_PAGERANK_ITERATIONS {
        let dangling_mass: f64 = dangling.iter().map(|&u| rank[u]).sum();
        let base = (1.0 - damping) * uniform + damping * dangling_mass * uniform;
        let mut next = vec![base; n];
        for e in graph.edges() {
            next[e.target] += damping * rank[e.source] * e.probability;
        }
        let total: f64 = next.iter().sum();
        for x in next.iter_mut() {
            *x /= total;
        }
        let change: f64 = next.iter().zip(&rank).map(|(a, b)| (a - b).abs()).sum();
        rank = next;
        if change < tolerance {
            return Ok(rank);
        }
    }
    Err(AnalysisError::NotConverged("pagerank"))
}

/// Node breadth-first distances from `from`; `None` when unreachable.
pub fn bfs_depths(graph: &AssemblyGraph, from: usize) -> Vec<Option<usize>> {
    let mut depth = vec![None; graph.len()];
    depth[from] = Some(0);
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        let d = depth[u].expect("queued nodes have a depth");
        for v in graph.successors(u) {
            if depth[v].is_none() {
                depth[v] = Some(d + 1);
                queue.push_back(v);
            }
        }
    }
    depth
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "node")]
pub enum Target {
    Node(usize),
    /// Every node containing a phenotype with the network maximum on all
    /// criteria.
    Optimum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachabilityReport {
    pub start: usize,
    pub target: Target,
    /// Nodes treated as the target; several when the optimum appears in
    /// more than one community.
    pub target_nodes: Vec<usize>,
    /// Whether the optimum occurs in the graph (only for optimum targets).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimum_present: Option<bool>,
    pub target_reachable: bool,
    pub guaranteed: bool,
    pub sinks: Vec<usize>,
    pub reachable_sinks: Vec<usize>,
    pub non_target_sinks_reachable: bool,
    pub hitting_probability_of_target: f64,
}

pub fn report(graph: &AssemblyGraph, start: usize, target: Target) -> Result<ReachabilityReport, AnalysisError> {
    check_node(graph, start)?;
    let (target_nodes, optimum_present) = match target {
        Target::Node(t) => {
            check_node(graph, t)?;
            (vec![t], None)
        }
        Target::Optimum => {
            let optimal: BTreeSet<usize> = graph.metadata().optimal_phenotypes.iter().copied().collect();
            let nodes: Vec<usize> = graph
                .nodes()
                .iter()
                .filter(|n| n.community.members().iter().any(|m| optimal.contains(m)))
                .map(|n| n.id)
                .collect();
            let present = !nodes.is_empty();
            (nodes, Some(present))
        }
    };
    let forward = forward_closure(graph, start);
    let all_sinks = sinks(graph);
    let reachable_sinks: Vec<usize> = all_sinks.iter().copied().filter(|&s| forward[s]).collect();
    let hitting = if target_nodes.is_empty() {
        check_rows(graph)?;
        0.0
    } else {
        hitting_probabilities(graph, &target_nodes)?[start]
    };
    Ok(ReachabilityReport {
        start,
        target,
        target_reachable: target_nodes.iter().any(|&t| forward[t]),
        guaranteed: guaranteed_any(graph, start, &target_nodes),
        non_target_sinks_reachable: reachable_sinks.iter().any(|s| !target_nodes.contains(s)),
        sinks: all_sinks,
        reachable_sinks,
        target_nodes,
        optimum_present,
        hitting_probability_of_target: hitting,
    })
}

pub fn write_report(report: &ReachabilityReport, manifest: Option<&Value>) -> String {
    #[derive(Serialize)]
    struct Doc<'a> {
        report: &'a ReachabilityReport,
        #[serde(skip_serializing_if = "Option::is_none")]
        manifest: Option<&'a Value>,
    }
    let mut s = serde_json::to_string_pretty(&Doc { report, manifest }).expect("report serializes");
    s.push('\n');
    s
}

/// Optional overlays for [`export_dot`].
#[derive(Debug, Clone, Default)]
pub struct DotOverlay {
    pub pagerank: Option<Vec<f64>>,
    pub damping: Option<f64>,
    pub targets: Vec<usize>,
    /// Emitted as `//` comment lines before the graph.
    pub header: Vec<String>,
}

fn lerp(a: u8, b: u8, t: f64) -> u8 {
    (a as f64 + (b as f64 - a as f64) * t).round() as u8
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering. Nodes carry their BFS depth from the start
/// (`depth`, plus a `rank=same` group per depth), sinks are outlined in red
/// with `sink="true"`, frontier nodes are dashed, and with a PageRank
/// overlay node size and fill follow the node's rank. Edge colour darkens
/// with probability.
pub fn export_dot(graph: &AssemblyGraph, overlay: &DotOverlay) -> String {
    let mut out = String::new();
    for line in &overlay.header {
        let _ = writeln!(out, "// {line}");
    }
    out.push_str("digraph cag {\n");
    out.push_str("  graph [rankdir=\"BT\"");
    if let Some(d) = overlay.damping {
        let _ = write!(out, ", pagerank_damping=\"{d}\"");
    }
    out.push_str("];\n");
    out.push_str("  node [shape=\"circle\", style=\"filled\", fillcolor=\"#ffffff\"];\n");

    let depths = bfs_depths(graph, graph.start());
    let sink_set: BTreeSet<usize> = sinks(graph).into_iter().collect();
    let max_rank = overlay
        .pagerank
        .as_ref()
        .map(|r| r.iter().copied().fold(0.0, f64::max))
        .filter(|&m| m > 0.0);

    for node in graph.nodes() {
        let mut attrs = vec![format!("label=\"{}\"", escape(&node.community.to_string()))];
        attrs.push(format!("status=\"{}\"", match node.status {
            NodeStatus::Explored => "explored",
            NodeStatus::Frontier => "frontier",
            NodeStatus::Undiscovered => "undiscovered",
        }));
        attrs.push(format!("priority=\"{}\"", node.priority));
        if let Some(d) = depths[node.id] {
            attrs.push(format!("depth=\"{d}\""));
        }
        if let (Some(ranks), Some(max)) = (&overlay.pagerank, max_rank) {
            let r = ranks[node.id];
            let t = (r / max).clamp(0.0, 1.0);
            attrs.push(format!("pagerank=\"{r}\""));
            attrs.push(format!("width=\"{:.3}\"", 0.3 + 1.2 * t.sqrt()));
            attrs.push(format!(
                "fillcolor=\"#{:02x}{:02x}{:02x}\"",
                lerp(0xff, 0x44, t),
                lerp(0xf7, 0x01, t),
                lerp(0xbc, 0x54, t)
            ));
        }
        if node.id == graph.start() {
            attrs.push("shape=\"doublecircle\"".into());
        }
        if overlay.targets.contains(&node.id) {
            attrs.push("target=\"true\"".into());
            attrs.push("peripheries=\"2\"".into());
        }
        if node.status == NodeStatus::Frontier {
            attrs.push("style=\"dashed,filled\"".into());
        }
        if sink_set.contains(&node.id) {
            attrs.push("sink=\"true\"".into());
            attrs.push("color=\"#d62728\"".into());
            attrs.push("penwidth=\"3\"".into());
        }
        let _ = writeln!(out, "  n{} [{}];", node.id, attrs.join(", "));
    }

    let max_depth = depths.iter().flatten().copied().max().unwrap_or(0);
    for d in 0..=max_depth {
        let members: Vec<String> = (0..graph.len())
            .filter(|&i| depths[i] == Some(d))
            .map(|i| format!("n{i};"))
            .collect();
        if !members.is_empty() {
            let _ = writeln!(out, "  {{ rank=\"same\"; {} }}", members.join(" "));
        }
    }

    for e in graph.edges() {
        let level = lerp(0xd0, 0x00, e.probability.clamp(0.0, 1.0));
        let _ = writeln!(
            out,
            "  n{} -> n{} [label=\"{}\", probability=\"{}\", color=\"#{level:02x}{level:02x}{level:02x}\"];",
            e.source, e.target, e.invader, e.probability
        );
    }
    out.push_str("}\n");
    out
}
