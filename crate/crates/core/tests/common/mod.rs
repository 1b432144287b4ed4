//! Independent reference implementations and fixtures shared by the
//! integration tests. Everything here is deliberately naive.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use lexcag::cag::{AssemblyGraph, CagEdge, CagNode, GraphMetadata, NodeStatus};
use lexcag::landscape::{Genotype, NkLandscape};
use lexcag::phenonet::{MutantSampleRecord, NetworkEdge, Phenotype, PhenotypeNetwork};
use lexcag::Community;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn to_f64(r: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().unwrap()
}

// ---------------------------------------------------------------- lexicase

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for slot in 0..=p.len() {
            let mut q = p.clone();
            q.insert(slot, n - 1);
            out.push(q);
        }
    }
    out
}

/// Selection probabilities by running lexicase on every criterion order;
/// members still tied after the last criterion share uniformly.
pub fn lexicase_by_permutation(pool: &[Vec<f64>]) -> Vec<BigRational> {
    let m = pool.len();
    let c = pool[0].len();
    let orders = permutations(c);
    let mut probs = vec![BigRational::zero(); m];
    let weight = ratio(1, orders.len() as i64);
    for order in &orders {
        let mut alive: Vec<usize> = (0..m).collect();
        for &crit in order {
            let best = alive.iter().map(|&i| pool[i][crit]).fold(f64::NEG_INFINITY, f64::max);
            alive.retain(|&i| pool[i][crit] == best);
        }
        let share = &weight * ratio(1, alive.len() as i64);
        for i in alive {
            probs[i] += &share;
        }
    }
    probs
}

/// The textbook recursion: pick a first criterion uniformly, keep its elite
/// and recurse on the remaining criteria.
pub fn lexicase_recursive(pool: &[Vec<f64>]) -> Vec<BigRational> {
    fn go(pool: &[Vec<f64>], members: &[usize], criteria: &[usize], out: &mut [BigRational], mass: BigRational) {
        if members.len() == 1 {
            out[members[0]] += mass;
            return;
        }
        if criteria.is_empty() {
            let share = mass / ratio(members.len() as i64, 1);
            for &i in members {
                out[i] += &share;
            }
            return;
        }
        let share = mass / ratio(criteria.len() as i64, 1);
        for (k, &c) in criteria.iter().enumerate() {
            let best = members.iter().map(|&i| pool[i][c]).fold(f64::NEG_INFINITY, f64::max);
            let elite: Vec<usize> = members.iter().copied().filter(|&i| pool[i][c] == best).collect();
            let rest: Vec<usize> = criteria.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, &c)| c).collect();
            go(pool, &elite, &rest, out, share.clone());
        }
    }
    let mut out = vec![BigRational::zero(); pool.len()];
    let members: Vec<usize> = (0..pool.len()).collect();
    let criteria: Vec<usize> = (0..pool[0].len()).collect();
    go(pool, &members, &criteria, &mut out, BigRational::one());
    out
}

pub fn survival(p: f64, s: u32, g: u32) -> f64 {
    (1.0 - (1.0 - p).powi(s as i32)).powi(g as i32)
}

/// Stabilization with the recursion above re-run at every removal round.
pub fn stabilize_naive(scores: &[Vec<f64>], members: &[usize], s: u32, g: u32, theta: f64) -> Vec<usize> {
    let mut current: Vec<usize> = members.to_vec();
    loop {
        if current.is_empty() {
            return current;
        }
        let pool: Vec<Vec<f64>> = current.iter().map(|&i| scores[i].clone()).collect();
        let p = lexicase_recursive(&pool);
        let keep: Vec<usize> = current
            .iter()
            .zip(&p)
            .filter(|(_, p)| survival(to_f64(p), s, g) >= theta)
            .map(|(&i, _)| i)
            .collect();
        if keep.len() == current.len() {
            return current;
        }
        current = keep;
    }
}

pub fn random_pool<R: Rng>(rng: &mut R, max_members: usize, max_criteria: usize, max_score: i64) -> Vec<Vec<f64>> {
    let m = rng.gen_range(1..=max_members);
    let c = rng.gen_range(1..=max_criteria);
    (0..m)
        .map(|_| (0..c).map(|_| rng.gen_range(0..=max_score) as f64).collect())
        .collect()
}

// ---------------------------------------------------------------- graphs

pub fn node(id: usize, status: NodeStatus) -> CagNode {
    CagNode {
        id,
        community: Community::singleton(id),
        status,
        priority: 0.0,
        order: None,
    }
}

pub fn edge(source: usize, target: usize, probability: f64) -> CagEdge {
    CagEdge {
        source,
        target,
        invader: target,
        probability,
    }
}

/// Hand-assembled graph over singleton communities; `frontier` lists the
/// unexplored nodes.
pub fn manual_graph(n: usize, frontier: &[usize], edges: &[(usize, usize, f64)], optimal: Vec<usize>) -> AssemblyGraph {
    let nodes = (0..n)
        .map(|i| node(i, if frontier.contains(&i) { NodeStatus::Frontier } else { NodeStatus::Explored }))
        .collect();
    let edges = edges.iter().map(|&(s, t, p)| edge(s, t, p)).collect();
    AssemblyGraph::from_parts(nodes, edges, 0, GraphMetadata::manual(optimal)).unwrap()
}

/// Random graph with normalized rows. Node 0 is explored; roughly one node
/// in six is a frontier node; explored nodes get up to four successors
/// (self-loops allowed) or none.
pub fn random_graph<R: Rng>(rng: &mut R, max_nodes: usize) -> AssemblyGraph {
    let n = rng.gen_range(1..=max_nodes);
    let frontier: Vec<usize> = (1..n).filter(|_| rng.gen_bool(1.0 / 6.0)).collect();
    let mut edges = Vec::new();
    for u in (0..n).filter(|u| !frontier.contains(u)) {
        if rng.gen_bool(0.15) {
            continue;
        }
        let k = rng.gen_range(1..=4.min(n));
        let mut targets: Vec<usize> = (0..n).collect();
        targets.shuffle(rng);
        targets.truncate(k);
        let raw: Vec<f64> = targets.iter().map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        for (t, w) in targets.into_iter().zip(raw) {
            edges.push((u, t, w / total));
        }
    }
    manual_graph(n, &frontier, &edges, vec![])
}

/// Reflexive-transitive closure by Floyd–Warshall.
pub fn closure(graph: &AssemblyGraph) -> Vec<Vec<bool>> {
    let n = graph.len();
    let mut r = vec![vec![false; n]; n];
    for (i, row) in r.iter_mut().enumerate() {
        row[i] = true;
    }
    for e in graph.edges() {
        r[e.source][e.target] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if r[i][k] {
                for j in 0..n {
                    if r[k][j] {
                        r[i][j] = true;
                    }
                }
            }
        }
    }
    r
}

/// Explored nodes whose every outgoing edge is a self-loop.
pub fn sinks_by_scan(graph: &AssemblyGraph) -> Vec<usize> {
    graph
        .nodes()
        .iter()
        .filter(|n| n.status == NodeStatus::Explored)
        .filter(|n| graph.edges().iter().filter(|e| e.source == n.id).all(|e| e.target == n.id))
        .map(|n| n.id)
        .collect()
}

/// Walks every path from `from` depth-first. Fails as soon as it finds an
/// explored node from which no path leads to `target`.
pub fn guaranteed_by_search(graph: &AssemblyGraph, from: usize, target: usize) -> bool {
    let n = graph.len();
    let succ: Vec<Vec<usize>> = (0..n)
        .map(|u| graph.edges().iter().filter(|e| e.source == u).map(|e| e.target).collect())
        .collect();
    fn can_reach(succ: &[Vec<usize>], u: usize, target: usize, seen: &mut Vec<bool>) -> bool {
        if u == target {
            return true;
        }
        seen[u] = true;
        succ[u].iter().any(|&v| !seen[v] && can_reach(succ, v, target, seen))
    }
    let mut visited = vec![false; n];
    let mut stack = vec![from];
    while let Some(u) = stack.pop() {
        if visited[u] {
            continue;
        }
        visited[u] = true;
        if graph.nodes()[u].status == NodeStatus::Explored && !can_reach(&succ, u, target, &mut vec![false; n]) {
            return false;
        }
        stack.extend(succ[u].iter().copied());
    }
    true
}

/// Fraction of `walks` random walks from `start` that reach a target.
/// Walks end at a target, at a node from which no target can be reached
/// (by the closure above), or after `max_steps`.
pub fn hitting_by_walks<R: Rng>(graph: &AssemblyGraph, start: usize, targets: &[usize], walks: usize, rng: &mut R) -> f64 {
    let max_steps = 100_000;
    let reach = closure(graph);
    let hopeless: Vec<bool> = (0..graph.len()).map(|u| !targets.iter().any(|&t| reach[u][t])).collect();
    let rows: Vec<Vec<(usize, f64)>> = (0..graph.len())
        .map(|u| graph.out_edges(u).map(|e| (e.target, e.probability)).collect())
        .collect();
    let mut hits = 0usize;
    for _ in 0..walks {
        let mut u = start;
        for _ in 0..max_steps {
            if targets.contains(&u) {
                hits += 1;
                break;
            }
            let row = &rows[u];
            if row.is_empty() || hopeless[u] {
                break;
            }
            let mut x: f64 = rng.gen();
            let mut next = row[row.len() - 1].0;
            for &(v, p) in row {
                if x < p {
                    next = v;
                    break;
                }
                x -= p;
            }
            u = next;
        }
    }
    hits as f64 / walks as f64
}

/// PageRank by repeated multiplication with the explicit dense Google
/// matrix.
pub fn pagerank_dense(graph: &AssemblyGraph, damping: f64) -> Vec<f64> {
    let n = graph.len();
    let mut p = vec![vec![0.0; n]; n];
    for e in graph.edges() {
        p[e.source][e.target] += e.probability;
    }
    for row in p.iter_mut() {
        if row.iter().all(|&x| x == 0.0) {
            row.iter_mut().for_each(|x| *x = 1.0 / n as f64);
        }
    }
    let g: Vec<Vec<f64>> = p
        .iter()
        .map(|row| row.iter().map(|&x| damping * x + (1.0 - damping) / n as f64).collect())
        .collect();
    let mut x = vec![1.0 / n as f64; n];
    for _ in 0..100_000 {
        let mut y = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                y[j] += x[i] * g[i][j];
            }
        }
        let change: f64 = y.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        x = y;
        if change < 1e-15 {
            break;
        }
    }
    x
}

// ---------------------------------------------------------------- fixtures

pub fn network(criteria: usize, scores: &[&[f64]], edges: &[(usize, usize, f64)]) -> PhenotypeNetwork {
    let phenotypes = scores
        .iter()
        .enumerate()
        .map(|(id, s)| Phenotype {
            id,
            scores: s.to_vec(),
            label: None,
        })
        .collect();
    let edges: Vec<NetworkEdge> = edges
        .iter()
        .map(|&(source, target, probability)| NetworkEdge {
            source,
            target,
            probability,
        })
        .collect();
    PhenotypeNetwork::new(criteria, phenotypes, edges).unwrap()
}

/// Four phenotypes where (2,2) beats everything; its community is the only
/// sink reachable from {(0,0)}.
pub fn grade_network() -> PhenotypeNetwork {
    network(
        2,
        &[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[2.0, 2.0]],
        &[
            (0, 1, 0.02),
            (0, 2, 0.02),
            (1, 2, 0.01),
            (1, 3, 0.01),
            (2, 1, 0.01),
            (2, 3, 0.01),
        ],
    )
}

/// Start can move to either of two specialists that never leave.
pub fn two_sink_network() -> PhenotypeNetwork {
    network(2, &[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]], &[(0, 1, 0.03), (0, 2, 0.01)])
}

// ---------------------------------------------------------------- NK

/// Phenotype transition weights by enumerating every (genotype, site) pair.
pub fn nk_weights_by_enumeration(l: &NkLandscape, rate: f64) -> BTreeMap<(Vec<u64>, Vec<u64>), f64> {
    let n = l.n();
    let key = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<u64>>();
    let mut size: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut hits: BTreeMap<(Vec<u64>, Vec<u64>), usize> = BTreeMap::new();
    for idx in 0..(1u64 << n) {
        let g = Genotype::from_index(idx, n);
        let a = key(l.evaluate(&g).unwrap());
        *size.entry(a.clone()).or_default() += 1;
        for site in 0..n {
            let b = key(l.evaluate(&g.flipped(site)).unwrap());
            if a != b {
                *hits.entry((a.clone(), b)).or_default() += 1;
            }
        }
    }
    let per_flip = rate * (1.0 - rate).powi(n as i32 - 1);
    hits.into_iter()
        .map(|((a, b), count)| {
            let w = count as f64 * per_flip / size[&a] as f64;
            ((a, b), w)
        })
        .collect()
}

/// Pooled weights straight from the raw records: every record adds its
/// count to its pair and its total to its source.
pub fn retally(records: &[MutantSampleRecord]) -> BTreeMap<(Vec<u64>, Vec<u64>), f64> {
    let key = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<u64>>();
    let mut totals: HashMap<Vec<u64>, u64> = HashMap::new();
    let mut counts: BTreeMap<(Vec<u64>, Vec<u64>), u64> = BTreeMap::new();
    for r in records {
        *totals.entry(key(&r.source_scores)).or_default() += r.total_samples;
        if r.source_scores != r.mutant_scores {
            *counts.entry((key(&r.source_scores), key(&r.mutant_scores))).or_default() += r.count;
        }
    }
    counts
        .into_iter()
        .filter(|(_, c)| *c > 0)
        .map(|((a, b), c)| {
            let w = c as f64 / totals[&a] as f64;
            ((a, b), w)
        })
        .collect()
}

// ---------------------------------------------------------------- DOT

#[derive(Debug, Default)]
pub struct DotSummary {
    pub nodes: BTreeMap<String, BTreeMap<String, String>>,
    pub edges: Vec<(String, String, BTreeMap<String, String>)>,
    pub ranks: Vec<Vec<String>>,
}

fn parse_attrs(s: &str) -> Result<BTreeMap<String, String>, String> {
    let s = s.trim();
    let inner = s
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| format!("attribute list not bracketed: {s}"))?;
    let mut out = BTreeMap::new();
    let chars: Vec<char> = inner.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        while i < chars.len() && (chars[i] == ' ' || chars[i] == ',') {
            i += 1;
        }
        if i == chars.len() {
            break;
        }
        let start = i;
        while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
            i += 1;
        }
        let key: String = chars[start..i].iter().collect();
        if key.is_empty() || chars.get(i) != Some(&'=') || chars.get(i + 1) != Some(&'"') {
            return Err(format!("malformed attribute near {:?}", &inner[start.min(inner.len())..]));
        }
        i += 2;
        let mut value = String::new();
        loop {
            match chars.get(i) {
                None => return Err("unterminated string".into()),
                Some('\\') => {
                    value.push(*chars.get(i + 1).ok_or("dangling escape")?);
                    i += 2;
                }
                Some('"') => {
                    i += 1;
                    break;
                }
                Some(&c) => {
                    value.push(c);
                    i += 1;
                }
            }
        }
        if out.insert(key.clone(), value).is_some() {
            return Err(format!("attribute {key} repeated"));
        }
    }
    Ok(out)
}

fn is_id(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') && !s.starts_with(|c: char| c.is_ascii_digit())
}

/// Checks the subset of the DOT language the exporter uses: leading `//`
/// comments, one `digraph ID { ... }`, and one statement per line (graph /
/// node defaults, node statements, edge statements, rank groups).
pub fn validate_dot(text: &str) -> Result<DotSummary, String> {
    let mut lines = text.lines().peekable();
    while lines.peek().is_some_and(|l| l.starts_with("//")) {
        lines.next();
    }
    let header = lines.next().ok_or("empty document")?;
    let name = header
        .strip_prefix("digraph ")
        .and_then(|s| s.strip_suffix(" {"))
        .ok_or_else(|| format!("bad header {header:?}"))?;
    if !is_id(name) {
        return Err(format!("bad graph id {name:?}"));
    }
    let mut summary = DotSummary::default();
    let mut closed = false;
    for line in lines {
        if closed {
            return Err(format!("content after closing brace: {line:?}"));
        }
        let t = line.trim();
        if t == "}" {
            closed = true;
            continue;
        }
        if let Some(group) = t.strip_prefix("{ ").and_then(|s| s.strip_suffix(" }")) {
            let mut parts = group.split("; ").map(|p| p.trim_end_matches(';'));
            if parts.next() != Some("rank=\"same\"") {
                return Err(format!("bad subgraph {t:?}"));
            }
            let ids: Vec<String> = parts.map(str::to_string).collect();
            if ids.is_empty() || !ids.iter().all(|i| is_id(i)) {
                return Err(format!("bad rank group {t:?}"));
            }
            summary.ranks.push(ids);
            continue;
        }
        let stmt = t.strip_suffix(';').ok_or_else(|| format!("missing semicolon: {t:?}"))?;
        let (head, attrs) = match stmt.find(" [") {
            Some(i) => (&stmt[..i], parse_attrs(&stmt[i + 1..])?),
            None => (stmt, BTreeMap::new()),
        };
        if head == "graph" || head == "node" || head == "edge" {
            continue;
        }
        if let Some((a, b)) = head.split_once(" -> ") {
            if !is_id(a) || !is_id(b) {
                return Err(format!("bad edge {head:?}"));
            }
            summary.edges.push((a.into(), b.into(), attrs));
        } else if is_id(head) {
            if summary.nodes.insert(head.into(), attrs).is_some() {
                return Err(format!("node {head} declared twice"));
            }
        } else {
            return Err(format!("unrecognized statement {t:?}"));
        }
    }
    if !closed {
        return Err("missing closing brace".into());
    }
    for (a, b, _) in &summary.edges {
        if !summary.nodes.contains_key(a) || !summary.nodes.contains_key(b) {
            return Err(format!("edge {a} -> {b} uses an undeclared node"));
        }
    }
    for id in summary.ranks.iter().flatten() {
        if !summary.nodes.contains_key(id) {
            return Err(format!("rank group uses undeclared node {id}"));
        }
    }
    Ok(summary)
}

pub fn community_set(graph: &AssemblyGraph) -> BTreeSet<(Community, NodeStatus)> {
    graph.nodes().iter().map(|n| (n.community.clone(), n.status)).collect()
}

/// Edges keyed by communities so graphs with different node numbering
/// compare equal; probabilities by bit pattern.
pub fn edge_set(graph: &AssemblyGraph) -> BTreeSet<(Community, Community, usize, u64)> {
    graph
        .edges()
        .iter()
        .map(|e| {
            (
                graph.nodes()[e.source].community.clone(),
                graph.nodes()[e.target].community.clone(),
                e.invader,
                e.probability.to_bits(),
            )
        })
        .collect()
}

// ---------------------------------------------------------------- malformed input

pub fn fixtures_dir() -> std::path::PathBuf {
    // also compiled into the CLI crate's acceptance suite
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

/// Kebab-case name of an error's variant, from its `Debug` form.
pub fn variant_name<E: std::fmt::Debug>(e: &E) -> String {
    let debug = format!("{e:?}");
    let head: String = debug.chars().take_while(|c| c.is_ascii_alphanumeric()).collect();
    let mut out = String::new();
    for (i, c) in head.chars().enumerate() {
        if c.is_ascii_uppercase() {
            if i > 0 {
                out.push('-');
            }
            out.push(c.to_ascii_lowercase());
        } else {
            out.push(c);
        }
    }
    out
}

/// Every malformed fixture with the variant it is designed to trigger
/// (taken from its file name) and the variant it actually produced.
pub fn malformed_outcomes() -> Vec<(String, String, String)> {
    use lexcag::phenonet;
    let mut files: Vec<_> = std::fs::read_dir(fixtures_dir().join("malformed"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|path| {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
            let expected = stem.split_once('-').unwrap().1.to_string();
            let text = std::fs::read_to_string(&path).unwrap();
            let got = if name.ends_with(".tsv") {
                match phenonet::parse_samples(&text).and_then(|r| phenonet::aggregate_samples(&r)) {
                    Ok(_) => "ok".to_string(),
                    Err(e) => variant_name(&e),
                }
            } else {
                match phenonet::parse_network(&text) {
                    Ok(_) => "ok".to_string(),
                    Err(e) => variant_name(&e),
                }
            };
            (name, expected, got)
        })
        .collect()
}

/// Random valid network: dense ids, small-integer or fractional scores,
/// optional labels, sparse edges with row sums at most 1.
pub fn random_network<R: Rng>(rng: &mut R) -> PhenotypeNetwork {
    let criteria = rng.gen_range(1..=5);
    let n = rng.gen_range(1..=12);
    let phenotypes = (0..n)
        .map(|id| Phenotype {
            id,
            scores: (0..criteria)
                .map(|_| if rng.gen_bool(0.5) { rng.gen_range(-5..=5) as f64 } else { rng.gen_range(-1e3..1e3) })
                .collect(),
            label: rng.gen_bool(0.3).then(|| format!("p\"{id}\"\tlabel ✓")),
        })
        .collect();
    let mut edges = Vec::new();
    for s in 0..n {
        let mut budget = 1.0;
        for t in (0..n).filter(|&t| t != s) {
            if rng.gen_bool(0.3) {
                let w: f64 = rng.gen_range(0.0..budget / 2.0);
                if w > 0.0 {
                    budget -= w;
                    edges.push(NetworkEdge {
                        source: s,
                        target: t,
                        probability: w,
                    });
                }
            }
        }
    }
    PhenotypeNetwork::new(criteria, phenotypes, edges).unwrap()
}

/// Seeded NK landscapes whose full assembly graph stays under `max_nodes`,
/// `per_n` of them for each n in `ns`. Candidates are tried in a fixed
/// order (seed-major, k cycling), so the selection is deterministic.
pub fn tractable_nk_cases(ns: std::ops::RangeInclusive<usize>, per_n: usize, max_nodes: usize, rate: f64) -> Vec<(usize, usize, u64)> {
    use lexcag::cag::{self, BuildConfig};
    use lexcag::landscape;
    let mut out = Vec::new();
    for n in ns {
        let mut found = 0;
        for seed in 0u64.. {
            if found == per_n {
                break;
            }
            assert!(seed < 10_000, "no tractable landscapes for n={n}");
            let k = seed as usize % n;
            let net = landscape::nk_to_network(&landscape::generate_nk(n, k, seed).unwrap(), rate).unwrap();
            if cag::build_full(&net, &Community::singleton(0), &BuildConfig::default(), max_nodes).is_ok() {
                out.push((n, k, seed));
                found += 1;
            }
        }
    }
    out
}
