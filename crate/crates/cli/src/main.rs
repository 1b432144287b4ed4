//! `lexcag`: generate or ingest phenotype networks, build community assembly
//! graphs, analyze them, and check them against simulated evolution.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.

mod manifest;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use lexcag::analysis::{self, DotOverlay, Target, DEFAULT_DAMPING, DEFAULT_TOLERANCE};
use lexcag::cag::{self, BuildConfig, SelfLoops};
use lexcag::evosim::{self, SimConfig};
use lexcag::landscape::{self, DEFAULT_ENUMERATION_CAP};
use lexcag::phenonet::{self, PhenotypeNetwork};
use lexcag::{Community, StabilityConfig};
use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "lexcag", version, about = "Community assembly graphs for lexicase selection")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores). Never
    /// changes any output.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an NK landscape and its phenotype mutation network.
    GenNk(GenNkArgs),
    /// Pool mutant samples into a phenotype network.
    Ingest(IngestArgs),
    /// Build a community assembly graph from a phenotype network.
    Build(BuildArgs),
    /// Reachability report, hitting probability and DOT export for a graph.
    Analyze(AnalyzeArgs),
    /// Simulate lexicase evolution on an NK landscape.
    Sim(SimArgs),
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct GenNkArgs {
    /// Genome length.
    #[arg(long)]
    n: usize,
    /// Epistatic neighbours per site (must be below n).
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-site mutation rate used to derive the network.
    #[arg(long, default_value_t = 0.001)]
    mutation_rate: f64,
    /// Largest n enumerated exhaustively.
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    max_n: usize,
    /// Output prefix: writes PREFIX.landscape and PREFIX.network.json.
    #[arg(long, default_value = "nk")]
    out: String,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct IngestArgs {
    /// Tab-separated mutant sample file.
    #[arg(long)]
    samples: PathBuf,
    /// Network file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Mode {
    Full,
    Bounded,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SelfLoopArg {
    Drop,
    Keep,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct BuildArgs {
    #[arg(long)]
    network: PathBuf,
    /// Comma-separated phenotype ids of the start community. Defaults to the
    /// all-zeros genotype's phenotype for NK networks, otherwise the
    /// phenotype with the minimum score on every criterion.
    #[arg(long, value_delimiter = ',')]
    start: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value_t = Mode::Full)]
    mode: Mode,
    /// Nodes to explore in bounded mode.
    #[arg(long)]
    budget: Option<usize>,
    /// Maximum number of communities in full mode.
    #[arg(long, default_value_t = 100_000)]
    node_cap: usize,
    /// Population size S of the survival model.
    #[arg(long, default_value_t = 100)]
    population_size: u32,
    /// Generations G a member must survive.
    #[arg(long, default_value_t = 1)]
    generations: u32,
    /// Survival probability below which a member is removed.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, value_enum, default_value_t = SelfLoopArg::Drop)]
    self_loops: SelfLoopArg,
    /// Graph file to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct AnalyzeArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Start node id (default: the graph's start node).
    #[arg(long)]
    start: Option<usize>,
    /// Target node id.
    #[arg(long, conflicts_with = "optimum")]
    target: Option<usize>,
    /// Target every node containing the optimal phenotype.
    #[arg(long)]
    optimum: bool,
    #[arg(long, default_value_t = DEFAULT_DAMPING)]
    damping: f64,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tolerance: f64,
    #[arg(long)]
    out_dot: Option<PathBuf>,
    #[arg(long)]
    out_report: Option<PathBuf>,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct SimArgs {
    #[arg(long)]
    landscape: PathBuf,
    #[arg(long, default_value_t = 100)]
    pop_size: usize,
    #[arg(long, default_value_t = 500)]
    generations: usize,
    /// One table row per comma-separated rate.
    #[arg(long, value_delimiter = ',', default_value = "0.001")]
    mutation_rate: Vec<f64>,
    #[arg(long, default_value_t = 30)]
    replicates: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Graph whose sinks the final communities are compared against.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Per-replicate table to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn gen_nk(args: &GenNkArgs) -> Result<(), Failure> {
    if args.n == 0 {
        return Err(usage("--n must be positive"));
    }
    if args.k >= args.n {
        return Err(usage(format!("--k ({}) must be smaller than --n ({})", args.k, args.n)));
    }
    if !(args.mutation_rate > 0.0 && args.mutation_rate < 1.0) {
        return Err(usage("--mutation-rate must be in (0, 1)"));
    }
    if args.n > args.max_n {
        return Err(usage(format!("--n ({}) exceeds --max-n ({})", args.n, args.max_n)));
    }
    let manifest = RunManifest::new("gen-nk", args).to_value();
    let l = landscape::generate_nk(args.n, args.k, args.seed).map_err(|e| usage(e.to_string()))?;
    let net = landscape::nk_to_network_capped(&l, args.mutation_rate, args.max_n).map_err(anyhow::Error::from)?;
    let landscape_path = format!("{}.landscape", args.out);
    let network_path = format!("{}.network.json", args.out);
    write(Path::new(&landscape_path), &landscape::write_landscape(&l, Some(&manifest)))?;
    write(Path::new(&network_path), &phenonet::write_network(&net, Some(&manifest)))?;
    println!("landscape\t{landscape_path}");
    println!("network\t{network_path}");
    println!("phenotypes\t{}", net.len());
    println!("edges\t{}", net.edge_count());
    Ok(())
}

fn ingest(args: &IngestArgs) -> Result<(), Failure> {
    let records = phenonet::parse_samples(&read(&args.samples)?).map_err(anyhow::Error::from)?;
    let net = phenonet::aggregate_samples(&records).map_err(anyhow::Error::from)?;
    let manifest = RunManifest::new("ingest", args).to_value();
    write(&args.out, &phenonet::write_network(&net, Some(&manifest)))?;
    println!("records\t{}", records.len());
    println!("phenotypes\t{}", net.len());
    println!("edges\t{}", net.edge_count());
    Ok(())
}

/// The all-zeros genotype's phenotype in an NK network, else the phenotype
/// that is minimal on every criterion.
fn default_start(net: &PhenotypeNetwork) -> Option<usize> {
    net.phenotypes()
        .iter()
        .find(|p| {
            p.label
                .as_deref()
                .is_some_and(|l| l.split(' ').any(|g| !g.is_empty() && g.chars().all(|c| c == '0')))
        })
        .map(|p| p.id)
        .or_else(|| net.minimal_phenotype())
}

fn build(args: &BuildArgs) -> Result<(), Failure> {
    if args.mode == Mode::Bounded {
        match args.budget {
            None => return Err(usage("--mode bounded requires --budget")),
            Some(0) => return Err(usage("--budget must be positive")),
            Some(_) => {}
        }
    } else if args.budget == Some(0) {
        return Err(usage("--budget must be positive"));
    }
    let stability = StabilityConfig::new(args.population_size, args.generations, args.threshold)
        .map_err(|e| usage(e.to_string()))?;
    let cfg = BuildConfig {
        stability,
        self_loops: match args.self_loops {
            SelfLoopArg::Drop => SelfLoops::Drop,
            SelfLoopArg::Keep => SelfLoops::Keep,
        },
    };
    let net = phenonet::parse_network(&read(&args.network)?)
        .with_context(|| format!("invalid network {}", args.network.display()))?;
    let start = match &args.start {
        Some(ids) => {
            if let Some(&bad) = ids.iter().find(|&&id| id >= net.len()) {
                return Err(anyhow!("start phenotype {bad} is not in the network").into());
            }
            Community::new(ids.iter().copied()).map_err(|e| usage(e.to_string()))?
        }
        None => Community::singleton(
            default_start(&net).ok_or_else(|| anyhow!("no default start phenotype; pass --start"))?,
        ),
    };
    let graph = match args.mode {
        Mode::Full => cag::build_full(&net, &start, &cfg, args.node_cap),
        Mode::Bounded => cag::build_bounded(&net, &start, &cfg, args.budget.expect("checked")),
    }
    .map_err(anyhow::Error::from)?;
    if let Some(out) = &args.out {
        let manifest = RunManifest::new("build", args).to_value();
        write(out, &cag::write_graph(&graph, Some(&manifest)))?;
    }
    let sinks = analysis::sinks(&graph);
    println!("nodes\t{}", graph.len());
    println!("explored\t{}", graph.explored_count());
    println!("edges\t{}", graph.edges().len());
    println!("start\t{}", graph.nodes()[graph.start()].community);
    println!(
        "sinks\t{}",
        sinks
            .iter()
            .map(|&s| format!("{}:{{{}}}", s, graph.nodes()[s].community))
            .collect::<Vec<_>>()
            .join(" ")
    );
    Ok(())
}

fn analyze(args: &AnalyzeArgs) -> Result<(), Failure> {
    let target = match (args.target, args.optimum) {
        (Some(t), false) => Target::Node(t),
        (None, true) => Target::Optimum,
        _ => return Err(usage("missing target: pass --target ID or --optimum")),
    };
    if !(args.damping > 0.0 && args.damping <= 1.0) {
        return Err(usage("--damping must be in (0, 1]"));
    }
    if args.tolerance.is_nan() || args.tolerance <= 0.0 {
        return Err(usage("--tolerance must be positive"));
    }
    let graph = cag::parse_graph(&read(&args.graph)?)
        .with_context(|| format!("invalid graph {}", args.graph.display()))?;
    let start = args.start.unwrap_or(graph.start());
    let report = analysis::report(&graph, start, target).map_err(anyhow::Error::from)?;
    let ranks = analysis::pagerank(&graph, args.damping, args.tolerance).map_err(anyhow::Error::from)?;
    let manifest = RunManifest::new("analyze", args).to_value();
    if let Some(path) = &args.out_report {
        write(path, &analysis::write_report(&report, Some(&manifest)))?;
    }
    if let Some(path) = &args.out_dot {
        let overlay = DotOverlay {
            pagerank: Some(ranks.clone()),
            damping: Some(args.damping),
            targets: report.target_nodes.clone(),
            header: vec!["lexcag assembly graph".into(), format!("manifest: {manifest}")],
        };
        write(path, &analysis::export_dot(&graph, &overlay))?;
    }
    let ids = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    println!("start\t{}", report.start);
    match report.optimum_present {
        Some(false) => println!("target\toptimum absent"),
        _ => println!("target\t{}", ids(&report.target_nodes)),
    }
    println!("target_reachable\t{}", report.target_reachable);
    println!("guaranteed\t{}", report.guaranteed);
    println!("sinks\t{}", ids(&report.sinks));
    println!("reachable_sinks\t{}", ids(&report.reachable_sinks));
    println!("non_target_sinks_reachable\t{}", report.non_target_sinks_reachable);
    println!("hitting_probability\t{}", report.hitting_probability_of_target);
    if !report.target_nodes.is_empty() {
        let best = report.target_nodes.iter().map(|&t| ranks[t]).fold(0.0, f64::max);
        println!("target_pagerank\t{best}");
    }
    Ok(())
}

fn sim(args: &SimArgs) -> Result<(), Failure> {
    if args.pop_size == 0 || args.generations == 0 {
        return Err(usage("--pop-size and --generations must be positive"));
    }
    if args.mutation_rate.is_empty() || args.mutation_rate.iter().any(|r| !(0.0..1.0).contains(r)) {
        return Err(usage("--mutation-rate values must be in [0, 1)"));
    }
    let l = landscape::parse_landscape(&read(&args.landscape)?)
        .with_context(|| format!("invalid landscape {}", args.landscape.display()))?;
    let graph = match &args.graph {
        Some(path) => Some(
            cag::parse_graph(&read(path)?).with_context(|| format!("invalid graph {}", path.display()))?,
        ),
        None => None,
    };
    let cfg_for = |rate: f64| SimConfig {
        population_size: args.pop_size,
        generations: args.generations,
        per_site_mutation_rate: rate,
        seed: args.seed,
        record_trace: false,
    };

    let mut table = String::new();
    let mut rows = String::from("rate\treplicate\tfinal_community\tfiltered_community\texact_sink\tfiltered_sink\n");
    let fmt_sink = |s: Option<usize>| s.map_or("none".to_string(), |s| s.to_string());
    match &graph {
        Some(graph) => {
            let mut header = vec!["rate".to_string()];
            let mut body = Vec::new();
            for &rate in &args.mutation_rate {
                let tally = evosim::validate(&l, &cfg_for(rate), args.replicates, graph).map_err(anyhow::Error::from)?;
                if header.len() == 1 {
                    header.extend(tally.sink_counts.iter().map(|(id, c, _)| format!("{id}:{{{c}}}")));
                    header.push("other".into());
                }
                let mut row = vec![rate.to_string()];
                row.extend(tally.sink_counts.iter().map(|(_, _, n)| n.to_string()));
                row.push(tally.other.to_string());
                body.push(row.join("\t"));
                for o in &tally.replicates {
                    let _ = writeln!(
                        rows,
                        "{rate}\t{}\t{}\t{}\t{}\t{}",
                        o.replicate,
                        o.final_community,
                        o.filtered_community,
                        fmt_sink(o.exact_sink),
                        fmt_sink(o.filtered_sink)
                    );
                }
            }
            let _ = writeln!(table, "{}", header.join("\t"));
            for row in body {
                let _ = writeln!(table, "{row}");
            }
        }
        None => {
            let mut per_rate: Vec<(f64, BTreeMap<Community, usize>)> = Vec::new();
            for &rate in &args.mutation_rate {
                let results = evosim::run_replicates(&l, &cfg_for(rate), args.replicates).map_err(anyhow::Error::from)?;
                let mut counts = BTreeMap::new();
                for (r, res) in results.iter().enumerate() {
                    *counts.entry(res.filtered_community.clone()).or_insert(0) += 1;
                    let _ = writeln!(
                        rows,
                        "{rate}\t{r}\t{}\t{}\tnone\tnone",
                        res.final_community, res.filtered_community
                    );
                }
                per_rate.push((rate, counts));
            }
            let columns: Vec<Community> = per_rate
                .iter()
                .flat_map(|(_, c)| c.keys().cloned())
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            let mut header = vec!["rate".to_string()];
            header.extend(columns.iter().map(|c| format!("{{{c}}}")));
            let _ = writeln!(table, "{}", header.join("\t"));
            for (rate, counts) in &per_rate {
                let mut row = vec![rate.to_string()];
                row.extend(columns.iter().map(|c| counts.get(c).copied().unwrap_or(0).to_string()));
                let _ = writeln!(table, "{}", row.join("\t"));
            }
        }
    }
    if let Some(out) = &args.out {
        let manifest = RunManifest::new("sim", args).to_value();
        write(out, &format!("# manifest: {manifest}\n{rows}"))?;
    }
    print!("{table}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(anyhow::Error::from)?;
    }
    match &cli.command {
        Command::GenNk(a) => gen_nk(a),
        Command::Ingest(a) => ingest(a),
        Command::Build(a) => build(a),
        Command::Analyze(a) => analyze(a),
        Command::Sim(a) => sim(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
