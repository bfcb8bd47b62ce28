//! Config-driven experiment runner: three training subcommands writing
//! `report.json` / `metrics.csv` (and `embeddings.csv` for link
//! prediction), a spectral decomposition demo, and a gradient checker.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime failure.

use clap::{Args, Parser, Subcommand};
use gnn_core::autoencoder::export_embeddings_csv;
use gnn_core::data::{
    load_citation, load_graph_set, read_edge_list, read_signal_csv, synth_structural_classes,
    synth_two_clique, two_clique_labels, NodeDataset, CITESEER, CORA, PUBMED,
};
use gnn_core::gradcheck::{
    run_corrupted_rule_check, run_layer_suite, run_op_suite, SuiteReport, DEFAULT_TOL,
};
use gnn_core::graph::LaplacianKind;
use gnn_core::spectral::{eigensystem, gft, igft, GraphSignal, DEFAULT_EIGEN_CAP};
use gnn_core::training::{
    run_repeats, train_graph_classifier, train_link_predictor, train_node_classifier, EvalReport,
    OptKind, RepeatSummary, TrainConfig, TrainError,
};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

#[derive(Parser)]
#[command(
    name = "gnn",
    version,
    about = "Graph neural network toolkit and experiment runner"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the recurrent model for whole-graph classification.
    TrainGraph(RunArgs),
    /// Train a two-layer aggregator network for node classification.
    TrainNode(RunArgs),
    /// Train a (variational) graph autoencoder for link prediction.
    TrainLink(RunArgs),
    /// Decompose a graph signal into the Laplacian eigenbasis.
    SpectralDemo(SpectralArgs),
    /// Verify every differentiable op and layer against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file (flat object; unknown keys rejected).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set epochs=50 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory for report.json / metrics.csv / embeddings.csv.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Base RNG seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of runs with seeds seed, seed+1, ... (overrides the config).
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Args)]
struct SpectralArgs {
    /// Graph in edge-list format (`# n=<N>` header, `u v [weight]` lines).
    #[arg(long)]
    graph: PathBuf,
    /// Signal CSV (`vertex_id,<name>,...`, one row per vertex).
    #[arg(long)]
    signal: PathBuf,
    /// Which signal column to decompose (0 = first column after vertex_id).
    #[arg(long, default_value_t = 0)]
    column: usize,
    /// Output directory for spectrum.csv.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random instances per operation.
    #[arg(long, default_value_t = 20)]
    instances: usize,
    /// Also check a deliberately corrupted derivative rule; it must fail,
    /// proving the checker can catch a wrong rule.
    #[arg(long)]
    inject_fault: bool,
}

// ----------------------------------------------------------------------
// Errors and exit codes
// ----------------------------------------------------------------------

#[derive(Debug)]
enum CliError {
    /// Bad configuration: unknown keys, invalid values, unknown dataset
    /// ids, missing referenced files.
    Config(String),
    /// Failure while running a valid configuration.
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

// ----------------------------------------------------------------------
// Configuration
// ----------------------------------------------------------------------

/// Flat JSON experiment configuration. Every field has a default so a
/// config file only states what it changes; unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    dataset: String,
    model: String,
    transitions: usize,
    epochs: usize,
    learning_rate: f64,
    optimizer: String,
    hidden: usize,
    latent: usize,
    seed: u64,
    repeats: usize,
    /// Citation datasets: vertex file (features + label per line).
    content_path: Option<String>,
    /// Citation datasets: citation pair file.
    cites_path: Option<String>,
    /// Graph-set corpora: JSON object of per-graph edge lists.
    edges_json_path: Option<String>,
    /// Graph-set corpora: CSV of graph_id,label.
    labels_csv_path: Option<String>,
    /// Edge-list graph for link prediction on a file-backed graph.
    graph_path: Option<String>,
    /// Synthetic structural-classes corpus size.
    count: usize,
    /// Synthetic two-clique block size.
    n_per_block: usize,
    /// Synthetic two-clique cross-edge probability.
    p_cross: f64,
}

impl Default for FileConfig {
    fn default() -> Self {
        FileConfig {
            dataset: String::new(),
            model: String::new(),
            transitions: 4,
            epochs: 16,
            learning_rate: 0.01,
            optimizer: "adam".into(),
            hidden: 16,
            latent: 16,
            seed: 0,
            repeats: 1,
            content_path: None,
            cites_path: None,
            edges_json_path: None,
            labels_csv_path: None,
            graph_path: None,
            count: 200,
            n_per_block: 10,
            p_cross: 0.05,
        }
    }
}

/// Parses an override value: JSON literal when it parses, bare string
/// otherwise (so `--set model=vgae` works without inner quotes).
fn parse_override_value(raw: &str) -> serde_json::Value {
    serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()))
}

fn load_config(args: &RunArgs) -> Result<FileConfig> {
    let mut map = serde_json::Map::new();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
            CliError::Config(format!("config {} is not valid JSON: {e}", path.display()))
        })?;
        map = match value {
            serde_json::Value::Object(m) => m,
            _ => {
                return Err(CliError::Config(format!(
                    "config {} must be a JSON object",
                    path.display()
                )))
            }
        };
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        map.insert(k.trim().to_string(), parse_override_value(v.trim()));
    }
    let mut cfg: FileConfig = serde_json::from_value(serde_json::Value::Object(map))
        .map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(repeats) = args.repeats {
        cfg.repeats = repeats;
    }
    if cfg.repeats == 0 {
        return Err(CliError::Config("repeats must be at least 1".into()));
    }
    Ok(cfg)
}

impl FileConfig {
    fn train_config(&self, default_model: &str) -> Result<TrainConfig> {
        let optimizer = match self.optimizer.as_str() {
            "adam" => OptKind::Adam,
            "sgd" => OptKind::Sgd,
            other => {
                return Err(CliError::Config(format!(
                    "optimizer must be adam or sgd, got {other:?}"
                )))
            }
        };
        let cfg = TrainConfig {
            dataset: self.dataset.clone(),
            model: if self.model.is_empty() {
                default_model.to_string()
            } else {
                self.model.clone()
            },
            transitions: self.transitions,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            optimizer,
            hidden: self.hidden,
            latent: self.latent,
            seed: self.seed,
        };
        cfg.validate().map_err(CliError::from)?;
        Ok(cfg)
    }

    fn require_file(
        &self,
        what: &str,
        configured: &Option<String>,
        fallback: String,
    ) -> Result<PathBuf> {
        let path = PathBuf::from(configured.clone().unwrap_or(fallback));
        if !path.exists() {
            return Err(CliError::Config(format!(
                "{what} not found at {} (set it in the config or fetch the dataset first)",
                path.display()
            )));
        }
        Ok(path)
    }
}

// ----------------------------------------------------------------------
// Dataset resolution
// ----------------------------------------------------------------------

fn citation_spec(name: &str) -> Option<&'static gnn_core::data::CitationSpec> {
    match name {
        "cora" => Some(&CORA),
        "citeseer" => Some(&CITESEER),
        "pubmed" => Some(&PUBMED),
        _ => None,
    }
}

fn load_citation_dataset(cfg: &FileConfig) -> Result<NodeDataset> {
    let spec = citation_spec(&cfg.dataset).expect("checked by caller");
    let content = cfg.require_file(
        "content file",
        &cfg.content_path,
        format!("data/{0}/{0}.content", cfg.dataset),
    )?;
    let cites = cfg.require_file(
        "cites file",
        &cfg.cites_path,
        format!("data/{0}/{0}.cites", cfg.dataset),
    )?;
    load_citation(&content, &cites, spec, cfg.seed).map_err(|e| CliError::Runtime(e.to_string()))
}

fn two_clique_node_dataset(cfg: &FileConfig) -> Result<NodeDataset> {
    let g = synth_two_clique(cfg.n_per_block, cfg.p_cross, cfg.seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let labels = two_clique_labels(cfg.n_per_block);
    let (train_mask, val_mask, test_mask) = gnn_core::data::default_masks(&labels, 2, cfg.seed)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(NodeDataset {
        graph: g,
        labels,
        num_classes: 2,
        train_mask,
        val_mask,
        test_mask,
        name: "two-clique".into(),
        stats: Default::default(),
    })
}

// ----------------------------------------------------------------------
// Output files
// ----------------------------------------------------------------------

fn write_report(out: &Path, summary: &RepeatSummary) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let json = serde_json::to_string_pretty(summary)
        .map_err(|e| CliError::Runtime(format!("cannot serialize report: {e}")))?;
    std::fs::write(out.join("report.json"), json + "\n")?;

    let csv_path = out.join("metrics.csv");
    let fresh = !csv_path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&csv_path)?;
    if fresh {
        writeln!(f, "{}", EvalReport::CSV_HEADER)?;
    }
    for run in &summary.runs {
        for row in run.csv_rows() {
            writeln!(f, "{row}")?;
        }
    }
    Ok(())
}

fn print_summary(summary: &RepeatSummary) {
    for (key, mean) in &summary.mean_metrics {
        let std = summary.std_metrics.get(key).copied().unwrap_or(0.0);
        if summary.runs.len() > 1 {
            println!(
                "{key}: {mean:.4} +/- {std:.4} over {} runs",
                summary.runs.len()
            );
        } else {
            println!("{key}: {mean:.4}");
        }
    }
}

// ----------------------------------------------------------------------
// Subcommands
// ----------------------------------------------------------------------

fn cmd_train_graph(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let base = cfg.train_config("rgnn")?;
    let set = match cfg.dataset.as_str() {
        "structural" => synth_structural_classes(cfg.count, cfg.seed)
            .map_err(|e| CliError::Config(e.to_string()))?,
        "stargazers" | "graph-set" => {
            let edges = cfg.require_file(
                "edge-list JSON",
                &cfg.edges_json_path,
                "data/stargazers/git_edges.json".into(),
            )?;
            let labels = cfg.require_file(
                "label CSV",
                &cfg.labels_csv_path,
                "data/stargazers/git_target.csv".into(),
            )?;
            load_graph_set(&edges, &labels).map_err(|e| CliError::Runtime(e.to_string()))?
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown dataset {other:?} for graph classification (expected structural, stargazers, or graph-set)"
            )))
        }
    };
    let summary = run_repeats(cfg.repeats, cfg.seed, |seed| {
        train_graph_classifier(
            &set,
            &TrainConfig {
                seed,
                ..base.clone()
            },
        )
    })?;
    write_report(&args.out, &summary)?;
    print_summary(&summary);
    Ok(())
}

fn cmd_train_node(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let base = cfg.train_config("sage-mean")?;
    let ds = match cfg.dataset.as_str() {
        "cora" | "citeseer" | "pubmed" => load_citation_dataset(&cfg)?,
        "two-clique" => two_clique_node_dataset(&cfg)?,
        other => {
            return Err(CliError::Config(format!(
                "unknown dataset {other:?} for node classification (expected cora, citeseer, pubmed, or two-clique)"
            )))
        }
    };
    let summary = run_repeats(cfg.repeats, cfg.seed, |seed| {
        train_node_classifier(
            &ds,
            &TrainConfig {
                seed,
                ..base.clone()
            },
        )
    })?;
    write_report(&args.out, &summary)?;
    print_summary(&summary);
    Ok(())
}

fn cmd_train_link(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let base = cfg.train_config("gae")?;
    let graph = match cfg.dataset.as_str() {
        "cora" | "citeseer" | "pubmed" => load_citation_dataset(&cfg)?.graph,
        "two-clique" => synth_two_clique(cfg.n_per_block, cfg.p_cross, cfg.seed)
            .map_err(|e| CliError::Config(e.to_string()))?,
        "edge-list" => {
            let path = cfg.require_file("graph file", &cfg.graph_path, "data/graph.txt".into())?;
            read_edge_list(&path).map_err(|e| CliError::Runtime(e.to_string()))?
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown dataset {other:?} for link prediction (expected cora, citeseer, pubmed, two-clique, or edge-list)"
            )))
        }
    };
    // Keep the base-seed run's embeddings for export.
    let kept = Mutex::new(None);
    let summary = run_repeats(cfg.repeats, cfg.seed, |seed| {
        let (report, emb) = train_link_predictor(
            &graph,
            &TrainConfig {
                seed,
                ..base.clone()
            },
        )?;
        if seed == cfg.seed {
            *kept.lock().unwrap() = Some(emb);
        }
        Ok(report)
    })?;
    write_report(&args.out, &summary)?;
    let emb = kept.into_inner().unwrap().expect("base seed always runs");
    export_embeddings_csv(&args.out.join("embeddings.csv"), &emb)?;
    print_summary(&summary);
    Ok(())
}

fn cmd_spectral_demo(args: &SpectralArgs) -> Result<()> {
    let g = read_edge_list(&args.graph).map_err(|e| CliError::Config(e.to_string()))?;
    if g.num_vertices() > DEFAULT_EIGEN_CAP {
        return Err(CliError::Config(format!(
            "graph has {} vertices; the dense eigensolver is capped at {DEFAULT_EIGEN_CAP}",
            g.num_vertices()
        )));
    }
    let (names, columns) =
        read_signal_csv(&args.signal).map_err(|e| CliError::Config(e.to_string()))?;
    let column = columns.get(args.column).ok_or_else(|| {
        CliError::Config(format!(
            "signal column {} out of range; file has {}",
            args.column,
            columns.len()
        ))
    })?;
    if column.len() != g.num_vertices() {
        return Err(CliError::Config(format!(
            "signal has {} entries for {} vertices",
            column.len(),
            g.num_vertices()
        )));
    }

    let lap = g
        .laplacian(LaplacianKind::Unnormalized)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let eig = eigensystem(&lap).map_err(|e| CliError::Runtime(e.to_string()))?;
    let signal = GraphSignal::new(column.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    let fhat = gft(&eig, &signal).map_err(|e| CliError::Runtime(e.to_string()))?;
    let back = igft(&eig, &fhat).map_err(|e| CliError::Runtime(e.to_string()))?;
    let residual = signal
        .values()
        .iter()
        .zip(back.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);

    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join("spectrum.csv");
    let mut f = std::fs::File::create(&path)?;
    writeln!(f, "k,lambda,coefficient")?;
    for (k, (lam, c)) in eig.eigenvalues().iter().zip(fhat.values()).enumerate() {
        writeln!(f, "{k},{lam},{c}")?;
    }
    println!(
        "decomposed signal {:?} over {} eigenpairs",
        names[args.column],
        eig.n()
    );
    println!("spectrum written to {}", path.display());
    println!("round-trip residual: {residual:e}");
    if residual >= 1e-8 {
        return Err(CliError::Runtime(format!(
            "round-trip residual {residual:e} exceeds 1e-8"
        )));
    }
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let ops = run_op_suite(args.seed, args.instances, DEFAULT_TOL)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let layers = run_layer_suite(args.seed, args.instances, DEFAULT_TOL)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut all_ok = true;
    let mut print_suite = |title: &str, suite: &SuiteReport| {
        println!("{title}");
        for (target, worst, ok) in suite.by_target() {
            println!(
                "  {target:<28} worst rel err {worst:9.3e}  {}",
                if ok { "pass" } else { "FAIL" }
            );
            all_ok &= ok;
        }
    };
    print_suite("operations:", &ops);
    print_suite("layers and losses:", &layers);

    if args.inject_fault {
        let report =
            run_corrupted_rule_check(DEFAULT_TOL).map_err(|e| CliError::Runtime(e.to_string()))?;
        println!(
            "fault injection: {:<12} worst rel err {:9.3e}  {}",
            report.name,
            report.max_rel_err,
            if report.passed {
                "pass (BAD: should fail)"
            } else {
                "fail (expected)"
            }
        );
        // The corrupted rule slipping through means the checker is broken.
        all_ok &= !report.passed;
        if !report.passed {
            println!("the corrupted rule was correctly flagged; exiting nonzero to surface it");
            return Err(CliError::Runtime(
                "gradient check failed (injected fault detected)".into(),
            ));
        }
    }

    if all_ok {
        println!("all gradient checks passed");
        Ok(())
    } else {
        Err(CliError::Runtime("gradient check failed".into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::TrainGraph(args) => cmd_train_graph(args),
        Cmd::TrainNode(args) => cmd_train_node(args),
        Cmd::TrainLink(args) => cmd_train_link(args),
        Cmd::SpectralDemo(args) => cmd_spectral_demo(args),
        Cmd::Gradcheck(args) => cmd_gradcheck(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
