//! Command-line entry point for the segmn toolkit.
//!
//! Subcommands cover the whole pipeline: synthetic dataset generation,
//! exact-GED labeling, structural transform dumps, the GED oracle, model
//! training and evaluation, the ablation and portability harnesses, and
//! similarity-matrix dumps for case studies.
//!
//! Every artifact-producing run writes a manifest echoing its fully
//! resolved configuration next to its outputs. Errors are reported as a
//! single `error: ...` line on stderr with a nonzero exit code.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use segmn::baseline::GraphSimStub;
use segmn::config::ExperimentConfig;
use segmn::data::{generate_synthetic, Corpus, GraphRecord, SyntheticConfig};
use segmn::ged::{self, EditCostModel};
use segmn::graph::AssignmentGraph;
use segmn::matrix::Matrix;
use segmn::model::{precompute_features, ModelError, PairData, PairModel, SegmnModel};
use segmn::train::{self, HarnessReport};
use segmn::Tape;

#[derive(Parser)]
#[command(
    name = "segmn",
    version,
    about = "Graph similarity toolkit: GED regression with structure-enhanced matching"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of connected labeled graphs.
    Gen(GenArgs),
    /// Compute exact GED labels for every graph pair of a dataset.
    Label(LabelArgs),
    /// Dump the line graph of a graph, or the assignment graph of a pair.
    Transform(TransformArgs),
    /// Exact GED and normalized similarity target for two graph records.
    Oracle(OracleArgs),
    /// Train a model on a labeled dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset's test queries.
    Eval(EvalArgs),
    /// Run the six-variant embedding x SPM ablation.
    Ablate(HarnessArgs),
    /// Run the SPM portability study on the GraphSim-style baseline.
    Portability(HarnessArgs),
    /// Dump S1 before and after SPM for a chosen pair.
    DumpMatrix(DumpMatrixArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    n_graphs: usize,
    #[arg(long, default_value_t = 4)]
    n_min: usize,
    #[arg(long, default_value_t = 8)]
    n_max: usize,
    #[arg(long, default_value_t = 0.35)]
    edge_prob: f64,
    /// Number of node labels; 0 generates unlabeled graphs.
    #[arg(long, default_value_t = 0)]
    labels: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct LabelArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Exact-search node budget; pairs with larger graphs fail.
    #[arg(long, default_value_t = 10)]
    budget: usize,
}

#[derive(Args)]
struct TransformArgs {
    #[arg(long)]
    data: PathBuf,
    /// Graph id whose line graph to dump.
    #[arg(long, conflicts_with = "pair")]
    graph: Option<String>,
    /// Two graph ids whose assignment graph to dump.
    #[arg(long, num_args = 2, value_names = ["ID1", "ID2"])]
    pair: Option<Vec<String>>,
    /// Write the dump here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// Two graph record files.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pair: Vec<PathBuf>,
    #[arg(long, default_value_t = 10)]
    budget: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Experiment config file (flat key = value).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// node, edge, or dual.
    #[arg(long)]
    variant: Option<String>,
    /// Number of SPM layers; 0 disables structure perception matching.
    #[arg(long)]
    spm_layers: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Where to write the report; defaults next to the checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HarnessArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DumpMatrixArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Two graph ids.
    #[arg(long, num_args = 2, value_names = ["ID1", "ID2"])]
    pair: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        // Single-line machine-parsable error.
        let msg = format!("{e:#}").replace('\n', " ");
        eprintln!("error: {msg}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Label(args) => cmd_label(args),
        Command::Transform(args) => cmd_transform(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_harness(args, true),
        Command::Portability(args) => cmd_harness(args, false),
        Command::DumpMatrix(args) => cmd_dump_matrix(args),
    }
}

/// Writes `run-manifest-<command>.json` echoing the resolved configuration.
fn write_run_manifest(
    dir: &Path,
    command: &str,
    resolved: BTreeMap<String, String>,
) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    let manifest = serde_json::json!({
        "command": command,
        "resolved": resolved,
    });
    let path = dir.join(format!("run-manifest-{command}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        n_graphs: args.n_graphs,
        n_min: args.n_min,
        n_max: args.n_max,
        edge_prob: args.edge_prob,
        label_count: args.labels,
        seed: args.seed,
    };
    let corpus = generate_synthetic(&cfg)?;
    corpus.save(&args.out)?;
    let resolved = BTreeMap::from([
        ("out".to_string(), args.out.display().to_string()),
        ("n_graphs".to_string(), cfg.n_graphs.to_string()),
        ("n_min".to_string(), cfg.n_min.to_string()),
        ("n_max".to_string(), cfg.n_max.to_string()),
        ("edge_prob".to_string(), cfg.edge_prob.to_string()),
        ("labels".to_string(), cfg.label_count.to_string()),
        ("seed".to_string(), cfg.seed.to_string()),
    ]);
    write_run_manifest(&args.out, "gen", resolved)?;
    println!(
        "generated {} graphs ({} train / {} test) at {}",
        corpus.graphs().len(),
        corpus.train_indices().len(),
        corpus.test_indices().len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_label(args: LabelArgs) -> Result<()> {
    let mut corpus = Corpus::load(&args.data)?;
    let started = std::time::Instant::now();
    corpus.compute_labels(args.budget)?;
    corpus.save(&args.data)?;
    let resolved = BTreeMap::from([
        ("data".to_string(), args.data.display().to_string()),
        ("budget".to_string(), args.budget.to_string()),
    ]);
    write_run_manifest(&args.data, "label", resolved)?;
    println!(
        "labeled {} pairs in {:.1}s",
        corpus.labeled_pair_count(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn adjacency_dump(n: usize, edges: &[(usize, usize)]) -> String {
    let mut grid = vec![vec!['.'; n]; n];
    for &(i, j) in edges {
        grid[i][j] = '1';
        grid[j][i] = '1';
    }
    let mut out = String::new();
    for row in grid {
        out.push_str(&row.iter().collect::<String>());
        out.push('\n');
    }
    out
}

fn cmd_transform(args: TransformArgs) -> Result<()> {
    let corpus = Corpus::load(&args.data)?;
    let lookup = |id: &str| {
        corpus
            .index_of(id)
            .ok_or_else(|| anyhow!("graph id `{id}` not found in {}", args.data.display()))
    };

    let text = if let Some(id) = &args.graph {
        let g = corpus.graph(lookup(id)?);
        let lg = g.line_graph();
        let record = GraphRecord {
            id: format!("{}-line", g.id()),
            num_nodes: Some(lg.num_nodes()),
            node_labels: None,
            edges: lg.edges().iter().map(|&(i, j)| [i, j]).collect(),
        };
        format!(
            "{}\n# line graph of `{}`: {} nodes, {} edges\n{}",
            serde_json::to_string(&record)?,
            g.id(),
            lg.num_nodes(),
            lg.num_edges(),
            adjacency_dump(lg.num_nodes(), lg.edges())
        )
    } else if let Some(pair) = &args.pair {
        let g1 = corpus.graph(lookup(&pair[0])?);
        let g2 = corpus.graph(lookup(&pair[1])?);
        let ag = AssignmentGraph::build(g1, g2);
        let record = GraphRecord {
            id: format!("{}-x-{}-assignment", g1.id(), g2.id()),
            num_nodes: Some(ag.num_nodes()),
            node_labels: None,
            edges: ag.edges().iter().map(|&(i, j)| [i, j]).collect(),
        };
        format!(
            "{}\n# assignment graph of (`{}`, `{}`): {} nodes, {} edges; node (i,a) = i*{}+a\n{}",
            serde_json::to_string(&record)?,
            g1.id(),
            g2.id(),
            ag.num_nodes(),
            ag.num_edges(),
            ag.n2(),
            adjacency_dump(ag.num_nodes(), ag.edges())
        )
    } else {
        bail!("transform needs --graph ID or --pair ID1 ID2");
    };

    match &args.out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<()> {
    let mut records = Vec::new();
    for path in &args.pair {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let record: GraphRecord = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))?;
        records.push(record);
    }
    // Standalone records carry label names directly; build the vocabulary
    // from whatever appears in the two files.
    let mut vocab: Vec<String> = records
        .iter()
        .flat_map(|r| r.node_labels.iter().flatten().cloned())
        .collect();
    vocab.sort();
    vocab.dedup();
    let g1 = records[0].clone().into_graph(&vocab)?;
    let g2 = records[1].clone().into_graph(&vocab)?;
    let d = ged::exact_ged_astar(&g1, &g2, &EditCostModel::default(), args.budget)?;
    let y = ged::normalized_target(d, g1.num_nodes(), g2.num_nodes());
    println!("ged={d} target={y}");
    Ok(())
}

/// Resolves the experiment config from defaults, file, then flag overrides.
fn resolve_config(
    config: Option<&PathBuf>,
    seed: Option<u64>,
    variant: Option<&str>,
    spm_layers: Option<usize>,
) -> Result<ExperimentConfig> {
    let mut cfg = match config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(variant) = variant {
        cfg.set("variant", variant)?;
    }
    if let Some(k) = spm_layers {
        cfg.set("spm_layers", &k.to_string())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn manifest_from_config(cfg: &ExperimentConfig, data: &Path) -> BTreeMap<String, String> {
    let mut resolved = BTreeMap::from([("data".to_string(), data.display().to_string())]);
    for line in cfg.echo().lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            resolved.insert(k.to_string(), v.to_string());
        }
    }
    resolved
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let corpus = Corpus::load(&args.data)?;
    let cfg = resolve_config(
        args.config.as_ref(),
        args.seed,
        args.variant.as_deref(),
        args.spm_layers,
    )?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_run_manifest(&args.out, "train", manifest_from_config(&cfg, &args.data))?;

    let mut model =
        SegmnModel::new(cfg.model_config(corpus.input_dim(), corpus.n_max()), cfg.seed);
    let log_path = args.out.join("train.log");
    let mut log_file = std::fs::File::create(&log_path)
        .with_context(|| format!("creating {}", log_path.display()))?;
    let outcome = train::train(&mut model, &corpus, &cfg, Some(&mut log_file))?;

    let ckpt_path = args.out.join("model.ckpt");
    model.save(&ckpt_path)?;

    let features = precompute_features(corpus.graphs());
    let mut report = train::evaluate(&model, &corpus, &features)?;
    report.config_echo = cfg.echo();
    std::fs::write(args.out.join("eval.json"), serde_json::to_string_pretty(&report)?)?;

    println!(
        "trained {} epochs (final train mse {:.6}); checkpoint at {}",
        outcome.log.len(),
        outcome.final_train_mse,
        ckpt_path.display()
    );
    println!("test: {}", report.summary());
    Ok(())
}

enum AnyModel {
    Segmn(Box<SegmnModel>),
    GraphSim(Box<GraphSimStub>),
}

impl AnyModel {
    fn load(path: &Path) -> Result<AnyModel> {
        match SegmnModel::load(path) {
            Ok(m) => Ok(AnyModel::Segmn(Box::new(m))),
            Err(ModelError::WrongModel { .. }) => {
                Ok(AnyModel::GraphSim(Box::new(GraphSimStub::load(path)?)))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn set_n_max(&mut self, n_max: usize) {
        match self {
            AnyModel::Segmn(m) => m.set_n_max(n_max),
            AnyModel::GraphSim(m) => m.set_n_max(n_max),
        }
    }
}

impl PairModel for AnyModel {
    fn params(&self) -> &segmn::ModelParams {
        match self {
            AnyModel::Segmn(m) => m.params(),
            AnyModel::GraphSim(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> &mut segmn::ModelParams {
        match self {
            AnyModel::Segmn(m) => m.params_mut(),
            AnyModel::GraphSim(m) => m.params_mut(),
        }
    }

    fn predict(
        &self,
        tape: &Tape,
        pair: &PairData,
    ) -> std::result::Result<segmn::Tensor, segmn::matcher::MatcherError> {
        match self {
            AnyModel::Segmn(m) => m.predict(tape, pair),
            AnyModel::GraphSim(m) => m.predict(tape, pair),
        }
    }

    fn needs_spm(&self) -> bool {
        match self {
            AnyModel::Segmn(m) => m.needs_spm(),
            AnyModel::GraphSim(m) => m.needs_spm(),
        }
    }

    fn n_max(&self) -> usize {
        match self {
            AnyModel::Segmn(m) => m.n_max(),
            AnyModel::GraphSim(m) => m.n_max(),
        }
    }

    fn spm_executions(&self) -> u64 {
        match self {
            AnyModel::Segmn(m) => m.spm_executions(),
            AnyModel::GraphSim(m) => m.spm_executions(),
        }
    }
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let corpus = Corpus::load(&args.data)?;
    let mut model = AnyModel::load(&args.checkpoint)?;
    model.set_n_max(corpus.n_max());
    let features = precompute_features(corpus.graphs());
    let report = train::evaluate(&model, &corpus, &features)?;

    let out_dir = match &args.out {
        Some(dir) => dir.clone(),
        None => args
            .checkpoint
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    std::fs::create_dir_all(&out_dir)?;
    let resolved = BTreeMap::from([
        ("data".to_string(), args.data.display().to_string()),
        ("checkpoint".to_string(), args.checkpoint.display().to_string()),
    ]);
    write_run_manifest(&out_dir, "eval", resolved)?;
    std::fs::write(out_dir.join("eval.json"), serde_json::to_string_pretty(&report)?)?;
    println!("{}", report.summary());
    Ok(())
}

fn cmd_harness(args: HarnessArgs, ablation: bool) -> Result<()> {
    let corpus = Corpus::load(&args.data)?;
    let cfg = resolve_config(args.config.as_ref(), args.seed, None, None)?;
    std::fs::create_dir_all(&args.out)?;
    let command = if ablation { "ablate" } else { "portability" };
    write_run_manifest(&args.out, command, manifest_from_config(&cfg, &args.data))?;

    let report: HarnessReport = if ablation {
        train::ablation_harness(&corpus, &cfg)
    } else {
        train::portability_harness(&corpus, &cfg)
    };
    let json_path = args.out.join(format!("{command}.json"));
    std::fs::write(&json_path, serde_json::to_string_pretty(&report)?)?;
    std::fs::write(args.out.join(format!("{command}.txt")), report.table())?;
    print!("{}", report.table());
    println!("report written to {}", json_path.display());
    Ok(())
}

fn matrix_grid(m: &Matrix, n_rows: usize, n_cols: usize) -> String {
    let mut out = String::new();
    for i in 0..n_rows {
        for j in 0..n_cols {
            out.push_str(&format!("{:>10.6} ", m[(i, j)]));
        }
        out.push('\n');
    }
    out
}

/// Text heat table: entries bucketed into shade characters after
/// normalizing by the largest value in the block.
fn heat_table(m: &Matrix, n_rows: usize, n_cols: usize) -> String {
    const SHADES: [char; 10] = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    let mut max = 0.0f64;
    for i in 0..n_rows {
        for j in 0..n_cols {
            max = max.max(m[(i, j)].abs());
        }
    }
    let mut out = String::new();
    for i in 0..n_rows {
        for j in 0..n_cols {
            let v = if max == 0.0 { 0.0 } else { m[(i, j)].abs() / max };
            let idx = ((v * (SHADES.len() - 1) as f64).round() as usize).min(SHADES.len() - 1);
            out.push(SHADES[idx]);
            out.push(' ');
        }
        out.push('\n');
    }
    out
}

fn cmd_dump_matrix(args: DumpMatrixArgs) -> Result<()> {
    let corpus = Corpus::load(&args.data)?;
    let mut model = SegmnModel::load(&args.checkpoint)?;
    model.set_n_max(corpus.n_max());
    let i1 = corpus
        .index_of(&args.pair[0])
        .ok_or_else(|| anyhow!("graph id `{}` not found", args.pair[0]))?;
    let i2 = corpus
        .index_of(&args.pair[1])
        .ok_or_else(|| anyhow!("graph id `{}` not found", args.pair[1]))?;

    let g1 = corpus.graph(i1);
    let g2 = corpus.graph(i2);
    let features = precompute_features(corpus.graphs());
    let pair = PairData::build(g1, g2, &features[i1], &features[i2], model.needs_spm());
    let tape = Tape::new();
    let pred = model.predict_detailed(&tape, &pair)?;

    std::fs::create_dir_all(&args.out)?;
    let resolved = BTreeMap::from([
        ("data".to_string(), args.data.display().to_string()),
        ("checkpoint".to_string(), args.checkpoint.display().to_string()),
        ("pair".to_string(), format!("{} {}", args.pair[0], args.pair[1])),
    ]);
    write_run_manifest(&args.out, "dump-matrix", resolved)?;

    let s1 = tape.value(pred.s1_initial.scores);
    let s1e = tape.value(pred.s1_enhanced.scores);
    let (n1, n2) = (pred.s1_initial.n1, pred.s1_initial.n2);
    std::fs::write(args.out.join("s1.txt"), matrix_grid(&s1, n1, n2))?;
    std::fs::write(args.out.join("s1_spm.txt"), matrix_grid(&s1e, n1, n2))?;
    let heat = format!(
        "S1 (cross-graph interaction), rows = {} ({} nodes), cols = {} ({} nodes)\n{}\nS1 after structure perception matching\n{}",
        g1.id(),
        n1,
        g2.id(),
        n2,
        heat_table(&s1, n1, n2),
        heat_table(&s1e, n1, n2)
    );
    std::fs::write(args.out.join("heat.txt"), heat)?;

    let s_hat = tape.value(pred.s_hat)[(0, 0)];
    println!("pair ({}, {}): predicted similarity {:.6}", g1.id(), g2.id(), s_hat);
    println!("wrote s1.txt, s1_spm.txt, heat.txt to {}", args.out.display());
    Ok(())
}
