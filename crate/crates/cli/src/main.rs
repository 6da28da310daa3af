//! Pipeline driver.
//!
//! Logs and the resolved configuration go to stderr; machine-readable
//! results go to stdout as JSON. Exit codes: 0 success, 1 usage error,
//! 2 runtime error. All randomness flows from the explicit seeds, so every
//! invocation is reproducible from its printed configuration.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde_json::json;

use n2s_core::synth::SyntheticSpec;
use n2s_core::timing::{BenchSpec, VariantKind};
use n2s_core::train::{SequenceSource, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "n2s", version, about = "Hop-sequence node classification pipeline")]
struct Cli {
    /// Cap internal worker parallelism (default: hardware concurrency).
    /// Results are identical for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Precompute hop sequences from an edge list and a feature file.
    Precompute {
        /// Edge list: one "src dst" pair per line, '#' comments.
        #[arg(long)]
        edges: PathBuf,
        /// Feature file (N2SF).
        #[arg(long)]
        features: PathBuf,
        /// Hop count L; the output has L+1 positions per node.
        #[arg(long)]
        hops: usize,
        /// Rows staged per write while streaming the output.
        #[arg(long, default_value_t = 4096)]
        chunk_rows: usize,
        /// Output sequence file (N2SQ).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a JSON config; writes a checkpoint and a metrics log.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Where to write the best-validation checkpoint.
        #[arg(long)]
        checkpoint_out: PathBuf,
        /// Where to write the JSON-lines metrics log.
        #[arg(long)]
        log_out: PathBuf,
    },
    /// Evaluate a checkpoint on one split part; prints a metrics JSON object.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sequences: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// train, val or test.
        #[arg(long)]
        part: String,
        /// Evaluation batch size.
        #[arg(long, default_value_t = 512)]
        batch_size: usize,
    },
    /// Generate a synthetic dataset as edge list + binary fixture files.
    GenSynth {
        /// planted-color-denoise, order-probe or sbm.
        #[arg(long)]
        kind: String,
        /// Node count (labeled cores for order-probe).
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        /// order-probe: hop count (signal depth range), must be >= 1.
        #[arg(long)]
        hops: Option<usize>,
        #[arg(long, default_value_t = 2)]
        communities: usize,
        #[arg(long, default_value_t = 0.05)]
        p_in: f64,
        #[arg(long, default_value_t = 0.005)]
        p_out: f64,
        /// planted-color-denoise: color corruption probability.
        #[arg(long, default_value_t = 0.4)]
        noise: f64,
        /// sbm: feature dimension.
        #[arg(long, default_value_t = 8)]
        feature_dim: usize,
        /// sbm: distance between community feature means.
        #[arg(long, default_value_t = 1.0)]
        mean_separation: f64,
    },
    /// Time precompute and per-epoch training cost on controlled graph variants.
    Bench {
        /// JSON benchmark spec; missing file fields fall back to defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Which variant pairs to run: edges, nodes or both.
        #[arg(long, default_value = "both")]
        variants: String,
    },
}

/// Errors that should exit 1 (bad invocation) vs 2 (failed run).
enum CliError {
    Usage(String),
    Runtime(n2s_core::Error),
}

impl From<n2s_core::Error> for CliError {
    fn from(e: n2s_core::Error) -> Self {
        CliError::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    return ExitCode::SUCCESS;
                }
                _ => 1,
            };
            eprintln!("{e}");
            return ExitCode::from(code);
        }
    };
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("--threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("failed to configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Precompute { edges, features, hops, chunk_rows, out } => {
            cmd_precompute(edges, features, hops, chunk_rows, out)
        }
        Command::Train { config, checkpoint_out, log_out } => {
            cmd_train(config, checkpoint_out, log_out)
        }
        Command::Eval { checkpoint, sequences, labels, split, part, batch_size } => {
            cmd_eval(checkpoint, sequences, labels, split, part, batch_size)
        }
        Command::GenSynth {
            kind,
            n,
            seed,
            out_dir,
            hops,
            communities,
            p_in,
            p_out,
            noise,
            feature_dim,
            mean_separation,
        } => cmd_gen_synth(GenArgs {
            kind,
            n,
            seed,
            out_dir,
            hops,
            communities,
            p_in,
            p_out,
            noise,
            feature_dim,
            mean_separation,
        }),
        Command::Bench { config, variants } => cmd_bench(config, variants),
    }
}

fn print_resolved(label: &str, value: &serde_json::Value) {
    eprintln!("resolved {label}: {value}");
}

fn cmd_precompute(
    edges: PathBuf,
    features: PathBuf,
    hops: usize,
    chunk_rows: usize,
    out: PathBuf,
) -> Result<(), CliError> {
    if chunk_rows == 0 {
        return Err(CliError::Usage("--chunk-rows must be at least 1".into()));
    }
    print_resolved(
        "precompute",
        &json!({
            "edges": edges, "features": features, "hops": hops,
            "chunk_rows": chunk_rows, "out": out,
        }),
    );
    let x = n2s_core::data::load_features(&features)?;
    let graph = n2s_core::graph::load_edge_list(&edges, x.node_count())?;
    let graph = graph.add_self_loops()?;
    eprintln!(
        "loaded graph: {} nodes, {} edge slots (self-loops included)",
        graph.node_count(),
        graph.edge_slot_count()
    );
    let start = Instant::now();
    n2s_core::precompute::neighbor2seq_chunked(&graph, &x, hops, chunk_rows, &out)?;
    let seconds = start.elapsed().as_secs_f64();
    // two full hop buffers plus the write-staging chunk
    let peak_memory_bytes = (2 * graph.node_count() + chunk_rows) * x.dim() * 8;
    let report = json!({
        "n": graph.node_count(),
        "edge_slots": graph.edge_slot_count(),
        "hops": hops,
        "dim": x.dim(),
        "seconds": seconds,
        "peak_memory_bytes_estimate": peak_memory_bytes,
        "out": out,
    });
    println!("{report}");
    Ok(())
}

fn cmd_train(config: PathBuf, checkpoint_out: PathBuf, log_out: PathBuf) -> Result<(), CliError> {
    let config = TrainConfig::from_json_file(&config)?;
    let resolved = serde_json::to_value(&config)
        .map_err(|e| CliError::Runtime(n2s_core::Error::format(e.to_string())))?;
    print_resolved("train config", &resolved);
    let result = n2s_core::train::train(&config)?;
    n2s_core::model::save_model(&result.model, &checkpoint_out)?;
    let log_file = File::create(&log_out).map_err(n2s_core::Error::from)?;
    n2s_core::train::write_log(&result.log, BufWriter::new(log_file))?;
    for line in result.log.iter().filter(|l| l.split == "val") {
        eprintln!("epoch {:>4} val metric {:.4} loss {:.4}", line.epoch, line.metric, line.loss);
    }
    let summary = json!({
        "best_val_metric": result.best_val_metric,
        "best_epoch": result.best_epoch,
        "epochs_run": result.epochs_run,
        "checkpoint": checkpoint_out,
        "log": log_out,
    });
    println!("{summary}");
    Ok(())
}

fn cmd_eval(
    checkpoint: PathBuf,
    sequences: PathBuf,
    labels: PathBuf,
    split: PathBuf,
    part: String,
    batch_size: usize,
) -> Result<(), CliError> {
    if batch_size == 0 {
        return Err(CliError::Usage("--batch-size must be at least 1".into()));
    }
    print_resolved(
        "eval",
        &json!({
            "checkpoint": checkpoint, "sequences": sequences, "labels": labels,
            "split": split, "part": part, "batch_size": batch_size,
        }),
    );
    let model = n2s_core::model::load_model(&checkpoint)?;
    let source = SequenceSource::open(&sequences, None)?;
    if source.hops() != model.config.hops {
        return Err(CliError::Runtime(n2s_core::Error::dimension(format!(
            "sequence length mismatch: file has {} hops, model expects {}",
            source.hops(),
            model.config.hops
        ))));
    }
    let labels = n2s_core::data::load_labels(&labels)?;
    let split = n2s_core::data::load_split(&split)?;
    let indices = split.part(&part)?;
    let metrics = n2s_core::train::evaluate(&model, &source, &labels, indices, batch_size)?;
    let line = serde_json::to_string(&metrics)
        .map_err(|e| CliError::Runtime(n2s_core::Error::format(e.to_string())))?;
    println!("{line}");
    Ok(())
}

struct GenArgs {
    kind: String,
    n: usize,
    seed: u64,
    out_dir: PathBuf,
    hops: Option<usize>,
    communities: usize,
    p_in: f64,
    p_out: f64,
    noise: f64,
    feature_dim: usize,
    mean_separation: f64,
}

fn cmd_gen_synth(args: GenArgs) -> Result<(), CliError> {
    let spec = match args.kind.as_str() {
        "planted-color-denoise" => SyntheticSpec::PlantedColorDenoise {
            n: args.n,
            communities: args.communities,
            p_in: args.p_in,
            p_out: args.p_out,
            noise: args.noise,
            seed: args.seed,
        },
        "order-probe" => {
            let hops = args
                .hops
                .ok_or_else(|| CliError::Usage("order-probe requires --hops".into()))?;
            if hops == 0 {
                return Err(CliError::Usage(
                    "order-probe requires --hops >= 1 (the signal needs a real position)".into(),
                ));
            }
            SyntheticSpec::OrderProbe { n: args.n, hops, seed: args.seed }
        }
        "sbm" => SyntheticSpec::Sbm {
            n: args.n,
            communities: args.communities,
            p_in: args.p_in,
            p_out: args.p_out,
            feature_dim: args.feature_dim,
            mean_separation: args.mean_separation,
            seed: args.seed,
        },
        other => {
            return Err(CliError::Usage(format!(
                "unknown --kind '{other}' (expected planted-color-denoise, order-probe or sbm)"
            )))
        }
    };
    let resolved = serde_json::to_value(&spec)
        .map_err(|e| CliError::Runtime(n2s_core::Error::format(e.to_string())))?;
    print_resolved("gen-synth", &resolved);

    let data = n2s_core::synth::generate(&spec)?;
    std::fs::create_dir_all(&args.out_dir).map_err(n2s_core::Error::from)?;
    let edges_path = args.out_dir.join("edges.txt");
    let features_path = args.out_dir.join("features.bin");
    let labels_path = args.out_dir.join("labels.bin");
    let split_path = args.out_dir.join("split.bin");
    n2s_core::graph::write_edge_list(&data.graph, &edges_path)?;
    n2s_core::data::save_features(&data.features, &features_path)?;
    n2s_core::data::save_labels(&data.labels, &labels_path)?;
    n2s_core::data::save_split(&data.split, data.graph.node_count(), &split_path)?;
    let meta = json!({
        "spec": spec,
        "nodes": data.graph.node_count(),
        "edge_slots": data.graph.edge_slot_count(),
        "feature_dim": data.features.dim(),
        "num_classes": data.labels.num_classes(),
        "train": data.split.train.len(),
        "val": data.split.val.len(),
        "test": data.split.test.len(),
    });
    std::fs::write(
        args.out_dir.join("meta.json"),
        format!("{:#}\n", meta),
    )
    .map_err(n2s_core::Error::from)?;
    println!("{meta}");
    Ok(())
}

fn cmd_bench(config: Option<PathBuf>, variants: String) -> Result<(), CliError> {
    let spec: BenchSpec = match config {
        Some(path) => {
            let file = File::open(&path).map_err(n2s_core::Error::from)?;
            serde_json::from_reader(file)
                .map_err(|e| CliError::Runtime(n2s_core::Error::format(format!("bad bench config: {e}"))))?
        }
        None => BenchSpec::default(),
    };
    let kinds: Vec<VariantKind> = match variants.as_str() {
        "edges" => vec![VariantKind::Base, VariantKind::DoubleEdges],
        "nodes" => vec![VariantKind::Base, VariantKind::DoubleNodes],
        "both" => vec![VariantKind::Base, VariantKind::DoubleEdges, VariantKind::DoubleNodes],
        other => {
            return Err(CliError::Usage(format!(
                "unknown --variants '{other}' (expected edges, nodes or both)"
            )))
        }
    };
    let resolved = serde_json::to_value(&spec)
        .map_err(|e| CliError::Runtime(n2s_core::Error::format(e.to_string())))?;
    print_resolved("bench", &resolved);
    let report = n2s_core::timing::benchmark(&spec, &kinds)?;
    for v in &report.variants {
        eprintln!(
            "{:>13}: n = {:>8}, edge slots = {:>9}, precompute {:.3}s, epoch {:.3}s",
            v.name, v.nodes, v.edge_slots, v.precompute_seconds, v.epoch_seconds
        );
    }
    let line = serde_json::to_string(&report)
        .map_err(|e| CliError::Runtime(n2s_core::Error::format(e.to_string())))?;
    println!("{line}");
    Ok(())
}
