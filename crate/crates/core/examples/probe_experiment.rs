//! Scratch experiment driver for the order-probe task. Not part of the
//! test suite; run with
//! `cargo run -p n2s-core --example probe_experiment --release -- <n> <hops> <epochs>`

use n2s_core::model::{HeadKind, ModelConfig, TaskKind};
use n2s_core::synth::{generate, SyntheticSpec, ORDER_PROBE_FEATURE_DIM};
use n2s_core::train::{evaluate, train_with_data, SequenceSource, TrainConfig, TrainPaths};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let hops: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(4);
    let max_epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(150);
    let seed: u64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1);

    let spec = SyntheticSpec::OrderProbe { n, hops, seed };
    let data = generate(&spec).unwrap();
    let g = data.graph.clone().add_self_loops().unwrap();
    let t0 = std::time::Instant::now();
    let seq = n2s_core::precompute::neighbor2seq(&g, &data.features, hops).unwrap();
    eprintln!("precompute: {:.2}s, {} nodes", t0.elapsed().as_secs_f64(), g.node_count());
    let source = SequenceSource::InMemory(seq);

    for (name, head, use_pe) in [
        ("conv     ", HeadKind::Conv, false),
        ("attn+pe  ", HeadKind::Attn, true),
        ("attn-nope", HeadKind::Attn, false),
    ] {
        let config = TrainConfig {
            seed: seed + 100,
            batch_size: 128,
            learning_rate: 0.01,
            weight_decay: 1e-4,
            max_epochs,
            patience: 8,
            eval_every: 5,
            memory_budget_bytes: None,
            model: ModelConfig {
                head,
                hops,
                in_dim: ORDER_PROBE_FEATURE_DIM,
                hidden_dim: 32,
                num_classes: hops,
                kernel_size: 3,
                use_positional_encoding: use_pe,
                dropout_rate: 0.5,
                task: TaskKind::SingleLabel,
            },
            paths: TrainPaths {
                sequences: "mem".into(),
                labels: "mem".into(),
                split: "mem".into(),
            },
        };
        let t0 = std::time::Instant::now();
        let result = train_with_data(&config, &source, &data.labels, &data.split).unwrap();
        let test =
            evaluate(&result.model, &source, &data.labels, &data.split.test, 256).unwrap();
        let val_curve: Vec<String> = result
            .log
            .iter()
            .filter(|l| l.split == "val")
            .map(|l| format!("{}:{:.2}", l.epoch, l.metric))
            .collect();
        println!(
            "{name} test={:.3} best_val={:.3}@{} epochs={} time={:.1}s",
            test.accuracy.unwrap(),
            result.best_val_metric,
            result.best_epoch,
            result.epochs_run,
            t0.elapsed().as_secs_f64(),
        );
        println!("  val curve: {}", val_curve.join(" "));
    }
}
