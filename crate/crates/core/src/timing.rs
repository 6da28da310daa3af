//! Wall-clock scaling measurements.
//!
//! Two properties are measurable at desk scale: precompute cost grows with
//! the edge count (each hop is one pass over the adjacency), while per-epoch
//! training cost does not depend on edges at all, only on the number of
//! training nodes. The benchmark builds controlled graph variants (double
//! the edges at fixed n, or double n at fixed average degree), precomputes,
//! and times training epochs; medians over repeated runs keep the numbers
//! stable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::data::{FeatureMatrix, LabelSet, NodeSplit};
use crate::error::Result;
use crate::graph::random_graph;
use crate::model::{HeadKind, ModelConfig, TaskKind};
use crate::precompute::neighbor2seq;
use crate::train::{train_with_data, SequenceSource, TrainConfig, TrainPaths};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub n: usize,
    pub avg_degree: usize,
    pub feature_dim: usize,
    pub hops: usize,
    pub hidden_dim: usize,
    pub head: HeadKind,
    pub num_classes: usize,
    pub batch_size: usize,
    pub warmup_epochs: usize,
    pub measured_epochs: usize,
    /// Times the precompute is repeated for its median.
    pub precompute_repeats: usize,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            n: 100_000,
            avg_degree: 20,
            feature_dim: 32,
            hops: 3,
            hidden_dim: 16,
            head: HeadKind::Attn,
            num_classes: 4,
            batch_size: 1024,
            warmup_epochs: 2,
            measured_epochs: 5,
            precompute_repeats: 5,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantKind {
    Base,
    /// Same nodes, twice the edges.
    DoubleEdges,
    /// Twice the nodes, same average degree.
    DoubleNodes,
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantTiming {
    pub name: String,
    pub nodes: usize,
    pub edge_slots: usize,
    /// Median wall seconds for the full precompute.
    pub precompute_seconds: f64,
    /// Median wall seconds per training epoch after warm-up.
    pub epoch_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TimingReport {
    pub variants: Vec<VariantTiming>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[mid]
    } else {
        0.5 * (xs[mid - 1] + xs[mid])
    }
}

pub fn benchmark(spec: &BenchSpec, variants: &[VariantKind]) -> Result<TimingReport> {
    let mut out = Vec::with_capacity(variants.len());
    for kind in variants {
        let (name, n, undirected_edges) = match kind {
            VariantKind::Base => ("base", spec.n, spec.n * spec.avg_degree / 2),
            VariantKind::DoubleEdges => ("double-edges", spec.n, spec.n * spec.avg_degree),
            VariantKind::DoubleNodes => ("double-nodes", 2 * spec.n, spec.n * spec.avg_degree),
        };
        out.push(time_variant(spec, name, n, undirected_edges)?);
    }
    Ok(TimingReport { variants: out })
}

fn time_variant(
    spec: &BenchSpec,
    name: &str,
    n: usize,
    undirected_edges: usize,
) -> Result<VariantTiming> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let graph = random_graph(n, undirected_edges, &mut rng)?.add_self_loops()?;
    let d = spec.feature_dim;
    let values: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let features = FeatureMatrix::new(n, d, values)?;

    let mut precompute_times = Vec::with_capacity(spec.precompute_repeats);
    let mut seq = None;
    for _ in 0..spec.precompute_repeats.max(1) {
        let start = Instant::now();
        let result = neighbor2seq(&graph, &features, spec.hops)?;
        precompute_times.push(start.elapsed().as_secs_f64());
        seq = Some(result);
    }
    let seq = seq.expect("at least one precompute run");
    let edge_slots = graph.edge_slot_count();
    drop(graph);

    let labels = LabelSet::single(
        spec.num_classes,
        (0..n).map(|_| rng.gen_range(0..spec.num_classes as u32)).collect(),
    )?;
    let split = NodeSplit::new(n, (0..n as u32).collect(), vec![], vec![])?;
    let source = SequenceSource::InMemory(seq);

    let epochs = spec.warmup_epochs + spec.measured_epochs;
    let config = TrainConfig {
        seed: spec.seed,
        batch_size: spec.batch_size,
        learning_rate: 1e-3,
        weight_decay: 0.0,
        max_epochs: epochs,
        patience: usize::MAX,
        eval_every: epochs + 1,
        memory_budget_bytes: None,
        model: ModelConfig {
            head: spec.head,
            hops: spec.hops,
            in_dim: spec.feature_dim,
            hidden_dim: spec.hidden_dim,
            num_classes: spec.num_classes,
            kernel_size: 3,
            use_positional_encoding: true,
            dropout_rate: 0.0,
            task: TaskKind::SingleLabel,
        },
        paths: TrainPaths {
            sequences: "in-memory".into(),
            labels: "in-memory".into(),
            split: "in-memory".into(),
        },
    };
    let result = train_with_data(&config, &source, &labels, &split)?;
    let epoch_times: Vec<f64> = result
        .log
        .iter()
        .filter(|l| l.split == "train")
        .skip(spec.warmup_epochs)
        .map(|l| l.seconds)
        .collect();

    Ok(VariantTiming {
        name: name.to_string(),
        nodes: n,
        edge_slots,
        precompute_seconds: median(precompute_times),
        epoch_seconds: median(epoch_times),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn tiny_benchmark_produces_all_variants() {
        let spec = BenchSpec {
            n: 200,
            avg_degree: 6,
            feature_dim: 4,
            hops: 2,
            hidden_dim: 4,
            batch_size: 64,
            warmup_epochs: 1,
            measured_epochs: 2,
            precompute_repeats: 2,
            ..BenchSpec::default()
        };
        let report = benchmark(
            &spec,
            &[VariantKind::Base, VariantKind::DoubleEdges, VariantKind::DoubleNodes],
        )
        .unwrap();
        assert_eq!(report.variants.len(), 3);
        assert_eq!(report.variants[0].nodes, 200);
        assert_eq!(report.variants[2].nodes, 400);
        assert!(report.variants[1].edge_slots > report.variants[0].edge_slots);
        for v in &report.variants {
            assert!(v.precompute_seconds >= 0.0);
            assert!(v.epoch_seconds > 0.0);
        }
    }
}
