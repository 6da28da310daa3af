//! Synthetic graph/task generators used for verification, plus the
//! neighborhood majority-vote baseline.
//!
//! Three task kinds:
//! - `planted-color-denoise`: community graph whose node features are the
//!   true community color, flipped to a wrong color with some probability.
//!   Aggregating neighborhoods denoises the color.
//! - `order-probe`: every labeled node carries satellite chains of depths
//!   1..=L; the label says which depth holds the planted signal, so the
//!   class is encoded purely in WHERE along the hop sequence the signal
//!   first appears. Position-blind pooling cannot separate the classes.
//! - `sbm`: plain stochastic block model with Gaussian community features.
//!
//! Generation is a pure function of the spec (including its seed).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, LabelSet, NodeSplit};
use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SyntheticSpec {
    PlantedColorDenoise {
        /// Node count.
        n: usize,
        communities: usize,
        p_in: f64,
        p_out: f64,
        /// Probability that a node's observed color is flipped to a
        /// uniformly random other community.
        noise: f64,
        seed: u64,
    },
    OrderProbe {
        /// Labeled core nodes; satellites are added on top.
        n: usize,
        /// Hop count L >= 1; classes are the signal depths 1..=L.
        hops: usize,
        seed: u64,
    },
    Sbm {
        n: usize,
        communities: usize,
        p_in: f64,
        p_out: f64,
        feature_dim: usize,
        /// Distance between community feature means.
        mean_separation: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    /// Without self-loops; callers add them before precompute.
    pub graph: Graph,
    pub features: FeatureMatrix,
    pub labels: LabelSet,
    /// Splits cover only labeled cores (order-probe satellites are
    /// never sampled).
    pub split: NodeSplit,
}

// Order-probe feature layout: signal channel, then noise dims.
pub const ORDER_PROBE_NOISE_DIMS: usize = 15;
pub const ORDER_PROBE_FEATURE_DIM: usize = 1 + ORDER_PROBE_NOISE_DIMS;
/// First-appearance signal-to-noise target at the class depth. Aggregated
/// channel noise grows with the hop because walk counts do; the planted
/// amplitude is scaled per depth to keep every class equally detectable.
const ORDER_PROBE_TARGET_SNR: f64 = 6.0;
/// Same-channel noise on every node, drowning single-position magnitude
/// cues without hiding the first-appearance depth.
const ORDER_PROBE_CHANNEL_NOISE: f64 = 1.0;

/// Per-hop aggregated noise scale and chain-end walk weights on the
/// core-plus-chains subtree every core node repeats.
///
/// Returns `(noise_scale[l], end_weight[depth][l])`: the standard deviation
/// multiplier of iid unit channel noise at sequence position `l`, and the
/// walk count from the core to the depth-`p` chain end at position `l`.
fn order_probe_subtree_profile(hops: usize) -> Result<(Vec<f64>, Vec<Vec<u128>>)> {
    let mut edges = Vec::new();
    let mut next = 1u32;
    let mut chain_ends = Vec::with_capacity(hops);
    for depth in 1..=hops {
        let mut prev = 0u32;
        for _ in 0..depth {
            edges.push((prev, next));
            prev = next;
            next += 1;
        }
        chain_ends.push(prev as usize);
    }
    let subtree = Graph::from_edges(next as usize, &edges)?.add_self_loops()?;
    let mut noise_scale = Vec::with_capacity(hops + 1);
    let mut end_weights = vec![Vec::with_capacity(hops + 1); hops];
    for l in 0..=hops {
        let w = crate::precompute::walk_count_oracle(&subtree, l)?;
        let var: f64 = (0..subtree.node_count())
            .map(|v| {
                let c = w.count(0, v) as f64;
                c * c
            })
            .sum();
        noise_scale.push(var.sqrt());
        for (depth_idx, &end) in chain_ends.iter().enumerate() {
            end_weights[depth_idx].push(w.count(0, end));
        }
    }
    Ok((noise_scale, end_weights))
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    match spec {
        SyntheticSpec::PlantedColorDenoise { n, communities, p_in, p_out, noise, seed } => {
            gen_denoise(*n, *communities, *p_in, *p_out, *noise, *seed)
        }
        SyntheticSpec::OrderProbe { n, hops, seed } => gen_order_probe(*n, *hops, *seed),
        SyntheticSpec::Sbm { n, communities, p_in, p_out, feature_dim, mean_separation, seed } => {
            gen_sbm(*n, *communities, *p_in, *p_out, *feature_dim, *mean_separation, *seed)
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

fn community_edges(
    n: usize,
    community: &[u32],
    p_in: f64,
    p_out: f64,
    rng: &mut impl Rng,
) -> Vec<(u32, u32)> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if community[i] == community[j] { p_in } else { p_out };
            if rng.gen::<f64>() < p {
                edges.push((i as u32, j as u32));
            }
        }
    }
    edges
}

/// Random 60/20/20 split over the first `labeled` node ids.
fn random_split(labeled: usize, total: usize, rng: &mut impl Rng) -> Result<NodeSplit> {
    let mut order: Vec<u32> = (0..labeled as u32).collect();
    order.shuffle(rng);
    let train_end = (labeled * 6) / 10;
    let val_end = (labeled * 8) / 10;
    NodeSplit::new(
        total,
        order[..train_end].to_vec(),
        order[train_end..val_end].to_vec(),
        order[val_end..].to_vec(),
    )
}

fn gen_denoise(
    n: usize,
    communities: usize,
    p_in: f64,
    p_out: f64,
    noise: f64,
    seed: u64,
) -> Result<SyntheticData> {
    check_prob("p_in", p_in)?;
    check_prob("p_out", p_out)?;
    check_prob("noise", noise)?;
    if communities < 2 || n < communities {
        return Err(Error::invalid("need at least 2 communities and n >= communities"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let community: Vec<u32> = (0..n).map(|i| (i % communities) as u32).collect();
    let edges = community_edges(n, &community, p_in, p_out, &mut rng);
    let graph = Graph::from_edges(n, &edges)?;

    let mut values = vec![0.0f64; n * communities];
    for i in 0..n {
        let observed = if rng.gen::<f64>() < noise {
            let shift = rng.gen_range(1..communities as u32);
            (community[i] + shift) % communities as u32
        } else {
            community[i]
        };
        values[i * communities + observed as usize] = 1.0;
    }
    let features = FeatureMatrix::new(n, communities, values)?;
    let labels = LabelSet::single(communities, community)?;
    let split = random_split(n, n, &mut rng)?;
    Ok(SyntheticData { graph, features, labels, split })
}

fn gen_sbm(
    n: usize,
    communities: usize,
    p_in: f64,
    p_out: f64,
    feature_dim: usize,
    mean_separation: f64,
    seed: u64,
) -> Result<SyntheticData> {
    check_prob("p_in", p_in)?;
    check_prob("p_out", p_out)?;
    if communities < 2 || n < communities || feature_dim == 0 {
        return Err(Error::invalid("bad sbm parameters"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let community: Vec<u32> = (0..n).map(|i| (i % communities) as u32).collect();
    let edges = community_edges(n, &community, p_in, p_out, &mut rng);
    let graph = Graph::from_edges(n, &edges)?;

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut values = vec![0.0f64; n * feature_dim];
    for i in 0..n {
        let mean_dim = community[i] as usize % feature_dim;
        for f in 0..feature_dim {
            let mean = if f == mean_dim { mean_separation } else { 0.0 };
            values[i * feature_dim + f] = mean + normal.sample(&mut rng);
        }
    }
    let features = FeatureMatrix::new(n, feature_dim, values)?;
    let labels = LabelSet::single(communities, community)?;
    let split = random_split(n, n, &mut rng)?;
    Ok(SyntheticData { graph, features, labels, split })
}

/// Core node's label is the depth (1..=hops) of the chain whose end
/// satellite carries the signal amplitude. Every core gets one chain per
/// depth so the topology itself carries no class information.
fn gen_order_probe(n: usize, hops: usize, seed: u64) -> Result<SyntheticData> {
    if hops < 1 {
        return Err(Error::invalid(
            "order-probe needs hops >= 1: the signal position must be a real hop",
        ));
    }
    if n < 10 {
        return Err(Error::invalid("order-probe needs at least 10 core nodes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chain_nodes_per_core: usize = (1..=hops).sum();
    let total = n + n * chain_nodes_per_core;
    let d = ORDER_PROBE_FEATURE_DIM;

    // Signal amplitude per depth p: the first appearance (weight 1 at
    // position p) must stand out against the aggregated channel noise at
    // that position.
    let (noise_scale, _) = order_probe_subtree_profile(hops)?;
    let amp: Vec<f64> = (1..=hops)
        .map(|p| ORDER_PROBE_TARGET_SNR * ORDER_PROBE_CHANNEL_NOISE * noise_scale[p])
        .collect();

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut edges = Vec::with_capacity(n * chain_nodes_per_core);
    let mut values = vec![0.0f64; total * d];
    let mut targets = vec![0u32; total];

    // background noise everywhere, including the signal channel
    for i in 0..total {
        values[i * d] = ORDER_PROBE_CHANNEL_NOISE * normal.sample(&mut rng);
        for f in 1..d {
            values[i * d + f] = normal.sample(&mut rng);
        }
    }

    let mut next_node = n as u32;
    for core in 0..n {
        let label = rng.gen_range(0..hops as u32); // signal depth = label + 1
        targets[core] = label;
        for depth in 1..=hops {
            let mut prev = core as u32;
            let mut end = prev;
            for _ in 0..depth {
                let sat = next_node;
                next_node += 1;
                edges.push((prev, sat));
                prev = sat;
                end = sat;
            }
            if depth == label as usize + 1 {
                values[end as usize * d] += amp[depth - 1];
            }
        }
    }
    debug_assert_eq!(next_node as usize, total);

    let graph = Graph::from_edges(total, &edges)?;
    let features = FeatureMatrix::new(total, d, values)?;
    let labels = LabelSet::single(hops, targets)?;
    let split = random_split(n, total, &mut rng)?;
    Ok(SyntheticData { graph, features, labels, split })
}

/// Observed color of each node: argmax over the one-hot (possibly noisy)
/// feature row.
pub fn observed_colors(features: &FeatureMatrix) -> Vec<u32> {
    (0..features.node_count())
        .map(|i| {
            let row = features.row(i);
            let mut best = 0usize;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best as u32
        })
        .collect()
}

/// Baseline for the denoising task: classify node `i` by the majority of
/// observed colors over all nodes within `hops` hops (self included); ties
/// break to the lowest color. Returns accuracy over `indices`.
pub fn majority_vote_accuracy(
    graph: &Graph,
    colors: &[u32],
    labels: &LabelSet,
    hops: usize,
    indices: &[u32],
) -> Result<f64> {
    let n = graph.node_count();
    if colors.len() != n {
        return Err(Error::dimension("color count != node count"));
    }
    let num_classes = labels.num_classes();
    let mut dist = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    let mut touched: Vec<u32> = Vec::new();
    let mut correct = 0u64;
    for &start in indices {
        let mut votes = vec![0u64; num_classes];
        dist[start as usize] = 0;
        touched.push(start);
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            let du = dist[u as usize];
            votes[colors[u as usize] as usize] += 1;
            if du == hops {
                continue;
            }
            for &v in graph.neighbors(u as usize) {
                if dist[v as usize] == usize::MAX {
                    dist[v as usize] = du + 1;
                    touched.push(v);
                    queue.push_back(v);
                }
            }
        }
        let mut best = 0usize;
        for (k, &v) in votes.iter().enumerate() {
            if v > votes[best] {
                best = k;
            }
        }
        if best as u32 == labels.single_target(start as usize).unwrap() {
            correct += 1;
        }
        for &t in &touched {
            dist[t as usize] = usize::MAX;
        }
        touched.clear();
    }
    Ok(correct as f64 / indices.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_pure() {
        let spec = SyntheticSpec::PlantedColorDenoise {
            n: 60,
            communities: 3,
            p_in: 0.2,
            p_out: 0.02,
            noise: 0.3,
            seed: 5,
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.split, b.split);
    }

    #[test]
    fn noiseless_denoise_features_equal_labels() {
        let spec = SyntheticSpec::PlantedColorDenoise {
            n: 40,
            communities: 2,
            p_in: 0.3,
            p_out: 0.0,
            noise: 0.0,
            seed: 9,
        };
        let data = generate(&spec).unwrap();
        let colors = observed_colors(&data.features);
        for i in 0..40 {
            assert_eq!(colors[i], data.labels.single_target(i).unwrap());
        }
    }

    #[test]
    fn denoise_split_is_disjoint_and_covering() {
        let spec = SyntheticSpec::PlantedColorDenoise {
            n: 50,
            communities: 2,
            p_in: 0.2,
            p_out: 0.01,
            noise: 0.4,
            seed: 1,
        };
        let data = generate(&spec).unwrap();
        let total =
            data.split.train.len() + data.split.val.len() + data.split.test.len();
        assert_eq!(total, 50);
    }

    #[test]
    fn order_probe_rejects_zero_hops() {
        let spec = SyntheticSpec::OrderProbe { n: 100, hops: 0, seed: 1 };
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn order_probe_shape_and_labels() {
        let n = 20;
        let hops = 3;
        let spec = SyntheticSpec::OrderProbe { n, hops, seed: 2 };
        let data = generate(&spec).unwrap();
        let expected_total = n * (1 + 1 + 2 + 3);
        assert_eq!(data.graph.node_count(), expected_total);
        assert_eq!(data.features.dim(), ORDER_PROBE_FEATURE_DIM);
        assert_eq!(data.labels.num_classes(), hops);
        // splits stay within the labeled cores
        for part in [&data.split.train, &data.split.val, &data.split.test] {
            for &i in part.iter() {
                assert!((i as usize) < n);
            }
        }
    }

    #[test]
    fn order_probe_signal_sits_at_the_label_depth() {
        // With the channel noise present the strongest signal-channel value
        // among a core's satellites must sit on the chain of depth label+1,
        // at distance label+1 from the core.
        let n = 30;
        let hops = 4;
        let data = generate(&SyntheticSpec::OrderProbe { n, hops, seed: 3 }).unwrap();
        let g = data.graph.clone().add_self_loops().unwrap();
        let seq = crate::precompute::neighbor2seq(&g, &data.features, hops).unwrap();
        // The planted amplitude dominates the channel noise, so the first
        // position where the sequence's signal channel jumps is the label.
        let mut correct = 0;
        for core in 0..n {
            let label = data.labels.single_target(core).unwrap() as usize;
            let base: f64 = seq.slot(core, label)[0].abs();
            let jump: f64 = seq.slot(core, label + 1)[0].abs();
            if jump > base {
                correct += 1;
            }
        }
        assert!(correct as f64 >= 0.8 * n as f64, "{correct}/{n} signals detectable");
    }

    #[test]
    fn majority_vote_hand_case() {
        // Path 0-1-2-3; colors 0,1,1,0; 1-hop vote at node 1 sees {0,1,1}.
        let graph = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let labels = LabelSet::single(2, vec![1, 1, 0, 0]).unwrap();
        let colors = vec![0, 1, 1, 0];
        let acc = majority_vote_accuracy(&graph, &colors, &labels, 1, &[1]).unwrap();
        assert_eq!(acc, 1.0);
        // 2-hop vote at node 0 sees {0,1,1}: predicts 1, label is 1.
        let acc = majority_vote_accuracy(&graph, &colors, &labels, 2, &[0]).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn sbm_generates_valid_graph() {
        let spec = SyntheticSpec::Sbm {
            n: 40,
            communities: 4,
            p_in: 0.3,
            p_out: 0.05,
            feature_dim: 6,
            mean_separation: 1.5,
            seed: 11,
        };
        let data = generate(&spec).unwrap();
        data.graph.validate().unwrap();
        assert_eq!(data.features.dim(), 6);
        assert_eq!(data.labels.num_classes(), 4);
    }
}
