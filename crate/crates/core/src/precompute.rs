//! Hop-sequence precompute: for every node, the ordered sequence of
//! walk-count-weighted feature sums over its 0..=L hop neighborhoods.
//!
//! Slot `l` of the output equals `A~^l X`, where `A~` is the unnormalized
//! binary adjacency with self-loops. Slots are produced by `L` iterated
//! sparse-dense products; no dense matrix power is ever materialized.
//! A dense exact-integer oracle ([`walk_count_oracle`]) provides the
//! independent verification route for tests.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::os::unix::fs::FileExt;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::graph::Graph;

pub const SEQUENCE_MAGIC: &[u8; 4] = b"N2SQ";
pub const SEQUENCE_VERSION: u32 = 1;

/// Raw walk counts grow exponentially in the hop count; beyond this cap the
/// values would overflow f64 on dense graphs long before being useful.
pub const MAX_HOPS: usize = 16;

/// Magnitude at which the precompute warns that f64 overflow is near.
pub const MAGNITUDE_GUARD: f64 = 1e300;

/// Precomputed sequences: `values[node][position][feature]`, position `l`
/// holding the hop-`l` aggregate. Sequence length is `hops + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTensor {
    n: usize,
    hops: usize,
    d: usize,
    values: Vec<f64>,
}

impl SequenceTensor {
    pub fn new(n: usize, hops: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * (hops + 1) * d {
            return Err(Error::dimension(format!(
                "sequence payload has {} values, expected {}",
                values.len(),
                n * (hops + 1) * d
            )));
        }
        Ok(SequenceTensor { n, hops, d, values })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Number of hops L; positions run 0..=L.
    pub fn hops(&self) -> usize {
        self.hops
    }

    pub fn positions(&self) -> usize {
        self.hops + 1
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The hop-`l` vector of node `i`.
    pub fn slot(&self, i: usize, l: usize) -> &[f64] {
        let base = (i * (self.hops + 1) + l) * self.d;
        &self.values[base..base + self.d]
    }

    /// Full sequence block of node `i`, `(hops + 1) * d` values.
    pub fn node_block(&self, i: usize) -> &[f64] {
        let stride = (self.hops + 1) * self.d;
        &self.values[i * stride..(i + 1) * stride]
    }
}

/// Sparse-dense product with the self-loop adjacency: out row i is the sum of
/// `dense` rows over i's neighborhood (unweighted, unnormalized).
///
/// Rows are distributed across threads; within a row the accumulation order
/// is fixed (ascending column index), so results are bit-identical for any
/// thread count.
pub fn spmm(graph: &Graph, dense: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0f64; graph.node_count() * d];
    spmm_into(graph, dense, d, &mut out)?;
    Ok(out)
}

pub(crate) fn spmm_into(graph: &Graph, dense: &[f64], d: usize, out: &mut [f64]) -> Result<()> {
    if !graph.has_self_loops() {
        return Err(Error::invalid("spmm requires a graph with self-loops"));
    }
    let n = graph.node_count();
    if dense.len() != n * d {
        return Err(Error::dimension(format!(
            "dense operand has {} values, expected {}",
            dense.len(),
            n * d
        )));
    }
    if out.len() != n * d {
        return Err(Error::dimension("output buffer size mismatch"));
    }
    out.par_chunks_mut(d).enumerate().for_each(|(i, row)| {
        row.fill(0.0);
        for &j in graph.neighbors(i) {
            let src = &dense[j as usize * d..(j as usize + 1) * d];
            for (o, &v) in row.iter_mut().zip(src) {
                *o += v;
            }
        }
    });
    Ok(())
}

/// Compute the full sequence tensor with `hops` iterated sparse products.
/// Slot 0 is copied from the features, never recomputed.
pub fn neighbor2seq(graph: &Graph, features: &FeatureMatrix, hops: usize) -> Result<SequenceTensor> {
    check_precompute_args(graph, features, hops)?;
    let n = graph.node_count();
    let d = features.dim();
    let positions = hops + 1;
    let mut values = vec![0.0f64; n * positions * d];

    scatter_slot(&mut values, features.values(), 0, positions, d);
    let mut cur = features.values().to_vec();
    let mut next = vec![0.0f64; n * d];
    for l in 1..=hops {
        spmm_into(graph, &cur, d, &mut next)?;
        check_magnitudes(&next, l)?;
        scatter_slot(&mut values, &next, l, positions, d);
        std::mem::swap(&mut cur, &mut next);
    }
    SequenceTensor::new(n, hops, d, values)
}

fn check_precompute_args(graph: &Graph, features: &FeatureMatrix, hops: usize) -> Result<()> {
    if !graph.has_self_loops() {
        return Err(Error::invalid("precompute requires a graph with self-loops"));
    }
    if features.node_count() != graph.node_count() {
        return Err(Error::dimension(format!(
            "feature rows ({}) != graph nodes ({})",
            features.node_count(),
            graph.node_count()
        )));
    }
    if hops > MAX_HOPS {
        return Err(Error::invalid(format!(
            "hop count {hops} exceeds the supported maximum {MAX_HOPS} \
             (raw walk counts grow exponentially)"
        )));
    }
    Ok(())
}

/// Copy an n x d hop matrix into slot `l` of the node-major layout.
fn scatter_slot(values: &mut [f64], slot: &[f64], l: usize, positions: usize, d: usize) {
    values
        .par_chunks_mut(positions * d)
        .zip(slot.par_chunks(d))
        .for_each(|(block, row)| {
            block[l * d..(l + 1) * d].copy_from_slice(row);
        });
}

fn check_magnitudes(values: &[f64], l: usize) -> Result<()> {
    let mut max_abs = 0.0f64;
    for &v in values {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "non-finite value while computing hop {l} (magnitude overflow)"
            )));
        }
        max_abs = max_abs.max(v.abs());
    }
    if max_abs > MAGNITUDE_GUARD {
        eprintln!(
            "warning: hop {l} values reach {max_abs:.3e}, approaching f64 overflow; \
             consider fewer hops"
        );
    }
    Ok(())
}

/// Exact integer walk-count matrix `A~^len`, computed densely. Test oracle;
/// refuses n > 2000.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkCountMatrix {
    n: usize,
    len: usize,
    counts: Vec<u128>,
}

impl WalkCountMatrix {
    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn walk_len(&self) -> usize {
        self.len
    }

    pub fn count(&self, i: usize, j: usize) -> u128 {
        self.counts[i * self.n + j]
    }

    /// Multiply by a feature matrix in f64, giving the expected hop slot.
    pub fn apply(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        if features.node_count() != self.n {
            return Err(Error::dimension("feature rows != walk matrix size"));
        }
        let d = features.dim();
        let mut out = vec![0.0f64; self.n * d];
        for i in 0..self.n {
            for j in 0..self.n {
                let c = self.count(i, j);
                if c == 0 {
                    continue;
                }
                let c = c as f64;
                let src = features.row(j);
                let dst = &mut out[i * d..(i + 1) * d];
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o += c * v;
                }
            }
        }
        Ok(out)
    }
}

/// Dense repeated multiplication `A~^len` in exact integer arithmetic.
/// `len = 0` yields the identity (one length-0 walk from each node to itself).
pub fn walk_count_oracle(graph: &Graph, len: usize) -> Result<WalkCountMatrix> {
    let n = graph.node_count();
    if n > 2000 {
        return Err(Error::invalid(format!(
            "walk_count_oracle is a dense test oracle, n = {n} exceeds 2000"
        )));
    }
    if !graph.has_self_loops() {
        return Err(Error::invalid("walk_count_oracle requires a graph with self-loops"));
    }
    let mut adj = vec![0u128; n * n];
    for i in 0..n {
        for &j in graph.neighbors(i) {
            adj[i * n + j as usize] = 1;
        }
    }
    let mut counts = vec![0u128; n * n];
    for i in 0..n {
        counts[i * n + i] = 1;
    }
    let mut next = vec![0u128; n * n];
    for _ in 0..len {
        next.fill(0);
        for i in 0..n {
            for k in 0..n {
                let c = counts[i * n + k];
                if c == 0 {
                    continue;
                }
                for j in 0..n {
                    if adj[k * n + j] == 1 {
                        let cell = &mut next[i * n + j];
                        *cell = cell.checked_add(c).ok_or_else(|| {
                            Error::Overflow(format!("walk count overflow at ({i}, {j})"))
                        })?;
                    }
                }
            }
        }
        std::mem::swap(&mut counts, &mut next);
    }
    Ok(WalkCountMatrix { n, len, counts })
}

pub fn save_sequence(seq: &SequenceTensor, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write_sequence_header(&mut w, seq.n, seq.hops, seq.d)?;
    for &v in &seq.values {
        w.write_f64::<LittleEndian>(v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_sequence(path: impl AsRef<Path>) -> Result<SequenceTensor> {
    let file = File::open(path.as_ref())?;
    let actual_len = file.metadata()?.len();
    let mut r = BufReader::new(file);
    let (n, hops, d) = read_sequence_header(&mut r)?;
    let count = n * (hops + 1) * d;
    let expected_len = SEQUENCE_HEADER_LEN as u64 + count as u64 * 8;
    if actual_len != expected_len {
        return Err(Error::format(format!(
            "sequence file has {actual_len} bytes, expected {expected_len}"
        )));
    }
    let mut values = vec![0.0f64; count];
    crate::data::read_f64_exact(&mut r, &mut values, count)?;
    SequenceTensor::new(n, hops, d, values)
}

pub(crate) const SEQUENCE_HEADER_LEN: usize = 24;

fn write_sequence_header(w: &mut impl Write, n: usize, hops: usize, d: usize) -> Result<()> {
    w.write_all(SEQUENCE_MAGIC)?;
    w.write_u32::<LittleEndian>(SEQUENCE_VERSION)?;
    w.write_u64::<LittleEndian>(n as u64)?;
    w.write_u32::<LittleEndian>(hops as u32)?;
    w.write_u32::<LittleEndian>(d as u32)?;
    Ok(())
}

pub(crate) fn read_sequence_header(r: &mut impl Read) -> Result<(usize, usize, usize)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format("file too short for sequence header"))?;
    if &magic != SEQUENCE_MAGIC {
        return Err(Error::format(format!(
            "magic mismatch: expected N2SQ, got {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != SEQUENCE_VERSION {
        return Err(Error::format(format!("unsupported sequence version {version}")));
    }
    let n = r.read_u64::<LittleEndian>()? as usize;
    let hops = r.read_u32::<LittleEndian>()? as usize;
    let d = r.read_u32::<LittleEndian>()? as usize;
    Ok((n, hops, d))
}

/// Chunked precompute streaming straight to the sequence file format.
///
/// Numerically identical to [`neighbor2seq`] followed by [`save_sequence`]
/// (bit-exact: per-row accumulation order does not depend on chunking). The
/// chunk size bounds the write-staging buffer at `chunk_rows * d` values
/// beyond the two full hop buffers.
pub fn neighbor2seq_chunked(
    graph: &Graph,
    features: &FeatureMatrix,
    hops: usize,
    chunk_rows: usize,
    out_path: impl AsRef<Path>,
) -> Result<()> {
    if chunk_rows == 0 {
        return Err(Error::invalid("chunk_rows must be at least 1"));
    }
    check_precompute_args(graph, features, hops)?;
    let n = graph.node_count();
    let d = features.dim();
    let positions = hops + 1;

    let file = File::create(out_path.as_ref())?;
    {
        let mut w = BufWriter::new(&file);
        write_sequence_header(&mut w, n, hops, d)?;
        w.flush()?;
    }
    file.set_len(SEQUENCE_HEADER_LEN as u64 + (n * positions * d) as u64 * 8)?;

    let mut stage = vec![0u8; chunk_rows * d * 8];
    write_slot_chunked(&file, features.values(), 0, n, positions, d, chunk_rows, &mut stage)?;

    let mut cur = features.values().to_vec();
    let mut next = vec![0.0f64; n * d];
    for l in 1..=hops {
        spmm_into(graph, &cur, d, &mut next)?;
        check_magnitudes(&next, l)?;
        write_slot_chunked(&file, &next, l, n, positions, d, chunk_rows, &mut stage)?;
        std::mem::swap(&mut cur, &mut next);
    }
    file.sync_all()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn write_slot_chunked(
    file: &File,
    slot: &[f64],
    l: usize,
    n: usize,
    positions: usize,
    d: usize,
    chunk_rows: usize,
    stage: &mut [u8],
) -> Result<()> {
    let row_bytes = d * 8;
    let mut start = 0usize;
    while start < n {
        let rows = chunk_rows.min(n - start);
        for (r, row) in slot[start * d..(start + rows) * d].chunks_exact(d).enumerate() {
            let dst = &mut stage[r * row_bytes..(r + 1) * row_bytes];
            for (b, &v) in dst.chunks_exact_mut(8).zip(row) {
                b.copy_from_slice(&v.to_le_bytes());
            }
        }
        for r in 0..rows {
            let node = start + r;
            let offset = SEQUENCE_HEADER_LEN as u64 + ((node * positions + l) * d) as u64 * 8;
            file.write_all_at(&stage[r * row_bytes..(r + 1) * row_bytes], offset)?;
        }
        start += rows;
    }
    Ok(())
}
