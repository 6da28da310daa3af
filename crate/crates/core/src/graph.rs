//! Immutable CSR graph with optional self-loops.
//!
//! Graphs are undirected: directed input edges are symmetrized on load, and
//! duplicate edges collapse to a single entry. Node ids must already be
//! compacted to `[0, n)`; there is no remapping layer.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Compressed-sparse-row adjacency. Within each row the column indices are
/// strictly increasing, and the matrix is symmetric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<u32>,
    has_self_loops: bool,
}

impl Graph {
    /// Build directly from CSR arrays, validating every invariant.
    pub fn from_csr(
        n: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<u32>,
        has_self_loops: bool,
    ) -> Result<Self> {
        if row_offsets.len() != n + 1 {
            return Err(Error::dimension(format!(
                "row_offsets has length {}, expected {}",
                row_offsets.len(),
                n + 1
            )));
        }
        if row_offsets[0] != 0 || row_offsets[n] != col_indices.len() {
            return Err(Error::invalid("row_offsets endpoints do not match col_indices"));
        }
        for w in row_offsets.windows(2) {
            if w[1] < w[0] {
                return Err(Error::invalid("row_offsets must be non-decreasing"));
            }
        }
        let g = Graph { n, row_offsets, col_indices, has_self_loops };
        g.validate()?;
        Ok(g)
    }

    /// Check row-sortedness, index ranges, self-loop flag consistency and
    /// (fully) symmetry. Cost is O(n + m log deg); intended for construction
    /// and tests, not hot paths.
    pub fn validate(&self) -> Result<()> {
        for i in 0..self.n {
            let row = self.neighbors(i);
            let mut saw_diag = false;
            for (k, &j) in row.iter().enumerate() {
                if (j as usize) >= self.n {
                    return Err(Error::invalid(format!(
                        "column index {j} out of range in row {i}"
                    )));
                }
                if k > 0 && row[k - 1] >= j {
                    return Err(Error::invalid(format!(
                        "row {i} is not strictly increasing"
                    )));
                }
                if j as usize == i {
                    saw_diag = true;
                }
            }
            if self.has_self_loops && !saw_diag {
                return Err(Error::invalid(format!("row {i} is missing its self-loop")));
            }
            if !self.has_self_loops && saw_diag {
                return Err(Error::invalid(format!(
                    "row {i} has a self-loop but has_self_loops is false"
                )));
            }
        }
        // Symmetry: (i, j) present iff (j, i) present.
        for i in 0..self.n {
            for &j in self.neighbors(i) {
                if self.neighbors(j as usize).binary_search(&(i as u32)).is_err() {
                    return Err(Error::invalid(format!(
                        "edge ({i}, {j}) present without its reverse"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Number of directed edge slots (symmetric pairs count twice, self-loops once).
    pub fn edge_slot_count(&self) -> usize {
        self.col_indices.len()
    }

    pub fn has_self_loops(&self) -> bool {
        self.has_self_loops
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[u32] {
        &self.col_indices
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    /// Build a symmetrized, deduplicated CSR graph from directed edge pairs.
    /// Self-pairs (i, i) are dropped; the result never has self-loops.
    pub fn from_edges(n: usize, edges: &[(u32, u32)]) -> Result<Self> {
        for &(a, b) in edges {
            if a as usize >= n || b as usize >= n {
                return Err(Error::invalid(format!(
                    "edge ({a}, {b}) out of range for n = {n}"
                )));
            }
        }
        let mut pairs = Vec::with_capacity(edges.len() * 2);
        for &(a, b) in edges {
            if a != b {
                pairs.push((a, b));
                pairs.push((b, a));
            }
        }
        if pairs.is_empty() {
            return Err(Error::invalid("empty edge set"));
        }
        pairs.sort_unstable();
        pairs.dedup();

        let mut row_offsets = vec![0usize; n + 1];
        for &(a, _) in &pairs {
            row_offsets[a as usize + 1] += 1;
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        let col_indices = pairs.iter().map(|&(_, b)| b).collect();
        Ok(Graph { n, row_offsets, col_indices, has_self_loops: false })
    }

    /// Insert one self-loop per node in sorted position. Errors if the graph
    /// already has them, so the operation is never applied twice.
    pub fn add_self_loops(&self) -> Result<Graph> {
        if self.has_self_loops {
            return Err(Error::invalid("graph already has self-loops"));
        }
        let n = self.n;
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::with_capacity(self.col_indices.len() + n);
        row_offsets.push(0);
        for i in 0..n {
            let row = self.neighbors(i);
            let pos = row.partition_point(|&j| (j as usize) < i);
            col_indices.extend_from_slice(&row[..pos]);
            col_indices.push(i as u32);
            col_indices.extend_from_slice(&row[pos..]);
            row_offsets.push(col_indices.len());
        }
        Ok(Graph { n, row_offsets, col_indices, has_self_loops: true })
    }

    /// Transpose the CSR arrays. For a valid (symmetric) graph this returns
    /// the same matrix; exposed so tests can verify symmetry structurally.
    pub fn transpose(&self) -> Graph {
        let n = self.n;
        let mut row_offsets = vec![0usize; n + 1];
        for &j in &self.col_indices {
            row_offsets[j as usize + 1] += 1;
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        let mut cursor = row_offsets.clone();
        let mut col_indices = vec![0u32; self.col_indices.len()];
        for i in 0..n {
            for &j in self.neighbors(i) {
                col_indices[cursor[j as usize]] = i as u32;
                cursor[j as usize] += 1;
            }
        }
        Graph { n, row_offsets, col_indices, has_self_loops: self.has_self_loops }
    }

    /// Relabel nodes by `perm`, where `perm[old] = new`. Used by the
    /// permutation-equivariance tests.
    pub fn permute(&self, perm: &[u32]) -> Result<Graph> {
        if perm.len() != self.n {
            return Err(Error::dimension("permutation length != node count"));
        }
        let mut edges = Vec::with_capacity(self.col_indices.len());
        for i in 0..self.n {
            for &j in self.neighbors(i) {
                if (j as usize) > i || (!self.has_self_loops && j as usize != i) {
                    edges.push((perm[i], perm[j as usize]));
                }
            }
        }
        let g = Graph::from_edges(self.n, &edges)?;
        if self.has_self_loops {
            g.add_self_loops()
        } else {
            Ok(g)
        }
    }
}

/// Parse a whitespace- or comma-separated edge list. Lines starting with `#`
/// are ignored. Returns a symmetrized, deduplicated, sorted CSR graph without
/// self-loops.
pub fn load_edge_list(path: impl AsRef<Path>, n: usize) -> Result<Graph> {
    let file = File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut edges: Vec<(u32, u32)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty());
        let a = parse_node(fields.next(), n, line_no)?;
        let b = parse_node(fields.next(), n, line_no)?;
        if fields.next().is_some() {
            return Err(Error::Parse {
                line: line_no,
                message: "expected exactly two node ids".into(),
            });
        }
        if a != b {
            edges.push((a, b));
        }
    }
    if edges.is_empty() {
        return Err(Error::invalid("empty edge set"));
    }
    Graph::from_edges(n, &edges)
}

fn parse_node(field: Option<&str>, n: usize, line: usize) -> Result<u32> {
    let s = field.ok_or_else(|| Error::Parse {
        line,
        message: "expected two node ids".into(),
    })?;
    let id: u64 = s.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid node id '{s}'"),
    })?;
    if id >= n as u64 {
        return Err(Error::Parse {
            line,
            message: format!("node id {id} out of range [0, {n})"),
        });
    }
    Ok(id as u32)
}

/// Uniform random graph with exactly `edges` distinct undirected edges,
/// deterministic given the RNG state. Used by tests and benchmarks.
pub fn random_graph(n: usize, edges: usize, rng: &mut impl rand::Rng) -> Result<Graph> {
    let max_edges = n * (n - 1) / 2;
    if edges == 0 || edges > max_edges {
        return Err(Error::invalid(format!(
            "edge count {edges} not in [1, {max_edges}] for n = {n}"
        )));
    }
    let mut seen = std::collections::HashSet::with_capacity(edges * 2);
    let mut pairs = Vec::with_capacity(edges);
    while pairs.len() < edges {
        let a = rng.gen_range(0..n as u32);
        let b = rng.gen_range(0..n as u32);
        if a == b {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if seen.insert(key) {
            pairs.push(key);
        }
    }
    Graph::from_edges(n, &pairs)
}

/// Write each undirected edge once (`i <= j` order). Reloading the result
/// with [`load_edge_list`] reproduces the CSR exactly. Defined only for
/// graphs without self-loops, since loading drops diagonal pairs.
pub fn write_edge_list(graph: &Graph, path: impl AsRef<Path>) -> Result<()> {
    if graph.has_self_loops() {
        return Err(Error::invalid("edge-list export requires a graph without self-loops"));
    }
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    for i in 0..graph.node_count() {
        for &j in graph.neighbors(i) {
            if (j as usize) >= i {
                writeln!(w, "{i} {j}")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_path_graph() {
        let f = write_temp("0 1\n1 2\n");
        let g = load_edge_list(f.path(), 3).unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edge_slot_count(), 4);
        let degs: Vec<usize> = (0..3).map(|i| g.degree(i)).collect();
        assert_eq!(degs, vec![1, 2, 1]);
        g.validate().unwrap();
    }

    #[test]
    fn dedups_and_symmetrizes() {
        let f = write_temp("0 1\n1 0\n0 1\n");
        let g = load_edge_list(f.path(), 2).unwrap();
        assert_eq!(g.edge_slot_count(), 2);
    }

    #[test]
    fn comma_separated_and_comments() {
        let f = write_temp("# header\n0,1\n1, 2\n");
        let g = load_edge_list(f.path(), 3).unwrap();
        assert_eq!(g.edge_slot_count(), 4);
    }

    #[test]
    fn empty_edge_set_is_an_error() {
        let f = write_temp("# nothing here\n");
        let err = load_edge_list(f.path(), 3).unwrap_err();
        assert!(err.to_string().contains("empty edge set"));
    }

    #[test]
    fn out_of_range_reports_line() {
        let f = write_temp("0 1\n1 7\n");
        let err = load_edge_list(f.path(), 3).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parse_failure_reports_line() {
        let f = write_temp("0 1\nx y\n");
        let err = load_edge_list(f.path(), 3).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn self_loops_on_path_graph() {
        let f = write_temp("0 1\n1 2\n");
        let g = load_edge_list(f.path(), 3).unwrap().add_self_loops().unwrap();
        assert_eq!(g.edge_slot_count(), 7);
        assert!(g.has_self_loops());
        g.validate().unwrap();
    }

    #[test]
    fn self_loops_on_edgeless_graph() {
        // No loader path for an edgeless graph; build CSR directly.
        let g = Graph::from_csr(5, vec![0; 6], vec![], false).unwrap();
        let g = g.add_self_loops().unwrap();
        assert_eq!(g.edge_slot_count(), 5);
        for i in 0..5 {
            assert_eq!(g.neighbors(i), &[i as u32]);
        }
    }

    #[test]
    fn self_loops_on_triangle() {
        let f = write_temp("0 1\n1 2\n0 2\n");
        let g = load_edge_list(f.path(), 3).unwrap().add_self_loops().unwrap();
        assert_eq!(g.edge_slot_count(), 9);
        for i in 0..3 {
            assert_eq!(g.neighbors(i), &[0, 1, 2]);
        }
    }

    #[test]
    fn double_self_loops_rejected() {
        let f = write_temp("0 1\n");
        let g = load_edge_list(f.path(), 2).unwrap().add_self_loops().unwrap();
        assert!(g.add_self_loops().is_err());
    }

    #[test]
    fn self_loops_preserve_existing_entries() {
        let f = write_temp("0 1\n1 2\n0 3\n");
        let g = load_edge_list(f.path(), 4).unwrap();
        let gl = g.add_self_loops().unwrap();
        for i in 0..4 {
            let mut expected: Vec<u32> = g.neighbors(i).to_vec();
            expected.push(i as u32);
            expected.sort_unstable();
            assert_eq!(gl.neighbors(i), expected.as_slice());
        }
    }

    #[test]
    fn input_self_pairs_are_dropped() {
        let f = write_temp("0 0\n0 1\n");
        let g = load_edge_list(f.path(), 2).unwrap();
        assert_eq!(g.edge_slot_count(), 2);
        assert!(!g.has_self_loops());
    }

    #[test]
    fn round_trip_through_edge_list() {
        let f = write_temp("0 1\n1 2\n2 3\n0 3\n1 3\n");
        let g = load_edge_list(f.path(), 4).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_edge_list(&g, out.path()).unwrap();
        let g2 = load_edge_list(out.path(), 4).unwrap();
        assert_eq!(g, g2);
    }

    #[test]
    fn transpose_equals_self_for_symmetric() {
        let f = write_temp("0 1\n1 2\n2 3\n0 3\n");
        let g = load_edge_list(f.path(), 4).unwrap();
        assert_eq!(g.transpose(), g);
        let gl = g.add_self_loops().unwrap();
        assert_eq!(gl.transpose(), gl);
    }
}
