//! Node features, labels, splits, and their binary file formats.
//!
//! All three formats share a 16-byte little-endian header: a 4-byte magic
//! (`N2SF` features, `N2SL` labels, `N2SS` splits), a u32 format version
//! (currently 1) and two u32 dimensions.
//!
//! - Features: dims `(n, d)`, payload row-major f64.
//! - Labels: dims `(n, num_classes)`, payload a u32 kind tag (0 single-label,
//!   1 multi-label) followed by n u32 class ids, or an n x num_classes u8
//!   0/1 matrix. The tag is needed because payload length alone cannot
//!   distinguish the two when num_classes = 4.
//! - Splits: dims `(n, 3)`, payload three u32-length-prefixed u32 index
//!   arrays in train, val, test order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const FEATURES_MAGIC: &[u8; 4] = b"N2SF";
pub const LABELS_MAGIC: &[u8; 4] = b"N2SL";
pub const SPLIT_MAGIC: &[u8; 4] = b"N2SS";
pub const FORMAT_VERSION: u32 = 1;

/// Dense n x d node-feature matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    d: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * d {
            return Err(Error::dimension(format!(
                "feature payload has {} values, expected {}",
                values.len(),
                n * d
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature value at flat index {bad} is not finite"
            )));
        }
        Ok(FeatureMatrix { n, d, values })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelKind {
    SingleLabel,
    MultiLabel,
}

/// Per-node targets: one class id per node, or a 0/1 membership vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelTargets {
    Single(Vec<u32>),
    Multi(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    num_classes: usize,
    targets: LabelTargets,
}

impl LabelSet {
    pub fn single(num_classes: usize, targets: Vec<u32>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::invalid("num_classes must be positive"));
        }
        if let Some(i) = targets.iter().position(|&t| t as usize >= num_classes) {
            return Err(Error::invalid(format!(
                "label out of range: node {i} has class {} with {num_classes} classes",
                targets[i]
            )));
        }
        Ok(LabelSet { num_classes, targets: LabelTargets::Single(targets) })
    }

    pub fn multi(num_classes: usize, flat_targets: Vec<u8>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::invalid("num_classes must be positive"));
        }
        if flat_targets.len() % num_classes != 0 {
            return Err(Error::dimension(
                "multi-label payload not a multiple of num_classes",
            ));
        }
        if flat_targets.iter().any(|&v| v > 1) {
            return Err(Error::invalid("multi-label entries must be 0 or 1"));
        }
        Ok(LabelSet { num_classes, targets: LabelTargets::Multi(flat_targets) })
    }

    pub fn kind(&self) -> LabelKind {
        match self.targets {
            LabelTargets::Single(_) => LabelKind::SingleLabel,
            LabelTargets::Multi(_) => LabelKind::MultiLabel,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn node_count(&self) -> usize {
        match &self.targets {
            LabelTargets::Single(t) => t.len(),
            LabelTargets::Multi(t) => t.len() / self.num_classes,
        }
    }

    pub fn targets(&self) -> &LabelTargets {
        &self.targets
    }

    pub fn single_target(&self, i: usize) -> Option<u32> {
        match &self.targets {
            LabelTargets::Single(t) => Some(t[i]),
            LabelTargets::Multi(_) => None,
        }
    }

    pub fn multi_row(&self, i: usize) -> Option<&[u8]> {
        match &self.targets {
            LabelTargets::Multi(t) => {
                Some(&t[i * self.num_classes..(i + 1) * self.num_classes])
            }
            LabelTargets::Single(_) => None,
        }
    }
}

/// Disjoint train/val/test node index sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSplit {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

impl NodeSplit {
    pub fn new(n: usize, train: Vec<u32>, val: Vec<u32>, test: Vec<u32>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::invalid("train split must be non-empty"));
        }
        let mut seen = vec![false; n];
        for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
            for &i in part.iter() {
                if i as usize >= n {
                    return Err(Error::invalid(format!(
                        "{name} split index {i} out of range [0, {n})"
                    )));
                }
                if seen[i as usize] {
                    return Err(Error::invalid(format!(
                        "overlapping splits: node {i} appears twice"
                    )));
                }
                seen[i as usize] = true;
            }
        }
        Ok(NodeSplit { train, val, test })
    }

    pub fn part(&self, name: &str) -> Result<&[u32]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::invalid(format!(
                "unknown split part '{other}' (expected train, val or test)"
            ))),
        }
    }
}

fn write_header(w: &mut impl Write, magic: &[u8; 4], dim1: u32, dim2: u32) -> Result<()> {
    w.write_all(magic)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(dim1)?;
    w.write_u32::<LittleEndian>(dim2)?;
    Ok(())
}

fn read_header(r: &mut impl Read, magic: &[u8; 4]) -> Result<(u32, u32)> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got)
        .map_err(|_| Error::format("file too short for header"))?;
    if &got != magic {
        return Err(Error::format(format!(
            "magic mismatch: expected {:?}, got {:?}",
            std::str::from_utf8(magic).unwrap_or("?"),
            String::from_utf8_lossy(&got)
        )));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(Error::format(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let d1 = r.read_u32::<LittleEndian>()?;
    let d2 = r.read_u32::<LittleEndian>()?;
    Ok((d1, d2))
}

pub fn save_features(features: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write_header(&mut w, FEATURES_MAGIC, features.n as u32, features.d as u32)?;
    for &v in &features.values {
        w.write_f64::<LittleEndian>(v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let mut r = BufReader::new(File::open(path.as_ref())?);
    let (n, d) = read_header(&mut r, FEATURES_MAGIC)?;
    let (n, d) = (n as usize, d as usize);
    let mut values = vec![0.0f64; n * d];
    read_f64_exact(&mut r, &mut values, n * d)?;
    expect_eof(&mut r)?;
    FeatureMatrix::new(n, d, values)
}

pub fn save_labels(labels: &LabelSet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write_header(
        &mut w,
        LABELS_MAGIC,
        labels.node_count() as u32,
        labels.num_classes as u32,
    )?;
    match &labels.targets {
        LabelTargets::Single(t) => {
            w.write_u32::<LittleEndian>(0)?;
            for &c in t {
                w.write_u32::<LittleEndian>(c)?;
            }
        }
        LabelTargets::Multi(t) => {
            w.write_u32::<LittleEndian>(1)?;
            w.write_all(t)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelSet> {
    let mut r = BufReader::new(File::open(path.as_ref())?);
    let (n, c) = read_header(&mut r, LABELS_MAGIC)?;
    let (n, c) = (n as usize, c as usize);
    let kind = r.read_u32::<LittleEndian>()?;
    let labels = match kind {
        0 => {
            let mut targets = vec![0u32; n];
            for t in targets.iter_mut() {
                *t = r.read_u32::<LittleEndian>().map_err(truncated)?;
            }
            LabelSet::single(c, targets)?
        }
        1 => {
            let mut targets = vec![0u8; n * c];
            r.read_exact(&mut targets).map_err(truncated)?;
            LabelSet::multi(c, targets)?
        }
        other => return Err(Error::format(format!("unknown label kind tag {other}"))),
    };
    expect_eof(&mut r)?;
    if labels.node_count() != n {
        return Err(Error::dimension("label count does not match header"));
    }
    Ok(labels)
}

pub fn save_split(split: &NodeSplit, n: usize, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write_header(&mut w, SPLIT_MAGIC, n as u32, 3)?;
    for part in [&split.train, &split.val, &split.test] {
        w.write_u32::<LittleEndian>(part.len() as u32)?;
        for &i in part.iter() {
            w.write_u32::<LittleEndian>(i)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_split(path: impl AsRef<Path>) -> Result<NodeSplit> {
    let mut r = BufReader::new(File::open(path.as_ref())?);
    let (n, parts) = read_header(&mut r, SPLIT_MAGIC)?;
    if parts != 3 {
        return Err(Error::format(format!("split file declares {parts} parts, expected 3")));
    }
    let mut arrays = Vec::with_capacity(3);
    for _ in 0..3 {
        let len = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let mut a = vec![0u32; len];
        for v in a.iter_mut() {
            *v = r.read_u32::<LittleEndian>().map_err(truncated)?;
        }
        arrays.push(a);
    }
    expect_eof(&mut r)?;
    let test = arrays.pop().unwrap();
    let val = arrays.pop().unwrap();
    let train = arrays.pop().unwrap();
    NodeSplit::new(n as usize, train, val, test)
}

pub(crate) fn read_f64_exact(r: &mut impl Read, out: &mut [f64], expected: usize) -> Result<()> {
    let bytes = expected * 8;
    let mut buf = vec![0u8; bytes.min(1 << 20)];
    let mut filled = 0usize;
    while filled < expected {
        let want = ((expected - filled) * 8).min(buf.len());
        r.read_exact(&mut buf[..want]).map_err(|_| {
            Error::format(format!(
                "truncated payload: expected {} bytes, got at most {}",
                bytes,
                filled * 8
            ))
        })?;
        for (k, chunk) in buf[..want].chunks_exact(8).enumerate() {
            out[filled + k] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        filled += want / 8;
    }
    Ok(())
}

pub(crate) fn expect_eof(r: &mut impl Read) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::format("trailing bytes after payload")),
    }
}

fn truncated(_: std::io::Error) -> Error {
    Error::format("truncated payload")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_round_trip() {
        let x = FeatureMatrix::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.5]).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_features(&x, f.path()).unwrap();
        let y = load_features(f.path()).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn rejects_non_finite_features() {
        assert!(FeatureMatrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(FeatureMatrix::new(1, 2, vec![f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn rejects_bad_magic() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), b"XXXX\x01\x00\x00\x00\x01\x00\x00\x00\x01\x00\x00\x00").unwrap();
        let err = load_features(f.path()).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn rejects_truncated_features() {
        let x = FeatureMatrix::new(2, 2, vec![1.0; 4]).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_features(&x, f.path()).unwrap();
        let bytes = std::fs::read(f.path()).unwrap();
        std::fs::write(f.path(), &bytes[..bytes.len() - 4]).unwrap();
        let err = load_features(f.path()).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn label_out_of_range_rejected() {
        let err = LabelSet::single(3, vec![0, 1, 3]).unwrap_err();
        assert!(err.to_string().contains("label out of range"));
    }

    #[test]
    fn single_label_round_trip() {
        let l = LabelSet::single(5, vec![0, 4, 2]).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_labels(&l, f.path()).unwrap();
        assert_eq!(load_labels(f.path()).unwrap(), l);
    }

    #[test]
    fn multi_label_round_trip_with_four_classes() {
        // num_classes = 4 is the case a tag-free format could not
        // distinguish from single-label payloads.
        let l = LabelSet::multi(4, vec![1, 0, 0, 1, 0, 1, 1, 0]).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_labels(&l, f.path()).unwrap();
        let got = load_labels(f.path()).unwrap();
        assert_eq!(got, l);
        assert_eq!(got.kind(), LabelKind::MultiLabel);
    }

    #[test]
    fn multi_label_rejects_non_binary() {
        assert!(LabelSet::multi(2, vec![0, 2]).is_err());
    }

    #[test]
    fn overlapping_split_rejected() {
        let err = NodeSplit::new(5, vec![0, 1], vec![1], vec![2]).unwrap_err();
        assert!(err.to_string().contains("overlapping splits"));
    }

    #[test]
    fn empty_train_rejected() {
        assert!(NodeSplit::new(3, vec![], vec![0], vec![1]).is_err());
    }

    #[test]
    fn split_round_trip() {
        let s = NodeSplit::new(6, vec![0, 3], vec![1], vec![2, 5]).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_split(&s, 6, f.path()).unwrap();
        assert_eq!(load_split(f.path()).unwrap(), s);
    }
}
