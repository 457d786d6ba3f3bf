//! Feature matrices, label sets, dataset splits and their on-disk formats.
//!
//! Feature file (`SAHF`, little-endian): magic, `u32` version = 1, `u64 n`,
//! `u64 d`, then `n * d` `f32` values row-major.
//!
//! Label file (`SAHL`): magic, `u32` version = 1, `u64 n`, `u32 c`, then per
//! row a `u16 k` followed by `k` `u16` class indices.
//!
//! Split file: plain text with `query:`, `retrieval:` and `train:` sections,
//! each followed by one decimal index per line.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_file, write_file, Reader, Writer};

const FEATURE_MAGIC: &[u8; 4] = b"SAHF";
const LABEL_MAGIC: &[u8; 4] = b"SAHL";
const VERSION: u32 = 1;

/// `n x d` row-major matrix of finite `f32` features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    d: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(n: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidArgument(format!(
                "feature matrix needs n >= 1 and d >= 1, got {n}x{d}"
            )));
        }
        if data.len() != n * d {
            return Err(Error::Shape(format!(
                "{} values for a {n}x{d} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite feature at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(Self { n, d, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("ragged feature rows".into()));
        }
        Self::new(rows.len(), d, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.data.chunks_exact(self.d)
    }

    /// Gathers the given rows, in order, into a new matrix.
    pub fn select(&self, ids: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(ids.len() * self.d);
        for &i in ids {
            if i >= self.n {
                return Err(Error::OutOfRange {
                    index: i,
                    len: self.n,
                });
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(ids.len(), self.d, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(FEATURE_MAGIC);
        w.u32(VERSION);
        w.u64(self.n as u64);
        w.u64(self.d as u64);
        w.f32s(&self.data);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(FEATURE_MAGIC)?;
        r.version(VERSION)?;
        let n = r.count()?;
        let d = r.count()?;
        if n == 0 || d == 0 {
            return Err(Error::format(12, format!("empty feature matrix {n}x{d}")));
        }
        let len = n
            .checked_mul(d)
            .ok_or_else(|| Error::format(12, format!("{n}x{d} overflows")))?;
        let data = r.finite_f32s(len)?;
        r.finish()?;
        Ok(Self { n, d, data })
    }
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    FeatureMatrix::from_bytes(&read_file(path.as_ref())?)
}

pub fn write_features(path: impl AsRef<Path>, feats: &FeatureMatrix) -> Result<()> {
    write_file(path.as_ref(), &feats.to_bytes())
}

/// Multi-hot class membership. Rows keep both the sorted class list (for
/// serialization) and a bitset (for fast relevance checks).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    n: usize,
    c: usize,
    classes: Vec<Vec<u16>>,
    words_per_row: usize,
    bits: Vec<u64>,
}

impl LabelSet {
    /// Builds a label set from per-row class lists. Duplicates are collapsed.
    pub fn from_rows(c: usize, rows: Vec<Vec<u16>>) -> Result<Self> {
        if c > u16::MAX as usize + 1 {
            return Err(Error::InvalidArgument(format!(
                "class count {c} exceeds the u16 index range"
            )));
        }
        let words_per_row = c.div_ceil(64).max(1);
        let mut bits = vec![0u64; rows.len() * words_per_row];
        let mut classes = Vec::with_capacity(rows.len());
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_unstable();
            row.dedup();
            for &k in &row {
                if k as usize >= c {
                    return Err(Error::InvalidArgument(format!(
                        "row {i}: class {k} >= class count {c}"
                    )));
                }
                bits[i * words_per_row + k as usize / 64] |= 1 << (k % 64);
            }
            classes.push(row);
        }
        Ok(Self {
            n: classes.len(),
            c,
            classes,
            words_per_row,
            bits,
        })
    }

    /// Single-label convenience constructor.
    pub fn from_class_ids(c: usize, ids: &[u16]) -> Result<Self> {
        Self::from_rows(c, ids.iter().map(|&k| vec![k]).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn classes(&self, i: usize) -> &[u16] {
        &self.classes[i]
    }

    /// Dense boolean membership row.
    pub fn membership(&self, i: usize) -> Vec<bool> {
        let mut out = vec![false; self.c];
        for &k in &self.classes[i] {
            out[k as usize] = true;
        }
        out
    }

    fn bitrow(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words_per_row..(i + 1) * self.words_per_row]
    }

    /// True iff rows `i` and `j` share a class. Panics on out-of-range indices.
    #[inline]
    pub fn shares_label(&self, i: usize, j: usize) -> bool {
        self.bitrow(i)
            .iter()
            .zip(self.bitrow(j))
            .any(|(a, b)| a & b != 0)
    }

    pub fn relevance(&self, i: usize, j: usize) -> Result<bool> {
        for idx in [i, j] {
            if idx >= self.n {
                return Err(Error::OutOfRange {
                    index: idx,
                    len: self.n,
                });
            }
        }
        Ok(self.shares_label(i, j))
    }

    pub fn select(&self, ids: &[usize]) -> Result<Self> {
        let mut rows = Vec::with_capacity(ids.len());
        for &i in ids {
            if i >= self.n {
                return Err(Error::OutOfRange {
                    index: i,
                    len: self.n,
                });
            }
            rows.push(self.classes[i].clone());
        }
        Self::from_rows(self.c, rows)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(LABEL_MAGIC);
        w.u32(VERSION);
        w.u64(self.n as u64);
        w.u32(self.c as u32);
        for row in &self.classes {
            w.u16(row.len() as u16);
            for &k in row {
                w.u16(k);
            }
        }
        w.buf
    }

    /// Decodes a label file and checks it holds exactly `expected_n` rows.
    pub fn from_bytes(bytes: &[u8], expected_n: usize) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(LABEL_MAGIC)?;
        r.version(VERSION)?;
        let n = r.count()?;
        if n != expected_n {
            return Err(Error::format(
                8,
                format!("label file has {n} rows but {expected_n} were expected"),
            ));
        }
        let c = r.u32()? as usize;
        let mut rows = Vec::with_capacity(n.min(r.remaining() / 2 + 1));
        for i in 0..n {
            let k = r.u16()?;
            let mut row = Vec::with_capacity(k as usize);
            for _ in 0..k {
                let at = r.offset();
                let cls = r.u16()?;
                if cls as usize >= c {
                    return Err(Error::format(
                        at,
                        format!("row {i}: class index {cls} >= class count {c}"),
                    ));
                }
                row.push(cls);
            }
            rows.push(row);
        }
        r.finish()?;
        Self::from_rows(c, rows)
    }
}

pub fn load_labels(path: impl AsRef<Path>, n: usize) -> Result<LabelSet> {
    LabelSet::from_bytes(&read_file(path.as_ref())?, n)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &LabelSet) -> Result<()> {
    write_file(path.as_ref(), &labels.to_bytes())
}

/// Query / retrieval / train partition of sample indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitSpec {
    pub query_ids: Vec<usize>,
    pub retrieval_ids: Vec<usize>,
    pub train_ids: Vec<usize>,
}

impl SplitSpec {
    /// Checks disjointness of query/retrieval, `train ⊆ retrieval`, and bounds.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut in_retrieval = vec![false; n];
        for (name, ids) in [
            ("query", &self.query_ids),
            ("retrieval", &self.retrieval_ids),
            ("train", &self.train_ids),
        ] {
            if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
                return Err(Error::InvalidArgument(format!(
                    "{name} index {bad} out of range for {n} samples"
                )));
            }
        }
        for &i in &self.retrieval_ids {
            in_retrieval[i] = true;
        }
        if let Some(&i) = self.query_ids.iter().find(|&&i| in_retrieval[i]) {
            return Err(Error::InvalidArgument(format!(
                "index {i} is in both the query and retrieval sets"
            )));
        }
        if let Some(&i) = self.train_ids.iter().find(|&&i| !in_retrieval[i]) {
            return Err(Error::InvalidArgument(format!(
                "train index {i} is not in the retrieval set"
            )));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut split = SplitSpec::default();
        let mut section: Option<&mut Vec<usize>> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            match line {
                "query:" => section = Some(&mut split.query_ids),
                "retrieval:" => section = Some(&mut split.retrieval_ids),
                "train:" => section = Some(&mut split.train_ids),
                _ => {
                    let idx: usize = line.parse().map_err(|_| {
                        Error::InvalidArgument(format!(
                            "split line {}: expected an index or section header, got {line:?}",
                            lineno + 1
                        ))
                    })?;
                    match section.as_deref_mut() {
                        Some(ids) => ids.push(idx),
                        None => {
                            return Err(Error::InvalidArgument(format!(
                                "split line {}: index before any section header",
                                lineno + 1
                            )))
                        }
                    }
                }
            }
        }
        Ok(split)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, ids) in [
            ("query", &self.query_ids),
            ("retrieval", &self.retrieval_ids),
            ("train", &self.train_ids),
        ] {
            let _ = writeln!(out, "{name}:");
            for i in ids {
                let _ = writeln!(out, "{i}");
            }
        }
        out
    }
}

pub fn load_split(path: impl AsRef<Path>) -> Result<SplitSpec> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|e| Error::format(e.utf8_error().valid_up_to() as u64, "split file is not UTF-8"))?;
    SplitSpec::parse(&text)
}

pub fn write_split(path: impl AsRef<Path>, split: &SplitSpec) -> Result<()> {
    write_file(path.as_ref(), split.to_text().as_bytes())
}
