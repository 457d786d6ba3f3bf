//! Packed binary codes, Hamming ranking and retrieval metrics.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::LabelSet;
use crate::io::{read_file, write_file, Reader, Writer};
use crate::model::RelaxedCodes;

const CODES_MAGIC: &[u8; 4] = b"SAHB";
const VERSION: u32 = 1;
pub const MAX_BITS: usize = 4096;

/// Recall grid for interpolated PR curves: 0.00, 0.05, ..., 1.00.
pub const RECALL_GRID: usize = 21;

/// `n` codes of `l` bits, each row packed into `ceil(l / 64)` words.
/// Bit set means `+1`; padding bits are zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryCodeSet {
    n: usize,
    l: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

fn check_bits(l: usize) -> Result<()> {
    if l == 0 || l > MAX_BITS {
        return Err(Error::InvalidArgument(format!("code length {l} outside 1..={MAX_BITS}")));
    }
    Ok(())
}

impl BinaryCodeSet {
    /// Packs `sign(v)` of each value, with `sign(0) = +1`.
    pub fn from_real(n: usize, l: usize, values: &[f64]) -> Result<Self> {
        check_bits(l)?;
        if values.len() != n * l {
            return Err(Error::Shape(format!("{} values for {n}x{l} codes", values.len())));
        }
        let words_per_row = l.div_ceil(64);
        let mut words = vec![0u64; n * words_per_row];
        for (i, row) in values.chunks_exact(l).enumerate() {
            for (k, &v) in row.iter().enumerate() {
                if v >= 0.0 {
                    words[i * words_per_row + k / 64] |= 1 << (k % 64);
                }
            }
        }
        Ok(Self {
            n,
            l,
            words_per_row,
            words,
        })
    }

    pub fn binarize(z: &RelaxedCodes) -> Result<Self> {
        Self::from_real(z.rows(), z.l(), z.as_slice())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.words[i * self.words_per_row..(i + 1) * self.words_per_row]
    }

    /// Bit `k` of row `i` as `+1` / `-1`.
    pub fn sign(&self, i: usize, k: usize) -> i8 {
        if self.row(i)[k / 64] >> (k % 64) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    /// Unpacks to a row-major `{-1, +1}` vector.
    pub fn to_signs(&self) -> Vec<i8> {
        (0..self.n)
            .flat_map(|i| (0..self.l).map(move |k| (i, k)))
            .map(|(i, k)| self.sign(i, k))
            .collect()
    }

    pub fn select(&self, ids: &[usize]) -> Result<Self> {
        let mut words = Vec::with_capacity(ids.len() * self.words_per_row);
        for &i in ids {
            if i >= self.n {
                return Err(Error::OutOfRange { index: i, len: self.n });
            }
            words.extend_from_slice(self.row(i));
        }
        Ok(Self {
            n: ids.len(),
            l: self.l,
            words_per_row: self.words_per_row,
            words,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(CODES_MAGIC);
        w.u32(VERSION);
        w.u64(self.n as u64);
        w.u64(self.l as u64);
        for &word in &self.words {
            w.u64(word);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(CODES_MAGIC)?;
        r.version(VERSION)?;
        let n = r.count()?;
        let l = r.count()?;
        check_bits(l).map_err(|_| Error::format(16, format!("code length {l} out of range")))?;
        let words_per_row = l.div_ceil(64);
        let pad_mask = if l % 64 == 0 { 0 } else { !0u64 << (l % 64) };
        let mut words = Vec::with_capacity((n * words_per_row).min(r.remaining() / 8 + 1));
        for _ in 0..n {
            for k in 0..words_per_row {
                let at = r.offset();
                let word = r.u64()?;
                if k == words_per_row - 1 && word & pad_mask != 0 {
                    return Err(Error::format(at, "nonzero padding bits"));
                }
                words.push(word);
            }
        }
        r.finish()?;
        Ok(Self {
            n,
            l,
            words_per_row,
            words,
        })
    }
}

pub fn write_codes(path: impl AsRef<Path>, codes: &BinaryCodeSet) -> Result<()> {
    write_file(path.as_ref(), &codes.to_bytes())
}

pub fn load_codes(path: impl AsRef<Path>) -> Result<BinaryCodeSet> {
    BinaryCodeSet::from_bytes(&read_file(path.as_ref())?)
}

/// Number of differing bits between two packed rows.
pub fn hamming(x: &[u64], y: &[u64]) -> Result<u32> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("hamming over {} and {} words", x.len(), y.len())));
    }
    Ok(hamming_unchecked(x, y))
}

#[inline]
fn hamming_unchecked(x: &[u64], y: &[u64]) -> u32 {
    x.iter().zip(y).map(|(a, b)| (a ^ b).count_ones()).sum()
}

/// Retrieval ids for one query, ascending by `(distance, id)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankedList {
    pub query_id: usize,
    pub ids: Vec<usize>,
    pub distances: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankedLists {
    pub lists: Vec<RankedList>,
}

impl RankedLists {
    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }
}

/// Ranks every database code for every query. `query_ids` / `db_ids` give
/// the global sample id of each row; ties in distance go to the lower id.
pub fn rank(
    queries: &BinaryCodeSet,
    query_ids: &[usize],
    db: &BinaryCodeSet,
    db_ids: &[usize],
) -> Result<RankedLists> {
    if queries.l != db.l {
        return Err(Error::Shape(format!(
            "query codes have {} bits, database codes {}",
            queries.l, db.l
        )));
    }
    if query_ids.len() != queries.n || db_ids.len() != db.n {
        return Err(Error::Shape("id lists do not match code counts".into()));
    }
    let mut by_id: Vec<usize> = (0..db.n).collect();
    by_id.sort_by_key(|&r| db_ids[r]);
    let l = db.l;
    let lists = (0..queries.n)
        .into_par_iter()
        .map(|q| {
            let qrow = queries.row(q);
            let dist: Vec<u32> = (0..db.n).map(|r| hamming_unchecked(qrow, db.row(r))).collect();
            // counting sort on distance; by_id order makes it stable on id
            let mut start = vec![0usize; l + 2];
            for &d in &dist {
                start[d as usize + 1] += 1;
            }
            for k in 1..start.len() {
                start[k] += start[k - 1];
            }
            let mut ids = vec![0usize; db.n];
            let mut distances = vec![0u32; db.n];
            for &r in &by_id {
                let d = dist[r] as usize;
                ids[start[d]] = db_ids[r];
                distances[start[d]] = dist[r];
                start[d] += 1;
            }
            RankedList {
                query_id: query_ids[q],
                ids,
                distances,
            }
        })
        .collect();
    Ok(RankedLists { lists })
}

fn relevance_flags(list: &RankedList, labels: &LabelSet) -> Result<Vec<bool>> {
    let n = labels.n();
    if list.query_id >= n {
        return Err(Error::OutOfRange { index: list.query_id, len: n });
    }
    list.ids
        .iter()
        .map(|&id| {
            if id >= n {
                Err(Error::OutOfRange { index: id, len: n })
            } else {
                Ok(labels.shares_label(list.query_id, id))
            }
        })
        .collect()
}

fn all_flags(ranked: &RankedLists, labels: &LabelSet) -> Result<Vec<Vec<bool>>> {
    ranked
        .lists
        .par_iter()
        .map(|l| relevance_flags(l, labels))
        .collect()
}

/// Average precision over the first `cutoff` ranks, normalized by
/// `min(R_q, cutoff)`. `None` when the list holds no relevant item.
fn average_precision(flags: &[bool], cutoff: usize) -> Option<f64> {
    let total_relevant = flags.iter().filter(|&&f| f).count();
    if total_relevant == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, _) in flags.iter().take(cutoff).enumerate().filter(|(_, &f)| f) {
        hits += 1;
        sum += hits as f64 / (k + 1) as f64;
    }
    Some(sum / total_relevant.min(cutoff) as f64)
}

/// Mean of truncated average precision over queries that have at least one
/// relevant retrieval item. `n = 0` means no truncation.
pub fn map_at_n(ranked: &RankedLists, labels: &LabelSet, n: usize) -> Result<f64> {
    let flags = all_flags(ranked, labels)?;
    let aps: Vec<f64> = flags
        .iter()
        .filter_map(|f| average_precision(f, if n == 0 { f.len() } else { n }))
        .collect();
    if aps.is_empty() {
        return Err(Error::NoRelevant);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Mean fraction of relevant items among the top `n`.
pub fn precision_at_n(ranked: &RankedLists, labels: &LabelSet, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("precision@N needs N >= 1".into()));
    }
    if ranked.is_empty() {
        return Err(Error::InvalidArgument("no queries".into()));
    }
    let flags = all_flags(ranked, labels)?;
    let total: f64 = flags
        .iter()
        .map(|f| f.iter().take(n).filter(|&&x| x).count() as f64 / n as f64)
        .sum();
    Ok(total / flags.len() as f64)
}

/// Precision@N for each requested N.
pub fn precision_curve(ranked: &RankedLists, labels: &LabelSet, ns: &[usize]) -> Result<Vec<(usize, f64)>> {
    ns.iter()
        .map(|&n| precision_at_n(ranked, labels, n).map(|p| (n, p)))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    /// `(recall, precision)` on [`RECALL_GRID`] evenly spaced recall levels.
    pub points: Vec<(f64, f64)>,
    /// Queries skipped because they have no relevant item.
    pub excluded: usize,
}

/// Interpolated precision (max precision at any rank with recall >= r) on a
/// fixed recall grid, averaged over queries.
pub fn pr_curve(ranked: &RankedLists, labels: &LabelSet) -> Result<PrCurve> {
    let flags = all_flags(ranked, labels)?;
    let grid: Vec<f64> = (0..RECALL_GRID).map(|k| k as f64 / (RECALL_GRID - 1) as f64).collect();
    let mut sums = vec![0.0; RECALL_GRID];
    let mut used = 0usize;
    for f in &flags {
        let total = f.iter().filter(|&&x| x).count();
        if total == 0 {
            continue;
        }
        used += 1;
        // (recall, precision) at every relevant rank; interpolated precision
        // at level r is the max precision over points with recall >= r
        let mut pts = Vec::with_capacity(total);
        let mut hits = 0usize;
        for (k, &rel) in f.iter().enumerate() {
            if rel {
                hits += 1;
                pts.push((hits as f64 / total as f64, hits as f64 / (k + 1) as f64));
            }
        }
        let mut best = 0.0f64;
        let mut p = pts.len();
        for g in (0..RECALL_GRID).rev() {
            while p > 0 && pts[p - 1].0 >= grid[g] - 1e-12 {
                best = best.max(pts[p - 1].1);
                p -= 1;
            }
            sums[g] += best;
        }
    }
    if used == 0 {
        return Err(Error::NoRelevant);
    }
    Ok(PrCurve {
        points: grid
            .into_iter()
            .zip(sums)
            .map(|(r, s)| (r, s / used as f64))
            .collect(),
        excluded: flags.len() - used,
    })
}

/// Mean (precision, recall) at every rank `1..=max_rank`, over queries with
/// at least one relevant item.
pub fn pr_by_rank(ranked: &RankedLists, labels: &LabelSet, max_rank: usize) -> Result<Vec<(usize, f64, f64)>> {
    let flags = all_flags(ranked, labels)?;
    let mut prec = vec![0.0; max_rank];
    let mut rec = vec![0.0; max_rank];
    let mut used = 0usize;
    for f in &flags {
        let total = f.iter().filter(|&&x| x).count();
        if total == 0 {
            continue;
        }
        used += 1;
        let mut hits = 0usize;
        for k in 0..max_rank {
            if f.get(k).copied().unwrap_or(false) {
                hits += 1;
            }
            prec[k] += hits as f64 / (k + 1) as f64;
            rec[k] += hits as f64 / total as f64;
        }
    }
    if used == 0 {
        return Err(Error::NoRelevant);
    }
    Ok((0..max_rank)
        .map(|k| (k + 1, prec[k] / used as f64, rec[k] / used as f64))
        .collect())
}
