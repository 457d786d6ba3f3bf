//! Signed neighbourhood graphs.
//!
//! A [`SignedSimilarityMatrix`] is an `n x n` matrix over `{-1, +1}` stored as
//! sorted per-row lists of its `+1` columns. The initial graph is the
//! intersection of a cosine k-NN graph (low order) with a graph linking
//! samples whose k-NN rows are most alike (high order). Between training
//! rounds [`and_update`] promotes `-1` pairs whose current code similarity
//! clears `mean + gamma * std` of the existing positive pairs.
//!
//! Rows are not symmetrized: top-k is taken row by row. Every sample is its
//! own neighbour, so a k-NN row holds `k + 1` entries.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, LabelSet};
use crate::io::{read_file, write_file, Reader, Writer};

const GRAPH_MAGIC: &[u8; 4] = b"SAHW";
const VERSION: u32 = 1;

/// Norm products below this make [`cosine_sim`] return 0.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignedSimilarityMatrix {
    n: usize,
    rows: Vec<Vec<u32>>,
}

impl SignedSimilarityMatrix {
    /// Builds a matrix from per-row positive lists. Lists are sorted and
    /// deduplicated; out-of-range columns are rejected.
    pub fn from_rows(n: usize, mut rows: Vec<Vec<u32>>) -> Result<Self> {
        if rows.len() != n {
            return Err(Error::Shape(format!("{} rows for n = {n}", rows.len())));
        }
        if n > u32::MAX as usize {
            return Err(Error::InvalidArgument(format!("n = {n} exceeds u32 indices")));
        }
        for (i, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            if let Some(&j) = row.last() {
                if j as usize >= n {
                    return Err(Error::InvalidArgument(format!(
                        "row {i}: column {j} out of range for n = {n}"
                    )));
                }
            }
        }
        Ok(Self { n, rows })
    }

    /// Only the diagonal is positive.
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            rows: (0..n as u32).map(|i| vec![i]).collect(),
        }
    }

    pub fn full(n: usize) -> Self {
        let all: Vec<u32> = (0..n as u32).collect();
        Self {
            n,
            rows: vec![all; n],
        }
    }

    /// Dense `{-1, +1}` row-major matrix.
    pub fn from_dense(n: usize, signs: &[i8]) -> Result<Self> {
        if signs.len() != n * n {
            return Err(Error::Shape(format!("{} entries for {n}x{n}", signs.len())));
        }
        let rows = signs
            .chunks_exact(n.max(1))
            .take(n)
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &s)| s > 0)
                    .map(|(j, _)| j as u32)
                    .collect()
            })
            .collect();
        Self::from_rows(n, rows)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Sorted positive columns of row `i`.
    pub fn positives(&self, i: usize) -> &[u32] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    pub fn n_plus(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn is_positive(&self, i: usize, j: usize) -> bool {
        self.rows[i].binary_search(&(j as u32)).is_ok()
    }

    pub fn get(&self, i: usize, j: usize) -> i8 {
        if self.is_positive(i, j) {
            1
        } else {
            -1
        }
    }

    /// Full `{-1, +1}` row.
    pub fn sign_row(&self, i: usize) -> Vec<i8> {
        let mut out = vec![-1i8; self.n];
        for &j in &self.rows[i] {
            out[j as usize] = 1;
        }
        out
    }

    /// `b x b` signed sub-matrix over the given ids, row-major.
    pub fn gather(&self, ids: &[usize]) -> Vec<i8> {
        let mut out = Vec::with_capacity(ids.len() * ids.len());
        for &p in ids {
            for &q in ids {
                out.push(self.get(p, q));
            }
        }
        out
    }

    /// `W_ij = +1` iff `W_ij = +1` or `W_ji = +1`.
    pub fn symmetrized_or(&self) -> Self {
        let mut rows = self.rows.clone();
        for (i, row) in self.rows.iter().enumerate() {
            for &j in row {
                rows[j as usize].push(i as u32);
            }
        }
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
        }
        Self { n: self.n, rows }
    }

    /// Count of `(i, j)` with `W_ij != W_ji`, each unordered pair counted once.
    pub fn asymmetric_pairs(&self) -> usize {
        let mut count = 0;
        for (i, row) in self.rows.iter().enumerate() {
            for &j in row {
                if !self.is_positive(j as usize, i) {
                    count += 1;
                }
            }
        }
        count
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(GRAPH_MAGIC);
        w.u32(VERSION);
        w.u64(self.n as u64);
        for row in &self.rows {
            w.u32(row.len() as u32);
            for &j in row {
                w.u32(j);
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(GRAPH_MAGIC)?;
        r.version(VERSION)?;
        let n = r.count()?;
        let mut rows = Vec::with_capacity(n.min(r.remaining() / 4 + 1));
        for i in 0..n {
            let k = r.u32()? as usize;
            let mut row = Vec::with_capacity(k.min(r.remaining() / 4));
            let mut prev: Option<u32> = None;
            for _ in 0..k {
                let at = r.offset();
                let j = r.u32()?;
                if j as usize >= n || prev.is_some_and(|p| p >= j) {
                    return Err(Error::format(
                        at,
                        format!("row {i}: column {j} out of range or out of order"),
                    ));
                }
                prev = Some(j);
                row.push(j);
            }
            rows.push(row);
        }
        r.finish()?;
        Ok(Self { n, rows })
    }
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<SignedSimilarityMatrix> {
    SignedSimilarityMatrix::from_bytes(&read_file(path.as_ref())?)
}

pub fn write_graph(path: impl AsRef<Path>, w: &SignedSimilarityMatrix) -> Result<()> {
    write_file(path.as_ref(), &w.to_bytes())
}

fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn norm_f64(a: &[f32]) -> f64 {
    dot_f64(a, a).sqrt()
}

#[inline]
fn cosine_from_parts(dot: f64, na: f64, nb: f64) -> f64 {
    let denom = na * nb;
    if denom < NORM_EPS {
        0.0
    } else {
        (dot / denom).clamp(-1.0, 1.0)
    }
}

/// Cosine of two equal-length vectors, accumulated in `f64`. Returns 0 when
/// either vector is (numerically) zero.
pub fn cosine_sim(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(cosine_from_parts(dot_f64(a, b), norm_f64(a), norm_f64(b)))
}

/// Indices of the `k` best candidates under `better`, sorted ascending.
fn top_k<T, F>(mut cands: Vec<(T, u32)>, k: usize, better: F) -> Vec<u32>
where
    F: Fn(&T, &T) -> std::cmp::Ordering,
{
    let cmp = |a: &(T, u32), b: &(T, u32)| better(&a.0, &b.0).then(a.1.cmp(&b.1));
    if k < cands.len() {
        cands.select_nth_unstable_by(k, cmp);
        cands.truncate(k);
    }
    cands.into_iter().map(|(_, j)| j).collect()
}

fn check_k(k: usize, n: usize, name: &str) -> Result<()> {
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "{name} = {k} must satisfy 1 <= {name} < n = {n}"
        )));
    }
    Ok(())
}

/// Cosine k-NN graph. Row `i` holds `i` plus its `k1` most similar other
/// samples; ties go to the lower index.
pub fn build_low_order(feats: &FeatureMatrix, k1: usize) -> Result<SignedSimilarityMatrix> {
    let n = feats.n();
    check_k(k1, n, "k1")?;
    let norms: Vec<f64> = feats.rows().map(norm_f64).collect();
    let rows = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = feats.row(i);
            let cands: Vec<(f64, u32)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let s = cosine_from_parts(dot_f64(xi, feats.row(j)), norms[i], norms[j]);
                    (s, j as u32)
                })
                .collect();
            let mut row = top_k(cands, k1, |a, b| b.partial_cmp(a).unwrap());
            row.push(i as u32);
            row.sort_unstable();
            row
        })
        .collect();
    Ok(SignedSimilarityMatrix { n, rows })
}

/// Number of positions where the full `+-1` rows `i` and `j` differ.
fn row_disagreement(w: &SignedSimilarityMatrix, i: usize, j: usize) -> usize {
    let (a, b) = (&w.rows[i], &w.rows[j]);
    let (mut x, mut y, mut common) = (0, 0, 0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                x += 1;
                y += 1;
            }
        }
    }
    a.len() + b.len() - 2 * common
}

#[inline]
fn similarity_from_disagreement(diff: usize) -> f64 {
    // each differing +-1 position contributes 4 to the squared distance
    1.0 / (1.0 + 2.0 * (diff as f64).sqrt())
}

/// `1 / (1 + ||row_i - row_j||)` over the full `+-1` rows of `wl`.
pub fn neighbor_row_similarity(wl: &SignedSimilarityMatrix, i: usize, j: usize) -> Result<f64> {
    for idx in [i, j] {
        if idx >= wl.n {
            return Err(Error::OutOfRange { index: idx, len: wl.n });
        }
    }
    Ok(similarity_from_disagreement(row_disagreement(wl, i, j)))
}

/// Shared-neighbour graph: row `i` holds `i` plus the `k2` other rows of `wl`
/// most similar to row `i` under [`neighbor_row_similarity`].
///
/// The similarity is a decreasing function of the number of disagreeing
/// positions, so ranking is done on that integer count directly.
pub fn build_high_order(wl: &SignedSimilarityMatrix, k2: usize) -> Result<SignedSimilarityMatrix> {
    let n = wl.n;
    check_k(k2, n, "k2")?;
    let mut columns: Vec<Vec<u32>> = vec![Vec::new(); n];
    for (i, row) in wl.rows.iter().enumerate() {
        for &j in row {
            columns[j as usize].push(i as u32);
        }
    }
    let rows = (0..n)
        .into_par_iter()
        .map_init(
            || vec![0usize; n],
            |common, i| {
                common.iter_mut().for_each(|c| *c = 0);
                for &t in &wl.rows[i] {
                    for &j in &columns[t as usize] {
                        common[j as usize] += 1;
                    }
                }
                let len_i = wl.rows[i].len();
                let cands: Vec<(usize, u32)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (len_i + wl.rows[j].len() - 2 * common[j], j as u32))
                    .collect();
                let mut row = top_k(cands, k2, |a, b| a.cmp(b));
                row.push(i as u32);
                row.sort_unstable();
                row
            },
        )
        .collect();
    Ok(SignedSimilarityMatrix { n, rows })
}

/// Entry-wise AND: `+1` only where both inputs are `+1`.
pub fn combine(
    wl: &SignedSimilarityMatrix,
    wh: &SignedSimilarityMatrix,
) -> Result<SignedSimilarityMatrix> {
    if wl.n != wh.n {
        return Err(Error::Shape(format!("combine {} with {}", wl.n, wh.n)));
    }
    let rows = wl
        .rows
        .iter()
        .zip(&wh.rows)
        .map(|(a, b)| {
            let mut out = Vec::with_capacity(a.len().min(b.len()));
            let (mut x, mut y) = (0, 0);
            while x < a.len() && y < b.len() {
                match a[x].cmp(&b[y]) {
                    std::cmp::Ordering::Less => x += 1,
                    std::cmp::Ordering::Greater => y += 1,
                    std::cmp::Ordering::Equal => {
                        out.push(a[x]);
                        x += 1;
                        y += 1;
                    }
                }
            }
            out
        })
        .collect();
    Ok(SignedSimilarityMatrix { n: wl.n, rows })
}

/// The three graphs of the initial construction.
#[derive(Clone, Debug)]
pub struct InitialGraphs {
    pub low: SignedSimilarityMatrix,
    pub high: SignedSimilarityMatrix,
    pub combined: SignedSimilarityMatrix,
}

pub fn build_initial(feats: &FeatureMatrix, k1: usize, k2: usize) -> Result<InitialGraphs> {
    let low = build_low_order(feats, k1)?;
    let high = build_high_order(&low, k2)?;
    let combined = combine(&low, &high)?;
    Ok(InitialGraphs {
        low,
        high,
        combined,
    })
}

/// Source of pairwise similarities for [`and_update`].
pub trait PairSimilarity: Sync {
    fn n(&self) -> usize;

    fn pair(&self, i: usize, j: usize) -> f64;

    fn row_into(&self, i: usize, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.pair(i, j);
        }
    }
}

/// Explicit row-major `n x n` similarity matrix.
#[derive(Clone, Debug)]
pub struct DenseSimilarity {
    n: usize,
    data: Vec<f64>,
}

impl DenseSimilarity {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Shape(format!("{} entries for {n}x{n}", data.len())));
        }
        Ok(Self { n, data })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

impl PairSimilarity for DenseSimilarity {
    fn n(&self) -> usize {
        self.n
    }

    fn pair(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    fn row_into(&self, i: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.data[i * self.n..(i + 1) * self.n]);
    }
}

/// Cosine similarity between rows of a code matrix, computed on demand so
/// the full `n x n` matrix is never materialized.
#[derive(Clone, Debug)]
pub struct CodeCosine {
    n: usize,
    l: usize,
    unit: Vec<f64>,
}

impl CodeCosine {
    /// `codes` is `n x l` row-major. Rows with norm below [`NORM_EPS`] are
    /// zeroed and have similarity 0 with everything.
    pub fn new(n: usize, l: usize, codes: &[f64]) -> Result<Self> {
        if codes.len() != n * l || l == 0 {
            return Err(Error::Shape(format!("{} code values for {n}x{l}", codes.len())));
        }
        let mut unit = codes.to_vec();
        for row in unit.chunks_exact_mut(l) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < NORM_EPS {
                row.iter_mut().for_each(|v| *v = 0.0);
            } else {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        Ok(Self { n, l, unit })
    }

    fn unit_row(&self, i: usize) -> &[f64] {
        &self.unit[i * self.l..(i + 1) * self.l]
    }
}

impl PairSimilarity for CodeCosine {
    fn n(&self) -> usize {
        self.n
    }

    fn pair(&self, i: usize, j: usize) -> f64 {
        let dot: f64 = self
            .unit_row(i)
            .iter()
            .zip(self.unit_row(j))
            .map(|(a, b)| a * b)
            .sum();
        dot.clamp(-1.0, 1.0)
    }
}

/// Statistics of one refinement step.
#[derive(Clone, Debug, PartialEq)]
pub struct AndRoundStats {
    pub round: usize,
    pub mu: f64,
    pub sigma: f64,
    /// Promotion threshold `mu + gamma * sigma`.
    pub m: f64,
    /// Positive count after the update.
    pub n_plus: usize,
    pub flipped: usize,
}

/// Population mean and standard deviation of `sim` over the positive entries of `w`.
pub fn positive_pair_stats(w: &SignedSimilarityMatrix, sim: &dyn PairSimilarity) -> Result<(f64, f64)> {
    if sim.n() != w.n {
        return Err(Error::Shape(format!("graph n = {} vs similarity n = {}", w.n, sim.n())));
    }
    let n_plus = w.n_plus();
    if n_plus == 0 {
        return Err(Error::NoPositives);
    }
    let row_sums: Vec<f64> = w
        .rows
        .par_iter()
        .enumerate()
        .map(|(i, row)| row.iter().map(|&j| sim.pair(i, j as usize)).sum())
        .collect();
    let mu = row_sums.iter().sum::<f64>() / n_plus as f64;
    let row_sq: Vec<f64> = w
        .rows
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .map(|&j| {
                    let d = sim.pair(i, j as usize) - mu;
                    d * d
                })
                .sum()
        })
        .collect();
    let sigma = (row_sq.iter().sum::<f64>() / n_plus as f64).sqrt();
    Ok((mu, sigma))
}

/// One adaptive refinement step: every `-1` entry with similarity at least
/// `mu + gamma * sigma` becomes `+1`. Positive entries never change.
///
/// The returned stats carry `round = 0`; callers that track rounds set it.
pub fn and_update(
    w: &SignedSimilarityMatrix,
    sim: &dyn PairSimilarity,
    gamma: f64,
) -> Result<(SignedSimilarityMatrix, AndRoundStats)> {
    let (mu, sigma) = positive_pair_stats(w, sim)?;
    let m = mu + gamma * sigma;
    let n = w.n;
    let rows: Vec<(Vec<u32>, usize)> = w
        .rows
        .par_iter()
        .enumerate()
        .map_init(
            || vec![0.0f64; n],
            |buf, (i, row)| {
                sim.row_into(i, buf);
                let mut out = Vec::with_capacity(row.len());
                let mut flipped = 0;
                let mut next = row.iter().peekable();
                for (j, &s) in buf.iter().enumerate() {
                    if next.peek().is_some_and(|&&p| p as usize == j) {
                        next.next();
                        out.push(j as u32);
                    } else if s >= m {
                        out.push(j as u32);
                        flipped += 1;
                    }
                }
                (out, flipped)
            },
        )
        .collect();
    let flipped = rows.iter().map(|r| r.1).sum();
    let updated = SignedSimilarityMatrix {
        n,
        rows: rows.into_iter().map(|r| r.0).collect(),
    };
    let stats = AndRoundStats {
        round: 0,
        mu,
        sigma,
        m,
        n_plus: updated.n_plus(),
        flipped,
    };
    Ok((updated, stats))
}

/// Graph quality against label-derived ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FwScore {
    pub f: f64,
    pub precision: f64,
    pub recall: f64,
    /// Set when the graph has no positives or no pair is relevant.
    pub degenerate: bool,
}

/// Harmonic mean of the precision and recall of the positive set of `w`
/// against the pairs that share a label.
pub fn f_w(w: &SignedSimilarityMatrix, labels: &LabelSet) -> Result<FwScore> {
    if labels.n() != w.n {
        return Err(Error::Shape(format!(
            "graph n = {} vs label n = {}",
            w.n,
            labels.n()
        )));
    }
    let n = w.n;
    let counts: Vec<(usize, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let hits = w.rows[i]
                .iter()
                .filter(|&&j| labels.shares_label(i, j as usize))
                .count();
            let relevant = (0..n).filter(|&j| labels.shares_label(i, j)).count();
            (hits, relevant)
        })
        .collect();
    let hits: usize = counts.iter().map(|c| c.0).sum();
    let relevant: usize = counts.iter().map(|c| c.1).sum();
    let n_plus = w.n_plus();
    if n_plus == 0 || relevant == 0 {
        return Ok(FwScore {
            f: 0.0,
            precision: 0.0,
            recall: 0.0,
            degenerate: true,
        });
    }
    let precision = hits as f64 / n_plus as f64;
    let recall = hits as f64 / relevant as f64;
    let f = if hits == 0 {
        0.0
    } else {
        2.0 / (1.0 / precision + 1.0 / recall)
    };
    Ok(FwScore {
        f,
        precision,
        recall,
        degenerate: false,
    })
}
