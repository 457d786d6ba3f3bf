//! Two-layer hash head `d -> h (relu) -> l (tanh)` with hand-derived
//! gradients and an Adam optimizer.
//!
//! Parameters are stored as `f32`; every forward/backward reduction runs in
//! `f64`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{read_file, write_file, Reader, Writer};

const CHECKPOINT_MAGIC: &[u8; 4] = b"SAHC";
const VERSION: u32 = 1;

pub const DEFAULT_HIDDEN: usize = 1000;

/// Weights of the hash head. `w1` is `d x h` and `w2` is `h x l`, both row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct HashHeadParams {
    d: usize,
    h: usize,
    l: usize,
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
}

/// Per-tensor gradients in `f64`, laid out like [`HashHeadParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradients {
    pub fn tensors(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }
}

/// Relaxed codes, `rows x l` row-major, every entry in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelaxedCodes {
    rows: usize,
    l: usize,
    data: Vec<f64>,
}

impl RelaxedCodes {
    pub fn new(rows: usize, l: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * l {
            return Err(Error::Shape(format!("{} values for {rows}x{l} codes", data.len())));
        }
        if let Some(v) = data.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("relaxed code value {v} outside [-1, 1]")));
        }
        Ok(Self { rows, l, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.l..(i + 1) * self.l]
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    batch: usize,
    /// post-relu hidden activations, `batch x h`
    hidden: Vec<f64>,
    pub codes: RelaxedCodes,
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Vec<f32> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound) as f32)
        .collect()
}

impl HashHeadParams {
    /// Xavier-uniform weights, zero biases, deterministic per seed.
    pub fn init(d: usize, h: usize, l: usize, seed: u64) -> Result<Self> {
        if d == 0 || h == 0 || l == 0 {
            return Err(Error::InvalidArgument(format!(
                "head dimensions must be positive, got d={d} h={h} l={l}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w1 = xavier(&mut rng, d, h);
        let w2 = xavier(&mut rng, h, l);
        Ok(Self {
            d,
            h,
            l,
            w1,
            b1: vec![0.0; h],
            w2,
            b2: vec![0.0; l],
        })
    }

    pub fn zeros(d: usize, h: usize, l: usize) -> Self {
        Self {
            d,
            h,
            l,
            w1: vec![0.0; d * h],
            b1: vec![0.0; h],
            w2: vec![0.0; h * l],
            b2: vec![0.0; l],
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn tensors(&self) -> [&[f32]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f32>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn batch_of(&self, x: &[f32]) -> Result<usize> {
        if !x.len().is_multiple_of(self.d) {
            return Err(Error::Shape(format!(
                "{} input values is not a multiple of feature width {}",
                x.len(),
                self.d
            )));
        }
        Ok(x.len() / self.d)
    }

    /// Runs the head on a row-major `batch x d` input.
    pub fn forward_pass(&self, x: &[f32]) -> Result<ForwardPass> {
        let batch = self.batch_of(x)?;
        let (d, h, l) = (self.d, self.h, self.l);
        let mut hidden = vec![0.0f64; batch * h];
        let mut z = vec![0.0f64; batch * l];
        for b in 0..batch {
            let xb = &x[b * d..(b + 1) * d];
            let hb = &mut hidden[b * h..(b + 1) * h];
            for (o, &bias) in hb.iter_mut().zip(&self.b1) {
                *o = bias as f64;
            }
            for (i, &xi) in xb.iter().enumerate() {
                let xi = xi as f64;
                if xi == 0.0 {
                    continue;
                }
                for (o, &w) in hb.iter_mut().zip(&self.w1[i * h..(i + 1) * h]) {
                    *o += xi * w as f64;
                }
            }
            hb.iter_mut().for_each(|v| *v = v.max(0.0));
            let zb = &mut z[b * l..(b + 1) * l];
            for (o, &bias) in zb.iter_mut().zip(&self.b2) {
                *o = bias as f64;
            }
            for (j, &hj) in hb.iter().enumerate() {
                if hj == 0.0 {
                    continue;
                }
                for (o, &w) in zb.iter_mut().zip(&self.w2[j * l..(j + 1) * l]) {
                    *o += hj * w as f64;
                }
            }
            zb.iter_mut().for_each(|v| *v = v.tanh());
        }
        Ok(ForwardPass {
            batch,
            hidden,
            codes: RelaxedCodes {
                rows: batch,
                l,
                data: z,
            },
        })
    }

    pub fn forward(&self, x: &[f32]) -> Result<RelaxedCodes> {
        Ok(self.forward_pass(x)?.codes)
    }

    /// Gradients of `sum(upstream * z)` with respect to every parameter.
    pub fn backward(&self, x: &[f32], upstream: &[f64]) -> Result<Gradients> {
        let pass = self.forward_pass(x)?;
        self.backward_from(&pass, x, upstream)
    }

    /// As [`backward`](Self::backward), reusing a stored forward pass over the same `x`.
    pub fn backward_from(&self, pass: &ForwardPass, x: &[f32], upstream: &[f64]) -> Result<Gradients> {
        let batch = self.batch_of(x)?;
        let (d, h, l) = (self.d, self.h, self.l);
        if batch != pass.batch || upstream.len() != batch * l {
            return Err(Error::Shape(format!(
                "upstream has {} values, expected {}x{l}",
                upstream.len(),
                batch
            )));
        }
        let mut g = Gradients {
            w1: vec![0.0; d * h],
            b1: vec![0.0; h],
            w2: vec![0.0; h * l],
            b2: vec![0.0; l],
        };
        let mut dpre2 = vec![0.0f64; l];
        let mut dpre1 = vec![0.0f64; h];
        for b in 0..batch {
            let zb = pass.codes.row(b);
            let ub = &upstream[b * l..(b + 1) * l];
            for k in 0..l {
                dpre2[k] = ub[k] * (1.0 - zb[k] * zb[k]);
                g.b2[k] += dpre2[k];
            }
            let hb = &pass.hidden[b * h..(b + 1) * h];
            for j in 0..h {
                let w2row = &self.w2[j * l..(j + 1) * l];
                let g2row = &mut g.w2[j * l..(j + 1) * l];
                let mut dh = 0.0;
                for k in 0..l {
                    g2row[k] += hb[j] * dpre2[k];
                    dh += dpre2[k] * w2row[k] as f64;
                }
                dpre1[j] = if hb[j] > 0.0 { dh } else { 0.0 };
                g.b1[j] += dpre1[j];
            }
            let xb = &x[b * d..(b + 1) * d];
            for (i, &xi) in xb.iter().enumerate() {
                let xi = xi as f64;
                if xi == 0.0 {
                    continue;
                }
                for (o, &dp) in g.w1[i * h..(i + 1) * h].iter_mut().zip(&dpre1) {
                    *o += xi * dp;
                }
            }
        }
        Ok(g)
    }
}

/// First/second moment accumulators for Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: [Vec<f32>; 4],
    pub v: [Vec<f32>; 4],
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &HashHeadParams) -> Self {
        let zeros = params.tensors().map(|t| vec![0.0f32; t.len()]);
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut HashHeadParams,
    grads: &Gradients,
    state: &mut AdamState,
    eta: f64,
) -> Result<()> {
    for (p, g) in params.tensors().iter().zip(grads.tensors()) {
        if p.len() != g.len() {
            return Err(Error::Shape("gradient shape does not match parameters".into()));
        }
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let AdamState { m, v, eps, .. } = state;
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        for idx in 0..p.len() {
            let gi = g[idx];
            let mi = b1 * m[idx] as f64 + (1.0 - b1) * gi;
            let vi = b2 * v[idx] as f64 + (1.0 - b2) * gi * gi;
            m[idx] = mi as f32;
            v[idx] = vi as f32;
            let step = eta * (mi / c1) / ((vi / c2).sqrt() + *eps);
            p[idx] = (p[idx] as f64 - step) as f32;
        }
    }
    Ok(())
}

/// Checkpoint layout: magic `SAHC`, `u32` version, `u64` d, h, l, then
/// `w1, b1, w2, b2`, the Adam first moments and second moments in the same
/// tensor order (all `f32`), and finally the Adam step counter as `u64`.
pub fn checkpoint_bytes(params: &HashHeadParams, adam: &AdamState) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(VERSION);
    for dim in [params.d, params.h, params.l] {
        w.u64(dim as u64);
    }
    for t in params.tensors() {
        w.f32s(t);
    }
    for t in adam.m.iter().chain(&adam.v) {
        w.f32s(t);
    }
    w.u64(adam.t);
    w.buf
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(HashHeadParams, AdamState)> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version(VERSION)?;
    let d = r.count()?;
    let h = r.count()?;
    let l = r.count()?;
    if d == 0 || h == 0 || l == 0 {
        return Err(Error::format(8, format!("bad head dimensions {d}x{h}x{l}")));
    }
    let sizes = [d * h, h, h * l, l];
    let read4 = |r: &mut Reader| -> Result<[Vec<f32>; 4]> {
        Ok([
            r.finite_f32s(sizes[0])?,
            r.finite_f32s(sizes[1])?,
            r.finite_f32s(sizes[2])?,
            r.finite_f32s(sizes[3])?,
        ])
    };
    let [w1, b1, w2, b2] = read4(&mut r)?;
    let m = read4(&mut r)?;
    let v = read4(&mut r)?;
    let t = r.u64()?;
    r.finish()?;
    let params = HashHeadParams {
        d,
        h,
        l,
        w1,
        b1,
        w2,
        b2,
    };
    let adam = AdamState {
        m,
        v,
        t,
        ..AdamState::new(&params)
    };
    Ok((params, adam))
}

pub fn write_checkpoint(path: impl AsRef<Path>, params: &HashHeadParams, adam: &AdamState) -> Result<()> {
    write_file(path.as_ref(), &checkpoint_bytes(params, adam))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(HashHeadParams, AdamState)> {
    checkpoint_from_bytes(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(seed: u64, len: usize) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect()
    }

    /// sum(c * z) for fixed coefficients c, evaluated in f64.
    fn probe_loss(p: &HashHeadParams, x: &[f32], c: &[f64]) -> f64 {
        let z = p.forward(x).unwrap();
        z.as_slice().iter().zip(c).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = HashHeadParams::init(5, 7, 3, 42).unwrap();
        let b = HashHeadParams::init(5, 7, 3, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.b1.iter().chain(&a.b2).all(|&v| v == 0.0));
        assert_ne!(a, HashHeadParams::init(5, 7, 3, 43).unwrap());
        assert!(HashHeadParams::init(0, 7, 3, 1).is_err());
    }

    #[test]
    fn init_weight_statistics() {
        // 100 x 1000 = 1e5 draws from U(-a, a), a = sqrt(6 / 1100)
        let p = HashHeadParams::init(100, 1000, 1, 7).unwrap();
        let n = p.w1.len() as f64;
        let bound = (6.0f64 / 1100.0).sqrt();
        let sd = bound / 3f64.sqrt();
        let mean = p.w1.iter().map(|&v| v as f64).sum::<f64>() / n;
        assert!(mean.abs() < 3.0 * sd / n.sqrt(), "mean {mean}");
        assert!(p.w1.iter().all(|&v| (v as f64).abs() <= bound + 1e-7));
    }

    #[test]
    fn forward_zero_params_and_range() {
        let p = HashHeadParams::zeros(4, 3, 2);
        let z = p.forward(&random_input(1, 8)).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
        let p = HashHeadParams::init(4, 16, 5, 3).unwrap();
        let z = p.forward(&random_input(2, 40)).unwrap();
        assert_eq!((z.rows(), z.l()), (10, 5));
        assert!(z.as_slice().iter().all(|&v| v > -1.0 && v < 1.0));
        assert!(p.forward(&[1.0; 5]).is_err());
    }

    #[test]
    fn forward_saturates() {
        let mut p = HashHeadParams::zeros(1, 1, 1);
        p.w1[0] = 1.0;
        p.w2[0] = 1.0;
        assert!(p.forward(&[50.0]).unwrap().as_slice()[0] > 0.999_999);
        p.w2[0] = -1.0;
        assert!(p.forward(&[50.0]).unwrap().as_slice()[0] < -0.999_999);
    }

    #[test]
    fn forward_is_row_equivariant() {
        let p = HashHeadParams::init(3, 6, 4, 11).unwrap();
        let x = random_input(5, 12);
        let z = p.forward(&x).unwrap();
        let order = [2usize, 0, 3, 1];
        let xp: Vec<f32> = order.iter().flat_map(|&i| x[i * 3..i * 3 + 3].to_vec()).collect();
        let zp = p.forward(&xp).unwrap();
        for (r, &i) in order.iter().enumerate() {
            assert_eq!(zp.row(r), z.row(i));
        }
    }

    #[test]
    fn backward_zero_upstream() {
        let p = HashHeadParams::init(5, 4, 3, 1).unwrap();
        let g = p.backward(&random_input(3, 10), &[0.0; 6]).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
        assert!(p.backward(&random_input(3, 10), &[0.0; 5]).is_err());
    }

    #[test]
    fn b2_gradient_is_column_sum() {
        let p = HashHeadParams::init(5, 4, 3, 9).unwrap();
        let x = random_input(4, 10);
        let up = [0.3, -0.1, 0.7, 1.0, 0.2, -0.5];
        let z = p.forward(&x).unwrap();
        let g = p.backward(&x, &up).unwrap();
        for k in 0..3 {
            let want: f64 = (0..2)
                .map(|b| up[b * 3 + k] * (1.0 - z.row(b)[k].powi(2)))
                .sum();
            assert!((g.b2[k] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..10u64 {
            let mut p = HashHeadParams::init(5, 4, 3, seed).unwrap();
            // nonzero biases exercise the bias paths
            for (i, b) in p.b1.iter_mut().enumerate() {
                *b = 0.1 * (i as f32 - 1.5);
            }
            let x = random_input(100 + seed, 10);
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let c: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = p.backward(&x, &c).unwrap();
            for t in 0..4 {
                let mut fd = Vec::new();
                for idx in 0..p.tensors()[t].len() {
                    let orig = p.tensors()[t][idx];
                    let plus = (orig as f64 + 1e-4) as f32;
                    let minus = (orig as f64 - 1e-4) as f32;
                    p.tensors_mut()[t][idx] = plus;
                    let lp = probe_loss(&p, &x, &c);
                    p.tensors_mut()[t][idx] = minus;
                    let lm = probe_loss(&p, &x, &c);
                    p.tensors_mut()[t][idx] = orig;
                    fd.push((lp - lm) / (plus as f64 - minus as f64));
                }
                let an = g.tensors()[t];
                let diff: f64 = an.iter().zip(&fd).map(|(a, f)| (a - f).powi(2)).sum::<f64>().sqrt();
                let scale: f64 = an.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
                assert!(diff / scale <= 1e-4, "seed {seed} tensor {t}: rel err {}", diff / scale);
            }
        }
    }

    #[test]
    fn adam_zero_grad_keeps_params() {
        let mut p = HashHeadParams::init(3, 4, 2, 0).unwrap();
        let orig = p.clone();
        let mut st = AdamState::new(&p);
        let g = Gradients {
            w1: vec![0.0; 12],
            b1: vec![0.0; 4],
            w2: vec![0.0; 8],
            b2: vec![0.0; 2],
        };
        adam_step(&mut p, &g, &mut st, 1e-3).unwrap();
        assert_eq!(p, orig);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_constant_gradient_moves_by_eta() {
        let mut p = HashHeadParams::zeros(1, 1, 1);
        let mut st = AdamState::new(&p);
        let g = Gradients {
            w1: vec![2.5],
            b1: vec![-0.01],
            w2: vec![1e3],
            b2: vec![0.0],
        };
        let eta = 1e-3;
        let mut prev = p.clone();
        for _ in 0..200 {
            adam_step(&mut p, &g, &mut st, eta).unwrap();
            let moves = [
                p.w1[0] as f64 - prev.w1[0] as f64,
                p.b1[0] as f64 - prev.b1[0] as f64,
                p.w2[0] as f64 - prev.w2[0] as f64,
            ];
            prev = p.clone();
            assert!((moves[0] + eta).abs() < 1e-5);
            assert!((moves[1] - eta).abs() < 1e-5);
            assert!((moves[2] + eta).abs() < 1e-5);
        }
        let mut q = HashHeadParams::zeros(1, 1, 1);
        let mut st2 = AdamState::new(&q);
        for _ in 0..200 {
            adam_step(&mut q, &g, &mut st2, eta).unwrap();
        }
        assert_eq!(p, q);
        assert_eq!(st, st2);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut p = HashHeadParams::init(3, 5, 2, 4).unwrap();
        let mut st = AdamState::new(&p);
        let x = random_input(1, 6);
        let g = p.backward(&x, &[1.0, -1.0, 0.5, 0.5]).unwrap();
        adam_step(&mut p, &g, &mut st, 1e-2).unwrap();
        let bytes = checkpoint_bytes(&p, &st);
        let (p2, st2) = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(p2, p);
        assert_eq!(st2, st);
        assert!(checkpoint_from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
