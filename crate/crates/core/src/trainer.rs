//! Round-based training: `R` rounds of `T` epochs of mini-batch Adam on the
//! batch objective, each round closed by one adaptive graph refinement.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, LabelSet};
use crate::model::{adam_step, AdamState, HashHeadParams, RelaxedCodes, DEFAULT_HIDDEN};
use crate::objective::{total_loss_and_grad, LossEval, ObjectiveConfig, PairBatch, PicGrad, PicMode};
use crate::simgraph::{
    and_update, build_initial, f_w, positive_pair_stats, AndRoundStats, CodeCosine, FwScore,
    SignedSimilarityMatrix,
};

/// Rows per forward chunk when encoding a whole dataset.
const ENCODE_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Code length `l`.
    pub bits: usize,
    /// Hidden width of the head.
    pub hidden: usize,
    /// Neighbour counts; `None` resolves to `min(500, n_train / 20)`.
    pub k1: Option<usize>,
    pub k2: Option<usize>,
    pub tau: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub rounds: usize,
    pub epochs: usize,
    pub batch: usize,
    pub eta: f64,
    pub seed: u64,
    pub pic_mode: PicMode,
    pub pic_grad: PicGrad,
    pub and_enabled: bool,
    /// OR-symmetrize the initial graph before training.
    pub symmetrize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            bits: 64,
            hidden: DEFAULT_HIDDEN,
            k1: None,
            k2: None,
            tau: 1.0,
            lambda: 10.0,
            gamma: 1.0,
            rounds: 3,
            epochs: 10,
            batch: 50,
            eta: 1e-4,
            seed: 0,
            pic_mode: PicMode::Pic,
            pic_grad: PicGrad::Frozen,
            and_enabled: true,
            symmetrize: false,
        }
    }
}

/// Neighbour count used when none is configured.
pub fn default_k(n_train: usize) -> usize {
    (n_train / 20).clamp(1, 500)
}

impl TrainConfig {
    pub fn resolved_k(&self, n_train: usize) -> (usize, usize) {
        (
            self.k1.unwrap_or_else(|| default_k(n_train)),
            self.k2.unwrap_or_else(|| default_k(n_train)),
        )
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            tau: self.tau,
            lambda: self.lambda,
            mode: self.pic_mode,
            pic_grad: self.pic_grad,
        }
    }

    pub fn validate(&self, n_train: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.bits == 0 || self.bits > crate::retrieval::MAX_BITS {
            return bad(format!("bits = {} outside 1..=4096", self.bits));
        }
        if self.hidden == 0 {
            return bad("hidden width must be positive".into());
        }
        if self.rounds == 0 {
            return bad("rounds must be >= 1".into());
        }
        if self.batch < 2 {
            return bad(format!("batch = {} must be >= 2", self.batch));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau = {} must be positive", self.tau));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda = {} must be >= 0", self.lambda));
        }
        if !self.gamma.is_finite() {
            return bad(format!("gamma = {} must be finite", self.gamma));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta = {} must be positive", self.eta));
        }
        let (k1, k2) = self.resolved_k(n_train);
        for (name, k) in [("k1", k1), ("k2", k2)] {
            if k == 0 || k >= n_train {
                return bad(format!("{name} = {k} needs 1 <= {name} < n_train = {n_train}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLoss {
    pub round: usize,
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    /// Refinement statistics. With refinement disabled, `mu`, `sigma` and
    /// `m` are still measured but nothing flips.
    pub stats: AndRoundStats,
    pub f_w: Option<FwScore>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochLoss>,
    pub rounds: Vec<RoundRecord>,
    pub initial_n_plus: usize,
    pub initial_f_w: Option<FwScore>,
    /// Unordered pairs where the initial graph disagrees with its transpose.
    pub initial_asymmetric_pairs: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: HashHeadParams,
    pub adam: AdamState,
    pub initial_graph: SignedSimilarityMatrix,
    pub graph: SignedSimilarityMatrix,
    pub report: TrainReport,
}

/// Everything the objective saw for one mini-batch.
pub struct BatchTrace<'a> {
    pub round: usize,
    pub epoch: usize,
    pub batch: usize,
    pub pair_batch: &'a PairBatch,
    pub eval: &'a LossEval,
}

/// Builds the initial graph for `feats` under `cfg`.
pub fn initial_graph(feats: &FeatureMatrix, cfg: &TrainConfig) -> Result<SignedSimilarityMatrix> {
    let (k1, k2) = cfg.resolved_k(feats.n());
    Ok(build_initial(feats, k1, k2)?.combined)
}

/// Relaxed codes for every row of `feats`, encoded in parallel chunks.
pub fn encode(params: &HashHeadParams, feats: &FeatureMatrix) -> Result<RelaxedCodes> {
    if feats.d() != params.d() {
        return Err(Error::Shape(format!(
            "features have width {}, head expects {}",
            feats.d(),
            params.d()
        )));
    }
    let chunks: Vec<Vec<f64>> = feats
        .as_slice()
        .par_chunks(ENCODE_CHUNK * feats.d())
        .map(|x| params.forward(x).map(RelaxedCodes::into_vec))
        .collect::<Result<_>>()?;
    RelaxedCodes::new(feats.n(), params.l(), chunks.concat())
}

/// Batch order for `(seed, round, epoch)`; nothing else feeds the shuffle.
pub fn epoch_order(n: usize, seed: u64, round: usize, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((round as u64) << 32) | epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

pub fn train(feats: &FeatureMatrix, labels: Option<&LabelSet>, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate(feats.n())?;
    let w0 = initial_graph(feats, cfg)?;
    train_from_graph(feats, labels, cfg, w0, |_| {})
}

/// Runs the schedule from a prebuilt initial graph. `labels` are only used
/// to score graph quality; they never influence training. `observe` sees
/// every batch evaluation.
///
/// With `epochs = 0` nothing is trained and the graph is left untouched.
pub fn train_from_graph<F>(
    feats: &FeatureMatrix,
    labels: Option<&LabelSet>,
    cfg: &TrainConfig,
    w0: SignedSimilarityMatrix,
    mut observe: F,
) -> Result<TrainOutput>
where
    F: FnMut(&BatchTrace<'_>),
{
    let n = feats.n();
    cfg.validate(n)?;
    if w0.n() != n {
        return Err(Error::Shape(format!("graph has {} rows for {n} samples", w0.n())));
    }
    if let Some(l) = labels {
        if l.n() != n {
            return Err(Error::Shape(format!("{} label rows for {n} samples", l.n())));
        }
    }
    let score = |w: &SignedSimilarityMatrix| labels.map(|l| f_w(w, l)).transpose();

    let initial_asymmetric_pairs = w0.asymmetric_pairs();
    let w0 = if cfg.symmetrize { w0.symmetrized_or() } else { w0 };
    let mut report = TrainReport {
        epochs: Vec::new(),
        rounds: Vec::new(),
        initial_n_plus: w0.n_plus(),
        initial_f_w: score(&w0)?,
        initial_asymmetric_pairs,
    };

    let mut params = HashHeadParams::init(feats.d(), cfg.hidden, cfg.bits, cfg.seed)?;
    let mut adam = AdamState::new(&params);
    let mut w = w0.clone();
    if cfg.epochs == 0 {
        return Ok(TrainOutput {
            params,
            adam,
            initial_graph: w0,
            graph: w,
            report,
        });
    }

    let obj = cfg.objective();
    let d = feats.d();
    let mut x = Vec::with_capacity(cfg.batch * d);
    for round in 1..=cfg.rounds {
        for epoch in 1..=cfg.epochs {
            let order = epoch_order(n, cfg.seed, round, epoch);
            let mut total = 0.0;
            let mut batches = 0usize;
            for (bi, ids) in order.chunks(cfg.batch).enumerate() {
                x.clear();
                for &i in ids {
                    x.extend_from_slice(feats.row(i));
                }
                let pass = params.forward_pass(&x)?;
                let pb = PairBatch::new(ids.to_vec(), pass.codes.clone(), w.gather(ids))?;
                let eval = total_loss_and_grad(&pb, &obj)?;
                if !eval.loss.is_finite() {
                    return Err(Error::NonFinite {
                        value: eval.loss,
                        round,
                        epoch,
                        batch: bi,
                    });
                }
                observe(&BatchTrace {
                    round,
                    epoch,
                    batch: bi,
                    pair_batch: &pb,
                    eval: &eval,
                });
                let grads = params.backward_from(&pass, &x, &eval.grad)?;
                adam_step(&mut params, &grads, &mut adam, cfg.eta)?;
                total += eval.loss;
                batches += 1;
            }
            if !params.is_finite() {
                return Err(Error::NonFinite {
                    value: f64::NAN,
                    round,
                    epoch,
                    batch: batches,
                });
            }
            report.epochs.push(EpochLoss {
                round,
                epoch,
                loss: total / batches as f64,
            });
        }

        let z = encode(&params, feats)?;
        let sim = CodeCosine::new(n, cfg.bits, z.as_slice())?;
        let stats = if cfg.and_enabled {
            let (next, mut stats) = and_update(&w, &sim, cfg.gamma)?;
            w = next;
            stats.round = round;
            stats
        } else {
            let (mu, sigma) = positive_pair_stats(&w, &sim)?;
            AndRoundStats {
                round,
                mu,
                sigma,
                m: mu + cfg.gamma * sigma,
                n_plus: w.n_plus(),
                flipped: 0,
            }
        };
        report.rounds.push(RoundRecord {
            stats,
            f_w: score(&w)?,
        });
    }

    Ok(TrainOutput {
        params,
        adam,
        initial_graph: w0,
        graph: w,
        report,
    })
}

/// One cell of the ablation grid.
#[derive(Clone, Debug)]
pub struct AblationCell {
    pub pic_mode: PicMode,
    pub and_enabled: bool,
    pub output: TrainOutput,
}

/// Trains every `(pic_mode, and_enabled)` combination from the same initial
/// graph and seed.
pub fn ablation_grid(
    feats: &FeatureMatrix,
    labels: Option<&LabelSet>,
    base: &TrainConfig,
    modes: &[PicMode],
    and_settings: &[bool],
) -> Result<Vec<AblationCell>> {
    base.validate(feats.n())?;
    let w0 = initial_graph(feats, base)?;
    let mut cells = Vec::with_capacity(modes.len() * and_settings.len());
    for &pic_mode in modes {
        for &and_enabled in and_settings {
            let cfg = TrainConfig {
                pic_mode,
                and_enabled,
                ..base.clone()
            };
            let output = train_from_graph(feats, labels, &cfg, w0.clone(), |_| {})?;
            cells.push(AblationCell {
                pic_mode,
                and_enabled,
                output,
            });
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::pairwise_cosine;
    use crate::synth::{generate, SynthConfig};

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            bits: 8,
            hidden: 32,
            k1: Some(5),
            k2: Some(5),
            rounds: 2,
            epochs: 3,
            batch: 16,
            eta: 1e-3,
            seed: 5,
            ..Default::default()
        }
    }

    fn data() -> crate::synth::SynthData {
        generate(&SynthConfig {
            clusters: 3,
            per_cluster: 20,
            d: 8,
            spread: 0.2,
            seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn zero_epochs_is_a_noop() {
        let s = data();
        let cfg = TrainConfig { rounds: 1, epochs: 0, ..small_cfg() };
        let out = train(&s.features, None, &cfg).unwrap();
        assert_eq!(out.params, HashHeadParams::init(8, 32, 8, 5).unwrap());
        assert_eq!(out.graph, initial_graph(&s.features, &cfg).unwrap());
        assert!(out.report.epochs.is_empty());
    }

    #[test]
    fn reruns_are_identical() {
        let s = data();
        let a = train(&s.features, Some(&s.labels), &small_cfg()).unwrap();
        let b = train(&s.features, Some(&s.labels), &small_cfg()).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.params, b.params);
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.report.epochs.len(), 6);
        assert_eq!(a.report.rounds.len(), 2);
    }

    #[test]
    fn shuffle_depends_only_on_seed_round_epoch() {
        assert_eq!(epoch_order(50, 3, 1, 2), epoch_order(50, 3, 1, 2));
        assert_ne!(epoch_order(50, 3, 1, 2), epoch_order(50, 3, 2, 1));
        assert_ne!(epoch_order(50, 3, 1, 2), epoch_order(50, 4, 1, 2));
    }

    #[test]
    fn graph_grows_monotonically() {
        let s = data();
        let cfg = TrainConfig { rounds: 3, gamma: 0.0, ..small_cfg() };
        let out = train(&s.features, None, &cfg).unwrap();
        let mut prev = out.report.initial_n_plus;
        for r in &out.report.rounds {
            assert!(r.stats.n_plus >= prev);
            assert_eq!(r.stats.m, r.stats.mu + cfg.gamma * r.stats.sigma);
            prev = r.stats.n_plus;
        }
        for i in 0..out.graph.n() {
            for &j in out.initial_graph.positives(i) {
                assert!(out.graph.is_positive(i, j as usize));
            }
        }
    }

    #[test]
    fn last_partial_batch_is_trained() {
        let s = data();
        let cfg = TrainConfig { batch: 25, rounds: 1, epochs: 1, ..small_cfg() };
        let w0 = initial_graph(&s.features, &cfg).unwrap();
        let mut sizes = Vec::new();
        train_from_graph(&s.features, None, &cfg, w0, |t| sizes.push(t.pair_batch.size())).unwrap();
        assert_eq!(sizes, vec![25, 25, 10]);
    }

    #[test]
    fn batch_targets_come_from_the_graph() {
        let s = data();
        let cfg = TrainConfig { rounds: 1, epochs: 1, ..small_cfg() };
        let w0 = initial_graph(&s.features, &cfg).unwrap();
        let reference = w0.clone();
        train_from_graph(&s.features, None, &cfg, w0, |t| {
            let ids = &t.pair_batch.ids;
            let b = ids.len();
            for p in 0..b {
                for q in 0..b {
                    assert_eq!(t.pair_batch.w[p * b + q], reference.get(ids[p], ids[q]));
                }
            }
            assert_eq!(t.eval.s, pairwise_cosine(&t.pair_batch.z));
        })
        .unwrap();
    }

    #[test]
    fn invalid_configs() {
        let s = data();
        for cfg in [
            TrainConfig { batch: 1, ..small_cfg() },
            TrainConfig { rounds: 0, ..small_cfg() },
            TrainConfig { k1: Some(60), ..small_cfg() },
            TrainConfig { tau: 0.0, ..small_cfg() },
            TrainConfig { lambda: -1.0, ..small_cfg() },
        ] {
            assert!(train(&s.features, None, &cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn descent_on_all_positive_graph() {
        let s = data();
        let cfg = TrainConfig { lambda: 0.0, ..small_cfg() };
        let feats = &s.features;
        let ids: Vec<usize> = (0..16).collect();
        let x: Vec<f32> = ids.iter().flat_map(|&i| feats.row(i).to_vec()).collect();
        let mut params = HashHeadParams::init(8, 32, 8, 3).unwrap();
        let loss_of = |p: &HashHeadParams| {
            let z = p.forward(&x).unwrap();
            let pb = PairBatch::new(ids.clone(), z, vec![1; 256]).unwrap();
            total_loss_and_grad(&pb, &cfg.objective()).unwrap()
        };
        let before = loss_of(&params);
        let grads = params.backward(&x, &before.grad).unwrap();
        let mut adam = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut adam, 1e-5).unwrap();
        assert!(loss_of(&params).loss < before.loss);
    }

    #[test]
    fn ablation_cells_share_initial_graph() {
        let s = data();
        let cfg = TrainConfig { rounds: 1, epochs: 1, ..small_cfg() };
        let cells = ablation_grid(&s.features, Some(&s.labels), &cfg, &PicMode::ALL, &[false, true]).unwrap();
        assert_eq!(cells.len(), 6);
        for c in &cells {
            assert_eq!(c.output.initial_graph, cells[0].output.initial_graph);
        }
        let plain = train(
            &s.features,
            Some(&s.labels),
            &TrainConfig { pic_mode: PicMode::Pic0, and_enabled: false, ..cfg.clone() },
        )
        .unwrap();
        let cell = cells.iter().find(|c| c.pic_mode == PicMode::Pic0 && !c.and_enabled).unwrap();
        assert_eq!(cell.output.params, plain.params);
        assert_eq!(cell.output.report, plain.report);
    }
}
