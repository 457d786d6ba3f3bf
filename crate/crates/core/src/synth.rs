//! Gaussian clusters around well-separated unit centers.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, LabelSet, SplitSpec};

/// Pairwise center cosine must stay at or below cos(60°).
const MAX_CENTER_COS: f64 = 0.5;
const MAX_ATTEMPTS: usize = 10_000;
/// Decorrelates the split shuffle from the generator stream for equal seeds.
const SPLIT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub clusters: usize,
    pub per_cluster: usize,
    pub d: usize,
    pub spread: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub features: FeatureMatrix,
    pub labels: LabelSet,
    pub centers: Vec<Vec<f64>>,
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Option<Vec<f64>> {
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (norm > 1e-9).then(|| v.into_iter().map(|x| x / norm).collect())
}

/// Samples are laid out cluster by cluster; sample `i` belongs to cluster
/// `i / per_cluster`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    if cfg.clusters < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 clusters, got {}", cfg.clusters)));
    }
    if cfg.per_cluster == 0 || cfg.d == 0 {
        return Err(Error::InvalidArgument("per_cluster and d must be positive".into()));
    }
    if !(cfg.spread >= 0.0 && cfg.spread.is_finite()) {
        return Err(Error::InvalidArgument(format!("spread must be >= 0, got {}", cfg.spread)));
    }
    if cfg.clusters > u16::MAX as usize {
        return Err(Error::InvalidArgument("too many clusters for u16 labels".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(cfg.clusters);
    while centers.len() < cfg.clusters {
        let placed = (0..MAX_ATTEMPTS).find_map(|_| {
            let c = unit_vector(&mut rng, cfg.d)?;
            centers
                .iter()
                .all(|o| o.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() <= MAX_CENTER_COS)
                .then_some(c)
        });
        match placed {
            Some(c) => centers.push(c),
            None => {
                return Err(Error::Infeasible {
                    clusters: cfg.clusters,
                    d: cfg.d,
                })
            }
        }
    }
    let n = cfg.clusters * cfg.per_cluster;
    let mut data = Vec::with_capacity(n * cfg.d);
    let mut ids = Vec::with_capacity(n);
    for (k, c) in centers.iter().enumerate() {
        for _ in 0..cfg.per_cluster {
            for &ck in c {
                let noise: f64 = StandardNormal.sample(&mut rng);
                data.push((ck + cfg.spread * noise) as f32);
            }
            ids.push(k as u16);
        }
    }
    Ok(SynthData {
        features: FeatureMatrix::new(n, cfg.d, data)?,
        labels: LabelSet::from_class_ids(cfg.clusters, &ids)?,
        centers,
    })
}

/// Random hold-out split: `round(query_frac * n)` queries, everything else is
/// both retrieval and train set. Id lists are sorted.
pub fn holdout_split(n: usize, query_frac: f64, seed: u64) -> Result<SplitSpec> {
    if !(0.0..1.0).contains(&query_frac) {
        return Err(Error::InvalidArgument(format!("query fraction {query_frac} outside [0, 1)")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ SPLIT_STREAM));
    let nq = (query_frac * n as f64).round() as usize;
    let mut query_ids = perm[..nq].to_vec();
    let mut retrieval_ids = perm[nq..].to_vec();
    query_ids.sort_unstable();
    retrieval_ids.sort_unstable();
    Ok(SplitSpec {
        query_ids,
        train_ids: retrieval_ids.clone(),
        retrieval_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgraph::{build_low_order, cosine_sim, f_w};

    fn cfg(spread: f64) -> SynthConfig {
        SynthConfig {
            clusters: 3,
            per_cluster: 20,
            d: 8,
            spread,
            seed: 11,
        }
    }

    #[test]
    fn zero_spread_points_are_centers() {
        let s = generate(&cfg(0.0)).unwrap();
        for i in 0..60 {
            let c: Vec<f32> = s.centers[i / 20].iter().map(|&v| v as f32).collect();
            assert_eq!(s.features.row(i), &c[..]);
            let j = (i / 20) * 20;
            assert!((cosine_sim(s.features.row(i), s.features.row(j)).unwrap() - 1.0).abs() < 1e-6);
        }
        for a in 0..3 {
            for b in a + 1..3 {
                let cos: f64 = s.centers[a].iter().zip(&s.centers[b]).map(|(x, y)| x * y).sum();
                assert!(cos <= 0.5);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&cfg(0.1)).unwrap();
        let b = generate(&cfg(0.1)).unwrap();
        assert_eq!(a.features.to_bytes(), b.features.to_bytes());
        assert_eq!(a.labels.to_bytes(), b.labels.to_bytes());
    }

    #[test]
    fn knn_graph_on_tight_clusters_is_pure() {
        let s = generate(&cfg(0.05)).unwrap();
        let w = build_low_order(&s.features, 5).unwrap();
        let score = f_w(&w, &s.labels).unwrap();
        // every neighbour is in-cluster: precision 1, recall (5 + 1) / 20
        assert_eq!(score.precision, 1.0);
        assert!((score.recall - 0.3).abs() < 1e-12);
        assert!((score.f - 2.0 * 0.3 / 1.3).abs() < 1e-12);
    }

    #[test]
    fn infeasible_centers() {
        let c = SynthConfig { clusters: 3, per_cluster: 1, d: 1, spread: 0.0, seed: 0 };
        assert!(matches!(generate(&c), Err(Error::Infeasible { .. })));
        let c = SynthConfig { clusters: 1, ..c };
        assert!(generate(&c).is_err());
    }

    #[test]
    fn holdout_split_is_valid() {
        let s = holdout_split(100, 0.1, 3).unwrap();
        assert_eq!(s.query_ids.len(), 10);
        s.validate(100).unwrap();
        assert_eq!(s, holdout_split(100, 0.1, 3).unwrap());
    }
}
