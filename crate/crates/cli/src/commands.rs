use std::path::Path;

use sahash::features::{load_features, load_labels, load_split, write_features, write_labels, write_split};
use sahash::model::{load_checkpoint, write_checkpoint};
use sahash::retrieval::{
    map_at_n, pr_by_rank, pr_curve, precision_at_n, precision_curve, rank, write_codes, BinaryCodeSet,
};
use sahash::simgraph::{f_w, positive_pair_stats, write_graph, CodeCosine};
use sahash::synth::{generate, holdout_split, SynthConfig};
use sahash::trainer::{ablation_grid, encode, initial_graph, train as run_train, TrainOutput};
use sahash::{FeatureMatrix, FwScore, HashHeadParams, LabelSet, SplitSpec, TrainConfig};
use serde_json::json;

use crate::args::{AblateArgs, ConfigFile, DataArgs, EvalArgs, GraphArgs, HyperOpts, MetricOpts, SynthArgs, TrainArgs};
use crate::output::{ensure_dir, opt, write_json, Csv, Manifest};
use crate::CliError;

/// Largest N on the precision curve; the grid is 1 then every 50.
const PRECISION_CURVE_MAX: usize = 1000;
const PRECISION_CURVE_STEP: usize = 50;

struct Loaded {
    features: FeatureMatrix,
    labels: Option<LabelSet>,
    split: Option<SplitSpec>,
}

impl Loaded {
    fn read(features: &Path, labels: Option<&Path>, split: Option<&Path>) -> Result<Self, CliError> {
        let features = load_features(features)?;
        let labels = labels.map(|p| load_labels(p, features.n())).transpose()?;
        let split = split.map(load_split).transpose()?;
        if let Some(s) = &split {
            s.validate(features.n())?;
        }
        Ok(Self { features, labels, split })
    }

    fn train_ids(&self) -> Vec<usize> {
        match &self.split {
            Some(s) => s.train_ids.clone(),
            None => (0..self.features.n()).collect(),
        }
    }

    /// Training features and labels, renumbered 0.. in split order.
    fn train_subset(&self) -> Result<(FeatureMatrix, Option<LabelSet>), CliError> {
        let ids = self.train_ids();
        let feats = self.features.select(&ids)?;
        let labels = self.labels.as_ref().map(|l| l.select(&ids)).transpose()?;
        Ok((feats, labels))
    }
}

fn config_manifest(m: &mut Manifest, cfg: &TrainConfig, n_train: usize) {
    let (k1, k2) = cfg.resolved_k(n_train);
    m.set("bits", cfg.bits)
        .set("hidden", cfg.hidden)
        .set("k1", k1)
        .set("k2", k2)
        .set("tau", cfg.tau)
        .set("lambda", cfg.lambda)
        .set("gamma", cfg.gamma)
        .set("rounds", cfg.rounds)
        .set("epochs", cfg.epochs)
        .set("batch", cfg.batch)
        .set("eta", cfg.eta)
        .set("seed", cfg.seed)
        .set("pic", cfg.pic_mode.as_str())
        .set("pic_grad", cfg.pic_grad.as_str())
        .set("and", cfg.and_enabled)
        .set("symmetrize", cfg.symmetrize)
        .set("n_train", n_train);
}

fn data_manifest(m: &mut Manifest, data: &DataArgs) {
    m.input("features", Some(&data.features))
        .input("labels", data.labels.as_deref())
        .input("split", data.split.as_deref());
}

fn fw_field(score: Option<FwScore>) -> String {
    opt(score.map(|s| s.f))
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let cfg = SynthConfig {
        clusters: a.clusters,
        per_cluster: a.per_cluster,
        d: a.d,
        spread: a.spread,
        seed: a.seed,
    };
    let mut m = Manifest::new("synth", a.seed);
    m.set("clusters", a.clusters)
        .set("per_cluster", a.per_cluster)
        .set("d", a.d)
        .set("spread", a.spread)
        .set("query_frac", a.query_frac);
    m.write(&a.out_dir)?;

    let data = generate(&cfg)?;
    let split = holdout_split(data.features.n(), a.query_frac, a.seed)?;
    write_features(a.out_dir.join("features.sahf"), &data.features)?;
    write_labels(a.out_dir.join("labels.sahl"), &data.labels)?;
    write_split(a.out_dir.join("split.txt"), &split)?;
    Ok(())
}

pub fn graph(a: &GraphArgs, file: &ConfigFile) -> Result<(), CliError> {
    let cfg = crate::args::resolve(&a.graph, &HyperOpts::default(), None, None, file)?;
    let loaded = Loaded::read(&a.data.features, a.data.labels.as_deref(), a.data.split.as_deref())?;
    let (feats, labels) = loaded.train_subset()?;
    cfg.validate(feats.n())?;
    let mut m = Manifest::new("graph", cfg.seed);
    let (k1, k2) = cfg.resolved_k(feats.n());
    m.set("k1", k1)
        .set("k2", k2)
        .set("gamma", cfg.gamma)
        .set("symmetrize", cfg.symmetrize)
        .set("n_train", feats.n());
    data_manifest(&mut m, &a.data);
    m.write(&a.data.out_dir)?;

    let mut w = initial_graph(&feats, &cfg)?;
    if cfg.symmetrize {
        w = w.symmetrized_or();
    }
    let values: Vec<f64> = feats.as_slice().iter().map(|&v| f64::from(v)).collect();
    let sim = CodeCosine::new(feats.n(), feats.d(), &values)?;
    let (mu, sigma) = positive_pair_stats(&w, &sim)?;
    let score = labels.as_ref().map(|l| f_w(&w, l)).transpose()?;

    let mut csv = Csv::new(&["round", "mu", "sigma", "m", "n_plus", "flipped", "f_w"]);
    csv.row(&[
        "0".into(),
        mu.to_string(),
        sigma.to_string(),
        (mu + cfg.gamma * sigma).to_string(),
        w.n_plus().to_string(),
        "0".into(),
        fw_field(score),
    ]);
    csv.write(&a.data.out_dir.join("graph.csv"))?;
    write_graph(a.data.out_dir.join("graph.sahw"), &w)?;
    Ok(())
}

fn rounds_csv(out: &TrainOutput) -> Csv {
    let r = &out.report;
    let mut csv = Csv::new(&["round", "mu", "sigma", "m", "n_plus", "flipped", "f_w"]);
    // round 0 is the initial graph, before any codes exist
    csv.row(&[
        "0".into(),
        String::new(),
        String::new(),
        String::new(),
        r.initial_n_plus.to_string(),
        "0".into(),
        fw_field(r.initial_f_w),
    ]);
    for rec in &r.rounds {
        let s = &rec.stats;
        csv.row(&[
            s.round.to_string(),
            s.mu.to_string(),
            s.sigma.to_string(),
            s.m.to_string(),
            s.n_plus.to_string(),
            s.flipped.to_string(),
            fw_field(rec.f_w),
        ]);
    }
    csv
}

pub fn train(a: &TrainArgs, file: &ConfigFile) -> Result<(), CliError> {
    let cfg = crate::args::resolve(&a.graph, &a.hyper, a.pic, a.and_update, file)?;
    let loaded = Loaded::read(&a.data.features, a.data.labels.as_deref(), a.data.split.as_deref())?;
    let (feats, labels) = loaded.train_subset()?;
    cfg.validate(feats.n())?;
    let mut m = Manifest::new("train", cfg.seed);
    config_manifest(&mut m, &cfg, feats.n());
    data_manifest(&mut m, &a.data);
    m.write(&a.data.out_dir)?;

    let out = run_train(&feats, labels.as_ref(), &cfg)?;
    let dir = &a.data.out_dir;
    let mut report = Csv::new(&["epoch", "loss"]);
    for (i, e) in out.report.epochs.iter().enumerate() {
        report.row(&[(i + 1).to_string(), e.loss.to_string()]);
    }
    report.write(&dir.join("report.csv"))?;
    rounds_csv(&out).write(&dir.join("rounds.csv"))?;
    write_checkpoint(dir.join("checkpoint.sahc"), &out.params, &out.adam)?;
    write_graph(dir.join("graph.sahw"), &out.graph)?;
    Ok(())
}

struct Evaluation {
    map: f64,
    precision: f64,
    ranked: sahash::RankedLists,
    codes: BinaryCodeSet,
}

fn evaluate(
    params: &HashHeadParams,
    feats: &FeatureMatrix,
    labels: &LabelSet,
    split: &SplitSpec,
    metrics: &MetricOpts,
) -> Result<Evaluation, CliError> {
    if params.d() != feats.d() {
        return Err(CliError::Data(format!(
            "checkpoint expects d = {}, features have d = {}",
            params.d(),
            feats.d()
        )));
    }
    let codes = BinaryCodeSet::binarize(&encode(params, feats)?)?;
    let queries = codes.select(&split.query_ids)?;
    let db = codes.select(&split.retrieval_ids)?;
    let ranked = rank(&queries, &split.query_ids, &db, &split.retrieval_ids)?;
    Ok(Evaluation {
        map: map_at_n(&ranked, labels, metrics.map_n)?,
        precision: precision_at_n(&ranked, labels, metrics.prec_n)?,
        ranked,
        codes,
    })
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let mut m = Manifest::new("eval", 0);
    m.set("map_n", a.metrics.map_n)
        .set("prec_n", a.metrics.prec_n)
        .set("pr_rank", a.pr_rank)
        .input("checkpoint", Some(&a.checkpoint))
        .input("features", Some(&a.features))
        .input("labels", Some(&a.labels))
        .input("split", Some(&a.split));
    m.write(&a.out_dir)?;

    let (params, _) = load_checkpoint(&a.checkpoint)?;
    let loaded = Loaded::read(&a.features, Some(&a.labels), Some(&a.split))?;
    let (Some(labels), Some(split)) = (&loaded.labels, &loaded.split) else {
        unreachable!("both paths were given");
    };
    let ev = evaluate(&params, &loaded.features, labels, split, &a.metrics)?;
    let dir = &a.out_dir;
    write_codes(dir.join("codes.sahb"), &ev.codes)?;

    let curve = pr_curve(&ev.ranked, labels)?;
    let mut pr = Csv::new(&["recall", "precision"]);
    for (r, p) in &curve.points {
        pr.row(&[r.to_string(), p.to_string()]);
    }
    pr.write(&dir.join("pr_curve.csv"))?;

    let db = split.retrieval_ids.len();
    let ns: Vec<usize> = std::iter::once(1)
        .chain((PRECISION_CURVE_STEP..=PRECISION_CURVE_MAX).step_by(PRECISION_CURVE_STEP))
        .filter(|&n| n <= db)
        .collect();
    let mut pc = Csv::new(&["n", "precision"]);
    for (n, p) in precision_curve(&ev.ranked, labels, &ns)? {
        pc.row(&[n.to_string(), p.to_string()]);
    }
    pc.write(&dir.join("precision_curve.csv"))?;

    if let Some(max_rank) = a.pr_rank {
        let mut csv = Csv::new(&["rank", "precision", "recall"]);
        for (k, p, r) in pr_by_rank(&ev.ranked, labels, max_rank)? {
            csv.row(&[k.to_string(), p.to_string(), r.to_string()]);
        }
        csv.write(&dir.join("pr_by_rank.csv"))?;
    }

    let doc = json!({
        "bits": ev.codes.l(),
        "queries": split.query_ids.len(),
        "database": db,
        "map": ev.map,
        "map_n": a.metrics.map_n,
        "precision": ev.precision,
        "precision_n": a.metrics.prec_n,
        "pr_excluded_queries": curve.excluded,
    });
    write_json(&dir.join("metrics.json"), &doc)
}

pub fn ablate(a: &AblateArgs, file: &ConfigFile) -> Result<(), CliError> {
    let cfg = crate::args::resolve(&a.graph, &a.hyper, None, None, file)?;
    let loaded = Loaded::read(&a.features, Some(&a.labels), Some(&a.split))?;
    let (feats, train_labels) = loaded.train_subset()?;
    cfg.validate(feats.n())?;
    let modes: Vec<_> = a.grid.iter().map(|&p| p.into()).collect();
    let ands: Vec<bool> = a.and_grid.iter().map(|s| s.enabled()).collect();

    let mut m = Manifest::new("ablate", cfg.seed);
    config_manifest(&mut m, &cfg, feats.n());
    m.set("grid", modes.iter().map(|p: &sahash::PicMode| p.as_str()).collect::<Vec<_>>())
        .set("and_grid", ands.clone())
        .set("map_n", a.metrics.map_n)
        .set("prec_n", a.metrics.prec_n)
        .input("features", Some(&a.features))
        .input("labels", Some(&a.labels))
        .input("split", Some(&a.split));
    m.write(&a.out_dir)?;
    ensure_dir(&a.out_dir)?;

    let cells = ablation_grid(&feats, train_labels.as_ref(), &cfg, &modes, &ands)?;
    let (Some(labels), Some(split)) = (&loaded.labels, &loaded.split) else {
        unreachable!("both paths were given");
    };
    let mut csv = Csv::new(&["pic", "and", "map", "precision", "f_w_initial", "f_w_final", "n_plus_final"]);
    for cell in &cells {
        let ev = evaluate(&cell.output.params, &loaded.features, labels, split, &a.metrics)?;
        let final_fw = cell.output.report.rounds.last().and_then(|r| r.f_w);
        csv.row(&[
            cell.pic_mode.as_str().into(),
            if cell.and_enabled { "on" } else { "off" }.into(),
            ev.map.to_string(),
            ev.precision.to_string(),
            fw_field(cell.output.report.initial_f_w),
            fw_field(final_fw),
            cell.output.graph.n_plus().to_string(),
        ]);
    }
    csv.write(&a.out_dir.join("ablation.csv"))
}
