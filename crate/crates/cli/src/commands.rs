use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use serde_json::json;

use gcl_core::embed::{Descriptor, EmbeddingModel};
use gcl_core::eval::{
    localized_fraction, recall_at_k, results_average_precision, threshold_sweep, EvalReport,
    GroundTruth, LocalizationThresholds, PositiveCriterion, Positives, SweepAxis,
};
use gcl_core::geom2d::{pairwise_similarity_matrix, FovParams, OverlapDefinition};
use gcl_core::geom3d::fov3d_matrix;
use gcl_core::gradcheck::{self, GradcheckConfig};
use gcl_core::io;
use gcl_core::mining::{BatchStrategy, GradedPairSet};
use gcl_core::retrieval::RetrievalIndex;
use gcl_core::synth::{city2d, cloud3d, City2dConfig, Cloud3dConfig};
use gcl_core::train::{train_with_callback, FeatureStore, LossKind, TrainConfig};
use gcl_core::Error;

use crate::{
    Annotate2dArgs, Annotate3dArgs, EvalArgs, GradcheckArgs, Outcome, RetrieveArgs, SynthArgs,
    TrainArgs,
};

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidInput(msg.into()).into()
}

fn read<T>(what: &str, path: &Path, f: impl FnOnce(&Path) -> gcl_core::Result<T>) -> Result<T> {
    f(path).with_context(|| format!("reading {what} {}", path.display()))
}

pub fn parse_mode(s: &str) -> Result<OverlapDefinition> {
    match s.to_ascii_lowercase().as_str() {
        "ioa" => Ok(OverlapDefinition::IntersectionOverArea),
        "iou" => Ok(OverlapDefinition::IntersectionOverUnion),
        other => Err(invalid(format!(
            "unknown overlap mode '{other}' (expected ioa or iou)"
        ))),
    }
}

pub fn annotate_2d(a: &Annotate2dArgs) -> Result<Outcome> {
    let params = FovParams::new(a.theta, a.radius)?;
    let def = parse_mode(&a.mode)?;
    let (queries, maps) = match (&a.poses, &a.queries, &a.maps) {
        (Some(p), None, None) => {
            let poses = read("poses", p, io::read_poses_2d)?;
            (poses.clone(), poses)
        }
        (None, Some(q), Some(m)) => (
            read("query poses", q, io::read_poses_2d)?,
            read("map poses", m, io::read_poses_2d)?,
        ),
        _ => {
            return Err(invalid(
                "give either one pose file or both --queries and --maps",
            ))
        }
    };
    let pairs = pairwise_similarity_matrix(&queries, &maps, &params, def)?;
    info!(
        "{} x {} poses, {} pairs with psi > 0",
        queries.len(),
        maps.len(),
        pairs.stored_len()
    );
    io::write_pairs(&a.out, &pairs)?;
    Ok(Outcome::Success)
}

pub fn annotate_3d(a: &Annotate3dArgs) -> Result<Outcome> {
    let queries = read("poses", &a.poses, io::read_poses_6dof)?;
    let maps = match &a.maps {
        Some(m) => read("map poses", m, io::read_poses_6dof)?,
        None => queries.clone(),
    };
    let cloud = read("point cloud", &a.cloud, io::read_cloud)?;
    let intr = read("intrinsics", &a.intrinsics, io::read_intrinsics)?;
    let pairs = fov3d_matrix(&cloud, &queries, &maps, &intr)?;
    info!("{} pairs with psi > 0", pairs.stored_len());
    io::write_pairs(&a.out, &pairs)?;
    Ok(Outcome::Success)
}

pub fn parse_loss(s: &str) -> Result<LossKind> {
    Ok(s.parse::<LossKind>()?)
}

pub fn parse_strategy(s: &str) -> Result<BatchStrategy> {
    Ok(s.parse::<BatchStrategy>()?)
}

pub fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let kind = parse_loss(&a.loss)?;
    let cfg = TrainConfig {
        loss_kind: kind,
        initial_lr: a.lr.unwrap_or(kind.default_lr()),
        lr_decay_factor: a.lr_decay,
        decay_every_pairs: a.decay_every,
        batch_size: a.batch_size,
        margin_tau: a.margin,
        epochs: a.epochs,
        seed: a.seed,
        strategy: parse_strategy(&a.strategy)?,
        ..TrainConfig::new(kind)
    };
    cfg.validate()?;
    Ok(cfg)
}

/// The untrained model `train` starts from.
pub fn initial_model(a: &TrainArgs, input_dim: usize) -> Result<EmbeddingModel> {
    if a.layers.is_empty() || a.layers.len() > 3 {
        return Err(invalid("--layers takes 1 to 3 sizes"));
    }
    let mut dims = vec![input_dim];
    dims.extend(&a.layers);
    Ok(EmbeddingModel::new(&dims, !a.no_normalize, a.seed)?)
}

fn checkpoint_path(out: &Path, batch: usize) -> PathBuf {
    out.with_extension(format!("b{batch:06}.gsim"))
}

pub fn train(a: &TrainArgs) -> Result<Outcome> {
    let cfg = train_config(a)?;
    let pairs = GradedPairSet::from_pairs(read("pairs", &a.pairs, io::read_pairs)?)?;
    let features = read("features", &a.features, io::read_descriptors)?;
    let model = initial_model(a, features.dim())?;
    eprintln!(
        "loss={:?} strategy={:?} tau={} batch={} lr={} decay={}x/{} pairs epochs={} seed={}",
        cfg.loss_kind,
        cfg.strategy,
        cfg.margin_tau,
        cfg.batch_size,
        cfg.initial_lr,
        cfg.lr_decay_factor,
        cfg.decay_every_pairs,
        cfg.epochs,
        cfg.seed
    );
    let metadata = |pairs_seen: u64| {
        json!({
            "seed": cfg.seed,
            "loss": format!("{:?}", cfg.loss_kind),
            "strategy": format!("{:?}", cfg.strategy),
            "initial_lr": cfg.initial_lr,
            "lr_decay_factor": cfg.lr_decay_factor,
            "decay_every_pairs": cfg.decay_every_pairs,
            "batch_size": cfg.batch_size,
            "margin_tau": cfg.margin_tau,
            "epochs": cfg.epochs,
            "dims": model.dims(),
            "output_normalize": model.output_normalize,
            "pairs_seen": pairs_seen,
        })
    };
    let every = a.checkpoint_every.unwrap_or(0);
    let report = train_with_callback(model.clone(), &pairs, &features, &cfg, |rec, m| {
        if every > 0 && (rec.batch + 1) % every == 0 {
            io::write_model(
                &checkpoint_path(&a.out, rec.batch + 1),
                m,
                &metadata(rec.pairs_seen),
            )?;
        }
        Ok(())
    })?;
    if let (Some(first), Some(last)) = (report.trace.first(), report.trace.last()) {
        info!(
            "{} batches, {} pairs, loss {:.5} -> {:.5}",
            report.trace.len(),
            report.pairs_seen,
            first.loss,
            last.loss
        );
    }
    io::write_model(&a.out, &report.model, &metadata(report.pairs_seen))?;
    let trace = a
        .trace
        .clone()
        .unwrap_or_else(|| a.out.with_extension("trace.csv"));
    io::write_trace(&trace, &report.trace)?;
    Ok(Outcome::Success)
}

/// Embeds every row of a feature store.
pub fn embed_store(model: &EmbeddingModel, store: &FeatureStore) -> Result<Vec<Descriptor>> {
    let mut out = Vec::with_capacity(store.len());
    for (id, row) in store.rows() {
        let e = model.forward(row)?;
        if e.degenerate {
            warn!("'{id}' embeds to the zero vector");
        }
        out.push(e.descriptor);
    }
    Ok(out)
}

pub fn retrieve(a: &RetrieveArgs) -> Result<Outcome> {
    let model = read("model", &a.model, io::read_model)?;
    let maps = read("map features", &a.map_features, io::read_descriptors)?;
    let queries = read("query features", &a.query_features, io::read_descriptors)?;
    let map_desc = embed_store(&model, &maps)?;
    let query_desc = embed_store(&model, &queries)?;
    let mut index = RetrievalIndex::new(maps.ids().to_vec(), &map_desc)?;
    if let Some(dims) = a.whiten {
        let t = index.fit_whitening(dims, !a.no_renormalize)?;
        if let Some(p) = &a.whiten_out {
            io::write_whitening(p, t)?;
        }
    }
    let qs: Vec<(String, Descriptor)> = queries.ids().iter().cloned().zip(query_desc).collect();
    let results = index.search_many(&qs, a.k)?;
    io::write_results(&a.out, &results)?;
    Ok(Outcome::Success)
}

pub fn parse_tiers(tiers: &[String]) -> Result<LocalizationThresholds> {
    let mut pairs = Vec::with_capacity(tiers.len());
    for t in tiers {
        let (m, d) = t
            .split_once(':')
            .ok_or_else(|| invalid(format!("tier '{t}' is not meters:degrees")))?;
        let m: f64 = m
            .trim()
            .parse()
            .map_err(|_| invalid(format!("bad tier distance '{m}'")))?;
        let d: f64 = d
            .trim()
            .parse()
            .map_err(|_| invalid(format!("bad tier angle '{d}'")))?;
        pairs.push((m, d));
    }
    let t = LocalizationThresholds::from_pairs(&pairs);
    t.validate()?;
    Ok(t)
}

fn pose_ground_truth(a: &EvalArgs) -> Result<Option<GroundTruth>> {
    let (q, m) = match (&a.query_poses, &a.map_poses) {
        (Some(q), Some(m)) => (q, m),
        (None, None) => return Ok(None),
        _ => return Err(invalid("--query-poses and --map-poses go together")),
    };
    let gt = match a.pose_kind.as_str() {
        "2d" => GroundTruth::planar(
            read("query poses", q, io::read_poses_2d)?,
            read("map poses", m, io::read_poses_2d)?,
        )?,
        "6dof" => GroundTruth::spatial(
            read("query poses", q, io::read_poses_6dof)?,
            read("map poses", m, io::read_poses_6dof)?,
        )?,
        other => {
            return Err(invalid(format!(
                "unknown pose kind '{other}' (expected 2d or 6dof)"
            )))
        }
    };
    Ok(Some(gt))
}

/// Graded ground truth over every id in the pair file or the results, so a
/// query whose pairs were all zero (and elided) still has ground truth.
pub fn graded_ground_truth(
    path: &Path,
    results: &[gcl_core::retrieval::QueryResult],
) -> Result<GroundTruth> {
    let pairs = read("pairs", path, io::read_pairs)?;
    let mut qids: BTreeSet<String> = pairs.iter().map(|p| p.query_id.clone()).collect();
    let mut mids: BTreeSet<String> = pairs.iter().map(|p| p.map_id.clone()).collect();
    for r in results {
        qids.insert(r.query_id.clone());
        mids.extend(r.ranked.ids().map(str::to_string));
    }
    let mut set = GradedPairSet::with_domain(qids, mids)?;
    for p in &pairs {
        set.insert(&p.query_id, &p.map_id, p.psi)?;
    }
    Ok(GroundTruth::Graded(set))
}

pub fn eval(a: &EvalArgs) -> Result<Outcome> {
    let results = read("results", &a.results, io::read_results)?;
    let poses = pose_ground_truth(a)?;
    let graded = match &a.pairs {
        Some(p) => Some(graded_ground_truth(p, &results)?),
        None => None,
    };
    let (criterion, gt) = match a.criterion.as_str() {
        "geo" => (
            PositiveCriterion::Geo {
                max_dist_m: a.max_dist,
                max_angle_deg: a.max_angle,
            },
            poses
                .as_ref()
                .ok_or_else(|| invalid("the geo criterion needs --query-poses and --map-poses"))?,
        ),
        "psi" => (
            PositiveCriterion::Psi { min_psi: a.min_psi },
            graded
                .as_ref()
                .ok_or_else(|| invalid("the psi criterion needs --pairs"))?,
        ),
        other => {
            return Err(invalid(format!(
                "unknown criterion '{other}' (expected geo or psi)"
            )))
        }
    };
    let positives = Positives::new(gt, &criterion)?;
    let mut report = EvalReport {
        recall: Some(recall_at_k(&results, &positives, &a.ks)?),
        ..EvalReport::default()
    };
    match results_average_precision(&results, &positives) {
        Ok(ap) => report.average_precision = Some(ap),
        Err(Error::Degenerate(msg)) => warn!("average precision skipped: {msg}"),
        Err(e) => return Err(e.into()),
    }
    if let Some(p) = &poses {
        let tiers = parse_tiers(&a.tiers)?;
        let fr = localized_fraction(&results, p, &tiers)?;
        report.localized = tiers.tiers.into_iter().zip(fr).collect();
    }
    if let (Some(axis), Some(grid)) = (&a.sweep, &a.grid) {
        let axis: SweepAxis = axis.parse()?;
        let sweep_gt = match axis {
            SweepAxis::Psi => graded
                .as_ref()
                .ok_or_else(|| invalid("a psi sweep needs --pairs"))?,
            SweepAxis::DistanceM => poses
                .as_ref()
                .ok_or_else(|| invalid("a distance sweep needs poses"))?,
        };
        report.sweep = threshold_sweep(&results, sweep_gt, axis, grid)?;
    }
    let text = report.to_key_values();
    match &a.out {
        Some(out) => {
            io::atomic_write(out, text.as_bytes())?;
            if !report.sweep.is_empty() {
                let p = a
                    .sweep_out
                    .clone()
                    .unwrap_or_else(|| out.with_extension("sweep.csv"));
                io::write_sweep(&p, &report.sweep)?;
            }
        }
        None => {
            print!("{text}");
            match &a.sweep_out {
                Some(p) => io::write_sweep(p, &report.sweep)?,
                None if !report.sweep.is_empty() => {
                    println!("threshold,recall");
                    for (t, r) in &report.sweep {
                        println!("{t},{r:.6}");
                    }
                }
                None => {}
            }
        }
    }
    Ok(Outcome::Success)
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<Outcome> {
    let cfg = GradcheckConfig {
        dims: a.dims.clone(),
        trials: a.trials,
        seed: a.seed,
        ..GradcheckConfig::default()
    };
    let rep = gradcheck::run(&cfg)?;
    if rep.is_vacuous() {
        warn!("no trials requested; nothing was checked");
    }
    for (name, s) in [("loss", &rep.loss_level), ("model", &rep.model_level)] {
        println!(
            "{name}: trials={} checks={} failures={} max_rel_error={:.3e}",
            s.trials, s.checks, s.failures, s.max_rel_error
        );
    }
    println!(
        "{} max_rel_error={:.3e} tolerance={:.0e}",
        if rep.passed() { "PASS" } else { "FAIL" },
        rep.max_rel_error(),
        cfg.tolerance
    );
    Ok(if rep.passed() {
        Outcome::Success
    } else {
        Outcome::CheckFailed
    })
}

pub fn synth(a: &SynthArgs) -> Result<Outcome> {
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let dir = &a.out_dir;
    match a.scenario.as_str() {
        "city2d" => {
            let c = city2d(&City2dConfig {
                n_map: a.n,
                n_query: a.queries,
                seed: a.seed,
                ..City2dConfig::default()
            })?;
            io::write_poses_2d(&dir.join("map_poses.csv"), &c.map_poses)?;
            io::write_descriptors(&dir.join("map_features.gdsc"), &c.map_features)?;
            if a.queries > 0 {
                io::write_poses_2d(&dir.join("query_poses.csv"), &c.query_poses)?;
                io::write_descriptors(&dir.join("query_features.gdsc"), &c.query_features)?;
            }
        }
        "cloud3d" => {
            let c = cloud3d(&Cloud3dConfig {
                n_poses: a.n,
                n_points: a.points,
                seed: a.seed,
                ..Cloud3dConfig::default()
            })?;
            io::write_poses_6dof(&dir.join("poses.csv"), &c.poses)?;
            io::write_cloud_xyz(&dir.join("cloud.xyz"), &c.cloud)?;
            io::write_intrinsics(&dir.join("intrinsics.txt"), &c.intrinsics)?;
        }
        other => {
            return Err(invalid(format!(
                "unknown scenario '{other}' (expected city2d or cloud3d)"
            )))
        }
    }
    Ok(Outcome::Success)
}
