//! Retrieval and localization metrics.
//!
//! Conventions:
//! - queries with no positive anywhere in the map are left out of recall;
//! - AP ranks positives after negatives at equal distance;
//! - a query is localized by inheriting the pose of its top-1 match.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom2d::{heading_difference, CameraPose2D};
use crate::geom3d::{rotation_angle_deg, Pose6DOF};
use crate::mining::GradedPairSet;
use crate::retrieval::QueryResult;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PositiveCriterion {
    /// Within `max_dist_m` and `max_angle_deg` of the query (both inclusive).
    Geo { max_dist_m: f64, max_angle_deg: f64 },
    /// `psi` strictly above `min_psi`.
    Psi { min_psi: f64 },
}

impl PositiveCriterion {
    pub const GEO_DEFAULT: PositiveCriterion = PositiveCriterion::Geo {
        max_dist_m: 25.0,
        max_angle_deg: 40.0,
    };
    pub const PSI_DEFAULT: PositiveCriterion = PositiveCriterion::Psi { min_psi: 0.5 };

    pub fn validate(&self) -> Result<()> {
        match *self {
            PositiveCriterion::Geo {
                max_dist_m,
                max_angle_deg,
            } => {
                if !(max_dist_m > 0.0 && max_angle_deg > 0.0) {
                    return Err(Error::invalid("geographic thresholds must be positive"));
                }
            }
            PositiveCriterion::Psi { min_psi } => {
                if !(0.0..1.0).contains(&min_psi) {
                    return Err(Error::invalid(format!(
                        "psi threshold must lie in [0, 1), got {min_psi}"
                    )));
                }
            }
        }
        Ok(())
    }
}

impl Default for PositiveCriterion {
    fn default() -> Self {
        Self::GEO_DEFAULT
    }
}

/// Pose-to-pose errors used by the geographic criterion and localization.
pub trait PoseError {
    fn id(&self) -> &str;
    fn translation_error(&self, other: &Self) -> f64;
    fn rotation_error_deg(&self, other: &Self) -> f64;
}

impl PoseError for CameraPose2D {
    fn id(&self) -> &str {
        &self.id
    }

    fn translation_error(&self, other: &Self) -> f64 {
        (self.t0 - other.t0).hypot(self.t1 - other.t1)
    }

    fn rotation_error_deg(&self, other: &Self) -> f64 {
        heading_difference(self.heading_deg, other.heading_deg)
    }
}

impl PoseError for Pose6DOF {
    fn id(&self) -> &str {
        &self.id
    }

    fn translation_error(&self, other: &Self) -> f64 {
        let [a, b, c] = self.translation;
        let [x, y, z] = other.translation;
        ((a - x).powi(2) + (b - y).powi(2) + (c - z).powi(2)).sqrt()
    }

    fn rotation_error_deg(&self, other: &Self) -> f64 {
        rotation_angle_deg(&self.rotation, &other.rotation)
    }
}

#[derive(Clone, Debug)]
pub struct PoseTable<P> {
    poses: Vec<P>,
    index: HashMap<String, usize>,
}

impl<P: PoseError> PoseTable<P> {
    pub fn new(poses: Vec<P>) -> Result<Self> {
        let mut index = HashMap::with_capacity(poses.len());
        for (i, p) in poses.iter().enumerate() {
            if index.insert(p.id().to_string(), i).is_some() {
                return Err(Error::invalid(format!("duplicate pose id '{}'", p.id())));
            }
        }
        Ok(Self { poses, index })
    }

    pub fn get(&self, id: &str) -> Result<&P> {
        self.index
            .get(id)
            .map(|&i| &self.poses[i])
            .ok_or_else(|| Error::UnknownId(format!("no pose for '{id}'")))
    }

    pub fn poses(&self) -> &[P] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// Query and map poses of one kind.
#[derive(Clone, Debug)]
pub struct PoseGroundTruth<P> {
    pub queries: PoseTable<P>,
    pub maps: PoseTable<P>,
}

impl<P: PoseError> PoseGroundTruth<P> {
    pub fn new(queries: Vec<P>, maps: Vec<P>) -> Result<Self> {
        Ok(Self {
            queries: PoseTable::new(queries)?,
            maps: PoseTable::new(maps)?,
        })
    }
}

#[derive(Clone, Debug)]
pub enum GroundTruth {
    Planar(PoseGroundTruth<CameraPose2D>),
    Spatial(PoseGroundTruth<Pose6DOF>),
    Graded(GradedPairSet),
}

impl GroundTruth {
    pub fn planar(queries: Vec<CameraPose2D>, maps: Vec<CameraPose2D>) -> Result<Self> {
        Ok(GroundTruth::Planar(PoseGroundTruth::new(queries, maps)?))
    }

    pub fn spatial(queries: Vec<Pose6DOF>, maps: Vec<Pose6DOF>) -> Result<Self> {
        Ok(GroundTruth::Spatial(PoseGroundTruth::new(queries, maps)?))
    }
}

/// Positive map ids per query id, precomputed for one criterion.
#[derive(Clone, Debug, Default)]
pub struct Positives {
    sets: HashMap<String, HashSet<String>>,
}

fn pose_positives<P: PoseError>(
    gt: &PoseGroundTruth<P>,
    max_dist: f64,
    max_angle: f64,
) -> Positives {
    let sets = gt
        .queries
        .poses()
        .iter()
        .map(|q| {
            let set = gt
                .maps
                .poses()
                .iter()
                .filter(|m| {
                    q.translation_error(m) <= max_dist && q.rotation_error_deg(m) <= max_angle
                })
                .map(|m| m.id().to_string())
                .collect();
            (q.id().to_string(), set)
        })
        .collect();
    Positives { sets }
}

impl Positives {
    pub fn from_sets(sets: HashMap<String, HashSet<String>>) -> Self {
        Self { sets }
    }

    pub fn new(gt: &GroundTruth, criterion: &PositiveCriterion) -> Result<Self> {
        criterion.validate()?;
        match (gt, *criterion) {
            (
                GroundTruth::Planar(g),
                PositiveCriterion::Geo {
                    max_dist_m,
                    max_angle_deg,
                },
            ) => Ok(pose_positives(g, max_dist_m, max_angle_deg)),
            (
                GroundTruth::Spatial(g),
                PositiveCriterion::Geo {
                    max_dist_m,
                    max_angle_deg,
                },
            ) => Ok(pose_positives(g, max_dist_m, max_angle_deg)),
            (GroundTruth::Graded(pairs), PositiveCriterion::Psi { min_psi }) => {
                Ok(Self::from_graded(pairs, min_psi))
            }
            (GroundTruth::Graded(_), PositiveCriterion::Geo { .. }) => Err(Error::Config(
                "the geographic criterion needs pose ground truth".into(),
            )),
            (_, PositiveCriterion::Psi { .. }) => Err(Error::Config(
                "the psi criterion needs graded-pair ground truth".into(),
            )),
        }
    }

    /// Only distance counts; headings are ignored.
    pub fn within_distance(gt: &GroundTruth, max_dist_m: f64) -> Result<Self> {
        match gt {
            GroundTruth::Planar(g) => Ok(pose_positives(g, max_dist_m, f64::INFINITY)),
            GroundTruth::Spatial(g) => Ok(pose_positives(g, max_dist_m, f64::INFINITY)),
            GroundTruth::Graded(_) => Err(Error::Config(
                "a distance sweep needs pose ground truth".into(),
            )),
        }
    }

    fn from_graded(pairs: &GradedPairSet, min_psi: f64) -> Self {
        let mut sets: HashMap<String, HashSet<String>> = pairs
            .query_ids()
            .iter()
            .map(|q| (q.clone(), HashSet::new()))
            .collect();
        for p in pairs.iter() {
            if p.psi > min_psi {
                sets.get_mut(pairs.query_id(p.query))
                    .expect("query in domain")
                    .insert(pairs.map_id(p.map).to_string());
            }
        }
        Self { sets }
    }

    fn set(&self, query_id: &str) -> Result<&HashSet<String>> {
        self.sets
            .get(query_id)
            .ok_or_else(|| Error::UnknownId(format!("no ground truth for query '{query_id}'")))
    }

    pub fn is_positive(&self, query_id: &str, map_id: &str) -> Result<bool> {
        Ok(self.set(query_id)?.contains(map_id))
    }

    pub fn count(&self, query_id: &str) -> Result<usize> {
        Ok(self.set(query_id)?.len())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    /// `(k, recall@k)` in the order requested.
    pub recalls: Vec<(usize, f64)>,
    pub evaluated: usize,
    /// Queries without any positive in the map.
    pub excluded: usize,
}

impl RecallReport {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.recalls
            .iter()
            .find(|(kk, _)| *kk == k)
            .map(|(_, r)| *r)
    }
}

pub fn recall_at_k(
    results: &[QueryResult],
    positives: &Positives,
    ks: &[usize],
) -> Result<RecallReport> {
    if ks.contains(&0) {
        return Err(Error::invalid("k must be at least 1"));
    }
    let mut hits = vec![0usize; ks.len()];
    let (mut evaluated, mut excluded) = (0, 0);
    for r in results {
        let set = positives.set(&r.query_id)?;
        if set.is_empty() {
            excluded += 1;
            continue;
        }
        evaluated += 1;
        let first = r.ranked.ids().position(|id| set.contains(id));
        for (h, &k) in hits.iter_mut().zip(ks) {
            if first.is_some_and(|rank| rank < k) {
                *h += 1;
            }
        }
    }
    if evaluated == 0 && !results.is_empty() {
        log::warn!("no query has a positive in the map; recall reported as 0");
    }
    let recalls = ks
        .iter()
        .zip(&hits)
        .map(|(&k, &h)| {
            (
                k,
                if evaluated == 0 {
                    0.0
                } else {
                    h as f64 / evaluated as f64
                },
            )
        })
        .collect();
    Ok(RecallReport {
        recalls,
        evaluated,
        excluded,
    })
}

/// Area under the precision-recall curve as `Σ precision@k · Δrecall@k`.
pub fn average_precision(distances: &[f64], labels: &[bool]) -> Result<f64> {
    crate::error::check_dims(distances.len(), labels.len())?;
    if distances.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("distance in average precision".into()));
    }
    let n_pos = labels.iter().filter(|l| **l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::Degenerate(
            "average precision needs both positives and negatives".into(),
        ));
    }
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| {
        distances[a]
            .total_cmp(&distances[b])
            .then(labels[a].cmp(&labels[b]))
    });
    let mut tp = 0usize;
    let mut ap = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
            ap += tp as f64 / (rank + 1) as f64;
        }
    }
    Ok(ap / n_pos as f64)
}

/// AP over every retrieved `(query, map)` pair in `results`.
pub fn results_average_precision(results: &[QueryResult], positives: &Positives) -> Result<f64> {
    let mut distances = Vec::new();
    let mut labels = Vec::new();
    for r in results {
        let set = positives.set(&r.query_id)?;
        for m in &r.ranked.matches {
            distances.push(m.distance);
            labels.push(set.contains(&m.map_id));
        }
    }
    average_precision(&distances, &labels)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationTier {
    pub max_translation_m: f64,
    pub max_rotation_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationThresholds {
    pub tiers: Vec<LocalizationTier>,
}

impl Default for LocalizationThresholds {
    fn default() -> Self {
        Self::from_pairs(&[(0.25, 2.0), (0.5, 5.0), (5.0, 10.0)])
    }
}

impl LocalizationThresholds {
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        Self {
            tiers: pairs
                .iter()
                .map(|&(t, r)| LocalizationTier {
                    max_translation_m: t,
                    max_rotation_deg: r,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tiers.is_empty() {
            return Err(Error::invalid("at least one localization tier is required"));
        }
        for t in &self.tiers {
            if !(t.max_translation_m > 0.0 && t.max_rotation_deg > 0.0) {
                return Err(Error::invalid("localization thresholds must be positive"));
            }
        }
        for w in self.tiers.windows(2) {
            if w[1].max_translation_m < w[0].max_translation_m
                || w[1].max_rotation_deg < w[0].max_rotation_deg
            {
                return Err(Error::invalid("localization tiers must be ascending"));
            }
        }
        Ok(())
    }
}

fn localized_for<P: PoseError>(
    results: &[QueryResult],
    gt: &PoseGroundTruth<P>,
    tiers: &LocalizationThresholds,
) -> Result<Vec<f64>> {
    tiers.validate()?;
    let mut counts = vec![0usize; tiers.tiers.len()];
    for r in results {
        let q = gt.queries.get(&r.query_id)?;
        let Some(top) = r.ranked.top() else { continue };
        let m = gt.maps.get(&top.map_id)?;
        let (te, re) = (q.translation_error(m), q.rotation_error_deg(m));
        for (c, t) in counts.iter_mut().zip(&tiers.tiers) {
            if te <= t.max_translation_m && re <= t.max_rotation_deg {
                *c += 1;
            }
        }
    }
    let n = results.len().max(1) as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Fraction of queries localized within each tier.
pub fn localized_fraction(
    results: &[QueryResult],
    gt: &GroundTruth,
    tiers: &LocalizationThresholds,
) -> Result<Vec<f64>> {
    match gt {
        GroundTruth::Planar(g) => localized_for(results, g, tiers),
        GroundTruth::Spatial(g) => localized_for(results, g, tiers),
        GroundTruth::Graded(_) => Err(Error::Config("localization needs pose ground truth".into())),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    DistanceM,
    Psi,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distance" | "distance_m" => Ok(SweepAxis::DistanceM),
            "psi" => Ok(SweepAxis::Psi),
            other => Err(Error::invalid(format!("unknown sweep axis '{other}'"))),
        }
    }
}

pub const SWEEP_K: usize = 5;

/// `(threshold, recall@5)` with positives redefined at every threshold.
pub fn threshold_sweep(
    results: &[QueryResult],
    gt: &GroundTruth,
    axis: SweepAxis,
    grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if grid.is_empty() {
        return Err(Error::invalid("threshold grid is empty"));
    }
    grid.iter()
        .map(|&t| {
            let positives = match (axis, gt) {
                (SweepAxis::Psi, GroundTruth::Graded(pairs)) => {
                    if !(0.0..=1.0).contains(&t) {
                        return Err(Error::invalid(format!("psi threshold {t} outside [0, 1]")));
                    }
                    Positives::from_graded(pairs, t)
                }
                (SweepAxis::Psi, _) => {
                    return Err(Error::Config(
                        "a psi sweep needs graded-pair ground truth".into(),
                    ))
                }
                (SweepAxis::DistanceM, _) => {
                    if !(t >= 0.0) {
                        return Err(Error::invalid(format!(
                            "distance threshold {t} must be non-negative"
                        )));
                    }
                    Positives::within_distance(gt, t)?
                }
            };
            Ok((
                t,
                recall_at_k(results, &positives, &[SWEEP_K])?.recalls[0].1,
            ))
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall: Option<RecallReport>,
    pub average_precision: Option<f64>,
    /// `(tier, fraction)` per localization tier.
    pub localized: Vec<(LocalizationTier, f64)>,
    pub sweep: Vec<(f64, f64)>,
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v}");
    s.trim_end_matches(".0").to_string()
}

impl EvalReport {
    /// Flat `key=value` lines, one metric per line.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        if let Some(r) = &self.recall {
            for (k, v) in &r.recalls {
                let _ = writeln!(out, "recall@{k}={v:.6}");
            }
            let _ = writeln!(out, "queries_evaluated={}", r.evaluated);
            let _ = writeln!(out, "queries_excluded={}", r.excluded);
        }
        if let Some(ap) = self.average_precision {
            let _ = writeln!(out, "ap={ap:.6}");
        }
        for (t, v) in &self.localized {
            let _ = writeln!(
                out,
                "localized@{}m_{}deg={v:.6}",
                fmt_num(t.max_translation_m),
                fmt_num(t.max_rotation_deg)
            );
        }
        out
    }
}
