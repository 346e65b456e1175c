//! Planar field-of-view sectors and their graded overlap.
//!
//! A camera is reduced to a circular sector: apex at its position, opening
//! `theta` around its compass heading, truncated at `radius`. The similarity
//! of two images is the overlap of their sectors, either intersection over
//! union or intersection over the area of one sector.
//!
//! Headings use the compass convention: 0 degrees points north (+y) and
//! angles grow clockwise. Sector boundaries are approximated by polygons with
//! [`ARC_SEGMENTS`] chords on the arc; sectors wider than 180 degrees are
//! split into two convex halves before clipping.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom3d::Pose6DOF;
use crate::mining::GradedPairSet;
use crate::polygon::{ConvexPolygon, Point};

/// Number of chords used for the arc of each sector polygon.
pub const ARC_SEGMENTS: usize = 720;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose2D {
    pub id: String,
    /// Easting, meters.
    pub t0: f64,
    /// Northing, meters.
    pub t1: f64,
    /// Compass heading in degrees, normalized to `[0, 360)`.
    pub heading_deg: f64,
}

impl CameraPose2D {
    pub fn new(id: impl Into<String>, t0: f64, t1: f64, heading_deg: f64) -> Self {
        Self {
            id: id.into(),
            t0,
            t1,
            heading_deg: normalize_heading(heading_deg),
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.t0, self.t1]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t0.is_finite() && self.t1.is_finite() && self.heading_deg.is_finite()) {
            return Err(Error::invalid(format!(
                "pose '{}' has non-finite fields",
                self.id
            )));
        }
        Ok(())
    }
}

/// Wraps an angle in degrees into `[0, 360)`.
pub fn normalize_heading(deg: f64) -> f64 {
    let h = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if h >= 360.0 {
        0.0
    } else {
        h
    }
}

/// Absolute difference of two headings, in `[0, 180]`.
pub fn heading_difference(a_deg: f64, b_deg: f64) -> f64 {
    let d = normalize_heading(a_deg - b_deg);
    if d > 180.0 {
        360.0 - d
    } else {
        d
    }
}

/// Compass heading (degrees) to a math-convention angle (radians, CCW from +x).
pub fn compass_to_math_rad(heading_deg: f64) -> f64 {
    (90.0 - heading_deg).to_radians()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FovParams {
    pub theta_deg: f64,
    pub radius_m: f64,
}

impl FovParams {
    /// Street-level calibration: positives within 25 m and 40 degrees.
    pub const MSLS: FovParams = FovParams {
        theta_deg: 90.0,
        radius_m: 50.0,
    };

    /// Garden-scale cameras with full 6DOF poses.
    pub const TB_PLACES: FovParams = FovParams {
        theta_deg: 90.0,
        radius_m: 3.5,
    };

    pub fn new(theta_deg: f64, radius_m: f64) -> Result<Self> {
        let p = Self {
            theta_deg,
            radius_m,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta_deg > 0.0 && self.theta_deg <= 360.0) {
            return Err(Error::invalid(format!(
                "theta must lie in (0, 360], got {}",
                self.theta_deg
            )));
        }
        if !(self.radius_m > 0.0 && self.radius_m.is_finite()) {
            return Err(Error::invalid(format!(
                "radius must be positive, got {}",
                self.radius_m
            )));
        }
        Ok(())
    }
}

impl Default for FovParams {
    fn default() -> Self {
        Self::TB_PLACES
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum OverlapDefinition {
    IntersectionOverUnion,
    /// Intersection divided by the area of the first sector. This is the
    /// definition that reproduces the street-level calibration values.
    #[default]
    IntersectionOverArea,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FovSector {
    pub center: [f64; 2],
    pub radius_m: f64,
    pub heading_deg: f64,
    pub theta_deg: f64,
}

impl FovSector {
    pub fn validate(&self) -> Result<()> {
        if !(self.center[0].is_finite()
            && self.center[1].is_finite()
            && self.heading_deg.is_finite())
        {
            return Err(Error::invalid("sector has non-finite center or heading"));
        }
        FovParams {
            theta_deg: self.theta_deg,
            radius_m: self.radius_m,
        }
        .validate()
    }

    /// Exact area of the circular sector.
    pub fn area(&self) -> f64 {
        self.theta_deg / 360.0 * std::f64::consts::PI * self.radius_m * self.radius_m
    }

    /// Area of the polygon approximation: a fan of `ARC_SEGMENTS` triangles.
    pub fn polygon_area(&self) -> f64 {
        let n = ARC_SEGMENTS as f64;
        0.5 * self.radius_m * self.radius_m * n * (self.theta_deg.to_radians() / n).sin()
    }

    /// Exact point-in-sector test (boundary included).
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let r2 = dx * dx + dy * dy;
        if r2 > self.radius_m * self.radius_m {
            return false;
        }
        if r2 == 0.0 {
            return true;
        }
        let bearing = dx.atan2(dy).to_degrees();
        heading_difference(bearing, self.heading_deg) <= 0.5 * self.theta_deg
    }

    /// Convex polygon pieces relative to the sector's own apex, CCW.
    /// Convex pieces centered at the origin. With `segments = None` the arc
    /// is the inscribed chord polygon; with `Some(k)` it is a k-edge polygon
    /// circumscribing the arc, a cheap superset of the inscribed one.
    fn convex_pieces(&self, coarse: Option<usize>) -> Vec<Vec<Point>> {
        let theta = self.theta_deg.to_radians();
        let start = compass_to_math_rad(self.heading_deg) - 0.5 * theta;
        let r = self.radius_m;
        let piece = |from: f64, span: f64, segments: usize| -> Vec<Point> {
            let (n, rr) = match coarse {
                Some(k) => (k, r / (span / (2 * k) as f64).cos()),
                None => (segments, r),
            };
            let mut poly = Vec::with_capacity(n + 2);
            poly.push([0.0, 0.0]);
            for i in 0..=n {
                let a = from + span * i as f64 / n as f64;
                poly.push([rr * a.cos(), rr * a.sin()]);
            }
            poly
        };
        if self.theta_deg <= 180.0 {
            vec![piece(start, theta, ARC_SEGMENTS)]
        } else {
            let half = 0.5 * theta;
            vec![
                piece(start, half, ARC_SEGMENTS / 2),
                piece(start + half, half, ARC_SEGMENTS / 2),
            ]
        }
    }

    fn sort_key(&self) -> [f64; 5] {
        [
            self.center[0],
            self.center[1],
            self.heading_deg,
            self.theta_deg,
            self.radius_m,
        ]
    }
}

/// Builds the planar field of view of a camera.
pub fn sector_from_pose(pose: &CameraPose2D, params: &FovParams) -> Result<FovSector> {
    pose.validate()?;
    params.validate()?;
    Ok(FovSector {
        center: pose.position(),
        radius_m: params.radius_m,
        heading_deg: normalize_heading(pose.heading_deg),
        theta_deg: params.theta_deg,
    })
}

/// Sector with its polygon pieces cached, so all-pairs evaluation builds
/// each polygon only once.
/// Edges of the circumscribing polygon used to reject disjoint pairs early.
const COARSE_SEGMENTS: usize = 4;

struct ShapedSector {
    sector: FovSector,
    pieces: Vec<ConvexPolygon>,
    coarse: Vec<ConvexPolygon>,
}

impl ShapedSector {
    fn new(sector: FovSector) -> Self {
        let shape = |k| {
            sector
                .convex_pieces(k)
                .iter()
                .map(|p| ConvexPolygon::new(p))
                .collect()
        };
        Self {
            sector,
            pieces: shape(None),
            coarse: shape(Some(COARSE_SEGMENTS)),
        }
    }
}

fn intersection_area(a: &ShapedSector, b: &ShapedSector) -> f64 {
    // Evaluate in a fixed argument order so the result is exactly symmetric.
    let (first, second) = if a.sector.sort_key() <= b.sector.sort_key() {
        (a, b)
    } else {
        (b, a)
    };
    let off = [
        second.sector.center[0] - first.sector.center[0],
        second.sector.center[1] - first.sector.center[1],
    ];
    let mut total = 0.0;
    for (pb, cb) in second.pieces.iter().zip(&second.coarse) {
        for (pa, ca) in first.pieces.iter().zip(&first.coarse) {
            if ca.intersect_shifted(cb, off).is_empty() {
                continue;
            }
            total += pa.intersection_area_shifted(pb, off);
        }
    }
    total
}

fn shaped_overlap(a: &ShapedSector, b: &ShapedSector, def: OverlapDefinition) -> f64 {
    if a.sector == b.sector {
        return 1.0;
    }
    let (sa, sb) = (&a.sector, &b.sector);
    let dist = (sb.center[0] - sa.center[0]).hypot(sb.center[1] - sa.center[1]);
    if dist > sa.radius_m + sb.radius_m {
        return 0.0;
    }
    let area_a = sa.polygon_area();
    let area_b = sb.polygon_area();
    let inter = intersection_area(a, b);
    if inter <= 1e-12 * area_a.min(area_b) {
        return 0.0;
    }
    let psi = match def {
        OverlapDefinition::IntersectionOverUnion => inter / (area_a + area_b - inter),
        OverlapDefinition::IntersectionOverArea => inter / area_a,
    };
    psi.clamp(0.0, 1.0)
}

/// Graded overlap of two sectors in `[0, 1]`.
pub fn sector_overlap(a: &FovSector, b: &FovSector, def: OverlapDefinition) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(shaped_overlap(
        &ShapedSector::new(*a),
        &ShapedSector::new(*b),
        def,
    ))
}

/// Similarity of two images from GPS position and compass heading.
pub fn weak_2d_similarity(
    qa: &CameraPose2D,
    qb: &CameraPose2D,
    params: &FovParams,
    def: OverlapDefinition,
) -> Result<f64> {
    let a = sector_from_pose(qa, params)?;
    let b = sector_from_pose(qb, params)?;
    sector_overlap(&a, &b, def)
}

/// Similarity of two images from full 6DOF poses: the horizontal position
/// and the yaw of each pose define its sector.
pub fn strong_2d_similarity(
    pa: &Pose6DOF,
    pb: &Pose6DOF,
    params: &FovParams,
    def: OverlapDefinition,
) -> Result<f64> {
    weak_2d_similarity(&pa.planar_pose()?, &pb.planar_pose()?, params, def)
}

/// All-pairs similarity between a query list and a map list. Pairs with zero
/// overlap are not stored; the returned set reports them as zero.
pub fn pairwise_similarity_matrix(
    queries: &[CameraPose2D],
    maps: &[CameraPose2D],
    params: &FovParams,
    def: OverlapDefinition,
) -> Result<GradedPairSet> {
    if queries.is_empty() || maps.is_empty() {
        return Err(Error::invalid("pose lists must be non-empty"));
    }
    let mut set = GradedPairSet::with_domain(
        queries.iter().map(|p| p.id.clone()),
        maps.iter().map(|p| p.id.clone()),
    )?;
    let shape = |p: &CameraPose2D| sector_from_pose(p, params).map(ShapedSector::new);
    let q_shapes = queries.iter().map(shape).collect::<Result<Vec<_>>>()?;
    let m_shapes = maps.iter().map(shape).collect::<Result<Vec<_>>>()?;

    let reach = 2.0 * params.radius_m;
    let rows: Vec<Vec<(usize, f64)>> = q_shapes
        .par_iter()
        .map(|qs| {
            m_shapes
                .iter()
                .enumerate()
                .filter(|(_, ms)| {
                    let dx = ms.sector.center[0] - qs.sector.center[0];
                    let dy = ms.sector.center[1] - qs.sector.center[1];
                    dx.hypot(dy) <= reach
                })
                .map(|(j, ms)| (j, shaped_overlap(qs, ms, def)))
                .filter(|&(_, psi)| psi > 0.0)
                .collect()
        })
        .collect();

    for (i, row) in rows.into_iter().enumerate() {
        for (j, psi) in row {
            set.insert(&queries[i].id, &maps[j].id, psi)?;
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose(t0: f64, t1: f64, h: f64) -> CameraPose2D {
        CameraPose2D::new("p", t0, t1, h)
    }

    #[test]
    fn sector_fields_from_pose() {
        let s = sector_from_pose(&pose(0.0, 0.0, 0.0), &FovParams::MSLS).unwrap();
        assert_eq!(s.center, [0.0, 0.0]);
        assert_eq!(s.heading_deg, 0.0);
        assert_eq!(s.theta_deg, 90.0);
        assert_eq!(s.radius_m, 50.0);
    }

    #[test]
    fn heading_is_normalized() {
        let raw = CameraPose2D {
            id: "x".into(),
            t0: 5.0,
            t1: -3.0,
            heading_deg: 370.0,
        };
        let s = sector_from_pose(&raw, &FovParams::MSLS).unwrap();
        assert!((s.heading_deg - 10.0).abs() < 1e-12);
        assert!((CameraPose2D::new("y", 0.0, 0.0, -90.0).heading_deg - 270.0).abs() < 1e-12);
        assert!(normalize_heading(-1e-18) < 360.0);
    }

    #[test]
    fn nan_pose_rejected() {
        let mut p = pose(0.0, 0.0, 0.0);
        p.t0 = f64::NAN;
        assert!(matches!(
            sector_from_pose(&p, &FovParams::MSLS),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(FovParams::new(0.0, 10.0).is_err());
        assert!(FovParams::new(361.0, 10.0).is_err());
        assert!(FovParams::new(90.0, 0.0).is_err());
        assert!(FovParams::new(360.0, 1.0).is_ok());
    }

    #[test]
    fn compass_convention() {
        // north is +y, east is +x
        assert!(compass_to_math_rad(0.0).cos().abs() < 1e-15);
        assert!((compass_to_math_rad(0.0).sin() - 1.0).abs() < 1e-15);
        assert!((compass_to_math_rad(90.0).cos() - 1.0).abs() < 1e-15);
        let s = sector_from_pose(&pose(0.0, 0.0, 90.0), &FovParams::MSLS).unwrap();
        assert!(s.contains([10.0, 0.0]));
        assert!(!s.contains([0.0, 10.0]));
        assert!(!s.contains([-10.0, 0.0]));
    }

    #[test]
    fn analytic_and_polygon_area() {
        let s = sector_from_pose(&pose(1.0, 2.0, 33.0), &FovParams::MSLS).unwrap();
        let exact = 0.25 * std::f64::consts::PI * 2500.0;
        assert!((s.area() - exact).abs() <= 1e-9 * exact);
        assert!((s.polygon_area() - exact).abs() <= 1e-4 * exact);
        for p in s.convex_pieces(None) {
            let a = crate::polygon::signed_area(&p);
            assert!((a - s.polygon_area()).abs() < 1e-9 * exact);
        }
    }

    #[test]
    fn coarse_pieces_contain_fine_ones() {
        for theta in [30.0, 90.0, 180.0, 270.0] {
            let s = sector_from_pose(&pose(0.0, 0.0, 12.0), &FovParams::new(theta, 10.0).unwrap())
                .unwrap();
            for (fine, coarse) in s
                .convex_pieces(None)
                .iter()
                .zip(s.convex_pieces(Some(COARSE_SEGMENTS)))
            {
                let a = crate::polygon::signed_area(fine);
                let both = crate::polygon::convex_intersection_area(fine, &coarse);
                assert!((both - a).abs() < 1e-9 * a, "theta {theta}");
            }
        }
    }

    #[test]
    fn identical_sectors_full_overlap() {
        for def in [
            OverlapDefinition::IntersectionOverUnion,
            OverlapDefinition::IntersectionOverArea,
        ] {
            let p = pose(3.0, 4.0, 77.0);
            assert_eq!(
                weak_2d_similarity(&p, &p, &FovParams::MSLS, def).unwrap(),
                1.0
            );
        }
    }

    #[test]
    fn far_apart_is_zero() {
        let a = pose(0.0, 0.0, 0.0);
        let b = pose(200.0, 0.0, 0.0);
        let psi =
            weak_2d_similarity(&a, &b, &FovParams::MSLS, OverlapDefinition::default()).unwrap();
        assert_eq!(psi, 0.0);
    }

    #[test]
    fn back_to_back_is_zero() {
        let a = pose(0.0, 0.0, 0.0);
        let b = pose(0.0, 0.0, 180.0);
        for def in [
            OverlapDefinition::IntersectionOverUnion,
            OverlapDefinition::IntersectionOverArea,
        ] {
            assert_eq!(
                weak_2d_similarity(&a, &b, &FovParams::MSLS, def).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn concentric_forty_degrees() {
        let a = pose(0.0, 0.0, 0.0);
        let b = pose(0.0, 0.0, 40.0);
        let ioa = weak_2d_similarity(
            &a,
            &b,
            &FovParams::MSLS,
            OverlapDefinition::IntersectionOverArea,
        )
        .unwrap();
        let iou = weak_2d_similarity(
            &a,
            &b,
            &FovParams::MSLS,
            OverlapDefinition::IntersectionOverUnion,
        )
        .unwrap();
        assert!((ioa - 0.5563).abs() <= 0.01, "ioa = {ioa}");
        // concentric equal-radius sectors: 50/90 and 50/130 of the same fan
        assert!((ioa - 50.0 / 90.0).abs() < 1e-9);
        assert!((iou - 50.0 / 130.0).abs() < 1e-9);

        let narrow = FovParams::new(80.0, 50.0).unwrap();
        let psi = weak_2d_similarity(&a, &b, &narrow, OverlapDefinition::default()).unwrap();
        assert!((psi - 0.50).abs() <= 0.02, "psi = {psi}");
    }

    #[test]
    fn lateral_twenty_five_meters() {
        let a = pose(0.0, 0.0, 0.0);
        let b = pose(25.0, 0.0, 0.0);
        let psi =
            weak_2d_similarity(&a, &b, &FovParams::MSLS, OverlapDefinition::default()).unwrap();
        assert!((psi - 0.4501).abs() <= 0.01, "psi = {psi}");
        let wide = FovParams::new(102.0, 50.0).unwrap();
        let psi = weak_2d_similarity(&a, &b, &wide, OverlapDefinition::default()).unwrap();
        assert!((psi - 0.50).abs() <= 0.02, "psi = {psi}");
    }

    #[test]
    fn wide_sectors_use_two_pieces() {
        let a = pose(0.0, 0.0, 0.0);
        let b = pose(0.0, 0.0, 90.0);
        let full = FovParams::new(360.0, 10.0).unwrap();
        let psi =
            weak_2d_similarity(&a, &b, &full, OverlapDefinition::IntersectionOverUnion).unwrap();
        assert!((psi - 1.0).abs() < 1e-9);
        let wide = FovParams::new(270.0, 10.0).unwrap();
        let psi =
            weak_2d_similarity(&a, &b, &wide, OverlapDefinition::IntersectionOverArea).unwrap();
        assert!((psi - 180.0 / 270.0).abs() < 1e-9);
    }

    #[test]
    fn symmetric_for_shared_params() {
        let a = pose(1.0, -2.0, 10.0);
        let b = pose(12.0, 7.0, 55.0);
        for def in [
            OverlapDefinition::IntersectionOverUnion,
            OverlapDefinition::IntersectionOverArea,
        ] {
            let ab = weak_2d_similarity(&a, &b, &FovParams::MSLS, def).unwrap();
            let ba = weak_2d_similarity(&b, &a, &FovParams::MSLS, def).unwrap();
            assert_eq!(ab, ba);
        }
    }

    #[test]
    fn matrix_cardinality_and_duplicates() {
        let q = vec![pose(0.0, 0.0, 0.0)];
        let set =
            pairwise_similarity_matrix(&q, &q, &FovParams::MSLS, OverlapDefinition::default())
                .unwrap();
        assert_eq!(set.logical_len(), 1);
        assert_eq!(set.psi("p", "p"), Some(1.0));

        let qs = vec![
            CameraPose2D::new("q0", 0.0, 0.0, 0.0),
            CameraPose2D::new("q1", 10.0, 0.0, 0.0),
        ];
        let ms = vec![
            CameraPose2D::new("m0", 0.0, 0.0, 0.0),
            CameraPose2D::new("m1", 0.0, 5.0, 20.0),
            CameraPose2D::new("m2", 500.0, 0.0, 0.0),
        ];
        let set =
            pairwise_similarity_matrix(&qs, &ms, &FovParams::MSLS, OverlapDefinition::default())
                .unwrap();
        assert_eq!(set.logical_len(), 6);
        let logical: Vec<_> = set.iter_logical().collect();
        assert_eq!(logical.len(), 6);
        assert_eq!(set.psi("q1", "m2"), Some(0.0));

        let dup = vec![pose(0.0, 0.0, 0.0), pose(1.0, 0.0, 0.0)];
        assert!(pairwise_similarity_matrix(
            &dup,
            &ms,
            &FovParams::MSLS,
            OverlapDefinition::default()
        )
        .is_err());
        assert!(pairwise_similarity_matrix(
            &[],
            &ms,
            &FovParams::MSLS,
            OverlapDefinition::default()
        )
        .is_err());
    }

    #[test]
    fn matrix_matches_pairwise_calls() {
        let qs: Vec<_> = (0..4)
            .map(|i| CameraPose2D::new(format!("q{i}"), 7.0 * i as f64, 3.0, 20.0 * i as f64))
            .collect();
        let ms: Vec<_> = (0..5)
            .map(|i| {
                CameraPose2D::new(
                    format!("m{i}"),
                    5.0 * i as f64,
                    -4.0,
                    300.0 + 15.0 * i as f64,
                )
            })
            .collect();
        let def = OverlapDefinition::IntersectionOverUnion;
        let set = pairwise_similarity_matrix(&qs, &ms, &FovParams::MSLS, def).unwrap();
        for q in &qs {
            for m in &ms {
                let direct = weak_2d_similarity(q, m, &FovParams::MSLS, def).unwrap();
                assert_eq!(set.psi(&q.id, &m.id), Some(direct));
            }
        }
    }
}
