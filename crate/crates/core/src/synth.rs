//! Seeded synthetic scenes.
//!
//! `city2d` places cameras along a square street grid, facing along their
//! street, and derives each image's feature vector from its pose through a
//! fixed random function of position and heading, then adds per-image noise
//! and a block of nuisance dimensions unrelated to the pose. Map and query
//! images share the same world function, so geometric neighbors have similar
//! features.
//!
//! `cloud3d` fills a box with random points and places level cameras inside.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom2d::{compass_to_math_rad, CameraPose2D};
use crate::geom3d::{CameraIntrinsics, PointCloud, Pose6DOF};
use crate::train::FeatureStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct City2dConfig {
    pub n_map: usize,
    pub n_query: usize,
    pub seed: u64,
    /// Side of the square city, meters.
    pub extent_m: f64,
    /// Streets per direction.
    pub streets: usize,
    pub position_noise_m: f64,
    pub heading_noise_deg: f64,
    /// Pose-driven feature dimensions, split between a coarse and a fine scale.
    pub geo_dims: usize,
    pub coarse_scale_m: f64,
    pub fine_scale_m: f64,
    /// How strongly the fine-scale features react to heading.
    pub heading_gain: f64,
    /// Amplitude of the fine-scale block relative to the coarse one.
    pub fine_weight: f64,
    pub feature_noise: f64,
    pub nuisance_dims: usize,
    pub nuisance_scale: f64,
}

impl Default for City2dConfig {
    fn default() -> Self {
        Self {
            n_map: 1000,
            n_query: 200,
            seed: 0,
            extent_m: 400.0,
            streets: 5,
            position_noise_m: 1.0,
            heading_noise_deg: 10.0,
            geo_dims: 24,
            coarse_scale_m: 150.0,
            fine_scale_m: 20.0,
            heading_gain: 1.5,
            fine_weight: 0.5,
            feature_noise: 0.05,
            nuisance_dims: 8,
            nuisance_scale: 0.15,
        }
    }
}

impl City2dConfig {
    pub fn feature_dim(&self) -> usize {
        self.geo_dims + self.nuisance_dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_map == 0 {
            return Err(Error::invalid("city2d needs at least one map image"));
        }
        if self.streets == 0 || self.geo_dims == 0 {
            return Err(Error::invalid(
                "city2d needs streets and pose-driven features",
            ));
        }
        for (name, v) in [
            ("extent", self.extent_m),
            ("coarse scale", self.coarse_scale_m),
            ("fine scale", self.fine_scale_m),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("position noise", self.position_noise_m),
            ("heading noise", self.heading_noise_deg),
            ("heading gain", self.heading_gain),
            ("fine weight", self.fine_weight),
            ("feature noise", self.feature_noise),
            ("nuisance scale", self.nuisance_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be non-negative")));
            }
        }
        Ok(())
    }
}

/// Random Fourier features of `(position, heading direction)`. The coarse
/// block sees position only; the fine block sees position and heading.
struct World {
    freq: Vec<[f64; 2]>,
    heading_freq: Vec<[f64; 2]>,
    phase: Vec<f64>,
    amplitude: Vec<f64>,
}

impl World {
    fn new(cfg: &City2dConfig, rng: &mut ChaCha8Rng) -> Self {
        let coarse = cfg.geo_dims / 2;
        let mut freq = Vec::with_capacity(cfg.geo_dims);
        let mut heading_freq = Vec::with_capacity(cfg.geo_dims);
        let mut phase = Vec::with_capacity(cfg.geo_dims);
        let mut amplitude = Vec::with_capacity(cfg.geo_dims);
        let norm = (2.0 / cfg.geo_dims as f64).sqrt();
        for j in 0..cfg.geo_dims {
            let (scale, gain, amp) = if j < coarse {
                (cfg.coarse_scale_m, 0.0, norm)
            } else {
                (cfg.fine_scale_m, cfg.heading_gain, norm * cfg.fine_weight)
            };
            let mut g = || -> f64 { rng.sample(StandardNormal) };
            freq.push([g() / scale, g() / scale]);
            heading_freq.push([g() * gain, g() * gain]);
            phase.push(rng.random_range(0.0..2.0 * PI));
            amplitude.push(amp);
        }
        Self {
            freq,
            heading_freq,
            phase,
            amplitude,
        }
    }

    fn features(&self, pose: &CameraPose2D, out: &mut Vec<f64>) {
        let a = compass_to_math_rad(pose.heading_deg);
        let u = [a.cos(), a.sin()];
        for (((w, v), b), amp) in self
            .freq
            .iter()
            .zip(&self.heading_freq)
            .zip(&self.phase)
            .zip(&self.amplitude)
        {
            let arg = w[0] * pose.t0 + w[1] * pose.t1 + v[0] * u[0] + v[1] * u[1] + b;
            out.push(amp * arg.cos());
        }
    }
}

fn street_pose(id: String, cfg: &City2dConfig, rng: &mut ChaCha8Rng) -> CameraPose2D {
    let spacing = cfg.extent_m / cfg.streets as f64;
    let street = rng.random_range(0..cfg.streets) as f64 * spacing + spacing / 2.0;
    let along = rng.random_range(0.0..cfg.extent_m);
    let vertical = rng.random_bool(0.5);
    let forward = rng.random_bool(0.5);
    let noise =
        Normal::new(0.0, cfg.position_noise_m.max(f64::MIN_POSITIVE)).expect("valid normal");
    let hnoise =
        Normal::new(0.0, cfg.heading_noise_deg.max(f64::MIN_POSITIVE)).expect("valid normal");
    let (t0, t1, heading) = if vertical {
        (street, along, if forward { 0.0 } else { 180.0 })
    } else {
        (along, street, if forward { 90.0 } else { 270.0 })
    };
    CameraPose2D::new(
        id,
        t0 + noise.sample(rng),
        t1 + noise.sample(rng),
        heading + hnoise.sample(rng),
    )
}

#[derive(Clone, Debug)]
pub struct City2d {
    pub map_poses: Vec<CameraPose2D>,
    pub query_poses: Vec<CameraPose2D>,
    pub map_features: FeatureStore,
    pub query_features: FeatureStore,
}

fn observe(
    poses: &[CameraPose2D],
    world: &World,
    cfg: &City2dConfig,
    rng: &mut ChaCha8Rng,
) -> Result<FeatureStore> {
    let dim = cfg.feature_dim();
    let mut data = Vec::with_capacity(poses.len() * dim);
    for p in poses {
        let start = data.len();
        world.features(p, &mut data);
        for v in &mut data[start..] {
            *v += cfg.feature_noise * rng.sample::<f64, _>(StandardNormal);
        }
        for _ in 0..cfg.nuisance_dims {
            data.push(cfg.nuisance_scale * rng.sample::<f64, _>(StandardNormal));
        }
    }
    FeatureStore::new(dim, poses.iter().map(|p| p.id.clone()).collect(), data)
}

/// Map ids are `m00000`, `m00001`, ...; query ids `q00000`, ...
pub fn city2d(cfg: &City2dConfig) -> Result<City2d> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let world = World::new(cfg, &mut rng);
    let map_poses: Vec<CameraPose2D> = (0..cfg.n_map)
        .map(|i| street_pose(format!("m{i:05}"), cfg, &mut rng))
        .collect();
    let query_poses: Vec<CameraPose2D> = (0..cfg.n_query)
        .map(|i| street_pose(format!("q{i:05}"), cfg, &mut rng))
        .collect();
    let map_features = observe(&map_poses, &world, cfg, &mut rng)?;
    let query_features = observe(&query_poses, &world, cfg, &mut rng)?;
    Ok(City2d {
        map_poses,
        query_poses,
        map_features,
        query_features,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cloud3dConfig {
    pub n_poses: usize,
    pub n_points: usize,
    pub seed: u64,
    /// Box half-extent in x and y; the box spans `0..height_m` in z.
    pub half_extent_m: f64,
    pub height_m: f64,
    pub camera_height_m: f64,
}

impl Default for Cloud3dConfig {
    fn default() -> Self {
        Self {
            n_poses: 50,
            n_points: 5000,
            seed: 0,
            half_extent_m: 10.0,
            height_m: 4.0,
            camera_height_m: 1.5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Cloud3d {
    pub poses: Vec<Pose6DOF>,
    pub cloud: PointCloud,
    pub intrinsics: CameraIntrinsics,
}

/// Camera-to-world rotation of a level camera facing compass heading `heading_deg`.
pub fn level_camera_rotation(heading_deg: f64) -> [f64; 4] {
    let a = compass_to_math_rad(heading_deg);
    let forward = [a.cos(), a.sin(), 0.0];
    let right = [a.sin(), -a.cos(), 0.0];
    let down = [0.0, 0.0, -1.0];
    let m = Matrix3::from_columns(&[right.into(), down.into(), forward.into()]);
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
    [q.w, q.i, q.j, q.k]
}

pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 300.0,
        fy: 300.0,
        cx: 320.0,
        cy: 240.0,
        width: 640,
        height: 480,
    }
}

/// Pose ids are `c00000`, `c00001`, ...
pub fn cloud3d(cfg: &Cloud3dConfig) -> Result<Cloud3d> {
    if cfg.n_poses == 0 || cfg.n_points == 0 {
        return Err(Error::invalid(
            "cloud3d needs at least one pose and one point",
        ));
    }
    if !(cfg.half_extent_m > 0.0 && cfg.height_m > 0.0) {
        return Err(Error::invalid("cloud3d box must have positive size"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let e = cfg.half_extent_m;
    let points = (0..cfg.n_points)
        .map(|_| {
            [
                rng.random_range(-e..e),
                rng.random_range(-e..e),
                rng.random_range(0.0..cfg.height_m),
            ]
        })
        .collect();
    let poses = (0..cfg.n_poses)
        .map(|i| {
            let t = [
                rng.random_range(-0.8 * e..0.8 * e),
                rng.random_range(-0.8 * e..0.8 * e),
                cfg.camera_height_m,
            ];
            let heading = rng.random_range(0.0..360.0);
            Pose6DOF::new(format!("c{i:05}"), t, level_camera_rotation(heading))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Cloud3d {
        poses,
        cloud: PointCloud::new(points)?,
        intrinsics: default_intrinsics(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_ids() {
        let cfg = City2dConfig {
            n_map: 100,
            n_query: 7,
            ..City2dConfig::default()
        };
        let c = city2d(&cfg).unwrap();
        assert_eq!(c.map_poses.len(), 100);
        assert_eq!(c.map_features.len(), 100);
        assert_eq!(c.query_features.len(), 7);
        assert_eq!(c.map_features.dim(), cfg.feature_dim());
        assert_eq!(c.map_poses[3].id, "m00003");
        assert_eq!(c.query_features.ids()[0], "q00000");
    }

    #[test]
    fn seeded() {
        let cfg = City2dConfig {
            n_map: 20,
            n_query: 5,
            ..City2dConfig::default()
        };
        let a = city2d(&cfg).unwrap();
        let b = city2d(&cfg).unwrap();
        assert_eq!(a.map_poses, b.map_poses);
        assert_eq!(a.query_features, b.query_features);
        let c = city2d(&City2dConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.map_poses, c.map_poses);
    }

    #[test]
    fn level_camera_looks_along_heading() {
        let p = Pose6DOF::new("c", [0.0, 0.0, 0.0], level_camera_rotation(90.0)).unwrap();
        // east of the camera is straight ahead
        let c = p.world_to_camera([5.0, 0.0, 0.0]);
        assert!(c[0].abs() < 1e-12 && c[1].abs() < 1e-12 && (c[2] - 5.0).abs() < 1e-12);
        // above the camera projects to negative image y
        let c = p.world_to_camera([5.0, 0.0, 1.0]);
        assert!(c[1] < 0.0);
    }

    #[test]
    fn cloud_counts() {
        let c = cloud3d(&Cloud3dConfig::default()).unwrap();
        assert_eq!(c.poses.len(), 50);
        assert_eq!(c.cloud.len(), 5000);
        assert!(cloud3d(&Cloud3dConfig {
            n_poses: 0,
            ..Cloud3dConfig::default()
        })
        .is_err());
    }
}
