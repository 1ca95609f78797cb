//! Synthetic two-target bar datasets with known ground truth.
//!
//! Each image places a bar of length `D` with a uniformly random midpoint in
//! an axis-aligned box and a uniformly random orientation; the bar ends are
//! targets A and B. Their exact projections get i.i.d. isotropic Gaussian
//! pixel noise. Placement and noise draw from two independent ChaCha8
//! streams, so datasets that share a seed share their geometry regardless of
//! the noise level.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use thiserror::Error;

use crate::dataset::{Dataset, GroundTruth, ImageObservation, PixelPair};
use crate::geometry::{
    angles_from_pose_locked, rotation_from_angles, CameraIntrinsics, ExtrinsicAngles, Pixel2,
    Point3, ProjectionMatrix,
};

/// Placement attempts per image before giving up.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

const NOISE_STREAM: u64 = 0x6e6f_6973_6500_0001;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid scene configuration: {0}")]
    InvalidConfig(String),
    #[error("could not place image {image} in view of both cameras after {attempts} attempts")]
    PlacementExhausted { image: usize, attempts: usize },
}

/// Pixel extent of a sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensor {
    pub width: f64,
    pub height: f64,
}

impl Sensor {
    pub fn contains(&self, q: &Pixel2, margin: f64) -> bool {
        q.u >= margin && q.v >= margin && q.u <= self.width - margin && q.v <= self.height - margin
    }
}

/// Axis-aligned placement volume for bar midpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacementBox {
    pub center: Point3,
    pub half_extent: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub baseline: f64,
    pub distance: f64,
    pub n_images: usize,
    pub noise_sigma: f64,
    pub k1: CameraIntrinsics,
    pub k2: CameraIntrinsics,
    pub sensor: Sensor,
    pub truth: ExtrinsicAngles,
    pub placement: PlacementBox,
    /// Noise-free projections must stay this many pixels inside the sensor.
    pub margin: f64,
    pub seed: u64,
}

/// Roughly a 50 mm lens on a 2048×1088 sensor.
pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        omega: 3500.0,
        skew: 0.0,
        u0: 1024.0,
        v0: 544.0,
    }
}

pub fn default_sensor() -> Sensor {
    Sensor {
        width: 2048.0,
        height: 1088.0,
    }
}

/// 2×2×2 m box centered 6 m in front of the primary camera.
pub fn default_placement() -> PlacementBox {
    PlacementBox {
        center: Point3::new(0.0, 0.0, 6.0),
        half_extent: Vector3::new(1.0, 1.0, 1.0),
    }
}

/// A rig whose secondary camera sits roughly `baseline` meters to the right
/// of the primary, yawed to look at `look_at`, with a small pitch and roll.
pub fn converging_rig(baseline: f64, look_at: &Point3) -> ExtrinsicAngles {
    let center = Vector3::new(1.0, 0.012, 0.03).normalize() * baseline;
    let alpha = (center.x - look_at.x).atan2(look_at.z - center.z);
    let rotation = rotation_from_angles(alpha, 0.015, -0.01);
    let translation = -(rotation * center);
    angles_from_pose_locked(&rotation, &translation).expect("rig is away from gimbal lock")
}

impl Default for SceneConfig {
    fn default() -> Self {
        let placement = default_placement();
        Self {
            baseline: 4.0,
            distance: 0.9,
            n_images: 25,
            noise_sigma: 0.3,
            k1: default_intrinsics(),
            k2: default_intrinsics(),
            sensor: default_sensor(),
            truth: converging_rig(4.0, &placement.center),
            placement,
            margin: 5.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    /// Default scene with a different baseline; the truth pose is rebuilt so
    /// the secondary camera still converges on the placement box.
    pub fn with_baseline(baseline: f64) -> Self {
        let base = Self::default();
        Self {
            baseline,
            truth: converging_rig(baseline, &base.placement.center),
            ..base
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::InvalidConfig(m));
        if !(self.baseline.is_finite() && self.baseline > 0.0) {
            return bad(format!("baseline must be positive, got {}", self.baseline));
        }
        if !(self.distance.is_finite() && self.distance > 0.0) {
            return bad(format!("target distance must be positive, got {}", self.distance));
        }
        if self.n_images == 0 {
            return bad("n_images must be at least 1".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise sigma must be >= 0, got {}", self.noise_sigma));
        }
        if (self.truth.baseline - self.baseline).abs() > 1e-9 * self.baseline {
            return bad(format!(
                "truth pose baseline {} disagrees with baseline {}",
                self.truth.baseline, self.baseline
            ));
        }
        if !self.placement.half_extent.iter().all(|h| h.is_finite() && *h >= 0.0) {
            return bad("placement half extents must be finite and nonnegative".into());
        }
        self.k1
            .validate()
            .and_then(|_| self.k2.validate())
            .and_then(|_| self.truth.validate())
            .or_else(|e| bad(e.to_string()))
    }
}

/// Generates a dataset; deterministic in `config.seed`.
pub fn generate(config: &SceneConfig) -> Result<Dataset, SceneError> {
    config.validate()?;
    let mut placement_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed ^ NOISE_STREAM);
    let noise = Normal::new(0.0, config.noise_sigma)
        .map_err(|e| SceneError::InvalidConfig(e.to_string()))?;

    let pose = config.truth.to_extrinsics();
    let p1 = ProjectionMatrix::primary(&config.k1);
    let p2 = ProjectionMatrix::secondary(&config.k2, &pose);
    let half = config.distance / 2.0;
    let b = &config.placement;

    let mut images = Vec::with_capacity(config.n_images);
    let mut targets = Vec::with_capacity(config.n_images);
    for image in 0..config.n_images {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let mid = Point3::new(
                sample_axis(&mut placement_rng, b.center.x, b.half_extent.x),
                sample_axis(&mut placement_rng, b.center.y, b.half_extent.y),
                sample_axis(&mut placement_rng, b.center.z, b.half_extent.z),
            );
            let dir: [f64; 3] = UnitSphere.sample(&mut placement_rng);
            let axis = Vector3::from(dir) * half;
            let (a, bb) = (mid + axis, mid - axis);
            let jitter: [f64; 8] = std::array::from_fn(|_| noise.sample(&mut noise_rng));

            let Some(exact) = visible_pairs(&p1, &p2, &pose, &a, &bb) else {
                continue;
            };
            let noisy: [Pixel2; 4] = std::array::from_fn(|i| {
                Pixel2::new(exact[i].u + jitter[2 * i], exact[i].v + jitter[2 * i + 1])
            });
            let in_frame = exact.iter().all(|q| config.sensor.contains(q, config.margin))
                && noisy.iter().all(|q| config.sensor.contains(q, 0.0));
            if in_frame {
                placed = Some((noisy, (a, bb)));
                break;
            }
        }
        let Some((q, pts)) = placed else {
            return Err(SceneError::PlacementExhausted {
                image,
                attempts: MAX_PLACEMENT_ATTEMPTS,
            });
        };
        images.push(ImageObservation {
            a: PixelPair::new(q[0], q[1]),
            b: PixelPair::new(q[2], q[3]),
        });
        targets.push(pts);
    }

    Ok(Dataset {
        k1: config.k1,
        k2: config.k2,
        baseline: config.baseline,
        distance: config.distance,
        images,
        truth: Some(GroundTruth {
            angles: config.truth,
            targets,
        }),
    })
}

fn sample_axis(rng: &mut ChaCha8Rng, center: f64, half: f64) -> f64 {
    if half > 0.0 {
        rng.random_range(center - half..=center + half)
    } else {
        center
    }
}

/// Exact projections `[a1, a2, b1, b2]`, or `None` if either target is not in
/// front of both cameras.
fn visible_pairs(
    p1: &ProjectionMatrix,
    p2: &ProjectionMatrix,
    pose: &crate::geometry::Extrinsics,
    a: &Point3,
    b: &Point3,
) -> Option<[Pixel2; 4]> {
    let front = |p: &Point3| p.z > 0.0 && pose.transform(p).z > 0.0;
    if !(front(a) && front(b)) {
        return None;
    }
    Some([
        p1.project(a).ok()?,
        p2.project(a).ok()?,
        p1.project(b).ok()?,
        p2.project(b).ok()?,
    ])
}
