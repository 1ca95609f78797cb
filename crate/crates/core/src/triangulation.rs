//! Midpoint triangulation and the per-pair error measures built on it.

use nalgebra::{Unit, Vector3};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Extrinsics, Pixel2, Point3, ProjectionMatrix};

/// `|d₁ × d₂|` at or below which two rays count as parallel.
pub const PARALLEL_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TriangulationError {
    #[error("optical rays are parallel (|d1 x d2| = {0:e})")]
    ParallelRays(f64),
    #[error("reconstructed point projects to infinity")]
    PointAtInfinity,
    #[error("reference distance must be positive, got {0}")]
    InvalidDistance(f64),
}

/// Optical ray in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray3 {
    pub origin: Point3,
    pub direction: Unit<Vector3<f64>>,
}

impl Ray3 {
    pub fn new(origin: Point3, direction: Vector3<f64>) -> Self {
        Self {
            origin,
            direction: Unit::new_normalize(direction),
        }
    }

    pub fn at(&self, s: f64) -> Point3 {
        self.origin + self.direction.into_inner() * s
    }

    /// Distance from `p` to the infinite line carrying the ray.
    pub fn line_distance(&self, p: &Point3) -> f64 {
        (p - self.origin).cross(&self.direction).norm()
    }
}

/// Midpoint of the closest-approach segment between two rays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reconstruction {
    pub point: Point3,
    /// Length of the closest-approach segment.
    pub gap: f64,
    /// Both closest points lie ahead of their ray origins, i.e. the point
    /// has positive depth in both cameras.
    pub in_front: bool,
}

/// Which camera of the canonical rig a pixel belongs to.
#[derive(Debug, Clone, Copy)]
pub enum CameraPose<'a> {
    Primary,
    Secondary(&'a Extrinsics),
}

/// Back-projects a pixel into the world frame.
pub fn ray_from_pixel(k: &CameraIntrinsics, camera: CameraPose<'_>, q: &Pixel2) -> Ray3 {
    let dir_cam = k.normalize(q).homogeneous();
    match camera {
        CameraPose::Primary => Ray3::new(Point3::origin(), dir_cam),
        CameraPose::Secondary(pose) => {
            Ray3::new(pose.center(), pose.rotation.transpose() * dir_cam)
        }
    }
}

/// Closest-approach midpoint of two rays.
pub fn triangulate(r1: &Ray3, r2: &Ray3) -> Result<Reconstruction, TriangulationError> {
    let d1 = r1.direction.into_inner();
    let d2 = r2.direction.into_inner();
    let cross = d1.cross(&d2).norm();
    if cross <= PARALLEL_TOL {
        return Err(TriangulationError::ParallelRays(cross));
    }
    let w0 = r1.origin - r2.origin;
    let b = d1.dot(&d2);
    let d = d1.dot(&w0);
    let e = d2.dot(&w0);
    let denom = 1.0 - b * b;
    let s = (b * e - d) / denom;
    let t = (e - b * d) / denom;
    let p1 = r1.at(s);
    let p2 = r2.at(t);
    Ok(Reconstruction {
        point: nalgebra::center(&p1, &p2),
        gap: (p1 - p2).norm(),
        in_front: s > 0.0 && t > 0.0,
    })
}

/// A calibrated two-camera rig: both intrinsics plus the secondary pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoRig {
    pub k1: CameraIntrinsics,
    pub k2: CameraIntrinsics,
    pub pose: Extrinsics,
}

impl StereoRig {
    pub fn new(k1: CameraIntrinsics, k2: CameraIntrinsics, pose: Extrinsics) -> Self {
        Self { k1, k2, pose }
    }

    pub fn primary_projection(&self) -> ProjectionMatrix {
        ProjectionMatrix::primary(&self.k1)
    }

    pub fn secondary_projection(&self) -> ProjectionMatrix {
        ProjectionMatrix::secondary(&self.k2, &self.pose)
    }

    pub fn reconstruct(&self, q1: &Pixel2, q2: &Pixel2) -> Result<Reconstruction, TriangulationError> {
        let r1 = ray_from_pixel(&self.k1, CameraPose::Primary, q1);
        let r2 = ray_from_pixel(&self.k2, CameraPose::Secondary(&self.pose), q2);
        triangulate(&r1, &r2)
    }

    /// Pixel distances between each detection and the back-projection of
    /// the reconstructed point, plus the reconstruction itself.
    pub fn reprojection(
        &self,
        q1: &Pixel2,
        q2: &Pixel2,
    ) -> Result<((f64, f64), Reconstruction), TriangulationError> {
        let rec = self.reconstruct(q1, q2)?;
        let back1 = self
            .primary_projection()
            .project(&rec.point)
            .map_err(|_| TriangulationError::PointAtInfinity)?;
        let back2 = self
            .secondary_projection()
            .project(&rec.point)
            .map_err(|_| TriangulationError::PointAtInfinity)?;
        Ok(((q1.distance(&back1), q2.distance(&back2)), rec))
    }

    pub fn reprojection_error(&self, q1: &Pixel2, q2: &Pixel2) -> Result<(f64, f64), TriangulationError> {
        self.reprojection(q1, q2).map(|(e, _)| e)
    }

    /// Absolute and relative error of the reconstructed distance between two
    /// targets against the measured distance `d`.
    pub fn distance_error(
        &self,
        pair_a: (&Pixel2, &Pixel2),
        pair_b: (&Pixel2, &Pixel2),
        d: f64,
    ) -> Result<DistanceError, TriangulationError> {
        if !(d.is_finite() && d > 0.0) {
            return Err(TriangulationError::InvalidDistance(d));
        }
        let a = self.reconstruct(pair_a.0, pair_a.1)?;
        let b = self.reconstruct(pair_b.0, pair_b.1)?;
        let reconstructed = (a.point - b.point).norm();
        Ok(DistanceError::new(d, reconstructed, a.in_front && b.in_front))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceError {
    /// `|D - D^R|` in meters.
    pub err: f64,
    /// `err / D`.
    pub pct: f64,
    pub reconstructed: f64,
    pub in_front: bool,
}

impl DistanceError {
    pub fn new(measured: f64, reconstructed: f64, in_front: bool) -> Self {
        let err = (measured - reconstructed).abs();
        Self {
            err,
            pct: err / measured,
            reconstructed,
            in_front,
        }
    }
}

pub fn reconstruct_pair(
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
    pose: &Extrinsics,
    q1: &Pixel2,
    q2: &Pixel2,
) -> Result<Reconstruction, TriangulationError> {
    StereoRig::new(*k1, *k2, *pose).reconstruct(q1, q2)
}

pub fn reprojection_error(
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
    pose: &Extrinsics,
    q1: &Pixel2,
    q2: &Pixel2,
) -> Result<(f64, f64), TriangulationError> {
    StereoRig::new(*k1, *k2, *pose).reprojection_error(q1, q2)
}

pub fn distance_error(
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
    pose: &Extrinsics,
    pair_a: (&Pixel2, &Pixel2),
    pair_b: (&Pixel2, &Pixel2),
    d: f64,
) -> Result<(f64, f64), TriangulationError> {
    StereoRig::new(*k1, *k2, *pose)
        .distance_error(pair_a, pair_b, d)
        .map(|e| (e.err, e.pct))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ExtrinsicAngles;
    use nalgebra::Matrix3;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 0.0, 500.0, 400.0).unwrap()
    }

    #[test]
    fn principal_rays() {
        let r = ray_from_pixel(&k(), CameraPose::Primary, &Pixel2::new(500.0, 400.0));
        assert_eq!(r.origin, Point3::origin());
        assert_eq!(r.direction.into_inner(), Vector3::z());

        let r = ray_from_pixel(&k(), CameraPose::Primary, &Pixel2::new(1500.0, 400.0));
        let want = Vector3::new(1.0, 0.0, 1.0).normalize();
        assert!((r.direction.into_inner() - want).amax() < 1e-15);

        let pose = Extrinsics::new(Matrix3::identity(), Vector3::new(-1.0, 0.0, 0.0)).unwrap();
        let r = ray_from_pixel(&k(), CameraPose::Secondary(&pose), &Pixel2::new(500.0, 400.0));
        assert_eq!(r.origin, Point3::new(1.0, 0.0, 0.0));
        assert_eq!(r.direction.into_inner(), Vector3::z());
    }

    #[test]
    fn parallel_rays_rejected() {
        let r1 = Ray3::new(Point3::origin(), Vector3::z());
        let r2 = Ray3::new(Point3::new(1.0, 0.0, 0.0), Vector3::z());
        assert!(matches!(
            triangulate(&r1, &r2),
            Err(TriangulationError::ParallelRays(_))
        ));
    }

    #[test]
    fn intersecting_rays() {
        let r1 = Ray3::new(Point3::origin(), Vector3::z());
        let r2 = Ray3::new(Point3::new(1.0, 0.0, 0.0), Vector3::new(-1.0, 0.0, 1.0));
        let rec = triangulate(&r1, &r2).unwrap();
        assert!((rec.point - Point3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
        assert!(rec.gap < 1e-15);
        assert!(rec.in_front);
    }

    #[test]
    fn skew_rays() {
        // Closest points: (0,0,-1) on r1 and (1,0,-1) on r2.
        let r1 = Ray3::new(Point3::origin(), Vector3::z());
        let r2 = Ray3::new(Point3::new(1.0, 0.0, -1.0), Vector3::y());
        let rec = triangulate(&r1, &r2).unwrap();
        assert!((rec.point - Point3::new(0.5, 0.0, -1.0)).norm() < 1e-15);
        assert!((rec.gap - 1.0).abs() < 1e-15);
        assert!(!rec.in_front);
    }

    #[test]
    fn reconstruct_exact_pair() {
        let pose = ExtrinsicAngles::new(0.35, 0.02, -0.01, 0.05, -0.1, 4.0)
            .unwrap()
            .to_extrinsics();
        let rig = StereoRig::new(k(), k(), pose);
        let q = Point3::new(0.2, -0.1, 7.0);
        let q1 = rig.primary_projection().project(&q).unwrap();
        let q2 = rig.secondary_projection().project(&q).unwrap();
        let rec = rig.reconstruct(&q1, &q2).unwrap();
        assert!((rec.point - q).norm() < 1e-9);
        assert!(rec.gap < 1e-9);

        let (e1, e2) = rig.reprojection_error(&q1, &q2).unwrap();
        assert!(e1 < 1e-7 && e2 < 1e-7);

        let noisy = Pixel2::new(q1.u + 0.5, q1.v);
        let rec = rig.reconstruct(&noisy, &q2).unwrap();
        assert!(rec.gap > 0.0);
    }

    #[test]
    fn parallel_principal_rays_from_pixels() {
        let pose = Extrinsics::new(Matrix3::identity(), Vector3::new(-4.0, 0.0, 0.0)).unwrap();
        let c = Pixel2::new(500.0, 400.0);
        assert!(matches!(
            reconstruct_pair(&k(), &k(), &pose, &c, &c),
            Err(TriangulationError::ParallelRays(_))
        ));
    }

    #[test]
    fn noise_on_one_camera_spreads_to_both() {
        let pose = ExtrinsicAngles::new(0.35, 0.02, -0.01, 0.05, -0.1, 4.0)
            .unwrap()
            .to_extrinsics();
        let rig = StereoRig::new(k(), k(), pose);
        let q = Point3::new(-0.3, 0.2, 6.5);
        let q1 = rig.primary_projection().project(&q).unwrap();
        let q2 = rig.secondary_projection().project(&q).unwrap();
        let (e1, e2) = rig
            .reprojection_error(&Pixel2::new(q1.u + 0.3, q1.v - 0.4), &q2)
            .unwrap();
        assert!(e1 > 0.0 && e2 > 0.0);
    }

    #[test]
    fn symmetric_rig_gives_equal_errors() {
        let b = 2.0;
        let pose = Extrinsics::new(Matrix3::identity(), Vector3::new(-b, 0.0, 0.0)).unwrap();
        let rig = StereoRig::new(k(), k(), pose);
        // On the bisector plane x = b/2 and on y = 0, mirroring x, mirroring y
        // and swapping the cameras maps the noisy configuration onto itself.
        let q = Point3::new(b / 2.0, 0.0, 5.0);
        let q1 = rig.primary_projection().project(&q).unwrap();
        let q2 = rig.secondary_projection().project(&q).unwrap();
        let n1 = Pixel2::new(q1.u, q1.v + 0.7);
        let n2 = Pixel2::new(q2.u, q2.v - 0.7);
        let (e1, e2) = rig.reprojection_error(&n1, &n2).unwrap();
        assert!(e1 > 0.1);
        assert!((e1 - e2).abs() < 1e-9);
    }

    #[test]
    fn distance_error_examples() {
        let truth = ExtrinsicAngles::new(0.35, 0.02, -0.01, 0.05, -0.1, 4.0).unwrap();
        let rig = StereoRig::new(k(), k(), truth.to_extrinsics());
        let a = Point3::new(0.1, 0.0, 6.0);
        let b = Point3::new(0.9, 0.3, 6.4);
        let d = (a - b).norm();
        let pa = (
            rig.primary_projection().project(&a).unwrap(),
            rig.secondary_projection().project(&a).unwrap(),
        );
        let pb = (
            rig.primary_projection().project(&b).unwrap(),
            rig.secondary_projection().project(&b).unwrap(),
        );
        let e = rig.distance_error((&pa.0, &pa.1), (&pb.0, &pb.1), d).unwrap();
        assert!(e.err < 1e-9 && e.pct < 1e-9);

        // Scaling the baseline scales the whole reconstruction.
        let lambda = 1.03;
        let scaled = ExtrinsicAngles {
            baseline: truth.baseline * lambda,
            ..truth
        };
        let rig_s = StereoRig::new(k(), k(), scaled.to_extrinsics());
        let e = rig_s.distance_error((&pa.0, &pa.1), (&pb.0, &pb.1), d).unwrap();
        assert!((e.err - (lambda - 1.0) * d).abs() < 1e-9);

        assert!(matches!(
            rig.distance_error((&pa.0, &pa.1), (&pb.0, &pb.1), 0.0),
            Err(TriangulationError::InvalidDistance(_))
        ));
    }

    #[test]
    fn pct_arithmetic() {
        let e = DistanceError::new(1.0, 0.99, true);
        assert!((e.err - 0.01).abs() < 1e-15 && (e.pct - 0.01).abs() < 1e-15);
        let e = DistanceError::new(1.0, 1.001, true);
        assert!((e.pct - 0.001).abs() < 1e-15);
    }
}
