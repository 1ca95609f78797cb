//! Cost functions over the extrinsic angles.

use crate::dataset::{CorrespondenceSet2D, CorrespondenceSet3D};
use crate::geometry::{CameraIntrinsics, ExtrinsicAngles, NormalizedPoint2};
use crate::montecarlo::CostFunction;
use crate::triangulation::StereoRig;

/// Contribution of one element whose reconstruction is degenerate (parallel
/// rays) or lies behind a camera. Pixels or meters, depending on the cost.
pub const DEGENERATE_PENALTY: f64 = 1e6;

/// Sum over all pairs of the reprojection errors in both cameras.
#[derive(Debug, Clone, Copy)]
pub struct ReprojectionCost<'a> {
    pub corr: &'a CorrespondenceSet2D,
    pub k1: CameraIntrinsics,
    pub k2: CameraIntrinsics,
}

impl<'a> ReprojectionCost<'a> {
    pub fn new(corr: &'a CorrespondenceSet2D, k1: CameraIntrinsics, k2: CameraIntrinsics) -> Self {
        Self { corr, k1, k2 }
    }
}

impl CostFunction for ReprojectionCost<'_> {
    fn cost(&self, angles: &ExtrinsicAngles) -> f64 {
        let rig = StereoRig::new(self.k1, self.k2, angles.to_extrinsics());
        self.corr
            .iter()
            .map(|p| match rig.reprojection(&p.q1, &p.q2) {
                Ok(((e1, e2), rec)) if rec.in_front && (e1 + e2).is_finite() => e1 + e2,
                _ => DEGENERATE_PENALTY,
            })
            .sum()
    }
}

/// Sum over entries of `|D - D^R|`.
#[derive(Debug, Clone, Copy)]
pub struct ReconstructionCost<'a> {
    pub corr: &'a CorrespondenceSet3D,
    pub k1: CameraIntrinsics,
    pub k2: CameraIntrinsics,
}

impl<'a> ReconstructionCost<'a> {
    pub fn new(corr: &'a CorrespondenceSet3D, k1: CameraIntrinsics, k2: CameraIntrinsics) -> Self {
        Self { corr, k1, k2 }
    }
}

impl CostFunction for ReconstructionCost<'_> {
    fn cost(&self, angles: &ExtrinsicAngles) -> f64 {
        let rig = StereoRig::new(self.k1, self.k2, angles.to_extrinsics());
        self.corr
            .iter()
            .map(|e| {
                match rig.distance_error((&e.a.q1, &e.a.q2), (&e.b.q1, &e.b.q2), e.distance) {
                    Ok(d) if d.in_front && d.err.is_finite() => d.err,
                    _ => DEGENERATE_PENALTY,
                }
            })
            .sum()
    }
}

/// Sum of squared epipolar residuals of `E(angles)` over pre-normalized
/// pairs. Independent of the baseline.
#[derive(Debug, Clone)]
pub struct ResidualCost {
    points: Vec<(NormalizedPoint2, NormalizedPoint2)>,
}

impl ResidualCost {
    pub fn new(corr: &CorrespondenceSet2D, k1: &CameraIntrinsics, k2: &CameraIntrinsics) -> Self {
        Self {
            points: corr
                .iter()
                .map(|p| (k1.normalize(&p.q1), k2.normalize(&p.q2)))
                .collect(),
        }
    }

    pub fn from_normalized(points: Vec<(NormalizedPoint2, NormalizedPoint2)>) -> Self {
        Self { points }
    }
}

impl CostFunction for ResidualCost {
    fn cost(&self, angles: &ExtrinsicAngles) -> f64 {
        let e = angles.essential();
        self.points
            .iter()
            .map(|(a, b)| e.residual(a, b).powi(2))
            .sum()
    }
}

pub fn cost_reprojection(
    angles: &ExtrinsicAngles,
    corr: &CorrespondenceSet2D,
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
) -> f64 {
    ReprojectionCost::new(corr, *k1, *k2).cost(angles)
}

pub fn cost_reconstruction(
    angles: &ExtrinsicAngles,
    corr: &CorrespondenceSet3D,
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
) -> f64 {
    ReconstructionCost::new(corr, *k1, *k2).cost(angles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DistanceEntry, PixelPair};
    use crate::geometry::{Pixel2, Point3};

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(3500.0, 0.0, 1024.0, 544.0).unwrap()
    }

    fn truth() -> ExtrinsicAngles {
        ExtrinsicAngles::new(0.55, 0.01, -0.02, 0.03, -0.12, 4.2).unwrap()
    }

    fn points() -> Vec<Point3> {
        vec![
            Point3::new(0.1, 0.2, 6.0),
            Point3::new(-0.5, -0.3, 5.5),
            Point3::new(0.7, 0.1, 6.8),
            Point3::new(-0.2, 0.4, 6.3),
            Point3::new(0.3, -0.45, 5.2),
            Point3::new(-0.6, 0.05, 6.9),
        ]
    }

    fn pair(rig: &StereoRig, p: &Point3) -> PixelPair {
        PixelPair::new(
            rig.primary_projection().project(p).unwrap(),
            rig.secondary_projection().project(p).unwrap(),
        )
    }

    fn sets(scale_d: f64) -> (CorrespondenceSet2D, CorrespondenceSet3D) {
        let rig = StereoRig::new(k(), k(), truth().to_extrinsics());
        let pts = points();
        let c2: CorrespondenceSet2D = pts.iter().map(|p| pair(&rig, p)).collect();
        let c3 = CorrespondenceSet3D::new(
            pts.chunks(2)
                .map(|w| DistanceEntry {
                    distance: (w[0] - w[1]).norm() * scale_d,
                    a: pair(&rig, &w[0]),
                    b: pair(&rig, &w[1]),
                })
                .collect(),
        )
        .unwrap();
        (c2, c3)
    }

    #[test]
    fn zero_at_truth() {
        let (c2, c3) = sets(1.0);
        assert!(cost_reprojection(&truth(), &c2, &k(), &k()) < 1e-6);
        assert!(cost_reconstruction(&truth(), &c3, &k(), &k()) < 1e-9);
        assert!(ResidualCost::new(&c2, &k(), &k()).cost(&truth()) < 1e-18);
    }

    #[test]
    fn noise_makes_reprojection_positive() {
        let (c2, _) = sets(1.0);
        let noisy: CorrespondenceSet2D = c2
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let s = if i % 2 == 0 { 0.3 } else { -0.2 };
                PixelPair::new(Pixel2::new(p.q1.u + s, p.q1.v - s), p.q2)
            })
            .collect();
        assert!(cost_reprojection(&truth(), &noisy, &k(), &k()) > 0.0);
    }

    #[test]
    fn doubled_distance_costs_reconstructed_sum() {
        let (_, c3) = sets(2.0);
        let rig = StereoRig::new(k(), k(), truth().to_extrinsics());
        let want: f64 = c3
            .iter()
            .map(|e| {
                let a = rig.reconstruct(&e.a.q1, &e.a.q2).unwrap().point;
                let b = rig.reconstruct(&e.b.q1, &e.b.q2).unwrap().point;
                (a - b).norm()
            })
            .sum();
        let got = cost_reconstruction(&truth(), &c3, &k(), &k());
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn costs_are_additive() {
        let (c2, c3) = sets(1.0);
        let off = truth().with_angles([0.56, 0.0, -0.02, 0.03, -0.1]);
        let single = cost_reprojection(&off, &c2, &k(), &k());
        let doubled: CorrespondenceSet2D = c2.iter().chain(c2.iter()).copied().collect();
        assert_eq!(cost_reprojection(&off, &doubled, &k(), &k()), 2.0 * single);

        let single = cost_reconstruction(&off, &c3, &k(), &k());
        let doubled = CorrespondenceSet3D::new(
            c3.iter().chain(c3.iter()).copied().collect(),
        )
        .unwrap();
        assert_eq!(cost_reconstruction(&off, &doubled, &k(), &k()), 2.0 * single);
    }

    #[test]
    fn degenerate_pose_is_penalized_not_fatal() {
        let (c2, c3) = sets(1.0);
        // Turning the secondary camera around puts every point behind it.
        let flipped = truth().with_angles([0.55 + std::f64::consts::PI, 0.01, -0.02, 0.03, -0.12]);
        let c = cost_reprojection(&flipped, &c2, &k(), &k());
        assert!(c.is_finite() && c >= DEGENERATE_PENALTY);
        let c = cost_reconstruction(&flipped, &c3, &k(), &k());
        assert!(c.is_finite() && c >= DEGENERATE_PENALTY);
    }
}
