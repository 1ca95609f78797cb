//! Essential-matrix calibration: estimate `E` from normalized
//! correspondences, then factor it into `[R | T]` using the measured baseline.
//!
//! Estimation runs in three stages:
//!
//! 1. A linear initial guess. With eight or more pairs this is the null
//!    vector of the (Hartley-conditioned) epipolar design matrix. With five
//!    to seven pairs, the angle space is sampled at random and the best
//!    samples are polished with the Monte Carlo minimizer at a coarse step,
//!    then with a few damped Gauss-Newton iterations.
//! 2. Projection onto the essential manifold, singular values `(1, 1, 0)`.
//! 3. Refinement of `Σ (q̂₂ᵀ E q̂₁)²` over the five-angle parametrization
//!    with the Monte Carlo minimizer.

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector3, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::CorrespondenceSet2D;
use crate::geometry::{
    angles_from_pose_locked, CameraIntrinsics, EssentialMatrix, ExtrinsicAngles, Extrinsics,
    GeometryError, NormalizedPoint2,
};
use crate::cost::ResidualCost;
use crate::montecarlo::{minimize, CostFunction, MonteCarloConfig, MonteCarloError};
use crate::triangulation::StereoRig;

pub const MIN_CORRESPONDENCES: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EssentialError {
    #[error("need at least {MIN_CORRESPONDENCES} correspondences, got {0}")]
    InsufficientCorrespondences(usize),
    #[error("degenerate configuration: epipolar system has rank {rank}, need {required}")]
    DegenerateConfiguration { rank: usize, required: usize },
    #[error("no pose candidate puts a clear majority in front of both cameras ({best} of {total})")]
    AmbiguousCheirality { best: usize, total: usize },
    #[error("baseline must be positive, got {0}")]
    InvalidBaseline(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    MonteCarlo(#[from] MonteCarloError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialConfig {
    /// Schedule for the final refinement.
    pub refine: MonteCarloConfig,
    /// Relative singular-value threshold used for the rank test.
    pub rank_tol: f64,
    /// Random angle samples drawn when fewer than eight pairs are available.
    pub coarse_samples: usize,
    /// Best coarse samples that get polished.
    pub coarse_keep: usize,
    /// Initial step used when polishing coarse samples.
    pub coarse_delta0: f64,
    /// Fraction of correspondences that must vote for the winning factor.
    pub cheirality_majority: f64,
}

impl Default for EssentialConfig {
    fn default() -> Self {
        Self {
            refine: MonteCarloConfig::default(),
            rank_tol: 1e-10,
            coarse_samples: 20_000,
            coarse_keep: 32,
            coarse_delta0: 0.05,
            cheirality_majority: 0.6,
        }
    }
}

impl EssentialConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        Self {
            refine: self.refine.with_seed(seed),
            ..self
        }
    }
}

/// Estimate plus the quantities the caller may want to report.
#[derive(Debug, Clone, PartialEq)]
pub struct EssentialEstimate {
    pub essential: EssentialMatrix,
    /// `Σ (q̂₂ᵀ E q̂₁)²` at the returned `E`.
    pub residual_sum: f64,
}

fn normalized_points(
    corr: &CorrespondenceSet2D,
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
) -> Vec<(NormalizedPoint2, NormalizedPoint2)> {
    corr.iter()
        .map(|p| (k1.normalize(&p.q1), k2.normalize(&p.q2)))
        .collect()
}

/// Estimates `E` with the default configuration.
pub fn estimate_essential(
    corr: &CorrespondenceSet2D,
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
) -> Result<EssentialMatrix, EssentialError> {
    estimate_essential_with(corr, k1, k2, &EssentialConfig::default()).map(|e| e.essential)
}

pub fn estimate_essential_with(
    corr: &CorrespondenceSet2D,
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
    config: &EssentialConfig,
) -> Result<EssentialEstimate, EssentialError> {
    let n = corr.len();
    if n < MIN_CORRESPONDENCES {
        return Err(EssentialError::InsufficientCorrespondences(n));
    }
    config.refine.validate()?;
    let points = normalized_points(corr, k1, k2);
    let cost = ResidualCost::from_normalized(points.clone());

    let (design, t1, t2) = conditioned_design(&points);
    let (singular, vt) = full_svd(&design);
    let required = n.min(8);
    let rank = singular
        .iter()
        .filter(|&&s| s > config.rank_tol * singular[0])
        .count();
    if rank < required {
        return Err(EssentialError::DegenerateConfiguration { rank, required });
    }

    let start = if n >= 8 {
        let initial = linear_estimate(&vt, &t1, &t2);
        seed_angles(&initial)?
    } else {
        coarse_search(&cost, &points, config)?
    };

    let refined = minimize(&start, &cost, &config.refine)?;
    let essential = refined.angles.essential().canonical();
    Ok(EssentialEstimate {
        residual_sum: refined.cost,
        essential,
    })
}

/// Isotropic conditioning transforms mapping each point cloud to zero mean
/// and mean distance `√2`.
fn conditioning(points: impl Iterator<Item = NormalizedPoint2> + Clone) -> Matrix3<f64> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
    let (mx, my) = (sx / n, sy / n);
    let mean_dist = points.map(|p| (p.x - mx).hypot(p.y - my)).sum::<f64>() / n;
    let s = if mean_dist > 0.0 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

/// Rows `q₂ ⊗ q₁` (row-major `E`) of the conditioned points, padded with
/// zero rows to at least nine so the SVD yields a full right basis.
fn conditioned_design(
    points: &[(NormalizedPoint2, NormalizedPoint2)],
) -> (DMatrix<f64>, Matrix3<f64>, Matrix3<f64>) {
    let t1 = conditioning(points.iter().map(|p| p.0));
    let t2 = conditioning(points.iter().map(|p| p.1));
    let rows = points.len().max(9);
    let mut a = DMatrix::zeros(rows, 9);
    for (r, (p1, p2)) in points.iter().enumerate() {
        let x1 = t1 * p1.homogeneous();
        let x2 = t2 * p2.homogeneous();
        for i in 0..3 {
            for j in 0..3 {
                a[(r, 3 * i + j)] = x2[i] * x1[j];
            }
        }
    }
    (a, t1, t2)
}

/// Singular values (descending) and matching rows of `Vᵀ`.
fn full_svd(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let svd = SVD::new(a.clone(), false, true);
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let singular = order.iter().map(|&i| svd.singular_values[i]).collect();
    let sorted = DMatrix::from_fn(order.len(), vt.ncols(), |r, c| vt[(order[r], c)]);
    (singular, sorted)
}

/// Null vector of the design matrix, mapped back through the conditioning.
fn linear_estimate(vt: &DMatrix<f64>, t1: &Matrix3<f64>, t2: &Matrix3<f64>) -> Matrix3<f64> {
    let null = vt.row(vt.nrows() - 1);
    let conditioned = Matrix3::from_fn(|i, j| null[3 * i + j]);
    t2.transpose() * conditioned * t1
}

/// Angles of one algebraic factor of the projected linear estimate. Any of
/// the four factors gives `±E`, and the squared residual ignores the sign.
fn seed_angles(m: &Matrix3<f64>) -> Result<ExtrinsicAngles, EssentialError> {
    let e = EssentialMatrix::project_from(m)?;
    let (r, t) = pose_candidates(&e)[0];
    Ok(angles_from_pose_locked(&r, &t)?)
}

fn coarse_search(
    cost: &ResidualCost,
    points: &[(NormalizedPoint2, NormalizedPoint2)],
    config: &EssentialConfig,
) -> Result<ExtrinsicAngles, EssentialError> {
    use std::f64::consts::{FRAC_PI_2, PI};
    let mut rng = ChaCha8Rng::seed_from_u64(config.refine.seed ^ 0x5eed_c0a4_5e00_0001);
    let mut samples: Vec<(f64, ExtrinsicAngles)> = (0..config.coarse_samples.max(1))
        .map(|_| {
            let a = ExtrinsicAngles {
                alpha: rng.random_range(-PI..PI),
                beta: rng.random_range(-FRAC_PI_2..FRAC_PI_2),
                gamma: rng.random_range(-PI..PI),
                delta: rng.random_range(-1.0f64..1.0).asin(),
                epsilon: rng.random_range(-PI..PI),
                baseline: 1.0,
            };
            (cost.cost(&a), a)
        })
        .collect();
    samples.sort_by(|x, y| x.0.total_cmp(&y.0));

    let polish = MonteCarloConfig {
        delta0: config.coarse_delta0.max(config.refine.delta0),
        ..config.refine
    };
    let mut best: Option<(f64, ExtrinsicAngles)> = None;
    for (i, (_, start)) in samples.iter().take(config.coarse_keep.max(1)).enumerate() {
        let out = minimize(start, cost, &polish.with_seed(polish.seed.wrapping_add(i as u64 + 1)))?;
        let angles = levenberg_marquardt(points, &out.angles);
        let c = cost.cost(&angles);
        if best.is_none_or(|(b, _)| c < b) {
            best = Some((c, angles));
        }
    }
    // Gauss-Newton alone is cheap, so a wider pool of raw samples gets it too.
    for (_, start) in samples.iter().take(LM_POOL) {
        let angles = levenberg_marquardt(points, start);
        let c = cost.cost(&angles);
        if best.is_none_or(|(b, _)| c < b) {
            best = Some((c, angles));
        }
    }
    Ok(best.expect("at least one sample").1)
}

const LM_POOL: usize = 256;

fn residuals(points: &[(NormalizedPoint2, NormalizedPoint2)], a: &ExtrinsicAngles) -> Vec<f64> {
    let e = a.essential();
    points.iter().map(|(p, q)| e.residual(p, q)).collect()
}

/// Damped Gauss-Newton on the residual vector with a central-difference
/// Jacobian. The coordinate-wise Monte Carlo walk crawls along the narrow
/// valleys that few correspondences produce; this finishes the descent.
/// Never returns a point with a higher cost than `start`.
fn levenberg_marquardt(
    points: &[(NormalizedPoint2, NormalizedPoint2)],
    start: &ExtrinsicAngles,
) -> ExtrinsicAngles {
    const H: f64 = 1e-7;
    let sq = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();
    let mut x = *start;
    let mut r = residuals(points, &x);
    let mut c = sq(&r);
    let mut lambda = 1e-3;
    for _ in 0..100 {
        let base = x.angles();
        let mut jac = vec![[0.0; 5]; points.len()];
        for k in 0..5 {
            let (mut up, mut down) = (base, base);
            up[k] += H;
            down[k] -= H;
            let (ru, rd) = (residuals(points, &x.with_angles(up)), residuals(points, &x.with_angles(down)));
            for (row, (u, d)) in jac.iter_mut().zip(ru.iter().zip(&rd)) {
                row[k] = (u - d) / (2.0 * H);
            }
        }
        let mut jtj = SMatrix::<f64, 5, 5>::zeros();
        let mut jtr = SVector::<f64, 5>::zeros();
        for (row, ri) in jac.iter().zip(&r) {
            let j = SVector::<f64, 5>::from_column_slice(row);
            jtj += j * j.transpose();
            jtr += j * *ri;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut damped = jtj;
            for k in 0..5 {
                damped[(k, k)] += lambda * (1.0 + jtj[(k, k)]);
            }
            let Some(step) = damped.cholesky().map(|ch| ch.solve(&-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let mut next = base;
            for (v, s) in next.iter_mut().zip(step.iter()) {
                *v += s;
            }
            let cand = x.with_angles(next);
            let rc = residuals(points, &cand);
            let cc = sq(&rc);
            if cc < c {
                (x, r, c) = (cand, rc, cc);
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved || c < 1e-30 {
            break;
        }
    }
    x
}

/// The four algebraic factorizations `(R, t)` of `E = [t]ₓ R`, with unit `t`.
pub fn pose_candidates(e: &EssentialMatrix) -> [(Matrix3<f64>, Vector3<f64>); 4] {
    let svd = SVD::new(*e.matrix(), true, true);
    let mut u = svd.u.expect("requested U");
    let mut vt = svd.v_t.expect("requested V^T");
    // Move the smallest singular value to the last position.
    let order = crate::geometry::descending_order(&svd.singular_values);
    u = Matrix3::from_columns(&[u.column(order[0]), u.column(order[1]), u.column(order[2])]);
    vt = Matrix3::from_rows(&[vt.row(order[0]), vt.row(order[1]), vt.row(order[2])]);
    if u.determinant() < 0.0 {
        u = -u;
    }
    if vt.determinant() < 0.0 {
        vt = -vt;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let ra = u * w * vt;
    let rb = u * w.transpose() * vt;
    let t: Vector3<f64> = u.column(2).normalize();
    [(ra, t), (ra, -t), (rb, t), (rb, -t)]
}

/// Picks the factor of `E` that puts a clear majority of `corr` in front of
/// both cameras and scales its translation to `baseline`.
pub fn decompose_essential(
    e: &EssentialMatrix,
    baseline: f64,
    corr: &CorrespondenceSet2D,
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
) -> Result<Extrinsics, EssentialError> {
    decompose_essential_with(e, baseline, corr, k1, k2, EssentialConfig::default().cheirality_majority)
}

pub fn decompose_essential_with(
    e: &EssentialMatrix,
    baseline: f64,
    corr: &CorrespondenceSet2D,
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
    majority: f64,
) -> Result<Extrinsics, EssentialError> {
    if !(baseline.is_finite() && baseline > 0.0) {
        return Err(EssentialError::InvalidBaseline(baseline));
    }
    let total = corr.len();
    if total == 0 {
        return Err(EssentialError::AmbiguousCheirality { best: 0, total });
    }
    let mut votes: Vec<(usize, Extrinsics)> = pose_candidates(e)
        .iter()
        .map(|(r, t)| {
            let pose = Extrinsics {
                rotation: *r,
                translation: *t,
            };
            let rig = StereoRig::new(*k1, *k2, pose);
            let count = corr
                .iter()
                .filter(|p| rig.reconstruct(&p.q1, &p.q2).is_ok_and(|rec| rec.in_front))
                .count();
            (count, pose)
        })
        .collect();
    votes.sort_by_key(|v| std::cmp::Reverse(v.0));
    let (best, pose) = votes[0];
    let clear = best > votes[1].0 && best as f64 >= majority * total as f64;
    if !clear {
        return Err(EssentialError::AmbiguousCheirality { best, total });
    }
    Ok(Extrinsics::new_with(
        pose.rotation,
        pose.translation * baseline,
        &crate::geometry::Tolerances {
            orthonormality: 1e-9,
            ..Default::default()
        },
    )?)
}

/// Outcome of the essential method: the estimated matrix, the selected
/// pose, and its angle form.
#[derive(Debug, Clone, PartialEq)]
pub struct EssentialCalibration {
    pub essential: EssentialMatrix,
    pub pose: Extrinsics,
    pub angles: ExtrinsicAngles,
    pub residual_sum: f64,
}

/// Estimate, decompose, and express the pose as angles.
pub fn calibrate_essential(
    corr: &CorrespondenceSet2D,
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
    baseline: f64,
    config: &EssentialConfig,
) -> Result<EssentialCalibration, EssentialError> {
    let est = estimate_essential_with(corr, k1, k2, config)?;
    let pose = decompose_essential_with(&est.essential, baseline, corr, k1, k2, config.cheirality_majority)?;
    let angles = angles_from_pose_locked(&pose.rotation, &pose.translation)?;
    Ok(EssentialCalibration {
        essential: est.essential,
        pose,
        angles,
        residual_sum: est.residual_sum,
    })
}

/// Aligns `b` to `a` in scale and sign and returns the largest entrywise
/// difference.
pub fn aligned_difference(a: &EssentialMatrix, b: &EssentialMatrix) -> f64 {
    let a = a.canonical();
    let b = b.canonical();
    (a.matrix() - b.matrix())
        .amax()
        .min((a.matrix() + b.matrix()).amax())
}
