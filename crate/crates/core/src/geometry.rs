//! Pinhole-camera primitives for a canonical two-camera rig.
//!
//! Conventions used throughout the crate:
//!
//! * Camera frames are right-handed: `x` to the right, `y` down, `z` along
//!   the optical axis.
//! * The world frame is the primary camera frame. A point `p` expressed in
//!   the world frame maps into the secondary camera frame as `R * p + T`, so
//!   the secondary projection matrix is `K2 [R | T]` and its optical center
//!   sits at `-Rᵀ T` in world coordinates.
//! * The essential matrix is `E = [t]ₓ R` with `t = T / |T|`, and a correct
//!   pair of normalized points satisfies `q̂₂ᵀ E q̂₁ = 0`.

use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4, SVD};
use thiserror::Error;

pub type Point3 = nalgebra::Point3<f64>;

/// Entrywise tolerance on `RᵀR = I` and `det R = 1`.
pub const ORTHONORMALITY_TOL: f64 = 1e-12;
/// Relative tolerance on the singular-value structure of an essential matrix.
pub const ESSENTIAL_TOL: f64 = 1e-9;
/// `|cos β|` below which the yaw/roll split is not unique.
pub const GIMBAL_TOL: f64 = 1e-9;
/// Absolute tolerance on the homogeneous scale of a projected point.
pub const INFINITY_TOL: f64 = 1e-15;
/// Tolerance on `|t| = 1` for unit translation directions.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// Numerical tolerances for the validating constructors.
///
/// The module constants are the defaults; callers that need looser or
/// tighter checks pass their own values to the `*_with` variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub orthonormality: f64,
    pub essential: f64,
    pub gimbal: f64,
    pub infinity: f64,
    pub unit_norm: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            orthonormality: ORTHONORMALITY_TOL,
            essential: ESSENTIAL_TOL,
            gimbal: GIMBAL_TOL,
            infinity: INFINITY_TOL,
            unit_norm: UNIT_NORM_TOL,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point projects to infinity (homogeneous scale {0:e})")]
    PointAtInfinity(f64),
    #[error("pitch at gimbal lock (|cos beta| = {cos_beta:e}); yaw and roll are not unique")]
    GimbalLock { cos_beta: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),
    #[error("invalid translation: {0}")]
    InvalidTranslation(String),
    #[error("invalid projection matrix: {0}")]
    InvalidProjection(String),
    #[error("not an essential matrix: {0}")]
    NotEssential(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Image point in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel2 {
    pub u: f64,
    pub v: f64,
}

impl Pixel2 {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &Pixel2) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// Image point after removing the intrinsics, `K⁻¹ (u, v, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedPoint2 {
    pub x: f64,
    pub y: f64,
}

impl NormalizedPoint2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Homogeneous vector `(x, y, 1)`.
    pub fn homogeneous(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, 1.0)
    }
}

/// Projective 2D point `(ū, v̄, w̄)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homogeneous2(pub Vector3<f64>);

impl Homogeneous2 {
    /// Returns `None` when the last component is zero.
    pub fn dehomogenize(&self) -> Option<Pixel2> {
        let w = self.0.z;
        (w != 0.0).then(|| Pixel2::new(self.0.x / w, self.0.y / w))
    }
}

/// Projective 3D point `(X̄, Ȳ, Z̄, W̄)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homogeneous3(pub Vector4<f64>);

impl Homogeneous3 {
    pub fn from_point(p: &Point3) -> Self {
        Self(p.to_homogeneous())
    }

    pub fn dehomogenize(&self) -> Option<Point3> {
        Point3::from_homogeneous(self.0)
    }
}

/// Internal camera parameters: focal length in pixels, skew and principal point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub omega: f64,
    pub skew: f64,
    pub u0: f64,
    pub v0: f64,
}

impl CameraIntrinsics {
    pub fn new(omega: f64, skew: f64, u0: f64, v0: f64) -> Result<Self, GeometryError> {
        let k = Self {
            omega,
            skew,
            u0,
            v0,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if ![self.omega, self.skew, self.u0, self.v0]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(GeometryError::NonFinite("intrinsics"));
        }
        if self.omega <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal length must be positive, got {}",
                self.omega
            )));
        }
        Ok(())
    }

    /// The upper-triangular `K` matrix.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.omega, self.skew, self.u0, //
            0.0, self.omega, self.v0, //
            0.0, 0.0, 1.0,
        )
    }

    /// `K⁻¹ (u, v, 1)`, solved by back substitution on the triangular `K`.
    pub fn normalize(&self, q: &Pixel2) -> NormalizedPoint2 {
        let y = (q.v - self.v0) / self.omega;
        let x = (q.u - self.u0 - self.skew * y) / self.omega;
        NormalizedPoint2::new(x, y)
    }

    /// `K (x, y, 1)`.
    pub fn denormalize(&self, n: &NormalizedPoint2) -> Pixel2 {
        Pixel2::new(
            self.omega * n.x + self.skew * n.y + self.u0,
            self.omega * n.y + self.v0,
        )
    }
}

pub fn normalize(k: &CameraIntrinsics, q: &Pixel2) -> NormalizedPoint2 {
    k.normalize(q)
}

/// Rotation about the x axis (right-hand rule).
pub fn rot_x(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Rotation about the y axis (right-hand rule).
pub fn rot_y(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Rotation about the z axis (right-hand rule).
pub fn rot_z(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// `R = R_y(alpha) · R_x(beta) · R_z(gamma)`: yaw, then pitch, then roll.
pub fn rotation_from_angles(alpha: f64, beta: f64, gamma: f64) -> Matrix3<f64> {
    rot_y(alpha) * rot_x(beta) * rot_z(gamma)
}

/// Unit direction `(cos δ cos ε, cos δ sin ε, sin δ)` scaled by the baseline.
pub fn translation_from_angles(delta: f64, epsilon: f64, baseline: f64) -> Vector3<f64> {
    let (sd, cd) = delta.sin_cos();
    let (se, ce) = epsilon.sin_cos();
    Vector3::new(cd * ce, cd * se, sd) * baseline
}

/// Cross-product matrix: `cross_matrix(t) * v == t × v`.
pub fn cross_matrix(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -t.z, t.y, //
        t.z, 0.0, -t.x, //
        -t.y, t.x, 0.0,
    )
}

/// Yaw, pitch, roll, the two translation-direction angles, and the
/// measured baseline. The baseline is a fixed scale, never optimized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtrinsicAngles {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub baseline: f64,
}

impl ExtrinsicAngles {
    pub fn new(
        alpha: f64,
        beta: f64,
        gamma: f64,
        delta: f64,
        epsilon: f64,
        baseline: f64,
    ) -> Result<Self, GeometryError> {
        let a = Self {
            alpha,
            beta,
            gamma,
            delta,
            epsilon,
            baseline,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn from_array(angles: [f64; 5], baseline: f64) -> Result<Self, GeometryError> {
        let [a, b, g, d, e] = angles;
        Self::new(a, b, g, d, e, baseline)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !self.angles().iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("angles"));
        }
        if !(self.baseline.is_finite() && self.baseline > 0.0) {
            return Err(GeometryError::InvalidTranslation(format!(
                "baseline must be positive, got {}",
                self.baseline
            )));
        }
        Ok(())
    }

    /// The five free angles in `(alpha, beta, gamma, delta, epsilon)` order.
    pub fn angles(&self) -> [f64; 5] {
        [self.alpha, self.beta, self.gamma, self.delta, self.epsilon]
    }

    /// Same baseline, new angles.
    pub fn with_angles(&self, angles: [f64; 5]) -> Self {
        let [alpha, beta, gamma, delta, epsilon] = angles;
        Self {
            alpha,
            beta,
            gamma,
            delta,
            epsilon,
            baseline: self.baseline,
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_from_angles(self.alpha, self.beta, self.gamma)
    }

    pub fn translation(&self) -> Vector3<f64> {
        translation_from_angles(self.delta, self.epsilon, self.baseline)
    }

    pub fn direction(&self) -> Vector3<f64> {
        translation_from_angles(self.delta, self.epsilon, 1.0)
    }

    /// Builds `[R | T]` without re-validating: the parametrization always
    /// yields a proper rotation.
    pub fn to_extrinsics(&self) -> Extrinsics {
        Extrinsics {
            rotation: self.rotation(),
            translation: self.translation(),
        }
    }

    pub fn essential(&self) -> EssentialMatrix {
        EssentialMatrix(cross_matrix(&self.direction()) * self.rotation())
    }
}

/// Secondary-camera pose `[R | T]` relative to the primary camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Extrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        Self::new_with(rotation, translation, &Tolerances::default())
    }

    pub fn new_with(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        tol: &Tolerances,
    ) -> Result<Self, GeometryError> {
        check_rotation(&rotation, tol.orthonormality)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("translation"));
        }
        if translation.norm() <= 0.0 {
            return Err(GeometryError::InvalidTranslation(
                "translation must be nonzero".into(),
            ));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn baseline(&self) -> f64 {
        self.translation.norm()
    }

    /// Unit translation direction `t = T / |T|`.
    pub fn direction(&self) -> Vector3<f64> {
        self.translation / self.translation.norm()
    }

    /// Secondary optical center in world (primary) coordinates: `-Rᵀ T`.
    pub fn center(&self) -> Point3 {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    /// World point expressed in the secondary camera frame.
    pub fn transform(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn essential(&self) -> EssentialMatrix {
        EssentialMatrix(cross_matrix(&self.direction()) * self.rotation)
    }
}

/// Checks `RᵀR = I` entrywise and `det R = +1`.
pub fn check_rotation(r: &Matrix3<f64>, tol: f64) -> Result<(), GeometryError> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::NonFinite("rotation"));
    }
    let dev = (r.transpose() * r - Matrix3::identity()).amax();
    if dev > tol {
        return Err(GeometryError::InvalidRotation(format!(
            "RᵀR deviates from identity by {dev:e}"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > tol {
        return Err(GeometryError::InvalidRotation(format!(
            "determinant is {det}, expected +1"
        )));
    }
    Ok(())
}

/// The 3×4 matrix `P = K [R | T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionMatrix(Matrix3x4<f64>);

impl ProjectionMatrix {
    pub fn new(p: Matrix3x4<f64>) -> Result<Self, GeometryError> {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("projection matrix"));
        }
        let left = p.fixed_view::<3, 3>(0, 0).into_owned();
        let sv = left.singular_values();
        if sv[2] <= f64::EPSILON * sv[0].max(f64::MIN_POSITIVE) * 3.0 {
            return Err(GeometryError::InvalidProjection(
                "left 3x3 block is rank deficient".into(),
            ));
        }
        Ok(Self(p))
    }

    /// `K [R | T]` for arbitrary rotation and translation.
    pub fn from_parts(k: &CameraIntrinsics, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Self {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation);
        rt.set_column(3, translation);
        Self(k.matrix() * rt)
    }

    /// `K [I | 0]`, the primary camera of a canonical rig.
    pub fn primary(k: &CameraIntrinsics) -> Self {
        Self::from_parts(k, &Matrix3::identity(), &Vector3::zeros())
    }

    /// `K [R | T]` for the secondary camera.
    pub fn secondary(k: &CameraIntrinsics, pose: &Extrinsics) -> Self {
        Self::from_parts(k, &pose.rotation, &pose.translation)
    }

    pub fn matrix(&self) -> &Matrix3x4<f64> {
        &self.0
    }

    pub fn project_homogeneous(&self, q: &Homogeneous3) -> Homogeneous2 {
        Homogeneous2(self.0 * q.0)
    }

    /// Pixel image of `q`. Points behind the camera still dehomogenize;
    /// only a vanishing third component is an error.
    pub fn project(&self, q: &Point3) -> Result<Pixel2, GeometryError> {
        let h = self.0 * q.to_homogeneous();
        if h.z.abs() <= INFINITY_TOL {
            return Err(GeometryError::PointAtInfinity(h.z));
        }
        Ok(Pixel2::new(h.x / h.z, h.y / h.z))
    }
}

pub fn project(p: &ProjectionMatrix, q: &Point3) -> Result<Pixel2, GeometryError> {
    p.project(q)
}

/// A 3×3 matrix with singular values proportional to `(1, 1, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix(pub(crate) Matrix3<f64>);

impl EssentialMatrix {
    /// Wraps `m` after checking the singular-value structure.
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        Self::new_with(m, ESSENTIAL_TOL)
    }

    pub fn new_with(m: Matrix3<f64>, tol: f64) -> Result<Self, GeometryError> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("essential matrix"));
        }
        let norm = m.norm();
        if norm == 0.0 {
            return Err(GeometryError::NotEssential("zero matrix".into()));
        }
        let sv = sorted_singular_values(&m);
        if (sv[0] - sv[1]).abs() > tol * sv[0] {
            return Err(GeometryError::NotEssential(format!(
                "nonzero singular values differ: {} vs {}",
                sv[0], sv[1]
            )));
        }
        if sv[2] > tol * norm {
            return Err(GeometryError::NotEssential(format!(
                "third singular value {:e} is not zero",
                sv[2]
            )));
        }
        if m.determinant().abs() > tol * norm.powi(3) {
            return Err(GeometryError::NotEssential("determinant is not zero".into()));
        }
        Ok(Self(m))
    }

    /// `[t]ₓ R` for a rotation and a unit direction.
    pub fn from_pose(rotation: &Matrix3<f64>, t: &Vector3<f64>) -> Result<Self, GeometryError> {
        if (t.norm() - 1.0).abs() > UNIT_NORM_TOL {
            return Err(GeometryError::InvalidTranslation(format!(
                "direction must be unit length, got |t| = {}",
                t.norm()
            )));
        }
        Ok(Self(cross_matrix(t) * rotation))
    }

    /// Projects an arbitrary matrix onto the essential manifold by
    /// replacing its singular values with `(1, 1, 0)`.
    pub fn project_from(m: &Matrix3<f64>) -> Result<Self, GeometryError> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("essential matrix"));
        }
        let svd = SVD::new(*m, true, true);
        let (u, vt) = match (svd.u, svd.v_t) {
            (Some(u), Some(vt)) => (u, vt),
            _ => return Err(GeometryError::NotEssential("SVD failed".into())),
        };
        let order = descending_order(&svd.singular_values);
        let mut out = Matrix3::zeros();
        for &i in &order[..2] {
            out += u.column(i) * vt.row(i);
        }
        Ok(Self(out).canonical())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        Self(self.0 * lambda)
    }

    /// Representative with `‖E‖_F = √2` and the first significant entry
    /// (row-major) positive.
    pub fn canonical(&self) -> Self {
        let norm = self.0.norm();
        if norm == 0.0 {
            return *self;
        }
        let mut m = self.0 * (std::f64::consts::SQRT_2 / norm);
        let lead = m
            .transpose()
            .iter()
            .copied()
            .find(|v| v.abs() > 1e-12 * std::f64::consts::SQRT_2)
            .unwrap_or(1.0);
        if lead < 0.0 {
            m = -m;
        }
        Self(m)
    }

    /// Epipolar residual `q̂₂ᵀ E q̂₁` (signed).
    pub fn residual(&self, q1: &NormalizedPoint2, q2: &NormalizedPoint2) -> f64 {
        q2.homogeneous().dot(&(self.0 * q1.homogeneous()))
    }

    /// Singular values in descending order.
    pub fn singular_values(&self) -> [f64; 3] {
        sorted_singular_values(&self.0)
    }
}

pub fn essential_from_pose(
    rotation: &Matrix3<f64>,
    t: &Vector3<f64>,
) -> Result<EssentialMatrix, GeometryError> {
    EssentialMatrix::from_pose(rotation, t)
}

pub fn residual(e: &EssentialMatrix, q1: &NormalizedPoint2, q2: &NormalizedPoint2) -> f64 {
    e.residual(q1, q2)
}

pub(crate) fn sorted_singular_values(m: &Matrix3<f64>) -> [f64; 3] {
    let sv = m.singular_values();
    let mut s = [sv[0], sv[1], sv[2]];
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub(crate) fn descending_order(sv: &Vector3<f64>) -> [usize; 3] {
    let mut idx = [0, 1, 2];
    idx.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    idx
}

/// Inverts the angle parametrization of `[R | T]`.
///
/// `beta` and `delta` come back in `[-π/2, π/2]`, the others in `(-π, π]`.
/// Fails with [`GeometryError::GimbalLock`] when `|cos β|` is below
/// [`GIMBAL_TOL`]; [`angles_from_pose_locked`] resolves that case.
pub fn angles_from_pose(
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
) -> Result<ExtrinsicAngles, GeometryError> {
    let (alpha, beta, gamma) = yaw_pitch_roll(rotation, GIMBAL_TOL)?;
    finish_angles(alpha, beta, gamma, translation)
}

/// Like [`angles_from_pose`], but at gimbal lock sets `gamma = 0` and folds
/// the remaining rotation into `alpha`.
pub fn angles_from_pose_locked(
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
) -> Result<ExtrinsicAngles, GeometryError> {
    match yaw_pitch_roll(rotation, GIMBAL_TOL) {
        Ok((a, b, g)) => finish_angles(a, b, g, translation),
        Err(GeometryError::GimbalLock { .. }) => {
            let r = rotation;
            let sb = (-r[(1, 2)]).clamp(-1.0, 1.0);
            let beta = sb.signum() * std::f64::consts::FRAC_PI_2;
            // With gamma = 0: R00 = cos α, R20 = -sin α.
            let alpha = (-r[(2, 0)]).atan2(r[(0, 0)]);
            finish_angles(alpha, beta, 0.0, translation)
        }
        Err(e) => Err(e),
    }
}

fn yaw_pitch_roll(r: &Matrix3<f64>, gimbal_tol: f64) -> Result<(f64, f64, f64), GeometryError> {
    check_rotation(r, 1e-9)?;
    // Row 1 of R_y(α) R_x(β) R_z(γ) is (cos β sin γ, cos β cos γ, -sin β).
    let sb = (-r[(1, 2)]).clamp(-1.0, 1.0);
    let cb = r[(1, 0)].hypot(r[(1, 1)]);
    if cb < gimbal_tol {
        return Err(GeometryError::GimbalLock { cos_beta: cb });
    }
    let beta = sb.atan2(cb);
    let alpha = r[(0, 2)].atan2(r[(2, 2)]);
    let gamma = r[(1, 0)].atan2(r[(1, 1)]);
    Ok((alpha, beta, gamma))
}

fn finish_angles(
    alpha: f64,
    beta: f64,
    gamma: f64,
    translation: &Vector3<f64>,
) -> Result<ExtrinsicAngles, GeometryError> {
    let baseline = translation.norm();
    if !(baseline.is_finite() && baseline > 0.0) {
        return Err(GeometryError::InvalidTranslation(
            "translation must be nonzero and finite".into(),
        ));
    }
    let t = translation / baseline;
    let delta = t.z.clamp(-1.0, 1.0).asin();
    let epsilon = if t.x.hypot(t.y) < GIMBAL_TOL {
        0.0
    } else {
        t.y.atan2(t.x)
    };
    ExtrinsicAngles::new(alpha, beta, gamma, delta, epsilon, baseline)
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}
