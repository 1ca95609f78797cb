//! Scoring calibrations on held-out images.
//!
//! Correspondence identification is measured by how much the score
//! distributions of correct and wrong pairs overlap (the false-correspondence
//! probability, FCP); reconstruction by the relative error of the distance
//! between the two bar targets.

use thiserror::Error;

use crate::cost::DEGENERATE_PENALTY;
use crate::dataset::{CorrespondenceSet2D, CorrespondenceSet3D, ImageObservation, PixelPair, Target};
use crate::geometry::{CameraIntrinsics, EssentialMatrix, Extrinsics, Pixel2};
use crate::triangulation::StereoRig;

/// Scores of exactly zero are raised to this before taking `log₁₀`.
pub const LOG_FLOOR: f64 = 1e-15;
/// Upper bound on histogram bins in the FCP estimator.
pub const MAX_BINS: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluationError {
    #[error("image {image} lacks target {target} on camera {camera}")]
    MissingTarget {
        image: usize,
        target: &'static str,
        camera: u8,
    },
    #[error("{0} score list is empty")]
    EmptyScores(&'static str),
}

/// Per-image detections where any of the four points may be missing.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Detections {
    pub a1: Option<Pixel2>,
    pub a2: Option<Pixel2>,
    pub b1: Option<Pixel2>,
    pub b2: Option<Pixel2>,
}

impl From<&ImageObservation> for Detections {
    fn from(img: &ImageObservation) -> Self {
        Self {
            a1: Some(img.a.q1),
            a2: Some(img.a.q2),
            b1: Some(img.b.q1),
            b2: Some(img.b.q2),
        }
    }
}

impl Detections {
    fn get(&self, image: usize, target: Target, camera: u8) -> Result<Pixel2, EvaluationError> {
        let slot = match (target, camera) {
            (Target::A, 1) => self.a1,
            (Target::A, _) => self.a2,
            (Target::B, 1) => self.b1,
            (Target::B, _) => self.b2,
        };
        slot.ok_or(EvaluationError::MissingTarget {
            image,
            target: target.label(),
            camera,
        })
    }
}

/// A pair together with where each of its points came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexedPair {
    /// (image index, target) of the primary-camera point.
    pub first: (usize, Target),
    /// (image index, target) of the secondary-camera point.
    pub second: (usize, Target),
    pub pair: PixelPair,
}

fn make_pair(
    images: &[Detections],
    first: (usize, Target),
    second: (usize, Target),
) -> Result<IndexedPair, EvaluationError> {
    Ok(IndexedPair {
        first,
        second,
        pair: PixelPair::new(
            images[first.0].get(first.0, first.1, 1)?,
            images[second.0].get(second.0, second.1, 2)?,
        ),
    })
}

/// Same target, same image: `(q₁ₖᴬ, q₂ₖᴬ)` and `(q₁ₖᴮ, q₂ₖᴮ)`.
pub fn build_correct_set(images: &[Detections]) -> Result<Vec<IndexedPair>, EvaluationError> {
    let mut out = Vec::with_capacity(2 * images.len());
    for k in 0..images.len() {
        for t in [Target::A, Target::B] {
            out.push(make_pair(images, (k, t), (k, t))?);
        }
    }
    Ok(out)
}

/// Every pairing of validation points that does not image the same target:
/// cross-target pairs within an image, and all cross-image pairs (`j ≠ k`),
/// whether or not the targets match.
pub fn build_wrong_set(images: &[Detections]) -> Result<Vec<IndexedPair>, EvaluationError> {
    use Target::{A, B};
    let n = images.len();
    let mut out = Vec::with_capacity(2 * n + 4 * n * n.saturating_sub(1));
    for k in 0..n {
        out.push(make_pair(images, (k, A), (k, B))?);
        out.push(make_pair(images, (k, B), (k, A))?);
    }
    for j in 0..n {
        for k in (0..n).filter(|&k| k != j) {
            out.push(make_pair(images, (j, A), (k, B))?);
            out.push(make_pair(images, (j, B), (k, A))?);
            out.push(make_pair(images, (j, A), (k, A))?);
            out.push(make_pair(images, (j, B), (k, B))?);
        }
    }
    Ok(out)
}

pub fn to_correspondences(pairs: &[IndexedPair]) -> CorrespondenceSet2D {
    pairs.iter().map(|p| p.pair).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    /// `|q̂₂ᵀ E q̂₁|`.
    Residual,
    /// Sum of the reprojection errors in both cameras.
    Reprojection,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Residual, Metric::Reprojection];

    pub fn tag(self) -> &'static str {
        match self {
            Metric::Residual => "residual",
            Metric::Reprojection => "reprojection",
        }
    }
}

/// One raw score per pair, in input order. Reprojection scores of pairs that
/// cannot be triangulated in front of both cameras are
/// [`DEGENERATE_PENALTY`].
pub fn score_correspondences(
    corr: &CorrespondenceSet2D,
    e: &EssentialMatrix,
    pose: &Extrinsics,
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
    metric: Metric,
) -> Vec<f64> {
    match metric {
        Metric::Residual => corr
            .iter()
            .map(|p| e.residual(&k1.normalize(&p.q1), &k2.normalize(&p.q2)).abs())
            .collect(),
        Metric::Reprojection => {
            let rig = StereoRig::new(*k1, *k2, *pose);
            corr.iter()
                .map(|p| match rig.reprojection(&p.q1, &p.q2) {
                    Ok(((e1, e2), rec)) if rec.in_front && (e1 + e2).is_finite() => e1 + e2,
                    _ => DEGENERATE_PENALTY,
                })
                .collect()
        }
    }
}

/// `log₁₀` with zeros (and negatives) clamped to [`LOG_FLOOR`].
pub fn log_score(x: f64) -> f64 {
    x.max(LOG_FLOOR).log10()
}

/// Log-transformed scores of correct and wrong pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledScores {
    pub correct: Vec<f64>,
    pub wrong: Vec<f64>,
}

impl LabeledScores {
    /// Applies [`log_score`] to raw scores.
    pub fn from_raw(correct: &[f64], wrong: &[f64]) -> Self {
        Self {
            correct: correct.iter().copied().map(log_score).collect(),
            wrong: wrong.iter().copied().map(log_score).collect(),
        }
    }

    pub fn extend(&mut self, other: &LabeledScores) {
        self.correct.extend_from_slice(&other.correct);
        self.wrong.extend_from_slice(&other.wrong);
    }
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

/// Overlap area of the correct and wrong score distributions.
///
/// Both samples are binned on a shared grid spanning the pooled data, with
/// the Freedman-Diaconis width `2·IQR·n^(-1/3)` of the pooled sample; the
/// overlap is `Σ min(f_correct, f_wrong)` over bins of normalized
/// frequencies. Samples with disjoint ranges overlap by exactly zero.
pub fn fcp(scores: &LabeledScores) -> Result<f64, EvaluationError> {
    let c = &scores.correct;
    let w = &scores.wrong;
    if c.is_empty() {
        return Err(EvaluationError::EmptyScores("correct"));
    }
    if w.is_empty() {
        return Err(EvaluationError::EmptyScores("wrong"));
    }
    let range = |v: &[f64]| {
        v.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
    };
    let (c_lo, c_hi) = range(c);
    let (w_lo, w_hi) = range(w);
    if c_hi < w_lo || w_hi < c_lo {
        return Ok(0.0);
    }
    let lo = c_lo.min(w_lo);
    let hi = c_hi.max(w_hi);
    if hi == lo {
        return Ok(1.0);
    }

    let mut pooled: Vec<f64> = c.iter().chain(w.iter()).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let n = pooled.len() as f64;
    let iqr = quantile_sorted(&pooled, 0.75) - quantile_sorted(&pooled, 0.25);
    let mut width = 2.0 * iqr / n.cbrt();
    if !(width.is_finite() && width > 0.0) {
        width = (hi - lo) / n.sqrt().ceil();
    }
    let bins = (((hi - lo) / width).ceil() as usize).clamp(1, MAX_BINS);
    let width = (hi - lo) / bins as f64;

    let histogram = |v: &[f64]| {
        let mut h = vec![0usize; bins];
        for &x in v {
            let i = (((x - lo) / width) as usize).min(bins - 1);
            h[i] += 1;
        }
        h
    };
    let hc = histogram(c);
    let hw = histogram(w);
    let (nc, nw) = (c.len() as f64, w.len() as f64);
    let overlap: f64 = hc
        .iter()
        .zip(&hw)
        .map(|(&a, &b)| (a as f64 / nc).min(b as f64 / nw))
        .sum();
    Ok(overlap.clamp(0.0, 1.0))
}

/// Relative distance error for each entry; entries that cannot be
/// reconstructed in front of both cameras score [`DEGENERATE_PENALTY`].
pub fn percentage_errors(
    corr: &CorrespondenceSet3D,
    pose: &Extrinsics,
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
) -> Vec<f64> {
    let rig = StereoRig::new(*k1, *k2, *pose);
    corr.iter()
        .map(|e| match rig.distance_error((&e.a.q1, &e.a.q2), (&e.b.q1, &e.b.q2), e.distance) {
            Ok(d) if d.in_front && d.pct.is_finite() => d.pct,
            _ => DEGENERATE_PENALTY,
        })
        .collect()
}

/// The three calibration methods under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Essential,
    Min2d,
    Min3d,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Essential, Method::Min2d, Method::Min3d];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Essential => "essential",
            Method::Min2d => "min2d",
            Method::Min3d => "min3d",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| format!("unknown method `{s}` (expected essential, min2d or min3d)"))
    }
}

/// Untransformed scores of correct and wrong pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawScores {
    pub correct: Vec<f64>,
    pub wrong: Vec<f64>,
}

impl RawScores {
    pub fn logged(&self) -> LabeledScores {
        LabeledScores::from_raw(&self.correct, &self.wrong)
    }

    pub fn extend(&mut self, other: &RawScores) {
        self.correct.extend_from_slice(&other.correct);
        self.wrong.extend_from_slice(&other.wrong);
    }
}

/// Pooled results of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub method: Method,
    pub fcp_residual: f64,
    pub fcp_reprojection: f64,
    /// Indexed by `Metric as usize`.
    pub scores: [RawScores; 2],
    pub pct_errors: Vec<f64>,
    pub pct_median: f64,
    pub pct_p90: f64,
}

impl MethodReport {
    pub fn from_samples(
        method: Method,
        residual: RawScores,
        reprojection: RawScores,
        pct_errors: Vec<f64>,
    ) -> Result<Self, EvaluationError> {
        let fcp_residual = fcp(&residual.logged())?;
        let fcp_reprojection = fcp(&reprojection.logged())?;
        let mut sorted = pct_errors.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            method,
            fcp_residual,
            fcp_reprojection,
            scores: [residual, reprojection],
            pct_median: quantile_sorted(&sorted, 0.5),
            pct_p90: quantile_sorted(&sorted, 0.9),
            pct_errors,
        })
    }

    pub fn fcp(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Residual => self.fcp_residual,
            Metric::Reprojection => self.fcp_reprojection,
        }
    }
}

/// Aggregate over all successful runs.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    /// Indexed by [`Method::index`].
    pub methods: [MethodReport; 3],
    pub runs_requested: usize,
    pub runs_failed: Vec<(usize, String)>,
}

impl EvaluationReport {
    pub fn method(&self, m: Method) -> &MethodReport {
        &self.methods[m.index()]
    }

    /// Lowest reprojection FCP; ties go to the earlier method in
    /// [`Method::ALL`].
    pub fn matching_winner(&self) -> Method {
        self.argmin(|r| r.fcp_reprojection)
    }

    /// Lowest median percentage error.
    pub fn reconstruction_winner(&self) -> Method {
        self.argmin(|r| r.pct_median)
    }

    fn argmin(&self, key: impl Fn(&MethodReport) -> f64) -> Method {
        self.methods
            .iter()
            .fold(None::<&MethodReport>, |best, r| match best {
                Some(b) if key(b) <= key(r) => Some(b),
                _ => Some(r),
            })
            .map(|r| r.method)
            .unwrap_or(Method::Essential)
    }

    /// Parameter sets to deploy: reprojection-minimized for matching,
    /// reconstruction-minimized for metric measurement.
    pub fn recommended_pair(&self) -> (Method, Method) {
        (Method::Min2d, Method::Min3d)
    }
}
