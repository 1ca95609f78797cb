//! Text formats for datasets, calibrations and evaluation reports.
//!
//! All files are line-oriented and comma-separated. Floating-point values are
//! written with 17 significant digits, so a write/read cycle reproduces
//! every value bit for bit. `docs/formats.md` has the grammar.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{Dataset, GroundTruth, ImageObservation, PixelPair, Target};
use crate::evaluation::{log_score, EvaluationReport, Method, Metric};
use crate::geometry::{check_rotation, CameraIntrinsics, ExtrinsicAngles, Pixel2, Point3};
use crate::protocol::{Calibration, CalibrationSettings, RunResult};

pub const DATASET_MAGIC: &str = "stereocal-dataset";
pub const CALIBRATION_MAGIC: &str = "stereocal-calibration";
pub const FORMAT_VERSION: u32 = 1;
/// Largest tolerated difference between stored and recomputed derived values.
pub const CONSISTENCY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("schema: {0}")]
    Schema(String),
    #[error("unsupported format header: {0}")]
    Version(String),
    #[error("inconsistent calibration: {0}")]
    Consistency(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn join_f64(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(fmt_f64).collect::<Vec<_>>().join(",")
}

/// One meaningful line split into fields, with its 1-based line number.
struct Record<'a> {
    line: usize,
    fields: Vec<&'a str>,
}

impl<'a> Record<'a> {
    fn err(&self, message: impl Into<String>) -> FormatError {
        FormatError::Parse {
            line: self.line,
            message: message.into(),
        }
    }

    fn key(&self) -> &'a str {
        self.fields[0]
    }

    fn expect_len(&self, n: usize) -> Result<(), FormatError> {
        if self.fields.len() == n {
            Ok(())
        } else {
            Err(self.err(format!(
                "`{}` takes {} values, found {}",
                self.key(),
                n - 1,
                self.fields.len() - 1
            )))
        }
    }

    fn f64_at(&self, i: usize) -> Result<f64, FormatError> {
        let s = self.fields[i];
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.err(format!("field {} of `{}`: `{s}` is not a finite number", i + 1, self.key()))),
        }
    }

    fn floats<const N: usize>(&self, offset: usize) -> Result<[f64; N], FormatError> {
        let mut out = [0.0; N];
        for (i, v) in out.iter_mut().enumerate() {
            *v = self.f64_at(offset + i)?;
        }
        Ok(out)
    }

    fn uint_at<T: std::str::FromStr>(&self, i: usize) -> Result<T, FormatError> {
        let s = self.fields[i];
        s.parse::<T>()
            .map_err(|_| self.err(format!("field {} of `{}`: `{s}` is not a nonnegative integer", i + 1, self.key())))
    }

    fn target_at(&self, i: usize) -> Result<Target, FormatError> {
        match self.fields[i] {
            "A" => Ok(Target::A),
            "B" => Ok(Target::B),
            s => Err(self.err(format!("target `{s}` is neither A nor B"))),
        }
    }
}

/// Strips comments and blank lines, checks the magic line, and returns the
/// remaining records.
fn records<'a>(text: &'a str, magic: &str) -> Result<Vec<Record<'a>>, FormatError> {
    let mut out = text.lines().enumerate().filter_map(|(i, raw)| {
        let l = raw.trim();
        (!l.is_empty() && !l.starts_with('#')).then(|| Record {
            line: i + 1,
            fields: l.split(',').map(str::trim).collect(),
        })
    });
    let first = out.next().ok_or_else(|| FormatError::Version("empty file".into()))?;
    let expected = [magic, &FORMAT_VERSION.to_string()];
    if first.fields != expected {
        return Err(FormatError::Version(format!(
            "line {}: expected `{magic},{FORMAT_VERSION}`, found `{}`",
            first.line,
            first.fields.join(",")
        )));
    }
    Ok(out.collect())
}

/// Key-value header lines, each key at most once.
fn unique_headers<'r, 'a>(
    recs: impl IntoIterator<Item = &'r Record<'a>>,
) -> Result<BTreeMap<&'a str, &'r Record<'a>>, FormatError>
where
    'a: 'r,
{
    let mut map = BTreeMap::new();
    for r in recs {
        if map.insert(r.key(), r).is_some() {
            return Err(FormatError::Schema(format!("duplicate `{}` line (line {})", r.key(), r.line)));
        }
    }
    Ok(map)
}

fn required<'r, 'a>(
    map: &BTreeMap<&'a str, &'r Record<'a>>,
    key: &str,
) -> Result<&'r Record<'a>, FormatError> {
    map.get(key)
        .copied()
        .ok_or_else(|| FormatError::Schema(format!("missing `{key}` line")))
}

// ---------------------------------------------------------------- datasets

pub fn write_dataset_string(ds: &Dataset) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{DATASET_MAGIC},{FORMAT_VERSION}");
    let _ = writeln!(s, "baseline,{}", fmt_f64(ds.baseline));
    let _ = writeln!(s, "distance,{}", fmt_f64(ds.distance));
    for (cam, k) in [(1, &ds.k1), (2, &ds.k2)] {
        let _ = writeln!(s, "intrinsics{cam},{}", join_f64([k.omega, k.skew, k.u0, k.v0]));
    }
    let _ = writeln!(s, "images,{}", ds.images.len());
    if let Some(t) = &ds.truth {
        let mut v = t.angles.angles().to_vec();
        v.push(t.angles.baseline);
        let _ = writeln!(s, "truth_pose,{}", join_f64(v));
        for (k, (a, b)) in t.targets.iter().enumerate() {
            for (label, p) in [("A", a), ("B", b)] {
                let _ = writeln!(s, "truth_target,{k},{label},{}", join_f64([p.x, p.y, p.z]));
            }
        }
    }
    let _ = writeln!(s, "points");
    for (k, img) in ds.images.iter().enumerate() {
        for t in [Target::A, Target::B] {
            let pair = img.target(t);
            for (cam, q) in [(1, pair.q1), (2, pair.q2)] {
                let _ = writeln!(s, "{k},{},{cam},{}", t.label(), join_f64([q.u, q.v]));
            }
        }
    }
    s
}

pub fn read_dataset_str(text: &str) -> Result<Dataset, FormatError> {
    let recs = records(text, DATASET_MAGIC)?;
    let split = recs
        .iter()
        .position(|r| r.fields == ["points"])
        .ok_or_else(|| FormatError::Schema("missing `points` line".into()))?;
    let (header, rows) = (&recs[..split], &recs[split + 1..]);

    let mut truth_targets = Vec::new();
    let mut plain = Vec::new();
    for r in header {
        match r.key() {
            "baseline" | "distance" | "intrinsics1" | "intrinsics2" | "images" | "truth_pose" => plain.push(r),
            "truth_target" => truth_targets.push(r),
            "points" => return Err(FormatError::Schema(format!("duplicate `points` line (line {})", r.line))),
            k => return Err(r.err(format!("unknown key `{k}`"))),
        }
    }
    let h = unique_headers(plain)?;

    let scalar = |key: &str| -> Result<f64, FormatError> {
        let r = required(&h, key)?;
        r.expect_len(2)?;
        r.f64_at(1)
    };
    let baseline = scalar("baseline")?;
    let distance = scalar("distance")?;
    let intrinsics = |key: &str| -> Result<CameraIntrinsics, FormatError> {
        let r = required(&h, key)?;
        r.expect_len(5)?;
        let [omega, skew, u0, v0] = r.floats::<4>(1)?;
        CameraIntrinsics::new(omega, skew, u0, v0).map_err(|e| FormatError::Schema(format!("`{key}`: {e}")))
    };
    let k1 = intrinsics("intrinsics1")?;
    let k2 = intrinsics("intrinsics2")?;
    let n_images: usize = {
        let r = required(&h, "images")?;
        r.expect_len(2)?;
        r.uint_at(1)?
    };

    // (image, target, camera) -> pixel
    let mut grid: Vec<[Option<Pixel2>; 4]> = vec![[None; 4]; n_images];
    for r in rows {
        r.expect_len(5)?;
        let k: usize = r.uint_at(0)?;
        let t = r.target_at(1)?;
        let cam: u8 = r.uint_at(2)?;
        if !(cam == 1 || cam == 2) {
            return Err(r.err(format!("camera `{cam}` is neither 1 nor 2")));
        }
        let [u, v] = r.floats::<2>(3)?;
        if k >= n_images {
            return Err(FormatError::Schema(format!(
                "line {}: image {k} outside the declared {n_images} images",
                r.line
            )));
        }
        let slot = &mut grid[k][2 * (t as usize) + (cam as usize - 1)];
        if slot.is_some() {
            return Err(FormatError::Schema(format!(
                "duplicate point (image {k}, target {}, camera {cam}) at line {}",
                t.label(),
                r.line
            )));
        }
        *slot = Some(Pixel2::new(u, v));
    }
    let mut images = Vec::with_capacity(n_images);
    for (k, g) in grid.iter().enumerate() {
        let get = |i: usize| {
            g[i].ok_or_else(|| {
                FormatError::Schema(format!(
                    "missing point (image {k}, target {}, camera {})",
                    if i < 2 { "A" } else { "B" },
                    i % 2 + 1
                ))
            })
        };
        images.push(ImageObservation {
            a: PixelPair::new(get(0)?, get(1)?),
            b: PixelPair::new(get(2)?, get(3)?),
        });
    }

    let truth = match h.get("truth_pose") {
        None if truth_targets.is_empty() => None,
        None => return Err(FormatError::Schema("`truth_target` lines without `truth_pose`".into())),
        Some(r) => {
            r.expect_len(7)?;
            let v = r.floats::<6>(1)?;
            let angles = ExtrinsicAngles::new(v[0], v[1], v[2], v[3], v[4], v[5])
                .map_err(|e| FormatError::Schema(format!("`truth_pose`: {e}")))?;
            let mut pts: Vec<[Option<Point3>; 2]> = vec![[None; 2]; n_images];
            for r in &truth_targets {
                r.expect_len(6)?;
                let k: usize = r.uint_at(1)?;
                let t = r.target_at(2)?;
                let [x, y, z] = r.floats::<3>(3)?;
                if k >= n_images {
                    return Err(FormatError::Schema(format!(
                        "line {}: truth for image {k} outside the declared {n_images} images",
                        r.line
                    )));
                }
                let slot = &mut pts[k][t as usize];
                if slot.is_some() {
                    return Err(FormatError::Schema(format!(
                        "duplicate truth target (image {k}, target {}) at line {}",
                        t.label(),
                        r.line
                    )));
                }
                *slot = Some(Point3::new(x, y, z));
            }
            let targets = pts
                .iter()
                .enumerate()
                .map(|(k, p)| match p {
                    [Some(a), Some(b)] => Ok((*a, *b)),
                    _ => Err(FormatError::Schema(format!("missing truth target for image {k}"))),
                })
                .collect::<Result<_, _>>()?;
            Some(GroundTruth { angles, targets })
        }
    };

    let ds = Dataset {
        k1,
        k2,
        baseline,
        distance,
        images,
        truth,
    };
    ds.validate().map_err(|e| FormatError::Schema(e.to_string()))?;
    Ok(ds)
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<(), FormatError> {
    Ok(std::fs::write(path, write_dataset_string(ds))?)
}

pub fn read_dataset(path: &Path) -> Result<Dataset, FormatError> {
    read_dataset_str(&std::fs::read_to_string(path)?)
}

// ------------------------------------------------------------ calibrations

/// Hex SHA-256 of the settings' canonical text.
pub fn config_hash(settings: &CalibrationSettings) -> String {
    Sha256::digest(settings.fingerprint().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// A stored calibration: the angles plus the derived pose and essential
/// matrix, and where the result came from.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRecord {
    pub method: Method,
    pub angles: ExtrinsicAngles,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// Canonical scale and sign.
    pub essential: Matrix3<f64>,
    pub seed: u64,
    pub config_hash: String,
}

impl CalibrationRecord {
    pub fn from_angles(method: Method, angles: ExtrinsicAngles, seed: u64, config_hash: String) -> Self {
        let pose = angles.to_extrinsics();
        Self {
            method,
            angles,
            rotation: pose.rotation,
            translation: pose.translation,
            essential: *angles.essential().canonical().matrix(),
            seed,
            config_hash,
        }
    }

    pub fn from_calibration(cal: &Calibration, config_hash: String) -> Self {
        Self {
            method: cal.method,
            angles: cal.angles,
            rotation: cal.pose.rotation,
            translation: cal.pose.translation,
            essential: *cal.essential.canonical().matrix(),
            seed: cal.seed,
            config_hash,
        }
    }

    /// Checks the stored derived values against the ones recomputed from
    /// the angles.
    pub fn check_consistency(&self) -> Result<(), FormatError> {
        let bad = |what: &str, d: f64| {
            FormatError::Consistency(format!("stored {what} differs from the angles' by {d:.3e}"))
        };
        check_rotation(&self.rotation, CONSISTENCY_TOL)
            .map_err(|e| FormatError::Consistency(format!("R: {e}")))?;
        let d = (self.rotation - self.angles.rotation()).amax();
        if d > CONSISTENCY_TOL {
            return Err(bad("R", d));
        }
        let d = (self.translation - self.angles.translation()).amax();
        if d > CONSISTENCY_TOL {
            return Err(bad("T", d));
        }
        let want = self.angles.essential().canonical();
        let d = (self.essential - want.matrix()).amax();
        if d > CONSISTENCY_TOL {
            return Err(bad("E", d));
        }
        Ok(())
    }
}

pub fn write_calibration_string(rec: &CalibrationRecord) -> String {
    let a = &rec.angles;
    let mut s = String::new();
    let _ = writeln!(s, "{CALIBRATION_MAGIC},{FORMAT_VERSION}");
    let _ = writeln!(s, "method,{}", rec.method.tag());
    let _ = writeln!(s, "angles,{}", join_f64(a.angles()));
    let _ = writeln!(s, "baseline,{}", fmt_f64(a.baseline));
    let _ = writeln!(s, "R,{}", join_f64(rec.rotation.transpose().iter().copied()));
    let _ = writeln!(s, "T,{}", join_f64(rec.translation.iter().copied()));
    let _ = writeln!(s, "E,{}", join_f64(rec.essential.transpose().iter().copied()));
    let _ = writeln!(s, "seed,{}", rec.seed);
    let _ = writeln!(s, "config_hash,{}", rec.config_hash);
    s
}

pub fn read_calibration_str(text: &str) -> Result<CalibrationRecord, FormatError> {
    let recs = records(text, CALIBRATION_MAGIC)?;
    for r in &recs {
        if !matches!(r.key(), "method" | "angles" | "baseline" | "R" | "T" | "E" | "seed" | "config_hash") {
            return Err(r.err(format!("unknown key `{}`", r.key())));
        }
    }
    let h = unique_headers(&recs)?;
    let get = |key: &str, n: usize| -> Result<&Record<'_>, FormatError> {
        let r = required(&h, key)?;
        r.expect_len(n + 1)?;
        Ok(r)
    };

    let r = get("method", 1)?;
    let method: Method = r.fields[1].parse().map_err(|e: String| r.err(e))?;
    let angles = get("angles", 5)?.floats::<5>(1)?;
    let baseline = get("baseline", 1)?.f64_at(1)?;
    let angles = ExtrinsicAngles::from_array(angles, baseline)
        .map_err(|e| FormatError::Schema(format!("angles/baseline: {e}")))?;
    let rot = get("R", 9)?.floats::<9>(1)?;
    let t = get("T", 3)?.floats::<3>(1)?;
    let e = get("E", 9)?.floats::<9>(1)?;
    let seed: u64 = get("seed", 1)?.uint_at(1)?;
    let r = get("config_hash", 1)?;
    let config_hash = r.fields[1].to_owned();
    if config_hash.is_empty() {
        return Err(r.err("empty config hash"));
    }

    let rec = CalibrationRecord {
        method,
        angles,
        rotation: Matrix3::from_row_slice(&rot),
        translation: Vector3::from(t),
        essential: Matrix3::from_row_slice(&e),
        seed,
        config_hash,
    };
    rec.check_consistency()?;
    Ok(rec)
}

pub fn write_calibration(rec: &CalibrationRecord, path: &Path) -> Result<(), FormatError> {
    Ok(std::fs::write(path, write_calibration_string(rec))?)
}

pub fn read_calibration(path: &Path) -> Result<CalibrationRecord, FormatError> {
    read_calibration_str(&std::fs::read_to_string(path)?)
}

// ----------------------------------------------------------------- reports

/// `method,fcp_residual,fcp_reprojection` rows.
pub fn fcp_table_csv(report: &EvaluationReport) -> String {
    let mut s = String::from("method,fcp_residual,fcp_reprojection\n");
    for m in &report.methods {
        let _ = writeln!(s, "{},{},{}", m.method, fmt_f64(m.fcp_residual), fmt_f64(m.fcp_reprojection));
    }
    s
}

/// `run,image,pct_error` rows for one method.
pub fn pct_errors_csv(runs: &[RunResult], method: Method) -> String {
    let mut s = String::from("run,image,pct_error\n");
    for r in runs {
        let pct = &r.methods[method.index()].pct_errors;
        for (img, p) in r.split.validation.iter().zip(pct) {
            let _ = writeln!(s, "{},{img},{}", r.run, fmt_f64(*p));
        }
    }
    s
}

/// `run,score,log10_score` rows for one method, metric and label
/// (`correct` or `wrong`).
pub fn scores_csv(runs: &[RunResult], method: Method, metric: Metric, correct: bool) -> String {
    let mut s = String::from("run,score,log10_score\n");
    for r in runs {
        let scores = &r.methods[method.index()].scores[metric as usize];
        let list = if correct { &scores.correct } else { &scores.wrong };
        for x in list {
            let _ = writeln!(s, "{},{},{}", r.run, fmt_f64(*x), fmt_f64(log_score(*x)));
        }
    }
    s
}

/// Key-value summary of an evaluation.
pub fn summary_text(report: &EvaluationReport, header: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in header {
        let _ = writeln!(s, "{k} = {v}");
    }
    let _ = writeln!(s, "runs_requested = {}", report.runs_requested);
    let _ = writeln!(s, "runs_failed = {}", report.runs_failed.len());
    for (run, e) in &report.runs_failed {
        let _ = writeln!(s, "run_failure.{run} = {e}");
    }
    let _ = writeln!(s, "score_pooling = wrong and correct sets built per run, samples pooled over runs");
    for m in &report.methods {
        let t = m.method.tag();
        let _ = writeln!(s, "{t}.fcp_residual = {:.6}", m.fcp_residual);
        let _ = writeln!(s, "{t}.fcp_reprojection = {:.6}", m.fcp_reprojection);
        let _ = writeln!(s, "{t}.pct_error_median = {:.6e}", m.pct_median);
        let _ = writeln!(s, "{t}.pct_error_p90 = {:.6e}", m.pct_p90);
        let _ = writeln!(s, "{t}.pct_error_samples = {}", m.pct_errors.len());
    }
    let _ = writeln!(s, "winner.matching = {}", report.matching_winner());
    let _ = writeln!(s, "winner.reconstruction = {}", report.reconstruction_winner());
    let (matching, reconstruction) = report.recommended_pair();
    let _ = writeln!(s, "recommended.matching = {matching}");
    let _ = writeln!(s, "recommended.reconstruction = {reconstruction}");
    s
}
