//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run with `cargo test -p stereocal-core --test acceptance`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

use stereocal::cost::ReprojectionCost;
use stereocal::essential::decompose_essential;
use stereocal::evaluation::{fcp, percentage_errors, LabeledScores, Method};
use stereocal::formats::{
    read_calibration_str, read_dataset_str, write_calibration_string, write_dataset_string,
    CalibrationRecord, FormatError,
};
use stereocal::geometry::essential_from_pose;
use stereocal::protocol::{calibrate_all, run_protocol, CalibrationSettings, RunConfig};
use stereocal::scene::{generate, SceneConfig};
use stereocal::triangulation::{triangulate, Ray3};
use stereocal::{
    minimize, CameraIntrinsics, CorrespondenceSet2D, Dataset, ExtrinsicAngles, MonteCarloConfig,
    PixelPair, Point3, StereoRig,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn max_angle_diff(a: &ExtrinsicAngles, b: &ExtrinsicAngles) -> f64 {
    a.angles()
        .iter()
        .zip(b.angles())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn zero_noise_exactness() -> Outcome {
    let mut worst_angle = 0.0f64;
    let mut worst_pct = 0.0f64;
    let mut slowest = Duration::ZERO;
    for seed in 0..20 {
        let start = Instant::now();
        let ds = generate(&SceneConfig {
            noise_sigma: 0.0,
            seed,
            ..SceneConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let truth = ds.truth.as_ref().unwrap().angles;
        let idx = ds.all_indices();
        let cals = calibrate_all(&ds, &idx, seed, &CalibrationSettings::default())
            .map_err(|e| format!("seed {seed}: {e}"))?;
        let corr3 = ds.correspondences_3d(&idx).unwrap();
        for cal in &cals {
            worst_angle = worst_angle.max(max_angle_diff(&cal.angles, &truth));
            let pct = percentage_errors(&corr3, &cal.pose, &ds.k1, &ds.k2);
            worst_pct = pct.into_iter().fold(worst_pct, f64::max);
        }
        slowest = slowest.max(start.elapsed());
    }
    check(
        worst_angle < 1e-4 && worst_pct < 1e-6 && slowest < Duration::from_secs(60),
        format!(
            "max angle error {worst_angle:.3e} rad, max pct error {worst_pct:.3e}, slowest seed {:.2} s",
            slowest.as_secs_f64()
        ),
    )
}

const SIGMAS: [f64; 3] = [0.1, 0.3, 1.0];

struct SweepPoint {
    sigma: f64,
    fcp_reprojection: [f64; 3],
    median_pct: [f64; 3],
}

fn sweep() -> Result<Vec<SweepPoint>, String> {
    SIGMAS
        .iter()
        .enumerate()
        .map(|(i, &sigma)| {
            let ds = generate(&SceneConfig {
                noise_sigma: sigma,
                seed: 100 + i as u64,
                ..SceneConfig::default()
            })
            .map_err(|e| e.to_string())?;
            let config = RunConfig {
                seed: 2024 + i as u64,
                ..RunConfig::default()
            };
            let (report, _) = run_protocol(&ds, &config).map_err(|e| format!("sigma {sigma}: {e}"))?;
            Ok(SweepPoint {
                sigma,
                fcp_reprojection: Method::ALL.map(|m| report.method(m).fcp_reprojection),
                median_pct: Method::ALL.map(|m| report.method(m).pct_median),
            })
        })
        .collect()
}

const ESS: usize = 0;
const MIN2D: usize = 1;
const MIN3D: usize = 2;

fn matching_ordering(points: &[SweepPoint]) -> Outcome {
    let margin = 0.02;
    let mut good = 0;
    let mut detail = Vec::new();
    for p in points {
        let f = p.fcp_reprojection;
        let ok = f[ESS] - f[MIN2D] >= margin && f[MIN3D] - f[MIN2D] >= margin;
        good += usize::from(ok);
        detail.push(format!(
            "sigma {}: essential {:.4} min2d {:.4} min3d {:.4}{}",
            p.sigma,
            f[ESS],
            f[MIN2D],
            f[MIN3D],
            if ok { "" } else { " (no margin)" }
        ));
    }
    check(good >= 2, format!("{good}/3 levels; {}", detail.join("; ")))
}

fn reconstruction_ordering(points: &[SweepPoint]) -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for p in points {
        let m = p.median_pct;
        let order = m[MIN3D] < m[MIN2D] && m[MIN3D] < m[ESS];
        let bound = p.sigma > 0.3 || m[MIN3D] < 0.01;
        ok &= order && bound;
        detail.push(format!(
            "sigma {}: essential {:.3e} min2d {:.3e} min3d {:.3e}",
            p.sigma, m[ESS], m[MIN2D], m[MIN3D]
        ));
    }
    check(ok, detail.join("; "))
}

fn k() -> CameraIntrinsics {
    CameraIntrinsics::new(3500.0, 0.0, 1024.0, 544.0).unwrap()
}

fn random_pose(rng: &mut ChaCha8Rng) -> ExtrinsicAngles {
    ExtrinsicAngles::new(
        rng.random_range(-0.6..0.6),
        rng.random_range(-0.2..0.2),
        rng.random_range(-0.2..0.2),
        rng.random_range(-0.3..0.3),
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        rng.random_range(3.4..6.0),
    )
    .unwrap()
}

/// A point in front of both cameras, drawn from a box ahead of the primary.
fn point_in_front(rng: &mut ChaCha8Rng, pose: &ExtrinsicAngles) -> Point3 {
    let ext = pose.to_extrinsics();
    loop {
        let p = Point3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(4.0..9.0),
        );
        if ext.transform(&p).z > 0.5 {
            return p;
        }
    }
}

fn epipolar_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_residual = 0.0f64;
    let mut worst_sv = 0.0f64;
    let mut worst_pose = 0.0f64;
    for _ in 0..1000 {
        let pose = random_pose(&mut rng);
        let ext = pose.to_extrinsics();
        let e = essential_from_pose(&ext.rotation, &ext.direction()).map_err(|e| e.to_string())?;
        let sv = e.singular_values();
        worst_sv = worst_sv.max((sv[0] - sv[1]).abs()).max(sv[2].abs());
        let rig = StereoRig::new(k(), k(), ext);
        let corr: CorrespondenceSet2D = (0..10)
            .map(|_| {
                let p = point_in_front(&mut rng, &pose);
                PixelPair::new(
                    rig.primary_projection().project(&p).unwrap(),
                    rig.secondary_projection().project(&p).unwrap(),
                )
            })
            .collect();
        for pair in corr.iter() {
            let r = e.residual(&k().normalize(&pair.q1), &k().normalize(&pair.q2));
            worst_residual = worst_residual.max(r.abs());
        }
        let back = decompose_essential(&e, pose.baseline, &corr, &k(), &k()).map_err(|e| e.to_string())?;
        let d = (back.rotation - ext.rotation)
            .amax()
            .max((back.translation - ext.translation).amax());
        worst_pose = worst_pose.max(d);
    }
    let elapsed = start.elapsed();
    check(
        worst_residual < 1e-9 && worst_sv < 1e-9 && worst_pose < 1e-6 && elapsed < Duration::from_secs(10),
        format!(
            "max |residual| {worst_residual:.2e}, singular-value defect {worst_sv:.2e}, decomposition error {worst_pose:.2e}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn montecarlo_contract() -> Outcome {
    let target = ExtrinsicAngles::new(0.3, -0.05, 0.02, 0.04, -0.1, 4.0).unwrap();
    let quadratic = move |a: &ExtrinsicAngles| {
        a.angles()
            .iter()
            .zip(target.angles())
            .enumerate()
            .map(|(i, (x, y))| (i as f64 + 1.0) * (x - y).powi(2))
            .sum::<f64>()
    };
    let start = target.with_angles([0.305, -0.053, 0.018, 0.043, -0.097]);
    let config = MonteCarloConfig::default().with_seed(77);
    let levels = config.level_count();

    let ds = generate(&SceneConfig {
        noise_sigma: 0.3,
        n_images: 10,
        seed: 3,
        ..SceneConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let corr = ds.correspondences_2d(&ds.all_indices()).unwrap();
    let reproj = ReprojectionCost::new(&corr, ds.k1, ds.k2);
    let truth = ds.truth.as_ref().unwrap().angles;
    let rstart = truth.with_angles(truth.angles().map(|x| x + 0.002));

    let mut detail = Vec::new();
    let mut ok = (levels as i64 - 24).abs() <= 1;
    for (name, outcome_a, outcome_b, other_seed) in [
        (
            "quadratic",
            minimize(&start, &quadratic, &config),
            minimize(&start, &quadratic, &config),
            minimize(&start, &quadratic, &config.with_seed(78)),
        ),
        (
            "reprojection",
            minimize(&rstart, &reproj, &config),
            minimize(&rstart, &reproj, &config),
            minimize(&rstart, &reproj, &config.with_seed(78)),
        ),
    ] {
        let a = outcome_a.map_err(|e| e.to_string())?;
        let b = outcome_b.map_err(|e| e.to_string())?;
        let c = other_seed.map_err(|e| e.to_string())?;
        let costs: Vec<f64> = a.trace.accepted_costs().collect();
        let monotone = costs[0] == a.trace.initial_cost && costs.windows(2).all(|w| w[1] < w[0]);
        let geometric = a.trace.levels.len() as u32 == levels
            && a.trace
                .levels
                .iter()
                .enumerate()
                .all(|(i, l)| (l.delta - config.delta0 * config.decay.powi(i as i32)).abs() < 1e-18);
        let identical = a.trace == b.trace && a.angles == b.angles;
        let seed_matters = c.trace.accepted != a.trace.accepted;
        ok &= monotone && geometric && identical && seed_matters;
        detail.push(format!(
            "{name}: {} accepted moves, {} levels, monotone={monotone}, geometric={geometric}, bit-identical={identical}",
            costs.len() - 1,
            a.trace.levels.len()
        ));
    }
    check(ok, format!("{levels} levels expected; {}", detail.join("; ")))
}

fn fcp_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 10_000;
    let draw = |rng: &mut ChaCha8Rng, mean: f64| -> Vec<f64> {
        let d = Normal::new(mean, 1.0).unwrap();
        (0..n).map(|_| d.sample(rng)).collect()
    };
    let c = draw(&mut rng, 0.0);
    let w = draw(&mut rng, 4.0);
    let expected = 2.0 * StatNormal::new(0.0, 1.0).unwrap().cdf(-2.0);
    let gauss = fcp(&LabeledScores {
        correct: c.clone(),
        wrong: w,
    })
    .map_err(|e| e.to_string())?;
    let disjoint = fcp(&LabeledScores {
        correct: c.iter().map(|x| x - 100.0).collect(),
        wrong: c.clone(),
    })
    .map_err(|e| e.to_string())?;
    let identical = fcp(&LabeledScores {
        correct: c.clone(),
        wrong: c,
    })
    .map_err(|e| e.to_string())?;
    check(
        (gauss - expected).abs() < 0.01 && disjoint == 0.0 && (identical - 1.0).abs() < 0.05,
        format!("gaussian {gauss:.4} (oracle {expected:.4}), disjoint {disjoint}, identical {identical:.4}"),
    )
}

/// Closest points of two lines by repeated grid refinement of the summed
/// squared distances, returned as their midpoint.
fn grid_midpoint(o1: &Point3, d1: &Vector3<f64>, o2: &Point3, d2: &Vector3<f64>) -> Point3 {
    let f = |s: f64, t: f64| ((o1 + d1 * s) - (o2 + d2 * t)).norm_squared();
    let (mut cs, mut ct, mut half) = (0.0, 0.0, 1000.0);
    let steps = 40;
    while half > 1e-11 {
        let h = 2.0 * half / steps as f64;
        let mut best = (f64::INFINITY, cs, ct);
        for i in 0..=steps {
            for j in 0..=steps {
                let s = cs - half + h * i as f64;
                let t = ct - half + h * j as f64;
                let v = f(s, t);
                if v < best.0 {
                    best = (v, s, t);
                }
            }
        }
        (cs, ct) = (best.1, best.2);
        half = 2.0 * h;
    }
    nalgebra::center(&(o1 + d1 * cs), &(o2 + d2 * ct))
}

fn triangulation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let mut cases = 0;
    while cases < 1000 {
        let mut v = || Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let o1 = Point3::from(v() * 5.0);
        let o2 = Point3::from(v() * 5.0);
        let d1 = v().normalize();
        let d2 = v().normalize();
        if d1.cross(&d2).norm() < 0.2 {
            continue;
        }
        cases += 1;
        let got = triangulate(&Ray3::new(o1, d1), &Ray3::new(o2, d2)).map_err(|e| e.to_string())?;
        let want = grid_midpoint(&o1, &d1, &o2, &d2);
        worst = worst.max((got.point - want).norm());
    }
    check(worst < 1e-6, format!("max deviation from grid minimizer {worst:.3e} m over 1000 cases"))
}

fn random_dataset(rng: &mut ChaCha8Rng) -> Dataset {
    let cfg = SceneConfig {
        n_images: rng.random_range(1..6),
        noise_sigma: rng.random_range(0.0..2.0),
        seed: rng.random(),
        ..SceneConfig::with_baseline(rng.random_range(3.449..5.936))
    };
    let mut ds = generate(&cfg).unwrap();
    if rng.random_bool(0.3) {
        ds.truth = None;
    }
    ds
}

fn io_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0usize;
    let mut rejected = 0usize;
    for _ in 0..50 {
        let ds = random_dataset(&mut rng);
        let text = write_dataset_string(&ds);
        let back = read_dataset_str(&text).map_err(|e| format!("dataset read: {e}"))?;
        if back != ds || write_dataset_string(&back) != text {
            return Err("dataset round trip changed values".into());
        }
        // Every data line's removal or numeric corruption must be rejected.
        let lines: Vec<&str> = text.lines().collect();
        for i in 0..lines.len() {
            if lines[i].trim().is_empty() || lines[i].starts_with('#') {
                continue;
            }
            let mut removed = lines.clone();
            removed.remove(i);
            checked += 1;
            match read_dataset_str(&removed.join("\n")) {
                Err(FormatError::Parse { .. } | FormatError::Schema(_) | FormatError::Version(_)) => rejected += 1,
                other => return Err(format!("deleting line {} ({}) gave {other:?}", i + 1, lines[i])),
            }
            for field in 0..lines[i].split(',').count() {
                let mut fields: Vec<String> = lines[i].split(',').map(str::to_owned).collect();
                if fields[field].parse::<f64>().is_err() {
                    continue;
                }
                fields[field] = "x".into();
                let mut mutated = lines.clone();
                let joined = fields.join(",");
                mutated[i] = &joined;
                checked += 1;
                match read_dataset_str(&mutated.join("\n")) {
                    Err(FormatError::Parse { .. } | FormatError::Version(_)) => rejected += 1,
                    other => return Err(format!("corrupting line {} field {field} gave {other:?}", i + 1)),
                }
            }
        }
    }
    for _ in 0..200 {
        let angles = random_pose(&mut rng);
        let method = Method::ALL[rng.random_range(0..3)];
        let rec = CalibrationRecord::from_angles(method, angles, rng.random(), "fuzz".into());
        let text = write_calibration_string(&rec);
        let back = read_calibration_str(&text).map_err(|e| format!("calibration read: {e}"))?;
        if back != rec || write_calibration_string(&back) != text {
            return Err("calibration round trip changed values".into());
        }
        let lines: Vec<&str> = text.lines().collect();
        for i in 0..lines.len() {
            if lines[i].trim().is_empty() || lines[i].starts_with('#') {
                continue;
            }
            let mut removed = lines.clone();
            removed.remove(i);
            checked += 1;
            if read_calibration_str(&removed.join("\n")).is_ok() {
                return Err(format!("calibration accepted without line {}", lines[i]));
            }
            rejected += 1;
        }
        // Perturb each stored derived value beyond the consistency tolerance.
        for key in ["R", "T", "E"] {
            let i = lines.iter().position(|l| l.starts_with(&format!("{key},"))).unwrap();
            let mut fields: Vec<String> = lines[i].split(',').map(str::to_owned).collect();
            let v: f64 = fields[1].parse().unwrap();
            fields[1] = format!("{:.16e}", v + 1e-6);
            let joined = fields.join(",");
            let mut mutated = lines.clone();
            mutated[i] = &joined;
            checked += 1;
            match read_calibration_str(&mutated.join("\n")) {
                Err(FormatError::Consistency(_)) => rejected += 1,
                other => return Err(format!("perturbed {key} gave {other:?}")),
            }
        }
    }
    check(
        checked == rejected,
        format!("50 datasets and 200 calibrations round trip bit-exactly; {rejected}/{checked} corruptions rejected"),
    )
}

fn main() -> ExitCode {
    let sweep_start = Instant::now();
    let sweep = sweep();
    let sweep_time = sweep_start.elapsed();
    let (c2, c3) = match &sweep {
        Ok(points) => (matching_ordering(points), reconstruction_ordering(points)),
        Err(e) => (Err(e.clone()), Err(e.clone())),
    };
    let results = [
        ("zero-noise exactness", zero_noise_exactness()),
        ("matching ordering", c2),
        ("reconstruction ordering", c3),
        ("epipolar property suite", epipolar_suite()),
        ("Monte Carlo contract", montecarlo_contract()),
        ("FCP estimator oracle", fcp_oracle()),
        ("triangulation oracle", triangulation_oracle()),
        ("I/O round trip", io_round_trip()),
    ];
    let mut failed = 0;
    for (i, (name, r)) in results.iter().enumerate() {
        match r {
            Ok(d) => println!("criterion {} PASS {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {d}", i + 1)
            }
        }
    }
    println!("noise sweep took {:.1} s", sweep_time.as_secs_f64());
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
