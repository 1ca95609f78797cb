//! Repeated split/calibrate/validate runs and their aggregation.
//!
//! Each run draws its own calibration and validation images from a sub-seed
//! of the master seed, calibrates all three methods on the calibration
//! images and scores them on the validation images. Scores are pooled over
//! runs before the FCP and the percentage-error quantiles are computed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::cost::{ReconstructionCost, ReprojectionCost};
use crate::dataset::{Dataset, DatasetError};
use crate::essential::{calibrate_essential, EssentialConfig, EssentialError};
use crate::evaluation::{
    build_correct_set, build_wrong_set, percentage_errors, score_correspondences,
    to_correspondences, Detections, EvaluationError, EvaluationReport, Method, MethodReport,
    Metric, RawScores,
};
use crate::geometry::{EssentialMatrix, ExtrinsicAngles, Extrinsics};
use crate::montecarlo::{minimize, MonteCarloConfig, MonteCarloError};

pub const DEFAULT_RUNS: usize = 100;
pub const DEFAULT_CALIBRATION_IMAGES: usize = 20;
pub const DEFAULT_VALIDATION_IMAGES: usize = 5;
/// A protocol aborts once this fraction of its runs has failed.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;
/// Images needed whenever the essential stage runs.
pub const MIN_CALIBRATION_IMAGES: usize = 5;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{found} calibration images given, at least {required} are needed")]
    TooFewImages { found: usize, required: usize },
    #[error(transparent)]
    Essential(#[from] EssentialError),
    #[error(transparent)]
    MonteCarlo(#[from] MonteCarloError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error("{failed} of {total} runs failed (first: run {first_run}: {first_error})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first_run: usize,
        first_error: String,
    },
}

/// 64-bit seed for stream `index` of `seed`: one splitmix64 output step
/// applied to `seed + (index + 1)·0x9E3779B97F4A7C15`.
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// Stream indices under a run or calibration seed.
const STREAM_ESSENTIAL: u64 = 0;
const STREAM_MIN2D: u64 = 1;
const STREAM_MIN3D: u64 = 2;
const STREAM_SPLIT: u64 = 3;

/// Settings shared by every calibration. The seeds inside are ignored;
/// each stage gets its own sub-seed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CalibrationSettings {
    pub essential: EssentialConfig,
    pub mc: MonteCarloConfig,
}

impl CalibrationSettings {
    /// Canonical text form of every parameter that affects the result.
    pub fn fingerprint(&self) -> String {
        let mc = |c: &MonteCarloConfig| {
            format!(
                "delta0={:e};decay={:e};accept={:e};delta_min={:e};warmup={};max_iter={:?}",
                c.delta0, c.decay, c.acceptance_threshold, c.delta_min, c.warmup, c.max_iterations
            )
        };
        let e = &self.essential;
        format!(
            "mc[{}];essential[refine[{}];rank_tol={:e};coarse={}/{}/{:e};majority={:e}]",
            mc(&self.mc),
            mc(&e.refine),
            e.rank_tol,
            e.coarse_samples,
            e.coarse_keep,
            e.coarse_delta0,
            e.cheirality_majority
        )
    }
}

/// One method's parameter set, with both derived forms.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub method: Method,
    pub angles: ExtrinsicAngles,
    pub pose: Extrinsics,
    pub essential: EssentialMatrix,
    /// Final value of the method's own objective.
    pub cost: f64,
    pub seed: u64,
}

impl Calibration {
    pub fn from_angles(method: Method, angles: ExtrinsicAngles, cost: f64, seed: u64) -> Self {
        Self {
            method,
            angles,
            pose: angles.to_extrinsics(),
            essential: angles.essential().canonical(),
            cost,
            seed,
        }
    }
}

/// Calibrates one method on the chosen images. The Monte Carlo methods
/// start from `init` when given, otherwise from an essential-method
/// calibration on the same images.
pub fn calibrate_method(
    dataset: &Dataset,
    indices: &[usize],
    method: Method,
    seed: u64,
    settings: &CalibrationSettings,
    init: Option<ExtrinsicAngles>,
) -> Result<Calibration, ProtocolError> {
    let corr2 = dataset.correspondences_2d(indices)?;
    let start = match (method, init) {
        (Method::Essential, _) | (_, None) => {
            if indices.len() < MIN_CALIBRATION_IMAGES {
                return Err(ProtocolError::TooFewImages {
                    found: indices.len(),
                    required: MIN_CALIBRATION_IMAGES,
                });
            }
            let config = settings.essential.with_seed(sub_seed(seed, STREAM_ESSENTIAL));
            let cal = calibrate_essential(&corr2, &dataset.k1, &dataset.k2, dataset.baseline, &config)?;
            if method == Method::Essential {
                return Ok(Calibration {
                    method,
                    angles: cal.angles,
                    pose: cal.pose,
                    essential: cal.essential.canonical(),
                    cost: cal.residual_sum,
                    seed,
                });
            }
            cal.angles
        }
        (_, Some(a)) => ExtrinsicAngles {
            baseline: dataset.baseline,
            ..a
        },
    };
    let outcome = match method {
        Method::Min2d => {
            let cost = ReprojectionCost::new(&corr2, dataset.k1, dataset.k2);
            minimize(&start, &cost, &settings.mc.with_seed(sub_seed(seed, STREAM_MIN2D)))?
        }
        _ => {
            let corr3 = dataset.correspondences_3d(indices)?;
            let cost = ReconstructionCost::new(&corr3, dataset.k1, dataset.k2);
            minimize(&start, &cost, &settings.mc.with_seed(sub_seed(seed, STREAM_MIN3D)))?
        }
    };
    Ok(Calibration::from_angles(method, outcome.angles, outcome.cost, seed))
}

/// All three methods, with the essential result seeding both minimizations.
pub fn calibrate_all(
    dataset: &Dataset,
    indices: &[usize],
    seed: u64,
    settings: &CalibrationSettings,
) -> Result<[Calibration; 3], ProtocolError> {
    let essential = calibrate_method(dataset, indices, Method::Essential, seed, settings, None)?;
    let init = Some(essential.angles);
    let min2d = calibrate_method(dataset, indices, Method::Min2d, seed, settings, init)?;
    let min3d = calibrate_method(dataset, indices, Method::Min3d, seed, settings, init)?;
    Ok([essential, min2d, min3d])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub calibration: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Random disjoint calibration and validation image sets, each sorted.
pub fn draw_split(n_images: usize, n_calibration: usize, n_validation: usize, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n_images).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut calibration = idx[..n_calibration].to_vec();
    let mut validation = idx[n_calibration..n_calibration + n_validation].to_vec();
    calibration.sort_unstable();
    validation.sort_unstable();
    Split {
        calibration,
        validation,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub n_runs: usize,
    pub n_calibration: usize,
    pub n_validation: usize,
    pub seed: u64,
    pub settings: CalibrationSettings,
    /// Worker threads; `None` uses rayon's default pool.
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_runs: DEFAULT_RUNS,
            n_calibration: DEFAULT_CALIBRATION_IMAGES,
            n_validation: DEFAULT_VALIDATION_IMAGES,
            seed: 0,
            settings: CalibrationSettings::default(),
            jobs: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self, n_images: usize) -> Result<(), ProtocolError> {
        if self.n_runs == 0 {
            return Err(ProtocolError::Config("at least one run is required".into()));
        }
        if self.n_validation == 0 {
            return Err(ProtocolError::Config("at least one validation image is required".into()));
        }
        if self.n_calibration + self.n_validation > n_images {
            return Err(ProtocolError::Config(format!(
                "split {}:{} needs more images than the dataset's {n_images}",
                self.n_calibration, self.n_validation
            )));
        }
        if self.jobs == Some(0) {
            return Err(ProtocolError::Config("--jobs must be positive".into()));
        }
        self.settings.mc.validate()?;
        self.settings.essential.refine.validate()?;
        Ok(())
    }
}

/// Per-method samples of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRun {
    pub calibration: Calibration,
    /// Indexed by `Metric as usize`.
    pub scores: [RawScores; 2],
    pub pct_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub split: Split,
    pub methods: [MethodRun; 3],
}

/// Calibrates on `split.calibration` and scores on `split.validation`.
pub fn evaluate_split(
    dataset: &Dataset,
    split: &Split,
    seed: u64,
    settings: &CalibrationSettings,
) -> Result<[MethodRun; 3], ProtocolError> {
    let cals = calibrate_all(dataset, &split.calibration, seed, settings)?;
    let detections: Vec<Detections> = split
        .validation
        .iter()
        .map(|&i| Detections::from(&dataset.images[i]))
        .collect();
    let correct = to_correspondences(&build_correct_set(&detections)?);
    let wrong = to_correspondences(&build_wrong_set(&detections)?);
    let corr3 = dataset.correspondences_3d(&split.validation)?;
    let (k1, k2) = (&dataset.k1, &dataset.k2);

    Ok(cals.map(|cal| {
        let scores = Metric::ALL.map(|metric| RawScores {
            correct: score_correspondences(&correct, &cal.essential, &cal.pose, k1, k2, metric),
            wrong: score_correspondences(&wrong, &cal.essential, &cal.pose, k1, k2, metric),
        });
        let pct_errors = percentage_errors(&corr3, &cal.pose, k1, k2);
        MethodRun {
            calibration: cal,
            scores,
            pct_errors,
        }
    }))
}

pub fn run_once(dataset: &Dataset, config: &RunConfig, run: usize) -> Result<RunResult, ProtocolError> {
    let seed = sub_seed(config.seed, run as u64);
    let split = draw_split(
        dataset.n_images(),
        config.n_calibration,
        config.n_validation,
        sub_seed(seed, STREAM_SPLIT),
    );
    let methods = evaluate_split(dataset, &split, seed, &config.settings)?;
    Ok(RunResult {
        run,
        seed,
        split,
        methods,
    })
}

/// Every run's outcome in run order. Runs execute in parallel.
pub fn run_all(
    dataset: &Dataset,
    config: &RunConfig,
) -> Result<Vec<Result<RunResult, ProtocolError>>, ProtocolError> {
    dataset.validate()?;
    config.validate(dataset.n_images())?;
    let work = || {
        (0..config.n_runs)
            .into_par_iter()
            .map(|run| run_once(dataset, config, run))
            .collect::<Vec<_>>()
    };
    Ok(match config.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| ProtocolError::Config(e.to_string()))?
            .install(work),
        None => work(),
    })
}

/// Pools successful runs into a report. Failed runs are listed in the
/// report; at [`MAX_FAILURE_FRACTION`] or more the whole protocol fails.
pub fn aggregate(
    results: Vec<Result<RunResult, ProtocolError>>,
) -> Result<(EvaluationReport, Vec<RunResult>), ProtocolError> {
    let total = results.len();
    let mut ok = Vec::with_capacity(total);
    let mut failed = Vec::new();
    for (run, r) in results.into_iter().enumerate() {
        match r {
            Ok(r) => ok.push(r),
            Err(e) => {
                log::warn!("run {run} excluded: {e}");
                failed.push((run, e.to_string()));
            }
        }
    }
    ok.sort_by_key(|r| r.run);
    if !failed.is_empty() && failed.len() as f64 >= MAX_FAILURE_FRACTION * total as f64 {
        let (first_run, first_error) = failed[0].clone();
        return Err(ProtocolError::TooManyFailures {
            failed: failed.len(),
            total,
            first_run,
            first_error,
        });
    }

    let reports = Method::ALL.map(|m| {
        let mut residual = RawScores::default();
        let mut reprojection = RawScores::default();
        let mut pct = Vec::new();
        for r in &ok {
            let mr = &r.methods[m.index()];
            residual.extend(&mr.scores[Metric::Residual as usize]);
            reprojection.extend(&mr.scores[Metric::Reprojection as usize]);
            pct.extend_from_slice(&mr.pct_errors);
        }
        MethodReport::from_samples(m, residual, reprojection, pct)
    });
    let [a, b, c] = reports;
    let report = EvaluationReport {
        methods: [a?, b?, c?],
        runs_requested: total,
        runs_failed: failed,
    };
    Ok((report, ok))
}

/// [`run_all`] followed by [`aggregate`].
pub fn run_protocol(
    dataset: &Dataset,
    config: &RunConfig,
) -> Result<(EvaluationReport, Vec<RunResult>), ProtocolError> {
    aggregate(run_all(dataset, config)?)
}
