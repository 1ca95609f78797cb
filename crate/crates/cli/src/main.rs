//! `stereocal`: generate synthetic bar-target datasets, calibrate a stereo
//! rig with the three methods, and run the split/validate evaluation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use stereocal::evaluation::{Method, Metric};
use stereocal::formats::{
    config_hash, fcp_table_csv, pct_errors_csv, read_calibration, read_dataset, scores_csv,
    summary_text, write_calibration, write_dataset, CalibrationRecord, FormatError,
};
use stereocal::montecarlo::MonteCarloError;
use stereocal::protocol::{
    calibrate_all, calibrate_method, run_protocol, CalibrationSettings, ProtocolError, RunConfig,
};
use stereocal::scene::{generate, SceneConfig, SceneError};
use stereocal::{Dataset, MonteCarloConfig};

#[derive(Parser)]
#[command(name = "stereocal", version, about = "Stereo rig extrinsic calibration and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with known ground truth.
    Generate(GenerateArgs),
    /// Calibrate one method, or all three, on every image of a dataset.
    Calibrate(CalibrateArgs),
    /// Run repeated calibration/validation splits and write the report bundle.
    Evaluate(EvaluateArgs),
    /// Print the report bundle in an output directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct SeedArg {
    /// Master seed.
    #[arg(long, env = "STEREOCAL_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct McArgs {
    /// Initial Monte Carlo step (rad).
    #[arg(long, default_value_t = stereocal::montecarlo::DEFAULT_DELTA0)]
    mc_delta0: f64,
    /// Step decay factor.
    #[arg(long, default_value_t = stereocal::montecarlo::DEFAULT_DECAY)]
    mc_decay: f64,
    /// Acceptance ratio below which the step decays.
    #[arg(long, default_value_t = stereocal::montecarlo::DEFAULT_ACCEPTANCE_THRESHOLD)]
    mc_accept: f64,
    /// Step at which the minimization stops.
    #[arg(long, default_value_t = stereocal::montecarlo::DEFAULT_DELTA_MIN)]
    mc_delta_min: f64,
}

impl McArgs {
    fn settings(&self) -> CalibrationSettings {
        CalibrationSettings {
            mc: MonteCarloConfig {
                delta0: self.mc_delta0,
                decay: self.mc_decay,
                acceptance_threshold: self.mc_accept,
                delta_min: self.mc_delta_min,
                ..MonteCarloConfig::default()
            },
            ..CalibrationSettings::default()
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// Dataset file to write.
    #[arg(long, default_value = "dataset.txt")]
    out: PathBuf,
    /// Pixel noise standard deviation.
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    #[arg(long, default_value_t = 25)]
    n_images: usize,
    /// Camera baseline (m).
    #[arg(long, default_value_t = 4.0)]
    baseline: f64,
    /// Distance between the two bar targets (m).
    #[arg(long, default_value_t = 0.9)]
    distance: f64,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodChoice {
    Essential,
    Min2d,
    Min3d,
    All,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodChoice::All)]
    method: MethodChoice,
    /// Calibration file whose angles start the minimization (min2d/min3d only).
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[command(flatten)]
    seed: SeedArg,
    #[command(flatten)]
    mc: McArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct SplitArg {
    calibration: usize,
    validation: usize,
}

impl FromStr for SplitArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (c, v) = s
            .split_once(':')
            .ok_or_else(|| format!("expected CAL:VAL, got `{s}`"))?;
        let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("`{x}`: {e}"));
        Ok(Self {
            calibration: parse(c)?,
            validation: parse(v)?,
        })
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = stereocal::protocol::DEFAULT_RUNS)]
    runs: usize,
    /// Calibration and validation images per run.
    #[arg(long, default_value = "20:5")]
    split: SplitArg,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, default_value = "report")]
    out_dir: PathBuf,
    #[command(flatten)]
    seed: SeedArg,
    #[command(flatten)]
    mc: McArgs,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, default_value = "report")]
    out_dir: PathBuf,
}

/// Failure with the exit code it maps to.
enum Failure {
    Config(anyhow::Error),
    Data(anyhow::Error),
    Threshold(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Threshold(_) => 4,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Data(e) | Failure::Threshold(e) => e,
        }
    }
}

impl From<ProtocolError> for Failure {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::Config(_) | ProtocolError::MonteCarlo(MonteCarloError::InvalidConfig(_)) => {
                Failure::Config(e.into())
            }
            ProtocolError::TooManyFailures { .. } => Failure::Threshold(e.into()),
            _ => Failure::Data(e.into()),
        }
    }
}

fn data_err<E: Into<anyhow::Error>>(context: String) -> impl FnOnce(E) -> Failure {
    move |e| Failure::Data(e.into().context(context))
}

fn load_dataset(path: &Path) -> Result<Dataset, Failure> {
    read_dataset(path).map_err(data_err(format!("reading dataset {}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(data_err(format!("writing {}", path.display())))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(data_err(format!("creating {}", dir.display())))
}

fn check_settings(settings: &CalibrationSettings) -> Result<(), Failure> {
    settings
        .mc
        .validate()
        .map_err(|e| Failure::Config(e.into()))
}

fn calibration_path(dir: &Path, method: Method) -> PathBuf {
    dir.join(format!("calibration_{method}.txt"))
}

fn cmd_generate(args: GenerateArgs) -> Result<(), Failure> {
    let config = SceneConfig {
        distance: args.distance,
        n_images: args.n_images,
        noise_sigma: args.noise,
        seed: args.seed.seed,
        ..SceneConfig::with_baseline(args.baseline)
    };
    let ds = generate(&config).map_err(|e| match e {
        SceneError::InvalidConfig(_) => Failure::Config(e.into()),
        _ => Failure::Data(e.into()),
    })?;
    write_dataset(&ds, &args.out).map_err(data_err(format!("writing {}", args.out.display())))?;
    println!(
        "wrote {}: {} images, baseline {} m, target distance {} m, noise {} px, seed {}",
        args.out.display(),
        ds.n_images(),
        ds.baseline,
        ds.distance,
        args.noise,
        args.seed.seed
    );
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<(), Failure> {
    let settings = args.mc.settings();
    check_settings(&settings)?;
    let ds = load_dataset(&args.dataset)?;
    let init = match &args.init {
        None => None,
        Some(p) => {
            if matches!(args.method, MethodChoice::Essential | MethodChoice::All) {
                return Err(Failure::Config(anyhow!("--init applies only to --method min2d or min3d")));
            }
            let rec = read_calibration(p).map_err(data_err(format!("reading {}", p.display())))?;
            Some(rec.angles)
        }
    };
    let seed = args.seed.seed;
    let idx = ds.all_indices();
    let cals = match args.method {
        MethodChoice::All => calibrate_all(&ds, &idx, seed, &settings)?.to_vec(),
        one => {
            let m = match one {
                MethodChoice::Essential => Method::Essential,
                MethodChoice::Min2d => Method::Min2d,
                _ => Method::Min3d,
            };
            vec![calibrate_method(&ds, &idx, m, seed, &settings, init)?]
        }
    };
    ensure_dir(&args.out_dir)?;
    let hash = config_hash(&settings);
    for cal in &cals {
        let path = calibration_path(&args.out_dir, cal.method);
        write_calibration(&CalibrationRecord::from_calibration(cal, hash.clone()), &path)
            .map_err(data_err(format!("writing {}", path.display())))?;
        let a = cal.angles;
        println!(
            "{:<9} alpha {:+.6} beta {:+.6} gamma {:+.6} delta {:+.6} epsilon {:+.6}  cost {:.6e}  -> {}",
            cal.method.tag(),
            a.alpha,
            a.beta,
            a.gamma,
            a.delta,
            a.epsilon,
            cal.cost,
            path.display()
        );
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let settings = args.mc.settings();
    check_settings(&settings)?;
    let ds = load_dataset(&args.dataset)?;
    let config = RunConfig {
        n_runs: args.runs,
        n_calibration: args.split.calibration,
        n_validation: args.split.validation,
        seed: args.seed.seed,
        settings,
        jobs: args.jobs,
    };
    config.validate(ds.n_images())?;
    let (report, runs) = run_protocol(&ds, &config)?;

    let dir = &args.out_dir;
    ensure_dir(dir)?;
    // Recommended parameter sets, calibrated on every image.
    let cals = calibrate_all(&ds, &ds.all_indices(), config.seed, &settings)?;
    let hash = config_hash(&settings);
    let (matching, reconstruction) = report.recommended_pair();
    for (name, m) in [("matching", matching), ("reconstruction", reconstruction)] {
        let path = dir.join(format!("recommended_{name}.txt"));
        write_calibration(&CalibrationRecord::from_calibration(&cals[m.index()], hash.clone()), &path)
            .map_err(data_err(format!("writing {}", path.display())))?;
    }

    let header = [
        ("dataset", args.dataset.display().to_string()),
        ("seed", config.seed.to_string()),
        ("split", format!("{}:{}", config.n_calibration, config.n_validation)),
        ("config_hash", hash),
        ("recommended.matching_file", "recommended_matching.txt".to_owned()),
        ("recommended.reconstruction_file", "recommended_reconstruction.txt".to_owned()),
    ];
    let summary = summary_text(&report, &header);
    write_file(&dir.join("summary.txt"), &summary)?;
    write_file(&dir.join("fcp_table.csv"), &fcp_table_csv(&report))?;
    for m in Method::ALL {
        write_file(&dir.join(format!("pct_errors_{m}.csv")), &pct_errors_csv(&runs, m))?;
        for metric in Metric::ALL {
            for (label, correct) in [("correct", true), ("wrong", false)] {
                let name = format!("scores_{m}_{}_{label}.csv", metric.tag());
                write_file(&dir.join(name), &scores_csv(&runs, m, metric, correct))?;
            }
        }
    }
    print!("{summary}");
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), Failure> {
    let read = |name: &str| {
        let path = args.out_dir.join(name);
        fs::read_to_string(&path).map_err(data_err(format!("reading {}", path.display())))
    };
    let summary = read("summary.txt")?;
    let table = read("fcp_table.csv")?;
    println!("{:<10} {:>14} {:>18}", "method", "FCP residual", "FCP reprojection");
    for (i, line) in table.lines().skip(1).enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Failure::Data(anyhow!(FormatError::Parse {
                    line: i + 2,
                    message: format!("`{s}` is not a number")
                })))
        };
        if f.len() != 3 {
            return Err(Failure::Data(anyhow!("fcp_table.csv line {}: expected 3 fields", i + 2)));
        }
        println!("{:<10} {:>14.4} {:>18.4}", f[0], parse(f[1])?, parse(f[2])?);
    }
    println!();
    for line in summary.lines().filter(|l| {
        l.contains("pct_error_median") || l.contains("pct_error_p90") || l.starts_with("winner") || l.starts_with("recommended")
    }) {
        println!("{line}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_parsing() {
        assert_eq!(
            "20:5".parse::<SplitArg>().unwrap(),
            SplitArg {
                calibration: 20,
                validation: 5
            }
        );
        assert!("20".parse::<SplitArg>().is_err());
        assert!("a:5".parse::<SplitArg>().is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
