use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand, ValueEnum};
use ndf_core::dataset::{build_dataset, resolve_config, DatasetConfig, PatternConfig};
use ndf_core::filters::{angle_grid, beampattern, design_ls_beamformer, stft_frequencies};
use ndf_core::harness::{
    evaluate_manifest, run_aperture_sweep, run_bandpass_probe, run_interferer_demo, run_stereo_demo, EvalOptions,
    FilterSource, InterfererConfig, ProbeBand, ProbeConfig, StereoConfig, SweepConfig,
};
use ndf_core::io::{validate_manifest, write_tensor, Manifest, Tensor, ValidateOptions};
use ndf_core::metrics::write_csv;
use ndf_core::signal::Band;
use ndf_core::{build_array, Doa, Error};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(
    name = "ndf",
    version,
    about = "Directional filtering toolkit: datasets, filter design and evaluation"
)]
struct Cli {
    /// JSON config file; fields not given keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `scenes.count=5`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (replaces the config's output_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a dataset: scenes on disk plus manifest.json.
    Dataset,
    /// Least-squares beamformer design with WNG and beampattern export.
    Design {
        #[arg(long)]
        diameter: Option<f64>,
        #[arg(long)]
        pattern: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        wng_min: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        steering: Option<f64>,
    },
    /// Evaluate a filter over a test manifest.
    Eval {
        #[command(flatten)]
        filter: FilterArgs,
        /// Expected pattern preset; must match the manifest.
        #[arg(long)]
        pattern: Option<String>,
    },
    /// Bandpass probing of a filter.
    Probe {
        #[command(flatten)]
        filter: FilterArgs,
        /// Probe center frequency, Hz. Repeatable.
        #[arg(long = "center")]
        centers: Vec<f64>,
        #[arg(long, default_value_t = 500.0)]
        width: f64,
        /// Also run an unfiltered full-band probe.
        #[arg(long)]
        full: bool,
    },
    /// Aperture/SNR sweep: one dataset and report per cell.
    Sweep,
    /// Static target with an interferer circling the array.
    DemoInterferer,
    /// Virtual stereo pair from a panned source.
    DemoStereo,
    /// Check a manifest's files and stem consistency.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
        /// Scenes sampled for the stem check.
        #[arg(long, default_value_t = 16)]
        sample: usize,
        /// Check every scene.
        #[arg(long)]
        all: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(clap::Args, Debug)]
struct FilterArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    filter: Option<FilterKind>,
    /// Directory of external NDFM masks.
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    wng_min: Option<f64>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FilterKind {
    Oracle,
    Ls,
    External,
}

impl FilterArgs {
    fn resolve(&self, current: &FilterSource) -> Result<FilterSource, CliError> {
        let kind = match (self.filter, &self.masks) {
            (Some(k), _) => k,
            (None, Some(_)) => FilterKind::External,
            (None, None) => match current {
                FilterSource::Ls { .. } if self.wng_min.is_some() => FilterKind::Ls,
                _ => return Ok(current.clone()),
            },
        };
        Ok(match kind {
            FilterKind::Oracle => FilterSource::Oracle,
            FilterKind::Ls => FilterSource::Ls {
                wng_min_db: self.wng_min.unwrap_or(match current {
                    FilterSource::Ls { wng_min_db } => *wng_min_db,
                    _ => -15.0,
                }),
            },
            FilterKind::External => match (&self.masks, current) {
                (Some(dir), _) => FilterSource::External { dir: dir.clone() },
                (None, FilterSource::External { dir }) => FilterSource::External { dir: dir.clone() },
                (None, _) => return Err(CliError::Usage("--filter external needs --masks DIR".into())),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct DesignConfig {
    diameter: f64,
    pattern: PatternConfig,
    steering_deg: f64,
    wng_min_db: f64,
    /// Azimuths of the design and export grid, evenly spaced.
    num_angles: usize,
    output_dir: PathBuf,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            diameter: 0.03,
            pattern: PatternConfig::default(),
            steering_deg: 0.0,
            wng_min_db: -15.0,
            num_angles: 360,
            output_dir: PathBuf::from("design"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct EvalConfig {
    manifest: PathBuf,
    filter: FilterSource,
    bands: Option<Vec<Band>>,
    grid_deg: Option<Vec<f64>>,
    label: Option<String>,
    output_dir: PathBuf,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            manifest: PathBuf::from("dataset/manifest.json"),
            filter: FilterSource::Oracle,
            bands: None,
            grid_deg: None,
            label: None,
            output_dir: PathBuf::from("eval"),
        }
    }
}

#[derive(Debug)]
enum CliError {
    Core(Error),
    Usage(String),
    Invalid(usize),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Invalid(_) => 5,
            CliError::Core(e) => match e {
                Error::InvalidArgument(_) | Error::Json(_) => 2,
                Error::SamplingFailure { .. } | Error::Planning { .. } => 3,
                Error::Io { .. } | Error::Malformed { .. } => 4,
                Error::MissingMask { .. } | Error::ShapeMismatch { .. } => 5,
                Error::Design(_) => 6,
                _ => 1,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Invalid(n) => write!(f, "manifest has {n} violation(s)"),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl Cli {
    /// Config file, then `NDF_SEED` at `seed_key`, then `--override`s.
    fn resolve<T>(&self, seed_key: Option<&str>) -> CliResult<T>
    where
        T: Serialize + for<'de> Deserialize<'de> + Default,
    {
        let text = match &self.config {
            Some(p) => Some(fs::read_to_string(p).map_err(|e| io_err(p, e))?),
            None => None,
        };
        let mut overrides = Vec::new();
        if let (Some(key), Ok(seed)) = (seed_key, std::env::var("NDF_SEED")) {
            let seed: u64 = seed
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("NDF_SEED '{seed}' is not an unsigned integer")))?;
            overrides.push(format!("{key}={seed}"));
        }
        overrides.extend(self.overrides.iter().cloned());
        Ok(resolve_config(text.as_deref(), &overrides)?)
    }

    fn log<T: Serialize>(&self, what: &str, cfg: &T) {
        if self.verbose > 0 {
            let json = serde_json::to_string_pretty(cfg).unwrap_or_default();
            eprintln!("{what} config:\n{json}");
        }
    }
}

fn write_config<T: Serialize>(dir: &Path, cfg: &T) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join("config.json");
    let text = serde_json::to_string_pretty(cfg).map_err(Error::from)?;
    fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
    Ok(())
}

fn cmd_dataset(cli: &Cli) -> CliResult<()> {
    let mut cfg: DatasetConfig = cli.resolve(Some("seed"))?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cli.log("dataset", &cfg);
    let (manifest, path) = build_dataset(&cfg)?;
    eprintln!("{} scenes", manifest.scenes.len());
    println!("{}", path.display());
    Ok(())
}

fn cmd_design(
    cli: &Cli,
    diameter: Option<f64>,
    pattern: Option<&str>,
    wng_min: Option<f64>,
    steering: Option<f64>,
) -> CliResult<()> {
    let mut cfg: DesignConfig = cli.resolve(None)?;
    if let Some(d) = diameter {
        cfg.diameter = d;
    }
    if let Some(p) = pattern {
        cfg.pattern.preset = p.to_string();
    }
    if let Some(w) = wng_min {
        cfg.wng_min_db = w;
    }
    if let Some(s) = steering {
        cfg.steering_deg = s;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cli.log("design", &cfg);

    let array = build_array(cfg.diameter)?;
    let pattern = cfg.pattern.build()?.with_steering(Doa::from_degrees(cfg.steering_deg));
    let freqs = stft_frequencies();
    let angles = angle_grid(cfg.num_angles);
    let weights = design_ls_beamformer(&array, &pattern, &freqs, &angles, cfg.wng_min_db)?;

    let dir = &cfg.output_dir;
    write_config(dir, &cfg)?;
    write_tensor(&dir.join("weights.ndfm"), &Tensor::from_complex(&weights.to_array()))?;
    write_csv(
        &dir.join("wng.csv"),
        &["freq_hz", "wng_db", "loading", "residual"],
        |w| {
            for (f, freq) in freqs.iter().enumerate() {
                w.write_record([
                    freq.to_string(),
                    weights.wng_db[f].to_string(),
                    weights.loading[f].to_string(),
                    weights.residual[f].to_string(),
                ])?;
            }
            Ok(())
        },
    )?;
    let header: Vec<String> = std::iter::once("azimuth_deg".to_string())
        .chain(freqs.iter().map(|f| format!("{f}")))
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let gains: Vec<Vec<f64>> = freqs
        .iter()
        .zip(&weights.weights)
        .map(|(&f, w)| {
            beampattern(w, &array, f, &angles)
                .iter()
                .map(|g| 20.0 * g.norm().log10())
                .collect()
        })
        .collect();
    write_csv(&dir.join("pattern.csv"), &header, |w| {
        for (i, a) in angles.iter().enumerate() {
            let row = std::iter::once(a.to_degrees().to_string()).chain(gains.iter().map(|g| g[i].to_string()));
            w.write_record(row)?;
        }
        Ok(())
    })?;
    let worst = weights.wng_db.iter().cloned().fold(f64::INFINITY, f64::min);
    eprintln!("minimum WNG {worst:.2} dB over {} bins", freqs.len());
    println!("{}", dir.display());
    Ok(())
}

fn cmd_eval(cli: &Cli, args: &FilterArgs, pattern: Option<&str>) -> CliResult<()> {
    let mut cfg: EvalConfig = cli.resolve(None)?;
    if let Some(m) = &args.manifest {
        cfg.manifest = m.clone();
    }
    cfg.filter = args.resolve(&cfg.filter)?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cli.log("eval", &cfg);
    if let Some(p) = pattern {
        let manifest = Manifest::load(&cfg.manifest)?;
        let built = manifest.config.pointer("/pattern/preset").and_then(|v| v.as_str());
        if built != Some(p) {
            return Err(CliError::Usage(format!(
                "--pattern {p} does not match the manifest pattern {}",
                built.unwrap_or("(unknown)")
            )));
        }
    }
    let opts = EvalOptions {
        filter: cfg.filter.clone(),
        bands: cfg.bands.clone(),
        grid_deg: cfg.grid_deg.clone(),
        label: cfg.label.clone(),
    };
    let mut report = evaluate_manifest(&cfg.manifest, &opts)?;
    report.config = serde_json::json!({ "eval": &cfg, "manifest": report.config });
    report.write(&cfg.output_dir)?;
    if let Some(s) = &report.sdr {
        eprintln!("{}: SDR {:.2} dB", report.label, s.aggregate_db);
    }
    println!("{}", cfg.output_dir.display());
    Ok(())
}

fn cmd_probe(cli: &Cli, args: &FilterArgs, centers: &[f64], width: f64, full: bool) -> CliResult<()> {
    let mut cfg: ProbeConfig = cli.resolve(None)?;
    if let Some(m) = &args.manifest {
        cfg.manifest = m.clone();
    }
    cfg.filter = args.resolve(&cfg.filter)?;
    if !centers.is_empty() {
        cfg.probes = centers
            .iter()
            .map(|&c| ProbeBand::centered(c, width))
            .collect::<ndf_core::Result<_>>()?;
    }
    if full {
        cfg.probes.push(ProbeBand::full());
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cli.log("probe", &cfg);
    let reports = run_bandpass_probe(&cfg)?;
    write_config(&cfg.output_dir, &cfg)?;
    for (probe, r) in cfg.probes.iter().zip(&reports) {
        if let Some(s) = &r.sdr {
            eprintln!("{}: SDR {:.2} dB", probe.label, s.aggregate_db);
        }
    }
    println!("{}", cfg.output_dir.display());
    Ok(())
}

fn cmd_sweep(cli: &Cli) -> CliResult<()> {
    let mut cfg: SweepConfig = cli.resolve(Some("dataset.seed"))?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cli.log("sweep", &cfg);
    let cells = run_aperture_sweep(&cfg)?;
    write_config(&cfg.output_dir, &cfg)?;
    eprintln!("{} cells", cells.len());
    println!("{}", cfg.output_dir.display());
    Ok(())
}

fn cmd_demo_interferer(cli: &Cli) -> CliResult<()> {
    let mut cfg: InterfererConfig = cli.resolve(Some("seed"))?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cli.log("demo-interferer", &cfg);
    let report = run_interferer_demo(&cfg)?;
    eprintln!(
        "null attenuation {:.1} dB at {:.1} deg",
        report.null_attenuation_db, report.null_azimuth_deg
    );
    println!("{}", cfg.output_dir.display());
    Ok(())
}

fn cmd_demo_stereo(cli: &Cli) -> CliResult<()> {
    let mut cfg: StereoConfig = cli.resolve(Some("seed"))?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cli.log("demo-stereo", &cfg);
    let report = run_stereo_demo(&cfg)?;
    eprintln!("{} segments", report.segments.len());
    println!("{}", cfg.output_dir.display());
    Ok(())
}

fn cmd_validate(manifest: &Path, sample: usize, all: bool, seed: u64) -> CliResult<()> {
    let opts = ValidateOptions {
        sample: if all { None } else { Some(sample) },
        seed,
    };
    let report = validate_manifest(manifest, opts)?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
    if report.is_ok() {
        Ok(())
    } else {
        Err(CliError::Invalid(report.violations.len()))
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match &cli.command {
        Command::Dataset => cmd_dataset(cli),
        Command::Design {
            diameter,
            pattern,
            wng_min,
            steering,
        } => cmd_design(cli, *diameter, pattern.as_deref(), *wng_min, *steering),
        Command::Eval { filter, pattern } => cmd_eval(cli, filter, pattern.as_deref()),
        Command::Probe {
            filter,
            centers,
            width,
            full,
        } => cmd_probe(cli, filter, centers, *width, *full),
        Command::Sweep => cmd_sweep(cli),
        Command::DemoInterferer => cmd_demo_interferer(cli),
        Command::DemoStereo => cmd_demo_stereo(cli),
        Command::Validate {
            manifest,
            sample,
            all,
            seed,
        } => cmd_validate(manifest, *sample, *all, *seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
