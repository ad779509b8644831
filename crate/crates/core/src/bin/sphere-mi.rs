use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sphere_mi::config::RunConfig;
use sphere_mi::dsp::{bandpass, difference_spectrum};
use sphere_mi::fit::{fit_channel, fit_gaussian, refine_channel};
use sphere_mi::io::{
    load_trace, read_curve_csv, write_curve_csv, write_spectrum_csv, write_twbm, CsvOptions,
    Encoding, TraceFormat,
};
use sphere_mi::mi::mi_delay_scan;
use sphere_mi::model::{oracle_deviation, ModelParams};
use sphere_mi::pipeline::{run_pipeline, PipelineError};
use sphere_mi::source::quantize_pair;
use sphere_mi::trace::{Channel, Scenario, TracePair};
use sphere_mi::{ConfigError, FitError, IoError};

#[derive(Parser)]
#[command(
    name = "sphere-mi",
    version,
    about = "Delay-scanned mutual information of twin-beam traces"
)]
struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write both arms as TWBM files.
    Simulate(SimulateArgs),
    /// MI delay scan on a pair of trace files.
    Analyze(AnalyzeArgs),
    /// Intensity-difference spectrum of a pair against a reference pair.
    Spectrum(SpectrumArgs),
    /// Staged model fit of a channel MI curve.
    Fit(FitArgs),
    /// Compare the closed-form model with numeric convolution.
    OracleCheck(OracleArgs),
    /// Simulate, scan, average, normalize, and fit every scenario.
    Pipeline(PipelineArgs),
}

/// Analysis settings. Flags override the config file.
#[derive(Args, Clone, Default)]
struct Common {
    /// JSON or TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Analysis band as `lo:hi`, MHz.
    #[arg(long, value_parser = parse_band)]
    band_mhz: Option<(f64, f64)>,
    /// Bins per axis, or `na:nb`.
    #[arg(long, value_parser = parse_bins)]
    bins: Option<(usize, usize)>,
    #[arg(long)]
    step_ns: Option<f64>,
    /// Half-width of the delay scan, ns.
    #[arg(long)]
    range_ns: Option<f64>,
    /// Report Miller-Madow corrected MI.
    #[arg(long)]
    bias_correction: bool,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_path(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.base_seed = s;
        }
        if let Some(r) = self.repeats {
            cfg.repeats = r;
        }
        if let Some((lo, hi)) = self.band_mhz {
            cfg.band = (lo * 1e6, hi * 1e6);
        }
        if let Some((a, b)) = self.bins {
            cfg.n_bins_a = a;
            cfg.n_bins_b = b;
        }
        if let Some(s) = self.step_ns {
            cfg.step = s * 1e-9;
        }
        if let Some(r) = self.range_ns {
            cfg.range = r * 1e-9;
        }
        cfg.bias_correction |= self.bias_correction;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "twin-unobstructed")]
    scenario: Scenario,
    /// Write raw f64 samples instead of 8-bit codes.
    #[arg(long)]
    raw: bool,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TraceInput {
    /// auto, csv, or twbm.
    #[arg(long, default_value = "auto")]
    format: TraceFormat,
    /// Sample rate for single-column CSV, GS/s.
    #[arg(long, default_value_t = 2.0)]
    rate_gsps: f64,
}

impl TraceInput {
    fn load_pair(&self, a: &Path, b: &Path, scenario: Scenario) -> Result<TracePair, CliError> {
        let opts = CsvOptions {
            sample_rate: self.rate_gsps * 1e9,
            ..CsvOptions::default()
        };
        let ta = load_trace(a, self.format, &opts)?;
        let tb = load_trace(
            b,
            self.format,
            &CsvOptions {
                label: Channel::Conjugate,
                ..opts
            },
        )?;
        TracePair::new(ta, tb, scenario).map_err(|e| CliError::Data(e.to_string()))
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    a: PathBuf,
    b: PathBuf,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    input: TraceInput,
    /// Skip the band-pass filter.
    #[arg(long)]
    no_filter: bool,
    /// Curve CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SpectrumArgs {
    a: PathBuf,
    b: PathBuf,
    reference_a: PathBuf,
    reference_b: PathBuf,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    input: TraceInput,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Channel MI curve CSV (delay_ns, mi, spread).
    curve: PathBuf,
    /// Unobstructed curve used to fit the Gaussian width.
    #[arg(long, required_unless_present = "sigma0_ns")]
    reference: Option<PathBuf>,
    /// Fixed Gaussian width instead of a reference curve, ns.
    #[arg(long, conflicts_with = "reference")]
    sigma0_ns: Option<f64>,
    /// Follow the staged fit with a full-curve least-squares refinement.
    #[arg(long)]
    refine: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 0.598)]
    eta: f64,
    #[arg(long, default_value_t = 32.7)]
    tau0_ns: f64,
    #[arg(long, default_value_t = 19.7)]
    sigma_ns: f64,
    #[arg(long, default_value_t = 32.1)]
    sigma0_ns: f64,
    /// Additional random parameter tuples.
    #[arg(long, default_value_t = 50)]
    random: usize,
    #[arg(long, default_value_t = 1001)]
    points: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    tolerance: f64,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    common: Common,
    /// Directory for report.json and CSV files.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Fit(_) => 4,
            CliError::Pipeline(e) => e.exit_code() as u8,
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected lo:hi")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((lo, hi))
}

fn parse_bins(s: &str) -> Result<(usize, usize), String> {
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{e}"));
    match s.split_once(':') {
        Some((a, b)) => Ok((parse(a)?, parse(b)?)),
        None => {
            let n = parse(s)?;
            Ok((n, n))
        }
    }
}

fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let cfg = args.common.resolve()?;
    let seed = cfg.base_seed;
    let twin = sphere_mi::source::gen_twin(&cfg.source, &cfg.digitizer, seed).map_err(data)?;
    let pair = match args.scenario {
        Scenario::TwinUnobstructed => twin,
        Scenario::TwinChannel => {
            sphere_mi::channel::apply_channel(&twin, &cfg.channel, seed).map_err(data)?
        }
        Scenario::ScattererOnly => {
            sphere_mi::channel::apply_channel(&twin, &cfg.scatterer_only, seed).map_err(data)?
        }
        Scenario::SplitThermal => {
            sphere_mi::source::gen_split_thermal(&cfg.source, &cfg.digitizer, seed).map_err(data)?
        }
        Scenario::SplitCoherent => {
            sphere_mi::source::gen_split_coherent(&cfg.source, &cfg.digitizer, seed)
                .map_err(data)?
        }
    };
    let (pair, encoding) = if args.raw {
        (pair, Encoding::F64Le)
    } else {
        let (q, clip) = quantize_pair(&pair, &cfg.digitizer);
        if clip > 0.0 {
            log::warn!("quantizer clipped {clip:.3e} of samples");
        }
        (q, Encoding::U8)
    };
    std::fs::create_dir_all(&args.out_dir).map_err(data)?;
    for (t, name) in [(pair.a(), "a"), (pair.b(), "b")] {
        let path = args.out_dir.join(format!("{}_{name}.twbm", args.scenario));
        write_twbm(&path, t, encoding)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let cfg = args.common.resolve()?;
    let pair = args
        .input
        .load_pair(&args.a, &args.b, Scenario::TwinUnobstructed)?;
    let pair = if args.no_filter {
        pair
    } else {
        pair.map(|t| bandpass(t, cfg.band.0, cfg.band.1))
            .map_err(data)?
    };
    let mut scan = cfg.scan_settings();
    scan.edge_exclusion = scan.edge_exclusion.min(pair.a().len() / 8);
    let curve = mi_delay_scan(&pair, &scan).map_err(data)?;
    log::info!(
        "peak {:.5} bits at {:.2} ns",
        curve.peak(),
        curve.peak_delay() * 1e9
    );
    match &args.out {
        Some(p) => write_curve_csv(p, &curve)?,
        None => {
            println!("delay_ns,mi,spread");
            for (d, m) in curve.delays().iter().zip(curve.mi()) {
                println!("{},{},0", d * 1e9, m);
            }
        }
    }
    Ok(())
}

fn spectrum(args: &SpectrumArgs) -> Result<(), CliError> {
    let cfg = args.common.resolve()?;
    let pair = args
        .input
        .load_pair(&args.a, &args.b, Scenario::TwinUnobstructed)?;
    let reference = args.input.load_pair(
        &args.reference_a,
        &args.reference_b,
        Scenario::SplitCoherent,
    )?;
    let s = difference_spectrum(&pair, &reference, cfg.spectrum_segment, cfg.band).map_err(data)?;
    println!("in-band mean: {:.3} dB", s.in_band_mean_db);
    if let Some(p) = &args.out {
        write_spectrum_csv(p, &s)?;
    }
    Ok(())
}

fn fit(args: &FitArgs) -> Result<(), CliError> {
    let chan = read_curve_csv(&args.curve, false)?;
    let (sigma0, chan) = match (&args.reference, args.sigma0_ns) {
        (Some(r), _) => {
            let twin = read_curve_csv(r, false)?;
            let peak = twin.peak();
            let g = fit_gaussian(
                &twin
                    .with_values(twin.mi().iter().map(|v| v / peak).collect(), None)
                    .map_err(data)?,
            )?;
            let scaled = chan
                .with_values(chan.mi().iter().map(|v| v / peak).collect(), None)
                .map_err(data)?;
            (g.sigma0, scaled)
        }
        (None, Some(s)) => (s * 1e-9, chan),
        (None, None) => unreachable!("clap requires one of them"),
    };
    let mut result = fit_channel(&chan, sigma0)?;
    if args.refine {
        result = refine_channel(&chan, &result)?;
    }
    println!("{}", serde_json::to_string_pretty(&result).map_err(data)?);
    Ok(())
}

fn oracle_check(args: &OracleArgs) -> Result<(), CliError> {
    let ns = 1e-9;
    let mut tuples = vec![ModelParams {
        eta: args.eta,
        tau0: args.tau0_ns * ns,
        sigma: args.sigma_ns * ns,
        sigma0: args.sigma0_ns * ns,
    }];
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    for _ in 0..args.random {
        tuples.push(ModelParams {
            eta: rng.random_range(0.05..1.0),
            tau0: rng.random_range(-50.0..100.0) * ns,
            sigma: rng.random_range(1.0..100.0) * ns,
            sigma0: rng.random_range(5.0..100.0) * ns,
        });
    }
    let mut worst: f64 = 0.0;
    for p in &tuples {
        let d = oracle_deviation(p, -200.0 * ns, 300.0 * ns, args.points)?;
        log::debug!("{p:?}: {d:.3e}");
        worst = worst.max(d);
    }
    let pass = worst < args.tolerance;
    println!(
        "{} tuples, max relative deviation {worst:.3e} ({})",
        tuples.len(),
        if pass { "pass" } else { "FAIL" }
    );
    if pass {
        Ok(())
    } else {
        Err(CliError::Fit(FitError::InvalidParams(format!(
            "deviation {worst:.3e} exceeds {:.1e}",
            args.tolerance
        ))))
    }
}

fn pipeline(args: &PipelineArgs) -> Result<(), CliError> {
    let mut cfg = args.common.resolve()?;
    if args.out_dir.is_some() {
        cfg.output_dir = args.out_dir.clone();
    }
    let out = run_pipeline(&cfg)?;
    let r = &out.report;
    for w in &r.warnings {
        log::warn!("{w}");
    }
    for s in &r.scenarios {
        println!(
            "{:<18} peak {:.4} (normalized) at {:7.2} ns, FWHM {}",
            s.scenario.to_string(),
            s.peak_normalized,
            s.peak_delay_ns,
            s.fwhm_ns.map_or("n/a".into(), |w| format!("{w:.2} ns")),
        );
    }
    if let Some(f) = &r.fit {
        println!(
            "fit: sigma0 {:.2} ns, tau0 {:.2} ns, sigma {:.2} ns, eta {:.4}, peak ratio {:.4}",
            f.sigma0 * 1e9,
            f.tau0 * 1e9,
            f.sigma * 1e9,
            f.eta,
            f.peak_ratio
        );
    }
    if let Some(db) = r.squeezing_in_band_db {
        println!("in-band squeezing {db:.3} dB");
    }
    if cfg.output_dir.is_none() {
        println!("{}", serde_json::to_string_pretty(r).map_err(data)?);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze(a),
        Command::Spectrum(a) => spectrum(a),
        Command::Fit(a) => fit(a),
        Command::OracleCheck(a) => oracle_check(a),
        Command::Pipeline(a) => pipeline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
