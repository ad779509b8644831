//! End-to-end run: simulate, apply the channel, band-pass, scan, average,
//! normalize, fit, and report.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::apply_channel;
use crate::config::RunConfig;
use crate::dsp::{bandpass, difference_spectrum, SpectrumEstimate};
use crate::error::{ChannelError, ConfigError, DspError, FitError, IoError, MiError, SourceError};
use crate::fit::{fit_channel, fit_gaussian, quadratic_peak, refine_channel, GaussianFit};
use crate::io::{write_curve_csv, write_spectrum_csv};
use crate::mi::{
    average_curves, fwhm, independence_floor, mi_delay_scan_with_floor, normalize_curve,
    ScanSettings,
};
use crate::params::FitResult;
use crate::source::{gen_split_coherent, gen_split_thermal, gen_twin, quantize_pair};
use crate::trace::{MiCurve, Scenario, TracePair};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
/// Rotated-arm MI evaluations per pair for the bias floor.
pub const SURROGATES_PER_PAIR: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Config,
    Simulate,
    Channel,
    Filter,
    Scan,
    Average,
    Normalize,
    Fit,
    Spectrum,
    Output,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        f.write_str(s.as_str().expect("unit variant"))
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Mi(#[from] MiError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Error)]
#[error("{stage} stage failed{}: {source}", context(.scenario, .seed))]
pub struct PipelineError {
    pub stage: Stage,
    pub scenario: Option<Scenario>,
    pub seed: Option<u64>,
    #[source]
    pub source: StageError,
}

fn context(scenario: &Option<Scenario>, seed: &Option<u64>) -> String {
    match (scenario, seed) {
        (Some(s), Some(k)) => format!(" ({s}, seed {k})"),
        (Some(s), None) => format!(" ({s})"),
        (None, Some(k)) => format!(" (seed {k})"),
        (None, None) => String::new(),
    }
}

impl PipelineError {
    /// 2 configuration, 3 data, 4 fit.
    pub fn exit_code(&self) -> i32 {
        match self.source {
            StageError::Config(_) => 2,
            StageError::Fit(_) => 4,
            _ => 3,
        }
    }
}

fn at<E: Into<StageError>>(
    stage: Stage,
    scenario: Option<Scenario>,
    seed: Option<u64>,
) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError {
        stage,
        scenario,
        seed,
        source: e.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: Scenario,
    /// Peak of the averaged curve, bits.
    pub peak_bits: f64,
    /// Same, divided by the averaged unobstructed peak.
    pub peak_normalized: f64,
    pub peak_delay_ns: f64,
    pub fwhm_ns: Option<f64>,
    pub multimodal: bool,
    /// Largest one-standard-deviation spread across repeats, normalized units.
    pub max_spread_normalized: f64,
    pub per_seed_peak_bits: Vec<f64>,
    /// Each seed's peak over the same seed's unobstructed peak.
    pub per_seed_peak_normalized: Vec<f64>,
    /// Mean and sample standard deviation of the rotated-arm surrogate MI
    /// over all seeds, bits.
    pub floor_bits: f64,
    pub floor_sd_bits: f64,
    /// Averaged peak at most three surrogate standard deviations above the floor.
    pub at_bias_floor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub seeds: Vec<u64>,
    pub config: RunConfig,
    /// Sample pairs in every histogram.
    pub samples_per_shift: usize,
    /// Plug-in MI expected for independent, serially uncorrelated samples,
    /// bits. Band-limited traces sit well above it; see the per-scenario
    /// surrogate floors.
    pub iid_floor_bits: f64,
    pub max_clip_fraction: f64,
    pub scenarios: Vec<ScenarioSummary>,
    pub gaussian_fit: Option<GaussianFit>,
    pub fit: Option<FitResult>,
    pub refined_fit: Option<FitResult>,
    pub peak_ratio: Option<f64>,
    pub fwhm_unobstructed_ns: Option<f64>,
    pub fwhm_channel_ns: Option<f64>,
    pub tau0_shift_ns: Option<f64>,
    pub squeezing_in_band_db: Option<f64>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn scenario(&self, s: Scenario) -> Option<&ScenarioSummary> {
        self.scenarios.iter().find(|x| x.scenario == s)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: Report,
    /// Averaged curves normalized by the unobstructed peak.
    pub curves: Vec<(Scenario, MiCurve)>,
    /// Raw per-seed curves in seed order.
    pub per_seed: Vec<(Scenario, Vec<MiCurve>)>,
    pub spectrum: Option<SpectrumEstimate>,
}

impl PipelineOutput {
    pub fn curve(&self, s: Scenario) -> Option<&MiCurve> {
        self.curves.iter().find(|(k, _)| *k == s).map(|(_, c)| c)
    }
}

/// Quantize (if configured), band-pass, and scan one pair. Returns the
/// curve, the clipped fraction, and the surrogate floor samples.
pub fn analyze_pair(
    pair: &TracePair,
    cfg: &RunConfig,
    scan: &ScanSettings,
) -> Result<(MiCurve, f64, Vec<f64>), PipelineError> {
    let sc = Some(pair.scenario());
    let (pair, clip) = if cfg.quantize {
        quantize_pair(pair, &cfg.digitizer)
    } else {
        (pair.clone(), 0.0)
    };
    let (lo, hi) = cfg.band;
    let filtered = pair
        .map(|t| bandpass(t, lo, hi))
        .map_err(at(Stage::Filter, sc, None))?;
    let (curve, floor) = mi_delay_scan_with_floor(&filtered, scan, SURROGATES_PER_PAIR)
        .map_err(at(Stage::Scan, sc, None))?;
    Ok((curve, clip, floor))
}

fn simulate(
    cfg: &RunConfig,
    scenario: Scenario,
    twin: &TracePair,
    seed: u64,
) -> Result<TracePair, PipelineError> {
    let sim = at(Stage::Simulate, Some(scenario), Some(seed));
    let chan = at(Stage::Channel, Some(scenario), Some(seed));
    match scenario {
        Scenario::TwinUnobstructed => Ok(twin.clone()),
        Scenario::TwinChannel => apply_channel(twin, &cfg.channel, seed).map_err(chan),
        Scenario::ScattererOnly => apply_channel(twin, &cfg.scatterer_only, seed).map_err(chan),
        Scenario::SplitThermal => gen_split_thermal(&cfg.source, &cfg.digitizer, seed).map_err(sim),
        Scenario::SplitCoherent => {
            gen_split_coherent(&cfg.source, &cfg.digitizer, seed).map_err(sim)
        }
    }
}

/// Run every configured scenario for every seed and fit the result.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutput, PipelineError> {
    cfg.validate().map_err(at(Stage::Config, None, None))?;
    let scan = cfg.scan_settings();
    let fs = cfg.digitizer.sample_rate();
    let window =
        scan.window(cfg.digitizer.n_samples(), fs)
            .map_err(at(Stage::Config, None, None))?;
    let samples_per_shift = window.1 - window.0;
    let scenarios: Vec<Scenario> = Scenario::ALL
        .iter()
        .copied()
        .filter(|s| cfg.runs(*s))
        .collect();
    let seeds = cfg.seeds();
    let mut per_seed: Vec<(Scenario, Vec<MiCurve>)> =
        scenarios.iter().map(|s| (*s, Vec::new())).collect();
    let mut floors: Vec<Vec<f64>> = vec![Vec::new(); scenarios.len()];
    let mut max_clip: f64 = 0.0;
    let mut spectrum = None;

    for (r, &seed) in seeds.iter().enumerate() {
        log::info!("repeat {}/{} (seed {seed})", r + 1, seeds.len());
        let twin = gen_twin(&cfg.source, &cfg.digitizer, seed).map_err(at(
            Stage::Simulate,
            Some(Scenario::TwinUnobstructed),
            Some(seed),
        ))?;
        if r == 0 {
            let reference = gen_split_coherent(&cfg.source, &cfg.digitizer, seed).map_err(at(
                Stage::Simulate,
                Some(Scenario::SplitCoherent),
                Some(seed),
            ))?;
            let (tq, rq) = if cfg.quantize {
                (
                    quantize_pair(&twin, &cfg.digitizer).0,
                    quantize_pair(&reference, &cfg.digitizer).0,
                )
            } else {
                (twin.clone(), reference)
            };
            spectrum = Some(
                difference_spectrum(&tq, &rq, cfg.spectrum_segment, cfg.band).map_err(at(
                    Stage::Spectrum,
                    None,
                    Some(seed),
                ))?,
            );
        }
        for ((scenario, curves), floor) in per_seed.iter_mut().zip(floors.iter_mut()) {
            let pair = simulate(cfg, *scenario, &twin, seed)?;
            let (curve, clip, f) = analyze_pair(&pair, cfg, &scan).map_err(|mut e| {
                e.seed = Some(seed);
                e
            })?;
            max_clip = max_clip.max(clip);
            log::debug!(
                "{scenario}: peak {:.4} bits at {:.1} ns",
                curve.peak(),
                curve.peak_delay() * 1e9
            );
            curves.push(curve);
            floor.extend(f);
        }
    }

    let mut warnings = Vec::new();
    if max_clip > 0.0 {
        warnings.push(format!("quantizer clipped {:.3e} of samples", max_clip));
    }
    let twin_raw = &per_seed
        .iter()
        .find(|(s, _)| *s == Scenario::TwinUnobstructed)
        .expect("reference scenario always runs")
        .1;
    let twin_avg = average_curves(twin_raw).map_err(at(
        Stage::Average,
        Some(Scenario::TwinUnobstructed),
        None,
    ))?;
    let reference_peak = twin_avg.peak();
    let iid_floor = independence_floor(cfg.n_bins_a, cfg.n_bins_b, samples_per_shift as u64);

    let mut curves = Vec::new();
    let mut summaries = Vec::new();
    for ((scenario, raw), floor) in per_seed.iter().zip(&floors) {
        let sc = Some(*scenario);
        let avg = average_curves(raw).map_err(at(Stage::Average, sc, None))?;
        let norm = normalize_curve(&avg, reference_peak).map_err(at(Stage::Normalize, sc, None))?;
        let width = fwhm(&norm).ok();
        let per_seed_peak_bits: Vec<f64> = raw.iter().map(MiCurve::peak).collect();
        let per_seed_peak_normalized = raw
            .iter()
            .zip(twin_raw)
            .map(|(c, t)| c.peak() / t.peak())
            .collect();
        let (floor_bits, floor_sd_bits) = mean_sd(floor);
        summaries.push(ScenarioSummary {
            scenario: *scenario,
            peak_bits: avg.peak(),
            peak_normalized: norm.peak(),
            peak_delay_ns: norm.peak_delay() * 1e9,
            fwhm_ns: width.map(|w| w.width * 1e9),
            multimodal: width.is_some_and(|w| w.multimodal),
            max_spread_normalized: norm
                .spread()
                .map_or(0.0, |s| s.iter().cloned().fold(0.0, f64::max)),
            per_seed_peak_bits,
            per_seed_peak_normalized,
            floor_bits,
            floor_sd_bits,
            at_bias_floor: avg.peak() <= floor_bits + 3.0 * floor_sd_bits,
        });
        curves.push((*scenario, norm));
    }

    let twin_norm = &curves[0].1;
    let fit_err = at(Stage::Fit, Some(Scenario::TwinUnobstructed), None);
    let gaussian = fit_gaussian(twin_norm).map_err(fit_err)?;
    let mut fit = None;
    let mut refined = None;
    let mut tau0_shift = None;
    if let Some((_, chan)) = curves.iter().find(|(s, _)| *s == Scenario::TwinChannel) {
        let staged = fit_channel(chan, gaussian.sigma0).map_err(at(
            Stage::Fit,
            Some(Scenario::TwinChannel),
            None,
        ))?;
        let (twin_peak, _) = quadratic_peak(twin_norm).map_err(at(
            Stage::Fit,
            Some(Scenario::TwinUnobstructed),
            None,
        ))?;
        tau0_shift = Some((staged.tau0 - twin_peak) * 1e9);
        match refine_channel(chan, &staged) {
            Ok(r) => refined = Some(r),
            Err(e) => warnings.push(format!("full-curve refinement failed: {e}")),
        }
        fit = Some(staged);
    }
    for s in &summaries {
        if s.multimodal {
            warnings.push(format!(
                "{} curve has more than two half-maximum crossings",
                s.scenario
            ));
        }
    }

    let report = Report {
        schema_version: REPORT_SCHEMA_VERSION,
        seeds,
        config: cfg.clone(),
        samples_per_shift,
        iid_floor_bits: iid_floor,
        max_clip_fraction: max_clip,
        peak_ratio: fit.map(|f| f.peak_ratio),
        fwhm_unobstructed_ns: summaries[0].fwhm_ns,
        fwhm_channel_ns: fit.map(|f| f.fwhm_channel * 1e9),
        tau0_shift_ns: tau0_shift,
        squeezing_in_band_db: spectrum.as_ref().map(|s| s.in_band_mean_db),
        scenarios: summaries,
        gaussian_fit: Some(gaussian),
        fit,
        refined_fit: refined,
        warnings,
    };
    let out = PipelineOutput {
        report,
        curves,
        per_seed,
        spectrum,
    };
    if let Some(dir) = &cfg.output_dir {
        write_outputs(&out, dir)?;
    }
    Ok(out)
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = if x.len() > 1 {
        x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// `report.json`, `curve_<scenario>.csv` for each scenario, and `spectrum.csv`.
pub fn write_outputs(out: &PipelineOutput, dir: &Path) -> Result<(), PipelineError> {
    let err = |e: IoError| at(Stage::Output, None, None)(e);
    std::fs::create_dir_all(dir).map_err(|e| err(e.into()))?;
    let json = serde_json::to_string_pretty(&out.report).map_err(|e| err(e.into()))?;
    std::fs::write(dir.join("report.json"), json).map_err(|e| err(e.into()))?;
    for (s, c) in &out.curves {
        write_curve_csv(&dir.join(format!("curve_{s}.csv")), c).map_err(err)?;
    }
    if let Some(s) = &out.spectrum {
        write_spectrum_csv(&dir.join("spectrum.csv"), s).map_err(err)?;
    }
    Ok(())
}
