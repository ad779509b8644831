//! Acceptance gate. Run with `cargo test --test acceptance -- --nocapture`
//! to see one PASS/FAIL line per criterion.

mod common;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sphere_mi::config::RunConfig;
use sphere_mi::dsp::{bandpass, difference_spectrum};
use sphere_mi::fit::{fit_channel, sigma_for_width};
use sphere_mi::mi::{
    histogram2d, mi_delay_scan, mi_from_hist, mi_from_hist_corrected, BinnedPair, ScanSettings,
};
use sphere_mi::model::{
    g_closed, g_numeric, gaussian_g, model_fwhm, oracle_deviation, peak_value, ModelParams,
};
use sphere_mi::pipeline::{run_pipeline, Report};
use sphere_mi::source::{gen_split_coherent, gen_twin};
use sphere_mi::{MiCurve, Scenario, SourceParams, TracePair};

const NS: f64 = 1e-9;

const REFERENCE: ModelParams = ModelParams {
    eta: 0.598,
    tau0: 32.7 * NS,
    sigma: 19.7 * NS,
    sigma0: 32.1 * NS,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within_time(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

/// Composite Simpson over `[tau0 - 30 sigma, tau0 + 30 sigma]`, split at the
/// kernel cusp.
fn simpson_oracle(t: f64, p: &ModelParams) -> f64 {
    let f = |tau: f64| {
        let g = (-(t - tau).powi(2) / (2.0 * p.sigma0 * p.sigma0)).exp();
        g * (-(tau - p.tau0).abs() / p.sigma).exp() / (2.0 * p.sigma)
    };
    let simpson = |a: f64, b: f64, n: usize| {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let reach = 30.0 * p.sigma;
    p.eta * (simpson(p.tau0 - reach, p.tau0, 200_000) + simpson(p.tau0, p.tau0 + reach, 200_000))
}

/// Half-maximum crossing to the right of `center` by bisection.
fn half_width(f: impl Fn(f64) -> f64, center: f64, guess: f64) -> f64 {
    let half = 0.5 * f(center);
    let mut hi = center + guess;
    while f(hi) > half {
        hi += guess;
    }
    let mut lo = center;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > half {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi) - center
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut tuples = vec![REFERENCE];
    for _ in 0..50 {
        tuples.push(ModelParams {
            eta: rng.random_range(0.05..1.0),
            tau0: rng.random_range(-50.0..100.0) * NS,
            sigma: rng.random_range(1.0..100.0) * NS,
            sigma0: rng.random_range(5.0..100.0) * NS,
        });
    }
    let mut worst: f64 = 0.0;
    for p in &tuples {
        worst = worst
            .max(oracle_deviation(p, -200.0 * NS, 300.0 * NS, 1001).map_err(|e| e.to_string())?);
    }
    let peak = peak_value(REFERENCE.eta, REFERENCE.sigma0, REFERENCE.sigma);
    let mut simpson_worst: f64 = 0.0;
    for k in 0..=10 {
        let t = (-200.0 + 50.0 * k as f64) * NS;
        simpson_worst = simpson_worst
            .max((g_closed(t, &REFERENCE) - simpson_oracle(t, &REFERENCE)).abs() / peak);
    }
    let elapsed = start.elapsed();
    check(
        worst < 1e-8 && simpson_worst < 1e-8 && within_time(elapsed, 10.0),
        format!(
            "max rel dev {worst:.2e} over 51 tuples x 1001 points, Simpson cross-check {simpson_worst:.2e}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let v = peak_value(REFERENCE.eta, REFERENCE.sigma0, REFERENCE.sigma);
    let numeric = g_numeric(REFERENCE.tau0, &REFERENCE).map_err(|e| e.to_string())?;
    let simpson = simpson_oracle(REFERENCE.tau0, &REFERENCE);
    let rel = (v - 0.475).abs() / 0.475;
    check(
        rel < 0.005 && (v - numeric).abs() < 1e-10 && (v - simpson).abs() < 1e-8,
        format!(
            "peak {v:.6} ({:.3} % from 0.475), quadrature {numeric:.6}, Simpson {simpson:.6}",
            100.0 * rel
        ),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let sigma0 = REFERENCE.sigma0;
    let gw = 2.0 * half_width(|t| gaussian_g(t, sigma0), 0.0, 10.0 * NS);
    let gw_ns = gw / NS;
    let cw = model_fwhm(sigma0, REFERENCE.sigma);
    let cw_oracle = {
        let right = half_width(
            |t| g_numeric(t, &REFERENCE).unwrap(),
            REFERENCE.tau0,
            10.0 * NS,
        );
        let left = half_width(
            |t| g_numeric(2.0 * REFERENCE.tau0 - t, &REFERENCE).unwrap(),
            REFERENCE.tau0,
            10.0 * NS,
        );
        right + left
    };
    let cw_ns = cw / NS;
    let elapsed = start.elapsed();
    check(
        (gw_ns - 75.6).abs() / 75.6 < 0.005
            && (gw_ns - 75.7).abs() / 75.7 < 0.005
            && (cw_ns - 93.5).abs() < 1.0
            && (cw - cw_oracle).abs() < 1e-6 * NS
            && within_time(elapsed, 1.0),
        format!(
            "Gaussian FWHM {gw_ns:.3} ns, model FWHM {cw_ns:.3} ns (numeric route {:.3} ns), {:.3} s",
            cw_oracle / NS,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let delays: Vec<f64> = (-600..=600).map(|i| i as f64 * 0.5 * NS).collect();
    let mi = delays.iter().map(|&t| g_closed(t, &REFERENCE)).collect();
    let curve = MiCurve::new(delays, mi, None, 1, true).map_err(|e| e.to_string())?;
    let fit = fit_channel(&curve, REFERENCE.sigma0).map_err(|e| e.to_string())?;
    let rel = |a: f64, b: f64| (a - b).abs() / b;
    let (et, es, ee) = (
        rel(fit.tau0, REFERENCE.tau0),
        rel(fit.sigma, REFERENCE.sigma),
        rel(fit.eta, REFERENCE.eta),
    );
    let from_quoted = sigma_for_width(93.5 * NS, REFERENCE.sigma0).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(
        et < 1e-3 && es < 1e-3 && ee < 1e-3 && within_time(elapsed, 1.0),
        format!(
            "tau0 {:.4} ns, sigma {:.4} ns, eta {:.5} (max rel err {:.1e}); quoted 93.5 ns width alone implies sigma {:.2} ns; {:.3} s",
            fit.tau0 / NS,
            fit.sigma / NS,
            fit.eta,
            et.max(es).max(ee),
            from_quoted / NS,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let n = 4_000_000;
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, &rho) in [0.0f64, 0.3, 0.6, 0.9].iter().enumerate() {
        let x = common::normals(100 + i as u64, n);
        let y = common::normals(200 + i as u64, n);
        let c = (1.0 - rho * rho).sqrt();
        let b: Vec<f64> = x.iter().zip(&y).map(|(x, y)| rho * x + c * y).collect();
        let h = histogram2d(&common::trace(x, 2e9), &common::trace(b, 2e9), 100, 100)
            .map_err(|e| e.to_string())?;
        let est = mi_from_hist(&h).map_err(|e| e.to_string())?;
        let truth = -0.5 * (1.0 - rho * rho).log2();
        ok &= (est - truth).abs() <= 0.05;
        if rho == 0.0 {
            let mm = mi_from_hist_corrected(&h).map_err(|e| e.to_string())?;
            ok &= mm < 0.01;
            parts.push(format!("rho 0: {est:.4} (MM {mm:.1e})"));
        } else {
            parts.push(format!("rho {rho}: {est:.4} vs {truth:.4}"));
        }
    }
    let elapsed = start.elapsed();
    ok &= within_time(elapsed, 30.0);
    check(
        ok,
        format!("{}; {:.1} s", parts.join(", "), elapsed.as_secs_f64()),
    )
}

fn criterion_6(report: &Report, elapsed: Duration) -> Outcome {
    let ratio = report.peak_ratio.ok_or("no channel fit")?;
    let shift = report.tau0_shift_ns.ok_or("no channel fit")?;
    let fc = report.fwhm_channel_ns.ok_or("no channel fit")?;
    let fu = report.fwhm_unobstructed_ns.ok_or("no unobstructed width")?;
    let ok = (ratio - 0.475).abs() <= 0.1 * 0.475
        && (shift - 32.7).abs() <= 1.0
        && (fc - 93.5).abs() <= 0.1 * 93.5
        && (fu - 75.7).abs() <= 0.1 * 75.7
        && within_time(elapsed, 300.0);
    check(
        ok,
        format!(
            "peak ratio {ratio:.4}, shift {shift:.2} ns, channel FWHM {fc:.2} ns, unobstructed FWHM {fu:.2} ns over {} seeds; {:.0} s on {} thread(s)",
            report.seeds.len(),
            elapsed.as_secs_f64(),
            rayon::current_num_threads()
        ),
    )
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let params = SourceParams::default();
    let cfg = RunConfig::default();
    let spec = cfg.digitizer;
    let twin = gen_twin(&params, &spec, 1).map_err(|e| e.to_string())?;
    let reference = gen_split_coherent(&params, &spec, 1).map_err(|e| e.to_string())?;
    let other = gen_split_coherent(&params, &spec, 2).map_err(|e| e.to_string())?;
    let seg = cfg.spectrum_segment;
    let sq = difference_spectrum(&twin, &reference, seg, cfg.band).map_err(|e| e.to_string())?;
    let flat = difference_spectrum(&other, &reference, seg, cfg.band).map_err(|e| e.to_string())?;
    // Second route: variance of the band-passed difference.
    let band_var = |p: &TracePair| {
        let f = p.map(|t| bandpass(t, cfg.band.0, cfg.band.1)).unwrap();
        let (lo, hi) = (100_000, f.a().len() - 100_000);
        let d: Vec<f64> = (lo..hi)
            .map(|i| f.a().samples()[i] - f.b().samples()[i])
            .collect();
        d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64
    };
    let ref_var = band_var(&reference);
    let sq_var_db = 10.0 * (band_var(&twin) / ref_var).log10();
    let flat_var_db = 10.0 * (band_var(&other) / ref_var).log10();
    let elapsed = start.elapsed();
    check(
        (sq.in_band_mean_db + 7.0).abs() <= 0.5
            && flat.in_band_mean_db.abs() <= 0.3
            && (sq_var_db + 7.0).abs() <= 0.5
            && flat_var_db.abs() <= 0.3
            && within_time(elapsed, 30.0),
        format!(
            "twin {:.3} dB, coherent {:.3} dB (band-passed variance route {sq_var_db:.3} / {flat_var_db:.3} dB); {:.1} s",
            sq.in_band_mean_db,
            flat.in_band_mean_db,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_8(report: &Report) -> Outcome {
    let get = |s| report.scenario(s).ok_or(format!("{s} missing"));
    let twin = get(Scenario::TwinUnobstructed)?;
    let thermal = get(Scenario::SplitThermal)?;
    let coherent = get(Scenario::SplitCoherent)?;
    let mut ok = true;
    let mut worst_coherent: f64 = 0.0;
    let mut min_gap: f64 = f64::INFINITY;
    for i in 0..report.seeds.len() {
        let (t, h, c) = (
            twin.per_seed_peak_normalized[i],
            thermal.per_seed_peak_normalized[i],
            coherent.per_seed_peak_normalized[i],
        );
        ok &= t > h && h > c && c < 0.02;
        worst_coherent = worst_coherent.max(c);
        min_gap = min_gap.min(h - c);
    }
    check(
        ok && report.seeds.len() == 10,
        format!(
            "ordering held in every seed of {}; split-thermal mean {:.3}, split-coherent max {worst_coherent:.4}",
            report.seeds.len(),
            thermal.peak_normalized
        ),
    )
}

fn criterion_9() -> Outcome {
    let cfg = RunConfig::default();
    let twin = gen_twin(&cfg.source, &cfg.digitizer, 9).map_err(|e| e.to_string())?;
    let pair = twin
        .map(|t| bandpass(t, cfg.band.0, cfg.band.1))
        .map_err(|e| e.to_string())?;
    let settings = ScanSettings {
        edge_exclusion: 0,
        ..cfg.scan_settings()
    };
    let start = Instant::now();
    let curve = mi_delay_scan(&pair, &settings).map_err(|e| e.to_string())?;
    let scan = start.elapsed();

    let start = Instant::now();
    let one = mi_from_hist(&histogram2d(pair.a(), pair.b(), 100, 100).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let single_cold = start.elapsed();
    let binned = BinnedPair::new(pair.a(), pair.b(), 100, 100).map_err(|e| e.to_string())?;
    let start = Instant::now();
    binned
        .mi(0, (0, binned.len()), false)
        .map_err(|e| e.to_string())?;
    let single_binned = start.elapsed();
    check(
        curve.len() == 1201 && one > 0.0 && within_time(scan, 60.0) && within_time(single_cold, 0.1),
        format!(
            "{}-point scan {:.1} s on {} thread(s); single shift {:.0} ms including binning, {:.0} ms pre-binned",
            curve.len(),
            scan.as_secs_f64(),
            rayon::current_num_threads(),
            single_cold.as_secs_f64() * 1e3,
            single_binned.as_secs_f64() * 1e3
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut failures = Vec::new();
    for (name, prop) in common::ALL {
        if let Err(e) = prop() {
            failures.push(format!("{name}: {e}"));
        }
    }
    if failures.is_empty() {
        Ok(format!("{} property suites green", common::ALL.len()))
    } else {
        Err(failures.join("; "))
    }
}

#[test]
fn acceptance() {
    let start = Instant::now();
    let pipeline = run_pipeline(&RunConfig::default());
    let pipeline_time = start.elapsed();
    let (c6, c8) = match &pipeline {
        Ok(out) => (
            criterion_6(&out.report, pipeline_time),
            criterion_8(&out.report),
        ),
        Err(e) => (Err(e.to_string()), Err(e.to_string())),
    };
    let results = [
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        c6,
        criterion_7(),
        c8,
        criterion_9(),
        criterion_10(),
    ];
    let mut failed = Vec::new();
    for (i, r) in results.iter().enumerate() {
        match r {
            Ok(d) => println!("criterion {:>2}: PASS  {d}", i + 1),
            Err(d) => {
                println!("criterion {:>2}: FAIL  {d}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
