//! Property suites shared by the `properties` and `acceptance` targets.

#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sphere_mi::channel::{apply_channel, apply_is_delay, DelayKernel};
use sphere_mi::dsp::welch_psd;
use sphere_mi::mi::{histogram2d, mi_from_hist, mi_from_hist_corrected};
use sphere_mi::source::{gen_split_coherent, gen_split_thermal, gen_twin};
use sphere_mi::{Channel, ChannelParams, DigitizerSpec, SourceParams, Trace};

pub type Property = fn() -> Result<(), String>;

pub const ALL: &[(&str, Property)] = &[
    ("mi nonnegative", mi_nonnegative),
    ("mi symmetric under arm swap", mi_symmetric),
    (
        "mi invariant under joint permutation",
        mi_permutation_invariant,
    ),
    ("kernel normalized", kernel_normalized),
    ("kernel linear", kernel_linear),
    ("welch parseval", welch_parseval),
    ("simulation deterministic by seed", deterministic_by_seed),
];

fn run<S: Strategy>(
    name: &str,
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&strategy, test)
        .map_err(|e| format!("{name}: {e}"))
}

pub fn normals(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn trace(samples: Vec<f64>, rate: f64) -> Trace {
    let spec = DigitizerSpec::new(rate, samples.len(), 8, 255.0).unwrap();
    Trace::new(samples, spec, Channel::Probe, 0.0).unwrap()
}

fn correlated(seed: u64, n: usize, rho: f64) -> (Trace, Trace) {
    let x = normals(seed, n);
    let y = normals(seed ^ 0x9e37_79b9, n);
    let c = (1.0 - rho * rho).sqrt();
    let b = x.iter().zip(&y).map(|(x, y)| rho * x + c * y).collect();
    (trace(x, 1e9), trace(b, 1e9))
}

pub fn mi_nonnegative() -> Result<(), String> {
    let s = (
        any::<u64>(),
        64usize..3000,
        -0.99f64..0.99,
        2usize..30,
        2usize..30,
    );
    run("mi nonnegative", 64, s, |(seed, n, rho, na, nb)| {
        let (a, b) = correlated(seed, n, rho);
        let h = histogram2d(&a, &b, na, nb).unwrap();
        let mi = mi_from_hist(&h).unwrap();
        prop_assert!(mi >= -1e-12, "plug-in MI {mi}");
        prop_assert!(mi_from_hist_corrected(&h).unwrap() >= 0.0);
        Ok(())
    })
}

pub fn mi_symmetric() -> Result<(), String> {
    let s = (
        any::<u64>(),
        64usize..3000,
        -0.99f64..0.99,
        2usize..30,
        2usize..30,
    );
    run("mi symmetric", 64, s, |(seed, n, rho, na, nb)| {
        let (a, b) = correlated(seed, n, rho);
        let ab = mi_from_hist(&histogram2d(&a, &b, na, nb).unwrap()).unwrap();
        let ba = mi_from_hist(&histogram2d(&b, &a, nb, na).unwrap()).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.abs().max(1.0), "{ab} vs {ba}");
        Ok(())
    })
}

pub fn mi_permutation_invariant() -> Result<(), String> {
    let s = (any::<u64>(), 64usize..3000, -0.99f64..0.99, 2usize..30);
    run("mi permutation", 64, s, |(seed, n, rho, bins)| {
        let (a, b) = correlated(seed, n, rho);
        let base = mi_from_hist(&histogram2d(&a, &b, bins, bins).unwrap()).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(1)));
        let pa = trace(order.iter().map(|&i| a.samples()[i]).collect(), 1e9);
        let pb = trace(order.iter().map(|&i| b.samples()[i]).collect(), 1e9);
        let permuted = mi_from_hist(&histogram2d(&pa, &pb, bins, bins).unwrap()).unwrap();
        prop_assert!((base - permuted).abs() <= 1e-12 * base.abs().max(1.0));
        Ok(())
    })
}

pub fn kernel_normalized() -> Result<(), String> {
    let s = (
        -100e-9f64..100e-9,
        0.2e-9f64..60e-9,
        prop_oneof![Just(2e9), Just(1e9), Just(5e8)],
    );
    run("kernel normalized", 128, s, |(tau0, sigma, fs)| {
        let k = DelayKernel::new(tau0, sigma, fs);
        let total: f64 = k.weights.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12, "mass {total}");
        prop_assert!(k.weights.iter().all(|w| *w >= 0.0));
        // Cell integration rounds each delay to the grid, moving the mean by at most half a sample.
        prop_assert!(
            (k.mean() - tau0 * fs).abs() <= 0.5 + 1e-9,
            "mean {} vs {}",
            k.mean(),
            tau0 * fs
        );
        Ok(())
    })
}

pub fn kernel_linear() -> Result<(), String> {
    let s = (
        any::<u64>(),
        -40e-9f64..40e-9,
        1e-9f64..30e-9,
        -3.0f64..3.0,
        -3.0f64..3.0,
    );
    run(
        "kernel linear",
        32,
        s,
        |(seed, tau0, sigma, alpha, beta)| {
            let n = 4096;
            let x = normals(seed, n);
            let y = normals(seed.wrapping_add(7), n);
            let params = ChannelParams {
                tau0,
                sigma,
                ..ChannelParams::default()
            };
            let combo: Vec<f64> = x
                .iter()
                .zip(&y)
                .map(|(x, y)| alpha * x + beta * y)
                .collect();
            let lhs = apply_is_delay(&trace(combo, 2e9), &params).unwrap();
            let dx = apply_is_delay(&trace(x, 2e9), &params).unwrap();
            let dy = apply_is_delay(&trace(y, 2e9), &params).unwrap();
            for i in 0..n {
                let rhs = alpha * dx.samples()[i] + beta * dy.samples()[i];
                prop_assert!((lhs.samples()[i] - rhs).abs() < 1e-10, "sample {i}");
            }
            Ok(())
        },
    )
}

pub fn welch_parseval() -> Result<(), String> {
    let s = (any::<u64>(), 4u32..9, 2usize..12, 0.5e6f64..4e9);
    run("welch parseval", 64, s, |(seed, log_seg, extra, fs)| {
        let segment = 1usize << log_seg;
        let n = segment * extra + segment / 3;
        let x = normals(seed, n);
        let (f, psd) = welch_psd(&x, fs, segment).unwrap();
        let df = f[1] - f[0];
        let integral: f64 = psd.iter().sum::<f64>() * df;

        let hop = segment / 2;
        let count = (n - segment) / hop + 1;
        let w: Vec<f64> = (0..segment)
            .map(|i| {
                (std::f64::consts::PI * i as f64 / segment as f64)
                    .sin()
                    .powi(2)
            })
            .collect();
        let wp: f64 = w.iter().map(|v| v * v).sum();
        let mut direct = 0.0;
        for s in 0..count {
            let seg = &x[s * hop..s * hop + segment];
            let m = seg.iter().sum::<f64>() / segment as f64;
            direct += seg
                .iter()
                .zip(&w)
                .map(|(v, w)| ((v - m) * w).powi(2))
                .sum::<f64>();
        }
        direct /= wp * count as f64;
        prop_assert!(
            (integral - direct).abs() < 1e-10 * direct,
            "{integral} vs {direct}"
        );
        Ok(())
    })
}

pub fn deterministic_by_seed() -> Result<(), String> {
    let spec = DigitizerSpec::default().with_samples(1 << 14).unwrap();
    let params = SourceParams::default();
    let chan = ChannelParams::default();
    run("determinism", 8, any::<u64>(), |seed| {
        let twin = gen_twin(&params, &spec, seed).unwrap();
        prop_assert_eq!(&twin, &gen_twin(&params, &spec, seed).unwrap());
        prop_assert_ne!(
            &twin,
            &gen_twin(&params, &spec, seed.wrapping_add(1)).unwrap()
        );
        let through = apply_channel(&twin, &chan, seed).unwrap();
        prop_assert_eq!(&through, &apply_channel(&twin, &chan, seed).unwrap());
        let th = gen_split_thermal(&params, &spec, seed).unwrap();
        prop_assert_eq!(&th, &gen_split_thermal(&params, &spec, seed).unwrap());
        let co = gen_split_coherent(&params, &spec, seed).unwrap();
        prop_assert_eq!(&co, &gen_split_coherent(&params, &spec, seed).unwrap());
        Ok(())
    })
}
