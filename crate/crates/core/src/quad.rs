//! Globally adaptive Gauss-Kronrod (7/15) quadrature.

use crate::error::FitError;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
/// Gauss weights for the odd-indexed Kronrod nodes.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_INTERVALS: usize = 4000;

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> Piece {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &w)) in XGK[..7].iter().zip(&WGK[..7]).enumerate() {
        let pair = f(c - h * x) + f(c + h * x);
        kronrod += w * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    Piece {
        a,
        b,
        value: kronrod * h,
        error: ((kronrod - gauss) * h).abs(),
    }
}

/// Integral of `f` over `[a, b]`, split first at the sorted `breaks` inside
/// it and at most `max_piece` wide, then bisected where the Kronrod-Gauss
/// difference is largest until the summed estimate is below `abs_tol`.
pub fn integrate(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    breaks: &[f64],
    max_piece: f64,
    abs_tol: f64,
) -> Result<f64, FitError> {
    let mut points: Vec<f64> = vec![a, b];
    points.extend(breaks.iter().copied().filter(|x| *x > a && *x < b));
    points.sort_by(f64::total_cmp);
    points.dedup();
    let mut pieces: Vec<Piece> = Vec::new();
    for w in points.windows(2) {
        let parts = ((w[1] - w[0]) / max_piece).ceil().max(1.0) as usize;
        let h = (w[1] - w[0]) / parts as f64;
        for k in 0..parts {
            let lo = w[0] + k as f64 * h;
            let hi = if k + 1 == parts { w[1] } else { lo + h };
            pieces.push(gk15(&f, lo, hi));
        }
    }
    loop {
        let error: f64 = pieces.iter().map(|p| p.error).sum();
        if error <= abs_tol {
            return Ok(pieces.iter().map(|p| p.value).sum());
        }
        if pieces.len() >= MAX_INTERVALS {
            return Err(FitError::QuadratureNonConvergence(error));
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .map(|(i, _)| i)
            .expect("at least one piece");
        let p = pieces.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if !(mid > p.a && mid < p.b) {
            return Err(FitError::QuadratureNonConvergence(error));
        }
        pieces.push(gk15(&f, p.a, mid));
        pieces.push(gk15(&f, mid, p.b));
    }
}
