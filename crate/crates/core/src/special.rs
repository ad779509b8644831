//! Scaled complementary error function `erfcx(x) = exp(x^2) erfc(x)`.
//!
//! Rational approximations after W. J. Cody (1969, 1990), good to a few ulp.

const SQRT_PI_INV: f64 = 0.564_189_583_547_756_3;
const THRESHOLD: f64 = 0.46875;
/// Below this `exp(x^2)` overflows.
const XNEG: f64 = -26.628_735_713_751_4;

const A: [f64; 5] = [
    3.161_123_743_870_565_6,
    113.864_154_151_050_16,
    377.485_237_685_302_02,
    3_209.377_589_138_469_5,
    0.185_777_706_184_603_15,
];
const B: [f64; 4] = [
    23.601_290_952_344_12,
    244.024_637_934_444_17,
    1_282.616_526_077_372_3,
    2_844.236_833_439_170_6,
];
const C: [f64; 9] = [
    0.564_188_496_988_670_1,
    8.883_149_794_388_376,
    66.119_190_637_141_63,
    298.635_138_197_400_13,
    881.952_221_241_769_1,
    1_712.047_612_634_070_6,
    2_051.078_377_826_071_5,
    1_230.339_354_797_997_2,
    2.153_115_354_744_038_5e-8,
];
const D: [f64; 8] = [
    15.744_926_110_709_835,
    117.693_950_891_312_5,
    537.181_101_862_009_9,
    1_621.389_574_566_690_2,
    3_290.799_235_733_459_6,
    4_362.619_090_143_247,
    3_439.367_674_143_721_6,
    1_230.339_354_803_749_4,
];
const P: [f64; 6] = [
    0.305_326_634_961_232_36,
    0.360_344_899_949_804_45,
    0.125_781_726_111_229_26,
    0.016_083_785_148_742_275,
    6.587_491_615_298_378e-4,
    0.016_315_387_137_302_097,
];
const Q: [f64; 5] = [
    2.568_520_192_289_822,
    1.872_952_849_923_460_4,
    0.527_905_102_951_428_4,
    0.060_518_341_312_441_32,
    0.002_335_204_976_268_691_8,
];

/// `erf(x) / x` for `|x| <= THRESHOLD`, in terms of `z = x^2`.
fn small(z: f64) -> f64 {
    ((((A[4] * z + A[0]) * z + A[1]) * z + A[2]) * z + A[3])
        / ((((z + B[0]) * z + B[1]) * z + B[2]) * z + B[3])
}

/// `erfcx(y)` for `THRESHOLD < y <= 4`.
fn middle(y: f64) -> f64 {
    let mut num = C[8] * y;
    for c in &C[..7] {
        num = (num + c) * y;
    }
    num += C[7];
    let mut den = y;
    for d in &D[..7] {
        den = (den + d) * y;
    }
    den += D[7];
    num / den
}

/// `erfcx(y)` for `y > 4`.
fn large(y: f64) -> f64 {
    let z = 1.0 / (y * y);
    let num = z * (((((P[5] * z + P[0]) * z + P[1]) * z + P[2]) * z + P[3]) * z + P[4]);
    let den = ((((z + Q[0]) * z + Q[1]) * z + Q[2]) * z + Q[3]) * z + Q[4];
    (SQRT_PI_INV - num / den) / y
}

/// `exp(x^2)` with the square split so the rounding of `x^2` is not amplified.
fn exp_square(x: f64) -> f64 {
    let xt = (x * 16.0).trunc() / 16.0;
    (xt * xt).exp() * ((x - xt) * (x + xt)).exp()
}

/// Scaled complementary error function. Saturates at `f64::MAX` where the
/// true value overflows (`x` below about -26.6).
pub fn erfcx(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let y = x.abs();
    if y <= THRESHOLD {
        let z = y * y;
        return z.exp() * (1.0 - x * small(z));
    }
    if x < XNEG {
        return f64::MAX;
    }
    let r = if y <= 4.0 {
        middle(y)
    } else if y.is_infinite() {
        0.0
    } else {
        large(y)
    };
    if x < 0.0 {
        2.0 * exp_square(x) - r
    } else {
        r
    }
}
