//! Scalar numerics shared across the crate: error function, normal CDF and
//! its inverse, isotonic regression, and sample statistics.
//!
//! The error function uses Cody's rational Chebyshev approximations
//! (absolute error below 1e-15 in double precision), and the inverse normal
//! CDF uses Wichura's PPND16 algorithm. Both are implemented here rather
//! than pulled from a dependency so that frozen fixtures stay stable across
//! dependency upgrades.

/// 1/sqrt(pi)
const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// Error function, Cody-style rational approximation.
pub fn erf(x: f64) -> f64 {
    if x.abs() <= 0.46875 {
        erf_small(x)
    } else {
        let e = erfc_abs(x.abs());
        if x > 0.0 {
            1.0 - e
        } else {
            e - 1.0
        }
    }
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    if x.abs() <= 0.46875 {
        1.0 - erf_small(x)
    } else if x > 0.0 {
        erfc_abs(x)
    } else {
        2.0 - erfc_abs(-x)
    }
}

// erf on |x| <= 0.46875.
fn erf_small(x: f64) -> f64 {
    const A: [f64; 5] = [
        3.161_123_743_870_565_6e0,
        1.138_641_541_510_501_6e2,
        3.774_852_376_853_020_2e2,
        3.209_377_589_138_469_5e3,
        1.857_777_061_846_031_5e-1,
    ];
    const B: [f64; 4] = [
        2.360_129_095_234_412_1e1,
        2.440_246_379_344_441_7e2,
        1.282_616_526_077_372_3e3,
        2.844_236_833_439_170_6e3,
    ];
    let y = x * x;
    let mut num = A[4] * y;
    let mut den = y;
    for i in 0..3 {
        num = (num + A[i]) * y;
        den = (den + B[i]) * y;
    }
    x * (num + A[3]) / (den + B[3])
}

// erfc for x > 0.46875.
fn erfc_abs(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x > 26.543 {
        return 0.0;
    }
    let r = if x <= 4.0 {
        const C: [f64; 9] = [
            5.641_884_969_886_700_9e-1,
            8.883_149_794_388_375_9e0,
            6.611_919_063_714_163e1,
            2.986_351_381_974_001_3e2,
            8.819_522_212_417_690_9e2,
            1.712_047_612_634_070_6e3,
            2.051_078_377_826_071_5e3,
            1.230_339_354_797_997_2e3,
            2.153_115_354_744_038_5e-8,
        ];
        const D: [f64; 8] = [
            1.574_492_611_070_983_5e1,
            1.176_939_508_913_125e2,
            5.371_811_018_620_098_5e2,
            1.621_389_574_566_690_2e3,
            3.290_799_235_733_459_6e3,
            4.362_619_090_143_247e3,
            3.439_367_674_143_721_6e3,
            1.230_339_354_803_749_4e3,
        ];
        let mut num = C[8] * x;
        let mut den = x;
        for i in 0..7 {
            num = (num + C[i]) * x;
            den = (den + D[i]) * x;
        }
        (num + C[7]) / (den + D[7])
    } else {
        const P: [f64; 6] = [
            3.053_266_349_612_323_4e-1,
            3.603_448_999_498_044_4e-1,
            1.257_817_261_112_292_5e-1,
            1.608_378_514_874_227_7e-2,
            6.587_491_615_298_378e-4,
            1.631_538_713_730_209_8e-2,
        ];
        const Q: [f64; 5] = [
            2.568_520_192_289_822_4e0,
            1.872_952_849_923_460_4e0,
            5.279_051_029_514_284e-1,
            6.051_834_131_244_132e-2,
            2.335_204_976_268_691_8e-3,
        ];
        let ysq = 1.0 / (x * x);
        let mut num = P[5] * ysq;
        let mut den = ysq;
        for i in 0..4 {
            num = (num + P[i]) * ysq;
            den = (den + Q[i]) * ysq;
        }
        let r = ysq * (num + P[4]) / (den + Q[4]);
        (FRAC_1_SQRT_PI - r) / x
    };
    // Split exp(-x^2) to recover precision lost when x*x rounds.
    let ysq = (x * 16.0).trunc() / 16.0;
    let del = (x - ysq) * (x + ysq);
    (-ysq * ysq).exp() * (-del).exp() * r
}

/// Standard normal cumulative distribution function.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse of the standard normal CDF (Wichura's PPND16).
///
/// Accurate to roughly 1e-16 relative error for p in (0, 1). Out-of-range
/// inputs return +/- infinity.
pub fn norm_inv(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        const A: [f64; 8] = [
            3.387_132_872_796_366_5e0,
            1.331_416_678_917_843_8e2,
            1.971_590_950_306_551_3e3,
            1.373_169_376_550_946_1e4,
            4.592_195_393_154_987e4,
            6.726_577_092_700_870_4e4,
            3.343_057_558_358_813e4,
            2.509_080_928_730_122_7e3,
        ];
        const B: [f64; 7] = [
            4.231_333_070_160_091e1,
            6.871_870_074_920_579e2,
            5.394_196_021_424_751e3,
            2.121_379_430_158_659_7e4,
            3.930_789_580_009_271e4,
            2.872_908_573_572_194_3e4,
            5.226_495_278_852_545_5e3,
        ];
        let r = 0.180625 - q * q;
        let num = poly(&A, r);
        let den = poly_one(&B, r);
        return q * num / den;
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        const C: [f64; 8] = [
            1.423_437_110_749_683_5e0,
            4.630_337_846_156_546e0,
            5.769_497_221_460_691e0,
            3.647_848_324_763_204_5e0,
            1.270_458_252_452_368_4e0,
            2.417_807_251_774_506e-1,
            2.272_384_498_926_918_4e-2,
            7.745_450_142_783_414e-4,
        ];
        const D: [f64; 7] = [
            2.053_191_626_637_758_8e0,
            1.676_384_830_183_803_8e0,
            6.897_673_349_851e-1,
            1.481_039_764_274_800_8e-1,
            1.519_866_656_361_645_7e-2,
            5.475_938_084_995_345e-4,
            1.050_750_071_644_416_9e-9,
        ];
        r -= 1.6;
        poly(&C, r) / poly_one(&D, r)
    } else {
        const E: [f64; 8] = [
            6.657_904_643_501_103e0,
            5.463_784_911_164_114e0,
            1.784_826_539_917_291_3e0,
            2.965_605_718_285_048_9e-1,
            2.653_218_952_657_612_4e-2,
            1.242_660_947_388_078_4e-3,
            2.711_555_568_743_487_6e-5,
            2.010_334_399_292_288_1e-7,
        ];
        const F: [f64; 7] = [
            5.998_322_065_558_88e-1,
            1.369_298_809_227_358e-1,
            1.487_536_129_085_061_5e-2,
            7.868_691_311_456_133e-4,
            1.846_318_317_510_054_8e-5,
            1.421_511_758_316_446e-7,
            2.044_263_103_389_939_8e-15,
        ];
        r -= 5.0;
        poly(&E, r) / poly_one(&F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

// c[0] + c[1] r + c[2] r^2 + ...
fn poly(c: &[f64], r: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * r + k)
}

// 1 + c[0] r + c[1] r^2 + ...
fn poly_one(c: &[f64], r: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * r + k) * r + 1.0
}

/// In-place isotonic (non-decreasing) regression by pool-adjacent-violators,
/// unweighted. Used to repair small jitter in extracted exercise boundaries.
pub fn isotonic_non_decreasing(values: &mut [f64]) {
    let n = values.len();
    if n <= 1 {
        return;
    }
    // Blocks of (mean, count).
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(n);
    for &v in values.iter() {
        blocks.push((v, 1));
        while blocks.len() >= 2 {
            let (m2, c2) = blocks[blocks.len() - 1];
            let (m1, c1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            let merged = (
                (m1 * c1 as f64 + m2 * c2 as f64) / (c1 + c2) as f64,
                c1 + c2,
            );
            blocks.pop();
            blocks.pop();
            blocks.push(merged);
        }
    }
    let mut i = 0;
    for (m, c) in blocks {
        for _ in 0..c {
            values[i] = m;
            i += 1;
        }
    }
}

/// Sample mean; 0 for an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n-1 denominator); 0 for fewer than two points.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}
