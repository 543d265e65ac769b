//! Binomial log-pmf via the saddle-point expansion (Loader's method).
//!
//! `log P(X = x)` for `X ~ Bin(n, p)` stays accurate to a few ulps for `n`
//! in the tens of millions, where differences of log-gamma values lose
//! most of their digits.

const LN_2PI: f64 = 1.837_877_066_409_345_5;

// stirlerr(k) for k = 0..=15
#[allow(clippy::excessive_precision)]
const SFERR: [f64; 16] = [
    0.0,
    0.081_061_466_795_327_258_219_670_2,
    0.041_340_695_955_409_294_093_822_1,
    0.027_677_925_684_998_339_148_789_29,
    0.020_790_672_103_765_093_111_522_77,
    0.016_644_691_189_821_192_163_194_87,
    0.013_876_128_823_070_747_998_745_73,
    0.011_896_709_945_891_770_095_055_72,
    0.010_411_265_261_972_096_497_478_567,
    0.009_255_462_182_712_732_917_728_637,
    0.008_330_563_433_362_871_256_469_318,
    0.007_573_675_487_951_840_794_972_024,
    0.006_942_840_107_209_529_865_664_152,
    0.006_408_994_188_004_207_068_439_631,
    0.005_951_370_112_758_847_735_624_416,
    0.005_554_733_551_962_801_371_038_690,
];

/// `ln(k!) - ln(sqrt(2 pi k) (k/e)^k)` for integer `k`.
fn stirlerr(k: u64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if k <= 15 {
        return SFERR[k as usize];
    }
    let n = k as f64;
    let nn = n * n;
    if k > 500 {
        (S0 - S1 / nn) / n
    } else if k > 80 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if k > 35 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term `x ln(x/np) + np - x`, computed without cancellation.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / np).ln() + np - x
    }
}

/// `ln P(X = x)` for `X ~ Bin(n, p)`; `-inf` outside the support.
pub fn ln_pmf(x: u64, n: u64, p: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p));
    if x > n {
        return f64::NEG_INFINITY;
    }
    let q = 1.0 - p;
    if p == 0.0 {
        return if x == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if p == 1.0 {
        return if x == n { 0.0 } else { f64::NEG_INFINITY };
    }
    let nf = n as f64;
    if x == 0 {
        return nf * (-p).ln_1p();
    }
    if x == n {
        return nf * p.ln();
    }
    let xf = x as f64;
    let lc = stirlerr(n) - stirlerr(x) - stirlerr(n - x) - bd0(xf, nf * p) - bd0(nf - xf, nf * q);
    let lf = LN_2PI + xf.ln() + (-xf / nf).ln_1p();
    lc - 0.5 * lf
}

/// `ln C(a, k)` for integer `a`, by a running product. Exact enough for `a` up to a few thousand.
pub fn ln_choose(a: u64, k: u64) -> f64 {
    if k > a {
        return f64::NEG_INFINITY;
    }
    let k = k.min(a - k);
    let mut s = 0.0;
    for j in 0..k {
        s += ((a - j) as f64 / (j + 1) as f64).ln();
    }
    s
}

/// Upper bound on `sum_{x >= from} exp(ln_pmf(x) + a ln(x / scale))` for `a >= 0`.
///
/// Successive term ratios are nonincreasing once past the mode, so the tail
/// is dominated by a geometric series. Returns `None` when the ratio at
/// `from` is not below one; the caller should start further out.
pub fn ln_weighted_upper_tail(from: u64, n: u64, p: f64, a: f64, scale: f64) -> Option<f64> {
    if from > n {
        return Some(f64::NEG_INFINITY);
    }
    if from == 0 {
        return None;
    }
    let term = |x: u64| ln_pmf(x, n, p) + a * (x as f64 / scale).ln();
    let t0 = term(from);
    if from == n {
        return Some(t0);
    }
    // pmf ratio (n-x)/(x+1) * p/q times ((x+1)/x)^a
    let x = from as f64;
    let ln_ratio = ((n - from) as f64 / (x + 1.0)).ln() + p.ln() - (-p).ln_1p() + a * (1.0 / x).ln_1p();
    if ln_ratio >= 0.0 {
        return None;
    }
    Some(t0 - (-ln_ratio.exp()).ln_1p())
}

/// Upper bound on `ln P(X <= to)`; `None` if `to` is not below the mode.
pub fn ln_lower_tail(to: u64, n: u64, p: f64) -> Option<f64> {
    let t0 = ln_pmf(to, n, p);
    if to == 0 {
        return Some(t0);
    }
    // ratio P(x-1)/P(x) = x/(n-x+1) * q/p, nondecreasing as x decreases
    let x = to as f64;
    let ln_ratio = (x / (n as f64 - x + 1.0)).ln() + (-p).ln_1p() - p.ln();
    if ln_ratio >= 0.0 {
        return None;
    }
    Some(t0 - (-ln_ratio.exp()).ln_1p())
}
