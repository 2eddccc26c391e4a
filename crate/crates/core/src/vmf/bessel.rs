//! Logarithm of the modified Bessel function of the first kind, `log I_nu(x)`.
//!
//! Three evaluation regimes:
//! - ascending power series when `x < max(20, nu)`;
//! - Debye's uniform asymptotic expansion in `nu` (terms through `u_9`) when `nu >= 10`;
//! - Hankel's large-argument expansion otherwise (small order, `x >= 20`).

use crate::error::{Error, Result};

/// Below this order the uniform expansion is not accurate enough and the large-argument
/// expansion takes over for `x >= SERIES_LIMIT`.
pub const UNIFORM_MIN_ORDER: f64 = 10.0;
pub const SERIES_LIMIT: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Series,
    Uniform,
    LargeArgument,
}

pub fn regime(nu: f64, x: f64) -> Regime {
    if x < SERIES_LIMIT.max(nu) {
        Regime::Series
    } else if nu >= UNIFORM_MIN_ORDER {
        Regime::Uniform
    } else {
        Regime::LargeArgument
    }
}

/// `log I_nu(x)` for `nu >= 0`, `x > 0`.
pub fn log_bessel_i(nu: f64, x: f64) -> Result<f64> {
    check_args(nu, x)?;
    Ok(eval(regime(nu, x), nu, x))
}

/// `(log I_nu(x), log I_{nu+1}(x))`, both evaluated in the regime selected for `nu`, so their
/// difference is consistent with the derivative of `log I_nu` used by the vMF loss.
pub fn log_bessel_i_pair(nu: f64, x: f64) -> Result<(f64, f64)> {
    check_args(nu, x)?;
    let r = regime(nu, x);
    Ok((eval(r, nu, x), eval(r, nu + 1.0, x)))
}

fn check_args(nu: f64, x: f64) -> Result<()> {
    if !(nu >= 0.0) || !nu.is_finite() {
        return Err(Error::invalid(format!("Bessel order must be finite and >= 0, got {nu}")));
    }
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::invalid(format!("Bessel argument must be finite and > 0, got {x}")));
    }
    Ok(())
}

pub fn eval(regime: Regime, nu: f64, x: f64) -> f64 {
    match regime {
        Regime::Series => log_series(nu, x),
        Regime::Uniform => log_uniform(nu, x),
        Regime::LargeArgument => log_large_argument(nu, x),
    }
}

/// `sum_k (x/2)^(2k+nu) / (k! Gamma(k+nu+1))`, accumulated relative to the first term with
/// periodic rescaling so large partial sums cannot overflow.
pub fn log_series(nu: f64, x: f64) -> f64 {
    const RESCALE: f64 = 1e250;
    let q = 0.25 * x * x;
    let log_first = nu * (0.5 * x).ln() - libm::lgamma(nu + 1.0);
    let mut log_scale = 0.0;
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let mut k = 1.0f64;
    loop {
        term *= q / (k * (k + nu));
        sum += term;
        let shrinking = q < k * (k + nu);
        if shrinking && term < 1e-17 * sum {
            break;
        }
        if sum > RESCALE {
            sum /= RESCALE;
            term /= RESCALE;
            log_scale += RESCALE.ln();
        }
        k += 1.0;
        if k > 1e6 {
            break;
        }
    }
    log_first + log_scale + sum.ln()
}

// Debye polynomials u_k(t), coefficients of t^0..t^(3k) in ascending order.
const U1: [f64; 4] = [0.0, 1.25e-1, 0.0, -2.083_333_333_333_333_3e-1];
const U2: [f64; 7] = [0.0, 0.0, 7.031_25e-2, 0.0, -4.010_416_666_666_666_7e-1, 0.0, 3.342_013_888_888_889e-1];
const U3: [f64; 10] = [
    0.0, 0.0, 0.0, 7.324_218_75e-2, 0.0, -8.912_109_375e-1, 0.0, 1.846_462_673_611_111_1, 0.0,
    -1.025_812_596_450_617_3,
];
const U4: [f64; 13] = [
    0.0, 0.0, 0.0, 0.0, 1.121_520_996_093_75e-1, 0.0, -2.364_086_914_062_5, 0.0, 8.789_123_535_156_25,
    0.0, -1.120_700_261_622_299_4e1, 0.0, 4.669_584_423_426_247,
];
const U5: [f64; 16] = [
    0.0, 0.0, 0.0, 0.0, 0.0, 2.271_080_017_089_843_8e-1, 0.0, -7.368_794_359_479_632, 0.0,
    4.253_499_874_538_845_5e1, 0.0, -9.181_824_154_324_002e1, 0.0, 8.463_621_767_460_073e1, 0.0,
    -2.821_207_255_820_024_5e1,
];
const U6: [f64; 19] = [
    0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 5.725_014_209_747_314e-1, 0.0, -2.649_143_048_695_155_5e1, 0.0,
    2.181_905_117_442_116e2, 0.0, -6.995_796_273_761_325e2, 0.0, 1.059_990_452_527_999_9e3, 0.0,
    -7.652_524_681_411_816e2, 0.0, 2.125_701_300_392_171_2e2,
];
const U7: [f64; 22] = [
    0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.727_727_502_584_457_4, 0.0, -1.080_909_197_883_946_6e2, 0.0,
    1.200_902_913_216_352_5e3, 0.0, -5.305_646_978_613_403e3, 0.0, 1.165_539_333_686_453_3e4, 0.0,
    -1.358_655_000_643_413_7e4, 0.0, 8.061_722_181_737_309e3, 0.0, -1.919_457_662_318_407e3,
];
const U8: [f64; 25] = [
    0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 6.074_042_001_273_483, 0.0, -4.939_153_047_730_88e2, 0.0,
    7.109_514_302_489_364e3, 0.0, -4.119_265_496_889_755e4, 0.0, 1.222_004_649_830_174_6e5, 0.0,
    -2.034_001_772_804_155_3e5, 0.0, 1.925_470_012_325_315_3e5, 0.0, -9.698_059_838_863_751e4, 0.0,
    2.020_429_133_096_615e4,
];
const U9: [f64; 28] = [
    0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.438_052_969_955_606_4e1, 0.0, -2.499_830_481_811_21e3,
    0.0, 4.521_876_898_136_273e4, 0.0, -3.316_451_724_845_636e5, 0.0, 1.268_365_273_321_624_8e6, 0.0,
    -2.813_563_226_586_534e6, 0.0, 3.763_271_297_656_404e6, 0.0, -2.998_015_918_538_107e6, 0.0,
    1.311_763_614_662_977_2e6, 0.0, -2.429_191_879_005_513_3e5,
];

fn poly(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

/// Debye expansion `I_nu(nu z) ~ e^(nu eta) / (sqrt(2 pi nu) (1+z^2)^(1/4)) sum u_k(t) / nu^k`.
pub fn log_uniform(nu: f64, x: f64) -> f64 {
    let z = x / nu;
    let root = (1.0 + z * z).sqrt();
    let t = 1.0 / root;
    let eta = root + (z / (1.0 + root)).ln();
    let polys: [&[f64]; 9] = [&U1, &U2, &U3, &U4, &U5, &U6, &U7, &U8, &U9];
    let mut sum = 1.0;
    let mut inv = 1.0;
    for p in polys {
        inv /= nu;
        sum += poly(p, t) * inv;
    }
    nu * eta - 0.5 * (2.0 * std::f64::consts::PI * nu).ln() - 0.5 * root.ln() + sum.ln()
}

/// Hankel expansion `I_nu(x) ~ e^x / sqrt(2 pi x) sum_k (-1)^k a_k(nu) / x^k`. Terms may
/// grow until `(2k-1)^2` passes `4 nu^2`; after that the series is cut at its smallest term.
pub fn log_large_argument(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let turning = 0.5 * (mu.sqrt() + 1.0);
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let mut k = 1.0f64;
    loop {
        let odd = 2.0 * k - 1.0;
        let next = -term * (mu - odd * odd) / (k * 8.0 * x);
        if next == 0.0 {
            break;
        }
        if k > turning && (next.abs() >= term.abs() || next.abs() < 1e-17 * sum.abs()) {
            if next.abs() < term.abs() {
                sum += next;
            }
            break;
        }
        sum += next;
        term = next;
        k += 1.0;
    }
    x - 0.5 * (2.0 * std::f64::consts::PI * x).ln() + sum.ln()
}
