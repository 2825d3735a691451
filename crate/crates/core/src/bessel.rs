//! Modified Bessel function of the second kind for real order, built
//! for the Matern covariance: Temme's series on x <= 2, a Steed
//! continued fraction beyond, and stable upward recurrence in the
//! order. Results are returned in log form so extreme orders and
//! arguments neither overflow nor underflow prematurely.

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 20_000;

/// Lanczos g=607/128, n=15 approximation of ln Gamma for positive
/// arguments; relative accuracy near machine epsilon.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 607.0 / 128.0;
    const COEF: [f64; 15] = [
        0.999_999_999_999_997_1,
        57.156_235_665_862_92,
        -59.597_960_355_475_49,
        14.136_097_974_741_747,
        -0.491_913_816_097_620_2,
        3.399_464_998_481_189e-5,
        4.652_362_892_704_858e-5,
        -9.837_447_530_487_956e-5,
        1.580_887_032_249_125e-4,
        -2.102_644_417_241_049e-4,
        2.174_396_181_152_126e-4,
        -1.643_181_065_367_639e-4,
        8.441_822_398_385_275e-5,
        -2.619_083_840_158_141e-5,
        3.689_918_265_953_162e-6,
    ];
    debug_assert!(x > 0.0);
    let mut a = COEF[0];
    for (k, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + k as f64 - 1.0);
    }
    let t = x + G - 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x - 0.5) * t.ln() - t + a.ln()
}

pub fn gamma(x: f64) -> f64 {
    ln_gamma(x).exp()
}

/// Coefficients of 1/Gamma(1+x) = sum a_k x^k (A&S 6.1.34 shifted).
const RECIP_GAMMA1P: [f64; 12] = [
    1.0,
    0.577_215_664_901_532_9,
    -0.655_878_071_520_253_8,
    -0.042_002_635_034_095_24,
    0.166_538_611_382_291_5,
    -0.042_197_734_555_544_34,
    -0.009_621_971_527_877_0,
    0.007_218_943_246_663_0,
    -0.001_165_167_591_859_1,
    -0.000_215_241_674_114_9,
    0.000_128_050_282_388_2,
    -0.000_020_134_854_780_8,
];

/// Temme's auxiliary functions:
/// gam1 = [1/Gamma(1-mu) - 1/Gamma(1+mu)] / (2 mu), continuous at mu=0,
/// gam2 = [1/Gamma(1-mu) + 1/Gamma(1+mu)] / 2,
/// plus 1/Gamma(1+mu) and 1/Gamma(1-mu) themselves.
fn temme_gamma(mu: f64) -> (f64, f64, f64, f64) {
    let gampl = (-ln_gamma(1.0 + mu)).exp();
    let gammi = (-ln_gamma(1.0 - mu)).exp();
    let gam1 = if mu.abs() < 0.05 {
        // Odd part of the reciprocal-gamma series, safe from the
        // cancellation the direct quotient suffers near mu = 0.
        let m2 = mu * mu;
        let mut acc = 0.0;
        for k in (1..RECIP_GAMMA1P.len()).step_by(2).rev() {
            acc = acc * m2 + RECIP_GAMMA1P[k];
        }
        -acc
    } else {
        (gammi - gampl) / (2.0 * mu)
    };
    let gam2 = (gammi + gampl) / 2.0;
    (gam1, gam2, gampl, gammi)
}

/// Scaled pair (e^x K_mu(x), e^x K_{mu+1}(x)) for |mu| <= 1/2, x <= 2,
/// via Temme's series.
fn k_temme_scaled(mu: f64, x: f64) -> (f64, f64) {
    let x2 = 0.5 * x;
    let pimu = std::f64::consts::PI * mu;
    let fact = if pimu.abs() < EPS {
        1.0
    } else {
        pimu / pimu.sin()
    };
    let d = -x2.ln();
    let e = mu * d;
    let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
    let (gam1, gam2, gampl, gammi) = temme_gamma(mu);
    let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
    let mut sum = ff;
    let ee = e.exp();
    let mut p = 0.5 * ee / gampl;
    let mut q = 0.5 / (ee * gammi);
    let mut c = 1.0;
    let dd = x2 * x2;
    let mut sum1 = p;
    for i in 1..=MAX_ITER {
        let fi = i as f64;
        ff = (fi * ff + p + q) / (fi * fi - mu * mu);
        c *= dd / fi;
        p /= fi - mu;
        q /= fi + mu;
        let del = c * ff;
        sum += del;
        let del1 = c * (p - fi * ff);
        sum1 += del1;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    let scale = x.exp();
    (sum * scale, sum1 * 2.0 / x * scale)
}

/// Scaled pair via the Steed continued fraction, for x > 2.
fn k_steed_scaled(mu: f64, x: f64) -> (f64, f64) {
    let mu2 = mu * mu;
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut delh = d;
    let mut h = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let a1 = 0.25 - mu2;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 2..=MAX_ITER {
        let fi = i as f64;
        a -= 2.0 * (fi - 1.0);
        c = -a * c / fi;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < EPS {
            break;
        }
    }
    h = a1 * h;
    let rkmu = (std::f64::consts::PI / (2.0 * x)).sqrt() / s;
    let rk1 = rkmu * (mu + x + 0.5 - h) / x;
    (rkmu, rk1)
}

/// ln K_nu(x) for nu >= 0, x > 0. Upward recurrence in the order with
/// periodic rescaling keeps intermediates finite for large nu.
pub fn ln_bessel_k(nu: f64, x: f64) -> f64 {
    debug_assert!(nu >= 0.0 && x > 0.0);
    let bn = (nu + 0.5).floor() as i64;
    let mu = nu - bn as f64;
    let (mut kmu, mut kmu1) = if x <= 2.0 {
        k_temme_scaled(mu, x)
    } else {
        k_steed_scaled(mu, x)
    };
    let mut ln_scale = 0.0f64;
    for k in 0..bn {
        let knext = 2.0 * (mu + k as f64 + 1.0) / x * kmu1 + kmu;
        kmu = kmu1;
        kmu1 = knext;
        if kmu1.abs() > 1e270 {
            kmu *= 1e-270;
            kmu1 *= 1e-270;
            ln_scale += 270.0 * std::f64::consts::LN_10;
        }
    }
    kmu.ln() + ln_scale - x
}

/// K_nu(x) without scaling; may under- or overflow at extreme inputs.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    ln_bessel_k(nu, x).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k_half(z: f64) -> f64 {
        (std::f64::consts::PI / (2.0 * z)).sqrt() * (-z).exp()
    }

    #[test]
    fn half_integer_closed_forms() {
        // K_{1/2}, K_{3/2}, K_{5/2} over a wide argument range.
        let mut z = 1e-3;
        while z <= 50.0 {
            let k12 = k_half(z);
            let k32 = k_half(z) * (1.0 + 1.0 / z);
            let k52 = k_half(z) * (1.0 + 3.0 / z + 3.0 / (z * z));
            for (nu, want) in [(0.5, k12), (1.5, k32), (2.5, k52)] {
                let got = bessel_k(nu, z);
                assert!(
                    (got - want).abs() <= 1e-10 * want.abs(),
                    "nu={nu} z={z}: {got} vs {want}"
                );
            }
            z *= 1.7;
        }
    }

    #[test]
    fn known_integer_order_values() {
        // Reference values: K_0(1) and K_1(1) (A&S tables).
        assert!((bessel_k(0.0, 1.0) - 0.421_024_438_240_708_33).abs() < 1e-12);
        assert!((bessel_k(1.0, 1.0) - 0.601_907_230_197_234_57).abs() < 1e-12);
        // Three-term recurrence ties integer orders to the series and
        // continued-fraction branches independently.
        for x in [0.7, 3.0, 11.0] {
            let k0 = bessel_k(0.0, x);
            let k1 = bessel_k(1.0, x);
            let k2 = bessel_k(2.0, x);
            assert!((k2 - (k0 + 2.0 / x * k1)).abs() <= 1e-12 * k2);
        }
    }

    #[test]
    fn ln_gamma_reference() {
        assert!((gamma(0.5) - std::f64::consts::PI.sqrt()).abs() < 1e-13);
        assert!((gamma(5.0) - 24.0).abs() < 1e-11);
        assert!((ln_gamma(100.0) - 359.134_205_369_575_4).abs() < 1e-9);
    }

    #[test]
    fn large_order_does_not_overflow() {
        // K_150(0.5) is astronomically large; the log form stays finite.
        let ln_k = ln_bessel_k(150.0, 0.5);
        assert!(ln_k.is_finite() && ln_k > 500.0);
    }
}
