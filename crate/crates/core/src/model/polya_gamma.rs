//! Exact PG(1, z) sampler (Devroye alternating-series method as adapted by
//! Polson, Scott and Windle).

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use statrs::function::erf::erfc;

const TRUNC: f64 = 0.64;

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Coefficient `a_n(x)` of the alternating series for the J*(1, z) density.
fn series_coef(n: usize, x: f64) -> f64 {
    let k = n as f64 + 0.5;
    if x > TRUNC {
        PI * k * (-k * k * PI * PI * x / 2.0).exp()
    } else {
        (2.0 / (PI * x)).powf(1.5) * PI * k * (-2.0 * k * k / x).exp()
    }
}

/// CDF at `t` of the inverse Gaussian with mean `1/z` and shape 1.
fn inv_gauss_cdf(t: f64, z: f64) -> f64 {
    let s = (1.0 / t).sqrt();
    let b = s * (t * z - 1.0);
    let a = -s * (t * z + 1.0);
    std_normal_cdf(b) + (2.0 * z).exp() * std_normal_cdf(a)
}

/// Inverse Gaussian(mean 1/z, shape 1) truncated to `(0, TRUNC)`.
fn truncated_inv_gauss<R: Rng + ?Sized>(rng: &mut R, z: f64) -> f64 {
    let mu = 1.0 / z;
    if mu > TRUNC {
        loop {
            let (mut e1, mut e2): (f64, f64) = (rng.sample(Exp1), rng.sample(Exp1));
            while e1 * e1 > 2.0 * e2 / TRUNC {
                e1 = rng.sample(Exp1);
                e2 = rng.sample(Exp1);
            }
            let x = 1.0 + e1 * TRUNC;
            let x = TRUNC / (x * x);
            let accept = (-0.5 * z * z * x).exp();
            if rng.random::<f64>() <= accept {
                return x;
            }
        }
    } else {
        loop {
            let y: f64 = rng.sample(StandardNormal);
            let y = y * y;
            let mut x = mu + 0.5 * mu * mu * y - 0.5 * mu * (4.0 * mu * y + (mu * y).powi(2)).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x < TRUNC {
                return x;
            }
        }
    }
}

/// Draws one PG(1, z) variate.
pub fn sample_polya_gamma<R: Rng + ?Sized>(rng: &mut R, z: f64) -> f64 {
    // J*(1, z/2) scaled by 1/4 is PG(1, z)
    let z = z.abs() * 0.5;
    let k = PI * PI / 8.0 + z * z / 2.0;
    let p = PI / (2.0 * k) * (-k * TRUNC).exp();
    let q = 2.0 * (-z).exp() * inv_gauss_cdf(TRUNC, z);
    loop {
        let x = if rng.random::<f64>() < p / (p + q) {
            let e: f64 = rng.sample(Exp1);
            TRUNC + e / k
        } else {
            truncated_inv_gauss(rng, z)
        };
        let mut s = series_coef(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_coef(n, x);
                if y <= s {
                    return 0.25 * x;
                }
            } else {
                s += series_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}
