//! Link functions, the standard normal and bivariate normal distribution
//! functions, and the bounded correlation map used by the copula model.
#![allow(clippy::excessive_precision)]

use serde::{Deserialize, Serialize};
use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

/// Probability clamp applied before every inverse-link evaluation.
pub const PROB_CLAMP: f64 = 1e-10;

/// Largest correlation magnitude that enters the bivariate normal CDF.
pub const CORR_CLAMP: f64 = 1.0 - 1e-9;

const TWO_PI: f64 = 2.0 * PI;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
// Below this point Φ is evaluated through its asymptotic expansion.
const PROBIT_TAIL: f64 = -37.0;

/// Invertible CDF used to map linear indices to probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Logit,
    Probit,
}

impl Link {
    /// Λ(x).
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Link::Logit => logistic(x),
            Link::Probit => norm_cdf(x),
        }
    }

    /// Λ⁻¹(p) with `p` clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn inv(self, p: f64) -> f64 {
        self.inv_checked(p).0
    }

    /// Like [`Link::inv`], also reporting whether the clamp was active.
    pub fn inv_checked(self, p: f64) -> (f64, bool) {
        let (p, clamped) = clamp_prob(p);
        let x = match self {
            Link::Logit => (p / (1.0 - p)).ln(),
            Link::Probit => norm_inv(p),
        };
        (x, clamped)
    }

    /// ln Λ(x), accurate in both tails.
    pub fn log_cdf(self, x: f64) -> f64 {
        match self {
            Link::Logit => log_logistic(x),
            Link::Probit => log_norm_cdf(x),
        }
    }

    /// Contribution `s ln Λ(η) + f ln Λ(-η)` of a group with success weight `s`
    /// and failure weight `f`, with its first and second derivative in η.
    pub(crate) fn binary_terms(self, eta: f64, s: f64, f: f64) -> (f64, f64, f64) {
        match self {
            Link::Logit => {
                let p = logistic(eta);
                let ll = s * log_logistic(eta) + f * log_logistic(-eta);
                (ll, s * (1.0 - p) - f * p, -(s + f) * p * (1.0 - p))
            }
            Link::Probit => {
                let ll = s * log_norm_cdf(eta) + f * log_norm_cdf(-eta);
                let l1 = mills(eta);
                let l0 = mills(-eta);
                let d1 = s * l1 - f * l0;
                let d2 = -s * l1 * (eta + l1) - f * l0 * (-eta + l0);
                (ll, d1, d2)
            }
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Link::Logit => f.write_str("logit"),
            Link::Probit => f.write_str("probit"),
        }
    }
}

impl FromStr for Link {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "logit" | "logistic" => Ok(Link::Logit),
            "probit" | "normal" => Ok(Link::Probit),
            other => Err(crate::Error::InvalidArgument(format!("unknown link `{other}`"))),
        }
    }
}

fn clamp_prob(p: f64) -> (f64, bool) {
    if p < PROB_CLAMP {
        (PROB_CLAMP, true)
    } else if p > 1.0 - PROB_CLAMP {
        (1.0 - PROB_CLAMP, true)
    } else {
        (p, false)
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_logistic(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Standard normal CDF Φ.
pub fn norm_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal quantile Φ⁻¹, refined by one Newton step.
pub fn norm_inv(p: f64) -> f64 {
    if p.is_nan() {
        return f64::NAN;
    }
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        return -norm_inv(1.0 - p);
    }
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    let d = norm_pdf(x);
    if d > 0.0 && x.is_finite() {
        x - (norm_cdf(x) - p) / d
    } else {
        x
    }
}

fn log_norm_cdf(x: f64) -> f64 {
    if x > 0.0 {
        (-norm_cdf(-x)).ln_1p()
    } else if x > PROBIT_TAIL {
        norm_cdf(x).ln()
    } else {
        let z = 1.0 / (x * x);
        -0.5 * x * x - (-x).ln() - LN_SQRT_2PI + (1.0 - z + 3.0 * z * z - 15.0 * z * z * z).ln()
    }
}

/// Inverse Mills ratio φ(x)/Φ(x).
fn mills(x: f64) -> f64 {
    if x > PROBIT_TAIL {
        norm_pdf(x) / norm_cdf(x)
    } else {
        let z = 1.0 / (x * x);
        -x / (1.0 - z + 3.0 * z * z - 15.0 * z * z * z)
    }
}

// Gauss-Legendre (weight, abscissa) pairs on [-1, 1], negative half.
const GL6: [(f64, f64); 3] = [
    (0.1713244923791705, -0.9324695142031522),
    (0.3607615730481384, -0.6612093864662647),
    (0.4679139345726904, -0.2386191860831970),
];

const GL12: [(f64, f64); 6] = [
    (0.4717533638651177e-01, -0.9815606342467191),
    (0.1069393259953183, -0.9041172563704750),
    (0.1600783285433464, -0.7699026741943050),
    (0.2031674267230659, -0.5873179542866171),
    (0.2334925365383547, -0.3678314989981802),
    (0.2491470458134029, -0.1252334085114692),
];

const GL20: [(f64, f64); 10] = [
    (0.1761400713915212e-01, -0.9931285991850949),
    (0.4060142980038694e-01, -0.9639719272779138),
    (0.6267204833410906e-01, -0.9122344282513259),
    (0.8327674157670475e-01, -0.8391169718222188),
    (0.1019301198172404, -0.7463319064601508),
    (0.1181945319615184, -0.6360536807265150),
    (0.1316886384491766, -0.5108670019508271),
    (0.1420961093183821, -0.3737060887154196),
    (0.1491729864726037, -0.2277858511416451),
    (0.1527533871307259, -0.7652652113349733e-01),
];

fn nodes_for(rho_abs: f64) -> &'static [(f64, f64)] {
    if rho_abs < 0.3 {
        &GL6
    } else if rho_abs < 0.75 {
        &GL12
    } else {
        &GL20
    }
}

/// Upper orthant probability P(X > h, Y > k) for 0 <= |r| < 0.925, or for
/// 0.925 <= r < 1. Drezner–Wesolowsky single integral with Genz's
/// modifications for high correlation.
fn upper_orthant(h: f64, k: f64, r: f64) -> f64 {
    let hk = h * k;
    let quad = nodes_for(r.abs());
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin();
        let mut acc = 0.0;
        for &(w, x) in quad {
            for s in [-1.0, 1.0] {
                let sn = (asr * (s * x + 1.0) / 2.0).sin();
                acc += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        return acc * asr / (2.0 * TWO_PI) + norm_cdf(-h) * norm_cdf(-k);
    }

    debug_assert!(r > 0.0 && r < 1.0);
    let a2 = (1.0 - r) * (1.0 + r);
    let mut a = a2.sqrt();
    let bs = (h - k) * (h - k);
    let c = (4.0 - hk) / 8.0;
    let d = (12.0 - hk) / 16.0;
    let mut acc = 0.0;
    let asr = -(bs / a2 + hk) / 2.0;
    if asr > -100.0 {
        acc = a
            * asr.exp()
            * (1.0 - c * (bs - a2) * (1.0 - d * bs / 5.0) / 3.0 + c * d * a2 * a2 / 5.0);
    }
    if hk > -100.0 {
        let b = bs.sqrt();
        acc -= (-hk / 2.0).exp()
            * TWO_PI.sqrt()
            * norm_cdf(-b / a)
            * b
            * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
    }
    a /= 2.0;
    for &(w, x) in quad {
        for s in [-1.0, 1.0] {
            let xs = (a * (s * x + 1.0)).powi(2);
            let rs = (1.0 - xs).sqrt();
            let asr = -(bs / xs + hk) / 2.0;
            if asr > -100.0 {
                acc += a
                    * w
                    * asr.exp()
                    * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs
                        - (1.0 + c * xs * (1.0 + d * xs)));
            }
        }
    }
    -acc / TWO_PI + norm_cdf(-h.max(k))
}

/// Bivariate standard normal CDF Φ₂(x, y; ρ), absolute accuracy better than 1e-7.
///
/// Infinite limits are supported. |ρ| >= 1 uses the degenerate comonotone or
/// countermonotone distribution.
pub fn binorm_cdf(x: f64, y: f64, rho: f64) -> f64 {
    if x.is_nan() || y.is_nan() || rho.is_nan() {
        return f64::NAN;
    }
    if x == f64::NEG_INFINITY || y == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return norm_cdf(y);
    }
    if y == f64::INFINITY {
        return norm_cdf(x);
    }
    if rho >= 1.0 {
        return norm_cdf(x.min(y));
    }
    if rho <= -1.0 {
        return if x > -y { norm_cdf(x) - norm_cdf(-y) } else { 0.0 };
    }
    let p = if rho <= -0.925 {
        // Φ₂(x, y; ρ) = Φ(x) − Φ₂(x, −y; −ρ)
        norm_cdf(x) - upper_orthant(-x, y, -rho)
    } else {
        upper_orthant(-x, -y, rho)
    };
    p.clamp(0.0, 1.0)
}

/// Bivariate standard normal density, which is also ∂Φ₂/∂ρ.
pub fn binorm_density(x: f64, y: f64, rho: f64) -> f64 {
    let one_m = 1.0 - rho * rho;
    let q = x * x - 2.0 * rho * x * y + y * y;
    (-q / (2.0 * one_m)).exp() / (TWO_PI * one_m.sqrt())
}

/// ∂/∂ρ of [`binorm_density`].
pub(crate) fn binorm_density_drho(x: f64, y: f64, rho: f64) -> f64 {
    let one_m = 1.0 - rho * rho;
    let q = x * x - 2.0 * rho * x * y + y * y;
    let dlog = rho / one_m + (x * y * one_m - rho * q) / (one_m * one_m);
    binorm_density(x, y, rho) * dlog
}

/// Map from the real line into (−1, 1): tanh, clamped to `CORR_CLAMP`.
pub fn bound_corr(u: f64) -> f64 {
    u.tanh().clamp(-CORR_CLAMP, CORR_CLAMP)
}
