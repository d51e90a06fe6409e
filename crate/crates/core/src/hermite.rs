//! Normalized probabilists' Hermite polynomials `h_k = He_k / sqrt(k!)`,
//! their scaled versions `H_k^sigma(a) = sigma^k h_k(a / sigma)`, Hermite
//! coefficients of activations, and the cross coefficients
//! `E[h_m(x) h_n(gamma x)]`.

use crate::activation::ActivationSpec;
use crate::error::{invalid, Error, Result};
use serde::{Deserialize, Serialize};

pub const MAX_DEGREE: usize = 16;

/// A Hermite degree in `0..=16`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HermiteIndex(u8);

impl HermiteIndex {
    pub fn new(k: usize) -> Result<Self> {
        if k > MAX_DEGREE {
            return Err(invalid(format!("Hermite degree {k} exceeds {MAX_DEGREE}")));
        }
        Ok(HermiteIndex(k as u8))
    }

    pub fn get(self) -> usize {
        self.0 as usize
    }
}

impl TryFrom<usize> for HermiteIndex {
    type Error = Error;
    fn try_from(k: usize) -> Result<Self> {
        HermiteIndex::new(k)
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Writes `h_0(x), ..., h_kmax(x)` into `out[..=kmax]`.
#[inline]
pub fn h_all(kmax: usize, x: f64, out: &mut [f64]) {
    // Normalized recurrence: h_{k+1} = (x h_k - sqrt(k) h_{k-1}) / sqrt(k+1).
    out[0] = 1.0;
    if kmax == 0 {
        return;
    }
    out[1] = x;
    for k in 1..kmax {
        let kf = k as f64;
        out[k + 1] = (x * out[k] - kf.sqrt() * out[k - 1]) / (kf + 1.0).sqrt();
    }
}

/// `h_k(x)`.
pub fn h_eval(k: HermiteIndex, x: f64) -> f64 {
    let mut buf = [0.0; MAX_DEGREE + 1];
    h_all(k.get(), x, &mut buf);
    buf[k.get()]
}

/// `H_l^sigma(a) = sigma^l h_l(a / sigma)`.
pub fn weighted_h_eval(l: HermiteIndex, sigma: f64, a: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    Ok(sigma.powi(l.get() as i32) * h_eval(l, a / sigma))
}

/// Value and partial derivatives of `H_k^sigma(a)` written as a polynomial in
/// `a` and `s = sigma^2`:
/// `sum_m (-1)^m k! / (m! (k-2m)! 2^m) a^(k-2m) s^m / sqrt(k!)`.
/// Returns `(value, d/da, d/ds)`. Valid for any real `s`, which is what the
/// landscape gradients need.
pub fn weighted_h_parts(k: usize, a: f64, s: f64) -> (f64, f64, f64) {
    let kf = factorial(k);
    let norm = kf.sqrt();
    let (mut v, mut da, mut ds) = (0.0, 0.0, 0.0);
    for m in 0..=k / 2 {
        let p = k - 2 * m;
        let c = if m % 2 == 0 { 1.0 } else { -1.0 } * kf / (factorial(m) * factorial(p) * 2f64.powi(m as i32));
        let ap = a.powi(p as i32);
        let sm = s.powi(m as i32);
        v += c * ap * sm;
        if p > 0 {
            da += c * p as f64 * a.powi(p as i32 - 1) * sm;
        }
        if m > 0 {
            ds += c * m as f64 * ap * s.powi(m as i32 - 1);
        }
    }
    (v / norm, da / norm, ds / norm)
}

/// Fast `(H_2, dH_2/da, dH_2/ds)` and `(H_4, ...)` at `(a, s)`.
#[inline]
pub fn h2_parts(a: f64, s: f64) -> (f64, f64, f64) {
    const R2: f64 = std::f64::consts::FRAC_1_SQRT_2;
    ((a * a - s) * R2, 2.0 * a * R2, -R2)
}

#[inline]
pub fn h4_parts(a: f64, s: f64) -> (f64, f64, f64) {
    const R24: f64 = 0.204_124_145_231_931_5; // 1/sqrt(24)
    let a2 = a * a;
    (
        (a2 * a2 - 6.0 * s * a2 + 3.0 * s * s) * R24,
        (4.0 * a2 * a - 12.0 * s * a) * R24,
        (-6.0 * a2 + 6.0 * s) * R24,
    )
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=m {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * z * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            let pm = if m == 1 { z } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = m as f64 * (z * pm - pm1) / (z * z - 1.0);
            let dz = pm / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[m - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[m - 1 - i] = wi;
    }
    (x, w)
}

const QUAD_LIMIT: f64 = 40.0;
const QUAD_TOL: f64 = 1e-10;

/// Integral of `g(x) phi(x)` over the real line, split at `breaks` and
/// refined by doubling the per-panel node count until two successive
/// estimates agree to 1e-10. Returns `(value, error_estimate)`.
pub fn gaussian_integral<G: Fn(f64) -> f64>(g: G, breaks: &[f64]) -> Result<(f64, f64)> {
    let mut cuts: Vec<f64> = vec![-QUAD_LIMIT, -20.0, -10.0, -6.0, -3.0, 0.0, 3.0, 6.0, 10.0, 20.0, QUAD_LIMIT];
    cuts.extend(breaks.iter().copied().filter(|b| b.abs() < QUAD_LIMIT));
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    let integrate = |m: usize| -> f64 {
        let (xs, ws) = gauss_legendre(m);
        let mut total = 0.0;
        for seg in cuts.windows(2) {
            let (lo, hi) = (seg[0], seg[1]);
            let (c, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            let mut s = 0.0;
            for (x, w) in xs.iter().zip(&ws) {
                let y = c + h * x;
                s += w * g(y) * crate::stats_core::normal_pdf(y);
            }
            total += h * s;
        }
        total
    };
    let mut m = 8;
    let mut prev = integrate(m);
    while m < 512 {
        m *= 2;
        let cur = integrate(m);
        let err = (cur - prev).abs();
        if !cur.is_finite() {
            return Err(Error::NumericFailure("quadrature produced a non-finite value".into()));
        }
        if err <= QUAD_TOL * cur.abs().max(1.0) {
            return Ok((cur, err));
        }
        prev = cur;
    }
    Err(Error::NumericFailure("quadrature did not converge to 1e-10".into()))
}

/// `u_hat_k = E[u_t(g) h_k(g)]` for `g ~ N(0,1)`.
pub fn activation_coeff(u: &ActivationSpec, k: HermiteIndex) -> Result<f64> {
    u.validate()?;
    let kk = k.get();
    let (v, _) = gaussian_integral(
        |x| {
            let mut buf = [0.0; MAX_DEGREE + 1];
            h_all(kk, x, &mut buf);
            u.eval(x) * buf[kk]
        },
        &u.breakpoints(),
    )?;
    Ok(v)
}

/// Hermite coefficients `u_hat_0 ..= u_hat_kmax` of one activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HermiteCoeffTable {
    pub activation: ActivationSpec,
    pub coeffs: Vec<f64>,
    pub error_estimate: f64,
}

impl HermiteCoeffTable {
    pub fn compute(u: &ActivationSpec, kmax: usize) -> Result<Self> {
        HermiteIndex::new(kmax)?;
        u.validate()?;
        let mut coeffs = Vec::with_capacity(kmax + 1);
        let mut error_estimate: f64 = 0.0;
        for k in 0..=kmax {
            let (v, e) = gaussian_integral(
                |x| {
                    let mut buf = [0.0; MAX_DEGREE + 1];
                    h_all(k, x, &mut buf);
                    u.eval(x) * buf[k]
                },
                &u.breakpoints(),
            )?;
            coeffs.push(v);
            error_estimate = error_estimate.max(e);
        }
        Ok(HermiteCoeffTable { activation: *u, coeffs, error_estimate })
    }

    pub fn get(&self, k: usize) -> f64 {
        self.coeffs[k]
    }
}

/// `E[h_m(x) h_n(gamma x)]` for `x ~ N(0,1)`.
///
/// Zero unless `k = (n - m) / 2` is a nonnegative integer, in which case it
/// equals `gamma^m (gamma^2 - 1)^k n! / (m! k! 2^k) * sqrt(m! / n!)`.
pub fn cross_coeff(n: HermiteIndex, m: HermiteIndex, gamma: f64) -> f64 {
    let (n, m) = (n.get(), m.get());
    if m > n || (n - m) % 2 != 0 {
        return 0.0;
    }
    let k = (n - m) / 2;
    let comb = factorial(n) / (factorial(m) * factorial(k) * 2f64.powi(k as i32));
    gamma.powi(m as i32) * (gamma * gamma - 1.0).powi(k as i32) * comb * (factorial(m) / factorial(n)).sqrt()
}
