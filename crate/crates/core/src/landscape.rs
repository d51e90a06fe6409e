//! Landscape-design objectives built from Hermite correlations, their
//! minimization, and assembly of the recovered directions.
//!
//! One-by-one objective, for `z` in `R^n`:
//! `G(z) = -sgn(u4) E[f H_4(z.x)] + lambda (E[f H_2(z.x)] - u2)^2`
//! where `H_k = H_k^{|z|}`. On the linear part of `f`,
//! `E[f_lin H_k(z.x)] = u_hat_k sum_i c_i (z.w_i)^k`.

use crate::activation::ActivationSpec;
use crate::assignment::min_cost_assignment;
use crate::error::{invalid, Error, Result};
use crate::hermite::{h2_parts, h4_parts, weighted_h_parts, HermiteCoeffTable, HermiteIndex};
use crate::linalg::{self, dot, norm};
use crate::network_model::{Dataset, PlantedNetwork};
use crate::stats_core::{random_unit, McEstimate, RngSeed};
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Default multiple of `|u4| / u2^2` used for `lambda`. At exactly 1 the
/// population objective `-|u4| sum c_i y_i^4 + |u4| (sum c_i y_i^2 - 1)^2`
/// is unbounded below along every `w_i` with `c_i = 1`, so the default sits
/// strictly above it.
pub const DEFAULT_LAMBDA_MULTIPLIER: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeParams {
    pub u2: f64,
    pub u4: f64,
    pub lambda: f64,
    /// A point is a candidate minimum when the gradient norm is at most this.
    pub eps_grad: f64,
    /// ...and the smallest Hessian eigenvalue is at least `-tau`.
    pub tau: f64,
    pub max_iter: usize,
    /// Restart budget; `None` means `5 d`.
    pub max_restarts: Option<usize>,
    /// Candidates with `|cos|` at or above this against a kept one are
    /// treated as duplicates.
    pub dedup_cos: f64,
    /// Start each restart in the orthogonal complement of the directions
    /// found so far.
    pub complement_init: bool,
    /// Number of negative-curvature escapes per restart.
    pub escapes: usize,
    /// Minimize inside the top eigenspace of `E[y (x x^T - I)]` of this
    /// dimension. The objective is flat orthogonal to the span of the
    /// weights, so for `d < n` this is what keeps the empirical problem
    /// bounded. `recover_all_one_by_one` sets it to `d` when `d < n`.
    #[serde(default)]
    pub span_dim: Option<usize>,
    /// A run is abandoned as divergent past this norm. Minimizers sit at
    /// norm about `sqrt(2 / c_i)` times the column norms of `(W*)^{-1}`.
    pub max_norm: f64,
}

impl LandscapeParams {
    /// Uses `lambda = multiplier |u4| / u2^2` and tolerances scaled by `|u4|`.
    pub fn from_coeffs(table: &HermiteCoeffTable, lambda_multiplier: f64) -> Result<Self> {
        if table.coeffs.len() < 5 {
            return Err(invalid("landscape needs Hermite coefficients up to degree 4"));
        }
        Self::from_values(table.get(2), table.get(4), lambda_multiplier)
    }

    pub fn from_values(u2: f64, u4: f64, lambda_multiplier: f64) -> Result<Self> {
        if u2 == 0.0 || u4 == 0.0 || !u2.is_finite() || !u4.is_finite() {
            return Err(Error::Domain(format!("degenerate activation: u2 = {u2}, u4 = {u4}")));
        }
        if !(lambda_multiplier > 0.0) {
            return Err(invalid("lambda multiplier must be positive"));
        }
        Ok(LandscapeParams {
            u2,
            u4,
            lambda: lambda_multiplier * u4.abs() / (u2 * u2),
            eps_grad: 1e-6 * u4.abs(),
            tau: 1e-3 * u4.abs(),
            max_iter: 5000,
            max_restarts: None,
            dedup_cos: 0.9,
            complement_init: true,
            escapes: 3,
            span_dim: None,
            max_norm: 100.0,
        })
    }

    pub fn for_activation(u: &ActivationSpec, lambda_multiplier: f64) -> Result<Self> {
        Self::from_coeffs(&HermiteCoeffTable::compute(u, 4)?, lambda_multiplier)
    }

    pub fn sign4(&self) -> f64 {
        self.u4.signum()
    }
}

/// A smooth function with its gradient.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value_grad(&self, z: &[f64]) -> (f64, Vec<f64>);
    fn value(&self, z: &[f64]) -> f64 {
        self.value_grad(z).0
    }
}

/// Means of `y H_2(z.x)`, `y H_4(z.x)` and their gradients in `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct H24 {
    pub h2: f64,
    pub h4: f64,
    pub g2: Vec<f64>,
    pub g4: Vec<f64>,
}

const CHUNK: usize = 4096;

/// Per-sample Hermite correlations over a dataset. Rows whose label is
/// zero contribute nothing and are dropped up front; means still divide
/// by the full sample count.
#[derive(Clone, Debug)]
pub struct SampleCorrelator {
    n: usize,
    total: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl SampleCorrelator {
    pub fn new(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InsufficientData("empty dataset".into()));
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for j in 0..data.len() {
            let y = data.label(j);
            if y != 0.0 {
                xs.extend_from_slice(data.x(j));
                ys.push(y);
            }
        }
        Ok(SampleCorrelator { n: data.n, total: data.len(), xs, ys })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn nonzero_rows(&self) -> usize {
        self.ys.len()
    }

    #[inline]
    pub fn row(&self, j: usize) -> (&[f64], f64) {
        (&self.xs[j * self.n..(j + 1) * self.n], self.ys[j])
    }

    /// Applies `f` to fixed chunks of rows in parallel and returns the
    /// chunk results in order.
    pub fn map_chunks<T: Send, F: Fn(usize, usize) -> T + Sync + Send>(&self, f: F) -> Vec<T> {
        let rows = self.ys.len();
        let chunks = rows.div_ceil(CHUNK);
        (0..chunks).into_par_iter().map(|c| f(c * CHUNK, ((c + 1) * CHUNK).min(rows))).collect()
    }

    /// `E[y H_k^{|z|}(z.x)]` with its standard error.
    pub fn correlate(&self, z: &[f64], k: HermiteIndex) -> Result<McEstimate> {
        if z.len() != self.n {
            return Err(invalid(format!("direction has length {}, expected {}", z.len(), self.n)));
        }
        if k.get() != 2 && k.get() != 4 {
            return Err(invalid("correlations are defined for k = 2 and k = 4"));
        }
        let s = dot(z, z);
        if !(s > 0.0) {
            return Err(Error::Domain("zero direction".into()));
        }
        let parts = self.map_chunks(|lo, hi| {
            let (mut sum, mut sq) = (0.0, 0.0);
            for j in lo..hi {
                let (x, y) = self.row(j);
                let v = y * weighted_h_parts(k.get(), dot(z, x), s).0;
                sum += v;
                sq += v * v;
            }
            (sum, sq)
        });
        let (sum, sq) = parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        let n = self.total as f64;
        let mean = sum / n;
        let var = if self.total > 1 { ((sq - sum * sum / n) / (n - 1.0)).max(0.0) } else { 0.0 };
        Ok(McEstimate { mean, stderr: (var / n).sqrt(), count: self.total as u64 })
    }

    /// Top-`k` eigenvectors (by absolute eigenvalue) of `E[y (x x^T - I)]`,
    /// whose range is the span of the weights with nonzero quadratic part.
    pub fn span_basis(&self, k: usize) -> Result<Vec<Vec<f64>>> {
        let n = self.n;
        if k == 0 || k > n {
            return Err(invalid(format!("span dimension {k} out of range for n = {n}")));
        }
        let parts = self.map_chunks(|lo, hi| {
            let mut m = vec![0.0; n * n];
            let mut ysum = 0.0;
            for j in lo..hi {
                let (x, y) = self.row(j);
                ysum += y;
                for a in 0..n {
                    let ya = y * x[a];
                    for b in a..n {
                        m[a * n + b] += ya * x[b];
                    }
                }
            }
            (m, ysum)
        });
        let mut m = DMatrix::zeros(n, n);
        let mut ysum = 0.0;
        for (part, ys) in &parts {
            ysum += ys;
            for a in 0..n {
                for b in a..n {
                    m[(a, b)] += part[a * n + b];
                }
            }
        }
        for a in 0..n {
            m[(a, a)] -= ysum;
            for b in 0..a {
                m[(a, b)] = m[(b, a)];
            }
        }
        let eig = SymmetricEigen::new(m / self.total as f64);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].abs().total_cmp(&eig.eigenvalues[a].abs()));
        Ok(order[..k].iter().map(|&c| eig.eigenvectors.column(c).iter().copied().collect()).collect())
    }

    pub fn h24(&self, z: &[f64]) -> H24 {
        let n = self.n;
        let s = dot(z, z);
        let parts = self.map_chunks(|lo, hi| {
            let mut acc = vec![0.0; 2 * n + 4];
            for j in lo..hi {
                let (x, y) = self.row(j);
                let a = dot(z, x);
                let (v2, a2, s2) = h2_parts(a, s);
                let (v4, a4, s4) = h4_parts(a, s);
                acc[0] += y * v2;
                acc[1] += y * v4;
                acc[2] += y * s2;
                acc[3] += y * s4;
                let (c2, c4) = (y * a2, y * a4);
                for i in 0..n {
                    acc[4 + i] += c2 * x[i];
                    acc[4 + n + i] += c4 * x[i];
                }
            }
            acc
        });
        let mut tot = vec![0.0; 2 * n + 4];
        for p in &parts {
            for (t, v) in tot.iter_mut().zip(p) {
                *t += v;
            }
        }
        let inv = 1.0 / self.total as f64;
        let g2 = (0..n).map(|i| (tot[4 + i] + 2.0 * z[i] * tot[2]) * inv).collect();
        let g4 = (0..n).map(|i| (tot[4 + n + i] + 2.0 * z[i] * tot[3]) * inv).collect();
        H24 { h2: tot[0] * inv, h4: tot[1] * inv, g2, g4 }
    }
}

/// `E[y H_k^{|z|}(z.x)]` over a dataset.
pub fn correlate_h(z: &[f64], k: HermiteIndex, data: &Dataset) -> Result<McEstimate> {
    SampleCorrelator::new(data)?.correlate(z, k)
}

/// The one-by-one objective on a dataset.
pub struct OneByOne<'a> {
    pub corr: &'a SampleCorrelator,
    pub params: &'a LandscapeParams,
}

impl Objective for OneByOne<'_> {
    fn dim(&self) -> usize {
        self.corr.n()
    }

    fn value_grad(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let p = self.params;
        let h = self.corr.h24(z);
        let sg = p.sign4();
        let gap = h.h2 - p.u2;
        let value = -sg * h.h4 + p.lambda * gap * gap;
        let grad = h.g4.iter().zip(&h.g2).map(|(g4, g2)| -sg * g4 + 2.0 * p.lambda * gap * g2).collect();
        (value, grad)
    }
}

/// `G(z)` and its gradient on a dataset.
pub fn objective_g(z: &[f64], data: &Dataset, params: &LandscapeParams) -> Result<(f64, Vec<f64>)> {
    let corr = SampleCorrelator::new(data)?;
    if z.len() != corr.n() {
        return Err(invalid("direction length does not match the data"));
    }
    Ok(OneByOne { corr: &corr, params }.value_grad(z))
}

/// Population objective on `f_lin` in closed form:
/// `-|u4| sum c_i y_i^4 + lambda u2^2 (sum c_i y_i^2 - 1)^2`, `y_i = z.w_i`.
pub struct PopulationLinear<'a> {
    pub rows: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub params: &'a LandscapeParams,
}

impl<'a> PopulationLinear<'a> {
    pub fn new(net: &PlantedNetwork, params: &'a LandscapeParams) -> Self {
        PopulationLinear { rows: net.rows(), c: net.poly().linear_coefficients(), params }
    }
}

impl Objective for PopulationLinear<'_> {
    fn dim(&self) -> usize {
        self.rows[0].len()
    }

    fn value_grad(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let p = self.params;
        let a4 = p.u4.abs();
        let ys: Vec<f64> = self.rows.iter().map(|w| dot(w, z)).collect();
        let q4: f64 = ys.iter().zip(&self.c).map(|(y, c)| c * y.powi(4)).sum();
        let q2: f64 = ys.iter().zip(&self.c).map(|(y, c)| c * y * y).sum();
        let gap = p.u2 * (q2 - 1.0);
        let value = -a4 * q4 + p.lambda * gap * gap;
        let mut grad = vec![0.0; z.len()];
        for ((w, y), c) in self.rows.iter().zip(&ys).zip(&self.c) {
            let coef = -4.0 * a4 * c * y.powi(3) + 2.0 * p.lambda * gap * p.u2 * 2.0 * c * y;
            linalg::axpy(coef, w, &mut grad);
        }
        (value, grad)
    }
}

/// Second-order check at a point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub grad_norm: f64,
    pub min_eig: f64,
    pub min_eigvec: Vec<f64>,
    pub certified: bool,
}

pub const MAX_HESSIAN_DIM: usize = 64;

/// Certifies `z` when `|grad| <= eps` and the smallest eigenvalue of the
/// finite-difference Hessian is at least `-tau`.
pub fn verify_local_min<O: Objective>(obj: &O, z: &[f64], eps: f64, tau: f64) -> Result<Certificate> {
    let n = obj.dim();
    if n > MAX_HESSIAN_DIM {
        return Err(Error::UnsupportedSize(format!("Hessian check limited to n <= {MAX_HESSIAN_DIM}, got {n}")));
    }
    let (_, g) = obj.value_grad(z);
    let grad_norm = norm(&g);
    let h = 1e-4 * norm(z).max(1.0);
    let mut hess = DMatrix::zeros(n, n);
    let mut zp = z.to_vec();
    for i in 0..n {
        zp[i] = z[i] + h;
        let (_, gp) = obj.value_grad(&zp);
        zp[i] = z[i] - h;
        let (_, gm) = obj.value_grad(&zp);
        zp[i] = z[i];
        for j in 0..n {
            hess[(j, i)] = (gp[j] - gm[j]) / (2.0 * h);
        }
    }
    let sym = (&hess + hess.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let (k, min_eig) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    let min_eigvec = eig.eigenvectors.column(k).iter().copied().collect();
    Ok(Certificate { grad_norm, min_eig, min_eigvec, certified: grad_norm <= eps && min_eig >= -tau })
}

/// Result of one descent run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalMin {
    pub z: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub min_eig: f64,
    pub certified: bool,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct Descent {
    pub z: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}


/// Gradient descent with backtracking (step halving under an Armijo test).
/// Stops early once `|z| > max_norm` (divergence).
pub(crate) fn gradient_descent<O: Objective>(obj: &O, z0: &[f64], max_iter: usize, eps: f64, max_norm: f64) -> Descent {
    let mut z = z0.to_vec();
    let (mut value, mut grad) = obj.value_grad(&z);
    let mut step = 1.0;
    let mut iterations = 0;
    while iterations < max_iter {
        let gn2 = dot(&grad, &grad);
        if gn2.sqrt() <= eps || !value.is_finite() || norm(&z) > max_norm {
            break;
        }
        iterations += 1;
        let mut t = step;
        let mut moved = false;
        while t > 1e-30 {
            let trial: Vec<f64> = z.iter().zip(&grad).map(|(a, g)| a - t * g).collect();
            let (v, g) = obj.value_grad(&trial);
            if v.is_finite() && v <= value - 1e-4 * t * gn2 {
                z = trial;
                value = v;
                grad = g;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
        step = (2.0 * t).min(1e8);
    }
    let grad_norm = norm(&grad);
    Descent { z, value, grad_norm, iterations }
}

/// Descends from `z0`, escaping strict saddles along negative curvature,
/// then certifies the end point.
pub fn minimize_from<O: Objective>(obj: &O, z0: &[f64], params: &LandscapeParams) -> Result<LocalMin> {
    let mut z = z0.to_vec();
    let mut iterations = 0;
    let mut escapes = 0;
    loop {
        let run = gradient_descent(obj, &z, params.max_iter.saturating_sub(iterations), params.eps_grad, params.max_norm);
        iterations += run.iterations;
        z = run.z;
        let cert = verify_local_min(obj, &z, params.eps_grad, params.tau)?;
        let done = norm(&z) > params.max_norm
            || cert.certified || escapes >= params.escapes || iterations >= params.max_iter || cert.min_eig >= -params.tau;
        if done {
            return Ok(LocalMin {
                z,
                value: run.value,
                grad_norm: cert.grad_norm,
                min_eig: cert.min_eig,
                certified: cert.certified,
                iterations,
            });
        }
        escapes += 1;
        let v0 = obj.value(&z);
        let scale = norm(&z).max(1.0);
        let mut next = None;
        for frac in [0.05, 0.01, 0.002] {
            let delta = frac * scale;
            for sgn in [1.0, -1.0] {
                let trial: Vec<f64> = z.iter().zip(&cert.min_eigvec).map(|(a, e)| a + sgn * delta * e).collect();
                if obj.value(&trial) < v0 {
                    next = Some(trial);
                    break;
                }
            }
            if next.is_some() {
                break;
            }
        }
        match next {
            Some(t) => z = t,
            None => escapes = params.escapes,
        }
    }
}

/// An objective composed with `y -> sum_j y_j basis_j`.
pub struct Restricted<'a, O: Objective> {
    pub inner: &'a O,
    pub basis: Vec<Vec<f64>>,
}

impl<O: Objective> Restricted<'_, O> {
    pub fn lift(&self, y: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.inner.dim()];
        for (c, b) in y.iter().zip(&self.basis) {
            linalg::axpy(*c, b, &mut z);
        }
        z
    }

    pub fn coords(&self, z: &[f64]) -> Vec<f64> {
        self.basis.iter().map(|b| dot(b, z)).collect()
    }
}

impl<O: Objective> Objective for Restricted<'_, O> {
    fn dim(&self) -> usize {
        self.basis.len()
    }

    fn value_grad(&self, y: &[f64]) -> (f64, Vec<f64>) {
        let (v, g) = self.inner.value_grad(&self.lift(y));
        (v, self.coords(&g))
    }
}

fn span_for(corr: &SampleCorrelator, params: &LandscapeParams) -> Result<Option<Vec<Vec<f64>>>> {
    match params.span_dim {
        Some(k) if k < corr.n() => corr.span_basis(k).map(Some),
        _ => Ok(None),
    }
}

fn minimize_with_span(
    obj: &OneByOne<'_>,
    span: Option<&Vec<Vec<f64>>>,
    rng: &mut impl rand::Rng,
    kept: &[Vec<f64>],
    params: &LandscapeParams,
) -> Result<LocalMin> {
    match span {
        None => {
            let mut z0 = random_unit(rng, obj.dim());
            if params.complement_init && !kept.is_empty() {
                z0 = project_out(&z0, kept).unwrap_or(z0);
            }
            minimize_from(obj, &z0, params)
        }
        Some(basis) => {
            let r = Restricted { inner: obj, basis: basis.clone() };
            let mut y0 = random_unit(rng, basis.len());
            if params.complement_init && !kept.is_empty() {
                let kept_y: Vec<Vec<f64>> = kept.iter().map(|k| r.coords(k)).collect();
                y0 = project_out(&y0, &kept_y).unwrap_or(y0);
            }
            let m = minimize_from(&r, &y0, params)?;
            Ok(LocalMin { z: r.lift(&m.z), ..m })
        }
    }
}

/// One descent from a uniform random unit start (inside the estimated
/// span when `span_dim` is set).
pub fn minimize_one(data: &Dataset, params: &LandscapeParams, seed: RngSeed) -> Result<LocalMin> {
    let corr = SampleCorrelator::new(data)?;
    let span = span_for(&corr, params)?;
    minimize_with_span(&OneByOne { corr: &corr, params }, span.as_ref(), &mut seed.rng(), &[], params)
}

/// Flips the sign of `v` so that its largest-magnitude entry is positive.
pub fn canonical_sign(v: &[f64]) -> Vec<f64> {
    let k = v
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |acc, (i, x)| if x.abs() > acc.1 { (i, x.abs()) } else { acc })
        .0;
    if v[k] < 0.0 {
        v.iter().map(|x| -x).collect()
    } else {
        v.to_vec()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneByOneRecovery {
    /// Distinct certified minima, sign-canonicalized.
    pub candidates: Vec<Vec<f64>>,
    pub restarts: usize,
    pub uncertified: usize,
    pub runs: Vec<LocalMin>,
}

/// Repeats `minimize_one` until `d` distinct certified minima are found or
/// the restart budget runs out.
pub fn recover_all_one_by_one(data: &Dataset, params: &LandscapeParams, d: usize, seed: RngSeed) -> Result<OneByOneRecovery> {
    let corr = SampleCorrelator::new(data)?;
    recover_all_with(&corr, params, d, seed)
}

pub fn recover_all_with(corr: &SampleCorrelator, params: &LandscapeParams, d: usize, seed: RngSeed) -> Result<OneByOneRecovery> {
    let n = corr.n();
    if d == 0 || d > n {
        return Err(invalid(format!("cannot recover {d} directions in R^{n}")));
    }
    let mut params = params.clone();
    if d < n && params.span_dim.is_none() {
        params.span_dim = Some(d);
    }
    let params = &params;
    let span = span_for(corr, params)?;
    let obj = OneByOne { corr, params };
    let budget = params.max_restarts.unwrap_or(5 * d);
    let mut kept: Vec<Vec<f64>> = Vec::new();
    let mut runs = Vec::new();
    let mut uncertified = 0;
    let mut restarts = 0;
    while restarts < budget && kept.len() < d {
        let mut rng = seed.derive(restarts as u64).rng();
        restarts += 1;
        let m = minimize_with_span(&obj, span.as_ref(), &mut rng, &kept, params)?;
        if !m.certified {
            uncertified += 1;
            runs.push(m);
            continue;
        }
        let cand = canonical_sign(&m.z);
        if kept.iter().all(|k| linalg::abs_cos(k, &cand) < params.dedup_cos) {
            kept.push(cand);
        }
        runs.push(m);
    }
    if kept.len() < d {
        return Err(Error::CoverageFailure { found: kept.len(), wanted: d });
    }
    Ok(OneByOneRecovery { candidates: kept, restarts, uncertified, runs })
}

/// Unit vector along the component of `v` orthogonal to `span(basis)`.
fn project_out(v: &[f64], basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    for b in basis {
        let mut u = b.clone();
        for o in &ortho {
            let c = dot(&u, o);
            linalg::axpy(-c, o, &mut u);
        }
        if let Some(u) = linalg::normalized(&u) {
            ortho.push(u);
        }
    }
    let mut r = v.to_vec();
    for o in &ortho {
        let c = dot(&r, o);
        linalg::axpy(-c, o, &mut r);
    }
    if norm(&r) < 1e-8 {
        return None;
    }
    linalg::normalized(&r)
}

pub const MAX_CONDITION: f64 = 1e6;

/// Stacks the candidates as columns of `V`, inverts, and returns the
/// normalized rows of `V^{-1}`.
pub fn assemble_and_invert(candidates: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let d = candidates.len();
    if d == 0 {
        return Err(invalid("no candidates"));
    }
    let n = candidates[0].len();
    if d != n {
        return Err(Error::UnsupportedSize(format!("inversion needs as many candidates as dimensions, got {d} in R^{n}")));
    }
    let v = DMatrix::from_fn(n, d, |i, j| candidates[j][i]);
    let condition = linalg::condition_number(&v);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::InversionFailure { condition });
    }
    let inv = v.try_inverse().ok_or(Error::InversionFailure { condition })?;
    linalg::matrix_to_rows(&inv)
        .into_iter()
        .map(|r| linalg::normalized(&r).ok_or(Error::InversionFailure { condition }))
        .collect()
}

/// Optimal matching of estimated to true rows by `|cos|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// `assignment[i]` is the true row matched to estimate `i`.
    pub assignment: Vec<usize>,
    pub abs_cos: Vec<f64>,
    pub angles_deg: Vec<f64>,
    pub max_angle_deg: f64,
    pub mean_angle_deg: f64,
}

pub fn align_and_score(estimate: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<Alignment> {
    if estimate.len() != truth.len() || estimate.is_empty() {
        return Err(invalid(format!("cannot align {} estimates with {} rows", estimate.len(), truth.len())));
    }
    let cos: Vec<Vec<f64>> = estimate.iter().map(|e| truth.iter().map(|t| linalg::abs_cos(e, t)).collect()).collect();
    let cost: Vec<Vec<f64>> = cos.iter().map(|r| r.iter().map(|c| -c).collect()).collect();
    let assignment = min_cost_assignment(&cost);
    let abs_cos: Vec<f64> = assignment.iter().enumerate().map(|(i, &j)| cos[i][j]).collect();
    let angles_deg: Vec<f64> = abs_cos.iter().map(|c| c.min(1.0).acos().to_degrees()).collect();
    let max_angle_deg = angles_deg.iter().cloned().fold(0.0, f64::max);
    let mean_angle_deg = angles_deg.iter().sum::<f64>() / angles_deg.len() as f64;
    Ok(Alignment { assignment, abs_cos, angles_deg, max_angle_deg, mean_angle_deg })
}

/// Parameters of the simultaneous objective
/// `G(B) = sgn(u4) (E[f sum_{j!=k} psi(b_j, b_k, x)] - gamma E[f sum_j H_4(b_j.x)])
///        + lambda sum_j (E[f H_2(b_j.x)] - u2)^2`,
/// with `psi(v, w, x) = H_2(v.x) H_2(w.x) + (v.w)^2 - 2 (v.x)(w.x)(v.w)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimultaneousParams {
    pub u2: f64,
    pub u4: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub eps_grad: f64,
    pub max_iter: usize,
}

impl SimultaneousParams {
    pub fn new(u2: f64, u4: f64, gamma: f64, lambda_multiplier: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 0.01) {
            return Err(invalid(format!("gamma must lie in (0, 0.01], got {gamma}")));
        }
        let base = LandscapeParams::from_values(u2, u4, lambda_multiplier)?;
        Ok(SimultaneousParams { u2, u4, gamma, lambda: base.lambda, eps_grad: base.eps_grad, max_iter: 20000 })
    }

    pub fn for_activation(u: &ActivationSpec, gamma: f64, lambda_multiplier: f64) -> Result<Self> {
        let t = HermiteCoeffTable::compute(u, 4)?;
        Self::new(t.get(2), t.get(4), gamma, lambda_multiplier)
    }
}

/// The simultaneous objective over the flattened `d x n` matrix `B`.
pub struct Simultaneous<'a> {
    pub corr: &'a SampleCorrelator,
    pub d: usize,
    pub params: &'a SimultaneousParams,
}

impl Objective for Simultaneous<'_> {
    fn dim(&self) -> usize {
        self.d * self.corr.n()
    }

    fn value_grad(&self, bflat: &[f64]) -> (f64, Vec<f64>) {
        let (d, n) = (self.d, self.corr.n());
        let p = self.params;
        let b: Vec<&[f64]> = (0..d).map(|j| &bflat[j * n..(j + 1) * n]).collect();
        let s: Vec<f64> = b.iter().map(|v| dot(v, v)).collect();
        let r: Vec<f64> = (0..d * d).map(|jk| dot(b[jk / d], b[jk % d])).collect();
        // Per-chunk sums, all weighted by the label:
        //   0            sum_{j != k} psi(b_j, b_k)
        //   h2, h4       H_2(b_j.x), H_4(b_j.x)
        //   s2, s4       d/ds of those
        //   sp           coefficient of b_j in d psi-sum / d b_j, over 2
        //   cb           coefficient of b_k in d psi-sum / d b_j
        //   xp, x2, x4   coefficients of x in the three gradients
        let o_h2 = 1;
        let o_h4 = o_h2 + d;
        let o_s2 = o_h4 + d;
        let o_s4 = o_s2 + d;
        let o_sp = o_s4 + d;
        let o_cb = o_sp + d;
        let o_xp = o_cb + d * d;
        let o_x2 = o_xp + d * n;
        let o_x4 = o_x2 + d * n;
        let len = o_x4 + d * n;
        let parts = self.corr.map_chunks(|lo, hi| {
            let mut acc = vec![0.0; len];
            let mut proj = vec![0.0; d];
            let mut h2 = vec![(0.0, 0.0, 0.0); d];
            let mut h4 = vec![(0.0, 0.0, 0.0); d];
            for row in lo..hi {
                let (x, y) = self.corr.row(row);
                for j in 0..d {
                    proj[j] = dot(b[j], x);
                    h2[j] = h2_parts(proj[j], s[j]);
                    h4[j] = h4_parts(proj[j], s[j]);
                }
                for j in 0..d {
                    let mut cx = 0.0;
                    let mut sp = 0.0;
                    for k in 0..d {
                        if k == j {
                            continue;
                        }
                        let rjk = r[j * d + k];
                        acc[0] += y * (h2[j].0 * h2[k].0 + rjk * rjk - 2.0 * rjk * proj[j] * proj[k]);
                        cx += 2.0 * (h2[j].1 * h2[k].0 - 2.0 * rjk * proj[k]);
                        sp += 2.0 * h2[j].2 * h2[k].0;
                        acc[o_cb + j * d + k] += y * 4.0 * (rjk - proj[j] * proj[k]);
                    }
                    acc[o_h2 + j] += y * h2[j].0;
                    acc[o_h4 + j] += y * h4[j].0;
                    acc[o_s2 + j] += y * h2[j].2;
                    acc[o_s4 + j] += y * h4[j].2;
                    acc[o_sp + j] += y * sp;
                    let (cp, c2, c4) = (y * cx, y * h2[j].1, y * h4[j].1);
                    for i in 0..n {
                        acc[o_xp + j * n + i] += cp * x[i];
                        acc[o_x2 + j * n + i] += c2 * x[i];
                        acc[o_x4 + j * n + i] += c4 * x[i];
                    }
                }
            }
            acc
        });
        let inv = 1.0 / self.corr.total() as f64;
        let mut t = vec![0.0; len];
        for part in &parts {
            for (a, v) in t.iter_mut().zip(part) {
                *a += v;
            }
        }
        t.iter_mut().for_each(|v| *v *= inv);
        let sg = p.u4.signum();
        let mut value = sg * t[0];
        let mut grad = vec![0.0; d * n];
        for j in 0..d {
            let gap = t[o_h2 + j] - p.u2;
            value += -sg * p.gamma * t[o_h4 + j] + p.lambda * gap * gap;
            for i in 0..n {
                let bji = b[j][i];
                let mut gp = t[o_xp + j * n + i] + 2.0 * bji * t[o_sp + j];
                for k in 0..d {
                    if k != j {
                        gp += t[o_cb + j * d + k] * b[k][i];
                    }
                }
                let g2 = t[o_x2 + j * n + i] + 2.0 * bji * t[o_s2 + j];
                let g4 = t[o_x4 + j * n + i] + 2.0 * bji * t[o_s4 + j];
                grad[j * n + i] = sg * (gp - p.gamma * g4) + 2.0 * p.lambda * gap * g2;
            }
        }
        (value, grad)
    }
}

/// `G(B)` and its gradient (rows of `B` are the `d` directions).
pub fn objective_simultaneous(b: &[Vec<f64>], data: &Dataset, params: &SimultaneousParams) -> Result<(f64, Vec<Vec<f64>>)> {
    let corr = SampleCorrelator::new(data)?;
    let d = b.len();
    if d == 0 || b.iter().any(|r| r.len() != corr.n()) {
        return Err(invalid("direction matrix does not match the data"));
    }
    let flat: Vec<f64> = b.concat();
    let (v, g) = Simultaneous { corr: &corr, d, params }.value_grad(&flat);
    Ok((v, g.chunks(corr.n()).map(|c| c.to_vec()).collect()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimultaneousRecovery {
    pub b: Vec<Vec<f64>>,
    /// Normalized rows of `B^{-T}`.
    pub directions: Vec<Vec<f64>>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Minimizes the simultaneous objective from a random start (`d = n`) and
/// returns the normalized rows of `B^{-T}`.
pub fn recover_simultaneous(data: &Dataset, d: usize, params: &SimultaneousParams, seed: RngSeed) -> Result<SimultaneousRecovery> {
    let corr = SampleCorrelator::new(data)?;
    let n = corr.n();
    if d != n {
        return Err(Error::UnsupportedSize(format!("simultaneous recovery needs d = n, got d = {d}, n = {n}")));
    }
    let mut rng = seed.rng();
    let b0: Vec<f64> = (0..d).flat_map(|_| random_unit(&mut rng, n)).collect();
    let obj = Simultaneous { corr: &corr, d, params };
    let run = gradient_descent(&obj, &b0, params.max_iter, params.eps_grad, f64::INFINITY);
    let bm = DMatrix::from_row_slice(d, n, &run.z);
    let condition = linalg::condition_number(&bm);
    let inv_t = bm.try_inverse().ok_or(Error::InversionFailure { condition })?.transpose();
    let directions = linalg::matrix_to_rows(&inv_t)
        .into_iter()
        .map(|r| linalg::normalized(&r).map(|v| canonical_sign(&v)).ok_or(Error::InversionFailure { condition }))
        .collect::<Result<Vec<_>>>()?;
    Ok(SimultaneousRecovery {
        b: run.z.chunks(n).map(|c| c.to_vec()).collect(),
        directions,
        value: run.value,
        grad_norm: run.grad_norm,
        iterations: run.iterations,
    })
}
