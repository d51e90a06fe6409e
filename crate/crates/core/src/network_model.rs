//! The planted network `f(x) = P(u_t(w_1.x), ..., u_t(w_d.x))`, its sampling
//! oracle, and the diagnostics that compare `f` with its linear part.

use crate::activation::{ActivationKind, ActivationSpec};
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, dot};
use crate::polynomial::SparsePolynomial;
use crate::stats_core::{
    fill_gaussian, map_shards, merge_in_order, normal_ccdf, truncated_normal, McEstimate, MeanAccumulator, RngSeed,
    INV_SQRT_2PI,
};
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// How the rows of `W` are constrained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightKind {
    /// Every row has unit Euclidean norm.
    Unit,
    /// Every row is a 0/1 indicator of a support set.
    Binary,
}

/// Diagonal of the linear coefficients `c_i`, written `T` in the analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalScaling(pub Vec<f64>);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedNetwork {
    n: usize,
    d: usize,
    /// Row-major `d x n`.
    w: Vec<f64>,
    weight_kind: WeightKind,
    activation: ActivationSpec,
    poly: SparsePolynomial,
    seed: Option<u64>,
    kappa: f64,
    spectral_norm: f64,
}

impl PlantedNetwork {
    /// Validates shapes and row constraints and caches the condition number.
    pub fn new(
        rows: Vec<Vec<f64>>,
        weight_kind: WeightKind,
        activation: ActivationSpec,
        poly: SparsePolynomial,
        seed: Option<u64>,
    ) -> Result<Self> {
        let d = rows.len();
        if d == 0 {
            return Err(invalid("network needs at least one unit"));
        }
        let n = rows[0].len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(invalid("all weight rows must have the same positive length"));
        }
        if poly.nvars() != d {
            return Err(invalid(format!("polynomial has {} variables for {d} units", poly.nvars())));
        }
        activation.validate()?;
        for (i, r) in rows.iter().enumerate() {
            if r.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("row {i} has a non-finite entry")));
            }
            match weight_kind {
                WeightKind::Unit => {
                    let norm = linalg::norm(r);
                    if (norm - 1.0).abs() > 1e-9 {
                        return Err(invalid(format!("row {i} has norm {norm}, expected 1")));
                    }
                }
                WeightKind::Binary => {
                    if r.iter().any(|&v| v != 0.0 && v != 1.0) {
                        return Err(invalid(format!("row {i} is not a 0/1 vector")));
                    }
                    if r.iter().all(|&v| v == 0.0) {
                        return Err(invalid(format!("row {i} is empty")));
                    }
                }
            }
        }
        let m = linalg::rows_to_matrix(&rows);
        let kappa = linalg::condition_number(&m);
        let spectral_norm = linalg::spectral_norm(&m);
        Ok(PlantedNetwork {
            n,
            d,
            w: rows.into_iter().flatten().collect(),
            weight_kind,
            activation,
            poly,
            seed,
            kappa,
            spectral_norm,
        })
    }

    /// `d` orthonormal rows in `R^n` (`d <= n`) from the QR factor of a
    /// Gaussian matrix.
    pub fn orthonormal(n: usize, d: usize, activation: ActivationSpec, poly: SparsePolynomial, seed: RngSeed) -> Result<Self> {
        if d > n {
            return Err(invalid(format!("cannot place {d} orthonormal rows in R^{n}")));
        }
        let rows = orthonormal_rows(n, d, seed);
        Self::new(rows, WeightKind::Unit, activation, poly, Some(seed.0))
    }

    /// Unit rows whose matrix has condition number near `kappa`: singular
    /// values are spread geometrically over `[1, kappa]` before the rows are
    /// renormalized, so the final value is close to but not exactly `kappa`.
    pub fn with_condition(
        n: usize,
        d: usize,
        kappa: f64,
        activation: ActivationSpec,
        poly: SparsePolynomial,
        seed: RngSeed,
    ) -> Result<Self> {
        if d > n || kappa < 1.0 {
            return Err(invalid("need d <= n and kappa >= 1"));
        }
        let u = DMatrix::from_row_slice(d, d, &orthonormal_rows(d, d, seed.derive(1)).concat());
        let v = DMatrix::from_row_slice(d, n, &orthonormal_rows(n, d, seed.derive(2)).concat());
        let sig = DMatrix::from_fn(d, d, |i, j| {
            if i == j && d > 1 {
                kappa.powf(i as f64 / (d - 1) as f64)
            } else if i == j {
                1.0
            } else {
                0.0
            }
        });
        let m = u * sig * v;
        let rows = linalg::matrix_to_rows(&m)
            .into_iter()
            .map(|r| linalg::normalized(&r).ok_or_else(|| Error::NumericFailure("zero row".into())))
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows, WeightKind::Unit, activation, poly, Some(seed.0))
    }

    /// 0/1 rows, one per support set.
    pub fn binary_supports(
        n: usize,
        supports: &[Vec<usize>],
        activation: ActivationSpec,
        poly: SparsePolynomial,
        seed: Option<u64>,
    ) -> Result<Self> {
        let rows = supports
            .iter()
            .map(|s| {
                let mut r = vec![0.0; n];
                for &j in s {
                    if j >= n {
                        return Err(invalid(format!("support index {j} out of range")));
                    }
                    r[j] = 1.0;
                }
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows, WeightKind::Binary, activation, poly, seed)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.w[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.d).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn weight_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.d, self.n, &self.w)
    }

    pub fn weight_kind(&self) -> WeightKind {
        self.weight_kind
    }

    pub fn activation(&self) -> &ActivationSpec {
        &self.activation
    }

    pub fn poly(&self) -> &SparsePolynomial {
        &self.poly
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn spectral_norm(&self) -> f64 {
        self.spectral_norm
    }

    pub fn scaling(&self) -> DiagonalScaling {
        DiagonalScaling(self.poly.linear_coefficients())
    }

    /// Writes `u_t(w_i . x)` into `out` and reports whether any is nonzero.
    #[inline]
    pub fn unit_outputs(&self, x: &[f64], out: &mut [f64]) -> bool {
        let mut any = false;
        for (i, o) in out.iter_mut().enumerate().take(self.d) {
            let a = dot(&self.w[i * self.n..(i + 1) * self.n], x);
            *o = self.activation.eval(a);
            any |= *o != 0.0;
        }
        any
    }

    /// `f(x)` using caller-provided scratch of length `d`.
    #[inline]
    pub fn eval_with(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let any = self.unit_outputs(x, scratch);
        if !any {
            return self.poly.constant();
        }
        self.poly.eval(scratch)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n {
            return Err(invalid(format!("input has length {}, expected {}", x.len(), self.n)));
        }
        let mut s = vec![0.0; self.d];
        Ok(self.eval_with(x, &mut s))
    }

    /// `f_lin(x) = c_0 + sum_i c_i u_t(w_i . x)`.
    pub fn eval_lin(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n {
            return Err(invalid(format!("input has length {}, expected {}", x.len(), self.n)));
        }
        let mut s = vec![0.0; self.d];
        self.unit_outputs(x, &mut s);
        Ok(self.poly.linear_part().eval(&s))
    }
}

/// `d` orthonormal vectors in `R^n` as rows.
pub fn orthonormal_rows(n: usize, d: usize, seed: RngSeed) -> Vec<Vec<f64>> {
    let mut rng = seed.rng();
    let mut g = vec![0.0; n * n];
    fill_gaussian(&mut rng, &mut g);
    let m = DMatrix::from_row_slice(n, n, &g);
    let q = m.qr().q();
    (0..d).map(|i| q.column(i).iter().copied().collect()).collect()
}

/// Tail scale `rho(t, sigma)`: `sigma e^{-t^2 / 2 sigma^2} / sqrt(2 pi)` for
/// sign and ReLU units, `e^{-t + sigma^2 / 2}` for sigmoid units.
pub fn tail_rho(kind: ActivationKind, t: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    match kind {
        ActivationKind::SignThreshold | ActivationKind::ReluThreshold => {
            Ok(sigma * (-t * t / (2.0 * sigma * sigma)).exp() * INV_SQRT_2PI)
        }
        ActivationKind::SigmoidThreshold => Ok((-t + sigma * sigma / 2.0).exp()),
        other => Err(Error::UnsupportedMode(format!("no tail scale for {}", other.name()))),
    }
}

/// Threshold giving `rho(t, 1)` of order `d^{-eta}`: `C sqrt(eta ln d)` for
/// sign and ReLU units, `C eta ln d` for sigmoid units.
pub fn choose_threshold(kind: ActivationKind, d: usize, eta: f64, c: f64) -> Result<f64> {
    if d < 2 || !(eta > 0.0) || !(c > 0.0) {
        return Err(invalid("need d >= 2, eta > 0, C > 0"));
    }
    let ln_d = (d as f64).ln();
    match kind {
        ActivationKind::SignThreshold | ActivationKind::ReluThreshold => Ok(c * (eta * ln_d).sqrt()),
        ActivationKind::SigmoidThreshold => Ok(c * eta * ln_d),
        other => Err(Error::UnsupportedMode(format!("no threshold rule for {}", other.name()))),
    }
}

/// Tolerances for `validate_assumptions`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionTolerances {
    pub c_lo: f64,
    pub c_hi: f64,
    pub c_max: f64,
    pub kappa_max: f64,
    /// Allowed shortfall of the measured tail exponent below `eta`.
    pub slack: f64,
}

impl Default for AssumptionTolerances {
    fn default() -> Self {
        AssumptionTolerances { c_lo: 0.1, c_hi: 10.0, c_max: 10.0, kappa_max: 100.0, slack: 0.25 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Checks the structural assumptions: linear coefficients bounded away from
/// zero, bounded higher coefficients, bounded condition number, and a
/// threshold high enough that `rho(t, |W|) <= d^{-(eta - slack)}`.
pub fn validate_assumptions(net: &PlantedNetwork, eta: f64, tol: &AssumptionTolerances) -> AssumptionReport {
    let mut checks = Vec::new();
    let lin = net.poly().linear_coefficients();
    let (lo, hi) = lin.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &c| (a.min(c.abs()), b.max(c.abs())));
    checks.push(AssumptionCheck {
        name: "linear-coefficients".into(),
        passed: lo >= tol.c_lo && hi <= tol.c_hi && lin.iter().all(|&c| c > 0.0),
        value: lo,
        detail: format!("c_i in [{lo:.4}, {hi:.4}], allowed [{}, {}]", tol.c_lo, tol.c_hi),
    });
    let cmax = net.poly().max_nonlinear_coefficient();
    checks.push(AssumptionCheck {
        name: "higher-coefficients".into(),
        passed: cmax <= tol.c_max,
        value: cmax,
        detail: format!("max |c_S| = {cmax:.4}, allowed {}", tol.c_max),
    });
    checks.push(AssumptionCheck {
        name: "condition-number".into(),
        passed: net.kappa() <= tol.kappa_max,
        value: net.kappa(),
        detail: format!("kappa = {:.4}, allowed {}", net.kappa(), tol.kappa_max),
    });
    let d = net.d().max(2) as f64;
    match tail_rho(net.activation().kind, net.activation().t, net.spectral_norm()) {
        Ok(rho) => {
            let exponent = (1.0 / rho).ln() / d.ln();
            checks.push(AssumptionCheck {
                name: "threshold".into(),
                passed: exponent >= eta - tol.slack,
                value: exponent,
                detail: format!("rho = {rho:.4e} = d^-{exponent:.3}, need exponent >= {:.3}", eta - tol.slack),
            });
        }
        Err(e) => checks.push(AssumptionCheck {
            name: "threshold".into(),
            passed: false,
            value: f64::NAN,
            detail: e.to_string(),
        }),
    }
    AssumptionReport { checks }
}

/// Sampling distribution for the oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum SamplingMode {
    /// `x ~ N(0, I_n)`.
    Plain,
    /// `x` with density proportional to `f(x) phi(x)`, by rejection against
    /// `f_max`. Needs `f >= 0`.
    Biased { f_max: Option<f64> },
    /// `x ~ N(0, I_n)` conditioned on `z . x` in `[t_prime - eps, t_prime]`.
    Slab { z: Vec<f64>, t_prime: f64, eps: f64 },
    /// `x ~ N(0, I_n)` conditioned on `z . x = s`.
    Hyperplane { z: Vec<f64>, s: f64 },
}

/// Post-processing applied to `f` before labels are emitted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelTransform {
    Identity,
    /// `1 - f`; turns a union of halfspaces into an intersection.
    Complement,
}

/// How labels of a dataset enter correlations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LabelWeight {
    /// Correlations use `y_j`.
    Value,
    /// Samples were drawn with density proportional to `f`; correlations
    /// use the constant `E[f]` estimate `scale` in place of `y_j`.
    Biased { scale: f64 },
}

/// Samples `(x_j, y_j)` stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub n: usize,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub seed: u64,
    pub weight: LabelWeight,
}

impl Dataset {
    /// Validates shapes and finiteness.
    pub fn new(n: usize, xs: Vec<f64>, ys: Vec<f64>, seed: u64) -> Result<Self> {
        if n == 0 || xs.len() != n * ys.len() {
            return Err(invalid(format!("{} inputs do not match {} labels of dimension {n}", xs.len(), ys.len())));
        }
        if let Some(index) = xs.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: index / n });
        }
        if let Some(index) = ys.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Dataset { n, xs, ys, seed, weight: LabelWeight::Value })
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    #[inline]
    pub fn x(&self, j: usize) -> &[f64] {
        &self.xs[j * self.n..(j + 1) * self.n]
    }

    /// Label as it enters correlations.
    #[inline]
    pub fn label(&self, j: usize) -> f64 {
        match self.weight {
            LabelWeight::Value => self.ys[j],
            LabelWeight::Biased { scale } => scale,
        }
    }

    /// Copy with labels replaced by `1 - y`.
    pub fn complemented(&self) -> Dataset {
        Dataset { ys: self.ys.iter().map(|y| 1.0 - y).collect(), ..self.clone() }
    }

    /// The first `count` samples.
    pub fn head(&self, count: usize) -> Dataset {
        let count = count.min(self.len());
        Dataset {
            n: self.n,
            xs: self.xs[..count * self.n].to_vec(),
            ys: self.ys[..count].to_vec(),
            seed: self.seed,
            weight: self.weight,
        }
    }
}

/// Draws labelled samples from a planted network.
#[derive(Clone, Debug)]
pub struct SampleOracle {
    net: Arc<PlantedNetwork>,
    transform: LabelTransform,
    noise_std: f64,
}

const BIASED_MIN_ACCEPTANCE: f64 = 1e-6;
const BIASED_CHECK_AFTER: u64 = 4_000_000;

#[derive(Clone, Copy, Debug, Default)]
struct ShardCounts {
    attempts: u64,
    accepted: u64,
}

impl SampleOracle {
    pub fn new(net: PlantedNetwork) -> Self {
        SampleOracle { net: Arc::new(net), transform: LabelTransform::Identity, noise_std: 0.0 }
    }

    pub fn from_arc(net: Arc<PlantedNetwork>) -> Self {
        SampleOracle { net, transform: LabelTransform::Identity, noise_std: 0.0 }
    }

    pub fn with_transform(mut self, transform: LabelTransform) -> Self {
        self.transform = transform;
        self
    }

    /// Adds `N(0, std^2)` noise to every label.
    pub fn with_noise(mut self, std: f64) -> Result<Self> {
        if !(std >= 0.0 && std.is_finite()) {
            return Err(invalid("noise level must be finite and >= 0"));
        }
        self.noise_std = std;
        Ok(self)
    }

    pub fn network(&self) -> &PlantedNetwork {
        &self.net
    }

    pub fn transform(&self) -> LabelTransform {
        self.transform
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn n(&self) -> usize {
        self.net.n()
    }

    /// Noise-free label of `x`.
    #[inline]
    pub fn clean_label(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let f = self.net.eval_with(x, scratch);
        match self.transform {
            LabelTransform::Identity => f,
            LabelTransform::Complement => 1.0 - f,
        }
    }

    fn check_mode(&self, mode: &SamplingMode) -> Result<SamplingMode> {
        let n = self.net.n();
        let unit = |z: &Vec<f64>| -> Result<Vec<f64>> {
            if z.len() != n {
                return Err(invalid(format!("direction has length {}, expected {n}", z.len())));
            }
            linalg::normalized(z).ok_or_else(|| invalid("direction must be nonzero"))
        };
        Ok(match mode {
            SamplingMode::Plain => SamplingMode::Plain,
            SamplingMode::Biased { f_max } => {
                let bound = match f_max {
                    Some(b) => *b,
                    None => self.default_f_max()?,
                };
                if !(bound > 0.0 && bound.is_finite()) {
                    return Err(Error::InvalidMode(format!("biased sampling needs a positive bound, got {bound}")));
                }
                SamplingMode::Biased { f_max: Some(bound) }
            }
            SamplingMode::Slab { z, t_prime, eps } => {
                if !(*eps > 0.0 && eps.is_finite() && t_prime.is_finite()) {
                    return Err(invalid("slab needs finite t' and eps > 0"));
                }
                SamplingMode::Slab { z: unit(z)?, t_prime: *t_prime, eps: *eps }
            }
            SamplingMode::Hyperplane { z, s } => {
                if !s.is_finite() {
                    return Err(invalid("hyperplane offset must be finite"));
                }
                SamplingMode::Hyperplane { z: unit(z)?, s: *s }
            }
        })
    }

    /// `sum |c_S| sup(u)^|S| + |c_0|` for bounded activations.
    fn default_f_max(&self) -> Result<f64> {
        let sup = self.net.activation().sup().ok_or_else(|| {
            Error::InvalidMode("biased sampling with an unbounded activation needs an explicit f_max".into())
        })?;
        let p = self.net.poly();
        let mut b = p.constant().abs();
        for (m, c) in p.terms() {
            b += c.abs() * sup.powi(m.degree() as i32);
        }
        Ok(match self.transform {
            LabelTransform::Identity => b,
            LabelTransform::Complement => 1.0 + b,
        })
    }

    /// Draws `len` samples of one shard and feeds them to `sink`.
    fn run_shard<F: FnMut(&[f64], f64)>(&self, mode: &SamplingMode, seed: RngSeed, len: usize, mut sink: F) -> Result<ShardCounts> {
        let n = self.net.n();
        let mut rng = seed.rng();
        let mut aux = seed.derive(0xacce_97).rng();
        let mut noise = seed.derive(0x0015e).rng();
        let mut x = vec![0.0; n];
        let mut scratch = vec![0.0; self.net.d()];
        let mut counts = ShardCounts::default();
        let mut emit = |x: &[f64], f: f64, noise: &mut rand_chacha::ChaCha8Rng| {
            let y = if self.noise_std > 0.0 { f + self.noise_std * crate::stats_core::gaussian(noise) } else { f };
            sink(x, y);
        };
        match mode {
            SamplingMode::Plain => {
                for _ in 0..len {
                    fill_gaussian(&mut rng, &mut x);
                    let f = self.clean_label(&x, &mut scratch);
                    emit(&x, f, &mut noise);
                }
                counts.attempts = len as u64;
                counts.accepted = len as u64;
            }
            SamplingMode::Biased { f_max } => {
                let bound = f_max.expect("checked");
                while (counts.accepted as usize) < len {
                    fill_gaussian(&mut rng, &mut x);
                    let f = self.clean_label(&x, &mut scratch);
                    counts.attempts += 1;
                    if f < 0.0 {
                        return Err(Error::InvalidMode(format!("biased sampling met a negative label {f}")));
                    }
                    if f > bound * (1.0 + 1e-12) {
                        return Err(Error::InvalidMode(format!("label {f} exceeds the bound {bound}")));
                    }
                    if aux.random::<f64>() * bound < f || f == bound {
                        counts.accepted += 1;
                        emit(&x, f, &mut noise);
                    }
                    if counts.attempts >= BIASED_CHECK_AFTER
                        && (counts.accepted as f64) < BIASED_MIN_ACCEPTANCE * counts.attempts as f64
                    {
                        return Err(Error::ProgressFailure(format!(
                            "biased sampling accepted {} of {} draws",
                            counts.accepted, counts.attempts
                        )));
                    }
                }
            }
            SamplingMode::Slab { z, t_prime, eps } => {
                for _ in 0..len {
                    let g = truncated_normal(&mut rng, t_prime - eps, *t_prime);
                    fill_gaussian(&mut rng, &mut x);
                    let proj = dot(z, &x);
                    for (xi, zi) in x.iter_mut().zip(z) {
                        *xi += (g - proj) * zi;
                    }
                    let f = self.clean_label(&x, &mut scratch);
                    emit(&x, f, &mut noise);
                }
                counts.attempts = len as u64;
                counts.accepted = len as u64;
            }
            SamplingMode::Hyperplane { z, s } => {
                for _ in 0..len {
                    fill_gaussian(&mut rng, &mut x);
                    let proj = dot(z, &x);
                    for (xi, zi) in x.iter_mut().zip(z) {
                        *xi += (s - proj) * zi;
                    }
                    let f = self.clean_label(&x, &mut scratch);
                    emit(&x, f, &mut noise);
                }
                counts.attempts = len as u64;
                counts.accepted = len as u64;
            }
        }
        Ok(counts)
    }

    /// Draws a dataset. Shards are seeded from `seed`, so the result does
    /// not depend on the number of worker threads.
    pub fn sample_batch(&self, mode: &SamplingMode, count: usize, seed: RngSeed) -> Result<Dataset> {
        let mode = self.check_mode(mode)?;
        let n = self.net.n();
        let parts = map_shards(count, seed, |s, _, len| {
            let mut xs = Vec::with_capacity(len * n);
            let mut ys = Vec::with_capacity(len);
            let c = self.run_shard(&mode, s, len, |x, y| {
                xs.extend_from_slice(x);
                ys.push(y);
            })?;
            Ok::<_, Error>((xs, ys, c))
        });
        let mut xs = Vec::with_capacity(count * n);
        let mut ys = Vec::with_capacity(count);
        let mut total = ShardCounts::default();
        for p in parts {
            let (a, b, c): (Vec<f64>, Vec<f64>, ShardCounts) = p?;
            xs.extend(a);
            ys.extend(b);
            total.attempts += c.attempts;
            total.accepted += c.accepted;
        }
        let weight = match mode {
            SamplingMode::Biased { f_max } => LabelWeight::Biased {
                scale: f_max.unwrap() * total.accepted as f64 / total.attempts.max(1) as f64,
            },
            _ => LabelWeight::Value,
        };
        Ok(Dataset { n, xs, ys, seed: seed.0, weight })
    }

    /// Streams `count` samples through per-shard accumulators made by
    /// `make` and returns them in shard order.
    pub fn fold<A, M, S>(&self, mode: &SamplingMode, count: usize, seed: RngSeed, make: M, step: S) -> Result<Vec<A>>
    where
        A: Send,
        M: Fn() -> A + Sync + Send,
        S: Fn(&mut A, &[f64], f64) + Sync + Send,
    {
        let mode = self.check_mode(mode)?;
        map_shards(count, seed, |s, _, len| {
            let mut acc = make();
            self.run_shard(&mode, s, len, |x, y| step(&mut acc, x, y))?;
            Ok(acc)
        })
        .into_iter()
        .collect()
    }

    /// Monte Carlo mean of `h(x, y)` under `mode`.
    pub fn mean_of<H>(&self, mode: &SamplingMode, count: usize, seed: RngSeed, h: H) -> Result<McEstimate>
    where
        H: Fn(&[f64], f64) -> f64 + Sync + Send,
    {
        if count == 0 {
            return Err(invalid("need at least one sample"));
        }
        let parts = self.fold(mode, count, seed, MeanAccumulator::new, |acc, x, y| acc.push(h(x, y)))?;
        Ok(merge_in_order(&parts).estimate())
    }
}

/// Which part of `f` the gap is measured against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapMode {
    /// `f - f_lin`.
    Linear,
    /// `f - c_0 - sum_i q_i(X_i)` with every single-variable term kept.
    Univariate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub mean_abs_gap: McEstimate,
    pub bound: f64,
    pub within_bound: bool,
}

/// Monte Carlo `E|f - f_lin|` against `C d^3 rho(t,1) rho(t,|W|)`.
pub fn gap_diagnostic(net: &PlantedNetwork, mode: GapMode, c: f64, count: usize, seed: RngSeed) -> Result<GapReport> {
    let reference = match mode {
        GapMode::Linear => net.poly().linear_part(),
        GapMode::Univariate => net.poly().univariate_part(),
    };
    let oracle = SampleOracle::new(net.clone());
    let d = net.d();
    let est = oracle.mean_of(&SamplingMode::Plain, count, seed, |x, _| {
        let mut s = vec![0.0; d];
        net.unit_outputs(x, &mut s);
        (net.poly().eval(&s) - reference.eval(&s)).abs()
    })?;
    let kind = net.activation().kind;
    let t = net.activation().t;
    let bound = c * (d as f64).powi(3) * tail_rho(kind, t, 1.0)? * tail_rho(kind, t, net.spectral_norm())?;
    Ok(GapReport { mean_abs_gap: est, bound, within_bound: est.mean <= bound })
}

/// Monte Carlo `E[prod_{j in set} u_t(w_j . x)]`.
pub fn product_moment(net: &PlantedNetwork, set: &[usize], count: usize, seed: RngSeed) -> Result<McEstimate> {
    if let Some(&j) = set.iter().find(|&&j| j >= net.d()) {
        return Err(invalid(format!("unit {j} out of range")));
    }
    let oracle = SampleOracle::new(net.clone());
    let n = net.n();
    oracle.mean_of(&SamplingMode::Plain, count, seed, |x, _| {
        let mut p = 1.0;
        for &j in set {
            p *= net.activation().eval(dot(&net.w[j * n..(j + 1) * n], x));
            if p == 0.0 {
                break;
            }
        }
        p
    })
}

/// `E[u_t(g)]` for `g ~ N(0,1)` in closed form where one exists.
pub fn unit_mean(u: &ActivationSpec) -> Result<f64> {
    Ok(match u.kind {
        ActivationKind::SignThreshold => normal_ccdf(u.t),
        ActivationKind::ReluThreshold => crate::stats_core::normal_pdf(u.t) - u.t * normal_ccdf(u.t),
        ActivationKind::ExpRate => (-u.rho * u.t + u.rho * u.rho / 2.0).exp(),
        ActivationKind::ExpPlain => 0.5f64.exp(),
        _ => crate::hermite::activation_coeff(u, crate::hermite::HermiteIndex::new(0)?)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polynomial::Monomial;

    fn sign_net(n: usize, d: usize, t: f64, poly: SparsePolynomial, seed: u64) -> PlantedNetwork {
        PlantedNetwork::orthonormal(n, d, ActivationSpec::sign(t).unwrap(), poly, RngSeed(seed)).unwrap()
    }

    #[test]
    fn evaluates_single_unit() {
        let poly = SparsePolynomial::linear(1);
        let net = PlantedNetwork::new(
            vec![vec![1.0, 0.0]],
            WeightKind::Unit,
            ActivationSpec::sign(1.0).unwrap(),
            poly,
            None,
        )
        .unwrap();
        assert_eq!(net.eval(&[2.0, 0.0]).unwrap(), 1.0);
        assert_eq!(net.eval(&[0.5, 3.0]).unwrap(), 0.0);
        assert!(net.eval(&[1.0]).is_err());
    }

    #[test]
    fn two_units_with_product() {
        let mut poly = SparsePolynomial::linear(2);
        poly.add_term(Monomial::from_set(&[0, 1]), 0.5).unwrap();
        let net = PlantedNetwork::new(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            WeightKind::Unit,
            ActivationSpec::sign(1.0).unwrap(),
            poly,
            None,
        )
        .unwrap();
        assert_eq!(net.eval(&[2.0, 2.0]).unwrap(), 2.5);
        assert_eq!(net.eval_lin(&[2.0, 2.0]).unwrap(), 2.0);
    }

    #[test]
    fn rejects_bad_rows() {
        let poly = SparsePolynomial::linear(1);
        let bad = PlantedNetwork::new(vec![vec![1.0, 1.0]], WeightKind::Unit, ActivationSpec::sign(1.0).unwrap(), poly.clone(), None);
        assert!(bad.is_err());
        let ok = PlantedNetwork::new(vec![vec![1.0, 1.0]], WeightKind::Binary, ActivationSpec::sign(1.0).unwrap(), poly, None);
        assert!(ok.is_ok());
    }

    #[test]
    fn orthonormal_rows_are_orthonormal() {
        let net = sign_net(6, 4, 1.0, SparsePolynomial::linear(4), 9);
        for i in 0..4 {
            for j in 0..4 {
                let v = dot(net.row(i), net.row(j));
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        assert!((net.kappa() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn shaped_condition_number_is_near_target() {
        let net = PlantedNetwork::with_condition(8, 8, 3.0, ActivationSpec::sign(1.0).unwrap(), SparsePolynomial::linear(8), RngSeed(4)).unwrap();
        assert!(net.kappa() > 1.5 && net.kappa() < 6.0, "{}", net.kappa());
    }

    #[test]
    fn tail_scale_examples() {
        let r = tail_rho(ActivationKind::ReluThreshold, 3.0, 1.0).unwrap();
        assert!((r - 0.004_431_848_411_938_008).abs() < 1e-15);
        assert!(tail_rho(ActivationKind::ExpRate, 1.0, 1.0).is_err());
        let s = tail_rho(ActivationKind::SigmoidThreshold, 2.0, 1.0).unwrap();
        assert!((s - (-1.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn threshold_rule_examples() {
        let t = choose_threshold(ActivationKind::SignThreshold, 8, 1.0, 2.0).unwrap();
        assert!((t - 2.0 * 8f64.ln().sqrt()).abs() < 1e-12);
        assert!((t - 2.884).abs() < 1e-3);
        let s = choose_threshold(ActivationKind::SigmoidThreshold, 8, 1.0, 2.0).unwrap();
        assert!((s - 4.159).abs() < 1e-3);
    }

    #[test]
    fn assumptions_on_a_standard_instance() {
        let t = choose_threshold(ActivationKind::SignThreshold, 8, 1.0, 2.0).unwrap();
        let net = sign_net(8, 8, t, SparsePolynomial::linear_plus_pairs(8, 0.5), 1);
        let rep = validate_assumptions(&net, 1.0, &AssumptionTolerances::default());
        assert!(rep.all_passed(), "{rep:?}");
        let low = sign_net(8, 8, 0.0, SparsePolynomial::linear_plus_pairs(8, 0.5), 1);
        let rep = validate_assumptions(&low, 1.0, &AssumptionTolerances::default());
        assert!(!rep.check("threshold").unwrap().passed);
    }

    #[test]
    fn sampling_is_deterministic() {
        let oracle = SampleOracle::new(sign_net(4, 3, 1.0, SparsePolynomial::linear(3), 2));
        let a = oracle.sample_batch(&SamplingMode::Plain, 70_000, RngSeed(5)).unwrap();
        let b = oracle.sample_batch(&SamplingMode::Plain, 70_000, RngSeed(5)).unwrap();
        assert_eq!(a, b);
        let c = oracle.sample_batch(&SamplingMode::Plain, 70_000, RngSeed(6)).unwrap();
        assert_ne!(a.xs, c.xs);
    }

    #[test]
    fn biased_constant_label_equals_plain() {
        let net = sign_net(3, 2, 1.0, SparsePolynomial::new(2, 2.0), 3);
        let oracle = SampleOracle::new(net);
        let plain = oracle.sample_batch(&SamplingMode::Plain, 1000, RngSeed(1)).unwrap();
        let biased = oracle.sample_batch(&SamplingMode::Biased { f_max: None }, 1000, RngSeed(1)).unwrap();
        assert_eq!(plain.xs, biased.xs);
        assert_eq!(biased.weight, LabelWeight::Biased { scale: 2.0 });
    }

    #[test]
    fn biased_rejects_negative_labels() {
        let net = sign_net(3, 2, 1.0, SparsePolynomial::new(2, -1.0), 3);
        let oracle = SampleOracle::new(net);
        let r = oracle.sample_batch(&SamplingMode::Biased { f_max: Some(1.0) }, 10, RngSeed(1));
        assert!(matches!(r, Err(Error::InvalidMode(_))));
    }

    #[test]
    fn biased_stalls_on_rare_labels() {
        let net = sign_net(2, 1, 7.0, SparsePolynomial::linear(1), 3);
        let oracle = SampleOracle::new(net);
        let r = oracle.sample_batch(&SamplingMode::Biased { f_max: None }, 10, RngSeed(1));
        assert!(matches!(r, Err(Error::ProgressFailure(_))));
    }

    #[test]
    fn slab_and_hyperplane_condition_the_projection() {
        let oracle = SampleOracle::new(sign_net(4, 2, 1.0, SparsePolynomial::linear(2), 2));
        let z = vec![0.6, 0.8, 0.0, 0.0];
        let slab = oracle
            .sample_batch(&SamplingMode::Slab { z: z.clone(), t_prime: 1.5, eps: 0.1 }, 2000, RngSeed(1))
            .unwrap();
        for j in 0..slab.len() {
            let p = dot(&z, slab.x(j));
            assert!((1.4 - 1e-12..=1.5 + 1e-12).contains(&p));
        }
        let hp = oracle.sample_batch(&SamplingMode::Hyperplane { z: z.clone(), s: -0.3 }, 100, RngSeed(1)).unwrap();
        for j in 0..hp.len() {
            assert!((dot(&z, hp.x(j)) + 0.3).abs() < 1e-12);
        }
        assert!(oracle.sample_batch(&SamplingMode::Hyperplane { z: vec![0.0; 4], s: 0.0 }, 1, RngSeed(1)).is_err());
    }

    #[test]
    fn product_moment_of_disjoint_product() {
        // f = X_0 X_1 on orthogonal sign units: E = Phi^c(t)^2
        let t = 1.0;
        let mut p = SparsePolynomial::new(2, 0.0);
        p.add_term(Monomial::from_set(&[0, 1]), 1.0).unwrap();
        let net = sign_net(3, 2, t, p, 8);
        let est = product_moment(&net, &[0, 1], 400_000, RngSeed(3)).unwrap();
        assert!(est.within(normal_ccdf(t).powi(2), 4.0), "{est:?}");
        let gap = gap_diagnostic(&net, GapMode::Linear, 10.0, 400_000, RngSeed(4)).unwrap();
        assert!(gap.mean_abs_gap.within(normal_ccdf(t).powi(2), 4.0));
    }

    #[test]
    fn dataset_validation() {
        assert!(matches!(Dataset::new(2, vec![0.0, f64::NAN, 1.0, 1.0], vec![1.0, 2.0], 0), Err(Error::NonFinite { index: 0 })));
        assert!(Dataset::new(2, vec![0.0; 3], vec![1.0], 0).is_err());
    }
}
