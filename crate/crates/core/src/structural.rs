//! Recovery under structural assumptions: correlation-graph cliques for
//! disjoint binary supports, penalized ascent for exponential units, and
//! fourth-Hermite maximization for even activations.

use crate::activation::{ActivationKind, ActivationSpec};
use crate::error::{invalid, Error, Result};
use crate::hermite::{h4_parts, HermiteCoeffTable};
use crate::landscape::canonical_sign;
use crate::linalg::{self, dot, norm};
use crate::network_model::{Dataset, PlantedNetwork, SampleOracle, SamplingMode, WeightKind};
use crate::polynomial::SparsePolynomial;
use crate::stats_core::{random_unit, McEstimate, MeanAccumulator, RngSeed};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt::Write as _;

/// Disjoint nonempty index sets, kept sorted so equality ignores order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportFamily(Vec<Vec<usize>>);

impl SupportFamily {
    pub fn new(sets: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(sets.len());
        for s in sets {
            if s.is_empty() {
                return Err(invalid("support sets must be nonempty"));
            }
            let mut s = s;
            s.sort_unstable();
            s.dedup();
            for &v in &s {
                if !seen.insert(v) {
                    return Err(invalid(format!("index {v} appears in two supports")));
                }
            }
            out.push(s);
        }
        out.sort();
        Ok(SupportFamily(out))
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.0
    }

    /// Index of the set holding `v`.
    pub fn owner(&self, v: usize) -> Option<usize> {
        self.0.iter().position(|s| s.binary_search(&v).is_ok())
    }

    /// Supports of a binary-weight network.
    pub fn of_network(net: &PlantedNetwork) -> Result<Self> {
        if net.weight_kind() != WeightKind::Binary {
            return Err(invalid("network does not have binary weights"));
        }
        Self::new(net.rows().iter().map(|r| (0..r.len()).filter(|&j| r[j] == 1.0).collect()).collect())
    }
}

/// `E[(y - mean y) x_i x_j]` for all `i < j`, row-major upper triangle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairValues {
    pub n: usize,
    pub values: Vec<McEstimate>,
}

impl PairValues {
    fn index(&self, i: usize, j: usize) -> usize {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        a * self.n - a * (a + 1) / 2 + (b - a - 1)
    }

    pub fn get(&self, i: usize, j: usize) -> McEstimate {
        assert!(i != j && i < self.n && j < self.n);
        self.values[self.index(i, j)]
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| (i + 1..self.n).map(move |j| (i, j)))
    }
}

/// Pairwise correlations `E[f x_i x_j]`. Since `E[x_i x_j] = 0` off the
/// diagonal, subtracting the label mean leaves the target unchanged and
/// removes the `E[f] x_i x_j` part of the variance.
pub fn pairwise_correlations(data: &Dataset) -> Result<PairValues> {
    let n = data.n;
    let m = data.len();
    if m < 2 {
        return Err(Error::InsufficientData("need at least two samples".into()));
    }
    let ybar = (0..m).map(|j| data.label(j)).sum::<f64>() / m as f64;
    let npairs = n * (n - 1) / 2;
    const CHUNK: usize = 8192;
    let parts: Vec<Vec<MeanAccumulator>> = (0..m.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![MeanAccumulator::new(); npairs];
            for r in c * CHUNK..((c + 1) * CHUNK).min(m) {
                let x = data.x(r);
                let y = data.label(r) - ybar;
                let mut k = 0;
                for i in 0..n {
                    let yi = y * x[i];
                    for xj in &x[i + 1..] {
                        acc[k].push(yi * xj);
                        k += 1;
                    }
                }
            }
            acc
        })
        .collect();
    let values = (0..npairs)
        .map(|k| {
            let mut a = MeanAccumulator::new();
            for p in &parts {
                a.merge(&p[k]);
            }
            a.estimate()
        })
        .collect();
    Ok(PairValues { n, values })
}

/// Exact pair correlation for exp-rate units `e^{rho(a - t)}` on disjoint
/// binary supports: `rho^2 sum_{S containing r(i), r(j)} c_S prod_{q in S} mu_q`
/// with `mu_q = e^{-rho t + rho^2 |T_q| / 2}`.
pub fn predicted_pair_correlation(net: &PlantedNetwork, i: usize, j: usize) -> Result<f64> {
    let act = net.activation();
    if act.kind != ActivationKind::ExpRate {
        return Err(Error::UnsupportedMode("closed form needs exp-rate units".into()));
    }
    let rows = net.rows();
    let unit_of = |v: usize| rows.iter().position(|r| r[v] == 1.0);
    let (Some(a), Some(b)) = (unit_of(i), unit_of(j)) else {
        return Ok(0.0);
    };
    let mu: Vec<f64> = rows
        .iter()
        .map(|r| {
            let k = r.iter().filter(|&&v| v == 1.0).count() as f64;
            (-act.rho * act.t + act.rho * act.rho * k / 2.0).exp()
        })
        .collect();
    let rho2 = act.rho * act.rho;
    Ok(rho2
        * net
            .poly()
            .terms()
            .iter()
            .filter(|(m, _)| m.contains(a) && m.contains(b))
            .map(|(m, c)| c * m.vars().map(|q| mu[q]).product::<f64>())
            .sum::<f64>())
}

/// Symmetric correlation graph on `n` nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationGraph {
    pub n: usize,
    pub values: PairValues,
    pub threshold: f64,
    pub edges: Vec<(usize, usize)>,
}

impl CorrelationGraph {
    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    /// Adjacency list, one node per line: `i j:alpha k:alpha ...`.
    pub fn to_adjacency_text(&self) -> String {
        let mut out = String::new();
        for (i, nb) in self.neighbours().iter().enumerate() {
            let _ = write!(out, "{i}");
            for &j in nb {
                let _ = write!(out, " {j}:{:.6e}", self.values.get(i, j).mean);
            }
            out.push('\n');
        }
        out
    }
}

/// Edges where `alpha_ij >= rho_g`.
pub fn build_graph(values: &PairValues, rho_g: f64) -> Result<CorrelationGraph> {
    if !(rho_g > 0.0) {
        return Err(invalid("graph threshold must be positive"));
    }
    let edges = values.pairs().filter(|&(i, j)| values.get(i, j).mean >= rho_g).collect();
    Ok(CorrelationGraph { n: values.n, values: values.clone(), threshold: rho_g, edges })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportGap {
    pub min_within: f64,
    pub max_cross: f64,
    /// `min_within / max_cross`.
    pub ratio: f64,
}

/// Smallest within-support and largest other pair value.
pub fn support_gap(values: &PairValues, family: &SupportFamily) -> SupportGap {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, j) in values.pairs() {
        let v = values.get(i, j).mean;
        match (family.owner(i), family.owner(j)) {
            (Some(a), Some(b)) if a == b => lo = lo.min(v),
            _ => hi = hi.max(v),
        }
    }
    SupportGap { min_within: lo, max_cross: hi, ratio: lo / hi }
}

/// Connected components with at least two nodes, each required to be a
/// complete subgraph.
pub fn extract_cliques(graph: &CorrelationGraph) -> Result<SupportFamily> {
    let adj = graph.neighbours();
    let mut seen = vec![false; graph.n];
    let mut sets = Vec::new();
    for s in 0..graph.n {
        if seen[s] || adj[s].is_empty() {
            continue;
        }
        let mut comp = vec![s];
        seen[s] = true;
        let mut k = 0;
        while k < comp.len() {
            for &v in &adj[comp[k]] {
                if !seen[v] {
                    seen[v] = true;
                    comp.push(v);
                }
            }
            k += 1;
        }
        comp.sort_unstable();
        if comp.iter().any(|&v| adj[v].len() != comp.len() - 1) {
            return Err(Error::StructureViolation(format!("component {comp:?} is not a clique")));
        }
        sets.push(comp);
    }
    SupportFamily::new(sets)
}

/// Settings of the penalized ascent `max h(z) = g(z) - lambda |z|_1 - gamma |z|^2`
/// over `z` in `[0, z_max]^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpAscentParams {
    pub lambda: f64,
    pub gamma: f64,
    pub z_max: f64,
    /// Each restart starts at `z_init e_p` for a random coordinate `p`.
    pub z_init: f64,
    pub step: f64,
    pub max_iter: usize,
    pub restarts: usize,
    /// Coordinates above this form the candidate support.
    pub cut: f64,
}

impl ExpAscentParams {
    /// Puts `lambda` at the geometric middle of the window
    /// `max_r c_r e^{k_r/2} < lambda < min_r c_r e^{k_r/2 + z_init}`,
    /// where `z = 0` is a local maximum of every block but a start at
    /// `z_init e_p` with `p` in a support grows that support.
    pub fn for_network(net: &PlantedNetwork, restarts: usize) -> Result<Self> {
        let c = net.poly().linear_coefficients();
        let sizes: Vec<f64> = net.rows().iter().map(|r| r.iter().filter(|&&v| v == 1.0).count() as f64).collect();
        let z_init: f64 = 1.0;
        let lows: Vec<f64> = c.iter().zip(&sizes).map(|(c, k)| c * (k / 2.0).exp()).collect();
        let lo = lows.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let hi = lows.iter().map(|v| v * z_init.exp()).fold(f64::INFINITY, f64::min);
        if !(lo > 0.0 && lo < hi) {
            return Err(Error::PreconditionFailure { pair: None, detail: format!("empty lambda window ({lo:.3}, {hi:.3})") });
        }
        let lambda = (lo * hi).sqrt();
        Ok(ExpAscentParams { lambda, gamma: 0.01 * lambda, z_max: 1.5, z_init, step: 0.02, max_iter: 400, restarts, cut: 0.5 })
    }
}

/// Where `g(z) = E[f(x + z)]` comes from.
pub enum AscentSource<'a> {
    /// `g(z) = e^{-|z|^2/2} mean(y e^{z.x})`, the exact gradient of which is
    /// `e^{-|z|^2/2} mean(y e^{z.x} (x - z))`.
    Dataset(&'a Dataset),
    /// `g(z) = mean f(x_j + z)` on fixed draws.
    Oracle { oracle: &'a SampleOracle, budget: usize, seed: RngSeed },
}

/// Share of the total carried by the largest 1% of terms.
fn top_share(mut v: Vec<f64>) -> f64 {
    let total: f64 = v.iter().map(|x| x.abs()).sum();
    if total == 0.0 {
        return 0.0;
    }
    v.iter_mut().for_each(|x| *x = x.abs());
    v.sort_by(|a, b| b.total_cmp(a));
    let k = (v.len() / 100).max(1);
    v[..k].iter().sum::<f64>() / total
}

pub const HEAVY_TAIL_SHARE: f64 = 0.5;

struct GEstimator<'a> {
    n: usize,
    xs: std::borrow::Cow<'a, [f64]>,
    ys: std::borrow::Cow<'a, [f64]>,
    oracle: Option<&'a SampleOracle>,
}

impl<'a> GEstimator<'a> {
    fn new(src: &AscentSource<'a>) -> Result<Self> {
        match src {
            AscentSource::Dataset(d) => {
                if d.is_empty() {
                    return Err(Error::InsufficientData("empty dataset".into()));
                }
                let ys: Vec<f64> = (0..d.len()).map(|j| d.label(j)).collect();
                Ok(GEstimator { n: d.n, xs: (&d.xs[..]).into(), ys: ys.into(), oracle: None })
            }
            AscentSource::Oracle { oracle, budget, seed } => {
                let d = oracle.sample_batch(&SamplingMode::Plain, *budget, *seed)?;
                Ok(GEstimator { n: d.n, xs: d.xs.into(), ys: Vec::new().into(), oracle: Some(oracle) })
            }
        }
    }

    /// Per-sample terms of the `g` estimate at `z`.
    fn terms(&self, z: &[f64]) -> Vec<f64> {
        let n = self.n;
        let m = self.xs.len() / n;
        (0..m)
            .into_par_iter()
            .with_min_len(4096)
            .map_init(
                || vec![0.0; 2 * n.max(self.oracle.map_or(0, |o| o.network().d()))],
                |scratch, j| {
                    let x = &self.xs[j * n..(j + 1) * n];
                    match self.oracle {
                        None => self.ys[j] * dot(z, x).exp(),
                        Some(o) => {
                            let (shifted, rest) = scratch.split_at_mut(n);
                            for ((s, a), b) in shifted.iter_mut().zip(x).zip(z) {
                                *s = a + b;
                            }
                            o.clean_label(shifted, rest)
                        }
                    }
                },
            )
            .collect()
    }

    fn mean_at(&self, z: &[f64]) -> f64 {
        let t = self.terms(z);
        let scale = if self.oracle.is_none() { (-0.5 * dot(z, z)).exp() } else { 1.0 };
        scale * t.iter().sum::<f64>() / t.len() as f64
    }

    /// `(g, grad g)`, failing on heavy tails. Dataset mode differentiates
    /// the estimate exactly; oracle mode takes central differences on the
    /// same draws, since the Stein form `mean f(x + z) x` carries noise
    /// from every support into every coordinate.
    fn eval(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let n = self.n;
        let terms = self.terms(z);
        let m = terms.len();
        let share = top_share(terms.clone());
        if share > HEAVY_TAIL_SHARE {
            return Err(Error::VarianceFailure(format!("top 1% of samples carry {:.0}% of the estimate", 100.0 * share)));
        }
        if self.oracle.is_some() {
            let g = terms.iter().sum::<f64>() / m as f64;
            let grad = (0..n)
                .map(|p| {
                    let mut a = z.to_vec();
                    let mut b = z.to_vec();
                    a[p] += FD_STEP;
                    b[p] -= FD_STEP;
                    (self.mean_at(&a) - self.mean_at(&b)) / (2.0 * FD_STEP)
                })
                .collect();
            return Ok((g, grad));
        }
        let mut grad = vec![0.0; n];
        for (j, w) in terms.iter().enumerate() {
            let x = &self.xs[j * n..(j + 1) * n];
            for ((g, a), b) in grad.iter_mut().zip(x).zip(z) {
                *g += w * (a - b);
            }
        }
        let scale = (-0.5 * dot(z, z)).exp() / m as f64;
        grad.iter_mut().for_each(|v| *v *= scale);
        Ok((terms.iter().sum::<f64>() * scale, grad))
    }
}

const FD_STEP: f64 = 1e-3;

/// `h(z)` and its gradient for `z >= 0`.
pub fn exp_objective(src: &AscentSource<'_>, z: &[f64], p: &ExpAscentParams) -> Result<(f64, Vec<f64>)> {
    if z.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Domain("ascent objective is defined on z >= 0".into()));
    }
    let est = GEstimator::new(src)?;
    penalized(&est, z, p)
}

fn penalized(est: &GEstimator<'_>, z: &[f64], p: &ExpAscentParams) -> Result<(f64, Vec<f64>)> {
    let (g, mut grad) = est.eval(z)?;
    let l1: f64 = z.iter().sum();
    let h = g - p.lambda * l1 - p.gamma * dot(z, z);
    // on the box the l1 term is linear, so its (one-sided at 0) derivative is lambda
    for (gi, zi) in grad.iter_mut().zip(z) {
        *gi -= p.lambda + 2.0 * p.gamma * zi;
    }
    Ok((h, grad))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AscentRun {
    pub start: usize,
    pub z: Vec<f64>,
    pub value: f64,
    pub support: Vec<usize>,
    pub iterations: usize,
}

/// Projected gradient ascent on `[0, z_max]^n` from `restarts` starts.
pub fn exp_ascent(src: &AscentSource<'_>, p: &ExpAscentParams, seed: RngSeed) -> Result<Vec<AscentRun>> {
    if !(p.lambda > 0.0 && p.gamma >= 0.0 && p.z_max > 0.0 && p.step > 0.0) || p.restarts == 0 {
        return Err(invalid("ascent needs positive lambda, z_max, step and restarts"));
    }
    let est = GEstimator::new(src)?;
    let n = est.n;
    let mut rng = seed.rng();
    let mut runs = Vec::with_capacity(p.restarts);
    for _ in 0..p.restarts {
        let start = rng.random_range(0..n);
        let mut z = vec![0.0; n];
        z[start] = p.z_init.min(p.z_max);
        let mut value = 0.0;
        let mut iterations = 0;
        for it in 0..p.max_iter {
            let (h, g) = penalized(&est, &z, p)?;
            value = h;
            iterations = it + 1;
            let next: Vec<f64> = z.iter().zip(&g).map(|(a, b)| (a + p.step * b).clamp(0.0, p.z_max)).collect();
            let moved = next.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            z = next;
            if moved < 1e-9 {
                break;
            }
        }
        let support = (0..n).filter(|&i| z[i] > p.cut).collect();
        runs.push(AscentRun { start, z, value, support, iterations });
    }
    Ok(runs)
}

/// Distinct nonempty supports found by the runs.
pub fn ascent_supports(runs: &[AscentRun]) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for r in runs {
        if !r.support.is_empty() && !out.contains(&r.support) {
            out.push(r.support.clone());
        }
    }
    out.sort();
    out
}

/// Coefficients of `E[f h_4(z.x)]` for an even activation and orthonormal
/// weights, in the coordinates `y_i = w_i.z`:
/// `sum_i alpha_i y_i^4 + (|y|^2 - 1) sum_i beta_i y_i^2
///  + sum_{i<j} gamma_ij y_i^2 y_j^2 + kappa0 (|y|^2 - 1)^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvenCoeffs {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Upper triangle, row-major, `i < j`.
    pub gamma: Vec<f64>,
    pub kappa0: f64,
    pub u0: f64,
    pub u2: f64,
    pub u4: f64,
}

impl EvenCoeffs {
    pub fn d(&self) -> usize {
        self.alpha.len()
    }

    pub fn gamma_at(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        let d = self.d();
        self.gamma[a * d - a * (a + 1) / 2 + (b - a - 1)]
    }

    /// The model value at weight coordinates `y`.
    pub fn eval(&self, y: &[f64]) -> f64 {
        let d = self.d();
        let r = dot(y, y) - 1.0;
        let mut v = self.kappa0 * r * r;
        for i in 0..d {
            let y2 = y[i] * y[i];
            v += self.alpha[i] * y2 * y2 + r * self.beta[i] * y2;
            for j in i + 1..d {
                v += self.gamma_at(i, j) * y2 * y[j] * y[j];
            }
        }
        v
    }

    /// Flattened `(alpha, beta, gamma, kappa0)`, the order of [`even_features`].
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.alpha.clone();
        v.extend(&self.beta);
        v.extend(&self.gamma);
        v.push(self.kappa0);
        v
    }
}

/// Feature vector matching [`EvenCoeffs::flat`].
pub fn even_features(y: &[f64]) -> Vec<f64> {
    let d = y.len();
    let r = dot(y, y) - 1.0;
    let mut f: Vec<f64> = y.iter().map(|v| v.powi(4)).collect();
    f.extend(y.iter().map(|v| r * v * v));
    for i in 0..d {
        for j in i + 1..d {
            f.push(y[i] * y[i] * y[j] * y[j]);
        }
    }
    f.push(r * r);
    f
}

/// Expands `h_4(a) = H_4^s(a) + sqrt(3)(s^2 - 1) H_2^s(a) + 3 (s^2 - 1)^2 / sqrt(24)`
/// with `s = |z|` and the product formula for `H_k^{|z|}(z.x)`.
pub fn even_coefficients(poly: &SparsePolynomial, u: &ActivationSpec) -> Result<EvenCoeffs> {
    if !u.is_even() {
        return Err(Error::PreconditionFailure { pair: None, detail: format!("{} is not an even activation", u.kind.name()) });
    }
    if !poly.is_degree_one() {
        return Err(Error::UnsupportedMode("even coefficients need a square-free polynomial".into()));
    }
    let t = HermiteCoeffTable::compute(u, 4)?;
    let (u0, u2, u4) = (t.get(0), t.get(2), t.get(4));
    let d = poly.nvars();
    let sum_over = |set: &[usize], drop: i32| -> f64 {
        poly.terms()
            .iter()
            .filter(|(m, _)| set.iter().all(|&v| m.contains(v)))
            .map(|(m, c)| c * u0.powi(m.support_size() as i32 - drop))
            .sum()
    };
    let alpha = (0..d).map(|i| u4 * sum_over(&[i], 1)).collect();
    let beta = (0..d).map(|i| 3f64.sqrt() * u2 * sum_over(&[i], 1)).collect();
    let mut gamma = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            gamma.push(6f64.sqrt() * u2 * u2 * sum_over(&[i, j], 2));
        }
    }
    let mean_f = poly.constant() + sum_over(&[], 0);
    Ok(EvenCoeffs { alpha, beta, gamma, kappa0: 3.0 / 24f64.sqrt() * mean_f, u0, u2, u4 })
}

/// Checks `C({i}) + C({j}) > (sqrt(6) u2^2 / (u0 u4)) C({i, j})` for every
/// pair, with `C(S) = sum_{S' containing S} c_S' u0^|S'|`, which makes the
/// quartic form on each coordinate circle convex in `y_i^2` so its maxima
/// sit on the axes. Returns the first failing pair.
pub fn even_condition(poly: &SparsePolynomial, coeffs: &EvenCoeffs) -> std::result::Result<(), (usize, usize)> {
    let d = poly.nvars();
    let factor = 6f64.sqrt() * coeffs.u2 * coeffs.u2 / (coeffs.u0 * coeffs.u4);
    let sg = coeffs.u4.signum();
    for i in 0..d {
        for j in i + 1..d {
            let ci = poly.superset_sum(&[i], coeffs.u0);
            let cj = poly.superset_sum(&[j], coeffs.u0);
            let cij = poly.superset_sum(&[i, j], coeffs.u0);
            if !(sg * (ci + cj) > sg * factor * cij) {
                return Err((i, j));
            }
        }
    }
    Ok(())
}

/// Least-squares fit of the even model to per-sample `y h_4(z_k.x)` over
/// a grid of directions given in weight coordinates (`rows` maps them to
/// input space). The estimate is a sample mean of `A^+ v_j`, so each
/// coefficient gets a standard error.
pub fn fit_even_coefficients(data: &Dataset, rows: &[Vec<f64>], grid: &[Vec<f64>]) -> Result<Vec<McEstimate>> {
    let d = rows.len();
    if grid.iter().any(|y| y.len() != d) {
        return Err(invalid("grid points must have one coordinate per unit"));
    }
    let zs: Vec<Vec<f64>> = grid
        .iter()
        .map(|y| {
            let mut z = vec![0.0; data.n];
            for (c, w) in y.iter().zip(rows) {
                linalg::axpy(*c, w, &mut z);
            }
            z
        })
        .collect();
    let feats: Vec<Vec<f64>> = grid.iter().map(|y| even_features(y)).collect();
    let k = feats[0].len();
    if grid.len() < k {
        return Err(invalid(format!("need at least {k} grid points")));
    }
    let a = nalgebra::DMatrix::from_fn(grid.len(), k, |r, c| feats[r][c]);
    let pinv = a.pseudo_inverse(1e-12).map_err(|e| Error::NumericFailure(e.to_string()))?;
    let m = data.len();
    const CHUNK: usize = 4096;
    let parts: Vec<Vec<MeanAccumulator>> = (0..m.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![MeanAccumulator::new(); k];
            let mut v = vec![0.0; zs.len()];
            for r in c * CHUNK..((c + 1) * CHUNK).min(m) {
                let x = data.x(r);
                let y = data.label(r);
                for (vk, z) in v.iter_mut().zip(&zs) {
                    *vk = y * h4_parts(dot(z, x), 1.0).0;
                }
                for (q, a) in acc.iter_mut().enumerate() {
                    a.push((0..zs.len()).map(|s| pinv[(q, s)] * v[s]).sum());
                }
            }
            acc
        })
        .collect();
    Ok((0..k)
        .map(|q| {
            let mut a = MeanAccumulator::new();
            for p in &parts {
                a.merge(&p[q]);
            }
            a.estimate()
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvenParams {
    pub restarts: usize,
    pub max_iter: usize,
    pub dedup_cos: f64,
    pub tol: f64,
}

impl Default for EvenParams {
    fn default() -> Self {
        EvenParams { restarts: 20, max_iter: 2000, dedup_cos: 0.9, tol: 1e-9 }
    }
}

/// `sgn(u4) mean(y h_4(z.x))` on the unit sphere with its tangent gradient.
fn even_value_grad(data: &Dataset, z: &[f64], sg: f64) -> (f64, Vec<f64>) {
    let n = data.n;
    let m = data.len();
    let (v, g) = (0..m)
        .into_par_iter()
        .with_min_len(4096)
        .fold(
            || (0.0, vec![0.0; n]),
            |(mut v, mut g), j| {
                let x = data.x(j);
                let y = data.label(j);
                if y != 0.0 {
                    let (h, dh, _) = h4_parts(dot(z, x), 1.0);
                    v += y * h;
                    linalg::axpy(y * dh, x, &mut g);
                }
                (v, g)
            },
        )
        .reduce(
            || (0.0, vec![0.0; n]),
            |(a, mut ga), (b, gb)| {
                linalg::axpy(1.0, &gb, &mut ga);
                (a + b, ga)
            },
        );
    let mut g: Vec<f64> = g.iter().map(|x| sg * x / m as f64).collect();
    let c = dot(&g, z);
    linalg::axpy(-c, z, &mut g);
    (sg * v / m as f64, g)
}

/// Maximizes `sgn(u4) E[f h_4(z.x)]` over the sphere from random restarts
/// (each projected off the directions already kept) and returns `d`
/// distinct maximizers. Refuses when the pair condition fails.
pub fn even_recover(data: &Dataset, poly: &SparsePolynomial, u: &ActivationSpec, d: usize, p: &EvenParams, seed: RngSeed) -> Result<Vec<Vec<f64>>> {
    let coeffs = even_coefficients(poly, u)?;
    if let Err((i, j)) = even_condition(poly, &coeffs) {
        return Err(Error::PreconditionFailure { pair: Some((i, j)), detail: "pair condition for axis maxima fails".into() });
    }
    let n = data.n;
    if d == 0 || d > n {
        return Err(invalid("need 1 <= d <= n"));
    }
    let sg = coeffs.u4.signum();
    let mut kept: Vec<Vec<f64>> = Vec::new();
    let mut rng = seed.rng();
    for _ in 0..p.restarts {
        if kept.len() == d {
            break;
        }
        let mut z = random_unit(&mut rng, n);
        for k in &kept {
            let c = dot(&z, k);
            linalg::axpy(-c, k, &mut z);
        }
        z = linalg::normalized(&z).unwrap_or_else(|| random_unit(&mut rng, n));
        let (mut val, mut g) = even_value_grad(data, &z, sg);
        let mut step = 1.0 / coeffs.u4.abs().max(1e-12);
        for _ in 0..p.max_iter {
            if norm(&g) <= p.tol {
                break;
            }
            let mut moved = false;
            while step > 1e-12 {
                let mut trial = z.clone();
                linalg::axpy(step, &g, &mut trial);
                let trial = linalg::normalized(&trial).unwrap();
                let (tv, tg) = even_value_grad(data, &trial, sg);
                if tv > val {
                    z = trial;
                    val = tv;
                    g = tg;
                    moved = true;
                    step *= 2.0;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        let cand = canonical_sign(&z);
        if kept.iter().all(|k| linalg::abs_cos(k, &cand) < p.dedup_cos) {
            kept.push(cand);
        }
    }
    if kept.len() < d {
        return Err(Error::CoverageFailure { found: kept.len(), wanted: d });
    }
    Ok(kept)
}
