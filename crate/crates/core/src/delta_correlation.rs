//! Correlations of `f` with a Dirac delta on `z.x` and its finite
//! differences, and a scanner that tests candidate directions with them.
//!
//! `C1(z, s) = E[f(x) delta(z.x - s)] = phi(s) E[f | z.x = s]`. The sign
//! correlation `C2 = C1(s + eps) - C1(s - eps)` picks up the jump of `f`
//! across the hyperplane `w_i.x = t`; `C3` is the second difference over
//! `eps`, for ReLU units whose kink has no jump.

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, dot};
use crate::network_model::{SampleOracle, SamplingMode};
use crate::stats_core::{merge_in_order, normal_pdf, McEstimate, MeanAccumulator, RngSeed};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How the delta is realized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaMode {
    /// Exact hyperplane conditioning; only `E[f | z.x = s]` is sampled.
    Oracle,
    /// Plain samples and the slab indicator `1[z.x in [s - eps_inner, s]] / eps_inner`.
    Stream,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaParams {
    pub s: f64,
    pub eps_outer: f64,
    pub eps_inner: f64,
    pub budget: usize,
    pub mode: DeltaMode,
}

impl DeltaParams {
    pub fn new(s: f64, eps_outer: f64, budget: usize) -> Result<Self> {
        let p = DeltaParams { s, eps_outer, eps_inner: eps_outer / 10.0, budget, mode: DeltaMode::Oracle };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s >= 0.0) {
            return Err(invalid("slice location must be nonnegative"));
        }
        if !(self.eps_outer > 0.0) || !(self.eps_inner > 0.0) || self.eps_inner > self.eps_outer / 10.0 {
            return Err(invalid("need 0 < eps_inner <= eps_outer / 10"));
        }
        if self.budget == 0 {
            return Err(invalid("need a positive budget"));
        }
        Ok(())
    }

    pub fn at(&self, s: f64) -> DeltaParams {
        DeltaParams { s, ..self.clone() }
    }
}

/// `sum_k w_k C1(z, s_k)` on shared random numbers: each draw is projected
/// onto every hyperplane `z.x = s_k` (oracle mode) or tested against every
/// slab (stream mode).
pub fn delta_combination(oracle: &SampleOracle, z: &[f64], terms: &[(f64, f64)], p: &DeltaParams, seed: RngSeed) -> Result<McEstimate> {
    p.validate()?;
    if z.len() != oracle.n() {
        return Err(invalid(format!("direction has length {}, expected {}", z.len(), oracle.n())));
    }
    let z = linalg::normalized(z).ok_or_else(|| invalid("direction must be nonzero"))?;
    let d = oracle.network().d();
    match p.mode {
        DeltaMode::Oracle => {
            let weights: Vec<f64> = terms.iter().map(|(s, w)| w * normal_pdf(*s)).collect();
            let parts = oracle.fold(
                &SamplingMode::Plain,
                p.budget,
                seed,
                || (MeanAccumulator::new(), vec![0.0; oracle.n()], vec![0.0; d]),
                |(acc, buf, scratch), x, _| {
                    let proj = dot(&z, x);
                    let mut v = 0.0;
                    for ((s, _), w) in terms.iter().zip(&weights) {
                        buf.copy_from_slice(x);
                        linalg::axpy(s - proj, &z, buf);
                        v += w * oracle.clean_label(buf, scratch);
                    }
                    acc.push(v);
                },
            )?;
            let accs: Vec<MeanAccumulator> = parts.into_iter().map(|p| p.0).collect();
            Ok(merge_in_order(&accs).estimate())
        }
        DeltaMode::Stream => {
            let eps = p.eps_inner;
            let parts = oracle.fold(
                &SamplingMode::Plain,
                p.budget,
                seed,
                || (MeanAccumulator::new(), 0u64),
                |(acc, hits), x, y| {
                    let proj = dot(&z, x);
                    let mut v = 0.0;
                    for (s, w) in terms {
                        if proj >= s - eps && proj <= *s {
                            v += w * y / eps;
                            *hits += 1;
                        }
                    }
                    acc.push(v);
                },
            )?;
            if parts.iter().map(|p| p.1).sum::<u64>() == 0 {
                return Err(Error::InsufficientData("no samples fell in the delta slabs".into()));
            }
            let accs: Vec<MeanAccumulator> = parts.into_iter().map(|p| p.0).collect();
            Ok(merge_in_order(&accs).estimate())
        }
    }
}

/// `E[f(x) delta(z.x - s)]`.
pub fn c1_delta(oracle: &SampleOracle, z: &[f64], p: &DeltaParams, seed: RngSeed) -> Result<McEstimate> {
    delta_combination(oracle, z, &[(p.s, 1.0)], p, seed)
}

/// `C1(s + eps) - C1(s - eps)`, without the `1 / (2 eps)`.
pub fn c2_delta_prime(oracle: &SampleOracle, z: &[f64], p: &DeltaParams, seed: RngSeed) -> Result<McEstimate> {
    delta_combination(oracle, z, &[(p.s + p.eps_outer, 1.0), (p.s - p.eps_outer, -1.0)], p, seed)
}

/// `C2 / (2 eps)`, a derivative-scale version for plots.
pub fn c2_normalized(oracle: &SampleOracle, z: &[f64], p: &DeltaParams, seed: RngSeed) -> Result<McEstimate> {
    let e = c2_delta_prime(oracle, z, p, seed)?;
    let k = 1.0 / (2.0 * p.eps_outer);
    Ok(McEstimate { mean: e.mean * k, stderr: e.stderr * k, count: e.count })
}

/// `(C1(s + eps) - 2 C1(s) + C1(s - eps)) / eps`.
pub fn c3_relu(oracle: &SampleOracle, z: &[f64], p: &DeltaParams, seed: RngSeed) -> Result<McEstimate> {
    let k = 1.0 / p.eps_outer;
    delta_combination(oracle, z, &[(p.s + p.eps_outer, k), (p.s, -2.0 * k), (p.s - p.eps_outer, k)], p, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanStatistic {
    C2,
    C3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationProfile {
    pub entries: Vec<(Vec<f64>, McEstimate)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub profile: CorrelationProfile,
    pub accepted: Vec<usize>,
    pub threshold: f64,
}

/// Evaluates the statistic at `s = t` on every candidate and accepts those
/// at or above `phi(t) eps3 / 2`. Candidate `i` uses sub-seed `i`.
pub fn direction_scan(
    oracle: &SampleOracle,
    candidates: &[Vec<f64>],
    t: f64,
    p: &DeltaParams,
    eps3: f64,
    stat: ScanStatistic,
    seed: RngSeed,
) -> Result<ScanResult> {
    if candidates.is_empty() {
        return Err(invalid("candidate list is empty"));
    }
    let q = p.at(t);
    q.validate()?;
    let values = candidates
        .par_iter()
        .enumerate()
        .map(|(i, z)| {
            let z = linalg::normalized(z).ok_or_else(|| invalid(format!("candidate {i} is zero")))?;
            let v = match stat {
                ScanStatistic::C2 => c2_delta_prime(oracle, &z, &q, seed.derive(i as u64))?,
                ScanStatistic::C3 => c3_relu(oracle, &z, &q, seed.derive(i as u64))?,
            };
            Ok((z, v))
        })
        .collect::<Result<Vec<_>>>()?;
    let threshold = normal_pdf(t) * eps3 / 2.0;
    let accepted = values.iter().enumerate().filter(|(_, (_, v))| v.mean >= threshold).map(|(i, _)| i).collect();
    Ok(ScanResult { profile: CorrelationProfile { entries: values }, accepted, threshold })
}

/// `phi(t) / mu` times the coefficient of `X_i` in `P(mu (X + 1))`, `mu = Phi^c(t)`:
/// the population peak of `C2` at `w_i` for orthonormal sign networks.
pub fn predicted_peak(poly: &crate::polynomial::SparsePolynomial, i: usize, t: f64) -> Result<f64> {
    let mu = crate::stats_core::normal_ccdf(t);
    let shifted = poly.substitute_shifted(mu)?;
    Ok(normal_pdf(t) / mu * shifted.linear_coefficients()[i])
}
