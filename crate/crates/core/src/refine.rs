//! Slab-conditional sign probabilities, the tan-angle estimator, the
//! random tangential perturbation refinement, and the halfspace
//! intersection learner built on top of the landscape recovery.

use crate::activation::ActivationSpec;
use crate::error::{invalid, Error, Result};
use crate::landscape::{align_and_score, assemble_and_invert, recover_all_one_by_one, LandscapeParams, DEFAULT_LAMBDA_MULTIPLIER};
use crate::linalg::{self, dot, norm};
use crate::network_model::{SampleOracle, SamplingMode};
use crate::stats_core::{fill_gaussian, normal_quantile, McEstimate, RngSeed};
use serde::{Deserialize, Serialize};

/// `Phi^{-1}(0.6) - Phi^{-1}(0.4)`.
pub fn quantile_spacing() -> f64 {
    normal_quantile(0.6).unwrap() - normal_quantile(0.4).unwrap()
}

/// The slab `{x : z.x in [t' - eps, t']}` with a sample budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlabQuery {
    pub z: Vec<f64>,
    pub t_prime: f64,
    pub eps: f64,
    pub budget: usize,
}

impl SlabQuery {
    pub fn new(z: Vec<f64>, t_prime: f64, eps: f64, budget: usize) -> Result<Self> {
        if (norm(&z) - 1.0).abs() > 1e-10 {
            return Err(invalid("slab direction must be a unit vector"));
        }
        if !(eps > 0.0 && eps < 1.0 / t_prime.abs().max(1.0)) {
            return Err(invalid(format!("slab width {eps} must lie in (0, 1/max(|t'|, 1))")));
        }
        if budget == 0 {
            return Err(invalid("slab query needs a positive budget"));
        }
        Ok(SlabQuery { z, t_prime, eps, budget })
    }
}

/// Which labels count as positive: `(1 - y if complement else y) > offset`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelRule {
    pub complement: bool,
    pub offset: f64,
}

impl LabelRule {
    #[inline]
    pub fn positive(&self, y: f64) -> bool {
        let v = if self.complement { 1.0 - y } else { y };
        v > self.offset
    }

    /// Offset at the empirical label median, for `f` with a constant term.
    pub fn median_shifted(oracle: &SampleOracle, count: usize, seed: RngSeed) -> Result<Self> {
        let ds = oracle.sample_batch(&SamplingMode::Plain, count, seed)?;
        let mut ys = ds.ys.clone();
        if ys.is_empty() {
            return Err(invalid("need samples for the median"));
        }
        ys.sort_by(f64::total_cmp);
        Ok(LabelRule { complement: false, offset: ys[ys.len() / 2] })
    }
}

/// `Pr[f(x) > 0 | x in slab]` with binomial standard error.
pub fn slab_sign_prob(oracle: &SampleOracle, q: &SlabQuery, rule: LabelRule, seed: RngSeed) -> Result<McEstimate> {
    if q.budget == 0 {
        return Err(invalid("slab query needs a positive budget"));
    }
    let mode = SamplingMode::Slab { z: q.z.clone(), t_prime: q.t_prime, eps: q.eps };
    let hits = oracle.fold(&mode, q.budget, seed, || 0u64, |acc, _, y| *acc += rule.positive(y) as u64)?;
    let k: u64 = hits.iter().sum();
    let n = q.budget as f64;
    let p = k as f64 / n;
    Ok(McEstimate { mean: p, stderr: (p * (1.0 - p) / n).sqrt(), count: q.budget as u64 })
}

/// Settings of the tan-angle estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TanConfig {
    /// Slab width.
    pub eps: f64,
    /// Samples per slab query.
    pub budget: usize,
    /// Upper end of the search; `None` means `3 t` of the oracle's units.
    pub t_max: Option<f64>,
    /// Bisection stops when the bracket is this narrow...
    pub t_tol: f64,
    /// ...or when a probability lands within this of the level (0 disables).
    pub prob_tol: f64,
    pub max_steps: usize,
}

impl Default for TanConfig {
    fn default() -> Self {
        TanConfig { eps: 0.002, budget: 100_000, t_max: None, t_tol: 5e-5, prob_tol: 0.0, max_steps: 40 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TanEstimate {
    pub s: f64,
    pub t1: f64,
    pub t2: f64,
    pub p1: McEstimate,
    pub p2: McEstimate,
    pub queries: usize,
    pub warnings: Vec<String>,
}

impl TanEstimate {
    pub fn alpha(&self) -> f64 {
        self.s.atan()
    }
}

struct Search<'a> {
    oracle: &'a SampleOracle,
    z: &'a [f64],
    cfg: &'a TanConfig,
    rule: LabelRule,
    seed: RngSeed,
    evals: Vec<(f64, McEstimate)>,
}

impl Search<'_> {
    fn prob(&mut self, t_prime: f64) -> Result<McEstimate> {
        let tag = self.evals.len() as u64;
        let q = SlabQuery { z: self.z.to_vec(), t_prime, eps: self.cfg.eps, budget: self.cfg.budget };
        let p = slab_sign_prob(self.oracle, &q, self.rule, self.seed.derive(tag))?;
        self.evals.push((t_prime, p));
        Ok(p)
    }

    /// Bisects for `prob = level` on `[lo, hi]`, assuming `p(lo) < level < p(hi)`.
    fn bisect(&mut self, level: f64, mut lo: f64, mut hi: f64) -> Result<(f64, McEstimate)> {
        let mut last = None;
        for _ in 0..self.cfg.max_steps {
            if hi - lo <= self.cfg.t_tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let p = self.prob(mid)?;
            if self.cfg.prob_tol > 0.0 && (p.mean - level).abs() <= self.cfg.prob_tol {
                return Ok((mid, p));
            }
            if p.mean < level {
                lo = mid;
            } else {
                hi = mid;
            }
            last = Some(p);
        }
        let mid = 0.5 * (lo + hi);
        Ok((mid, last.unwrap_or(McEstimate { mean: level, stderr: 0.0, count: 0 })))
    }
}

/// Finds `t1`, `t2` where the slab sign probability crosses 0.4 and 0.6 and
/// returns `s = (t2 - t1) / (Phi^{-1}(0.6) - Phi^{-1}(0.4))`.
///
/// `hint` is a previous `(t1, t2)`; when the probabilities at a widened
/// version of it bracket both levels the search starts from there.
pub fn estimate_tan_alpha(
    oracle: &SampleOracle,
    z: &[f64],
    cfg: &TanConfig,
    rule: LabelRule,
    hint: Option<(f64, f64)>,
    seed: RngSeed,
) -> Result<TanEstimate> {
    let z = linalg::normalized(z).ok_or_else(|| invalid("direction must be nonzero"))?;
    if cfg.budget == 0 || !(cfg.eps > 0.0) || !(cfg.t_tol > 0.0) {
        return Err(invalid("tan estimator needs positive budget, slab width and tolerance"));
    }
    let t_max = cfg.t_max.unwrap_or(3.0 * oracle.network().activation().t);
    if !(t_max > 0.0) {
        return Err(invalid("search range must be positive"));
    }
    let mut search = Search { oracle, z: &z, cfg, rule, seed, evals: Vec::new() };
    let mut range = None;
    if let Some((h1, h2)) = hint {
        let w = (4.0 * (h2 - h1)).max(0.05);
        let (lo, hi) = ((h1 - w).max(0.0), (h2 + w).min(t_max));
        if lo < hi && search.prob(lo)?.mean < 0.4 && search.prob(hi)?.mean > 0.6 {
            range = Some((lo, hi));
        }
    }
    let (lo, hi) = match range {
        Some(r) => r,
        None => {
            let p0 = search.prob(0.0)?;
            if p0.mean >= 0.4 {
                return Err(Error::SearchFailure(format!("probability {:.3} at t' = 0 is already above 0.4", p0.mean)));
            }
            let pm = search.prob(t_max)?;
            if pm.mean <= 0.6 {
                return Err(Error::SearchFailure(format!("probability {:.3} at t' = {t_max} does not reach 0.6", pm.mean)));
            }
            (0.0, t_max)
        }
    };
    let (t1, p1) = search.bisect(0.4, lo, hi)?;
    let (t2, p2) = search.bisect(0.6, t1, hi)?;
    let mut warnings = Vec::new();
    let mut evals = search.evals.clone();
    evals.sort_by(|a, b| a.0.total_cmp(&b.0));
    for pair in evals.windows(2) {
        let (a, b) = (&pair[0].1, &pair[1].1);
        let tol = 2.0 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        if b.mean < a.mean - tol.max(1e-12) {
            warnings.push(format!("noisy data: probability falls from {:.4} to {:.4} between t' = {:.5} and {:.5}", a.mean, b.mean, pair[0].0, pair[1].0));
        }
    }
    let s = ((t2 - t1) / quantile_spacing()).max(0.0);
    Ok(TanEstimate { s, t1, t2, p1, p2, queries: search.evals.len(), warnings })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub tan: TanConfig,
    /// Target angle in radians.
    pub eps2: f64,
    pub max_outer: usize,
    pub perturb_scale: f64,
    pub c_acc: f64,
    /// Estimates of the current point averaged before the stop test trusts it.
    pub confirm: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            tan: TanConfig::default(),
            eps2: 0.5f64.to_radians(),
            max_outer: 400,
            perturb_scale: 0.1,
            c_acc: 0.004,
            confirm: 3,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps2 > 0.0 && self.eps2 < std::f64::consts::FRAC_PI_4) {
            return Err(invalid("target angle must lie in (0, pi/4)"));
        }
        if self.max_outer == 0 || self.tan.budget == 0 {
            return Err(invalid("budgets must be positive"));
        }
        if !(self.perturb_scale > 0.0) || !(self.c_acc >= 0.0) {
            return Err(invalid("perturbation scale must be positive and c_acc nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineStep {
    /// Point the `current` estimate was taken at (before any move).
    pub z: Vec<f64>,
    pub proposal: Vec<f64>,
    pub current: TanEstimate,
    pub candidate: TanEstimate,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineResult {
    pub z: Vec<f64>,
    /// Averaged angle estimate at `z`, radians.
    pub alpha: f64,
    pub reached: bool,
    pub proposals: usize,
    pub accepted: usize,
    pub steps: Vec<RefineStep>,
}

/// `normalize(z + scale sin(alpha / n) dz)` with `dz` standard Gaussian in
/// the tangent hyperplane at unit `z`.
pub fn propose(z: &[f64], alpha: f64, scale: f64, rng: &mut impl rand::Rng) -> (Vec<f64>, Vec<f64>) {
    let n = z.len();
    let mut dz = vec![0.0; n];
    fill_gaussian(rng, &mut dz);
    for _ in 0..2 {
        let c = dot(&dz, z);
        linalg::axpy(-c, z, &mut dz);
    }
    let step = scale * (alpha / n as f64).sin();
    let mut p = z.to_vec();
    linalg::axpy(step, &dz, &mut p);
    (linalg::normalized(&p).unwrap_or_else(|| z.to_vec()), dz)
}

/// Random tangential perturbation: accept a proposal when its estimated
/// angle is at most `(1 - c_acc / n)` times that of the current point on the
/// same random numbers; stop once the averaged estimate is below `eps2`.
pub fn refine_estimate(oracle: &SampleOracle, z0: &[f64], cfg: &RefineConfig, rule: LabelRule, seed: RngSeed) -> Result<RefineResult> {
    cfg.validate()?;
    let mut z = linalg::normalized(z0).ok_or_else(|| invalid("start must be nonzero"))?;
    let n = z.len() as f64;
    let first = estimate_tan_alpha(oracle, &z, &cfg.tan, rule, None, seed.derive(0))?;
    let mut hint = Some((first.t1, first.t2));
    let mut sum = first.alpha();
    let mut count = 1usize;
    if first.alpha() <= cfg.eps2 / 4.0 {
        return Ok(RefineResult { z, alpha: first.alpha(), reached: true, proposals: 0, accepted: 0, steps: vec![] });
    }
    let mut rng = seed.derive_str("proposals").rng();
    let mut steps = Vec::new();
    let mut accepted = 0;
    let mut reached = false;
    for k in 0..cfg.max_outer {
        let alpha = sum / count as f64;
        if count >= cfg.confirm && alpha <= cfg.eps2 {
            reached = true;
            break;
        }
        let (zp, _) = propose(&z, alpha.max(cfg.eps2), cfg.perturb_scale, &mut rng);
        let s = seed.derive(k as u64 + 1);
        let cur = estimate_tan_alpha(oracle, &z, &cfg.tan, rule, hint, s)?;
        let cand = estimate_tan_alpha(oracle, &zp, &cfg.tan, rule, Some((cur.t1, cur.t2)), s)?;
        sum += cur.alpha();
        count += 1;
        let ok = cand.alpha() <= (1.0 - cfg.c_acc / n) * cur.alpha();
        let at = z.clone();
        if ok {
            accepted += 1;
            z = zp.clone();
            sum = cand.alpha();
            count = 1;
            hint = Some((cand.t1, cand.t2));
        } else {
            hint = Some((cur.t1, cur.t2));
        }
        steps.push(RefineStep { z: at, proposal: zp, current: cur, candidate: cand, accepted: ok });
    }
    if !reached && count >= cfg.confirm && sum / count as f64 <= cfg.eps2 {
        reached = true;
    }
    Ok(RefineResult { z, alpha: sum / count as f64, reached, proposals: steps.len(), accepted, steps })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfspaceConfig {
    /// Samples for the landscape stage.
    pub samples: usize,
    pub lambda_multiplier: f64,
    pub max_restarts: Option<usize>,
    pub refine: RefineConfig,
}

impl Default for HalfspaceConfig {
    fn default() -> Self {
        HalfspaceConfig {
            samples: 2_000_000,
            lambda_multiplier: DEFAULT_LAMBDA_MULTIPLIER,
            max_restarts: None,
            refine: RefineConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfspaceRecovery {
    /// Recovered normals, oriented as the `w_i` of `g = AND 1[w_i.x + t >= 0]`.
    pub directions: Vec<Vec<f64>>,
    /// Landscape-stage estimates, same orientation.
    pub coarse: Vec<Vec<f64>>,
    pub refinements: Vec<RefineResult>,
}

/// Learns `g(x) = AND_i 1[w_i.x + t >= 0]` from an oracle emitting `g`.
/// Complementing gives `OR_i 1[(-w_i).x > t]`, a union of high-threshold
/// halfspaces; the landscape stage finds the `-w_i` up to sign and each is
/// then refined on slabs of the complemented labels.
pub fn learn_halfspace_intersection(oracle: &SampleOracle, d: usize, t: f64, cfg: &HalfspaceConfig, seed: RngSeed) -> Result<HalfspaceRecovery> {
    let n = oracle.n();
    if d != n {
        return Err(Error::UnsupportedSize(format!("halfspace learner inverts the landscape output and needs d = n, got d = {d}, n = {n}")));
    }
    let ds = oracle.sample_batch(&SamplingMode::Plain, cfg.samples, seed.derive_str("landscape"))?;
    if ds.ys.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(invalid("halfspace labels must be 0 or 1"));
    }
    let flipped = ds.complemented();
    let mut lp = LandscapeParams::for_activation(&ActivationSpec::sign(t)?, cfg.lambda_multiplier)?;
    lp.max_restarts = cfg.max_restarts;
    let rec = recover_all_one_by_one(&flipped, &lp, d, seed.derive_str("restarts"))?;
    let rows = assemble_and_invert(&rec.candidates)?;
    // orient each row so the complemented label correlates positively with it
    let coarse_v: Vec<Vec<f64>> = rows
        .into_iter()
        .map(|r| {
            let c: f64 = (0..flipped.len()).map(|j| flipped.label(j) * dot(&r, flipped.x(j))).sum();
            if c < 0.0 {
                r.iter().map(|v| -v).collect()
            } else {
                r
            }
        })
        .collect();
    let rule = LabelRule { complement: true, offset: 0.0 };
    let mut refinements = Vec::with_capacity(d);
    for (i, v) in coarse_v.iter().enumerate() {
        refinements.push(refine_estimate(oracle, v, &cfg.refine, rule, seed.derive(1000 + i as u64))?);
    }
    let neg = |v: &Vec<f64>| v.iter().map(|x| -x).collect::<Vec<f64>>();
    Ok(HalfspaceRecovery {
        directions: refinements.iter().map(|r| neg(&r.z)).collect(),
        coarse: coarse_v.iter().map(neg).collect(),
        refinements,
    })
}

/// Upper end of the interval holding `t1 <= t2` for a single halfspace at
/// angle `alpha`: the 0.6 crossing `(t + Phi^{-1}(0.6) sin(alpha)) / cos(alpha)`
/// plus the slab width.
pub fn bracket_upper(t: f64, alpha: f64, eps: f64) -> f64 {
    (t + normal_quantile(0.6).unwrap() * alpha.sin().abs()) / alpha.cos() + eps
}

/// Max matched angle in degrees between recovered and true normals.
pub fn halfspace_error_deg(rec: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    Ok(align_and_score(rec, truth)?.max_angle_deg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::gaussian_integral;
    use crate::network_model::{LabelTransform, PlantedNetwork, WeightKind};
    use crate::polynomial::SparsePolynomial;
    use crate::stats_core::{normal_ccdf, normal_pdf, random_unit};

    fn halfspace(w: Vec<f64>, t: f64) -> SampleOracle {
        let net = PlantedNetwork::new(vec![w], WeightKind::Unit, ActivationSpec::sign(t).unwrap(), SparsePolynomial::linear(1), None).unwrap();
        SampleOracle::new(net)
    }

    fn at_angle(deg: f64) -> Vec<f64> {
        let a = deg.to_radians();
        vec![a.cos(), a.sin()]
    }

    // Slab probability for a single halfspace, averaging the hyperplane
    // probability over the truncated normal law of z.x in the slab.
    fn slab_oracle(t: f64, alpha: f64, tp: f64, eps: f64) -> f64 {
        let (lo, hi) = (tp - eps, tp);
        let w = |g: f64| if g >= lo && g <= hi { 1.0 } else { 0.0 };
        let mass = gaussian_integral(w, &[lo, hi]).unwrap().0;
        let num = gaussian_integral(|g| w(g) * normal_ccdf((t - g * alpha.cos()) / alpha.sin()), &[lo, hi]).unwrap().0;
        num / mass
    }

    #[test]
    fn slab_probability_edges() {
        let o = halfspace(vec![1.0, 0.0], 2.0);
        let eps = 0.01;
        let z = vec![1.0, 0.0];
        let above = SlabQuery::new(z.clone(), 2.0 + 3.0 * eps, eps, 10_000).unwrap();
        let below = SlabQuery::new(z.clone(), 2.0 - 3.0 * eps, eps, 10_000).unwrap();
        assert_eq!(slab_sign_prob(&o, &above, LabelRule::default(), RngSeed(1)).unwrap().mean, 1.0);
        assert_eq!(slab_sign_prob(&o, &below, LabelRule::default(), RngSeed(1)).unwrap().mean, 0.0);
        assert!(SlabQuery::new(z.clone(), 2.0, 0.6, 10).is_err());
        assert!(SlabQuery::new(vec![2.0, 0.0], 2.0, 0.1, 10).is_err());
        assert!(SlabQuery::new(z, 2.0, 0.1, 0).is_err());
    }

    #[test]
    fn slab_probability_matches_closed_form() {
        let o = halfspace(vec![1.0, 0.0], 2.0);
        let alpha = 30f64.to_radians();
        let want = slab_oracle(2.0, alpha, 2.0, 0.01);
        // the zero-width limit
        assert!((want - normal_ccdf((2.0 - 2.0 * alpha.cos()) / alpha.sin())).abs() < 0.01);
        let q = SlabQuery::new(at_angle(30.0), 2.0, 0.01, 200_000).unwrap();
        let p = slab_sign_prob(&o, &q, LabelRule::default(), RngSeed(2)).unwrap();
        assert!(p.within(want, 3.0), "{p:?} vs {want}");
    }

    #[test]
    fn tan_estimates_single_halfspace() {
        let t = 2.5;
        let o = halfspace(vec![1.0, 0.0], t);
        let cfg = TanConfig { eps: 0.02, ..TanConfig::default() };
        let e = estimate_tan_alpha(&o, &[1.0, 0.0], &cfg, LabelRule::default(), None, RngSeed(3)).unwrap();
        assert!(e.s < 0.02, "{e:?}");
        for deg in [15.0f64, 45.0] {
            let a = deg.to_radians();
            let e = estimate_tan_alpha(&o, &at_angle(deg), &cfg, LabelRule::default(), None, RngSeed(4)).unwrap();
            assert!((e.s - a.tan()).abs() <= 0.15 * a.tan() + cfg.eps, "{deg}: {e:?}");
            assert!(0.0 <= e.t1 && e.t1 <= e.t2 && e.t1 <= t / a.cos() + cfg.t_tol);
            // the 0.6 crossing sits past t / cos(alpha), where the probability is 1/2
            assert!(e.t2 > t / a.cos());
            assert!(e.t2 <= bracket_upper(t, a, cfg.eps) + cfg.t_tol);
            assert!(e.warnings.is_empty());
        }
    }

    #[test]
    fn search_reports_unbracketed_levels() {
        let o = halfspace(vec![1.0, 0.0], 0.5);
        let cfg = TanConfig { eps: 0.01, budget: 5000, ..TanConfig::default() };
        // at 80 degrees the probability at t' = 0 is already about 0.3;
        // flip the labels so it is about 0.7
        let rule = LabelRule { complement: true, offset: 0.0 };
        let r = estimate_tan_alpha(&o, &at_angle(80.0), &cfg, rule, None, RngSeed(5));
        assert!(matches!(r, Err(Error::SearchFailure(_))));
    }

    #[test]
    fn probability_is_monotone_in_offset() {
        let o = halfspace(vec![1.0, 0.0], 2.0);
        let z = at_angle(30.0);
        let ps: Vec<McEstimate> = (0..12)
            .map(|k| {
                let q = SlabQuery::new(z.clone(), 0.5 * k as f64, 0.02, 20_000).unwrap();
                slab_sign_prob(&o, &q, LabelRule::default(), RngSeed(100 + k)).unwrap()
            })
            .collect();
        for w in ps.windows(2) {
            let tol = 2.0 * (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt();
            assert!(w[1].mean >= w[0].mean - tol);
        }
    }

    #[test]
    fn proposals_are_tangent_and_decrease_often() {
        let n = 5;
        let mut rng = RngSeed(6).rng();
        let w = random_unit(&mut rng, n);
        let alpha = 10f64.to_radians();
        // z at angle alpha to w
        let mut perp = random_unit(&mut rng, n);
        let c = dot(&perp, &w);
        linalg::axpy(-c, &w, &mut perp);
        let perp = linalg::normalized(&perp).unwrap();
        let z: Vec<f64> = w.iter().zip(&perp).map(|(a, b)| a * alpha.cos() + b * alpha.sin()).collect();
        let mut good = 0;
        for _ in 0..1000 {
            let (p, dz) = propose(&z, alpha, 0.1, &mut rng);
            assert!(dot(&dz, &z).abs() <= 1e-10);
            let new = dot(&p, &w).clamp(-1.0, 1.0).acos();
            if alpha - new >= 0.004 * alpha / n as f64 {
                good += 1;
            }
        }
        assert!(good >= 200, "{good}");
    }

    #[test]
    fn refine_returns_at_once_when_aligned() {
        let o = halfspace(vec![1.0, 0.0], 2.5);
        let r = refine_estimate(&o, &[1.0, 0.0], &RefineConfig::default(), LabelRule::default(), RngSeed(7)).unwrap();
        assert!(r.reached && r.proposals == 0);
        assert!(r.alpha <= 1e-2);
    }

    #[test]
    fn refine_single_halfspace() {
        let o = halfspace(vec![1.0, 0.0], 2.5);
        let r = refine_estimate(&o, &at_angle(10.0), &RefineConfig::default(), LabelRule::default(), RngSeed(8)).unwrap();
        let err = linalg::line_angle_deg(&r.z, &[1.0, 0.0]);
        assert!(err <= 1.0, "{err} after {} proposals", r.proposals);
        // each step records the point it started from
        for w in r.steps.windows(2) {
            let next = if w[0].accepted { &w[0].proposal } else { &w[0].z };
            assert_eq!(&w[1].z, next);
        }
    }

    // E[u_0(w.x) delta'(z.x)] = -(d/ds)[phi(s) Pr(w.x >= 0 | z.x = s)] at
    // s = 0, i.e. -phi(0)^2 cot(alpha); estimated by a central difference of
    // hyperplane-conditioned probabilities.
    #[test]
    fn delta_derivative_tracks_cotangent() {
        let o = halfspace(vec![1.0, 0.0], 0.0);
        let h = 0.05;
        let ratios: Vec<f64> = [30.0f64, 45.0, 60.0]
            .iter()
            .map(|&deg| {
                let z = at_angle(deg);
                let p = |s: f64, k: u64| o.mean_of(&SamplingMode::Hyperplane { z: z.clone(), s }, 400_000, RngSeed(k), |_, y| y).unwrap().mean;
                let d = (normal_pdf(h) * p(h, 10) - normal_pdf(-h) * p(-h, 11)) / (2.0 * h);
                d / (1.0 / deg.to_radians().tan())
            })
            .collect();
        let mean = ratios.iter().sum::<f64>() / 3.0;
        for r in &ratios {
            assert!((r - mean).abs() <= 0.15 * mean, "{ratios:?}");
        }
        assert!((mean - normal_pdf(0.0).powi(2)).abs() < 0.15 * mean);
    }

    #[test]
    fn complemented_labels() {
        let net = PlantedNetwork::new(
            vec![vec![-1.0, 0.0], vec![0.0, -1.0]],
            WeightKind::Unit,
            ActivationSpec::sign(1.0).unwrap(),
            SparsePolynomial::union(2).unwrap(),
            None,
        )
        .unwrap();
        let o = SampleOracle::new(net).with_transform(LabelTransform::Complement);
        let ds = o.sample_batch(&SamplingMode::Plain, 2000, RngSeed(9)).unwrap();
        let c = ds.complemented();
        for j in 0..ds.len() {
            let x = ds.x(j);
            let g = if x[0] + 1.0 > 0.0 && x[1] + 1.0 > 0.0 { 1.0 } else { 0.0 };
            assert_eq!(ds.label(j), g);
            assert_eq!(c.label(j), 1.0 - g);
        }
    }
}
