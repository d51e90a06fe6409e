//! Normal distribution functions, seeded random streams and Monte Carlo
//! estimates with standard errors.

use crate::error::{invalid, Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF. `normal_cdf(x) + normal_ccdf(x) == 1.0` holds
/// exactly in floating point: the smaller of the two is computed from
/// `erfc` and the larger as its complement.
pub fn normal_cdf(x: f64) -> f64 {
    if x < 0.0 {
        0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
    } else {
        1.0 - normal_ccdf(x)
    }
}

/// Standard normal upper tail, accurate far into the tail.
pub fn normal_ccdf(x: f64) -> f64 {
    if x >= 0.0 {
        0.5 * libm::erfc(x * std::f64::consts::FRAC_1_SQRT_2)
    } else {
        1.0 - normal_cdf(x)
    }
}

/// Inverse of `normal_cdf` on (0, 1), safeguarded Newton to about 1e-14.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("quantile needs p in (0,1), got {p}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    // Solve in the lower tail; for p > 1/2 use the upper tail directly,
    // 1 - p is exact there.
    let (q, upper) = if p < 0.5 { (p, false) } else { (1.0 - p, true) };
    let tail = |x: f64| if upper { normal_ccdf(-x) } else { normal_cdf(x) };
    let target = q.ln();
    let (mut lo, mut hi) = (-40.0_f64, 0.0_f64);
    let mut x = -(-2.0 * q.ln()).sqrt() + 0.8;
    if x >= hi {
        x = -0.5;
    }
    for _ in 0..200 {
        let c = tail(x);
        let f = c.ln() - target;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        // d/dx ln Phi(x) = phi(x) / Phi(x)
        let step = f * c / normal_pdf(x);
        let mut next = x - step;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.abs().max(1.0) {
            x = next;
            break;
        }
        x = next;
    }
    Ok(if upper { -x } else { x })
}

/// Seed for a deterministic random stream. Sub-streams are derived by
/// mixing a tag into the seed, so shard `k` of a run always sees the same
/// numbers regardless of how shards are scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn derive(self, tag: u64) -> RngSeed {
        RngSeed(splitmix64(self.0 ^ splitmix64(tag.wrapping_add(0x632b_e59b_d9b4_e019))))
    }

    pub fn derive_str(self, tag: &str) -> RngSeed {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in tag.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
        self.derive(h)
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn fill_gaussian(rng: &mut impl Rng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

/// Draw from the standard normal restricted to `[a, b]`.
pub fn truncated_normal(rng: &mut impl Rng, a: f64, b: f64) -> f64 {
    debug_assert!(a < b);
    let (pa, pb) = (normal_pdf(a), normal_pdf(b));
    let peak = if a <= 0.0 && b >= 0.0 { normal_pdf(0.0) } else { pa.max(pb) };
    let low = pa.min(pb);
    if low >= 0.25 * peak {
        // Uniform proposal, accepted with probability phi(g) / peak.
        loop {
            let g = a + (b - a) * rng.random::<f64>();
            if rng.random::<f64>() * peak <= normal_pdf(g) {
                return g;
            }
        }
    }
    if a <= 0.0 && b >= 0.0 {
        loop {
            let g = gaussian(rng);
            if g >= a && g <= b {
                return g;
            }
        }
    }
    // Inverse CDF in whichever tail the interval sits, to keep precision.
    let u: f64 = rng.random();
    let g = if a > 0.0 {
        let (ca, cb) = (normal_ccdf(a), normal_ccdf(b));
        let p = ca - u * (ca - cb);
        -normal_quantile(p.clamp(f64::MIN_POSITIVE, 1.0 - 1e-16)).unwrap_or(a)
    } else {
        let (ca, cb) = (normal_cdf(a), normal_cdf(b));
        let p = ca + u * (cb - ca);
        normal_quantile(p.clamp(f64::MIN_POSITIVE, 1.0 - 1e-16)).unwrap_or(b)
    };
    g.clamp(a, b)
}

/// Uniform random unit vector in R^n.
pub fn random_unit(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    loop {
        let mut v = vec![0.0; n];
        fill_gaussian(rng, &mut v);
        let norm = crate::linalg::norm(&v);
        if norm > 1e-12 {
            v.iter_mut().for_each(|x| *x /= norm);
            return v;
        }
    }
}

/// Mean of i.i.d. draws with its standard error `sd / sqrt(count)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub count: u64,
}

impl McEstimate {
    /// Number of standard errors separating the estimate from `value`.
    pub fn z_score(&self, value: f64) -> f64 {
        let d = (self.mean - value).abs();
        if self.stderr > 0.0 {
            d / self.stderr
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn within(&self, value: f64, n_stderr: f64) -> bool {
        self.z_score(value) <= n_stderr
    }
}

/// Streaming mean and variance (Welford), mergeable across shards.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MeanAccumulator {
    count: u64,
    mean: f64,
    m2: f64,
}

impl MeanAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &MeanAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn estimate(&self) -> McEstimate {
        let stderr = if self.count > 1 {
            (self.m2 / (self.count - 1) as f64 / self.count as f64).sqrt()
        } else {
            0.0
        };
        McEstimate { mean: self.mean, stderr, count: self.count }
    }
}

/// Monte Carlo mean of a finite sequence. Fails on an empty sequence or on
/// the first non-finite value.
pub fn mc_mean<I: IntoIterator<Item = f64>>(values: I) -> Result<McEstimate> {
    let mut acc = MeanAccumulator::new();
    for (index, v) in values.into_iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { index });
        }
        acc.push(v);
    }
    if acc.count() == 0 {
        return Err(invalid("mc_mean of an empty sequence"));
    }
    Ok(acc.estimate())
}

/// Fixed shard size for sharded Monte Carlo. Shard boundaries never depend
/// on the number of worker threads.
pub const SHARD_SIZE: usize = 1 << 15;

/// Splits `count` draws into fixed shards, runs `f(shard_seed, start, len)`
/// on each (in parallel when a pool is available) and returns the results in
/// shard order.
pub fn map_shards<T, F>(count: usize, seed: RngSeed, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(RngSeed, usize, usize) -> T + Sync + Send,
{
    let shards = count.div_ceil(SHARD_SIZE);
    (0..shards)
        .into_par_iter()
        .map(|k| {
            let start = k * SHARD_SIZE;
            let len = SHARD_SIZE.min(count - start);
            f(seed.derive(k as u64), start, len)
        })
        .collect()
}

/// Sum of per-shard accumulators merged in shard order.
pub fn merge_in_order<'a, I: IntoIterator<Item = &'a MeanAccumulator>>(parts: I) -> MeanAccumulator {
    let mut acc = MeanAccumulator::new();
    for p in parts {
        acc.merge(p);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pdf_cdf_known_values() {
        assert!((normal_pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-16);
        assert!((normal_cdf(1.96) - 0.975_002_104_851_779_6).abs() < 1e-12);
        assert!((normal_ccdf(2.0) - 0.022_750_131_948_179_2).abs() < 1e-14);
        // deep tail keeps relative accuracy
        let c = normal_ccdf(10.0);
        assert!((c / 7.619_853_024_160_593e-24 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn cdf_plus_ccdf_is_one() {
        for k in -400..=400 {
            let x = k as f64 * 0.05;
            assert_eq!(normal_cdf(x) + normal_ccdf(x), 1.0, "x={x}");
        }
    }

    #[test]
    fn quantile_spacing_between_forty_and_sixty_percent() {
        let d = normal_quantile(0.6).unwrap() - normal_quantile(0.4).unwrap();
        assert!((d - 0.506_694_206_271_599_6).abs() < 1e-10, "{d}");
    }

    #[test]
    fn quantile_rejects_endpoints() {
        assert!(matches!(normal_quantile(0.0), Err(Error::Domain(_))));
        assert!(matches!(normal_quantile(1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn mc_mean_alternating_signs() {
        let est = mc_mean((0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })).unwrap();
        assert!(est.mean.abs() < 1e-15);
        assert!((est.stderr - 0.031_638_599_858_7).abs() < 1e-9, "{}", est.stderr);
        assert_eq!(est.count, 1000);
    }

    #[test]
    fn mc_mean_errors() {
        assert!(mc_mean(std::iter::empty()).is_err());
        match mc_mean([1.0, 2.0, f64::NAN]) {
            Err(Error::NonFinite { index }) => assert_eq!(index, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn accumulator_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..500).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let mut whole = MeanAccumulator::new();
        xs.iter().for_each(|&x| whole.push(x));
        let mut a = MeanAccumulator::new();
        let mut b = MeanAccumulator::new();
        xs[..123].iter().for_each(|&x| a.push(x));
        xs[123..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        let (e1, e2) = (whole.estimate(), a.estimate());
        assert!((e1.mean - e2.mean).abs() < 1e-12);
        assert!((e1.stderr - e2.stderr).abs() < 1e-12);
    }

    #[test]
    fn derived_seeds_differ_and_repeat() {
        let s = RngSeed(7);
        assert_eq!(s.derive(1), s.derive(1));
        assert_ne!(s.derive(1), s.derive(2));
        let a: f64 = gaussian(&mut s.rng());
        let b: f64 = gaussian(&mut s.rng());
        assert_eq!(a, b);
    }

    #[test]
    fn shards_are_ordered_and_cover_count() {
        let parts = map_shards(3 * SHARD_SIZE + 5, RngSeed(1), |_, start, len| (start, len));
        assert_eq!(parts.len(), 4);
        assert_eq!(parts[3], (3 * SHARD_SIZE, 5));
    }

    #[test]
    fn truncated_normal_stays_inside_and_matches_mean() {
        let mut rng = RngSeed(3).rng();
        for &(a, b) in &[(2.48, 2.5), (-1.0, 1.0), (4.0, 9.0), (-9.0, -3.0), (0.0, 0.01)] {
            let mut acc = MeanAccumulator::new();
            for _ in 0..20000 {
                let g = truncated_normal(&mut rng, a, b);
                assert!(g >= a && g <= b);
                acc.push(g);
            }
            // E[g | a<g<b] = (phi(a) - phi(b)) / (Phi(b) - Phi(a))
            let mass = if a >= 0.0 { normal_ccdf(a) - normal_ccdf(b) } else { normal_cdf(b) - normal_cdf(a) };
            let want = (normal_pdf(a) - normal_pdf(b)) / mass;
            assert!(acc.estimate().within(want, 4.0), "[{a},{b}] {:?} vs {want}", acc.estimate());
        }
    }
}
