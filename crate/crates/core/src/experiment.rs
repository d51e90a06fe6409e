//! Config-driven experiment runs: parsing with defaults, scenario dispatch,
//! metrics reports and plot-ready curves.

use crate::activation::{ActivationKind, ActivationSpec};
use crate::delta_correlation::{direction_scan, predicted_peak, DeltaMode, DeltaParams, ScanStatistic};
use crate::error::{Error, Result};
use crate::io;
use crate::landscape::{
    align_and_score, assemble_and_invert, recover_all_one_by_one, recover_simultaneous, LandscapeParams, SimultaneousParams,
    DEFAULT_LAMBDA_MULTIPLIER,
};
use crate::linalg;
use crate::network_model::{choose_threshold, LabelTransform, PlantedNetwork, SampleOracle, SamplingMode, WeightKind};
use crate::polynomial::{Monomial, SparsePolynomial};
use crate::refine::{halfspace_error_deg, learn_halfspace_intersection, refine_estimate, HalfspaceConfig, LabelRule, RefineConfig, TanConfig};
use crate::stats_core::{normal_ccdf, normal_pdf, random_unit, MeanAccumulator, RngSeed};
use crate::structural::{
    ascent_supports, build_graph, even_coefficients, even_condition, even_recover, exp_ascent, extract_cliques, fit_even_coefficients,
    pairwise_correlations, predicted_pair_correlation, support_gap, AscentSource, EvenParams, ExpAscentParams, SupportFamily,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const VERSION: &str = concat!("threshnet ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    LandscapeObo,
    LandscapeSimul,
    Refine,
    Halfspaces,
    DeltaScan,
    Corrgraph,
    ExpAscent,
    Even,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::LandscapeObo => "landscape-obo",
            Scenario::LandscapeSimul => "landscape-simul",
            Scenario::Refine => "refine",
            Scenario::Halfspaces => "halfspaces",
            Scenario::DeltaScan => "delta-scan",
            Scenario::Corrgraph => "corrgraph",
            Scenario::ExpAscent => "exp-ascent",
            Scenario::Even => "even",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// `d` orthonormal rows in `R^n`.
    Orthonormal,
    /// Random unit rows with pairwise line angles of at least `min_angle_deg`.
    Separated,
    /// 0/1 rows from `supports`.
    Binary,
    /// Rows given in `rows`, normalized.
    Explicit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolyKind {
    Linear,
    LinearPlusPairs,
    /// `sum_{i<j} X_i X_j`.
    Pairs,
    Union,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolySpec {
    #[serde(default = "d_poly_kind")]
    pub kind: PolyKind,
    #[serde(default = "d_half")]
    pub pair_coeff: f64,
    #[serde(default)]
    pub constant: f64,
}

impl Default for PolySpec {
    fn default() -> Self {
        PolySpec { kind: d_poly_kind(), pair_coeff: d_half(), constant: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Network file; when set the remaining shape fields are ignored.
    pub file: Option<String>,
    #[serde(default = "d_layout")]
    pub layout: Layout,
    #[serde(default = "d_dim")]
    pub d: usize,
    /// 0 means `n = d`.
    #[serde(default)]
    pub n: usize,
    #[serde(default = "d_activation")]
    pub activation: ActivationSpec,
    /// When set, `t = choose_threshold(kind, d, eta, threshold_c)`.
    pub eta: Option<f64>,
    #[serde(default = "d_two")]
    pub threshold_c: f64,
    #[serde(default)]
    pub polynomial: PolySpec,
    #[serde(default)]
    pub supports: Vec<Vec<usize>>,
    #[serde(default)]
    pub rows: Vec<Vec<f64>>,
    #[serde(default = "d_min_angle")]
    pub min_angle_deg: f64,
    /// Seed of the weights; defaults to the experiment seed.
    pub seed: Option<u64>,
    #[serde(default)]
    pub noise_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeBlock {
    #[serde(default = "d_lambda_mult")]
    pub lambda_multiplier: f64,
    pub max_restarts: Option<usize>,
    #[serde(default = "d_max_iter")]
    pub max_iter: usize,
    /// Multiple of `|u4|` used for both the gradient and curvature tolerances.
    #[serde(default = "d_tol_scale")]
    pub tol_scale: f64,
}

impl Default for LandscapeBlock {
    fn default() -> Self {
        LandscapeBlock { lambda_multiplier: d_lambda_mult(), max_restarts: None, max_iter: d_max_iter(), tol_scale: d_tol_scale() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulBlock {
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_lambda_mult")]
    pub lambda_multiplier: f64,
    #[serde(default = "d_simul_iter")]
    pub max_iter: usize,
}

impl Default for SimulBlock {
    fn default() -> Self {
        SimulBlock { gamma: d_gamma(), lambda_multiplier: d_lambda_mult(), max_iter: d_simul_iter() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineBlock {
    /// Starting angle from the first planted row.
    #[serde(default = "d_start_angle")]
    pub start_angle_deg: f64,
    #[serde(default = "d_slab_eps")]
    pub slab_eps: f64,
    #[serde(default = "d_slab_budget")]
    pub slab_budget: usize,
    #[serde(default = "d_target_deg")]
    pub target_deg: f64,
    #[serde(default = "d_max_outer")]
    pub max_outer: usize,
    #[serde(default = "d_perturb")]
    pub perturb_scale: f64,
    #[serde(default = "d_c_acc")]
    pub c_acc: f64,
    #[serde(default = "d_confirm")]
    pub confirm: usize,
    /// Count `y < 1/2` as positive.
    #[serde(default)]
    pub complement: bool,
}

impl Default for RefineBlock {
    fn default() -> Self {
        RefineBlock {
            start_angle_deg: d_start_angle(),
            slab_eps: d_slab_eps(),
            slab_budget: d_slab_budget(),
            target_deg: d_target_deg(),
            max_outer: d_max_outer(),
            perturb_scale: d_perturb(),
            c_acc: d_c_acc(),
            confirm: d_confirm(),
            complement: false,
        }
    }
}

impl RefineBlock {
    pub fn to_config(&self) -> RefineConfig {
        RefineConfig {
            tan: TanConfig { eps: self.slab_eps, budget: self.slab_budget, ..TanConfig::default() },
            eps2: self.target_deg.to_radians(),
            max_outer: self.max_outer,
            perturb_scale: self.perturb_scale,
            c_acc: self.c_acc,
            confirm: self.confirm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaBlock {
    #[serde(default = "d_eps_outer")]
    pub eps_outer: f64,
    #[serde(default = "d_delta_budget")]
    pub budget: usize,
    #[serde(default = "d_delta_mode")]
    pub mode: DeltaMode,
    #[serde(default = "d_random_candidates")]
    pub random_candidates: usize,
    /// Defaults to the smallest population `E[Q_i | w_i.x = t]`.
    pub eps3: Option<f64>,
    #[serde(default = "d_stat")]
    pub statistic: ScanStatistic,
}

impl Default for DeltaBlock {
    fn default() -> Self {
        DeltaBlock {
            eps_outer: d_eps_outer(),
            budget: d_delta_budget(),
            mode: d_delta_mode(),
            random_candidates: d_random_candidates(),
            eps3: None,
            statistic: d_stat(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrgraphBlock {
    /// Defaults to the geometric mean of the smallest predicted within-support
    /// and largest predicted cross value.
    pub rho_g: Option<f64>,
}

impl Default for CorrgraphBlock {
    fn default() -> Self {
        CorrgraphBlock { rho_g: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpAscentBlock {
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    #[serde(default = "d_z_max")]
    pub z_max: f64,
    #[serde(default = "d_ascent_restarts")]
    pub restarts: usize,
    /// Use the sample-reweighting estimator on a drawn dataset.
    #[serde(default)]
    pub dataset: bool,
}

impl Default for ExpAscentBlock {
    fn default() -> Self {
        ExpAscentBlock { lambda: None, gamma: None, z_max: d_z_max(), restarts: d_ascent_restarts(), dataset: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvenBlock {
    #[serde(default = "d_grid")]
    pub grid_points: usize,
    #[serde(default = "d_radius_lo")]
    pub radius_lo: f64,
    #[serde(default = "d_radius_hi")]
    pub radius_hi: f64,
    /// Also run the sphere maximization when the pair condition holds.
    #[serde(default = "d_true")]
    pub recover: bool,
    #[serde(default = "d_even_restarts")]
    pub restarts: usize,
}

impl Default for EvenBlock {
    fn default() -> Self {
        EvenBlock { grid_points: d_grid(), radius_lo: d_radius_lo(), radius_hi: d_radius_hi(), recover: true, restarts: d_even_restarts() }
    }
}

/// Metric thresholds deciding the exit status.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptBlock {
    /// `metric <= value`.
    #[serde(default)]
    pub max: BTreeMap<String, f64>,
    /// `metric >= value`.
    #[serde(default)]
    pub min: BTreeMap<String, f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    T,
    Samples,
    D,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub metric: String,
    /// Seeds per point; empty means the experiment seed only.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_samples")]
    pub samples: usize,
    #[serde(default = "d_out")]
    pub out: String,
    pub network: NetworkSpec,
    #[serde(default)]
    pub landscape: LandscapeBlock,
    #[serde(default)]
    pub simul: SimulBlock,
    #[serde(default)]
    pub refine: RefineBlock,
    #[serde(default)]
    pub delta: DeltaBlock,
    #[serde(default)]
    pub corrgraph: CorrgraphBlock,
    #[serde(default)]
    pub exp_ascent: ExpAscentBlock,
    #[serde(default)]
    pub even: EvenBlock,
    #[serde(default)]
    pub accept: AcceptBlock,
    pub sweep: Option<SweepBlock>,
}

fn d_poly_kind() -> PolyKind {
    PolyKind::Linear
}
fn d_half() -> f64 {
    0.5
}
fn d_layout() -> Layout {
    Layout::Orthonormal
}
fn d_dim() -> usize {
    4
}
fn d_activation() -> ActivationSpec {
    ActivationSpec::sign(2.0).unwrap()
}
fn d_two() -> f64 {
    2.0
}
fn d_min_angle() -> f64 {
    45.0
}
fn d_lambda_mult() -> f64 {
    DEFAULT_LAMBDA_MULTIPLIER
}
fn d_max_iter() -> usize {
    5000
}
fn d_tol_scale() -> f64 {
    1e-3
}
fn d_gamma() -> f64 {
    0.005
}
fn d_simul_iter() -> usize {
    20_000
}
fn d_start_angle() -> f64 {
    10.0
}
fn d_slab_eps() -> f64 {
    0.002
}
fn d_slab_budget() -> usize {
    100_000
}
fn d_target_deg() -> f64 {
    0.5
}
fn d_max_outer() -> usize {
    400
}
fn d_perturb() -> f64 {
    0.1
}
fn d_c_acc() -> f64 {
    0.004
}
fn d_confirm() -> usize {
    3
}
fn d_eps_outer() -> f64 {
    0.001
}
fn d_delta_budget() -> usize {
    200_000
}
fn d_delta_mode() -> DeltaMode {
    DeltaMode::Oracle
}
fn d_random_candidates() -> usize {
    50
}
fn d_stat() -> ScanStatistic {
    ScanStatistic::C2
}
fn d_z_max() -> f64 {
    1.5
}
fn d_ascent_restarts() -> usize {
    20
}
fn d_grid() -> usize {
    50
}
fn d_radius_lo() -> f64 {
    0.6
}
fn d_radius_hi() -> f64 {
    1.4
}
fn d_true() -> bool {
    true
}
fn d_even_restarts() -> usize {
    20
}
fn d_seed() -> u64 {
    1
}
fn d_samples() -> usize {
    1_000_000
}
fn d_out() -> String {
    "runs".into()
}

/// Every key the format accepts, with optional fields filled in, so that
/// unknown keys can be told apart and matched to suggestions.
fn template() -> toml::Value {
    let mut c = ExperimentConfig {
        scenario: Scenario::LandscapeObo,
        seed: 0,
        samples: 0,
        out: String::new(),
        network: NetworkSpec {
            file: Some(String::new()),
            layout: d_layout(),
            d: 0,
            n: 0,
            activation: d_activation(),
            eta: Some(0.0),
            threshold_c: 0.0,
            polynomial: PolySpec::default(),
            supports: vec![],
            rows: vec![],
            min_angle_deg: 0.0,
            seed: Some(0),
            noise_std: 0.0,
        },
        landscape: LandscapeBlock { max_restarts: Some(0), ..Default::default() },
        simul: SimulBlock::default(),
        refine: RefineBlock::default(),
        delta: DeltaBlock { eps3: Some(0.0), ..Default::default() },
        corrgraph: CorrgraphBlock { rho_g: Some(0.0) },
        exp_ascent: ExpAscentBlock { lambda: Some(0.0), gamma: Some(0.0), ..Default::default() },
        even: EvenBlock::default(),
        accept: AcceptBlock::default(),
        sweep: Some(SweepBlock { param: SweepParam::T, values: vec![], metric: String::new(), seeds: vec![] }),
    };
    c.network.activation.rho = 1.0;
    toml::Value::try_from(&c).expect("template serializes")
}

/// Tables whose keys are free-form.
const FREE_TABLES: &[&str] = &["accept.max", "accept.min"];

fn check_keys(input: &toml::Table, tmpl: &toml::Table, path: &str) -> Result<()> {
    for (k, v) in input {
        let full = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        match tmpl.get(k) {
            None => {
                let suggestion = tmpl
                    .keys()
                    .map(|c| (strsim::damerau_levenshtein(k, c), c))
                    .filter(|(dist, _)| *dist <= 2)
                    .min()
                    .map(|(_, c)| if path.is_empty() { c.clone() } else { format!("{path}.{c}") });
                return Err(Error::UnknownKey { key: full, suggestion });
            }
            Some(toml::Value::Table(t)) if !FREE_TABLES.contains(&full.as_str()) => {
                if let toml::Value::Table(i) = v {
                    check_keys(i, t, &full)?;
                }
            }
            _ => {}
        }
    }
    Ok(())
}

fn defaulted_keys(input: &toml::Table, resolved: &toml::Table, path: &str, out: &mut Vec<String>) {
    for (k, v) in resolved {
        let full = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        match (input.get(k), v) {
            (None, toml::Value::Table(r)) if !FREE_TABLES.contains(&full.as_str()) && !r.is_empty() => {
                defaulted_keys(&toml::Table::new(), r, &full, out)
            }
            (None, _) => out.push(full),
            (Some(toml::Value::Table(i)), toml::Value::Table(r)) if !FREE_TABLES.contains(&full.as_str()) => defaulted_keys(i, r, &full, out),
            _ => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedConfig {
    pub config: ExperimentConfig,
    /// Key paths that took their default value.
    pub defaulted: Vec<String>,
}

pub fn parse_config(text: &str) -> Result<ParsedConfig> {
    let input: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    let missing: Vec<&str> = ["scenario", "network"].into_iter().filter(|k| !input.contains_key(*k)).collect();
    if !missing.is_empty() {
        return Err(Error::MissingSection(format!("{} (a config needs `scenario` and a [network] section)", missing.join(", "))));
    }
    let toml::Value::Table(tmpl) = template() else { unreachable!() };
    check_keys(&input, &tmpl, "")?;
    let config: ExperimentConfig = toml::Value::Table(input.clone()).try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    config.validate()?;
    let toml::Value::Table(resolved) = toml::Value::try_from(&config).map_err(|e| Error::Config(e.to_string()))? else { unreachable!() };
    let mut defaulted = Vec::new();
    defaulted_keys(&input, &resolved, "", &mut defaulted);
    Ok(ParsedConfig { config, defaulted })
}

impl ExperimentConfig {
    /// The resolved config as TOML, every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the resolved TOML.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let net = &self.network;
        let pos = |name: &str, v: f64| if v > 0.0 { Ok(()) } else { Err(Error::Config(format!("`{name}` must be positive"))) };
        if self.samples == 0 {
            return Err(Error::Config("`samples` must be positive".into()));
        }
        pos("refine.slab_eps", self.refine.slab_eps)?;
        pos("refine.target_deg", self.refine.target_deg)?;
        pos("delta.eps_outer", self.delta.eps_outer)?;
        pos("exp_ascent.z_max", self.exp_ascent.z_max)?;
        pos("simul.gamma", self.simul.gamma)?;
        pos("landscape.tol_scale", self.landscape.tol_scale)?;
        if let Some(e) = self.delta.eps3 {
            pos("delta.eps3", e)?;
        }
        if let Some(r) = self.corrgraph.rho_g {
            pos("corrgraph.rho_g", r)?;
        }
        if net.file.is_none() {
            match (self.scenario, net.layout) {
                (Scenario::Corrgraph | Scenario::ExpAscent, l) if l != Layout::Binary => {
                    return Err(Error::Config(format!("scenario {} needs network.layout = \"binary\"", self.scenario.name())))
                }
                (_, Layout::Binary) if net.supports.is_empty() => return Err(Error::Config("binary layout needs network.supports".into())),
                (_, Layout::Explicit) if net.rows.is_empty() => return Err(Error::Config("explicit layout needs network.rows".into())),
                _ => {}
            }
            if self.scenario == Scenario::Even && !net.activation.is_even() {
                return Err(Error::Config("scenario even needs an even activation".into()));
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::Config("sweep needs at least one value".into()));
            }
        }
        Ok(())
    }

    pub fn network_seed(&self) -> u64 {
        self.network.seed.unwrap_or(self.seed)
    }

    /// The planted network this config describes.
    pub fn build_network(&self) -> Result<PlantedNetwork> {
        let s = &self.network;
        if let Some(f) = &s.file {
            return io::load_network(Path::new(f));
        }
        let mut act = s.activation;
        if let Some(eta) = s.eta {
            act.t = choose_threshold(act.kind, s.d, eta, s.threshold_c)?;
        }
        let d = if s.layout == Layout::Binary { s.supports.len() } else if s.layout == Layout::Explicit { s.rows.len() } else { s.d };
        let poly = build_poly(&s.polynomial, d)?;
        let n = if s.n == 0 { d } else { s.n };
        let seed = RngSeed(self.network_seed());
        match s.layout {
            Layout::Orthonormal => PlantedNetwork::orthonormal(n, d, act, poly, seed),
            Layout::Separated => PlantedNetwork::new(separated_rows(n, d, s.min_angle_deg, seed)?, WeightKind::Unit, act, poly, Some(seed.0)),
            Layout::Binary => {
                let n = if s.n == 0 { s.supports.iter().flatten().max().map_or(0, |m| m + 1) } else { s.n };
                PlantedNetwork::binary_supports(n, &s.supports, act, poly, Some(seed.0))
            }
            Layout::Explicit => {
                let rows = s
                    .rows
                    .iter()
                    .map(|r| linalg::normalized(r).ok_or_else(|| Error::Config("explicit rows must be nonzero".into())))
                    .collect::<Result<Vec<_>>>()?;
                PlantedNetwork::new(rows, WeightKind::Unit, act, poly, Some(seed.0))
            }
        }
    }
}

fn build_poly(p: &PolySpec, d: usize) -> Result<SparsePolynomial> {
    let base = match p.kind {
        PolyKind::Linear => SparsePolynomial::linear(d),
        PolyKind::LinearPlusPairs => SparsePolynomial::linear_plus_pairs(d, p.pair_coeff),
        PolyKind::Pairs => {
            let mut q = SparsePolynomial::new(d, 0.0);
            for i in 0..d {
                for j in i + 1..d {
                    q.add_term(Monomial::from_set(&[i, j]), p.pair_coeff)?;
                }
            }
            q
        }
        PolyKind::Union => SparsePolynomial::union(d)?,
    };
    SparsePolynomial::from_terms(d, base.constant() + p.constant, base.terms().to_vec())
}

/// Random unit rows whose pairwise line angles are all at least `min_deg`,
/// drawn from successive sub-seeds until one qualifies.
pub fn separated_rows(n: usize, d: usize, min_deg: f64, seed: RngSeed) -> Result<Vec<Vec<f64>>> {
    for k in 0..10_000u64 {
        let mut rng = seed.derive(k).rng();
        let rows: Vec<Vec<f64>> = (0..d).map(|_| random_unit(&mut rng, n)).collect();
        if (0..d).all(|i| (i + 1..d).all(|j| linalg::line_angle_deg(&rows[i], &rows[j]) >= min_deg)) {
            return Ok(rows);
        }
    }
    Err(Error::SearchFailure(format!("no {d} rows in R^{n} with pairwise angles >= {min_deg} degrees")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub metric: String,
    pub value: f64,
    pub bound: f64,
    /// `"max"` or `"min"`.
    pub kind: String,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
    pub angles_deg: Vec<f64>,
    pub assignment: Vec<usize>,
    pub samples_used: u64,
    pub queries_used: u64,
    pub metrics: BTreeMap<String, f64>,
    /// Scenario-specific records: certificates, supports, candidate values.
    pub details: serde_json::Value,
    pub checks: Vec<Check>,
    pub passed: bool,
    pub elapsed_seconds: f64,
}

impl MetricsReport {
    /// The report without wall-clock time, for comparing runs.
    pub fn values(&self) -> MetricsReport {
        MetricsReport { elapsed_seconds: 0.0, ..self.clone() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Default)]
struct Outcome {
    angles_deg: Vec<f64>,
    assignment: Vec<usize>,
    samples: u64,
    queries: u64,
    metrics: BTreeMap<String, f64>,
    details: serde_json::Map<String, serde_json::Value>,
    artifacts: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    fn metric(&mut self, k: &str, v: f64) {
        self.metrics.insert(k.into(), v);
    }

    fn detail(&mut self, k: &str, v: impl Serialize) {
        self.details.insert(k.into(), serde_json::to_value(v).expect("serializable detail"));
    }

    fn score(&mut self, est: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<()> {
        let a = align_and_score(est, truth)?;
        self.angles_deg = a.angles_deg.clone();
        self.assignment = a.assignment.clone();
        self.metric("max_angle_deg", a.max_angle_deg);
        self.metric("mean_angle_deg", a.mean_angle_deg);
        self.metric("min_abs_cos", a.abs_cos.iter().cloned().fold(f64::INFINITY, f64::min));
        Ok(())
    }
}

fn context(s: Scenario) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", s.name())),
        other => Error::Config(format!("{} failed: {other}", s.name())),
    }
}

/// Runs the scenario and returns the report without touching the disk.
pub fn run_in_memory(cfg: &ExperimentConfig) -> Result<(MetricsReport, Vec<(String, Vec<u8>)>)> {
    cfg.validate()?;
    let start = Instant::now();
    let o = dispatch(cfg).map_err(context(cfg.scenario))?;
    let mut checks = Vec::new();
    for (kind, table) in [("max", &cfg.accept.max), ("min", &cfg.accept.min)] {
        for (m, &bound) in table {
            let value = *o
                .metrics
                .get(m)
                .ok_or_else(|| Error::Config(format!("accept.{kind}.{m}: scenario {} reports no such metric", cfg.scenario.name())))?;
            let passed = if kind == "max" { value <= bound } else { value >= bound };
            checks.push(Check { metric: m.clone(), value, bound, kind: kind.into(), passed });
        }
    }
    let report = MetricsReport {
        scenario: cfg.scenario.name().into(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        version: VERSION.into(),
        angles_deg: o.angles_deg,
        assignment: o.assignment,
        samples_used: o.samples,
        queries_used: o.queries,
        metrics: o.metrics,
        details: serde_json::Value::Object(o.details),
        passed: checks.iter().all(|c| c.passed),
        checks,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((report, o.artifacts))
}

/// Runs the scenario (and the sweep, if configured) and writes
/// `config.toml`, `report.json`, any artifacts and curve files under `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let (report, artifacts) = run_in_memory(cfg)?;
    let out = PathBuf::from(&cfg.out);
    io::write_atomic(&out.join("config.toml"), cfg.to_toml().as_bytes())?;
    io::write_atomic(&out.join("report.json"), report.to_json().as_bytes())?;
    for (name, bytes) in artifacts {
        io::write_atomic(&out.join(name), &bytes)?;
    }
    if let Some(sweep) = &cfg.sweep {
        let raw = run_sweep(cfg, sweep)?;
        io::write_atomic(&out.join("curve_raw.csv"), raw_to_csv(sweep, &raw).as_bytes())?;
        io::write_atomic(&out.join("curve.csv"), emit_curve(&param_name(sweep.param), &sweep.metric, &merge_raw(&raw)).as_bytes())?;
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub value: f64,
    pub stderr: f64,
}

/// One sweep sample: parameter value, seed, metric.
pub type RawPoint = (f64, u64, f64);

fn param_name(p: SweepParam) -> String {
    match p {
        SweepParam::T => "t",
        SweepParam::Samples => "samples",
        SweepParam::D => "d",
    }
    .into()
}

pub fn run_sweep(cfg: &ExperimentConfig, sweep: &SweepBlock) -> Result<Vec<RawPoint>> {
    let seeds = if sweep.seeds.is_empty() { vec![cfg.seed] } else { sweep.seeds.clone() };
    let mut raw = Vec::new();
    for &x in &sweep.values {
        for &s in &seeds {
            let mut c = cfg.clone();
            c.sweep = None;
            c.accept = AcceptBlock::default();
            c.seed = s;
            match sweep.param {
                SweepParam::T => {
                    c.network.activation.t = x;
                    c.network.eta = None;
                }
                SweepParam::Samples => c.samples = x as usize,
                SweepParam::D => c.network.d = x as usize,
            }
            let (r, _) = run_in_memory(&c)?;
            let v = *r.metrics.get(&sweep.metric).ok_or_else(|| Error::Config(format!("sweep metric `{}` not reported", sweep.metric)))?;
            raw.push((x, s, v));
        }
    }
    Ok(raw)
}

/// Mean and standard error across seeds at each parameter value, in
/// first-seen order.
pub fn merge_raw(raw: &[RawPoint]) -> Vec<CurvePoint> {
    let mut order: Vec<f64> = Vec::new();
    let mut acc: Vec<MeanAccumulator> = Vec::new();
    for &(x, _, v) in raw {
        let k = match order.iter().position(|&o| o == x) {
            Some(k) => k,
            None => {
                order.push(x);
                acc.push(MeanAccumulator::new());
                order.len() - 1
            }
        };
        acc[k].push(v);
    }
    order
        .into_iter()
        .zip(acc)
        .map(|(x, a)| {
            let e = a.estimate();
            CurvePoint { x, value: e.mean, stderr: if a.count() > 1 { e.stderr } else { 0.0 } }
        })
        .collect()
}

/// Comma-separated curve with a header row.
pub fn emit_curve(x_name: &str, metric: &str, points: &[CurvePoint]) -> String {
    let mut s = format!("{x_name},{metric},stderr\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.x, p.value, p.stderr));
    }
    s
}

fn raw_to_csv(sweep: &SweepBlock, raw: &[RawPoint]) -> String {
    let mut s = format!("{},seed,{}\n", param_name(sweep.param), sweep.metric);
    for (x, seed, v) in raw {
        s.push_str(&format!("{x},{seed},{v}\n"));
    }
    s
}

/// Reads raw sweep files (`x,seed,metric`) and concatenates their rows.
pub fn read_raw_csv(text: &str) -> Result<(String, String, Vec<RawPoint>)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty curve file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() != 3 || cols[1] != "seed" {
        return Err(Error::Format(format!("expected `param,seed,metric` header, got `{header}`")));
    }
    let mut raw = Vec::new();
    for (i, l) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = l.split(',').collect();
        let bad = || Error::Format(format!("line {}: `{l}`", i + 2));
        if f.len() != 3 {
            return Err(bad());
        }
        raw.push((f[0].parse().map_err(|_| bad())?, f[1].parse().map_err(|_| bad())?, f[2].parse().map_err(|_| bad())?));
    }
    Ok((cols[0].into(), cols[2].into(), raw))
}

fn dispatch(cfg: &ExperimentConfig) -> Result<Outcome> {
    let net = cfg.build_network()?;
    let seed = RngSeed(cfg.seed);
    let mut o = Outcome::default();
    o.detail("network", io::network_to_text(&net));
    match cfg.scenario {
        Scenario::LandscapeObo => landscape_obo(cfg, net, seed, &mut o)?,
        Scenario::LandscapeSimul => landscape_simul(cfg, net, seed, &mut o)?,
        Scenario::Refine => refine(cfg, net, seed, &mut o)?,
        Scenario::Halfspaces => halfspaces(cfg, net, seed, &mut o)?,
        Scenario::DeltaScan => delta_scan(cfg, net, seed, &mut o)?,
        Scenario::Corrgraph => corrgraph(cfg, net, seed, &mut o)?,
        Scenario::ExpAscent => ascent(cfg, net, seed, &mut o)?,
        Scenario::Even => even(cfg, net, seed, &mut o)?,
    }
    Ok(o)
}

fn oracle_for(cfg: &ExperimentConfig, net: PlantedNetwork) -> Result<SampleOracle> {
    SampleOracle::new(net).with_noise(cfg.network.noise_std)
}

fn landscape_obo(cfg: &ExperimentConfig, net: PlantedNetwork, seed: RngSeed, o: &mut Outcome) -> Result<()> {
    let b = &cfg.landscape;
    let mut p = LandscapeParams::for_activation(net.activation(), b.lambda_multiplier)?;
    p.max_restarts = b.max_restarts;
    p.max_iter = b.max_iter;
    p.eps_grad = b.tol_scale * p.u4.abs();
    p.tau = b.tol_scale * p.u4.abs();
    let (d, n, truth) = (net.d(), net.n(), net.rows());
    let data = oracle_for(cfg, net)?.sample_batch(&SamplingMode::Plain, cfg.samples, seed.derive_str("data"))?;
    o.samples = cfg.samples as u64;
    let rec = recover_all_one_by_one(&data, &p, d, seed.derive_str("restarts"))?;
    let est = if n == d { assemble_and_invert(&rec.candidates)? } else { rec.candidates.clone() };
    o.score(&est, &truth)?;
    o.metric("restarts", rec.restarts as f64);
    o.metric("uncertified", rec.uncertified as f64);
    o.metric("lambda", p.lambda);
    o.detail("certificates", &rec.runs);
    o.detail("estimate", &est);
    Ok(())
}

fn landscape_simul(cfg: &ExperimentConfig, net: PlantedNetwork, seed: RngSeed, o: &mut Outcome) -> Result<()> {
    let b = &cfg.simul;
    let mut p = SimultaneousParams::for_activation(net.activation(), b.gamma, b.lambda_multiplier)?;
    p.max_iter = b.max_iter;
    let (d, truth) = (net.d(), net.rows());
    let data = oracle_for(cfg, net)?.sample_batch(&SamplingMode::Plain, cfg.samples, seed.derive_str("data"))?;
    o.samples = cfg.samples as u64;
    let rec = recover_simultaneous(&data, d, &p, seed.derive_str("init"))?;
    o.score(&rec.directions, &truth)?;
    o.metric("objective", rec.value);
    o.metric("grad_norm", rec.grad_norm);
    o.metric("iterations", rec.iterations as f64);
    o.detail("estimate", &rec.directions);
    Ok(())
}

/// `w` rotated by `deg` toward a random direction orthogonal to it.
fn tilt(w: &[f64], deg: f64, seed: RngSeed) -> Result<Vec<f64>> {
    let mut rng = seed.rng();
    let mut v = random_unit(&mut rng, w.len());
    let c = linalg::dot(&v, w);
    linalg::axpy(-c, w, &mut v);
    let v = linalg::normalized(&v).ok_or_else(|| Error::NumericFailure("degenerate tilt direction".into()))?;
    let a = deg.to_radians();
    Ok(w.iter().zip(&v).map(|(x, y)| a.cos() * x + a.sin() * y).collect())
}

fn refine(cfg: &ExperimentConfig, net: PlantedNetwork, seed: RngSeed, o: &mut Outcome) -> Result<()> {
    let b = &cfg.refine;
    let w0 = net.row(0).to_vec();
    let z0 = tilt(&w0, b.start_angle_deg, seed.derive_str("start"))?;
    let oracle = oracle_for(cfg, net)?;
    let rule = LabelRule { complement: b.complement, ..LabelRule::default() };
    let r = refine_estimate(&oracle, &z0, &b.to_config(), rule, seed.derive_str("refine"))?;
    let angle = linalg::line_angle_deg(&r.z, &w0);
    o.angles_deg = vec![angle];
    o.assignment = vec![0];
    o.metric("start_angle_deg", linalg::line_angle_deg(&z0, &w0));
    o.metric("final_angle_deg", angle);
    o.metric("estimated_angle_deg", r.alpha.to_degrees());
    o.metric("proposals", r.proposals as f64);
    o.metric("accepted", r.accepted as f64);
    o.metric("reached", r.reached as u8 as f64);
    o.queries = r.steps.iter().map(|s| s.current.queries + s.candidate.queries).sum::<usize>() as u64;
    o.detail("estimate", &r.z);
    Ok(())
}

fn halfspaces(cfg: &ExperimentConfig, net: PlantedNetwork, seed: RngSeed, o: &mut Outcome) -> Result<()> {
    // the planted rows are the intersection normals; the oracle emits AND_i 1[w_i.x + t >= 0]
    let truth = net.rows();
    let d = net.d();
    let t = net.activation().t;
    let neg: Vec<Vec<f64>> = truth.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
    let union = PlantedNetwork::new(neg, WeightKind::Unit, ActivationSpec::sign(t)?, SparsePolynomial::union(d)?, net.seed())?;
    let oracle = oracle_for(cfg, union)?.with_transform(LabelTransform::Complement);
    let hc = HalfspaceConfig {
        samples: cfg.samples,
        lambda_multiplier: cfg.landscape.lambda_multiplier,
        max_restarts: cfg.landscape.max_restarts,
        refine: cfg.refine.to_config(),
    };
    let rec = learn_halfspace_intersection(&oracle, d, t, &hc, seed)?;
    let a = align_and_score(&rec.directions, &truth)?;
    o.angles_deg = a.angles_deg.clone();
    o.assignment = a.assignment.clone();
    o.samples = cfg.samples as u64;
    o.queries = rec.refinements.iter().flat_map(|r| &r.steps).map(|s| s.current.queries + s.candidate.queries).sum::<usize>() as u64;
    o.metric("max_angle_deg", halfspace_error_deg(&rec.directions, &truth)?);
    o.metric("coarse_max_angle_deg", halfspace_error_deg(&rec.coarse, &truth)?);
    o.metric("proposals", rec.refinements.iter().map(|r| r.proposals).sum::<usize>() as f64);
    o.detail("estimate", &rec.directions);
    o.detail("coarse", &rec.coarse);
    Ok(())
}

fn delta_scan(cfg: &ExperimentConfig, net: PlantedNetwork, seed: RngSeed, o: &mut Outcome) -> Result<()> {
    let b = &cfg.delta;
    if net.activation().kind != ActivationKind::SignThreshold {
        return Err(Error::Config("delta scan is set up for sign units".into()));
    }
    let (d, n, t) = (net.d(), net.n(), net.activation().t);
    let planted = net.rows();
    let peaks = (0..d).map(|i| predicted_peak(net.poly(), i, t)).collect::<Result<Vec<_>>>()?;
    let eps3 = b.eps3.unwrap_or_else(|| peaks.iter().cloned().fold(f64::INFINITY, f64::min) / normal_pdf(t));
    let mut rng = seed.derive_str("candidates").rng();
    let mut cands = planted.clone();
    cands.extend((0..b.random_candidates).map(|_| random_unit(&mut rng, n)));
    let oracle = oracle_for(cfg, net)?;
    let mut p = DeltaParams::new(t, b.eps_outer, b.budget)?;
    p.mode = b.mode;
    let scan = direction_scan(&oracle, &cands, t, &p, eps3, b.statistic, seed.derive_str("scan"))?;
    let vals: Vec<_> = scan.profile.entries.iter().map(|(_, v)| *v).collect();
    let min_planted = vals[..d].iter().map(|v| v.mean).fold(f64::INFINITY, f64::min);
    let max_random = vals[d..].iter().map(|v| v.mean).fold(0.0f64, f64::max);
    let max_z = vals[..d].iter().zip(&peaks).map(|(v, p)| v.z_score(*p).abs()).fold(0.0, f64::max);
    o.queries = (cands.len() * b.budget) as u64;
    o.metric("eps3", eps3);
    o.metric("threshold", scan.threshold);
    o.metric("accepted_count", scan.accepted.len() as f64);
    o.metric("accepted_exact", (scan.accepted == (0..d).collect::<Vec<_>>()) as u8 as f64);
    o.metric("peak_ratio", if max_random > 0.0 { min_planted / max_random } else { f64::INFINITY });
    o.metric("max_peak_z", max_z);
    o.detail("accepted", &scan.accepted);
    o.detail("values", &vals);
    o.detail("predicted_peaks", &peaks);
    Ok(())
}

/// Geometric mean of the smallest predicted within-support value and the
/// largest predicted cross value (half the former when cross values vanish).
pub fn default_graph_threshold(net: &PlantedNetwork) -> Result<f64> {
    let fam = SupportFamily::of_network(net)?;
    let n = net.n();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        for j in i + 1..n {
            let v = predicted_pair_correlation(net, i, j)?;
            match (fam.owner(i), fam.owner(j)) {
                (Some(a), Some(b)) if a == b => lo = lo.min(v),
                _ => hi = hi.max(v),
            }
        }
    }
    if !(lo > 0.0 && lo.is_finite()) {
        return Err(Error::PreconditionFailure { pair: None, detail: "no positive within-support correlation".into() });
    }
    Ok(if hi > 0.0 { (lo * hi).sqrt() } else { lo / 2.0 })
}

fn corrgraph(cfg: &ExperimentConfig, net: PlantedNetwork, seed: RngSeed, o: &mut Outcome) -> Result<()> {
    let planted = SupportFamily::of_network(&net)?;
    let rho_g = match cfg.corrgraph.rho_g {
        Some(r) => r,
        None => default_graph_threshold(&net)?,
    };
    let data = oracle_for(cfg, net)?.sample_batch(&SamplingMode::Plain, cfg.samples, seed.derive_str("data"))?;
    o.samples = cfg.samples as u64;
    let values = pairwise_correlations(&data)?;
    let graph = build_graph(&values, rho_g)?;
    let gap = support_gap(&values, &planted);
    o.metric("rho_g", rho_g);
    o.metric("edges", graph.edges.len() as f64);
    o.metric("gap_ratio", gap.ratio);
    o.metric("min_within", gap.min_within);
    o.metric("max_cross", gap.max_cross);
    o.artifacts.push(("graph.txt".into(), graph.to_adjacency_text().into_bytes()));
    match extract_cliques(&graph) {
        Ok(fam) => {
            o.metric("exact", (fam == planted) as u8 as f64);
            o.metric("found", fam.sets().len() as f64);
            o.detail("supports", fam.sets());
        }
        Err(Error::StructureViolation(m)) => {
            o.metric("exact", 0.0);
            o.metric("found", 0.0);
            o.detail("structure_violation", m);
        }
        Err(e) => return Err(e),
    }
    o.detail("planted", planted.sets());
    Ok(())
}

fn ascent(cfg: &ExperimentConfig, net: PlantedNetwork, seed: RngSeed, o: &mut Outcome) -> Result<()> {
    let b = &cfg.exp_ascent;
    let planted = SupportFamily::of_network(&net)?;
    let mut p = ExpAscentParams::for_network(&net, b.restarts)?;
    if let Some(l) = b.lambda {
        p.lambda = l;
    }
    p.gamma = b.gamma.unwrap_or(0.01 * p.lambda);
    p.z_max = b.z_max;
    let oracle = oracle_for(cfg, net)?;
    let data;
    let src = if b.dataset {
        data = oracle.sample_batch(&SamplingMode::Plain, cfg.samples, seed.derive_str("data"))?;
        AscentSource::Dataset(&data)
    } else {
        AscentSource::Oracle { oracle: &oracle, budget: cfg.samples, seed: seed.derive_str("draws") }
    };
    o.samples = cfg.samples as u64;
    let runs = exp_ascent(&src, &p, seed.derive_str("starts"))?;
    let found = SupportFamily::new(ascent_supports(&runs))?;
    let (mut min_in, mut max_out, mut spread) = (f64::INFINITY, 0.0f64, 0.0f64);
    for r in runs.iter().filter(|r| !r.support.is_empty()) {
        let inside: Vec<f64> = r.support.iter().map(|&i| r.z[i]).collect();
        min_in = min_in.min(inside.iter().cloned().fold(f64::INFINITY, f64::min));
        spread = spread.max(inside.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - inside.iter().cloned().fold(f64::INFINITY, f64::min));
        max_out = max_out.max((0..r.z.len()).filter(|i| !r.support.contains(i)).map(|i| r.z[i]).fold(0.0, f64::max));
    }
    o.metric("lambda", p.lambda);
    o.metric("gamma", p.gamma);
    o.metric("exact", (found == planted) as u8 as f64);
    o.metric("found", found.sets().len() as f64);
    o.metric("min_inside", min_in);
    o.metric("max_outside", max_out);
    o.metric("max_spread", spread);
    o.detail("supports", found.sets());
    o.detail("runs", &runs);
    Ok(())
}

fn even(cfg: &ExperimentConfig, net: PlantedNetwork, seed: RngSeed, o: &mut Outcome) -> Result<()> {
    let b = &cfg.even;
    let (d, truth, u, poly) = (net.d(), net.rows(), *net.activation(), net.poly().clone());
    let symbolic = even_coefficients(&poly, &u)?;
    let data = oracle_for(cfg, net)?.sample_batch(&SamplingMode::Plain, cfg.samples, seed.derive_str("data"))?;
    o.samples = cfg.samples as u64;
    let mut rng = seed.derive_str("grid").rng();
    let grid: Vec<Vec<f64>> = (0..b.grid_points)
        .map(|_| {
            let r = rng.random_range(b.radius_lo..=b.radius_hi);
            random_unit(&mut rng, d).into_iter().map(|v| r * v).collect()
        })
        .collect();
    let fit = fit_even_coefficients(&data, &truth, &grid)?;
    let want = symbolic.flat();
    let max_z = fit.iter().zip(&want).map(|(e, w)| e.z_score(*w).abs()).fold(0.0, f64::max);
    o.metric("max_coeff_z", max_z);
    o.metric("u4", symbolic.u4);
    o.detail("symbolic", &want);
    o.detail("fit", &fit);
    let cond = even_condition(&poly, &symbolic);
    o.metric("condition_ok", cond.is_ok() as u8 as f64);
    if let Err(pair) = cond {
        o.detail("condition_fails_for", pair);
    } else if b.recover {
        let p = EvenParams { restarts: b.restarts, ..EvenParams::default() };
        let est = even_recover(&data, &poly, &u, d, &p, seed.derive_str("restarts"))?;
        o.score(&est, &truth)?;
        o.detail("estimate", &est);
    }
    Ok(())
}

/// `Phi^c(t)`, exposed for reports on sign networks.
pub fn unit_activation_prob(t: f64) -> f64 {
    normal_ccdf(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "scenario = \"landscape-obo\"\n[network]\nd = 2\n";

    #[test]
    fn minimal_config_echoes_defaults() {
        let p = parse_config(MINIMAL).unwrap();
        assert_eq!(p.config.samples, 1_000_000);
        assert_eq!(p.config.landscape.lambda_multiplier, 2.0);
        for k in ["seed", "samples", "out", "landscape.lambda_multiplier", "network.activation.kind", "refine.slab_eps"] {
            assert!(p.defaulted.iter().any(|d| d == k), "{k} missing from {:?}", p.defaulted);
        }
        assert!(!p.defaulted.iter().any(|d| d == "network.d"));
        let text = p.config.to_toml();
        assert!(text.contains("lambda_multiplier = 2.0"));
    }

    #[test]
    fn unknown_key_gets_a_suggestion() {
        let e = parse_config("scenario = \"exp-ascent\"\n[network]\nlayout = \"binary\"\nsupports = [[0, 1]]\n[exp_ascent]\nlamda = 3.0\n").unwrap_err();
        match e {
            Error::UnknownKey { key, suggestion } => {
                assert_eq!(key, "exp_ascent.lamda");
                assert_eq!(suggestion.as_deref(), Some("exp_ascent.lambda"));
            }
            other => panic!("{other}"),
        }
        assert!(matches!(parse_config("scenario = \"even\"\nnetwrk = 1\n"), Err(Error::MissingSection(_))));
        assert!(matches!(parse_config("scenario = \"even\"\nzzz = 1\n[network]\n"), Err(Error::UnknownKey { suggestion: None, .. })));
    }

    #[test]
    fn config_round_trip_and_hash() {
        let a = parse_config(MINIMAL).unwrap().config;
        let b = parse_config(&a.to_toml()).unwrap();
        assert_eq!(a, b.config);
        assert!(b.defaulted.iter().all(|k| k.contains("file") || k.contains("seed") || k.contains("eta") || k.contains("max_restarts") || k.contains("eps3") || k.contains("rho_g") || k.contains("lambda") || k.contains("gamma") || k.contains("sweep")), "{:?}", b.defaulted);
        assert_eq!(a.hash(), b.config.hash());
        let mut c = a.clone();
        c.seed = 2;
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn scenario_requirements() {
        assert!(parse_config("scenario = \"corrgraph\"\n[network]\n").is_err());
        assert!(parse_config("scenario = \"even\"\n[network]\n").is_err());
        assert!(parse_config("scenario = \"refine\"\n[network]\n[refine]\nslab_eps = -1.0\n").is_err());
    }

    #[test]
    fn curves() {
        let one = emit_curve("t", "max_angle_deg", &[CurvePoint { x: 1.0, value: 2.0, stderr: 0.0 }]);
        assert_eq!(one, "t,max_angle_deg,stderr\n1,2,0\n");
        let raw = vec![(1.0, 1, 2.0), (1.0, 2, 4.0), (2.0, 1, 1.0), (2.0, 2, 1.0)];
        let m = merge_raw(&raw);
        assert_eq!(m.len(), 2);
        assert_eq!((m[0].value, m[1].value, m[1].stderr), (3.0, 1.0, 0.0));
        assert!((m[0].stderr - 1.0).abs() < 1e-12);
        let sweep = SweepBlock { param: SweepParam::T, values: vec![1.0, 2.0], metric: "m".into(), seeds: vec![1, 2] };
        let (x, metric, back) = read_raw_csv(&raw_to_csv(&sweep, &raw)).unwrap();
        assert_eq!((x.as_str(), metric.as_str()), ("t", "m"));
        assert_eq!(back, raw);
    }

    #[test]
    fn separated_rows_respect_the_angle() {
        let rows = separated_rows(5, 5, 45.0, RngSeed(3)).unwrap();
        for i in 0..5 {
            for j in i + 1..5 {
                assert!(linalg::line_angle_deg(&rows[i], &rows[j]) >= 45.0);
            }
        }
        assert!(separated_rows(2, 4, 80.0, RngSeed(3)).is_err());
    }

    #[test]
    fn corrgraph_run_is_deterministic() {
        let text = "scenario = \"corrgraph\"\nsamples = 200000\n[network]\nlayout = \"binary\"\nsupports = [[0, 1, 2], [3, 4, 5]]\nn = 8\nactivation = { kind = \"exp-rate\", rho = 0.25, t = 1.0 }\n[accept]\nmin = { exact = 1.0 }\n";
        let cfg = parse_config(text).unwrap().config;
        let (a, art) = run_in_memory(&cfg).unwrap();
        let (b, _) = run_in_memory(&cfg).unwrap();
        assert_eq!(a.values(), b.values());
        assert!(a.passed, "{:?}", a.metrics);
        assert_eq!(art[0].0, "graph.txt");
        let mut bad = cfg.clone();
        bad.accept.min.insert("nonsense".into(), 1.0);
        assert!(run_in_memory(&bad).is_err());
    }
}
