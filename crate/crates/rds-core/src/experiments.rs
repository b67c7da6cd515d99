//! Monte Carlo study driver: turns (population, design, estimator) triples
//! into bias/SD/RMSE tables across sample sizes.
//!
//! RNG discipline: one root seed, per-cell streams derived by hashing
//! (tag, size, replicate). No stream is shared between replicates, so
//! replicates may run in any interleaving — serial or parallel — and the
//! merged report is bit-identical.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{generalized_estimate, plim_oracle};
use crate::population::{
    build_network, generate_population, DegreeDistribution, Graph, NetworkConfig, OutcomeModel,
};
use crate::sampling::{
    draw_design_sample, misreport_degrees, CouponConfig, DesignSpec, MisreportModel, Referral,
    SeedRule, WalkConfig,
};
use crate::stats::{mean_and_pop_sd, KahanSum};
use crate::types::{FSpec, Population};

/// Schema identifier embedded in scenario config files.
pub const SCENARIO_SCHEMA: &str = "rds-scenario/v1";
/// Schema identifier embedded in structured study reports.
pub const REPORT_SCHEMA: &str = "rds-report/v1";

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic, platform-independent stream derivation.
pub(crate) fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(base);
    for &tag in tags {
        state = splitmix64(state ^ splitmix64(tag ^ 0x9E37_79B9_7F4A_7C15));
    }
    state
}

pub(crate) fn derive_rng(base: u64, tags: &[u64]) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

const TAG_POP: u64 = 1;
const TAG_SAMPLE: u64 = 2;
const TAG_GRID: u64 = 3;

/// Population generation settings for a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub size: usize,
    pub degree: DegreeDistribution,
    pub outcome: OutcomeModel,
    /// Group proportions; units get a group label iff this is set.
    #[serde(default)]
    pub groups: Option<Vec<f64>>,
}

/// Whether each replicate redraws the population (superpopulation view,
/// the default) or conditions on one fixed realization (design-based view).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PopulationMode {
    #[default]
    Redraw,
    Fixed,
}

/// Size-parametric design: the scenario's `sizes` axis supplies the nominal
/// n, and Bernoulli-type scales left unset are calibrated to hit it in
/// expectation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DesignConfig {
    BernoulliDegree {
        f: FSpec,
        #[serde(default)]
        c: Option<f64>,
    },
    RandomWalk {
        #[serde(default = "default_seed_rule")]
        seed_rule: SeedRule,
        #[serde(default = "default_true")]
        with_replacement: bool,
        #[serde(default = "default_referral")]
        referral: Referral,
        #[serde(default = "default_true")]
        allow_restart: bool,
    },
    CouponRds {
        seeds: usize,
        coupons: usize,
        max_waves: u32,
        #[serde(default)]
        with_replacement: bool,
    },
    NonIgnorableTilt {
        f: FSpec,
        #[serde(default)]
        c: Option<f64>,
        gamma: f64,
    },
}

fn default_seed_rule() -> SeedRule {
    SeedRule::Uniform
}

fn default_referral() -> Referral {
    Referral::Uniform
}

fn default_true() -> bool {
    true
}

impl DesignConfig {
    pub fn needs_network(&self) -> bool {
        matches!(
            self,
            DesignConfig::RandomWalk { .. } | DesignConfig::CouponRds { .. }
        )
    }

    /// Turns the config into a concrete design for one realized population
    /// and nominal size. For Bernoulli-type designs without an explicit c,
    /// calibrates c so the expected sample size is `nominal_n`, clamping at
    /// the largest feasible value (all inclusion probabilities <= 1) and
    /// reporting the clamp.
    pub fn materialize(&self, pop: &Population, nominal_n: usize) -> Result<(DesignSpec, bool)> {
        match self {
            DesignConfig::BernoulliDegree { f, c } => {
                let (c, clamped) = match c {
                    Some(c) => (*c, false),
                    None => {
                        let weights: Result<Vec<f64>> = pop
                            .units()
                            .iter()
                            .map(|u| f.eval(u.reported_degree()))
                            .collect();
                        calibrate_scale(&weights?, nominal_n)?
                    }
                };
                Ok((DesignSpec::BernoulliDegree { f: f.clone(), c }, clamped))
            }
            DesignConfig::NonIgnorableTilt { f, c, gamma } => {
                let (c, clamped) = match c {
                    Some(c) => (*c, false),
                    None => {
                        let weights: Result<Vec<f64>> = pop
                            .units()
                            .iter()
                            .map(|u| {
                                f.eval(u.reported_degree())
                                    .map(|v| v * (gamma * u.outcome()).exp())
                            })
                            .collect();
                        calibrate_scale(&weights?, nominal_n)?
                    }
                };
                Ok((
                    DesignSpec::NonIgnorableTilt {
                        f: f.clone(),
                        c,
                        gamma: *gamma,
                    },
                    clamped,
                ))
            }
            DesignConfig::RandomWalk {
                seed_rule,
                with_replacement,
                referral,
                allow_restart,
            } => Ok((
                DesignSpec::RandomWalk {
                    walk: WalkConfig {
                        steps: nominal_n,
                        seed_rule: *seed_rule,
                        with_replacement: *with_replacement,
                        referral: *referral,
                        allow_restart: *allow_restart,
                    },
                },
                false,
            )),
            DesignConfig::CouponRds {
                seeds,
                coupons,
                max_waves,
                with_replacement,
            } => Ok((
                DesignSpec::CouponRds {
                    coupon: CouponConfig {
                        seeds: *seeds,
                        coupons: *coupons,
                        max_waves: *max_waves,
                        target_n: nominal_n,
                        with_replacement: *with_replacement,
                    },
                },
                false,
            )),
        }
    }
}

fn calibrate_scale(weights: &[f64], nominal_n: usize) -> Result<(f64, bool)> {
    let total: f64 = weights.iter().sum();
    let max_w = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(total.is_finite() && total > 0.0 && max_w > 0.0) {
        return Err(Error::InvalidArgument(
            "cannot calibrate inclusion scale: degenerate weights".into(),
        ));
    }
    let wanted = nominal_n as f64 / total;
    let feasible = 1.0 / max_w;
    if wanted <= feasible {
        Ok((wanted, false))
    } else {
        Ok((feasible, true))
    }
}

/// A named estimator: the plug-in estimator under shape `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    pub name: String,
    pub f: FSpec,
}

impl EstimatorSpec {
    pub fn vh() -> Self {
        Self {
            name: "vh".into(),
            f: FSpec::vh(),
        }
    }

    pub fn naive() -> Self {
        Self {
            name: "naive".into(),
            f: FSpec::Constant,
        }
    }
}

/// A full generative configuration for one study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_scenario_schema")]
    pub schema: String,
    #[serde(default = "default_scenario_name")]
    pub name: String,
    pub seed: u64,
    pub replicates: usize,
    /// Nominal sample sizes, strictly ascending.
    pub sizes: Vec<usize>,
    #[serde(default)]
    pub population_mode: PopulationMode,
    pub population: PopulationSpec,
    #[serde(default)]
    pub network: Option<NetworkConfig>,
    pub design: DesignConfig,
    /// Optional reported-degree perturbation applied to every sample.
    #[serde(default)]
    pub misreport: Option<MisreportModel>,
    pub estimators: Vec<EstimatorSpec>,
}

fn default_scenario_schema() -> String {
    SCENARIO_SCHEMA.to_string()
}

fn default_scenario_name() -> String {
    "scenario".to_string()
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidScenario(msg));
        if self.schema != SCENARIO_SCHEMA {
            return fail(format!(
                "schema `{}` is not the supported `{SCENARIO_SCHEMA}`",
                self.schema
            ));
        }
        if self.replicates == 0 {
            return fail("replicates must be >= 1".into());
        }
        if self.sizes.is_empty() {
            return fail("sizes must not be empty".into());
        }
        if self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return fail(format!("sizes {:?} must be strictly ascending", self.sizes));
        }
        if self.sizes.contains(&0) {
            return fail("sizes must be >= 1".into());
        }
        if self.population.size == 0 {
            return fail("population size must be >= 1".into());
        }
        self.population.degree.validate()?;
        let k_max = self.population.degree.k_max();
        let n_groups = self.population.groups.as_ref().map_or(0, Vec::len);
        if let Some(groups) = &self.population.groups {
            if groups.is_empty() || groups.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return fail("group proportions must be nonnegative finite numbers".into());
            }
            if groups.iter().sum::<f64>() <= 0.0 {
                return fail("group proportions must have positive total mass".into());
            }
        }
        self.population.outcome.validate(k_max, n_groups)?;
        if let Some(network) = &self.network {
            network.validate()?;
            if network.bottleneck.is_some() && n_groups != 2 {
                return fail("bottleneck mode needs exactly two group proportions".into());
            }
        }
        if self.design.needs_network() && self.network.is_none() {
            return fail("random-walk and coupon designs need a [network] section".into());
        }
        match &self.design {
            DesignConfig::BernoulliDegree { f, c } => {
                self.check_design_f(f, k_max)?;
                if let Some(c) = c {
                    for k in 1..=k_max {
                        let p = c * f.eval(k)?;
                        if p > 1.0 {
                            return Err(Error::InclusionProbabilityTooLarge {
                                c: *c,
                                class: k,
                                prob: p,
                            });
                        }
                    }
                    if self.sizes.len() > 1 {
                        return fail(
                            "an explicit c fixes the expected sample size; \
                             use a single entry in sizes"
                                .into(),
                        );
                    }
                }
            }
            DesignConfig::NonIgnorableTilt { f, c, gamma } => {
                self.check_design_f(f, k_max)?;
                if !gamma.is_finite() {
                    return fail(format!("gamma must be finite, got {gamma}"));
                }
                if c.is_some() && self.sizes.len() > 1 {
                    return fail(
                        "an explicit c fixes the expected sample size; \
                         use a single entry in sizes"
                            .into(),
                    );
                }
            }
            DesignConfig::CouponRds { seeds, coupons, .. } => {
                if *seeds == 0 || *coupons == 0 {
                    return fail("coupon design needs seeds >= 1 and coupons >= 1".into());
                }
            }
            DesignConfig::RandomWalk { .. } => {}
        }
        if self.estimators.is_empty() {
            return fail("at least one estimator is required".into());
        }
        let mut names: Vec<&str> = self.estimators.iter().map(|e| e.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.estimators.len() {
            return fail("estimator names must be unique".into());
        }
        for est in &self.estimators {
            if !est.f.covers(k_max) {
                return fail(format!(
                    "estimator `{}` uses an f undefined on some degree class in 1..={k_max}",
                    est.name
                ));
            }
        }
        if let Some(m) = &self.misreport {
            m.validate()?;
        }
        Ok(())
    }

    fn check_design_f(&self, f: &FSpec, k_max: u32) -> Result<()> {
        if !f.covers(k_max) {
            return Err(Error::InvalidScenario(format!(
                "design f undefined on some degree class in 1..={k_max}"
            )));
        }
        Ok(())
    }
}

/// Everything one replicate produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    /// Per configured estimator, in scenario order.
    pub estimates: Vec<f64>,
    /// The realized population's true mean.
    pub truth: f64,
    /// Per-estimator probability limit when the design admits one.
    pub plims: Vec<Option<f64>>,
    pub realized_n: usize,
    pub truncated: bool,
    pub restarts: u32,
    pub graph_connected: Option<bool>,
    pub graph_bipartite: Option<bool>,
    pub graph_components: Option<usize>,
    /// True when scale calibration had to clamp to keep probabilities <= 1.
    pub design_clamped: bool,
}

/// Generates the scenario's population (and network, when configured) from
/// the scenario seed alone — the same realization fixed-population studies
/// condition on. Useful for inspecting oracles outside a study run.
pub fn realize_population(scenario: &Scenario) -> Result<(Population, Option<Graph>)> {
    scenario.validate()?;
    make_population(scenario, &[TAG_POP])
}

fn make_population(scenario: &Scenario, tags: &[u64]) -> Result<(Population, Option<Graph>)> {
    let mut rng = derive_rng(scenario.seed, tags);
    let pop = generate_population(
        scenario.population.size,
        &scenario.population.degree,
        &scenario.population.outcome,
        scenario.population.groups.as_deref(),
        &mut rng,
    )?;
    match &scenario.network {
        None => Ok((pop, None)),
        Some(config) => {
            let pop = pop.with_even_degree_sum()?;
            let graph = build_network(&pop, config, &mut rng)?;
            Ok((pop, Some(graph)))
        }
    }
}

fn replicate_impl(
    scenario: &Scenario,
    size: usize,
    replicate: usize,
    shared: Option<&(Population, Option<Graph>)>,
) -> Result<ReplicateOutcome> {
    let storage;
    let (pop, graph) = match shared {
        Some((pop, graph)) => (pop, graph.as_ref()),
        None => {
            storage = make_population(scenario, &[TAG_POP, size as u64, replicate as u64])?;
            (&storage.0, storage.1.as_ref())
        }
    };

    let (design, design_clamped) = scenario.design.materialize(pop, size)?;
    let mut rng = derive_rng(scenario.seed, &[TAG_SAMPLE, size as u64, replicate as u64]);
    let mut sample = draw_design_sample(pop, graph, &design, &mut rng)?;
    if let Some(model) = &scenario.misreport {
        sample = misreport_degrees(&sample, model, &mut rng)?;
    }

    let estimates = scenario
        .estimators
        .iter()
        .map(|est| generalized_estimate(&sample, &est.f).map(|r| r.value))
        .collect::<Result<Vec<f64>>>()?;

    // Misreported degrees have no exact record-level law, so no plim there.
    let plims: Vec<Option<f64>> = if scenario.misreport.is_some() {
        vec![None; scenario.estimators.len()]
    } else {
        scenario
            .estimators
            .iter()
            .map(|est| plim_oracle(pop, &design, &est.f, graph).ok())
            .collect()
    };

    Ok(ReplicateOutcome {
        estimates,
        truth: pop.true_mean(),
        plims,
        realized_n: sample.n(),
        truncated: sample.truncated(),
        restarts: sample.restarts(),
        graph_connected: graph.map(Graph::is_connected),
        graph_bipartite: graph.map(Graph::is_bipartite),
        graph_components: graph.map(Graph::component_count),
        design_clamped,
    })
}

/// Runs one replicate of the scenario at nominal size `size`.
///
/// The RNG stream is derived from (seed, size, replicate), so any replicate
/// can be reproduced in isolation. In fixed-population mode the shared
/// realization is regenerated here; `run_study` shares it instead.
pub fn run_replicate(scenario: &Scenario, size: usize, replicate: usize) -> Result<ReplicateOutcome> {
    scenario.validate()?;
    match scenario.population_mode {
        PopulationMode::Redraw => replicate_impl(scenario, size, replicate, None),
        PopulationMode::Fixed => {
            let shared = make_population(scenario, &[TAG_POP])?;
            replicate_impl(scenario, size, replicate, Some(&shared))
        }
    }
}

/// One (estimator, size) row of a study report.
///
/// `sd`, `rmse`, and `mc_se` describe the per-replicate deviations
/// (estimate - truth); `rmse^2 = bias^2 + sd^2` and `mc_se = sd/sqrt(R)`
/// hold exactly. `plim_gap_*` describe (estimate - plim) pairs when the
/// design admits an exact probability limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub estimator: String,
    pub n_nominal: usize,
    pub n_realized_mean: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub mc_se: f64,
    pub plim: Option<f64>,
    pub plim_gap_mean: Option<f64>,
    pub plim_gap_sd: Option<f64>,
}

/// Scenario-level tallies across every replicate of every size.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StudyDiagnostics {
    pub replicates_total: u64,
    pub truncated_count: u64,
    pub restarts_total: u64,
    pub design_clamped_count: u64,
    pub graphs_built: u64,
    pub connected_count: u64,
    pub bipartite_count: u64,
    pub min_components: Option<usize>,
    pub max_components: Option<usize>,
}

/// A complete study result: the fully resolved scenario echo, per-row
/// aggregates, and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub schema: String,
    pub scenario: Scenario,
    /// Mean of per-replicate population truths (constant in fixed mode).
    pub truth_mean: f64,
    pub rows: Vec<StudyRow>,
    pub diagnostics: StudyDiagnostics,
}

/// Runs the full (size x replicate) grid, in parallel over the ambient rayon
/// pool, and aggregates in a deterministic order.
///
/// Sampler truncation is recorded in the diagnostics, not treated as a
/// failure; an *empty* sample (a Bernoulli design whose scale makes drawing
/// nothing likely) does fail the study, since no estimator is defined on it.
pub fn run_study(scenario: &Scenario) -> Result<StudyReport> {
    scenario.validate()?;
    let shared = match scenario.population_mode {
        PopulationMode::Redraw => None,
        PopulationMode::Fixed => Some(Arc::new(make_population(scenario, &[TAG_POP])?)),
    };

    let cells: Vec<(usize, usize)> = scenario
        .sizes
        .iter()
        .copied()
        .flat_map(|size| (0..scenario.replicates).map(move |rep| (size, rep)))
        .collect();

    let outcomes: Result<Vec<ReplicateOutcome>> = cells
        .par_iter()
        .map(|&(size, rep)| replicate_impl(scenario, size, rep, shared.as_deref()))
        .collect();
    let outcomes = outcomes?;

    let replicates = scenario.replicates;
    let mut rows = Vec::with_capacity(scenario.sizes.len() * scenario.estimators.len());
    let mut truth_acc = KahanSum::new();
    for (size_idx, &size) in scenario.sizes.iter().enumerate() {
        let block = &outcomes[size_idx * replicates..(size_idx + 1) * replicates];
        for o in block {
            truth_acc.add(o.truth);
        }
        for (est_idx, est) in scenario.estimators.iter().enumerate() {
            let deviations: Vec<f64> = block
                .iter()
                .map(|o| o.estimates[est_idx] - o.truth)
                .collect();
            let (bias, sd) = mean_and_pop_sd(&deviations);
            let estimates: Vec<f64> = block.iter().map(|o| o.estimates[est_idx]).collect();
            let (mean_estimate, _) = mean_and_pop_sd(&estimates);
            let n_realized: Vec<f64> = block.iter().map(|o| o.realized_n as f64).collect();
            let (n_realized_mean, _) = mean_and_pop_sd(&n_realized);

            let plims: Option<Vec<f64>> = block
                .iter()
                .map(|o| o.plims[est_idx])
                .collect::<Option<Vec<f64>>>();
            let (plim, plim_gap_mean, plim_gap_sd) = match plims {
                Some(values) => {
                    let (plim_mean, _) = mean_and_pop_sd(&values);
                    let gaps: Vec<f64> = block
                        .iter()
                        .zip(&values)
                        .map(|(o, p)| o.estimates[est_idx] - p)
                        .collect();
                    let (gap_mean, gap_sd) = mean_and_pop_sd(&gaps);
                    (Some(plim_mean), Some(gap_mean), Some(gap_sd))
                }
                None => (None, None, None),
            };

            rows.push(StudyRow {
                estimator: est.name.clone(),
                n_nominal: size,
                n_realized_mean,
                mean_estimate,
                bias,
                sd,
                rmse: (bias * bias + sd * sd).sqrt(),
                mc_se: sd / (replicates as f64).sqrt(),
                plim,
                plim_gap_mean,
                plim_gap_sd,
            });
        }
    }

    let mut diagnostics = StudyDiagnostics {
        replicates_total: outcomes.len() as u64,
        ..StudyDiagnostics::default()
    };
    for o in &outcomes {
        diagnostics.truncated_count += u64::from(o.truncated);
        diagnostics.restarts_total += u64::from(o.restarts);
        diagnostics.design_clamped_count += u64::from(o.design_clamped);
        if let Some(components) = o.graph_components {
            diagnostics.graphs_built += 1;
            diagnostics.connected_count += u64::from(o.graph_connected.unwrap_or(false));
            diagnostics.bipartite_count += u64::from(o.graph_bipartite.unwrap_or(false));
            diagnostics.min_components = Some(
                diagnostics
                    .min_components
                    .map_or(components, |m| m.min(components)),
            );
            diagnostics.max_components = Some(
                diagnostics
                    .max_components
                    .map_or(components, |m| m.max(components)),
            );
        }
    }

    Ok(StudyReport {
        schema: REPORT_SCHEMA.to_string(),
        scenario: scenario.clone(),
        truth_mean: truth_acc.sum() / outcomes.len() as f64,
        rows,
        diagnostics,
    })
}

/// Cartesian expansion of a base scenario along named axes. Every cell gets
/// a deterministic derived seed unless the `seed` axis itself is overridden.
///
/// Known axes: `population.size`, `replicates`, `seed`, `sizes`,
/// `network.homophily`, `network.bottleneck.cross_fraction`, `network.simple`,
/// `design.c`, `design.gamma`, `design.seeds`, `design.coupons`,
/// `design.max_waves`, `design.with_replacement`, `design.referral`,
/// `design.seed_rule`, `misreport`.
pub fn scenario_grid(
    base: &Scenario,
    overrides: &[(String, Vec<toml::Value>)],
) -> Result<Vec<Scenario>> {
    base.validate()?;
    if overrides.is_empty() {
        return Ok(vec![base.clone()]);
    }
    for (axis, values) in overrides {
        if values.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "axis `{axis}` has no values"
            )));
        }
    }
    let mut seen: Vec<&str> = overrides.iter().map(|(a, _)| a.as_str()).collect();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != overrides.len() {
        return Err(Error::InvalidArgument("duplicate grid axis".into()));
    }

    let mut cells = vec![Vec::new()];
    for (axis, values) in overrides {
        let mut next = Vec::with_capacity(cells.len() * values.len());
        for cell in &cells {
            for value in values {
                let mut cell = cell.clone();
                cell.push((axis.as_str(), value));
                next.push(cell);
            }
        }
        cells = next;
    }

    let seed_overridden = overrides.iter().any(|(a, _)| a == "seed");
    let mut scenarios = Vec::with_capacity(cells.len());
    for (index, cell) in cells.iter().enumerate() {
        let mut scenario = base.clone();
        let mut suffix = String::new();
        for (axis, value) in cell {
            apply_axis(&mut scenario, axis, value)?;
            if !suffix.is_empty() {
                suffix.push(',');
            }
            suffix.push_str(&format!("{axis}={value}"));
        }
        if !suffix.is_empty() {
            scenario.name = format!("{}[{}]", base.name, suffix);
        }
        if !seed_overridden {
            scenario.seed = derive_seed(base.seed, &[TAG_GRID, index as u64]);
        }
        scenario.validate()?;
        scenarios.push(scenario);
    }
    Ok(scenarios)
}

fn axis_f64(axis: &str, value: &toml::Value) -> Result<f64> {
    match value {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        other => Err(Error::InvalidArgument(format!(
            "axis `{axis}` needs a number, got {other}"
        ))),
    }
}

fn axis_u64(axis: &str, value: &toml::Value) -> Result<u64> {
    match value {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        other => Err(Error::InvalidArgument(format!(
            "axis `{axis}` needs a nonnegative integer, got {other}"
        ))),
    }
}

fn axis_bool(axis: &str, value: &toml::Value) -> Result<bool> {
    match value {
        toml::Value::Boolean(b) => Ok(*b),
        other => Err(Error::InvalidArgument(format!(
            "axis `{axis}` needs a boolean, got {other}"
        ))),
    }
}

fn axis_str<'v>(axis: &str, value: &'v toml::Value) -> Result<&'v str> {
    match value {
        toml::Value::String(s) => Ok(s),
        other => Err(Error::InvalidArgument(format!(
            "axis `{axis}` needs a string, got {other}"
        ))),
    }
}

fn apply_axis(scenario: &mut Scenario, axis: &str, value: &toml::Value) -> Result<()> {
    match axis {
        "population.size" => scenario.population.size = axis_u64(axis, value)? as usize,
        "replicates" => scenario.replicates = axis_u64(axis, value)? as usize,
        "seed" => scenario.seed = axis_u64(axis, value)?,
        "sizes" => {
            let list = match value {
                toml::Value::Array(items) => items
                    .iter()
                    .map(|v| axis_u64(axis, v).map(|n| n as usize))
                    .collect::<Result<Vec<usize>>>()?,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "axis `sizes` needs an integer array, got {other}"
                    )))
                }
            };
            scenario.sizes = list;
        }
        "network.homophily" => {
            let network = scenario.network.as_mut().ok_or_else(|| {
                Error::InvalidArgument("axis `network.homophily` needs a [network] section".into())
            })?;
            network.homophily = axis_f64(axis, value)?;
        }
        "network.bottleneck.cross_fraction" => {
            let network = scenario.network.as_mut().ok_or_else(|| {
                Error::InvalidArgument(
                    "axis `network.bottleneck.cross_fraction` needs a [network] section".into(),
                )
            })?;
            network.bottleneck = Some(crate::population::Bottleneck {
                cross_fraction: axis_f64(axis, value)?,
            });
        }
        "network.simple" => {
            let network = scenario.network.as_mut().ok_or_else(|| {
                Error::InvalidArgument("axis `network.simple` needs a [network] section".into())
            })?;
            network.simple = axis_bool(axis, value)?;
        }
        "design.c" => match &mut scenario.design {
            DesignConfig::BernoulliDegree { c, .. } | DesignConfig::NonIgnorableTilt { c, .. } => {
                *c = Some(axis_f64(axis, value)?);
            }
            _ => {
                return Err(Error::InvalidArgument(
                    "axis `design.c` applies to Bernoulli-type designs only".into(),
                ))
            }
        },
        "design.gamma" => match &mut scenario.design {
            DesignConfig::NonIgnorableTilt { gamma, .. } => *gamma = axis_f64(axis, value)?,
            _ => {
                return Err(Error::InvalidArgument(
                    "axis `design.gamma` applies to the non-ignorable-tilt design only".into(),
                ))
            }
        },
        "design.seeds" => match &mut scenario.design {
            DesignConfig::CouponRds { seeds, .. } => *seeds = axis_u64(axis, value)? as usize,
            _ => {
                return Err(Error::InvalidArgument(
                    "axis `design.seeds` applies to the coupon-rds design only".into(),
                ))
            }
        },
        "design.coupons" => match &mut scenario.design {
            DesignConfig::CouponRds { coupons, .. } => *coupons = axis_u64(axis, value)? as usize,
            _ => {
                return Err(Error::InvalidArgument(
                    "axis `design.coupons` applies to the coupon-rds design only".into(),
                ))
            }
        },
        "design.max_waves" => match &mut scenario.design {
            DesignConfig::CouponRds { max_waves, .. } => *max_waves = axis_u64(axis, value)? as u32,
            _ => {
                return Err(Error::InvalidArgument(
                    "axis `design.max_waves` applies to the coupon-rds design only".into(),
                ))
            }
        },
        "design.with_replacement" => match &mut scenario.design {
            DesignConfig::RandomWalk {
                with_replacement, ..
            }
            | DesignConfig::CouponRds {
                with_replacement, ..
            } => *with_replacement = axis_bool(axis, value)?,
            _ => {
                return Err(Error::InvalidArgument(
                    "axis `design.with_replacement` applies to walk or coupon designs".into(),
                ))
            }
        },
        "design.referral" => match &mut scenario.design {
            DesignConfig::RandomWalk { referral, .. } => {
                *referral = parse_referral(axis_str(axis, value)?)?;
            }
            _ => {
                return Err(Error::InvalidArgument(
                    "axis `design.referral` applies to the random-walk design only".into(),
                ))
            }
        },
        "design.seed_rule" => match &mut scenario.design {
            DesignConfig::RandomWalk { seed_rule, .. } => {
                *seed_rule = parse_seed_rule(axis_str(axis, value)?)?;
            }
            _ => {
                return Err(Error::InvalidArgument(
                    "axis `design.seed_rule` applies to the random-walk design only".into(),
                ))
            }
        },
        "misreport" => {
            scenario.misreport = parse_misreport(axis_str(axis, value)?)?;
        }
        other => return Err(Error::UnknownAxis(other.to_string())),
    }
    Ok(())
}

fn parse_referral(s: &str) -> Result<Referral> {
    if s == "uniform" {
        return Ok(Referral::Uniform);
    }
    if s == "degree-biased" {
        return Ok(Referral::DegreeBiased);
    }
    if let Some(strength) = s.strip_prefix("group-biased:") {
        let strength: f64 = strength.parse().map_err(|_| {
            Error::InvalidArgument(format!("cannot parse group-bias strength `{strength}`"))
        })?;
        return Ok(Referral::GroupBiased { strength });
    }
    Err(Error::InvalidArgument(format!(
        "unknown referral rule `{s}`"
    )))
}

fn parse_seed_rule(s: &str) -> Result<SeedRule> {
    if s == "uniform" {
        return Ok(SeedRule::Uniform);
    }
    if s == "degree-proportional" {
        return Ok(SeedRule::DegreeProportional);
    }
    if let Some(index) = s.strip_prefix("fixed:") {
        let index: usize = index.parse().map_err(|_| {
            Error::InvalidArgument(format!("cannot parse fixed seed index `{index}`"))
        })?;
        return Ok(SeedRule::Fixed { index });
    }
    Err(Error::InvalidArgument(format!("unknown seed rule `{s}`")))
}

fn parse_misreport(s: &str) -> Result<Option<MisreportModel>> {
    if s == "none" {
        return Ok(None);
    }
    if s == "identity" {
        return Ok(Some(MisreportModel::Identity));
    }
    if let Some(m) = s.strip_prefix("jitter:") {
        let spread: u32 = m
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("cannot parse jitter spread `{m}`")))?;
        return Ok(Some(MisreportModel::Jitter { spread }));
    }
    if let Some(m) = s.strip_prefix("multiplicative:") {
        let factor: f64 = m
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("cannot parse factor `{m}`")))?;
        return Ok(Some(MisreportModel::Multiplicative { factor }));
    }
    if let Some(m) = s.strip_prefix("heaping:") {
        let multiple: u32 = m
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("cannot parse heaping multiple `{m}`")))?;
        return Ok(Some(MisreportModel::Heaping { multiple }));
    }
    Err(Error::InvalidArgument(format!(
        "unknown misreport model `{s}`"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{MeanSpec, NoiseSpec};

    fn bernoulli_scenario() -> Scenario {
        Scenario {
            schema: SCENARIO_SCHEMA.into(),
            name: "unit-test".into(),
            seed: 7,
            replicates: 50,
            sizes: vec![50, 100],
            population_mode: PopulationMode::Redraw,
            population: PopulationSpec {
                size: 1500,
                degree: DegreeDistribution::Uniform { k_max: 5 },
                outcome: OutcomeModel {
                    mean: MeanSpec::Logistic {
                        intercept: -1.0,
                        slope: 0.4,
                    },
                    noise: NoiseSpec::Bernoulli,
                    bounds: (0.0, 1.0),
                },
                groups: None,
            },
            network: None,
            design: DesignConfig::BernoulliDegree {
                f: FSpec::vh(),
                c: None,
            },
            misreport: None,
            estimators: vec![EstimatorSpec::vh(), EstimatorSpec::naive()],
        }
    }

    #[test]
    fn census_replicate_recovers_truth_for_every_estimator() {
        let mut scenario = bernoulli_scenario();
        scenario.population.degree = DegreeDistribution::Uniform { k_max: 1 };
        scenario.population.size = 40;
        scenario.sizes = vec![40];
        scenario.design = DesignConfig::BernoulliDegree {
            f: FSpec::Constant,
            c: Some(1.0),
        };
        let outcome = run_replicate(&scenario, 40, 0).unwrap();
        for value in &outcome.estimates {
            assert_eq!(*value, outcome.truth);
        }
        assert_eq!(outcome.realized_n, 40);
    }

    #[test]
    fn replicates_are_deterministic_and_bounded() {
        let scenario = bernoulli_scenario();
        let a = run_replicate(&scenario, 100, 3).unwrap();
        let b = run_replicate(&scenario, 100, 3).unwrap();
        assert_eq!(a, b);
        for value in &a.estimates {
            assert!((0.0..=1.0).contains(value));
        }
    }

    #[test]
    fn study_report_is_deterministic_and_internally_consistent() {
        let scenario = bernoulli_scenario();
        let a = run_study(&scenario).unwrap();
        let b = run_study(&scenario).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 4);
        for row in &a.rows {
            let lhs = row.rmse * row.rmse;
            let rhs = row.bias * row.bias + row.sd * row.sd;
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1e-300));
            assert!(
                (row.mc_se - row.sd / (scenario.replicates as f64).sqrt()).abs() < 1e-15
            );
            // Correctly specified VH rows should sit close to their plim.
            if row.estimator == "vh" {
                let gap = row.plim_gap_mean.unwrap().abs();
                let gap_se = row.plim_gap_sd.unwrap() / (scenario.replicates as f64).sqrt();
                assert!(gap <= 3.0 * gap_se, "gap {gap} vs se {gap_se}");
            }
        }
    }

    #[test]
    fn parallel_and_serial_studies_are_identical() {
        let scenario = bernoulli_scenario();
        let serial = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_study(&scenario).unwrap());
        let parallel = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap()
            .install(|| run_study(&scenario).unwrap());
        assert_eq!(serial, parallel);
    }

    #[test]
    fn monte_carlo_error_shrinks_with_replicates() {
        let mut small = bernoulli_scenario();
        small.sizes = vec![100];
        small.replicates = 100;
        let mut large = small.clone();
        large.replicates = 400;
        let se_small = run_study(&small).unwrap().rows[0].mc_se;
        let se_large = run_study(&large).unwrap().rows[0].mc_se;
        let factor = se_small / se_large;
        assert!(
            (1.6..=2.4).contains(&factor),
            "4x replicates should halve MC SE, got factor {factor}"
        );
    }

    #[test]
    fn fixed_mode_conditions_on_one_population() {
        let mut scenario = bernoulli_scenario();
        scenario.population_mode = PopulationMode::Fixed;
        let report = run_study(&scenario).unwrap();
        let a = run_replicate(&scenario, 100, 0).unwrap();
        let b = run_replicate(&scenario, 50, 13).unwrap();
        assert_eq!(a.truth, b.truth);
        assert!((report.truth_mean - a.truth).abs() < 1e-14);
    }

    #[test]
    fn calibration_clamps_when_target_is_infeasible(){
        let scenario = {
            let mut s = bernoulli_scenario();
            s.population.size = 100;
            s.sizes = vec![90]; // wants c ~ 0.3, but c*f(5) <= 1 caps c at 0.2
            s.replicates = 5;
            s
        };
        let report = run_study(&scenario).unwrap();
        assert_eq!(report.diagnostics.design_clamped_count, 5);
        let row = &report.rows[0];
        assert!(row.n_realized_mean < 90.0);
    }

    #[test]
    fn scenario_validation_catches_misconfigurations() {
        let mut s = bernoulli_scenario();
        s.sizes = vec![100, 50];
        assert!(s.validate().is_err());

        let mut s = bernoulli_scenario();
        s.design = DesignConfig::BernoulliDegree {
            f: FSpec::vh(),
            c: Some(0.5), // c * f(5) = 2.5 > 1
        };
        s.sizes = vec![50];
        assert!(matches!(
            s.validate(),
            Err(Error::InclusionProbabilityTooLarge { .. })
        ));

        let mut s = bernoulli_scenario();
        s.design = DesignConfig::RandomWalk {
            seed_rule: SeedRule::Uniform,
            with_replacement: true,
            referral: Referral::Uniform,
            allow_restart: true,
        };
        assert!(s.validate().is_err(), "walk without network must fail");

        let mut s = bernoulli_scenario();
        s.estimators.push(EstimatorSpec::vh());
        assert!(s.validate().is_err(), "duplicate estimator names");
    }

    #[test]
    fn grid_expansion_counts_and_seeds() {
        let base = bernoulli_scenario();
        assert_eq!(scenario_grid(&base, &[]).unwrap(), vec![base.clone()]);

        let mut tilt = base.clone();
        tilt.design = DesignConfig::NonIgnorableTilt {
            f: FSpec::vh(),
            c: None,
            gamma: 0.0,
        };
        let overrides = vec![
            (
                "design.gamma".to_string(),
                vec![toml::Value::Float(0.0), toml::Value::Float(1.0)],
            ),
            (
                "sizes".to_string(),
                vec![
                    toml::Value::Array(vec![toml::Value::Integer(50)]),
                    toml::Value::Array(vec![toml::Value::Integer(100)]),
                    toml::Value::Array(vec![toml::Value::Integer(50), toml::Value::Integer(100)]),
                ],
            ),
        ];
        let grid = scenario_grid(&tilt, &overrides).unwrap();
        assert_eq!(grid.len(), 6);
        let mut seeds: Vec<u64> = grid.iter().map(|s| s.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 6, "each cell gets its own derived seed");

        let unknown = vec![("nope".to_string(), vec![toml::Value::Integer(1)])];
        assert!(matches!(
            scenario_grid(&base, &unknown),
            Err(Error::UnknownAxis(_))
        ));
    }

    #[test]
    fn homophily_axis_changes_only_the_network() {
        let mut base = bernoulli_scenario();
        base.network = Some(NetworkConfig::default());
        let overrides = vec![(
            "network.homophily".to_string(),
            vec![toml::Value::Float(0.0), toml::Value::Float(0.9)],
        )];
        let grid = scenario_grid(&base, &overrides).unwrap();
        assert_eq!(grid.len(), 2);
        assert_eq!(grid[0].network.as_ref().unwrap().homophily, 0.0);
        assert_eq!(grid[1].network.as_ref().unwrap().homophily, 0.9);
        let mut a = grid[0].clone();
        let mut b = grid[1].clone();
        a.network = None;
        b.network = None;
        a.seed = 0;
        b.seed = 0;
        a.name.clear();
        b.name.clear();
        assert_eq!(a, b);
    }
}
