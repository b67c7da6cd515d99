//! Sampling processes: ignorable degree-driven Bernoulli designs, the
//! classical with-replacement random walk, coupon-based branching
//! recruitment, and explicit violation modes (outcome-tilted inclusion,
//! degree misreporting).
//!
//! Every sampler is a pure function of its immutable inputs and the RNG
//! stream, so replications can run concurrently with independent streams.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::Graph;
use crate::types::{FSpec, Population, Sample, SampleRecord};

/// Where a chain (or a restart) begins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SeedRule {
    Uniform,
    DegreeProportional,
    Fixed { index: usize },
}

/// How a subject picks the neighbor to refer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Referral {
    /// Uniformly at random among adjacency entries (the classical model;
    /// parallel edges count multiply).
    Uniform,
    /// Proportional to the neighbor's degree.
    DegreeBiased,
    /// With probability `strength`, restrict to same-group neighbors when
    /// any exist; otherwise uniform.
    GroupBiased { strength: f64 },
}

/// Single non-branching chain configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkConfig {
    /// Total records to collect, including the seed.
    pub steps: usize,
    pub seed_rule: SeedRule,
    pub with_replacement: bool,
    pub referral: Referral,
    /// When a without-replacement walk gets stuck, restart from a fresh
    /// unvisited seed instead of stopping short.
    pub allow_restart: bool,
}

impl WalkConfig {
    pub fn classical(steps: usize) -> Self {
        Self {
            steps,
            seed_rule: SeedRule::Uniform,
            with_replacement: true,
            referral: Referral::Uniform,
            allow_restart: true,
        }
    }
}

/// Branching coupon recruitment configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouponConfig {
    pub seeds: usize,
    pub coupons: usize,
    pub max_waves: u32,
    pub target_n: usize,
    pub with_replacement: bool,
}

/// The sampling designs the oracles and the study driver understand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DesignSpec {
    /// Unit i enters independently with probability c * f(d_i). No network
    /// involved: the design is ignorable by construction.
    BernoulliDegree { f: FSpec, c: f64 },
    RandomWalk { walk: WalkConfig },
    CouponRds { coupon: CouponConfig },
    /// Unit i enters independently with probability c * f(d_i) * exp(gamma * y_i).
    /// `gamma = 0` reduces exactly to `BernoulliDegree`.
    NonIgnorableTilt { f: FSpec, c: f64, gamma: f64 },
}

impl DesignSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            DesignSpec::BernoulliDegree { .. } => "bernoulli-degree",
            DesignSpec::RandomWalk { .. } => "random-walk",
            DesignSpec::CouponRds { .. } => "coupon-rds",
            DesignSpec::NonIgnorableTilt { .. } => "non-ignorable-tilt",
        }
    }
}

fn check_c(c: f64) -> Result<()> {
    if !c.is_finite() || c <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "scale c must be a positive finite number, got {c}"
        )));
    }
    Ok(())
}

/// Independent-inclusion sampling shared by the Bernoulli and tilted
/// designs: one uniform draw per unit, in index order, so designs that agree
/// on the probabilities agree record-for-record under a shared stream.
fn independent_inclusion_sample<R: Rng + ?Sized>(
    pop: &Population,
    probs: &[f64],
    rng: &mut R,
) -> Result<Sample> {
    let mut records = Vec::new();
    for (i, unit) in pop.units().iter().enumerate() {
        if rng.random::<f64>() < probs[i] {
            records
                .push(SampleRecord::seed(unit.outcome(), unit.reported_degree())?.with_unit_index(i));
        }
    }
    Sample::new(records, false)
}

/// Degree-driven Bernoulli design: unit i enters with probability
/// c * f(reported degree). Exercises the claim that no network need exist.
pub fn bernoulli_degree_sample<R: Rng + ?Sized>(
    pop: &Population,
    f: &FSpec,
    c: f64,
    rng: &mut R,
) -> Result<Sample> {
    check_c(c)?;
    let mut class_prob: BTreeMap<u32, f64> = BTreeMap::new();
    for unit in pop.units() {
        let k = unit.reported_degree();
        if let std::collections::btree_map::Entry::Vacant(e) = class_prob.entry(k) {
            let p = c * f.eval(k)?;
            if p > 1.0 {
                return Err(Error::InclusionProbabilityTooLarge { c, class: k, prob: p });
            }
            e.insert(p);
        }
    }
    let probs: Vec<f64> = pop
        .units()
        .iter()
        .map(|u| class_prob[&u.reported_degree()])
        .collect();
    independent_inclusion_sample(pop, &probs, rng)
}

/// Ignorability violation: inclusion tilted by exp(gamma * outcome) inside
/// each degree class. The exponential form keeps the class-conditional
/// sampled means exactly computable by enumeration.
pub fn nonignorable_sample<R: Rng + ?Sized>(
    pop: &Population,
    f: &FSpec,
    c: f64,
    gamma: f64,
    rng: &mut R,
) -> Result<Sample> {
    check_c(c)?;
    if !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "gamma must be finite, got {gamma}"
        )));
    }
    let mut probs = Vec::with_capacity(pop.len());
    for unit in pop.units() {
        let p = c * f.eval(unit.reported_degree())? * (gamma * unit.outcome()).exp();
        if p > 1.0 {
            return Err(Error::InclusionProbabilityTooLarge {
                c,
                class: unit.reported_degree(),
                prob: p,
            });
        }
        probs.push(p);
    }
    independent_inclusion_sample(pop, &probs, rng)
}

fn draw_seed<R: Rng + ?Sized>(
    rule: &SeedRule,
    graph: &Graph,
    visited: Option<&[bool]>,
    rng: &mut R,
) -> Result<Option<usize>> {
    let n = graph.node_count();
    match visited {
        None => match rule {
            SeedRule::Uniform => Ok(Some(rng.random_range(0..n))),
            SeedRule::DegreeProportional => {
                let total = graph.total_degree();
                let mut r = rng.random_range(0..total);
                for node in 0..n {
                    let d = graph.degree(node) as u64;
                    if r < d {
                        return Ok(Some(node));
                    }
                    r -= d;
                }
                unreachable!("degree-proportional draw out of range")
            }
            SeedRule::Fixed { index } => {
                if *index >= n {
                    return Err(Error::InvalidArgument(format!(
                        "fixed seed index {index} out of range for {n} nodes"
                    )));
                }
                Ok(Some(*index))
            }
        },
        Some(visited) => {
            // Restart after a stuck without-replacement walk: draw among the
            // unvisited. A fixed rule falls back to uniform, its seed being
            // necessarily visited already.
            let unvisited: Vec<usize> = (0..n).filter(|&i| !visited[i]).collect();
            if unvisited.is_empty() {
                return Ok(None);
            }
            match rule {
                SeedRule::Uniform | SeedRule::Fixed { .. } => {
                    Ok(Some(unvisited[rng.random_range(0..unvisited.len())]))
                }
                SeedRule::DegreeProportional => {
                    let total: u64 = unvisited.iter().map(|&i| graph.degree(i) as u64).sum();
                    let mut r = rng.random_range(0..total);
                    for &node in &unvisited {
                        let d = graph.degree(node) as u64;
                        if r < d {
                            return Ok(Some(node));
                        }
                        r -= d;
                    }
                    unreachable!("degree-proportional restart out of range")
                }
            }
        }
    }
}

fn choose_among<R: Rng + ?Sized>(
    candidates: &[usize],
    referral: &Referral,
    graph: &Graph,
    current_group: Option<u16>,
    pop: &Population,
    rng: &mut R,
) -> usize {
    match referral {
        Referral::Uniform => candidates[rng.random_range(0..candidates.len())],
        Referral::DegreeBiased => {
            let total: u64 = candidates.iter().map(|&j| graph.degree(j) as u64).sum();
            let mut r = rng.random_range(0..total);
            for &j in candidates {
                let d = graph.degree(j) as u64;
                if r < d {
                    return j;
                }
                r -= d;
            }
            unreachable!("degree-biased draw out of range")
        }
        Referral::GroupBiased { strength } => {
            let same: Vec<usize> = match current_group {
                Some(g) => candidates
                    .iter()
                    .copied()
                    .filter(|&j| pop.units()[j].group() == Some(g))
                    .collect(),
                None => Vec::new(),
            };
            if !same.is_empty() && rng.random::<f64>() < *strength {
                same[rng.random_range(0..same.len())]
            } else {
                candidates[rng.random_range(0..candidates.len())]
            }
        }
    }
}

/// Single non-branching chain on the realized network.
///
/// With replacement this is the classical motivating model: repeats stay in
/// the record sequence and estimators weight them as records. Without
/// replacement the walk excludes visited nodes and, when stuck, restarts at a
/// fresh unvisited seed (counted) unless `allow_restart` is off, in which
/// case it returns short with the truncation flag set.
pub fn random_walk_sample<R: Rng + ?Sized>(
    graph: &Graph,
    pop: &Population,
    config: &WalkConfig,
    rng: &mut R,
) -> Result<Sample> {
    if graph.node_count() != pop.len() {
        return Err(Error::InvalidArgument(format!(
            "graph has {} nodes but population has {} units",
            graph.node_count(),
            pop.len()
        )));
    }
    if config.steps == 0 {
        return Err(Error::InvalidArgument("walk needs steps >= 1".into()));
    }

    let n = graph.node_count();
    let mut visited = vec![false; n];
    let mut records: Vec<SampleRecord> = Vec::with_capacity(config.steps);
    let mut restarts = 0u32;
    let mut truncated = false;

    let seed = draw_seed(&config.seed_rule, graph, None, rng)?.expect("fresh seed always exists");
    push_visit(&mut records, pop, seed, None, 0)?;
    visited[seed] = true;
    let mut current = seed;

    while records.len() < config.steps {
        let entries = graph.neighbors(current);
        let chosen = if config.with_replacement {
            match config.referral {
                Referral::Uniform => Some(entries[rng.random_range(0..entries.len())]),
                _ => Some(choose_among(
                    entries,
                    &config.referral,
                    graph,
                    pop.units()[current].group(),
                    pop,
                    rng,
                )),
            }
        } else {
            let candidates: Vec<usize> = entries
                .iter()
                .copied()
                .filter(|&j| !visited[j])
                .collect();
            if candidates.is_empty() {
                None
            } else {
                Some(choose_among(
                    &candidates,
                    &config.referral,
                    graph,
                    pop.units()[current].group(),
                    pop,
                    rng,
                ))
            }
        };

        match chosen {
            Some(next) => {
                let recruiter = records.len() - 1;
                let wave = records[recruiter].wave() + 1;
                push_visit(&mut records, pop, next, Some(recruiter), wave)?;
                visited[next] = true;
                current = next;
            }
            None => {
                if !config.allow_restart {
                    truncated = true;
                    break;
                }
                match draw_seed(&config.seed_rule, graph, Some(&visited), rng)? {
                    None => {
                        truncated = true;
                        break;
                    }
                    Some(fresh) => {
                        restarts += 1;
                        push_visit(&mut records, pop, fresh, None, 0)?;
                        visited[fresh] = true;
                        current = fresh;
                    }
                }
            }
        }
    }

    let mut sample = Sample::new(records, config.with_replacement)?;
    sample.set_restarts(restarts);
    if truncated {
        sample.mark_truncated();
    }
    Ok(sample)
}

fn push_visit(
    records: &mut Vec<SampleRecord>,
    pop: &Population,
    node: usize,
    recruiter: Option<usize>,
    wave: u32,
) -> Result<()> {
    let unit = &pop.units()[node];
    let record = match recruiter {
        None => SampleRecord::seed(unit.outcome(), unit.reported_degree())?,
        Some(r) => SampleRecord::recruited(unit.outcome(), unit.reported_degree(), r, wave)?,
    };
    records.push(record.with_unit_index(node));
    Ok(())
}

/// Breadth-wise branching recruitment: each subject passes up to
/// `coupons` coupons to distinct eligible neighbors; every coupon handed to
/// an eligible neighbor is redeemed.
///
/// With `coupons = 1`, `seeds = 1`, and replacement, this reproduces
/// [`random_walk_sample`] trajectory-for-trajectory under a shared RNG
/// stream.
pub fn coupon_rds_sample<R: Rng + ?Sized>(
    graph: &Graph,
    pop: &Population,
    config: &CouponConfig,
    rng: &mut R,
) -> Result<Sample> {
    if graph.node_count() != pop.len() {
        return Err(Error::InvalidArgument(format!(
            "graph has {} nodes but population has {} units",
            graph.node_count(),
            pop.len()
        )));
    }
    let n = graph.node_count();
    if config.seeds == 0 || config.coupons == 0 || config.target_n == 0 {
        return Err(Error::InvalidArgument(
            "coupon RDS needs seeds >= 1, coupons >= 1, target_n >= 1".into(),
        ));
    }
    if config.seeds > n {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {} distinct seeds from {n} nodes",
            config.seeds
        )));
    }

    let mut sampled = vec![false; n];
    let mut records: Vec<SampleRecord> = Vec::new();
    let mut queue: VecDeque<usize> = VecDeque::new();

    let mut seeds = Vec::with_capacity(config.seeds);
    let mut guard = 0u64;
    while seeds.len() < config.seeds {
        let s = rng.random_range(0..n);
        if !seeds.contains(&s) {
            seeds.push(s);
        }
        guard += 1;
        if guard > 10_000 + 1_000 * config.seeds as u64 {
            return Err(Error::InvalidArgument(
                "seed drawing failed to find distinct nodes".into(),
            ));
        }
    }
    for s in seeds {
        if records.len() >= config.target_n {
            break;
        }
        push_visit(&mut records, pop, s, None, 0)?;
        sampled[s] = true;
        queue.push_back(records.len() - 1);
    }

    'outer: while let Some(rec_idx) = queue.pop_front() {
        if records.len() >= config.target_n {
            break;
        }
        let rec_wave = records[rec_idx].wave();
        if rec_wave >= config.max_waves {
            continue;
        }
        let node = records[rec_idx].unit_index().expect("simulated record");
        let entries = graph.neighbors(node);
        let mut eligible: Vec<usize> = if config.with_replacement {
            entries.to_vec()
        } else {
            entries.iter().copied().filter(|&j| !sampled[j]).collect()
        };
        for _ in 0..config.coupons {
            if records.len() >= config.target_n {
                break 'outer;
            }
            if eligible.is_empty() {
                break;
            }
            let chosen = eligible[rng.random_range(0..eligible.len())];
            // Coupons from one subject go to distinct people.
            eligible.retain(|&x| x != chosen);
            push_visit(&mut records, pop, chosen, Some(rec_idx), rec_wave + 1)?;
            sampled[chosen] = true;
            queue.push_back(records.len() - 1);
        }
    }

    let short = records.len() < config.target_n;
    let mut sample = Sample::new(records, config.with_replacement)?;
    if short {
        sample.mark_truncated();
    }
    Ok(sample)
}

/// Reported-degree perturbation models ("degree accurately measured" is the
/// assumption these violate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MisreportModel {
    Identity,
    /// reported = round(degree * factor), floored at 1.
    Multiplicative { factor: f64 },
    /// reported = degree + uniform integer in [-spread, spread], floored at 1.
    Jitter { spread: u32 },
    /// reported = nearest multiple of `multiple`, floored at 1.
    Heaping { multiple: u32 },
}

impl MisreportModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            MisreportModel::Multiplicative { factor } if !(factor.is_finite() && *factor > 0.0) => {
                Err(Error::InvalidArgument(format!(
                    "misreport factor must be positive and finite, got {factor}"
                )))
            }
            MisreportModel::Heaping { multiple: 0 } => Err(Error::InvalidArgument(
                "heaping multiple must be >= 1".into(),
            )),
            _ => Ok(()),
        }
    }

    fn apply<R: Rng + ?Sized>(&self, degree: u32, rng: &mut R) -> u32 {
        match self {
            MisreportModel::Identity => degree,
            MisreportModel::Multiplicative { factor } => {
                (degree as f64 * factor).round().clamp(1.0, u32::MAX as f64) as u32
            }
            MisreportModel::Jitter { spread } => {
                let s = *spread as i64;
                let delta = rng.random_range(-s..=s);
                (degree as i64 + delta).max(1) as u32
            }
            MisreportModel::Heaping { multiple } => {
                let m = *multiple;
                ((degree + m / 2) / m * m).max(1)
            }
        }
    }
}

/// Returns a copy of the sample with reported degrees perturbed per the
/// model. Outcomes, unit indices, and recruitment lineage are untouched.
pub fn misreport_degrees<R: Rng + ?Sized>(
    sample: &Sample,
    model: &MisreportModel,
    rng: &mut R,
) -> Result<Sample> {
    model.validate()?;
    let mut out = sample.clone();
    for record in out.records_mut() {
        let d = model.apply(record.reported_degree(), rng);
        record.set_reported_degree(d.max(1));
    }
    Ok(out)
}

/// Exact per-unit inclusion probabilities for designs that admit one.
///
/// For the classical random walk (with replacement, uniform referral) the
/// returned values are the stationary per-step visit probabilities
/// d_i / sum(d), which demand a connected non-bipartite graph. Coupon RDS
/// has no tractable exact law: only Monte Carlo evidence applies, and the
/// error says so.
pub fn inclusion_probabilities(
    pop: &Population,
    design: &DesignSpec,
    graph: Option<&Graph>,
) -> Result<Vec<f64>> {
    match design {
        DesignSpec::BernoulliDegree { f, c } => {
            check_c(*c)?;
            pop.units()
                .iter()
                .map(|u| {
                    let k = u.reported_degree();
                    let p = c * f.eval(k)?;
                    if p > 1.0 {
                        Err(Error::InclusionProbabilityTooLarge { c: *c, class: k, prob: p })
                    } else {
                        Ok(p)
                    }
                })
                .collect()
        }
        DesignSpec::NonIgnorableTilt { f, c, gamma } => {
            check_c(*c)?;
            pop.units()
                .iter()
                .map(|u| {
                    let k = u.reported_degree();
                    let p = c * f.eval(k)? * (gamma * u.outcome()).exp();
                    if p > 1.0 {
                        Err(Error::InclusionProbabilityTooLarge { c: *c, class: k, prob: p })
                    } else {
                        Ok(p)
                    }
                })
                .collect()
        }
        DesignSpec::RandomWalk { walk } => {
            if !walk.with_replacement || walk.referral != Referral::Uniform {
                return Err(Error::UnsupportedDesign {
                    design: "non-classical random walk",
                    quantity: "stationary visit law",
                });
            }
            let graph = graph.ok_or(Error::GraphRequired {
                design: "random-walk",
            })?;
            if !graph.is_connected() {
                return Err(Error::NoStationaryLaw {
                    reason: "disconnected",
                });
            }
            if graph.is_bipartite() {
                return Err(Error::NoStationaryLaw {
                    reason: "bipartite",
                });
            }
            let total = graph.total_degree() as f64;
            Ok((0..graph.node_count())
                .map(|i| graph.degree(i) as f64 / total)
                .collect())
        }
        DesignSpec::CouponRds { .. } => Err(Error::UnsupportedDesign {
            design: "coupon RDS",
            quantity: "inclusion law",
        }),
    }
}

/// Draws one sample from whichever process the design describes.
pub fn draw_design_sample<R: Rng + ?Sized>(
    pop: &Population,
    graph: Option<&Graph>,
    design: &DesignSpec,
    rng: &mut R,
) -> Result<Sample> {
    match design {
        DesignSpec::BernoulliDegree { f, c } => bernoulli_degree_sample(pop, f, *c, rng),
        DesignSpec::NonIgnorableTilt { f, c, gamma } => {
            nonignorable_sample(pop, f, *c, *gamma, rng)
        }
        DesignSpec::RandomWalk { walk } => {
            let graph = graph.ok_or(Error::GraphRequired {
                design: "random-walk",
            })?;
            random_walk_sample(graph, pop, walk, rng)
        }
        DesignSpec::CouponRds { coupon } => {
            let graph = graph.ok_or(Error::GraphRequired {
                design: "coupon-rds",
            })?;
            coupon_rds_sample(graph, pop, coupon, rng)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{
        build_network, generate_population, Bottleneck, DegreeDistribution, MeanSpec,
        NetworkConfig, NoiseSpec, OutcomeModel,
    };
    use crate::stats::chi_square_gof;
    use crate::types::Unit;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn small_population(k_max: u32, size: usize, seed: u64) -> Population {
        let dd = DegreeDistribution::Uniform { k_max };
        let om = OutcomeModel {
            mean: MeanSpec::Logistic {
                intercept: -1.0,
                slope: 0.4,
            },
            noise: NoiseSpec::Bernoulli,
            bounds: (0.0, 1.0),
        };
        generate_population(size, &dd, &om, None, &mut rng(seed)).unwrap()
    }

    #[test]
    fn constant_shape_with_c_one_is_a_census() {
        let pop = small_population(5, 60, 1);
        let sample = bernoulli_degree_sample(&pop, &FSpec::Constant, 1.0, &mut rng(2)).unwrap();
        assert_eq!(sample.n(), pop.len());
        let mean: f64 = sample.records().iter().map(|r| r.outcome()).sum::<f64>()
            / sample.n() as f64;
        assert_eq!(mean, pop.true_mean());
    }

    #[test]
    fn inclusion_frequencies_track_class_probabilities() {
        let pop = small_population(5, 40, 3);
        let f = FSpec::vh();
        let c = 1.0 / 5.0;
        let replicates = 10_000;
        let mut rng = rng(4);
        let mut included: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
        for _ in 0..replicates {
            let sample = bernoulli_degree_sample(&pop, &f, c, &mut rng).unwrap();
            let mut in_sample = vec![false; pop.len()];
            for r in sample.records() {
                in_sample[r.unit_index().unwrap()] = true;
            }
            for (i, unit) in pop.units().iter().enumerate() {
                let entry = included.entry(unit.reported_degree()).or_default();
                entry.1 += 1;
                if in_sample[i] {
                    entry.0 += 1;
                }
            }
        }
        for (&k, &(hits, trials)) in &included {
            let p = c * k as f64;
            let freq = hits as f64 / trials as f64;
            let se = (p * (1.0 - p) / trials as f64).sqrt();
            assert!(
                (freq - p).abs() <= 3.0 * se,
                "class {k}: freq {freq} vs p {p} (se {se})"
            );
        }
    }

    #[test]
    fn expected_sample_size_matches_linearity() {
        let pop = small_population(5, 200, 5);
        let f = FSpec::vh();
        let total_f: f64 = pop
            .units()
            .iter()
            .map(|u| u.reported_degree() as f64)
            .sum();
        let target = 50.0;
        let c = target / total_f;
        let replicates = 4000;
        let mut rng = rng(6);
        let mut total_n = 0usize;
        let mut var_sum = 0.0;
        for u in pop.units() {
            let p = c * u.reported_degree() as f64;
            var_sum += p * (1.0 - p);
        }
        for _ in 0..replicates {
            total_n += bernoulli_degree_sample(&pop, &f, c, &mut rng).unwrap().n();
        }
        let mean_n = total_n as f64 / replicates as f64;
        let se = (var_sum / replicates as f64).sqrt();
        assert!(
            (mean_n - target).abs() <= 3.0 * se,
            "mean n {mean_n} vs {target} (se {se})"
        );
    }

    #[test]
    fn oversized_probability_names_class_and_scale() {
        let pop = small_population(5, 30, 7);
        match bernoulli_degree_sample(&pop, &FSpec::vh(), 0.5, &mut rng(8)) {
            Err(Error::InclusionProbabilityTooLarge { c, class, prob }) => {
                assert_eq!(c, 0.5);
                assert!(class >= 3);
                assert!(prob > 1.0);
            }
            other => panic!("expected probability error, got {other:?}"),
        }
    }

    fn two_node_path() -> (Population, Graph) {
        let units = vec![Unit::new(0.0, 1).unwrap(), Unit::new(1.0, 1).unwrap()];
        let pop = Population::new(units, 1, (0.0, 1.0)).unwrap();
        let graph = build_network(&pop, &NetworkConfig::default(), &mut rng(1)).unwrap();
        (pop, graph)
    }

    #[test]
    fn walk_on_single_edge_alternates() {
        let (pop, graph) = two_node_path();
        let config = WalkConfig {
            steps: 5,
            seed_rule: SeedRule::Fixed { index: 0 },
            ..WalkConfig::classical(5)
        };
        let sample = random_walk_sample(&graph, &pop, &config, &mut rng(3)).unwrap();
        let visits: Vec<usize> = sample
            .records()
            .iter()
            .map(|r| r.unit_index().unwrap())
            .collect();
        assert_eq!(visits, vec![0, 1, 0, 1, 0]);
        let waves: Vec<u32> = sample.records().iter().map(|r| r.wave()).collect();
        assert_eq!(waves, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn walk_stays_inside_seed_component() {
        let units = (0..6).map(|_| Unit::new(0.0, 1).unwrap()).collect();
        let pop = Population::new(units, 1, (0.0, 1.0)).unwrap();
        let graph = build_network(&pop, &NetworkConfig::default(), &mut rng(5)).unwrap();
        assert!(graph.component_count() >= 2);
        let labels = graph.component_labels();
        let config = WalkConfig {
            steps: 20,
            seed_rule: SeedRule::Fixed { index: 0 },
            ..WalkConfig::classical(20)
        };
        let sample = random_walk_sample(&graph, &pop, &config, &mut rng(6)).unwrap();
        assert!(sample
            .records()
            .iter()
            .all(|r| labels[r.unit_index().unwrap()] == labels[0]));
    }

    #[test]
    fn without_replacement_walk_restarts_and_truncates() {
        let (pop, graph) = two_node_path();
        // Two nodes: a without-replacement walk is stuck after two visits.
        let config = WalkConfig {
            steps: 2,
            seed_rule: SeedRule::Uniform,
            with_replacement: false,
            referral: Referral::Uniform,
            allow_restart: false,
        };
        let sample = random_walk_sample(&graph, &pop, &config, &mut rng(7)).unwrap();
        assert_eq!(sample.n(), 2);
        assert!(!sample.truncated());

        let config = WalkConfig {
            steps: 4,
            allow_restart: false,
            ..config
        };
        let sample = random_walk_sample(&graph, &pop, &config, &mut rng(8)).unwrap();
        assert_eq!(sample.n(), 2);
        assert!(sample.truncated());

        // Four disconnected degree-1 pairs: restarts hop components.
        let units = (0..8).map(|_| Unit::new(0.0, 1).unwrap()).collect();
        let pop8 = Population::new(units, 1, (0.0, 1.0)).unwrap();
        let graph8 = build_network(&pop8, &NetworkConfig::default(), &mut rng(9)).unwrap();
        let config = WalkConfig {
            steps: 8,
            seed_rule: SeedRule::Uniform,
            with_replacement: false,
            referral: Referral::Uniform,
            allow_restart: true,
        };
        let sample = random_walk_sample(&graph8, &pop8, &config, &mut rng(10)).unwrap();
        assert_eq!(sample.n(), 8);
        assert_eq!(sample.restarts(), 3);
        assert!(!sample.truncated());
        // Exhaustion after every node is visited truncates.
        let config = WalkConfig { steps: 9, ..config };
        let sample = random_walk_sample(&graph8, &pop8, &config, &mut rng(11)).unwrap();
        assert_eq!(sample.n(), 8);
        assert!(sample.truncated());
    }

    #[test]
    fn walk_visit_frequencies_are_degree_proportional() {
        // Connected non-bipartite graph; visits thinned to break serial
        // dependence, then chi-squared against d_i / sum(d).
        let dd = DegreeDistribution::Table {
            weights: vec![0.0, 0.0, 1.0, 1.0, 1.0, 1.0],
        };
        let om = OutcomeModel {
            mean: MeanSpec::Table {
                means: vec![0.5; 6],
            },
            noise: NoiseSpec::Bernoulli,
            bounds: (0.0, 1.0),
        };
        let pop = generate_population(500, &dd, &om, None, &mut rng(20))
            .unwrap()
            .with_even_degree_sum()
            .unwrap();
        let graph = build_network(&pop, &NetworkConfig::default(), &mut rng(21)).unwrap();
        assert!(graph.is_connected(), "seed produced a disconnected graph");
        assert!(!graph.is_bipartite());

        let config = WalkConfig {
            steps: 100_000,
            seed_rule: SeedRule::DegreeProportional,
            ..WalkConfig::classical(100_000)
        };
        let sample = random_walk_sample(&graph, &pop, &config, &mut rng(22)).unwrap();

        let stride = 25;
        let mut counts = vec![0u64; pop.len()];
        for record in sample.records().iter().step_by(stride) {
            counts[record.unit_index().unwrap()] += 1;
        }
        let total_degree = graph.total_degree() as f64;
        let probs: Vec<f64> = (0..pop.len())
            .map(|i| graph.degree(i) as f64 / total_degree)
            .collect();
        let gof = chi_square_gof(&counts, &probs).unwrap();
        assert!(
            gof.p_value >= 0.01,
            "chi-square rejected: stat {} df {} p {}",
            gof.statistic,
            gof.df,
            gof.p_value
        );
    }

    #[test]
    fn coupon_chain_reduces_to_walk_under_shared_stream() {
        let pop = small_population(4, 120, 30);
        let pop = pop.with_even_degree_sum().unwrap();
        let graph = build_network(&pop, &NetworkConfig::default(), &mut rng(31)).unwrap();
        let walk_config = WalkConfig::classical(40);
        let coupon_config = CouponConfig {
            seeds: 1,
            coupons: 1,
            max_waves: u32::MAX,
            target_n: 40,
            with_replacement: true,
        };
        let walk = random_walk_sample(&graph, &pop, &walk_config, &mut rng(32)).unwrap();
        let coupon = coupon_rds_sample(&graph, &pop, &coupon_config, &mut rng(32)).unwrap();
        assert_eq!(walk.records(), coupon.records());
    }

    #[test]
    fn star_center_hands_three_distinct_coupons() {
        let mut units = vec![Unit::new(1.0, 5).unwrap()];
        units.extend((0..5).map(|_| Unit::new(0.0, 1).unwrap()));
        let pop = Population::new(units, 5, (0.0, 1.0)).unwrap();
        // Hand-built star with the center at node 0.
        let mut adjacency = vec![vec![1, 2, 3, 4, 5]];
        adjacency.extend((0..5).map(|_| vec![0]));
        let graph = Graph::from_adjacency(adjacency).unwrap();
        assert_eq!(graph.degree(0), 5);
        let config = CouponConfig {
            seeds: 1,
            coupons: 3,
            max_waves: 1,
            target_n: 4,
            with_replacement: false,
        };
        // Draw until the seed lands on the center.
        let mut r = rng(34);
        let sample = loop {
            let s = coupon_rds_sample(&graph, &pop, &config, &mut r).unwrap();
            if s.records()[0].unit_index() == Some(0) {
                break s;
            }
        };
        let wave1: Vec<usize> = sample
            .records()
            .iter()
            .filter(|r| r.wave() == 1)
            .map(|r| r.unit_index().unwrap())
            .collect();
        assert_eq!(wave1.len(), 3);
        let mut dedup = wave1.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), 3, "coupons went to distinct leaves");
    }

    #[test]
    fn bottleneck_skews_recruitment_toward_seed_community() {
        let mut units = Vec::new();
        for g in 0..2u16 {
            for _ in 0..50 {
                units.push(Unit::new(g as f64, 4).unwrap().with_group(g));
            }
        }
        let pop = Population::new(units, 4, (0.0, 1.0)).unwrap();
        let net = NetworkConfig {
            bottleneck: Some(Bottleneck {
                cross_fraction: 0.02,
            }),
            ..NetworkConfig::default()
        };
        let graph = build_network(&pop, &net, &mut rng(35)).unwrap();
        let config = CouponConfig {
            seeds: 1,
            coupons: 3,
            max_waves: 3,
            target_n: 30,
            with_replacement: false,
        };
        let mut r = rng(36);
        let mut seed_comm_share = 0.0;
        let reps = 200;
        for _ in 0..reps {
            let sample = coupon_rds_sample(&graph, &pop, &config, &mut r).unwrap();
            let seed_group = pop.units()[sample.records()[0].unit_index().unwrap()].group();
            let in_seed = sample
                .records()
                .iter()
                .filter(|rec| pop.units()[rec.unit_index().unwrap()].group() == seed_group)
                .count();
            seed_comm_share += in_seed as f64 / sample.n() as f64;
        }
        seed_comm_share /= reps as f64;
        // Population share of the seed community is 0.5; the bottleneck
        // should trap most records on the seed's side.
        assert!(
            seed_comm_share > 0.8,
            "expected strong skew, got {seed_comm_share}"
        );
    }

    #[test]
    fn zero_tilt_is_bitwise_bernoulli() {
        let pop = small_population(5, 80, 40);
        let f = FSpec::vh();
        let c = 0.05;
        let a = bernoulli_degree_sample(&pop, &f, c, &mut rng(41)).unwrap();
        let b = nonignorable_sample(&pop, &f, c, 0.0, &mut rng(41)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn extreme_tilt_selects_only_positive_outcomes() {
        let pop = small_population(5, 400, 42);
        let f = FSpec::Constant;
        let gamma = 20.0f64;
        let c = (-gamma).exp(); // c * e^{gamma * 1} = 1
        let sample = nonignorable_sample(&pop, &f, c, gamma, &mut rng(43)).unwrap();
        assert!(sample.n() > 0);
        assert!(sample.records().iter().all(|r| r.outcome() == 1.0));
    }

    #[test]
    fn tilted_class_means_exceed_population_class_means() {
        let pop = small_population(3, 600, 44);
        let f = FSpec::Constant;
        let gamma = 1.2f64;
        let c = 0.2 * (-gamma).exp();
        // Exact prediction by enumeration over realized units.
        let mut exact: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
        for u in pop.units() {
            let e = exact.entry(u.reported_degree()).or_default();
            let w = (gamma * u.outcome()).exp();
            e.0 += u.outcome() * w;
            e.1 += w;
        }
        let mut sums: BTreeMap<u32, (f64, u64)> = BTreeMap::new();
        let mut r = rng(45);
        for _ in 0..2000 {
            let sample = nonignorable_sample(&pop, &f, c, gamma, &mut r).unwrap();
            for rec in sample.records() {
                let e = sums.entry(rec.reported_degree()).or_default();
                e.0 += rec.outcome();
                e.1 += 1;
            }
        }
        let class_means = pop.conditional_means();
        for (k, (ysum, count)) in sums {
            let mc = ysum / count as f64;
            let pred = exact[&k].0 / exact[&k].1;
            let pop_mean = class_means[&k].0;
            assert!(mc > pop_mean, "class {k}: tilted mean {mc} <= {pop_mean}");
            let se = (pred * (1.0 - pred) / count as f64).sqrt();
            assert!(
                (mc - pred).abs() <= 4.0 * se,
                "class {k}: mc {mc} vs exact {pred} (se {se})"
            );
        }
    }

    #[test]
    fn misreport_models_transform_degrees() {
        let records = vec![
            SampleRecord::seed(0.0, 3).unwrap(),
            SampleRecord::seed(1.0, 7).unwrap(),
            SampleRecord::seed(0.0, 12).unwrap(),
        ];
        let sample = Sample::new(records, false).unwrap();

        let same = misreport_degrees(&sample, &MisreportModel::Identity, &mut rng(50)).unwrap();
        assert_eq!(same, sample);

        let heaped =
            misreport_degrees(&sample, &MisreportModel::Heaping { multiple: 5 }, &mut rng(51))
                .unwrap();
        let degrees: Vec<u32> = heaped
            .records()
            .iter()
            .map(|r| r.reported_degree())
            .collect();
        assert_eq!(degrees, vec![5, 5, 10]);

        let ones = Sample::new(
            vec![
                SampleRecord::seed(0.0, 1).unwrap(),
                SampleRecord::seed(0.0, 1).unwrap(),
                SampleRecord::seed(0.0, 1).unwrap(),
            ],
            false,
        )
        .unwrap();
        let jittered =
            misreport_degrees(&ones, &MisreportModel::Jitter { spread: 1 }, &mut rng(52)).unwrap();
        assert!(jittered
            .records()
            .iter()
            .all(|r| (1..=2).contains(&r.reported_degree())));

        let scaled = misreport_degrees(
            &sample,
            &MisreportModel::Multiplicative { factor: 0.5 },
            &mut rng(53),
        )
        .unwrap();
        let degrees: Vec<u32> = scaled
            .records()
            .iter()
            .map(|r| r.reported_degree())
            .collect();
        assert_eq!(degrees, vec![2, 4, 6]);
    }

    #[test]
    fn inclusion_probabilities_for_each_design() {
        // Bernoulli: direct product.
        let unit = Unit::new(0.5, 7).unwrap();
        let pop = Population::new(vec![unit], 7, (0.0, 1.0)).unwrap();
        let design = DesignSpec::BernoulliDegree {
            f: FSpec::vh(),
            c: 0.01,
        };
        let pi = inclusion_probabilities(&pop, &design, None).unwrap();
        assert!((pi[0] - 0.07).abs() < 1e-15);

        // Triangle: stationary law is uniform by symmetry.
        let units = (0..3).map(|_| Unit::new(0.0, 2).unwrap()).collect();
        let tri_pop = Population::new(units, 2, (0.0, 1.0)).unwrap();
        let config = NetworkConfig {
            simple: true,
            max_retries: 1000,
            ..NetworkConfig::default()
        };
        let graph = build_network(&tri_pop, &config, &mut rng(60)).unwrap();
        let design = DesignSpec::RandomWalk {
            walk: WalkConfig::classical(10),
        };
        let pi = inclusion_probabilities(&tri_pop, &design, Some(&graph)).unwrap();
        for p in pi {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }

        // Tilt: hand-normalized three-unit example.
        let units = vec![
            Unit::new(0.0, 1).unwrap(),
            Unit::new(1.0, 1).unwrap(),
            Unit::new(1.0, 2).unwrap(),
        ];
        let pop3 = Population::new(units, 2, (0.0, 1.0)).unwrap();
        let design = DesignSpec::NonIgnorableTilt {
            f: FSpec::vh(),
            c: 0.1,
            gamma: 1.0,
        };
        let pi = inclusion_probabilities(&pop3, &design, None).unwrap();
        let e = std::f64::consts::E;
        assert!((pi[0] - 0.1).abs() < 1e-15);
        assert!((pi[1] - 0.1 * e).abs() < 1e-15);
        assert!((pi[2] - 0.2 * e).abs() < 1e-15);

        // Coupon RDS: exact law unsupported by construction.
        let design = DesignSpec::CouponRds {
            coupon: CouponConfig {
                seeds: 1,
                coupons: 2,
                max_waves: 3,
                target_n: 10,
                with_replacement: false,
            },
        };
        assert!(matches!(
            inclusion_probabilities(&pop3, &design, None),
            Err(Error::UnsupportedDesign { .. })
        ));
    }

    #[test]
    fn walk_inclusion_law_requires_well_behaved_graph() {
        // Disconnected: two disjoint edges.
        let units = (0..4).map(|_| Unit::new(0.0, 1).unwrap()).collect();
        let pop = Population::new(units, 1, (0.0, 1.0)).unwrap();
        let graph = build_network(&pop, &NetworkConfig::default(), &mut rng(61)).unwrap();
        let design = DesignSpec::RandomWalk {
            walk: WalkConfig::classical(5),
        };
        assert!(matches!(
            inclusion_probabilities(&pop, &design, Some(&graph)),
            Err(Error::NoStationaryLaw {
                reason: "disconnected"
            })
        ));
        assert!(matches!(
            inclusion_probabilities(&pop, &design, None),
            Err(Error::GraphRequired { .. })
        ));

        // Single edge: connected but bipartite.
        let units = (0..2).map(|_| Unit::new(0.0, 1).unwrap()).collect();
        let pop2 = Population::new(units, 1, (0.0, 1.0)).unwrap();
        let graph2 = build_network(&pop2, &NetworkConfig::default(), &mut rng(62)).unwrap();
        assert!(matches!(
            inclusion_probabilities(&pop2, &design, Some(&graph2)),
            Err(Error::NoStationaryLaw { reason: "bipartite" })
        ));
    }

    #[test]
    fn samplers_are_deterministic_given_seed() {
        let pop = small_population(4, 100, 70);
        let pop = pop.with_even_degree_sum().unwrap();
        let graph = build_network(&pop, &NetworkConfig::default(), &mut rng(71)).unwrap();
        let f = FSpec::vh();
        let a = bernoulli_degree_sample(&pop, &f, 0.05, &mut rng(72)).unwrap();
        let b = bernoulli_degree_sample(&pop, &f, 0.05, &mut rng(72)).unwrap();
        assert_eq!(a, b);
        let config = WalkConfig::classical(30);
        let a = random_walk_sample(&graph, &pop, &config, &mut rng(73)).unwrap();
        let b = random_walk_sample(&graph, &pop, &config, &mut rng(73)).unwrap();
        assert_eq!(a, b);
    }
}
