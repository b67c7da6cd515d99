//! Synthetic populations with controllable degree and outcome laws, plus
//! configuration-model network realizations for walk-based samplers.
//!
//! The limiting setup is realized as i.i.d. draws of units from fixed
//! (degree, outcome) laws, so the population mean converges to the law's mean
//! by the law of large numbers. Connectivity of realized graphs is reported,
//! never enforced: fragmented graphs must be constructible.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Population, Unit};

/// Marginal law of the degree class on 1..=K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
#[serde(try_from = "DegreeDistributionRepr")]
pub enum DegreeDistribution {
    Uniform { k_max: u32 },
    TruncatedPowerLaw { exponent: f64, k_max: u32 },
    /// `weights[k-1]` is the unnormalized mass on degree class k.
    Table { weights: Vec<f64> },
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum DegreeDistributionRepr {
    Uniform { k_max: u32 },
    TruncatedPowerLaw { exponent: f64, k_max: u32 },
    Table { weights: Vec<f64> },
}

impl TryFrom<DegreeDistributionRepr> for DegreeDistribution {
    type Error = Error;

    fn try_from(repr: DegreeDistributionRepr) -> Result<Self> {
        let dd = match repr {
            DegreeDistributionRepr::Uniform { k_max } => DegreeDistribution::Uniform { k_max },
            DegreeDistributionRepr::TruncatedPowerLaw { exponent, k_max } => {
                DegreeDistribution::TruncatedPowerLaw { exponent, k_max }
            }
            DegreeDistributionRepr::Table { weights } => DegreeDistribution::Table { weights },
        };
        dd.validate()?;
        Ok(dd)
    }
}

impl DegreeDistribution {
    pub fn validate(&self) -> Result<()> {
        match self {
            DegreeDistribution::Uniform { k_max } => {
                if *k_max == 0 {
                    return Err(Error::InvalidDistribution("k_max must be >= 1".into()));
                }
            }
            DegreeDistribution::TruncatedPowerLaw { exponent, k_max } => {
                if *k_max == 0 {
                    return Err(Error::InvalidDistribution("k_max must be >= 1".into()));
                }
                if !exponent.is_finite() {
                    return Err(Error::InvalidDistribution(format!(
                        "exponent must be finite, got {exponent}"
                    )));
                }
            }
            DegreeDistribution::Table { weights } => {
                if weights.is_empty() {
                    return Err(Error::InvalidDistribution(
                        "weight table must not be empty".into(),
                    ));
                }
                if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                    return Err(Error::InvalidDistribution(
                        "weights must be finite and nonnegative".into(),
                    ));
                }
                if weights.iter().sum::<f64>() <= 0.0 {
                    return Err(Error::InvalidDistribution(
                        "weights must have positive total mass".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn k_max(&self) -> u32 {
        match self {
            DegreeDistribution::Uniform { k_max }
            | DegreeDistribution::TruncatedPowerLaw { k_max, .. } => *k_max,
            DegreeDistribution::Table { weights } => weights.len() as u32,
        }
    }

    /// Normalized probabilities for classes 1..=K (index k-1).
    pub fn probabilities(&self) -> Vec<f64> {
        match self {
            DegreeDistribution::Uniform { k_max } => {
                vec![1.0 / *k_max as f64; *k_max as usize]
            }
            DegreeDistribution::TruncatedPowerLaw { exponent, k_max } => {
                let raw: Vec<f64> = (1..=*k_max)
                    .map(|k| (k as f64).powf(-exponent))
                    .collect();
                normalize(&raw)
            }
            DegreeDistribution::Table { weights } => normalize(weights),
        }
    }
}

fn normalize(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

/// Inverse-CDF sampler over degree classes 1..=K.
struct ClassSampler {
    cumulative: Vec<f64>,
}

impl ClassSampler {
    fn new(probs: &[f64]) -> Self {
        let mut cumulative = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for &p in probs {
            acc += p;
            cumulative.push(acc);
        }
        // Guard against rounding leaving the last entry below 1.
        if let Some(last) = cumulative.last_mut() {
            *last = f64::INFINITY;
        }
        Self { cumulative }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let r: f64 = rng.random();
        self.cumulative.partition_point(|&c| c <= r)
    }
}

/// Conditional mean of the outcome given degree (and optionally group).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MeanSpec {
    /// mean(k) = sigmoid(intercept + slope * k)
    Logistic { intercept: f64, slope: f64 },
    /// `means[k-1]` is the conditional mean at degree class k.
    Table { means: Vec<f64> },
    /// Base mean plus an additive per-group shift.
    GroupShift { base: Box<MeanSpec>, shifts: Vec<f64> },
}

impl MeanSpec {
    pub fn conditional_mean(&self, k: u32, group: Option<u16>) -> Result<f64> {
        match self {
            MeanSpec::Logistic { intercept, slope } => {
                Ok(1.0 / (1.0 + (-(intercept + slope * k as f64)).exp()))
            }
            MeanSpec::Table { means } => {
                means
                    .get(k as usize - 1)
                    .copied()
                    .ok_or(Error::InvalidOutcomeModel(format!(
                        "mean table has no entry for degree class {k}"
                    )))
            }
            MeanSpec::GroupShift { base, shifts } => {
                let g = group.ok_or_else(|| {
                    Error::InvalidOutcomeModel(
                        "group-shift mean needs units with group labels".into(),
                    )
                })?;
                let shift = shifts.get(g as usize).ok_or_else(|| {
                    Error::InvalidOutcomeModel(format!("no shift for group {g}"))
                })?;
                Ok(base.conditional_mean(k, None)? + shift)
            }
        }
    }
}

/// Noise around the conditional mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseSpec {
    /// Binary outcome: Y ~ Bernoulli(mean(k, g)).
    Bernoulli,
    /// Y = mean + N(0, sd), redrawn (then clamped as a last resort) to stay
    /// inside the outcome bounds. `sd = 0` gives deterministic outcomes.
    Gaussian { sd: f64 },
}

/// Outcome law: conditional mean, noise, and declared outcome bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeModel {
    pub mean: MeanSpec,
    pub noise: NoiseSpec,
    pub bounds: (f64, f64),
}

impl OutcomeModel {
    /// Checks that every implied conditional mean over degree classes 1..=K
    /// (and every group) lies inside the declared bounds.
    pub fn validate(&self, k_max: u32, n_groups: usize) -> Result<()> {
        let (lo, hi) = self.bounds;
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(Error::InvalidOutcomeModel(format!(
                "bounds [{lo}, {hi}] must be finite with lo <= hi"
            )));
        }
        if let NoiseSpec::Gaussian { sd } = self.noise {
            if !sd.is_finite() || sd < 0.0 {
                return Err(Error::InvalidOutcomeModel(format!(
                    "noise sd must be a nonnegative finite number, got {sd}"
                )));
            }
        }
        if matches!(self.noise, NoiseSpec::Bernoulli) && (lo > 0.0 || hi < 1.0) {
            return Err(Error::InvalidOutcomeModel(
                "Bernoulli outcomes need bounds covering [0, 1]".into(),
            ));
        }
        let groups: Vec<Option<u16>> = if n_groups == 0 {
            vec![None]
        } else {
            (0..n_groups as u16).map(Some).collect()
        };
        if matches!(self.mean, MeanSpec::GroupShift { .. }) && n_groups == 0 {
            return Err(Error::InvalidOutcomeModel(
                "group-shift mean requires group proportions".into(),
            ));
        }
        for k in 1..=k_max {
            for &g in &groups {
                let m = self.mean.conditional_mean(k, g)?;
                if m < lo || m > hi {
                    return Err(Error::InvalidOutcomeModel(format!(
                        "conditional mean {m} at degree {k} lies outside bounds [{lo}, {hi}]"
                    )));
                }
                if matches!(self.noise, NoiseSpec::Bernoulli) && !(0.0..=1.0).contains(&m) {
                    return Err(Error::InvalidOutcomeModel(format!(
                        "Bernoulli mean {m} at degree {k} is not a probability"
                    )));
                }
            }
        }
        Ok(())
    }

    fn draw<R: Rng + ?Sized>(&self, k: u32, group: Option<u16>, rng: &mut R) -> Result<f64> {
        let mean = self.mean.conditional_mean(k, group)?;
        let (lo, hi) = self.bounds;
        Ok(match self.noise {
            NoiseSpec::Bernoulli => {
                if rng.random::<f64>() < mean {
                    1.0
                } else {
                    0.0
                }
            }
            NoiseSpec::Gaussian { sd } => {
                if sd == 0.0 {
                    mean
                } else {
                    let normal = Normal::new(0.0, sd).expect("validated sd");
                    let mut value = mean + normal.sample(rng);
                    let mut tries = 0;
                    while !(lo..=hi).contains(&value) && tries < 1000 {
                        value = mean + normal.sample(rng);
                        tries += 1;
                    }
                    value.clamp(lo, hi)
                }
            }
        })
    }
}

/// Draws a population of i.i.d. units: degree from `dd`, group from
/// `group_spec` proportions, outcome from `om` given (degree, group).
/// Reported degree equals true degree; misreporting is a sample transform.
pub fn generate_population<R: Rng + ?Sized>(
    size: usize,
    dd: &DegreeDistribution,
    om: &OutcomeModel,
    group_spec: Option<&[f64]>,
    rng: &mut R,
) -> Result<Population> {
    if size == 0 {
        return Err(Error::EmptyPopulation);
    }
    dd.validate()?;
    if let Some(props) = group_spec {
        if props.is_empty() || props.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument(
                "group proportions must be nonnegative finite numbers".into(),
            ));
        }
        if props.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidArgument(
                "group proportions must have positive total mass".into(),
            ));
        }
    }
    om.validate(dd.k_max(), group_spec.map_or(0, <[f64]>::len))?;

    let degree_sampler = ClassSampler::new(&dd.probabilities());
    let group_sampler = group_spec.map(|props| ClassSampler::new(&normalize(props)));

    let mut units = Vec::with_capacity(size);
    for _ in 0..size {
        let degree = degree_sampler.sample(rng) as u32 + 1;
        let group = group_sampler.as_ref().map(|gs| gs.sample(rng) as u16);
        let outcome = om.draw(degree, group, rng)?;
        let mut unit = Unit::new(outcome, degree)?;
        if let Some(g) = group {
            unit = unit.with_group(g);
        }
        units.push(unit);
    }
    Population::new(units, dd.k_max(), om.bounds)
}

/// Undirected multigraph over population indices. Self-loops contribute two
/// entries to their node's adjacency list, so adjacency length always equals
/// the node's realized degree.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from explicit adjacency lists, checking symmetry:
    /// j must appear in i's list exactly as often as i appears in j's.
    pub fn from_adjacency(adjacency: Vec<Vec<usize>>) -> Result<Self> {
        let n = adjacency.len();
        for (i, adj) in adjacency.iter().enumerate() {
            for &j in adj {
                if j >= n {
                    return Err(Error::InvalidArgument(format!(
                        "node {i} lists neighbor {j}, but the graph has {n} nodes"
                    )));
                }
            }
        }
        let graph = Self { adjacency };
        for i in 0..n {
            for &j in graph.neighbors(i) {
                let forward = graph.neighbors(i).iter().filter(|&&x| x == j).count();
                let backward = graph.neighbors(j).iter().filter(|&&x| x == i).count();
                if forward != backward {
                    return Err(Error::InvalidArgument(format!(
                        "asymmetric adjacency between nodes {i} and {j}"
                    )));
                }
            }
        }
        Ok(graph)
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn total_degree(&self) -> u64 {
        self.adjacency.iter().map(|a| a.len() as u64).sum()
    }

    /// Component label per node (labels are 0-based, in first-seen order).
    pub fn component_labels(&self) -> Vec<usize> {
        let n = self.node_count();
        let mut labels = vec![usize::MAX; n];
        let mut next = 0;
        let mut queue = std::collections::VecDeque::new();
        for start in 0..n {
            if labels[start] != usize::MAX {
                continue;
            }
            labels[start] = next;
            queue.push_back(start);
            while let Some(v) = queue.pop_front() {
                for &w in &self.adjacency[v] {
                    if labels[w] == usize::MAX {
                        labels[w] = next;
                        queue.push_back(w);
                    }
                }
            }
            next += 1;
        }
        labels
    }

    pub fn component_count(&self) -> usize {
        self.component_labels().iter().max().map_or(0, |m| m + 1)
    }

    pub fn is_connected(&self) -> bool {
        self.component_count() == 1
    }

    /// Two-colorability; any self-loop makes the graph non-bipartite.
    pub fn is_bipartite(&self) -> bool {
        let n = self.node_count();
        let mut color = vec![u8::MAX; n];
        let mut queue = std::collections::VecDeque::new();
        for start in 0..n {
            if color[start] != u8::MAX {
                continue;
            }
            color[start] = 0;
            queue.push_back(start);
            while let Some(v) = queue.pop_front() {
                for &w in &self.adjacency[v] {
                    if w == v {
                        return false;
                    }
                    if color[w] == u8::MAX {
                        color[w] = 1 - color[v];
                        queue.push_back(w);
                    } else if color[w] == color[v] {
                        return false;
                    }
                }
            }
        }
        true
    }

    pub fn self_loop_count(&self) -> usize {
        self.adjacency
            .iter()
            .enumerate()
            .map(|(i, adj)| adj.iter().filter(|&&j| j == i).count() / 2)
            .sum()
    }

    /// Number of parallel edges beyond the first between each node pair.
    pub fn multi_edge_count(&self) -> usize {
        let mut extras = 0;
        for (i, adj) in self.adjacency.iter().enumerate() {
            let mut sorted: Vec<usize> = adj.iter().copied().filter(|&j| j > i).collect();
            sorted.sort_unstable();
            let mut run = 1;
            for w in 1..sorted.len() {
                if sorted[w] == sorted[w - 1] {
                    run += 1;
                } else {
                    extras += run - 1;
                    run = 1;
                }
            }
            if !sorted.is_empty() {
                extras += run - 1;
            }
        }
        extras
    }

    /// Fraction of edge endpoints joining different groups; `None` when the
    /// population has no group labels. This is the *measured* assortativity
    /// counterpart to the homophily knob.
    pub fn cross_group_edge_fraction(&self, pop: &Population) -> Option<f64> {
        let mut cross = 0u64;
        let mut total = 0u64;
        for (i, adj) in self.adjacency.iter().enumerate() {
            let gi = pop.units()[i].group()?;
            for &j in adj {
                let gj = pop.units()[j].group()?;
                total += 1;
                if gi != gj {
                    cross += 1;
                }
            }
        }
        if total == 0 {
            None
        } else {
            Some(cross as f64 / total as f64)
        }
    }
}

/// Two-community sparse-cut constraint: cross-community edges are capped at
/// `cross_fraction` of the total edge count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bottleneck {
    pub cross_fraction: f64,
}

/// Knobs for the configuration-model realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Probability that a stub insists on a same-group partner (falls back
    /// to uniform when none remain, except that deadlocks under a bottleneck
    /// cap trigger a retry).
    pub homophily: f64,
    pub bottleneck: Option<Bottleneck>,
    /// Reject self-loops and parallel edges, retrying the whole matching.
    pub simple: bool,
    pub max_retries: u32,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            homophily: 0.0,
            bottleneck: None,
            simple: false,
            max_retries: 200,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.homophily) {
            return Err(Error::InvalidArgument(format!(
                "homophily must lie in [0, 1], got {}",
                self.homophily
            )));
        }
        if let Some(b) = &self.bottleneck {
            if !(0.0..=1.0).contains(&b.cross_fraction) {
                return Err(Error::InvalidArgument(format!(
                    "cross_fraction must lie in [0, 1], got {}",
                    b.cross_fraction
                )));
            }
        }
        if self.max_retries == 0 {
            return Err(Error::InvalidArgument("max_retries must be >= 1".into()));
        }
        Ok(())
    }
}

/// Group-aware stub pools supporting uniform draws over all stubs or within
/// one group.
struct StubPools {
    by_group: Vec<Vec<usize>>,
    total: usize,
}

impl StubPools {
    fn new(pop: &Population, group_of: &[usize], n_groups: usize) -> Self {
        let mut by_group = vec![Vec::new(); n_groups];
        for (i, unit) in pop.units().iter().enumerate() {
            for _ in 0..unit.true_degree() {
                by_group[group_of[i]].push(i);
            }
        }
        let total = by_group.iter().map(Vec::len).sum();
        Self { by_group, total }
    }

    fn pop_any<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        debug_assert!(self.total > 0);
        let mut r = rng.random_range(0..self.total);
        for pool in &mut self.by_group {
            if r < pool.len() {
                let idx = rng.random_range(0..pool.len());
                self.total -= 1;
                return pool.swap_remove(idx);
            }
            r -= pool.len();
        }
        unreachable!("stub index out of range");
    }

    fn pop_from<R: Rng + ?Sized>(&mut self, group: usize, rng: &mut R) -> usize {
        let pool = &mut self.by_group[group];
        let idx = rng.random_range(0..pool.len());
        self.total -= 1;
        pool.swap_remove(idx)
    }

    fn group_len(&self, group: usize) -> usize {
        self.by_group[group].len()
    }
}

/// Realizes the degree sequence by uniform stub matching, with optional
/// homophily preference, cross-community cap, and simple-graph rejection.
pub fn build_network<R: Rng + ?Sized>(
    pop: &Population,
    config: &NetworkConfig,
    rng: &mut R,
) -> Result<Graph> {
    config.validate()?;
    let total_stubs = pop.total_true_degree();
    if !total_stubs.is_multiple_of(2) {
        return Err(Error::OddDegreeSum { total: total_stubs });
    }

    let (group_of, n_groups) = if config.homophily > 0.0 || config.bottleneck.is_some() {
        let mut groups = Vec::with_capacity(pop.len());
        let mut max_group = 0usize;
        for unit in pop.units() {
            let g = unit.group().map(usize::from).unwrap_or(0);
            max_group = max_group.max(g);
            groups.push(g);
        }
        (groups, max_group + 1)
    } else {
        (vec![0; pop.len()], 1)
    };
    if let Some(_b) = &config.bottleneck {
        let grouped = pop.units().iter().all(|u| u.group().is_some());
        if !grouped || n_groups != 2 {
            return Err(Error::InvalidArgument(
                "bottleneck mode needs every unit labeled with one of exactly two groups".into(),
            ));
        }
    }
    let cross_cap = config
        .bottleneck
        .map(|b| (b.cross_fraction * (total_stubs / 2) as f64).floor() as u64);

    for _attempt in 0..config.max_retries {
        if let Some(graph) = try_match(pop, config, &group_of, n_groups, cross_cap, rng) {
            return Ok(graph);
        }
    }
    Err(Error::StubMatchingFailed {
        attempts: config.max_retries,
    })
}

fn try_match<R: Rng + ?Sized>(
    pop: &Population,
    config: &NetworkConfig,
    group_of: &[usize],
    n_groups: usize,
    cross_cap: Option<u64>,
    rng: &mut R,
) -> Option<Graph> {
    let mut pools = StubPools::new(pop, group_of, n_groups);
    let mut adjacency: Vec<Vec<usize>> = pop
        .units()
        .iter()
        .map(|u| Vec::with_capacity(u.true_degree() as usize))
        .collect();
    let mut cross_edges = 0u64;

    while pools.total > 0 {
        let a = pools.pop_any(rng);
        let ga = group_of[a];
        let capped = cross_cap.is_some_and(|cap| cross_edges >= cap);
        let b = if capped {
            if pools.group_len(ga) == 0 {
                return None; // deadlock: only cross partners remain
            }
            pools.pop_from(ga, rng)
        } else if config.homophily > 0.0
            && rng.random::<f64>() < config.homophily
            && pools.group_len(ga) > 0
        {
            pools.pop_from(ga, rng)
        } else {
            pools.pop_any(rng)
        };

        if config.simple && (a == b || adjacency[a].contains(&b)) {
            return None;
        }
        if group_of[a] != group_of[b] {
            cross_edges += 1;
        }
        adjacency[a].push(b);
        adjacency[b].push(a);
    }
    Some(Graph { adjacency })
}
