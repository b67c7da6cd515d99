//! Shared domain vocabulary: populations, samples, f-specifications, and
//! estimate results.
//!
//! Everything here is immutable after construction and safe to share across
//! threads. Constructors enforce the invariants (no degree-0 units, outcomes
//! inside declared bounds) so downstream code never has to re-check them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::KahanSum;

/// One member of the study population.
///
/// `true_degree` is the unit's actual number of ties; `reported_degree` is
/// what an interviewer would be told. Estimators only ever see the reported
/// value, which makes degree misreporting a testable violation mode rather
/// than an invisible assumption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    outcome: f64,
    true_degree: u32,
    reported_degree: u32,
    group: Option<u16>,
}

impl Unit {
    /// A unit with matching true and reported degree.
    pub fn new(outcome: f64, degree: u32) -> Result<Self> {
        Self::with_reported(outcome, degree, degree)
    }

    pub fn with_reported(outcome: f64, true_degree: u32, reported_degree: u32) -> Result<Self> {
        if true_degree == 0 {
            return Err(Error::ZeroDegree {
                context: "unit true degree",
            });
        }
        if reported_degree == 0 {
            return Err(Error::ZeroDegree {
                context: "unit reported degree",
            });
        }
        if !outcome.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "unit outcome must be finite, got {outcome}"
            )));
        }
        Ok(Self {
            outcome,
            true_degree,
            reported_degree,
            group: None,
        })
    }

    pub fn with_group(mut self, group: u16) -> Self {
        self.group = Some(group);
        self
    }

    pub fn outcome(&self) -> f64 {
        self.outcome
    }

    pub fn true_degree(&self) -> u32 {
        self.true_degree
    }

    pub fn reported_degree(&self) -> u32 {
        self.reported_degree
    }

    pub fn group(&self) -> Option<u16> {
        self.group
    }

    pub(crate) fn bump_degree(&mut self, delta: i32) {
        let d = (self.true_degree as i64 + delta as i64).max(1) as u32;
        self.true_degree = d;
        self.reported_degree = d;
    }
}

/// A finite population together with its degree support bound `K` and
/// declared outcome bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    units: Vec<Unit>,
    k_max: u32,
    outcome_bounds: (f64, f64),
}

impl Population {
    pub fn new(units: Vec<Unit>, k_max: u32, outcome_bounds: (f64, f64)) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::EmptyPopulation);
        }
        if k_max == 0 {
            return Err(Error::ZeroDegree {
                context: "population degree bound K",
            });
        }
        let (lo, hi) = outcome_bounds;
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(Error::InvalidArgument(format!(
                "outcome bounds [{lo}, {hi}] must be finite with lo <= hi"
            )));
        }
        for unit in &units {
            for degree in [unit.true_degree, unit.reported_degree] {
                if degree > k_max {
                    return Err(Error::DegreeAboveMax { degree, k_max });
                }
            }
            if unit.outcome < lo || unit.outcome > hi {
                return Err(Error::OutcomeOutOfBounds {
                    value: unit.outcome,
                    lo,
                    hi,
                });
            }
        }
        Ok(Self {
            units,
            k_max,
            outcome_bounds,
        })
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn k_max(&self) -> u32 {
        self.k_max
    }

    pub fn outcome_bounds(&self) -> (f64, f64) {
        self.outcome_bounds
    }

    pub fn total_true_degree(&self) -> u64 {
        self.units.iter().map(|u| u.true_degree as u64).sum()
    }

    /// The estimand: the plain arithmetic mean of outcomes. Every estimator
    /// in this crate is judged against this number.
    pub fn true_mean(&self) -> f64 {
        let mut acc = KahanSum::new();
        for u in &self.units {
            acc.add(u.outcome);
        }
        acc.sum() / self.units.len() as f64
    }

    /// Exact per-degree-class outcome means, keyed by reported degree.
    /// Classes with no units are omitted.
    pub fn conditional_means(&self) -> BTreeMap<u32, (f64, usize)> {
        let mut sums: BTreeMap<u32, (KahanSum, usize)> = BTreeMap::new();
        for u in &self.units {
            let entry = sums.entry(u.reported_degree).or_default();
            entry.0.add(u.outcome);
            entry.1 += 1;
        }
        sums.into_iter()
            .map(|(k, (s, n))| (k, (s.sum() / n as f64, n)))
            .collect()
    }

    /// Adjusts one unit's degree by one so the degree sequence sums to an
    /// even total, which a configuration-model realization requires. The
    /// outcome is left untouched, so exact oracles over the realized
    /// population are unaffected.
    pub fn with_even_degree_sum(mut self) -> Result<Self> {
        if self.total_true_degree().is_multiple_of(2) {
            return Ok(self);
        }
        if let Some(u) = self
            .units
            .iter_mut()
            .rev()
            .find(|u| u.true_degree < self.k_max)
        {
            u.bump_degree(1);
            return Ok(self);
        }
        if let Some(u) = self.units.iter_mut().rev().find(|u| u.true_degree > 1) {
            u.bump_degree(-1);
            return Ok(self);
        }
        Err(Error::OddDegreeSum {
            total: self.total_true_degree(),
        })
    }
}

/// The shape of the conditional sampling probability, known only up to an
/// unknown positive scale.
///
/// The scale is deliberately *not* part of this type: the weighted ratio
/// estimators cancel it, and keeping it out of the vocabulary makes that
/// cancellation impossible to get wrong.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
#[serde(try_from = "FSpecRepr")]
pub enum FSpec {
    /// f(k) = k^alpha. `Power { alpha: 1.0 }` is the degree-proportional
    /// shape the Volz-Heckathorn estimator assumes.
    Power { alpha: f64 },
    /// f(k) = 1 for every class. Any positive constant is equivalent, so it
    /// is pinned at one.
    Constant,
    /// Tabulated per degree class; classes outside the table are an error
    /// when evaluated.
    Table { values: Vec<(u32, f64)> },
}

/// Unvalidated mirror of [`FSpec`] used for deserialization.
#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum FSpecRepr {
    Power { alpha: f64 },
    Constant,
    Table { values: Vec<(u32, f64)> },
}

impl TryFrom<FSpecRepr> for FSpec {
    type Error = Error;

    fn try_from(repr: FSpecRepr) -> Result<Self> {
        match repr {
            FSpecRepr::Power { alpha } => FSpec::power(alpha),
            FSpecRepr::Constant => Ok(FSpec::Constant),
            FSpecRepr::Table { values } => FSpec::table(values),
        }
    }
}

impl FSpec {
    pub fn power(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::InvalidFSpec(format!(
                "power exponent must be finite, got {alpha}"
            )));
        }
        Ok(FSpec::Power { alpha })
    }

    /// Builds a tabulated shape. Keys are deduplicated-checked and sorted;
    /// values must be strictly positive.
    pub fn table(mut values: Vec<(u32, f64)>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidFSpec("table must not be empty".into()));
        }
        values.sort_by_key(|&(k, _)| k);
        for window in values.windows(2) {
            if window[0].0 == window[1].0 {
                return Err(Error::InvalidFSpec(format!(
                    "duplicate degree class {} in table",
                    window[0].0
                )));
            }
        }
        for &(k, v) in &values {
            if k == 0 {
                return Err(Error::ZeroDegree {
                    context: "f table degree class",
                });
            }
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidFSpec(format!(
                    "table value for class {k} must be a positive finite number, got {v}"
                )));
            }
        }
        Ok(FSpec::Table { values })
    }

    /// The degree-proportional shape (f(k) = k).
    pub fn vh() -> Self {
        FSpec::Power { alpha: 1.0 }
    }

    /// Evaluates the unscaled shape at degree class `k`.
    pub fn eval(&self, k: u32) -> Result<f64> {
        if k == 0 {
            return Err(Error::ZeroDegree {
                context: "f evaluated at degree 0",
            });
        }
        match self {
            // Exact for the identity shape: no powf rounding in the path the
            // Volz-Heckathorn reduction identity depends on.
            FSpec::Power { alpha } if *alpha == 1.0 => Ok(k as f64),
            FSpec::Power { alpha } => Ok((k as f64).powf(*alpha)),
            FSpec::Constant => Ok(1.0),
            FSpec::Table { values } => values
                .binary_search_by_key(&k, |&(class, _)| class)
                .map(|idx| values[idx].1)
                .map_err(|_| Error::MissingDegreeClass { class: k }),
        }
    }

    /// True when the shape is defined (and positive) on every class in 1..=k_max.
    pub fn covers(&self, k_max: u32) -> bool {
        (1..=k_max).all(|k| self.eval(k).is_ok())
    }
}

impl fmt::Display for FSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FSpec::Power { alpha } => write!(f, "power:{alpha}"),
            FSpec::Constant => write!(f, "constant"),
            FSpec::Table { values } => {
                write!(f, "table:")?;
                for (i, (k, v)) in values.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{k}={v}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for FSpec {
    type Err = Error;

    /// Parses the CLI syntax: `power:<alpha>`, `constant`, `table:<k=v,...>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: String| Error::InvalidFSpec(msg);
        if s == "constant" {
            return Ok(FSpec::Constant);
        }
        if let Some(alpha) = s.strip_prefix("power:") {
            let alpha: f64 = alpha
                .parse()
                .map_err(|_| bad(format!("cannot parse power exponent `{alpha}`")))?;
            return FSpec::power(alpha);
        }
        if let Some(body) = s.strip_prefix("table:") {
            let mut values = Vec::new();
            for pair in body.split(',') {
                let (k, v) = pair
                    .split_once('=')
                    .ok_or_else(|| bad(format!("table entry `{pair}` is not k=v")))?;
                let k: u32 = k
                    .parse()
                    .map_err(|_| bad(format!("cannot parse degree class `{k}`")))?;
                let v: f64 = v
                    .parse()
                    .map_err(|_| bad(format!("cannot parse table value `{v}`")))?;
                values.push((k, v));
            }
            return FSpec::table(values);
        }
        Err(bad(format!(
            "unrecognized f spec `{s}` (expected power:<alpha>, constant, or table:<k=v,...>)"
        )))
    }
}

/// One observed record: outcome and reported degree, plus recruitment
/// lineage when the sampling process has one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    unit_index: Option<usize>,
    outcome: f64,
    reported_degree: u32,
    recruiter: Option<usize>,
    wave: u32,
}

impl SampleRecord {
    /// A seed record: wave 0, no recruiter.
    pub fn seed(outcome: f64, reported_degree: u32) -> Result<Self> {
        if reported_degree == 0 {
            return Err(Error::ZeroDegree {
                context: "sample record degree",
            });
        }
        if !outcome.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "record outcome must be finite, got {outcome}"
            )));
        }
        Ok(Self {
            unit_index: None,
            outcome,
            reported_degree,
            recruiter: None,
            wave: 0,
        })
    }

    /// A recruited record pointing back at an earlier record index.
    pub fn recruited(
        outcome: f64,
        reported_degree: u32,
        recruiter: usize,
        wave: u32,
    ) -> Result<Self> {
        let mut record = Self::seed(outcome, reported_degree)?;
        if wave == 0 {
            return Err(Error::InvalidArgument(
                "recruited records must have wave >= 1".into(),
            ));
        }
        record.recruiter = Some(recruiter);
        record.wave = wave;
        Ok(record)
    }

    pub fn with_unit_index(mut self, index: usize) -> Self {
        self.unit_index = Some(index);
        self
    }

    pub fn unit_index(&self) -> Option<usize> {
        self.unit_index
    }

    pub fn outcome(&self) -> f64 {
        self.outcome
    }

    pub fn reported_degree(&self) -> u32 {
        self.reported_degree
    }

    pub fn recruiter(&self) -> Option<usize> {
        self.recruiter
    }

    pub fn wave(&self) -> u32 {
        self.wave
    }

    pub(crate) fn set_reported_degree(&mut self, degree: u32) {
        debug_assert!(degree >= 1);
        self.reported_degree = degree;
    }
}

/// An ordered sequence of sample records.
///
/// Repeats are legitimate under with-replacement processes: a unit visited
/// twice contributes two records, and estimators weight records, not
/// distinct units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    records: Vec<SampleRecord>,
    with_replacement: bool,
    truncated: bool,
    restarts: u32,
}

impl Sample {
    pub fn new(records: Vec<SampleRecord>, with_replacement: bool) -> Result<Self> {
        for (idx, record) in records.iter().enumerate() {
            if let Some(r) = record.recruiter {
                if r >= idx {
                    return Err(Error::InvalidArgument(format!(
                        "record {idx} names recruiter {r}, which is not an earlier record"
                    )));
                }
            }
        }
        Ok(Self {
            records,
            with_replacement,
            truncated: false,
            restarts: 0,
        })
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn with_replacement(&self) -> bool {
        self.with_replacement
    }

    /// True when a sampler stopped short of its nominal size.
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    /// Number of fresh-seed restarts a without-replacement walk needed.
    pub fn restarts(&self) -> u32 {
        self.restarts
    }

    pub(crate) fn mark_truncated(&mut self) {
        self.truncated = true;
    }

    pub(crate) fn set_restarts(&mut self, restarts: u32) {
        self.restarts = restarts;
    }

    pub(crate) fn records_mut(&mut self) -> &mut [SampleRecord] {
        &mut self.records
    }
}

/// A point estimate together with the bookkeeping scenario reports want.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub estimator_name: String,
    pub value: f64,
    pub n: usize,
    pub degree_class_counts: BTreeMap<u32, usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f_eval_identity_shape() {
        assert_eq!(FSpec::vh().eval(7).unwrap(), 7.0);
        for k in 1..=50 {
            assert_eq!(FSpec::vh().eval(k).unwrap(), k as f64);
        }
    }

    #[test]
    fn f_eval_constant_and_square() {
        assert_eq!(FSpec::Constant.eval(3).unwrap(), 1.0);
        assert_eq!(FSpec::power(2.0).unwrap().eval(4).unwrap(), 16.0);
    }

    #[test]
    fn f_eval_table_missing_class_names_it() {
        let f = FSpec::table(vec![(1, 0.5), (3, 2.0)]).unwrap();
        assert_eq!(f.eval(3).unwrap(), 2.0);
        match f.eval(2) {
            Err(Error::MissingDegreeClass { class }) => assert_eq!(class, 2),
            other => panic!("expected missing-class error, got {other:?}"),
        }
    }

    #[test]
    fn f_table_rejects_bad_values() {
        assert!(FSpec::table(vec![]).is_err());
        assert!(FSpec::table(vec![(1, 0.0)]).is_err());
        assert!(FSpec::table(vec![(1, -2.0)]).is_err());
        assert!(FSpec::table(vec![(0, 1.0)]).is_err());
        assert!(FSpec::table(vec![(2, 1.0), (2, 3.0)]).is_err());
    }

    #[test]
    fn f_spec_cli_syntax_round_trip() {
        for s in ["power:1", "power:2.5", "constant", "table:1=0.5,2=1"] {
            let f: FSpec = s.parse().unwrap();
            assert_eq!(f.to_string(), s);
        }
        assert!("power:x".parse::<FSpec>().is_err());
        assert!("tabl:1=2".parse::<FSpec>().is_err());
    }

    #[test]
    fn unit_rejects_degree_zero() {
        assert!(Unit::new(1.0, 0).is_err());
        assert!(Unit::with_reported(1.0, 3, 0).is_err());
        assert!(Unit::new(f64::NAN, 1).is_err());
    }

    #[test]
    fn population_validates_bounds_and_degrees() {
        let units = vec![Unit::new(0.5, 2).unwrap()];
        assert!(Population::new(units.clone(), 1, (0.0, 1.0)).is_err());
        assert!(Population::new(units.clone(), 2, (0.0, 0.4)).is_err());
        assert!(Population::new(vec![], 2, (0.0, 1.0)).is_err());
        assert!(Population::new(units, 2, (0.0, 1.0)).is_ok());
    }

    #[test]
    fn true_mean_split_population() {
        let mut units = vec![Unit::new(0.0, 1).unwrap(); 3];
        units.extend(vec![Unit::new(1.0, 1).unwrap(); 7]);
        let pop = Population::new(units, 1, (0.0, 1.0)).unwrap();
        assert_eq!(pop.true_mean(), 0.7);
    }

    #[test]
    fn conditional_means_merge_to_true_mean() {
        let units = vec![
            Unit::new(0.0, 1).unwrap(),
            Unit::new(1.0, 1).unwrap(),
            Unit::new(1.0, 2).unwrap(),
            Unit::new(0.25, 2).unwrap(),
            Unit::new(0.5, 3).unwrap(),
        ];
        let pop = Population::new(units, 3, (0.0, 1.0)).unwrap();
        let means = pop.conditional_means();
        assert_eq!(means[&1], (0.5, 2));
        assert_eq!(means[&2], (0.625, 2));
        assert_eq!(means[&3], (0.5, 1));
        let total: f64 = means
            .values()
            .map(|&(m, n)| m * n as f64 / pop.len() as f64)
            .sum();
        assert!((total - pop.true_mean()).abs() < 1e-12);
    }

    #[test]
    fn even_degree_sum_adjusts_single_unit() {
        let units = vec![
            Unit::new(0.0, 1).unwrap(),
            Unit::new(1.0, 1).unwrap(),
            Unit::new(1.0, 1).unwrap(),
        ];
        let pop = Population::new(units, 3, (0.0, 1.0)).unwrap();
        let fixed = pop.with_even_degree_sum().unwrap();
        assert_eq!(fixed.total_true_degree(), 4);
        assert_eq!(fixed.units()[2].true_degree(), 2);
        // Already-even populations pass through unchanged.
        let again = fixed.clone().with_even_degree_sum().unwrap();
        assert_eq!(again, fixed);
    }

    #[test]
    fn sample_rejects_forward_recruiter_reference() {
        let a = SampleRecord::seed(1.0, 2).unwrap();
        let b = SampleRecord::recruited(0.0, 1, 5, 1).unwrap();
        assert!(Sample::new(vec![a, b], false).is_err());
        let c = SampleRecord::recruited(0.0, 1, 0, 1).unwrap();
        assert!(Sample::new(vec![a, c], false).is_ok());
    }

    #[test]
    fn recruited_record_needs_positive_wave() {
        assert!(SampleRecord::recruited(0.0, 1, 0, 0).is_err());
        assert!(SampleRecord::seed(0.0, 0).is_err());
    }
}
