//! The estimators and the exact oracles that police them.
//!
//! Three sample-side estimators share one weighted-ratio core: the naive mean
//! (unit weights), the Volz-Heckathorn estimator (weights 1/degree), and the
//! generalized plug-in estimator (weights 1/f(degree)) for any known-to-scale
//! shape f. The oracles on the population side evaluate what those estimators
//! converge to, using quantities a field researcher never observes; they
//! exist so that simulation claims can be checked against exact arithmetic
//! instead of against other simulations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::Graph;
use crate::sampling::{inclusion_probabilities, DesignSpec};
use crate::stats::KahanSum;
use crate::types::{EstimateResult, FSpec, Population, Sample};

/// Record-level weighted ratio shared by every estimator. Weight sums use
/// compensated summation so the reduction identities hold to 1e-12 on large
/// samples.
fn weighted_ratio<W>(sample: &Sample, name: &str, mut weight_of: W) -> Result<EstimateResult>
where
    W: FnMut(u32) -> Result<f64>,
{
    if sample.records().is_empty() {
        return Err(Error::EmptySample);
    }
    let mut numerator = KahanSum::new();
    let mut denominator = KahanSum::new();
    let mut degree_class_counts: BTreeMap<u32, usize> = BTreeMap::new();
    for record in sample.records() {
        let w = weight_of(record.reported_degree())?;
        numerator.add(record.outcome() * w);
        denominator.add(w);
        *degree_class_counts.entry(record.reported_degree()).or_insert(0) += 1;
    }
    Ok(EstimateResult {
        estimator_name: name.to_string(),
        value: numerator.sum() / denominator.sum(),
        n: sample.n(),
        degree_class_counts,
    })
}

/// Unweighted mean of record outcomes: the baseline the weighted estimators
/// correct.
pub fn naive_estimate(sample: &Sample) -> Result<EstimateResult> {
    weighted_ratio(sample, "naive", |_| Ok(1.0))
}

/// The Volz-Heckathorn estimator: (sum y_i/d_i) / (sum 1/d_i) over records,
/// with d_i the reported degree.
pub fn vh_estimate(sample: &Sample) -> Result<EstimateResult> {
    weighted_ratio(sample, "vh", |d| Ok(1.0 / d as f64))
}

/// Plug-in estimator for an arbitrary known-to-scale shape f: records are
/// weighted by 1/f(degree). Fails if f is undefined on an observed class.
///
/// `Power {alpha: 1}` reproduces [`vh_estimate`] and `Constant` reproduces
/// [`naive_estimate`], exactly.
pub fn generalized_estimate(sample: &Sample, f: &FSpec) -> Result<EstimateResult> {
    weighted_ratio(sample, &format!("generalized[{f}]"), |d| {
        f.eval(d).map(|v| 1.0 / v)
    })
}

/// Class-grouped form of the same estimator: within-class sample means
/// combined with weights (class share)/f(k), summed over observed classes.
/// Algebraically identical to [`generalized_estimate`]; both are kept so the
/// equivalence can be asserted rather than assumed.
pub fn generalized_estimate_grouped(sample: &Sample, f: &FSpec) -> Result<EstimateResult> {
    if sample.records().is_empty() {
        return Err(Error::EmptySample);
    }
    let mut class_sums: BTreeMap<u32, (KahanSum, usize)> = BTreeMap::new();
    for record in sample.records() {
        let entry = class_sums.entry(record.reported_degree()).or_default();
        entry.0.add(record.outcome());
        entry.1 += 1;
    }
    let n = sample.n() as f64;
    let mut numerator = KahanSum::new();
    let mut denominator = KahanSum::new();
    let mut degree_class_counts = BTreeMap::new();
    for (&k, &(ref ysum, count)) in &class_sums {
        let class_mean = ysum.sum() / count as f64;
        let share = count as f64 / n;
        let w = share / f.eval(k)?;
        numerator.add(class_mean * w);
        denominator.add(w);
        degree_class_counts.insert(k, count);
    }
    Ok(EstimateResult {
        estimator_name: format!("generalized-grouped[{f}]"),
        value: numerator.sum() / denominator.sum(),
        n: sample.n(),
        degree_class_counts,
    })
}

fn design_f(design: &DesignSpec) -> Result<FSpec> {
    match design {
        DesignSpec::BernoulliDegree { f, .. } => Ok(f.clone()),
        // The classical walk's stationary visit law is degree-proportional.
        DesignSpec::RandomWalk { .. } => Ok(FSpec::vh()),
        DesignSpec::NonIgnorableTilt { .. } => Err(Error::NonIgnorableDesign),
        DesignSpec::CouponRds { .. } => Err(Error::UnsupportedDesign {
            design: "coupon RDS",
            quantity: "identification formula",
        }),
    }
}

/// Machine-checked identification identity on a finite instance.
///
/// Evaluates, from exact population quantities, the ratio
///
/// ```text
/// sum_k E[Y | S=1, D=k] * (Pr[D=k | S=1] / f(k))
/// ---------------------------------------------- ,
/// sum_k  Pr[D=k | S=1] / f(k)
/// ```
///
/// where `Pr[D=k | S=1]` comes from the design's exact inclusion
/// probabilities and, the design being ignorable, `E[Y | S=1, D=k]` equals
/// the population class mean computed by enumeration. The result must equal
/// `Population::true_mean` up to floating error; tests hold it to 1e-10.
///
/// Refuses tilted designs (the ignorability premise fails) and coupon RDS
/// (no exact inclusion law).
pub fn identification_oracle(
    pop: &Population,
    design: &DesignSpec,
    graph: Option<&Graph>,
) -> Result<f64> {
    let f = design_f(design)?;
    let pi = inclusion_probabilities(pop, design, graph)?;

    // Pr[D=k | S=1] up to the common normalizer sum(pi), which cancels.
    let mut class_pi: BTreeMap<u32, KahanSum> = BTreeMap::new();
    for (unit, &p) in pop.units().iter().zip(&pi) {
        class_pi.entry(unit.reported_degree()).or_default().add(p);
    }
    let class_means = pop.conditional_means();

    let mut numerator = KahanSum::new();
    let mut denominator = KahanSum::new();
    for (&k, pi_sum) in &class_pi {
        let weight = pi_sum.sum() / f.eval(k)?;
        let (mean, _) = class_means[&k];
        numerator.add(mean * weight);
        denominator.add(weight);
    }
    Ok(numerator.sum() / denominator.sum())
}

/// Probability limit of the plug-in estimator under a possibly misspecified
/// shape: (sum y_i pi_i / f_assumed(d_i)) / (sum pi_i / f_assumed(d_i)).
///
/// Equals the population mean exactly when the design is ignorable and
/// `f_assumed` matches the design's true inclusion shape within degree
/// classes; otherwise it is the bias target Monte Carlo estimates converge
/// to.
pub fn plim_oracle(
    pop: &Population,
    design: &DesignSpec,
    f_assumed: &FSpec,
    graph: Option<&Graph>,
) -> Result<f64> {
    let pi = inclusion_probabilities(pop, design, graph)?;
    let mut numerator = KahanSum::new();
    let mut denominator = KahanSum::new();
    for (unit, &p) in pop.units().iter().zip(&pi) {
        let w = p / f_assumed.eval(unit.reported_degree())?;
        numerator.add(unit.outcome() * w);
        denominator.add(w);
    }
    Ok(numerator.sum() / denominator.sum())
}

/// One degree class's ignorability audit entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    /// E[Y | D=k] over the whole population.
    pub population_mean: f64,
    /// E[Y | S=1, D=k] under the design's exact inclusion probabilities.
    pub sampled_mean: f64,
    /// sampled_mean - population_mean; zero in every class iff the design is
    /// ignorable for this population.
    pub gap: f64,
}

/// Compares, per degree class, the population conditional mean with the
/// sampled conditional mean computed exactly from inclusion probabilities.
///
/// This oracle deliberately uses quantities that are unobservable in the
/// field — the outcomes of unsampled subjects — which is precisely why
/// ignorability cannot be tested from RDS data alone and must be probed in
/// simulation.
pub fn ignorability_audit(
    pop: &Population,
    design: &DesignSpec,
    graph: Option<&Graph>,
) -> Result<BTreeMap<u32, AuditEntry>> {
    let pi = inclusion_probabilities(pop, design, graph)?;
    let mut weighted: BTreeMap<u32, (KahanSum, KahanSum)> = BTreeMap::new();
    for (unit, &p) in pop.units().iter().zip(&pi) {
        let entry = weighted.entry(unit.reported_degree()).or_default();
        entry.0.add(unit.outcome() * p);
        entry.1.add(p);
    }
    let class_means = pop.conditional_means();
    let mut audit = BTreeMap::new();
    for (&k, (ysum, psum)) in &weighted {
        let sampled_mean = ysum.sum() / psum.sum();
        let population_mean = class_means[&k].0;
        audit.insert(
            k,
            AuditEntry {
                population_mean,
                sampled_mean,
                gap: sampled_mean - population_mean,
            },
        );
    }
    Ok(audit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{
        generate_population, DegreeDistribution, MeanSpec, NoiseSpec, OutcomeModel,
    };
    use crate::sampling::bernoulli_degree_sample;
    use crate::types::{SampleRecord, Unit};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn sample_from(pairs: &[(f64, u32)]) -> Sample {
        let records = pairs
            .iter()
            .map(|&(y, d)| SampleRecord::seed(y, d).unwrap())
            .collect();
        Sample::new(records, false).unwrap()
    }

    fn random_sample<R: Rng>(rng: &mut R, max_degree: u32) -> Sample {
        let n = rng.random_range(1..=200);
        let pairs: Vec<(f64, u32)> = (0..n)
            .map(|_| (rng.random::<f64>(), rng.random_range(1..=max_degree)))
            .collect();
        sample_from(&pairs)
    }

    #[test]
    fn naive_is_the_arithmetic_mean() {
        assert_eq!(
            naive_estimate(&sample_from(&[(1.0, 1), (1.0, 2), (0.0, 3), (0.0, 4)]))
                .unwrap()
                .value,
            0.5
        );
        assert_eq!(naive_estimate(&sample_from(&[(0.3, 5)])).unwrap().value, 0.3);
    }

    #[test]
    fn vh_hand_example() {
        // (1/1 + 0/2) / (1/1 + 1/2) = 2/3
        let est = vh_estimate(&sample_from(&[(1.0, 1), (0.0, 2)])).unwrap();
        assert!((est.value - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(est.n, 2);
        assert_eq!(est.degree_class_counts[&1], 1);
        assert_eq!(est.degree_class_counts[&2], 1);
    }

    #[test]
    fn equal_degrees_collapse_vh_to_naive() {
        let sample = sample_from(&[(0.2, 3), (0.9, 3), (0.5, 3)]);
        assert_eq!(
            vh_estimate(&sample).unwrap().value,
            naive_estimate(&sample).unwrap().value
        );
    }

    #[test]
    fn reduction_identities_on_randomized_samples() {
        let mut r = rng(100);
        for _ in 0..1000 {
            let sample = random_sample(&mut r, 10);
            let vh = vh_estimate(&sample).unwrap().value;
            let naive = naive_estimate(&sample).unwrap().value;
            let g_vh = generalized_estimate(&sample, &FSpec::vh()).unwrap().value;
            let g_naive = generalized_estimate(&sample, &FSpec::Constant)
                .unwrap()
                .value;
            assert!((vh - g_vh).abs() < 1e-12);
            assert!((naive - g_naive).abs() < 1e-12);
        }
    }

    #[test]
    fn table_scale_never_moves_the_estimate() {
        let mut r = rng(101);
        for _ in 0..500 {
            let values: Vec<(u32, f64)> = (1..=8)
                .map(|k| (k, 0.1 + r.random::<f64>() * 5.0))
                .collect();
            let f = FSpec::table(values.clone()).unwrap();
            let scale = 10f64.powf(r.random_range(-6.0..6.0));
            let scaled =
                FSpec::table(values.iter().map(|&(k, v)| (k, v * scale)).collect()).unwrap();
            let sample = random_sample(&mut r, 8);
            let a = generalized_estimate(&sample, &f).unwrap().value;
            let b = generalized_estimate(&sample, &scaled).unwrap().value;
            assert!((a - b).abs() < 1e-12, "scale {scale}: {a} vs {b}");
        }
    }

    #[test]
    fn grouped_and_record_forms_agree() {
        let mut r = rng(102);
        for _ in 0..500 {
            let sample = random_sample(&mut r, 10);
            let f = FSpec::power(r.random_range(0.0..2.0)).unwrap();
            let record = generalized_estimate(&sample, &f).unwrap().value;
            let grouped = generalized_estimate_grouped(&sample, &f).unwrap().value;
            assert!((record - grouped).abs() < 1e-12);
        }
    }

    #[test]
    fn estimates_stay_inside_outcome_range() {
        let mut r = rng(103);
        for _ in 0..300 {
            let sample = random_sample(&mut r, 10);
            let lo = sample
                .records()
                .iter()
                .map(|rec| rec.outcome())
                .fold(f64::INFINITY, f64::min);
            let hi = sample
                .records()
                .iter()
                .map(|rec| rec.outcome())
                .fold(f64::NEG_INFINITY, f64::max);
            for est in [
                vh_estimate(&sample).unwrap().value,
                naive_estimate(&sample).unwrap().value,
                generalized_estimate(&sample, &FSpec::power(1.7).unwrap())
                    .unwrap()
                    .value,
            ] {
                assert!(est >= lo - 1e-12 && est <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn empty_sample_is_an_error() {
        let empty = Sample::new(vec![], false).unwrap();
        assert!(matches!(naive_estimate(&empty), Err(Error::EmptySample)));
        assert!(matches!(vh_estimate(&empty), Err(Error::EmptySample)));
        assert!(matches!(
            generalized_estimate(&empty, &FSpec::Constant),
            Err(Error::EmptySample)
        ));
    }

    #[test]
    fn table_missing_observed_class_fails_estimation() {
        let sample = sample_from(&[(1.0, 1), (0.0, 2)]);
        let f = FSpec::table(vec![(1, 1.0)]).unwrap();
        assert!(matches!(
            generalized_estimate(&sample, &f),
            Err(Error::MissingDegreeClass { class: 2 })
        ));
    }

    #[test]
    fn census_sample_recovers_true_mean_through_every_estimator() {
        // All degrees equal: weights cancel in every estimator.
        let dd = DegreeDistribution::Uniform { k_max: 1 };
        let om = OutcomeModel {
            mean: MeanSpec::Table { means: vec![0.5] },
            noise: NoiseSpec::Bernoulli,
            bounds: (0.0, 1.0),
        };
        let pop = generate_population(100, &dd, &om, None, &mut rng(104)).unwrap();
        let sample = bernoulli_degree_sample(&pop, &FSpec::Constant, 1.0, &mut rng(105)).unwrap();
        for est in [
            naive_estimate(&sample).unwrap().value,
            vh_estimate(&sample).unwrap().value,
        ] {
            assert_eq!(est, pop.true_mean());
        }
    }

    fn random_population<R: Rng>(r: &mut R) -> Population {
        let k_max = r.random_range(1..=10u32);
        let size = r.random_range(1..=200usize);
        let units = (0..size)
            .map(|_| Unit::new(r.random::<f64>(), r.random_range(1..=k_max)).unwrap())
            .collect();
        Population::new(units, k_max, (0.0, 1.0)).unwrap()
    }

    fn random_fspec<R: Rng>(r: &mut R, k_max: u32) -> FSpec {
        match r.random_range(0..3) {
            0 => FSpec::power(r.random_range(0.0..2.0)).unwrap(),
            1 => FSpec::Constant,
            _ => FSpec::table(
                (1..=k_max)
                    .map(|k| (k, 0.1 + r.random::<f64>() * 9.9))
                    .collect(),
            )
            .unwrap(),
        }
    }

    fn feasible_c<R: Rng>(r: &mut R, pop: &Population, f: &FSpec) -> f64 {
        let max_f = (1..=pop.k_max())
            .map(|k| f.eval(k).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        r.random::<f64>().max(1e-3) / max_f
    }

    #[test]
    fn identification_oracle_matches_true_mean_on_random_designs() {
        let mut r = rng(106);
        for _ in 0..200 {
            let pop = random_population(&mut r);
            let f = random_fspec(&mut r, pop.k_max());
            let c = feasible_c(&mut r, &pop, &f);
            let design = DesignSpec::BernoulliDegree { f, c };
            let oracle = identification_oracle(&pop, &design, None).unwrap();
            assert!(
                (oracle - pop.true_mean()).abs() < 1e-10,
                "oracle {oracle} vs truth {}",
                pop.true_mean()
            );
        }
    }

    #[test]
    fn identification_survives_vanishingly_small_class_inclusion() {
        // One class gets inclusion ~1e-12 of the others; positivity is all
        // identification needs.
        let mut units = vec![Unit::new(1.0, 1).unwrap(); 30];
        units.extend(vec![Unit::new(0.0, 2).unwrap(); 30]);
        let pop = Population::new(units, 2, (0.0, 1.0)).unwrap();
        let f = FSpec::table(vec![(1, 1e-12), (2, 1.0)]).unwrap();
        let design = DesignSpec::BernoulliDegree { f, c: 0.5 };
        let oracle = identification_oracle(&pop, &design, None).unwrap();
        assert!((oracle - pop.true_mean()).abs() < 1e-10);
    }

    #[test]
    fn identification_refuses_non_ignorable_and_coupon_designs() {
        let pop = random_population(&mut rng(107));
        let tilt = DesignSpec::NonIgnorableTilt {
            f: FSpec::Constant,
            c: 0.01,
            gamma: 1.0,
        };
        assert!(matches!(
            identification_oracle(&pop, &tilt, None),
            Err(Error::NonIgnorableDesign)
        ));
        let coupon = DesignSpec::CouponRds {
            coupon: crate::sampling::CouponConfig {
                seeds: 1,
                coupons: 2,
                max_waves: 5,
                target_n: 50,
                with_replacement: false,
            },
        };
        assert!(matches!(
            identification_oracle(&pop, &coupon, None),
            Err(Error::UnsupportedDesign { .. })
        ));
    }

    #[test]
    fn plim_equals_truth_under_correct_specification() {
        let mut r = rng(108);
        for _ in 0..100 {
            let pop = random_population(&mut r);
            let f = random_fspec(&mut r, pop.k_max());
            let c = feasible_c(&mut r, &pop, &f);
            let design = DesignSpec::BernoulliDegree { f: f.clone(), c };
            let plim = plim_oracle(&pop, &design, &f, None).unwrap();
            assert!((plim - pop.true_mean()).abs() < 1e-12);
        }
    }

    #[test]
    fn plim_hand_example_with_misspecified_shape() {
        // Design truth f(k) = k^2, assumed f(k) = k, three units.
        let units = vec![
            Unit::new(0.0, 1).unwrap(),
            Unit::new(1.0, 2).unwrap(),
            Unit::new(1.0, 3).unwrap(),
        ];
        let pop = Population::new(units, 3, (0.0, 1.0)).unwrap();
        let design = DesignSpec::BernoulliDegree {
            f: FSpec::power(2.0).unwrap(),
            c: 0.01,
        };
        let plim = plim_oracle(&pop, &design, &FSpec::vh(), None).unwrap();
        assert!((plim - 5.0 / 6.0).abs() < 1e-14);
        assert!((pop.true_mean() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn plim_differs_from_truth_under_tilt() {
        // Binary outcome varying within the single degree class.
        let mut units = vec![Unit::new(1.0, 1).unwrap(); 40];
        units.extend(vec![Unit::new(0.0, 1).unwrap(); 60]);
        let pop = Population::new(units, 1, (0.0, 1.0)).unwrap();
        let f = FSpec::Constant;
        let design = DesignSpec::NonIgnorableTilt {
            f: f.clone(),
            c: 0.05,
            gamma: 1.0,
        };
        let plim = plim_oracle(&pop, &design, &f, None).unwrap();
        let e = std::f64::consts::E;
        let expected = 0.4 * e / (0.4 * e + 0.6);
        assert!((plim - expected).abs() < 1e-12);
        assert!((plim - pop.true_mean()).abs() > 0.1);
    }

    #[test]
    fn audit_gaps_vanish_for_bernoulli_and_appear_under_tilt() {
        let pop = {
            let dd = DegreeDistribution::Uniform { k_max: 4 };
            let om = OutcomeModel {
                mean: MeanSpec::Logistic {
                    intercept: -0.5,
                    slope: 0.3,
                },
                noise: NoiseSpec::Bernoulli,
                bounds: (0.0, 1.0),
            };
            generate_population(400, &dd, &om, None, &mut rng(109)).unwrap()
        };
        let f = FSpec::vh();
        let bernoulli = DesignSpec::BernoulliDegree {
            f: f.clone(),
            c: 0.05,
        };
        for entry in ignorability_audit(&pop, &bernoulli, None).unwrap().values() {
            assert!(entry.gap.abs() < 1e-12);
        }

        let tilt = DesignSpec::NonIgnorableTilt {
            f: f.clone(),
            c: 0.01,
            gamma: 1.0,
        };
        let audit = ignorability_audit(&pop, &tilt, None).unwrap();
        assert!(audit.values().any(|e| e.gap > 0.01));

        // Outcomes constant within every class: tilt has nothing to exploit.
        let units = (0..100)
            .map(|i| Unit::new(f64::from(i % 3 == 0), 1 + (i % 3)).unwrap())
            .collect();
        let flat = Population::new(units, 3, (0.0, 1.0)).unwrap();
        // Each class is outcome-constant here only for class-wise constant map:
        let units = flat
            .units()
            .iter()
            .map(|u| Unit::new((u.reported_degree() % 2) as f64, u.reported_degree()).unwrap())
            .collect();
        let flat = Population::new(units, 3, (0.0, 1.0)).unwrap();
        let audit = ignorability_audit(&flat, &tilt, None).unwrap();
        for entry in audit.values() {
            assert!(entry.gap.abs() < 1e-12);
        }
    }
}
