//! Property tests for the estimator identities and oracle exactness.

use proptest::prelude::*;

use rds_core::estimators::{
    generalized_estimate, generalized_estimate_grouped, identification_oracle, naive_estimate,
    plim_oracle, vh_estimate,
};
use rds_core::sampling::DesignSpec;
use rds_core::types::{FSpec, Population, Sample, SampleRecord, Unit};

fn arb_sample(max_degree: u32) -> impl Strategy<Value = Sample> {
    prop::collection::vec((0.0f64..=1.0, 1..=max_degree), 1..200).prop_map(|pairs| {
        let records = pairs
            .into_iter()
            .map(|(y, d)| SampleRecord::seed(y, d).unwrap())
            .collect();
        Sample::new(records, false).unwrap()
    })
}

fn arb_population(max_k: u32) -> impl Strategy<Value = Population> {
    (1..=max_k).prop_flat_map(|k_max| {
        prop::collection::vec((0.0f64..=1.0, 1..=k_max), 1..200)
            .prop_map(move |pairs| {
                let units = pairs
                    .into_iter()
                    .map(|(y, d)| Unit::new(y, d).unwrap())
                    .collect();
                Population::new(units, k_max, (0.0, 1.0)).unwrap()
            })
    })
}

fn arb_fspec(k_max: u32) -> impl Strategy<Value = FSpec> {
    prop_oneof![
        (0.0f64..2.0).prop_map(|alpha| FSpec::power(alpha).unwrap()),
        Just(FSpec::Constant),
        prop::collection::vec(0.05f64..10.0, k_max as usize..=k_max as usize).prop_map(
            move |values| {
                FSpec::table(
                    values
                        .into_iter()
                        .enumerate()
                        .map(|(i, v)| (i as u32 + 1, v))
                        .collect(),
                )
                .unwrap()
            }
        ),
    ]
}

proptest! {
    #[test]
    fn generalized_reduces_to_vh_and_naive(sample in arb_sample(12)) {
        let vh = vh_estimate(&sample).unwrap().value;
        let g_vh = generalized_estimate(&sample, &FSpec::vh()).unwrap().value;
        prop_assert!((vh - g_vh).abs() < 1e-12);

        let naive = naive_estimate(&sample).unwrap().value;
        let g_naive = generalized_estimate(&sample, &FSpec::Constant).unwrap().value;
        prop_assert!((naive - g_naive).abs() < 1e-12);
    }

    #[test]
    fn table_scale_cancels(
        sample in arb_sample(8),
        values in prop::collection::vec(0.05f64..10.0, 8),
        log_scale in -6.0f64..6.0,
    ) {
        let table: Vec<(u32, f64)> = values
            .iter()
            .enumerate()
            .map(|(i, v)| (i as u32 + 1, *v))
            .collect();
        let scale = 10f64.powf(log_scale);
        let scaled = table.iter().map(|&(k, v)| (k, v * scale)).collect();
        let a = generalized_estimate(&sample, &FSpec::table(table).unwrap()).unwrap().value;
        let b = generalized_estimate(&sample, &FSpec::table(scaled).unwrap()).unwrap().value;
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn grouped_form_agrees_with_record_form(
        sample in arb_sample(10),
        alpha in 0.0f64..2.0,
    ) {
        let f = FSpec::power(alpha).unwrap();
        let record = generalized_estimate(&sample, &f).unwrap().value;
        let grouped = generalized_estimate_grouped(&sample, &f).unwrap().value;
        prop_assert!((record - grouped).abs() < 1e-12);
    }

    #[test]
    fn estimates_are_convex_combinations(sample in arb_sample(10), alpha in 0.0f64..2.0) {
        let lo = sample.records().iter().map(|r| r.outcome()).fold(f64::INFINITY, f64::min);
        let hi = sample.records().iter().map(|r| r.outcome()).fold(f64::NEG_INFINITY, f64::max);
        let f = FSpec::power(alpha).unwrap();
        let value = generalized_estimate(&sample, &f).unwrap().value;
        prop_assert!(value >= lo - 1e-12 && value <= hi + 1e-12);
    }

    #[test]
    fn identification_matches_truth_for_any_valid_bernoulli_design(
        pop_and_f in arb_population(10).prop_flat_map(|pop| {
            let k = pop.k_max();
            (Just(pop), arb_fspec(k), 0.01f64..=1.0)
        }),
    ) {
        let (pop, f, c_frac) = pop_and_f;
        let max_f = (1..=pop.k_max()).map(|k| f.eval(k).unwrap()).fold(f64::NEG_INFINITY, f64::max);
        let design = DesignSpec::BernoulliDegree { f: f.clone(), c: c_frac / max_f };
        let oracle = identification_oracle(&pop, &design, None).unwrap();
        prop_assert!((oracle - pop.true_mean()).abs() < 1e-10);

        let plim = plim_oracle(&pop, &design, &f, None).unwrap();
        prop_assert!((plim - pop.true_mean()).abs() < 1e-12);
    }

    #[test]
    fn conditional_means_recombine_to_true_mean(pop in arb_population(10)) {
        let total: f64 = pop
            .conditional_means()
            .values()
            .map(|&(mean, count)| mean * count as f64 / pop.len() as f64)
            .sum();
        prop_assert!((total - pop.true_mean()).abs() < 1e-12);
    }
}
