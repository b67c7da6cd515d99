//! Study-level Monte Carlo behavior: estimates converge to the exact
//! probability limits the oracles predict, across designs and grid cells.

use rds_core::experiments::{
    run_study, scenario_grid, DesignConfig, EstimatorSpec, PopulationMode, PopulationSpec,
    Scenario, SCENARIO_SCHEMA,
};
use rds_core::population::{DegreeDistribution, MeanSpec, NetworkConfig, NoiseSpec, OutcomeModel};
use rds_core::sampling::{Referral, SeedRule};
use rds_core::types::FSpec;

fn base_scenario() -> Scenario {
    Scenario {
        schema: SCENARIO_SCHEMA.into(),
        name: "mc".into(),
        seed: 2024,
        replicates: 150,
        sizes: vec![200, 400],
        population_mode: PopulationMode::Redraw,
        population: PopulationSpec {
            size: 4000,
            degree: DegreeDistribution::Uniform { k_max: 6 },
            outcome: OutcomeModel {
                mean: MeanSpec::Logistic {
                    intercept: -1.2,
                    slope: 0.35,
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

/// Wherever an exact probability limit exists, the empirical mean estimate
/// should sit within 3 paired MC standard errors of it in at least 95% of
/// rows across a small scenario grid.
#[test]
fn plim_coherence_across_a_grid() {
    let mut base = base_scenario();
    base.design = DesignConfig::NonIgnorableTilt {
        f: FSpec::vh(),
        c: None,
        gamma: 0.0,
    };
    let cells = scenario_grid(
        &base,
        &[
            (
                "design.gamma".to_string(),
                vec![
                    toml::Value::Float(0.0),
                    toml::Value::Float(0.5),
                    toml::Value::Float(1.0),
                ],
            ),
            (
                "population.size".to_string(),
                vec![toml::Value::Integer(3000), toml::Value::Integer(6000)],
            ),
        ],
    )
    .unwrap();
    assert_eq!(cells.len(), 6);

    let mut total_rows = 0;
    let mut within = 0;
    for cell in &cells {
        let report = run_study(cell).unwrap();
        for row in &report.rows {
            let (Some(gap), Some(gap_sd)) = (row.plim_gap_mean, row.plim_gap_sd) else {
                panic!("tilt designs admit exact plims");
            };
            total_rows += 1;
            let gap_se = gap_sd / (cell.replicates as f64).sqrt();
            if gap.abs() <= 3.0 * gap_se {
                within += 1;
            }
        }
    }
    assert_eq!(total_rows, 6 * 2 * 2);
    assert!(
        within as f64 >= 0.95 * total_rows as f64,
        "{within}/{total_rows} rows within 3 MC SE of their plim"
    );
}

/// Under a tilted design the VH estimator converges to its plim, which is
/// *not* the truth: the bias is real and exactly predicted.
#[test]
fn tilt_bias_matches_the_exact_prediction() {
    let mut scenario = base_scenario();
    scenario.design = DesignConfig::NonIgnorableTilt {
        f: FSpec::vh(),
        c: None,
        gamma: 1.0,
    };
    scenario.sizes = vec![400];
    scenario.replicates = 300;
    let report = run_study(&scenario).unwrap();
    let row = &report.rows[0];
    assert_eq!(row.estimator, "vh");
    let gap = row.plim_gap_mean.unwrap().abs();
    let gap_se = row.plim_gap_sd.unwrap() / (scenario.replicates as f64).sqrt();
    assert!(gap <= 3.0 * gap_se, "gap {gap} vs se {gap_se}");
    let plim = row.plim.unwrap();
    assert!(
        (plim - report.truth_mean).abs() > 0.01,
        "tilt must move the limit away from the truth"
    );
    assert!(row.bias.abs() > 5.0 * row.mc_se, "bias is detectable");
}

/// Walk and coupon designs run end to end through the study driver, with
/// graph diagnostics and truncation counts aggregated.
#[test]
fn walk_and_coupon_studies_aggregate_diagnostics() {
    let mut scenario = base_scenario();
    scenario.population.size = 600;
    scenario.population.degree = DegreeDistribution::Table {
        weights: vec![0.0, 0.0, 1.0, 1.0, 1.0],
    };
    scenario.network = Some(NetworkConfig::default());
    scenario.design = DesignConfig::RandomWalk {
        seed_rule: SeedRule::DegreeProportional,
        with_replacement: true,
        referral: Referral::Uniform,
        allow_restart: true,
    };
    scenario.sizes = vec![500, 1500];
    scenario.replicates = 60;
    let report = run_study(&scenario).unwrap();
    assert_eq!(report.diagnostics.graphs_built, 120);
    assert!(report.diagnostics.connected_count >= 110, "min degree 3 keeps almost every realization connected");
    assert_eq!(report.diagnostics.bipartite_count, 0);

    // VH under the classical walk: bias shrinks with walk length and the
    // largest size is within noise of zero.
    let vh_rows: Vec<_> = report.rows.iter().filter(|r| r.estimator == "vh").collect();
    let last = vh_rows.last().unwrap();
    assert!(
        last.bias.abs() <= 3.0 * last.mc_se,
        "walk VH bias {} vs mc_se {}",
        last.bias,
        last.mc_se
    );

    scenario.design = DesignConfig::CouponRds {
        seeds: 4,
        coupons: 3,
        max_waves: 40,
        with_replacement: false,
    };
    scenario.sizes = vec![300];
    let report = run_study(&scenario).unwrap();
    // Coupon RDS has no exact law: plims are absent, not faked.
    for row in &report.rows {
        assert!(row.plim.is_none());
    }
    // Without replacement on 600 nodes, a 300-target chain can die early;
    // short samples are flagged, not failed.
    assert!(report.diagnostics.replicates_total == 60);
}
