//! End-to-end tests of the `rds` binary: exit codes, output discipline, and
//! agreement with direct library calls.

use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rds_core::estimators::{generalized_estimate, naive_estimate, vh_estimate};
use rds_core::io::write_sample_csv;
use rds_core::population::{generate_population, DegreeDistribution, MeanSpec, NoiseSpec, OutcomeModel};
use rds_core::sampling::bernoulli_degree_sample;
use rds_core::types::FSpec;

fn rds(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rds"))
        .args(args)
        .output()
        .expect("binary runs")
}

const SCENARIO: &str = r#"
schema = "rds-scenario/v1"
name = "cli-test"
seed = 9
replicates = 25
sizes = [40, 80]

[population]
size = 600
degree = { kind = "uniform", k_max = 4 }

[population.outcome]
mean = { kind = "logistic", intercept = -0.8, slope = 0.35 }
noise = { kind = "bernoulli" }
bounds = [0.0, 1.0]

[design]
kind = "bernoulli-degree"
f = { kind = "power", alpha = 1.0 }

[[estimators]]
name = "vh"
f = { kind = "power", alpha = 1.0 }

[[estimators]]
name = "naive"
f = { kind = "constant" }
"#;

fn write_scenario(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("scenario.toml");
    std::fs::write(&path, SCENARIO).unwrap();
    path
}

#[test]
fn estimate_matches_library_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let dd = DegreeDistribution::Uniform { k_max: 6 };
    let om = OutcomeModel {
        mean: MeanSpec::Logistic {
            intercept: -0.4,
            slope: 0.25,
        },
        noise: NoiseSpec::Gaussian { sd: 0.11 },
        bounds: (0.0, 1.0),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let pop = generate_population(300, &dd, &om, None, &mut rng).unwrap();
    let sample = bernoulli_degree_sample(&pop, &FSpec::vh(), 0.12, &mut rng).unwrap();
    let csv_path = dir.path().join("sample.csv");
    write_sample_csv(&sample, &csv_path).unwrap();

    let out = rds(&[
        "estimate",
        "--input",
        csv_path.to_str().unwrap(),
        "--f",
        "power:1",
        "--f",
        "table:1=2,2=4,3=6,4=8,5=10,6=12",
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let mut lines = stdout.lines();

    let expect = |line: Option<&str>, name: &str, value: f64| {
        let line = line.unwrap();
        let (n, v) = line.split_once('\t').unwrap();
        assert_eq!(n, name);
        let parsed: f64 = v.parse().unwrap();
        assert_eq!(parsed.to_bits(), value.to_bits(), "{name} differs");
    };
    expect(lines.next(), "naive", naive_estimate(&sample).unwrap().value);
    expect(lines.next(), "vh", vh_estimate(&sample).unwrap().value);
    expect(
        lines.next(),
        "generalized[power:1]",
        generalized_estimate(&sample, &FSpec::vh()).unwrap().value,
    );
    let table: FSpec = "table:1=2,2=4,3=6,4=8,5=10,6=12".parse().unwrap();
    expect(
        lines.next(),
        "generalized[table:1=2,2=4,3=6,4=8,5=10,6=12]",
        generalized_estimate(&sample, &table).unwrap().value,
    );
    assert!(lines.next().is_none());
}

#[test]
fn malformed_data_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(
        &bad,
        "id,degree,outcome,recruiter_id,wave\ns1,4,1,,0\na2,0,1,s1,1\n",
    )
    .unwrap();
    let out = rds(&["estimate", "--input", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("line 3"), "{stderr}");

    let bad_header = dir.path().join("bad_header.csv");
    std::fs::write(&bad_header, "id,deg,outcome,recruiter_id,wave\n").unwrap();
    let out = rds(&["estimate", "--input", bad_header.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));

    let bad_f = dir.path().join("ok.csv");
    std::fs::write(&bad_f, "id,degree,outcome,recruiter_id,wave\ns1,4,1,,0\n").unwrap();
    let out = rds(&["estimate", "--input", bad_f.to_str().unwrap(), "--f", "power:x"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn usage_errors_exit_two() {
    let out = rds(&["estimate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = rds(&["no-such-subcommand"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_file_is_a_runtime_error() {
    let out = rds(&["estimate", "--input", "/nonexistent/nowhere.csv"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_is_byte_deterministic_and_thread_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_scenario(dir.path());
    let out_a = dir.path().join("a.json");
    let out_b = dir.path().join("b.json");
    let out_c = dir.path().join("c.json");

    for (path, threads) in [(&out_a, "1"), (&out_b, "1"), (&out_c, "8")] {
        let out = rds(&[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--threads",
            threads,
            "--out",
            path.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(&out_a).unwrap();
    let b = std::fs::read(&out_b).unwrap();
    let c = std::fs::read(&out_c).unwrap();
    assert_eq!(a, b, "same seed, same bytes");
    assert_eq!(a, c, "thread count must not change results");
}

#[test]
fn simulate_seed_override_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_scenario(dir.path());
    let base = rds(&["simulate", "--config", config.to_str().unwrap()]);
    let overridden = rds(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "12345",
    ]);
    assert!(base.status.success() && overridden.status.success());
    assert_ne!(base.stdout, overridden.stdout);
    let text = String::from_utf8(overridden.stdout).unwrap();
    assert!(text.contains("\"seed\": 12345"), "seed echoed in report");
}

#[test]
fn tabular_format_has_one_row_per_estimator_size() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_scenario(dir.path());
    let out = rds(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--format",
        "tabular",
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 1 + 2 * 2);
    assert_eq!(
        lines[0],
        "estimator,n_nominal,n_realized_mean,mean_estimate,bias,sd,rmse,mc_se,plim"
    );
}

#[test]
fn invalid_scenario_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, SCENARIO.replace("sizes = [40, 80]", "sizes = [80, 40]")).unwrap();
    let out = rds(&["simulate", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));

    // Unknown config key: strict parsing.
    let config2 = dir.path().join("bad2.toml");
    std::fs::write(&config2, SCENARIO.replace("seed = 9", "seed = 9\nwhat = 1")).unwrap();
    let out = rds(&["simulate", "--config", config2.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn oracle_reports_identification_and_audit() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_scenario(dir.path());
    let json_path = dir.path().join("oracle.json");
    let out = rds(&[
        "oracle",
        "--config",
        config.to_str().unwrap(),
        "--out",
        json_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("identification:"));
    assert!(stdout.contains("plim[naive]:"));
    assert!(stdout.contains("ignorability audit"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(json["schema"], "rds-oracle/v1");
    let truth = json["truth_mean"].as_f64().unwrap();
    let ident = json["identification"]["Ok"].as_f64().unwrap();
    assert!((truth - ident).abs() < 1e-10);
}

#[test]
fn shipped_scenarios_stay_valid() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut found = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            rds_core::io::parse_scenario(&path)
                .unwrap_or_else(|e| panic!("{} no longer parses: {e}", path.display()));
            found += 1;
        }
    }
    assert!(found >= 5, "expected the curated scenario set, found {found}");
}

#[test]
fn grid_writes_cells_and_index() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_scenario(dir.path());
    let out_dir = dir.path().join("cells");
    let out = rds(&[
        "grid",
        "--config",
        config.to_str().unwrap(),
        "--set",
        "population.size=400",
        "--set",
        "population.size=800",
        "--set",
        "replicates=10",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let index: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("index.json")).unwrap())
            .unwrap();
    let cells = index.as_array().unwrap();
    assert_eq!(cells.len(), 2);
    for cell in cells {
        let file = cell["file"].as_str().unwrap();
        assert!(out_dir.join(file).exists());
    }

    let out = rds(&[
        "grid",
        "--config",
        config.to_str().unwrap(),
        "--set",
        "bogus.axis=1",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}
