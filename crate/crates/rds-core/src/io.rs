//! File formats: RDS recruitment CSV ingestion/emission, scenario configs
//! (TOML), and study reports (structured JSON or a flat table).
//!
//! The CSV schema is `id,degree,outcome,recruiter_id,wave` (exact header,
//! UTF-8, comma-separated); an empty `recruiter_id` marks a seed. Numbers in
//! emitted files use the shortest round-trip decimal form, so a simulate ->
//! emit -> ingest -> estimate pipeline is bit-exact.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiments::{Scenario, StudyReport, REPORT_SCHEMA};
use crate::types::{Sample, SampleRecord};

/// Exact header required in RDS data files.
pub const RDS_CSV_HEADER: &str = "id,degree,outcome,recruiter_id,wave";

/// A validated RDS data file, plus non-fatal warnings (currently: recruit
/// waves that are not recruiter wave + 1).
#[derive(Debug, Clone)]
pub struct IngestedSample {
    pub sample: Sample,
    pub warnings: Vec<String>,
}

/// Reads and validates an RDS recruitment CSV.
///
/// Hard errors (with line numbers): wrong header, malformed fields, degree
/// below 1, duplicate ids, recruiter ids that do not reference an earlier
/// row, seeds with nonzero wave. Wave values inconsistent with the
/// recruiter's wave + 1 are reported as warnings, not errors.
pub fn ingest_rds_csv(path: impl AsRef<Path>) -> Result<IngestedSample> {
    let content = std::fs::read_to_string(path)?;
    ingest_rds_csv_str(&content)
}

pub fn ingest_rds_csv_str(content: &str) -> Result<IngestedSample> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(content.as_bytes());

    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let header_line = headers.iter().collect::<Vec<_>>().join(",");
    if header_line != RDS_CSV_HEADER {
        return Err(Error::Csv {
            line: 1,
            message: format!("header `{header_line}` does not match `{RDS_CSV_HEADER}`"),
        });
    }

    let mut records: Vec<SampleRecord> = Vec::new();
    let mut warnings = Vec::new();
    let mut index_of_id: HashMap<String, usize> = HashMap::new();

    for (row_idx, row) in reader.records().enumerate() {
        let line = row_idx as u64 + 2; // header is line 1
        let row = row.map_err(|e| Error::Csv {
            line,
            message: e.to_string(),
        })?;
        if row.len() != 5 {
            return Err(Error::Csv {
                line,
                message: format!("expected 5 fields, found {}", row.len()),
            });
        }
        let id = row[0].trim().to_string();
        if id.is_empty() {
            return Err(Error::Csv {
                line,
                message: "empty id".into(),
            });
        }
        if index_of_id.contains_key(&id) {
            return Err(Error::Csv {
                line,
                message: format!("duplicate id `{id}`"),
            });
        }
        let degree: i64 = row[1].trim().parse().map_err(|_| Error::Csv {
            line,
            message: format!("cannot parse degree `{}`", &row[1]),
        })?;
        if degree < 1 {
            return Err(Error::Csv {
                line,
                message: format!("degree {degree} is below 1"),
            });
        }
        let outcome: f64 = row[2].trim().parse().map_err(|_| Error::Csv {
            line,
            message: format!("cannot parse outcome `{}`", &row[2]),
        })?;
        if !outcome.is_finite() {
            return Err(Error::Csv {
                line,
                message: format!("outcome {outcome} is not finite"),
            });
        }
        let recruiter_id = row[3].trim();
        let wave: u32 = row[4].trim().parse().map_err(|_| Error::Csv {
            line,
            message: format!("cannot parse wave `{}`", &row[4]),
        })?;

        let record = if recruiter_id.is_empty() {
            if wave != 0 {
                return Err(Error::Csv {
                    line,
                    message: format!("seed `{id}` has wave {wave}, expected 0"),
                });
            }
            SampleRecord::seed(outcome, degree as u32).map_err(|e| Error::Csv {
                line,
                message: e.to_string(),
            })?
        } else {
            let &recruiter_idx = index_of_id.get(recruiter_id).ok_or_else(|| Error::Csv {
                line,
                message: format!(
                    "recruiter_id `{recruiter_id}` does not reference an earlier row"
                ),
            })?;
            if wave == 0 {
                return Err(Error::Csv {
                    line,
                    message: format!("recruited `{id}` has wave 0"),
                });
            }
            let recruiter_wave = records[recruiter_idx].wave();
            if wave != recruiter_wave + 1 {
                warnings.push(format!(
                    "line {line}: wave {wave} of `{id}` is not recruiter wave {recruiter_wave} + 1"
                ));
            }
            SampleRecord::recruited(outcome, degree as u32, recruiter_idx, wave).map_err(|e| {
                Error::Csv {
                    line,
                    message: e.to_string(),
                }
            })?
        };

        index_of_id.insert(id, records.len());
        records.push(record);
    }

    let sample = Sample::new(records, false)?;
    Ok(IngestedSample { sample, warnings })
}

/// Serializes a sample to the RDS CSV schema. Simulated records get
/// synthetic ids `r0`, `r1`, ... in record order.
pub fn sample_to_csv(sample: &Sample) -> String {
    let mut out = String::from(RDS_CSV_HEADER);
    out.push('\n');
    for (idx, record) in sample.records().iter().enumerate() {
        let recruiter = record
            .recruiter()
            .map(|r| format!("r{r}"))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "r{idx},{},{},{recruiter},{}",
            record.reported_degree(),
            record.outcome(),
            record.wave()
        );
    }
    out
}

pub fn write_sample_csv(sample: &Sample, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, sample_to_csv(sample))?;
    Ok(())
}

/// Parses and validates a scenario config (TOML, strict keys).
pub fn parse_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let content = std::fs::read_to_string(path)?;
    parse_scenario_str(&content)
}

pub fn parse_scenario_str(content: &str) -> Result<Scenario> {
    let scenario: Scenario = toml::from_str(content).map_err(|e| Error::Parse(e.to_string()))?;
    scenario.validate()?;
    Ok(scenario)
}

/// Structured (JSON) report serialization: full fidelity, lossless
/// round-trip, deterministic bytes for a given report.
pub fn report_to_json(report: &StudyReport) -> String {
    let mut out = serde_json::to_string_pretty(report).expect("report serializes");
    out.push('\n');
    out
}

pub fn write_report_json(report: &StudyReport, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, report_to_json(report))?;
    Ok(())
}

pub fn parse_report(path: impl AsRef<Path>) -> Result<StudyReport> {
    parse_report_str(&std::fs::read_to_string(path)?)
}

pub fn parse_report_str(content: &str) -> Result<StudyReport> {
    let report: StudyReport =
        serde_json::from_str(content).map_err(|e| Error::Parse(e.to_string()))?;
    if report.schema != REPORT_SCHEMA {
        return Err(Error::Parse(format!(
            "report schema `{}` is not the supported `{REPORT_SCHEMA}`",
            report.schema
        )));
    }
    Ok(report)
}

/// Flat per-(estimator, size) table for plotting, one CSV row per study row.
pub fn report_to_table(report: &StudyReport) -> String {
    let mut out =
        String::from("estimator,n_nominal,n_realized_mean,mean_estimate,bias,sd,rmse,mc_se,plim\n");
    for row in &report.rows {
        let plim = row.plim.map(|p| p.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{plim}",
            row.estimator,
            row.n_nominal,
            row.n_realized_mean,
            row.mean_estimate,
            row.bias,
            row.sd,
            row.rmse,
            row.mc_se
        );
    }
    out
}

pub fn write_report_table(report: &StudyReport, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, report_to_table(report))?;
    Ok(())
}
