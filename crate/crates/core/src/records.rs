//! On-disk formats for calibration thresholds, attack results and reports.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{AverageRow, EvaluationReport, ReportRow};
use crate::pipeline::AttackResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdRecord {
    pub model_id: String,
    pub tau_f: f64,
    pub eer: f64,
    pub tau_c: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdsFile {
    pub models: Vec<ThresholdRecord>,
}

impl ThresholdsFile {
    pub fn get(&self, model_id: &str) -> Result<&ThresholdRecord> {
        self.models
            .iter()
            .find(|m| m.model_id == model_id)
            .ok_or_else(|| Error::UnknownModel(model_id.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Ok(Box<AttackResult>),
    Failed { error: String },
}

/// One line of a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub target_id: String,
    pub target_model_id: String,
    /// SHA-256 of the full run configuration.
    pub config_sha256: String,
    pub outcome: Outcome,
}

impl ResultRecord {
    pub fn result(&self) -> Option<&AttackResult> {
        match &self.outcome {
            Outcome::Ok(r) => Some(r),
            Outcome::Failed { .. } => None,
        }
    }
}

pub fn write_results(path: &Path, records: &[ResultRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::Malformed(format!("results line {}: {e}", n + 1)))?,
        );
    }
    Ok(out)
}

pub const REPORT_COLUMNS: [&str; 8] = [
    "target_id",
    "target_model",
    "eval_model",
    "similarity",
    "type1_hit",
    "type2_rate",
    "queries",
    "wall_time",
];

/// Marks per-model average rows in the target_id column.
pub const AVERAGE_ROW: &str = "average";
const CROSS_MODEL_TAG: &str = "# cross_model";

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Malformed(format!("{other:?}")),
    }
}

/// Detail rows, then one average row per (target model, evaluation model),
/// then a `#` summary block with the cross-model averages.
pub fn format_report(report: &EvaluationReport, failed_targets: usize) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_COLUMNS).map_err(csv_error)?;
    for r in &report.rows {
        w.write_record([
            r.target_id.clone(),
            r.target_model_id.clone(),
            r.eval_model_id.clone(),
            r.similarity.to_string(),
            r.type1_hit.to_string(),
            r.type2_rate.to_string(),
            r.queries.to_string(),
            r.wall_time.to_string(),
        ])
        .map_err(csv_error)?;
    }
    for a in &report.model_averages {
        w.write_record(average_fields(AVERAGE_ROW, a)).map_err(csv_error)?;
    }
    let mut text = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
        .expect("csv output is utf-8");
    text.push_str("# summary\n");
    for a in &report.cross_model {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let mut fields = average_fields(CROSS_MODEL_TAG, a);
        fields.push(a.rows.to_string());
        w.write_record(fields).map_err(csv_error)?;
        text.push_str(std::str::from_utf8(&w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("utf-8"));
    }
    text.push_str(&format!("# rows,{}\n# failed_targets,{failed_targets}\n", report.rows.len()));
    Ok(text)
}

fn average_fields(tag: &str, a: &AverageRow) -> Vec<String> {
    vec![
        tag.to_string(),
        a.target_model_id.clone(),
        a.eval_model_id.clone().unwrap_or_else(|| "*".into()),
        a.similarity.to_string(),
        a.type1.to_string(),
        a.type2.to_string(),
        a.queries.to_string(),
        a.wall_time.to_string(),
    ]
}

pub fn write_report(path: &Path, report: &EvaluationReport, failed_targets: usize) -> Result<()> {
    fs::write(path, format_report(report, failed_targets)?)?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Malformed(format!("report column {i} in {rec:?}")))
}

fn parse_average(rec: &csv::StringRecord) -> Result<AverageRow> {
    let eval = rec.get(2).unwrap_or("*");
    Ok(AverageRow {
        target_model_id: field(rec, 1)?,
        eval_model_id: (eval != "*").then(|| eval.to_string()),
        similarity: field(rec, 3)?,
        type1: field(rec, 4)?,
        type2: field(rec, 5)?,
        queries: field(rec, 6)?,
        wall_time: field(rec, 7)?,
        rows: if rec.len() > 8 { field(rec, 8)? } else { 0 },
    })
}

/// Inverse of [`format_report`].
pub fn parse_report(text: &str) -> Result<EvaluationReport> {
    let mut rows = Vec::new();
    let mut model_averages = Vec::new();
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        if rec.get(0) == Some(AVERAGE_ROW) {
            model_averages.push(parse_average(&rec)?);
        } else {
            rows.push(ReportRow {
                target_id: field(&rec, 0)?,
                target_model_id: field(&rec, 1)?,
                eval_model_id: field(&rec, 2)?,
                similarity: field(&rec, 3)?,
                type1_hit: field(&rec, 4)?,
                type2_rate: field(&rec, 5)?,
                queries: field(&rec, 6)?,
                wall_time: field(&rec, 7)?,
            });
        }
    }
    for a in &mut model_averages {
        a.rows = rows
            .iter()
            .filter(|r| r.target_model_id == a.target_model_id && Some(&r.eval_model_id) == a.eval_model_id.as_ref())
            .count();
    }
    let mut cross_model = Vec::new();
    for line in text.lines().filter(|l| l.starts_with(CROSS_MODEL_TAG)) {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(line.as_bytes());
        for rec in rdr.records() {
            cross_model.push(parse_average(&rec.map_err(csv_error)?)?);
        }
    }
    Ok(EvaluationReport {
        rows,
        model_averages,
        cross_model,
    })
}
