//! JSONL and CSV files, and re-import of a finished run.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use opwalk_core::density::DensityField;
use opwalk_core::pmf::{AveragedLaw, SpatialPmf};
use rayon::ThreadPool;
use serde_json::Value;

use crate::config::{Format, Kind};
use crate::error::{HarnessError, Result};
use crate::experiments::{derivative_law, derivative_report};
use crate::records::{replica_fields, ReplicaRecord, SummaryRow, REPLICA_CSV_FIELDS, SUMMARY_FIELDS};
use crate::run::{create, ExperimentRecord, RunPaths};

fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    HarnessError::malformed(path, e.to_string())
}

pub fn write_jsonl(path: &Path, records: &[ReplicaRecord]) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    for r in records {
        writeln!(w, "{}", r.to_json_line()).map_err(|e| HarnessError::io(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<ReplicaRecord>> {
    let f = fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        let rec = serde_json::from_str(&line).map_err(|e| HarnessError::malformed(path, format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Summary table; an empty slice gives a header-only file.
pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(create(path)?);
    w.write_record(SUMMARY_FIELDS).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(SUMMARY_FIELDS) {
        return Err(HarnessError::malformed(path, "unexpected summary header"));
    }
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

/// Long-format per-replica table: one row per scalar, with `index` the
/// position inside array fields.
pub fn write_replicas_csv(path: &Path, records: &[ReplicaRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(create(path)?);
    w.write_record(REPLICA_CSV_FIELDS).map_err(|e| csv_err(path, e))?;
    for rec in records {
        let kind = rec.kind();
        let value = serde_json::to_value(rec).expect("records serialize");
        let (replica, seed) = (value["replica"].to_string(), value["seed"].to_string());
        for &field in &replica_fields(kind)[3..] {
            let mut row = |index: String, v: &Value| {
                let text = match v {
                    Value::Null => String::new(),
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                w.write_record([kind.name(), &replica, &seed, field, &index, &text])
            };
            match &value[field] {
                Value::Array(items) => {
                    for (i, v) in items.iter().enumerate() {
                        row(i.to_string(), v).map_err(|e| csv_err(path, e))?;
                    }
                }
                v => row(String::new(), v).map_err(|e| csv_err(path, e))?,
            }
        }
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Pmf as CSV with columns `x0..x{d-1}, mass`, plus `stderr` when given.
pub fn write_pmf_csv<W: Write>(out: W, pmf: &SpatialPmf, stderr: Option<&[f64]>) -> csv::Result<()> {
    let d = pmf.dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    header.push("mass".into());
    if stderr.is_some() {
        header.push("stderr".into());
    }
    w.write_record(&header)?;
    for (i, (x, m)) in pmf.iter().enumerate() {
        let mut row: Vec<String> = x.coords(d).iter().map(i64::to_string).collect();
        row.push(m.to_string());
        if let Some(se) = stderr {
            row.push(se[i].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_law_csv<W: Write>(out: W, law: &AveragedLaw) -> csv::Result<()> {
    write_pmf_csv(out, &law.pmf, Some(&law.stderr))
}

/// Density field as CSV with columns `x0..x{d-1}, phi, depth`.
pub fn write_density_csv<W: Write>(out: W, field: &DensityField) -> csv::Result<()> {
    let d = field.region.d;
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    header.push("phi".into());
    header.push("depth".into());
    w.write_record(&header)?;
    let depth = field.depth.to_string();
    for (x, v) in field.iter() {
        let mut row: Vec<String> = x.coords(d).iter().map(i64::to_string).collect();
        row.push(v.to_string());
        row.push(depth.clone());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the record files of a run into `dir`: the JSONL log (if not
/// already there), the summary CSV, the record JSON and, for
/// [`Format::Csv`], the long per-replica CSV.
pub fn export(record: &ExperimentRecord, dir: &Path, format: Format) -> Result<Vec<PathBuf>> {
    let paths = RunPaths::new(dir, record.kind);
    let mut written = Vec::new();
    if !paths.jsonl.exists() {
        write_jsonl(&paths.jsonl, &record.replicas)?;
        written.push(paths.jsonl.clone());
    }
    write_summary_csv(&paths.summary, &record.summary)?;
    written.push(paths.summary.clone());
    let json = serde_json::to_string_pretty(record).expect("record serializes");
    fs::write(&paths.record, json + "\n").map_err(|e| HarnessError::io(&paths.record, e))?;
    written.push(paths.record.clone());
    if format == Format::Csv {
        write_replicas_csv(&paths.replicas_csv, &record.replicas)?;
        written.push(paths.replicas_csv.clone());
    }
    Ok(written)
}

/// Difference report, slope table and the law at the largest `n` of a
/// derivative run.
pub fn export_derivative(pool: &ThreadPool, record: &ExperimentRecord, dir: &Path) -> Result<()> {
    let report = derivative_report(&record.replicas)?;
    let path = dir.join("derivative.report.json");
    fs::write(&path, serde_json::to_string_pretty(&report).expect("report serializes") + "\n").map_err(|e| HarnessError::io(&path, e))?;

    let path = dir.join("derivative.slopes.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["series", "slope", "intercept", "noise_dominated"]).map_err(|e| csv_err(&path, e))?;
    let fmt = |f: Option<f64>| f.map_or(String::new(), |v| v.to_string());
    let law = ["law_sup".to_string(), fmt(report.law_fit.as_ref().map(|f| f.slope)), fmt(report.law_fit.as_ref().map(|f| f.intercept)), "false".into()];
    w.write_record(&law).map_err(|e| csv_err(&path, e))?;
    for s in &report.series {
        let row = [
            s.kind.name().to_string(),
            fmt(s.fit.as_ref().map(|f| f.slope)),
            fmt(s.fit.as_ref().map(|f| f.intercept)),
            s.noise_dominated.to_string(),
        ];
        w.write_record(&row).map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(&path, e))?;

    let path = dir.join("derivative.law.csv");
    let law = derivative_law(pool, &record.config)?;
    write_law_csv(create(&path)?, &law).map_err(|e| csv_err(&path, e))
}

/// Reads back a run written by [`export`].
pub fn import(dir: &Path, kind: Kind) -> Result<ExperimentRecord> {
    let paths = RunPaths::new(dir, kind);
    let text = fs::read_to_string(&paths.record).map_err(|e| HarnessError::io(&paths.record, e))?;
    let mut record: ExperimentRecord = serde_json::from_str(&text).map_err(|e| HarnessError::malformed(&paths.record, e.to_string()))?;
    record.replicas = read_jsonl(&paths.jsonl)?;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use opwalk_core::density::DensityField;
    use opwalk_core::geometry::{BoxRegion, Point, Site};
    use opwalk_core::walk::analytic_law;

    #[test]
    fn law_and_density_tables() {
        let pmf = analytic_law(1, Site::origin(), 2);
        let mut buf = Vec::new();
        write_pmf_csv(&mut buf, &pmf, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x0,mass");
        assert_eq!(lines.len(), 6);
        let total: f64 = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-15);

        let field = DensityField::constant(3, BoxRegion::centered(2, Point::ORIGIN, 1), 7, 1.0);
        let mut buf = Vec::new();
        write_density_csv(&mut buf, &field).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x0,x1,phi,depth\n"));
        assert_eq!(text.lines().count(), 10);
        assert!(text.lines().skip(1).all(|l| l.ends_with(",1,7")));
    }
}
