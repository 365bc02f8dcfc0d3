//! Deterministic execution of a validated config.
//!
//! Replicas are computed on a rayon pool in fixed-size chunks; results of a
//! chunk are collected in index order and appended to the JSONL log one line
//! at a time, so the log is identical for any thread count. A rerun into the
//! same directory with the same config skips the indices already logged.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Format, Kind};
use crate::error::{HarnessError, Result};
use crate::experiments::{prepare, summarize, units, Validated};
use crate::export;
use crate::records::{ReplicaRecord, SummaryRow, SCHEMA_VERSION};

/// Work items handed to the pool at once, per thread.
const CHUNK_PER_THREAD: usize = 4;

/// Maps `f` over `indices` on `pool` and feeds the results to `sink` in
/// index order.
pub fn ordered_map<T: Send>(
    pool: &ThreadPool,
    indices: &[u64],
    f: impl Fn(u64) -> Result<T> + Sync,
    mut sink: impl FnMut(T) -> Result<()>,
) -> Result<()> {
    let chunk = (pool.current_num_threads() * CHUNK_PER_THREAD).max(1);
    for c in indices.chunks(chunk) {
        let out: Vec<Result<T>> = pool.install(|| c.par_iter().map(|&i| f(i)).collect());
        for r in out {
            sink(r?)?;
        }
    }
    Ok(())
}

pub fn build_pool(threads: usize) -> Result<ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| HarnessError::Conflict(format!("cannot start worker pool: {e}")))
}

/// Hex SHA-256 of the config's result-relevant content.
pub fn config_digest(cfg: &ExperimentConfig) -> String {
    let text = serde_json::to_string(&cfg.identity()).expect("config serializes");
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub threads: usize,
    /// Output directory; `None` keeps everything in memory.
    pub out: Option<PathBuf>,
    pub format: Format,
}

impl RunOptions {
    pub fn in_memory(threads: usize) -> Self {
        RunOptions { threads, out: None, format: Format::Jsonl }
    }

    /// Options taken from the config's `[experiment]` and `[output]` tables.
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        RunOptions {
            threads: cfg.experiment.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
            out: Some(cfg.output.dir.clone()),
            format: cfg.output.format,
        }
    }
}

/// Result of a run. Per-replica results live in `replicas` and in the JSONL
/// log; the rest is written to `<kind>.record.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub schema_version: u32,
    pub artifact_version: String,
    pub kind: Kind,
    pub config: ExperimentConfig,
    pub config_digest: String,
    pub replica_count: u64,
    /// Replicas found in an earlier partial log.
    pub resumed: u64,
    pub wall_clock_seconds: f64,
    pub summary: Vec<SummaryRow>,
    #[serde(skip)]
    pub replicas: Vec<ReplicaRecord>,
}

/// File names of one run inside its output directory.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub jsonl: PathBuf,
    pub meta: PathBuf,
    pub summary: PathBuf,
    pub record: PathBuf,
    pub replicas_csv: PathBuf,
}

impl RunPaths {
    pub fn new(dir: &Path, kind: Kind) -> Self {
        let f = |ext: &str| dir.join(format!("{}.{ext}", kind.name()));
        RunPaths {
            jsonl: f("jsonl"),
            meta: f("run.json"),
            summary: f("summary.csv"),
            record: f("record.json"),
            replicas_csv: f("replicas.csv"),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RunMeta {
    schema_version: u32,
    kind: Kind,
    config_digest: String,
}

/// Records already logged for this config. A trailing partial line (from an
/// interrupted write) is cut off.
fn load_existing(paths: &RunPaths, kind: Kind, digest: &str) -> Result<BTreeMap<u64, ReplicaRecord>> {
    let mut out = BTreeMap::new();
    let meta = match fs::read_to_string(&paths.meta) {
        Ok(text) => Some(serde_json::from_str::<RunMeta>(&text).map_err(|e| HarnessError::malformed(&paths.meta, e.to_string()))?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(HarnessError::io(&paths.meta, e)),
    };
    match meta {
        Some(m) if m.config_digest != digest => {
            return Err(HarnessError::Conflict(format!(
                "{} holds results of a different configuration; use another output directory",
                paths.jsonl.display()
            )))
        }
        None if paths.jsonl.exists() => {
            return Err(HarnessError::Conflict(format!("{} exists without run metadata", paths.jsonl.display())))
        }
        None => return Ok(out),
        Some(_) => {}
    }
    let bytes = match fs::read(&paths.jsonl) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(HarnessError::io(&paths.jsonl, e)),
    };
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if complete < bytes.len() {
        let f = OpenOptions::new().write(true).open(&paths.jsonl).map_err(|e| HarnessError::io(&paths.jsonl, e))?;
        f.set_len(complete as u64).map_err(|e| HarnessError::io(&paths.jsonl, e))?;
    }
    for line in BufReader::new(&bytes[..complete]).lines() {
        let line = line.map_err(|e| HarnessError::io(&paths.jsonl, e))?;
        let rec: ReplicaRecord = serde_json::from_str(&line).map_err(|e| HarnessError::malformed(&paths.jsonl, e.to_string()))?;
        if rec.kind() != kind {
            return Err(HarnessError::malformed(&paths.jsonl, format!("record of kind {}", rec.kind())));
        }
        if out.insert(rec.index(), rec).is_some() {
            return Err(HarnessError::malformed(&paths.jsonl, "duplicate replica index"));
        }
    }
    Ok(out)
}

/// Runs the experiment. With an output directory, replicas are appended to
/// `<kind>.jsonl` as they complete and the summary files are written at the
/// end.
pub fn run(v: &Validated, opts: &RunOptions) -> Result<ExperimentRecord> {
    let start = Instant::now();
    let cfg = v.config();
    let kind = cfg.kind();
    let digest = config_digest(cfg);
    let total = units(cfg);
    let pool = build_pool(opts.threads)?;

    let mut done = BTreeMap::new();
    let mut log = None;
    let paths = opts.out.as_deref().map(|d| RunPaths::new(d, kind));
    if let (Some(dir), Some(paths)) = (&opts.out, &paths) {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        done = load_existing(paths, kind, &digest)?;
        done.retain(|&i, _| i < total);
        let meta = RunMeta { schema_version: SCHEMA_VERSION, kind, config_digest: digest.clone() };
        fs::write(&paths.meta, serde_json::to_string_pretty(&meta).expect("meta serializes"))
            .map_err(|e| HarnessError::io(&paths.meta, e))?;
        let f = OpenOptions::new().create(true).append(true).open(&paths.jsonl).map_err(|e| HarnessError::io(&paths.jsonl, e))?;
        log = Some(f);
    }
    let resumed = done.len() as u64;
    let missing: Vec<u64> = (0..total).filter(|i| !done.contains_key(i)).collect();
    let in_order = match (done.keys().next_back(), missing.first()) {
        (Some(&last), Some(&first)) => last < first,
        _ => true,
    };
    if !missing.is_empty() {
        let f = prepare(&pool, v)?;
        let jsonl = paths.as_ref().map(|p| p.jsonl.clone()).unwrap_or_default();
        ordered_map(&pool, &missing, &f, |rec| {
            if let (Some(file), true) = (log.as_mut(), in_order) {
                writeln!(file, "{}", rec.to_json_line()).and_then(|_| file.flush()).map_err(|e| HarnessError::io(&jsonl, e))?;
            }
            done.insert(rec.index(), rec);
            Ok(())
        })?;
    }
    drop(log);
    let replicas: Vec<ReplicaRecord> = done.into_values().collect();
    if let (Some(paths), false) = (&paths, in_order) {
        export::write_jsonl(&paths.jsonl, &replicas)?;
    }
    let summary = summarize(cfg, &replicas)?;
    let record = ExperimentRecord {
        schema_version: SCHEMA_VERSION,
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        kind,
        config: cfg.clone(),
        config_digest: digest,
        replica_count: replicas.len() as u64,
        resumed,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        summary,
        replicas,
    };
    if let Some(dir) = &opts.out {
        export::export(&record, dir, opts.format)?;
        if kind == Kind::Derivative {
            export::export_derivative(&pool, &record, dir)?;
        }
    }
    Ok(record)
}

/// Opens `path` for writing, creating parent directories.
pub(crate) fn create(path: &Path) -> Result<File> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    File::create(path).map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::BoxEvent;
    use crate::experiments::validate;
    use crate::records::replica_fields;

    fn docs_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs")
    }

    fn small(kind: Kind) -> ExperimentConfig {
        let mut c = ExperimentConfig::defaults(kind);
        c.experiment.replicas = 3;
        match kind {
            Kind::SurvivalScan => {
                let s = c.survival_scan.as_mut().unwrap();
                s.p_values = vec![0.6, 0.9];
                s.horizon = 20;
            }
            Kind::Llt => {
                let s = c.llt.as_mut().unwrap();
                s.n_values = vec![10, 20];
                s.annealed_replicas = 20;
            }
            Kind::Concentration => {
                let s = c.concentration.as_mut().unwrap();
                s.depth = 6;
                s.m_values = vec![2, 4];
            }
            Kind::BoxEvents => {
                let s = c.box_events.as_mut().unwrap();
                s.event = BoxEvent::G2;
                s.big_n = 40;
                s.annealed_replicas = 20;
            }
            Kind::Encounters => {
                c.experiment.replicas = 100;
                c.encounters.as_mut().unwrap().big_n = 100;
            }
            Kind::Derivative => {
                c.derivative.as_mut().unwrap().n_values = vec![4, 8, 16, 32, 64];
            }
            Kind::Displacement => {
                let s = c.displacement.as_mut().unwrap();
                s.n_values = vec![5, 10];
                s.big_n = 10;
            }
            Kind::EnvChain => {
                c.env_chain.as_mut().unwrap().steps = 10;
            }
        }
        c
    }

    fn run_in(cfg: &ExperimentConfig, threads: usize, dir: &Path) -> ExperimentRecord {
        let v = validate(cfg).unwrap();
        run(&v, &RunOptions { threads, out: Some(dir.to_path_buf()), format: Format::Csv }).unwrap()
    }

    fn without_timing(mut r: ExperimentRecord) -> ExperimentRecord {
        r.wall_clock_seconds = 0.0;
        r
    }

    #[test]
    fn jsonl_fields_match_the_documented_schema() {
        let schema = fs::read_to_string(docs_dir().join("schema.md")).unwrap();
        for kind in Kind::ALL {
            let v = validate(&small(kind)).unwrap_or_else(|e| panic!("{kind}: {e:?}"));
            let rec = run(&v, &RunOptions::in_memory(2)).unwrap();
            let line = rec.replicas[0].to_json_line();
            let fields = replica_fields(kind);
            let obj: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&line).unwrap();
            let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
            let mut expected = fields.to_vec();
            keys.sort_unstable();
            expected.sort_unstable();
            assert_eq!(keys, expected, "{kind}");
            let pos: Vec<usize> = fields.iter().map(|f| line.find(&format!("\"{f}\":")).unwrap()).collect();
            assert!(pos.windows(2).all(|w| w[0] < w[1]), "{kind}: {line}");
            let row = format!("| `{}` | `{}` |", kind.name(), fields[3..].join(", "));
            assert!(schema.contains(&row), "schema.md lacks {row}");
        }
    }

    #[test]
    fn sample_configs_are_accepted_unchanged() {
        let mut seen = Vec::new();
        for entry in fs::read_dir(docs_dir().join("configs")).unwrap() {
            let path = entry.unwrap().path();
            let cfg = ExperimentConfig::load(&path).unwrap();
            validate(&cfg).unwrap_or_else(|e| panic!("{}: {e:?}", path.display()));
            seen.push(cfg.kind());
        }
        for k in Kind::ALL {
            assert!(seen.contains(&k), "no sample config for {k}");
        }
    }

    #[test]
    fn exact_environment_gives_zero_statistic() {
        let cfg = ExperimentConfig::load(&docs_dir().join("configs/llt-exact.toml")).unwrap();
        let rec = run(&validate(&cfg).unwrap(), &RunOptions::in_memory(2)).unwrap();
        for r in &rec.replicas {
            let ReplicaRecord::Llt(r) = r else { panic!() };
            assert!(r.statistic.iter().all(|&s| s <= 1e-9), "{:?}", r.statistic);
            assert!(r.z.iter().all(|&z| (z - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn output_does_not_depend_on_thread_count() {
        for kind in [Kind::Llt, Kind::BoxEvents, Kind::Encounters, Kind::EnvChain] {
            let mut cfg = small(kind);
            cfg.experiment.replicas = cfg.experiment.replicas.max(13);
            let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
            let ra = run_in(&cfg, 1, a.path());
            let rb = run_in(&cfg, 3, b.path());
            assert_eq!(without_timing(ra), without_timing(rb), "{kind}");
            for ext in ["jsonl", "summary.csv", "replicas.csv"] {
                let name = format!("{}.{ext}", kind.name());
                assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap(), "{name}");
            }
        }
    }

    #[test]
    fn single_replica_serial_and_parallel_agree() {
        for kind in Kind::ALL {
            let mut cfg = small(kind);
            if kind != Kind::Encounters && kind != Kind::Derivative {
                cfg.experiment.replicas = 1;
            }
            let v = validate(&cfg).unwrap();
            let a = run(&v, &RunOptions::in_memory(1)).unwrap();
            let b = run(&v, &RunOptions::in_memory(4)).unwrap();
            assert_eq!(without_timing(a), without_timing(b), "{kind}");
        }
    }

    #[test]
    fn interrupted_runs_resume_to_identical_output() {
        let mut cfg = small(Kind::Llt);
        cfg.experiment.replicas = 6;
        let (full, part) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_in(&cfg, 2, full.path());
        let expected = fs::read(full.path().join("llt.jsonl")).unwrap();

        run_in(&cfg, 2, part.path());
        let log = part.path().join("llt.jsonl");
        let ends: Vec<usize> = expected.iter().enumerate().filter(|(_, &b)| b == b'\n').map(|(i, _)| i + 1).collect();
        fs::write(&log, &expected[..ends[1] + 10]).unwrap();
        let again = run_in(&cfg, 3, part.path());
        assert_eq!(again.resumed, 2);
        assert_eq!(fs::read(&log).unwrap(), expected);

        let mut other = cfg.clone();
        other.experiment.seed += 1;
        let v = validate(&other).unwrap();
        let err = run(&v, &RunOptions { threads: 1, out: Some(part.path().to_path_buf()), format: Format::Jsonl }).unwrap_err();
        assert!(matches!(err, HarnessError::Conflict(_)), "{err}");

        let mut threads_only = cfg.clone();
        threads_only.experiment.threads = Some(5);
        assert_eq!(config_digest(&threads_only), config_digest(&cfg));
        let rerun = run_in(&threads_only, 1, part.path());
        assert_eq!(rerun.resumed, 6);
    }

    #[test]
    fn out_of_order_logs_are_rewritten_sorted() {
        let cfg = small(Kind::Displacement);
        let (full, part) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_in(&cfg, 1, full.path());
        let expected = fs::read_to_string(full.path().join("displacement.jsonl")).unwrap();
        run_in(&cfg, 1, part.path());
        let lines: Vec<&str> = expected.lines().collect();
        fs::write(part.path().join("displacement.jsonl"), format!("{}\n", lines[2])).unwrap();
        run_in(&cfg, 2, part.path());
        assert_eq!(fs::read_to_string(part.path().join("displacement.jsonl")).unwrap(), expected);
    }

    #[test]
    fn exported_runs_reimport_and_resummarize() {
        for kind in Kind::ALL {
            let dir = tempfile::tempdir().unwrap();
            let rec = run_in(&small(kind), 2, dir.path());
            let back = export::import(dir.path(), kind).unwrap();
            assert_eq!(back, rec, "{kind}");
            assert_eq!(crate::experiments::summarize(&back.config, &back.replicas).unwrap(), rec.summary, "{kind}");
            let rows = export::read_summary_csv(&dir.path().join(format!("{}.summary.csv", kind.name()))).unwrap();
            assert_eq!(rows, rec.summary, "{kind}");
            let csv = fs::read_to_string(dir.path().join(format!("{}.replicas.csv", kind.name()))).unwrap();
            assert!(csv.starts_with("kind,replica,seed,field,index,value\n"));
        }
        let dir = tempfile::tempdir().unwrap();
        for f in ["derivative.report.json", "derivative.slopes.csv", "derivative.law.csv"] {
            assert!(!dir.path().join(f).exists());
        }
        run_in(&small(Kind::Derivative), 1, dir.path());
        for f in ["derivative.report.json", "derivative.slopes.csv", "derivative.law.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }

    #[test]
    fn empty_summaries_give_header_only_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        export::write_summary_csv(&path, &[]).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "kind,statistic,param,value,stderr,ci_low,ci_high,count\n");
        assert!(export::read_summary_csv(&path).unwrap().is_empty());
        let rows = crate::experiments::summarize(&small(Kind::Llt), &[]).unwrap();
        assert!(rows.iter().all(|r| r.count == 0));
    }

    #[test]
    fn ordered_map_preserves_order_and_stops_on_error() {
        let pool = build_pool(3).unwrap();
        let idx: Vec<u64> = (0..50).collect();
        let mut got = Vec::new();
        ordered_map(&pool, &idx, |i| Ok(i * i), |v| {
            got.push(v);
            Ok(())
        })
        .unwrap();
        assert_eq!(got, idx.iter().map(|i| i * i).collect::<Vec<_>>());
        let mut seen = 0;
        let r = ordered_map(
            &pool,
            &idx,
            |i| if i == 20 { Err(HarnessError::Conflict("x".into())) } else { Ok(i) },
            |_| {
                seen += 1;
                Ok(())
            },
        );
        assert!(r.is_err());
        assert_eq!(seen, 20);
    }
}
