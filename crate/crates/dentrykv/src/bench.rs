//! db_bench-style workloads with per-phase write amplification.
//!
//! Keys are zero-padded decimal counters of a fixed width; values are a
//! deterministic function of the key index and the seed. Counters are
//! reset at every phase boundary, and each phase ends only once background
//! compaction has gone idle, so the compaction a phase causes is charged to
//! that phase.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::{Engine, EngineConfig, EngineKind};
use crate::error::Error;
use crate::storage::IoCounters;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Benchmark {
    FillSeq,
    FillRandom,
    ReadSeq,
    ReadRandom,
    /// Write, delete a share of the keys, write as many new keys.
    Wdw,
    /// Write, delete a share of the keys, read every first-stage key.
    Wdr,
}

impl FromStr for Benchmark {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "fillseq" => Benchmark::FillSeq,
            "fillrandom" => Benchmark::FillRandom,
            "readseq" => Benchmark::ReadSeq,
            "readrandom" => Benchmark::ReadRandom,
            "wdw" => Benchmark::Wdw,
            "wdr" => Benchmark::Wdr,
            other => return Err(format!("unknown benchmark {other:?}")),
        })
    }
}

impl std::fmt::Display for Benchmark {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Benchmark::FillSeq => "fillseq",
            Benchmark::FillRandom => "fillrandom",
            Benchmark::ReadSeq => "readseq",
            Benchmark::ReadRandom => "readrandom",
            Benchmark::Wdw => "wdw",
            Benchmark::Wdr => "wdr",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Human,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "human" => Ok(ReportFormat::Human),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorkloadSpec {
    pub benchmark: Benchmark,
    pub num: u64,
    pub key_size: usize,
    pub value_size: usize,
    pub delete_pct: u32,
    pub seed: u64,
    pub engine_kind: EngineKind,
    pub db: PathBuf,
    pub sync: bool,
    pub l0_limit: u64,
    pub value_cache_bytes: Option<usize>,
    pub memtable_bytes: Option<usize>,
}

impl WorkloadSpec {
    pub fn new(benchmark: Benchmark, engine_kind: EngineKind, db: impl Into<PathBuf>) -> WorkloadSpec {
        WorkloadSpec {
            benchmark,
            num: 100_000,
            key_size: 16,
            value_size: 100,
            delete_pct: 50,
            seed: 1,
            engine_kind,
            db: db.into(),
            sync: true,
            l0_limit: 500,
            value_cache_bytes: None,
            memtable_bytes: None,
        }
    }

    /// Engine settings for this run. The per-table file target is lowered
    /// to the L0 limit when the limit is below it.
    pub fn engine_config(&self) -> EngineConfig {
        let mut cfg = EngineConfig::new(&self.db);
        cfg.engine_kind = self.engine_kind;
        cfg.sync_enabled = self.sync;
        cfg.l0_limit_files = self.l0_limit;
        cfg.sstdir_file_target = cfg.sstdir_file_target.min(self.l0_limit);
        if let Some(b) = self.value_cache_bytes {
            cfg.value_cache_bytes = b;
        }
        if let Some(b) = self.memtable_bytes {
            cfg.memtable_bytes = b;
        }
        cfg
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Engine(#[from] Error),
    #[error("invalid workload: {0}")]
    Spec(String),
    #[error("verification failed: {0}")]
    Verify(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseReport {
    pub name: String,
    pub ops: u64,
    pub elapsed: Duration,
    /// Key plus value bytes of every put, key bytes of every delete.
    pub user_bytes: u64,
    pub counters: IoCounters,
}

impl PhaseReport {
    pub fn micros_per_op(&self) -> f64 {
        if self.ops == 0 {
            return 0.0;
        }
        self.elapsed.as_secs_f64() * 1e6 / self.ops as f64
    }

    /// `data_bytes_written / user_bytes`; `None` when nothing was written by
    /// the user.
    pub fn write_amp(&self) -> Option<f64> {
        (self.user_bytes > 0).then(|| self.counters.data_bytes_written as f64 / self.user_bytes as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub engine: EngineKind,
    pub benchmark: Benchmark,
    pub phases: Vec<PhaseReport>,
}

impl BenchReport {
    /// All phases summed.
    pub fn overall(&self) -> PhaseReport {
        let mut total = PhaseReport {
            name: "overall".into(),
            ops: 0,
            elapsed: Duration::ZERO,
            user_bytes: 0,
            counters: IoCounters::default(),
        };
        for p in &self.phases {
            total.ops += p.ops;
            total.elapsed += p.elapsed;
            total.user_bytes += p.user_bytes;
            let (a, b) = (&mut total.counters, &p.counters);
            a.data_bytes_written += b.data_bytes_written;
            a.files_created += b.files_created;
            a.links_created += b.links_created;
            a.entries_removed += b.entries_removed;
            a.dirs_created += b.dirs_created;
            a.dirs_removed += b.dirs_removed;
            a.syncs += b.syncs;
            a.renames += b.renames;
            a.bytes_read += b.bytes_read;
            a.file_opens += b.file_opens;
        }
        total
    }

    pub fn phase(&self, name: &str) -> Option<&PhaseReport> {
        self.phases.iter().find(|p| p.name == name)
    }
}

/// Zero-padded decimal key of `key_size` bytes.
pub fn key_for(index: u64, key_size: usize) -> Vec<u8> {
    format!("{index:0key_size$}").into_bytes()
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic value for key `index`.
pub fn value_for(index: u64, value_size: usize, seed: u64) -> Vec<u8> {
    let mut state = seed ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    let mut out = Vec::with_capacity(value_size + 8);
    while out.len() < value_size {
        out.extend_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    out.truncate(value_size);
    out
}

struct Runner<'a> {
    engine: &'a Engine,
    spec: &'a WorkloadSpec,
    phases: Vec<PhaseReport>,
}

impl Runner<'_> {
    fn phase(&mut self, name: &str, body: impl FnOnce(&Engine) -> Result<(u64, u64), BenchError>) -> Result<(), BenchError> {
        self.engine.wait_idle()?;
        self.engine.store().reset_counters();
        let start = Instant::now();
        let (ops, user_bytes) = body(self.engine)?;
        self.engine.wait_idle()?;
        let elapsed = start.elapsed();
        self.phases.push(PhaseReport { name: name.into(), ops, elapsed, user_bytes, counters: self.engine.counters() });
        Ok(())
    }

    fn fill(&mut self, name: &str, indices: &[u64]) -> Result<(), BenchError> {
        let spec = self.spec;
        self.phase(name, |e| {
            let mut user = 0;
            for &i in indices {
                let key = key_for(i, spec.key_size);
                let value = value_for(i, spec.value_size, spec.seed);
                e.put(&key, &value)?;
                user += (key.len() + value.len()) as u64;
            }
            Ok((indices.len() as u64, user))
        })
    }

    fn delete(&mut self, name: &str, indices: &[u64]) -> Result<(), BenchError> {
        let spec = self.spec;
        self.phase(name, |e| {
            let mut user = 0;
            for &i in indices {
                let key = key_for(i, spec.key_size);
                e.delete(&key)?;
                user += key.len() as u64;
            }
            Ok((indices.len() as u64, user))
        })
    }

    /// Reads `indices`, checking each against the expected contents.
    fn read(&mut self, name: &str, indices: &[u64], deleted: &[bool]) -> Result<(), BenchError> {
        let spec = self.spec;
        self.phase(name, |e| {
            for &i in indices {
                let got = e.get(&key_for(i, spec.key_size))?;
                let gone = deleted.get(i as usize).copied().unwrap_or(false);
                let ok = if gone { got.is_none() } else { got.as_deref() == Some(&value_for(i, spec.value_size, spec.seed)[..]) };
                if !ok {
                    return Err(BenchError::Verify(format!("key {i}: unexpected result {:?}", got.map(|v| v.len()))));
                }
            }
            Ok((indices.len() as u64, 0))
        })
    }
}

pub fn run_workload(spec: &WorkloadSpec) -> Result<BenchReport, BenchError> {
    if spec.key_size < 8 {
        return Err(BenchError::Spec("key size must be at least 8".into()));
    }
    if (spec.num.max(1) * 2 - 1).to_string().len() > spec.key_size {
        return Err(BenchError::Spec(format!("{} keys do not fit in {} digits", spec.num, spec.key_size)));
    }
    if spec.delete_pct > 100 {
        return Err(BenchError::Spec("delete percentage above 100".into()));
    }
    let engine = Engine::open(spec.engine_config())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let seq: Vec<u64> = (0..spec.num).collect();
    let mut shuffled = seq.clone();
    shuffled.shuffle(&mut rng);
    let mut r = Runner { engine: &engine, spec, phases: Vec::new() };

    match spec.benchmark {
        Benchmark::FillSeq => r.fill("fillseq", &seq)?,
        Benchmark::FillRandom => r.fill("fillrandom", &shuffled)?,
        Benchmark::ReadSeq => {
            r.fill("fillseq", &seq)?;
            r.read("readseq", &seq, &[])?;
        }
        Benchmark::ReadRandom => {
            r.fill("fillrandom", &shuffled)?;
            let mut order = seq.clone();
            order.shuffle(&mut rng);
            r.read("readrandom", &order, &[])?;
        }
        Benchmark::Wdw | Benchmark::Wdr => {
            r.fill("write", &shuffled)?;
            let count = (spec.num * spec.delete_pct as u64 / 100) as usize;
            let mut victims: Vec<u64> =
                rand::seq::index::sample(&mut rng, spec.num as usize, count).into_iter().map(|i| i as u64).collect();
            victims.shuffle(&mut rng);
            r.delete("delete", &victims)?;
            if spec.benchmark == Benchmark::Wdw {
                let mut fresh: Vec<u64> = (spec.num..2 * spec.num).collect();
                fresh.shuffle(&mut rng);
                r.fill("rewrite", &fresh)?;
            } else {
                let mut deleted = vec![false; spec.num as usize];
                for &v in &victims {
                    deleted[v as usize] = true;
                }
                let mut order = seq.clone();
                order.shuffle(&mut rng);
                r.read("read", &order, &deleted)?;
            }
        }
    }
    let phases = r.phases;
    engine.close()?;
    Ok(BenchReport { engine: spec.engine_kind, benchmark: spec.benchmark, phases })
}

pub const CSV_HEADER: &str = "phase,ops,micros_per_op,user_bytes,data_bytes_written,write_amp,files_created,links_created,entries_removed,dirs_created,dirs_removed,syncs,bytes_read";

fn amp_text(p: &PhaseReport) -> String {
    p.write_amp().map_or_else(|| "-".to_string(), |a| format!("{a:.4}"))
}

fn csv_row(p: &PhaseReport) -> String {
    let c = &p.counters;
    format!(
        "{},{},{:.3},{},{},{},{},{},{},{},{},{},{}",
        p.name,
        p.ops,
        p.micros_per_op(),
        p.user_bytes,
        c.data_bytes_written,
        p.write_amp().map_or_else(String::new, |a| format!("{a:.4}")),
        c.files_created,
        c.links_created,
        c.entries_removed,
        c.dirs_created,
        c.dirs_removed,
        c.syncs,
        c.bytes_read
    )
}

/// Renders a report. Both formats print the same numbers with the same
/// precision; an empty report is just the header.
pub fn emit_report(report: &BenchReport, format: ReportFormat) -> String {
    let mut rows: Vec<PhaseReport> = report.phases.clone();
    if !rows.is_empty() {
        rows.push(report.overall());
    }
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str(CSV_HEADER);
            out.push('\n');
            for p in &rows {
                out.push_str(&csv_row(p));
                out.push('\n');
            }
        }
        ReportFormat::Human => {
            let _ = writeln!(out, "engine: {}  benchmark: {}", report.engine, report.benchmark);
            let _ = writeln!(
                out,
                "{:<10} {:>9} {:>12} {:>12} {:>14} {:>9} {:>9} {:>9} {:>9} {:>7} {:>7} {:>6} {:>12}",
                "phase", "ops", "micros/op", "user_bytes", "data_written", "w_amp", "files", "links", "removed", "dirs+", "dirs-", "syncs", "bytes_read"
            );
            for p in &rows {
                let c = &p.counters;
                let _ = writeln!(
                    out,
                    "{:<10} {:>9} {:>12.3} {:>12} {:>14} {:>9} {:>9} {:>9} {:>9} {:>7} {:>7} {:>6} {:>12}",
                    p.name,
                    p.ops,
                    p.micros_per_op(),
                    p.user_bytes,
                    c.data_bytes_written,
                    amp_text(p),
                    c.files_created,
                    c.links_created,
                    c.entries_removed,
                    c.dirs_created,
                    c.dirs_removed,
                    c.syncs,
                    c.bytes_read
                );
            }
        }
    }
    out
}
