use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use dentrykv::bench::{emit_report, run_workload, Benchmark, ReportFormat, WorkloadSpec};
use dentrykv::EngineKind;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EngineArg {
    Dentry,
    Packed,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BenchArg {
    Fillseq,
    Fillrandom,
    Readseq,
    Readrandom,
    Wdw,
    Wdr,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Human,
    Csv,
}

/// Runs a db_bench-style workload against the dentry or packed engine and
/// reports latency and write amplification per phase.
#[derive(Debug, Parser)]
#[command(name = "dentrykv-bench", version)]
struct Args {
    #[arg(long, value_enum, default_value = "dentry")]
    engine: EngineArg,
    #[arg(long, value_enum)]
    benchmark: BenchArg,
    #[arg(long, default_value_t = 100_000)]
    num: u64,
    #[arg(long, default_value_t = 16)]
    key_size: usize,
    #[arg(long, default_value_t = 100)]
    value_size: usize,
    /// Share of first-stage keys deleted by wdw and wdr.
    #[arg(long, default_value_t = 50)]
    delete_pct: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Database directory; must be empty or absent. Defaults to a
    /// temporary directory that is removed afterwards.
    #[arg(long)]
    db: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "on")]
    sync: OnOff,
    #[arg(long, default_value_t = 500)]
    l0_limit: u64,
    #[arg(long, value_enum, default_value = "human")]
    format: FormatArg,
}

fn main() -> ExitCode {
    env_logger::init();
    let args = Args::parse();
    let engine = match args.engine {
        EngineArg::Dentry => EngineKind::Dentry,
        EngineArg::Packed => EngineKind::Packed,
    };
    let benchmark = match args.benchmark {
        BenchArg::Fillseq => Benchmark::FillSeq,
        BenchArg::Fillrandom => Benchmark::FillRandom,
        BenchArg::Readseq => Benchmark::ReadSeq,
        BenchArg::Readrandom => Benchmark::ReadRandom,
        BenchArg::Wdw => Benchmark::Wdw,
        BenchArg::Wdr => Benchmark::Wdr,
    };
    let (db, scratch) = match args.db {
        Some(p) => {
            if std::fs::read_dir(&p).is_ok_and(|mut d| d.next().is_some()) {
                eprintln!("error: {} is not empty", p.display());
                return ExitCode::FAILURE;
            }
            (p, false)
        }
        None => (std::env::temp_dir().join(format!("dentrykv-bench-{}-{}", engine, std::process::id())), true),
    };

    let mut spec = WorkloadSpec::new(benchmark, engine, &db);
    spec.num = args.num;
    spec.key_size = args.key_size;
    spec.value_size = args.value_size;
    spec.delete_pct = args.delete_pct;
    spec.seed = args.seed;
    spec.sync = matches!(args.sync, OnOff::On);
    spec.l0_limit = args.l0_limit;
    let format = match args.format {
        FormatArg::Human => ReportFormat::Human,
        FormatArg::Csv => ReportFormat::Csv,
    };

    let result = run_workload(&spec);
    if scratch {
        let _ = std::fs::remove_dir_all(&db);
    }
    match result {
        Ok(report) => {
            print!("{}", emit_report(&report, format));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
