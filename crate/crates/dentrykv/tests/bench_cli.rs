use std::process::Command;

use dentrykv::bench::{emit_report, key_for, run_workload, value_for, Benchmark, ReportFormat, WorkloadSpec, CSV_HEADER};
use dentrykv::EngineKind;

fn spec(bench: Benchmark, kind: EngineKind, dir: &tempfile::TempDir, num: u64) -> WorkloadSpec {
    let mut s = WorkloadSpec::new(bench, kind, dir.path().join("db"));
    s.num = num;
    s.sync = false;
    s.l0_limit = 100;
    s
}

#[test]
fn fill_user_bytes_are_exact() {
    for bench in [Benchmark::FillSeq, Benchmark::FillRandom] {
        let dir = tempfile::tempdir().unwrap();
        let r = run_workload(&spec(bench, EngineKind::Dentry, &dir, 3_000)).unwrap();
        assert_eq!(r.phases.len(), 1);
        assert_eq!(r.phases[0].ops, 3_000);
        assert_eq!(r.phases[0].user_bytes, 3_000 * (16 + 100));
        let amp = r.phases[0].write_amp().unwrap();
        assert!(amp >= 1.0, "{bench}: {amp}");
    }
}

#[test]
fn fillseq_counters_are_deterministic() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let r = run_workload(&spec(Benchmark::FillSeq, EngineKind::Dentry, &dir, 2_000)).unwrap();
        let p = &r.phases[0];
        (p.user_bytes, p.counters.data_bytes_written, p.counters.files_created, p.counters.links_created)
    };
    assert_eq!(run(), run());
}

#[test]
fn workload_data_is_seeded() {
    assert_eq!(key_for(42, 16), key_for(42, 16));
    assert_eq!(key_for(42, 16).len(), 16);
    assert_ne!(key_for(1, 16), key_for(2, 16));
    assert_eq!(value_for(5, 64, 1), value_for(5, 64, 1));
    assert_ne!(value_for(5, 64, 1), value_for(5, 64, 2));
}

#[test]
fn wdr_verifies_reads_on_both_engines() {
    for kind in [EngineKind::Dentry, EngineKind::Packed] {
        let dir = tempfile::tempdir().unwrap();
        let r = run_workload(&spec(Benchmark::Wdr, kind, &dir, 2_000)).unwrap();
        let names: Vec<&str> = r.phases.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["write", "delete", "read"]);
        assert_eq!(r.phase("delete").unwrap().ops, 1_000);
        assert_eq!(r.phase("read").unwrap().write_amp(), None);
    }
}

#[test]
fn read_benchmarks_run_after_their_fill() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_workload(&spec(Benchmark::ReadRandom, EngineKind::Packed, &dir, 1_500)).unwrap();
    assert_eq!(r.phases.len(), 2);
    assert_eq!(r.phases[1].ops, 1_500);
    assert_eq!(r.phases[1].user_bytes, 0);
}

fn parse_csv(text: &str) -> Vec<Vec<String>> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn human_and_csv_reports_agree() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_workload(&spec(Benchmark::Wdw, EngineKind::Dentry, &dir, 1_500)).unwrap();
    let csv = parse_csv(&emit_report(&r, ReportFormat::Csv));
    let human = emit_report(&r, ReportFormat::Human);
    let rows: Vec<Vec<&str>> = human.lines().skip(2).map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(csv.len(), 4);
    assert_eq!(rows.len(), csv.len());
    for (c, h) in csv.iter().zip(&rows) {
        assert_eq!(c.len(), h.len());
        for (a, b) in c.iter().zip(h) {
            if a.is_empty() {
                assert_eq!(*b, "-");
            } else {
                assert_eq!(a, b);
            }
        }
    }
    assert_eq!(csv.last().unwrap()[0], "overall");
    let sum: u64 = csv[..3].iter().map(|r| r[4].parse::<u64>().unwrap()).sum();
    assert_eq!(csv[3][4].parse::<u64>().unwrap(), sum);
}

#[test]
fn binary_prints_csv() {
    let out = Command::new(env!("CARGO_BIN_EXE_dentrykv-bench"))
        .args(["--engine", "packed", "--benchmark", "fillrandom", "--num", "800", "--sync", "off", "--format", "csv"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = parse_csv(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "fillrandom");
    assert_eq!(rows[0][1], "800");
}

#[test]
fn binary_rejects_bad_input() {
    let bin = env!("CARGO_BIN_EXE_dentrykv-bench");
    let out = Command::new(bin).args(["--benchmark", "nope"]).output().unwrap();
    assert!(!out.status.success());

    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("junk"), b"x").unwrap();
    let out = Command::new(bin)
        .args(["--benchmark", "fillseq", "--num", "10", "--db"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(dir.path().join("junk").exists());
}
