mod common;

use std::io::Write;

use common::*;
use dentrykv::manifest::{manifest_file_name, read_current};
use dentrykv::{Engine, EngineKind, Error, StepOutcome};

fn filled(dir: &std::path::Path, kind: EngineKind) -> (Engine, Oracle) {
    let engine = Engine::open(small_config(dir, kind)).unwrap();
    let mut oracle = Oracle::new();
    for op in &random_script(21, 2_500, 400, (8, 120)) {
        apply_oracle(&mut oracle, op);
        apply_engine(&engine, op);
    }
    engine.run_to_quiescence().unwrap();
    (engine, oracle)
}

#[test]
fn orphan_tables_are_removed_at_open() {
    for kind in [EngineKind::Dentry, EngineKind::Packed] {
        let dir = tempfile::tempdir().unwrap();
        let (engine, oracle) = filled(dir.path(), kind);
        let cfg = engine.config().clone();
        drop(engine);
        let stray = match kind {
            EngineKind::Dentry => {
                std::fs::create_dir_all(dir.path().join("L1/999990")).unwrap();
                std::fs::write(dir.path().join("L1/999990/stray"), b"junk").unwrap();
                dir.path().join("L1/999990")
            }
            EngineKind::Packed => {
                std::fs::write(dir.path().join("L2/999991.sst"), b"junk").unwrap();
                dir.path().join("L2/999991.sst")
            }
        };
        let engine = Engine::open(cfg).unwrap();
        assert!(!stray.exists(), "{kind}");
        assert_eq!(tables_on_disk(&engine), tables_in_version(&engine));
        assert_eq!(contents(&engine), oracle_contents(&oracle));
    }
}

#[test]
fn missing_table_is_fatal() {
    for kind in [EngineKind::Dentry, EngineKind::Packed] {
        let dir = tempfile::tempdir().unwrap();
        let (engine, _) = filled(dir.path(), kind);
        let cfg = engine.config().clone();
        let victim = engine.version().all_handles().next().unwrap().id;
        drop(engine);
        let path = dir.path().join(victim.rel_path());
        match kind {
            EngineKind::Dentry => std::fs::remove_dir_all(&path).unwrap(),
            EngineKind::Packed => std::fs::remove_file(path.with_extension("sst")).unwrap(),
        }
        assert!(matches!(Engine::open(cfg), Err(Error::Corruption(_))), "{kind}");
    }
}

#[test]
fn torn_manifest_tail_is_ignored() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, oracle) = filled(dir.path(), EngineKind::Dentry);
    let cfg = engine.config().clone();
    let n = read_current(engine.store()).unwrap().unwrap();
    drop(engine);
    let mut f = std::fs::OpenOptions::new().append(true).open(dir.path().join(manifest_file_name(n))).unwrap();
    f.write_all(&[0x55, 0, 0, 0, 9, 1, 2]).unwrap();
    drop(f);
    let engine = Engine::open(cfg).unwrap();
    assert_eq!(contents(&engine), oracle_contents(&oracle));
}

#[test]
fn garbage_current_is_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, _) = filled(dir.path(), EngineKind::Dentry);
    let cfg = engine.config().clone();
    drop(engine);
    std::fs::write(dir.path().join("CURRENT"), b"MANIFEST-xyz\n").unwrap();
    assert!(matches!(Engine::open(cfg), Err(Error::Corruption(_))));
}

#[test]
fn failed_manifest_sync_keeps_the_old_version() {
    for kind in [EngineKind::Dentry, EngineKind::Packed] {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path(), kind);
        cfg.sync_enabled = true;
        let engine = Engine::open(cfg).unwrap();
        for i in 0..200 {
            engine.put(&key(i), b"value").unwrap();
        }
        let before = engine.version();
        engine.store().fail_next_sync("MANIFEST");
        assert!(engine.flush().is_err());
        assert_eq!(*engine.version(), *before);
        assert_eq!(tables_on_disk(&engine), tables_in_version(&engine));
        assert_eq!(engine.get(&key(7)).unwrap().unwrap(), b"value");
        // The next commit writes a fresh manifest and succeeds.
        engine.flush().unwrap();
        assert_eq!(engine.version().level(0).len(), 1);
        let cfg = engine.config().clone();
        drop(engine);
        let engine = Engine::open(cfg).unwrap();
        assert_eq!(contents(&engine).len(), 200);
    }
}

#[test]
fn kill_during_background_work_recovers() {
    for kind in [EngineKind::Dentry, EngineKind::Packed] {
        for budget in [5u64, 40, 200, 900] {
            let dir = tempfile::tempdir().unwrap();
            let mut cfg = small_config(dir.path(), kind);
            cfg.sync_enabled = true;
            cfg.sync_per_write = true;
            let engine = Engine::open(cfg.clone()).unwrap();
            let mut oracle = Oracle::new();
            for op in &random_script(budget, 1_500, 200, (4, 64)) {
                apply_oracle(&mut oracle, op);
                apply_engine(&engine, op);
            }
            engine.store().crash_after(budget);
            while let Ok(o) = engine.compact_step() {
                if o == StepOutcome::Idle {
                    engine.flush().ok();
                    if engine.store().is_crashed() {
                        break;
                    }
                    engine.compact_all().ok();
                    break;
                }
            }
            drop(engine);
            let engine = Engine::open(cfg).unwrap();
            assert_eq!(contents(&engine), oracle_contents(&oracle), "{kind} budget {budget}");
            assert_eq!(tables_on_disk(&engine), tables_in_version(&engine));
            assert!(engine.version().check_disjoint());
        }
    }
}

#[test]
fn unsynced_tail_may_be_lost_but_prefix_survives() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), EngineKind::Dentry);
    let engine = Engine::open(cfg.clone()).unwrap();
    for i in 0..100 {
        engine.put(&key(i), &[1; 10]).unwrap();
    }
    // Tear the log mid-record.
    engine.store().crash_after(0);
    assert!(engine.put(&key(100), &[2; 10]).is_err());
    drop(engine);
    let engine = Engine::open(cfg).unwrap();
    let got = contents(&engine);
    assert_eq!(got.len(), 100);
    assert_eq!(engine.get(&key(100)).unwrap(), None);
}

#[test]
fn writer_is_poisoned_after_log_failure() {
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::open(small_config(dir.path(), EngineKind::Dentry)).unwrap();
    engine.put(b"a", b"1").unwrap();
    engine.store().crash_after(0);
    assert!(engine.put(b"b", b"2").is_err());
    assert!(matches!(engine.put(b"c", b"3"), Err(Error::WriterFailed(_))));
    assert_eq!(engine.get(b"a").unwrap().unwrap(), b"1");
    assert_eq!(engine.get(b"b").unwrap(), None);
}
