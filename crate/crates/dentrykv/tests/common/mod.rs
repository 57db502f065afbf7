#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Duration;

use dentrykv::{Engine, EngineConfig, EngineKind};
use dentrykv_core::KvRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Oracle = BTreeMap<Vec<u8>, Vec<u8>>;
pub type Layout = BTreeMap<u8, Vec<(Vec<u8>, Vec<KvRecord>)>>;
pub type ReadResult = Option<Vec<(Vec<u8>, Vec<u8>)>>;

/// Small tables so a few thousand operations exercise every compaction path.
pub fn small_config(dir: &Path, kind: EngineKind) -> EngineConfig {
    let mut c = EngineConfig::new(dir);
    c.engine_kind = kind;
    c.background_compaction = false;
    c.sync_enabled = false;
    c.memtable_bytes = 16 << 10;
    c.l0_limit_files = 60;
    c.sstdir_file_target = 25;
    c.wal_grace = Duration::ZERO;
    c.max_level = 4;
    c
}

#[derive(Debug, Clone)]
pub enum Op {
    Put(Vec<u8>, Vec<u8>),
    Delete(Vec<u8>),
    Get(Vec<u8>),
    Scan(Vec<u8>, Vec<u8>),
}

pub fn key(i: u32) -> Vec<u8> {
    format!("key{i:05}").into_bytes()
}

/// A seeded mix of puts, deletes, gets and short scans over `keys` keys.
pub fn random_script(seed: u64, len: usize, keys: u32, value_len: (usize, usize)) -> Vec<Op> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| {
            let k = key(rng.random_range(0..keys));
            match rng.random_range(0..100) {
                0..45 => {
                    let n = rng.random_range(value_len.0..=value_len.1);
                    let mut v = vec![0u8; n];
                    rng.fill(&mut v[..]);
                    Op::Put(k, v)
                }
                45..60 => Op::Delete(k),
                60..95 => Op::Get(k),
                _ => {
                    let lo = rng.random_range(0..keys);
                    let hi = lo + rng.random_range(0..40);
                    Op::Scan(key(lo), key(hi))
                }
            }
        })
        .collect()
}

/// Expected result of a read, or `None` for writes.
pub fn apply_oracle(oracle: &mut Oracle, op: &Op) -> ReadResult {
    match op {
        Op::Put(k, v) => {
            oracle.insert(k.clone(), v.clone());
            None
        }
        Op::Delete(k) => {
            oracle.remove(k);
            None
        }
        Op::Get(k) => Some(oracle.get(k).map(|v| vec![(k.clone(), v.clone())]).unwrap_or_default()),
        Op::Scan(lo, hi) => Some(if lo < hi { oracle.range(lo.clone()..hi.clone()).map(|(k, v)| (k.clone(), v.clone())).collect() } else { vec![] }),
    }
}

pub fn apply_engine(engine: &Engine, op: &Op) -> ReadResult {
    match op {
        Op::Put(k, v) => {
            engine.put(k, v).unwrap();
            None
        }
        Op::Delete(k) => {
            engine.delete(k).unwrap();
            None
        }
        Op::Get(k) => Some(engine.get(k).unwrap().map(|v| vec![(k.clone(), v)]).unwrap_or_default()),
        Op::Scan(lo, hi) => Some(engine.scan(lo, Some(hi)).unwrap()),
    }
}

pub fn contents(engine: &Engine) -> Vec<(Vec<u8>, Vec<u8>)> {
    engine.scan(b"", None).unwrap()
}

pub fn oracle_contents(oracle: &Oracle) -> Vec<(Vec<u8>, Vec<u8>)> {
    oracle.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
}

/// Per-level `(key, records)` lists, ignoring how they are split into
/// tables.
pub fn layout(engine: &Engine) -> Layout {
    let mut out = Layout::new();
    for (h, entries) in engine.dump_tables().unwrap() {
        out.entry(h.id.level).or_default().extend(entries);
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| (&a.0, a.1.first().map(|r| r.seq)).cmp(&(&b.0, b.1.first().map(|r| r.seq))));
    }
    out
}

/// Table numbers found under each level directory.
pub fn tables_on_disk(engine: &Engine) -> BTreeSet<(u8, u64)> {
    let mut out = BTreeSet::new();
    for level in 0..=engine.config().max_level {
        for name in engine.store().list_dir(&format!("L{level}")).unwrap() {
            let digits = name.strip_suffix(".sst").unwrap_or(&name);
            if let Ok(n) = digits.parse() {
                out.insert((level, n));
            }
        }
    }
    out
}

pub fn tables_in_version(engine: &Engine) -> BTreeSet<(u8, u64)> {
    engine.version().all_handles().map(|h| (h.id.level, h.id.dir_no)).collect()
}
