use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::*;

fn store(budget: usize) -> (tempfile::TempDir, TieredStore) {
    let dir = tempfile::tempdir().unwrap();
    let s = TieredStore::open(dir.path(), TieredConfig {
        hot_budget_bytes: budget,
        ..TieredConfig::default()
    })
    .unwrap();
    (dir, s)
}

fn value(key: u64, version: u64) -> Vec<u8> {
    let len = (key ^ version) as usize % 61 + 1;
    (0..len).map(|i| (key as usize + version as usize * 7 + i) as u8).collect()
}

#[test]
fn tier_ref_round_trips() {
    for r in [TierRef::Hot(0), TierRef::Hot(REF_LIMIT - 1), TierRef::Cold(0), TierRef::Cold(REF_LIMIT - 1)] {
        let p = r.to_payload();
        assert!(p < crate::hash::PAYLOAD_LIMIT);
        assert_eq!(TierRef::from_payload(p), r);
    }
    assert_eq!(TierRef::Cold(5).to_payload() >> 51, 1);
    assert_eq!(TierRef::Hot(5).to_payload() >> 51, 0);
}

#[test]
fn record_codec_round_trips() {
    let mut buf = encode_header().to_vec();
    encode_record(7, b"hello", &mut buf);
    encode_record(9, b"", &mut buf);
    assert_eq!(&buf[..8], b"NBVL\x01\x00\x00\x00");
    assert_eq!(&buf[8..20], &[7, 0, 0, 0, 0, 0, 0, 0, 5, 0, 0, 0]);
    let recs = decode_log(&buf).unwrap();
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[0], (8, Record { key: 7, value: b"hello" }));
    assert_eq!(recs[1].1.key, 9);
    assert!(matches!(decode_log(&buf[..buf.len() - 1]), Err(TieredError::Truncated { .. })));
    assert!(matches!(decode_header(b"NBVL\x02\x00\x00\x00"), Err(TieredError::BadHeader)));
}

#[test]
fn put_get_and_overwrite() {
    let (_d, s) = store(1 << 20);
    assert_eq!(s.get(1).unwrap(), None);
    s.put(1, b"a").unwrap();
    assert_eq!(s.get(1).unwrap().unwrap(), b"a");
    s.put(1, b"bb").unwrap();
    assert_eq!(s.get(1).unwrap().unwrap(), b"bb");
    assert_eq!(s.usage().hot_bytes, 2);
    assert_eq!(s.len(), 1);
    assert!(matches!(s.put(u64::MAX, b"x"), Err(TieredError::SentinelKey(_))));
}

#[test]
fn random_puts_match_oracle() {
    let (_d, s) = store(usize::MAX);
    let mut rng = StdRng::seed_from_u64(1);
    let mut oracle = HashMap::new();
    for i in 0..100_000u64 {
        let k = rng.random_range(0..50_000u64);
        let v = value(k, i);
        s.put(k, &v).unwrap();
        oracle.insert(k, v);
    }
    for _ in 0..100_000 {
        let k = rng.random_range(0..60_000u64);
        assert_eq!(s.get(k).unwrap(), oracle.get(&k).cloned());
    }
}

#[test]
fn bulk_load_spills_past_budget_to_log() {
    let (_d, s) = store(1_000);
    let recs: Vec<(u64, Vec<u8>)> = (0..100u64).map(|k| (k, vec![k as u8; 50])).collect();
    assert_eq!(s.bulk_load(recs.iter().map(|(k, v)| (*k, v))).unwrap(), 80);
    assert_eq!(s.usage().hot_bytes, 1_000);
    for (k, v) in &recs {
        assert_eq!(s.get(*k).unwrap().as_ref(), Some(v));
    }
}

#[test]
fn get_many_matches_get_for_every_engine() {
    use crate::engine::{Engine, EngineConfig};
    let dir = tempfile::tempdir().unwrap();
    let config = TieredConfig {
        hot_budget_bytes: 5_000,
        promote_on_read: false,
        ..TieredConfig::default()
    };
    let s = TieredStore::open_sized(dir.path(), config, 2_000).unwrap();
    s.bulk_load((0..2_000u64).map(|k| (k * 3, value(k, 2)))).unwrap();
    let keys: Vec<u64> = (0..3_000u64).collect();
    let expected: Vec<_> = keys.iter().map(|&k| s.get(k).unwrap()).collect();
    for e in Engine::ALL {
        let before = s.stats().log_value_reads;
        assert_eq!(s.get_many(&keys, &EngineConfig::new(e)).unwrap(), expected, "{e}");
        let cold = expected.iter().zip(&keys).filter(|(v, k)| v.is_some() && matches!(s.tier_of(**k), Some(TierRef::Cold(_)))).count();
        assert_eq!(s.stats().log_value_reads - before, cold as u64);
    }
}

#[test]
fn evict_to_larger_target_is_noop() {
    let (_d, s) = store(1 << 20);
    s.put(1, b"abc").unwrap();
    assert_eq!(s.evict_pass(3).unwrap(), 0);
    assert_eq!(s.evict_pass(1 << 20).unwrap(), 0);
}

#[test]
fn eviction_follows_lru_order() {
    let (_d, s) = store(1 << 20);
    let n = 100u64;
    for k in 0..n {
        s.put(k, &[k as u8; 10]).unwrap();
    }
    for k in (0..n).filter(|k| k % 2 == 0) {
        s.get(k).unwrap();
    }
    assert_eq!(s.evict_pass(500).unwrap(), 50);
    for k in 0..n {
        let expected = if k % 2 == 0 { TierRef::Hot(0) } else { TierRef::Cold(0) };
        assert_eq!(
            std::mem::discriminant(&s.tier_of(k).unwrap()),
            std::mem::discriminant(&expected),
            "key {k}"
        );
    }
}

#[test]
fn demoted_ticks_never_exceed_retained_under_quiescence() {
    let (_d, s) = store(1 << 20);
    let mut rng = StdRng::seed_from_u64(2);
    for k in 0..500u64 {
        s.put(k, &value(k, 0)).unwrap();
    }
    for _ in 0..2_000 {
        s.get(rng.random_range(0..500)).unwrap();
    }
    let before: HashMap<u64, u64> = s.hot_ticks().into_iter().collect();
    s.evict_pass(s.usage().hot_bytes / 3).unwrap();
    let retained: HashMap<u64, u64> = s.hot_ticks().into_iter().collect();
    let min_retained = retained.values().min().copied().unwrap();
    let max_demoted = before
        .iter()
        .filter(|(k, _)| !retained.contains_key(k))
        .map(|(_, t)| *t)
        .max()
        .unwrap();
    assert!(max_demoted < min_retained);
}

#[test]
fn cold_get_reads_log_once_and_promotes() {
    let (_d, s) = store(1 << 20);
    for k in 0..1_000u64 {
        s.put(k, &value(k, 1)).unwrap();
    }
    s.evict_pass(0).unwrap();
    assert_eq!(s.usage().hot_bytes, 0);
    for k in 0..1_000u64 {
        let before = s.stats();
        assert_eq!(s.get(k).unwrap().unwrap(), value(k, 1));
        let after = s.stats();
        assert_eq!(after.log_value_reads - before.log_value_reads, 1);
        assert_eq!(after.cold_reads - before.cold_reads, 1);
        assert!(matches!(s.tier_of(k), Some(TierRef::Hot(_))));
        // second read is hot
        s.get(k).unwrap();
        assert_eq!(s.stats().log_value_reads, after.log_value_reads);
    }
    assert_eq!(s.stats().promotions, 1_000);
}

#[test]
fn cold_get_without_promotion_stays_cold() {
    let dir = tempfile::tempdir().unwrap();
    let s = TieredStore::open(dir.path(), TieredConfig {
        promote_on_read: false,
        ..TieredConfig::default()
    })
    .unwrap();
    s.put(5, b"five").unwrap();
    s.evict_pass(0).unwrap();
    for _ in 0..3 {
        assert_eq!(s.get(5).unwrap().unwrap(), b"five");
    }
    assert!(matches!(s.tier_of(5), Some(TierRef::Cold(_))));
    assert_eq!(s.stats().log_value_reads, 3);
}

#[test]
fn corrupted_record_fails_loudly() {
    let (_d, s) = store(1 << 20);
    s.put(42, b"payload").unwrap();
    s.evict_pass(0).unwrap();
    let Some(TierRef::Cold(off)) = s.tier_of(42) else {
        panic!("not demoted")
    };
    s.scribble_log(off, &43u64.to_le_bytes()).unwrap();
    assert!(matches!(s.get(42), Err(TieredError::Corruption { key: 42, .. })));
}

#[test]
fn arena_full_evicts_then_backpressures() {
    let (_d, s) = store(100);
    for k in 0..20u64 {
        s.put(k, &[1; 10]).unwrap();
    }
    assert!(s.usage().hot_bytes <= 100);
    assert!(s.stats().demotions > 0);
    for k in 0..20u64 {
        assert_eq!(s.get(k).unwrap().unwrap(), vec![1; 10]);
    }
    assert!(matches!(s.put(99, &[0; 101]), Err(TieredError::BackPressure { .. })));
    assert_eq!(s.get(99).unwrap(), None);
}

#[test]
fn compaction_of_clean_log_reclaims_nothing() {
    let (_d, s) = store(1 << 20);
    for k in 0..100u64 {
        s.put(k, &value(k, 0)).unwrap();
    }
    s.evict_pass(0).unwrap();
    assert_eq!(s.compact_log().unwrap(), 0);
    for k in 0..100u64 {
        assert_eq!(s.get(k).unwrap().unwrap(), value(k, 0));
    }
}

#[test]
fn compaction_reclaims_overwritten_records() {
    let (_d, s) = store(1 << 20);
    for k in 0..200u64 {
        s.put(k, &value(k, 0)).unwrap();
    }
    s.evict_pass(0).unwrap();
    let mut dead = 0u64;
    for k in (0..200u64).step_by(2) {
        dead += (RECORD_HEADER_LEN + value(k, 0).len()) as u64;
        s.put(k, &value(k, 1)).unwrap();
    }
    assert_eq!(s.usage().garbage_bytes, dead);
    let old = s.log_path();
    assert!(s.compact_log().unwrap() >= dead);
    assert!(!old.exists());
    assert_eq!(s.usage().garbage_bytes, 0);
    for k in 0..200u64 {
        let v = if k % 2 == 0 { 1 } else { 0 };
        assert_eq!(s.get(k).unwrap().unwrap(), value(k, v));
    }
}

#[test]
fn maintenance_thread_enforces_watermarks() {
    let dir = tempfile::tempdir().unwrap();
    let s = Arc::new(
        TieredStore::open(dir.path(), TieredConfig {
            hot_budget_bytes: 10_000,
            ..TieredConfig::default()
        })
        .unwrap(),
    );
    for k in 0..95u64 {
        s.put(k, &[0; 100]).unwrap();
    }
    let m = Maintenance::spawn(Arc::clone(&s), Duration::from_millis(5));
    let deadline = std::time::Instant::now() + Duration::from_secs(5);
    while s.usage().hot_bytes > 7_000 && std::time::Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(5));
    }
    drop(m);
    assert!(s.usage().hot_bytes <= 7_000);
}

/// Readers check every get against the latest committed version of the key
/// while one mutator puts, evicts and compacts.
#[test]
fn concurrent_gets_are_linearizable() {
    let dir = tempfile::tempdir().unwrap();
    let s = Arc::new(
        TieredStore::open(dir.path(), TieredConfig {
            hot_budget_bytes: 40_000,
            ..TieredConfig::default()
        })
        .unwrap(),
    );
    let keys = 2_000u64;
    // versions[k] is the newest version whose put has returned; a get may
    // return anything from the version committed before it started to the
    // one in flight when it ended
    let versions: Arc<Vec<AtomicU64>> = Arc::new((0..keys).map(|_| AtomicU64::new(0)).collect());
    for k in 0..keys {
        s.put(k, &value(k, 0)).unwrap();
    }
    let stop = Arc::new(AtomicBool::new(false));
    let readers: Vec<_> = (0..3)
        .map(|r| {
            let (s, versions, stop) = (Arc::clone(&s), Arc::clone(&versions), Arc::clone(&stop));
            std::thread::spawn(move || {
                let mut rng = StdRng::seed_from_u64(r);
                let mut n = 0u64;
                while !stop.load(Ordering::Relaxed) {
                    let k = rng.random_range(0..keys);
                    let lo = versions[k as usize].load(Ordering::Acquire);
                    let got = s.get(k).unwrap().expect("key present");
                    let hi = versions[k as usize].load(Ordering::Acquire) + 1;
                    assert!((lo..=hi).any(|v| got == value(k, v)), "key {k}");
                    n += 1;
                }
                n
            })
        })
        .collect();
    let mut rng = StdRng::seed_from_u64(99);
    for round in 0..30_000u64 {
        match rng.random_range(0..100) {
            0..=89 => {
                let k = rng.random_range(0..keys);
                let v = versions[k as usize].load(Ordering::Relaxed) + 1;
                s.put(k, &value(k, v)).unwrap();
                versions[k as usize].store(v, Ordering::Release);
            }
            90..=97 => {
                s.evict_pass(rng.random_range(0..20_000)).unwrap();
            }
            _ => {
                s.compact_log().unwrap();
            }
        }
        if round % 5_000 == 0 {
            std::thread::yield_now();
        }
    }
    stop.store(true, Ordering::Relaxed);
    let reads: u64 = readers.into_iter().map(|h| h.join().unwrap()).sum();
    assert!(reads > 0);
    for k in 0..keys {
        assert_eq!(s.get(k).unwrap().unwrap(), value(k, versions[k as usize].load(Ordering::Relaxed)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn store_matches_oracle(ops in prop::collection::vec((0u8..5, 0u64..64, 0u64..8), 1..300)) {
        let (_d, s) = store(300);
        let mut oracle: HashMap<u64, Vec<u8>> = HashMap::new();
        for (op, k, v) in ops {
            match op {
                0 | 1 => {
                    let val = value(k, v);
                    s.put(k, &val).unwrap();
                    oracle.insert(k, val);
                }
                2 => { s.evict_pass(v as usize * 20).unwrap(); }
                3 => { s.compact_log().unwrap(); }
                _ => {
                    let got = s.get(k).unwrap();
                    prop_assert_eq!(got, oracle.get(&k).cloned());
                }
            }
        }
        for (k, v) in &oracle {
            let got = s.get(*k).unwrap();
            prop_assert_eq!(got.as_ref(), Some(v));
        }
    }
}
