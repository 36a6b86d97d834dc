use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::*;
use crate::hash::{TableConfig, EMPTY_KEY};

fn table_with(n: usize, seed: u64) -> (Table, Vec<u64>) {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut t = Table::with_entries(n, TableConfig::default()).unwrap();
    let mut keys = Vec::with_capacity(n);
    while keys.len() < n {
        let k = rng.random::<u64>() >> 1;
        if t.insert(k, k >> 12).unwrap() != crate::InsertOutcome::Updated {
            keys.push(k);
        }
    }
    (t, keys)
}

/// `len` probe keys of which about `hit_ratio` are present.
fn probes(present: &[u64], len: usize, hit_ratio: f64, rng: &mut StdRng) -> Vec<u64> {
    (0..len)
        .map(|_| {
            if !present.is_empty() && rng.random_bool(hit_ratio) {
                present[rng.random_range(0..present.len())]
            } else {
                rng.random::<u64>() | (1 << 63)
            }
        })
        .collect()
}

fn all_engines() -> Vec<EngineConfig> {
    let mut v = Vec::new();
    for e in Engine::ALL {
        for (g, vg) in [(1, 1), (3, 2), (8, 3), (16, 4), (32, 2)] {
            let c = EngineConfig::new(e).with_group_size(g).with_vector_groups(vg);
            v.push(EngineConfig {
                prefetch: false,
                ..c.clone()
            });
            v.push(c);
        }
    }
    v
}

#[test]
fn engine_names_round_trip() {
    for e in Engine::ALL {
        assert_eq!(e.to_string().parse::<Engine>().unwrap(), e);
    }
    assert!("simd".parse::<Engine>().is_err());
}

#[test]
fn empty_batch_is_empty() {
    let (t, _) = table_with(100, 1);
    for c in all_engines() {
        assert!(batch_lookup(&t, &[], &c).is_empty());
    }
}

#[test]
fn empty_table_misses_everything() {
    let t = Table::new();
    let keys = [0, 1, 2, EMPTY_KEY, 12345];
    for c in all_engines() {
        assert_eq!(batch_lookup(&t, &keys, &c), vec![None; keys.len()]);
    }
}

#[test]
fn sentinel_key_always_misses() {
    let (t, keys) = table_with(1000, 2);
    let batch: Vec<u64> = keys.iter().copied().chain([EMPTY_KEY; 20]).collect();
    for c in all_engines() {
        let r = batch_lookup(&t, &batch, &c);
        assert!(r[keys.len()..].iter().all(Option::is_none), "{c:?}");
    }
}

#[test]
fn million_key_batch_matches_scalar() {
    let (t, keys) = table_with(200_000, 3);
    let mut rng = StdRng::seed_from_u64(4);
    let batch = probes(&keys, 1_000_000, 0.9, &mut rng);
    let expected = t.batch_lookup_scalar(&batch);
    for e in [Engine::Interleaved, Engine::Vectorized] {
        assert_eq!(batch_lookup(&t, &batch, &EngineConfig::new(e)), expected, "{e}");
    }
}

#[test]
fn engines_agree_across_hit_ratios() {
    let mut rng = StdRng::seed_from_u64(5);
    for (n, seed) in [(10, 6), (3_000, 7), (50_000, 8)] {
        let (t, keys) = table_with(n, seed);
        for hit in [0.0, 0.3, 0.9, 1.0] {
            for len in [1, 7, 8, 9, 100, 4_097] {
                let batch = probes(&keys, len, hit, &mut rng);
                let expected = t.batch_lookup_scalar(&batch);
                for c in all_engines() {
                    assert_eq!(batch_lookup(&t, &batch, &c), expected, "{c:?} n={n} hit={hit}");
                }
            }
        }
    }
}

#[test]
fn auto_resolves_by_table_size() {
    let small = Table::with_config(1 << 10, TableConfig::default()).unwrap();
    let c = EngineConfig::default();
    assert_eq!(c.resolve(&small), Engine::Vectorized);
    let tight = EngineConfig {
        auto_threshold_bytes: small.memory_bytes(),
        ..EngineConfig::default()
    };
    assert_eq!(tight.resolve(&small), Engine::Interleaved);
    assert_eq!(EngineConfig::new(Engine::Scalar).resolve(&small), Engine::Scalar);
}

#[test]
fn vectorized_reports_fast_path() {
    let (t, keys) = table_with(100, 9);
    let mut out = Vec::new();
    let stats = batch_lookup_into(&t, &keys, &EngineConfig::new(Engine::Vectorized), &mut out);
    assert_eq!(stats.engine, Engine::Vectorized);
    assert_eq!(stats.vector_fast_path, vector_fast_path_available());
}

#[test]
fn throughput_probe_is_positive() {
    let (t, keys) = table_with(10_000, 10);
    for e in [Engine::Scalar, Engine::Interleaved, Engine::Vectorized] {
        let tp = run_throughput_probe(&t, &keys, &EngineConfig::new(e), 3);
        assert!(tp.mops > 0.0);
        assert_eq!(tp.runs.len(), 3);
    }
}

#[test]
fn median_is_reported() {
    let mut calls = 0;
    let tp = measure_throughput(1, 5, || calls += 1);
    assert_eq!(calls, 6);
    let mut s = tp.runs.clone();
    s.sort_by(f64::total_cmp);
    assert_eq!(tp.mops, s[2]);
}

#[test]
fn tables_after_erase_agree() {
    let (mut t, keys) = table_with(20_000, 11);
    for k in keys.iter().step_by(3) {
        t.erase(*k);
    }
    let mut rng = StdRng::seed_from_u64(12);
    let batch = probes(&keys, 10_000, 0.5, &mut rng);
    let expected = t.batch_lookup_scalar(&batch);
    for c in all_engines() {
        assert_eq!(batch_lookup(&t, &batch, &c), expected, "{c:?}");
    }
}

proptest! {
    #[test]
    fn engines_equal_scalar(
        seed in any::<u64>(),
        n in 0usize..2_000,
        len in 0usize..300,
        hit in prop::sample::select(vec![0.0, 0.3, 0.9, 1.0]),
        g in 1usize..=32,
        vg in 1usize..=4,
    ) {
        let (t, keys) = table_with(n, seed);
        let mut rng = StdRng::seed_from_u64(seed ^ 1);
        let batch = probes(&keys, len, hit, &mut rng);
        let expected = t.batch_lookup_scalar(&batch);
        for e in Engine::ALL {
            prop_assert_eq!(&batch_lookup(&t, &batch, &EngineConfig::new(e).with_group_size(g).with_vector_groups(vg)), &expected);
        }
    }
}
