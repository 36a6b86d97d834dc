use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::*;
use crate::hash::PAYLOAD_MASK;
use crate::mix::splitmix64;
use crate::oracle::ChainingMap;

fn all_variants(config: &VariantConfig) -> Vec<Box<dyn ProbeTable>> {
    vec![
        Box::new(variant_coalesced(config).unwrap()),
        Box::new(variant_perfect_cellar(config).unwrap()),
        Box::new(variant_neighbor_probing(config).unwrap()),
        Box::new(variant_neighborhash(config).unwrap()),
        Box::new(variant_linear_relocation(config).unwrap()),
        Box::new(LinearProbingTable::new(config).unwrap()),
    ]
}

fn keys(n: usize, seed: u64) -> Vec<u64> {
    let mut s = seed;
    (0..n)
        .map(|_| {
            s = s.wrapping_add(1);
            splitmix64(s) & !(1 << 63)
        })
        .collect()
}

#[test]
fn names_are_distinct() {
    let v = all_variants(&VariantConfig::default());
    let mut names: Vec<_> = v.iter().map(|t| t.name()).collect();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), v.len());
}

#[test]
fn variants_reject_sentinel_and_large_payloads() {
    for mut t in all_variants(&VariantConfig::default()) {
        assert!(matches!(t.insert(EMPTY_KEY, 1), Err(HashError::SentinelKey)), "{}", t.name());
        assert!(matches!(t.insert(1, PAYLOAD_LIMIT), Err(HashError::PayloadTooLarge(_))), "{}", t.name());
        assert_eq!(t.lookup(EMPTY_KEY), None);
        assert!(t.is_empty());
    }
}

#[test]
fn variants_match_oracle_under_random_ops() {
    let mut rng = StdRng::seed_from_u64(7);
    for mut t in all_variants(&VariantConfig::with_capacity(16)) {
        let mut oracle = ChainingMap::new(3);
        for step in 0..60_000u64 {
            // small key space forces overwrites, erases of live keys and long chains
            let key = rng.random_range(0..4_000u64).wrapping_mul(0x9e37_79b9);
            match rng.random_range(0..10) {
                0..=4 => {
                    let v = step & PAYLOAD_MASK;
                    t.insert(key, v).unwrap();
                    oracle.insert(key, v);
                }
                5..=6 => assert_eq!(t.erase(key), oracle.remove(key).is_some(), "{}", t.name()),
                _ => assert_eq!(t.lookup(key), oracle.get(key), "{}", t.name()),
            }
            assert_eq!(t.len(), oracle.len());
        }
        for (k, v) in oracle.entries() {
            assert_eq!(t.lookup(k), Some(v), "{}", t.name());
        }
        let mut stats = ProbeStats::default();
        let mut lines = LineSet::default();
        for k in 0..4_000u64 {
            let k = k.wrapping_mul(0x9e37_79b9);
            assert_eq!(t.lookup_metered(k, &mut stats, &mut lines), oracle.get(k), "{}", t.name());
        }
    }
}

#[test]
fn random_access_reads_one_bucket() {
    let mut t = RandomAccessTable::new(&VariantConfig::with_capacity(1 << 10)).unwrap();
    let ks = keys(600, 1);
    for &k in &ks {
        t.insert(k, k & 0xffff).unwrap();
    }
    let stats = t.measure_apcl(&ks);
    assert_eq!(
        stats.cachelines_touched + stats.miss_cachelines_touched,
        stats.lookups
    );
    // overwrite-on-collision loses some keys but never returns a wrong value
    for &k in &ks {
        if let Some(v) = t.lookup(k) {
            assert_eq!(v, k & 0xffff);
        }
    }
}

#[test]
fn apcl_ladder_is_ordered_at_high_load() {
    let n = 52_000;
    let config = VariantConfig::with_capacity(1 << 16);
    let ks = keys(n, 99);
    let mut apcl = Vec::new();
    let tables: Vec<Box<dyn ProbeTable>> = vec![
        Box::new(variant_coalesced(&config).unwrap()),
        Box::new(variant_perfect_cellar(&config).unwrap()),
        Box::new(variant_neighbor_probing(&config).unwrap()),
        Box::new(variant_neighborhash(&config).unwrap()),
    ];
    for mut t in tables {
        for &k in &ks {
            t.insert(k, k & 0xff).unwrap();
        }
        assert_eq!(t.capacity(), 1 << 16, "{} grew", t.name());
        apcl.push((t.name(), t.measure_apcl(&ks).apcl().unwrap()));
    }
    for w in apcl.windows(2) {
        assert!(w[0].1 > w[1].1, "{apcl:?}");
    }
    assert!(apcl[3].1 <= 1.2, "{apcl:?}");
}

#[test]
fn neighbor_probing_prefers_own_cacheline() {
    let mut t = variant_neighbor_probing(&VariantConfig::with_capacity(1 << 12)).unwrap();
    let home = |k: u64| crate::mix::hash_key(k, VariantConfig::default().hash_seed) as usize & ((1 << 12) - 1);
    let a = 1u64;
    let b = (2..).find(|&k| home(k) == home(a)).unwrap();
    t.insert(a, 1).unwrap();
    t.insert(b, 2).unwrap();
    let mut stats = ProbeStats::default();
    let mut lines = LineSet::default();
    assert_eq!(t.lookup_metered(b, &mut stats, &mut lines), Some(2));
    // bucket line plus the side link line
    assert_eq!(lines.len(), 2);
}

proptest! {
    #[test]
    fn relocating_tables_agree_with_oracle(ops in prop::collection::vec((0u8..3, 0u64..300, 0u64..1000), 1..400)) {
        for policy in [FreeSlotPolicy::CursorScan, FreeSlotPolicy::Neighbor] {
            let mut t = RelocatingTable::new(&VariantConfig::with_capacity(8), policy).unwrap();
            let mut oracle = ChainingMap::new(0);
            for &(op, k, v) in &ops {
                match op {
                    0 => { t.insert(k, v).unwrap(); oracle.insert(k, v); }
                    1 => prop_assert_eq!(t.erase(k), oracle.remove(k).is_some()),
                    _ => prop_assert_eq!(t.lookup(k), oracle.get(k)),
                }
            }
            for (k, v) in oracle.entries() {
                prop_assert_eq!(t.lookup(k), Some(v));
            }
        }
    }
}
