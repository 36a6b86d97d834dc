//! Key to shard assignment shared by servers, clients and the sharder.

use nbkv_core::mix::fmix64;

/// Distinct from every table's hash seed so shard membership and bucket
/// position are independent.
pub const ROUTING_SEED: u64 = 0x9c1f_3a5d_7e2b_4c61;

/// Shard owning `key` among `shard_count` shards.
#[inline]
pub fn route(key: u64, shard_count: u32) -> u32 {
    assert!(shard_count > 0, "shard_count must be positive");
    (fmix64(key ^ ROUTING_SEED) % shard_count as u64) as u32
}

/// Splits `keys` by shard, remembering each key's position in the input.
pub fn partition(keys: &[u64], shard_count: u32) -> Vec<(Vec<u64>, Vec<usize>)> {
    let mut parts = vec![(Vec::new(), Vec::new()); shard_count as usize];
    for (i, &k) in keys.iter().enumerate() {
        let p = &mut parts[route(k, shard_count) as usize];
        p.0.push(k);
        p.1.push(i);
    }
    parts
}
