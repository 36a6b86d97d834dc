//! 64-bit mixing functions.

/// Default seed for table hashing.
pub const DEFAULT_TABLE_SEED: u64 = 0x2545_f491_4f6c_dd1d;

/// Murmur3 finalizer. A bijection on `u64` with full avalanche.
#[inline(always)]
pub const fn fmix64(mut x: u64) -> u64 {
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x = x.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    x ^= x >> 33;
    x
}

/// SplitMix64 finalizer. Also a bijection; used for key generation so that
/// generated keys are not structurally related to table hashing.
#[inline(always)]
pub const fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seeded hash of a key.
#[inline(always)]
pub const fn hash_key(key: u64, seed: u64) -> u64 {
    fmix64(key ^ seed)
}
