use super::{EngineConfig, MAX_VECTOR_GROUPS};
use crate::hash::Table;

/// Whether the AVX-512 path can run on this machine.
pub fn vector_fast_path_available() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("avx512f") && std::arch::is_x86_feature_detected!("avx512dq")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

pub fn vectorized_batch_lookup(table: &Table, keys: &[u64], config: &EngineConfig) -> Vec<Option<u64>> {
    let mut out = Vec::with_capacity(keys.len());
    vectorized_batch_lookup_into(table, keys, config, &mut out);
    out
}

/// Inter-query vectorized lookup: eight queries per vector, finished lanes
/// refilled from the key stream with an expand load, and
/// `config.vector_groups` such vectors interleaved. Returns false if the
/// portable fallback (the interleaved engine) ran instead.
pub fn vectorized_batch_lookup_into(
    table: &Table,
    keys: &[u64],
    config: &EngineConfig,
    out: &mut Vec<Option<u64>>,
) -> bool {
    #[cfg(target_arch = "x86_64")]
    if vector_fast_path_available() {
        out.clear();
        out.resize(keys.len(), None);
        let vectors = config.vector_groups.clamp(1, MAX_VECTOR_GROUPS);
        // SAFETY: the required CPU features were detected above.
        unsafe { avx512::lookup(table, keys, vectors, config.prefetch && vectors > 1, out) };
        return true;
    }
    super::interleaved_batch_lookup_into(table, keys, config.group(), config.prefetch, out);
    false
}

#[cfg(target_arch = "x86_64")]
mod avx512 {
    use std::arch::x86_64::*;

    use crate::engine::{prefetch, MAX_VECTOR_GROUPS};
    use crate::hash::{Bucket, Table, EMPTY_KEY, PAYLOAD_MASK};

    pub const LANES: usize = 8;

    #[derive(Clone, Copy)]
    struct Lanes {
        keys: __m512i,
        idx: __m512i,
        query: __m512i,
        active: __mmask8,
        root: __mmask8,
    }

    #[inline]
    #[target_feature(enable = "avx512f,avx512dq")]
    fn fmix(seed: __m512i, k: __m512i) -> __m512i {
        let mut h = _mm512_xor_si512(k, seed);
        h = _mm512_xor_si512(h, _mm512_srli_epi64::<33>(h));
        h = _mm512_mullo_epi64(h, _mm512_set1_epi64(0xff51_afd7_ed55_8ccd_u64 as i64));
        h = _mm512_xor_si512(h, _mm512_srli_epi64::<33>(h));
        h = _mm512_mullo_epi64(h, _mm512_set1_epi64(0xc4ce_b9fe_1a85_ec53_u64 as i64));
        _mm512_xor_si512(h, _mm512_srli_epi64::<33>(h))
    }

    /// Lowest `n` set bits of `m`.
    #[inline]
    fn lowest_bits(mut m: u8, n: u32) -> u8 {
        let mut take = 0;
        for _ in 0..n {
            take |= m & m.wrapping_neg();
            m &= m.wrapping_sub(1);
        }
        take
    }

    #[inline]
    #[target_feature(enable = "avx512f,avx512dq")]
    fn refill(g: &mut Lanes, keys: &[u64], pos: &mut usize, seed: __m512i, mask: __m512i) {
        let free = !g.active;
        if free == 0 || *pos == keys.len() {
            return;
        }
        let take = lowest_bits(free, free.count_ones().min((keys.len() - *pos) as u32));
        // SAFETY: `take` has at most `keys.len() - pos` bits set, so the
        // expand load stays inside `keys`.
        g.keys = unsafe { _mm512_mask_expandloadu_epi64(g.keys, take, keys.as_ptr().add(*pos) as *const i64) };
        let iota = _mm512_set_epi64(7, 6, 5, 4, 3, 2, 1, 0);
        g.query = _mm512_mask_expand_epi64(g.query, take, _mm512_add_epi64(_mm512_set1_epi64(*pos as i64), iota));
        g.idx = _mm512_mask_and_epi64(g.idx, take, fmix(seed, g.keys), mask);
        g.active |= take;
        g.root |= take;
        *pos += take.count_ones() as usize;
    }

    /// # Safety
    /// The CPU must support AVX-512F and AVX-512DQ, and `out.len() == keys.len()`.
    #[target_feature(enable = "avx512f,avx512dq")]
    pub unsafe fn lookup(table: &Table, keys: &[u64], vectors: usize, use_prefetch: bool, out: &mut [Option<u64>]) {
        debug_assert_eq!(out.len(), keys.len());
        let buckets: &[Bucket] = table.buckets();
        let base = buckets.as_ptr() as *const i64;
        let seed = _mm512_set1_epi64(table.config().hash_seed as i64);
        let mask = _mm512_set1_epi64((buckets.len() - 1) as i64);
        let empty = _mm512_set1_epi64(EMPTY_KEY as i64);
        let payload_mask = _mm512_set1_epi64(PAYLOAD_MASK as i64);
        let zero = _mm512_setzero_si512();
        let idle = Lanes {
            keys: zero,
            idx: zero,
            query: zero,
            active: 0,
            root: 0,
        };
        let mut groups = [idle; MAX_VECTOR_GROUPS];
        let groups = &mut groups[..vectors];
        let mut pos = 0usize;
        let mut q = [0u64; LANES];
        let mut p = [0u64; LANES];

        loop {
            let mut any = false;
            for g in groups.iter_mut() {
                refill(g, keys, &mut pos, seed, mask);
                if g.active == 0 {
                    continue;
                }
                any = true;

                let key_off = _mm512_slli_epi64::<1>(g.idx);
                let slot_off = _mm512_add_epi64(key_off, _mm512_set1_epi64(1));
                // SAFETY: active lanes hold in-range bucket indices.
                let bkey = unsafe { _mm512_mask_i64gather_epi64::<8>(zero, g.active, key_off, base) };
                let bslot = unsafe { _mm512_mask_i64gather_epi64::<8>(zero, g.active, slot_off, base) };

                let hit = g.active & _mm512_cmpeq_epi64_mask(bkey, g.keys) & _mm512_cmpneq_epi64_mask(g.keys, empty);
                if hit != 0 {
                    // SAFETY: both arrays hold LANES u64s.
                    unsafe {
                        _mm512_storeu_si512(q.as_mut_ptr() as *mut __m512i, g.query);
                        _mm512_storeu_si512(p.as_mut_ptr() as *mut __m512i, _mm512_and_si512(bslot, payload_mask));
                    }
                    let mut m = hit;
                    while m != 0 {
                        let l = m.trailing_zeros() as usize;
                        out[q[l] as usize] = Some(p[l]);
                        m &= m - 1;
                    }
                }
                let code = _mm512_srli_epi64::<52>(bslot);
                let mut done = hit | (g.active & _mm512_cmpeq_epi64_mask(code, zero));
                let root = g.root & g.active & !done;
                if root != 0 {
                    // a root holding a lodger means the key's chain is empty
                    done |= root & _mm512_cmpneq_epi64_mask(_mm512_and_si512(fmix(seed, bkey), mask), g.idx);
                }
                g.active &= !done;
                g.root = 0;

                let wrap = _mm512_cmpgt_epi64_mask(code, _mm512_set1_epi64(2048));
                let delta = _mm512_mask_sub_epi64(code, wrap, code, _mm512_set1_epi64(4096));
                g.idx = _mm512_mask_add_epi64(g.idx, g.active, g.idx, delta);
                refill(g, keys, &mut pos, seed, mask);
                if use_prefetch {
                    let mut idx = [0u64; LANES];
                    // SAFETY: `idx` holds LANES u64s.
                    unsafe { _mm512_storeu_si512(idx.as_mut_ptr() as *mut __m512i, g.idx) };
                    let mut m = g.active;
                    while m != 0 {
                        let l = m.trailing_zeros() as usize;
                        prefetch(buckets.as_ptr().wrapping_add(idx[l] as usize));
                        m &= m - 1;
                    }
                }
            }
            if !any && pos == keys.len() {
                break;
            }
        }
    }
}
