use super::prefetch;
use crate::hash::{decode_offset, Table, EMPTY_KEY};
use crate::mix::hash_key;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Key hashed, home bucket prefetched, not yet read.
    Hash,
    /// Walking the chain; `bucket` has been prefetched.
    Probe,
    Done,
}

/// One in-flight lookup.
#[derive(Clone, Copy, Debug)]
pub struct ProbeState {
    pub query: usize,
    pub bucket: usize,
    pub phase: Phase,
}

impl ProbeState {
    const IDLE: ProbeState = ProbeState {
        query: 0,
        bucket: 0,
        phase: Phase::Done,
    };
}

pub fn interleaved_batch_lookup(table: &Table, keys: &[u64], group: usize) -> Vec<Option<u64>> {
    let mut out = Vec::with_capacity(keys.len());
    interleaved_batch_lookup_into(table, keys, group, true, &mut out);
    out
}

/// AMAC-style lookup: up to `group` probes in flight, each yielding after it
/// prefetches the next bucket it needs.
pub fn interleaved_batch_lookup_into(
    table: &Table,
    keys: &[u64],
    group: usize,
    use_prefetch: bool,
    out: &mut Vec<Option<u64>>,
) {
    out.clear();
    out.resize(keys.len(), None);
    let buckets = table.buckets();
    let seed = table.config().hash_seed;
    let mask = buckets.len() - 1;
    let home = |k: u64| hash_key(k, seed) as usize & mask;

    let mut states = [ProbeState::IDLE; super::MAX_GROUP_SIZE];
    let states = &mut states[..group.clamp(1, super::MAX_GROUP_SIZE)];
    let mut next = 0;
    let mut active = 0;

    let start = |s: &mut ProbeState, next: &mut usize| -> bool {
        if *next == keys.len() {
            s.phase = Phase::Done;
            return false;
        }
        let b = home(keys[*next]);
        if use_prefetch {
            prefetch(&buckets[b]);
        }
        *s = ProbeState {
            query: *next,
            bucket: b,
            phase: Phase::Hash,
        };
        *next += 1;
        true
    };

    for s in states.iter_mut() {
        if start(s, &mut next) {
            active += 1;
        }
    }
    while active > 0 {
        for s in states.iter_mut() {
            let finished = match s.phase {
                Phase::Done => continue,
                Phase::Hash => {
                    let key = keys[s.query];
                    let b = &buckets[s.bucket];
                    if b.key == key {
                        if key != EMPTY_KEY {
                            out[s.query] = Some(b.slot.payload());
                        }
                        true
                    } else {
                        let code = b.slot.offset_code();
                        if code == 0 || home(b.key) != s.bucket {
                            true
                        } else {
                            s.bucket = (s.bucket as isize + decode_offset(code)) as usize;
                            s.phase = Phase::Probe;
                            false
                        }
                    }
                }
                Phase::Probe => {
                    let b = &buckets[s.bucket];
                    if b.key == keys[s.query] {
                        out[s.query] = Some(b.slot.payload());
                        true
                    } else {
                        let code = b.slot.offset_code();
                        if code == 0 {
                            true
                        } else {
                            s.bucket = (s.bucket as isize + decode_offset(code)) as usize;
                            false
                        }
                    }
                }
            };
            if finished {
                if !start(s, &mut next) {
                    active -= 1;
                }
            } else if use_prefetch {
                prefetch(&buckets[s.bucket]);
            }
        }
    }
}
