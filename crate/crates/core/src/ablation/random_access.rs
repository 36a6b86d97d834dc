use super::{check_entry, ProbeTable, VariantConfig};
use crate::hash::{AlignedBuckets, Bucket, HashError, InsertOutcome, LineSet, PackedSlot, ProbeStats, EMPTY_KEY};
use crate::mix::hash_key;

/// Collision-oblivious pseudo-table: one hash and one random read per lookup.
///
/// A key is written to its home bucket, overwriting whatever was there, so
/// colliding keys are lost. It exists only to measure the cost floor of a
/// hashed random read and is never checked for correctness.
pub struct RandomAccessTable {
    buckets: AlignedBuckets,
    mask: usize,
    seed: u64,
    count: usize,
}

impl RandomAccessTable {
    pub fn new(config: &VariantConfig) -> Result<Self, HashError> {
        let capacity = config.rounded_capacity();
        Ok(RandomAccessTable {
            buckets: AlignedBuckets::filled(capacity, Bucket::EMPTY)
                .ok_or(HashError::Alloc { buckets: capacity })?,
            mask: capacity - 1,
            seed: config.hash_seed,
            count: 0,
        })
    }

    #[inline(always)]
    fn home(&self, key: u64) -> usize {
        hash_key(key, self.seed) as usize & self.mask
    }
}

impl ProbeTable for RandomAccessTable {
    fn name(&self) -> &'static str {
        "random-access"
    }

    fn insert(&mut self, key: u64, payload: u64) -> Result<InsertOutcome, HashError> {
        check_entry(key, payload)?;
        let i = self.home(key);
        let was_empty = self.buckets[i].is_empty();
        self.buckets[i] = Bucket {
            key,
            slot: PackedSlot::new(0, payload),
        };
        if was_empty {
            self.count += 1;
            Ok(InsertOutcome::Inserted)
        } else {
            Ok(InsertOutcome::Updated)
        }
    }

    #[inline]
    fn lookup(&self, key: u64) -> Option<u64> {
        let b = &self.buckets[self.home(key)];
        (b.key == key && key != EMPTY_KEY).then_some(b.slot.payload())
    }

    fn erase(&mut self, key: u64) -> bool {
        let i = self.home(key);
        if self.buckets[i].key == key && key != EMPTY_KEY {
            self.buckets[i] = Bucket::EMPTY;
            self.count -= 1;
            true
        } else {
            false
        }
    }

    fn lookup_metered(&self, key: u64, stats: &mut ProbeStats, lines: &mut LineSet) -> Option<u64> {
        lines.clear();
        lines.touch(&self.buckets[self.home(key)]);
        let r = self.lookup(key);
        stats.record(r.is_some(), lines.len());
        r
    }

    fn len(&self) -> usize {
        self.count
    }

    fn capacity(&self) -> usize {
        self.buckets.len()
    }

    fn memory_bytes(&self) -> usize {
        self.buckets.len() * std::mem::size_of::<Bucket>()
    }
}
