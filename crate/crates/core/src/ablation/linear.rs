use super::{check_entry, ProbeTable, VariantConfig};
use crate::hash::{AlignedBuckets, Bucket, HashError, InsertOutcome, LineSet, PackedSlot, ProbeStats, EMPTY_KEY};
use crate::mix::hash_key;

/// Open addressing with linear probing and backward-shift deletion.
pub struct LinearProbingTable {
    buckets: AlignedBuckets,
    mask: usize,
    count: usize,
    config: VariantConfig,
}

impl LinearProbingTable {
    pub fn new(config: &VariantConfig) -> Result<Self, HashError> {
        Self::with_capacity(config.rounded_capacity(), config.clone())
    }

    fn with_capacity(capacity: usize, config: VariantConfig) -> Result<Self, HashError> {
        Ok(LinearProbingTable {
            buckets: AlignedBuckets::filled(capacity, Bucket::EMPTY)
                .ok_or(HashError::Alloc { buckets: capacity })?,
            mask: capacity - 1,
            count: 0,
            config,
        })
    }

    #[inline(always)]
    fn home(&self, key: u64) -> usize {
        hash_key(key, self.config.hash_seed) as usize & self.mask
    }

    fn max_entries(&self) -> usize {
        ((self.config.max_load_factor * self.buckets.len() as f64).floor() as usize)
            .min(self.buckets.len() - 1)
    }

    fn grow(&mut self) {
        let mut t = LinearProbingTable::with_capacity(self.buckets.len() * 2, self.config.clone())
            .expect("allocation");
        for b in self.buckets.iter().filter(|b| !b.is_empty()) {
            t.place(b.key, b.slot.payload());
        }
        t.count = self.count;
        *self = t;
    }

    /// Writes the key at its slot; returns true if it was already present.
    fn place(&mut self, key: u64, payload: u64) -> bool {
        let mut i = self.home(key);
        loop {
            let b = &mut self.buckets[i];
            if b.key == key {
                b.slot = PackedSlot::new(0, payload);
                return true;
            }
            if b.is_empty() {
                *b = Bucket {
                    key,
                    slot: PackedSlot::new(0, payload),
                };
                return false;
            }
            i = (i + 1) & self.mask;
        }
    }
}

impl ProbeTable for LinearProbingTable {
    fn name(&self) -> &'static str {
        "linear-probing"
    }

    fn insert(&mut self, key: u64, payload: u64) -> Result<InsertOutcome, HashError> {
        check_entry(key, payload)?;
        if self.lookup(key).is_some() {
            self.place(key, payload);
            return Ok(InsertOutcome::Updated);
        }
        let mut grown = false;
        if self.count + 1 > self.max_entries() {
            self.grow();
            grown = true;
        }
        self.place(key, payload);
        self.count += 1;
        Ok(if grown {
            InsertOutcome::GrownThenInserted
        } else {
            InsertOutcome::Inserted
        })
    }

    #[inline]
    fn lookup(&self, key: u64) -> Option<u64> {
        let mut i = self.home(key);
        loop {
            let b = &self.buckets[i];
            if b.key == key {
                return (key != EMPTY_KEY).then_some(b.slot.payload());
            }
            if b.is_empty() {
                return None;
            }
            i = (i + 1) & self.mask;
        }
    }

    fn erase(&mut self, key: u64) -> bool {
        if key == EMPTY_KEY {
            return false;
        }
        let mut i = self.home(key);
        loop {
            if self.buckets[i].is_empty() {
                return false;
            }
            if self.buckets[i].key == key {
                break;
            }
            i = (i + 1) & self.mask;
        }
        // backward-shift: pull later members of the run into the hole
        let mut hole = i;
        let mut j = i;
        loop {
            j = (j + 1) & self.mask;
            if self.buckets[j].is_empty() {
                break;
            }
            let home = self.home(self.buckets[j].key);
            let dist_j = j.wrapping_sub(home) & self.mask;
            let dist_hole = j.wrapping_sub(hole) & self.mask;
            if dist_j >= dist_hole {
                self.buckets[hole] = self.buckets[j];
                hole = j;
            }
        }
        self.buckets[hole] = Bucket::EMPTY;
        self.count -= 1;
        true
    }

    fn lookup_metered(&self, key: u64, stats: &mut ProbeStats, lines: &mut LineSet) -> Option<u64> {
        lines.clear();
        let mut i = self.home(key);
        let r = loop {
            let b = &self.buckets[i];
            lines.touch(b);
            if b.key == key {
                break (key != EMPTY_KEY).then_some(b.slot.payload());
            }
            if b.is_empty() {
                break None;
            }
            i = (i + 1) & self.mask;
        };
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
