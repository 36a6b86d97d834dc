use super::{check_entry, ProbeTable, VariantConfig};
use crate::hash::{AlignedBuckets, Bucket, HashError, InsertOutcome, LineSet, ProbeStats, EMPTY_KEY};
use crate::mix::hash_key;

const NIL: u32 = u32::MAX;

/// Coalesced hashing (late insertion) with a cellar.
///
/// Keys hash into the address region, the first `capacity - cellar` buckets.
/// A collider is appended to the end of the chain it lands on, in the
/// highest-numbered free bucket found by a cursor moving down from the top of
/// the array; the cellar is therefore used first. Chains from different home
/// buckets merge once the cellar is exhausted. Links are absolute indices in
/// a side array.
pub struct CoalescedTable {
    buckets: AlignedBuckets,
    next: Vec<u32>,
    address_len: u64,
    cursor: usize,
    count: usize,
    config: VariantConfig,
}

impl CoalescedTable {
    pub fn new(config: &VariantConfig) -> Result<Self, HashError> {
        Self::with_capacity(config.rounded_capacity(), config.clone())
    }

    fn with_capacity(capacity: usize, config: VariantConfig) -> Result<Self, HashError> {
        let cellar = ((capacity as f64) * config.cellar_fraction).round() as usize;
        let address_len = (capacity - cellar.min(capacity - 1)) as u64;
        Ok(CoalescedTable {
            buckets: AlignedBuckets::filled(capacity, Bucket::EMPTY)
                .ok_or(HashError::Alloc { buckets: capacity })?,
            next: vec![NIL; capacity],
            address_len,
            cursor: capacity,
            count: 0,
            config,
        })
    }

    pub fn address_region(&self) -> usize {
        self.address_len as usize
    }

    #[inline(always)]
    fn home(&self, key: u64) -> usize {
        ((hash_key(key, self.config.hash_seed) as u128 * self.address_len as u128) >> 64) as usize
    }

    fn max_entries(&self) -> usize {
        (self.config.max_load_factor * self.buckets.len() as f64).floor() as usize
    }

    fn position(&self, key: u64) -> Option<usize> {
        if key == EMPTY_KEY {
            return None;
        }
        let mut i = self.home(key);
        if self.buckets[i].is_empty() {
            return None;
        }
        loop {
            if self.buckets[i].key == key {
                return Some(i);
            }
            match self.next[i] {
                NIL => return None,
                n => i = n as usize,
            }
        }
    }

    /// Next free bucket below the cursor, rescanning from the top once.
    fn take_free(&mut self) -> Option<usize> {
        for _ in 0..2 {
            while self.cursor > 0 {
                self.cursor -= 1;
                if self.buckets[self.cursor].is_empty() {
                    return Some(self.cursor);
                }
            }
            self.cursor = self.buckets.len();
        }
        None
    }

    fn place_new(&mut self, key: u64, payload: u64) -> bool {
        let home = self.home(key);
        let new = Bucket {
            key,
            slot: crate::hash::PackedSlot::new(0, payload),
        };
        if self.buckets[home].is_empty() {
            self.buckets[home] = new;
            return true;
        }
        let mut tail = home;
        while self.next[tail] != NIL {
            tail = self.next[tail] as usize;
        }
        let Some(free) = self.take_free() else {
            return false;
        };
        self.buckets[free] = new;
        self.next[tail] = free as u32;
        true
    }

    fn grow(&mut self) -> Result<(), HashError> {
        let mut capacity = self.buckets.len() * 2;
        loop {
            let mut t = CoalescedTable::with_capacity(capacity, self.config.clone())?;
            let ok = self
                .buckets
                .iter()
                .filter(|b| !b.is_empty())
                .all(|b| t.place_new(b.key, b.slot.payload()));
            if ok {
                t.count = self.count;
                *self = t;
                return Ok(());
            }
            capacity *= 2;
        }
    }
}

impl ProbeTable for CoalescedTable {
    fn name(&self) -> &'static str {
        "coalesced"
    }

    fn insert(&mut self, key: u64, payload: u64) -> Result<InsertOutcome, HashError> {
        check_entry(key, payload)?;
        if let Some(pos) = self.position(key) {
            let b = &mut self.buckets[pos];
            b.slot = b.slot.with_payload(payload);
            return Ok(InsertOutcome::Updated);
        }
        let mut grown = false;
        if self.count + 1 > self.max_entries() {
            self.grow()?;
            grown = true;
        }
        while !self.place_new(key, payload) {
            self.grow()?;
            grown = true;
        }
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
            match self.next[i] {
                NIL => return None,
                n => i = n as usize,
            }
        }
    }

    /// Removes the key, then re-inserts every record that followed it on its
    /// (possibly coalesced) chain. A record's search starts at or before its
    /// own position on the chain, so truncating at the removed node and
    /// re-inserting the tail keeps every remaining key reachable.
    fn erase(&mut self, key: u64) -> bool {
        if key == EMPTY_KEY {
            return false;
        }
        let mut prev = None;
        let mut i = self.home(key);
        if self.buckets[i].is_empty() {
            return false;
        }
        while self.buckets[i].key != key {
            match self.next[i] {
                NIL => return false,
                n => {
                    prev = Some(i);
                    i = n as usize;
                }
            }
        }
        if let Some(p) = prev {
            self.next[p] = NIL;
        }
        let mut suffix = Vec::new();
        let mut cur = self.next[i];
        self.buckets[i] = Bucket::EMPTY;
        self.next[i] = NIL;
        while cur != NIL {
            let c = cur as usize;
            suffix.push(self.buckets[c]);
            cur = self.next[c];
            self.buckets[c] = Bucket::EMPTY;
            self.next[c] = NIL;
        }
        self.count -= 1;
        for b in suffix {
            while !self.place_new(b.key, b.slot.payload()) {
                self.grow().expect("allocation failed while repairing chain");
            }
        }
        true
    }

    fn lookup_metered(&self, key: u64, stats: &mut ProbeStats, lines: &mut LineSet) -> Option<u64> {
        lines.clear();
        let mut i = self.home(key);
        let result = loop {
            let b = &self.buckets[i];
            lines.touch(b);
            if b.key == key {
                break (key != EMPTY_KEY).then_some(b.slot.payload());
            }
            if b.is_empty() {
                break None;
            }
            lines.touch(&self.next[i]);
            match self.next[i] {
                NIL => break None,
                n => i = n as usize,
            }
        };
        stats.record(result.is_some(), lines.len());
        result
    }

    fn len(&self) -> usize {
        self.count
    }

    fn capacity(&self) -> usize {
        self.buckets.len()
    }

    fn memory_bytes(&self) -> usize {
        self.buckets.len() * std::mem::size_of::<Bucket>() + self.next.len() * 4
    }
}
