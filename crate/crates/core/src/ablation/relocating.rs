use super::{check_entry, ProbeTable, VariantConfig};
use crate::hash::{
    AlignedBuckets, Bucket, HashError, InsertOutcome, LineSet, PackedSlot, ProbeStats, BUCKETS_PER_LINE, EMPTY_KEY,
};
use crate::mix::hash_key;

/// How a [`RelocatingTable`] finds a free bucket for a collider.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FreeSlotPolicy {
    /// A cursor sweeping down from the top of the array, as in classic
    /// coalesced hashing. With lodger relocation this behaves like coalesced
    /// hashing with a perfectly sized cellar.
    CursorScan,
    /// The tail's own cacheline first, then the nearest bucket either side.
    Neighbor,
}

/// Coalesced hashing with lodger relocation and links in a side array.
///
/// Chains never merge: a key landing on a lodger evicts it, so each chain
/// starts at its home bucket. Links are full-width relative offsets stored in
/// a separate `i32` array (0 terminates), so following a link reads a second
/// memory region.
pub struct RelocatingTable {
    buckets: AlignedBuckets,
    links: Vec<i32>,
    mask: usize,
    cursor: usize,
    count: usize,
    policy: FreeSlotPolicy,
    config: VariantConfig,
}

impl RelocatingTable {
    pub fn new(config: &VariantConfig, policy: FreeSlotPolicy) -> Result<Self, HashError> {
        Self::with_capacity(config.rounded_capacity(), config.clone(), policy)
    }

    fn with_capacity(capacity: usize, config: VariantConfig, policy: FreeSlotPolicy) -> Result<Self, HashError> {
        Ok(RelocatingTable {
            buckets: AlignedBuckets::filled(capacity, Bucket::EMPTY)
                .ok_or(HashError::Alloc { buckets: capacity })?,
            links: vec![0; capacity],
            mask: capacity - 1,
            cursor: capacity,
            count: 0,
            policy,
            config,
        })
    }

    pub fn policy(&self) -> FreeSlotPolicy {
        self.policy
    }

    #[inline(always)]
    fn home(&self, key: u64) -> usize {
        hash_key(key, self.config.hash_seed) as usize & self.mask
    }

    #[inline(always)]
    fn next_of(&self, i: usize) -> Option<usize> {
        match self.links[i] {
            0 => None,
            d => Some((i as isize + d as isize) as usize),
        }
    }

    fn set_link(&mut self, from: usize, to: Option<usize>) {
        self.links[from] = match to {
            Some(to) => (to as isize - from as isize) as i32,
            None => 0,
        };
    }

    fn max_entries(&self) -> usize {
        (self.config.max_load_factor * self.buckets.len() as f64).floor() as usize
    }

    fn position(&self, key: u64) -> Option<usize> {
        if key == EMPTY_KEY {
            return None;
        }
        let root = self.home(key);
        let b = &self.buckets[root];
        if b.is_empty() || self.home(b.key) != root {
            return None;
        }
        let mut i = root;
        loop {
            if self.buckets[i].key == key {
                return Some(i);
            }
            i = self.next_of(i)?;
        }
    }

    fn find_free(&mut self, anchor: usize) -> Option<usize> {
        match self.policy {
            FreeSlotPolicy::CursorScan => {
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
            FreeSlotPolicy::Neighbor => {
                let len = self.buckets.len() as isize;
                let a = anchor as isize;
                let line = a & !(BUCKETS_PER_LINE as isize - 1);
                let line_end = line + BUCKETS_PER_LINE as isize;
                let free = |p: isize| p >= 0 && p < len && self.buckets[p as usize].is_empty();
                for d in 1..BUCKETS_PER_LINE as isize {
                    if a + d < line_end && free(a + d) {
                        return Some((a + d) as usize);
                    }
                    if a - d >= line && free(a - d) {
                        return Some((a - d) as usize);
                    }
                }
                for d in 1..len {
                    if a + d >= line_end && free(a + d) {
                        return Some((a + d) as usize);
                    }
                    if a - d < line && free(a - d) {
                        return Some((a - d) as usize);
                    }
                    if a + d >= len && a - d < 0 {
                        break;
                    }
                }
                None
            }
        }
    }

    fn place_new(&mut self, key: u64, payload: u64) -> bool {
        let root = self.home(key);
        let new = Bucket {
            key,
            slot: PackedSlot::new(0, payload),
        };
        let occupant = self.buckets[root];
        if occupant.is_empty() {
            self.buckets[root] = new;
            self.links[root] = 0;
            return true;
        }
        let home = self.home(occupant.key);
        if home == root {
            let mut tail = root;
            while let Some(n) = self.next_of(tail) {
                tail = n;
            }
            let Some(free) = self.find_free(tail) else {
                return false;
            };
            self.buckets[free] = new;
            self.links[free] = 0;
            self.set_link(tail, Some(free));
        } else {
            let mut pred = home;
            while self.next_of(pred) != Some(root) {
                pred = self.next_of(pred).expect("lodger on its home chain");
            }
            let Some(dest) = self.find_free(pred) else {
                return false;
            };
            let succ = self.next_of(root);
            self.buckets[dest] = occupant;
            self.set_link(dest, succ);
            self.set_link(pred, Some(dest));
            self.buckets[root] = new;
            self.links[root] = 0;
        }
        true
    }

    fn grow(&mut self) -> Result<(), HashError> {
        let mut t = RelocatingTable::with_capacity(self.buckets.len() * 2, self.config.clone(), self.policy)?;
        for b in self.buckets.iter().filter(|b| !b.is_empty()) {
            assert!(t.place_new(b.key, b.slot.payload()), "rebuild at lower load cannot fail");
        }
        t.count = self.count;
        *self = t;
        Ok(())
    }
}

impl ProbeTable for RelocatingTable {
    fn name(&self) -> &'static str {
        match self.policy {
            FreeSlotPolicy::CursorScan => "perfect-cellar",
            FreeSlotPolicy::Neighbor => "neighbor-probing",
        }
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
        let root = &self.buckets[i];
        if root.key == key {
            return (key != EMPTY_KEY).then_some(root.slot.payload());
        }
        if root.is_empty() || self.links[i] == 0 || self.home(root.key) != i {
            return None;
        }
        loop {
            i = self.next_of(i)?;
            let b = &self.buckets[i];
            if b.key == key {
                return Some(b.slot.payload());
            }
        }
    }

    fn erase(&mut self, key: u64) -> bool {
        let Some(pos) = self.position(key) else {
            return false;
        };
        let root = self.home(key);
        let succ = self.next_of(pos);
        if pos == root {
            match succ {
                None => self.buckets[root] = Bucket::EMPTY,
                Some(s) => {
                    let s_next = self.next_of(s);
                    self.buckets[root] = self.buckets[s];
                    self.set_link(root, s_next);
                    self.buckets[s] = Bucket::EMPTY;
                    self.links[s] = 0;
                }
            }
        } else {
            let mut pred = root;
            while self.next_of(pred) != Some(pos) {
                pred = self.next_of(pred).expect("key on its home chain");
            }
            self.set_link(pred, succ);
            self.buckets[pos] = Bucket::EMPTY;
            self.links[pos] = 0;
        }
        self.count -= 1;
        true
    }

    fn lookup_metered(&self, key: u64, stats: &mut ProbeStats, lines: &mut LineSet) -> Option<u64> {
        lines.clear();
        let root = self.home(key);
        let mut i = root;
        let result = loop {
            let b = &self.buckets[i];
            lines.touch(b);
            if b.key == key {
                break (key != EMPTY_KEY).then_some(b.slot.payload());
            }
            if b.is_empty() || (i == root && self.home(b.key) != root) {
                break None;
            }
            lines.touch(&self.links[i]);
            match self.next_of(i) {
                Some(n) => i = n,
                None => break None,
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
        self.buckets.len() * std::mem::size_of::<Bucket>() + self.links.len() * 4
    }
}
