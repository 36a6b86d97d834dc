//! NeighborHash: a flat-array coalesced hash table.
//!
//! Every bucket holds a 64-bit key and a [`PackedSlot`] (12-bit relative link
//! plus 52-bit payload), so the whole structure is one 64-byte aligned array
//! of 16-byte buckets, four to a cacheline.
//!
//! Three rules keep lookups short:
//!
//! * A record stored at its own hash index is a *host*; any other occupied
//!   bucket holds a *lodger*. When a new key hashes onto a lodger, the lodger
//!   is moved elsewhere so the new key can be the host of its chain. Every
//!   chain therefore starts at its home bucket and contains only keys with
//!   that home, which gives the probe length of separate chaining.
//! * Free buckets for colliders are searched in the anchor's own cacheline
//!   first (both directions), then outward by distance, so most chains never
//!   leave their first cacheline.
//! * The link to the next chain node is a relative offset in the top 12 bits
//!   of the value word, so walking a chain never touches a side array.
//!
//! The table is single-writer. Once built it can be shared by any number of
//! readers; it has no interior mutability.

mod slot;
mod storage;
pub(crate) use self::storage::BucketArray as AlignedBuckets;

use std::fmt;

use thiserror::Error;

pub use self::slot::{
    decode_offset, encode_offset, PackedSlot, MAX_OFFSET, MIN_OFFSET, OFFSET_BITS, PAYLOAD_BITS,
    PAYLOAD_LIMIT, PAYLOAD_MASK,
};
pub use self::storage::{BUCKETS_PER_LINE, CACHELINE};
use self::storage::BucketArray;
use crate::mix::{hash_key, DEFAULT_TABLE_SEED};

/// Reserved key marking an empty bucket.
pub const EMPTY_KEY: u64 = u64::MAX;

const MIN_CAPACITY: usize = BUCKETS_PER_LINE;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HashError {
    #[error("key {EMPTY_KEY:#x} is reserved for empty buckets")]
    SentinelKey,
    #[error("payload {0:#x} does not fit in {PAYLOAD_BITS} bits")]
    PayloadTooLarge(u64),
    #[error("failed to allocate {buckets} buckets")]
    Alloc { buckets: usize },
}

/// One 16-byte bucket.
#[derive(Clone, Copy, PartialEq, Eq)]
#[repr(C)]
pub struct Bucket {
    pub key: u64,
    pub slot: PackedSlot,
}

impl Bucket {
    pub const EMPTY: Bucket = Bucket {
        key: EMPTY_KEY,
        slot: PackedSlot::EMPTY,
    };

    #[inline(always)]
    pub fn is_empty(&self) -> bool {
        self.key == EMPTY_KEY
    }
}

impl fmt::Debug for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            f.write_str("Bucket(empty)")
        } else {
            f.debug_struct("Bucket")
                .field("key", &self.key)
                .field("slot", &self.slot)
                .finish()
        }
    }
}

/// Which bucket free-slot probing is centred on when extending a chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ProbeAnchor {
    /// The node whose link will point at the new bucket.
    #[default]
    Tail,
    /// The chain's home bucket. The link still has to be encodable from the
    /// tail, so candidates are filtered by that.
    Head,
}

/// Direction of free-slot probing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ProbeDirection {
    /// Own cacheline first, then nearest bucket on either side.
    #[default]
    Bidirectional,
    /// Forward only, like linear probing. Falls back to scanning backward when
    /// the forward window runs off the end of the array.
    Forward,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableConfig {
    pub max_load_factor: f64,
    pub hash_seed: u64,
    pub anchor: ProbeAnchor,
    pub direction: ProbeDirection,
    /// Maximum number of chain successors moved while relocating one lodger
    /// before the insert gives up and grows the table.
    pub relocation_budget: usize,
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig {
            max_load_factor: 0.8,
            hash_seed: DEFAULT_TABLE_SEED,
            anchor: ProbeAnchor::Tail,
            direction: ProbeDirection::Bidirectional,
            relocation_budget: 16,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    Updated,
    /// The table was rebuilt at a larger capacity before the key was inserted.
    GrownThenInserted,
}

/// Why the table grew.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GrowthCause {
    LoadFactor,
    /// No free bucket within link range of the required anchor.
    Encodability,
    Explicit,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GrowthStats {
    pub load_factor: u64,
    pub encodability: u64,
    pub explicit: u64,
}

impl GrowthStats {
    pub fn total(&self) -> u64 {
        self.load_factor + self.encodability + self.explicit
    }

    fn record(&mut self, cause: GrowthCause) {
        match cause {
            GrowthCause::LoadFactor => self.load_factor += 1,
            GrowthCause::Encodability => self.encodability += 1,
            GrowthCause::Explicit => self.explicit += 1,
        }
    }
}

/// Lookup instrumentation: distinct cachelines read per lookup.
///
/// `cachelines_touched` only accumulates over successful lookups, so
/// [`ProbeStats::apcl`] is the average number of cachelines read to find a
/// key that is present. Misses are tallied separately.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ProbeStats {
    pub lookups: u64,
    pub successful_lookups: u64,
    pub cachelines_touched: u64,
    pub miss_cachelines_touched: u64,
}

impl ProbeStats {
    /// Average probing cachelines. `None` when nothing was found.
    pub fn apcl(&self) -> Option<f64> {
        (self.successful_lookups > 0)
            .then(|| self.cachelines_touched as f64 / self.successful_lookups as f64)
    }

    pub fn record(&mut self, hit: bool, lines: usize) {
        self.lookups += 1;
        if hit {
            self.successful_lookups += 1;
            self.cachelines_touched += lines as u64;
        } else {
            self.miss_cachelines_touched += lines as u64;
        }
    }

    pub fn merge(&mut self, other: &ProbeStats) {
        self.lookups += other.lookups;
        self.successful_lookups += other.successful_lookups;
        self.cachelines_touched += other.cachelines_touched;
        self.miss_cachelines_touched += other.miss_cachelines_touched;
    }
}

/// Distinct 64-byte lines seen by one lookup.
#[derive(Default)]
pub struct LineSet {
    lines: Vec<usize>,
}

impl LineSet {
    pub fn clear(&mut self) {
        self.lines.clear();
    }

    #[inline]
    pub fn touch<T>(&mut self, ptr: *const T) {
        let line = ptr as usize / CACHELINE;
        if !self.lines.contains(&line) {
            self.lines.push(line);
        }
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

#[derive(Debug)]
struct NoFreeBucket;

/// The NeighborHash table.
#[derive(Clone)]
pub struct Table {
    buckets: BucketArray,
    mask: usize,
    count: usize,
    config: TableConfig,
    growth: GrowthStats,
    undo: Vec<(usize, Bucket)>,
}

impl fmt::Debug for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Table")
            .field("capacity", &self.capacity())
            .field("len", &self.count)
            .field("config", &self.config)
            .field("growth", &self.growth)
            .finish()
    }
}

impl Default for Table {
    fn default() -> Self {
        Table::new()
    }
}

impl Table {
    pub fn new() -> Self {
        Table::with_config(MIN_CAPACITY, TableConfig::default()).expect("tiny allocation")
    }

    /// A table able to hold `entries` keys without growing.
    pub fn with_entries(entries: usize, config: TableConfig) -> Result<Self, HashError> {
        let needed = (entries as f64 / config.max_load_factor).ceil() as usize;
        Table::with_config(needed, config)
    }

    /// A table with capacity `capacity` rounded up to a power of two.
    pub fn with_config(capacity: usize, config: TableConfig) -> Result<Self, HashError> {
        assert!(
            config.max_load_factor > 0.0 && config.max_load_factor <= 1.0,
            "max_load_factor must be in (0, 1]"
        );
        let capacity = capacity.max(MIN_CAPACITY).next_power_of_two();
        let buckets = BucketArray::filled(capacity, Bucket::EMPTY)
            .ok_or(HashError::Alloc { buckets: capacity })?;
        Ok(Table {
            buckets,
            mask: capacity - 1,
            count: 0,
            config,
            growth: GrowthStats::default(),
            undo: Vec::new(),
        })
    }

    #[inline(always)]
    pub fn capacity(&self) -> usize {
        self.mask + 1
    }

    #[inline(always)]
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn load_factor(&self) -> f64 {
        self.count as f64 / self.capacity() as f64
    }

    pub fn config(&self) -> &TableConfig {
        &self.config
    }

    pub fn growth_stats(&self) -> GrowthStats {
        self.growth
    }

    /// Size of the bucket array in bytes.
    pub fn memory_bytes(&self) -> usize {
        self.buckets.bytes()
    }

    /// Raw view of the bucket array.
    #[inline(always)]
    pub fn buckets(&self) -> &[Bucket] {
        &self.buckets
    }

    /// Largest entry count allowed at the current capacity.
    pub fn max_entries(&self) -> usize {
        (self.config.max_load_factor * self.capacity() as f64).floor() as usize
    }

    #[inline(always)]
    pub fn hash_index(&self, key: u64) -> usize {
        hash_key(key, self.config.hash_seed) as usize & self.mask
    }

    #[inline(always)]
    fn next_of(&self, i: usize) -> Option<usize> {
        self.buckets[i]
            .slot
            .offset()
            .map(|d| (i as isize + d) as usize)
    }

    /// Index of the bucket holding `key`, following only its own chain.
    fn position(&self, key: u64) -> Option<usize> {
        if key == EMPTY_KEY {
            return None;
        }
        let root = self.hash_index(key);
        let b = &self.buckets[root];
        if b.key == key {
            return Some(root);
        }
        if b.slot.offset_code() == 0 || self.hash_index(b.key) != root {
            return None;
        }
        let mut i = root;
        while let Some(next) = self.next_of(i) {
            i = next;
            if self.buckets[i].key == key {
                return Some(i);
            }
        }
        None
    }

    /// Payload stored for `key`, or `None`.
    #[inline]
    pub fn lookup(&self, key: u64) -> Option<u64> {
        let buckets = self.buckets();
        let mut i = self.hash_index(key);
        let root = &buckets[i];
        if root.key == key {
            return (key != EMPTY_KEY).then_some(root.slot.payload());
        }
        let mut code = root.slot.offset_code();
        if code == 0 || self.hash_index(root.key) != i {
            return None;
        }
        loop {
            i = (i as isize + decode_offset(code)) as usize;
            let b = &buckets[i];
            if b.key == key {
                return Some(b.slot.payload());
            }
            code = b.slot.offset_code();
            if code == 0 {
                return None;
            }
        }
    }

    /// [`Table::lookup`] that also records the distinct cachelines it read.
    pub fn lookup_metered(&self, key: u64, stats: &mut ProbeStats, lines: &mut LineSet) -> Option<u64> {
        lines.clear();
        let result = self.lookup_traced(key, lines);
        stats.record(result.is_some(), lines.len());
        result
    }

    fn lookup_traced(&self, key: u64, lines: &mut LineSet) -> Option<u64> {
        let buckets = self.buckets();
        let mut i = self.hash_index(key);
        lines.touch(&buckets[i]);
        let root = &buckets[i];
        if root.key == key {
            return (key != EMPTY_KEY).then_some(root.slot.payload());
        }
        if root.slot.offset_code() == 0 || self.hash_index(root.key) != i {
            return None;
        }
        while let Some(next) = self.next_of(i) {
            i = next;
            lines.touch(&buckets[i]);
            if buckets[i].key == key {
                return Some(buckets[i].slot.payload());
            }
        }
        None
    }

    /// Looks up every key in order.
    pub fn batch_lookup_scalar(&self, keys: &[u64]) -> Vec<Option<u64>> {
        keys.iter().map(|&k| self.lookup(k)).collect()
    }

    /// Average probing cachelines over successful lookups of `keys`.
    pub fn measure_apcl(&self, keys: &[u64]) -> ProbeStats {
        let mut stats = ProbeStats::default();
        let mut lines = LineSet::default();
        for &k in keys {
            self.lookup_metered(k, &mut stats, &mut lines);
        }
        stats
    }

    /// Occupied buckets as `(key, payload)` in bucket order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.buckets
            .iter()
            .filter(|b| !b.is_empty())
            .map(|b| (b.key, b.slot.payload()))
    }

    pub fn contains(&self, key: u64) -> bool {
        self.position(key).is_some()
    }

    pub fn insert(&mut self, key: u64, payload: u64) -> Result<InsertOutcome, HashError> {
        if key == EMPTY_KEY {
            return Err(HashError::SentinelKey);
        }
        if payload >= PAYLOAD_LIMIT {
            return Err(HashError::PayloadTooLarge(payload));
        }
        if let Some(pos) = self.position(key) {
            let b = &mut self.buckets[pos];
            b.slot = b.slot.with_payload(payload);
            return Ok(InsertOutcome::Updated);
        }
        let mut grown = false;
        if self.count + 1 > self.max_entries() {
            self.grow_for(GrowthCause::LoadFactor)?;
            grown = true;
        }
        while self.place_new(key, payload).is_err() {
            self.grow_for(GrowthCause::Encodability)?;
            grown = true;
        }
        self.count += 1;
        Ok(if grown {
            InsertOutcome::GrownThenInserted
        } else {
            InsertOutcome::Inserted
        })
    }

    /// Overwrites the payload of an existing key. Returns false if absent.
    pub fn update_payload(&mut self, key: u64, payload: u64) -> Result<bool, HashError> {
        if payload >= PAYLOAD_LIMIT {
            return Err(HashError::PayloadTooLarge(payload));
        }
        Ok(match self.position(key) {
            Some(pos) => {
                let b = &mut self.buckets[pos];
                b.slot = b.slot.with_payload(payload);
                true
            }
            None => false,
        })
    }

    /// Stores a key known to be absent. Leaves the table untouched on failure.
    fn place_new(&mut self, key: u64, payload: u64) -> Result<(), NoFreeBucket> {
        let root = self.hash_index(key);
        let occupant = self.buckets[root];
        if occupant.is_empty() {
            self.buckets[root] = Bucket {
                key,
                slot: PackedSlot::new(0, payload),
            };
            return Ok(());
        }
        let home = self.hash_index(occupant.key);
        if home == root {
            let mut tail = root;
            while let Some(next) = self.next_of(tail) {
                tail = next;
            }
            let anchor = match self.config.anchor {
                ProbeAnchor::Tail => tail,
                ProbeAnchor::Head => root,
            };
            let free = self.find_free(anchor, tail).ok_or(NoFreeBucket)?;
            self.buckets[free] = Bucket {
                key,
                slot: PackedSlot::new(0, payload),
            };
            self.set_link(tail, Some(free));
        } else {
            self.relocate_lodger(root, home)?;
            self.buckets[root] = Bucket {
                key,
                slot: PackedSlot::new(0, payload),
            };
        }
        Ok(())
    }

    /// Moves the lodger at `pos` (whose chain starts at `home`) somewhere else,
    /// re-linking its predecessor and, when needed, its successors.
    ///
    /// Bucket `pos` is left holding stale data; the caller overwrites it.
    fn relocate_lodger(&mut self, pos: usize, home: usize) -> Result<(), NoFreeBucket> {
        let mut pred = home;
        while let Some(next) = self.next_of(pred) {
            if next == pos {
                break;
            }
            pred = next;
        }
        debug_assert_eq!(self.next_of(pred), Some(pos), "lodger not on its home chain");

        self.undo.clear();
        let mut cur = pos;
        let mut moved = 0usize;
        loop {
            let anchor = match self.config.anchor {
                ProbeAnchor::Tail => pred,
                ProbeAnchor::Head => home,
            };
            let Some(dest) = self.find_free(anchor, pred) else {
                self.rollback();
                return Err(NoFreeBucket);
            };
            let record = self.buckets[cur];
            let succ = self.next_of(cur);
            self.write_logged(
                dest,
                Bucket {
                    key: record.key,
                    slot: record.slot.with_code(0),
                },
            );
            let pred_slot = self.buckets[pred].slot;
            let code = encode_offset(dest as isize - pred as isize).expect("probe respects link range");
            self.write_logged(
                pred,
                Bucket {
                    key: self.buckets[pred].key,
                    slot: pred_slot.with_code(code),
                },
            );
            if cur != pos {
                self.write_logged(cur, Bucket::EMPTY);
            }
            let Some(succ) = succ else { break };
            if let Some(code) = encode_offset(succ as isize - dest as isize) {
                let slot = self.buckets[dest].slot.with_code(code);
                self.buckets[dest].slot = slot;
                break;
            }
            moved += 1;
            if moved > self.config.relocation_budget {
                self.rollback();
                return Err(NoFreeBucket);
            }
            pred = dest;
            cur = succ;
        }
        self.undo.clear();
        Ok(())
    }

    fn write_logged(&mut self, i: usize, bucket: Bucket) {
        self.undo.push((i, self.buckets[i]));
        self.buckets[i] = bucket;
    }

    fn rollback(&mut self) {
        while let Some((i, b)) = self.undo.pop() {
            self.buckets[i] = b;
        }
    }

    fn set_link(&mut self, from: usize, to: Option<usize>) {
        let code = match to {
            Some(to) => encode_offset(to as isize - from as isize).expect("link out of range"),
            None => 0,
        };
        let b = &mut self.buckets[from];
        b.slot = b.slot.with_code(code);
    }

    /// Nearest free bucket to `anchor` that can be linked from `anchor`.
    ///
    /// The anchor's own cacheline is searched first, in both directions; then
    /// the search widens one bucket at a time on both sides. Ties go to the
    /// higher index. Returns `None` when no free bucket is within link range.
    pub fn find_free_neighbor(&self, anchor: usize) -> Option<usize> {
        self.find_free(anchor, anchor)
    }

    fn find_free(&self, anchor: usize, link_from: usize) -> Option<usize> {
        let len = self.capacity() as isize;
        let from = link_from as isize;
        let lo = (from + MIN_OFFSET).max(0);
        let hi = (from + MAX_OFFSET).min(len - 1);
        let usable = |pos: isize| -> bool {
            pos >= lo && pos <= hi && pos != from && self.buckets[pos as usize].is_empty()
        };
        let a = anchor as isize;
        let line = a & !(BUCKETS_PER_LINE as isize - 1);
        let line_end = line + BUCKETS_PER_LINE as isize;

        match self.config.direction {
            ProbeDirection::Bidirectional => {
                for d in 1..BUCKETS_PER_LINE as isize {
                    if a + d < line_end && usable(a + d) {
                        return Some((a + d) as usize);
                    }
                    if a - d >= line && usable(a - d) {
                        return Some((a - d) as usize);
                    }
                }
                let reach = (hi - a).max(a - lo);
                for d in 1..=reach {
                    let up = a + d;
                    if up >= line_end && usable(up) {
                        return Some(up as usize);
                    }
                    let down = a - d;
                    if down < line && usable(down) {
                        return Some(down as usize);
                    }
                }
                None
            }
            ProbeDirection::Forward => {
                let start = (a + 1).max(lo);
                if let Some(pos) = (start..=hi).find(|&p| usable(p)) {
                    return Some(pos as usize);
                }
                (lo..a).rev().find(|&p| usable(p)).map(|p| p as usize)
            }
        }
    }

    /// Removes `key`. Returns whether it was present.
    pub fn erase(&mut self, key: u64) -> bool {
        if key == EMPTY_KEY {
            return false;
        }
        let root = self.hash_index(key);
        let rb = self.buckets[root];
        if rb.is_empty() || self.hash_index(rb.key) != root {
            return false;
        }
        let mut prev = None;
        let mut cur = root;
        while self.buckets[cur].key != key {
            match self.next_of(cur) {
                Some(next) => {
                    prev = Some(cur);
                    cur = next;
                }
                None => return false,
            }
        }
        let succ = self.next_of(cur);
        match (prev, succ) {
            (None, None) => self.buckets[cur] = Bucket::EMPTY,
            (None, Some(s)) => {
                // promote the first successor into the home bucket
                let s_next = self.next_of(s);
                let link = match s_next {
                    None => Some(0),
                    Some(n) => encode_offset(n as isize - root as isize),
                };
                match link {
                    Some(code) => {
                        let moved = self.buckets[s];
                        self.buckets[root] = Bucket {
                            key: moved.key,
                            slot: moved.slot.with_code(code),
                        };
                        self.buckets[s] = Bucket::EMPTY;
                    }
                    None => self.replace_with_tail(root),
                }
            }
            (Some(p), None) => {
                self.set_link(p, None);
                self.buckets[cur] = Bucket::EMPTY;
            }
            (Some(p), Some(s)) => match encode_offset(s as isize - p as isize) {
                Some(code) => {
                    let b = &mut self.buckets[p];
                    b.slot = b.slot.with_code(code);
                    self.buckets[cur] = Bucket::EMPTY;
                }
                None => self.replace_with_tail(cur),
            },
        }
        self.count -= 1;
        true
    }

    /// Overwrites the record at `pos` with the chain's tail record and frees
    /// the tail. Links other than the tail predecessor's are untouched, so
    /// this never needs an out-of-range offset.
    fn replace_with_tail(&mut self, pos: usize) {
        let mut before = pos;
        let mut tail = self.next_of(pos).expect("pos has a successor");
        while let Some(next) = self.next_of(tail) {
            before = tail;
            tail = next;
        }
        let t = self.buckets[tail];
        let b = &mut self.buckets[pos];
        b.key = t.key;
        b.slot = b.slot.with_payload(t.slot.payload());
        self.set_link(before, None);
        self.buckets[tail] = Bucket::EMPTY;
    }

    /// Rebuilds the table at twice its capacity.
    pub fn grow(&mut self) -> Result<(), HashError> {
        self.grow_for(GrowthCause::Explicit)
    }

    fn grow_for(&mut self, cause: GrowthCause) -> Result<(), HashError> {
        self.growth.record(cause);
        let mut capacity = self.capacity() * 2;
        loop {
            match self.rebuilt(capacity)? {
                Some(table) => {
                    let growth = self.growth;
                    *self = table;
                    self.growth = growth;
                    return Ok(());
                }
                None => {
                    self.growth.record(GrowthCause::Encodability);
                    capacity *= 2;
                }
            }
        }
    }

    fn rebuilt(&self, capacity: usize) -> Result<Option<Table>, HashError> {
        let mut table = Table::with_config(capacity, self.config.clone())?;
        for b in self.buckets.iter().filter(|b| !b.is_empty()) {
            if table.place_new(b.key, b.slot.payload()).is_err() {
                return Ok(None);
            }
            table.count += 1;
        }
        Ok(Some(table))
    }

    /// Checks the structural invariants by a full scan.
    ///
    /// * every stored key's home bucket holds a host of that home;
    /// * chains from each host visit exactly the keys with that home, with
    ///   in-range links and no cycles;
    /// * the entry count matches and respects the load factor bound.
    pub fn validate(&self) -> Result<(), String> {
        let cap = self.capacity();
        let mut seen = vec![false; cap];
        let mut occupied = 0usize;
        for (i, b) in self.buckets.iter().enumerate() {
            if b.is_empty() {
                if b.slot != PackedSlot::EMPTY {
                    return Err(format!("empty bucket {i} has nonzero slot"));
                }
                continue;
            }
            occupied += 1;
            let home = self.hash_index(b.key);
            let hb = &self.buckets[home];
            if hb.is_empty() || self.hash_index(hb.key) != home {
                return Err(format!("key {} at {i}: home {home} does not hold a host", b.key));
            }
            if home != i {
                continue;
            }
            let mut cur = i;
            let mut steps = 0usize;
            loop {
                if seen[cur] {
                    return Err(format!("bucket {cur} reached twice (cycle or shared node)"));
                }
                seen[cur] = true;
                let node = &self.buckets[cur];
                if node.is_empty() {
                    return Err(format!("chain from {i} reaches empty bucket {cur}"));
                }
                if self.hash_index(node.key) != i {
                    return Err(format!("chain from {i} contains foreign key at {cur}"));
                }
                match node.slot.offset() {
                    None => break,
                    Some(d) => {
                        let next = cur as isize + d;
                        if next < 0 || next >= cap as isize {
                            return Err(format!("link from {cur} leaves the table"));
                        }
                        cur = next as usize;
                    }
                }
                steps += 1;
                if steps > cap {
                    return Err("chain longer than table".into());
                }
            }
        }
        if let Some(i) = (0..cap).find(|&i| !self.buckets[i].is_empty() && !seen[i]) {
            return Err(format!("bucket {i} is not on its home chain"));
        }
        if occupied != self.count {
            return Err(format!("count {} but {occupied} occupied buckets", self.count));
        }
        if self.count > self.max_entries() {
            return Err(format!("load factor {} exceeds maximum", self.load_factor()));
        }
        Ok(())
    }
}
