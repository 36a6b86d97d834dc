//! Two-tier value storage behind a [`Table`] index.
//!
//! The 52-bit index payload is a [`TierRef`]: its top bit says whether the
//! value lives in the in-memory hot arena or in the append-only
//! [`ValueLog`], and the low 51 bits hold the arena slot or the log offset.
//!
//! Readers take a shared lock over the index and arena. `put`, `evict_pass`
//! and `compact_log` serialize on an internal mutator lock and take the
//! exclusive lock only to flip index entries, after the log write they
//! depend on has completed.

mod log;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::{Mutex, RwLock, RwLockUpgradableReadGuard, RwLockWriteGuard};

pub use self::log::{
    decode_header, decode_log, decode_record, encode_header, encode_record, Record, ValueLog, LOG_HEADER_LEN,
    LOG_MAGIC, LOG_VERSION, RECORD_HEADER_LEN,
};
use crate::engine::{self, EngineConfig};
use crate::hash::{HashError, Table, TableConfig, EMPTY_KEY, PAYLOAD_BITS};

const TIER_BIT: u64 = 1 << (PAYLOAD_BITS - 1);
/// Exclusive bound on hot slot ids and cold offsets.
pub const REF_LIMIT: u64 = TIER_BIT;
pub const MAX_VALUE_LEN: usize = (1 << 31) - 1;

#[derive(Debug, thiserror::Error)]
pub enum TieredError {
    #[error("key {0:#x} is reserved")]
    SentinelKey(u64),
    #[error("value of {0} bytes exceeds the 2^31 limit")]
    ValueTooLarge(usize),
    #[error("hot arena full: {needed} bytes needed, budget {budget}")]
    BackPressure { needed: usize, budget: usize },
    #[error("log record at offset {offset} does not belong to key {key:#x}")]
    Corruption { key: u64, offset: u64 },
    #[error("log offset {0} exceeds the 51-bit reference range")]
    OffsetOverflow(u64),
    #[error("truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("bad value log header")]
    BadHeader,
    #[error(transparent)]
    Index(#[from] HashError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where a value lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TierRef {
    Hot(u64),
    Cold(u64),
}

impl TierRef {
    pub fn to_payload(self) -> u64 {
        match self {
            TierRef::Hot(slot) => {
                debug_assert!(slot < REF_LIMIT);
                slot
            }
            TierRef::Cold(off) => {
                debug_assert!(off < REF_LIMIT);
                TIER_BIT | off
            }
        }
    }

    pub fn from_payload(p: u64) -> TierRef {
        if p & TIER_BIT == 0 {
            TierRef::Hot(p)
        } else {
            TierRef::Cold(p & (TIER_BIT - 1))
        }
    }
}

/// A value resident in memory.
#[derive(Debug)]
pub struct HotEntry {
    pub key: u64,
    pub value: Box<[u8]>,
    pub last_access_tick: AtomicU64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TieredConfig {
    /// Budget for hot value bytes.
    pub hot_budget_bytes: usize,
    /// Maintenance demotes once hot bytes exceed this fraction of the budget...
    pub high_watermark: f64,
    /// ...down to this fraction.
    pub low_watermark: f64,
    /// Move a value back into the hot arena when a get reads it from the log.
    pub promote_on_read: bool,
    pub index: TableConfig,
}

impl Default for TieredConfig {
    fn default() -> Self {
        TieredConfig {
            hot_budget_bytes: 256 << 20,
            high_watermark: 0.9,
            low_watermark: 0.7,
            promote_on_read: true,
            index: TableConfig::default(),
        }
    }
}

/// Counters since the store was opened.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TieredStats {
    pub hot_hits: u64,
    pub cold_reads: u64,
    /// Read syscalls issued against value logs to serve values.
    pub log_value_reads: u64,
    pub misses: u64,
    pub promotions: u64,
    pub demotions: u64,
    pub compactions: u64,
}

/// Memory and disk accounting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TieredUsage {
    pub keys: usize,
    pub hot_entries: usize,
    pub hot_bytes: usize,
    pub index_bytes: usize,
    pub log_bytes: u64,
    /// Log bytes no index entry refers to.
    pub garbage_bytes: u64,
}

struct Inner {
    index: Table,
    hot: Vec<Option<HotEntry>>,
    free_slots: Vec<u64>,
    hot_bytes: usize,
    hot_entries: usize,
    log: Arc<ValueLog>,
    log_generation: u64,
    garbage_bytes: u64,
}

impl Inner {
    fn alloc_slot(&mut self, entry: HotEntry) -> u64 {
        self.hot_bytes += entry.value.len();
        self.hot_entries += 1;
        match self.free_slots.pop() {
            Some(s) => {
                self.hot[s as usize] = Some(entry);
                s
            }
            None => {
                self.hot.push(Some(entry));
                self.hot.len() as u64 - 1
            }
        }
    }

    fn release_slot(&mut self, slot: u64) -> HotEntry {
        let e = self.hot[slot as usize].take().expect("live hot slot");
        self.hot_bytes -= e.value.len();
        self.hot_entries -= 1;
        self.free_slots.push(slot);
        e
    }

    fn forget(&mut self, r: TierRef) {
        match r {
            TierRef::Hot(slot) => {
                self.release_slot(slot);
            }
            TierRef::Cold(off) => self.garbage_bytes += self.log.record_len(off).unwrap_or(0),
        }
    }

    fn hot_len(&self, key: u64) -> usize {
        match self.index.lookup(key).map(TierRef::from_payload) {
            Some(TierRef::Hot(slot)) => self.hot[slot as usize].as_ref().map_or(0, |e| e.value.len()),
            _ => 0,
        }
    }
}

/// Hot/cold value store keyed by 64-bit ids.
pub struct TieredStore {
    inner: RwLock<Inner>,
    mutator: Mutex<()>,
    dir: PathBuf,
    config: TieredConfig,
    tick: AtomicU64,
    hot_hits: AtomicU64,
    cold_reads: AtomicU64,
    retired_log_reads: AtomicU64,
    misses: AtomicU64,
    promotions: AtomicU64,
    demotions: AtomicU64,
    compactions: AtomicU64,
}

fn log_path(dir: &Path, generation: u64) -> PathBuf {
    dir.join(format!("values.{generation}.nbvl"))
}

impl TieredStore {
    /// Opens an empty store whose value log lives in `dir`.
    pub fn open(dir: impl Into<PathBuf>, config: TieredConfig) -> Result<Self, TieredError> {
        Self::open_sized(dir, config, 0)
    }

    /// [`TieredStore::open`] with the index pre-sized for `expected_keys`.
    pub fn open_sized(dir: impl Into<PathBuf>, config: TieredConfig, expected_keys: usize) -> Result<Self, TieredError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let log = ValueLog::create(&log_path(&dir, 0))?;
        Ok(TieredStore {
            inner: RwLock::new(Inner {
                index: Table::with_entries(expected_keys.max(1), config.index.clone())?,
                hot: Vec::new(),
                free_slots: Vec::new(),
                hot_bytes: 0,
                hot_entries: 0,
                log: Arc::new(log),
                log_generation: 0,
                garbage_bytes: 0,
            }),
            mutator: Mutex::new(()),
            dir,
            config,
            tick: AtomicU64::new(0),
            hot_hits: AtomicU64::new(0),
            cold_reads: AtomicU64::new(0),
            retired_log_reads: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            promotions: AtomicU64::new(0),
            demotions: AtomicU64::new(0),
            compactions: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &TieredConfig {
        &self.config
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn next_tick(&self) -> u64 {
        self.tick.fetch_add(1, Ordering::Relaxed) + 1
    }

    /// Stores `value` hot under `key`, replacing any previous value. A full
    /// arena triggers one eviction pass before giving up with
    /// [`TieredError::BackPressure`].
    pub fn put(&self, key: u64, value: &[u8]) -> Result<(), TieredError> {
        if key == EMPTY_KEY {
            return Err(TieredError::SentinelKey(key));
        }
        if value.len() > MAX_VALUE_LEN {
            return Err(TieredError::ValueTooLarge(value.len()));
        }
        let budget = self.config.hot_budget_bytes;
        let _m = self.mutator.lock();
        let fits = |inner: &Inner| inner.hot_bytes - inner.hot_len(key) + value.len() <= budget;
        let guard = self.inner.upgradable_read();
        let mut inner = if fits(&guard) {
            RwLockUpgradableReadGuard::upgrade(guard)
        } else {
            let (_, inner) = self.evict_guarded(guard, budget.saturating_sub(value.len()))?;
            if !fits(&inner) {
                return Err(TieredError::BackPressure {
                    needed: value.len(),
                    budget,
                });
            }
            inner
        };
        let entry = HotEntry {
            key,
            value: value.into(),
            last_access_tick: AtomicU64::new(self.next_tick()),
        };
        let slot = inner.alloc_slot(entry);
        let prior = inner.index.lookup(key).map(TierRef::from_payload);
        if let Err(e) = inner.index.insert(key, TierRef::Hot(slot).to_payload()) {
            inner.release_slot(slot);
            return Err(e.into());
        }
        if let Some(r) = prior {
            inner.forget(r);
        }
        Ok(())
    }

    /// The value under `key`. A cold hit costs exactly one log read and,
    /// with `promote_on_read`, moves the value back into the hot arena.
    pub fn get(&self, key: u64) -> Result<Option<Vec<u8>>, TieredError> {
        let (bytes, off, generation) = {
            let inner = self.inner.read();
            match inner.index.lookup(key).map(TierRef::from_payload) {
                None => {
                    self.misses.fetch_add(1, Ordering::Relaxed);
                    return Ok(None);
                }
                Some(TierRef::Hot(slot)) => {
                    let e = inner.hot[slot as usize].as_ref().expect("index points at live slot");
                    e.last_access_tick.store(self.next_tick(), Ordering::Relaxed);
                    self.hot_hits.fetch_add(1, Ordering::Relaxed);
                    return Ok(Some(e.value.to_vec()));
                }
                Some(TierRef::Cold(off)) => {
                    self.cold_reads.fetch_add(1, Ordering::Relaxed);
                    (inner.log.read(off, key)?, off, inner.log_generation)
                }
            }
        };
        if self.config.promote_on_read {
            self.promote(key, off, generation, &bytes);
        }
        Ok(Some(bytes))
    }

    /// Looks up a batch with a lookup engine over the index, then fetches
    /// each value from its tier. Cold hits cost one log read each and are
    /// promoted afterwards like [`TieredStore::get`].
    pub fn get_many(&self, keys: &[u64], engine: &EngineConfig) -> Result<Vec<Option<Vec<u8>>>, TieredError> {
        let mut out = Vec::with_capacity(keys.len());
        self.visit_many(keys, engine, |_, v| out.push(v.map(<[u8]>::to_vec)))?;
        Ok(out)
    }

    /// Like [`TieredStore::get_many`] but hands each value to `f` in key
    /// order instead of copying it out.
    pub fn visit_many(&self, keys: &[u64], engine: &EngineConfig, mut f: impl FnMut(usize, Option<&[u8]>)) -> Result<(), TieredError> {
        let mut cold = Vec::new();
        let generation = {
            let inner = self.inner.read();
            let refs = engine::batch_lookup(&inner.index, keys, engine);
            // Hot values sit two dependent loads away (slot, then boxed
            // bytes); prefetch each level for the whole batch first so the
            // misses overlap.
            for r in refs.iter().flatten() {
                if let TierRef::Hot(slot) = TierRef::from_payload(*r) {
                    engine::prefetch(inner.hot.as_ptr().wrapping_add(slot as usize));
                }
            }
            for r in refs.iter().flatten() {
                if let TierRef::Hot(slot) = TierRef::from_payload(*r) {
                    if let Some(e) = &inner.hot[slot as usize] {
                        engine::prefetch(e.value.as_ptr());
                    }
                }
            }
            let tick = self.next_tick();
            let (mut hits, mut misses) = (0, 0);
            for (i, r) in refs.into_iter().enumerate() {
                match r.map(TierRef::from_payload) {
                    None => {
                        misses += 1;
                        f(i, None);
                    }
                    Some(TierRef::Hot(slot)) => {
                        let e = inner.hot[slot as usize].as_ref().expect("index points at live slot");
                        e.last_access_tick.store(tick, Ordering::Relaxed);
                        hits += 1;
                        f(i, Some(&e.value));
                    }
                    Some(TierRef::Cold(off)) => {
                        self.cold_reads.fetch_add(1, Ordering::Relaxed);
                        let bytes = inner.log.read(off, keys[i])?;
                        f(i, Some(&bytes));
                        cold.push((i, off, bytes));
                    }
                }
            }
            self.hot_hits.fetch_add(hits, Ordering::Relaxed);
            self.misses.fetch_add(misses, Ordering::Relaxed);
            inner.log_generation
        };
        if self.config.promote_on_read {
            for (i, off, bytes) in cold {
                self.promote(keys[i], off, generation, &bytes);
            }
        }
        Ok(())
    }

    /// Inserts new records: hot while they fit the budget, appended straight
    /// to the log after that. Returns how many went cold. Keys already
    /// present are overwritten.
    pub fn bulk_load<I, V>(&self, records: I) -> Result<usize, TieredError>
    where
        I: IntoIterator<Item = (u64, V)>,
        V: AsRef<[u8]>,
    {
        let budget = self.config.hot_budget_bytes;
        let _m = self.mutator.lock();
        let mut cold = 0;
        let mut inner = self.inner.write();
        for (key, value) in records {
            let value = value.as_ref();
            if key == EMPTY_KEY {
                return Err(TieredError::SentinelKey(key));
            }
            if value.len() > MAX_VALUE_LEN {
                return Err(TieredError::ValueTooLarge(value.len()));
            }
            let r = if inner.hot_bytes + value.len() <= budget {
                TierRef::Hot(inner.alloc_slot(HotEntry {
                    key,
                    value: value.into(),
                    last_access_tick: AtomicU64::new(self.next_tick()),
                }))
            } else {
                let off = inner.log.append(key, value)?;
                if off >= REF_LIMIT {
                    return Err(TieredError::OffsetOverflow(off));
                }
                cold += 1;
                TierRef::Cold(off)
            };
            let prior = inner.index.lookup(key).map(TierRef::from_payload);
            inner.index.insert(key, r.to_payload())?;
            if let Some(p) = prior {
                inner.forget(p);
            }
        }
        Ok(cold)
    }

    fn promote(&self, key: u64, off: u64, generation: u64, bytes: &[u8]) {
        let mut inner = self.inner.write();
        let still_cold =
            inner.log_generation == generation && inner.index.lookup(key) == Some(TierRef::Cold(off).to_payload());
        if !still_cold || inner.hot_bytes + bytes.len() > self.config.hot_budget_bytes {
            return;
        }
        let slot = inner.alloc_slot(HotEntry {
            key,
            value: bytes.into(),
            last_access_tick: AtomicU64::new(self.next_tick()),
        });
        inner
            .index
            .update_payload(key, TierRef::Hot(slot).to_payload())
            .expect("key present");
        inner.garbage_bytes += (RECORD_HEADER_LEN + bytes.len()) as u64;
        self.promotions.fetch_add(1, Ordering::Relaxed);
    }

    pub fn contains(&self, key: u64) -> bool {
        self.inner.read().index.contains(key)
    }

    pub fn len(&self) -> usize {
        self.inner.read().index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Where `key` currently lives.
    pub fn tier_of(&self, key: u64) -> Option<TierRef> {
        self.inner.read().index.lookup(key).map(TierRef::from_payload)
    }

    /// Demotes least recently used hot entries until hot bytes are at most
    /// `target_hot_bytes`, returning how many were demoted.
    ///
    /// Recency is judged from a snapshot of access ticks taken at the start
    /// of the pass, so an entry read after the snapshot may still be demoted.
    /// With no concurrent reads the order is exact LRU.
    pub fn evict_pass(&self, target_hot_bytes: usize) -> Result<usize, TieredError> {
        let _m = self.mutator.lock();
        self.evict_locked(target_hot_bytes)
    }

    fn evict_locked(&self, target: usize) -> Result<usize, TieredError> {
        Ok(self.evict_guarded(self.inner.upgradable_read(), target)?.0)
    }

    /// Snapshot and log append run beside readers; the upgradable guard keeps
    /// promotions out until the flip, which happens under the returned
    /// exclusive guard.
    fn evict_guarded<'a>(
        &'a self,
        inner: RwLockUpgradableReadGuard<'a, Inner>,
        target: usize,
    ) -> Result<(usize, RwLockWriteGuard<'a, Inner>), TieredError> {
        if inner.hot_bytes <= target {
            return Ok((0, RwLockUpgradableReadGuard::upgrade(inner)));
        }
        let mut order: Vec<(u64, u64, usize)> = inner
            .hot
            .iter()
            .enumerate()
            .filter_map(|(s, e)| {
                e.as_ref()
                    .map(|e| (e.last_access_tick.load(Ordering::Relaxed), s as u64, e.value.len()))
            })
            .collect();
        order.sort_unstable();
        let mut excess = inner.hot_bytes - target;
        let mut victims = Vec::new();
        for (_, slot, len) in order {
            if excess == 0 {
                break;
            }
            victims.push(slot);
            excess = excess.saturating_sub(len.max(1));
        }
        // write first, readers still served from the hot copies
        let recs = victims.iter().map(|&s| {
            let e = inner.hot[s as usize].as_ref().expect("victim is live");
            (e.key, &e.value[..])
        });
        let offsets = inner.log.append_batch(recs)?;
        if let Some(&last) = offsets.last() {
            if last >= REF_LIMIT {
                return Err(TieredError::OffsetOverflow(last));
            }
        }
        // then flip
        let mut inner = RwLockUpgradableReadGuard::upgrade(inner);
        for (&slot, &off) in victims.iter().zip(&offsets) {
            let e = inner.release_slot(slot);
            inner
                .index
                .update_payload(e.key, TierRef::Cold(off).to_payload())
                .expect("victim indexed");
        }
        self.demotions.fetch_add(victims.len() as u64, Ordering::Relaxed);
        Ok((victims.len(), inner))
    }

    /// Rewrites live cold records into a fresh log and drops the old one,
    /// returning the bytes reclaimed. On error the old log stays in use.
    pub fn compact_log(&self) -> Result<u64, TieredError> {
        let _m = self.mutator.lock();
        let (old, generation, live) = {
            let inner = self.inner.read();
            let live: Vec<(u64, u64)> = inner
                .index
                .iter()
                .filter_map(|(k, p)| match TierRef::from_payload(p) {
                    TierRef::Cold(off) => Some((k, off)),
                    TierRef::Hot(_) => None,
                })
                .collect();
            (Arc::clone(&inner.log), inner.log_generation + 1, live)
        };
        let path = log_path(&self.dir, generation);
        let (fresh, offsets) = match copy_live(&old, &path, &live) {
            Ok(f) => f,
            Err(e) => {
                let _ = std::fs::remove_file(&path);
                return Err(e);
            }
        };
        let reclaimed = old.len().saturating_sub(fresh.len());
        let mut inner = self.inner.write();
        for (&(key, old_off), &new_off) in live.iter().zip(&offsets) {
            // a promotion may have moved the key since the snapshot
            if inner.index.lookup(key) == Some(TierRef::Cold(old_off).to_payload()) {
                inner
                    .index
                    .update_payload(key, TierRef::Cold(new_off).to_payload())
                    .expect("key present");
            }
        }
        self.retired_log_reads.fetch_add(old.value_reads(), Ordering::Relaxed);
        inner.log = Arc::new(fresh);
        inner.log_generation = generation;
        inner.garbage_bytes = 0;
        drop(inner);
        // readers hold the shared lock for the whole read, so none can still
        // be using the old file
        std::fs::remove_file(old.path())?;
        self.compactions.fetch_add(1, Ordering::Relaxed);
        Ok(reclaimed)
    }

    pub fn stats(&self) -> TieredStats {
        let (current, retired) = {
            let inner = self.inner.read();
            (inner.log.value_reads(), self.retired_log_reads.load(Ordering::Relaxed))
        };
        TieredStats {
            hot_hits: self.hot_hits.load(Ordering::Relaxed),
            cold_reads: self.cold_reads.load(Ordering::Relaxed),
            log_value_reads: current + retired,
            misses: self.misses.load(Ordering::Relaxed),
            promotions: self.promotions.load(Ordering::Relaxed),
            demotions: self.demotions.load(Ordering::Relaxed),
            compactions: self.compactions.load(Ordering::Relaxed),
        }
    }

    pub fn usage(&self) -> TieredUsage {
        let inner = self.inner.read();
        TieredUsage {
            keys: inner.index.len(),
            hot_entries: inner.hot_entries,
            hot_bytes: inner.hot_bytes,
            index_bytes: inner.index.memory_bytes(),
            log_bytes: inner.log.len(),
            garbage_bytes: inner.garbage_bytes,
        }
    }

    /// Path of the current value log.
    pub fn log_path(&self) -> PathBuf {
        self.inner.read().log.path().to_owned()
    }

    /// `(key, last_access_tick)` of every hot entry.
    pub fn hot_ticks(&self) -> Vec<(u64, u64)> {
        self.inner
            .read()
            .hot
            .iter()
            .flatten()
            .map(|e| (e.key, e.last_access_tick.load(Ordering::Relaxed)))
            .collect()
    }

    /// Overwrites bytes of the current log in place. Only for fault injection.
    #[doc(hidden)]
    pub fn scribble_log(&self, offset: u64, bytes: &[u8]) -> std::io::Result<()> {
        self.inner.read().log.scribble(offset, bytes)
    }

    /// One watermark check: demote down to the low watermark if hot bytes
    /// exceed the high one.
    pub fn maintain(&self) -> Result<usize, TieredError> {
        let budget = self.config.hot_budget_bytes as f64;
        if (self.inner.read().hot_bytes as f64) <= budget * self.config.high_watermark {
            return Ok(0);
        }
        self.evict_pass((budget * self.config.low_watermark) as usize)
    }
}

fn copy_live(old: &ValueLog, path: &Path, live: &[(u64, u64)]) -> Result<(ValueLog, Vec<u64>), TieredError> {
    let fresh = ValueLog::create(path)?;
    let mut offsets = Vec::with_capacity(live.len());
    for chunk in live.chunks(4096) {
        let values = chunk
            .iter()
            .map(|&(k, off)| old.read(off, k))
            .collect::<Result<Vec<_>, _>>()?;
        offsets.extend(fresh.append_batch(chunk.iter().zip(&values).map(|(&(k, _), v)| (k, &v[..])))?);
    }
    Ok((fresh, offsets))
}

/// Background thread running [`TieredStore::maintain`] periodically.
/// Stops when dropped.
pub struct Maintenance {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl Maintenance {
    pub fn spawn(store: Arc<TieredStore>, every: Duration) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let handle = std::thread::spawn(move || {
            while !flag.load(Ordering::Relaxed) {
                if let Err(e) = store.maintain() {
                    tracing::warn!(error = %e, "tiered maintenance pass failed");
                }
                std::thread::park_timeout(every);
            }
        });
        Maintenance {
            stop,
            handle: Some(handle),
        }
    }
}

impl Drop for Maintenance {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            h.thread().unpark();
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests;
