//! The ablation ladder and reference tables.
//!
//! Each table here stores the same 16-byte (key, value) buckets as
//! [`Table`](crate::hash::Table) and honours the same contracts (64-bit keys,
//! 52-bit payloads, all-ones key reserved, growth at the load-factor bound),
//! but drops one or more of its placement rules:
//!
//! | table | lodger relocation | neighbour probing | inline link |
//! |---|---|---|---|
//! | [`CoalescedTable`] | no (fixed cellar) | no | no |
//! | [`RelocatingTable`] with [`FreeSlotPolicy::CursorScan`] | yes | no | no |
//! | [`RelocatingTable`] with [`FreeSlotPolicy::Neighbor`] | yes | yes | no |
//! | [`Table`](crate::hash::Table) | yes | yes | yes |
//!
//! [`LinearProbingTable`] and [`RandomAccessTable`] are the comparison
//! baselines: plain open addressing, and a collision-oblivious single read
//! that bounds lookup throughput from above.

mod coalesced;
mod linear;
mod random_access;
mod relocating;

pub use self::coalesced::CoalescedTable;
pub use self::linear::LinearProbingTable;
pub use self::random_access::RandomAccessTable;
pub use self::relocating::{FreeSlotPolicy, RelocatingTable};

use crate::hash::{HashError, InsertOutcome, LineSet, ProbeStats, Table, TableConfig, EMPTY_KEY, PAYLOAD_LIMIT};

/// Shared surface of every table in the ladder.
pub trait ProbeTable: Send + Sync {
    fn name(&self) -> &'static str;
    fn insert(&mut self, key: u64, payload: u64) -> Result<InsertOutcome, HashError>;
    fn lookup(&self, key: u64) -> Option<u64>;
    fn erase(&mut self, key: u64) -> bool;
    fn lookup_metered(&self, key: u64, stats: &mut ProbeStats, lines: &mut LineSet) -> Option<u64>;
    fn len(&self) -> usize;
    fn capacity(&self) -> usize;
    /// Bytes of table memory, bucket array plus any side arrays.
    fn memory_bytes(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn measure_apcl(&self, keys: &[u64]) -> ProbeStats {
        let mut stats = ProbeStats::default();
        let mut lines = LineSet::default();
        for &k in keys {
            self.lookup_metered(k, &mut stats, &mut lines);
        }
        stats
    }

    fn batch_lookup(&self, keys: &[u64]) -> Vec<Option<u64>> {
        keys.iter().map(|&k| self.lookup(k)).collect()
    }
}

impl ProbeTable for Table {
    fn name(&self) -> &'static str {
        match self.config().direction {
            crate::hash::ProbeDirection::Bidirectional => "neighborhash",
            crate::hash::ProbeDirection::Forward => "linear-relocation",
        }
    }
    fn insert(&mut self, key: u64, payload: u64) -> Result<InsertOutcome, HashError> {
        Table::insert(self, key, payload)
    }
    fn lookup(&self, key: u64) -> Option<u64> {
        Table::lookup(self, key)
    }
    fn erase(&mut self, key: u64) -> bool {
        Table::erase(self, key)
    }
    fn lookup_metered(&self, key: u64, stats: &mut ProbeStats, lines: &mut LineSet) -> Option<u64> {
        Table::lookup_metered(self, key, stats, lines)
    }
    fn len(&self) -> usize {
        Table::len(self)
    }
    fn capacity(&self) -> usize {
        Table::capacity(self)
    }
    fn memory_bytes(&self) -> usize {
        Table::memory_bytes(self)
    }
}

/// Sizing and hashing shared by the ladder variants.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantConfig {
    /// Initial capacity in buckets (rounded up to a power of two).
    pub capacity: usize,
    pub max_load_factor: f64,
    pub hash_seed: u64,
    /// Fraction of buckets reserved as cellar by [`CoalescedTable`].
    pub cellar_fraction: f64,
}

impl Default for VariantConfig {
    fn default() -> Self {
        let t = TableConfig::default();
        VariantConfig {
            capacity: 64,
            max_load_factor: t.max_load_factor,
            hash_seed: t.hash_seed,
            cellar_fraction: 0.14,
        }
    }
}

impl VariantConfig {
    pub fn with_capacity(capacity: usize) -> Self {
        VariantConfig {
            capacity,
            ..VariantConfig::default()
        }
    }

    /// Capacity able to hold `entries` keys at the load-factor bound.
    pub fn for_entries(entries: usize) -> Self {
        let c = VariantConfig::default();
        VariantConfig {
            capacity: (entries as f64 / c.max_load_factor).ceil() as usize,
            ..c
        }
    }

    fn table_config(&self) -> TableConfig {
        TableConfig {
            max_load_factor: self.max_load_factor,
            hash_seed: self.hash_seed,
            ..TableConfig::default()
        }
    }

    fn rounded_capacity(&self) -> usize {
        self.capacity.max(4).next_power_of_two()
    }
}

/// Classic coalesced hashing with a fixed cellar.
pub fn variant_coalesced(config: &VariantConfig) -> Result<CoalescedTable, HashError> {
    CoalescedTable::new(config)
}

/// Lodger relocation only; free buckets come from a linear cursor scan.
pub fn variant_perfect_cellar(config: &VariantConfig) -> Result<RelocatingTable, HashError> {
    RelocatingTable::new(config, FreeSlotPolicy::CursorScan)
}

/// Lodger relocation plus cacheline-aware probing; links in a side array.
pub fn variant_neighbor_probing(config: &VariantConfig) -> Result<RelocatingTable, HashError> {
    RelocatingTable::new(config, FreeSlotPolicy::Neighbor)
}

/// The full NeighborHash table built from the same sizing.
pub fn variant_neighborhash(config: &VariantConfig) -> Result<Table, HashError> {
    Table::with_config(config.capacity, config.table_config())
}

/// NeighborHash placement with forward-only probing, i.e. linear probing
/// combined with lodger relocation.
pub fn variant_linear_relocation(config: &VariantConfig) -> Result<Table, HashError> {
    Table::with_config(
        config.capacity,
        TableConfig {
            direction: crate::hash::ProbeDirection::Forward,
            ..config.table_config()
        },
    )
}

fn check_entry(key: u64, payload: u64) -> Result<(), HashError> {
    if key == EMPTY_KEY {
        Err(HashError::SentinelKey)
    } else if payload >= PAYLOAD_LIMIT {
        Err(HashError::PayloadTooLarge(payload))
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests;
