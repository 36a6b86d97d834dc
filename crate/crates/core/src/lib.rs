//! Cache-conscious batch point lookup.
//!
//! The crate is organised around [`hash::Table`], a coalesced hash table for
//! 64-bit keys and 52-bit payloads that keeps every collision chain rooted at
//! its home bucket and packs the chain link into the top 12 bits of the value
//! word. On top of it sit batch lookup engines ([`engine`]), the ablation
//! ladder of simpler chained tables used for comparison ([`ablation`]) and a
//! two-tier value store that keeps hot values in memory and cold values in an
//! append-only file ([`tiered`]).

pub mod ablation;
pub mod engine;
pub mod hash;
pub mod mix;
#[cfg(any(test, feature = "oracle"))]
pub mod oracle;
pub mod tiered;

pub use hash::{HashError, InsertOutcome, PackedSlot, ProbeStats, Table, TableConfig};
