//! Sharded, version-consistent batch serving over [`nbkv_core`].
//!
//! - [`server`]: one shard of one table, up to two live versions.
//! - [`net`]: framed TCP transport for servers and admin calls.
//! - [`client`]: fan-out client that negotiates a single version per batch.
//! - [`registry`]: endpoint registry, in memory or in a shared file.
//! - [`control`]: automatic sharding and rolling updates.
//! - [`cluster`]: in-process clusters for tests and benchmarks.

pub mod client;
pub mod cluster;
pub mod control;
pub mod net;
pub mod registry;
pub mod routing;
pub mod server;
pub mod shard_file;
pub mod wire;

pub use client::{BatchResult, ClientConfig, ClientError, ConsistencyMode, ShardClient};
pub use registry::{FileRegistry, MemoryRegistry, Registry};
pub use server::{ServerConfig, ShardServer};
