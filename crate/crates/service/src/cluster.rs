//! In-process clusters: real TCP servers on loopback, a shared registry and
//! helpers to stage versions whose values name the version they belong to.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::control::{shard_file_name, RolloutSpec};
use crate::net::{spawn_server, ServerHandle};
use crate::registry::{Registry, RegistryError};
use crate::routing::partition;
use crate::server::{ServerConfig, ShardServer};
use crate::shard_file::{write_shard, ShardFileError, ShardHeader};

/// Bytes of a value that identify its version and key.
pub const PLANTED_LEN: usize = 16;

/// A value whose first 16 bytes are `version` and `key`, padded to `len`.
pub fn planted_value(version: u64, key: u64, len: usize) -> Vec<u8> {
    let mut v = Vec::with_capacity(len.max(PLANTED_LEN));
    v.extend_from_slice(&version.to_le_bytes());
    v.extend_from_slice(&key.to_le_bytes());
    v.resize(len.max(PLANTED_LEN), (key as u8) ^ (version as u8));
    v
}

/// The (version, key) a planted value was made for.
pub fn planted_origin(value: &[u8]) -> Option<(u64, u64)> {
    let v = u64::from_le_bytes(value.get(..8)?.try_into().ok()?);
    let k = u64::from_le_bytes(value.get(8..16)?.try_into().ok()?);
    Some((v, k))
}

pub struct Replica {
    pub shard: u32,
    pub endpoint: String,
    pub server: Arc<ShardServer>,
    handle: Option<ServerHandle>,
}

impl Replica {
    pub fn is_running(&self) -> bool {
        self.handle.is_some()
    }
}

pub struct Cluster {
    pub table_id: u64,
    pub shard_count: u32,
    pub registry: Arc<dyn Registry>,
    pub replicas: Vec<Replica>,
    dir: PathBuf,
}

impl Cluster {
    /// Starts `shards × replicas` servers on loopback. Nothing is loaded or
    /// registered yet; see [`Cluster::bootstrap`].
    pub async fn start(
        table_id: u64,
        shards: u32,
        replicas: usize,
        dir: &Path,
        registry: Arc<dyn Registry>,
        configure: impl Fn(&mut ServerConfig),
    ) -> io::Result<Cluster> {
        let mut out = Vec::new();
        for shard in 0..shards {
            for r in 0..replicas {
                let mut cfg = ServerConfig::new(table_id, dir.join(format!("node-s{shard}-r{r}")));
                configure(&mut cfg);
                std::fs::create_dir_all(&cfg.data_dir)?;
                let server = Arc::new(ShardServer::new(cfg));
                let handle = spawn_server(Arc::clone(&server), "127.0.0.1:0").await?;
                out.push(Replica {
                    shard,
                    endpoint: handle.addr.to_string(),
                    server,
                    handle: Some(handle),
                });
            }
        }
        std::fs::create_dir_all(dir.join("staging"))?;
        Ok(Cluster {
            table_id,
            shard_count: shards,
            registry,
            replicas: out,
            dir: dir.to_owned(),
        })
    }

    /// Writes one shard file per shard for `records`, routed by the
    /// cluster's shard count.
    pub fn stage(&self, version_id: u64, records: &[(u64, Vec<u8>)]) -> Result<RolloutSpec, ShardFileError> {
        let keys: Vec<u64> = records.iter().map(|r| r.0).collect();
        let mut shard_files = BTreeMap::new();
        for (shard, (_, positions)) in partition(&keys, self.shard_count).into_iter().enumerate() {
            let shard = shard as u32;
            let path = self.dir.join("staging").join(shard_file_name(self.table_id, version_id, shard, self.shard_count));
            let header = ShardHeader {
                table_id: self.table_id,
                version_id,
                shard_index: shard,
                shard_count: self.shard_count,
                entry_count: 0,
            };
            write_shard(&path, header, positions.iter().map(|&i| (records[i].0, records[i].1.as_slice())))?;
            shard_files.insert(shard, path);
        }
        Ok(RolloutSpec {
            table_id: self.table_id,
            version_id,
            shard_files,
        })
    }

    /// Stages version `version_id` with planted values for `keys`.
    pub fn stage_planted(&self, version_id: u64, keys: &[u64], value_len: usize) -> Result<RolloutSpec, ShardFileError> {
        let records: Vec<(u64, Vec<u8>)> = keys.iter().map(|&k| (k, planted_value(version_id, k, value_len))).collect();
        self.stage(version_id, &records)
    }

    /// Loads `spec` on every replica directly and registers them all.
    pub fn bootstrap(&self, spec: &RolloutSpec) -> Result<(), BootstrapError> {
        for r in &self.replicas {
            let path = &spec.shard_files[&r.shard];
            r.server.load_and_activate(path)?;
            self.registry.register(self.table_id, r.shard, &r.endpoint)?;
        }
        Ok(())
    }

    pub fn replicas_of(&self, shard: u32) -> impl Iterator<Item = &Replica> {
        self.replicas.iter().filter(move |r| r.shard == shard)
    }

    /// Stops the listener of replica `i`; its registration is left alone.
    pub async fn stop(&mut self, i: usize) {
        if let Some(h) = self.replicas[i].handle.take() {
            h.shutdown().await;
        }
    }

    pub async fn shutdown(mut self) {
        for i in 0..self.replicas.len() {
            self.stop(i).await;
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BootstrapError {
    #[error(transparent)]
    Server(#[from] crate::server::ServerError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}
