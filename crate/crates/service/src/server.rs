//! One shard of one table, served from up to two live versions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use nbkv_core::engine::EngineConfig;
use nbkv_core::tiered::{TieredConfig, TieredError, TieredStore};
use parking_lot::{Mutex, RwLock};
use thiserror::Error;

use crate::routing::route;
use crate::shard_file::{ShardFileError, ShardHeader, ShardReader};
use crate::wire::{self, BatchRequest, BatchResponse, Status};

pub const DEFAULT_GRACE: Duration = Duration::from_secs(30);
const LOAD_CHUNK: usize = 1 << 16;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    ShardFile(#[from] ShardFileError),
    #[error(transparent)]
    Store(#[from] TieredError),
    #[error("{path}: record {index} (key {key:#x}) routes to shard {actual}, file is shard {expected}")]
    Misrouted {
        path: PathBuf,
        index: u64,
        key: u64,
        expected: u32,
        actual: u32,
    },
    #[error("shard file is for table {found}, server hosts table {expected}")]
    WrongTable { expected: u64, found: u64 },
    #[error("version {new} is not newer than current version {current}")]
    Regression { new: u64, current: u64 },
    #[error("version {0} is not live")]
    NotLive(u64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub table_id: u64,
    /// Parent directory for each version's value log.
    pub data_dir: PathBuf,
    /// How long a replaced version stays queryable without an explicit retire.
    pub grace: Duration,
    pub engine: EngineConfig,
    pub tiered: TieredConfig,
}

impl ServerConfig {
    pub fn new(table_id: u64, data_dir: impl Into<PathBuf>) -> Self {
        ServerConfig {
            table_id,
            data_dir: data_dir.into(),
            grace: DEFAULT_GRACE,
            engine: EngineConfig::default(),
            tiered: TieredConfig::default(),
        }
    }
}

/// An immutable loaded version of this server's shard.
pub struct TableVersion {
    pub table_id: u64,
    pub version_id: u64,
    pub shard_index: u32,
    pub shard_count: u32,
    pub store: TieredStore,
    dir: PathBuf,
}

impl TableVersion {
    pub fn keys(&self) -> usize {
        self.store.len()
    }
}

impl Drop for TableVersion {
    fn drop(&mut self) {
        if let Err(e) = std::fs::remove_dir_all(&self.dir) {
            tracing::warn!(dir = %self.dir.display(), error = %e, "could not remove retired version");
        }
    }
}

/// The versions a request can be served from.
#[derive(Clone, Default)]
pub struct ServingSet {
    pub current: Option<Arc<TableVersion>>,
    pub previous: Option<(Arc<TableVersion>, Instant)>,
}

impl ServingSet {
    /// Live version ids, newest first.
    pub fn versions(&self) -> Vec<u64> {
        self.current
            .iter()
            .map(|v| v.version_id)
            .chain(self.previous.iter().map(|(v, _)| v.version_id))
            .collect()
    }

    fn find(&self, version: u64) -> Option<&Arc<TableVersion>> {
        self.current
            .iter()
            .chain(self.previous.iter().map(|(v, _)| v))
            .find(|v| v.version_id == version)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VersionHealth {
    pub version_id: u64,
    pub current: bool,
    pub shard_index: u32,
    pub shard_count: u32,
    pub keys: usize,
    pub hot_bytes: usize,
    pub cold_bytes: u64,
}

/// A point-in-time report, rendered as `key=value` text on the wire.
#[derive(Clone, Debug, PartialEq)]
pub struct Health {
    pub table_id: u64,
    pub queries: u64,
    pub keys_served: u64,
    pub qps: f64,
    pub versions: Vec<VersionHealth>,
}

impl Health {
    pub fn current_version(&self) -> Option<u64> {
        self.versions.iter().find(|v| v.current).map(|v| v.version_id)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "table_id={}\nqueries={}\nkeys_served={}\nqps={:.3}\n",
            self.table_id, self.queries, self.keys_served, self.qps
        );
        for v in &self.versions {
            let _ = writeln!(
                s,
                "version={} role={} shard_index={} shard_count={} keys={} hot_bytes={} cold_bytes={}",
                v.version_id,
                if v.current { "current" } else { "previous" },
                v.shard_index,
                v.shard_count,
                v.keys,
                v.hot_bytes,
                v.cold_bytes
            );
        }
        s
    }

    pub fn parse(text: &str) -> Result<Health, String> {
        let mut top = BTreeMap::new();
        let mut versions = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let fields: BTreeMap<&str, &str> = line
                .split_whitespace()
                .map(|f| f.split_once('=').ok_or_else(|| format!("bad field {f:?}")))
                .collect::<Result<_, _>>()?;
            if fields.contains_key("version") {
                let get = |k: &str| fields.get(k).copied().ok_or_else(|| format!("missing {k}"));
                let num = |k: &str| -> Result<u64, String> { get(k)?.parse().map_err(|e| format!("{k}: {e}")) };
                versions.push(VersionHealth {
                    version_id: num("version")?,
                    current: match get("role")? {
                        "current" => true,
                        "previous" => false,
                        r => return Err(format!("bad role {r:?}")),
                    },
                    shard_index: u32::try_from(num("shard_index")?).map_err(|e| format!("shard_index: {e}"))?,
                    shard_count: u32::try_from(num("shard_count")?).map_err(|e| format!("shard_count: {e}"))?,
                    keys: num("keys")? as usize,
                    hot_bytes: num("hot_bytes")? as usize,
                    cold_bytes: num("cold_bytes")?,
                });
            } else {
                top.extend(fields);
            }
        }
        let get = |k: &str| top.get(k).copied().ok_or_else(|| format!("missing {k}"));
        Ok(Health {
            table_id: get("table_id")?.parse().map_err(|e| format!("table_id: {e}"))?,
            queries: get("queries")?.parse().map_err(|e| format!("queries: {e}"))?,
            keys_served: get("keys_served")?.parse().map_err(|e| format!("keys_served: {e}"))?,
            qps: get("qps")?.parse().map_err(|e| format!("qps: {e}"))?,
            versions,
        })
    }
}

pub struct ShardServer {
    config: ServerConfig,
    serving: RwLock<Arc<ServingSet>>,
    activation: Mutex<()>,
    started: Instant,
    queries: AtomicU64,
    keys_served: AtomicU64,
    loads: AtomicU64,
}

impl ShardServer {
    pub fn new(config: ServerConfig) -> Self {
        ShardServer {
            config,
            serving: RwLock::new(Arc::new(ServingSet::default())),
            activation: Mutex::new(()),
            started: Instant::now(),
            queries: AtomicU64::new(0),
            keys_served: AtomicU64::new(0),
            loads: AtomicU64::new(0),
        }
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    /// The serving set a request would see now.
    pub fn snapshot(&self) -> Arc<ServingSet> {
        Arc::clone(&self.serving.read())
    }

    /// Builds a version from a shard file. Every key must route to the
    /// file's shard.
    pub fn load_shard(&self, path: &Path) -> Result<TableVersion, ServerError> {
        let mut reader = ShardReader::open(path)?;
        let h: ShardHeader = *reader.header();
        if h.table_id != self.config.table_id {
            return Err(ServerError::WrongTable {
                expected: self.config.table_id,
                found: h.table_id,
            });
        }
        let n = self.loads.fetch_add(1, Ordering::Relaxed);
        let dir = self.config.data_dir.join(format!(
            "t{}-v{}-s{}of{}-{}-{n}",
            h.table_id,
            h.version_id,
            h.shard_index,
            h.shard_count,
            std::process::id()
        ));
        let store = TieredStore::open_sized(&dir, self.config.tiered.clone(), h.entry_count as usize)?;
        // from here on the version owns `dir` and removes it if loading fails
        let version = TableVersion {
            table_id: h.table_id,
            version_id: h.version_id,
            shard_index: h.shard_index,
            shard_count: h.shard_count,
            store,
            dir,
        };
        let mut index = 0u64;
        let mut chunk = Vec::with_capacity(LOAD_CHUNK);
        loop {
            let rec = reader.next_record()?;
            let done = rec.is_none();
            if let Some((key, value)) = rec {
                let actual = route(key, h.shard_count);
                if actual != h.shard_index {
                    return Err(ServerError::Misrouted {
                        path: path.to_owned(),
                        index,
                        key,
                        expected: h.shard_index,
                        actual,
                    });
                }
                index += 1;
                chunk.push((key, value));
            }
            if chunk.len() == LOAD_CHUNK || (done && !chunk.is_empty()) {
                version.store.bulk_load(chunk.drain(..))?;
            }
            if done {
                break;
            }
        }
        Ok(version)
    }

    /// Makes `version` current; the old current stays queryable as previous
    /// until the grace deadline or an explicit retire.
    pub fn activate_version(&self, version: TableVersion) -> Result<(), ServerError> {
        let _a = self.activation.lock();
        let old = self.snapshot();
        if let Some(cur) = &old.current {
            if version.version_id <= cur.version_id {
                return Err(ServerError::Regression {
                    new: version.version_id,
                    current: cur.version_id,
                });
            }
        }
        let next = ServingSet {
            current: Some(Arc::new(version)),
            previous: old.current.clone().map(|v| (v, Instant::now() + self.config.grace)),
        };
        *self.serving.write() = Arc::new(next);
        Ok(())
    }

    /// Loads and activates a shard file.
    pub fn load_and_activate(&self, path: &Path) -> Result<u64, ServerError> {
        let v = self.load_shard(path)?;
        let id = v.version_id;
        self.activate_version(v)?;
        Ok(id)
    }

    /// Drops the previous version. `version` of `None` retires whatever is
    /// previous; otherwise it must name the previous version.
    pub fn retire(&self, version: Option<u64>) -> Result<Option<u64>, ServerError> {
        let _a = self.activation.lock();
        let old = self.snapshot();
        let Some((prev, _)) = &old.previous else {
            return match version {
                Some(v) if old.current.as_ref().is_none_or(|c| c.version_id != v) => Err(ServerError::NotLive(v)),
                _ => Ok(None),
            };
        };
        if let Some(v) = version {
            if v != prev.version_id {
                return Err(ServerError::NotLive(v));
            }
        }
        let id = prev.version_id;
        *self.serving.write() = Arc::new(ServingSet {
            current: old.current.clone(),
            previous: None,
        });
        Ok(Some(id))
    }

    /// Retires the previous version if its grace period is over.
    pub fn sweep(&self) {
        let expired = matches!(&self.snapshot().previous, Some((_, deadline)) if Instant::now() >= *deadline);
        if expired {
            let _a = self.activation.lock();
            let old = self.snapshot();
            if let Some((_, deadline)) = &old.previous {
                if Instant::now() >= *deadline {
                    *self.serving.write() = Arc::new(ServingSet {
                        current: old.current.clone(),
                        previous: None,
                    });
                }
            }
        }
    }

    fn unavailable(set: &ServingSet, status: Status) -> BatchResponse {
        BatchResponse {
            status,
            served_version: set.current.as_ref().map_or(0, |v| v.version_id),
            shard_count: set.current.as_ref().map_or(0, |v| v.shard_count),
            available_versions: set.versions(),
            results: Vec::new(),
        }
    }

    /// The version a request should be served from, or the refusal to send.
    fn resolve(&self, req: &BatchRequest) -> Result<(Arc<ServingSet>, Arc<TableVersion>), BatchResponse> {
        self.sweep();
        let set = self.snapshot();
        self.queries.fetch_add(1, Ordering::Relaxed);
        if req.table_id != self.config.table_id {
            return Err(Self::unavailable(&set, Status::Malformed));
        }
        let version = match req.pinned_version {
            Some(v) => set.find(v),
            None => set.current.as_ref(),
        };
        match version {
            Some(v) => {
                let v = Arc::clone(v);
                Ok((set, v))
            }
            None => Err(Self::unavailable(&set, Status::VersionUnavailable)),
        }
    }

    /// Answers one batch from a single coherent serving set.
    pub fn serve_batch(&self, req: &BatchRequest) -> Result<BatchResponse, ServerError> {
        let (set, version) = match self.resolve(req) {
            Ok(v) => v,
            Err(refusal) => return Ok(refusal),
        };
        let results = version.store.get_many(&req.keys, &self.config.engine)?;
        self.keys_served.fetch_add(req.keys.len() as u64, Ordering::Relaxed);
        Ok(BatchResponse {
            status: Status::Ok,
            served_version: version.version_id,
            shard_count: version.shard_count,
            available_versions: set.versions(),
            results,
        })
    }

    /// [`ShardServer::serve_batch`], encoded into `out` without copying
    /// values out of the store first.
    pub fn serve_batch_into(&self, req: &BatchRequest, out: &mut Vec<u8>) -> Result<(), ServerError> {
        let (set, version) = match self.resolve(req) {
            Ok(v) => v,
            Err(refusal) => {
                wire::encode_response(&refusal, out);
                return Ok(());
            }
        };
        let start = out.len();
        let mut values = wire::ResponseValues::begin(version.version_id, version.shard_count, &set.versions(), req.keys.len(), out);
        if let Err(e) = version.store.visit_many(&req.keys, &self.config.engine, |_, v| values.push(v)) {
            out.truncate(start);
            return Err(e.into());
        }
        values.finish();
        self.keys_served.fetch_add(req.keys.len() as u64, Ordering::Relaxed);
        Ok(())
    }

    pub fn report_health(&self) -> Health {
        self.sweep();
        let set = self.snapshot();
        let queries = self.queries.load(Ordering::Relaxed);
        let describe = |v: &TableVersion, current: bool| {
            let u = v.store.usage();
            VersionHealth {
                version_id: v.version_id,
                current,
                shard_index: v.shard_index,
                shard_count: v.shard_count,
                keys: u.keys,
                hot_bytes: u.hot_bytes,
                cold_bytes: u.log_bytes.saturating_sub(u.garbage_bytes + nbkv_core::tiered::LOG_HEADER_LEN),
            }
        };
        Health {
            table_id: self.config.table_id,
            queries,
            keys_served: self.keys_served.load(Ordering::Relaxed),
            qps: queries as f64 / self.started.elapsed().as_secs_f64().max(1e-9),
            versions: set
                .current
                .iter()
                .map(|v| describe(v, true))
                .chain(set.previous.iter().map(|(v, _)| describe(v, false)))
                .collect(),
        }
    }
}
