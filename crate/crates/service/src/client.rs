//! Batch client with version negotiation across shards.
//!
//! Endpoints come from the registry; version ids and shard counts only ever
//! come from query responses. A strong-mode `batch_get` first fans out
//! unpinned sub-requests. If the shards answered from different versions it
//! picks the highest version every shard still has live and re-queries the
//! disagreeing shards pinned to it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};
use thiserror::Error;
use tokio::net::TcpStream;
use tokio::task::JoinSet;

use crate::net::round_trip;
use crate::registry::{Registry, RegistryError};
use crate::routing::partition;
use crate::wire::{self, BatchRequest, BatchResponse, Status};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConsistencyMode {
    /// Every value of a batch comes from one version.
    #[default]
    Strong,
    /// Each shard answers from whatever it serves; no negotiation. This is
    /// the "naive" mode of the consistency harness.
    Eventual,
}

impl std::str::FromStr for ConsistencyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "strong" => Ok(ConsistencyMode::Strong),
            "eventual" | "naive" => Ok(ConsistencyMode::Eventual),
            _ => Err(format!("unknown consistency mode {s:?}")),
        }
    }
}

/// Which common version phase 2 pins to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum VersionPreference {
    #[default]
    Newest,
    Oldest,
}

#[derive(Clone, Debug)]
pub struct ClientConfig {
    pub mode: ConsistencyMode,
    /// Alternate replicas tried per shard after the first one fails.
    pub retry_budget: usize,
    pub timeout: Duration,
    /// Negotiation rounds before giving up with `ConsistencyUnattainable`.
    pub max_rounds: usize,
    pub prefer: VersionPreference,
    /// Idle connections kept per endpoint.
    pub pool_size: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            mode: ConsistencyMode::Strong,
            retry_budget: 2,
            timeout: Duration::from_secs(5),
            max_rounds: 6,
            prefer: VersionPreference::Newest,
            pool_size: 8,
        }
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("no endpoints registered for table {0}")]
    EmptyView(u64),
    #[error("CONSISTENCY_UNATTAINABLE: no common version after {rounds} rounds (live versions per shard: {live:?})")]
    ConsistencyUnattainable { rounds: usize, live: BTreeMap<u32, Vec<u64>> },
    #[error("PARTIAL_FAILURE: shard {shard} unreachable after {attempts} attempts: {last}")]
    PartialFailure { shard: u32, attempts: usize, last: String },
    #[error("shard {shard} rejected the request as malformed")]
    Rejected { shard: u32 },
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

/// Endpoints of one table as last read from the registry.
#[derive(Clone, Debug, Default)]
pub struct RoutingView {
    pub table_id: u64,
    pub revision: u64,
    pub shards: BTreeMap<u32, Vec<String>>,
    pub refreshed_at: Option<Instant>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchResult {
    /// One entry per input key, in input order.
    pub values: Vec<Option<Vec<u8>>>,
    /// (shard, served version) of every sub-response the values came from.
    pub shard_versions: Vec<(u32, u64)>,
    pub shard_count: u32,
    /// Negotiation rounds after the first fan-out.
    pub extra_rounds: usize,
}

impl BatchResult {
    /// The single version behind every value, if there is one.
    pub fn version(&self) -> Option<u64> {
        let mut it = self.shard_versions.iter().map(|&(_, v)| v);
        let first = it.next()?;
        it.all(|v| v == first).then_some(first)
    }

    pub fn is_mixed(&self) -> bool {
        let mut it = self.shard_versions.iter().map(|&(_, v)| v);
        it.next().is_some_and(|first| it.any(|v| v != first))
    }
}

/// Idle connections per endpoint.
#[derive(Default)]
struct Pool {
    idle: Mutex<HashMap<String, Vec<TcpStream>>>,
}

impl Pool {
    async fn exchange(&self, endpoint: &str, body: &[u8], timeout: Duration, cap: usize) -> io::Result<Vec<u8>> {
        let pooled = self.idle.lock().get_mut(endpoint).and_then(Vec::pop);
        if let Some(mut s) = pooled {
            if let Ok(Ok(reply)) = tokio::time::timeout(timeout, round_trip(&mut s, body)).await {
                self.put(endpoint, s, cap);
                return Ok(reply);
            }
        }
        let fut = async {
            let mut s = TcpStream::connect(endpoint).await?;
            s.set_nodelay(true)?;
            let reply = round_trip(&mut s, body).await?;
            Ok::<_, io::Error>((s, reply))
        };
        let (s, reply) = tokio::time::timeout(timeout, fut)
            .await
            .map_err(|_| io::Error::new(io::ErrorKind::TimedOut, format!("{endpoint}: timed out")))??;
        self.put(endpoint, s, cap);
        Ok(reply)
    }

    fn put(&self, endpoint: &str, s: TcpStream, cap: usize) {
        let mut idle = self.idle.lock();
        let v = idle.entry(endpoint.to_owned()).or_default();
        if v.len() < cap {
            v.push(s);
        }
    }
}

struct Inner {
    table_id: u64,
    config: ClientConfig,
    registry: Arc<dyn Registry>,
    view: RwLock<Arc<RoutingView>>,
    /// version id → shard count, learned from responses.
    versions: Mutex<BTreeMap<u64, u32>>,
    /// (version, shard count) of the last consistent batch.
    last_good: Mutex<Option<(u64, u32)>>,
    rr: AtomicUsize,
    pool: Pool,
}

/// Cheap to clone; clones share the view, caches and connection pool.
#[derive(Clone)]
pub struct ShardClient {
    inner: Arc<Inner>,
}

/// The latest answer of one shard within a batch.
struct ShardState {
    keys: Vec<u64>,
    positions: Vec<usize>,
    resp: BatchResponse,
}

impl ShardClient {
    pub fn new(table_id: u64, registry: Arc<dyn Registry>, config: ClientConfig) -> Self {
        ShardClient {
            inner: Arc::new(Inner {
                table_id,
                config,
                registry,
                view: RwLock::new(Arc::new(RoutingView {
                    table_id,
                    ..RoutingView::default()
                })),
                versions: Mutex::new(BTreeMap::new()),
                last_good: Mutex::new(None),
                rr: AtomicUsize::new(0),
                pool: Pool::default(),
            }),
        }
    }

    pub fn config(&self) -> &ClientConfig {
        &self.inner.config
    }

    pub fn view(&self) -> Arc<RoutingView> {
        Arc::clone(&self.inner.view.read())
    }

    /// Shard counts of every version seen so far.
    pub fn known_versions(&self) -> BTreeMap<u64, u32> {
        self.inner.versions.lock().clone()
    }

    /// Re-reads endpoints from the registry. Returns whether they changed.
    pub fn refresh_endpoints(&self) -> Result<bool, ClientError> {
        let e = self.inner.registry.endpoints(self.inner.table_id)?;
        let cur = self.view();
        if cur.refreshed_at.is_some() && cur.revision == e.revision {
            return Ok(false);
        }
        let changed = cur.shards != e.shards;
        *self.inner.view.write() = Arc::new(RoutingView {
            table_id: self.inner.table_id,
            revision: e.revision,
            shards: e.shards,
            refreshed_at: Some(Instant::now()),
        });
        Ok(changed)
    }

    pub async fn batch_get(&self, keys: &[u64]) -> Result<BatchResult, ClientError> {
        self.batch_get_with(keys, self.inner.config.mode).await
    }

    pub async fn batch_get_with(&self, keys: &[u64], mode: ConsistencyMode) -> Result<BatchResult, ClientError> {
        let mut view = self.view();
        if view.refreshed_at.is_none() {
            self.refresh_endpoints()?;
            view = self.view();
        }
        if view.shards.values().all(Vec::is_empty) {
            return Err(ClientError::EmptyView(self.inner.table_id));
        }
        let rr = self.inner.rr.fetch_add(1, Ordering::Relaxed);
        let hint = *self.inner.last_good.lock();
        let mut count = match hint {
            Some((_, n)) => n,
            None => self.probe_count(&view, None, rr).await?,
        };

        // phase 1, re-routed while a shard reports a different count
        let mut states = self.fan_out(&view, keys, count, None, rr).await?;
        let mut reroutes = 0;
        while let Some(n) = counts_disagree(&states, count) {
            if mode == ConsistencyMode::Strong || reroutes == 3 {
                break;
            }
            reroutes += 1;
            count = n;
            states = self.fan_out(&view, keys, count, None, rr + reroutes).await?;
        }
        if mode == ConsistencyMode::Eventual {
            if counts_disagree(&states, count).is_some() {
                return Err(self.unattainable(&states, reroutes));
            }
            return Ok(assemble(keys.len(), count, states, 0));
        }

        for round in 0..self.inner.config.max_rounds {
            let served: BTreeSet<u64> = states.values().map(|s| s.resp.served_version).collect();
            let all_ok = states.values().all(|s| s.resp.status == Status::Ok);
            if all_ok && served.len() <= 1 && counts_disagree(&states, count).is_none() {
                if let Some(&v) = served.iter().next() {
                    *self.inner.last_good.lock() = Some((v, count));
                }
                return Ok(assemble(keys.len(), count, states, round));
            }
            let attempt = rr + round + 1;
            match self.common_version(&states) {
                Some(v) => {
                    let n = match self.count_of(v) {
                        Some(n) => n,
                        None => self.probe_count(&view, Some(v), attempt).await?,
                    };
                    if n != count {
                        count = n;
                        states = self.fan_out(&view, keys, count, Some(v), attempt).await?;
                        continue;
                    }
                    let stale: Vec<u32> = states
                        .iter()
                        .filter(|(_, s)| s.resp.status != Status::Ok || s.resp.served_version != v || s.resp.shard_count != count)
                        .map(|(&i, _)| i)
                        .collect();
                    self.requery(&view, &mut states, &stale, Some(v), attempt).await?;
                }
                None => {
                    // nothing in common: ask every shard again, unpinned, on other replicas
                    let all: Vec<u32> = states.keys().copied().collect();
                    self.requery(&view, &mut states, &all, None, attempt).await?;
                }
            }
        }
        Err(self.unattainable(&states, self.inner.config.max_rounds))
    }

    fn unattainable(&self, states: &BTreeMap<u32, ShardState>, rounds: usize) -> ClientError {
        ClientError::ConsistencyUnattainable {
            rounds,
            live: states.iter().map(|(&i, s)| (i, s.resp.available_versions.clone())).collect(),
        }
    }

    fn count_of(&self, version: u64) -> Option<u32> {
        self.inner.versions.lock().get(&version).copied()
    }

    fn learn(&self, resp: &BatchResponse) {
        if resp.status == Status::Ok && resp.shard_count > 0 {
            self.inner.versions.lock().insert(resp.served_version, resp.shard_count);
        }
    }

    /// Highest (or lowest, per config) version live on every shard.
    fn common_version(&self, states: &BTreeMap<u32, ShardState>) -> Option<u64> {
        let mut it = states.values().map(|s| s.resp.available_versions.iter().copied().collect::<BTreeSet<u64>>());
        let first = it.next()?;
        let common = it.fold(first, |acc, s| &acc & &s);
        match self.inner.config.prefer {
            VersionPreference::Newest => common.last().copied(),
            VersionPreference::Oldest => common.first().copied(),
        }
    }

    /// Learns a shard count by sending an empty request to shard 0.
    async fn probe_count(&self, view: &RoutingView, pinned: Option<u64>, attempt: usize) -> Result<u32, ClientError> {
        let shard = *view.shards.keys().next().ok_or(ClientError::EmptyView(self.inner.table_id))?;
        let resp = self.query_shard(view, shard, Vec::new(), pinned, attempt).await?;
        if resp.shard_count == 0 {
            return Err(ClientError::ConsistencyUnattainable {
                rounds: 0,
                live: BTreeMap::from([(shard, resp.available_versions)]),
            });
        }
        Ok(resp.shard_count)
    }

    async fn fan_out(&self, view: &RoutingView, keys: &[u64], count: u32, pinned: Option<u64>, attempt: usize) -> Result<BTreeMap<u32, ShardState>, ClientError> {
        let mut set = JoinSet::new();
        for (shard, (sub, positions)) in partition(keys, count).into_iter().enumerate() {
            if sub.is_empty() {
                continue;
            }
            let me = self.clone();
            let view = view.clone();
            set.spawn(async move {
                let r = me.query_shard(&view, shard as u32, sub.clone(), pinned, attempt).await;
                (shard as u32, sub, positions, r)
            });
        }
        let mut states = BTreeMap::new();
        let mut first_err = None;
        while let Some(joined) = set.join_next().await {
            let (shard, keys, positions, r) = joined.expect("sub-request task panicked");
            match r {
                Ok(resp) => {
                    states.insert(shard, ShardState { keys, positions, resp });
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(states),
        }
    }

    async fn requery(&self, view: &RoutingView, states: &mut BTreeMap<u32, ShardState>, shards: &[u32], pinned: Option<u64>, attempt: usize) -> Result<(), ClientError> {
        let mut set = JoinSet::new();
        for &shard in shards {
            let keys = states[&shard].keys.clone();
            let me = self.clone();
            let view = view.clone();
            set.spawn(async move { (shard, me.query_shard(&view, shard, keys, pinned, attempt).await) });
        }
        let mut first_err = None;
        while let Some(joined) = set.join_next().await {
            let (shard, r) = joined.expect("sub-request task panicked");
            match r {
                Ok(resp) => states.get_mut(&shard).expect("queried shard has state").resp = resp,
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        first_err.map_or(Ok(()), Err)
    }

    /// Sends one sub-request, walking replicas round-robin from `attempt`.
    /// A pinned request the replica cannot serve also moves on to the next
    /// replica; if none can, the last VERSION_UNAVAILABLE answer is returned.
    async fn query_shard(&self, view: &RoutingView, shard: u32, keys: Vec<u64>, pinned: Option<u64>, attempt: usize) -> Result<BatchResponse, ClientError> {
        let eps = view.shards.get(&shard).filter(|e| !e.is_empty()).ok_or_else(|| ClientError::PartialFailure {
            shard,
            attempts: 0,
            last: "no replica registered".into(),
        })?;
        let n = keys.len();
        let mut body = Vec::with_capacity(24 + 8 * n);
        wire::encode_request(
            &BatchRequest {
                table_id: self.inner.table_id,
                pinned_version: pinned,
                keys,
            },
            &mut body,
        );
        let tries = 1 + self.inner.config.retry_budget;
        let mut last = String::new();
        let mut unavailable = None;
        for t in 0..tries {
            let ep = &eps[(attempt + t) % eps.len()];
            let cfg = &self.inner.config;
            let reply = match self.inner.pool.exchange(ep, &body, cfg.timeout, cfg.pool_size).await {
                Ok(r) => r,
                Err(e) => {
                    last = format!("{ep}: {e}");
                    continue;
                }
            };
            let resp = match wire::decode_response(&reply, n) {
                Ok(r) => r,
                Err(e) => {
                    last = format!("{ep}: {e}");
                    continue;
                }
            };
            match resp.status {
                Status::Ok => {
                    self.learn(&resp);
                    return Ok(resp);
                }
                Status::VersionUnavailable if pinned.is_some() => unavailable = Some(resp),
                Status::VersionUnavailable => last = format!("{ep}: no version loaded"),
                Status::Malformed => return Err(ClientError::Rejected { shard }),
            }
        }
        unavailable.ok_or(ClientError::PartialFailure {
            shard,
            attempts: tries,
            last,
        })
    }
}

/// A shard count reported by some OK response that differs from `count`.
fn counts_disagree(states: &BTreeMap<u32, ShardState>, count: u32) -> Option<u32> {
    states
        .values()
        .filter(|s| s.resp.status == Status::Ok)
        .map(|s| s.resp.shard_count)
        .find(|&n| n != count)
}

fn assemble(n: usize, count: u32, states: BTreeMap<u32, ShardState>, extra_rounds: usize) -> BatchResult {
    let mut values = vec![None; n];
    let mut shard_versions = Vec::with_capacity(states.len());
    for (shard, s) in states {
        shard_versions.push((shard, s.resp.served_version));
        for (pos, v) in s.positions.into_iter().zip(s.resp.results) {
            values[pos] = v;
        }
    }
    BatchResult {
        values,
        shard_versions,
        shard_count: count,
        extra_rounds,
    }
}
