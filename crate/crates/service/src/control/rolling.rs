//! Replica-at-a-time version rollout.
//!
//! For every shard, and for each of its replicas in turn: deregister it,
//! activate the new shard file on it, poll its health until it reports the
//! new version as current, register it again and dwell before moving on.
//! The old version is retired everywhere only after every replica of every
//! shard confirmed. At most one replica per shard is out of the registry
//! at any moment.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::net::{activate_remote, fetch_health, retire_remote};
use crate::registry::{Registry, RegistryError};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Step {
    Deregister { shard: u32, endpoint: String },
    Activate { shard: u32, endpoint: String },
    HealthCheck { shard: u32, endpoint: String },
    Register { shard: u32, endpoint: String },
    Confirmed { shard: u32, endpoint: String },
    Retire { endpoint: String },
}

/// Raised by a hook to simulate the updater dying before a step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InjectedCrash;

/// Test hooks run before each step of a rollout.
pub trait FaultHooks: Send + Sync {
    fn before(&self, _step: &Step) -> Result<(), InjectedCrash> {
        Ok(())
    }
}

pub struct NoFaults;

impl FaultHooks for NoFaults {}

#[derive(Clone, Debug)]
pub struct UpdaterConfig {
    /// Name recorded in the registry lock.
    pub owner: String,
    pub admin_timeout: Duration,
    pub health_timeout: Duration,
    pub health_poll: Duration,
    /// Pause after a replica rejoins before touching the next one.
    pub dwell: Duration,
    pub min_replicas: usize,
}

impl Default for UpdaterConfig {
    fn default() -> Self {
        UpdaterConfig {
            owner: format!("updater-{}", std::process::id()),
            admin_timeout: Duration::from_secs(120),
            health_timeout: Duration::from_secs(30),
            health_poll: Duration::from_millis(20),
            dwell: Duration::from_millis(100),
            min_replicas: 2,
        }
    }
}

/// A staged version: one shard file per shard index, as paths the
/// servers can open.
#[derive(Clone, Debug)]
pub struct RolloutSpec {
    pub table_id: u64,
    pub version_id: u64,
    pub shard_files: BTreeMap<u32, PathBuf>,
}

#[derive(Clone, Debug, Default)]
pub struct RolloutReport {
    pub table_id: u64,
    pub version_id: u64,
    pub updated: Vec<(u32, String)>,
    /// Replicas that failed, with the reason. Their shard stopped there.
    pub failed: Vec<(u32, String, String)>,
    pub retired: bool,
    pub start_revision: u64,
    pub end_revision: u64,
    pub elapsed: Duration,
}

impl RolloutReport {
    pub fn succeeded(&self) -> bool {
        self.failed.is_empty() && self.retired
    }
}

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("table {table} is being updated by {owner}")]
    Locked { table: u64, owner: String },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("updater crashed before {0:?}")]
    Crashed(Step),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

enum ReplicaOutcome {
    Updated,
    /// Activation was refused; the replica still serves the old version
    /// and has been put back.
    Refused(String),
    /// The replica did not confirm; it stays out of the registry.
    Unhealthy(String),
}

pub async fn rolling_update(registry: Arc<dyn Registry>, spec: &RolloutSpec, config: &UpdaterConfig, hooks: &dyn FaultHooks) -> Result<RolloutReport, RolloutError> {
    let started = Instant::now();
    let table = spec.table_id;
    if !registry.try_lock(table, &config.owner)? {
        return Err(RolloutError::Locked {
            table,
            owner: registry.lock_owner(table)?.unwrap_or_default(),
        });
    }
    let r = run(&*registry, spec, config, hooks).await;
    match r {
        Err(RolloutError::Crashed(_)) => {}
        _ => registry.unlock(table, &config.owner)?,
    }
    let mut report = r?;
    report.elapsed = started.elapsed();
    report.end_revision = registry.endpoints(table)?.revision;
    Ok(report)
}

async fn run(registry: &dyn Registry, spec: &RolloutSpec, config: &UpdaterConfig, hooks: &dyn FaultHooks) -> Result<RolloutReport, RolloutError> {
    let table = spec.table_id;
    let before = registry.endpoints(table)?;
    for &shard in spec.shard_files.keys() {
        let n = before.shards.get(&shard).map_or(0, Vec::len);
        if n < config.min_replicas {
            return Err(RolloutError::Precondition(format!(
                "shard {shard} has {n} registered replicas, need {}",
                config.min_replicas
            )));
        }
    }
    if spec.shard_files.is_empty() {
        return Err(RolloutError::Precondition("no shard files staged".into()));
    }
    let mut report = RolloutReport {
        table_id: table,
        version_id: spec.version_id,
        start_revision: before.revision,
        ..RolloutReport::default()
    };
    let step = |s: Step| hooks.before(&s).map_err(|_| RolloutError::Crashed(s));

    for (&shard, path) in &spec.shard_files {
        let path = path.to_string_lossy().into_owned();
        for ep in &before.shards[&shard] {
            let outcome = update_replica(registry, spec, config, &step, shard, ep, &path).await?;
            match outcome {
                ReplicaOutcome::Updated => report.updated.push((shard, ep.clone())),
                ReplicaOutcome::Refused(why) | ReplicaOutcome::Unhealthy(why) => {
                    tracing::warn!(shard, endpoint = %ep, reason = %why, "rollout halted for shard");
                    report.failed.push((shard, ep.clone(), why));
                    break;
                }
            }
        }
    }

    if report.failed.is_empty() {
        for (_, ep) in &report.updated {
            step(Step::Retire { endpoint: ep.clone() })?;
            match retire_remote(ep, 0, config.admin_timeout).await {
                Ok(r) if r.ok => {}
                Ok(r) => tracing::warn!(endpoint = %ep, message = %r.message, "retire refused"),
                Err(e) => tracing::warn!(endpoint = %ep, error = %e, "retire failed"),
            }
        }
        report.retired = true;
    }
    Ok(report)
}

async fn update_replica(
    registry: &dyn Registry,
    spec: &RolloutSpec,
    config: &UpdaterConfig,
    step: &dyn Fn(Step) -> Result<(), RolloutError>,
    shard: u32,
    ep: &str,
    path: &str,
) -> Result<ReplicaOutcome, RolloutError> {
    let table = spec.table_id;
    let endpoint = ep.to_owned();
    step(Step::Deregister { shard, endpoint: endpoint.clone() })?;
    registry.deregister(table, shard, ep)?;

    step(Step::Activate { shard, endpoint: endpoint.clone() })?;
    let refused = match activate_remote(ep, path, config.admin_timeout).await {
        Ok(r) if r.ok && r.version == spec.version_id => None,
        Ok(r) if r.ok => Some(format!("activated version {} instead of {}", r.version, spec.version_id)),
        Ok(r) => Some(r.message),
        Err(e) => return Ok(ReplicaOutcome::Unhealthy(e.to_string())),
    };
    if let Some(why) = refused {
        registry.register(table, shard, ep)?;
        return Ok(ReplicaOutcome::Refused(why));
    }

    step(Step::HealthCheck { shard, endpoint: endpoint.clone() })?;
    let deadline = Instant::now() + config.health_timeout;
    loop {
        match fetch_health(ep, config.admin_timeout).await {
            Ok(h) if h.current_version() == Some(spec.version_id) => break,
            Ok(_) | Err(_) if Instant::now() < deadline => tokio::time::sleep(config.health_poll).await,
            Ok(h) => {
                return Ok(ReplicaOutcome::Unhealthy(format!(
                    "reports version {:?}, expected {}",
                    h.current_version(),
                    spec.version_id
                )))
            }
            Err(e) => return Ok(ReplicaOutcome::Unhealthy(e.to_string())),
        }
    }

    step(Step::Register { shard, endpoint: endpoint.clone() })?;
    registry.register(table, shard, ep)?;
    tokio::time::sleep(config.dwell).await;
    step(Step::Confirmed { shard, endpoint })?;
    Ok(ReplicaOutcome::Updated)
}
