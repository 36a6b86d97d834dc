//! Version consistency under rolling updates, strong against naive clients.
//!
//! An in-process cluster serves a table whose every value names the version
//! it was written for. An updater task keeps rolling out new versions while
//! strong-mode and naive clients issue batches; each batch is classified as
//! consistent or mixed by looking at the planted versions in its values.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use nbkv_service::client::{ClientConfig, ConsistencyMode, ShardClient};
use nbkv_service::cluster::{planted_origin, Cluster};
use nbkv_service::control::{rolling_update, NoFaults, UpdaterConfig};
use nbkv_service::registry::{min_registered, MemoryRegistry, Registry};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const TABLE: u64 = 77;

#[derive(Clone, Debug)]
pub struct ConsistencySpec {
    pub shards: u32,
    pub replicas: usize,
    pub keys: usize,
    pub value_len: usize,
    pub batch_size: usize,
    /// Stop after this many rollouts...
    pub updates: Option<usize>,
    /// ...or once this much time has passed, whichever comes first.
    pub duration: Option<Duration>,
    /// Spacing of rollout starts. With `randomize` the gap is drawn
    /// uniformly from `[0, 2 * interval]`; otherwise rollouts start at
    /// `(k + 0.5) * interval`.
    pub update_interval: Duration,
    pub randomize: bool,
    pub strong_clients: usize,
    pub naive_clients: usize,
    pub dwell: Duration,
    pub seed: u64,
}

impl Default for ConsistencySpec {
    fn default() -> Self {
        ConsistencySpec {
            shards: 2,
            replicas: 2,
            keys: 20_000,
            value_len: 24,
            batch_size: 64,
            updates: Some(100),
            duration: None,
            update_interval: Duration::from_millis(100),
            randomize: true,
            strong_clients: 2,
            naive_clients: 2,
            dwell: Duration::from_millis(30),
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ModeCounts {
    pub batches: u64,
    pub mixed: u64,
    pub failed: u64,
    /// Values whose planted key did not match the requested key.
    pub wrong_values: u64,
    pub first_failure: Option<String>,
}

impl ModeCounts {
    pub fn violation_rate(&self) -> f64 {
        if self.batches == 0 {
            0.0
        } else {
            self.mixed as f64 / self.batches as f64
        }
    }

    fn merge(&mut self, o: &ModeCounts) {
        self.batches += o.batches;
        self.mixed += o.mixed;
        self.failed += o.failed;
        self.wrong_values += o.wrong_values;
        if self.first_failure.is_none() {
            self.first_failure = o.first_failure.clone();
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ConsistencyOutcome {
    pub updates_completed: usize,
    pub updates_failed: usize,
    pub strong: ModeCounts,
    pub naive: ModeCounts,
    /// Fewest registered replicas any shard had at any revision of the run.
    pub min_registered: usize,
    pub elapsed: Duration,
}

async fn client_loop(client: ShardClient, mode: ConsistencyMode, keys: Arc<Vec<u64>>, batch: usize, seed: u64, stop: Arc<AtomicBool>) -> ModeCounts {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut c = ModeCounts::default();
    while !stop.load(Ordering::Relaxed) {
        let q: Vec<u64> = (0..batch).map(|_| keys[rng.random_range(0..keys.len())]).collect();
        let _ = client.refresh_endpoints();
        c.batches += 1;
        match client.batch_get_with(&q, mode).await {
            Ok(r) => {
                let mut versions = BTreeSet::new();
                for (k, v) in q.iter().zip(&r.values) {
                    match v.as_deref().and_then(planted_origin) {
                        Some((ver, key)) if key == *k => {
                            versions.insert(ver);
                        }
                        Some(_) => c.wrong_values += 1,
                        None => {}
                    }
                }
                if versions.len() > 1 || r.is_mixed() {
                    c.mixed += 1;
                }
            }
            Err(e) => {
                c.failed += 1;
                c.first_failure.get_or_insert_with(|| e.to_string());
            }
        }
        // yield so the updater and servers get the CPU on small machines
        tokio::task::yield_now().await;
    }
    c
}

/// Keys of version `v`: a random ~95% of the universe, so versions differ
/// in membership as well as in values.
fn version_keys(universe: &[u64], rng: &mut StdRng) -> Vec<u64> {
    universe.iter().copied().filter(|_| rng.random_bool(0.95)).collect()
}

pub async fn run_consistency_ab(spec: &ConsistencySpec) -> anyhow::Result<ConsistencyOutcome> {
    anyhow::ensure!(spec.updates.is_some() || spec.duration.is_some(), "give a number of updates or a duration");
    let dir = tempfile::tempdir()?;
    let registry: Arc<dyn Registry> = Arc::new(MemoryRegistry::new());
    let cluster = Cluster::start(TABLE, spec.shards, spec.replicas, dir.path(), Arc::clone(&registry), |c| {
        c.grace = Duration::from_secs(600);
    })
    .await?;
    let universe: Arc<Vec<u64>> = Arc::new((1..=spec.keys as u64).map(|i| i.wrapping_mul(0x9e37_79b9_7f4a_7c15)).collect());
    let mut rng = StdRng::seed_from_u64(spec.seed);
    cluster.bootstrap(&cluster.stage_planted(1, &version_keys(&universe, &mut rng), spec.value_len)?)?;
    let start_rev = registry.endpoints(TABLE)?.revision;

    let stop = Arc::new(AtomicBool::new(false));
    let mut tasks = Vec::new();
    let modes = std::iter::repeat_n(ConsistencyMode::Strong, spec.strong_clients).chain(std::iter::repeat_n(ConsistencyMode::Eventual, spec.naive_clients));
    for (i, mode) in modes.enumerate() {
        let client = ShardClient::new(TABLE, Arc::clone(&registry), ClientConfig::default());
        let h = tokio::spawn(client_loop(client, mode, Arc::clone(&universe), spec.batch_size, spec.seed ^ (i as u64 + 1) << 32, Arc::clone(&stop)));
        tasks.push((mode, h));
    }

    let started = Instant::now();
    let deadline = spec.duration.map(|d| started + d);
    let updater = UpdaterConfig {
        owner: "consistency-harness".into(),
        dwell: spec.dwell,
        health_poll: Duration::from_millis(2),
        ..UpdaterConfig::default()
    };
    let mut o = ConsistencyOutcome::default();
    let mut next_start = started;
    let mut version = 1u64;
    loop {
        let done = o.updates_completed + o.updates_failed;
        if spec.updates.is_some_and(|n| done >= n) {
            break;
        }
        let gap = if spec.randomize {
            spec.update_interval.mul_f64(rng.random_range(0.0..2.0))
        } else if done == 0 {
            spec.update_interval / 2
        } else {
            spec.update_interval
        };
        next_start += gap;
        if deadline.is_some_and(|d| next_start >= d) {
            if let Some(d) = deadline {
                tokio::time::sleep_until(d.into()).await;
            }
            break;
        }
        tokio::time::sleep_until(next_start.into()).await;
        version += 1;
        let staged = cluster.stage_planted(version, &version_keys(&universe, &mut rng), spec.value_len)?;
        let report = rolling_update(Arc::clone(&registry), &staged, &updater, &NoFaults).await?;
        if report.succeeded() {
            o.updates_completed += 1;
        } else {
            o.updates_failed += 1;
        }
        if Instant::now() > next_start {
            next_start = Instant::now();
        }
    }
    stop.store(true, Ordering::Relaxed);
    for (mode, h) in tasks {
        let counts = h.await?;
        match mode {
            ConsistencyMode::Strong => o.strong.merge(&counts),
            ConsistencyMode::Eventual => o.naive.merge(&counts),
        }
    }
    o.elapsed = started.elapsed();
    o.min_registered = min_registered(&registry.events_since(0)?, TABLE, spec.shards, start_rev);
    cluster.shutdown().await;
    Ok(o)
}
