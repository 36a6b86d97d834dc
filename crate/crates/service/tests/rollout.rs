use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use nbkv_service::client::{ClientConfig, ShardClient};
use nbkv_service::cluster::{planted_origin, Cluster};
use nbkv_service::control::{rolling_update, FaultHooks, InjectedCrash, NoFaults, RolloutError, Step, UpdaterConfig};
use nbkv_service::registry::{min_registered, FileRegistry, MemoryRegistry, Registry};

const TABLE: u64 = 5;

fn keys(n: u64) -> Vec<u64> {
    (1..=n).map(|i| i.wrapping_mul(0x9e37_79b9_7f4a_7c15)).collect()
}

fn fast() -> UpdaterConfig {
    UpdaterConfig {
        owner: "test-updater".into(),
        dwell: Duration::from_millis(5),
        health_poll: Duration::from_millis(2),
        ..UpdaterConfig::default()
    }
}

fn live_versions(c: &Cluster) -> Vec<Vec<u64>> {
    c.replicas.iter().map(|r| r.server.snapshot().versions()).collect()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn one_shard_two_replicas_stays_available() {
    let d = tempfile::tempdir().unwrap();
    let reg: Arc<dyn Registry> = Arc::new(MemoryRegistry::new());
    let c = Cluster::start(TABLE, 1, 2, d.path(), Arc::clone(&reg), |_| {}).await.unwrap();
    let ks = keys(1_000);
    c.bootstrap(&c.stage_planted(1, &ks, 16).unwrap()).unwrap();
    let start = reg.endpoints(TABLE).unwrap().revision;
    let report = rolling_update(Arc::clone(&reg), &c.stage_planted(2, &ks, 16).unwrap(), &fast(), &NoFaults).await.unwrap();
    assert!(report.succeeded(), "{report:?}");
    assert_eq!(report.updated.len(), 2);
    assert_eq!(min_registered(&reg.events_since(0).unwrap(), TABLE, 1, start), 1);
    assert_eq!(live_versions(&c), vec![vec![2], vec![2]]);
    assert_eq!(reg.endpoints(TABLE).unwrap().shards[&0].len(), 2);
    assert_eq!(reg.lock_owner(TABLE).unwrap(), None);
    c.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn identical_content_still_advances_the_version() {
    let d = tempfile::tempdir().unwrap();
    let reg: Arc<dyn Registry> = Arc::new(FileRegistry::open(d.path().join("registry")).unwrap());
    let c = Cluster::start(TABLE, 2, 2, d.path(), Arc::clone(&reg), |_| {}).await.unwrap();
    let recs: Vec<(u64, Vec<u8>)> = keys(500).into_iter().map(|k| (k, k.to_le_bytes().to_vec())).collect();
    c.bootstrap(&c.stage(1, &recs).unwrap()).unwrap();
    let report = rolling_update(Arc::clone(&reg), &c.stage(2, &recs).unwrap(), &fast(), &NoFaults).await.unwrap();
    assert!(report.succeeded());
    assert!(live_versions(&c).iter().all(|v| v == &[2]));
    c.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn refused_activation_halts_the_shard_without_retiring() {
    let d = tempfile::tempdir().unwrap();
    let reg: Arc<dyn Registry> = Arc::new(MemoryRegistry::new());
    let c = Cluster::start(TABLE, 2, 2, d.path(), Arc::clone(&reg), |_| {}).await.unwrap();
    let ks = keys(500);
    c.bootstrap(&c.stage_planted(1, &ks, 16).unwrap()).unwrap();
    let mut spec = c.stage_planted(2, &ks, 16).unwrap();
    spec.shard_files.insert(1, d.path().join("missing.nbsh"));
    let report = rolling_update(Arc::clone(&reg), &spec, &fast(), &NoFaults).await.unwrap();
    assert!(!report.retired);
    assert_eq!(report.failed.len(), 1);
    assert_eq!(report.failed[0].0, 1);
    let eps = reg.endpoints(TABLE).unwrap();
    assert_eq!(eps.shards[&1].len(), 2);
    for r in c.replicas_of(0) {
        assert_eq!(r.server.snapshot().versions(), vec![2, 1]);
    }
    for r in c.replicas_of(1) {
        assert_eq!(r.server.snapshot().versions(), vec![1]);
    }
    c.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn preconditions_and_lock_are_enforced() {
    let d = tempfile::tempdir().unwrap();
    let reg: Arc<dyn Registry> = Arc::new(MemoryRegistry::new());
    let c = Cluster::start(TABLE, 1, 2, d.path(), Arc::clone(&reg), |_| {}).await.unwrap();
    let ks = keys(100);
    c.bootstrap(&c.stage_planted(1, &ks, 16).unwrap()).unwrap();
    let v2 = c.stage_planted(2, &ks, 16).unwrap();

    assert!(reg.try_lock(TABLE, "someone-else").unwrap());
    let err = rolling_update(Arc::clone(&reg), &v2, &fast(), &NoFaults).await.unwrap_err();
    assert!(matches!(err, RolloutError::Locked { .. }));
    reg.unlock(TABLE, "someone-else").unwrap();

    reg.deregister(TABLE, 0, &c.replicas[1].endpoint).unwrap();
    let err = rolling_update(Arc::clone(&reg), &v2, &fast(), &NoFaults).await.unwrap_err();
    assert!(matches!(err, RolloutError::Precondition(_)));
    assert_eq!(reg.lock_owner(TABLE).unwrap(), None);
    c.shutdown().await;
}

struct CrashAt(Step);

impl FaultHooks for CrashAt {
    fn before(&self, step: &Step) -> Result<(), InjectedCrash> {
        if *step == self.0 {
            Err(InjectedCrash)
        } else {
            Ok(())
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn crash_mid_rollout_leaves_both_versions_consistent() {
    let d = tempfile::tempdir().unwrap();
    let reg: Arc<dyn Registry> = Arc::new(MemoryRegistry::new());
    let c = Cluster::start(TABLE, 2, 2, d.path(), Arc::clone(&reg), |_| {}).await.unwrap();
    let ks = keys(2_000);
    c.bootstrap(&c.stage_planted(1, &ks, 16).unwrap()).unwrap();
    let first = c.replicas_of(0).next().unwrap().endpoint.clone();
    let crash = CrashAt(Step::Confirmed { shard: 0, endpoint: first });
    let err = rolling_update(Arc::clone(&reg), &c.stage_planted(2, &ks, 16).unwrap(), &fast(), &crash).await.unwrap_err();
    assert!(matches!(err, RolloutError::Crashed(_)));
    assert_eq!(reg.lock_owner(TABLE).unwrap().as_deref(), Some("test-updater"));

    let mut versions = std::collections::BTreeSet::new();
    let cl = ShardClient::new(TABLE, Arc::clone(&reg), ClientConfig::default());
    for _ in 0..20 {
        let r = cl.batch_get(&ks).await.unwrap();
        let v = r.version().unwrap();
        versions.insert(v);
        for (k, val) in ks.iter().zip(&r.values) {
            assert_eq!(planted_origin(val.as_ref().unwrap()), Some((v, *k)));
        }
    }
    assert_eq!(versions.into_iter().collect::<Vec<_>>(), vec![1]);

    // a later updater recovers after clearing the stale lock
    reg.force_unlock(TABLE).unwrap();
    let report = rolling_update(Arc::clone(&reg), &c.stage_planted(3, &ks, 16).unwrap(), &fast(), &NoFaults).await.unwrap();
    assert!(report.succeeded());
    assert_eq!(cl.batch_get(&ks).await.unwrap().version(), Some(3));
    c.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn strong_traffic_never_mixes_versions_during_rollouts() {
    let d = tempfile::tempdir().unwrap();
    let reg: Arc<dyn Registry> = Arc::new(MemoryRegistry::new());
    let c = Cluster::start(TABLE, 2, 2, d.path(), Arc::clone(&reg), |_| {}).await.unwrap();
    let ks = keys(1_000);
    c.bootstrap(&c.stage_planted(1, &ks, 16).unwrap()).unwrap();
    let stop = Arc::new(AtomicBool::new(false));
    let batches = Arc::new(AtomicU64::new(0));
    let mut readers = Vec::new();
    for t in 0..2 {
        let cl = ShardClient::new(TABLE, Arc::clone(&reg), ClientConfig::default());
        let (stop, batches, ks) = (Arc::clone(&stop), Arc::clone(&batches), ks.clone());
        readers.push(tokio::spawn(async move {
            let mut i = t;
            while !stop.load(Ordering::Relaxed) {
                let q: Vec<u64> = ks.iter().skip(i % 7).step_by(3).copied().collect();
                let r = cl.batch_get(&q).await.expect("strong batch failed");
                let v = r.version().expect("mixed batch");
                for (k, val) in q.iter().zip(&r.values) {
                    assert_eq!(planted_origin(val.as_ref().unwrap()), Some((v, *k)));
                }
                batches.fetch_add(1, Ordering::Relaxed);
                cl.refresh_endpoints().unwrap();
                i += 1;
            }
        }));
    }
    for v in 2..=6 {
        let report = rolling_update(Arc::clone(&reg), &c.stage_planted(v, &ks, 16).unwrap(), &fast(), &NoFaults).await.unwrap();
        assert!(report.succeeded());
    }
    stop.store(true, Ordering::Relaxed);
    for r in readers {
        r.await.unwrap();
    }
    assert!(batches.load(Ordering::Relaxed) > 0);
    c.shutdown().await;
}
