//! End-to-end batch latency against a local single-shard server.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nbkv_service::client::{ClientConfig, ShardClient};
use nbkv_service::cluster::Cluster;
use nbkv_service::registry::{MemoryRegistry, Registry};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::report::{Row, RunReport};

#[derive(Clone, Debug)]
pub struct LatencySpec {
    pub keys: usize,
    pub value_len: usize,
    pub batch_sizes: Vec<usize>,
    /// Timed batches per size, after a warmup of a tenth as many.
    pub iterations: usize,
    pub seed: u64,
    /// Measure this server instead of starting one; it must already serve
    /// `table_id` with keys `1..=keys`.
    pub endpoint: Option<String>,
    pub table_id: u64,
}

impl Default for LatencySpec {
    fn default() -> Self {
        LatencySpec {
            keys: 200_000,
            value_len: 32,
            batch_sizes: vec![10, 100, 500],
            iterations: 2_000,
            seed: 1,
            endpoint: None,
            table_id: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyPoint {
    pub batch: usize,
    pub median: Duration,
    pub p99: Duration,
}

impl LatencyPoint {
    pub fn per_key(&self) -> Duration {
        self.median / self.batch.max(1) as u32
    }
}

fn quantile(sorted: &[Duration], q: f64) -> Duration {
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

pub async fn run_latency_scaling(spec: &LatencySpec) -> anyhow::Result<(Vec<LatencyPoint>, RunReport)> {
    let dir = tempfile::tempdir()?;
    let registry: Arc<dyn Registry> = Arc::new(MemoryRegistry::new());
    let keys: Vec<u64> = (1..=spec.keys as u64).collect();
    let cluster = match &spec.endpoint {
        Some(ep) => {
            registry.register(spec.table_id, 0, ep)?;
            None
        }
        None => {
            let c = Cluster::start(spec.table_id, 1, 1, dir.path(), Arc::clone(&registry), |_| {}).await?;
            c.bootstrap(&c.stage_planted(1, &keys, spec.value_len)?)?;
            Some(c)
        }
    };
    let client = ShardClient::new(spec.table_id, registry, ClientConfig::default());
    let mut rng = StdRng::seed_from_u64(spec.seed);
    let mut points = Vec::new();
    let mut report = RunReport::default();
    for &b in &spec.batch_sizes {
        let mut samples = Vec::with_capacity(spec.iterations);
        for i in 0..spec.iterations + spec.iterations / 10 {
            let batch: Vec<u64> = (0..b).map(|_| keys[rng.random_range(0..keys.len())]).collect();
            let t = Instant::now();
            let r = client.batch_get(&batch).await?;
            let dt = t.elapsed();
            anyhow::ensure!(r.values.iter().all(Option::is_some), "batch of {b} missed present keys");
            if i >= spec.iterations / 10 {
                samples.push(dt);
            }
        }
        samples.sort_unstable();
        let p = LatencyPoint {
            batch: b,
            median: quantile(&samples, 0.5),
            p99: quantile(&samples, 0.99),
        };
        report.push(Row {
            experiment: "latency".into(),
            variant: if spec.endpoint.is_some() { "external" } else { "neighborhash" }.into(),
            engine: "auto".into(),
            keys: spec.keys as u64,
            seed: spec.seed,
            sqr: 1.0,
            distribution: "uniform".into(),
            reps: samples.len(),
            note: format!(
                "batch={b} median_us={:.1} p99_us={:.1} per_key_us={:.3}",
                p.median.as_secs_f64() * 1e6,
                p.p99.as_secs_f64() * 1e6,
                p.per_key().as_secs_f64() * 1e6
            ),
            ..Row::default()
        });
        points.push(p);
    }
    if let Some(c) = cluster {
        c.shutdown().await;
    }
    Ok((points, report))
}

/// latency(largest batch) / latency(smallest batch).
pub fn scaling_ratio(points: &[LatencyPoint]) -> Option<f64> {
    let lo = points.iter().min_by_key(|p| p.batch)?;
    let hi = points.iter().max_by_key(|p| p.batch)?;
    Some(hi.median.as_secs_f64() / lo.median.as_secs_f64())
}
