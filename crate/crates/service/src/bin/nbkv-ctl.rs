//! Control-plane commands: plan shards, push a version, show status.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use nbkv_core::mix::splitmix64;
use nbkv_service::control::{auto_shard, plan_shards, rolling_update, FnSource, NoFaults, RecordSource, RolloutSpec, ShardFilesSource, UpdaterConfig};
use nbkv_service::net::fetch_health;
use nbkv_service::registry::{FileRegistry, Registry};
use nbkv_service::shard_file::ShardReader;

#[derive(Parser, Debug)]
#[command(name = "nbkv-ctl", about = "Shard planning and rolling updates")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[arg(long, global = true, default_value = "warn")]
    log_level: tracing::Level,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Split records into shard files under a size cap.
    Plan {
        #[arg(long)]
        table_id: u64,
        #[arg(long)]
        version_id: u64,
        #[arg(long)]
        max_shard_bytes: u64,
        /// Existing shard files to re-shard.
        #[arg(long, num_args = 1.., conflicts_with = "synthetic_keys")]
        input: Vec<PathBuf>,
        /// Generate this many synthetic records instead.
        #[arg(long)]
        synthetic_keys: Option<u64>,
        #[arg(long, default_value_t = 64)]
        value_len: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write shard files here; without it only the plan is printed.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Roll a staged version out replica by replica.
    Push {
        #[arg(long)]
        registry: PathBuf,
        /// Shard files of the new version, or a directory holding them.
        #[arg(required = true)]
        shards: Vec<PathBuf>,
        #[arg(long, default_value_t = 100)]
        dwell_ms: u64,
        #[arg(long, default_value_t = 30)]
        health_timeout_secs: u64,
        #[arg(long, default_value_t = 2)]
        min_replicas: usize,
        #[arg(long)]
        owner: Option<String>,
    },
    /// Registered endpoints of a table and what each one serves.
    Status {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        table_id: u64,
    },
    /// Clear a rollout lock left behind by a dead updater.
    Unlock {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        table_id: u64,
    },
}

fn synthetic(n: u64, len: usize, seed: u64) -> impl FnMut() -> Box<dyn Iterator<Item = (u64, Vec<u8>)>> {
    move || {
        Box::new((0..n).map(move |i| {
            let k = splitmix64(seed.wrapping_add(i)) & !(1 << 63);
            (k, k.to_le_bytes().iter().copied().cycle().take(len).collect())
        }))
    }
}

fn shard_files(args: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in args {
        if p.is_dir() {
            for e in std::fs::read_dir(p)? {
                let e = e?.path();
                if e.extension().is_some_and(|x| x == "nbsh") {
                    out.push(e);
                }
            }
        } else {
            out.push(p.clone());
        }
    }
    out.sort();
    Ok(out)
}

fn rollout_spec(files: &[PathBuf]) -> anyhow::Result<RolloutSpec> {
    let mut spec: Option<RolloutSpec> = None;
    let mut count = 0;
    for f in files {
        let h = *ShardReader::open(f).with_context(|| format!("reading {}", f.display()))?.header();
        let abs = std::fs::canonicalize(f)?;
        let s = spec.get_or_insert_with(|| {
            count = h.shard_count;
            RolloutSpec {
                table_id: h.table_id,
                version_id: h.version_id,
                shard_files: BTreeMap::new(),
            }
        });
        if (h.table_id, h.version_id, h.shard_count) != (s.table_id, s.version_id, count) {
            bail!("{} belongs to a different table, version or shard count", f.display());
        }
        if s.shard_files.insert(h.shard_index, abs).is_some() {
            bail!("shard {} given twice", h.shard_index);
        }
    }
    let spec = spec.context("no shard files")?;
    if spec.shard_files.len() != count as usize {
        bail!("version {} has {count} shards, {} staged", spec.version_id, spec.shard_files.len());
    }
    Ok(spec)
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    tracing_subscriber::fmt().with_max_level(cli.log_level).init();
    match cli.cmd {
        Cmd::Plan {
            table_id,
            version_id,
            max_shard_bytes,
            input,
            synthetic_keys,
            value_len,
            seed,
            out_dir,
        } => {
            let mut src: Box<dyn RecordSource> = match synthetic_keys {
                Some(n) => Box::new(FnSource(synthetic(n, value_len, seed))),
                None if !input.is_empty() => Box::new(ShardFilesSource(shard_files(&input)?)),
                None => bail!("give --input files or --synthetic-keys"),
            };
            let plan = match &out_dir {
                Some(d) => auto_shard(&mut *src, max_shard_bytes, table_id, version_id, d)?,
                None => plan_shards(&mut *src, max_shard_bytes, table_id, version_id)?,
            };
            print!("{plan}");
        }
        Cmd::Push {
            registry,
            shards,
            dwell_ms,
            health_timeout_secs,
            min_replicas,
            owner,
        } => {
            let spec = rollout_spec(&shard_files(&shards)?)?;
            let reg: Arc<dyn Registry> = Arc::new(FileRegistry::open(&registry)?);
            let mut cfg = UpdaterConfig {
                dwell: Duration::from_millis(dwell_ms),
                health_timeout: Duration::from_secs(health_timeout_secs),
                min_replicas,
                ..UpdaterConfig::default()
            };
            if let Some(o) = owner {
                cfg.owner = o;
            }
            let report = rolling_update(reg, &spec, &cfg, &NoFaults).await?;
            for (shard, ep) in &report.updated {
                println!("updated shard={shard} endpoint={ep}");
            }
            for (shard, ep, why) in &report.failed {
                println!("failed shard={shard} endpoint={ep} reason={why}");
            }
            println!(
                "table={} version={} retired={} elapsed_ms={}",
                report.table_id,
                report.version_id,
                report.retired,
                report.elapsed.as_millis()
            );
            if !report.succeeded() {
                std::process::exit(1);
            }
        }
        Cmd::Status { registry, table_id } => status(&registry, table_id).await?,
        Cmd::Unlock { registry, table_id } => {
            let reg = FileRegistry::open(&registry)?;
            let owner = reg.lock_owner(table_id)?;
            reg.force_unlock(table_id)?;
            println!("table={table_id} released={}", owner.as_deref().unwrap_or("-"));
        }
    }
    Ok(())
}

async fn status(registry: &Path, table_id: u64) -> anyhow::Result<()> {
    let reg = FileRegistry::open(registry)?;
    let eps = reg.endpoints(table_id)?;
    println!(
        "table={table_id} revision={} lock={}",
        eps.revision,
        reg.lock_owner(table_id)?.as_deref().unwrap_or("-")
    );
    for (shard, list) in &eps.shards {
        for ep in list {
            match fetch_health(ep, Duration::from_secs(5)).await {
                Ok(h) => {
                    let versions: Vec<String> = h.versions.iter().map(|v| v.version_id.to_string()).collect();
                    println!(
                        "shard={shard} endpoint={ep} current={} live={} qps={:.1}",
                        h.current_version().map_or("-".into(), |v| v.to_string()),
                        versions.join(","),
                        h.qps
                    );
                }
                Err(e) => println!("shard={shard} endpoint={ep} error={e}"),
            }
        }
    }
    Ok(())
}
