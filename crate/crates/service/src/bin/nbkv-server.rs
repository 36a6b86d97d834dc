//! Serves one shard of one table over TCP.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::Parser;
use nbkv_core::engine::{Engine, EngineConfig};
use nbkv_service::net::spawn_server;
use nbkv_service::registry::{FileRegistry, Registry};
use nbkv_service::server::{ServerConfig, ShardServer};

#[derive(Parser, Debug)]
#[command(name = "nbkv-server", about = "Serve one shard of one table")]
struct Args {
    #[arg(long)]
    table_id: u64,
    #[arg(long, default_value = "127.0.0.1:7400")]
    listen: String,
    /// Where loaded versions keep their value logs.
    #[arg(long)]
    data_dir: PathBuf,
    /// Shard file to load and activate before accepting queries.
    #[arg(long)]
    shard: Option<PathBuf>,
    /// Seconds a replaced version stays queryable.
    #[arg(long, default_value_t = 30)]
    grace_secs: u64,
    #[arg(long, default_value_t = 256)]
    hot_budget_mib: usize,
    #[arg(long, default_value = "auto")]
    engine: Engine,
    /// Register in this registry file once serving.
    #[arg(long, requires = "shard_index")]
    registry: Option<PathBuf>,
    #[arg(long)]
    shard_index: Option<u32>,
    /// Address to publish; defaults to the bound address.
    #[arg(long)]
    advertise: Option<String>,
    #[arg(long, default_value = "info")]
    log_level: tracing::Level,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    tracing_subscriber::fmt().with_max_level(args.log_level).init();

    let mut config = ServerConfig::new(args.table_id, &args.data_dir);
    config.grace = Duration::from_secs(args.grace_secs);
    config.engine = EngineConfig::new(args.engine);
    config.tiered.hot_budget_bytes = args.hot_budget_mib << 20;
    std::fs::create_dir_all(&args.data_dir).with_context(|| format!("creating {}", args.data_dir.display()))?;
    let server = Arc::new(ShardServer::new(config));
    if let Some(p) = &args.shard {
        let v = server.load_and_activate(p).with_context(|| format!("loading {}", p.display()))?;
        tracing::info!(version = v, path = %p.display(), "activated");
    }
    let handle = spawn_server(Arc::clone(&server), &args.listen).await?;
    let endpoint = args.advertise.clone().unwrap_or_else(|| handle.addr.to_string());
    tracing::info!(%endpoint, table = args.table_id, "serving");

    let registration = match (&args.registry, args.shard_index) {
        (Some(path), Some(shard)) => {
            let reg = FileRegistry::open(path)?;
            reg.register(args.table_id, shard, &endpoint)?;
            Some((reg, shard))
        }
        _ => None,
    };

    tokio::signal::ctrl_c().await?;
    if let Some((reg, shard)) = registration {
        reg.deregister(args.table_id, shard, &endpoint)?;
    }
    handle.shutdown().await;
    Ok(())
}
