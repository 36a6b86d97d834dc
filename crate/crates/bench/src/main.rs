//! nbkv-bench: workload generation and benchmark runs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use nbkv_bench::consistency::{run_consistency_ab, ConsistencySpec};
use nbkv_bench::latency::{run_latency_scaling, scaling_ratio, LatencySpec};
use nbkv_bench::report::{Format, Row, RunReport};
use nbkv_bench::tables::{run_ablation, run_engine_crossover, run_scalar_comparison, CrossoverSpec, Variant};
use nbkv_bench::workload::{gen_workload, Distribution, WorkloadSpec};

#[derive(Parser, Debug)]
#[command(name = "nbkv-bench", about = "Hash table and service benchmarks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[arg(long, global = true, default_value = "table")]
    format: Format,
    /// Write results here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct WorkloadArgs {
    /// Bucket-array size, e.g. 64MiB. Sets the key count from the load factor.
    #[arg(long, value_parser = parse_size, conflicts_with = "keys")]
    table_bytes: Option<u64>,
    #[arg(long)]
    keys: Option<usize>,
    #[arg(long, default_value_t = 0.8)]
    load_factor: f64,
    #[arg(long, default_value_t = 0.9)]
    sqr: f64,
    #[arg(long, default_value = "uniform")]
    distribution: Distribution,
    #[arg(long, default_value_t = 1 << 22)]
    probes: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl WorkloadArgs {
    fn spec(&self) -> WorkloadSpec {
        let base = WorkloadSpec::for_table_bytes(self.table_bytes.unwrap_or(64 << 20), self.load_factor, self.seed);
        WorkloadSpec {
            key_count: self.keys.unwrap_or(base.key_count),
            distribution: self.distribution,
            success_query_ratio: self.sqr,
            probe_count: self.probes,
            ..base
        }
    }
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a workload and print its shape; optionally dump the probes.
    Gen {
        #[command(flatten)]
        workload: WorkloadArgs,
        /// Probe keys as little-endian u64s.
        #[arg(long)]
        probes_out: Option<PathBuf>,
    },
    /// Scalar lookup throughput per table variant.
    ScalarBench {
        #[command(flatten)]
        workload: WorkloadArgs,
        #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
        variants: Option<Vec<Variant>>,
        #[arg(long, default_value_t = 3)]
        reps: usize,
    },
    /// Average probed cache lines per successful lookup across the ladder.
    Ablation {
        #[command(flatten)]
        workload: WorkloadArgs,
        #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
        variants: Option<Vec<Variant>>,
    },
    /// Engine throughput across dataset sizes.
    Crossover {
        #[arg(long, value_delimiter = ',', value_parser = parse_size)]
        sizes: Option<Vec<u64>>,
        #[arg(long, default_value_t = 0.8)]
        load_factor: f64,
        #[arg(long, default_value_t = 0.9)]
        sqr: f64,
        #[arg(long, default_value_t = 1 << 22)]
        probes: usize,
        #[arg(long, value_delimiter = ',')]
        group_sizes: Option<Vec<usize>>,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        no_random_access: bool,
    },
    /// Batch latency against one shard server.
    Latency {
        #[arg(long, default_value_t = 200_000)]
        keys: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [10usize, 100, 500])]
        batch_sizes: Vec<usize>,
        #[arg(long, default_value_t = 2_000)]
        iterations: usize,
        #[arg(long, default_value_t = 32)]
        value_len: usize,
        /// An already running server holding keys 1..=keys.
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long, default_value_t = 1)]
        table_id: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Strong and naive clients side by side during rolling updates.
    ConsistencyAb {
        #[arg(long)]
        updates: Option<usize>,
        #[arg(long)]
        duration_secs: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        interval_ms: u64,
        /// Draw gaps uniformly from [0, 2 * interval] instead of a fixed schedule.
        #[arg(long)]
        randomize: bool,
        #[arg(long, default_value_t = 2)]
        strong_clients: usize,
        #[arg(long, default_value_t = 2)]
        naive_clients: usize,
        #[arg(long, default_value_t = 20_000)]
        keys: usize,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn parse_size(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let n: u64 = num.parse().map_err(|e| format!("{s:?}: {e}"))?;
    let shift = match unit.to_ascii_lowercase().as_str() {
        "" | "b" => 0,
        "k" | "kib" => 10,
        "m" | "mib" => 20,
        "g" | "gib" => 30,
        _ => return Err(format!("unknown unit in {s:?}")),
    };
    n.checked_shl(shift).filter(|v| v >> shift == n).ok_or_else(|| format!("{s:?} overflows"))
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| format!("unknown variant {s:?}"))
}

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn run(cmd: Cmd) -> anyhow::Result<RunReport> {
    let err = |e: String| anyhow!(e);
    Ok(match cmd {
        Cmd::Gen { workload, probes_out } => {
            let spec = workload.spec();
            let w = gen_workload(&spec).map_err(err)?;
            if let Some(path) = probes_out {
                let mut f = BufWriter::new(File::create(&path).with_context(|| path.display().to_string())?);
                for p in &w.probes {
                    f.write_all(&p.to_le_bytes())?;
                }
                f.flush()?;
            }
            let mut r = RunReport::default();
            r.push(Row {
                experiment: "gen".into(),
                keys: spec.key_count as u64,
                dataset_bytes: spec.dataset_bytes(),
                load_factor: spec.load_factor,
                sqr: spec.success_query_ratio,
                distribution: spec.distribution.to_string(),
                seed: spec.seed,
                note: format!("probes={} hits={}", w.probes.len(), w.hits()),
                ..Row::default()
            });
            r
        }
        Cmd::ScalarBench { workload, variants, reps } => {
            let vs = variants.unwrap_or_else(|| Variant::SCALAR.to_vec());
            run_scalar_comparison(&workload.spec(), &vs, reps, 1 << 20).map_err(err)?
        }
        Cmd::Ablation { workload, variants } => {
            let vs = variants.unwrap_or_else(|| Variant::LADDER.to_vec());
            run_ablation(&workload.spec(), &vs, 1 << 20).map_err(err)?
        }
        Cmd::Crossover { sizes, load_factor, sqr, probes, group_sizes, reps, seed, no_random_access } => {
            let d = CrossoverSpec::default();
            run_engine_crossover(&CrossoverSpec {
                sizes: sizes.unwrap_or(d.sizes.clone()),
                load_factor,
                sqr,
                probe_count: probes,
                seed,
                reps,
                group_sizes: group_sizes.unwrap_or(d.group_sizes.clone()),
                include_random_access: !no_random_access,
                ..d
            })
            .map_err(err)?
        }
        Cmd::Latency { keys, batch_sizes, iterations, value_len, endpoint, table_id, seed } => {
            let spec = LatencySpec { keys, value_len, batch_sizes, iterations, seed, endpoint, table_id };
            let (points, report) = runtime()?.block_on(run_latency_scaling(&spec))?;
            if let Some(ratio) = scaling_ratio(&points) {
                eprintln!("latency ratio largest/smallest batch: {ratio:.2}");
            }
            report
        }
        Cmd::ConsistencyAb { updates, duration_secs, interval_ms, randomize, strong_clients, naive_clients, keys, batch_size, seed } => {
            if updates.is_none() && duration_secs.is_none() {
                bail!("give --updates or --duration-secs");
            }
            let spec = ConsistencySpec {
                updates,
                duration: duration_secs.map(Duration::from_secs_f64),
                update_interval: Duration::from_millis(interval_ms),
                randomize,
                strong_clients,
                naive_clients,
                keys,
                batch_size,
                seed,
                ..ConsistencySpec::default()
            };
            let o = runtime()?.block_on(run_consistency_ab(&spec))?;
            let mut r = RunReport::default();
            for (mode, c) in [("strong", &o.strong), ("naive", &o.naive)] {
                r.push(Row {
                    experiment: "consistency".into(),
                    variant: mode.into(),
                    keys: keys as u64,
                    seed,
                    reps: c.batches as usize,
                    note: format!(
                        "mixed={} rate={:.5} failed={} wrong={} updates={} min_registered={} elapsed_s={:.1}",
                        c.mixed,
                        c.violation_rate(),
                        c.failed,
                        c.wrong_values,
                        o.updates_completed,
                        o.min_registered,
                        o.elapsed.as_secs_f64()
                    ),
                    ..Row::default()
                });
            }
            if o.strong.mixed > 0 || o.strong.failed > 0 || o.strong.wrong_values > 0 {
                print_report(&r, Format::Table, None)?;
                bail!("strong clients saw mixed or failed batches: {:?}", o.strong);
            }
            r
        }
    })
}

fn print_report(r: &RunReport, format: Format, out: Option<&PathBuf>) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, r.render(format)).with_context(|| p.display().to_string())?,
        None => print!("{}", r.render(format)),
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let report = run(cli.cmd)?;
    print_report(&report, cli.format, cli.out.as_ref())
}
