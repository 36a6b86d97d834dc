//! Splits a table into shard files no larger than a byte cap.
//!
//! A shard's size is exact: a 40-byte header plus `12 + len` per record.
//! The shard count search starts at `ceil(total / cap)` and walks upward
//! until routing every record leaves each shard under the cap. Each pass
//! over the source evaluates a window of candidate counts at once.

use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::routing::route;
use crate::shard_file::{record_size, ShardFileError, ShardHeader, ShardReader, ShardWriter, SHARD_HEADER_LEN};

const WINDOW: u32 = 8;
/// Give up well before routing could need more shards than this.
const MAX_SHARDS: u32 = 1 << 16;

#[derive(Debug, Error)]
pub enum AutoShardError {
    #[error("record {key:#x} needs {bytes} bytes, more than the {cap}-byte cap allows")]
    RecordTooLarge { key: u64, bytes: u64, cap: u64 },
    #[error("key {0:#x} is reserved")]
    ReservedKey(u64),
    #[error("no shard count up to {MAX_SHARDS} fits the cap")]
    NoFit,
    #[error("source yielded different records on a later pass")]
    UnstableSource,
    #[error(transparent)]
    ShardFile(#[from] ShardFileError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Receives one record at a time from a [`RecordSource`].
pub type RecordSink<'a> = dyn FnMut(u64, &[u8]) -> Result<(), AutoShardError> + 'a;

/// A record stream that can be replayed; planning reads it several times.
pub trait RecordSource {
    fn for_each(&mut self, f: &mut RecordSink<'_>) -> Result<(), AutoShardError>;
}

/// Wraps a closure returning a fresh iterator on every call.
pub struct FnSource<F>(pub F);

impl<F, I, V> RecordSource for FnSource<F>
where
    F: FnMut() -> I,
    I: IntoIterator<Item = (u64, V)>,
    V: AsRef<[u8]>,
{
    fn for_each(&mut self, f: &mut RecordSink<'_>) -> Result<(), AutoShardError> {
        for (k, v) in (self.0)() {
            f(k, v.as_ref())?;
        }
        Ok(())
    }
}

/// Every record of a set of existing shard files, e.g. a previous version.
pub struct ShardFilesSource(pub Vec<PathBuf>);

impl RecordSource for ShardFilesSource {
    fn for_each(&mut self, f: &mut RecordSink<'_>) -> Result<(), AutoShardError> {
        for p in &self.0 {
            let mut r = ShardReader::open(p)?;
            while let Some((k, v)) = r.next_record()? {
                f(k, &v)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShardInfo {
    pub index: u32,
    pub entries: u64,
    pub bytes: u64,
    /// Set once the file is written.
    pub path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShardPlan {
    pub table_id: u64,
    pub version_id: u64,
    pub shard_count: u32,
    pub max_shard_bytes: u64,
    pub total_bytes: u64,
    pub shards: Vec<ShardInfo>,
}

impl ShardPlan {
    pub fn largest_shard(&self) -> u64 {
        self.shards.iter().map(|s| s.bytes).max().unwrap_or(0)
    }

    pub fn paths(&self) -> Vec<PathBuf> {
        self.shards.iter().filter_map(|s| s.path.clone()).collect()
    }
}

impl fmt::Display for ShardPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "table={} version={} shard_count={} max_shard_bytes={} total_bytes={}",
            self.table_id, self.version_id, self.shard_count, self.max_shard_bytes, self.total_bytes
        )?;
        for s in &self.shards {
            write!(f, "shard={} entries={} bytes={}", s.index, s.entries, s.bytes)?;
            if let Some(p) = &s.path {
                write!(f, " path={}", p.display())?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

pub fn shard_file_name(table_id: u64, version_id: u64, index: u32, count: u32) -> String {
    format!("t{table_id}-v{version_id}-s{index}of{count}.nbsh")
}

/// Chooses the shard count without writing anything.
pub fn plan_shards(source: &mut dyn RecordSource, max_shard_bytes: u64, table_id: u64, version_id: u64) -> Result<ShardPlan, AutoShardError> {
    let mut total = 0u64;
    source.for_each(&mut |k, v| {
        if k == u64::MAX {
            return Err(AutoShardError::ReservedKey(k));
        }
        let bytes = record_size(v.len());
        if SHARD_HEADER_LEN + bytes > max_shard_bytes {
            return Err(AutoShardError::RecordTooLarge {
                key: k,
                bytes,
                cap: max_shard_bytes,
            });
        }
        total += bytes;
        Ok(())
    })?;
    let mut lo = total.div_ceil(max_shard_bytes).clamp(1, MAX_SHARDS as u64) as u32;
    while lo <= MAX_SHARDS {
        let counts: Vec<u32> = (lo..lo.saturating_add(WINDOW).min(MAX_SHARDS + 1)).collect();
        let mut sizes: Vec<Vec<(u64, u64)>> = counts.iter().map(|&n| vec![(0, SHARD_HEADER_LEN); n as usize]).collect();
        source.for_each(&mut |k, v| {
            let bytes = record_size(v.len());
            for (n, s) in counts.iter().zip(sizes.iter_mut()) {
                let e = &mut s[route(k, *n) as usize];
                e.0 += 1;
                e.1 += bytes;
            }
            Ok(())
        })?;
        for (n, s) in counts.iter().zip(sizes) {
            if s.iter().all(|&(_, b)| b <= max_shard_bytes) {
                return Ok(ShardPlan {
                    table_id,
                    version_id,
                    shard_count: *n,
                    max_shard_bytes,
                    total_bytes: total,
                    shards: s
                        .into_iter()
                        .enumerate()
                        .map(|(i, (entries, bytes))| ShardInfo {
                            index: i as u32,
                            entries,
                            bytes,
                            path: None,
                        })
                        .collect(),
                });
            }
        }
        lo = lo.saturating_add(WINDOW);
    }
    Err(AutoShardError::NoFit)
}

/// Plans the shard count, then writes one `NBSH` file per shard into `out_dir`.
pub fn auto_shard(source: &mut dyn RecordSource, max_shard_bytes: u64, table_id: u64, version_id: u64, out_dir: &Path) -> Result<ShardPlan, AutoShardError> {
    let mut plan = plan_shards(source, max_shard_bytes, table_id, version_id)?;
    std::fs::create_dir_all(out_dir)?;
    let n = plan.shard_count;
    let mut writers = Vec::with_capacity(n as usize);
    for s in &mut plan.shards {
        let path = out_dir.join(shard_file_name(table_id, version_id, s.index, n));
        let header = ShardHeader {
            table_id,
            version_id,
            shard_index: s.index,
            shard_count: n,
            entry_count: 0,
        };
        writers.push(ShardWriter::create(&path, header)?);
        s.path = Some(path);
    }
    source.for_each(&mut |k, v| {
        writers[route(k, n) as usize].append(k, v)?;
        Ok(())
    })?;
    for (w, s) in writers.into_iter().zip(&plan.shards) {
        let (h, bytes) = w.finish()?;
        if h.entry_count != s.entries || bytes != s.bytes {
            return Err(AutoShardError::UnstableSource);
        }
    }
    Ok(plan)
}
