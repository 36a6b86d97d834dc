//! Batch lookup engines over an immutable [`Table`].
//!
//! Every engine returns exactly what [`Table::batch_lookup_scalar`] returns,
//! element for element. They differ only in how memory accesses of
//! independent keys are overlapped.

mod interleaved;
mod vectorized;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::hash::Table;

pub use self::interleaved::{interleaved_batch_lookup, interleaved_batch_lookup_into, Phase, ProbeState};
pub use self::vectorized::{vector_fast_path_available, vectorized_batch_lookup, vectorized_batch_lookup_into};

pub const DEFAULT_GROUP_SIZE: usize = 8;
pub const MAX_GROUP_SIZE: usize = 32;
pub const DEFAULT_AUTO_THRESHOLD: usize = 32 << 20;
pub const DEFAULT_VECTOR_GROUPS: usize = 2;
pub const MAX_VECTOR_GROUPS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Engine {
    Scalar,
    Interleaved,
    Vectorized,
    /// Vectorized below `auto_threshold_bytes` of table memory, interleaved above.
    Auto,
}

impl Engine {
    pub const ALL: [Engine; 4] = [Engine::Scalar, Engine::Interleaved, Engine::Vectorized, Engine::Auto];

    pub fn as_str(self) -> &'static str {
        match self {
            Engine::Scalar => "scalar",
            Engine::Interleaved => "interleaved",
            Engine::Vectorized => "vectorized",
            Engine::Auto => "auto",
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown engine {0:?} (expected scalar, interleaved, vectorized or auto)")]
pub struct ParseEngineError(String);

impl FromStr for Engine {
    type Err = ParseEngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Engine::ALL
            .into_iter()
            .find(|e| e.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ParseEngineError(s.to_owned()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EngineConfig {
    /// Probes kept in flight (G). Clamped to `1..=MAX_GROUP_SIZE`.
    pub group_size: usize,
    pub engine: Engine,
    pub auto_threshold_bytes: usize,
    /// Vectors of eight queries interleaved by the vectorized engine.
    /// Clamped to `1..=MAX_VECTOR_GROUPS`.
    pub vector_groups: usize,
    /// Issue cacheline prefetches for the next bucket of each probe.
    pub prefetch: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            group_size: DEFAULT_GROUP_SIZE,
            engine: Engine::Auto,
            auto_threshold_bytes: DEFAULT_AUTO_THRESHOLD,
            vector_groups: DEFAULT_VECTOR_GROUPS,
            prefetch: true,
        }
    }
}

impl EngineConfig {
    pub fn new(engine: Engine) -> Self {
        EngineConfig {
            engine,
            ..EngineConfig::default()
        }
    }

    pub fn with_group_size(mut self, g: usize) -> Self {
        self.group_size = g;
        self
    }

    pub fn with_vector_groups(mut self, v: usize) -> Self {
        self.vector_groups = v;
        self
    }

    pub(crate) fn group(&self) -> usize {
        self.group_size.clamp(1, MAX_GROUP_SIZE)
    }

    /// The concrete engine used for `table`; never [`Engine::Auto`].
    pub fn resolve(&self, table: &Table) -> Engine {
        match self.engine {
            Engine::Auto if table.memory_bytes() < self.auto_threshold_bytes => Engine::Vectorized,
            Engine::Auto => Engine::Interleaved,
            e => e,
        }
    }
}

/// What actually ran for one batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EngineStats {
    pub engine: Engine,
    /// False when the vectorized engine fell back to the interleaved one.
    pub vector_fast_path: bool,
}

pub fn scalar_batch_lookup_into(table: &Table, keys: &[u64], out: &mut Vec<Option<u64>>) {
    out.clear();
    out.extend(keys.iter().map(|&k| table.lookup(k)));
}

/// Looks up `keys` with the configured engine.
pub fn batch_lookup(table: &Table, keys: &[u64], config: &EngineConfig) -> Vec<Option<u64>> {
    let mut out = Vec::with_capacity(keys.len());
    batch_lookup_into(table, keys, config, &mut out);
    out
}

/// [`batch_lookup`] into a reusable buffer, reporting the engine that ran.
pub fn batch_lookup_into(
    table: &Table,
    keys: &[u64],
    config: &EngineConfig,
    out: &mut Vec<Option<u64>>,
) -> EngineStats {
    let engine = config.resolve(table);
    let mut vector_fast_path = false;
    match engine {
        Engine::Scalar => scalar_batch_lookup_into(table, keys, out),
        Engine::Interleaved => interleaved_batch_lookup_into(table, keys, config.group(), config.prefetch, out),
        Engine::Vectorized => {
            vector_fast_path = vectorized_batch_lookup_into(table, keys, config, out)
        }
        Engine::Auto => unreachable!("resolve never returns Auto"),
    }
    EngineStats {
        engine,
        vector_fast_path,
    }
}

/// Median-of-runs throughput.
#[derive(Clone, Debug, PartialEq)]
pub struct Throughput {
    /// Median over `runs`, in million lookups per second.
    pub mops: f64,
    pub runs: Vec<f64>,
}

/// Times `run` (which performs `ops` lookups) once to warm up, then `reps`
/// more times (at least 3), and reports the median.
pub fn measure_throughput(ops: usize, reps: usize, mut run: impl FnMut()) -> Throughput {
    run();
    let mut runs: Vec<f64> = (0..reps.max(3))
        .map(|_| {
            let t = Instant::now();
            run();
            ops as f64 / t.elapsed().as_secs_f64().max(1e-9) / 1e6
        })
        .collect();
    let mut sorted = runs.clone();
    sorted.sort_by(f64::total_cmp);
    let mops = sorted[sorted.len() / 2];
    runs.shrink_to_fit();
    Throughput { mops, runs }
}

/// Lookup throughput of `engine` over `keys`.
pub fn run_throughput_probe(table: &Table, keys: &[u64], config: &EngineConfig, reps: usize) -> Throughput {
    let mut out = Vec::with_capacity(keys.len());
    measure_throughput(keys.len(), reps, || {
        batch_lookup_into(table, std::hint::black_box(keys), config, &mut out);
        std::hint::black_box(&out);
    })
}

#[inline(always)]
pub(crate) fn prefetch<T>(p: *const T) {
    #[cfg(target_arch = "x86_64")]
    // SAFETY: prefetch is a hint and never faults, even on invalid addresses.
    unsafe {
        use std::arch::x86_64::{_mm_prefetch, _MM_HINT_T0};
        _mm_prefetch::<_MM_HINT_T0>(p as *const i8);
    }
    #[cfg(not(target_arch = "x86_64"))]
    let _ = p;
}

#[cfg(test)]
mod tests;
