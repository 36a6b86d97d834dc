//! Key sets and probe sequences.
//!
//! Keys are `splitmix64(base + i)`. splitmix64 is a bijection, so the
//! first `key_count` indices give distinct present keys and any index past
//! them gives a key that is guaranteed absent. Nothing needs to be stored
//! to know which probes should hit.

use std::fmt;
use std::str::FromStr;

use nbkv_core::hash::PAYLOAD_LIMIT;
use nbkv_core::mix::splitmix64;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution as _, Zipf};

/// Bytes per bucket; dataset sizes are bucket-array bytes.
pub const BUCKET_BYTES: u64 = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Distribution {
    Uniform,
    /// Probe ranks follow a Zipf law with this exponent.
    Zipf(f64),
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distribution::Uniform => f.write_str("uniform"),
            Distribution::Zipf(s) => write!(f, "zipf:{s}"),
        }
    }
}

impl FromStr for Distribution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "uniform" => Ok(Distribution::Uniform),
            "zipf" | "zipfian" => Ok(Distribution::Zipf(0.99)),
            _ => {
                let exp = s
                    .strip_prefix("zipf:")
                    .or_else(|| s.strip_prefix("zipfian:"))
                    .ok_or_else(|| format!("unknown distribution {s:?}"))?;
                let e: f64 = exp.parse().map_err(|e| format!("zipf exponent: {e}"))?;
                if e.is_nan() || e < 0.0 {
                    return Err("zipf exponent must be non-negative".into());
                }
                Ok(Distribution::Zipf(e))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadSpec {
    pub key_count: usize,
    pub distribution: Distribution,
    pub load_factor: f64,
    /// Fraction of probes that hit, honoured exactly.
    pub success_query_ratio: f64,
    pub probe_count: usize,
    pub seed: u64,
}

impl WorkloadSpec {
    /// A workload filling a power-of-two bucket array of `bytes` to `load_factor`.
    pub fn for_table_bytes(bytes: u64, load_factor: f64, seed: u64) -> Self {
        let capacity = (bytes / BUCKET_BYTES).max(4).next_power_of_two();
        WorkloadSpec {
            key_count: (capacity as f64 * load_factor).floor() as usize,
            distribution: Distribution::Uniform,
            load_factor,
            success_query_ratio: 0.9,
            probe_count: 1 << 22,
            seed,
        }
    }

    /// Bucket capacity that holds `key_count` at `load_factor`.
    pub fn capacity(&self) -> usize {
        ((self.key_count as f64 / self.load_factor).ceil() as usize).max(4).next_power_of_two()
    }

    pub fn dataset_bytes(&self) -> u64 {
        self.capacity() as u64 * BUCKET_BYTES
    }

    pub fn present_probes(&self) -> usize {
        (self.success_query_ratio * self.probe_count as f64).round() as usize
    }

    fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.success_query_ratio) {
            return Err(format!("success_query_ratio {} outside [0, 1]", self.success_query_ratio));
        }
        if !(self.load_factor > 0.0 && self.load_factor <= 1.0) {
            return Err(format!("load_factor {} outside (0, 1]", self.load_factor));
        }
        if self.key_count == 0 && self.present_probes() > 0 {
            return Err("present probes requested from an empty key set".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Workload {
    pub spec: WorkloadSpec,
    base: u64,
    pub probes: Vec<u64>,
    /// Whether `probes[i]` is in the key set.
    pub present: Vec<bool>,
}

/// The payload stored for `key`: its top 52 bits.
#[inline]
pub fn payload_of(key: u64) -> u64 {
    (key >> 12) & (PAYLOAD_LIMIT - 1)
}

impl Workload {
    /// The `i`-th key. Indices below `key_count` are present.
    #[inline]
    pub fn key(&self, i: u64) -> u64 {
        key_at(self.base, i)
    }

    pub fn keys(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.spec.key_count as u64).map(|i| self.key(i))
    }

    pub fn hits(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }
}

#[inline]
fn key_at(base: u64, i: u64) -> u64 {
    let k = splitmix64(base.wrapping_add(i));
    // u64::MAX is the empty sentinel; hitting it needs one specific index
    assert_ne!(k, u64::MAX, "index {i} maps to the reserved key; pick another seed");
    k
}

pub fn gen_workload(spec: &WorkloadSpec) -> Result<Workload, String> {
    spec.validate()?;
    let base = splitmix64(spec.seed ^ 0x5eed);
    let mut rng = StdRng::seed_from_u64(spec.seed);
    let n = spec.key_count as u64;
    let hits = spec.present_probes();
    let zipf = match spec.distribution {
        Distribution::Zipf(s) if n > 0 => Some(Zipf::new(n as f64, s).map_err(|e| e.to_string())?),
        _ => None,
    };
    let mut flags: Vec<bool> = (0..spec.probe_count).map(|i| i < hits).collect();
    flags.shuffle(&mut rng);
    let probes = flags
        .iter()
        .map(|&hit| {
            if hit {
                let rank = match &zipf {
                    Some(z) => z.sample(&mut rng) as u64 - 1,
                    None => rng.random_range(0..n),
                };
                key_at(base, rank.min(n - 1))
            } else {
                key_at(base, n + rng.random_range(0..1u64 << 40))
            }
        })
        .collect();
    Ok(Workload {
        spec: spec.clone(),
        base,
        probes,
        present: flags,
    })
}
