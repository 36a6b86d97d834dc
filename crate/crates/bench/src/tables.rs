//! Scalar comparison, ablation ladder and engine crossover.
//!
//! Every table is checked against the workload's ground truth before it is
//! timed; a table that answers wrongly produces an error, never a row.

use std::hint::black_box;

use nbkv_core::ablation::{
    variant_coalesced, variant_linear_relocation, variant_neighbor_probing, variant_neighborhash, variant_perfect_cellar, CoalescedTable,
    LinearProbingTable, ProbeTable, RandomAccessTable, RelocatingTable, VariantConfig,
};
use nbkv_core::engine::{batch_lookup, measure_throughput, run_throughput_probe, Engine, EngineConfig, Throughput};
use nbkv_core::{ProbeStats, Table};

use crate::report::{Row, RunReport};
use crate::workload::{gen_workload, payload_of, Workload, WorkloadSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    LinearProbing,
    Coalesced,
    PerfectCellar,
    NeighborProbing,
    NeighborHash,
    LinearRelocation,
    RandomAccess,
}

impl Variant {
    /// The scalar comparison set.
    pub const SCALAR: [Variant; 6] = [
        Variant::LinearProbing,
        Variant::Coalesced,
        Variant::PerfectCellar,
        Variant::NeighborProbing,
        Variant::NeighborHash,
        Variant::RandomAccess,
    ];
    /// The ablation ladder, worst first, plus two reference points.
    pub const LADDER: [Variant; 6] = [
        Variant::Coalesced,
        Variant::PerfectCellar,
        Variant::NeighborProbing,
        Variant::NeighborHash,
        Variant::LinearRelocation,
        Variant::LinearProbing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::LinearProbing => "linear-probing",
            Variant::Coalesced => "coalesced",
            Variant::PerfectCellar => "perfect-cellar",
            Variant::NeighborProbing => "neighbor-probing",
            Variant::NeighborHash => "neighborhash",
            Variant::LinearRelocation => "linear-relocation",
            Variant::RandomAccess => "random-access",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        [Variant::LADDER.as_slice(), &[Variant::RandomAccess]].concat().into_iter().find(|v| v.name() == s)
    }
}

/// A built table of any variant, kept concrete so timing loops inline.
pub enum AnyTable {
    Linear(LinearProbingTable),
    Coalesced(CoalescedTable),
    Relocating(RelocatingTable),
    Neighbor(Table),
    RandomAccess(RandomAccessTable),
}

macro_rules! each {
    ($self:expr, $t:ident => $e:expr) => {
        match $self {
            AnyTable::Linear($t) => $e,
            AnyTable::Coalesced($t) => $e,
            AnyTable::Relocating($t) => $e,
            AnyTable::Neighbor($t) => $e,
            AnyTable::RandomAccess($t) => $e,
        }
    };
}

fn scalar_pass<T: ProbeTable + ?Sized>(t: &T, probes: &[u64]) -> u64 {
    let mut acc = 0u64;
    for &k in probes {
        if let Some(p) = t.lookup(black_box(k)) {
            acc = acc.wrapping_add(p);
        }
    }
    acc
}

impl AnyTable {
    pub fn build(variant: Variant, w: &Workload) -> Result<AnyTable, String> {
        let config = VariantConfig {
            max_load_factor: w.spec.load_factor,
            ..VariantConfig::with_capacity(w.spec.capacity())
        };
        let err = |e: nbkv_core::HashError| format!("{}: {e}", variant.name());
        let mut t = match variant {
            Variant::LinearProbing => AnyTable::Linear(LinearProbingTable::new(&config).map_err(err)?),
            Variant::Coalesced => AnyTable::Coalesced(variant_coalesced(&config).map_err(err)?),
            Variant::PerfectCellar => AnyTable::Relocating(variant_perfect_cellar(&config).map_err(err)?),
            Variant::NeighborProbing => AnyTable::Relocating(variant_neighbor_probing(&config).map_err(err)?),
            Variant::NeighborHash => AnyTable::Neighbor(variant_neighborhash(&config).map_err(err)?),
            Variant::LinearRelocation => AnyTable::Neighbor(variant_linear_relocation(&config).map_err(err)?),
            Variant::RandomAccess => AnyTable::RandomAccess(RandomAccessTable::new(&config).map_err(err)?),
        };
        each!(&mut t, t => {
            for k in w.keys() {
                ProbeTable::insert(t, k, payload_of(k)).map_err(err)?;
            }
        });
        Ok(t)
    }

    pub fn as_probe_table(&self) -> &dyn ProbeTable {
        each!(self, t => t as &dyn ProbeTable)
    }

    pub fn memory_bytes(&self) -> usize {
        self.as_probe_table().memory_bytes()
    }

    pub fn neighborhash(&self) -> Option<&Table> {
        match self {
            AnyTable::Neighbor(t) => Some(t),
            _ => None,
        }
    }

    /// Checks the first `sample` probes against the workload's ground truth.
    pub fn verify(&self, w: &Workload, sample: usize) -> Result<(), String> {
        let t = self.as_probe_table();
        if t.len() != w.spec.key_count {
            return Err(format!("{}: holds {} keys, expected {}", t.name(), t.len(), w.spec.key_count));
        }
        for (&k, &hit) in w.probes.iter().zip(&w.present).take(sample) {
            let want = hit.then(|| payload_of(k));
            let got = t.lookup(k);
            if got != want {
                return Err(format!("{}: key {k:#x} returned {got:?}, expected {want:?}", t.name()));
            }
        }
        Ok(())
    }

    pub fn time_scalar(&self, probes: &[u64], reps: usize) -> Throughput {
        each!(self, t => measure_throughput(probes.len(), reps, || {
            black_box(scalar_pass(t, probes));
        }))
    }

    pub fn apcl(&self, probes: &[u64]) -> ProbeStats {
        self.as_probe_table().measure_apcl(probes)
    }
}

fn row(experiment: &str, variant: &str, engine: &str, w: &Workload, bytes: usize) -> Row {
    Row {
        experiment: experiment.into(),
        variant: variant.into(),
        engine: engine.into(),
        keys: w.spec.key_count as u64,
        dataset_bytes: bytes as u64,
        load_factor: w.spec.load_factor,
        sqr: w.spec.success_query_ratio,
        distribution: w.spec.distribution.to_string(),
        seed: w.spec.seed,
        ..Row::default()
    }
}

/// Random-access tables are never checked: they drop colliding keys by design.
fn checked(v: Variant) -> bool {
    v != Variant::RandomAccess
}

pub fn run_scalar_comparison(spec: &WorkloadSpec, variants: &[Variant], reps: usize, verify_sample: usize) -> Result<RunReport, String> {
    let w = gen_workload(spec)?;
    let mut report = RunReport::default();
    for &v in variants {
        let t = AnyTable::build(v, &w)?;
        if checked(v) {
            t.verify(&w, verify_sample)?;
        }
        let tp = t.time_scalar(&w.probes, reps);
        report.push(Row {
            mops: Some(tp.mops),
            reps: tp.runs.len(),
            ..row("scalar", v.name(), "scalar", &w, t.memory_bytes())
        });
    }
    Ok(report)
}

pub fn run_ablation(spec: &WorkloadSpec, variants: &[Variant], verify_sample: usize) -> Result<RunReport, String> {
    let w = gen_workload(spec)?;
    let mut report = RunReport::default();
    for &v in variants {
        let t = AnyTable::build(v, &w)?;
        if checked(v) {
            t.verify(&w, verify_sample)?;
        }
        let stats = t.apcl(&w.probes);
        report.push(Row {
            apcl: stats.apcl(),
            note: format!("capacity={}", t.as_probe_table().capacity()),
            ..row("ablation", v.name(), "scalar", &w, t.memory_bytes())
        });
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct CrossoverSpec {
    pub sizes: Vec<u64>,
    pub load_factor: f64,
    pub sqr: f64,
    pub probe_count: usize,
    pub seed: u64,
    pub reps: usize,
    /// Interleaving depths tried for the interleaved engine.
    pub group_sizes: Vec<usize>,
    pub vector_groups: usize,
    pub include_random_access: bool,
}

impl Default for CrossoverSpec {
    fn default() -> Self {
        CrossoverSpec {
            sizes: vec![256 << 10, 2 << 20, 16 << 20, 256 << 20],
            load_factor: 0.8,
            sqr: 0.9,
            probe_count: 1 << 22,
            seed: 1,
            reps: 3,
            group_sizes: vec![8, 16, 32],
            vector_groups: nbkv_core::engine::DEFAULT_VECTOR_GROUPS,
            include_random_access: true,
        }
    }
}

/// Engine throughput for one built NeighborHash table.
pub fn engine_rows(t: &Table, w: &Workload, spec: &CrossoverSpec) -> Result<Vec<Row>, String> {
    let base = row("crossover", "neighborhash", "", w, t.memory_bytes());
    let expected = batch_lookup(t, &w.probes, &EngineConfig::new(Engine::Scalar));
    let mut configs = vec![(EngineConfig::new(Engine::Scalar), String::new())];
    for &g in &spec.group_sizes {
        configs.push((EngineConfig::new(Engine::Interleaved).with_group_size(g), format!("G={g}")));
    }
    configs.push((EngineConfig::new(Engine::Vectorized).with_vector_groups(spec.vector_groups), format!("vectors={}", spec.vector_groups)));
    configs.push((EngineConfig::new(Engine::Auto), format!("resolves={}", EngineConfig::default().resolve(t))));
    let mut rows = Vec::new();
    for (cfg, note) in configs {
        if batch_lookup(t, &w.probes, &cfg) != expected {
            return Err(format!("engine {} ({note}) disagrees with scalar", cfg.engine));
        }
        let tp = run_throughput_probe(t, &w.probes, &cfg, spec.reps);
        rows.push(Row {
            engine: cfg.engine.to_string(),
            mops: Some(tp.mops),
            reps: tp.runs.len(),
            note,
            ..base.clone()
        });
    }
    Ok(rows)
}

pub fn run_engine_crossover(spec: &CrossoverSpec) -> Result<RunReport, String> {
    let mut report = RunReport::default();
    for &bytes in &spec.sizes {
        let ws = WorkloadSpec {
            success_query_ratio: spec.sqr,
            probe_count: spec.probe_count,
            ..WorkloadSpec::for_table_bytes(bytes, spec.load_factor, spec.seed)
        };
        let w = gen_workload(&ws)?;
        {
            let t = AnyTable::build(Variant::NeighborHash, &w)?;
            t.verify(&w, w.probes.len().min(1 << 20))?;
            for r in engine_rows(t.neighborhash().expect("neighborhash table"), &w, spec)? {
                report.push(r);
            }
        }
        if spec.include_random_access {
            let t = AnyTable::build(Variant::RandomAccess, &w)?;
            let tp = t.time_scalar(&w.probes, spec.reps);
            report.push(Row {
                mops: Some(tp.mops),
                reps: tp.runs.len(),
                ..row("crossover", "random-access", "scalar", &w, t.memory_bytes())
            });
        }
    }
    Ok(report)
}

/// Best interleaved row for a dataset size.
pub fn best_interleaved(report: &RunReport, bytes: u64) -> Option<&Row> {
    report
        .rows
        .iter()
        .filter(|r| r.engine == "interleaved" && r.dataset_bytes == bytes)
        .max_by(|a, b| a.mops.unwrap_or(0.0).total_cmp(&b.mops.unwrap_or(0.0)))
}
