//! Assembles and runs one simulation per (config, seed) and writes the
//! resulting rows as CSV.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ProtocolSection};
use super::HarnessError;
use crate::energy::EnergyLedger;
use crate::kernel::{KernelStats, SimTime};
use crate::mac::preamble::Lpl;
use crate::mac::sync::{Dmac, Smac};
use crate::mac::{Mac, NodeSetup};
use crate::sim::{DeliverySummary, PayloadRecord, RunOutput, RunSettings, Simulation, Trace};
use crate::workload::{
    build_gathering_tree, build_grid, generate_convergecast, generate_local_gossip, GatheringTree,
    Pattern, Topology, TrafficSpec,
};

pub const CSV_HEADER: [&str; 10] = [
    "protocol",
    "interarrival_s",
    "seed",
    "delivery_ratio",
    "avg_node_energy_mj",
    "total_energy_mj",
    "avg_latency_ms",
    "originated",
    "delivered",
    "dropped",
];

/// Outcome of one run. `delivered <= originated` and, with the in-flight
/// remainder, `delivered + dropped <= originated`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub protocol: String,
    pub interarrival_s: f64,
    pub seed: u64,
    pub delivery_ratio: f64,
    pub avg_node_energy_mj: f64,
    pub total_energy_mj: f64,
    pub avg_latency_ms: f64,
    pub originated: u64,
    pub delivered: u64,
    pub dropped: u64,
}

impl MetricsRow {
    fn fields(&self) -> [String; 10] {
        [
            self.protocol.clone(),
            self.interarrival_s.to_string(),
            self.seed.to_string(),
            self.delivery_ratio.to_string(),
            self.avg_node_energy_mj.to_string(),
            self.total_energy_mj.to_string(),
            self.avg_latency_ms.to_string(),
            self.originated.to_string(),
            self.delivered.to_string(),
            self.dropped.to_string(),
        ]
    }
}

/// One adaptive-timeout sweep row: the timeout plus the usual metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct TaRow {
    pub ta_ms: f64,
    pub metrics: MetricsRow,
}

/// Final protocol states, kept for trace-level checks.
pub enum MacSet {
    Sync(Vec<Smac>),
    Dmac(Vec<Dmac>),
    Lpl(Vec<Lpl>),
}

pub struct Outcome {
    pub row: MetricsRow,
    pub end: SimTime,
    pub summary: DeliverySummary,
    pub payloads: Vec<PayloadRecord>,
    pub ledger: EnergyLedger,
    pub kernel: KernelStats,
    pub trace: Option<Trace>,
    pub macs: MacSet,
}

struct Assembled {
    settings: RunSettings,
    topology: Topology,
    tree: GatheringTree,
    pattern: Pattern,
}

fn assemble(cfg: &ExperimentConfig, seed: u64, trace: bool) -> Result<Assembled, HarnessError> {
    let t = &cfg.topology;
    let topology =
        build_grid(t.rows, t.cols, t.spacing_m, t.range_m).map_err(|e| HarnessError::Topology(e.to_string()))?;
    let tree = build_gathering_tree(&topology, t.sink).map_err(|e| HarnessError::Topology(e.to_string()))?;
    let settings = RunSettings {
        sizes: cfg.sim.sizes(),
        turnaround: cfg.sim.turnaround(),
        power: cfg.power,
        theta_ppm: cfg.sim.theta_ppm,
        seed,
        duration: SimTime::from_secs_f64(cfg.sim.duration_s),
        trace,
    };
    Ok(Assembled {
        settings,
        topology,
        tree,
        pattern: cfg.traffic.pattern,
    })
}

fn execute<M: Mac>(
    a: &Assembled,
    cfg: &ExperimentConfig,
    make: impl FnMut(&NodeSetup) -> M,
) -> RunOutput<M> {
    let start = SimTime::from_secs_f64(cfg.traffic.start_s);
    let spec = TrafficSpec {
        pattern: a.pattern,
        interarrival: SimTime::from_secs_f64(cfg.traffic.interarrival_s),
        start,
        duration: a.settings.duration.saturating_sub(start),
        seed: a.settings.seed,
    };
    let originations = match a.pattern {
        Pattern::Convergecast => generate_convergecast(&spec, &a.tree),
        Pattern::LocalGossip => generate_local_gossip(&spec, &a.topology),
    };
    Simulation::new(&a.settings, &a.topology, &a.tree, a.pattern, originations, make).run()
}

fn package<M>(cfg: &ExperimentConfig, seed: u64, out: RunOutput<M>, wrap: fn(Vec<M>) -> MacSet) -> Outcome {
    let row = MetricsRow {
        protocol: cfg.kind().name().to_string(),
        interarrival_s: cfg.traffic.interarrival_s,
        seed,
        delivery_ratio: out.summary.delivery_ratio(),
        avg_node_energy_mj: out.avg_node_energy_mj(),
        total_energy_mj: out.total_energy_mj(),
        avg_latency_ms: out.summary.avg_latency_ms,
        originated: out.summary.originated,
        delivered: out.summary.delivered,
        dropped: out.summary.dropped,
    };
    Outcome {
        row,
        end: out.end,
        summary: out.summary,
        payloads: out.payloads,
        ledger: out.ledger,
        kernel: out.kernel,
        trace: out.trace,
        macs: wrap(out.macs),
    }
}

/// One full simulation, keeping the final protocol states and, when asked,
/// the event trace.
pub fn simulate(cfg: &ExperimentConfig, seed: u64, trace: bool) -> Result<Outcome, HarnessError> {
    cfg.validate()?;
    let a = assemble(cfg, seed, trace)?;
    let theta = cfg.sim.theta_ppm;
    Ok(match &cfg.protocol {
        ProtocolSection::Smac(p) => {
            let c = p.to_config();
            package(cfg, seed, execute(&a, cfg, |s| Smac::new(c, s)), MacSet::Sync)
        }
        ProtocolSection::Tmac(p) => {
            let (c, t) = (p.smac_part().to_config(), p.tmac_config());
            package(cfg, seed, execute(&a, cfg, |s| Smac::tmac(c, t, s)), MacSet::Sync)
        }
        ProtocolSection::Dmac(p) => {
            let c = p.to_config();
            package(cfg, seed, execute(&a, cfg, |s| Dmac::new(c, s)), MacSet::Dmac)
        }
        ProtocolSection::Bmac(p)
        | ProtocolSection::BmacPlus(p)
        | ProtocolSection::Xmac(p)
        | ProtocolSection::WiseMac(p) => {
            let variant = cfg.kind().lpl_variant().expect("preamble protocol");
            let c = p.to_config(variant, theta);
            package(cfg, seed, execute(&a, cfg, |s| Lpl::new(variant, c, s)), MacSet::Lpl)
        }
    })
}

/// One full simulation reduced to its metrics row.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<MetricsRow, HarnessError> {
    simulate(cfg, seed, false).map(|o| o.row)
}

fn require_nonempty<T>(v: &[T], what: &str) -> Result<(), HarnessError> {
    if v.is_empty() {
        Err(HarnessError::Invalid(format!("{what} must not be empty")))
    } else {
        Ok(())
    }
}

/// One row per (value, seed), value-major, in input order regardless of
/// which worker finished first.
pub fn sweep_interarrival(
    cfg: &ExperimentConfig,
    values: &[f64],
    seeds: &[u64],
) -> Result<Vec<MetricsRow>, HarnessError> {
    require_nonempty(values, "interarrival values")?;
    require_nonempty(seeds, "seeds")?;
    let configs: Vec<ExperimentConfig> = values.iter().map(|&v| cfg.with_interarrival(v)).collect();
    for c in &configs {
        c.validate()?;
    }
    let jobs: Vec<(&ExperimentConfig, u64)> =
        configs.iter().flat_map(|c| seeds.iter().map(move |&s| (c, s))).collect();
    jobs.into_par_iter().map(|(c, s)| run_experiment(c, s)).collect()
}

/// Adaptive-timeout sweep; only the adaptive-timeout protocol is accepted.
pub fn sweep_ta(cfg: &ExperimentConfig, ta_values_ms: &[f64], seeds: &[u64]) -> Result<Vec<TaRow>, HarnessError> {
    let ProtocolSection::Tmac(base) = &cfg.protocol else {
        return Err(HarnessError::Unsupported(format!(
            "timeout sweeps need protocol tmac, got {}",
            cfg.kind()
        )));
    };
    require_nonempty(ta_values_ms, "timeout values")?;
    require_nonempty(seeds, "seeds")?;
    let mut configs = Vec::with_capacity(ta_values_ms.len());
    for &ta in ta_values_ms {
        let mut p = base.clone();
        p.ta_ms = ta;
        let mut c = cfg.clone();
        c.protocol = ProtocolSection::Tmac(p);
        c.validate()?;
        configs.push((ta, c));
    }
    let jobs: Vec<(f64, &ExperimentConfig, u64)> = configs
        .iter()
        .flat_map(|(ta, c)| seeds.iter().map(move |&s| (*ta, c, s)))
        .collect();
    jobs.into_par_iter()
        .map(|(ta_ms, c, s)| run_experiment(c, s).map(|metrics| TaRow { ta_ms, metrics }))
        .collect()
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush().map_err(|e| HarnessError::Csv(e.to_string()))
}

pub fn write_ta_csv<W: Write>(rows: &[TaRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(std::iter::once("ta_ms").chain(CSV_HEADER))?;
    for r in rows {
        w.write_record(std::iter::once(r.ta_ms.to_string()).chain(r.metrics.fields()))?;
    }
    w.flush().map_err(|e| HarnessError::Csv(e.to_string()))
}
