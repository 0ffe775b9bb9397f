//! One assembled simulation: kernel, channel, a MAC instance per node and the
//! application layer that originates payloads and forwards them hop by hop.

use std::collections::{HashMap, HashSet};
use std::fmt::Debug;

use crate::energy::{EnergyLedger, PowerProfile};
use crate::kernel::{EventHandle, KernelStats, Purpose, RngStream, Scheduler, SimTime};
use crate::mac::{EnqueueOutcome, Frame, FrameKind, FrameSizes, Mac, MacCtx, NodeSetup, PayloadId};
use crate::radio::{Channel, ClockModel, RadioState, RxOutcome, StateChange, TxId};
use crate::workload::{GatheringTree, Origination, Pattern, Topology};
use crate::NodeId;

#[derive(Debug, Clone, Copy)]
pub enum Event<T> {
    TxEnd(TxId),
    /// A frame with a clean start reached an awake neighbor.
    RxStart { node: NodeId, tx: TxId },
    /// The frame `node` was locked on was aborted by its sender.
    RxAborted { node: NodeId },
    Timer { node: NodeId, tag: T },
    Originate(usize),
}

/// Messages from a MAC up to the application layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppNotice {
    Delivered {
        node: NodeId,
        from: NodeId,
        payload: PayloadId,
    },
    SendDone {
        node: NodeId,
        payload: PayloadId,
        ok: bool,
    },
}

/// Observable channel and MAC events, recorded when tracing is enabled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceEvent {
    TxStart {
        at: SimTime,
        node: NodeId,
        tx: TxId,
        frame: Frame,
    },
    TxAborted {
        at: SimTime,
        node: NodeId,
        tx: TxId,
    },
    RxEnd {
        at: SimTime,
        node: NodeId,
        tx: TxId,
        start: SimTime,
        src: NodeId,
        kind: FrameKind,
        intact: bool,
    },
    Nav {
        at: SimTime,
        node: NodeId,
        until: SimTime,
    },
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
    pub states: Vec<StateChange>,
}

/// Shared mutable state a MAC reaches through its [`MacCtx`].
pub struct World<T> {
    pub(crate) kernel: Scheduler<Event<T>>,
    pub(crate) channel: Channel,
    pub(crate) sizes: FrameSizes,
    pub(crate) turnaround: SimTime,
    pub(crate) outbox: Vec<AppNotice>,
    seed: u64,
    rngs: HashMap<(NodeId, Purpose), RngStream>,
    trace: Option<Vec<TraceEvent>>,
    tx_events: HashMap<TxId, EventHandle>,
}

impl<T: Copy + Debug> World<T> {
    pub fn now(&self) -> SimTime {
        self.kernel.now()
    }

    pub fn channel(&self) -> &Channel {
        &self.channel
    }

    pub(crate) fn rng(&mut self, node: NodeId, purpose: Purpose) -> &mut RngStream {
        let seed = self.seed;
        self.rngs
            .entry((node, purpose))
            .or_insert_with(|| RngStream::new(seed, node as u64, purpose))
    }

    pub(crate) fn record(&mut self, ev: TraceEvent) {
        if let Some(t) = self.trace.as_mut() {
            t.push(ev);
        }
    }

    fn schedule(&mut self, at: SimTime, ev: Event<T>) -> EventHandle {
        self.kernel
            .schedule(at, ev)
            .expect("channel events are never in the past")
    }

    #[track_caller]
    pub(crate) fn set_radio(&mut self, node: NodeId, state: RadioState) {
        let now = self.now();
        let (_, abort) = match self.channel.set_state(node, state, now) {
            Ok(r) => r,
            Err(e) => panic!("node {node}: {e}"),
        };
        if let Some(a) = abort {
            if let Some(h) = self.tx_events.remove(&a.tx) {
                self.kernel.cancel(h);
            }
            self.record(TraceEvent::TxAborted {
                at: now,
                node,
                tx: a.tx,
            });
            for r in a.receivers {
                self.schedule(now, Event::RxAborted { node: r });
            }
        }
    }

    #[track_caller]
    pub(crate) fn transmit(&mut self, node: NodeId, frame: Frame) -> SimTime {
        let now = self.now();
        let report = match self.channel.start_transmission(node, frame, now) {
            Ok(r) => r,
            Err(e) => panic!("node {node} transmitting {:?}: {e}", frame.kind),
        };
        let h = self.schedule(report.end, Event::TxEnd(report.tx));
        self.tx_events.insert(report.tx, h);
        for l in report.listeners {
            self.schedule(now, Event::RxStart { node: l, tx: report.tx });
        }
        self.record(TraceEvent::TxStart {
            at: now,
            node,
            tx: report.tx,
            frame,
        });
        report.end
    }
}

/// Run-wide physical and bookkeeping settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub sizes: FrameSizes,
    pub turnaround: SimTime,
    pub power: PowerProfile,
    /// Clock tolerance; each node's drift is uniform in `[-theta, +theta]`.
    pub theta_ppm: f64,
    pub seed: u64,
    pub duration: SimTime,
    pub trace: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            sizes: FrameSizes::default(),
            turnaround: SimTime::ZERO,
            power: PowerProfile::default(),
            theta_ppm: 30.0,
            seed: 1,
            duration: SimTime::from_secs(60),
            trace: false,
        }
    }
}

/// Per-node drift draws from the dedicated drift streams.
pub fn draw_clocks(seed: u64, nodes: usize, theta_ppm: f64) -> Vec<ClockModel> {
    (0..nodes)
        .map(|n| {
            let u = RngStream::new(seed, n as u64, Purpose::Drift).unit();
            ClockModel::new((2.0 * u - 1.0) * theta_ppm)
        })
        .collect()
}

/// End-to-end fate of one originated payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PayloadRecord {
    pub origin: NodeId,
    pub final_dst: NodeId,
    pub created: SimTime,
    pub delivered_at: Option<SimTime>,
    /// Copies currently held by some MAC queue.
    pub live: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DeliverySummary {
    pub originated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
    /// Mean creation-to-delivery time over delivered payloads, 0 if none.
    pub avg_latency_ms: f64,
}

impl DeliverySummary {
    /// Delivered over originated, 1.0 when nothing was originated.
    pub fn delivery_ratio(&self) -> f64 {
        if self.originated == 0 {
            1.0
        } else {
            self.delivered as f64 / self.originated as f64
        }
    }

    fn from_records(records: &[PayloadRecord]) -> Self {
        let mut s = DeliverySummary {
            originated: records.len() as u64,
            ..Default::default()
        };
        let mut latency_sum = 0u64;
        for r in records {
            match r.delivered_at {
                Some(at) => {
                    s.delivered += 1;
                    latency_sum += (at - r.created).ticks();
                }
                None if r.live == 0 => s.dropped += 1,
                None => s.in_flight += 1,
            }
        }
        if s.delivered > 0 {
            s.avg_latency_ms = latency_sum as f64 / s.delivered as f64 / 1_000.0;
        }
        s
    }
}

pub struct RunOutput<M> {
    pub end: SimTime,
    pub summary: DeliverySummary,
    pub payloads: Vec<PayloadRecord>,
    pub ledger: EnergyLedger,
    pub kernel: KernelStats,
    pub pending_events: usize,
    pub trace: Option<Trace>,
    pub macs: Vec<M>,
}

impl<M> RunOutput<M> {
    /// Mean radio energy per node in millijoules.
    pub fn avg_node_energy_mj(&self) -> f64 {
        let nodes: Vec<NodeId> = (0..self.ledger.node_count()).collect();
        self.ledger
            .fleet_average(&nodes, self.end)
            .expect("non-empty network")
    }

    pub fn total_energy_mj(&self) -> f64 {
        self.ledger.fleet_total(self.end)
    }

    pub fn node_energy_mj(&self, node: NodeId) -> f64 {
        self.ledger.total_energy(node, self.end)
    }
}

/// Application layer: originates payloads and forwards converge-cast
/// traffic along tree parents.
struct App {
    pattern: Pattern,
    parent: Vec<Option<NodeId>>,
    originations: Vec<Origination>,
    payloads: Vec<PayloadRecord>,
    seen: Vec<HashSet<PayloadId>>,
}

pub struct Simulation<M: Mac> {
    world: World<M::Timer>,
    macs: Vec<M>,
    app: App,
    duration: SimTime,
    booted: bool,
}

impl<M: Mac> Simulation<M> {
    pub fn new(
        settings: &RunSettings,
        topology: &Topology,
        tree: &GatheringTree,
        pattern: Pattern,
        originations: Vec<Origination>,
        mut make_mac: impl FnMut(&NodeSetup) -> M,
    ) -> Self {
        let n = topology.len();
        let clocks = draw_clocks(settings.seed, n, settings.theta_ppm);
        let mut channel = Channel::new(topology.neighbor_lists(), clocks, settings.power);
        if settings.trace {
            channel.enable_log();
        }
        let max_depth = tree.max_depth();
        let macs = (0..n)
            .map(|id| {
                make_mac(&NodeSetup {
                    id,
                    neighbors: topology.neighbors(id).to_vec(),
                    parent: tree.parent[id],
                    depth: tree.depth[id],
                    max_depth,
                    pattern,
                })
            })
            .collect();
        Simulation {
            world: World {
                kernel: Scheduler::new(),
                channel,
                sizes: settings.sizes,
                turnaround: settings.turnaround,
                outbox: Vec::new(),
                seed: settings.seed,
                rngs: HashMap::new(),
                trace: settings.trace.then(Vec::new),
                tx_events: HashMap::new(),
            },
            macs,
            app: App {
                pattern,
                parent: tree.parent.clone(),
                originations,
                payloads: Vec::new(),
                seen: vec![HashSet::new(); n],
            },
            duration: settings.duration,
            booted: false,
        }
    }

    pub fn now(&self) -> SimTime {
        self.world.now()
    }

    pub fn world(&self) -> &World<M::Timer> {
        &self.world
    }

    pub fn macs(&self) -> &[M] {
        &self.macs
    }

    pub fn payloads(&self) -> &[PayloadRecord] {
        &self.app.payloads
    }

    fn boot(&mut self) {
        self.booted = true;
        for i in 0..self.app.originations.len() {
            let at = self.app.originations[i].at;
            self.world
                .kernel
                .schedule(at, Event::Originate(i))
                .expect("originations are scheduled from time zero");
        }
        for node in 0..self.macs.len() {
            let mut ctx = MacCtx::new(node, &mut self.world);
            self.macs[node].boot(&mut ctx);
            self.drain_outbox();
        }
    }

    /// Processes every event up to and including `t_end` (capped at the run
    /// duration).
    pub fn run_until(&mut self, t_end: SimTime) {
        if !self.booted {
            self.boot();
        }
        let t_end = t_end.min(self.duration);
        while let Some((_, ev)) = self.world.kernel.pop_due(t_end) {
            self.dispatch(ev);
            self.drain_outbox();
        }
        self.world
            .kernel
            .advance_to(t_end)
            .expect("run_until never moves backwards");
    }

    pub fn run(mut self) -> RunOutput<M> {
        self.run_until(self.duration);
        self.finish()
    }

    pub fn finish(mut self) -> RunOutput<M> {
        let end = self.world.now();
        let trace = self.world.trace.take().map(|events| Trace {
            events,
            states: self.world.channel.take_log().unwrap_or_default(),
        });
        RunOutput {
            end,
            summary: DeliverySummary::from_records(&self.app.payloads),
            payloads: self.app.payloads,
            ledger: self.world.channel.ledger().clone(),
            kernel: self.world.kernel.stats(),
            pending_events: self.world.kernel.pending_len(),
            trace,
            macs: self.macs,
        }
    }

    fn dispatch(&mut self, ev: Event<M::Timer>) {
        match ev {
            Event::TxEnd(tx) => {
                self.world.tx_events.remove(&tx);
                let now = self.world.now();
                let report = self
                    .world
                    .channel
                    .end_transmission(tx, now)
                    .expect("scheduled end of a live transmission");
                for &(node, outcome) in &report.deliveries {
                    self.world.record(TraceEvent::RxEnd {
                        at: now,
                        node,
                        tx,
                        start: report.start,
                        src: report.sender,
                        kind: report.frame.kind,
                        intact: matches!(outcome, RxOutcome::Intact(_)),
                    });
                }
                let mut ctx = MacCtx::new(report.sender, &mut self.world);
                self.macs[report.sender].frame_sent(&mut ctx, &report.frame);
                for (node, outcome) in report.deliveries {
                    let mut ctx = MacCtx::new(node, &mut self.world);
                    self.macs[node].frame_received(&mut ctx, outcome);
                }
            }
            Event::RxStart { node, tx } => {
                if self.world.channel.is_receiving_clean(node, tx) {
                    let frame = self
                        .world
                        .channel
                        .transmission(tx)
                        .expect("clean reception of a live frame")
                        .frame;
                    let mut ctx = MacCtx::new(node, &mut self.world);
                    self.macs[node].frame_start(&mut ctx, &frame);
                }
            }
            Event::RxAborted { node } => {
                let mut ctx = MacCtx::new(node, &mut self.world);
                self.macs[node].frame_received(&mut ctx, RxOutcome::Corrupted);
            }
            Event::Timer { node, tag } => {
                let mut ctx = MacCtx::new(node, &mut self.world);
                self.macs[node].timer(&mut ctx, tag);
            }
            Event::Originate(i) => self.originate(i),
        }
    }

    fn originate(&mut self, i: usize) {
        let o = self.app.originations[i];
        let payload = self.app.payloads.len() as PayloadId;
        let now = self.world.now();
        self.app.payloads.push(PayloadRecord {
            origin: o.node,
            final_dst: o.final_dst,
            created: now,
            delivered_at: None,
            live: 0,
        });
        self.app.seen[o.node].insert(payload);
        self.hand_down(o.node, o.next_hop, payload);
    }

    fn hand_down(&mut self, node: NodeId, dst: NodeId, payload: PayloadId) {
        let mut ctx = MacCtx::new(node, &mut self.world);
        if self.macs[node].send_request(&mut ctx, dst, payload) == EnqueueOutcome::Queued {
            self.app.payloads[payload as usize].live += 1;
        }
    }

    fn drain_outbox(&mut self) {
        loop {
            let notices = std::mem::take(&mut self.world.outbox);
            if notices.is_empty() {
                return;
            }
            for n in notices {
                self.handle_notice(n);
            }
        }
    }

    fn handle_notice(&mut self, notice: AppNotice) {
        match notice {
            AppNotice::SendDone { payload, .. } => {
                let rec = &mut self.app.payloads[payload as usize];
                rec.live = rec.live.saturating_sub(1);
            }
            AppNotice::Delivered { node, payload, .. } => {
                if !self.app.seen[node].insert(payload) {
                    return;
                }
                let now = self.world.now();
                let rec = &mut self.app.payloads[payload as usize];
                if rec.final_dst == node {
                    rec.delivered_at.get_or_insert(now);
                    return;
                }
                if self.app.pattern == Pattern::Convergecast {
                    if let Some(parent) = self.app.parent[node] {
                        self.hand_down(node, parent, payload);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(created: u64, delivered_at: Option<u64>, live: u32) -> PayloadRecord {
        PayloadRecord {
            origin: 1,
            final_dst: 0,
            created: SimTime(created),
            delivered_at: delivered_at.map(SimTime),
            live,
        }
    }

    #[test]
    fn summary_splits_delivered_dropped_and_queued() {
        let s = DeliverySummary::from_records(&[
            record(0, Some(4_000), 0),
            record(1_000, Some(3_000), 1),
            record(0, None, 0),
            record(0, None, 2),
        ]);
        assert_eq!((s.originated, s.delivered, s.dropped, s.in_flight), (4, 2, 1, 1));
        assert_eq!(s.avg_latency_ms, 3.0);
        assert_eq!(s.delivery_ratio(), 0.5);
    }

    #[test]
    fn empty_run_is_vacuously_complete() {
        let s = DeliverySummary::from_records(&[]);
        assert_eq!(s.delivery_ratio(), 1.0);
        assert_eq!(s.avg_latency_ms, 0.0);
    }

    #[test]
    fn clock_drifts_stay_within_tolerance_and_repeat() {
        let a = draw_clocks(9, 50, 30.0);
        assert!(a.iter().all(|c| c.drift_ppm.abs() <= 30.0));
        assert!(a.iter().any(|c| c.drift_ppm > 0.0) && a.iter().any(|c| c.drift_ppm < 0.0));
        let b = draw_clocks(9, 50, 30.0);
        assert!(a.iter().zip(&b).all(|(x, y)| x.drift_ppm == y.drift_ppm));
        assert!(draw_clocks(9, 5, 0.0).iter().all(|c| c.drift_ppm == 0.0));
    }
}
