//! Staggered data-gathering ladder.
//!
//! A node at depth `d` listens for one slot of length `mu` starting at
//! `(d_max - d) * mu` into every cycle and may transmit in the following
//! slot, which is its parent's receive slot, so a packet climbs one level per
//! slot. Depths come from a SYNC flood sent by the root, or from the
//! gathering tree when levels are preassigned.

use crate::kernel::{EventHandle, SimTime};
use crate::mac::{
    EnqueueOutcome, Frame, FrameKind, Mac, MacCtx, NodeSetup, PayloadId, SendQueue, BROADCAST,
};
use crate::radio::RxOutcome;
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmacConfig {
    pub mu: SimTime,
    /// Idle slots appended to every cycle beyond `d_max + 2`.
    pub guard_slots: u32,
    pub preassigned_levels: bool,
    /// Flood duration; the ladder starts this long after boot.
    pub flood_window: SimTime,
    /// Backoff window, in slots, before each level announcement.
    pub flood_cw: u32,
    /// Level announcements sent by every joined node.
    pub flood_repeats: u32,
    pub cw: u32,
    pub slot: SimTime,
    /// Transmission attempts per packet within one cycle.
    pub attempts_per_cycle: u32,
    /// Attempts per packet before it is dropped.
    pub max_attempts: u32,
    pub slack: SimTime,
    pub queue_capacity: usize,
}

impl Default for DmacConfig {
    fn default() -> Self {
        DmacConfig {
            mu: SimTime::from_millis(10),
            guard_slots: 0,
            preassigned_levels: false,
            flood_window: SimTime::from_millis(500),
            flood_cw: 32,
            flood_repeats: 2,
            cw: 8,
            slot: SimTime(320),
            attempts_per_cycle: 2,
            max_attempts: 6,
            slack: SimTime(100),
            queue_capacity: 8,
        }
    }
}

impl DmacConfig {
    pub fn cycle_slots(&self, max_depth: u32) -> u64 {
        (max_depth + 2 + self.guard_slots) as u64
    }

    pub fn cycle_len(&self, max_depth: u32) -> SimTime {
        self.mu * self.cycle_slots(max_depth)
    }

    /// Offset of the receive slot of a node at `depth` within a cycle.
    pub fn rx_offset(&self, depth: u32, max_depth: u32) -> SimTime {
        let c = self.cycle_slots(max_depth) as i64;
        let k = (max_depth as i64 - depth as i64).rem_euclid(c);
        self.mu * k as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmacTimer {
    FloodTimeout,
    Rebroadcast,
    RxSlot { base: bool },
    RxEnd,
    TxSlot { base: bool },
    Contend,
    Respond,
    AckTimeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Idle,
    Contending,
    Responding,
    AwaitAck,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DmacStats {
    pub extra_rx_slots: u64,
    pub data_sent: u64,
    pub mts_sent: u64,
    pub dropped: u64,
}

#[derive(Debug)]
pub struct Dmac {
    cfg: DmacConfig,
    id: NodeId,
    max_depth: u32,
    tree_parent: Option<NodeId>,
    depth: Option<u32>,
    upstream: Option<NodeId>,
    ladder_start: Option<SimTime>,
    queue: SendQueue,
    role: Role,
    listen_until: SimTime,
    rx_slot_start: SimTime,
    rx_base: bool,
    got_data: bool,
    /// A corrupted frame arrived during the open receive slot.
    collided: bool,
    last_mts: bool,
    tx_slot_start: SimTime,
    cycle_attempts: u32,
    head_attempts: u32,
    flood_tries: u32,
    floods_sent: u32,
    pending: Option<Frame>,
    rx_end_h: Option<EventHandle>,
    contend_h: Option<EventHandle>,
    timeout_h: Option<EventHandle>,
    flood_h: Option<EventHandle>,
    stats: DmacStats,
}

impl Dmac {
    pub fn new(cfg: DmacConfig, setup: &NodeSetup) -> Self {
        let pre = cfg.preassigned_levels;
        Dmac {
            cfg,
            id: setup.id,
            max_depth: setup.max_depth,
            tree_parent: setup.parent,
            depth: pre.then_some(setup.depth),
            upstream: if pre { setup.parent } else { None },
            ladder_start: pre.then_some(SimTime::ZERO),
            queue: SendQueue::new(cfg.queue_capacity),
            role: Role::Idle,
            listen_until: SimTime::ZERO,
            rx_slot_start: SimTime::ZERO,
            rx_base: false,
            got_data: false,
            collided: false,
            last_mts: false,
            tx_slot_start: SimTime::ZERO,
            cycle_attempts: 0,
            head_attempts: 0,
            flood_tries: 0,
            floods_sent: 0,
            pending: None,
            rx_end_h: None,
            contend_h: None,
            timeout_h: None,
            flood_h: None,
            stats: DmacStats::default(),
        }
    }

    pub fn depth(&self) -> Option<u32> {
        self.depth
    }

    pub fn upstream(&self) -> Option<NodeId> {
        self.upstream
    }

    pub fn stats(&self) -> DmacStats {
        self.stats
    }

    fn is_root(&self) -> bool {
        self.tree_parent.is_none()
    }

    fn cycle(&self) -> SimTime {
        self.cfg.cycle_len(self.max_depth)
    }

    fn start_ladder(&mut self, ctx: &mut MacCtx<'_, DmacTimer>) {
        let (Some(depth), Some(t0)) = (self.depth, self.ladder_start) else {
            return;
        };
        let rx = t0 + self.cfg.rx_offset(depth, self.max_depth);
        ctx.timer_at(rx, DmacTimer::RxSlot { base: true });
        if !self.is_root() {
            ctx.timer_at(rx + self.cfg.mu, DmacTimer::TxSlot { base: true });
        }
    }

    fn sync_frame(&self, ctx: &MacCtx<'_, DmacTimer>) -> Frame {
        let air = ctx.airtime(FrameKind::Sync);
        let end = ctx.now() + air;
        let mut t0 = self.ladder_start.expect("flooding nodes know the ladder start");
        if t0 < end {
            let c = self.cycle();
            t0 = t0 + c * (end - t0).ticks().div_ceil(c.ticks());
        }
        Frame::new(FrameKind::Sync, self.id, BROADCAST, air)
            .with_depth(self.depth.expect("flooding nodes know their depth"))
            .with_sampling_offset(t0 - end)
    }

    fn rebroadcast(&mut self, ctx: &mut MacCtx<'_, DmacTimer>) {
        self.flood_h = None;
        if ctx.is_transmitting() {
            return;
        }
        if !ctx.is_awake() {
            ctx.listen();
        }
        if ctx.channel_busy() {
            if self.flood_tries < 5 {
                self.flood_tries += 1;
                let d = ctx.backoff(self.cfg.flood_cw, self.cfg.slot) + self.cfg.slot;
                self.flood_h = Some(ctx.timer_in(d, DmacTimer::Rebroadcast));
            }
            return;
        }
        let f = self.sync_frame(ctx);
        ctx.transmit(f);
    }

    fn open_rx(&mut self, ctx: &mut MacCtx<'_, DmacTimer>, base: bool) {
        let now = ctx.now();
        if !base {
            self.stats.extra_rx_slots += 1;
        }
        self.rx_slot_start = now;
        self.rx_base = base;
        self.got_data = false;
        self.collided = false;
        self.last_mts = false;
        self.listen_until = self.listen_until.max(now + self.cfg.mu);
        if !ctx.is_awake() && !ctx.is_transmitting() {
            ctx.listen();
        }
        ctx.cancel_slot(&mut self.rx_end_h);
        self.rx_end_h = Some(ctx.timer_at(now + self.cfg.mu, DmacTimer::RxEnd));
    }

    fn close_rx(&mut self, ctx: &mut MacCtx<'_, DmacTimer>) {
        self.rx_end_h = None;
        let start = self.rx_slot_start;
        // A collision means some child holds data, so it earns a retry slot too.
        let predict = (self.rx_base && self.got_data) || self.last_mts || self.collided;
        if predict {
            ctx.timer_at(start + self.cfg.mu * 3, DmacTimer::RxSlot { base: false });
        }
        if !self.rx_base && self.got_data && !self.queue.is_empty() && !self.is_root() {
            self.open_tx(ctx, false);
        }
    }

    fn open_tx(&mut self, ctx: &mut MacCtx<'_, DmacTimer>, base: bool) {
        if base {
            self.cycle_attempts = 0;
        }
        if self.queue.is_empty() || self.role != Role::Idle || self.upstream.is_none() {
            return;
        }
        self.tx_slot_start = ctx.now();
        if !ctx.is_awake() && !ctx.is_transmitting() {
            ctx.listen();
        }
        let d = ctx.backoff(self.cfg.cw, self.cfg.slot);
        self.role = Role::Contending;
        self.contend_h = Some(ctx.timer_in(d, DmacTimer::Contend));
    }

    fn contend(&mut self, ctx: &mut MacCtx<'_, DmacTimer>) {
        self.contend_h = None;
        if self.role != Role::Contending {
            return;
        }
        self.role = Role::Idle;
        if !ctx.is_awake() || ctx.channel_busy() {
            self.attempt_failed(ctx);
            return;
        }
        let head = *self.queue.front().expect("contending with data");
        let mts = self.queue.len() > 1;
        let f = Frame::new(FrameKind::Data, self.id, head.dst, ctx.airtime(FrameKind::Data))
            .with_payload(head.payload)
            .with_mts(mts);
        self.role = Role::AwaitAck;
        ctx.transmit(f);
        self.stats.data_sent += 1;
        if mts {
            self.stats.mts_sent += 1;
        }
    }

    fn attempt_failed(&mut self, ctx: &mut MacCtx<'_, DmacTimer>) {
        self.role = Role::Idle;
        self.head_attempts += 1;
        self.cycle_attempts += 1;
        if self.head_attempts >= self.cfg.max_attempts {
            if let Some(p) = self.queue.pop_front() {
                ctx.send_done(p.payload, false);
                self.stats.dropped += 1;
            }
            self.head_attempts = 0;
        }
        if self.cycle_attempts < self.cfg.attempts_per_cycle && !self.queue.is_empty() {
            ctx.timer_at(self.tx_slot_start + self.cfg.mu * 3, DmacTimer::TxSlot { base: false });
        }
    }

    fn settle(&mut self, ctx: &mut MacCtx<'_, DmacTimer>) {
        if self.role != Role::Idle || ctx.is_transmitting() || ctx.is_receiving() {
            return;
        }
        if self.flood_h.is_some() || ctx.now() < self.listen_until {
            return;
        }
        if ctx.is_awake() {
            ctx.sleep();
        }
    }
}

impl Mac for Dmac {
    type Timer = DmacTimer;

    fn boot(&mut self, ctx: &mut MacCtx<'_, DmacTimer>) {
        if self.cfg.preassigned_levels {
            self.start_ladder(ctx);
            return;
        }
        ctx.listen();
        if self.is_root() {
            self.depth = Some(0);
            self.ladder_start = Some(self.cfg.flood_window);
            self.upstream = None;
            self.start_ladder(ctx);
            // Every node must be listening before the flood begins.
            self.flood_h = Some(ctx.timer_in(self.cfg.slot, DmacTimer::Rebroadcast));
        } else {
            self.listen_until = self.cfg.flood_window;
            ctx.timer_at(self.cfg.flood_window, DmacTimer::FloodTimeout);
        }
    }

    fn send_request(&mut self, ctx: &mut MacCtx<'_, DmacTimer>, dst: NodeId, payload: PayloadId) -> EnqueueOutcome {
        // Upstream traffic follows the level tree this MAC learned.
        let dst = if Some(dst) == self.tree_parent {
            self.upstream.unwrap_or(dst)
        } else {
            dst
        };
        self.queue.enqueue(dst, payload, ctx.now())
    }

    fn frame_received(&mut self, ctx: &mut MacCtx<'_, DmacTimer>, rx: RxOutcome) {
        if matches!(rx, RxOutcome::Corrupted) && self.rx_end_h.is_some() {
            self.collided = true;
        }
        if let RxOutcome::Intact(f) = rx {
            match f.kind {
                FrameKind::Sync if self.depth.is_none() => {
                    self.depth = Some(f.depth_level + 1);
                    self.upstream = Some(f.src);
                    self.ladder_start = Some(ctx.now() + f.sampling_offset);
                    self.listen_until = ctx.now();
                    self.start_ladder(ctx);
                    let d = ctx.backoff(self.cfg.flood_cw, self.cfg.slot) + self.cfg.slot;
                    self.flood_h = Some(ctx.timer_in(d, DmacTimer::Rebroadcast));
                }
                FrameKind::Data if f.dst == self.id && self.role == Role::Idle => {
                    if let Some(p) = f.payload_id {
                        ctx.deliver(p, f.src);
                    }
                    self.got_data = true;
                    self.last_mts = f.mts_flag;
                    let ack = Frame::new(FrameKind::Ack, self.id, f.src, ctx.airtime(FrameKind::Ack));
                    self.pending = Some(ack);
                    self.role = Role::Responding;
                    let t = ctx.turnaround();
                    ctx.timer_in(t, DmacTimer::Respond);
                }
                FrameKind::Ack if f.dst == self.id && self.role == Role::AwaitAck => {
                    ctx.cancel_slot(&mut self.timeout_h);
                    self.role = Role::Idle;
                    self.head_attempts = 0;
                    if let Some(p) = self.queue.pop_front() {
                        ctx.send_done(p.payload, true);
                    }
                    if !self.queue.is_empty() {
                        ctx.timer_at(self.tx_slot_start + self.cfg.mu * 3, DmacTimer::TxSlot { base: false });
                    }
                }
                _ => {}
            }
        }
        self.settle(ctx);
    }

    fn frame_sent(&mut self, ctx: &mut MacCtx<'_, DmacTimer>, frame: &Frame) {
        match frame.kind {
            FrameKind::Data => {
                let wait = ctx.turnaround() + ctx.airtime(FrameKind::Ack) + self.cfg.slack;
                self.timeout_h = Some(ctx.timer_in(wait, DmacTimer::AckTimeout));
            }
            FrameKind::Ack => self.role = Role::Idle,
            FrameKind::Sync => {
                self.floods_sent += 1;
                if self.floods_sent < self.cfg.flood_repeats {
                    self.flood_tries = 0;
                    let d = ctx.backoff(self.cfg.flood_cw, self.cfg.slot) + self.cfg.slot;
                    self.flood_h = Some(ctx.timer_in(d, DmacTimer::Rebroadcast));
                }
            }
            _ => {}
        }
        self.settle(ctx);
    }

    fn timer(&mut self, ctx: &mut MacCtx<'_, DmacTimer>, tag: DmacTimer) {
        match tag {
            DmacTimer::FloodTimeout => {}
            DmacTimer::Rebroadcast => {
                self.rebroadcast(ctx);
                return;
            }
            DmacTimer::RxSlot { base } => {
                if base {
                    let next = ctx.now() + self.cycle();
                    ctx.timer_at(next, DmacTimer::RxSlot { base: true });
                }
                self.open_rx(ctx, base);
                return;
            }
            DmacTimer::RxEnd => self.close_rx(ctx),
            DmacTimer::TxSlot { base } => {
                if base {
                    let next = ctx.now() + self.cycle();
                    ctx.timer_at(next, DmacTimer::TxSlot { base: true });
                }
                self.open_tx(ctx, base);
            }
            DmacTimer::Contend => self.contend(ctx),
            DmacTimer::Respond => {
                if let Some(f) = self.pending.take() {
                    if !ctx.is_awake() && !ctx.is_transmitting() {
                        ctx.listen();
                    }
                    if !ctx.is_transmitting() {
                        ctx.transmit(f);
                        return;
                    }
                }
                self.role = Role::Idle;
            }
            DmacTimer::AckTimeout => {
                self.timeout_h = None;
                if self.role == Role::AwaitAck {
                    self.attempt_failed(ctx);
                }
            }
        }
        self.settle(ctx);
    }

    fn queue(&self) -> &SendQueue {
        &self.queue
    }
}
