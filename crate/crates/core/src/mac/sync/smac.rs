//! Fixed duty-cycle frames with virtual clusters, and the adaptive-timeout
//! variant that ends the active period after an idle interval.
//!
//! Each frame opens with an active period whose first part carries SYNC
//! frames; unicast data uses RTS/CTS/DATA/ACK with NAV-based overhearing
//! avoidance. With a [`TmacConfig`] the active period instead lasts until
//! `ta` passes without activity, and data may contend from the frame start.

use std::collections::HashMap;

use log::warn;

use super::SleepSchedule;
use crate::kernel::{EventHandle, Purpose, SimTime};
use crate::mac::{
    EnqueueOutcome, Frame, FrameKind, FrameSizes, Mac, MacCtx, NavTimer, NodeSetup, PayloadId,
    SendQueue, BROADCAST,
};
use crate::radio::RxOutcome;
use crate::workload::Pattern;
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmacConfig {
    pub frame_len: SimTime,
    pub active_len: SimTime,
    /// Leading part of each active period reserved for SYNC frames.
    pub sync_len: SimTime,
    /// Each node re-broadcasts its schedule once per this many frames.
    pub sync_every: u32,
    /// A booting node listens for up to this long before creating a schedule.
    pub boot_listen: SimTime,
    pub cw: u32,
    pub slot: SimTime,
    pub retries: u32,
    /// Allowance added to response timeouts.
    pub slack: SimTime,
    pub queue_capacity: usize,
}

impl Default for SmacConfig {
    fn default() -> Self {
        SmacConfig {
            frame_len: SimTime::from_millis(1_000),
            active_len: SimTime::from_millis(100),
            sync_len: SimTime::from_millis(30),
            sync_every: 10,
            boot_listen: SimTime::from_millis(2_000),
            cw: 16,
            slot: SimTime(320),
            retries: 3,
            slack: SimTime(100),
            queue_capacity: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TmacConfig {
    /// Activity timeout.
    pub ta: SimTime,
    pub frts: bool,
    /// Answer an RTS with an own RTS while the send queue is full.
    /// Only effective for converge-cast traffic.
    pub full_buffer_priority: bool,
    /// Failed RTS attempts tolerated per frame before deferring the packet
    /// to the next frame, when the receiver has likely gone back to sleep.
    pub rts_per_frame: u32,
}

impl Default for TmacConfig {
    fn default() -> Self {
        TmacConfig {
            ta: SimTime::from_millis(15),
            frts: true,
            full_buffer_priority: true,
            rts_per_frame: 3,
        }
    }
}

/// 1.5 x (contention window + RTS airtime + turnaround).
pub fn suggested_ta(cw: u32, slot: SimTime, sizes: &FrameSizes, turnaround: SimTime) -> SimTime {
    let base = slot * cw as u64 + sizes.airtime(FrameKind::Rts) + turnaround;
    SimTime(base.ticks() * 3 / 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncTimer {
    BootTimeout,
    FrameStart(usize),
    WindowEnd,
    SendSync,
    Contend,
    Respond,
    Timeout,
    NavEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Idle,
    Contending,
    /// A response or reservation frame is armed on the `Respond` timer.
    Responding,
    SendingSync,
    AwaitCts { dst: NodeId },
    AwaitData { src: NodeId },
    AwaitAck { dst: NodeId },
}

/// Schedule-following CSMA MAC with virtual clusters. The adaptive-timeout
/// variant is selected by constructing with [`Smac::tmac`].
#[derive(Debug)]
pub struct Smac {
    cfg: SmacConfig,
    tmac: Option<TmacConfig>,
    id: NodeId,
    pattern: Pattern,
    queue: SendQueue,
    nav: NavTimer,
    role: Role,
    booting: bool,
    schedules: Vec<SleepSchedule>,
    neighbor_schedules: HashMap<NodeId, SleepSchedule>,
    /// Radio stays on at least until this instant.
    awake_until: SimTime,
    /// Data contention may start from this instant in the current window.
    data_from: SimTime,
    frames: u64,
    sync_phase: u64,
    sync_retries: u32,
    attempts: u32,
    /// Failed exchanges since the current frame began.
    frame_failures: u32,
    pending: Option<Frame>,
    /// NAV to apply once a pending FRTS has gone out.
    nav_after: Option<SimTime>,
    /// Sender of an RTS deferred by full-buffer priority.
    held_rts: Option<NodeId>,
    contend_h: Option<EventHandle>,
    respond_h: Option<EventHandle>,
    timeout_h: Option<EventHandle>,
    window_h: Option<EventHandle>,
    nav_h: Option<EventHandle>,
    boot_h: Option<EventHandle>,
    sync_h: Option<EventHandle>,
    stats: SmacStats,
}

/// Counters useful for tests and diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SmacStats {
    pub syncs_sent: u64,
    pub rts_sent: u64,
    pub frts_sent: u64,
    pub priority_rts: u64,
    pub delivered_ok: u64,
    pub failed: u64,
}

impl Smac {
    pub fn new(cfg: SmacConfig, setup: &NodeSetup) -> Self {
        Smac {
            cfg,
            tmac: None,
            id: setup.id,
            pattern: setup.pattern,
            queue: SendQueue::new(cfg.queue_capacity),
            nav: NavTimer::default(),
            role: Role::Idle,
            booting: true,
            schedules: Vec::new(),
            neighbor_schedules: HashMap::new(),
            awake_until: SimTime::ZERO,
            data_from: SimTime::ZERO,
            frames: 0,
            sync_phase: 0,
            sync_retries: 0,
            attempts: 0,
            frame_failures: 0,
            pending: None,
            nav_after: None,
            held_rts: None,
            contend_h: None,
            respond_h: None,
            timeout_h: None,
            window_h: None,
            nav_h: None,
            boot_h: None,
            sync_h: None,
            stats: SmacStats::default(),
        }
    }

    pub fn tmac(cfg: SmacConfig, tmac: TmacConfig, setup: &NodeSetup) -> Self {
        let min_ta = cfg.slot * cfg.cw as u64 + SimTime(384) * 2;
        if tmac.ta < min_ta && setup.id == 0 {
            warn!(
                "ta {} below contention window + RTS + CTS ({}); expect early sleeping",
                tmac.ta, min_ta
            );
        }
        Smac {
            tmac: Some(tmac),
            ..Smac::new(cfg, setup)
        }
    }

    pub fn schedules(&self) -> &[SleepSchedule] {
        &self.schedules
    }

    pub fn is_border(&self) -> bool {
        self.schedules.len() > 1
    }

    pub fn nav(&self) -> NavTimer {
        self.nav
    }

    pub fn stats(&self) -> SmacStats {
        self.stats
    }

    fn adaptive(&self) -> bool {
        self.tmac.is_some()
    }

    fn frts_enabled(&self) -> bool {
        self.tmac.is_some_and(|t| t.frts)
    }

    fn priority_enabled(&self) -> bool {
        self.pattern == Pattern::Convergecast && self.tmac.is_some_and(|t| t.full_buffer_priority)
    }

    fn schedule_of(&self, phase: SimTime) -> SleepSchedule {
        SleepSchedule::new(self.cfg.frame_len, self.cfg.active_len, phase)
    }

    fn engaged(&self) -> bool {
        !matches!(self.role, Role::Idle | Role::Contending)
    }

    /// Activity keeps an adaptive node awake for another `ta`.
    fn touch(&mut self, ctx: &mut MacCtx<'_, SyncTimer>) {
        if let Some(t) = self.tmac {
            if !self.booting {
                self.extend_awake(ctx, ctx.now() + t.ta);
            }
        }
    }

    fn extend_awake(&mut self, ctx: &mut MacCtx<'_, SyncTimer>, until: SimTime) {
        if until > self.awake_until {
            self.awake_until = until;
        }
        if self.window_h.is_none() {
            self.window_h = Some(ctx.timer_at(self.awake_until, SyncTimer::WindowEnd));
        }
    }

    fn frts_slot(&self, ctx: &MacCtx<'_, SyncTimer>) -> SimTime {
        if self.frts_enabled() {
            ctx.turnaround() + ctx.airtime(FrameKind::Frts)
        } else {
            SimTime::ZERO
        }
    }

    /// Time from the end of a CTS to the end of the ACK.
    fn after_cts(&self, ctx: &MacCtx<'_, SyncTimer>) -> SimTime {
        let t = ctx.turnaround();
        self.frts_slot(ctx) + t + ctx.airtime(FrameKind::Data) + t + ctx.airtime(FrameKind::Ack)
    }

    fn after_rts(&self, ctx: &MacCtx<'_, SyncTimer>) -> SimTime {
        ctx.turnaround() + ctx.airtime(FrameKind::Cts) + self.after_cts(ctx)
    }

    fn arm_response(&mut self, ctx: &mut MacCtx<'_, SyncTimer>, delay: SimTime, frame: Frame) {
        ctx.cancel_slot(&mut self.contend_h);
        ctx.cancel_slot(&mut self.respond_h);
        self.pending = Some(frame);
        self.role = Role::Responding;
        self.respond_h = Some(ctx.timer_in(delay, SyncTimer::Respond));
    }

    fn arm_timeout(&mut self, ctx: &mut MacCtx<'_, SyncTimer>, wait: SimTime) {
        ctx.cancel_slot(&mut self.timeout_h);
        let at = wait + self.cfg.slack;
        self.timeout_h = Some(ctx.timer_in(at, SyncTimer::Timeout));
    }

    fn apply_nav(&mut self, ctx: &mut MacCtx<'_, SyncTimer>, until: SimTime) {
        let now = ctx.now();
        if until > now && self.nav.set(now, until - now) {
            ctx.note_nav(self.nav.until);
        }
    }

    // --- schedule maintenance -------------------------------------------

    fn adopt(&mut self, ctx: &mut MacCtx<'_, SyncTimer>, sched: SleepSchedule) {
        let k = self.schedules.len();
        self.schedules.push(sched);
        let now = ctx.now();
        if let Some(start) = sched.last_start(now) {
            if now - start < self.cfg.active_len {
                self.open_window(ctx, start);
            }
        }
        let next = sched.next_start(now + SimTime(1));
        ctx.timer_at(next, SyncTimer::FrameStart(k));
    }

    fn open_window(&mut self, ctx: &mut MacCtx<'_, SyncTimer>, start: SimTime) {
        match self.tmac {
            Some(t) => {
                self.data_from = start;
                self.extend_awake(ctx, (start + t.ta).max(ctx.now()));
            }
            None => {
                self.data_from = start + self.cfg.sync_len;
                self.extend_awake(ctx, start + self.cfg.active_len);
            }
        }
    }

    fn frame_begins(&mut self, ctx: &mut MacCtx<'_, SyncTimer>, k: usize) {
        let now = ctx.now();
        let sched = self.schedules[k];
        ctx.timer_at(now + sched.frame_len, SyncTimer::FrameStart(k));
        if !ctx.is_awake() && !ctx.is_transmitting() && !self.nav.active(now) {
            ctx.listen();
        }
        self.frame_failures = 0;
        self.open_window(ctx, now);
        if k == 0 {
            self.frames += 1;
            if self.frames % self.cfg.sync_every as u64 == self.sync_phase {
                self.sync_retries = 0;
                self.arm_sync(ctx);
            }
        }
    }

    fn sync_jitter(&mut self, ctx: &mut MacCtx<'_, SyncTimer>) -> SimTime {
        let span = match self.tmac {
            Some(_) => self.cfg.slot * self.cfg.cw as u64,
            None => self.cfg.sync_len.saturating_sub(ctx.airtime(FrameKind::Sync)),
        };
        SimTime(ctx.rng(Purpose::Jitter).draw(span.ticks().max(1)).expect("span >= 1"))
    }

    fn arm_sync(&mut self, ctx: &mut MacCtx<'_, SyncTimer>) {
        ctx.cancel_slot(&mut self.sync_h);
        let d = self.sync_jitter(ctx);
        self.sync_h = Some(ctx.timer_in(d, SyncTimer::SendSync));
    }

    fn send_sync(&mut self, ctx: &mut MacCtx<'_, SyncTimer>) {
        self.sync_h = None;
        let now = ctx.now();
        let blocked = self.engaged() || !ctx.is_awake() || self.nav.active(now);
        if blocked || ctx.channel_busy() {
            if ctx.is_awake() {
                self.touch(ctx);
            }
            if self.sync_retries < 3 {
                self.sync_retries += 1;
                self.arm_sync(ctx);
            }
            return;
        }
        let Some(primary) = self.schedules.first().copied() else {
            return;
        };
        ctx.cancel_slot(&mut self.contend_h);
        let air = ctx.airtime(FrameKind::Sync);
        let end = now + air;
        let offset = primary.next_start(end) - end;
        self.role = Role::SendingSync;
        ctx.transmit(Frame::new(FrameKind::Sync, self.id, BROADCAST, air).with_sampling_offset(offset));
        self.stats.syncs_sent += 1;
    }

    fn handle_sync(&mut self, ctx: &mut MacCtx<'_, SyncTimer>, f: &Frame) {
        let next = ctx.now() + f.sampling_offset;
        let sched = self.schedule_of(next);
        self.neighbor_schedules.insert(f.src, sched);
        if self.booting {
            self.booting = false;
            ctx.cancel_slot(&mut self.boot_h);
            self.sync_phase = ctx.rng(Purpose::Jitter).draw(self.cfg.sync_every as u64).expect(">= 1");
            self.adopt(ctx, sched);
            self.touch(ctx);
            self.sync_retries = 0;
            self.arm_sync(ctx);
            return;
        }
        let tol = SimTime(50);
        if !self.schedules.iter().any(|s| s.same_as(&sched, tol)) {
            self.adopt(ctx, sched);
        }
    }

    // --- data path --------------------------------------------------------

    fn in_window(&self, now: SimTime) -> bool {
        !self.booting && now < self.awake_until
    }

    /// Whether `dst` is expected awake now.
    fn peer_awake(&self, dst: NodeId, now: SimTime) -> bool {
        if dst == BROADCAST {
            return true;
        }
        match self.neighbor_schedules.get(&dst) {
            Some(s) if !self.adaptive() => s.is_active(now + self.cfg.slot * self.cfg.cw as u64),
            _ => true,
        }
    }

    fn try_contend(&mut self, ctx: &mut MacCtx<'_, SyncTimer>) {
        let now = ctx.now();
        if self.role != Role::Idle
            || self.queue.is_empty()
            || !self.in_window(now)
            || self.nav.active(now)
            || !ctx.is_awake()
        {
            return;
        }
        if self.tmac.is_some_and(|t| self.frame_failures >= t.rts_per_frame) {
            return;
        }
        let dst = self.queue.front().expect("non-empty").dst;
        let start = self.data_from.max(now);
        if !self.peer_awake(dst, start) {
            return;
        }
        let delay = start - now + ctx.backoff(self.cfg.cw, self.cfg.slot);
        self.role = Role::Contending;
        self.contend_h = Some(ctx.timer_in(delay, SyncTimer::Contend));
    }

    fn contend_fired(&mut self, ctx: &mut MacCtx<'_, SyncTimer>) {
        self.contend_h = None;
        if self.role != Role::Contending {
            return;
        }
        self.role = Role::Idle;
        let now = ctx.now();
        if self.nav.active(now) || !ctx.is_awake() || self.queue.is_empty() {
            return;
        }
        if ctx.channel_busy() {
            self.touch(ctx);
            return;
        }
        let head = *self.queue.front().expect("non-empty");
        if head.dst == BROADCAST {
            let air = ctx.airtime(FrameKind::Data);
            self.role = Role::Responding;
            ctx.transmit(Frame::new(FrameKind::Data, self.id, BROADCAST, air).with_payload(head.payload));
            return;
        }
        self.send_rts(ctx, head.dst);
    }

    fn send_rts(&mut self, ctx: &mut MacCtx<'_, SyncTimer>, dst: NodeId) {
        let air = ctx.airtime(FrameKind::Rts);
        let dur = self.after_rts(ctx);
        self.role = Role::AwaitCts { dst };
        ctx.transmit(Frame::new(FrameKind::Rts, self.id, dst, air).with_duration(dur));
        self.stats.rts_sent += 1;
    }

    fn cts_frame(&self, ctx: &MacCtx<'_, SyncTimer>, to: NodeId) -> Frame {
        Frame::new(FrameKind::Cts, self.id, to, ctx.airtime(FrameKind::Cts))
            .with_duration(self.after_cts(ctx))
    }

    fn data_frame(&self, ctx: &MacCtx<'_, SyncTimer>) -> Frame {
        let head = self.queue.front().expect("data follows a queued packet");
        Frame::new(FrameKind::Data, self.id, head.dst, ctx.airtime(FrameKind::Data)).with_payload(head.payload)
    }

    fn finish_head(&mut self, ctx: &mut MacCtx<'_, SyncTimer>, ok: bool) {
        if let Some(p) = self.queue.pop_front() {
            ctx.send_done(p.payload, ok);
        }
        if ok {
            self.stats.delivered_ok += 1;
        } else {
            self.stats.failed += 1;
        }
        self.attempts = 0;
    }

    /// Sender side bookkeeping once an exchange ends, either way.
    fn exchange_over(&mut self, ctx: &mut MacCtx<'_, SyncTimer>) {
        self.role = Role::Idle;
        if let Some(src) = self.held_rts.take() {
            if !self.nav.active(ctx.now()) && ctx.is_awake() {
                let cts = self.cts_frame(ctx, src);
                let t = ctx.turnaround();
                self.arm_response(ctx, t, cts);
            }
        }
    }

    fn exchange_failed(&mut self, ctx: &mut MacCtx<'_, SyncTimer>) {
        self.attempts += 1;
        self.frame_failures += 1;
        if self.attempts > self.cfg.retries {
            self.finish_head(ctx, false);
        }
        self.exchange_over(ctx);
    }

    /// Sleeps when nothing keeps the radio on, otherwise tries to send.
    fn settle(&mut self, ctx: &mut MacCtx<'_, SyncTimer>) {
        if self.engaged() || ctx.is_transmitting() || self.booting {
            return;
        }
        let now = ctx.now();
        if self.nav.active(now) {
            if self.role == Role::Contending {
                ctx.cancel_slot(&mut self.contend_h);
                self.role = Role::Idle;
            }
            if ctx.is_awake() && !ctx.is_receiving() {
                ctx.sleep();
            }
            if self.nav_h.is_none() {
                self.nav_h = Some(ctx.timer_at(self.nav.until, SyncTimer::NavEnd));
            }
            return;
        }
        if now >= self.awake_until {
            if ctx.is_receiving() {
                return;
            }
            if self.role == Role::Contending {
                ctx.cancel_slot(&mut self.contend_h);
                self.role = Role::Idle;
            }
            if ctx.is_awake() {
                ctx.sleep();
            }
            return;
        }
        if !ctx.is_awake() {
            ctx.listen();
        }
        self.try_contend(ctx);
    }

    fn on_intact(&mut self, ctx: &mut MacCtx<'_, SyncTimer>, f: Frame) {
        let me = self.id;
        let now = ctx.now();
        if self.booting {
            if f.kind == FrameKind::Sync {
                self.handle_sync(ctx, &f);
            }
            return;
        }
        match f.kind {
            FrameKind::Sync => self.handle_sync(ctx, &f),
            FrameKind::Rts if f.dst == me => {
                if self.engaged() || self.nav.active(now) {
                    return;
                }
                let t = ctx.turnaround();
                if self.priority_enabled() && self.queue.is_full() && self.held_rts.is_none() {
                    self.held_rts = Some(f.src);
                    let dst = self.queue.front().expect("full queue").dst;
                    let rts = Frame::new(FrameKind::Rts, me, dst, ctx.airtime(FrameKind::Rts))
                        .with_duration(self.after_rts(ctx));
                    self.arm_response(ctx, t, rts);
                    self.stats.priority_rts += 1;
                } else {
                    let cts = self.cts_frame(ctx, f.src);
                    self.arm_response(ctx, t, cts);
                }
            }
            FrameKind::Cts if f.dst == me => {
                let expected = match self.role {
                    Role::AwaitCts { dst } => dst == f.src,
                    Role::Idle | Role::Contending => {
                        self.queue.front().is_some_and(|h| h.dst == f.src) && !self.nav.active(now)
                    }
                    _ => false,
                };
                if expected {
                    ctx.cancel_slot(&mut self.timeout_h);
                    let delay = ctx.turnaround() + self.frts_slot(ctx);
                    let data = self.data_frame(ctx);
                    self.arm_response(ctx, delay, data);
                }
            }
            FrameKind::Frts if f.dst == me => {
                if !self.engaged() {
                    self.apply_nav(ctx, now + f.duration_field);
                }
            }
            FrameKind::Cts if self.frts_enabled() && !self.engaged() && !self.queue.is_empty() => {
                let dst = self.queue.front().expect("non-empty").dst;
                let t = ctx.turnaround();
                let air = ctx.airtime(FrameKind::Frts);
                let remaining = f.duration_field.saturating_sub(t + air);
                self.nav_after = Some(now + f.duration_field);
                let frts = Frame::new(FrameKind::Frts, me, dst, air).with_duration(remaining);
                self.arm_response(ctx, t, frts);
            }
            FrameKind::Rts | FrameKind::Cts | FrameKind::Frts => {
                self.apply_nav(ctx, now + f.duration_field);
            }
            FrameKind::Data if f.is_for(me) => {
                if let Some(p) = f.payload_id {
                    ctx.deliver(p, f.src);
                }
                if f.is_broadcast() {
                    return;
                }
                let can_ack = match self.role {
                    Role::AwaitData { src } => src == f.src,
                    Role::Idle | Role::Contending => true,
                    _ => false,
                };
                if can_ack {
                    ctx.cancel_slot(&mut self.timeout_h);
                    let ack = Frame::new(FrameKind::Ack, me, f.src, ctx.airtime(FrameKind::Ack));
                    let t = ctx.turnaround();
                    self.arm_response(ctx, t, ack);
                }
            }
            FrameKind::Ack if f.dst == me && self.role == (Role::AwaitAck { dst: f.src }) => {
                ctx.cancel_slot(&mut self.timeout_h);
                self.finish_head(ctx, true);
                self.exchange_over(ctx);
            }
            _ => {}
        }
    }
}

impl Mac for Smac {
    type Timer = SyncTimer;

    fn boot(&mut self, ctx: &mut MacCtx<'_, SyncTimer>) {
        ctx.listen();
        let wait = ctx.rng(Purpose::Jitter).draw(self.cfg.boot_listen.ticks().max(1)).expect(">= 1");
        self.boot_h = Some(ctx.timer_in(SimTime(wait), SyncTimer::BootTimeout));
    }

    fn send_request(&mut self, ctx: &mut MacCtx<'_, SyncTimer>, dst: NodeId, payload: PayloadId) -> EnqueueOutcome {
        let out = self.queue.enqueue(dst, payload, ctx.now());
        if out == EnqueueOutcome::Queued && ctx.is_awake() && !self.booting {
            self.touch(ctx);
            self.try_contend(ctx);
        }
        out
    }

    fn frame_start(&mut self, ctx: &mut MacCtx<'_, SyncTimer>, _frame: &Frame) {
        self.touch(ctx);
        if self.role == Role::Contending {
            ctx.cancel_slot(&mut self.contend_h);
            self.role = Role::Idle;
        }
    }

    fn frame_received(&mut self, ctx: &mut MacCtx<'_, SyncTimer>, rx: RxOutcome) {
        self.touch(ctx);
        if let RxOutcome::Intact(f) = rx {
            self.on_intact(ctx, f);
        }
        self.settle(ctx);
    }

    fn frame_sent(&mut self, ctx: &mut MacCtx<'_, SyncTimer>, frame: &Frame) {
        self.touch(ctx);
        let t = ctx.turnaround();
        match frame.kind {
            FrameKind::Sync => self.role = Role::Idle,
            FrameKind::Rts => {
                if let Role::AwaitCts { .. } = self.role {
                } else {
                    self.role = Role::AwaitCts { dst: frame.dst };
                }
                let wait = t + ctx.airtime(FrameKind::Cts);
                self.arm_timeout(ctx, wait);
            }
            FrameKind::Cts => {
                self.role = Role::AwaitData { src: frame.dst };
                let wait = self.frts_slot(ctx) + t + ctx.airtime(FrameKind::Data);
                self.arm_timeout(ctx, wait);
            }
            FrameKind::Data if frame.is_broadcast() => {
                self.finish_head(ctx, true);
                self.role = Role::Idle;
            }
            FrameKind::Data => {
                self.role = Role::AwaitAck { dst: frame.dst };
                let wait = t + ctx.airtime(FrameKind::Ack);
                self.arm_timeout(ctx, wait);
            }
            FrameKind::Ack => self.role = Role::Idle,
            FrameKind::Frts => {
                self.role = Role::Idle;
                if let Some(until) = self.nav_after.take() {
                    self.apply_nav(ctx, until);
                }
                self.stats.frts_sent += 1;
            }
            _ => {}
        }
        self.settle(ctx);
    }

    fn timer(&mut self, ctx: &mut MacCtx<'_, SyncTimer>, tag: SyncTimer) {
        match tag {
            SyncTimer::BootTimeout => {
                self.boot_h = None;
                if self.booting {
                    self.booting = false;
                    self.sync_phase = ctx.rng(Purpose::Jitter).draw(self.cfg.sync_every as u64).expect(">= 1");
                    let now = ctx.now();
                    let sched = self.schedule_of(now);
                    self.schedules.push(sched);
                    ctx.timer_at(now + sched.frame_len, SyncTimer::FrameStart(0));
                    self.open_window(ctx, now);
                    self.sync_retries = 0;
                    self.arm_sync(ctx);
                }
            }
            SyncTimer::FrameStart(k) => self.frame_begins(ctx, k),
            SyncTimer::WindowEnd => {
                self.window_h = None;
                if ctx.now() < self.awake_until {
                    self.window_h = Some(ctx.timer_at(self.awake_until, SyncTimer::WindowEnd));
                    return;
                }
            }
            SyncTimer::SendSync => {
                self.send_sync(ctx);
                return;
            }
            SyncTimer::Contend => {
                self.contend_fired(ctx);
                if ctx.is_transmitting() {
                    return;
                }
            }
            SyncTimer::Respond => {
                self.respond_h = None;
                if let Some(f) = self.pending.take() {
                    let initiates = matches!(f.kind, FrameKind::Rts | FrameKind::Frts);
                    if initiates && self.nav.active(ctx.now()) {
                        self.role = Role::Idle;
                        self.nav_after = None;
                    } else {
                        if f.kind == FrameKind::Rts {
                            self.role = Role::AwaitCts { dst: f.dst };
                            self.stats.rts_sent += 1;
                        }
                        if !ctx.is_awake() && !ctx.is_transmitting() {
                            ctx.listen();
                        }
                        ctx.transmit(f);
                        return;
                    }
                }
            }
            SyncTimer::Timeout => {
                self.timeout_h = None;
                match self.role {
                    Role::AwaitCts { .. } | Role::AwaitAck { .. } => self.exchange_failed(ctx),
                    Role::AwaitData { .. } => self.role = Role::Idle,
                    _ => {}
                }
            }
            SyncTimer::NavEnd => {
                self.nav_h = None;
                if self.nav.active(ctx.now()) {
                    self.nav_h = Some(ctx.timer_at(self.nav.until, SyncTimer::NavEnd));
                    return;
                }
                if self.in_window(ctx.now()) && !ctx.is_awake() && !ctx.is_transmitting() {
                    ctx.listen();
                    self.touch(ctx);
                }
            }
        }
        self.settle(ctx);
    }

    fn queue(&self) -> &SendQueue {
        &self.queue
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suggested_timeout_covers_contention_and_an_rts() {
        // 16 slots of 320 us, a 12-byte RTS at 250 kbps, 50 us turnaround.
        let ta = suggested_ta(16, SimTime(320), &FrameSizes::default(), SimTime(50));
        assert_eq!(ta, SimTime((5_120 + 384 + 50) * 3 / 2));
    }

    #[test]
    fn default_timeout_exceeds_the_suggested_floor() {
        let c = SmacConfig::default();
        let floor = suggested_ta(c.cw, c.slot, &FrameSizes::default(), SimTime::ZERO);
        assert!(TmacConfig::default().ta > floor);
        assert!(c.active_len < c.frame_len && c.sync_len < c.active_len);
    }
}
