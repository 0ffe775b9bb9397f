//! Preamble-sampling protocols. Every node samples the channel once per `tw`
//! on its own drifting clock; a sender stretches a wake-up signal over a full
//! sampling period, or, once it has learned the receiver's schedule, over just
//! the drift window around the predicted sample.
//!
//! One state machine serves all four variants; they differ only in the
//! wake-up signal and in what a sampler does after decoding part of it.

pub mod wisemac;

pub use wisemac::{preamble_len, theta_ppb, NeighborScheduleTable, ScheduleEntry};

use crate::kernel::{EventHandle, Purpose, SimTime};
use crate::mac::{EnqueueOutcome, Frame, FrameKind, Mac, MacCtx, NodeSetup, PayloadId, SendQueue, BROADCAST};
use crate::radio::RxOutcome;
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LplVariant {
    /// One long preamble, then DATA.
    Bmac,
    /// Addressed preamble blocks with a countdown.
    BmacPlus,
    /// Short addressed strobes with listening gaps and early acknowledgement.
    Xmac,
    /// Preamble shortened to the drift window of a learned schedule.
    WiseMac,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LplConfig {
    /// Sampling period shared by all nodes.
    pub tw: SimTime,
    /// Listening window of one sample.
    pub sample_len: SimTime,
    /// Airtime of one preamble block. `None` uses the configured block size.
    pub block_len: Option<SimTime>,
    /// Listening gap after each strobe. `None` means STROBE_ACK airtime plus
    /// two turnarounds.
    pub gap_len: Option<SimTime>,
    /// Awake time after a completed reception. `None` means 2 x (gap + strobe).
    pub linger_len: Option<SimTime>,
    /// Clock tolerance the schedule predictor protects against.
    pub theta_ppm: f64,
    /// Lead time before an announced DATA start.
    pub wake_guard: SimTime,
    pub cw: u32,
    pub slot: SimTime,
    pub retries: u32,
    /// Allowance added to response timeouts.
    pub slack: SimTime,
    pub queue_capacity: usize,
}

impl Default for LplConfig {
    fn default() -> Self {
        LplConfig {
            tw: SimTime::from_millis(250),
            sample_len: SimTime::from_micros(2_500),
            block_len: None,
            gap_len: None,
            linger_len: None,
            theta_ppm: 30.0,
            wake_guard: SimTime(100),
            cw: 16,
            slot: SimTime(320),
            retries: 3,
            slack: SimTime(100),
            queue_capacity: 8,
        }
    }
}

impl LplConfig {
    /// Span every full-length wake-up signal must cover.
    pub fn preamble_span(&self) -> SimTime {
        self.tw + self.sample_len
    }

    pub fn block_air(&self, sized: SimTime) -> SimTime {
        self.block_len.unwrap_or(sized)
    }

    pub fn block_count(&self, block_air: SimTime) -> u32 {
        self.preamble_span().ticks().div_ceil(block_air.ticks()) as u32
    }

    pub fn gap(&self, strobe_ack_air: SimTime, turnaround: SimTime) -> SimTime {
        self.gap_len.unwrap_or(strobe_ack_air + turnaround * 2)
    }

    pub fn linger(&self, gap: SimTime, strobe_air: SimTime) -> SimTime {
        self.linger_len.unwrap_or((gap + strobe_air) * 2)
    }

    /// Longest strobe train: enough strobe periods to span `tw + sample_len`.
    pub fn strobe_count(&self, strobe_air: SimTime, gap: SimTime) -> u32 {
        self.preamble_span().ticks().div_ceil((strobe_air + gap).ticks()) as u32
    }
}

/// Start of the DATA frame behind a block that ended at `block_end` with
/// `countdown` blocks still to come.
pub fn block_data_start(block_end: SimTime, countdown: u32, block_len: SimTime) -> SimTime {
    block_end + block_len * countdown as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LplTimer {
    Sample,
    SampleEnd,
    /// Backoff over; sense and start sending.
    Contend,
    /// Scheduled preamble start or preamble-free DATA.
    Start,
    GapEnd,
    SendData,
    AckTimeout,
    Respond,
    HeaderRead,
    WakeForData,
    Watch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    /// No exchange; asleep or inside a sample window.
    Idle,
    /// Backoff running, radio left as it was.
    Contending,
    /// Asleep until a scheduled preamble start.
    Scheduled,
    /// Waiting to send DATA without a wake-up signal.
    DirectWait,
    /// Wake-up signal, strobe gap or DATA in progress.
    Sending,
    AwaitAck,
    /// Carrier seen; waiting for a decodable frame.
    Detected,
    AwaitData,
    /// Asleep until an announced DATA start.
    DozeForData,
    /// Another sender strobes our head destination; watching for its answer.
    WatchAck,
    Responding,
    /// Awake after a reception for follow-up DATA.
    Linger,
}

impl Mode {
    /// Modes in which a send is only planned and a detection may preempt it.
    fn preemptible(self) -> bool {
        matches!(self, Mode::Idle | Mode::Contending | Mode::Scheduled | Mode::DirectWait)
    }

    /// Modes that wait on the channel and are supervised by the watch timer.
    fn watching(self) -> bool {
        matches!(self, Mode::Detected | Mode::AwaitData | Mode::WatchAck | Mode::Linger)
    }
}

/// How the head packet goes out this attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Attempt {
    dst: NodeId,
    /// Strobes sent so far and the train length.
    strobes: u32,
    max_strobes: u32,
    /// Airtime of a scheduled (shortened) preamble.
    scheduled_air: Option<SimTime>,
    more: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LplStats {
    pub samples: u64,
    pub detections: u64,
    pub wakeups_sent: u64,
    pub strobes_sent: u64,
    pub blocks_sent: u64,
    pub short_preambles: u64,
    pub direct_sends: u64,
    pub data_sent: u64,
    pub acked: u64,
    pub failed: u64,
    /// Receptions abandoned after the header or first block named someone else.
    pub overheard: u64,
}

#[derive(Debug)]
pub struct Lpl {
    variant: LplVariant,
    cfg: LplConfig,
    id: NodeId,
    queue: SendQueue,
    mode: Mode,
    attempt: Option<Attempt>,
    attempts: u32,
    next_sample_local: SimTime,
    sample_end: SimTime,
    linger_until: SimTime,
    watch_dst: Option<NodeId>,
    /// Follow-up DATA is announced by the last received more bit.
    expect_more: bool,
    corrupted_blocks: u32,
    pending: Option<Frame>,
    table: NeighborScheduleTable,
    theta_ppb: u64,
    strobe_air: SimTime,
    block_air: SimTime,
    gap: SimTime,
    linger: SimTime,
    send_h: Option<EventHandle>,
    gap_h: Option<EventHandle>,
    ack_h: Option<EventHandle>,
    watch_h: Option<EventHandle>,
    sample_end_h: Option<EventHandle>,
    header_h: Option<EventHandle>,
    wake_h: Option<EventHandle>,
    predicted_data_starts: Vec<SimTime>,
    stats: LplStats,
}

impl Lpl {
    pub fn new(variant: LplVariant, cfg: LplConfig, setup: &NodeSetup) -> Self {
        Lpl {
            variant,
            cfg,
            id: setup.id,
            queue: SendQueue::new(cfg.queue_capacity),
            mode: Mode::Idle,
            attempt: None,
            attempts: 0,
            next_sample_local: SimTime::ZERO,
            sample_end: SimTime::ZERO,
            linger_until: SimTime::ZERO,
            watch_dst: None,
            expect_more: false,
            corrupted_blocks: 0,
            pending: None,
            table: NeighborScheduleTable::default(),
            theta_ppb: theta_ppb(cfg.theta_ppm),
            strobe_air: SimTime::ZERO,
            block_air: SimTime::ZERO,
            gap: SimTime::ZERO,
            linger: SimTime::ZERO,
            send_h: None,
            gap_h: None,
            ack_h: None,
            watch_h: None,
            sample_end_h: None,
            header_h: None,
            wake_h: None,
            predicted_data_starts: Vec::new(),
            stats: LplStats::default(),
        }
    }

    pub fn variant(&self) -> LplVariant {
        self.variant
    }

    pub fn stats(&self) -> LplStats {
        self.stats
    }

    pub fn table(&self) -> &NeighborScheduleTable {
        &self.table
    }

    /// DATA start instants this node computed from decoded preamble blocks.
    pub fn predicted_data_starts(&self) -> &[SimTime] {
        &self.predicted_data_starts
    }

    /// Phase of this node's sampling schedule, local time.
    pub fn sample_phase(&self) -> SimTime {
        self.next_sample_local % self.cfg.tw
    }

    fn guard(&self) -> SimTime {
        self.gap + self.cfg.slack
    }

    // --- sampling ---------------------------------------------------------

    fn sample(&mut self, ctx: &mut MacCtx<'_, LplTimer>) {
        self.next_sample_local += self.cfg.tw;
        let at = ctx.to_global(self.next_sample_local).max(ctx.now() + SimTime(1));
        ctx.timer_at(at, LplTimer::Sample);
        if !self.mode.preemptible() || ctx.is_awake() || ctx.is_transmitting() {
            return;
        }
        self.stats.samples += 1;
        ctx.listen();
        if ctx.channel_busy() {
            self.detect(ctx);
            return;
        }
        self.sample_end = ctx.now() + self.cfg.sample_len;
        ctx.cancel_slot(&mut self.sample_end_h);
        self.sample_end_h = Some(ctx.timer_at(self.sample_end, LplTimer::SampleEnd));
    }

    fn sample_over(&mut self, ctx: &mut MacCtx<'_, LplTimer>) {
        self.sample_end_h = None;
        if !self.mode.preemptible() || !ctx.is_awake() || ctx.is_transmitting() {
            return;
        }
        if ctx.channel_busy() {
            self.detect(ctx);
            return;
        }
        if self.mode == Mode::Idle {
            self.settle(ctx);
        } else {
            ctx.sleep();
        }
    }

    /// Carrier seen while idle or planning a send: become a receiver.
    fn detect(&mut self, ctx: &mut MacCtx<'_, LplTimer>) {
        if self.mode.preemptible() {
            ctx.cancel_slot(&mut self.send_h);
            if self.mode == Mode::Scheduled || self.mode == Mode::DirectWait {
                self.attempt = None;
            }
        }
        if !ctx.is_awake() {
            ctx.listen();
        }
        self.stats.detections += 1;
        self.corrupted_blocks = 0;
        self.mode = Mode::Detected;
        self.arm_watch(ctx, ctx.now());
    }

    /// (Re)arms supervision of a waiting mode: the earliest moment the
    /// channel could have gone quiet for a full guard interval.
    fn arm_watch(&mut self, ctx: &mut MacCtx<'_, LplTimer>, not_before: SimTime) {
        let quiet = ctx.carrier_until().unwrap_or(ctx.now()).max(ctx.now()) + self.guard();
        let at = quiet.max(not_before);
        ctx.cancel_slot(&mut self.watch_h);
        self.watch_h = Some(ctx.timer_at(at, LplTimer::Watch));
    }

    fn watch_fired(&mut self, ctx: &mut MacCtx<'_, LplTimer>) {
        self.watch_h = None;
        if !self.mode.watching() {
            return;
        }
        let now = ctx.now();
        if ctx.channel_busy() || (self.mode == Mode::Linger && now < self.linger_until) {
            let until = if self.mode == Mode::Linger { self.linger_until } else { now };
            self.arm_watch(ctx, until);
            return;
        }
        self.give_up(ctx);
    }

    fn give_up(&mut self, ctx: &mut MacCtx<'_, LplTimer>) {
        ctx.cancel_slot(&mut self.watch_h);
        ctx.cancel_slot(&mut self.header_h);
        self.mode = Mode::Idle;
        self.watch_dst = None;
        self.expect_more = false;
        self.settle(ctx);
    }

    /// Abandons a reception that is not ours and turns the radio off.
    fn overhear_and_sleep(&mut self, ctx: &mut MacCtx<'_, LplTimer>) {
        self.stats.overheard += 1;
        self.give_up(ctx);
        if ctx.is_awake() && self.mode == Mode::Idle {
            ctx.sleep();
        }
    }

    /// Idle housekeeping: start sending or go back to sleep.
    fn settle(&mut self, ctx: &mut MacCtx<'_, LplTimer>) {
        if self.mode != Mode::Idle || ctx.is_transmitting() {
            return;
        }
        if !self.queue.is_empty() {
            self.plan_send(ctx, SimTime::ZERO);
            return;
        }
        if ctx.is_awake() && ctx.now() >= self.sample_end && !ctx.is_receiving() {
            ctx.sleep();
        }
    }

    // --- sending ----------------------------------------------------------

    fn head_dst(&self) -> Option<NodeId> {
        self.queue.front().map(|p| p.dst)
    }

    fn plan_send(&mut self, ctx: &mut MacCtx<'_, LplTimer>, extra: SimTime) {
        let head = *self.queue.front().expect("planning with a queued packet");
        if ctx.is_awake() && ctx.now() >= self.sample_end && !ctx.is_receiving() {
            ctx.sleep();
        }
        if self.variant == LplVariant::WiseMac && head.dst != BROADCAST {
            let local_now = ctx.local_now();
            self.table.expire(local_now, self.theta_ppb, self.cfg.tw);
            if let Some(entry) = self.table.get(head.dst).copied() {
                let b = ctx.backoff(self.cfg.cw, self.cfg.slot);
                let tp = preamble_len(self.theta_ppb, local_now - entry.learned_at, self.cfg.tw);
                let lead = tp / 2 + b;
                let earliest = local_now + extra + lead + SimTime(1);
                let target = entry.sample_at_or_after(earliest, self.cfg.tw);
                let start = ctx.to_global(target - lead).max(ctx.now() + SimTime(1));
                let end = ctx.to_global(target + tp / 2 + self.cfg.sample_len);
                self.attempt = Some(Attempt {
                    dst: head.dst,
                    strobes: 0,
                    max_strobes: 0,
                    scheduled_air: Some(end.max(start + SimTime(1)) - start),
                    more: false,
                });
                self.mode = Mode::Scheduled;
                self.send_h = Some(ctx.timer_at(start, LplTimer::Start));
                return;
            }
        }
        let d = extra + ctx.backoff(self.cfg.cw, self.cfg.slot);
        self.mode = Mode::Contending;
        self.send_h = Some(ctx.timer_in(d, LplTimer::Contend));
    }

    fn contend_fired(&mut self, ctx: &mut MacCtx<'_, LplTimer>) {
        self.send_h = None;
        if self.mode != Mode::Contending {
            return;
        }
        self.mode = Mode::Idle;
        if self.queue.is_empty() {
            self.settle(ctx);
            return;
        }
        if !ctx.is_awake() {
            ctx.listen();
        }
        if ctx.channel_busy() {
            self.detect(ctx);
            return;
        }
        let dst = self.head_dst().expect("non-empty");
        let max_strobes = self.cfg.strobe_count(self.strobe_air, self.gap);
        self.attempt = Some(Attempt {
            dst,
            strobes: 0,
            max_strobes,
            scheduled_air: None,
            more: false,
        });
        self.mode = Mode::Sending;
        self.stats.wakeups_sent += 1;
        match self.variant {
            LplVariant::Bmac | LplVariant::WiseMac => {
                let f = Frame::new(FrameKind::Preamble, self.id, dst, self.cfg.preamble_span());
                ctx.transmit(f);
            }
            LplVariant::BmacPlus => {
                let n = self.cfg.block_count(self.block_air);
                self.send_block(ctx, dst, n - 1);
            }
            LplVariant::Xmac => self.send_strobe(ctx),
        }
    }

    /// Scheduled preamble start, or preamble-free DATA after someone else's
    /// exchange.
    fn start_fired(&mut self, ctx: &mut MacCtx<'_, LplTimer>) {
        self.send_h = None;
        let direct = match self.mode {
            Mode::Scheduled => false,
            Mode::DirectWait => true,
            _ => return,
        };
        self.mode = Mode::Idle;
        if !ctx.is_awake() {
            ctx.listen();
        }
        if self.queue.is_empty() {
            self.attempt = None;
            self.settle(ctx);
            return;
        }
        if ctx.channel_busy() {
            self.attempt = None;
            self.detect(ctx);
            return;
        }
        self.mode = Mode::Sending;
        if direct {
            self.stats.direct_sends += 1;
            self.send_data(ctx);
            return;
        }
        let a = self.attempt.expect("scheduled attempt");
        let air = a.scheduled_air.expect("scheduled airtime");
        self.stats.wakeups_sent += 1;
        self.stats.short_preambles += 1;
        ctx.transmit(Frame::new(FrameKind::Preamble, self.id, a.dst, air));
    }

    fn send_block(&mut self, ctx: &mut MacCtx<'_, LplTimer>, dst: NodeId, countdown: u32) {
        self.stats.blocks_sent += 1;
        let f = Frame::new(FrameKind::PreambleBlock, self.id, dst, self.block_air).with_countdown(countdown);
        ctx.transmit(f);
    }

    fn send_strobe(&mut self, ctx: &mut MacCtx<'_, LplTimer>) {
        let a = self.attempt.as_mut().expect("strobing attempt");
        let countdown = a.max_strobes - a.strobes - 1;
        a.strobes += 1;
        let dst = a.dst;
        self.stats.strobes_sent += 1;
        let f = Frame::new(FrameKind::Strobe, self.id, dst, self.strobe_air).with_countdown(countdown);
        ctx.transmit(f);
    }

    fn send_data(&mut self, ctx: &mut MacCtx<'_, LplTimer>) {
        let head = *self.queue.front().expect("data follows a queued packet");
        let more = self.variant == LplVariant::WiseMac && head.dst != BROADCAST && self.queue.more_for_head();
        match self.attempt.as_mut() {
            Some(a) => a.more = more,
            None => {
                self.attempt = Some(Attempt {
                    dst: head.dst,
                    strobes: 0,
                    max_strobes: 0,
                    scheduled_air: None,
                    more,
                })
            }
        }
        self.mode = Mode::Sending;
        self.stats.data_sent += 1;
        let f = Frame::new(FrameKind::Data, self.id, head.dst, ctx.airtime(FrameKind::Data))
            .with_payload(head.payload)
            .with_more_bit(more);
        ctx.transmit(f);
    }

    fn finish_head(&mut self, ctx: &mut MacCtx<'_, LplTimer>, ok: bool) {
        if let Some(p) = self.queue.pop_front() {
            ctx.send_done(p.payload, ok);
        }
        if ok {
            self.stats.acked += 1;
        } else {
            self.stats.failed += 1;
        }
        self.attempts = 0;
    }

    fn attempt_failed(&mut self, ctx: &mut MacCtx<'_, LplTimer>) {
        let dst = self.attempt.take().map(|a| a.dst);
        if self.variant == LplVariant::WiseMac {
            // A missed prediction falls back to a full-length preamble.
            if let Some(d) = dst {
                self.table.forget(d);
            }
        }
        self.attempts += 1;
        if self.attempts > self.cfg.retries {
            self.finish_head(ctx, false);
        }
        self.mode = Mode::Idle;
        if self.queue.is_empty() {
            self.settle(ctx);
        } else {
            let extra = ctx.backoff(self.cfg.cw, self.cfg.slot);
            self.plan_send(ctx, extra);
        }
    }

    fn acked(&mut self, ctx: &mut MacCtx<'_, LplTimer>) {
        ctx.cancel_slot(&mut self.ack_h);
        let a = self.attempt.take().expect("acknowledged attempt");
        self.finish_head(ctx, true);
        self.mode = Mode::Idle;
        if a.more && self.head_dst() == Some(a.dst) {
            // The receiver keeps listening; the next DATA needs no preamble.
            self.mode = Mode::Sending;
            let t = ctx.turnaround();
            self.send_h = Some(ctx.timer_in(t, LplTimer::SendData));
            return;
        }
        self.settle(ctx);
    }

    // --- receiving --------------------------------------------------------

    fn respond(&mut self, ctx: &mut MacCtx<'_, LplTimer>, f: Frame) {
        ctx.cancel_slot(&mut self.watch_h);
        self.pending = Some(f);
        self.mode = Mode::Responding;
        let t = ctx.turnaround();
        ctx.timer_in(t, LplTimer::Respond);
    }

    fn data_for_me(&mut self, ctx: &mut MacCtx<'_, LplTimer>, f: Frame) {
        ctx.cancel_slot(&mut self.header_h);
        if let Some(p) = f.payload_id {
            ctx.deliver(p, f.src);
        }
        if f.is_broadcast() {
            self.give_up(ctx);
            return;
        }
        self.expect_more = f.more_bit;
        let mut ack = Frame::new(FrameKind::Ack, self.id, f.src, ctx.airtime(FrameKind::Ack));
        if self.variant == LplVariant::WiseMac {
            let local_now = ctx.local_now();
            let ack_end = local_now + ctx.turnaround() + ctx.airtime(FrameKind::Ack);
            let mut next = self.next_sample_local;
            while next <= ack_end {
                next += self.cfg.tw;
            }
            ack = ack.with_sampling_offset(next - ack_end);
        }
        self.respond(ctx, ack);
    }

    fn on_block(&mut self, ctx: &mut MacCtx<'_, LplTimer>, f: Frame) {
        if !f.is_for(self.id) {
            self.overhear_and_sleep(ctx);
            return;
        }
        let now = ctx.now();
        let start = block_data_start(now, f.countdown, self.block_air);
        self.predicted_data_starts.push(start);
        let wake = start.saturating_sub(self.cfg.wake_guard);
        if wake <= now {
            self.mode = Mode::AwaitData;
            self.arm_watch(ctx, start);
            return;
        }
        ctx.cancel_slot(&mut self.watch_h);
        self.mode = Mode::DozeForData;
        if ctx.is_awake() && !ctx.is_transmitting() {
            ctx.sleep();
        }
        ctx.cancel_slot(&mut self.wake_h);
        self.wake_h = Some(ctx.timer_at(wake, LplTimer::WakeForData));
    }

    fn on_strobe(&mut self, ctx: &mut MacCtx<'_, LplTimer>, f: Frame) {
        if f.dst == self.id {
            let ack = Frame::new(FrameKind::StrobeAck, self.id, f.src, ctx.airtime(FrameKind::StrobeAck));
            self.respond(ctx, ack);
            return;
        }
        if f.dst == BROADCAST {
            self.arm_watch(ctx, ctx.now());
            return;
        }
        if self.head_dst() == Some(f.dst) {
            // Same receiver: its answer tells us when it will be awake.
            self.mode = Mode::WatchAck;
            self.watch_dst = Some(f.dst);
            self.arm_watch(ctx, ctx.now());
            return;
        }
        self.overhear_and_sleep(ctx);
    }

    /// A competing sender's strobe was answered; send DATA directly once
    /// that exchange is over, while the receiver still lingers.
    fn plan_direct(&mut self, ctx: &mut MacCtx<'_, LplTimer>) {
        ctx.cancel_slot(&mut self.watch_h);
        self.watch_dst = None;
        let t = ctx.turnaround();
        let exchange = t + ctx.airtime(FrameKind::Data) + t + ctx.airtime(FrameKind::Ack);
        let window = (self.linger / 2).ticks().max(1);
        let jitter = SimTime(ctx.rng(Purpose::Backoff).draw(window).expect("window >= 1"));
        self.mode = Mode::DirectWait;
        if ctx.is_awake() {
            ctx.sleep();
        }
        self.send_h = Some(ctx.timer_in(exchange + t + jitter, LplTimer::Start));
    }

    fn on_intact(&mut self, ctx: &mut MacCtx<'_, LplTimer>, f: Frame) {
        let me = self.id;
        if self.variant == LplVariant::WiseMac && f.kind == FrameKind::Ack && f.src != me {
            let local_now = ctx.local_now();
            self.table.learn(f.src, local_now, f.sampling_offset);
        }
        match f.kind {
            FrameKind::Ack => {
                let expected = self.attempt.map(|a| a.dst);
                if f.dst == me && self.mode == Mode::AwaitAck && expected == Some(f.src) {
                    self.acked(ctx);
                }
            }
            FrameKind::StrobeAck => {
                let strobing = self.mode == Mode::Sending && self.gap_h.is_some();
                if f.dst == me && strobing && self.attempt.map(|a| a.dst) == Some(f.src) {
                    ctx.cancel_slot(&mut self.gap_h);
                    let t = ctx.turnaround();
                    self.send_h = Some(ctx.timer_in(t, LplTimer::SendData));
                } else if self.mode == Mode::WatchAck && self.watch_dst == Some(f.src) {
                    self.plan_direct(ctx);
                }
            }
            FrameKind::Data => {
                let receiving = self.mode.watching() || self.mode == Mode::Idle;
                if f.is_for(me) && receiving {
                    self.data_for_me(ctx, f);
                }
            }
            FrameKind::Strobe if matches!(self.mode, Mode::Detected | Mode::Linger) => self.on_strobe(ctx, f),
            FrameKind::PreambleBlock if self.mode == Mode::Detected => self.on_block(ctx, f),
            _ => {}
        }
    }
}

impl Mac for Lpl {
    type Timer = LplTimer;

    fn boot(&mut self, ctx: &mut MacCtx<'_, LplTimer>) {
        self.strobe_air = ctx.airtime(FrameKind::Strobe);
        self.block_air = self.cfg.block_air(ctx.airtime(FrameKind::PreambleBlock));
        self.gap = self.cfg.gap(ctx.airtime(FrameKind::StrobeAck), ctx.turnaround());
        self.linger = self.cfg.linger(self.gap, self.strobe_air);
        let phase = ctx.rng(Purpose::Phase).draw(self.cfg.tw.ticks()).expect("tw > 0");
        self.next_sample_local = SimTime(phase);
        let at = ctx.to_global(self.next_sample_local).max(ctx.now());
        ctx.timer_at(at, LplTimer::Sample);
    }

    fn send_request(&mut self, ctx: &mut MacCtx<'_, LplTimer>, dst: NodeId, payload: PayloadId) -> EnqueueOutcome {
        let out = self.queue.enqueue(dst, payload, ctx.now());
        if out == EnqueueOutcome::Queued {
            self.settle(ctx);
        }
        out
    }

    fn frame_start(&mut self, ctx: &mut MacCtx<'_, LplTimer>, frame: &Frame) {
        if self.mode.preemptible() {
            self.detect(ctx);
        }
        if !self.mode.watching() {
            return;
        }
        if frame.kind == FrameKind::Data && !frame.is_for(self.id) {
            // The header names someone else; stop listening once it is read.
            ctx.cancel_slot(&mut self.header_h);
            let h = ctx.sizes().header_airtime();
            self.header_h = Some(ctx.timer_in(h, LplTimer::HeaderRead));
        }
        let now = ctx.now();
        self.arm_watch(ctx, now);
    }

    fn frame_received(&mut self, ctx: &mut MacCtx<'_, LplTimer>, rx: RxOutcome) {
        match rx {
            RxOutcome::Intact(f) => self.on_intact(ctx, f),
            RxOutcome::Corrupted => {
                if self.variant == LplVariant::BmacPlus && self.mode == Mode::Detected {
                    self.corrupted_blocks += 1;
                    if self.corrupted_blocks >= 2 {
                        self.give_up(ctx);
                    }
                }
            }
        }
        if self.mode == Mode::Idle {
            self.settle(ctx);
        }
    }

    fn frame_sent(&mut self, ctx: &mut MacCtx<'_, LplTimer>, frame: &Frame) {
        match frame.kind {
            FrameKind::Preamble => self.send_data(ctx),
            FrameKind::PreambleBlock => {
                if frame.countdown > 0 {
                    self.send_block(ctx, frame.dst, frame.countdown - 1);
                } else {
                    self.send_data(ctx);
                }
            }
            FrameKind::Strobe => {
                self.gap_h = Some(ctx.timer_in(self.gap, LplTimer::GapEnd));
            }
            FrameKind::Data => {
                if frame.is_broadcast() {
                    self.attempt = None;
                    self.finish_head(ctx, true);
                    self.mode = Mode::Idle;
                    self.settle(ctx);
                } else {
                    self.mode = Mode::AwaitAck;
                    let wait = ctx.turnaround() + ctx.airtime(FrameKind::Ack) + self.cfg.slack;
                    self.ack_h = Some(ctx.timer_in(wait, LplTimer::AckTimeout));
                }
            }
            FrameKind::StrobeAck => {
                self.mode = Mode::AwaitData;
                let now = ctx.now();
                let t = ctx.turnaround();
                self.arm_watch(ctx, now + t);
            }
            FrameKind::Ack => {
                let now = ctx.now();
                if self.variant == LplVariant::Xmac {
                    self.mode = Mode::Linger;
                    self.linger_until = now + self.linger;
                    self.arm_watch(ctx, self.linger_until);
                } else if self.expect_more {
                    self.mode = Mode::AwaitData;
                    let t = ctx.turnaround();
                    self.arm_watch(ctx, now + t);
                } else {
                    self.mode = Mode::Idle;
                    self.settle(ctx);
                }
            }
            _ => {}
        }
    }

    fn timer(&mut self, ctx: &mut MacCtx<'_, LplTimer>, tag: LplTimer) {
        match tag {
            LplTimer::Sample => self.sample(ctx),
            LplTimer::SampleEnd => self.sample_over(ctx),
            LplTimer::Contend => self.contend_fired(ctx),
            LplTimer::Start => self.start_fired(ctx),
            LplTimer::GapEnd => {
                self.gap_h = None;
                if self.mode != Mode::Sending {
                    return;
                }
                if ctx.is_receiving() {
                    // A frame ending on the gap boundary may be the answer.
                    let end = ctx.carrier_until().unwrap_or(ctx.now());
                    self.gap_h = Some(ctx.timer_at(end, LplTimer::GapEnd));
                    return;
                }
                let a = self.attempt.expect("strobing attempt");
                if a.strobes < a.max_strobes {
                    self.send_strobe(ctx);
                } else {
                    self.send_data(ctx);
                }
            }
            LplTimer::SendData => {
                self.send_h = None;
                if self.mode == Mode::Sending && !ctx.is_transmitting() && !self.queue.is_empty() {
                    self.send_data(ctx);
                }
            }
            LplTimer::AckTimeout => {
                self.ack_h = None;
                if self.mode == Mode::AwaitAck {
                    self.attempt_failed(ctx);
                }
            }
            LplTimer::Respond => {
                if let Some(f) = self.pending.take() {
                    if !ctx.is_transmitting() {
                        if !ctx.is_awake() {
                            ctx.listen();
                        }
                        ctx.transmit(f);
                        return;
                    }
                }
                self.give_up(ctx);
            }
            LplTimer::HeaderRead => {
                self.header_h = None;
                if self.mode.watching() {
                    self.overhear_and_sleep(ctx);
                }
            }
            LplTimer::WakeForData => {
                self.wake_h = None;
                if self.mode != Mode::DozeForData {
                    return;
                }
                ctx.listen();
                self.mode = Mode::AwaitData;
                let at = ctx.now() + self.cfg.wake_guard;
                self.arm_watch(ctx, at);
            }
            LplTimer::Watch => self.watch_fired(ctx),
        }
    }

    fn queue(&self) -> &SendQueue {
        &self.queue
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_counts() {
        let c = LplConfig::default();
        assert_eq!(c.preamble_span(), SimTime(252_500));
        assert_eq!(c.block_count(SimTime(512)), 494);
        assert_eq!(c.block_count(c.block_air(SimTime::from_millis(5))), 51);
        let gap = c.gap(SimTime(384), SimTime::ZERO);
        assert_eq!(gap, SimTime(384));
        assert_eq!(c.linger(gap, SimTime(384)), SimTime(1_536));
        // 252.5 ms of 768 us strobe periods.
        assert_eq!(c.strobe_count(SimTime(384), gap), 329);
    }

    #[test]
    fn block_countdown_arithmetic() {
        let b = SimTime::from_millis(5);
        assert_eq!(block_data_start(SimTime(1_000), 0, b), SimTime(1_000));
        assert_eq!(block_data_start(SimTime(1_000), 7, b), SimTime(36_000));
    }
}
