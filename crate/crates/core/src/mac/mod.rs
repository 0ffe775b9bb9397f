//! MAC scaffolding shared by every protocol: the interface a protocol
//! implements, the handle it uses to drive its own radio and timers, the
//! send queue, NAV bookkeeping and CSMA backoff.

pub mod frame;
pub mod preamble;
pub mod sync;

use std::collections::VecDeque;
use std::fmt::Debug;

use thiserror::Error;

use crate::kernel::{EventHandle, Purpose, RngStream, SimTime};
use crate::radio::{ChannelStatus, RadioState, RxOutcome};
use crate::sim::{AppNotice, Event, TraceEvent, World};
use crate::workload::Pattern;
use crate::NodeId;

pub use frame::{Frame, FrameKind, FrameSizes, PayloadId, BROADCAST};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MacError {
    #[error("contention window must be at least one slot")]
    ZeroWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Queued,
    DroppedFull,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueuedPacket {
    pub dst: NodeId,
    pub payload: PayloadId,
    pub enqueued_at: SimTime,
}

/// Bounded FIFO between the application and a MAC.
#[derive(Debug, Clone)]
pub struct SendQueue {
    items: VecDeque<QueuedPacket>,
    capacity: usize,
}

impl SendQueue {
    pub fn new(capacity: usize) -> Self {
        SendQueue {
            items: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn enqueue(&mut self, dst: NodeId, payload: PayloadId, now: SimTime) -> EnqueueOutcome {
        if self.items.len() >= self.capacity {
            return EnqueueOutcome::DroppedFull;
        }
        self.items.push_back(QueuedPacket {
            dst,
            payload,
            enqueued_at: now,
        });
        EnqueueOutcome::Queued
    }

    pub fn front(&self) -> Option<&QueuedPacket> {
        self.items.front()
    }

    pub fn pop_front(&mut self) -> Option<QueuedPacket> {
        self.items.pop_front()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() >= self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Packets queued behind the head for the same destination.
    pub fn more_for_head(&self) -> bool {
        match self.items.front() {
            Some(head) => self.items.iter().skip(1).any(|p| p.dst == head.dst),
            None => false,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueuedPacket> {
        self.items.iter()
    }
}

/// Network allocation vector: the node initiates nothing until `until`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NavTimer {
    pub until: SimTime,
}

impl NavTimer {
    /// Applies an overheard reservation. Returns true if the NAV was extended.
    pub fn set(&mut self, now: SimTime, duration: SimTime) -> bool {
        if duration == SimTime::ZERO {
            return false;
        }
        let candidate = now + duration;
        if candidate > self.until {
            self.until = candidate;
            true
        } else {
            false
        }
    }

    pub fn active(&self, now: SimTime) -> bool {
        now < self.until
    }
}

/// Uniform backoff of `[0, cw)` slots.
pub fn csma_contend(rng: &mut RngStream, cw: u32, slot: SimTime) -> Result<SimTime, MacError> {
    if cw == 0 {
        return Err(MacError::ZeroWindow);
    }
    let slots = rng.draw(cw as u64).expect("non-empty window");
    Ok(slot * slots)
}

/// Static facts a protocol instance learns about its node at construction.
#[derive(Debug, Clone)]
pub struct NodeSetup {
    pub id: NodeId,
    pub neighbors: Vec<NodeId>,
    /// Next hop toward the sink in the gathering tree.
    pub parent: Option<NodeId>,
    pub depth: u32,
    pub max_depth: u32,
    pub pattern: Pattern,
}

/// The contract every protocol implements. All callbacks receive a context
/// bound to the protocol's own node.
pub trait Mac {
    type Timer: Copy + Debug;

    fn boot(&mut self, ctx: &mut MacCtx<'_, Self::Timer>);

    /// Application hands down a payload for the one-hop neighbor `dst`.
    fn send_request(
        &mut self,
        ctx: &mut MacCtx<'_, Self::Timer>,
        dst: NodeId,
        payload: PayloadId,
    ) -> EnqueueOutcome;

    /// A frame with a clean start began arriving; its header is readable.
    fn frame_start(&mut self, _ctx: &mut MacCtx<'_, Self::Timer>, _frame: &Frame) {}

    fn frame_received(&mut self, ctx: &mut MacCtx<'_, Self::Timer>, rx: RxOutcome);

    fn frame_sent(&mut self, ctx: &mut MacCtx<'_, Self::Timer>, frame: &Frame);

    fn timer(&mut self, ctx: &mut MacCtx<'_, Self::Timer>, tag: Self::Timer);

    fn queue(&self) -> &SendQueue;
}

/// A protocol's view of the simulation, restricted to its own node.
pub struct MacCtx<'a, T> {
    node: NodeId,
    world: &'a mut World<T>,
}

impl<'a, T: Copy + Debug> MacCtx<'a, T> {
    pub(crate) fn new(node: NodeId, world: &'a mut World<T>) -> Self {
        MacCtx { node, world }
    }

    pub fn id(&self) -> NodeId {
        self.node
    }

    pub fn now(&self) -> SimTime {
        self.world.kernel.now()
    }

    pub fn sizes(&self) -> &FrameSizes {
        &self.world.sizes
    }

    pub fn airtime(&self, kind: FrameKind) -> SimTime {
        self.world.sizes.airtime(kind)
    }

    pub fn turnaround(&self) -> SimTime {
        self.world.turnaround
    }

    pub fn state(&self) -> RadioState {
        self.world.channel.state(self.node)
    }

    pub fn is_awake(&self) -> bool {
        self.state().is_awake()
    }

    pub fn is_transmitting(&self) -> bool {
        self.state() == RadioState::Tx
    }

    pub fn is_receiving(&self) -> bool {
        self.world.channel.is_receiving(self.node)
    }

    pub fn neighbors(&self) -> &[NodeId] {
        self.world.channel.neighbors(self.node)
    }

    /// Turns the receiver on. A no-op while receiving.
    #[track_caller]
    pub fn listen(&mut self) {
        self.world.set_radio(self.node, RadioState::Listen);
    }

    /// Turns the radio off, dropping any frame being received.
    #[track_caller]
    pub fn sleep(&mut self) {
        self.world.set_radio(self.node, RadioState::Sleep);
    }

    /// Puts `frame` on the air and returns its end time. Transmitting while
    /// already transmitting is a protocol bug and panics.
    #[track_caller]
    pub fn transmit(&mut self, frame: Frame) -> SimTime {
        self.world.transmit(self.node, frame)
    }

    /// Carrier sense. Sensing while asleep is a protocol bug and panics.
    #[track_caller]
    pub fn cca(&self) -> ChannelStatus {
        match self.world.channel.cca(self.node, self.now()) {
            Ok(s) => s,
            Err(e) => panic!("node {}: {e}", self.node),
        }
    }

    /// CCA that treats an ongoing reception as busy.
    pub fn channel_busy(&self) -> bool {
        self.is_receiving() || self.cca() == ChannelStatus::Busy
    }

    /// When the last currently audible transmission ends, if any.
    pub fn carrier_until(&self) -> Option<SimTime> {
        self.world.channel.carrier_until(self.node)
    }

    #[track_caller]
    pub fn timer_at(&mut self, at: SimTime, tag: T) -> EventHandle {
        match self.world.kernel.schedule(at, Event::Timer { node: self.node, tag }) {
            Ok(h) => h,
            Err(e) => panic!("node {} timer {tag:?}: {e}", self.node),
        }
    }

    #[track_caller]
    pub fn timer_in(&mut self, delay: SimTime, tag: T) -> EventHandle {
        let at = self.now() + delay;
        self.timer_at(at, tag)
    }

    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.world.kernel.cancel(handle)
    }

    /// Cancels the timer in `slot`, if any, and clears it.
    pub fn cancel_slot(&mut self, slot: &mut Option<EventHandle>) {
        if let Some(h) = slot.take() {
            self.world.kernel.cancel(h);
        }
    }

    pub fn rng(&mut self, purpose: Purpose) -> &mut RngStream {
        self.world.rng(self.node, purpose)
    }

    #[track_caller]
    pub fn backoff(&mut self, cw: u32, slot: SimTime) -> SimTime {
        let rng = self.world.rng(self.node, Purpose::Backoff);
        csma_contend(rng, cw, slot).expect("contention window configured >= 1")
    }

    /// Hands a received payload to the application.
    pub fn deliver(&mut self, payload: PayloadId, from: NodeId) {
        self.world.outbox.push(AppNotice::Delivered {
            node: self.node,
            from,
            payload,
        });
    }

    /// Reports the end of the MAC's responsibility for a queued payload.
    pub fn send_done(&mut self, payload: PayloadId, ok: bool) {
        self.world.outbox.push(AppNotice::SendDone {
            node: self.node,
            payload,
            ok,
        });
    }

    /// Records a NAV update for trace-based checks.
    pub fn note_nav(&mut self, until: SimTime) {
        let now = self.now();
        let node = self.node;
        self.world.record(TraceEvent::Nav { at: now, node, until });
    }

    pub fn local_now(&self) -> SimTime {
        self.world.channel.local_time(self.node, self.now())
    }

    /// Global time at which this node's clock reads `local`.
    pub fn to_global(&self, local: SimTime) -> SimTime {
        self.world.channel.clock(self.node).to_global(local)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn queue_fifo_and_capacity() {
        let mut q = SendQueue::new(2);
        assert_eq!(q.enqueue(1, 10, SimTime(0)), EnqueueOutcome::Queued);
        assert_eq!(q.enqueue(2, 11, SimTime(1)), EnqueueOutcome::Queued);
        assert!(q.is_full());
        assert_eq!(q.enqueue(3, 12, SimTime(2)), EnqueueOutcome::DroppedFull);
        assert_eq!(q.pop_front().unwrap().payload, 10);
        assert_eq!(q.pop_front().unwrap().payload, 11);
        assert!(q.pop_front().is_none());
    }

    #[test]
    fn more_for_head_looks_past_the_head() {
        let mut q = SendQueue::new(4);
        q.enqueue(1, 1, SimTime(0));
        q.enqueue(2, 2, SimTime(0));
        assert!(!q.more_for_head());
        q.enqueue(1, 3, SimTime(0));
        assert!(q.more_for_head());
    }

    #[test]
    fn nav_max_rule() {
        let mut nav = NavTimer::default();
        assert!(nav.set(SimTime(0), SimTime::from_millis(12)));
        assert_eq!(nav.until, SimTime(12_000));
        assert!(!nav.set(SimTime(1_000), SimTime::from_millis(5)));
        assert_eq!(nav.until, SimTime(12_000));
        assert!(!nav.set(SimTime(2_000), SimTime::ZERO));
        assert!(nav.active(SimTime(11_999)));
        assert!(!nav.active(SimTime(12_000)));
    }

    #[test]
    fn backoff_range() {
        let mut rng = RngStream::new(1, 0, Purpose::Backoff);
        assert_eq!(csma_contend(&mut rng, 0, SimTime(320)), Err(MacError::ZeroWindow));
        for _ in 0..100 {
            assert_eq!(csma_contend(&mut rng, 1, SimTime(320)), Ok(SimTime::ZERO));
        }
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..2_000 {
            let d = csma_contend(&mut rng, 16, SimTime(320)).unwrap();
            assert_eq!(d.ticks() % 320, 0);
            assert!(d <= SimTime(4_800));
            seen.insert(d);
        }
        assert_eq!(seen.len(), 16);
    }
}
