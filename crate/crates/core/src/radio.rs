//! Shared wireless medium over a unit-disk link graph.
//!
//! A node hears a transmission iff it is a neighbor of the sender. A frame is
//! delivered intact only to neighbors that were awake when it started, stayed
//! awake until it ended, and heard no other transmission meanwhile. Any
//! overlap at a receiver corrupts every frame involved there (no capture).

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::energy::{EnergyError, EnergyLedger, PowerProfile};
use crate::kernel::SimTime;
use crate::mac::frame::{Frame, FrameError};
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RadioState {
    Sleep,
    Listen,
    Rx,
    Tx,
}

impl RadioState {
    pub const ALL: [RadioState; 4] = [
        RadioState::Sleep,
        RadioState::Listen,
        RadioState::Rx,
        RadioState::Tx,
    ];

    pub fn index(self) -> usize {
        match self {
            RadioState::Sleep => 0,
            RadioState::Listen => 1,
            RadioState::Rx => 2,
            RadioState::Tx => 3,
        }
    }

    /// Listening or receiving.
    pub fn is_awake(self) -> bool {
        matches!(self, RadioState::Listen | RadioState::Rx)
    }
}

pub type TxId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelStatus {
    Clear,
    Busy,
}

/// What a receiver gets when a frame it was locked on ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RxOutcome {
    Intact(Frame),
    Corrupted,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RadioError {
    #[error("node {0} is already transmitting")]
    AlreadyTransmitting(NodeId),
    #[error("carrier sense requested by sleeping node {0}")]
    CcaWhileAsleep(NodeId),
    #[error("{0:?} can only be entered by the channel itself")]
    NotRequestable(RadioState),
    #[error("unknown transmission {0}")]
    UnknownTransmission(TxId),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

/// Per-node oscillator error. Local clocks run at `1 + drift` times real time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClockModel {
    pub drift_ppm: f64,
}

impl ClockModel {
    pub fn new(drift_ppm: f64) -> Self {
        ClockModel { drift_ppm }
    }

    fn rate(&self) -> f64 {
        1.0 + self.drift_ppm * 1e-6
    }

    /// Reading of this node's clock at global time `t`, to the nearest tick.
    pub fn local_time(&self, t: SimTime) -> SimTime {
        SimTime((t.ticks() as f64 * self.rate()).round() as u64)
    }

    /// Earliest global time at which the local clock reads at least `local`.
    pub fn to_global(&self, local: SimTime) -> SimTime {
        let mut t = (local.ticks() as f64 / self.rate()).floor() as u64;
        t = t.saturating_sub(2);
        while self.local_time(SimTime(t)) < local {
            t += 1;
        }
        SimTime(t)
    }
}

/// A frame on the air.
#[derive(Debug, Clone)]
pub struct Transmission {
    pub id: TxId,
    pub tx_node: NodeId,
    pub frame: Frame,
    pub start: SimTime,
    pub end: SimTime,
    pub corrupted_at: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, Copy)]
struct Reception {
    tx: TxId,
    corrupted: bool,
}

#[derive(Debug, Clone)]
struct RadioNode {
    state: RadioState,
    /// Number of audible transmissions on the air, heard or not.
    carrier: u32,
    receptions: Vec<Reception>,
}

#[derive(Debug, Clone)]
pub struct StartReport {
    pub tx: TxId,
    pub end: SimTime,
    /// Neighbors that locked onto the frame with a clean start.
    pub listeners: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct EndReport {
    pub tx: TxId,
    pub sender: NodeId,
    pub frame: Frame,
    pub start: SimTime,
    pub deliveries: Vec<(NodeId, RxOutcome)>,
}

#[derive(Debug, Clone)]
pub struct AbortReport {
    pub tx: TxId,
    pub frame: Frame,
    /// Receivers that were locked on the aborted frame.
    pub receivers: Vec<NodeId>,
}

/// A recorded radio state change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateChange {
    pub at: SimTime,
    pub node: NodeId,
    pub state: RadioState,
}

pub struct Channel {
    neighbors: Vec<Vec<NodeId>>,
    radios: Vec<RadioNode>,
    clocks: Vec<ClockModel>,
    active: BTreeMap<TxId, Transmission>,
    next_tx: TxId,
    ledger: EnergyLedger,
    log: Option<Vec<StateChange>>,
}

impl Channel {
    /// All radios start asleep at time zero.
    pub fn new(neighbors: Vec<Vec<NodeId>>, clocks: Vec<ClockModel>, profile: PowerProfile) -> Self {
        assert_eq!(neighbors.len(), clocks.len());
        let n = neighbors.len();
        Channel {
            neighbors,
            radios: vec![
                RadioNode {
                    state: RadioState::Sleep,
                    carrier: 0,
                    receptions: Vec::new(),
                };
                n
            ],
            clocks,
            active: BTreeMap::new(),
            next_tx: 0,
            ledger: EnergyLedger::new(profile, n, RadioState::Sleep),
            log: None,
        }
    }

    /// Starts recording every state change (initial states included).
    pub fn enable_log(&mut self) {
        let log = (0..self.radios.len())
            .map(|node| StateChange {
                at: SimTime::ZERO,
                node,
                state: self.radios[node].state,
            })
            .collect();
        self.log = Some(log);
    }

    pub fn log(&self) -> Option<&[StateChange]> {
        self.log.as_deref()
    }

    pub fn take_log(&mut self) -> Option<Vec<StateChange>> {
        self.log.take()
    }

    pub fn node_count(&self) -> usize {
        self.radios.len()
    }

    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.neighbors[node]
    }

    pub fn state(&self, node: NodeId) -> RadioState {
        self.radios[node].state
    }

    pub fn clock(&self, node: NodeId) -> &ClockModel {
        &self.clocks[node]
    }

    pub fn ledger(&self) -> &EnergyLedger {
        &self.ledger
    }

    pub fn transmission(&self, tx: TxId) -> Option<&Transmission> {
        self.active.get(&tx)
    }

    pub fn active_transmissions(&self) -> usize {
        self.active.len()
    }

    pub fn is_receiving(&self, node: NodeId) -> bool {
        !self.radios[node].receptions.is_empty()
    }

    /// True while `node` is locked on `tx` and the frame is still clean.
    pub fn is_receiving_clean(&self, node: NodeId, tx: TxId) -> bool {
        self.radios[node]
            .receptions
            .iter()
            .any(|r| r.tx == tx && !r.corrupted)
    }

    pub fn local_time(&self, node: NodeId, t: SimTime) -> SimTime {
        self.clocks[node].local_time(t)
    }

    fn transition(&mut self, node: NodeId, state: RadioState, now: SimTime) -> Result<(), RadioError> {
        if self.radios[node].state == state {
            return Ok(());
        }
        self.ledger.note_transition(node, state, now)?;
        self.radios[node].state = state;
        if let Some(log) = self.log.as_mut() {
            log.push(StateChange {
                at: now,
                node,
                state,
            });
        }
        Ok(())
    }

    /// Requests SLEEP or LISTEN. Leaving TX early aborts the frame, which is
    /// then corrupted at every receiver locked on it.
    pub fn set_state(
        &mut self,
        node: NodeId,
        target: RadioState,
        now: SimTime,
    ) -> Result<(RadioState, Option<AbortReport>), RadioError> {
        if !matches!(target, RadioState::Sleep | RadioState::Listen) {
            return Err(RadioError::NotRequestable(target));
        }
        let prev = self.radios[node].state;
        let mut abort = None;
        if prev == RadioState::Tx {
            let tx = self
                .active
                .iter()
                .find(|(_, t)| t.tx_node == node)
                .map(|(&id, _)| id)
                .expect("transmitting node has an active frame");
            let t = self.active.remove(&tx).expect("present");
            let receivers = self.release_neighbors(&t, now)?;
            abort = Some(AbortReport {
                tx,
                frame: t.frame,
                receivers: receivers.into_iter().map(|(n, _)| n).collect(),
            });
        }
        match target {
            RadioState::Sleep => {
                self.radios[node].receptions.clear();
                self.transition(node, RadioState::Sleep, now)?;
            }
            _ => {
                if self.radios[node].state != RadioState::Rx {
                    self.transition(node, RadioState::Listen, now)?;
                }
            }
        }
        Ok((prev, abort))
    }

    /// Decrements carrier at the sender's neighbors and detaches their
    /// receptions of `t`, returning (receiver, corrupted).
    fn release_neighbors(
        &mut self,
        t: &Transmission,
        now: SimTime,
    ) -> Result<Vec<(NodeId, bool)>, RadioError> {
        let mut out = Vec::new();
        for i in 0..self.neighbors[t.tx_node].len() {
            let nb = self.neighbors[t.tx_node][i];
            let r = &mut self.radios[nb];
            r.carrier -= 1;
            if let Some(pos) = r.receptions.iter().position(|x| x.tx == t.id) {
                let rec = r.receptions.remove(pos);
                out.push((nb, rec.corrupted));
                if r.receptions.is_empty() && r.state == RadioState::Rx {
                    self.transition(nb, RadioState::Listen, now)?;
                }
            }
        }
        Ok(out)
    }

    pub fn start_transmission(
        &mut self,
        node: NodeId,
        frame: Frame,
        now: SimTime,
    ) -> Result<StartReport, RadioError> {
        frame.validate()?;
        if self.radios[node].state == RadioState::Tx {
            return Err(RadioError::AlreadyTransmitting(node));
        }
        // A reception finishing on this very tick is already complete.
        let active = &self.active;
        self.radios[node]
            .receptions
            .retain(|rec| active.get(&rec.tx).is_some_and(|t| t.end <= now));
        self.transition(node, RadioState::Tx, now)?;

        let id = self.next_tx;
        self.next_tx += 1;
        let end = now + frame.airtime;
        let mut corrupted_at = BTreeSet::new();
        let mut listeners = Vec::new();
        for i in 0..self.neighbors[node].len() {
            let nb = self.neighbors[node][i];
            let collides = self.live_carrier(nb, now) > 0;
            let r = &mut self.radios[nb];
            r.carrier += 1;
            if !r.state.is_awake() {
                continue;
            }
            if collides {
                for rec in r.receptions.iter_mut() {
                    let Some(other) = self.active.get_mut(&rec.tx) else {
                        continue;
                    };
                    // A frame ending right now is already complete.
                    if !rec.corrupted && other.end > now {
                        rec.corrupted = true;
                        other.corrupted_at.insert(nb);
                    }
                }
                corrupted_at.insert(nb);
            } else {
                listeners.push(nb);
            }
            self.radios[nb].receptions.push(Reception {
                tx: id,
                corrupted: collides,
            });
            if self.radios[nb].state == RadioState::Listen {
                self.transition(nb, RadioState::Rx, now)?;
            }
        }
        self.active.insert(
            id,
            Transmission {
                id,
                tx_node: node,
                frame,
                start: now,
                end,
                corrupted_at,
            },
        );
        Ok(StartReport {
            tx: id,
            end,
            listeners,
        })
    }

    pub fn end_transmission(&mut self, tx: TxId, now: SimTime) -> Result<EndReport, RadioError> {
        let t = self
            .active
            .remove(&tx)
            .ok_or(RadioError::UnknownTransmission(tx))?;
        self.transition(t.tx_node, RadioState::Listen, now)?;
        let deliveries = self
            .release_neighbors(&t, now)?
            .into_iter()
            .map(|(nb, corrupted)| {
                let outcome = if corrupted {
                    RxOutcome::Corrupted
                } else {
                    RxOutcome::Intact(t.frame)
                };
                (nb, outcome)
            })
            .collect();
        Ok(EndReport {
            tx,
            sender: t.tx_node,
            frame: t.frame,
            start: t.start,
            deliveries,
        })
    }

    /// Latest end among transmissions currently audible at `node`.
    pub fn carrier_until(&self, node: NodeId) -> Option<SimTime> {
        if self.radios[node].carrier == 0 {
            return None;
        }
        self.active
            .values()
            .filter(|t| self.neighbors[node].contains(&t.tx_node))
            .map(|t| t.end)
            .max()
    }

    /// Audible transmissions at `node` still on the air after `now`.
    /// Transmission intervals are half-open, so a frame ending at `now`
    /// neither collides with nor masks one starting at `now`.
    fn live_carrier(&self, node: NodeId, now: SimTime) -> usize {
        if self.radios[node].carrier == 0 {
            return 0;
        }
        self.active
            .values()
            .filter(|t| t.end > now && self.neighbors[node].contains(&t.tx_node))
            .count()
    }

    /// Instantaneous carrier sense at `now`.
    pub fn cca(&self, node: NodeId, now: SimTime) -> Result<ChannelStatus, RadioError> {
        let r = &self.radios[node];
        match r.state {
            RadioState::Sleep => Err(RadioError::CcaWhileAsleep(node)),
            RadioState::Tx => Ok(ChannelStatus::Busy),
            _ if self.live_carrier(node, now) > 0 => Ok(ChannelStatus::Busy),
            _ => Ok(ChannelStatus::Clear),
        }
    }
}
