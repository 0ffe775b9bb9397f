use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::SimTime;
use crate::NodeId;

/// Destination address that every in-range node accepts.
pub const BROADCAST: NodeId = NodeId::MAX;

/// Identifier of an application payload, used for delivery bookkeeping.
pub type PayloadId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FrameKind {
    Sync,
    Rts,
    Cts,
    Data,
    Ack,
    Frts,
    Preamble,
    PreambleBlock,
    Strobe,
    StrobeAck,
}

impl FrameKind {
    pub fn carries_duration(self) -> bool {
        matches!(self, FrameKind::Rts | FrameKind::Cts | FrameKind::Frts)
    }
}

/// One on-air unit. Protocols only fill in the fields they use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Frame {
    pub kind: FrameKind,
    pub src: NodeId,
    pub dst: NodeId,
    pub airtime: SimTime,
    /// Remaining exchange time announced for NAV.
    pub duration_field: SimTime,
    /// Remaining blocks or strobes after this one.
    pub countdown: u32,
    pub more_bit: bool,
    pub mts_flag: bool,
    /// Time from the end of this frame to the sender's next scheduled wake-up.
    pub sampling_offset: SimTime,
    pub depth_level: u32,
    pub payload_id: Option<PayloadId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame airtime must be positive")]
    ZeroAirtime,
    #[error("{0:?} frames cannot carry a NAV duration")]
    UnexpectedDuration(FrameKind),
}

impl Frame {
    pub fn new(kind: FrameKind, src: NodeId, dst: NodeId, airtime: SimTime) -> Self {
        Frame {
            kind,
            src,
            dst,
            airtime,
            duration_field: SimTime::ZERO,
            countdown: 0,
            more_bit: false,
            mts_flag: false,
            sampling_offset: SimTime::ZERO,
            depth_level: 0,
            payload_id: None,
        }
    }

    pub fn with_duration(mut self, d: SimTime) -> Self {
        self.duration_field = d;
        self
    }

    pub fn with_countdown(mut self, c: u32) -> Self {
        self.countdown = c;
        self
    }

    pub fn with_payload(mut self, p: PayloadId) -> Self {
        self.payload_id = Some(p);
        self
    }

    pub fn with_sampling_offset(mut self, o: SimTime) -> Self {
        self.sampling_offset = o;
        self
    }

    pub fn with_depth(mut self, d: u32) -> Self {
        self.depth_level = d;
        self
    }

    pub fn with_more_bit(mut self, more: bool) -> Self {
        self.more_bit = more;
        self
    }

    pub fn with_mts(mut self, mts: bool) -> Self {
        self.mts_flag = mts;
        self
    }

    pub fn is_broadcast(&self) -> bool {
        self.dst == BROADCAST
    }

    pub fn is_for(&self, node: NodeId) -> bool {
        self.dst == node || self.dst == BROADCAST
    }

    pub fn validate(&self) -> Result<(), FrameError> {
        if self.airtime == SimTime::ZERO {
            return Err(FrameError::ZeroAirtime);
        }
        if self.duration_field != SimTime::ZERO && !self.kind.carries_duration() {
            return Err(FrameError::UnexpectedDuration(self.kind));
        }
        Ok(())
    }
}

/// Frame lengths and the bit rate that turns them into airtimes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSizes {
    pub bitrate_bps: u64,
    /// SYNC, RTS, CTS, ACK, FRTS, STROBE and STROBE_ACK.
    pub control_bytes: u64,
    pub data_bytes: u64,
    pub block_bytes: u64,
    /// Leading bytes a receiver must hear to decode source and destination.
    pub header_bytes: u64,
}

impl Default for FrameSizes {
    fn default() -> Self {
        FrameSizes {
            bitrate_bps: 250_000,
            control_bytes: 12,
            data_bytes: 64,
            block_bytes: 16,
            header_bytes: 8,
        }
    }
}

impl FrameSizes {
    pub fn bytes_airtime(&self, bytes: u64) -> SimTime {
        SimTime((bytes * 8 * 1_000_000).div_ceil(self.bitrate_bps))
    }

    /// Airtime of fixed-size frame kinds. Long preambles are sized by the
    /// protocol that sends them; this returns the control size for them.
    pub fn airtime(&self, kind: FrameKind) -> SimTime {
        match kind {
            FrameKind::Data => self.bytes_airtime(self.data_bytes),
            FrameKind::PreambleBlock => self.bytes_airtime(self.block_bytes),
            _ => self.bytes_airtime(self.control_bytes),
        }
    }

    pub fn header_airtime(&self) -> SimTime {
        self.bytes_airtime(self.header_bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_airtimes() {
        let s = FrameSizes::default();
        assert_eq!(s.airtime(FrameKind::Rts), SimTime(384));
        assert_eq!(s.airtime(FrameKind::Data), SimTime(2_048));
        assert_eq!(s.airtime(FrameKind::PreambleBlock), SimTime(512));
    }

    #[test]
    fn duration_only_on_reservation_frames() {
        let f = Frame::new(FrameKind::Data, 0, 1, SimTime(10)).with_duration(SimTime(5));
        assert_eq!(f.validate(), Err(FrameError::UnexpectedDuration(FrameKind::Data)));
        let f = Frame::new(FrameKind::Cts, 0, 1, SimTime(10)).with_duration(SimTime(5));
        assert!(f.validate().is_ok());
        let f = Frame::new(FrameKind::Ack, 0, 1, SimTime::ZERO);
        assert_eq!(f.validate(), Err(FrameError::ZeroAirtime));
    }
}
