//! Schedule-based protocols: fixed or adaptive active periods on a shared
//! frame structure, and the staggered data-gathering ladder.

pub mod dmac;
pub mod smac;

pub use dmac::{Dmac, DmacConfig, DmacTimer};
pub use smac::{suggested_ta, Smac, SmacConfig, SyncTimer, TmacConfig};

use crate::kernel::SimTime;

/// A periodic active window in global time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SleepSchedule {
    pub frame_len: SimTime,
    pub active_len: SimTime,
    /// Start of the active period modulo `frame_len`.
    pub phase: SimTime,
}

impl SleepSchedule {
    /// Panics unless `0 < active_len < frame_len`.
    pub fn new(frame_len: SimTime, active_len: SimTime, phase: SimTime) -> Self {
        assert!(
            active_len > SimTime::ZERO && active_len < frame_len,
            "active period must be shorter than the frame"
        );
        SleepSchedule {
            frame_len,
            active_len,
            phase: phase % frame_len,
        }
    }

    /// Latest active-period start at or before `t`, if any.
    pub fn last_start(&self, t: SimTime) -> Option<SimTime> {
        if t < self.phase {
            return None;
        }
        Some(t - (t - self.phase) % self.frame_len)
    }

    /// Earliest active-period start at or after `t`.
    pub fn next_start(&self, t: SimTime) -> SimTime {
        match self.last_start(t) {
            Some(s) if s == t => s,
            Some(s) => s + self.frame_len,
            None => self.phase,
        }
    }

    pub fn is_active(&self, t: SimTime) -> bool {
        self.last_start(t)
            .is_some_and(|s| t - s < self.active_len)
    }

    /// Whether two schedules start within `tolerance` of each other.
    pub fn same_as(&self, other: &SleepSchedule, tolerance: SimTime) -> bool {
        let d = if self.phase > other.phase {
            self.phase - other.phase
        } else {
            other.phase - self.phase
        };
        d <= tolerance || self.frame_len - d <= tolerance
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(phase_ms: u64) -> SleepSchedule {
        SleepSchedule::new(
            SimTime::from_millis(1_000),
            SimTime::from_millis(100),
            SimTime::from_millis(phase_ms),
        )
    }

    #[test]
    fn occurrences() {
        let s = sched(250);
        assert_eq!(s.next_start(SimTime::ZERO), SimTime::from_millis(250));
        assert_eq!(s.next_start(SimTime::from_millis(250)), SimTime::from_millis(250));
        assert_eq!(s.next_start(SimTime::from_millis(251)), SimTime::from_millis(1_250));
        assert_eq!(s.last_start(SimTime::from_millis(100)), None);
        assert_eq!(s.last_start(SimTime::from_millis(1_300)), Some(SimTime::from_millis(1_250)));
        assert!(s.is_active(SimTime::from_millis(1_349)));
        assert!(!s.is_active(SimTime::from_millis(1_350)));
    }

    #[test]
    fn sameness_wraps_around_the_frame() {
        assert!(sched(0).same_as(&sched(999), SimTime::from_millis(1)));
        assert!(!sched(0).same_as(&sched(500), SimTime::from_millis(1)));
    }
}
