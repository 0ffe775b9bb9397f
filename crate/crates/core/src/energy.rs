//! State-based radio energy accounting.
//!
//! Every radio state change closes an interval in the ledger. Power values
//! are held as integer nanowatts and time as integer microseconds, so the
//! accumulated energy (in femtojoules) is exact and independent of the order
//! in which intervals are summed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::SimTime;
use crate::radio::RadioState;
use crate::NodeId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnergyError {
    #[error("power for {0:?} must be finite and non-negative")]
    NegativePower(RadioState),
    #[error("sleep power ({sleep} mW) must be below listen power ({listen} mW)")]
    SleepNotBelowListen { sleep: f64, listen: f64 },
    #[error("ledger time regression on node {node}: {at} < {last}")]
    TimeRegression {
        node: NodeId,
        at: SimTime,
        last: SimTime,
    },
    #[error("fleet average over an empty node set")]
    EmptyFleet,
}

/// Radio power draw per state, in milliwatts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerProfile {
    pub tx_mw: f64,
    pub rx_mw: f64,
    pub listen_mw: f64,
    pub sleep_mw: f64,
}

impl Default for PowerProfile {
    fn default() -> Self {
        PowerProfile {
            tx_mw: 60.0,
            rx_mw: 45.0,
            listen_mw: 45.0,
            sleep_mw: 0.09,
        }
    }
}

impl PowerProfile {
    pub fn validate(&self) -> Result<(), EnergyError> {
        for state in RadioState::ALL {
            let p = self.mw(state);
            if !p.is_finite() || p < 0.0 {
                return Err(EnergyError::NegativePower(state));
            }
        }
        if self.sleep_mw >= self.listen_mw {
            return Err(EnergyError::SleepNotBelowListen {
                sleep: self.sleep_mw,
                listen: self.listen_mw,
            });
        }
        Ok(())
    }

    pub fn mw(&self, state: RadioState) -> f64 {
        match state {
            RadioState::Sleep => self.sleep_mw,
            RadioState::Listen => self.listen_mw,
            RadioState::Rx => self.rx_mw,
            RadioState::Tx => self.tx_mw,
        }
    }

    /// Power in integer nanowatts.
    pub fn nanowatts(&self, state: RadioState) -> u64 {
        (self.mw(state) * 1e6).round() as u64
    }
}

/// Femtojoules to millijoules.
pub fn fj_to_mj(fj: u128) -> f64 {
    fj as f64 / 1e12
}

#[derive(Debug, Clone, Copy)]
struct NodeAccount {
    state: RadioState,
    since: SimTime,
    ticks: [u64; 4],
}

/// Per-node time and energy accumulated in each radio state.
#[derive(Debug, Clone)]
pub struct EnergyLedger {
    profile: PowerProfile,
    power_nw: [u64; 4],
    nodes: Vec<NodeAccount>,
}

impl EnergyLedger {
    /// All nodes start in `initial` at time zero.
    pub fn new(profile: PowerProfile, nodes: usize, initial: RadioState) -> Self {
        let power_nw = RadioState::ALL.map(|s| profile.nanowatts(s));
        EnergyLedger {
            profile,
            power_nw,
            nodes: vec![
                NodeAccount {
                    state: initial,
                    since: SimTime::ZERO,
                    ticks: [0; 4],
                };
                nodes
            ],
        }
    }

    pub fn profile(&self) -> &PowerProfile {
        &self.profile
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn state(&self, node: NodeId) -> RadioState {
        self.nodes[node].state
    }

    /// Closes the open interval of `node` at `at` and opens one in `new_state`.
    pub fn note_transition(
        &mut self,
        node: NodeId,
        new_state: RadioState,
        at: SimTime,
    ) -> Result<(), EnergyError> {
        let acct = &mut self.nodes[node];
        if at < acct.since {
            return Err(EnergyError::TimeRegression {
                node,
                at,
                last: acct.since,
            });
        }
        acct.ticks[acct.state.index()] += (at - acct.since).ticks();
        acct.state = new_state;
        acct.since = at;
        Ok(())
    }

    /// Ticks spent in `state` up to `t_end`, including the open interval.
    pub fn time_in(&self, node: NodeId, state: RadioState, t_end: SimTime) -> SimTime {
        let acct = &self.nodes[node];
        let mut ticks = acct.ticks[state.index()];
        if acct.state == state {
            ticks += t_end.saturating_sub(acct.since).ticks();
        }
        SimTime(ticks)
    }

    pub fn energy_fj_in(&self, node: NodeId, state: RadioState, t_end: SimTime) -> u128 {
        self.time_in(node, state, t_end).ticks() as u128 * self.power_nw[state.index()] as u128
    }

    pub fn energy_mj_in(&self, node: NodeId, state: RadioState, t_end: SimTime) -> f64 {
        fj_to_mj(self.energy_fj_in(node, state, t_end))
    }

    pub fn total_energy_fj(&self, node: NodeId, t_end: SimTime) -> u128 {
        RadioState::ALL
            .iter()
            .map(|&s| self.energy_fj_in(node, s, t_end))
            .sum()
    }

    /// Total radio energy of `node` in millijoules.
    pub fn total_energy(&self, node: NodeId, t_end: SimTime) -> f64 {
        fj_to_mj(self.total_energy_fj(node, t_end))
    }

    /// Arithmetic mean of `total_energy` over `nodes`, in millijoules.
    pub fn fleet_average(&self, nodes: &[NodeId], t_end: SimTime) -> Result<f64, EnergyError> {
        if nodes.is_empty() {
            return Err(EnergyError::EmptyFleet);
        }
        let sum: u128 = nodes
            .iter()
            .map(|&n| self.total_energy_fj(n, t_end))
            .sum();
        Ok(fj_to_mj(sum) / nodes.len() as f64)
    }

    pub fn fleet_total(&self, t_end: SimTime) -> f64 {
        fj_to_mj(
            (0..self.nodes.len())
                .map(|n| self.total_energy_fj(n, t_end))
                .sum(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger(n: usize) -> EnergyLedger {
        EnergyLedger::new(PowerProfile::default(), n, RadioState::Sleep)
    }

    #[test]
    fn listen_two_seconds_at_45mw() {
        let mut l = ledger(1);
        l.note_transition(0, RadioState::Listen, SimTime::ZERO).unwrap();
        l.note_transition(0, RadioState::Sleep, SimTime::from_secs(2))
            .unwrap();
        assert_eq!(
            l.energy_mj_in(0, RadioState::Listen, SimTime::from_secs(2)),
            90.0
        );
    }

    #[test]
    fn zero_length_interval_adds_nothing() {
        let mut l = ledger(1);
        l.note_transition(0, RadioState::Listen, SimTime(5)).unwrap();
        l.note_transition(0, RadioState::Tx, SimTime(5)).unwrap();
        assert_eq!(l.time_in(0, RadioState::Listen, SimTime(5)), SimTime::ZERO);
    }

    #[test]
    fn sleep_ten_seconds() {
        let l = ledger(1);
        let e = l.total_energy(0, SimTime::from_secs(10));
        assert!((e - 0.9).abs() < 1e-12, "{e}");
    }

    #[test]
    fn regression_is_an_error() {
        let mut l = ledger(1);
        l.note_transition(0, RadioState::Listen, SimTime(10)).unwrap();
        assert!(matches!(
            l.note_transition(0, RadioState::Sleep, SimTime(9)),
            Err(EnergyError::TimeRegression { .. })
        ));
    }

    #[test]
    fn half_listen_half_sleep_is_the_mean() {
        let mut l = ledger(1);
        let t = SimTime::from_secs(10);
        l.note_transition(0, RadioState::Listen, SimTime::ZERO).unwrap();
        l.note_transition(0, RadioState::Sleep, SimTime::from_secs(5))
            .unwrap();
        let p = PowerProfile::default();
        let expected = (p.listen_mw * 10.0 + p.sleep_mw * 10.0) / 2.0;
        assert!((l.total_energy(0, t) - expected).abs() < 1e-9);
    }

    #[test]
    fn always_on_versus_duty_cycled_ratio() {
        let p = PowerProfile::default();
        let mut l = ledger(2);
        let frame = SimTime::from_secs(1);
        l.note_transition(0, RadioState::Listen, SimTime::ZERO).unwrap();
        for k in 0..10 {
            let start = frame * k;
            l.note_transition(1, RadioState::Listen, start).unwrap();
            l.note_transition(1, RadioState::Sleep, start + SimTime::from_millis(100))
                .unwrap();
        }
        let t = frame * 10;
        let ratio = l.total_energy(0, t) / l.total_energy(1, t);
        let closed_form = p.listen_mw / (0.1 * p.listen_mw + 0.9 * p.sleep_mw);
        assert!((ratio - closed_form).abs() < 1e-9, "{ratio} vs {closed_form}");
    }

    #[test]
    fn fleet_average_cases() {
        let l = ledger(3);
        let t = SimTime::from_secs(3);
        let avg = l.fleet_average(&[0, 1, 2], t).unwrap();
        assert_eq!(avg, l.total_energy(1, t));
        assert_eq!(l.fleet_average(&[], t), Err(EnergyError::EmptyFleet));

        let mut l = EnergyLedger::new(
            PowerProfile {
                tx_mw: 10.0,
                rx_mw: 10.0,
                listen_mw: 10.0,
                sleep_mw: 0.0,
            },
            2,
            RadioState::Sleep,
        );
        l.note_transition(0, RadioState::Listen, SimTime::ZERO).unwrap();
        l.note_transition(1, RadioState::Tx, SimTime::ZERO).unwrap();
        l.note_transition(1, RadioState::Listen, SimTime::ZERO).unwrap();
        l.note_transition(0, RadioState::Sleep, SimTime::from_secs(1))
            .unwrap();
        l.note_transition(1, RadioState::Sleep, SimTime::from_secs(3))
            .unwrap();
        let end = SimTime::from_secs(3);
        assert_eq!(l.fleet_average(&[0, 1], end).unwrap(), 20.0);
        assert_eq!(l.fleet_average(&[1, 0], end).unwrap(), 20.0);
    }

    #[test]
    fn profile_validation() {
        assert!(PowerProfile::default().validate().is_ok());
        let bad = PowerProfile {
            sleep_mw: 50.0,
            ..PowerProfile::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(EnergyError::SleepNotBelowListen { .. })
        ));
        let neg = PowerProfile {
            tx_mw: -1.0,
            ..PowerProfile::default()
        };
        assert_eq!(neg.validate(), Err(EnergyError::NegativePower(RadioState::Tx)));
    }
}
