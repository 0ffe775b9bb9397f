//! Virtual-time event scheduler and per-stream deterministic randomness.
//!
//! Time is counted in integer ticks of one microsecond. Events at equal
//! timestamps fire in insertion order, so a run is a pure function of its
//! configuration and master seed.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Rem, Sub, SubAssign};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Virtual time in microsecond ticks.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    /// Rounds a fractional millisecond value to the nearest tick.
    pub fn from_millis_f64(ms: f64) -> Self {
        SimTime((ms * 1_000.0).round().max(0.0) as u64)
    }

    pub fn from_secs_f64(s: f64) -> Self {
        SimTime((s * 1_000_000.0).round().max(0.0) as u64)
    }

    pub const fn ticks(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1e3
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }

    pub fn checked_sub(self, rhs: SimTime) -> Option<SimTime> {
        self.0.checked_sub(rhs.0).map(SimTime)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl SubAssign for SimTime {
    fn sub_assign(&mut self, rhs: SimTime) {
        self.0 -= rhs.0;
    }
}

impl Mul<u64> for SimTime {
    type Output = SimTime;
    fn mul(self, rhs: u64) -> SimTime {
        SimTime(self.0 * rhs)
    }
}

impl Div<u64> for SimTime {
    type Output = SimTime;
    fn div(self, rhs: u64) -> SimTime {
        SimTime(self.0 / rhs)
    }
}

impl Rem for SimTime {
    type Output = SimTime;
    fn rem(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 % rhs.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("event scheduled in the past: at {at}, now {now}")]
    InPast { at: SimTime, now: SimTime },
    #[error("run_until target {target} is before the current time {now}")]
    TargetInPast { target: SimTime, now: SimTime },
    #[error("random draw from an empty range")]
    EmptyRange,
}

/// Reference to a scheduled event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle {
    pub id: u64,
    pub fire_at: SimTime,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KernelStats {
    pub scheduled: u64,
    pub canceled: u64,
    pub fired: u64,
}

impl KernelStats {
    /// Events neither fired nor canceled.
    pub fn outstanding(&self) -> u64 {
        self.scheduled - self.canceled - self.fired
    }
}

/// Priority queue of events keyed by `(fire time, insertion id)`.
pub struct Scheduler<E> {
    now: SimTime,
    next_id: u64,
    heap: BinaryHeap<Reverse<(SimTime, u64)>>,
    pending: HashMap<u64, E>,
    stats: KernelStats,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_id: 0,
            heap: BinaryHeap::new(),
            pending: HashMap::new(),
            stats: KernelStats::default(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn stats(&self) -> KernelStats {
        self.stats
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn schedule(&mut self, at: SimTime, event: E) -> Result<EventHandle, KernelError> {
        if at < self.now {
            return Err(KernelError::InPast { at, now: self.now });
        }
        let id = self.next_id;
        self.next_id += 1;
        self.heap.push(Reverse((at, id)));
        self.pending.insert(id, event);
        self.stats.scheduled += 1;
        Ok(EventHandle { id, fire_at: at })
    }

    /// Returns true iff the event had not fired yet and now never will.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if self.pending.remove(&handle.id).is_some() {
            self.stats.canceled += 1;
            true
        } else {
            false
        }
    }

    pub fn is_pending(&self, handle: EventHandle) -> bool {
        self.pending.contains_key(&handle.id)
    }

    /// Time of the earliest live event, if any.
    pub fn peek_time(&mut self) -> Option<SimTime> {
        while let Some(Reverse((at, id))) = self.heap.peek().copied() {
            if self.pending.contains_key(&id) {
                return Some(at);
            }
            self.heap.pop();
        }
        None
    }

    /// Removes and returns the next live event firing at or before `t_end`,
    /// advancing the clock to its timestamp.
    pub fn pop_due(&mut self, t_end: SimTime) -> Option<(SimTime, E)> {
        while let Some(Reverse((at, id))) = self.heap.peek().copied() {
            if at > t_end {
                return None;
            }
            self.heap.pop();
            if let Some(event) = self.pending.remove(&id) {
                self.now = at;
                self.stats.fired += 1;
                return Some((at, event));
            }
        }
        None
    }

    /// Moves the clock forward without processing anything.
    pub fn advance_to(&mut self, t: SimTime) -> Result<(), KernelError> {
        if t < self.now {
            return Err(KernelError::TargetInPast {
                target: t,
                now: self.now,
            });
        }
        self.now = t;
        Ok(())
    }

    /// Processes every event due at or before `t_end` and leaves the clock at
    /// `t_end`. Handlers may schedule further events, including at the
    /// current time.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> Result<usize, KernelError>
    where
        F: FnMut(&mut Scheduler<E>, E),
    {
        if t_end < self.now {
            return Err(KernelError::TargetInPast {
                target: t_end,
                now: self.now,
            });
        }
        let mut processed = 0;
        while let Some((_, event)) = self.pop_due(t_end) {
            handler(self, event);
            processed += 1;
        }
        self.now = t_end;
        Ok(processed)
    }
}

/// What a random stream is used for. Part of the stream key, so adding draws
/// for one purpose never shifts another purpose's sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Backoff,
    Jitter,
    Drift,
    Phase,
    Traffic,
    Destination,
    Topology,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Backoff => 1,
            Purpose::Jitter => 2,
            Purpose::Drift => 3,
            Purpose::Phase => 4,
            Purpose::Traffic => 5,
            Purpose::Destination => 6,
            Purpose::Topology => 7,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic generator keyed by `(master seed, node, purpose)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    node: u64,
    purpose: Purpose,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, node: u64, purpose: Purpose) -> Self {
        let key = splitmix64(
            splitmix64(master_seed) ^ splitmix64(node.wrapping_mul(0x1000_0001) ^ purpose.tag()),
        );
        RngStream {
            node,
            purpose,
            rng: ChaCha8Rng::seed_from_u64(key),
        }
    }

    pub fn key(&self) -> (u64, Purpose) {
        (self.node, self.purpose)
    }

    /// Uniform draw from `[0, n)`.
    pub fn draw(&mut self, n: u64) -> Result<u64, KernelError> {
        if n == 0 {
            return Err(KernelError::EmptyRange);
        }
        Ok(self.rng.random_range(0..n))
    }

    /// Uniform draw from `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Exponentially distributed duration with the given mean.
    pub fn exponential(&mut self, mean: SimTime) -> SimTime {
        if mean == SimTime::ZERO {
            return SimTime::ZERO;
        }
        let exp = Exp::new(1.0 / mean.0 as f64).expect("positive rate");
        SimTime(exp.sample(&mut self.rng).round() as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn event_fires_at_its_time() {
        let mut s = Scheduler::new();
        s.schedule(SimTime(100), "a").unwrap();
        let mut seen = vec![];
        s.run_until(SimTime(99), |sch, e| seen.push((sch.now(), e)))
            .unwrap();
        assert!(seen.is_empty());
        s.run_until(SimTime(100), |sch, e| seen.push((sch.now(), e)))
            .unwrap();
        assert_eq!(seen, vec![(SimTime(100), "a")]);
    }

    #[test]
    fn equal_timestamps_are_fifo() {
        let mut s = Scheduler::new();
        s.schedule(SimTime(50), 'A').unwrap();
        s.schedule(SimTime(50), 'B').unwrap();
        let mut seen = String::new();
        s.run_until(SimTime(60), |_, e| seen.push(e)).unwrap();
        assert_eq!(seen, "AB");
    }

    #[test]
    fn schedule_at_now_fires_before_clock_moves() {
        let mut s = Scheduler::new();
        s.run_until(SimTime(10), |_, _: u8| {}).unwrap();
        s.schedule(SimTime(10), 1u8).unwrap();
        let n = s.run_until(SimTime(10), |sch, _| assert_eq!(sch.now(), SimTime(10)));
        assert_eq!(n, Ok(1));
    }

    #[test]
    fn past_schedule_is_rejected() {
        let mut s = Scheduler::<()>::new();
        s.advance_to(SimTime(10)).unwrap();
        assert_eq!(
            s.schedule(SimTime(9), ()),
            Err(KernelError::InPast {
                at: SimTime(9),
                now: SimTime(10)
            })
        );
    }

    #[test]
    fn cancel_semantics() {
        let mut s = Scheduler::new();
        let a = s.schedule(SimTime(10), 1).unwrap();
        let b = s.schedule(SimTime(20), 2).unwrap();
        assert!(s.cancel(a));
        assert!(!s.cancel(a), "double cancel");
        let mut seen = vec![];
        s.run_until(SimTime(30), |_, e| seen.push(e)).unwrap();
        assert_eq!(seen, vec![2]);
        assert!(!s.cancel(b), "cancel after fire");
        assert_eq!(s.stats().outstanding(), 0);
    }

    #[test]
    fn run_until_counts_and_sets_clock() {
        let mut s = Scheduler::<u8>::new();
        assert_eq!(s.run_until(SimTime(1000), |_, _| {}), Ok(0));
        assert_eq!(s.now(), SimTime(1000));

        let mut s = Scheduler::new();
        for t in [10, 20, 30] {
            s.schedule(SimTime(t), t).unwrap();
        }
        assert_eq!(s.run_until(SimTime(25), |_, _| {}), Ok(2));
        assert_eq!(s.now(), SimTime(25));
    }

    #[test]
    fn cascade_within_same_run() {
        let mut s = Scheduler::new();
        s.schedule(SimTime(5), 0).unwrap();
        let n = s
            .run_until(SimTime(5), |sch, e| {
                if e == 0 {
                    sch.schedule(sch.now(), 1).unwrap();
                }
            })
            .unwrap();
        assert_eq!(n, 2);
    }

    #[test]
    fn draw_bounds_and_errors() {
        let mut r = RngStream::new(7, 0, Purpose::Backoff);
        for _ in 0..100 {
            assert_eq!(r.draw(1), Ok(0));
        }
        assert_eq!(r.draw(0), Err(KernelError::EmptyRange));
    }

    #[test]
    fn streams_are_reproducible_and_independent() {
        let seq = |seed, node, p| {
            let mut r = RngStream::new(seed, node, p);
            (0..32).map(|_| r.draw(1 << 20).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(seq(1, 3, Purpose::Jitter), seq(1, 3, Purpose::Jitter));
        assert_ne!(seq(1, 3, Purpose::Jitter), seq(2, 3, Purpose::Jitter));
        assert_ne!(seq(1, 3, Purpose::Jitter), seq(1, 4, Purpose::Jitter));
        assert_ne!(seq(1, 3, Purpose::Jitter), seq(1, 3, Purpose::Backoff));

        // Heavy use of one stream leaves another untouched.
        let mut a = RngStream::new(9, 1, Purpose::Backoff);
        for _ in 0..1000 {
            a.draw(10).unwrap();
        }
        assert_eq!(seq(9, 2, Purpose::Backoff), seq(9, 2, Purpose::Backoff));
    }

    #[test]
    fn uniform_mean_matches_oracle() {
        // Uniform over {0..9}: mean 4.5, variance 8.25; standard error of the
        // mean over 1e5 draws is ~0.009, so 0.05 is a > 5 sigma band.
        let mut r = RngStream::new(2024, 0, Purpose::Backoff);
        let n = 100_000;
        let mut counts = [0u64; 10];
        for _ in 0..n {
            counts[r.draw(10).unwrap() as usize] += 1;
        }
        let mean: f64 = counts
            .iter()
            .enumerate()
            .map(|(v, c)| v as f64 * *c as f64)
            .sum::<f64>()
            / n as f64;
        assert!((mean - 4.5).abs() < 0.05, "mean {mean}");
        // Chi-square with 9 dof; 27.88 is the 0.999 quantile.
        let expected = n as f64 / 10.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 27.88, "chi2 {chi2}");
    }

    #[test]
    fn simtime_conversions() {
        assert_eq!(SimTime::from_millis(12), SimTime(12_000));
        assert_eq!(SimTime::from_millis_f64(2.5), SimTime(2_500));
        assert_eq!(SimTime::from_secs_f64(0.25), SimTime(250_000));
        assert_eq!(SimTime(1_500).as_millis_f64(), 1.5);
    }
}
