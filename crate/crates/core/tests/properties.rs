//! Property tests for the invariants the simulator relies on.

use macsim_core::energy::{EnergyLedger, PowerProfile};
use macsim_core::harness::{iqr, kendall_tau, median, simulate, ExperimentConfig, ProtocolKind};
use macsim_core::kernel::Scheduler;
use macsim_core::mac::preamble::{block_data_start, preamble_len, theta_ppb};
use macsim_core::mac::sync::SleepSchedule;
use macsim_core::mac::NavTimer;
use macsim_core::radio::{ClockModel, RadioState};
use macsim_core::workload::{
    build_gathering_tree, build_grid, generate_convergecast, generate_local_gossip, Pattern, TrafficSpec,
};
use macsim_core::SimTime;
use proptest::prelude::*;

const STATES: [RadioState; 4] = [RadioState::Tx, RadioState::Rx, RadioState::Listen, RadioState::Sleep];

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn kernel_pops_by_time_then_insertion(times in prop::collection::vec(0u64..50, 1..200)) {
        let mut k = Scheduler::new();
        for (i, &t) in times.iter().enumerate() {
            k.schedule(SimTime(t), i).unwrap();
        }
        let mut expected: Vec<(u64, usize)> = times.iter().copied().zip(0..).collect();
        expected.sort();
        let mut got = Vec::new();
        while let Some((t, i)) = k.pop_due(SimTime::MAX) {
            got.push((t.ticks(), i));
        }
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn cancelled_events_never_fire(
        times in prop::collection::vec(0u64..1_000, 1..100),
        mask in prop::collection::vec(any::<bool>(), 100),
    ) {
        let mut k = Scheduler::new();
        let handles: Vec<_> = times.iter().enumerate().map(|(i, &t)| k.schedule(SimTime(t), i).unwrap()).collect();
        for (i, h) in handles.iter().enumerate() {
            if mask[i] {
                prop_assert!(k.cancel(*h));
                prop_assert!(!k.cancel(*h));
            }
        }
        let mut fired = Vec::new();
        while let Some((_, i)) = k.pop_due(SimTime::MAX) {
            fired.push(i);
        }
        fired.sort();
        let kept: Vec<usize> = (0..times.len()).filter(|&i| !mask[i]).collect();
        prop_assert_eq!(fired, kept);
    }

    #[test]
    fn scheduling_into_the_past_is_rejected(now in 1u64..1_000_000, back in 1u64..1_000) {
        let mut k: Scheduler<()> = Scheduler::new();
        k.advance_to(SimTime(now)).unwrap();
        prop_assert!(k.schedule(SimTime(now.saturating_sub(back)), ()).is_err());
        prop_assert!(k.schedule(SimTime(now), ()).is_ok());
    }

    #[test]
    fn ledger_matches_hand_integration(steps in prop::collection::vec((0usize..4, 0u64..100_000), 0..60)) {
        let profile = PowerProfile::default();
        let mut ledger = EnergyLedger::new(profile, 1, RadioState::Sleep);
        let mut now = 0u64;
        let mut state = RadioState::Sleep;
        let mut fj: u128 = 0;
        let mut per_state = [0u64; 4];
        for &(s, dt) in &steps {
            now += dt;
            fj += profile.nanowatts(state) as u128 * dt as u128;
            per_state[state.index()] += dt;
            state = STATES[s];
            ledger.note_transition(0, state, SimTime(now)).unwrap();
        }
        let end = now + 12_345;
        fj += profile.nanowatts(state) as u128 * 12_345;
        per_state[state.index()] += 12_345;
        prop_assert_eq!(ledger.total_energy_fj(0, SimTime(end)), fj);
        let covered: u64 = STATES.iter().map(|&s| ledger.time_in(0, s, SimTime(end)).ticks()).sum();
        prop_assert_eq!(covered, end);
        for s in STATES {
            prop_assert_eq!(ledger.time_in(0, s, SimTime(end)).ticks(), per_state[s.index()]);
        }
    }

    #[test]
    fn ledger_rejects_time_regression(at in 1u64..1_000_000, back in 1u64..1_000) {
        let mut ledger = EnergyLedger::new(PowerProfile::default(), 1, RadioState::Sleep);
        ledger.note_transition(0, RadioState::Listen, SimTime(at)).unwrap();
        prop_assert!(ledger.note_transition(0, RadioState::Sleep, SimTime(at.saturating_sub(back))).is_err());
    }

    #[test]
    fn nav_keeps_the_latest_reservation(sets in prop::collection::vec((0u64..10_000, 0u64..50_000), 0..40)) {
        let mut nav = NavTimer::default();
        let mut now = 0;
        let mut want = 0;
        for &(dt, dur) in &sets {
            now += dt;
            nav.set(SimTime(now), SimTime(dur));
            if dur > 0 {
                want = want.max(now + dur);
            }
            prop_assert_eq!(nav.until, SimTime(want));
            prop_assert_eq!(nav.active(SimTime(now)), now < want);
        }
    }

    #[test]
    fn sleep_schedule_next_start_is_the_nearest_active_start(
        frame in 2u64..1_000_000,
        active_frac in 0.01f64..0.99,
        phase in 0u64..2_000_000,
        t in 0u64..10_000_000,
    ) {
        let active = ((frame as f64 * active_frac) as u64).clamp(1, frame - 1);
        let s = SleepSchedule::new(SimTime(frame), SimTime(active), SimTime(phase));
        let n = s.next_start(SimTime(t));
        prop_assert!(n >= SimTime(t));
        prop_assert!(n.ticks() - t < frame.max(s.phase.ticks() + 1));
        prop_assert!(s.is_active(n));
        prop_assert_eq!(n.ticks() % frame, s.phase.ticks());
        if let Some(l) = s.last_start(SimTime(t)) {
            prop_assert!(l <= SimTime(t) && t - l.ticks() < frame);
            prop_assert_eq!(s.is_active(SimTime(t)), t - l.ticks() < active);
        } else {
            prop_assert!(!s.is_active(SimTime(t)));
        }
    }

    /// A receiver's true sample lies inside the centered short preamble
    /// whenever both clocks stay within the tolerance.
    #[test]
    fn wisemac_preamble_covers_drifted_sample(
        drift_s in -30.0f64..30.0,
        drift_r in -30.0f64..30.0,
        learn_at in 0u64..100_000_000,
        periods in 1u64..4_000,
    ) {
        let tw = SimTime::from_millis(100);
        let ppb = theta_ppb(30.0);
        let (cs, cr) = (ClockModel::new(drift_s), ClockModel::new(drift_r));
        let g0 = SimTime(learn_at);
        let elapsed = tw * periods;
        let predicted = cs.to_global(cs.local_time(g0) + elapsed);
        let actual = cr.to_global(cr.local_time(g0) + elapsed);
        let tp = preamble_len(ppb, elapsed, tw);
        if tp < tw {
            let err = predicted.ticks().abs_diff(actual.ticks());
            // Two ticks absorb the rounding of both clock conversions.
            prop_assert!(err <= tp.ticks() / 2 + 2, "err {} tp {}", err, tp.ticks());
        }
    }

    #[test]
    fn preamble_len_is_monotone_and_capped(a in 0u64..10_000_000_000, b in 0u64..10_000_000_000, ppm in 0.0f64..100.0) {
        let tw = SimTime::from_millis(250);
        let ppb = theta_ppb(ppm);
        let (lo, hi) = (a.min(b), a.max(b));
        let (p_lo, p_hi) = (preamble_len(ppb, SimTime(lo), tw), preamble_len(ppb, SimTime(hi), tw));
        prop_assert!(p_lo <= p_hi && p_hi <= tw);
        let exact = (4.0 * ppb as f64 * 1e-9 * hi as f64).min(tw.ticks() as f64);
        prop_assert!((p_hi.ticks() as f64 - exact).abs() <= 0.5 + exact * 1e-9);
    }

    #[test]
    fn every_block_points_at_the_same_data_start(t0 in 0u64..1_000_000_000, n in 1u32..2_000, len in 1u64..10_000) {
        let block = SimTime(len);
        let data = SimTime(t0) + block * n as u64;
        for i in [0, n / 2, n - 1] {
            let end = SimTime(t0) + block * (i as u64 + 1);
            prop_assert_eq!(block_data_start(end, n - 1 - i, block), data);
        }
    }

    #[test]
    fn grid_links_are_exactly_the_pairs_in_range(rows in 1usize..7, cols in 1usize..7, spacing in 1.0f64..20.0, extra in 0.0f64..2.0) {
        let range = spacing * (1.0 + extra);
        let topo = build_grid(rows, cols, spacing, range).unwrap();
        for a in 0..topo.len() {
            prop_assert!(!topo.is_linked(a, a));
            for b in 0..topo.len() {
                if a == b {
                    continue;
                }
                let (pa, pb) = (topo.position(a), topo.position(b));
                let d = ((pa.0 - pb.0).powi(2) + (pa.1 - pb.1).powi(2)).sqrt();
                prop_assert_eq!(topo.is_linked(a, b), d <= range);
                prop_assert_eq!(topo.is_linked(a, b), topo.is_linked(b, a));
            }
        }
    }

    #[test]
    fn gathering_tree_follows_shortest_hops(rows in 1usize..7, cols in 1usize..7, sink_pick in 0usize..49) {
        let topo = build_grid(rows, cols, 10.0, 10.0).unwrap();
        let sink = sink_pick % topo.len();
        let tree = build_gathering_tree(&topo, sink).unwrap();
        prop_assert_eq!(tree.parent[sink], None);
        for node in 0..topo.len() {
            // With range equal to spacing only axis neighbors link.
            let (r, c, rs, cs) = (node / cols, node % cols, sink / cols, sink % cols);
            prop_assert_eq!(tree.depth[node] as usize, r.abs_diff(rs) + c.abs_diff(cs));
            if let Some(p) = tree.parent[node] {
                prop_assert!(topo.is_linked(node, p));
                prop_assert_eq!(tree.depth[p] + 1, tree.depth[node]);
            }
            let path = tree.path_to_root(node);
            prop_assert_eq!(path.len() as u32, tree.depth[node] + 1);
            prop_assert_eq!(*path.last().unwrap(), sink);
        }
    }

    #[test]
    fn traffic_stays_in_window_and_follows_the_tree(seed in any::<u64>(), ia_ms in 50u64..20_000, gossip in any::<bool>()) {
        let topo = build_grid(4, 4, 10.0, 10.0).unwrap();
        let tree = build_gathering_tree(&topo, 0).unwrap();
        let spec = TrafficSpec {
            pattern: if gossip { Pattern::LocalGossip } else { Pattern::Convergecast },
            interarrival: SimTime::from_millis(ia_ms),
            start: SimTime::from_secs(5),
            duration: SimTime::from_secs(60),
            seed,
        };
        let gen = |s: &TrafficSpec| if gossip { generate_local_gossip(s, &topo) } else { generate_convergecast(s, &tree) };
        let out = gen(&spec);
        prop_assert_eq!(&out, &gen(&spec));
        for w in out.windows(2) {
            prop_assert!((w[0].at, w[0].node) <= (w[1].at, w[1].node));
        }
        for o in &out {
            prop_assert!(o.at >= spec.start && o.at < spec.start + spec.duration);
            prop_assert!(topo.is_linked(o.node, o.next_hop));
            if gossip {
                prop_assert_eq!(o.final_dst, o.next_hop);
            } else {
                prop_assert_eq!(Some(o.next_hop), tree.parent[o.node]);
                prop_assert_eq!(o.final_dst, 0);
            }
        }
    }

    #[test]
    fn median_and_iqr_are_order_free_and_bounded(mut xs in prop::collection::vec(-1e6f64..1e6, 1..50), rot in 0usize..50) {
        let m = median(&xs);
        let q = iqr(&xs);
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= m && m <= hi);
        prop_assert!(q >= 0.0 && q <= hi - lo + 1e-9);
        let k = rot % xs.len();
        xs.rotate_left(k);
        xs.reverse();
        prop_assert_eq!(median(&xs), m);
        prop_assert!((iqr(&xs) - q).abs() < 1e-9);
    }

    #[test]
    fn kendall_tau_is_bounded_and_antisymmetric(pairs in prop::collection::vec((-100i32..100, -100i32..100), 2..40)) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        let t = kendall_tau(&x, &y);
        prop_assert!((-1.0..=1.0).contains(&t));
        prop_assert!((kendall_tau(&y, &x) - t).abs() < 1e-12);
        prop_assert!((kendall_tau(&x, &neg) + t).abs() < 1e-12);
        if x.windows(2).any(|w| w[0] != w[1]) {
            prop_assert!((kendall_tau(&x, &x) - 1.0).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 14, failure_persistence: None, ..ProptestConfig::default() })]

    /// Every payload ends up delivered, dropped or still queued, and the
    /// reported ratio agrees with the counts.
    #[test]
    fn delivery_accounting_balances(kind_i in 0usize..7, seed in 1u64..1_000, ia in 0.5f64..20.0, gossip in any::<bool>()) {
        let kind = ProtocolKind::ALL[kind_i];
        let mut cfg = ExperimentConfig::default_for(kind).with_interarrival(ia);
        cfg.sim.duration_s = 30.0;
        cfg.traffic.start_s = 2.0;
        cfg.topology.rows = 3;
        cfg.topology.cols = 3;
        if gossip && kind != ProtocolKind::Dmac {
            cfg.traffic.pattern = Pattern::LocalGossip;
        }
        let out = simulate(&cfg, seed, false).unwrap();
        let s = out.summary;
        prop_assert_eq!(s.delivered + s.dropped + s.in_flight, s.originated);
        prop_assert_eq!(out.row.originated, s.originated);
        prop_assert_eq!(out.row.delivered, s.delivered);
        let ratio = out.row.delivery_ratio;
        prop_assert!((0.0..=1.0).contains(&ratio));
        if s.originated > 0 {
            prop_assert!((ratio - s.delivered as f64 / s.originated as f64).abs() < 1e-12);
        }
        prop_assert!(out.row.avg_node_energy_mj > 0.0);
        prop_assert!((out.row.total_energy_mj - out.row.avg_node_energy_mj * 9.0).abs() < 1e-6 * out.row.total_energy_mj);
    }
}
