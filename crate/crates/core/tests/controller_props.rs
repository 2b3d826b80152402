use std::sync::Arc;

use afford::affordance::{AffordanceVector, Indicator};
use afford::controller::{
    decide, following_fixed_point, following_speed, steering_command, ControllerConfig, ControllerState, DriveMode,
};
use afford::perception::Perceiver;
use afford::session::{Session, SessionConfig};
use afford::sim::{CarState, TrafficBehavior, VehicleParams, WorldState, EGO_ID};
use afford::track::TrackGeometry;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn following_speed_is_monotone(
        a in 0.0..500.0f64,
        b in 0.0..500.0f64,
        v_max in 1.0..40.0f64,
        c in 0.1..5.0f64,
        d in 0.0..1.0f64,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(following_speed(lo, v_max, c, d) <= following_speed(hi, v_max, c, d));
    }

    #[test]
    fn steering_is_zero_exactly_at_equilibrium(
        dist in -6.0..6.0f64,
        w in 3.7..12.0f64,
        gain in 0.1..5.0f64,
        nudge in 1e-6..1e-2f64,
    ) {
        let angle = dist / w;
        prop_assert_eq!(steering_command(angle, dist, w, gain), 0.0);
        prop_assert!(steering_command(angle + nudge, dist, w, gain) > 0.0);
        prop_assert!(steering_command(angle - nudge, dist, w, gain) < 0.0);
    }

    #[test]
    fn never_changes_into_an_occupied_lane(
        lane in 0usize..3,
        offset in -0.8..0.8f64,
        dists in prop::array::uniform3(prop::option::of(1.0..60.0f64)),
        timers in prop::array::uniform2(0.0..6.0f64),
        prior in 0usize..4,
    ) {
        let w = 4.0;
        let n = 3;
        let mut a = AffordanceVector::default();
        a.set(Indicator::Angle, Some(0.0));
        let ml = w / 2.0 + offset;
        a.set(Indicator::ToMarkingML, Some(ml));
        a.set(Indicator::ToMarkingMR, Some(w - ml));
        if lane > 0 {
            a.set(Indicator::ToMarkingLL, Some(ml + w));
            a.set(Indicator::DistLL, dists[0]);
        }
        if lane + 1 < n {
            a.set(Indicator::ToMarkingRR, Some(w - ml + w));
            a.set(Indicator::DistRR, dists[2]);
        }
        a.set(Indicator::DistMM, dists[1]);
        let mode = [DriveMode::Normal, DriveMode::SlowDown, DriveMode::ChangeLeft, DriveMode::ChangeRight][prior];
        let state = ControllerState { mode, lane_clear_timers: timers, ..Default::default() };
        let cfg = ControllerConfig::default();
        let (decision, next) = decide(&a, &state, &cfg, 0.1).unwrap();
        match decision.mode {
            DriveMode::ChangeLeft if !mode.is_change() => {
                prop_assert!(lane > 0);
                prop_assert!(dists[0].is_none_or(|d| d >= cfg.safe_gap));
            }
            DriveMode::ChangeRight if !mode.is_change() => {
                prop_assert!(lane + 1 < n);
                prop_assert!(dists[2].is_none_or(|d| d >= cfg.safe_gap));
            }
            _ => {}
        }
        if decision.mode.is_change() {
            prop_assert!(next.target_offset.is_some());
        }
    }
}

#[test]
fn following_speed_limits() {
    for (v_max, c) in [(20.0, 1.0), (33.0, 0.5), (10.0, 3.0)] {
        assert_eq!(following_speed(0.0, v_max, c, 0.0), 0.0);
        let far = following_speed(1e4, v_max, c, 0.0);
        assert!((v_max - far) / v_max < 1e-8);
        let mut fixed = 0.0;
        for v in [1.0, 5.0, 0.9 * v_max] {
            fixed = following_fixed_point(v, v_max, c, 0.0).unwrap();
            assert!((following_speed(fixed, v_max, c, 0.0) - v).abs() < 1e-9);
        }
        assert!(fixed > 0.0);
    }
}

fn single_lane(cars: Vec<CarState>, traffic: Vec<(u32, TrafficBehavior)>) -> Session {
    let track = Arc::new(TrackGeometry::straight_road(20_000.0, 1, 4.0).unwrap());
    let world = WorldState::new(track, cars, 0, VehicleParams::default(), 0.01).unwrap();
    Session::new(world, traffic, Perceiver::Oracle, SessionConfig::default()).unwrap()
}

#[test]
fn ego_settles_at_the_following_fixed_point() {
    let track = TrackGeometry::straight_road(20_000.0, 1, 4.0).unwrap();
    let v = VehicleParams::default();
    let leader_speed = 30.0 / 3.6;
    let ego = CarState::at_frame(&track, EGO_ID, 100.0, 0.0, 15.0, &v, true);
    let leader = CarState::at_frame(&track, 1, 200.0, 0.0, leader_speed, &v, false);
    let mut s = single_lane(vec![ego, leader], vec![(1, TrafficBehavior { lane: 0, set_speed: leader_speed, lane_changes: vec![] })]);
    let rows = s.run(1200, |_, _| {}).unwrap();
    assert!(rows.iter().all(|r| r.new_collisions == 0));
    let gap = s.world.car(1).unwrap().station() - s.world.ego().station();
    let cfg = ControllerConfig::default();
    let expected = following_fixed_point(leader_speed, cfg.v_max, cfg.c, cfg.d).unwrap();
    assert!((gap - expected).abs() / expected < 0.05, "gap {gap} vs fixed point {expected}");
    assert!((s.world.ego().speed - leader_speed).abs() < 0.05);
}

#[test]
fn traffic_platoon_settles_without_collision() {
    let track = TrackGeometry::straight_road(20_000.0, 1, 4.0).unwrap();
    let v = VehicleParams::default();
    let slow = 25.0 / 3.6;
    let ego = CarState::at_frame(&track, EGO_ID, 0.0, 0.0, 0.0, &v, true);
    let mut cars = vec![ego];
    let mut traffic = vec![];
    for i in 0..6u32 {
        let station = 500.0 - 40.0 * i as f64;
        let speed = if i == 0 { slow } else { 15.0 };
        cars.push(CarState::at_frame(&track, i + 1, station, 0.0, speed, &v, false));
        traffic.push((i + 1, TrafficBehavior { lane: 0, set_speed: speed, lane_changes: vec![] }));
    }
    let mut s = single_lane(cars, traffic);
    s.set_pilot(afford::session::Pilot::Manual);
    let rows = s.run(1200, |_, _| {}).unwrap();
    assert!(rows.iter().all(|r| r.new_collisions == 0));
    let cfg = ControllerConfig::default();
    let expected = following_fixed_point(slow, cfg.v_max, cfg.c, cfg.d).unwrap();
    for i in 2..=6u32 {
        let gap = s.world.car(i - 1).unwrap().station() - s.world.car(i).unwrap().station();
        assert!((gap - expected).abs() / expected < 0.05, "car {i} gap {gap} vs {expected}");
        assert!((s.world.car(i).unwrap().speed - slow).abs() < 0.05);
    }
}
