use afford::affordance::{affordance_from_scene, system_activation, AffordanceConfig, AffordanceVector, Indicator, OtherCar};
use afford::track::TrackGeometry;
use proptest::prelude::*;

const SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
struct Scene {
    track: TrackGeometry,
    station: f64,
    lateral: f64,
    angle: f64,
    others: Vec<OtherCar>,
}

fn scene(lanes: usize) -> impl Strategy<Value = Scene> {
    (
        100.0..700.0f64,
        60.0..250.0f64,
        3.7..5.0f64,
        0.0..1.0f64,
        -1.0..1.0f64,
        -0.4..0.4f64,
        prop::collection::vec((-20.0..90.0f64, -1.1..1.1f64), 0..8),
    )
        .prop_map(move |(straight, radius, w, u, v, angle, cars)| {
            let track = TrackGeometry::oval(straight, radius, lanes, w).unwrap();
            let station = u * track.total_length();
            let half = track.road_half_width(station);
            let others = cars
                .into_iter()
                .map(|(ds, lat)| OtherCar {
                    station: track.normalize_station(station + ds),
                    lateral: lat * half,
                    length: 4.5,
                })
                .collect();
            // stay strictly on the road
            Scene { track, station, lateral: v * (half - 1e-6), angle, others }
        })
}

fn compute(sc: &Scene, cfg: &AffordanceConfig) -> AffordanceVector {
    let frame = sc.track.project(&sc.track.frame_to_pose(sc.station, sc.lateral, sc.angle));
    affordance_from_scene(&sc.track, &frame, 4.5, sc.others.iter().copied(), cfg).unwrap()
}

/// Brute-force nearest car ahead in `lane`, independent of the library's lane lookup.
fn nearest_ahead(sc: &Scene, frame_station: f64, lane: usize, cfg: &AffordanceConfig) -> Option<f64> {
    let w = sc.track.lane_width();
    let n = sc.track.lane_count(frame_station);
    let left_edge = n as f64 * w / 2.0;
    sc.others
        .iter()
        .filter(|c| {
            let hi = left_edge - lane as f64 * w;
            let lo = hi - w;
            // a shared marking belongs to the lane on its right
            c.lateral <= hi && (c.lateral > lo || (lane + 1 == n && c.lateral == lo))
        })
        .map(|c| (c.station - frame_station).rem_euclid(sc.track.total_length()))
        .filter(|g| *g > 0.0 && *g <= cfg.max_range)
        .min_by(f64::total_cmp)
}

fn check(sc: &Scene) -> Result<(), TestCaseError> {
    let cfg = AffordanceConfig::default();
    let track = &sc.track;
    let w = track.lane_width();
    let frame = track.project(&track.frame_to_pose(sc.station, sc.lateral, sc.angle));
    let a = compute(sc, &cfg);
    let th = cfg.thresholds(w).unwrap();
    let act = system_activation(&frame, track, th).unwrap();
    use Indicator::*;

    prop_assert!(a.get(Angle).is_some());
    prop_assert!(act.in_lane_active || act.on_marking_active);

    // independent activation oracle
    let n = track.lane_count(frame.station);
    let lane = frame.lane_index.unwrap();
    let center = (n as f64 - 1.0) / 2.0 * w - lane as f64 * w;
    let marks: Vec<f64> = (0..=n).map(|j| n as f64 * w / 2.0 - j as f64 * w).collect();
    let in_band = (frame.lateral - center).abs() <= th.theta_in;
    let on_band = marks.iter().any(|m| (frame.lateral - m).abs() <= th.theta_on);
    prop_assert_eq!(act.in_lane_active, in_band);
    prop_assert_eq!(act.on_marking_active, on_band);
    prop_assert_eq!(a.in_lane_active(), in_band);
    prop_assert_eq!(a.on_marking_active(), on_band);

    for ind in [ToMarkingLL, ToMarkingML, ToMarkingMR, ToMarkingRR, DistLL, DistMM, DistRR] {
        if !in_band {
            prop_assert!(a.get(ind).is_none(), "{ind:?} active with in-lane system off");
        }
    }
    for ind in [ToMarkingL, ToMarkingM, ToMarkingR, DistL, DistR] {
        if !on_band {
            prop_assert!(a.get(ind).is_none(), "{ind:?} active with on-marking system off");
        }
    }

    if in_band {
        let ml = a.get(ToMarkingML).unwrap();
        let mr = a.get(ToMarkingMR).unwrap();
        prop_assert!(ml >= 0.0 && mr >= 0.0);
        prop_assert!((ml + mr - w).abs() <= SUM_TOL);
        prop_assert_eq!(a.get(ToMarkingLL).is_some(), lane > 0);
        prop_assert_eq!(a.get(ToMarkingRR).is_some(), lane + 1 < n);
        if lane == 0 {
            prop_assert!(a.get(DistLL).is_none());
        }
        if lane + 1 == n {
            prop_assert!(a.get(DistRR).is_none());
        }
        if let Some(ll) = a.get(ToMarkingLL) {
            prop_assert!((ll - ml - w).abs() <= SUM_TOL);
        }
        if let Some(rr) = a.get(ToMarkingRR) {
            prop_assert!((rr - mr - w).abs() <= SUM_TOL);
        }
        prop_assert_eq!(a.get(DistMM), nearest_ahead(sc, frame.station, lane, &cfg));
        if lane > 0 {
            prop_assert_eq!(a.get(DistLL), nearest_ahead(sc, frame.station, lane - 1, &cfg));
        }
        if lane + 1 < n {
            prop_assert_eq!(a.get(DistRR), nearest_ahead(sc, frame.station, lane + 1, &cfg));
        }
    }
    if on_band {
        let m = a.get(ToMarkingM).unwrap();
        prop_assert!(m.abs() <= th.theta_on + 1e-12);
        if let Some(l) = a.get(ToMarkingL) {
            prop_assert!((l - (w - m)).abs() <= SUM_TOL);
        }
        if let Some(r) = a.get(ToMarkingR) {
            prop_assert!((r - (w + m)).abs() <= SUM_TOL);
        }
    }
    for ind in [DistLL, DistMM, DistRR, DistL, DistR] {
        if let Some(d) = a.get(ind) {
            prop_assert!(d > 0.0 && d <= cfg.max_range, "{ind:?} = {d}");
        }
    }

    if in_band && on_band {
        // both systems describe the same markings, so values agree bit for bit
        let k = act.straddled_marking_index.unwrap();
        if k == lane + 1 {
            prop_assert_eq!(a.get(ToMarkingM), a.get(ToMarkingMR));
            prop_assert_eq!(a.get(ToMarkingL), a.get(ToMarkingML));
            prop_assert_eq!(a.get(ToMarkingR), a.get(ToMarkingRR));
            prop_assert_eq!(a.get(DistL), a.get(DistMM));
            prop_assert_eq!(a.get(DistR), a.get(DistRR));
        } else {
            prop_assert_eq!(k, lane);
            prop_assert_eq!(a.get(ToMarkingM), a.get(ToMarkingML).map(|v| -v));
            prop_assert_eq!(a.get(ToMarkingR), a.get(ToMarkingMR));
            prop_assert_eq!(a.get(ToMarkingL), a.get(ToMarkingLL));
            prop_assert_eq!(a.get(DistR), a.get(DistMM));
            prop_assert_eq!(a.get(DistL), a.get(DistLL));
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100_000))]

    #[test]
    fn invariants_one_lane(sc in scene(1)) { check(&sc)?; }

    #[test]
    fn invariants_two_lanes(sc in scene(2)) { check(&sc)?; }

    #[test]
    fn invariants_three_lanes(sc in scene(3)) { check(&sc)?; }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn indicators_are_continuous_across_overlap(
        lanes in 2usize..=3,
        w in 3.7..5.0f64,
        start_lane in 0usize..2,
        angle in -0.2..0.2f64,
    ) {
        let track = TrackGeometry::straight_road(2000.0, lanes, w).unwrap();
        let cfg = AffordanceConfig::default();
        let start_lane = start_lane.min(lanes - 2);
        let start = track.lane_center_lateral(0.0, start_lane).unwrap();
        let end = track.lane_center_lateral(0.0, start_lane + 1).unwrap();
        let others = [OtherCar { station: 540.0, lateral: end, length: 4.5 }, OtherCar { station: 530.0, lateral: start, length: 4.5 }];
        let steps = 2000;
        let step = (end - start) / steps as f64;
        let mut prev: Option<AffordanceVector> = None;
        for i in 0..=steps {
            let frame = track.project(&track.frame_to_pose(500.0, start + i as f64 * step, angle));
            let a = affordance_from_scene(&track, &frame, 4.5, others, &cfg).unwrap();
            if let Some(p) = prev {
                for ind in Indicator::ALL {
                    if let (Some(x), Some(y)) = (p.get(ind), a.get(ind)) {
                        prop_assert!((x - y).abs() <= step.abs() + 1e-9, "{ind:?} jumps {x} -> {y}");
                    }
                }
            }
            prev = Some(a);
        }
    }

    #[test]
    fn dist_mm_grows_then_goes_inactive(lanes in 1usize..=3, w in 3.7..5.0f64) {
        let track = TrackGeometry::straight_road(2000.0, lanes, w).unwrap();
        let cfg = AffordanceConfig::default();
        let lat = track.lane_center_lateral(0.0, 0).unwrap();
        let frame = track.project(&track.frame_to_pose(100.0, lat, 0.0));
        let mut last = 0.0;
        let mut gone = false;
        for i in 1..=800 {
            let gap = i as f64 * 0.1;
            let car = OtherCar { station: 100.0 + gap, lateral: lat, length: 4.5 };
            let a = affordance_from_scene(&track, &frame, 4.5, [car], &cfg).unwrap();
            match a.get(Indicator::DistMM) {
                Some(d) => {
                    prop_assert!(!gone && d > last);
                    last = d;
                }
                None => {
                    prop_assert!(gap > cfg.max_range);
                    gone = true;
                }
            }
        }
        prop_assert!(gone);
    }
}
