use afford::track::{parse_track, wrap_angle, LaneSection, Segment, TrackGeometry};
use proptest::prelude::*;

fn oval_strategy() -> impl Strategy<Value = TrackGeometry> {
    (50.0..800.0f64, 40.0..300.0f64, 1usize..=3, 3.7..5.0f64)
        .prop_map(|(straight, radius, lanes, w)| TrackGeometry::oval(straight, radius, lanes, w).unwrap())
}

/// Open roads of alternating straights and gentle arcs.
fn open_strategy() -> impl Strategy<Value = TrackGeometry> {
    (
        prop::collection::vec((20.0..300.0f64, -0.01..0.01f64), 1..6),
        prop::collection::vec(1usize..=3, 1..3),
        3.7..5.0f64,
    )
        .prop_map(|(parts, lanes, w)| {
            let mut segs = Vec::new();
            for (len, k) in parts {
                segs.push(Segment::straight(len));
                if k.abs() > 1e-4 {
                    // at most ~45 degrees per arc
                    let len = len.min(0.78 / k.abs());
                    segs.push(Segment::arc(len, k));
                }
            }
            let mut profile = vec![LaneSection { start_station: 0.0, lane_count: lanes[0] }];
            if lanes.len() > 1 && segs.len() > 1 {
                let start = segs[0].length;
                profile.push(LaneSection { start_station: start, lane_count: lanes[1] });
            }
            TrackGeometry::new("open", segs, false, profile, w).unwrap()
        })
}

fn any_track() -> impl Strategy<Value = TrackGeometry> {
    prop_oneof![oval_strategy(), open_strategy()]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn text_round_trip_is_exact(track in any_track()) {
        let back = parse_track(&track.to_string(), "x").unwrap();
        prop_assert_eq!(back.segments(), track.segments());
        prop_assert_eq!(back.lane_profile(), track.lane_profile());
        prop_assert_eq!(back.lane_width(), track.lane_width());
        prop_assert_eq!(back.is_closed(), track.is_closed());
        prop_assert_eq!(back.name(), track.name());
    }

    #[test]
    fn marking_spacing_is_lane_width(track in any_track(), u in 0.0..1.0f64) {
        let s = u * track.total_length();
        let m = track.marking_laterals(s);
        prop_assert_eq!(m.len(), track.lane_count(s) + 1);
        for pair in m.windows(2) {
            prop_assert!((pair[0] - pair[1] - track.lane_width()).abs() < 1e-12);
        }
        prop_assert!((m[0] + m[m.len() - 1]).abs() < 1e-12);
    }

    #[test]
    fn forward_gap_properties(track in oval_strategy(), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let total = track.total_length();
        let (sa, sb) = (a * total, b * total);
        let g = track.forward_gap(sa, sb).unwrap();
        prop_assert!((0.0..total).contains(&g));
        prop_assert_eq!(track.forward_gap(sa, sa), Some(0.0));
        if sa != sb {
            let back = track.forward_gap(sb, sa).unwrap();
            prop_assert!((g + back - total).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100_000))]

    #[test]
    fn frame_round_trip(track in any_track(), u in 0.0..1.0f64, v in -1.0..1.0f64, angle in -0.6..0.6f64) {
        let s = u * track.total_length();
        let half = track.road_half_width(s);
        let l = v * half;
        let frame = track.project(&track.frame_to_pose(s, l, angle));
        let ds = if track.is_closed() {
            let d = (frame.station - s).abs();
            d.min(track.total_length() - d)
        } else {
            (frame.station - s).abs()
        };
        prop_assert!(ds < 1e-6, "station {} vs {}", frame.station, s);
        prop_assert!((frame.lateral - l).abs() < 1e-6, "lateral {} vs {}", frame.lateral, l);
        prop_assert!(wrap_angle(frame.angle - angle).abs() < 1e-6);
        prop_assert!((-std::f64::consts::PI..=std::f64::consts::PI).contains(&frame.angle));
        prop_assert_eq!(frame.lane_index.is_some(), frame.lateral.abs() <= half);
    }
}

#[test]
fn closed_track_is_continuous_across_wrap() {
    let track = TrackGeometry::oval(500.0, 150.0, 3, 4.0).unwrap();
    let total = track.total_length();
    for l in [-5.0, 0.0, 3.0] {
        let before = track.frame_to_pose(total - 1e-7, l, 0.0);
        let after = track.frame_to_pose(1e-7, l, 0.0);
        assert!((before.x - after.x).hypot(before.y - after.y) < 1e-5);
        assert!(wrap_angle(before.heading - after.heading).abs() < 1e-6);
        let a = track.project(&before);
        let b = track.project(&after);
        assert!(a.station > total - 1e-3 || a.station < 1e-3);
        assert!(b.station < 1e-3 || b.station > total - 1e-3);
        assert!((a.lateral - l).abs() < 1e-6 && (b.lateral - l).abs() < 1e-6);
    }
}
