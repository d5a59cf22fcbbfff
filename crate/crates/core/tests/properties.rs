use std::sync::Arc;

use proptest::prelude::*;

use poivre_core::canvas::{render_markers, MarkerStyle, Raster, Rgb};
use poivre_core::reward::{
    outcome_reward, process_reward_telescoped, process_reward_weighted, turn_weights, RewardConfig,
};
use poivre_core::rollout::{parse_points, run_poivre_frames, ParseFailure, RolloutConfig, ScriptedPolicy};
use poivre_core::task::{ImageRef, PointingTask};
use poivre_core::{Point, TargetRegion};

proptest! {
    #[test]
    fn both_process_forms_agree(
        d in prop::collection::vec(0.0f64..150.0, 1..23),
        gamma in 0.001f64..0.999,
        sigma in prop::sample::select(vec![1.0, 10.0, 100.0]),
    ) {
        let cfg = RewardConfig::new(sigma, gamma, d.len()).unwrap();
        let a = process_reward_telescoped(&d, &cfg).unwrap();
        let b = process_reward_weighted(&d, &cfg).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn process_reward_is_a_convex_combination(
        d in prop::collection::vec(0.0f64..150.0, 1..23),
        gamma in 0.001f64..0.999,
    ) {
        let cfg = RewardConfig::new(10.0, gamma, d.len()).unwrap();
        let w = turn_weights(d.len(), gamma);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let r: Vec<f64> = d.iter().map(|&x| outcome_reward(x, &cfg).unwrap()).collect();
        let v = process_reward_weighted(&d, &cfg).unwrap();
        let lo = r.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
    }

    #[test]
    fn outcome_reward_decreases_with_distance(a in 0.0f64..100.0, b in 0.0f64..100.0) {
        let cfg = RewardConfig::default();
        let (near, far) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(outcome_reward(near, &cfg).unwrap() >= outcome_reward(far, &cfg).unwrap());
    }

    #[test]
    fn distance_is_a_metric(ax in 0.0f64..100.0, ay in 0.0f64..100.0, bx in 0.0f64..100.0, by in 0.0f64..100.0) {
        let (a, b) = (Point::new(ax, ay), Point::new(bx, by));
        prop_assert_eq!(a.distance(&b), b.distance(&a));
        prop_assert_eq!(a.distance(&a), 0.0);
    }

    #[test]
    fn printed_points_parse_back(xs in prop::collection::vec((0u32..=100, 0u32..=100), 1..6)) {
        let json: Vec<String> = xs.iter().map(|(x, y)| format!(r#"{{"x": {x}, "y": {y}}}"#)).collect();
        let text = format!("Here you go: [{}]", json.join(", "));
        let parsed = parse_points(&text).unwrap();
        let expected: Vec<Point> = xs.iter().map(|&(x, y)| Point::new(f64::from(x), f64::from(y))).collect();
        prop_assert_eq!(parsed, expected);
    }

    #[test]
    fn markers_only_touch_pixels_near_the_point(x in 0.0f64..100.0, y in 0.0f64..100.0) {
        let img = Raster::filled(64, 64, Rgb::BLACK).unwrap();
        let style = MarkerStyle::default();
        let out = render_markers(&img, &[Point::new(x, y)], &style);
        let (px, py) = Point::new(x, y).to_pixel(64, 64);
        prop_assert_eq!(out.get(px, py), style.fill);
        let reach = i64::from(style.radius_px + style.outline_px) + 1;
        for row in 0..64u32 {
            for col in 0..64u32 {
                if (i64::from(col) - i64::from(px)).abs() > reach || (i64::from(row) - i64::from(py)).abs() > reach {
                    prop_assert_eq!(out.get(col, row), Rgb::BLACK);
                }
            }
        }
    }
}

fn task() -> PointingTask {
    PointingTask::new(
        "t",
        ImageRef::Raster(Arc::new(Raster::filled(100, 100, Rgb::BLACK).unwrap())),
        "find it",
        vec![TargetRegion::disc(Point::new(70.0, 70.0), 3.0).unwrap()],
    )
    .unwrap()
}

#[test]
fn rollout_produces_one_frame_per_turn_and_keeps_markers() {
    let mut policy = ScriptedPolicy::new(vec![
        vec![Point::new(20.0, 20.0)],
        vec![Point::new(50.0, 50.0)],
        vec![Point::new(70.0, 70.0)],
    ]);
    let task = task();
    let out = run_poivre_frames(&mut policy, &task, &RolloutConfig::with_turns(3)).unwrap();
    assert_eq!(out.frames.len(), 4);
    out.trajectory.verify(&task).unwrap();
    assert_eq!(out.trajectory.final_distance(), 0.0);
    let (p1, q1) = Point::new(20.0, 20.0).to_pixel(100, 100);
    assert_eq!(out.frames[0].get(p1, q1), Rgb::BLACK);
    for f in &out.frames[1..] {
        assert_eq!(f.get(p1, q1), Rgb::BROWN);
    }
}

#[test]
fn rollout_without_persistence_marks_only_the_latest_points() {
    let mut policy = ScriptedPolicy::new(vec![vec![Point::new(20.0, 20.0)], vec![Point::new(60.0, 60.0)]]);
    let cfg = RolloutConfig {
        persist_markers: false,
        ..RolloutConfig::with_turns(2)
    };
    let out = run_poivre_frames(&mut policy, &task(), &cfg).unwrap();
    let (p1, q1) = Point::new(20.0, 20.0).to_pixel(100, 100);
    assert_eq!(out.frames[2].get(p1, q1), Rgb::BLACK);
}

#[test]
fn parse_failures_abort_or_penalize() {
    let script = || {
        ScriptedPolicy::with_failures(vec![Err("no idea".into()), Ok(vec![Point::new(70.0, 70.0)])])
    };
    let err = run_poivre_frames(&mut script(), &task(), &RolloutConfig::with_turns(2)).unwrap_err();
    assert_eq!(err.turn, 1);
    assert_eq!(err.partial.turns(), 0);

    let cfg = RolloutConfig {
        on_parse_failure: ParseFailure::Penalize,
        ..RolloutConfig::with_turns(2)
    };
    let out = run_poivre_frames(&mut script(), &task(), &cfg).unwrap();
    assert_eq!(out.trajectory.failed_turns, vec![0]);
    assert!(out.trajectory.points[0].is_empty());
    assert_eq!(out.trajectory.final_distance(), 0.0);
    assert!(out.trajectory.first_distance() > 100.0);
}
