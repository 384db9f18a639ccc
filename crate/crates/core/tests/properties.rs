use std::collections::BTreeSet;

use openintent_core::eval::{evaluate, prepare_split, UniformRandomScorer};
use openintent_core::features::extract_sequence;
use openintent_core::fixtures::{random_poses, toy_map};
use openintent_core::map::{project_to_lane, IntersectionMap, Point2, Rigid2};
use openintent_core::model::{IntentModel, ModelConfig, Variant};
use openintent_core::sim::{generate_map_with_trajectories, GenConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn map_from(seed: u64, exits: usize, extra_lanes: usize) -> (ChaCha8Rng, IntersectionMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let map = toy_map(&mut rng, exits, exits + extra_lanes);
    (rng, map)
}

fn variant() -> impl Strategy<Value = Variant> {
    prop::sample::select(Variant::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn outputs_are_distributions(seed in any::<u64>(), exits in 2usize..6, extra in 0usize..6, v in variant()) {
        let (mut rng, map) = map_from(seed, exits, extra);
        let model = IntentModel::new(ModelConfig::tiny().with_variant(v), seed).unwrap();
        let frames = extract_sequence(&random_poses(&mut rng, 12, 20.0), &map).unwrap();
        for p in model.predict_sequence(&map, &frames).unwrap() {
            if v.has_lanes() {
                prop_assert_eq!(p.alpha.len(), map.lanes.len());
                prop_assert!((p.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            } else {
                prop_assert!(p.alpha.is_empty());
            }
            prop_assert!((p.beta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.goal_probs.iter().all(|&g| (0.0..=1.0).contains(&g)));
        }
    }

    #[test]
    fn reversing_elements_reverses_outputs(seed in any::<u64>(), exits in 2usize..5, extra in 0usize..5, v in variant()) {
        let (mut rng, map) = map_from(seed, exits, extra);
        let rev = IntersectionMap::from_parts(
            "reversed",
            map.exits.iter().rev().cloned().collect(),
            map.lanes.iter().rev().cloned().collect(),
        );
        let poses = random_poses(&mut rng, 6, 15.0);
        let model = IntentModel::new(ModelConfig::tiny().with_variant(v), seed ^ 1).unwrap();
        let a = model.predict_sequence(&map, &extract_sequence(&poses, &map).unwrap()).unwrap();
        let b = model.predict_sequence(&rev, &extract_sequence(&poses, &rev).unwrap()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (p, q) in x.alpha.iter().zip(y.alpha.iter().rev()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
            for (p, q) in x.beta.iter().zip(y.beta.iter().rev()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn features_ignore_rigid_motion(seed in any::<u64>(), angle in -3.2f64..3.2, tx in -300.0f64..300.0, ty in -300.0f64..300.0) {
        let (mut rng, map) = map_from(seed, 4, 3);
        let tf = Rigid2::new(angle, Point2::new(tx, ty));
        let moved = map.transformed(&tf);
        let poses = random_poses(&mut rng, 8, 15.0);
        let moved_poses: Vec<_> = poses.iter().map(|p| tf.apply_pose(p)).collect();
        let a = extract_sequence(&poses, &map).unwrap();
        let b = extract_sequence(&moved_poses, &moved).unwrap();
        for (fa, fb) in a.iter().zip(&b) {
            for (la, lb) in fa.lane_features.iter().zip(&fb.lane_features) {
                for (x, y) in la.0.iter().zip(&lb.0) {
                    prop_assert!((x - y).abs() < 1e-9, "{x} vs {y}");
                }
            }
            for (ga, gb) in fa.goal_features.iter().zip(&fb.goal_features) {
                for (x, y) in ga.0.iter().zip(&gb.0) {
                    prop_assert!((x - y).abs() < 1e-9, "{x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn projection_offset_is_the_distance_to_the_centerline(seed in any::<u64>(), frac in 0.0f64..1.0, off in -4.0f64..4.0) {
        let (_, map) = map_from(seed, 3, 2);
        let lane = &map.lanes[0];
        let (c, tangent) = lane.point_at(frac * lane.length());
        let p = c + tangent.perp() * off;
        let pose = openintent_core::map::Pose::new(p.x, p.y, tangent.angle(), 0.0);
        let q = project_to_lane(&pose, lane).unwrap();
        prop_assert!((0.0..=lane.length()).contains(&q.s));
        let nearest = (0..=2000)
            .map(|k| (lane.point_at(lane.length() * k as f64 / 2000.0).0 - p).norm())
            .fold(f64::INFINITY, f64::min);
        prop_assert!(q.d.abs() <= nearest + 1e-9);
        prop_assert!(q.d.abs() >= nearest - lane.length() / 2000.0);
    }

    #[test]
    fn generated_labels_are_consistent(seed in 0u64..1000, idx in 0usize..20) {
        let cfg = GenConfig { seed, ..GenConfig::default() };
        let (map, trajs) = generate_map_with_trajectories(&cfg, idx, 6).unwrap();
        for t in &trajs {
            let lane = map.lane_index(&t.true_lane).unwrap();
            let exit = map.exit_index(&t.true_exit).unwrap();
            prop_assert_eq!(map.exit_of_lane(lane), Some(exit));
            prop_assert!(t.poses.windows(2).all(|w| w[1].t > w[0].t));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn false_positives_equal_false_negatives(seed in any::<u64>(), scorer_seed in any::<u64>()) {
        let cfg = GenConfig { seed, ..GenConfig::default() };
        let (map, trajectories) = generate_map_with_trajectories(&cfg, 0, 10).unwrap();
        let seen: BTreeSet<String> = if seed % 2 == 0 { [map.id.clone()].into() } else { BTreeSet::new() };
        let split = openintent_core::sim::Split { maps: vec![map], trajectories };
        let items = prepare_split(&split).unwrap();
        let report = evaluate(&UniformRandomScorer { seed: scorer_seed }, &items, &seen, 1).unwrap();
        prop_assert!(report.self_check().is_ok());
        for c in &report.cells {
            prop_assert_eq!(c.fp, c.fn_);
        }
    }
}
