//! Property tests across modules.

mod common;

use std::f64::consts::TAU;

use cfear::evaluation::{evaluate_drift, format_trajectory, parse_trajectory, StampedPose, Trajectory};
use cfear::features::{compute_surface_points, motion_compensate};
use cfear::filtering::{k_strongest, FilterConfig, FilteredPoint};
use cfear::odometry::KeyframeQueue;
use cfear::registration::ResidualMetric;
use cfear::registration::{evaluate_cost, HashGrid, RobustLoss, Target};
use cfear::scan_io::{format_polar_csv, parse_polar_csv, PolarScan};
use cfear::{Pose2, Twist2};
use nalgebra::{Matrix2, Vector2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_scan(rng: &mut impl Rng, max_az: usize, max_bins: usize, levels: u32) -> PolarScan {
    let n_az = rng.random_range(1..=max_az);
    let n_bins = rng.random_range(1..=max_bins);
    let intensities = (0..n_az * n_bins)
        .map(|_| rng.random_range(0..=levels) as f32 / levels as f32)
        .collect();
    let mut angles: Vec<f64> = (0..n_az)
        .map(|i| (i as f64 + rng.random_range(0.0..0.9)) * TAU / n_az as f64)
        .collect();
    angles.dedup();
    let n_az = angles.len();
    let t0 = rng.random_range(0.0..100.0);
    let times = (0..n_az).map(|i| t0 + i as f64 * 0.25 / n_az as f64).collect();
    PolarScan::new(
        intensities,
        n_bins,
        angles,
        times,
        rng.random_range(0.04..0.5),
        rng.random_range(0.0..2.0),
        rng.random_range(0..1000),
    )
    .unwrap()
}

fn random_filtered(rng: &mut impl Rng, n: usize, extent: f64) -> Vec<FilteredPoint> {
    (0..n)
        .map(|i| FilteredPoint {
            position: Vector2::new(rng.random_range(-extent..extent), rng.random_range(-extent..extent)),
            intensity: rng.random_range(0.3..1.0),
            time: rng.random_range(0.0..0.25),
            azimuth_index: i,
            range_bin: i,
        })
        .collect()
}

fn random_trajectory(rng: &mut impl Rng, n: usize) -> Trajectory {
    let mut pose = Pose2::IDENTITY;
    let mut poses = Vec::with_capacity(n);
    for i in 0..n {
        poses.push(StampedPose {
            time: i as f64 * 0.25,
            pose,
        });
        pose = pose.compose(&Pose2::new(
            rng.random_range(1.5..3.0),
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.08..0.08),
        ));
    }
    Trajectory::new(poses).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filter_matches_full_sort(seed in any::<u64>(), k in 1usize..10, z in 0.0f32..0.95, r_min in 0.0f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scan = random_scan(&mut rng, 6, 50, 8);
        let cfg = FilterConfig { k, z_min: z, r_min };
        let got: Vec<(usize, usize)> = k_strongest(&scan, &cfg).iter().map(|p| (p.azimuth_index, p.range_bin)).collect();
        prop_assert_eq!(got, common::filter_oracle(&scan, &cfg));
    }

    #[test]
    fn filter_is_monotone(seed in any::<u64>(), k in 1usize..10, dk in 0usize..5, z in 0.0f32..0.9, dz in 0.0f32..0.09) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scan = random_scan(&mut rng, 5, 40, 6);
        let key = |p: &FilteredPoint| (p.azimuth_index, p.range_bin);
        let base: Vec<_> = k_strongest(&scan, &FilterConfig { k: k + dk, z_min: z, r_min: 0.0 }).iter().map(key).collect();
        let stricter: Vec<_> = k_strongest(&scan, &FilterConfig { k, z_min: z + dz, r_min: 0.0 }).iter().map(key).collect();
        prop_assert!(stricter.iter().all(|p| base.contains(p)));
        prop_assert!(stricter.len() <= k * scan.n_azimuths());
    }

    #[test]
    fn filtered_points_satisfy_invariants(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scan = random_scan(&mut rng, 6, 60, 10);
        let cfg = FilterConfig { k: 5, z_min: 0.2, r_min: 0.0 };
        let max_r = scan.range_offset() + scan.n_bins() as f64 * scan.range_resolution();
        for p in k_strongest(&scan, &cfg) {
            prop_assert!(p.intensity > cfg.z_min);
            let r = p.position.norm();
            prop_assert!(r >= scan.range_offset() - 1e-9 && r <= max_r + 1e-9);
            prop_assert_eq!(p.time, scan.azimuth_times()[p.azimuth_index]);
        }
    }

    #[test]
    fn csv_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scan = random_scan(&mut rng, 8, 30, 255);
        let back = parse_polar_csv(&format_polar_csv(&scan)).unwrap();
        prop_assert_eq!(back, scan);
    }

    #[test]
    fn compensation_inverts(seed in any::<u64>(), vx in -20.0f64..20.0, vy in -5.0f64..5.0, w in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_filtered(&mut rng, 50, 80.0);
        let tw = Twist2::new(vx, vy, w);
        let t_ref = 0.125;
        let there = motion_compensate(&pts, &tw, t_ref);
        let back = motion_compensate(&there, &tw.scale(-1.0), t_ref);
        for (a, b) in pts.iter().zip(&back) {
            prop_assert!((a.position - b.position).norm() < 1e-9);
            prop_assert_eq!(a.intensity, b.intensity);
            prop_assert_eq!(a.azimuth_index, b.azimuth_index);
        }
    }

    #[test]
    fn surface_points_translate_with_grid_multiples(seed in any::<u64>(), i in -20i64..20, j in -20i64..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_filtered(&mut rng, 400, 12.0);
        let res = 3.0;
        let c = Vector2::new(i as f64 * res, j as f64 * res);
        let moved: Vec<FilteredPoint> = pts.iter().map(|p| FilteredPoint { position: p.position + c, ..*p }).collect();
        let a = compute_surface_points(&pts, res, 6);
        let b = compute_surface_points(&moved, res, 6);
        prop_assert_eq!(a.len(), b.len());
        for (p, q) in a.points.iter().zip(&b.points) {
            prop_assert!((p.mean + c - q.mean).norm() < 1e-9);
            prop_assert!((p.covariance - q.covariance).norm() < 1e-9);
            prop_assert!(p.normal.dot(&q.normal).abs() > 1.0 - 1e-9);
            prop_assert_eq!(p.support, q.support);
        }
    }

    #[test]
    fn surface_points_rotate_by_quarter_turns(seed in any::<u64>(), quarter in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_filtered(&mut rng, 400, 12.0);
        // exact quarter turns keep cell boundaries on cell boundaries
        let rot = (0..quarter).fold(Matrix2::identity(), |m, _| Matrix2::new(0.0, -1.0, 1.0, 0.0) * m);
        let turned: Vec<FilteredPoint> = pts.iter().map(|p| FilteredPoint { position: rot * p.position, ..*p }).collect();
        let a = compute_surface_points(&pts, 3.0, 6);
        let b = compute_surface_points(&turned, 3.0, 6);
        prop_assert_eq!(a.len(), b.len());
        for p in &a.points {
            let m = rot * p.mean;
            let q = b.points.iter().find(|q| (q.mean - m).norm() < 1e-9);
            prop_assert!(q.is_some(), "no rotated counterpart for {:?}", p.mean);
            let q = q.unwrap();
            prop_assert!((rot * p.covariance * rot.transpose() - q.covariance).norm() < 1e-9);
            prop_assert!((rot * p.normal).dot(&q.normal).abs() > 1.0 - 1e-9);
        }
    }

    #[test]
    fn surface_point_invariants(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_filtered(&mut rng, 300, 15.0);
        let set = compute_surface_points(&pts, 3.0, 6);
        let mut cells: Vec<_> = set.points.iter().map(|p| p.cell).collect();
        cells.dedup();
        prop_assert_eq!(cells.len(), set.len());
        for p in &set.points {
            prop_assert!(p.support >= 6);
            prop_assert!((p.covariance - p.covariance.transpose()).norm() <= 1e-15);
            let e = p.covariance.symmetric_eigen();
            let (lo, hi) = (e.eigenvalues.min(), e.eigenvalues.max());
            prop_assert!(lo >= 1e-6 * (1.0 - 1e-9));
            prop_assert!(hi / lo <= 1e4 * (1.0 + 1e-6));
            prop_assert!((p.normal.norm() - 1.0).abs() < 1e-12);
            prop_assert!((p.covariance * p.normal - p.normal * lo).norm() < 1e-9 * hi.max(1.0));
            prop_assert!(p.normal.dot(&(-p.mean)) >= -1e-12);
        }
    }

    #[test]
    fn cost_ignores_ordering(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let make_set = |rng: &mut ChaCha8Rng, n: usize| cfear::features::SurfacePointSet {
            points: (0..n).map(|_| common::random_surface_point(rng, 20.0)).collect(),
            frame_pose: Pose2::IDENTITY,
            resolution: 3.0,
        };
        let kfs: Vec<(Pose2, cfear::features::SurfacePointSet)> = (0..3)
            .map(|_| (Pose2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-0.2..0.2)), make_set(&mut rng, 60)))
            .collect();
        let current = make_set(&mut rng, 50);
        let pose = Pose2::new(0.3, -0.2, 0.05);
        for metric in [ResidualMetric::PointToPoint, ResidualMetric::PointToLine, ResidualMetric::PointToDistribution] {
            let cost = |kfs: &[(Pose2, cfear::features::SurfacePointSet)], cur: &cfear::features::SurfacePointSet| {
                let grids: Vec<HashGrid> = kfs.iter().map(|(_, s)| HashGrid::build(s, 3.0)).collect();
                let targets: Vec<Target<'_>> = kfs.iter().zip(&grids).map(|((p, s), g)| Target { pose: *p, set: s, grid: g }).collect();
                evaluate_cost(metric, &RobustLoss::huber(0.5), &targets, cur, &pose, 3.0).unwrap().0
            };
            let base = cost(&kfs, &current);
            let mut kfs2 = kfs.clone();
            kfs2.reverse();
            for (_, s) in kfs2.iter_mut() {
                s.points.reverse();
            }
            let mut cur2 = current.clone();
            cur2.points.reverse();
            let other = cost(&kfs2, &cur2);
            prop_assert!((base - other).abs() <= 1e-12 * base.abs().max(1.0), "{} vs {}", base, other);
        }
    }

    #[test]
    fn drift_invariant_to_common_rigid_transform(seed in any::<u64>(), x in -1e3f64..1e3, y in -1e3f64..1e3, th in -3.1f64..3.1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = random_trajectory(&mut rng, 120);
        let est = Trajectory::new(gt.poses().iter().map(|p| StampedPose {
            time: p.time,
            pose: p.pose.compose(&Pose2::new(rng.random_range(-0.01..0.01), 0.0, rng.random_range(-0.001..0.001))),
        }).collect()).unwrap();
        let t = Pose2::new(x, y, th);
        let a = evaluate_drift(&est, &gt).unwrap();
        let b = evaluate_drift(&est.left_composed(&t), &gt.left_composed(&t)).unwrap();
        prop_assert!((a.translation_error_percent - b.translation_error_percent).abs() < 1e-9);
        prop_assert!((a.rotation_error_deg_per_100m - b.rotation_error_deg_per_100m).abs() < 1e-9);
        // only relative poses enter, so moving the estimate alone changes nothing either
        let c = evaluate_drift(&est.left_composed(&t), &gt).unwrap();
        prop_assert!((a.translation_error_percent - c.translation_error_percent).abs() < 1e-9);
    }

    #[test]
    fn trajectory_text_round_trip(seed in any::<u64>(), n in 1usize..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_trajectory(&mut rng, n);
        prop_assert_eq!(parse_trajectory(&format_trajectory(&t)).unwrap(), t);
    }

    #[test]
    fn keyframe_queue_evicts_oldest(capacity in 1usize..12, pushes in 0usize..40) {
        let mut q = KeyframeQueue::new(capacity);
        let empty = cfear::features::SurfacePointSet { points: vec![], frame_pose: Pose2::IDENTITY, resolution: 3.0 };
        for i in 0..pushes {
            let evicted = q.push(cfear::odometry::Keyframe::new(Pose2::IDENTITY, empty.clone(), 6.0, i as u64));
            prop_assert!(q.len() <= capacity);
            match evicted {
                Some(e) => prop_assert_eq!(e.scan_id as usize, i - capacity),
                None => prop_assert!(i < capacity),
            }
        }
        let ids: Vec<u64> = q.iter().map(|k| k.scan_id).collect();
        let expected: Vec<u64> = (pushes.saturating_sub(capacity)..pushes).rev().map(|i| i as u64).collect();
        prop_assert_eq!(ids, expected);
    }

    #[test]
    fn lm_trace_never_increases(seed in any::<u64>(), metric in 0usize..3, cauchy in any::<bool>()) {
        let metric = [ResidualMetric::PointToPoint, ResidualMetric::PointToLine, ResidualMetric::PointToDistribution][metric];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = cfear::features::SurfacePointSet {
            points: (0..80).map(|_| common::random_surface_point(&mut rng, 25.0)).collect(),
            frame_pose: Pose2::IDENTITY,
            resolution: 3.0,
        };
        let truth = Pose2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.05..0.05));
        let current = common::moved_by(&set, &truth);
        let grid = HashGrid::build(&set, 3.0);
        let targets = [Target { pose: Pose2::IDENTITY, set: &set, grid: &grid }];
        let loss = if cauchy { RobustLoss::cauchy(0.1) } else { RobustLoss::huber(0.1) };
        let (_, correspondences) = evaluate_cost(metric, &loss, &targets, &current, &Pose2::IDENTITY, 3.0).unwrap();
        let problem = cfear::registration::FixedAssociation { metric, keyframes: &targets, current: &current, correspondences: &correspondences };
        if let Ok((_, trace, _)) = problem.minimize(&Pose2::IDENTITY, &loss, 10) {
            for w in trace.windows(2) {
                prop_assert!(w[1] <= w[0], "cost rose from {} to {}", w[0], w[1]);
            }
        }
    }
}
