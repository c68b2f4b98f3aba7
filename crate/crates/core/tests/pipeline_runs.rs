mod common;

use common::*;
use nalgebra::Vector3;
use rangeodo::io::end_poses;
use rangeodo::simulator::{evaluate, ground_truth_poses, GroundTruthTrajectory, PatternConfig, raycast_sequence, Scene};
use rangeodo::{predict_state, run_sequence, Error, Odometry, OdometryConfig, Pose, Reduction, Scan, ScanPoint};

fn static_scan(t_b: f64) -> Scan {
    let traj = GroundTruthTrajectory::from_fn(|_| Pose::identity(), 0.0, 0.2, 2000.0).unwrap();
    let sims = raycast_sequence(&Scene::corridor(), &traj, &PatternConfig::rosette(50.0, 100_000.0), 0.0, 0.1, 1, 0).unwrap();
    let s = &sims[0].scan;
    Scan::new(
        s.points.iter().map(|p| ScanPoint::new(p.position, p.t - s.t_b + t_b)).collect(),
        t_b,
        t_b + 0.1,
    )
}

#[test]
fn stationary_sensor_stays_at_identity() {
    let scans: Vec<_> = (0..20).map(|k| Ok(static_scan(0.1 * k as f64))).collect();
    let out = run_sequence(scans, &OdometryConfig::default()).unwrap();
    assert_eq!(out.records.len(), 20);
    for r in &out.records {
        assert!(!r.diverged());
        for p in [r.begin, r.end] {
            assert!(p.translation.norm() < 1e-6, "{}", p.translation.norm());
            assert!(p.angle() < 1e-6);
        }
    }
}

#[test]
fn constant_velocity_drift_is_small() {
    let traj = constant_motion(3.0, 0.5, 1.0, 0.3);
    let sims = corridor_scans(&traj, 0.0, 30, 11);
    let out = run_sequence(sims.iter().map(|s| Ok(s.scan.clone())), &OdometryConfig::default()).unwrap();
    assert!(out.records.iter().all(|r| !r.diverged()));
    let m = evaluate(&end_poses(&out.records), &ground_truth_poses(&sims)).unwrap();
    assert!(m.max_drift < 5e-3, "{m:?}");
}

#[test]
fn empty_scan_falls_back_to_the_prediction() {
    let mut odom = Odometry::new(OdometryConfig::default()).unwrap();
    let traj = constant_motion(1.5, 0.5, 1.0, 0.0);
    let sims = corridor_scans(&traj, 0.0, 10, 1);
    for s in &sims[..9] {
        odom.process_scan(&s.scan);
    }
    let before = odom.map().unwrap().clone();
    let prev = {
        let mut o = odom.clone();
        o.process_scan(&sims[9].scan).state()
    };
    // points closer than r_min are gated away
    let near = Scan::new(vec![ScanPoint::new(Vector3::new(0.1, 0.0, 0.0), 1.05)], 1.0, 1.1);
    let mut o = odom.clone();
    let last = o.process_scan(&sims[9].scan);
    let rec = o.process_scan(&near);
    assert!(rec.diverged());
    assert_eq!(rec.points, 0);
    let predicted = predict_state(&last.state(), 1.0, 1.1);
    assert_eq!(rec.state(), predicted);
    assert_eq!(prev, last.state());
    // the divergent scan leaves the map alone
    let mut o2 = odom.clone();
    o2.process_scan(&sims[9].scan);
    assert_eq!(o.map(), o2.map());
    assert_ne!(o.map(), Some(&before));
}

#[test]
fn degenerate_scans_do_not_crash() {
    let traj = constant_motion(1.2, 0.5, 1.0, 0.0);
    let sims = corridor_scans(&traj, 0.0, 12, 1);
    let mut odom = Odometry::new(OdometryConfig::default()).unwrap();
    for s in &sims[..8] {
        odom.process_scan(&s.scan);
    }
    let t = sims[8].scan.t_b;
    let single = Scan::new(vec![ScanPoint::new(Vector3::new(5.0, 0.2, 0.1), t + 0.05)], t, t + 0.1);
    let rec = odom.process_scan(&single);
    assert!(rec.state().begin.translation.iter().all(|v| v.is_finite()));

    // points far behind every wall: nothing in the map is near them
    let t = t + 0.1;
    let junk: Vec<_> = (0..500)
        .map(|i| {
            let a = i as f64 * 0.01;
            ScanPoint::new(Vector3::new(150.0, 40.0 * a.sin(), 40.0 * a.cos()), t + 0.0002 * i as f64)
        })
        .collect();
    let rec = odom.process_scan(&Scan::new(junk, t, t + 0.1));
    assert!(rec.diverged());
    let rec = odom.process_scan(&Scan::new(vec![], t + 0.1, t + 0.2));
    assert!(rec.diverged());
    // and the engine recovers on real data
    let rec = odom.process_scan(&sims[11].scan);
    assert!(rec.end.translation.iter().all(|v| v.is_finite()));
}

#[test]
fn sequential_runs_are_bitwise_identical() {
    let traj = constant_motion(1.5, 0.5, 1.0, 0.5);
    let sims = corridor_scans(&traj, 0.02, 15, 5);
    let mut cfg = OdometryConfig::default();
    cfg.registration.reduction = Reduction::Sequential;
    let a = run_sequence(sims.iter().map(|s| Ok(s.scan.clone())), &cfg).unwrap();
    let b = run_sequence(sims.iter().map(|s| Ok(s.scan.clone())), &cfg).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.map, b.map);
}

#[test]
fn source_errors_abort_the_run() {
    let scans = vec![
        Ok(static_scan(0.0)),
        Err(Error::OutOfOrder {
            path: "x".into(),
            previous: 1.0,
            current: 0.5,
        }),
    ];
    assert!(matches!(run_sequence(scans, &OdometryConfig::default()), Err(Error::OutOfOrder { .. })));
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = OdometryConfig::default();
    cfg.registration.window = 4;
    assert!(matches!(Odometry::new(cfg), Err(Error::InvalidConfig(_))));
    let mut cfg = OdometryConfig::default();
    cfg.r_min = 300.0;
    assert!(Odometry::new(cfg).is_err());
    let mut cfg = OdometryConfig::default();
    cfg.registration.outlier_weight = 1.0;
    assert!(Odometry::new(cfg).is_err());
}

#[test]
fn heavy_location_weight_closes_the_begin_gap() {
    let traj = constant_motion(2.0, 0.5, 1.0, 0.4);
    let sims = corridor_scans(&traj, 0.01, 20, 8);
    let mut cfg = OdometryConfig::default();
    cfg.registration.lambda_loc = 1e9;
    let out = run_sequence(sims.iter().map(|s| Ok(s.scan.clone())), &cfg).unwrap();
    for w in out.records.windows(2) {
        let gap = (w[1].begin.translation - w[0].end.translation).norm();
        assert!(gap < 1e-6, "{gap}");
    }
}
