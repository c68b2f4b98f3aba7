use nalgebra::Vector3;
use proptest::prelude::*;
use rangeodo::io::{
    export_map, read_csv_scan, read_map, read_scans, read_trajectory, write_binary, write_csv_scan,
    write_trajectory, StampedPose,
};
use rangeodo::{Error, Pose, ProjectionParams, RangeImageMap, Scan, ScanPoint, Twist};
use std::fs;
use tempfile::tempdir;

fn f32_exact_scan(raw: &[([f32; 3], f32)], t_b: f64) -> Scan {
    let mut pts: Vec<_> = raw
        .iter()
        .map(|(p, dt)| ScanPoint::new(Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64), t_b + *dt as f64))
        .collect();
    pts.sort_by(|a, b| a.t.total_cmp(&b.t));
    Scan::new(pts, t_b, t_b + 0.1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn binary_round_trip_is_bitwise(
        raw in prop::collection::vec((prop::array::uniform3(-100.0f32..100.0), 0.0f32..0.1), 0..300),
        t_b in 0.0..1e4f64,
    ) {
        let dir = tempdir().unwrap();
        let path = dir.path().join("scans.bin");
        // values representable in f32 survive bitwise
        let first = f32_exact_scan(&raw, t_b);
        let second = f32_exact_scan(&raw[raw.len() / 2..], t_b + 0.1);
        write_binary(&path, "unit", &[first.clone(), second.clone()]).unwrap();
        let back: Vec<Scan> = read_scans(&path, 0.1).unwrap().collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(back.len(), 2);
        for (a, b) in back.iter().zip([&first, &second]) {
            prop_assert_eq!(a.t_b.to_bits(), b.t_b.to_bits());
            prop_assert_eq!(a.t_e.to_bits(), b.t_e.to_bits());
            prop_assert_eq!(a.points.len(), b.points.len());
            for (p, q) in a.points.iter().zip(&b.points) {
                for k in 0..3 {
                    prop_assert_eq!(p.position[k].to_bits(), q.position[k].to_bits());
                }
                prop_assert_eq!((p.t - a.t_b) as f32, (q.t - b.t_b) as f32);
            }
        }
        // writing what was read reproduces the same bytes
        let again = dir.path().join("again.bin");
        write_binary(&again, "unit", &back).unwrap();
        prop_assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
    }

    #[test]
    fn trajectory_round_trip(twists in prop::collection::vec((prop::array::uniform3(-50.0..50.0f64), prop::array::uniform3(-1.8..1.8f64)), 1..30)) {
        let dir = tempdir().unwrap();
        let path = dir.path().join("traj.txt");
        let poses: Vec<_> = twists
            .iter()
            .enumerate()
            .map(|(i, (r, p))| StampedPose {
                t: 0.1 * i as f64,
                pose: Twist::new(Vector3::from(*r), Vector3::from(*p)).exp(),
            })
            .collect();
        write_trajectory(&path, &poses).unwrap();
        let back = read_trajectory(&path).unwrap();
        prop_assert_eq!(back.len(), poses.len());
        for (a, b) in back.iter().zip(&poses) {
            prop_assert!((a.t - b.t).abs() < 1e-6);
            prop_assert!((a.pose.rotation - b.pose.rotation).amax() < 1e-9);
            prop_assert!((a.pose.translation - b.pose.translation).amax() < 1e-9);
        }
    }
}

#[test]
fn csv_row_and_empty_file() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("one.csv");
    fs::write(&path, "# window: 0 0.1\n1.0,0.0,0.0,0.05\n").unwrap();
    let scan = read_csv_scan(&path, 0.1, 0.0).unwrap();
    assert_eq!(scan.points, vec![ScanPoint::new(Vector3::new(1.0, 0.0, 0.0), 0.05)]);
    assert_eq!((scan.t_b, scan.t_e), (0.0, 0.1));

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let scan = read_csv_scan(&empty, 0.1, 0.0).unwrap();
    assert!(scan.is_empty());
}

#[test]
fn csv_round_trip_is_exact() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("scan.csv");
    let pts: Vec<_> = (0..50)
        .map(|i| ScanPoint::new(Vector3::new(1.0 / (i + 1) as f64, -3.7 * i as f64, 1e-7), 2.0 + 0.001 * i as f64))
        .collect();
    let scan = Scan::new(pts, 2.0, 2.1);
    write_csv_scan(&path, &scan, "sim").unwrap();
    assert_eq!(read_csv_scan(&path, 0.1, 0.0).unwrap(), scan);
}

#[test]
fn malformed_rows_report_file_and_line() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "x,y,z,t\n1,2,3,0.01\n1,2,oops,0.02\n").unwrap();
    match read_csv_scan(&path, 0.1, 0.0) {
        Err(e @ Error::Parse { line: 3, .. }) => {
            let msg = e.to_string();
            assert!(msg.contains("bad.csv:3"), "{msg}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn out_of_order_scans_are_rejected() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("scans.bin");
    let a = Scan::new(vec![], 1.0, 1.1);
    let b = Scan::new(vec![], 0.5, 0.6);
    write_binary(&path, "unit", &[a, b]).unwrap();
    let items: Vec<_> = read_scans(&path, 0.1).unwrap().collect();
    assert_eq!(items.len(), 2);
    assert!(items[0].is_ok());
    assert!(matches!(items[1], Err(Error::OutOfOrder { .. })));

    let csv_dir = dir.path().join("csv");
    fs::create_dir(&csv_dir).unwrap();
    fs::write(csv_dir.join("a.csv"), "# window: 1 1.1\n1,0,0,1.05\n").unwrap();
    fs::write(csv_dir.join("b.csv"), "# window: 0 0.1\n1,0,0,0.05\n").unwrap();
    let items: Vec<_> = read_scans(&csv_dir, 0.1).unwrap().collect();
    assert!(matches!(items[1], Err(Error::OutOfOrder { .. })));
}

#[test]
fn truncated_container_is_an_error() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("scans.bin");
    let scan = Scan::new(vec![ScanPoint::new(Vector3::x(), 0.01); 10], 0.0, 0.1);
    write_binary(&path, "unit", &[scan]).unwrap();
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    let items: Vec<_> = read_scans(&path, 0.1).unwrap().collect();
    assert!(matches!(items[0], Err(Error::Parse { .. })));
}

fn wall_map() -> (RangeImageMap, rangeodo::VertexNormalMaps) {
    let params = ProjectionParams::from_degrees(50.0, 50.0, 10.0).unwrap();
    let origin = Pose::from_translation(Vector3::new(1.0, 2.0, 0.5)) * Pose::from_axis_angle(&Vector3::z(), 0.3);
    let mut map = RangeImageMap::new(params, origin);
    let mut pts = Vec::new();
    for i in 0..150 {
        for j in 0..150 {
            pts.push(Vector3::new(6.0, -0.75 + 0.01 * i as f64, -0.75 + 0.01 * j as f64));
        }
    }
    map.merge_points(&pts);
    let maps = map.estimate_normals(0.055, 5);
    (map, maps)
}

#[test]
fn map_export_round_trip() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("map.ply");
    let (map, maps) = wall_map();
    export_map(&path, &map, Some(&maps)).unwrap();
    let back = read_map(&path).unwrap();
    assert_eq!(back.len(), map.occupied_count());
    let origin = *map.origin();
    let mut with_normal = 0;
    for ((p, n), (_, q)) in back.iter().zip(map.iter()) {
        assert!((p - origin.transform_point(&q.position)).norm() < 1e-12);
        if n.norm() > 0.0 {
            assert!((n.norm() - 1.0).abs() < 1e-6);
            with_normal += 1;
        }
    }
    assert!(with_normal > back.len() / 2);
}

#[test]
fn empty_map_exports_header_only() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("empty.ply");
    let map = RangeImageMap::new(ProjectionParams::from_degrees(50.0, 50.0, 10.0).unwrap(), Pose::identity());
    export_map(&path, &map, None).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.trim_end().ends_with("end_header"));
    assert!(text.contains("element vertex 0"));
    assert!(read_map(&path).unwrap().is_empty());
}

#[test]
fn unwritable_paths_fail() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("missing").join("traj.txt");
    assert!(matches!(write_trajectory(&path, &[]), Err(Error::Io { .. })));
}
