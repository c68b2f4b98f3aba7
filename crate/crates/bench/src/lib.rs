//! Fixtures shared by the benchmarks in `benches/`.

use rangeodo::simulator::{Scenario, SimulatedScan};
use rangeodo::{OdometryConfig, Pose, RangeImageMap, Scan, State, VertexNormalMaps};

/// A map built from ground truth part way through the simulated loop, and the
/// next scan to register against it.
pub struct Fixture {
    pub config: OdometryConfig,
    pub sims: Vec<SimulatedScan>,
    pub map: RangeImageMap,
    pub maps: VertexNormalMaps,
    pub scan: Scan,
    pub prev: State,
    pub truth: State,
}

pub fn loop_fixture(upto: usize) -> Fixture {
    let config = OdometryConfig::default();
    let sims = Scenario::named("loop", 0.1 * (upto + 1) as f64)
        .and_then(|s| s.run(7))
        .expect("loop scenario simulates");
    let mut map = RangeImageMap::new(config.projection, Pose::identity()).with_collision_band(config.collision_band);
    for s in &sims[..upto] {
        map = map.shift_origin(&s.truth.begin);
        map.update(&s.scan.range_gated(config.r_min, config.r_max), &s.truth);
    }
    let reg = &config.registration;
    let maps = map.estimate_normals(reg.curvature_threshold, reg.normal_patch);
    let scan = sims[upto].scan.range_gated(config.r_min, config.r_max);
    Fixture {
        prev: sims[upto - 1].truth,
        truth: sims[upto].truth,
        config,
        sims,
        map,
        maps,
        scan,
    }
}
