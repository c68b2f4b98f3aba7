//! Odometry loop: predict, register, move the map origin, merge, re-estimate normals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{predict_state, Scan, State};
use crate::range_image::{ProjectionParams, RangeImageMap, VertexNormalMaps, DEFAULT_COLLISION_BAND};
use crate::registration::{register_scan, Diagnostics, RegistrationConfig};
use crate::se3::Pose;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdometryConfig {
    pub projection: ProjectionParams,
    pub registration: RegistrationConfig,
    /// Integration window used when a source carries no explicit window.
    pub scan_window: f64,
    pub r_min: f64,
    pub r_max: f64,
    /// Range difference below which a newer map point replaces an older one
    /// in the same pixel; zero keeps the nearest point unconditionally.
    pub collision_band: f64,
    /// Scans merged at the identity pose to seed the map; the sensor is assumed
    /// static while they are collected.
    pub init_scans: usize,
}

impl Default for OdometryConfig {
    fn default() -> Self {
        Self {
            projection: ProjectionParams::from_degrees(50.0, 50.0, 10.0)
                .expect("default projection is valid"),
            registration: RegistrationConfig::default(),
            scan_window: 0.1,
            r_min: 0.5,
            r_max: 200.0,
            collision_band: DEFAULT_COLLISION_BAND,
            init_scans: 5,
        }
    }
}

impl OdometryConfig {
    pub fn validate(&self) -> Result<()> {
        self.registration.validate()?;
        if !(self.r_min >= 0.0 && self.r_min < self.r_max) {
            return Err(Error::InvalidConfig(format!(
                "range gate requires 0 <= r_min < r_max, got [{}, {}]",
                self.r_min, self.r_max
            )));
        }
        if !(self.scan_window > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "scan window must be positive, got {}",
                self.scan_window
            )));
        }
        if !(self.collision_band >= 0.0 && self.collision_band.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "collision band must be non-negative, got {}",
                self.collision_band
            )));
        }
        if self.init_scans == 0 {
            return Err(Error::InvalidConfig("init_scans must be at least 1".into()));
        }
        Ok(())
    }
}

/// Result of one scan.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub index: usize,
    pub t_b: f64,
    pub t_e: f64,
    pub begin: Pose,
    pub end: Pose,
    /// Points left after range gating.
    pub points: usize,
    /// Part of the map seeding phase; no registration ran.
    pub initialization: bool,
    pub ct_enabled: bool,
    pub gmm_enabled: bool,
    pub diagnostics: Diagnostics,
}

impl TrajectoryRecord {
    pub fn state(&self) -> State {
        State::new(self.begin, self.end, self.t_b, self.t_e)
    }

    pub fn diverged(&self) -> bool {
        self.diagnostics.diverged
    }
}

/// Streaming odometry engine. Memory is bounded by the range-image size.
#[derive(Clone, Debug)]
pub struct Odometry {
    config: OdometryConfig,
    map: Option<RangeImageMap>,
    maps: Option<VertexNormalMaps>,
    prev: Option<State>,
    seeded: usize,
    processed: usize,
}

impl Odometry {
    pub fn new(config: OdometryConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            map: None,
            maps: None,
            prev: None,
            seeded: 0,
            processed: 0,
        })
    }

    pub fn config(&self) -> &OdometryConfig {
        &self.config
    }

    pub fn map(&self) -> Option<&RangeImageMap> {
        self.map.as_ref()
    }

    pub fn normal_maps(&self) -> Option<&VertexNormalMaps> {
        self.maps.as_ref()
    }

    fn refresh_normals(&mut self) {
        let reg = &self.config.registration;
        self.maps = self
            .map
            .as_ref()
            .map(|m| m.estimate_normals(reg.curvature_threshold, reg.normal_patch));
    }

    fn record(&self, scan: &Scan, state: &State, points: usize, diagnostics: Diagnostics, init: bool) -> TrajectoryRecord {
        TrajectoryRecord {
            index: self.processed,
            t_b: scan.t_b,
            t_e: scan.t_e,
            begin: state.begin,
            end: state.end,
            points,
            initialization: init,
            ct_enabled: self.config.registration.ct_enabled,
            gmm_enabled: self.config.registration.gmm_enabled,
            diagnostics,
        }
    }

    /// Processes one scan and returns its record. Divergent scans fall back to
    /// the constant-velocity prediction and leave the map untouched.
    pub fn process_scan(&mut self, scan: &Scan) -> TrajectoryRecord {
        let gated = scan.range_gated(self.config.r_min, self.config.r_max);
        let npts = gated.len();

        if self.seeded < self.config.init_scans {
            let state = State::identity(scan.t_b, scan.t_e);
            let mut diag = Diagnostics {
                converged: true,
                valid_ratio: 1.0,
                ..Default::default()
            };
            if gated.is_empty() {
                diag.converged = false;
                diag.diverged = true;
                diag.valid_ratio = 0.0;
            } else {
                let (params, band) = (self.config.projection, self.config.collision_band);
                let map = self.map.get_or_insert_with(|| {
                    RangeImageMap::new(params, Pose::identity()).with_collision_band(band)
                });
                let pts: Vec<_> = gated.points.iter().map(|p| p.position).collect();
                map.merge_points(&pts);
                self.seeded += 1;
                self.refresh_normals();
            }
            self.prev = Some(state);
            let rec = self.record(scan, &state, npts, diag, true);
            self.processed += 1;
            return rec;
        }

        let prev = self.prev.expect("seeded engine has a previous state");
        let initial = predict_state(&prev, scan.t_b, scan.t_e);
        let maps = self.maps.as_ref().expect("seeded engine has normal maps");
        let reg = register_scan(&gated, maps, &initial, Some(&prev), &self.config.registration);

        if !reg.diagnostics.diverged {
            let map = self.map.as_ref().expect("seeded engine has a map");
            let mut map = map.shift_origin(&reg.state.begin);
            map.update(&gated, &reg.state);
            self.map = Some(map);
            self.refresh_normals();
        } else {
            log::warn!("scan {} diverged; keeping the prediction", self.processed);
        }
        self.prev = Some(reg.state);
        let rec = self.record(scan, &reg.state, npts, reg.diagnostics, false);
        self.processed += 1;
        rec
    }
}

#[derive(Clone, Debug)]
pub struct SequenceOutput {
    pub records: Vec<TrajectoryRecord>,
    pub map: Option<RangeImageMap>,
    pub normal_maps: Option<VertexNormalMaps>,
}

/// Streams `scans` through a fresh engine. The first source error aborts the run.
pub fn run_sequence<I>(scans: I, config: &OdometryConfig) -> Result<SequenceOutput>
where
    I: IntoIterator<Item = Result<Scan>>,
{
    let mut odom = Odometry::new(config.clone())?;
    let mut records = Vec::new();
    for scan in scans {
        let scan = scan?;
        records.push(odom.process_scan(&scan));
    }
    Ok(SequenceOutput {
        records,
        map: odom.map,
        normal_maps: odom.maps,
    })
}
