//! Single range-image map: spherical projection, nearest-range merging,
//! origin shifts and vertex/normal extraction.
//!
//! Every map point is stored in the frame of the map origin (the begin pose of
//! the most recently registered scan). A pixel holds at most one point.
//! Collisions are resolved over the whole set of candidates for a pixel: the
//! nearest range wins, except that any candidate within the collision band of
//! the nearest one is eligible too. Among eligible candidates the most recent
//! merge wins, then the one closest to the pixel center. Always keeping the
//! nearest of several noisy observations of one surface would pull the map
//! toward the sensor; the band keeps that selection free of range bias while
//! real occlusions still resolve to the nearer surface. A band of zero gives
//! the plain nearest-range policy. The rule is a function of the candidate
//! set, so the result never depends on insertion order.

use std::cmp::Ordering;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{compensate, Scan, State};
use crate::se3::Pose;

/// Side length of the patch used for plane fitting.
pub const DEFAULT_NORMAL_PATCH: usize = 5;
/// Minimum number of occupied pixels (center included) for a plane fit.
pub const MIN_NORMAL_NEIGHBORS: usize = 5;
/// Minimum ratio of the middle to the largest covariance eigenvalue. Patches
/// below it are close to collinear and their normal is not determined.
pub const MIN_PLANARITY: f64 = 0.05;
/// Range difference, in meters, below which a newer point replaces an older one.
pub const DEFAULT_COLLISION_BAND: f64 = 0.1;

/// Image geometry for the spherical projection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    /// Horizontal field of view, radians.
    pub fov_hor: f64,
    /// Vertical field of view, radians.
    pub fov_ver: f64,
    /// Angular resolution in pixels per degree.
    pub beta_res: f64,
    pub width: usize,
    pub height: usize,
}

/// Result of projecting a point; `u`, `v` are floored pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Projection {
    pub u: i64,
    pub v: i64,
    pub in_bounds: bool,
}

impl ProjectionParams {
    pub fn from_degrees(fov_hor_deg: f64, fov_ver_deg: f64, beta_res: f64) -> Result<Self> {
        let valid_fov = |f: f64| f > 0.0 && f <= 360.0;
        if !valid_fov(fov_hor_deg) || !valid_fov(fov_ver_deg) {
            return Err(Error::InvalidConfig(format!(
                "field of view must lie in (0, 360] degrees, got {fov_hor_deg} x {fov_ver_deg}"
            )));
        }
        if !(beta_res > 0.0 && beta_res.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "angular resolution must be positive, got {beta_res}"
            )));
        }
        let width = (fov_hor_deg * beta_res).round() as usize;
        let height = (fov_ver_deg * beta_res).round() as usize;
        if width == 0 || height == 0 {
            return Err(Error::InvalidConfig("range image would be empty".into()));
        }
        Ok(Self {
            fov_hor: fov_hor_deg.to_radians(),
            fov_ver: fov_ver_deg.to_radians(),
            beta_res,
            width,
            height,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Spherical projection into the image.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Projection {
        const INVALID: Projection = Projection {
            u: 0,
            v: 0,
            in_bounds: false,
        };
        let r = p.norm();
        if !(r > 0.0 && r.is_finite()) {
            return INVALID;
        }
        let u = ((0.5 + p.y.atan2(p.x) / self.fov_hor) * self.width as f64).floor();
        let v = ((0.5 - (p.z / r).clamp(-1.0, 1.0).asin() / self.fov_ver) * self.height as f64)
            .floor();
        let (u, v) = (u as i64, v as i64);
        let in_bounds = u >= 0 && v >= 0 && (u as usize) < self.width && (v as usize) < self.height;
        Projection { u, v, in_bounds }
    }

    /// Flat pixel index of `p` and its squared distance, in pixels, from the
    /// pixel center.
    #[inline]
    pub fn locate(&self, p: &Vector3<f64>) -> Option<(usize, f64)> {
        let r = p.norm();
        if !(r > 0.0 && r.is_finite()) {
            return None;
        }
        let uf = (0.5 + p.y.atan2(p.x) / self.fov_hor) * self.width as f64;
        let vf = (0.5 - (p.z / r).clamp(-1.0, 1.0).asin() / self.fov_ver) * self.height as f64;
        let (u, v) = (uf.floor(), vf.floor());
        if !(u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64) {
            return None;
        }
        let (du, dv) = (uf - u - 0.5, vf - v - 0.5);
        Some((v as usize * self.width + u as usize, du * du + dv * dv))
    }

    /// Flat pixel index of `p`, if it falls inside the image.
    #[inline]
    pub fn pixel_index(&self, p: &Vector3<f64>) -> Option<usize> {
        self.locate(p).map(|(idx, _)| idx)
    }
}

/// A stored map point, in the map-origin frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapPoint {
    pub position: Vector3<f64>,
    pub range: f64,
    /// Index of the merge that inserted the point.
    pub stamp: u64,
    /// Squared distance from the pixel center, in pixels.
    pub center_offset: f64,
}

impl MapPoint {
    pub fn new(position: Vector3<f64>, stamp: u64, center_offset: f64) -> Self {
        Self {
            position,
            range: position.norm(),
            stamp,
            center_offset,
        }
    }

    /// Preference among candidates that are all eligible under the band.
    fn preferred_over(&self, other: &MapPoint) -> bool {
        let ord = other
            .stamp
            .cmp(&self.stamp)
            .then_with(|| self.center_offset.total_cmp(&other.center_offset))
            .then_with(|| self.range.total_cmp(&other.range))
            .then_with(|| self.position.x.total_cmp(&other.position.x))
            .then_with(|| self.position.y.total_cmp(&other.position.y))
            .then_with(|| self.position.z.total_cmp(&other.position.z));
        ord == Ordering::Less
    }
}

/// Winner of a pixel collision among `candidates` (non-empty).
fn resolve<'a>(candidates: impl Iterator<Item = &'a MapPoint> + Clone, band: f64) -> MapPoint {
    let nearest = candidates
        .clone()
        .map(|p| p.range)
        .fold(f64::INFINITY, f64::min);
    let mut best: Option<&MapPoint> = None;
    for p in candidates.filter(|p| p.range <= nearest + band) {
        if best.map_or(true, |b| p.preferred_over(b)) {
            best = Some(p);
        }
    }
    *best.expect("at least one candidate")
}

#[derive(Clone, Debug, PartialEq)]
pub struct RangeImageMap {
    params: ProjectionParams,
    origin: Pose,
    pixels: Vec<Option<MapPoint>>,
    collision_band: f64,
    /// Stamp given to the next merge.
    generation: u64,
}

impl RangeImageMap {
    pub fn new(params: ProjectionParams, origin: Pose) -> Self {
        Self {
            params,
            origin,
            pixels: vec![None; params.len()],
            collision_band: DEFAULT_COLLISION_BAND,
            generation: 0,
        }
    }

    /// Sets the collision band; zero selects the plain nearest-range policy.
    pub fn with_collision_band(mut self, band: f64) -> Self {
        self.collision_band = band.max(0.0);
        self
    }

    pub fn collision_band(&self) -> f64 {
        self.collision_band
    }

    /// Projects every point of `scans` onto a blank image at the identity origin.
    /// The sensor is assumed static, so stamps are ignored.
    pub fn initialize(scans: &[Scan], params: ProjectionParams) -> Result<Self> {
        if scans.iter().all(|s| s.is_empty()) {
            return Err(Error::InsufficientData);
        }
        let mut map = Self::new(params, Pose::identity());
        for scan in scans {
            let pts: Vec<_> = scan.points.iter().map(|p| p.position).collect();
            map.merge_points(&pts);
        }
        Ok(map)
    }

    pub fn params(&self) -> &ProjectionParams {
        &self.params
    }

    pub fn origin(&self) -> &Pose {
        &self.origin
    }

    /// Number of pixel slots; fixed by the projection parameters.
    pub fn capacity(&self) -> usize {
        self.pixels.len()
    }

    pub fn get(&self, u: usize, v: usize) -> Option<&MapPoint> {
        if u >= self.params.width || v >= self.params.height {
            return None;
        }
        self.pixels[v * self.params.width + u].as_ref()
    }

    pub fn pixels(&self) -> &[Option<MapPoint>] {
        &self.pixels
    }

    pub fn occupied_count(&self) -> usize {
        self.pixels.iter().filter(|p| p.is_some()).count()
    }

    /// Occupied pixels as `(flat index, point)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &MapPoint)> {
        self.pixels
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.as_ref().map(|p| (i, p)))
    }

    /// Merges one point given in the origin frame as its own merge. Returns
    /// whether it was stored.
    pub fn insert(&mut self, position: Vector3<f64>) -> bool {
        let stamp = self.next_stamp();
        match self.params.locate(&position) {
            Some((idx, off)) => {
                let point = MapPoint::new(position, stamp, off);
                self.merge_candidates(vec![(idx, point)]);
                self.pixels[idx] == Some(point)
            }
            None => false,
        }
    }

    fn next_stamp(&mut self) -> u64 {
        let stamp = self.generation;
        self.generation += 1;
        stamp
    }

    /// Groups candidates by pixel and resolves each group together with the
    /// point already stored there.
    fn merge_candidates(&mut self, mut candidates: Vec<(usize, MapPoint)>) {
        candidates.par_sort_unstable_by_key(|c| c.0);
        let band = self.collision_band;
        for group in candidates.chunk_by(|a, b| a.0 == b.0) {
            let idx = group[0].0;
            let slot = &mut self.pixels[idx];
            let existing = slot.iter();
            *slot = Some(resolve(group.iter().map(|c| &c.1).chain(existing), band));
        }
    }

    /// Projects the points, all sharing one stamp, and merges them.
    pub fn merge_points(&mut self, points: &[Vector3<f64>]) {
        let stamp = self.next_stamp();
        let params = self.params;
        let projected: Vec<(usize, MapPoint)> = points
            .par_iter()
            .filter_map(|p| params.locate(p).map(|(idx, off)| (idx, MapPoint::new(*p, stamp, off))))
            .collect();
        self.merge_candidates(projected);
    }

    /// Re-expresses every point in `new_origin` and re-projects it. Points that
    /// leave the image are dropped.
    pub fn shift_origin(&self, new_origin: &Pose) -> RangeImageMap {
        if *new_origin == self.origin {
            return self.clone();
        }
        let relative = new_origin.inverse() * self.origin;
        let params = self.params;
        let moved: Vec<(usize, MapPoint)> = self
            .pixels
            .par_iter()
            .filter_map(|p| {
                let p = p.as_ref()?;
                let q = relative.transform_point(&p.position);
                params.locate(&q).map(|(idx, off)| (idx, MapPoint::new(q, p.stamp, off)))
            })
            .collect();
        let mut shifted = RangeImageMap::new(self.params, *new_origin)
            .with_collision_band(self.collision_band);
        shifted.generation = self.generation;
        shifted.merge_candidates(moved);
        shifted
    }

    /// De-skews `scan` with `state`, expresses it in the map origin and merges it.
    pub fn update(&mut self, scan: &Scan, state: &State) {
        if scan.is_empty() {
            return;
        }
        let to_origin = self.origin.inverse();
        let local: Vec<Vector3<f64>> = compensate(scan, state)
            .into_iter()
            .map(|p| to_origin.transform_point(&p))
            .collect();
        self.merge_points(&local);
    }

    /// Fits a plane to each occupied pixel's `patch × patch` neighborhood and
    /// keeps those with curvature below `curvature_threshold`.
    pub fn estimate_normals(&self, curvature_threshold: f64, patch: usize) -> VertexNormalMaps {
        let (w, h) = (self.params.width, self.params.height);
        let half = (patch / 2) as i64;
        let vertex: Vec<Option<Vector3<f64>>> = self.pixels.iter().map(|p| p.map(|p| p.position)).collect();
        let surfels: Vec<Option<Surfel>> = (0..w * h)
            .into_par_iter()
            .map(|idx| {
                let center = vertex[idx].as_ref()?;
                let (u, v) = ((idx % w) as i64, (idx / w) as i64);
                let fit = fit_plane(&vertex, w, h, u, v, half, center)?;
                (fit.curvature < curvature_threshold).then(|| {
                    let mut normal = fit.normal;
                    if normal.dot(center) > 0.0 {
                        normal = -normal;
                    }
                    Surfel {
                        vertex: *center,
                        normal,
                        curvature: fit.curvature,
                    }
                })
            })
            .collect();
        VertexNormalMaps {
            params: self.params,
            origin: self.origin,
            vertex,
            surfels,
        }
    }
}

/// A map point with an accepted planar normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Surfel {
    pub vertex: Vector3<f64>,
    /// Unit normal, oriented toward the map origin.
    pub normal: Vector3<f64>,
    /// `λ_min / (λ₀ + λ₁ + λ₂)` of the patch covariance, in `[0, 1/3]`.
    pub curvature: f64,
}

/// Vertex and normal maps derived from a [`RangeImageMap`], valid for one EM run.
#[derive(Clone, Debug)]
pub struct VertexNormalMaps {
    params: ProjectionParams,
    origin: Pose,
    vertex: Vec<Option<Vector3<f64>>>,
    surfels: Vec<Option<Surfel>>,
}

impl VertexNormalMaps {
    pub fn params(&self) -> &ProjectionParams {
        &self.params
    }

    pub fn origin(&self) -> &Pose {
        &self.origin
    }

    pub fn vertex(&self, idx: usize) -> Option<&Vector3<f64>> {
        self.vertex[idx].as_ref()
    }

    /// Pixel with a valid normal, if any.
    #[inline]
    pub fn surfel(&self, idx: usize) -> Option<&Surfel> {
        self.surfels[idx].as_ref()
    }

    pub fn surfels(&self) -> &[Option<Surfel>] {
        &self.surfels
    }

    pub fn normal_count(&self) -> usize {
        self.surfels.iter().filter(|s| s.is_some()).count()
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PlaneFit {
    pub normal: Vector3<f64>,
    pub curvature: f64,
}

fn fit_plane(
    vertex: &[Option<Vector3<f64>>],
    w: usize,
    h: usize,
    u: i64,
    v: i64,
    half: i64,
    center: &Vector3<f64>,
) -> Option<PlaneFit> {
    let mut n = 0usize;
    let mut sum = Vector3::zeros();
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut sxz = 0.0;
    let mut syy = 0.0;
    let mut syz = 0.0;
    let mut szz = 0.0;
    for vv in (v - half).max(0)..=(v + half).min(h as i64 - 1) {
        let row = vv as usize * w;
        for uu in (u - half).max(0)..=(u + half).min(w as i64 - 1) {
            if let Some(q) = &vertex[row + uu as usize] {
                // centered on the patch's own point to keep the moments well scaled
                let d = q - center;
                n += 1;
                sum += d;
                sxx += d.x * d.x;
                sxy += d.x * d.y;
                sxz += d.x * d.z;
                syy += d.y * d.y;
                syz += d.y * d.z;
                szz += d.z * d.z;
            }
        }
    }
    if n < MIN_NORMAL_NEIGHBORS {
        return None;
    }
    let inv = 1.0 / n as f64;
    let m = sum * inv;
    let cov = Matrix3::new(
        sxx * inv - m.x * m.x,
        sxy * inv - m.x * m.y,
        sxz * inv - m.x * m.z,
        sxy * inv - m.x * m.y,
        syy * inv - m.y * m.y,
        syz * inv - m.y * m.z,
        sxz * inv - m.x * m.z,
        syz * inv - m.y * m.z,
        szz * inv - m.z * m.z,
    );
    plane_from_covariance(&cov)
}

/// Curvature and smallest-eigenvalue eigenvector of a 3×3 covariance.
pub(crate) fn plane_from_covariance(cov: &Matrix3<f64>) -> Option<PlaneFit> {
    let (values, normal) = symmetric_eigen3(cov)?;
    let trace = values[0] + values[1] + values[2];
    if !(trace > 0.0) || values[1] < MIN_PLANARITY * values[2] {
        return None;
    }
    let curvature = (values[0].max(0.0) / trace).clamp(0.0, 1.0 / 3.0);
    Some(PlaneFit { normal, curvature })
}

/// Closed-form eigen-decomposition of a symmetric 3×3 matrix. Returns the
/// eigenvalues in ascending order and a unit eigenvector of the smallest one.
pub(crate) fn symmetric_eigen3(a: &Matrix3<f64>) -> Option<([f64; 3], Vector3<f64>)> {
    let p1 = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
    let q = a.trace() / 3.0;
    let p2 = (a[(0, 0)] - q).powi(2) + (a[(1, 1)] - q).powi(2) + (a[(2, 2)] - q).powi(2) + 2.0 * p1;
    if !(p2 > 0.0) {
        return None;
    }
    let p = (p2 / 6.0).sqrt();
    let b = (a - Matrix3::identity() * q) / p;
    let r = (b.determinant() * 0.5).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let largest = q + 2.0 * p * phi.cos();
    let smallest = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
    let middle = 3.0 * q - largest - smallest;

    let m = a - Matrix3::identity() * smallest;
    let r0 = m.row(0).transpose();
    let r1 = m.row(1).transpose();
    let r2 = m.row(2).transpose();
    let candidates = [r0.cross(&r1), r0.cross(&r2), r1.cross(&r2)];
    let best = candidates
        .iter()
        .max_by(|x, y| x.norm_squared().total_cmp(&y.norm_squared()))?;
    let norm = best.norm();
    if !(norm > 0.0) {
        return None;
    }
    Some(([smallest, middle, largest], best / norm))
}
