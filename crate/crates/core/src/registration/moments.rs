//! E step: Gaussian-transform moments gathered by a windowed filter on the
//! range image, plus the single-nearest-pixel association used when the
//! mixture model is switched off.

use std::f64::consts::PI;

use nalgebra::Vector3;

use super::RegistrationConfig;
use crate::range_image::VertexNormalMaps;

/// Filter-correspondence triple for one scan point, in the map-origin frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    /// `Σ N(p; q_j, Σ)`.
    pub m0: f64,
    /// `Σ N(p; q_j, Σ) q_j`.
    pub m1: Vector3<f64>,
    /// Normalized `Σ N(p; q_j, Σ) n_j`.
    pub normal: Vector3<f64>,
    /// Map points inside the window that carry a normal.
    pub neighbors: usize,
    pub valid: bool,
}

impl Moments {
    pub fn invalid() -> Self {
        Self {
            m0: 0.0,
            m1: Vector3::zeros(),
            normal: Vector3::zeros(),
            neighbors: 0,
            valid: false,
        }
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.m1 / self.m0
    }
}

/// Normalized isotropic Gaussian density `(2π)^{-3/2} σ^{-3} exp(−d²/2σ²)`.
#[derive(Clone, Copy, Debug)]
pub struct GaussianKernel {
    scale: f64,
    inv_two_var: f64,
}

impl GaussianKernel {
    pub fn new(sigma: f64) -> Self {
        Self {
            scale: (2.0 * PI).powf(-1.5) / (sigma * sigma * sigma),
            inv_two_var: 0.5 / (sigma * sigma),
        }
    }

    #[inline]
    pub fn density(&self, dist_sq: f64) -> f64 {
        self.scale * (-dist_sq * self.inv_two_var).exp()
    }

    pub fn peak(&self) -> f64 {
        self.scale
    }
}

/// Pixel bounds `(u0..=u1, v0..=v1)` of the window centered on `p`'s projection.
#[inline]
fn window_bounds(
    p: &Vector3<f64>,
    maps: &VertexNormalMaps,
    window: usize,
) -> Option<(usize, usize, usize, usize, i64, i64)> {
    let params = maps.params();
    let pr = params.project(p);
    if !pr.in_bounds {
        return None;
    }
    let half = (window / 2) as i64;
    let u0 = (pr.u - half).max(0) as usize;
    let v0 = (pr.v - half).max(0) as usize;
    let u1 = (pr.u + half).min(params.width as i64 - 1) as usize;
    let v1 = (pr.v + half).min(params.height as i64 - 1) as usize;
    Some((u0, u1, v0, v1, pr.u, pr.v))
}

/// Gaussian moments of `p` (map-origin frame) over the window around its projection.
pub fn gaussian_moments(p: &Vector3<f64>, maps: &VertexNormalMaps, cfg: &RegistrationConfig) -> Moments {
    let kernel = GaussianKernel::new(cfg.sigma);
    gaussian_moments_with(p, maps, cfg.window, &kernel)
}

#[inline]
pub(crate) fn gaussian_moments_with(
    p: &Vector3<f64>,
    maps: &VertexNormalMaps,
    window: usize,
    kernel: &GaussianKernel,
) -> Moments {
    let Some((u0, u1, v0, v1, _, _)) = window_bounds(p, maps, window) else {
        return Moments::invalid();
    };
    let width = maps.params().width;
    let mut m0 = 0.0;
    let mut m1 = Vector3::zeros();
    let mut n_sum = Vector3::zeros();
    let mut neighbors = 0;
    for v in v0..=v1 {
        let row = v * width;
        for u in u0..=u1 {
            if let Some(s) = maps.surfel(row + u) {
                let g = kernel.density((p - s.vertex).norm_squared());
                m0 += g;
                m1 += s.vertex * g;
                n_sum += s.normal * g;
                neighbors += 1;
            }
        }
    }
    let n_norm = n_sum.norm();
    if neighbors == 0 || !(m0 > 0.0) || n_norm < 1e-12 {
        return Moments {
            m0,
            m1,
            normal: Vector3::zeros(),
            neighbors,
            valid: false,
        };
    }
    Moments {
        m0,
        m1,
        normal: n_sum / n_norm,
        neighbors,
        valid: true,
    }
}

/// Plain point-to-plane association: the normal-carrying pixel closest to the
/// projection of `p` inside the window, ties broken by 3D distance.
pub fn nearest_pixel_moments(
    p: &Vector3<f64>,
    maps: &VertexNormalMaps,
    cfg: &RegistrationConfig,
) -> Moments {
    let Some((u0, u1, v0, v1, pu, pv)) = window_bounds(p, maps, cfg.window) else {
        return Moments::invalid();
    };
    let width = maps.params().width;
    let mut best: Option<(i64, f64, usize)> = None;
    for v in v0..=v1 {
        for u in u0..=u1 {
            let idx = v * width + u;
            if let Some(s) = maps.surfel(idx) {
                let pix = (u as i64 - pu).pow(2) + (v as i64 - pv).pow(2);
                let dist = (p - s.vertex).norm_squared();
                let better = match best {
                    None => true,
                    Some((bp, bd, _)) => pix < bp || (pix == bp && dist < bd),
                };
                if better {
                    best = Some((pix, dist, idx));
                }
            }
        }
    }
    match best {
        Some((_, dist, idx)) if dist.sqrt() <= cfg.icp_max_distance => {
            let s = maps.surfel(idx).expect("selected pixel has a surfel");
            Moments {
                m0: 1.0,
                m1: s.vertex,
                normal: s.normal,
                neighbors: 1,
                valid: true,
            }
        }
        _ => Moments::invalid(),
    }
}
