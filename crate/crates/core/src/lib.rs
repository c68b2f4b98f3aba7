//! Continuous-time Gaussian-mixture filter registration odometry for sparse,
//! small field-of-view solid-state LiDAR scans.
//!
//! The engine keeps its whole map inside a single range image. Each incoming
//! scan is registered against that image with an EM loop: correspondences are
//! Gaussian-transform moments gathered by a windowed filter on the image, and
//! the M step takes one Gauss-Newton step on a 12-DoF state made of the scan's
//! begin and end poses. Points inside the scan are de-skewed by interpolating
//! between those two poses on SE(3).
//!
//! A ray-casting simulator with Risley-prism-like scan patterns provides ground
//! truth for end-to-end verification.

pub mod error;
pub mod io;
pub mod motion;
pub mod pipeline;
pub mod range_image;
pub mod registration;
pub mod se3;
pub mod simulator;

pub use error::{Error, Result};
pub use motion::{compensate, predict_state, Scan, ScanPoint, State};
pub use pipeline::{run_sequence, Odometry, OdometryConfig, TrajectoryRecord};
pub use range_image::{ProjectionParams, RangeImageMap, VertexNormalMaps};
pub use registration::{Diagnostics, Moments, Reduction, RegistrationConfig};
pub use se3::{Pose, Twist};
