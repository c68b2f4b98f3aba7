//! `key = value` configuration files with environment overrides.
//!
//! Blank lines and text after `#` are ignored. Every key may be overridden by
//! an environment variable named `RANGEODO_<KEY>` in upper case, e.g.
//! `RANGEODO_SIGMA=0.3`. Overrides are applied after the file.

use std::fmt;
use std::path::Path;

use rangeodo::{OdometryConfig, ProjectionParams};

pub const ENV_PREFIX: &str = "RANGEODO_";

/// Recognized keys with a short description, in documentation order.
pub const KEYS: &[(&str, &str)] = &[
    ("sigma", "Gaussian standard deviation, m"),
    ("w", "uniform outlier weight, (0, 1)"),
    ("window", "filter window side in pixels, odd"),
    ("lambda_loc", "location constraint weight"),
    ("lambda_vel", "velocity constraint weight"),
    ("beta_res", "range image resolution, pixels per degree"),
    ("fov_hor", "horizontal field of view, degrees"),
    ("fov_ver", "vertical field of view, degrees"),
    ("delta_sigma", "surface variation threshold for normals"),
    ("normal_patch", "normal estimation patch side in pixels, odd"),
    ("max_em_iters", "EM iteration cap per scan"),
    ("convergence_eps", "step norm at which EM stops"),
    ("scan_window", "integration window for sources without one, s"),
    ("r_min", "minimum point range, m"),
    ("r_max", "maximum point range, m"),
    ("collision_band", "range band for replacing map points, m"),
    ("init_scans", "scans merged at identity before registration starts"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    /// `path:line`, the environment variable, or `configuration`.
    pub origin: String,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.key {
            Some(k) => write!(f, "{}: key '{}': {}", self.origin, k, self.message),
            None => write!(f, "{}: {}", self.origin, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub origin: String,
}

impl Entry {
    fn error(&self, message: impl Into<String>) -> ConfigError {
        ConfigError {
            origin: self.origin.clone(),
            key: Some(self.key.clone()),
            message: message.into(),
        }
    }

    fn float(&self) -> Result<f64, ConfigError> {
        match self.value.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.error(format!("expected a finite number, got '{}'", self.value))),
        }
    }

    fn count(&self) -> Result<usize, ConfigError> {
        self.value
            .parse::<usize>()
            .map_err(|_| self.error(format!("expected a non-negative integer, got '{}'", self.value)))
    }
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

pub fn parse(text: &str, path: &Path) -> Result<Vec<Entry>, ConfigError> {
    let mut entries: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let origin = format!("{}:{}", path.display(), i + 1);
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError {
                origin,
                key: None,
                message: format!("expected 'key = value', got '{line}'"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        let entry = Entry {
            key: key.to_string(),
            value: value.to_string(),
            origin,
        };
        if !known(key) {
            return Err(entry.error("unknown key"));
        }
        if let Some(first) = entries.iter().find(|e| e.key == key) {
            return Err(entry.error(format!("already set at {}", first.origin)));
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Overrides from `vars`; any variable with the prefix must name a known key.
pub fn env_entries<I>(vars: I) -> Result<Vec<Entry>, ConfigError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut out: Vec<Entry> = vars
        .into_iter()
        .filter_map(|(name, value)| {
            let key = name.strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
            Some(Entry {
                key,
                value: value.trim().to_string(),
                origin: format!("environment variable {name}"),
            })
        })
        .collect();
    if let Some(bad) = out.iter().find(|e| !known(&e.key)) {
        return Err(bad.error("unknown key"));
    }
    out.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(out)
}

/// Applies `entries` in order on top of the defaults and validates the result.
pub fn build(entries: &[Entry]) -> Result<OdometryConfig, ConfigError> {
    let mut cfg = OdometryConfig::default();
    let (mut fov_hor, mut fov_ver) = (cfg.projection.fov_hor.to_degrees(), cfg.projection.fov_ver.to_degrees());
    let mut beta_res = cfg.projection.beta_res;
    let mut projection_origin = None;
    for e in entries {
        let reg = &mut cfg.registration;
        match e.key.as_str() {
            "sigma" => reg.sigma = e.float()?,
            "w" => reg.outlier_weight = e.float()?,
            "window" => reg.window = e.count()?,
            "lambda_loc" => reg.lambda_loc = e.float()?,
            "lambda_vel" => reg.lambda_vel = e.float()?,
            "delta_sigma" => reg.curvature_threshold = e.float()?,
            "normal_patch" => reg.normal_patch = e.count()?,
            "max_em_iters" => reg.max_em_iters = e.count()?,
            "convergence_eps" => reg.convergence_eps = e.float()?,
            "beta_res" => beta_res = e.float()?,
            "fov_hor" => fov_hor = e.float()?,
            "fov_ver" => fov_ver = e.float()?,
            "scan_window" => cfg.scan_window = e.float()?,
            "r_min" => cfg.r_min = e.float()?,
            "r_max" => cfg.r_max = e.float()?,
            "collision_band" => cfg.collision_band = e.float()?,
            "init_scans" => cfg.init_scans = e.count()?,
            _ => return Err(e.error("unknown key")),
        }
        if matches!(e.key.as_str(), "beta_res" | "fov_hor" | "fov_ver") {
            projection_origin = Some(e);
        }
    }
    cfg.projection = ProjectionParams::from_degrees(fov_hor, fov_ver, beta_res).map_err(|err| match projection_origin {
        Some(e) => e.error(err.to_string()),
        None => ConfigError {
            origin: "configuration".into(),
            key: None,
            message: err.to_string(),
        },
    })?;
    cfg.validate().map_err(|err| ConfigError {
        origin: "configuration".into(),
        key: None,
        message: err.to_string(),
    })?;
    Ok(cfg)
}

/// Reads `path` (if any), then applies `RANGEODO_*` variables from `vars`.
pub fn load<I>(path: Option<&Path>, vars: I) -> Result<OdometryConfig, ConfigError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut entries = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| ConfigError {
                origin: p.display().to_string(),
                key: None,
                message: format!("cannot read config file: {e}"),
            })?;
            parse(&text, p)?
        }
        None => Vec::new(),
    };
    entries.extend(env_entries(vars)?);
    build(&entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> Result<OdometryConfig, ConfigError> {
        build(&parse(text, Path::new("c.txt"))?)
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(cfg("# nothing\n\n").unwrap(), OdometryConfig::default());
    }

    #[test]
    fn keys_land_in_the_right_fields() {
        let c = cfg("sigma = 0.3\nw=0.1 # comment\nwindow = 5\nlambda_loc = 0.5\nlambda_vel = 0.25\n\
                     beta_res = 5\nfov_hor = 70.4\nfov_ver = 77.2\ndelta_sigma = 0.04\ninit_scans = 2\n")
            .unwrap();
        let r = &c.registration;
        assert_eq!((r.sigma, r.outlier_weight, r.window), (0.3, 0.1, 5));
        assert_eq!((r.lambda_loc, r.lambda_vel, r.curvature_threshold), (0.5, 0.25, 0.04));
        assert_eq!(c.projection, ProjectionParams::from_degrees(70.4, 77.2, 5.0).unwrap());
        assert_eq!(c.init_scans, 2);
    }

    #[test]
    fn errors_name_key_and_line() {
        let e = cfg("sigma = 0.3\n\nbogus = 1\n").unwrap_err();
        assert_eq!(e.to_string(), "c.txt:3: key 'bogus': unknown key");
        let e = cfg("sigma = abc\n").unwrap_err();
        assert_eq!((e.origin.as_str(), e.key.as_deref()), ("c.txt:1", Some("sigma")));
        let e = cfg("window = 3.5\n").unwrap_err();
        assert_eq!(e.key.as_deref(), Some("window"));
        let e = cfg("sigma 0.3\n").unwrap_err();
        assert_eq!(e.origin, "c.txt:1");
        let e = cfg("w = 0.1\nw = 0.2\n").unwrap_err();
        assert!(e.to_string().contains("already set at c.txt:1"), "{e}");
        let e = cfg("fov_hor = 0\n").unwrap_err();
        assert_eq!((e.origin.as_str(), e.key.as_deref()), ("c.txt:1", Some("fov_hor")));
    }

    #[test]
    fn invalid_values_fail_validation() {
        assert!(cfg("window = 4\n").unwrap_err().message.contains("window"));
        assert!(cfg("w = 1.0\n").is_err());
    }

    #[test]
    fn environment_overrides_the_file() {
        let vars = vec![
            ("RANGEODO_SIGMA".to_string(), "0.5".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        std::fs::write(&path, "sigma = 0.3\nw = 0.1\n").unwrap();
        let c = load(Some(&path), vars).unwrap();
        assert_eq!((c.registration.sigma, c.registration.outlier_weight), (0.5, 0.1));

        let e = load(None, vec![("RANGEODO_SIGMAA".to_string(), "1".to_string())]).unwrap_err();
        assert_eq!(e.origin, "environment variable RANGEODO_SIGMAA");
        let e = load(Some(&dir.path().join("missing.txt")), Vec::new()).unwrap_err();
        assert!(e.to_string().contains("missing.txt"));
    }
}
