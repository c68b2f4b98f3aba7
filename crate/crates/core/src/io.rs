//! File formats: scan CSV and binary containers, trajectory text files, map
//! export and per-scan diagnostics lines.
//!
//! Binary scan container (all fields little-endian):
//!
//! ```text
//! file    := magic:"SSLB" version:u32 label_len:u32 label:[u8; label_len] record*
//! record  := count:u32 t_b:f64 t_e:f64 point[count]
//! point   := x:f32 y:f32 z:f32 dt:f32        // t = t_b + dt
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{UnitQuaternion, Vector3};
use serde_json::json;

use crate::error::{Error, Result};
use crate::motion::{Scan, ScanPoint};
use crate::pipeline::TrajectoryRecord;
use crate::range_image::{RangeImageMap, VertexNormalMaps};
use crate::se3::Pose;

pub const BINARY_MAGIC: [u8; 4] = *b"SSLB";
pub const BINARY_VERSION: u32 = 1;

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// CSV scans

/// Reads one CSV scan.
///
/// Lines starting with `#` are comments, except `# sensor: <label>` and
/// `# window: <t_b> <t_e>`. Rows are `x,y,z` or `x,y,z,t`; a non-numeric first
/// row is taken as a column header. Without a `t` column, stamps are spread
/// across the window by index. Without a window line, `t_b` is the earliest
/// stamp (or `fallback_t_b` when unstamped) and the window is `default_window` long.
pub fn read_csv_scan(path: &Path, default_window: f64, fallback_t_b: f64) -> Result<Scan> {
    let reader = open(path)?;
    let mut window: Option<(f64, f64)> = None;
    let mut positions = Vec::new();
    let mut stamps: Vec<Option<f64>> = Vec::new();
    let mut seen_row = false;

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(rest) = comment.strip_prefix("window:") {
                let vals: Vec<&str> = rest.split_whitespace().collect();
                let parsed: Option<Vec<f64>> = vals.iter().map(|v| v.parse().ok()).collect();
                match parsed.as_deref() {
                    Some([tb, te]) if tb.is_finite() && te.is_finite() && te > tb => {
                        window = Some((*tb, *te))
                    }
                    _ => return Err(Error::parse(path, lineno, format!("invalid window line '{line}'"))),
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let values: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match values {
            Ok(v) => v,
            Err(_) if !seen_row && fields.iter().any(|f| f.chars().any(char::is_alphabetic)) => {
                seen_row = true;
                continue;
            }
            Err(_) => return Err(Error::parse(path, lineno, format!("non-numeric field in '{line}'"))),
        };
        seen_row = true;
        if values.len() != 3 && values.len() != 4 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 3 or 4 fields, found {}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(path, lineno, "non-finite value"));
        }
        if let (Some(&t), Some((tb, te))) = (values.get(3), window) {
            if t < tb || t > te {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("timestamp {t} outside window [{tb}, {te}]"),
                ));
            }
        }
        positions.push(Vector3::new(values[0], values[1], values[2]));
        stamps.push(values.get(3).copied());
    }

    let stamped = stamps.iter().filter(|s| s.is_some()).count();
    if stamped != 0 && stamped != stamps.len() {
        return Err(Error::parse(path, 0, "rows mix stamped and unstamped points"));
    }
    if stamped == 0 {
        let (tb, te) = window.unwrap_or((fallback_t_b, fallback_t_b + default_window));
        return Ok(Scan::with_index_timestamps(positions, tb, te));
    }

    let mut points: Vec<ScanPoint> = positions
        .into_iter()
        .zip(stamps)
        .map(|(p, t)| ScanPoint::new(p, t.expect("all rows stamped")))
        .collect();
    points.sort_by(|a, b| a.t.total_cmp(&b.t));
    let (tb, te) = window.unwrap_or_else(|| {
        let tb = points[0].t;
        let tmax = points[points.len() - 1].t;
        (tb, (tb + default_window).max(tmax))
    });
    Ok(Scan::new(points, tb, te))
}

/// Writes a stamped CSV scan with sensor and window header lines.
pub fn write_csv_scan(path: &Path, scan: &Scan, sensor: &str) -> Result<()> {
    let mut w = create(path)?;
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "# sensor: {sensor}")?;
        writeln!(w, "# window: {} {}", scan.t_b, scan.t_e)?;
        writeln!(w, "x,y,z,t")?;
        for p in &scan.points {
            writeln!(w, "{},{},{},{}", p.position.x, p.position.y, p.position.z, p.t)?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Binary container

pub struct BinaryWriter<W: Write> {
    inner: W,
}

impl<W: Write> BinaryWriter<W> {
    pub fn new(mut inner: W, label: &str) -> std::io::Result<Self> {
        inner.write_all(&BINARY_MAGIC)?;
        inner.write_u32::<LittleEndian>(BINARY_VERSION)?;
        inner.write_u32::<LittleEndian>(label.len() as u32)?;
        inner.write_all(label.as_bytes())?;
        Ok(Self { inner })
    }

    pub fn write_scan(&mut self, scan: &Scan) -> std::io::Result<()> {
        let w = &mut self.inner;
        w.write_u32::<LittleEndian>(scan.len() as u32)?;
        w.write_f64::<LittleEndian>(scan.t_b)?;
        w.write_f64::<LittleEndian>(scan.t_e)?;
        for p in &scan.points {
            w.write_f32::<LittleEndian>(p.position.x as f32)?;
            w.write_f32::<LittleEndian>(p.position.y as f32)?;
            w.write_f32::<LittleEndian>(p.position.z as f32)?;
            w.write_f32::<LittleEndian>((p.t - scan.t_b) as f32)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub fn write_binary(path: &Path, label: &str, scans: &[Scan]) -> Result<()> {
    let run = || -> std::io::Result<()> {
        let mut w = BinaryWriter::new(BufWriter::new(File::create(path)?), label)?;
        for s in scans {
            w.write_scan(s)?;
        }
        w.finish()?;
        Ok(())
    };
    run().map_err(|e| Error::io(path, e))
}

/// Streams scans out of a binary container.
pub struct BinaryReader<R: Read> {
    inner: R,
    path: PathBuf,
    label: String,
    record: usize,
    done: bool,
}

impl<R: Read> BinaryReader<R> {
    pub fn new(mut inner: R, path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::parse(path, 0, msg.to_string());
        let mut magic = [0u8; 4];
        inner.read_exact(&mut magic).map_err(|_| bad("missing container header"))?;
        if magic != BINARY_MAGIC {
            return Err(bad("not a scan container (bad magic)"));
        }
        let version = inner.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
        if version != BINARY_VERSION {
            return Err(bad(&format!("unsupported container version {version}")));
        }
        let len = inner.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
        let mut label = vec![0u8; len];
        inner.read_exact(&mut label).map_err(|_| bad("truncated label"))?;
        let label = String::from_utf8(label).map_err(|_| bad("label is not UTF-8"))?;
        Ok(Self {
            inner,
            path: path.to_path_buf(),
            label,
            record: 0,
            done: false,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    fn read_record(&mut self) -> Result<Option<Scan>> {
        self.record += 1;
        let count = match self.inner.read_u32::<LittleEndian>() {
            Ok(c) => c as usize,
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(Error::io(&self.path, e)),
        };
        let truncated = |_| Error::parse(&self.path, self.record, "truncated scan record");
        let t_b = self.inner.read_f64::<LittleEndian>().map_err(truncated)?;
        let t_e = self.inner.read_f64::<LittleEndian>().map_err(truncated)?;
        let mut raw = vec![0f32; count * 4];
        self.inner
            .read_f32_into::<LittleEndian>(&mut raw)
            .map_err(truncated)?;
        let points = raw
            .chunks_exact(4)
            .map(|c| {
                ScanPoint::new(
                    Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64),
                    t_b + c[3] as f64,
                )
            })
            .collect();
        Ok(Some(Scan::new(points, t_b, t_e)))
    }
}

impl<R: Read> Iterator for BinaryReader<R> {
    type Item = Result<Scan>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.read_record() {
            Ok(Some(s)) => Some(Ok(s)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Scan sources

enum Source {
    Binary(BinaryReader<BufReader<File>>),
    Csv {
        files: std::vec::IntoIter<PathBuf>,
        index: usize,
    },
}

/// Scans in file order, rejecting any whose `t_b` does not increase.
pub struct ScanStream {
    source: Source,
    default_window: f64,
    last: Option<(PathBuf, f64)>,
    failed: bool,
}

impl ScanStream {
    fn check_order(&mut self, path: &Path, scan: &Scan) -> Result<()> {
        if let Some((_, prev)) = &self.last {
            if !(scan.t_b > *prev) {
                return Err(Error::OutOfOrder {
                    path: path.to_path_buf(),
                    previous: *prev,
                    current: scan.t_b,
                });
            }
        }
        self.last = Some((path.to_path_buf(), scan.t_b));
        Ok(())
    }
}

impl Iterator for ScanStream {
    type Item = Result<Scan>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let (path, scan) = match &mut self.source {
            Source::Binary(reader) => {
                let path = reader.path.clone();
                match reader.next()? {
                    Ok(s) => (path, s),
                    Err(e) => {
                        self.failed = true;
                        return Some(Err(e));
                    }
                }
            }
            Source::Csv { files, index } => {
                let path = files.next()?;
                let fallback = *index as f64 * self.default_window;
                *index += 1;
                match read_csv_scan(&path, self.default_window, fallback) {
                    Ok(s) => (path, s),
                    Err(e) => {
                        self.failed = true;
                        return Some(Err(e));
                    }
                }
            }
        };
        if let Err(e) = self.check_order(&path, &scan) {
            self.failed = true;
            return Some(Err(e));
        }
        Some(Ok(scan))
    }
}

fn has_magic(path: &Path) -> Result<bool> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 4];
    match f.read_exact(&mut magic) {
        Ok(()) => Ok(magic == BINARY_MAGIC),
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => Ok(false),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Opens a scan source: a binary container, a single CSV file, or a directory
/// whose `.csv` files are read in lexicographic order.
pub fn read_scans(path: &Path, default_window: f64) -> Result<ScanStream> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    let source = if meta.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
            .collect();
        files.sort();
        Source::Csv {
            files: files.into_iter(),
            index: 0,
        }
    } else if has_magic(path)? {
        Source::Binary(BinaryReader::new(open(path)?, path)?)
    } else {
        Source::Csv {
            files: vec![path.to_path_buf()].into_iter(),
            index: 0,
        }
    };
    Ok(ScanStream {
        source,
        default_window,
        last: None,
        failed: false,
    })
}

// ---------------------------------------------------------------------------
// Trajectories

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StampedPose {
    pub t: f64,
    pub pose: Pose,
}

/// Shortest round-trip decimal, with negative zero printed as `0`.
fn num(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else {
        format!("{x}")
    }
}

/// `t tx ty tz qx qy qz qw` with a unit quaternion and `qw ≥ 0`.
pub fn format_pose_line(t: f64, pose: &Pose) -> String {
    let q = pose.quaternion().into_inner().normalize();
    let q = if q.w < 0.0 { -q } else { q };
    let p = pose.translation;
    format!(
        "{:.6} {} {} {} {} {} {} {}",
        t,
        num(p.x),
        num(p.y),
        num(p.z),
        num(q.i),
        num(q.j),
        num(q.k),
        num(q.w)
    )
}

pub fn end_poses(records: &[TrajectoryRecord]) -> Vec<StampedPose> {
    records
        .iter()
        .map(|r| StampedPose { t: r.t_e, pose: r.end })
        .collect()
}

pub fn begin_poses(records: &[TrajectoryRecord]) -> Vec<StampedPose> {
    records
        .iter()
        .map(|r| StampedPose { t: r.t_b, pose: r.begin })
        .collect()
}

pub fn write_trajectory(path: &Path, poses: &[StampedPose]) -> Result<()> {
    let mut w = create(path)?;
    let mut body = || -> std::io::Result<()> {
        for p in poses {
            writeln!(w, "{}", format_pose_line(p.t, &p.pose))?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

/// Parses one trajectory line; `None` for blank and `#` lines.
pub fn parse_pose_line(line: &str) -> std::result::Result<Option<StampedPose>, String> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|v| v.parse::<f64>().map_err(|_| format!("cannot parse '{v}'")))
        .collect::<std::result::Result<_, _>>()?;
    if vals.len() != 8 {
        return Err(format!("expected 8 values, found {}", vals.len()));
    }
    if vals.iter().any(|v| !v.is_finite()) {
        return Err("non-finite value".into());
    }
    let q = nalgebra::Quaternion::new(vals[7], vals[4], vals[5], vals[6]);
    if q.norm() < 1e-12 {
        return Err("zero quaternion".into());
    }
    let pose = Pose::from_quaternion(
        &UnitQuaternion::from_quaternion(q),
        Vector3::new(vals[1], vals[2], vals[3]),
    );
    Ok(Some(StampedPose { t: vals[0], pose }))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<StampedPose>> {
    let reader = open(path)?;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        match parse_pose_line(&line) {
            Ok(Some(p)) => out.push(p),
            Ok(None) => {}
            Err(msg) => return Err(Error::parse(path, i + 1, msg)),
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Map export

/// ASCII PLY with `x y z nx ny nz` per occupied pixel, in the world frame.
/// Pixels without an accepted normal are written with a zero normal.
pub fn export_map(path: &Path, map: &RangeImageMap, maps: Option<&VertexNormalMaps>) -> Result<()> {
    let origin = *map.origin();
    let mut w = create(path)?;
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "ply")?;
        writeln!(w, "format ascii 1.0")?;
        writeln!(w, "element vertex {}", map.occupied_count())?;
        for name in ["x", "y", "z", "nx", "ny", "nz"] {
            writeln!(w, "property double {name}")?;
        }
        writeln!(w, "end_header")?;
        for (idx, point) in map.iter() {
            let p = origin.transform_point(&point.position);
            let n = maps
                .and_then(|m| m.surfel(idx))
                .filter(|s| s.vertex == point.position)
                .map(|s| origin.transform_vector(&s.normal))
                .unwrap_or_else(Vector3::zeros);
            writeln!(
                w,
                "{} {} {} {} {} {}",
                num(p.x),
                num(p.y),
                num(p.z),
                num(n.x),
                num(n.y),
                num(n.z)
            )?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

/// Reads back a map written by [`export_map`] as `(position, normal)` pairs.
pub fn read_map(path: &Path) -> Result<Vec<(Vector3<f64>, Vector3<f64>)>> {
    let reader = open(path)?;
    let mut lines = reader.lines().enumerate();
    let mut expected = None;
    for (i, line) in lines.by_ref() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if let Some(n) = line.strip_prefix("element vertex ") {
            expected = Some(
                n.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::parse(path, i + 1, "bad vertex count"))?,
            );
        }
        if line.trim() == "end_header" {
            break;
        }
    }
    let expected = expected.ok_or_else(|| Error::parse(path, 0, "missing vertex count"))?;
    let mut out = Vec::with_capacity(expected);
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(path, i + 1, "non-numeric vertex"))?;
        if v.len() != 6 {
            return Err(Error::parse(path, i + 1, format!("expected 6 values, found {}", v.len())));
        }
        out.push((Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5])));
    }
    if out.len() != expected {
        return Err(Error::parse(
            path,
            0,
            format!("header announces {expected} vertices, found {}", out.len()),
        ));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Diagnostics

/// One JSON object per scan.
pub fn diagnostics_line(record: &TrajectoryRecord) -> String {
    let d = &record.diagnostics;
    json!({
        "index": record.index,
        "t_b": record.t_b,
        "t_e": record.t_e,
        "points": record.points,
        "initialization": record.initialization,
        "iterations": d.iterations,
        "initial_objective": d.initial_objective,
        "final_objective": d.final_objective,
        "valid_ratio": d.valid_ratio,
        "converged": d.converged,
        "diverged": d.diverged,
        "ct_enabled": record.ct_enabled,
        "gmm_enabled": record.gmm_enabled,
    })
    .to_string()
}

pub fn write_diagnostics(path: &Path, records: &[TrajectoryRecord]) -> Result<()> {
    let mut w = create(path)?;
    let mut body = || -> std::io::Result<()> {
        for r in records {
            writeln!(w, "{}", diagnostics_line(r))?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}
