//! Recorded simulation output and its CSV form.

use std::io::Write;
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_COLUMNS: [&str; 23] = [
    "t", "px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz", "wx", "wy", "wz", "n_raw",
    "n_reduced", "ke_xx", "ke_yy", "ke_zz", "t_collide_us", "t_reduce_us", "t_qp_us",
    "t_response_us",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
    pub n_raw: usize,
    pub n_reduced: usize,
    pub ke_xx: f64,
    pub ke_yy: f64,
    pub ke_zz: f64,
    pub t_collide_us: f64,
    pub t_reduce_us: f64,
    pub t_qp_us: f64,
    pub t_response_us: f64,
}

impl TrajectorySample {
    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.px, self.py, self.pz)
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::new(self.vx, self.vy, self.vz)
    }

    pub fn orientation(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::new_normalize(nalgebra::Quaternion::new(self.qw, self.qx, self.qy, self.qz))
    }

    pub fn net_stiffness(&self) -> Vector3<f64> {
        Vector3::new(self.ke_xx, self.ke_yy, self.ke_zz)
    }
}

/// Mean per-step phase timings in microseconds, over every step taken
/// (not only recorded rows).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub collide_us: f64,
    pub reduce_us: f64,
    pub qp_us: f64,
    pub response_us: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
    /// Step index at which the state became non-finite.
    pub diverged_at: Option<usize>,
    pub steps: usize,
    pub mean_times: PhaseTimes,
    /// Largest per-axis net stiffness seen over all steps.
    pub max_net_stiffness: Vector3<f64>,
    pub max_raw_contacts: usize,
}

impl Trajectory {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn last(&self) -> Option<&TrajectorySample> {
        self.samples.last()
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_COLUMNS)?;
        for s in &self.samples {
            w.write_record(&[
                fmt(s.t),
                fmt(s.px),
                fmt(s.py),
                fmt(s.pz),
                fmt(s.vx),
                fmt(s.vy),
                fmt(s.vz),
                fmt(s.qw),
                fmt(s.qx),
                fmt(s.qy),
                fmt(s.qz),
                fmt(s.wx),
                fmt(s.wy),
                fmt(s.wz),
                s.n_raw.to_string(),
                s.n_reduced.to_string(),
                fmt(s.ke_xx),
                fmt(s.ke_yy),
                fmt(s.ke_zz),
                fmt(s.t_collide_us),
                fmt(s.t_reduce_us),
                fmt(s.t_qp_us),
                fmt(s.t_response_us),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_csv_bytes()?)
    }

    pub fn read_csv(path: &Path) -> Result<Vec<TrajectorySample>> {
        let mut r = csv::Reader::from_path(path)?;
        let mut out = Vec::new();
        for row in r.deserialize() {
            out.push(row?);
        }
        Ok(out)
    }
}

/// Shortest representation that round-trips exactly.
fn fmt(v: f64) -> String {
    format!("{v:?}")
}

/// Write `bytes` to a temp file beside `path`, then rename over it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
