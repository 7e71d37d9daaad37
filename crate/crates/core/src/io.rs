//! File codecs and provenance manifests.
//!
//! Every artifact the CLI writes gets a `<file>.meta.json` sidecar holding a
//! [`RunManifest`]; dataset sidecars also carry the sampler parameters,
//! protocol events and the simulated clock.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, UNIX_EPOCH};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::arm::{ConfigurationL, EndEffectorPose};
use crate::iklearn::EpochStats;
use crate::sampling::{DatasetRow, MocapNoise, ProtocolEvent, SamplerParams, WorkspaceDataset};
use crate::trajectory::TrackingReport;

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const DATASET_COLUMNS: [&str; 16] =
    ["l1", "l2", "l3", "l4", "l5", "l6", "l7", "l8", "l9", "x", "y", "z", "qw", "qx", "qy", "qz"];
/// Allowed deviation of a stored quaternion from unit norm.
pub const QUAT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("line {line}, column {column}: {msg}")]
    Field { line: usize, column: String, msg: String },
    #[error("line {line}: quaternion norm {norm} is not 1")]
    QuaternionNorm { line: usize, norm: f64 },
    #[error("json: {0}")]
    Json(String),
    #[error("OFF: {0}")]
    Off(String),
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::File { path: path.into(), source })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    std::fs::write(path, text).map_err(|source| IoError::File { path: path.into(), source })
}

/// Lowercase hex SHA-256.
pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String, IoError> {
    let bytes = std::fs::read(path).map_err(|source| IoError::File { path: path.into(), source })?;
    Ok(hash_bytes(&bytes))
}

/// Exactly 17 significant digits, fixed-point where that stays readable.
pub fn format_f64(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v:?}");
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..=20).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        format!("{v:.decimals$}")
    } else {
        format!("{v:.16e}")
    }
}

// ---------------------------------------------------------------- dataset CSV

pub fn dataset_to_csv(rows: &[DatasetRow]) -> String {
    let mut out = DATASET_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let fields = r.config.cable_lengths.iter().chain(&r.pose.position).chain(&r.pose.orientation);
        out.push_str(&fields.map(|v| format_f64(*v)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

fn check_header(header: &str) -> Result<(), IoError> {
    let got: Vec<&str> = header.split(',').map(str::trim).collect();
    if let Some(missing) = DATASET_COLUMNS.iter().find(|c| !got.contains(c)) {
        return Err(IoError::Schema(format!("missing column {missing}")));
    }
    if let Some(extra) = got.iter().find(|c| !DATASET_COLUMNS.contains(c)) {
        return Err(IoError::Schema(format!("unexpected column {extra:?}")));
    }
    if got.len() != DATASET_COLUMNS.len() {
        return Err(IoError::Schema("duplicate column".into()));
    }
    if let Some(k) = (0..got.len()).find(|&k| got[k] != DATASET_COLUMNS[k]) {
        return Err(IoError::Schema(format!("column {} should be {}, found {}", k + 1, DATASET_COLUMNS[k], got[k])));
    }
    Ok(())
}

/// Parses and validates a dataset CSV. CRLF line endings are accepted.
pub fn dataset_from_csv(text: &str) -> Result<Vec<DatasetRow>, IoError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| IoError::Schema("empty file".into()))?;
    check_header(header.trim_start_matches('\u{feff}'))?;
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != DATASET_COLUMNS.len() {
            return Err(IoError::Schema(format!("line {line_no}: expected 16 fields, found {}", fields.len())));
        }
        let mut v = [0.0; 16];
        for (k, f) in fields.iter().enumerate() {
            let field = |msg: String| IoError::Field { line: line_no, column: DATASET_COLUMNS[k].into(), msg };
            v[k] = f.trim().parse::<f64>().map_err(|e| field(format!("{e}: {f:?}")))?;
            if !v[k].is_finite() {
                return Err(field(format!("non-finite value {f}")));
            }
        }
        let q = [v[12], v[13], v[14], v[15]];
        let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > QUAT_NORM_TOL {
            return Err(IoError::QuaternionNorm { line: line_no, norm });
        }
        rows.push(DatasetRow {
            config: ConfigurationL::new(std::array::from_fn(|k| v[k])),
            pose: EndEffectorPose { position: [v[9], v[10], v[11]], orientation: q },
        });
    }
    Ok(rows)
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRow>, IoError> {
    dataset_from_csv(&read_text(path)?)
}

/// Writes the CSV and its `.meta.json` sidecar.
pub fn write_dataset(path: &Path, ds: &WorkspaceDataset, manifest: &RunManifest) -> Result<(), IoError> {
    write_text(path, &dataset_to_csv(&ds.rows))?;
    write_json(&sidecar_path(path), &DatasetSidecar::new(ds, manifest.clone()))
}

/// Everything about a dataset that is not a row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub format_version: u32,
    pub rows: usize,
    pub seed: u64,
    pub sampler_params: SamplerParams,
    pub noise: MocapNoise,
    pub geometry_hash: String,
    pub events: Vec<ProtocolEvent>,
    /// Simulated protocol clock per row, seconds.
    pub timestamps: Vec<f64>,
    pub manifest: RunManifest,
}

impl DatasetSidecar {
    pub fn new(ds: &WorkspaceDataset, manifest: RunManifest) -> Self {
        DatasetSidecar {
            format_version: DATASET_FORMAT_VERSION,
            rows: ds.rows.len(),
            seed: ds.sampler_params.seed,
            sampler_params: ds.sampler_params.clone(),
            noise: ds.noise,
            geometry_hash: ds.geometry_hash.clone(),
            events: ds.events.clone(),
            timestamps: ds.timestamps.clone(),
            manifest,
        }
    }
}

// ------------------------------------------------------------------ manifests

/// Provenance record attached to every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub command: String,
    /// Input label (usually the path as given) to SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub toolkit_version: String,
    /// RFC 3339, UTC. Taken from `SOURCE_DATE_EPOCH` so reruns are
    /// byte-identical; the Unix epoch when unset.
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>) -> Self {
        RunManifest {
            format_version: MANIFEST_FORMAT_VERSION,
            command: command.into(),
            inputs: BTreeMap::new(),
            seed,
            toolkit_version: crate::VERSION.into(),
            timestamp: build_timestamp(std::env::var("SOURCE_DATE_EPOCH").ok().as_deref()),
        }
    }

    pub fn with_input(mut self, label: &str, path: &Path) -> Result<Self, IoError> {
        self.inputs.insert(label.into(), hash_file(path)?);
        Ok(self)
    }
}

/// Formats `SOURCE_DATE_EPOCH`-style seconds; anything unparsable is the epoch.
pub fn build_timestamp(epoch_seconds: Option<&str>) -> String {
    let secs = epoch_seconds.and_then(|s| s.trim().parse::<u64>().ok()).unwrap_or(0);
    humantime::format_rfc3339_seconds(UNIX_EPOCH + Duration::from_secs(secs)).to_string()
}

/// `out.csv` → `out.csv.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), IoError> {
    write_json(&sidecar_path(path), manifest)
}

// ----------------------------------------------------------------------- JSON

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable value");
    s.push('\n');
    s
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T, IoError> {
    serde_json::from_str(text).map_err(|e| IoError::Json(e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    write_text(path, &to_json(value))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    from_json(&read_text(path)?)
}

// ------------------------------------------------------------------------ OFF

pub fn mesh_to_off(vertices: &[[f64; 3]], faces: &[[usize; 3]]) -> String {
    let mut out = format!("OFF\n{} {} 0\n", vertices.len(), faces.len());
    for v in vertices {
        out.push_str(&format!("{} {} {}\n", format_f64(v[0]), format_f64(v[1]), format_f64(v[2])));
    }
    for f in faces {
        out.push_str(&format!("3 {} {} {}\n", f[0], f[1], f[2]));
    }
    out
}

/// Triangle meshes only; `#` comments are skipped.
pub fn mesh_from_off(text: &str) -> Result<(Vec<[f64; 3]>, Vec<[usize; 3]>), IoError> {
    let mut tokens = text.lines().map(|l| l.split('#').next().unwrap_or("")).flat_map(str::split_whitespace);
    if tokens.next() != Some("OFF") {
        return Err(IoError::Off("missing OFF keyword".into()));
    }
    let mut next_num = |what: &str| -> Result<f64, IoError> {
        let t = tokens.next().ok_or_else(|| IoError::Off(format!("truncated while reading {what}")))?;
        t.parse::<f64>().map_err(|_| IoError::Off(format!("bad {what} {t:?}")))
    };
    let count = |v: f64, what: &str| -> Result<usize, IoError> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(IoError::Off(format!("bad {what} {v}")))
        }
    };
    let nv = count(next_num("vertex count")?, "vertex count")?;
    let nf = count(next_num("face count")?, "face count")?;
    next_num("edge count")?;
    let mut verts = Vec::with_capacity(nv);
    for _ in 0..nv {
        verts.push([next_num("coordinate")?, next_num("coordinate")?, next_num("coordinate")?]);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        if count(next_num("face size")?, "face size")? != 3 {
            return Err(IoError::Off("only triangles are supported".into()));
        }
        let mut f = [0; 3];
        for slot in &mut f {
            *slot = count(next_num("vertex index")?, "vertex index")?;
            if *slot >= nv {
                return Err(IoError::Off(format!("vertex index {slot} out of range")));
            }
        }
        faces.push(f);
    }
    Ok((verts, faces))
}

// ------------------------------------------------------------- tabular output

pub const EPOCH_COLUMNS: &str = "epoch,learning_rate,train_loss,train_error_mm,val_loss,val_error_mm";

pub fn epoch_csv_line(s: &EpochStats) -> String {
    format!(
        "{},{},{},{},{},{}",
        s.epoch,
        format_f64(s.learning_rate),
        format_f64(s.train_loss),
        format_f64(s.train_error_mm),
        format_f64(s.val_loss),
        format_f64(s.val_error_mm)
    )
}

pub const WAYPOINT_COLUMNS: &str = "index,ref_x,ref_y,ref_z,ref_qw,ref_qx,ref_qy,ref_qz,\
l1,l2,l3,l4,l5,l6,l7,l8,l9,meas_x,meas_y,meas_z,meas_qw,meas_qx,meas_qy,meas_qz,\
position_error_mm,angular_error_deg,clamped,saturated";

/// Per-waypoint reference, command and measurement for plotting.
pub fn waypoints_to_csv(report: &TrackingReport) -> String {
    let mut out = String::from(WAYPOINT_COLUMNS);
    out.push('\n');
    for i in 0..report.reference.len() {
        let (r, m) = (&report.reference[i], &report.measured[i]);
        let nums = r
            .position
            .iter()
            .chain(&r.orientation)
            .chain(&report.commanded[i].cable_lengths)
            .chain(&m.position)
            .chain(&m.orientation)
            .chain([&report.position_errors_mm[i], &report.angular_errors_deg[i]]);
        let mut fields = vec![i.to_string()];
        fields.extend(nums.map(|v| format_f64(*v)));
        fields.push(report.clamped[i].to_string());
        fields.push(report.saturated[i].to_string());
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}
