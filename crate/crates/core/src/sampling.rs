//! Configuration-space sampler and dataset generation against the plant.
//!
//! The sampler mirrors a MATLAB listing, so draws are consumed in a fixed
//! order: the `ΔL` column, the wrist `ΔR` matrix (column-major, as `rand(n,3)`
//! fills it), one `randi(3)` per wrist row, the elbow `ΔR` matrix, one
//! `randi(3)` per elbow row.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{
    check_well_defined, forward_kinematics, refine_configuration, virtual_mocap, ArmError, ArmGeometry, ConfigurationL,
    EndEffectorPose,
};
use crate::rng::{self, Purpose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("invalid sampler parameters: {0}")]
    InvalidParams(String),
    #[error("{dropped} of {n} rows dropped, above the 5% limit")]
    DropRate { dropped: usize, n: usize },
    #[error(transparent)]
    Arm(#[from] ArmError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerParams {
    pub n: usize,
    pub dl_max: f64,
    pub dr_max_shoulder: f64,
    pub dr_max_elbow: f64,
    pub dr_max_wrist: f64,
    pub alpha_comp: f64,
    pub beta_wrist: f64,
    pub seed: u64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        SamplerParams {
            n: 18_300,
            dl_max: 60.0,
            dr_max_shoulder: 60.0,
            dr_max_elbow: 60.0,
            dr_max_wrist: 80.0,
            alpha_comp: 8.0,
            beta_wrist: 0.75,
            seed: 0,
        }
    }
}

impl SamplerParams {
    pub fn validate(&self) -> Result<(), SamplingError> {
        let maxima = [self.dl_max, self.dr_max_shoulder, self.dr_max_elbow, self.dr_max_wrist];
        if maxima.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(SamplingError::InvalidParams("all maxima must be positive".into()));
        }
        if !(self.alpha_comp > 0.0 && self.alpha_comp.is_finite()) {
            return Err(SamplingError::InvalidParams("alpha_comp must be positive".into()));
        }
        if !(self.beta_wrist > 0.0 && self.beta_wrist <= 1.0) {
            return Err(SamplingError::InvalidParams("beta_wrist must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Largest possible `ΔL_offset`.
    pub fn offset_max(&self) -> f64 {
        // shoulder rows are copies of the elbow rows
        (self.dr_max_wrist + self.dr_max_elbow + self.dr_max_elbow) / self.alpha_comp
    }
}

/// Source of `rand` and `randi` draws.
pub trait Draws {
    /// Uniform on `[0, 1)`.
    fn uniform(&mut self) -> f64;
    /// Uniform integer on `1..=n`, MATLAB style.
    fn randi(&mut self, n: usize) -> usize;
}

impl<R: rand::RngCore> Draws for R {
    fn uniform(&mut self) -> f64 {
        self.random::<f64>()
    }

    fn randi(&mut self, n: usize) -> usize {
        self.random_range(1..=n)
    }
}

/// Constant draws, for checking the formulas by hand.
#[derive(Debug, Clone, Copy)]
pub struct FrozenDraws {
    pub uniform: f64,
    pub index: usize,
}

impl Draws for FrozenDraws {
    fn uniform(&mut self) -> f64 {
        self.uniform
    }

    fn randi(&mut self, _n: usize) -> usize {
        self.index
    }
}

/// Every intermediate of one sampled row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDeltas {
    pub delta_l_raw: f64,
    pub dr_wrist: [f64; 3],
    pub dr_elbow: [f64; 3],
    pub dr_shoulder: [f64; 3],
    /// 1-based zeroed column of the wrist and elbow rows.
    pub zero_wrist: usize,
    pub zero_elbow: usize,
    pub offset: f64,
    pub delta_l: f64,
    pub s_shoulder: [f64; 3],
    pub s_elbow: [f64; 3],
    pub s_wrist: [f64; 3],
    pub delta_cables: [f64; 9],
}

fn rand_matrix(d: &mut impl Draws, n: usize, scale: f64) -> Vec<[f64; 3]> {
    let mut m = vec![[0.0; 3]; n];
    for c in 0..3 {
        for row in m.iter_mut() {
            row[c] = -scale * d.uniform();
        }
    }
    m
}

fn abs_max(v: &[f64; 3]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Runs the sampler formulas and returns every intermediate per row.
pub fn sample_deltas(params: &SamplerParams, d: &mut impl Draws) -> Vec<SampleDeltas> {
    let n = params.n;
    let dl: Vec<f64> = (0..n).map(|_| -params.dl_max * d.uniform()).collect();
    let mut wr = rand_matrix(d, n, params.dr_max_wrist);
    let zw: Vec<usize> = wr
        .iter_mut()
        .map(|row| {
            let k = d.randi(3);
            row[k - 1] = 0.0;
            k
        })
        .collect();
    let mut el = rand_matrix(d, n, params.dr_max_elbow);
    let ze: Vec<usize> = el
        .iter_mut()
        .map(|row| {
            let k = d.randi(3);
            row[k - 1] = 0.0;
            k
        })
        .collect();
    let (f_sh, f_rest) = (3.0 / 7.0, 2.0 / 7.0);
    (0..n)
        .map(|i| {
            let sh = el[i];
            let offset = (abs_max(&wr[i]) + abs_max(&el[i]) + abs_max(&sh)) / params.alpha_comp;
            let delta_l = dl[i] + offset;
            let s_shoulder = sh.map(|r| r + f_sh * delta_l);
            let s_elbow = sh.map(|r| r + f_rest * delta_l);
            let s_wrist = wr[i].map(|r| r + f_rest * delta_l);
            let mut delta_cables = [0.0; 9];
            for k in 0..3 {
                let prox = s_shoulder[k] + s_elbow[k];
                delta_cables[k] = s_shoulder[k];
                delta_cables[3 + k] = prox;
                delta_cables[6 + k] = params.beta_wrist * prox + s_wrist[k];
            }
            SampleDeltas {
                delta_l_raw: dl[i],
                dr_wrist: wr[i],
                dr_elbow: el[i],
                dr_shoulder: sh,
                zero_wrist: zw[i],
                zero_elbow: ze[i],
                offset,
                delta_l,
                s_shoulder,
                s_elbow,
                s_wrist,
                delta_cables,
            }
        })
        .collect()
}

/// `𝓛 = 𝓛_home + Δ𝓛` for every sampled row.
pub fn sample_configs(params: &SamplerParams, geom: &ArmGeometry, d: &mut impl Draws) -> Vec<ConfigurationL> {
    let home = geom.home();
    sample_deltas(params, d)
        .into_iter()
        .map(|s| ConfigurationL::new(std::array::from_fn(|i| home.cable_lengths[i] + s.delta_cables[i])))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MocapNoise {
    pub sigma_pos: f64,
    pub sigma_ang_deg: f64,
}

impl MocapNoise {
    pub const NONE: MocapNoise = MocapNoise { sigma_pos: 0.0, sigma_ang_deg: 0.0 };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub config: ConfigurationL,
    pub pose: EndEffectorPose,
}

/// Protocol log entries; not data rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProtocolEvent {
    /// Cyclic compression by `delta_l` mm, inserted after `after_rows` poses.
    CompressionReset { after_rows: usize, cycles: usize, delta_l: f64 },
    /// A sampled configuration that could not be refined into the envelope.
    Dropped { draw_index: usize, config: ConfigurationL, reason: String },
}

pub const RESET_EVERY: usize = 100;
pub const RESET_CYCLES: usize = 5;
pub const RESET_DELTA_L: f64 = -70.0;
/// Simulated dwell per pose and per reset cycle, seconds.
pub const POSE_DWELL_S: f64 = 4.0;
pub const RESET_CYCLE_S: f64 = 10.0;
pub const MAX_DROP_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceDataset {
    pub rows: Vec<DatasetRow>,
    pub geometry_hash: String,
    pub sampler_params: SamplerParams,
    pub noise: MocapNoise,
    /// Simulated protocol clock at each row, seconds.
    pub timestamps: Vec<f64>,
    pub events: Vec<ProtocolEvent>,
}

impl WorkspaceDataset {
    pub fn dropped(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, ProtocolEvent::Dropped { .. })).count()
    }
}

/// Sample, refine, measure. Dropped rows are replaced by continuing the
/// sampler stream until `n` rows exist; more than 5% drops aborts.
pub fn generate_dataset(params: &SamplerParams, geom: &ArmGeometry, noise: MocapNoise) -> Result<WorkspaceDataset, SamplingError> {
    params.validate()?;
    geom.validate()?;
    let max_drop = (MAX_DROP_FRACTION * params.n as f64).floor() as usize;
    let mut draws = rng::stream(params.seed, Purpose::Sampler, 0);
    let mut rows = Vec::with_capacity(params.n);
    let mut timestamps = Vec::with_capacity(params.n);
    let mut events = Vec::new();
    let mut dropped = 0;
    let mut draw_index = 0;
    let mut clock = 0.0;
    while rows.len() < params.n {
        let batch = SamplerParams { n: params.n - rows.len(), ..params.clone() };
        for cfg in sample_configs(&batch, geom, &mut draws) {
            let idx = draw_index;
            draw_index += 1;
            let measured = refine_configuration(geom, &cfg).and_then(|l| Ok((l, forward_kinematics(geom, &l)?)));
            let (l, pose) = match measured {
                Ok(v) => v,
                Err(e) => {
                    dropped += 1;
                    events.push(ProtocolEvent::Dropped { draw_index: idx, config: cfg, reason: e.to_string() });
                    if dropped > max_drop {
                        return Err(SamplingError::DropRate { dropped, n: params.n });
                    }
                    continue;
                }
            };
            debug_assert!(check_well_defined(geom, &l).well_defined);
            let mut mocap_rng = rng::stream(params.seed, Purpose::Mocap, rows.len() as u64);
            let measured = virtual_mocap(&pose, noise.sigma_pos, noise.sigma_ang_deg, &mut mocap_rng);
            rows.push(DatasetRow { config: l, pose: measured });
            timestamps.push(clock);
            clock += POSE_DWELL_S;
            if rows.len() % RESET_EVERY == 0 && rows.len() < params.n {
                events.push(ProtocolEvent::CompressionReset { after_rows: rows.len(), cycles: RESET_CYCLES, delta_l: RESET_DELTA_L });
                clock += RESET_CYCLES as f64 * RESET_CYCLE_S;
            }
        }
    }
    Ok(WorkspaceDataset {
        rows,
        geometry_hash: geom.hash(),
        sampler_params: params.clone(),
        noise,
        timestamps,
        events,
    })
}
