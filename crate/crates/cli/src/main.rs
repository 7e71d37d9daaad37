//! `trunc`: command-line front end. Data goes to `--out` (or stdout),
//! diagnostics to stderr. Exit codes: 0 ok, 1 usage, 2 data or validation.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use trunc_core::arm::ArmGeometry;
use trunc_core::characterization::{fit_stiffness, parse_samples, StiffnessMode};
use trunc_core::geometry::{build_cell, expand_cell, CellSpec, LinkageGraph};
use trunc_core::iklearn::{self, IkModel, TrainConfig, MODEL_FORMAT_VERSION};
use trunc_core::io::{self, RunManifest, DATASET_FORMAT_VERSION, MANIFEST_FORMAT_VERSION};
use trunc_core::mechanism::mobility_analysis;
use trunc_core::rng::{stream, Purpose};
use trunc_core::sampling::{generate_dataset, MocapNoise, SamplerParams};
use trunc_core::trajectory::{execute, make_path, PathParams, ShapeTag, TrackingReport};
use trunc_core::workspace::{alpha_shape, workspace_metrics, WorkspaceMetrics};

type Error = Box<dyn std::error::Error>;

fn long_version() -> &'static str {
    Box::leak(
        format!(
            "{}\ndataset-csv {DATASET_FORMAT_VERSION}\nmodel-json {MODEL_FORMAT_VERSION}\nmanifest {MANIFEST_FORMAT_VERSION}",
            trunc_core::VERSION
        )
        .into_boxed_str(),
    )
}

#[derive(Parser)]
#[command(name = "trunc", version = trunc_core::VERSION, long_version = long_version(), about = "Torsionally rigid coupling and soft-arm toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a cell linkage and write it as JSON.
    GenCell(GenCell),
    /// Mobility analysis of a linkage JSON.
    AnalyzeModes(AnalyzeModes),
    /// Fit a stiffness to a load-deflection CSV.
    Characterize(Characterize),
    /// Generate a workspace dataset through the arm surrogate.
    Sample(Sample),
    /// Alpha-shape workspace metrics and boundary mesh.
    Workspace(Workspace),
    /// Train the inverse-kinematics network.
    TrainIk(TrainIk),
    /// Run a reference path through a model and the arm surrogate.
    EvalTraj(EvalTraj),
}

#[derive(Args)]
struct Out {
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Equatorial,
    Truss,
}

#[derive(Args)]
struct GenCell {
    #[arg(long, value_enum)]
    variant: VariantArg,
    /// Equatorial fold number N.
    #[arg(long, default_value_t = 4)]
    n: usize,
    /// Neutral radius, mm.
    #[arg(long, default_value_t = 28.0)]
    radius: f64,
    /// Phase angle to expand to, rad.
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    /// Link width, mm.
    #[arg(long)]
    link_width: Option<f64>,
    #[command(flatten)]
    out: Out,
}

#[derive(Args)]
struct AnalyzeModes {
    /// Linkage JSON from gen-cell.
    #[arg(long)]
    cell: PathBuf,
    #[command(flatten)]
    out: Out,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Twist,
    Bend,
    Extension,
}

#[derive(Args)]
struct Characterize {
    /// CSV with header `angle_or_disp,load`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[command(flatten)]
    out: Out,
}

#[derive(Args)]
struct Geom {
    /// Arm geometry config (key = value); built-in defaults when absent.
    #[arg(long)]
    geom: Option<PathBuf>,
}

#[derive(Args)]
struct Sample {
    #[arg(long, default_value_t = 18_300)]
    n: usize,
    /// Falls back to TRUNC_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    geom: Geom,
    /// Motion-capture position noise, mm.
    #[arg(long, default_value_t = 0.5)]
    sigma_pos: f64,
    /// Motion-capture orientation noise, deg.
    #[arg(long, default_value_t = 0.1)]
    sigma_ang: f64,
    #[command(flatten)]
    out: Out,
}

#[derive(Args)]
struct Workspace {
    #[arg(long)]
    dataset: PathBuf,
    /// Alpha radius, mm.
    #[arg(long, default_value_t = 34.4)]
    alpha: f64,
    #[command(flatten)]
    geom: Geom,
    /// Boundary mesh in OFF format.
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[command(flatten)]
    out: Out,
}

#[derive(Args)]
struct TrainIk {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1600)]
    hidden: usize,
    /// Falls back to TRUNC_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Model JSON; required because stdout carries the epoch log.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Circle,
    Triangle,
    Stairs,
}

#[derive(Args)]
struct EvalTraj {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum)]
    shape: ShapeArg,
    /// PathParams JSON overriding the shape's defaults.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Motion-capture noise as `POS_MM,ANG_DEG`.
    #[arg(long, default_value = "0,0", value_parser = parse_noise)]
    noise: MocapNoise,
    /// Falls back to TRUNC_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    geom: Geom,
    /// Take waypoint orientations from the nearest poses of this dataset.
    #[arg(long)]
    orient_from: Option<PathBuf>,
    /// Neighbours averaged per waypoint with --orient-from.
    #[arg(long, default_value_t = 5)]
    neighbours: usize,
    /// Per-waypoint CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    out: Out,
}

fn parse_noise(s: &str) -> Result<MocapNoise, String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [p, a] = parts[..] else {
        return Err("expected POS_MM,ANG_DEG".into());
    };
    let num = |t: &str| match t.trim().parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("bad noise level {t:?}")),
    };
    Ok(MocapNoise { sigma_pos: num(p)?, sigma_ang_deg: num(a)? })
}

fn resolve_seed(flag: Option<u64>) -> Result<u64, Error> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("TRUNC_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| format!("TRUNC_SEED is not an unsigned integer: {v:?}").into()),
        Err(_) => Ok(0),
    }
}

fn load_geometry(g: &Geom, manifest: &mut RunManifest) -> Result<ArmGeometry, Error> {
    match &g.geom {
        None => Ok(ArmGeometry::default()),
        Some(p) => {
            *manifest = manifest.clone().with_input(&p.display().to_string(), p)?;
            Ok(ArmGeometry::from_config_str(&io::read_text(p)?)?)
        }
    }
}

/// Writes `text` to `out` with a manifest sidecar, or to stdout.
fn emit(out: Option<&Path>, text: &str, manifest: &RunManifest) -> Result<(), Error> {
    match out {
        Some(p) => {
            io::write_text(p, text)?;
            io::write_manifest(p, manifest)?;
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T, manifest: &RunManifest) -> Result<(), Error> {
    emit(out, &io::to_json(value), manifest)
}

fn gen_cell(a: GenCell) -> Result<(), Error> {
    let mut spec = match a.variant {
        VariantArg::Equatorial => CellSpec::equatorial(a.n, a.radius),
        VariantArg::Truss => CellSpec::truss(a.n, a.radius),
    };
    if let Some(w) = a.link_width {
        spec.link_width = w;
    }
    let mut cell = build_cell(&spec)?;
    if a.gamma != 0.0 {
        cell = expand_cell(&cell, a.gamma)?;
    }
    emit_json(a.out.out.as_deref(), &cell, &RunManifest::new("gen-cell", None))
}

fn analyze_modes(a: AnalyzeModes) -> Result<(), Error> {
    let manifest = RunManifest::new("analyze-modes", None).with_input(&a.cell.display().to_string(), &a.cell)?;
    let cell: LinkageGraph = io::read_json(&a.cell)?;
    cell.validate()?;
    emit_json(a.out.out.as_deref(), &mobility_analysis(&cell)?.report(), &manifest)
}

#[derive(Serialize)]
struct StiffnessOutput {
    mode: StiffnessMode,
    stiffness: f64,
    intercept: f64,
    r2: f64,
}

fn characterize(a: Characterize) -> Result<(), Error> {
    let manifest = RunManifest::new("characterize", None).with_input(&a.input.display().to_string(), &a.input)?;
    let mode = match a.mode {
        ModeArg::Twist => StiffnessMode::Twist,
        ModeArg::Bend => StiffnessMode::Bend,
        ModeArg::Extension => StiffnessMode::Extension,
    };
    let rec = fit_stiffness(mode, &parse_samples(&io::read_text(&a.input)?)?)?;
    let out = StiffnessOutput { mode, stiffness: rec.fitted_stiffness, intercept: rec.intercept, r2: rec.r_squared };
    emit_json(a.out.out.as_deref(), &out, &manifest)
}

fn sample(a: Sample) -> Result<(), Error> {
    let seed = resolve_seed(a.seed)?;
    let mut manifest = RunManifest::new("sample", Some(seed));
    let geom = load_geometry(&a.geom, &mut manifest)?;
    let noise = MocapNoise { sigma_pos: a.sigma_pos, sigma_ang_deg: a.sigma_ang };
    if !(noise.sigma_pos >= 0.0 && noise.sigma_ang_deg >= 0.0) {
        return Err("noise levels must be non-negative".into());
    }
    let ds = generate_dataset(&SamplerParams { n: a.n, seed, ..Default::default() }, &geom, noise)?;
    eprintln!("sample: {} rows, {} dropped and replaced", ds.rows.len(), ds.dropped());
    match &a.out.out {
        Some(p) => io::write_dataset(p, &ds, &manifest)?,
        None => std::io::stdout().write_all(io::dataset_to_csv(&ds.rows).as_bytes())?,
    }
    Ok(())
}

#[derive(Serialize)]
struct WorkspaceOutput {
    alpha_mm: f64,
    points: usize,
    tetrahedra: usize,
    boundary_triangles: usize,
    #[serde(flatten)]
    metrics: WorkspaceMetrics,
}

fn workspace(a: Workspace) -> Result<(), Error> {
    let mut manifest = RunManifest::new("workspace", None).with_input(&a.dataset.display().to_string(), &a.dataset)?;
    let geom = load_geometry(&a.geom, &mut manifest)?;
    let rows = io::read_dataset(&a.dataset)?;
    let points: Vec<[f64; 3]> = rows.iter().map(|r| r.pose.position).collect();
    let hull = alpha_shape(&points, a.alpha)?;
    let metrics = workspace_metrics(&hull, &rows, geom.neutral_length)?;
    if let Some(mesh) = &a.mesh {
        let (v, f) = hull.boundary_mesh();
        io::write_text(mesh, &io::mesh_to_off(&v, &f))?;
        io::write_manifest(mesh, &manifest)?;
    }
    let out = WorkspaceOutput {
        alpha_mm: a.alpha,
        points: points.len(),
        tetrahedra: hull.tetrahedra.len(),
        boundary_triangles: hull.boundary_triangles.len(),
        metrics,
    };
    emit_json(a.out.out.as_deref(), &out, &manifest)
}

fn train_ik(a: TrainIk) -> Result<(), Error> {
    let seed = resolve_seed(a.seed)?;
    let manifest = RunManifest::new("train-ik", Some(seed)).with_input(&a.dataset.display().to_string(), &a.dataset)?;
    let rows = io::read_dataset(&a.dataset)?;
    let cfg = TrainConfig { learning_rate: a.lr, batch_size: a.batch, epochs: a.epochs, hidden: a.hidden, seed, ..Default::default() };
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{}", io::EPOCH_COLUMNS)?;
    let model = iklearn::train_with(&rows, &cfg, |s| {
        // a closed pipe should not abort training
        let _ = writeln!(stdout, "{}", io::epoch_csv_line(s));
        let _ = stdout.flush();
    })?;
    io::write_text(&a.out, &model.to_json())?;
    io::write_manifest(&a.out, &manifest)?;
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    params: &'a PathParams,
    orientations_from_dataset: bool,
    noise: MocapNoise,
    seed: u64,
    waypoints: usize,
    clamped: usize,
    saturated: usize,
    mean_position_mm: f64,
    sd_position_mm: f64,
    mean_angular_deg: f64,
    sd_angular_deg: f64,
    model_val_error_mm: Option<f64>,
    report: &'a TrackingReport,
}

fn eval_traj(a: EvalTraj) -> Result<(), Error> {
    let seed = resolve_seed(a.seed)?;
    let mut manifest = RunManifest::new("eval-traj", Some(seed)).with_input(&a.model.display().to_string(), &a.model)?;
    let geom = load_geometry(&a.geom, &mut manifest)?;
    let model = IkModel::from_json(&io::read_text(&a.model)?)?;
    let shape = match a.shape {
        ShapeArg::Circle => ShapeTag::Circle,
        ShapeArg::Triangle => ShapeTag::Triangle,
        ShapeArg::Stairs => ShapeTag::Stairs,
    };
    let params = match &a.params {
        Some(p) => {
            manifest = manifest.with_input(&p.display().to_string(), p)?;
            let params: PathParams = io::read_json(p)?;
            if params.shape() != shape {
                return Err(format!("--params describes {:?}, not {shape:?}", params.shape()).into());
            }
            params
        }
        None => PathParams::default_for(shape).expect("built-in shape"),
    };
    let mut traj = make_path(&params)?;
    if let Some(ds) = &a.orient_from {
        manifest = manifest.with_input(&ds.display().to_string(), ds)?;
        traj = traj.with_dataset_orientations(&io::read_dataset(ds)?, a.neighbours)?;
    }
    let mut rng = stream(seed, Purpose::Trial, 0);
    let report = execute(&traj, &model, &geom, a.noise, &mut rng)?;
    if let Some(csv) = &a.csv {
        io::write_text(csv, &io::waypoints_to_csv(&report))?;
        io::write_manifest(csv, &manifest)?;
    }
    let out = EvalOutput {
        params: &params,
        orientations_from_dataset: a.orient_from.is_some(),
        noise: a.noise,
        seed,
        waypoints: report.reference.len(),
        clamped: report.clamped.iter().filter(|c| **c).count(),
        saturated: report.saturated.iter().filter(|c| **c).count(),
        mean_position_mm: report.mean_position_mm,
        sd_position_mm: report.sd_position_mm,
        mean_angular_deg: report.mean_angular_deg,
        sd_angular_deg: report.sd_angular_deg,
        model_val_error_mm: model.history.last().map(|s| s.val_error_mm),
        report: &report,
    };
    emit_json(a.out.out.as_deref(), &out, &manifest)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenCell(a) => gen_cell(a),
        Command::AnalyzeModes(a) => analyze_modes(a),
        Command::Characterize(a) => characterize(a),
        Command::Sample(a) => sample(a),
        Command::Workspace(a) => workspace(a),
        Command::TrainIk(a) => train_ik(a),
        Command::EvalTraj(a) => eval_traj(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
