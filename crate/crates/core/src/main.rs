use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use radmesh::config::{FeatureMode, PipelineConfig};
use radmesh::dataset::{Dataset, DatasetError};
use radmesh::diffcore::DiffError;
use radmesh::field::{Camera, CameraRecord, FieldError, NerfField};
use radmesh::meshing::MeshError;
use radmesh::pipeline::{evaluate, extract, load_bundle, render_bundle, save_bundle, PipelineError};
use radmesh::scenes::{load_scene, make_dataset, write_scene, CameraRig, SceneSpec};
use radmesh::ssan::{distill_field, SsanError, SsanNet};

#[derive(Parser)]
#[command(name = "radmesh", version, about = "Distill radiance fields into featured triangle meshes")]
struct Cli {
    /// Base directory for every relative path.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    /// Key-value config file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set distill_steps=2000`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic scene into a posed image dataset.
    MakeScene(MakeScene),
    /// Train the radiance field on a dataset.
    TrainNerf(TrainNerf),
    /// Distill a signed distance network from a radiance field.
    Distill(Distill),
    /// Extract and bake a featured mesh plus appearance network.
    Extract(Extract),
    /// Rasterize and shade a mesh bundle.
    Render(Render),
    /// Geometry and image metrics against the analytic scene.
    Eval(Eval),
    /// Print the effective config.
    ShowConfig,
}

#[derive(Args)]
struct MakeScene {
    #[arg(long, default_value = "sphere", value_parser = ["sphere", "torus", "box", "two-spheres"])]
    scene: String,
    #[arg(long, default_value_t = 32)]
    views: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    /// Camera distance from the origin.
    #[arg(long, default_value_t = 2.5)]
    radius: f64,
    #[arg(long, default_value_t = 40.0)]
    fov: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainNerf {
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint path; the loss log goes next to it as `.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Distill {
    #[arg(long)]
    dataset: PathBuf,
    /// Trained radiance field checkpoint.
    #[arg(long, conflicts_with = "analytic")]
    nerf: Option<PathBuf>,
    /// Distill from the analytic field described by the dataset's scene.json.
    #[arg(long)]
    analytic: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Extract {
    #[arg(long)]
    ssan: PathBuf,
    /// Grid resolution per axis; defaults to `extract_res`.
    #[arg(long)]
    res: Option<usize>,
    #[arg(long, value_parser = ["auto", "vertex", "atlas"])]
    mode: Option<String>,
    /// Bundle directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Render {
    #[arg(long)]
    mesh: PathBuf,
    /// Dataset directory or JSON list of camera records.
    #[arg(long)]
    cameras: PathBuf,
    /// Camera indices to render; all when omitted.
    #[arg(long, value_delimiter = ',')]
    index: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    mesh: PathBuf,
    /// Training dataset; its cameras define the observable region.
    #[arg(long)]
    dataset: PathBuf,
    /// Scene description; defaults to `scene.json` in the dataset.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Skip the held-out PSNR renders.
    #[arg(long)]
    no_psnr: bool,
    #[arg(long)]
    out: PathBuf,
}

/// A failure with its exit code: 1 usage, 2 validation, 3 numeric.
struct Failure(u8, String);

fn usage(m: impl Into<String>) -> Failure {
    Failure(1, m.into())
}
fn invalid(m: impl ToString) -> Failure {
    Failure(2, m.to_string())
}

fn diff_code(e: &DiffError) -> u8 {
    if matches!(e, DiffError::NonFiniteGradient(_)) { 3 } else { 2 }
}

fn field_code(e: &FieldError) -> u8 {
    match e {
        FieldError::NonFinite(_) | FieldError::Diverged { .. } => 3,
        FieldError::Diff(d) => diff_code(d),
        _ => 2,
    }
}

fn ssan_code(e: &SsanError) -> u8 {
    match e {
        SsanError::NonFinite(_) | SsanError::Diverged { .. } => 3,
        SsanError::Diff(d) => diff_code(d),
        SsanError::Field(f) => field_code(f),
        _ => 2,
    }
}

impl From<FieldError> for Failure {
    fn from(e: FieldError) -> Self {
        Failure(field_code(&e), e.to_string())
    }
}
impl From<SsanError> for Failure {
    fn from(e: SsanError) -> Self {
        Failure(ssan_code(&e), e.to_string())
    }
}
impl From<MeshError> for Failure {
    fn from(e: MeshError) -> Self {
        Failure(if matches!(e, MeshError::NonFinite(_)) { 3 } else { 2 }, e.to_string())
    }
}
impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Ssan(s) => s.into(),
            PipelineError::Mesh(m) => m.into(),
            e => invalid(e),
        }
    }
}
impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        invalid(e)
    }
}

struct Ctx {
    workdir: PathBuf,
    cfg: PipelineConfig,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        self.workdir.join(p)
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| invalid(format!("{}: {e}", dir.display())))?;
    }
    radmesh::io::write_atomic(path, bytes).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn make_scene(ctx: &Ctx, a: &MakeScene) -> Result<(), Failure> {
    let spec = SceneSpec::by_name(&a.scene).ok_or_else(|| usage(format!("unknown scene '{}'", a.scene)))?;
    let rig = CameraRig { count: a.views, radius: a.radius, fov_degrees: a.fov, width: a.width, height: a.height, phase: 0.0 };
    let data = make_dataset(&spec, &rig)?;
    write_scene(&ctx.path(&a.out), &spec, &rig, &data)?;
    println!("wrote {} views to {}", data.len(), a.out.display());
    Ok(())
}

fn train_nerf(ctx: &Ctx, a: &TrainNerf) -> Result<(), Failure> {
    let data = Dataset::load(&ctx.path(&a.dataset))?;
    let mut field = NerfField::new(ctx.cfg.nerf_config(), ctx.cfg.seed)?;
    let report = field.train(&data, &ctx.cfg.nerf_train_config(), |s, l| {
        if s % 500 == 0 {
            eprintln!("step {s} mse {l:.6}");
        }
    })?;
    let out = ctx.path(&a.out);
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir).map_err(|e| invalid(format!("{}: {e}", dir.display())))?;
    }
    field.save(&out)?;
    let csv: String = std::iter::once("step,mse\n".to_string()).chain(report.losses.iter().map(|(s, l)| format!("{s},{l}\n"))).collect();
    write(&out.with_extension("csv"), csv.as_bytes())?;
    println!("final mse {:.6}", report.final_loss());
    Ok(())
}

fn distill(ctx: &Ctx, a: &Distill) -> Result<(), Failure> {
    if a.nerf.is_none() && !a.analytic {
        return Err(usage("distill needs either --nerf <checkpoint> or --analytic"));
    }
    let ds = ctx.path(&a.dataset);
    let data = Dataset::load(&ds)?;
    let mut net = SsanNet::new(ctx.cfg.ssan_config(), ctx.cfg.seed)?;
    let dcfg = ctx.cfg.distill_config();
    let progress = |r: &radmesh::ssan::LossRow| {
        if r.step % 500 == 0 {
            eprintln!("step {} loss {:.6}", r.step, r.total);
        }
    };
    let report = match (&a.nerf, a.analytic) {
        (Some(ckpt), false) => {
            let field = NerfField::load(&ctx.path(ckpt))?;
            distill_field(&mut net, &field, &data, &dcfg, progress)?.1
        }
        (None, true) => {
            let scene = load_scene(&ds.join("scene.json"))?;
            distill_field(&mut net, &scene.spec.field(), &data, &dcfg, progress)?.1
        }
        _ => unreachable!("checked above"),
    };
    let out = ctx.path(&a.out);
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir).map_err(|e| invalid(format!("{}: {e}", dir.display())))?;
    }
    net.save(&out)?;
    report.write_csv(&out.with_extension("csv"))?;
    if let Some(last) = report.rows.last() {
        println!("final loss {:.6}", last.total);
    }
    Ok(())
}

fn extract_cmd(ctx: &Ctx, a: &Extract) -> Result<(), Failure> {
    let net = SsanNet::load(&ctx.path(&a.ssan))?;
    let mode = match a.mode.as_deref() {
        Some("vertex") => FeatureMode::Vertex,
        Some("atlas") => FeatureMode::Atlas,
        Some(_) => FeatureMode::Auto,
        None => ctx.cfg.feature_mode,
    };
    let res = a.res.unwrap_or(ctx.cfg.extract_res);
    if res < 2 {
        return Err(usage("--res must be at least 2"));
    }
    let fm = extract(&net, res, mode)?;
    save_bundle(&ctx.path(&a.out), &fm, &net.eta_net())?;
    println!("{} vertices, {} faces", fm.mesh.positions.len(), fm.mesh.triangles.len());
    Ok(())
}

fn load_cameras(path: &Path) -> Result<Vec<Camera>, Failure> {
    if path.is_dir() {
        return Ok(Dataset::load(path)?.cameras);
    }
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let recs: Vec<CameraRecord> = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    recs.iter()
        .enumerate()
        .map(|(i, r)| Camera::from_record(r).map_err(|e| invalid(format!("{}: camera {i}: {e}", path.display()))))
        .collect()
}

fn render(ctx: &Ctx, a: &Render) -> Result<(), Failure> {
    let (fm, eta) = load_bundle(&ctx.path(&a.mesh))?;
    let all = load_cameras(&ctx.path(&a.cameras))?;
    let picked: Vec<usize> = if a.index.is_empty() { (0..all.len()).collect() } else { a.index.clone() };
    if let Some(&bad) = picked.iter().find(|&&i| i >= all.len()) {
        return Err(invalid(format!("camera index {bad} out of range (have {})", all.len())));
    }
    let cams: Vec<Camera> = picked.iter().map(|&i| all[i].clone()).collect();
    let views = render_bundle(&fm, &eta, &cams, [1.0; 3])?;
    let out = ctx.path(&a.out);
    let mut timing = Vec::new();
    for (&i, v) in picked.iter().zip(&views) {
        write(&out.join(format!("{i:04}.png")), &v.image.encode_png().map_err(invalid)?)?;
        timing.push(serde_json::json!({ "index": i, "visible_pixels": v.visible, "raster_ms": v.raster_ms, "shade_ms": v.shade_ms }));
    }
    write(&out.join("timing.json"), serde_json::to_string_pretty(&timing).expect("json").as_bytes())?;
    println!("rendered {} views", views.len());
    Ok(())
}

fn eval(ctx: &Ctx, a: &Eval) -> Result<(), Failure> {
    let (fm, eta) = load_bundle(&ctx.path(&a.mesh))?;
    let ds = ctx.path(&a.dataset);
    let data = Dataset::load(&ds)?;
    let scene = load_scene(&a.scene.as_ref().map(|s| ctx.path(s)).unwrap_or_else(|| ds.join("scene.json")))?;
    let report = evaluate(&fm, (!a.no_psnr).then_some(&eta), &scene, &data, &ctx.cfg)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    write(&ctx.path(&a.out), report.to_json().as_bytes())?;
    println!("chamfer {:.6} normal consistency {:.4}", report.chamfer, report.normal_consistency);
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = match &cli.config {
        Some(p) => {
            let p = cli.workdir.join(p);
            let text = std::fs::read_to_string(&p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            PipelineConfig::parse(&text, &cli.set)
        }
        None => PipelineConfig::with_overrides(&cli.set),
    }
    .map_err(invalid)?;
    let ctx = Ctx { workdir: cli.workdir, cfg };
    match &cli.cmd {
        Cmd::MakeScene(a) => make_scene(&ctx, a),
        Cmd::TrainNerf(a) => train_nerf(&ctx, a),
        Cmd::Distill(a) => distill(&ctx, a),
        Cmd::Extract(a) => extract_cmd(&ctx, a),
        Cmd::Render(a) => render(&ctx, a),
        Cmd::Eval(a) => eval(&ctx, a),
        Cmd::ShowConfig => {
            print!("{}", ctx.cfg.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("error: {}", msg.lines().next().unwrap_or(""));
            ExitCode::from(code)
        }
    }
}
