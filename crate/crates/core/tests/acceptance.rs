//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Slow (about 40 minutes on one core). Tolerances live in the constants below.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use radmesh::config::{FeatureMode, PipelineConfig};
use radmesh::dataset::Dataset;
use radmesh::diffcore::{gradcheck, CompositeLayout, Graph, ParamStore, Tensor};
use radmesh::field::nerf::{direction_tensor, NerfModel};
use radmesh::field::{
    percentiles, render_ray, Albedo, AnalyticField, HashGridConfig, Jitter, NerfConfig, NerfField, PercentileMode, Ray,
    Shape, Vec3,
};
use radmesh::meshing::{marching_cubes, sample_grid, MeshError, TriMesh};
use radmesh::metrics::EvalReport;
use radmesh::pipeline::{evaluate, extract};
use radmesh::scenes::{analytic_sdf, box_ray, make_dataset, CameraRig, SceneFile, SceneSpec};
use radmesh::ssan::{distill_field, project_to_zero_level, step_loss, LossWeights, PercentileCache, RadialPrior, SsanConfig, SsanModel, SsanNet, StepBatch};

// 1
const GRAD_SEEDS: u64 = 100;
const GRAD_MAX_PARAMS: usize = 1000;
const GRAD_REL_ERR: f64 = 1e-4;
const GRAD_SECONDS: f64 = 60.0;
// 2
const CONSERVATION_RAYS: usize = 10_000;
const CONSERVATION_TOL: f64 = 1e-6;
const CONSERVATION_SECONDS: f64 = 10.0;
// 3
const PERCENTILE_SAMPLES: usize = 256;
const PERCENTILE_GOOD_FRACTION: f64 = 0.99;
const PERCENTILE_SECONDS: f64 = 30.0;
// 4
const MC_SPHERE_RES: usize = 64;
const MC_TORUS_RES: usize = 96;
const MC_VERTEX_DIAGONALS: f64 = 1.5;
const MC_SECONDS: f64 = 30.0;
// 5
const GEOMETRY_DISTILL_STEPS: usize = 2000;
const GEOMETRY_RES: usize = 128;
const SPHERE_CHAMFER: f64 = 0.02;
const SPHERE_NC: f64 = 0.95;
const TORUS_CHAMFER: f64 = 0.03;
const TORUS_NC: f64 = 0.93;
const GEOMETRY_SECONDS: f64 = 600.0;
// 6
const FULL_NERF_STEPS: usize = 5000;
const FULL_DISTILL_STEPS: usize = 5000;
const SIGN_PROBES: usize = 10_000;
const SIGN_MIN_DISTANCE: f64 = 0.05;
const SIGN_FRACTION: f64 = 0.99;
const FULL_PSNR: f64 = 25.0;
const FULL_SECONDS: f64 = 1800.0;
// 7
const ABLATION_PERCENTILES: [[f64; 3]; 3] = [[5.0, 50.0, 95.0], [16.0, 50.0, 84.0], [25.0, 50.0, 75.0]];
const ABLATION_SPREAD: f64 = 0.25;
// 8
const PROJECTION_STEPS: usize = 4;
const PROJECTION_REDUCTION: f64 = 0.5;

struct Line {
    pass: bool,
    detail: String,
}

fn line(pass: bool, detail: String) -> Line {
    Line { pass, detail }
}

/// `ACCEPTANCE_ONLY=1,4` restricts the run; the rest print SKIP.
fn selected(n: usize) -> bool {
    match std::env::var("ACCEPTANCE_ONLY") {
        Ok(list) => list.split(',').any(|s| s.trim().parse() == Ok(n)),
        Err(_) => true,
    }
}

fn run(n: usize, name: &str, f: impl FnOnce() -> Line) -> bool {
    if !selected(n) {
        println!("criterion {n} SKIP {name}");
        return true;
    }
    let t = Instant::now();
    let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
        line(false, format!("panicked: {}", msg.unwrap_or_default()))
    });
    println!(
        "criterion {n} {:<4} {name}: {} [{:.1}s]",
        if out.pass { "PASS" } else { "FAIL" },
        out.detail,
        t.elapsed().as_secs_f64()
    );
    out.pass
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// ---------- 1: gradients ----------

fn tiny_ssan() -> SsanConfig {
    let grid = HashGridConfig { levels: 2, log2_table_size: 6, features: 2, n_min: 2, n_max: 4 };
    SsanConfig {
        geometry_grid: grid.clone(),
        appearance_grid: grid,
        hidden: 8,
        hidden_layers: 1,
        eta_hidden: 6,
        eta_layers: 2,
        shared_encoder: false,
        prior: Some(RadialPrior { radius: 1.0, slope: 1.0 }),
        truncation: 0.1,
    }
}

fn tiny_nerf() -> NerfConfig {
    NerfConfig {
        grid: HashGridConfig { levels: 2, log2_table_size: 5, features: 2, n_min: 2, n_max: 6 },
        density_hidden: 8,
        geo_features: 3,
        color_hidden: 8,
        color_layers: 1,
    }
}

fn random_point(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9)]
}

fn random_dir(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if v.norm() > 0.1 {
            return v.normalize();
        }
    }
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> StepBatch {
    let mut b = StepBatch::default();
    for _ in 0..n {
        for k in 0..3 {
            b.z_points[k].push(random_point(rng));
        }
        b.delta_points.push(random_point(rng));
        b.free_points.push(random_point(rng));
        // Box corners, where the radial prior makes the distance positive.
        b.interior_points.push(random_point(rng).map(|x| 0.95f64.copysign(x)));
        b.color_points.push(random_point(rng));
        b.dirs.push(random_dir(rng));
        b.color_dirs.push(random_dir(rng));
        b.color_normals.push(random_dir(rng));
        b.colors.push([rng.gen(), rng.gen(), rng.gen()]);
    }
    b
}

/// Fresh initialization leaves biases at zero and hash entries near zero, which
/// parks pre-activations on the ReLU kink. Draw every parameter instead.
fn randomize(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for x in store.get_mut(id).data_mut() {
            *x = rng.gen_range(-0.5..0.5);
        }
    }
}

fn single_term(k: usize) -> LossWeights {
    let mut w = [0.0; 7];
    w[k] = 1.0;
    LossWeights {
        surface: w[0],
        gradient_norm: w[1],
        smoothness: w[2],
        orientation: w[3],
        color: w[4],
        free_space: w[5],
        interior: w[6],
        ..LossWeights::default()
    }
}

/// Worst relative error over the distillation terms (each alone, then combined),
/// and how many of those checks saw a nonzero gradient. A hinge term can be flat
/// on a random batch; the combined loss never is.
fn ssan_gradients(seed: u64) -> (f64, usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::new();
    let model = SsanModel::new(&mut store, tiny_ssan(), false, &mut rng).unwrap();
    randomize(&mut store, &mut rng);
    let batch = random_batch(&mut rng, 8);
    let (mut worst, mut live) = (0.0f64, 0);
    for (k, w) in (0..7).map(single_term).chain([LossWeights::default()]).enumerate() {
        let c = gradcheck::check(&store, 1e-6, 40, |g| Ok(step_loss(&model, g, &batch, &w, 1e-3)?.total)).unwrap();
        assert!(k < 7 || c.tape_norm > 0.0, "combined loss has no gradient (seed {seed})");
        live += usize::from(c.tape_norm > 0.0);
        worst = worst.max(c.relative_error);
    }
    (worst, store.num_scalars(), live)
}

/// Photometric loss of composited rays through the radiance network.
fn nerf_gradients(seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut store = ParamStore::<f64>::new();
    let model = NerfModel::new(&mut store, tiny_nerf(), &mut rng).unwrap();
    randomize(&mut store, &mut rng);
    let (rays, samples) = (3, 5);
    let mut points = Vec::new();
    let mut dirs = Vec::new();
    let mut deltas = Vec::new();
    let mut offsets = vec![0];
    for _ in 0..rays {
        // Samples stay inside the box.
        let o = random_point(&mut rng).map(|x| 0.5 * x);
        let d = random_dir(&mut rng);
        for s in 0..samples {
            let t = 0.1 * s as f64;
            points.push([o[0] + t * d.x, o[1] + t * d.y, o[2] + t * d.z]);
            dirs.push(d);
            deltas.push(rng.gen_range(0.05..0.3));
        }
        offsets.push(points.len());
    }
    let target: Vec<f64> = (0..rays * 3).map(|_| rng.gen()).collect();
    let c = gradcheck::check(&store, 1e-6, 40, |g: &mut Graph<'_, f64>| {
        let d = g.constant(direction_tensor(&dirs));
        let (sigma, color) = model.forward(g, &points, d)?;
        let layout = CompositeLayout { offsets: offsets.clone(), deltas: deltas.clone(), background: [1.0; 3] };
        let pred = g.composite(sigma, color, layout)?;
        let t = g.constant(Tensor::new(&[rays, 3], target.clone())?);
        let diff = g.sub(pred, t)?;
        let sq = g.square(diff);
        Ok(g.mean(sq))
    })
    .unwrap();
    assert!(c.tape_norm > 0.0, "photometric loss has no gradient (seed {seed})");
    (c.relative_error, store.num_scalars())
}

fn criterion_1() -> Line {
    let t = Instant::now();
    let (mut worst, mut params, mut live) = (0.0f64, 0usize, 0usize);
    for seed in 0..GRAD_SEEDS {
        let (e, n, l) = ssan_gradients(seed);
        let (e2, n2) = nerf_gradients(seed);
        worst = worst.max(e).max(e2);
        params = params.max(n).max(n2);
        live += l + 1;
    }
    let el = secs(t.elapsed());
    line(
        worst < GRAD_REL_ERR && params <= GRAD_MAX_PARAMS && el < GRAD_SECONDS,
        format!(
            "{GRAD_SEEDS} seeds, {live}/{} checks with nonzero gradient, max relative error {worst:.2e} (< {GRAD_REL_ERR:e}), largest instance {params} parameters, {el:.1}s",
            GRAD_SEEDS * 9
        ),
    )
}

// ---------- 2: conservation ----------

fn criterion_2() -> Line {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..CONSERVATION_RAYS {
        let shape = Shape::Sphere {
            center: [rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4)],
            radius: rng.gen_range(0.05..0.5),
        };
        let rgb = [rng.gen(), rng.gen(), rng.gen()];
        let field = AnalyticField::new(shape, Albedo::Constant { rgb }, 10f64.powf(rng.gen_range(0.0..4.0)));
        let origin = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let aim = Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
        let Ok(ray) = Ray::new(origin, aim - origin, 0.0, 5.0) else { continue };
        let m = rng.gen_range(1..=256);
        let r = render_ray(&field, &ray, m, Jitter::Seeded(rng.gen()), [1.0; 3]).unwrap();
        // Transmittance recomputed from the optical depth, not from the weights.
        let optical: f64 = r.sigmas.iter().zip(&r.deltas).map(|(s, d)| s * d).sum();
        let sum: f64 = r.weights.iter().sum();
        worst = worst.max((sum + (-optical).exp() - 1.0).abs()).max((sum + r.transmittance - 1.0).abs());
    }
    let el = secs(t.elapsed());
    line(
        worst <= CONSERVATION_TOL && el < CONSERVATION_SECONDS,
        format!("{CONSERVATION_RAYS} rays, max |sum(w) + T - 1| = {worst:.2e} (<= {CONSERVATION_TOL:e}), {el:.1}s"),
    )
}

// ---------- 3: percentile oracle ----------

/// First positive root of |o + t d - c| = r.
fn sphere_hit(ray: &Ray, c: Vec3, r: f64) -> Option<f64> {
    let oc = ray.origin - c;
    let a = ray.direction.dot(&ray.direction);
    let b = oc.dot(&ray.direction);
    let disc = b * b - a * (oc.dot(&oc) - r * r);
    if disc < 0.0 {
        return None;
    }
    let t = (-b - disc.sqrt()) / a;
    (t >= ray.t_near && t <= ray.t_far).then_some(t)
}

fn criterion_3() -> Line {
    let t = Instant::now();
    let spec = SceneSpec::sphere();
    let Shape::Sphere { center, radius } = spec.shape else { unreachable!() };
    let c = Vec3::new(center[0], center[1], center[2]);
    let field = spec.field();
    let mut parts = Vec::new();
    let mut pass = true;
    for mode in [PercentileMode::Quantile, PercentileMode::TruncatedSum] {
        let (mut hits, mut good) = (0usize, 0usize);
        for cam in CameraRig::default().cameras() {
            for j in 0..cam.height {
                for i in 0..cam.width {
                    let Some(ray) = box_ray(&cam, i as f64 + 0.5, j as f64 + 0.5) else { continue };
                    let Some(hit) = sphere_hit(&ray, c, radius) else { continue };
                    hits += 1;
                    let r = render_ray(&field, &ray, PERCENTILE_SAMPLES, Jitter::Centered, spec.background).unwrap();
                    let p = percentiles(&r, [16.0, 50.0, 84.0], mode).unwrap();
                    let bound = 2.0 * (ray.t_far - ray.t_near) / PERCENTILE_SAMPLES as f64;
                    if !p.low_opacity && (p.z[1] - hit).abs() < bound {
                        good += 1;
                    }
                }
            }
        }
        let frac = good as f64 / hits as f64;
        pass &= frac >= PERCENTILE_GOOD_FRACTION;
        parts.push(format!("{mode:?} {good}/{hits} = {:.4}", frac));
    }
    let el = secs(t.elapsed());
    line(
        pass && el < PERCENTILE_SECONDS,
        format!("median within 2(t_far-t_near)/{PERCENTILE_SAMPLES}: {} (>= {PERCENTILE_GOOD_FRACTION}), {el:.1}s", parts.join(", ")),
    )
}

// ---------- 4: marching cubes ----------

fn mc(shape: &Shape, res: usize) -> (TriMesh, f64) {
    let grid = sample_grid(
        |p: &[Vec3]| Ok::<_, MeshError>(p.iter().map(|x| shape.sdf(x)).collect()),
        Vec3::repeat(-1.0),
        Vec3::repeat(1.0),
        [res; 3],
    )
    .unwrap();
    (marching_cubes(&grid, 0.0).unwrap(), grid.cell_diagonal())
}

fn manifold(m: &TriMesh) -> bool {
    m.edge_valence().values().all(|&v| v == 2)
}

fn criterion_4() -> Line {
    let t = Instant::now();
    let (sphere, diag) = mc(&SceneSpec::sphere().shape, MC_SPHERE_RES);
    let worst = sphere.positions.iter().map(|p| SceneSpec::sphere().shape.sdf(p).abs()).fold(0.0, f64::max);
    let (torus, _) = mc(&SceneSpec::torus().shape, MC_TORUS_RES);
    let (xs, xt) = (sphere.euler_characteristic(), torus.euler_characteristic());
    let el = secs(t.elapsed());
    line(
        manifold(&sphere) && xs == 2 && worst < MC_VERTEX_DIAGONALS * diag && manifold(&torus) && xt == 0 && el < MC_SECONDS,
        format!(
            "sphere@{MC_SPHERE_RES}: closed manifold {}, V-E+F {xs}, max |sdf| {worst:.2e} (< {:.2e}); torus@{MC_TORUS_RES}: closed manifold {}, V-E+F {xt}; {el:.1}s",
            manifold(&sphere),
            MC_VERTEX_DIAGONALS * diag,
            manifold(&torus)
        ),
    )
}

// ---------- 5: analytic distillation geometry ----------

struct GeometryRun {
    report: EvalReport,
    seconds: f64,
}

fn rig_and_data(spec: &SceneSpec) -> (SceneFile, Dataset) {
    let rig = CameraRig::default();
    let data = make_dataset(spec, &rig).unwrap();
    (SceneFile { spec: spec.clone(), rig }, data)
}

fn geometry_config(percentiles: [f64; 3]) -> PipelineConfig {
    let cfg = PipelineConfig {
        distill_steps: GEOMETRY_DISTILL_STEPS,
        extract_res: GEOMETRY_RES,
        percentile_low: percentiles[0],
        percentile_mid: percentiles[1],
        percentile_high: percentiles[2],
        ..PipelineConfig::default()
    };
    cfg.validate().unwrap();
    cfg
}

fn geometry_run(name: &str, percentiles: [f64; 3]) -> GeometryRun {
    let t = Instant::now();
    let spec = SceneSpec::by_name(name).unwrap();
    let (scene, data) = rig_and_data(&spec);
    let cfg = geometry_config(percentiles);
    let mut net = SsanNet::new(cfg.ssan_config(), cfg.seed).unwrap();
    distill_field(&mut net, &spec.field(), &data, &cfg.distill_config(), |_| {}).unwrap();
    let fm = extract(&net, cfg.extract_res, FeatureMode::Auto).unwrap();
    let report = evaluate(&fm, Some(&net.eta_net()), &scene, &data, &cfg).unwrap();
    GeometryRun { report, seconds: secs(t.elapsed()) }
}

fn geometry_ok(name: &str, r: &GeometryRun) -> bool {
    let (ch, nc) = if name == "sphere" { (SPHERE_CHAMFER, SPHERE_NC) } else { (TORUS_CHAMFER, TORUS_NC) };
    r.report.chamfer < ch && r.report.normal_consistency > nc && r.seconds <= GEOMETRY_SECONDS
}

fn geometry_text(name: &str, r: &GeometryRun) -> String {
    format!("{name} chamfer {:.4} nc {:.4} ({:.0}s)", r.report.chamfer, r.report.normal_consistency, r.seconds)
}

fn criterion_5(runs: &[(&str, GeometryRun)]) -> Line {
    line(
        runs.iter().all(|(n, r)| geometry_ok(n, r)),
        format!(
            "{} (sphere < {SPHERE_CHAMFER} / > {SPHERE_NC}, torus < {TORUS_CHAMFER} / > {TORUS_NC}, <= {GEOMETRY_SECONDS}s each)",
            runs.iter().map(|(n, r)| geometry_text(n, r)).collect::<Vec<_>>().join("; ")
        ),
    )
}

// ---------- 6: full pipeline ----------

struct FullRun {
    report: EvalReport,
    sign_fraction: f64,
    nerf_losses: Vec<f64>,
    net: SsanNet,
    cache: PercentileCache,
    cfg: PipelineConfig,
    seconds: f64,
}

fn full_run() -> FullRun {
    let t = Instant::now();
    let spec = SceneSpec::sphere();
    let (scene, data) = rig_and_data(&spec);
    let cfg = PipelineConfig { nerf_steps: FULL_NERF_STEPS, distill_steps: FULL_DISTILL_STEPS, ..PipelineConfig::default() };
    cfg.validate().unwrap();
    let mut nerf = NerfField::new(cfg.nerf_config(), cfg.seed).unwrap();
    let nr = nerf.train(&data, &cfg.nerf_train_config(), |_, _| {}).unwrap();
    let mut net = SsanNet::new(cfg.ssan_config(), cfg.seed).unwrap();
    let (cache, _) = distill_field(&mut net, &nerf, &data, &cfg.distill_config(), |_| {}).unwrap();
    let fm = extract(&net, cfg.extract_res, cfg.feature_mode).unwrap();
    let report = evaluate(&fm, Some(&net.eta_net()), &scene, &data, &cfg).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut probes = Vec::with_capacity(SIGN_PROBES);
    while probes.len() < SIGN_PROBES {
        let p = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if analytic_sdf(&spec, &p).abs() > SIGN_MIN_DISTANCE {
            probes.push(p);
        }
    }
    let t_hat = net.tsdf(&probes).unwrap();
    let right = probes.iter().zip(&t_hat).filter(|(p, &t)| (t > 0.0) == (analytic_sdf(&spec, p) > 0.0) && t != 0.0).count();
    FullRun {
        report,
        sign_fraction: right as f64 / SIGN_PROBES as f64,
        nerf_losses: nr.losses.iter().map(|l| l.1).collect(),
        net,
        cache,
        cfg,
        seconds: secs(t.elapsed()),
    }
}

fn criterion_6(r: &FullRun) -> Line {
    let psnr = r.report.means.psnr.unwrap_or(f64::NAN);
    line(
        r.sign_fraction >= SIGN_FRACTION && psnr > FULL_PSNR && r.seconds <= FULL_SECONDS,
        format!(
            "sign correct at {:.4} of {SIGN_PROBES} probes with |sdf| > {SIGN_MIN_DISTANCE} (>= {SIGN_FRACTION}), held-out PSNR {psnr:.2} dB (> {FULL_PSNR}), chamfer {:.4}, {:.0}s (<= {FULL_SECONDS})",
            r.sign_fraction, r.report.chamfer, r.seconds
        ),
    )
}

// ---------- 7: percentile ablation ----------

fn criterion_7(base: &[(&str, GeometryRun)]) -> Line {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, default_run) in base {
        let mut chamfers = Vec::new();
        for p in ABLATION_PERCENTILES {
            let owned;
            let r = if p == geometry_default_percentiles() {
                default_run
            } else {
                owned = geometry_run(name, p);
                &owned
            };
            pass &= geometry_ok(name, r);
            chamfers.push(r.report.chamfer);
            parts.push(format!("{name} {:.0}/{:.0}: {:.4}{}", p[0], p[2], r.report.chamfer, if geometry_ok(name, r) { "" } else { " (fails 5)" }));
        }
        let (lo, hi) = chamfers.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &c| (a.min(c), b.max(c)));
        let spread = (hi - lo) / lo;
        pass &= spread < ABLATION_SPREAD;
        parts.push(format!("{name} spread {:.1}%", 100.0 * spread));
    }
    line(pass, format!("{} (spread < {:.0}%)", parts.join(", "), 100.0 * ABLATION_SPREAD))
}

fn geometry_default_percentiles() -> [f64; 3] {
    let c = PipelineConfig::default();
    [c.percentile_low, c.percentile_mid, c.percentile_high]
}

// ---------- 8: projection ----------

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn criterion_8(r: &FullRun) -> Line {
    let hits = r.cache.hits();
    let rays: Vec<Ray> = hits.iter().map(|&i| r.cache.rays[i].ray.clone()).collect();
    let starts: Vec<f64> = hits.iter().map(|&i| r.cache.rays[i].z[1]).collect();
    let out = project_to_zero_level(|p| r.net.tsdf(p), &rays, &starts, PROJECTION_STEPS, r.cfg.projection_rate).unwrap();
    let before = median(out.iter().map(|p| p.initial).collect());
    let after = median(out.iter().map(|p| p.residual).collect());
    let reduction = 1.0 - after / before;
    line(
        reduction >= PROJECTION_REDUCTION,
        format!(
            "{} training rays, median |t| {before:.2e} -> {after:.2e} after {PROJECTION_STEPS} steps at rate {}: reduction {:.1}% (>= {:.0}%)",
            rays.len(),
            r.cfg.projection_rate,
            100.0 * reduction,
            100.0 * PROJECTION_REDUCTION
        ),
    )
}

// ---------- 9: determinism ----------

fn criterion_9(first5: &[(&str, GeometryRun)], first6: &FullRun) -> Line {
    let mut same = Vec::new();
    for (name, a) in first5 {
        let b = geometry_run(name, geometry_default_percentiles());
        same.push((format!("{name} (5)"), a.report.to_json() == b.report.to_json()));
    }
    let b = full_run();
    let bits = |x: f64| x.to_bits();
    same.push((
        "sphere (6)".into(),
        first6.report.to_json() == b.report.to_json()
            && bits(first6.sign_fraction) == bits(b.sign_fraction)
            && first6.nerf_losses.iter().map(|&x| bits(x)).eq(b.nerf_losses.iter().map(|&x| bits(x))),
    ));
    line(
        same.iter().all(|s| s.1),
        same.iter().map(|(n, s)| format!("{n} {}", if *s { "identical" } else { "DIFFERS" })).collect::<Vec<_>>().join(", "),
    )
}

fn main() {
    // Under `cargo test -- --list` or a name filter that excludes us, do nothing.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if let Some(filter) = args.iter().find(|a| !a.starts_with('-')) {
        if !"acceptance".contains(filter.as_str()) {
            return;
        }
    }

    let mut all = true;
    all &= run(1, "gradients vs central differences", criterion_1);
    all &= run(2, "compositing conservation", criterion_2);
    all &= run(3, "median depth vs ray-sphere intersection", criterion_3);
    all &= run(4, "marching cubes topology", criterion_4);

    let t = Instant::now();
    let geometry: Vec<(&str, GeometryRun)> = if [5, 7, 9].into_iter().any(selected) {
        catch_unwind(|| ["sphere", "torus"].into_iter().map(|n| (n, geometry_run(n, geometry_default_percentiles()))).collect())
            .unwrap_or_default()
    } else {
        Vec::new()
    };
    let full = if [6, 8, 9].into_iter().any(selected) { catch_unwind(full_run).ok() } else { None };
    eprintln!("pipelines finished in {:.0}s", secs(t.elapsed()));

    all &= run(5, "analytic distillation geometry", || {
        if geometry.len() < 2 {
            return line(false, "pipeline did not finish".into());
        }
        criterion_5(&geometry)
    });
    all &= run(6, "full pipeline from a trained radiance field", || match &full {
        Some(r) => criterion_6(r),
        None => line(false, "pipeline did not finish".into()),
    });
    all &= run(7, "percentile ablation", || {
        if geometry.len() < 2 {
            return line(false, "pipeline did not finish".into());
        }
        criterion_7(&geometry)
    });
    all &= run(8, "zero-level projection", || match &full {
        Some(r) => criterion_8(r),
        None => line(false, "pipeline did not finish".into()),
    });
    all &= run(9, "determinism of reruns", || match &full {
        Some(r) if geometry.len() == 2 => criterion_9(&geometry, r),
        _ => line(false, "pipeline did not finish".into()),
    });
    if !all {
        std::process::exit(1);
    }
}
