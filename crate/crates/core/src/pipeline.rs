//! End-to-end steps shared by the command line and the acceptance runs.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;

use crate::config::{FeatureMode, PipelineConfig};
use crate::dataset::Dataset;
use crate::field::{Camera, Vec3};
use crate::image::RgbImage;
use crate::meshing::{
    bake_vertex_features, build_face_texture, load_featured, marching_cubes, sample_grid, save_featured, FeaturedMesh, MeshError,
    ScalarGrid, ATLAS_THRESHOLD,
};
use crate::metrics::{build_observability_grid, chamfer_masked, normal_consistency, sample_mesh, sample_shape, EvalReport, Means, MetricsError};
use crate::raster::{psnr_capped, rasterize, shade, RasterError};
use crate::scenes::{render_view, CameraRig, SceneFile, GT_SAMPLES};
use crate::ssan::{EtaNet, SsanError, SsanNet};

/// The scene box every stage works in.
pub const SCENE_MIN: f64 = -1.0;
pub const SCENE_MAX: f64 = 1.0;

pub fn scene_box() -> (Vec3, Vec3) {
    (Vec3::repeat(SCENE_MIN), Vec3::repeat(SCENE_MAX))
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ssan(#[from] SsanError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("{0}")]
    Invalid(String),
}

/// `t̂` at the lattice corners of `[min, max]`.
pub fn sample_tsdf_grid(net: &SsanNet, min: Vec3, max: Vec3, res: usize) -> Result<ScalarGrid, PipelineError> {
    sample_grid(|p| net.tsdf(p).map_err(PipelineError::from), min, max, [res; 3])
}

/// Marching cubes on the zero level set of `net` over the scene box, then feature baking.
pub fn extract(net: &SsanNet, res: usize, mode: FeatureMode) -> Result<FeaturedMesh, PipelineError> {
    let (min, max) = scene_box();
    let grid = sample_tsdf_grid(net, min, max, res)?;
    let mesh = marching_cubes(&grid, 0.0)?;
    if mesh.is_empty() {
        return Err(PipelineError::Invalid("the signed distance field has no zero crossing; nothing to extract".into()));
    }
    let query = |p: &[Vec3]| net.query(p).map_err(PipelineError::from);
    let atlas = match mode {
        FeatureMode::Vertex => false,
        FeatureMode::Atlas => true,
        FeatureMode::Auto => mesh.positions.len() >= ATLAS_THRESHOLD,
    };
    if atlas {
        build_face_texture(&mesh, query)
    } else {
        bake_vertex_features(&mesh, query)
    }
}

pub const ETA_FILE: &str = "eta.ckpt";

pub fn save_bundle(dir: &Path, fm: &FeaturedMesh, eta: &EtaNet) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(MeshError::from)?;
    save_featured(dir, fm)?;
    eta.save(&dir.join(ETA_FILE))?;
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<(FeaturedMesh, EtaNet), PipelineError> {
    Ok((load_featured(dir)?, EtaNet::load(&dir.join(ETA_FILE))?))
}

pub struct RenderedView {
    pub image: RgbImage,
    pub visible: usize,
    pub raster_ms: f64,
    pub shade_ms: f64,
}

pub fn render_bundle(fm: &FeaturedMesh, eta: &EtaNet, cameras: &[Camera], background: [f32; 3]) -> Result<Vec<RenderedView>, PipelineError> {
    cameras
        .iter()
        .map(|cam| {
            let t0 = Instant::now();
            let gb = rasterize(fm, cam);
            let t1 = Instant::now();
            let (image, visible) = shade(&gb, cam, eta, background)?;
            Ok(RenderedView {
                image,
                visible,
                raster_ms: (t1 - t0).as_secs_f64() * 1e3,
                shade_ms: t1.elapsed().as_secs_f64() * 1e3,
            })
        })
        .collect()
}

/// Held-out cameras: the training rig with a shifted lattice phase.
pub fn held_out_rig(train: &CameraRig, cfg: &PipelineConfig) -> CameraRig {
    CameraRig { count: cfg.eval_views, phase: cfg.eval_phase, ..train.clone() }
}

/// Geometry against the analytic surface (masked by training-ray
/// observability) and PSNR on held-out views against analytic renders.
pub fn evaluate(
    fm: &FeaturedMesh,
    eta: Option<&EtaNet>,
    scene: &SceneFile,
    train: &Dataset,
    cfg: &PipelineConfig,
) -> Result<EvalReport, PipelineError> {
    let mut warnings = Vec::new();
    let (smin, smax) = scene_box();
    let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
    for p in &fm.mesh.positions {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let (imin, imax) = (lo.sup(&smin), hi.inf(&smax));
    if (0..3).any(|a| imin[a] >= imax[a]) {
        return Err(PipelineError::Invalid("mesh does not overlap the scene box".into()));
    }
    if (0..3).any(|a| lo[a] < smin[a] || hi[a] > smax[a]) {
        warnings.push(format!(
            "mesh bounds [{:.3}, {:.3}]..[{:.3}, {:.3}] exceed the scene box; evaluating inside their intersection",
            lo.min(),
            lo.max(),
            hi.min(),
            hi.max()
        ));
    }
    let grid = build_observability_grid(&train.cameras, smin, smax, cfg.observability_res)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(crate::seed::derive(cfg.seed, &[0xe7a1]));
    let pred = sample_mesh(&fm.mesh, cfg.eval_samples, &mut rng)?;
    let gt = sample_shape(&scene.spec.shape, cfg.eval_samples, &mut rng);
    let inside = |p: &Vec3| (0..3).all(|a| p[a] >= imin[a] && p[a] <= imax[a]);
    let clip = |s: crate::metrics::SampledSurface| {
        let keep: Vec<usize> = (0..s.len()).filter(|&i| inside(&s.points[i])).collect();
        crate::metrics::SampledSurface {
            points: keep.iter().map(|&i| s.points[i]).collect(),
            normals: keep.iter().map(|&i| s.normals[i]).collect(),
        }
    };
    let (pred, gt) = (clip(pred), clip(gt));
    let ch = chamfer_masked(&pred, &gt, Some(&grid))?;
    let nc = normal_consistency(&fm.mesh, &gt.masked(&grid))?;
    let mut psnr_per_view = Vec::new();
    if let Some(eta) = eta {
        let rig = held_out_rig(&scene.rig, cfg);
        let cams = rig.cameras();
        let bg = scene.spec.background.map(|c| c as f32);
        for (cam, view) in cams.iter().zip(render_bundle(fm, eta, &cams, bg)?) {
            let reference = render_view(&scene.spec, cam, GT_SAMPLES).map_err(|e| PipelineError::Invalid(e.to_string()))?;
            psnr_per_view.push(psnr_capped(&view.image, &reference)?);
        }
    }
    let mean_psnr = (!psnr_per_view.is_empty()).then(|| psnr_per_view.iter().sum::<f64>() / psnr_per_view.len() as f64);
    Ok(EvalReport {
        chamfer: ch.chamfer,
        normal_consistency: nc,
        psnr_per_view,
        means: Means { psnr: mean_psnr },
        pred_points_retained: ch.pred_retained,
        gt_points_retained: ch.gt_retained,
        observable_voxels: grid.count(),
        warnings,
    })
}
