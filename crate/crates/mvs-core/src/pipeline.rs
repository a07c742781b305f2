//! Dataset-level drivers behind the CLI verbs: synthesize a scene to disk,
//! estimate staged depth maps, fuse them into a cloud, score the cloud
//! against ground truth, and dump gradient-check and loss-map diagnostics.
//!
//! Depth estimation is coarse to fine. With K stages, stage k runs at
//! 1/2^(K-1-k) of the input resolution: the first stage sweeps each view's
//! whole depth range, later stages narrow to a band around the upsampled
//! previous estimate, and every stage polishes the swept map by descending
//! the pair objective against the best-ranked source. Per-view work runs
//! on a bounded rayon pool, and everything downstream of a fixed config
//! and dataset is deterministic: rerunning a command rewrites every
//! artifact byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fusion::{evaluate_cloud, fuse_point_cloud, FusionConfig, PointCloud};
use crate::geometry::CameraView;
use crate::imaging::{resize_bilinear, Image};
use crate::io::dataset::{io_at, read_bytes, write_bytes};
use crate::io::pfm::{read_depth_pfm, write_depth_pfm, write_pfm};
use crate::io::ply::{read_ply, write_ply};
use crate::io::{load_dataset, Dataset};
use crate::losses::{
    total_single_scale, FeatureExtractor, GradientFeatures, IdentityFeatures, LossWeights,
    SourceInput,
};
use crate::plane_sweep::{
    build_cost_volume, make_hypotheses, narrow_range, regress_depth, resample_depth, DepthMap,
};
use crate::refine::{
    fd_gradient, fd_safe_mask, loss_gradient, refine_depth, PairSide, PairViews, RefineConfig,
};
use crate::synthetic::{generate_scene, SceneSpec};
use crate::view_selection::ViewRanking;

/// One plane-sweep stage: how many hypotheses to test per pixel, and
/// optionally an explicit spacing in scene units. Without one the first
/// stage uses its uniform global spacing and every later stage halves it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub count: usize,
    #[serde(default)]
    pub interval: Option<f64>,
}

impl StageConfig {
    pub fn new(count: usize) -> StageConfig {
        StageConfig { count, interval: None }
    }
}

/// Which dense feature transform the feature term matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Raw intensities; the feature term degenerates to the pixel loss.
    Identity,
    /// Half-resolution derivative stacks.
    Gradient,
}

impl FeatureKind {
    pub fn extractor(self) -> &'static dyn FeatureExtractor {
        match self {
            FeatureKind::Identity => &IdentityFeatures,
            FeatureKind::Gradient => &GradientFeatures,
        }
    }
}

/// Everything a pipeline run reads from its JSON config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub weights: LossWeights,
    /// Coarse-to-fine hypothesis schedule.
    pub stages: Vec<StageConfig>,
    pub refine: RefineConfig,
    pub fusion: FusionConfig,
    /// Views per depth job: the reference plus its best-ranked sources.
    pub num_views: usize,
    pub features: FeatureKind,
    /// Soft-argmin temperature for depth regression.
    pub temperature: f64,
    /// Distance cap for cloud metrics, in scene units.
    pub eval_cap: f64,
    /// Worker threads for per-view jobs; 0 uses every core.
    pub workers: usize,
    /// Seed for synthesized scenes and probe sampling.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            weights: LossWeights::default(),
            stages: vec![StageConfig::new(48), StageConfig::new(32), StageConfig::new(8)],
            refine: RefineConfig::default(),
            fusion: FusionConfig { min_views: 4, ..FusionConfig::default() },
            num_views: 4,
            features: FeatureKind::Gradient,
            temperature: 0.02,
            eval_cap: 20.0,
            workers: 0,
            seed: 7,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<PipelineConfig> {
        let config: PipelineConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.refine.validate()?;
        self.fusion.validate()?;
        if self.stages.is_empty() {
            return Err(invalid("at least one sweep stage is required"));
        }
        for (k, stage) in self.stages.iter().enumerate() {
            if stage.count < 2 {
                return Err(invalid(format!("stage {k} needs at least 2 hypotheses")));
            }
            if let Some(g) = stage.interval {
                if !(g > 0.0 && g.is_finite()) {
                    return Err(invalid(format!("stage {k} interval must be positive, got {g}")));
                }
            }
        }
        if self.num_views < 2 {
            return Err(invalid("num_views needs the reference plus at least one source"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(invalid(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.eval_cap > 0.0 && self.eval_cap.is_finite()) {
            return Err(invalid(format!("eval_cap must be positive, got {}", self.eval_cap)));
        }
        Ok(())
    }

    /// Hypothesis spacing for stage `k` over the given depth range: the
    /// configured interval when present, otherwise the first stage's
    /// uniform spacing halved at each later stage.
    pub fn stage_interval(&self, range: (f64, f64), k: usize) -> f64 {
        if let Some(g) = self.stages[k].interval {
            return g;
        }
        let base = (range.1 - range.0) / (self.stages[0].count - 1) as f64;
        base / (1u64 << k) as f64
    }
}

/// Built-in scene specs for the synth verb.
pub fn scene_preset(name: &str, seed: u64) -> Result<SceneSpec> {
    match name {
        "textured-arc" => Ok(SceneSpec::textured_arc(seed)),
        "weak-texture" => Ok(SceneSpec::weak_texture(seed)),
        "rectified-planes" => Ok(SceneSpec::rectified_planes(seed)),
        other => Err(invalid(format!(
            "unknown scene preset '{other}' (textured-arc, weak-texture, rectified-planes)"
        ))),
    }
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if workers > 0 {
        builder = builder.num_threads(workers);
    }
    builder.build().map_err(|e| invalid(format!("worker pool: {e}")))
}

/// Every stage's per-view estimates, coarse to fine; the last stage is at
/// input resolution.
#[derive(Debug, Clone)]
pub struct DepthStages {
    pub per_stage: Vec<Vec<DepthMap>>,
}

impl DepthStages {
    pub fn final_maps(&self) -> &[DepthMap] {
        self.per_stage.last().expect("configs hold at least one stage")
    }

    pub fn into_final(mut self) -> Vec<DepthMap> {
        self.per_stage.pop().expect("configs hold at least one stage")
    }
}

/// The top-ranked source ids for every view, in ranking order.
fn source_table(
    n: usize,
    rankings: &[ViewRanking],
    num_views: usize,
) -> Result<Vec<Vec<usize>>> {
    let mut table: Vec<Option<Vec<usize>>> = vec![None; n];
    for r in rankings {
        if r.reference >= n {
            return Err(invalid(format!("ranking names reference {} of {n} views", r.reference)));
        }
        if table[r.reference].is_some() {
            return Err(invalid(format!("view {} is ranked twice", r.reference)));
        }
        let ids: Vec<usize> = r.sources.iter().map(|&(id, _)| id).take(num_views - 1).collect();
        if ids.is_empty() {
            return Err(invalid(format!("view {} has no ranked sources", r.reference)));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= n) {
            return Err(invalid(format!("view {} ranks source {bad} of {n} views", r.reference)));
        }
        table[r.reference] = Some(ids);
    }
    table
        .into_iter()
        .enumerate()
        .map(|(v, t)| t.ok_or_else(|| invalid(format!("no ranking for view {v}"))))
        .collect()
}

/// Run the staged sweep-and-refine schedule for every view.
pub fn estimate_depths(
    views: &[CameraView],
    images: &[Image],
    rankings: &[ViewRanking],
    config: &PipelineConfig,
) -> Result<DepthStages> {
    config.validate()?;
    if views.len() != images.len() {
        return Err(invalid(format!("{} images for {} views", images.len(), views.len())));
    }
    if views.len() < 2 {
        return Err(invalid("depth estimation needs at least two views"));
    }
    for (i, (view, img)) in views.iter().zip(images).enumerate() {
        if img.width() != view.width() || img.height() != view.height() {
            return Err(invalid(format!("image {i} size disagrees with its view")));
        }
    }
    let n = views.len();
    let sources_of = source_table(n, rankings, config.num_views)?;
    let extractor = config.features.extractor();
    let k_stages = config.stages.len();
    let mut per_stage: Vec<Vec<DepthMap>> = Vec::with_capacity(k_stages);
    let mut current: Vec<DepthMap> = Vec::new();
    for (k, stage) in config.stages.iter().enumerate() {
        let div = 1usize << (k_stages - 1 - k);
        let scaled: Vec<(CameraView, Image)> = views
            .par_iter()
            .zip(images.par_iter())
            .map(|(view, img)| {
                let w = (view.width() / div).max(2);
                let h = (view.height() / div).max(2);
                Ok((view.resized(w, h)?, resize_bilinear(img, w, h)?))
            })
            .collect::<Result<_>>()?;
        let swept: Vec<DepthMap> = (0..n)
            .into_par_iter()
            .map(|v| {
                let (view, img) = &scaled[v];
                let hyps = if k == 0 {
                    make_hypotheses(view.depth_range(), stage.count)?
                } else {
                    let gamma = config.stage_interval(view.depth_range(), k);
                    let prev = resample_depth(&current[v], view.width(), view.height())?;
                    narrow_range(&prev, stage.count, gamma)?
                };
                let sources: Vec<(&Image, &CameraView)> =
                    sources_of[v].iter().map(|&s| (&scaled[s].1, &scaled[s].0)).collect();
                let volume = build_cost_volume(img, view, &sources, &hyps)?;
                regress_depth(&volume, &hyps, config.temperature)
            })
            .collect::<Result<_>>()?;
        current = if config.refine.iterations == 0 {
            swept
        } else {
            (0..n)
                .into_par_iter()
                .map(|v| {
                    let best = sources_of[v][0];
                    let gamma = config.stage_interval(views[v].depth_range(), k);
                    let cfg = RefineConfig {
                        step: 0.1 * gamma,
                        span: Some(stage.count as f64 * gamma),
                        ..config.refine.clone()
                    };
                    let pair = PairViews {
                        ref_img: &scaled[v].1,
                        ref_view: &scaled[v].0,
                        src_img: &scaled[best].1,
                        src_view: &scaled[best].0,
                    };
                    let outcome = refine_depth(
                        &pair,
                        &swept[v],
                        &swept[best],
                        &config.weights,
                        extractor,
                        &cfg,
                    )?;
                    Ok(outcome.reference)
                })
                .collect::<Result<_>>()?
        };
        per_stage.push(current.clone());
    }
    Ok(DepthStages { per_stage })
}

fn depth_map_path(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("{id:08}.pfm"))
}

fn confidence_path(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("{id:08}_conf.pfm"))
}

/// Generate the scene and write it as a dataset, along with the spec that
/// reproduces it.
pub fn synthesize_dataset(spec: &SceneSpec, config: &PipelineConfig, root: &Path) -> Result<()> {
    config.validate()?;
    let bundle = generate_scene(spec)?;
    let dataset = Dataset::from_bundle(&bundle, config.stages[0].count)?;
    crate::io::write_dataset(&dataset, root)?;
    let mut spec_json = serde_json::to_string_pretty(spec)?;
    spec_json.push('\n');
    write_bytes(&root.join("scene.json"), spec_json.as_bytes())
}

/// Estimate every view's depth map and write depth and confidence PFMs
/// into `out`.
pub fn estimate_dataset_depths(root: &Path, out: &Path, config: &PipelineConfig) -> Result<()> {
    config.validate()?;
    let dataset = load_dataset(root)?;
    let pool = worker_pool(config.workers)?;
    let maps = pool
        .install(|| estimate_depths(&dataset.views, &dataset.images, &dataset.rankings, config))?
        .into_final();
    fs::create_dir_all(out).map_err(|e| io_at(out, e))?;
    for (id, map) in maps.iter().enumerate() {
        write_bytes(&depth_map_path(out, id), &write_depth_pfm(map)?)?;
        let conf =
            Image::from_data(1, map.width(), map.height(), map.confidences().to_vec())?;
        write_bytes(&confidence_path(out, id), &write_pfm(&conf)?)?;
    }
    Ok(())
}

/// Filter the per-view depth maps in `depth_dir` into one cloud and write
/// it as a binary PLY.
pub fn fuse_dataset(
    root: &Path,
    depth_dir: &Path,
    out_ply: &Path,
    config: &PipelineConfig,
) -> Result<PointCloud> {
    config.validate()?;
    let dataset = load_dataset(root)?;
    let mut depths = Vec::with_capacity(dataset.views.len());
    for (id, view) in dataset.views.iter().enumerate() {
        let bytes = read_bytes(&depth_map_path(depth_dir, id))?;
        depths.push(read_depth_pfm(&bytes, view.depth_range())?);
    }
    let cloud = fuse_point_cloud(&dataset.views, &dataset.images, &depths, &config.fusion)?;
    write_bytes(out_ply, &write_ply(&cloud))?;
    Ok(cloud)
}

/// Cloud metrics plus the point counts they were computed over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub points: usize,
    pub reference_points: usize,
    pub accuracy: f64,
    pub completeness: f64,
    pub overall: f64,
}

/// Score a fused cloud against the dataset's ground-truth cloud.
pub fn evaluate_dataset(
    root: &Path,
    cloud_path: &Path,
    out_json: Option<&Path>,
    config: &PipelineConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let dataset = load_dataset(root)?;
    let reference = dataset
        .gt_cloud
        .ok_or_else(|| invalid("dataset has no gt_cloud.ply to evaluate against"))?;
    let estimate = read_ply(&read_bytes(cloud_path)?)?;
    let metrics = evaluate_cloud(&estimate, &reference, config.eval_cap)?;
    let report = EvalReport {
        points: estimate.len(),
        reference_points: reference.len(),
        accuracy: metrics.accuracy,
        completeness: metrics.completeness,
        overall: metrics.overall(),
    };
    if let Some(path) = out_json {
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        write_bytes(path, text.as_bytes())?;
    }
    Ok(report)
}

/// Depth maps the diagnostics linearize around: ground truth when the
/// dataset carries it, otherwise a first-stage sweep without refinement.
fn working_depths(dataset: &Dataset, config: &PipelineConfig) -> Result<Vec<DepthMap>> {
    if let Some(gt) = &dataset.gt_depths {
        return Ok(gt.clone());
    }
    let mut sweep_only = config.clone();
    sweep_only.stages = vec![config.stages[0].clone()];
    sweep_only.refine.iterations = 0;
    Ok(estimate_depths(&dataset.views, &dataset.images, &dataset.rankings, &sweep_only)?
        .into_final())
}

const GRADCHECK_H_REL: f64 = 1e-4;
const GRADCHECK_BAND: f64 = 1e-3;
const GRADCHECK_TOLERANCE: f64 = 1e-3;

/// Analytic-vs-finite-difference agreement over safe probe sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub probes: usize,
    pub agreeing: usize,
    pub fraction: f64,
    pub max_relative_error: f64,
    pub h_rel: f64,
    pub tolerance: f64,
}

/// Probe the analytic gradient of the pair objective against central
/// finite differences at up to `probes` randomly chosen sites where the
/// finite difference is trustworthy.
pub fn gradient_check_pair(
    views: &PairViews,
    ref_depth: &DepthMap,
    src_depth: &DepthMap,
    weights: &LossWeights,
    extractor: &dyn FeatureExtractor,
    probes: usize,
    seed: u64,
) -> Result<GradcheckReport> {
    if probes == 0 {
        return Err(invalid("at least one probe is required"));
    }
    let (safe_ref, safe_src) = fd_safe_mask(
        views,
        ref_depth,
        src_depth,
        weights,
        extractor,
        GRADCHECK_H_REL,
        GRADCHECK_BAND,
    )?;
    let mut sites = Vec::new();
    for (side, mask) in [(PairSide::Reference, &safe_ref), (PairSide::Source, &safe_src)] {
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(x, y) {
                    sites.push((side, x, y));
                }
            }
        }
    }
    if sites.is_empty() {
        return Err(invalid("no safe probe sites; the depth maps may be empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<(PairSide, usize, usize)> =
        sites.choose_multiple(&mut rng, probes.min(sites.len())).copied().collect();

    let analytic = loss_gradient(views, ref_depth, src_depth, weights, extractor)?;
    let mut agreeing = 0usize;
    let mut max_rel = 0.0f64;
    for side in [PairSide::Reference, PairSide::Source] {
        let pixels: Vec<(usize, usize)> =
            chosen.iter().filter(|&&(s, _, _)| s == side).map(|&(_, x, y)| (x, y)).collect();
        if pixels.is_empty() {
            continue;
        }
        let fd = fd_gradient(
            views,
            ref_depth,
            src_depth,
            weights,
            extractor,
            side,
            &pixels,
            GRADCHECK_H_REL,
        )?;
        let grad = match side {
            PairSide::Reference => &analytic.reference,
            PairSide::Source => &analytic.source,
        };
        for (&(x, y), f) in pixels.iter().zip(fd) {
            let a = grad.get(0, x, y);
            let rel = (a - f).abs() / a.abs().max(f.abs()).max(1e-12);
            max_rel = max_rel.max(rel);
            if rel <= GRADCHECK_TOLERANCE {
                agreeing += 1;
            }
        }
    }
    let probes = chosen.len();
    Ok(GradcheckReport {
        probes,
        agreeing,
        fraction: agreeing as f64 / probes as f64,
        max_relative_error: max_rel,
        h_rel: GRADCHECK_H_REL,
        tolerance: GRADCHECK_TOLERANCE,
    })
}

/// Run the gradient check on the dataset's first ranked pair.
pub fn gradient_check_dataset(
    root: &Path,
    probes: usize,
    out_json: Option<&Path>,
    config: &PipelineConfig,
) -> Result<GradcheckReport> {
    config.validate()?;
    let dataset = load_dataset(root)?;
    let pool = worker_pool(config.workers)?;
    let report = pool.install(|| {
        let depths = working_depths(&dataset, config)?;
        let ranking =
            dataset.rankings.first().ok_or_else(|| invalid("dataset ranks no views"))?;
        let r = ranking.reference;
        let s = ranking.sources.first().ok_or_else(|| invalid("reference has no sources"))?.0;
        let pair = PairViews {
            ref_img: &dataset.images[r],
            ref_view: &dataset.views[r],
            src_img: &dataset.images[s],
            src_view: &dataset.views[s],
        };
        gradient_check_pair(
            &pair,
            &depths[r],
            &depths[s],
            &config.weights,
            config.features.extractor(),
            probes,
            config.seed,
        )
    })?;
    if let Some(path) = out_json {
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        write_bytes(path, text.as_bytes())?;
    }
    Ok(report)
}

/// Evaluate every loss term for one reference view and write the per-pixel
/// maps as PFMs into `out` (patch, ssim, geometric, smoothness, feature).
pub fn write_loss_maps(
    root: &Path,
    reference: usize,
    out: &Path,
    config: &PipelineConfig,
) -> Result<()> {
    config.validate()?;
    let dataset = load_dataset(root)?;
    if reference >= dataset.views.len() {
        return Err(invalid(format!(
            "reference {reference} of {} views",
            dataset.views.len()
        )));
    }
    let pool = worker_pool(config.workers)?;
    let loss = pool.install(|| {
        let depths = working_depths(&dataset, config)?;
        let ranking = dataset
            .rankings
            .iter()
            .find(|r| r.reference == reference)
            .ok_or_else(|| invalid(format!("no ranking for view {reference}")))?;
        let ids: Vec<usize> =
            ranking.sources.iter().map(|&(id, _)| id).take(config.num_views - 1).collect();
        if ids.is_empty() {
            return Err(invalid(format!("view {reference} has no ranked sources")));
        }
        let sources: Vec<SourceInput> = ids
            .iter()
            .map(|&s| SourceInput {
                image: &dataset.images[s],
                view: &dataset.views[s],
                depth: Some(&depths[s]),
            })
            .collect();
        total_single_scale(
            &dataset.images[reference],
            &dataset.views[reference],
            &depths[reference],
            &sources,
            &config.weights,
            config.features.extractor(),
        )
    })?;
    fs::create_dir_all(out).map_err(|e| io_at(out, e))?;
    let terms = [
        ("patch", &loss.patch),
        ("ssim", &loss.ssim),
        ("geometric", &loss.geometric),
        ("smoothness", &loss.smoothness),
        ("feature", &loss.feature),
    ];
    for (name, report) in terms {
        write_bytes(&out.join(format!("{name}.pfm")), &write_pfm(&report.map)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::pfm::read_pfm;

    /// The arc scene with only its textured plane, so depth errors measure
    /// estimation quality rather than occlusion boundaries.
    fn plane_arc(size: usize, seed: u64) -> crate::synthetic::SceneBundle {
        let mut spec = SceneSpec::textured_arc(seed);
        spec.width = size;
        spec.height = size;
        spec.focal *= size as f64 / 64.0;
        spec.surfaces.remove(1);
        generate_scene(&spec).unwrap()
    }

    fn full_res_rmse(map: &DepthMap, gt: &DepthMap) -> f64 {
        let up = if map.width() == gt.width() && map.height() == gt.height() {
            map.clone()
        } else {
            resample_depth(map, gt.width(), gt.height()).unwrap()
        };
        let mut sum = 0.0;
        let mut n = 0usize;
        for y in 0..gt.height() {
            for x in 0..gt.width() {
                if let (Some(a), Some(b)) = (up.get(x, y), gt.get(x, y)) {
                    sum += (a - b) * (a - b);
                    n += 1;
                }
            }
        }
        assert!(n > 0, "no commonly valid pixels");
        (sum / n as f64).sqrt()
    }

    #[test]
    fn default_config_round_trips_through_json() {
        let config = PipelineConfig::default();
        let parsed = PipelineConfig::from_json(&config.to_json()).unwrap();
        assert_eq!(parsed, config);
        assert_eq!(
            config.stages.iter().map(|s| s.count).collect::<Vec<_>>(),
            vec![48, 32, 8]
        );
        assert_eq!(config.num_views, 4);
        assert_eq!(config.fusion.min_views, 4);
        assert!(PipelineConfig::from_json("{\"bogus\": 1}").is_err());
    }

    #[test]
    fn stage_intervals_halve_unless_pinned() {
        let mut config = PipelineConfig::default();
        let range = (425.0, 935.0);
        let base = 510.0 / 47.0;
        assert!((config.stage_interval(range, 0) - base).abs() < 1e-12);
        assert!((config.stage_interval(range, 1) - base / 2.0).abs() < 1e-12);
        assert!((config.stage_interval(range, 2) - base / 4.0).abs() < 1e-12);
        config.stages[2].interval = Some(1.06);
        assert_eq!(config.stage_interval(range, 2), 1.06);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut c = PipelineConfig::default();
        c.num_views = 1;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.stages.clear();
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.stages[1].count = 1;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.temperature = 0.0;
        assert!(c.validate().is_err());
        assert!(scene_preset("no-such-scene", 1).is_err());
    }

    #[test]
    fn staged_estimates_tighten_toward_truth() {
        let bundle = plane_arc(48, 13);
        let mut config = PipelineConfig::default();
        config.stages = vec![StageConfig::new(32), StageConfig::new(16), StageConfig::new(8)];
        let rankings: Vec<ViewRanking> = (0..bundle.views.len())
            .map(|r| {
                let cands: Vec<usize> =
                    (0..bundle.views.len()).filter(|&v| v != r).collect();
                crate::view_selection::rank_sources(&bundle.views, &bundle.tracks, r, &cands)
                    .unwrap()
            })
            .collect();
        let stages =
            estimate_depths(&bundle.views, &bundle.images, &rankings, &config).unwrap();
        assert_eq!(stages.per_stage.len(), 3);
        let last = stages.final_maps();
        assert_eq!(last[0].width(), 48);

        let mean_rmse = |maps: &[DepthMap]| -> f64 {
            maps.iter()
                .zip(&bundle.gt_depths)
                .map(|(m, gt)| full_res_rmse(m, gt))
                .sum::<f64>()
                / maps.len() as f64
        };
        let per_stage: Vec<f64> = stages.per_stage.iter().map(|m| mean_rmse(m)).collect();
        for pair in per_stage.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-9,
                "stage error rose: {:?}",
                per_stage
            );
        }
        let last_gamma = config.stage_interval(bundle.views[0].depth_range(), 2);
        assert!(
            *per_stage.last().unwrap() <= last_gamma,
            "final rmse {} vs stage interval {last_gamma}",
            per_stage.last().unwrap()
        );
    }

    #[test]
    fn estimates_are_deterministic_across_worker_counts() {
        let bundle = plane_arc(32, 5);
        let mut config = PipelineConfig::default();
        config.stages = vec![StageConfig::new(16), StageConfig::new(8)];
        config.refine.iterations = 3;
        config.num_views = 3;
        let rankings: Vec<ViewRanking> = (0..bundle.views.len())
            .map(|r| {
                let cands: Vec<usize> =
                    (0..bundle.views.len()).filter(|&v| v != r).collect();
                crate::view_selection::rank_sources(&bundle.views, &bundle.tracks, r, &cands)
                    .unwrap()
            })
            .collect();
        let run = |workers: usize| -> Vec<Vec<DepthMap>> {
            worker_pool(workers)
                .unwrap()
                .install(|| estimate_depths(&bundle.views, &bundle.images, &rankings, &config))
                .unwrap()
                .per_stage
        };
        let a = run(2);
        let b = run(4);
        for (sa, sb) in a.iter().zip(&b) {
            for (ma, mb) in sa.iter().zip(sb) {
                assert_eq!(ma.depths(), mb.depths());
                assert_eq!(ma.confidences(), mb.confidences());
                assert_eq!(ma.mask().data(), mb.mask().data());
            }
        }
    }

    #[test]
    fn dataset_verbs_run_end_to_end() {
        let mut spec = SceneSpec::textured_arc(5);
        spec.width = 32;
        spec.height = 32;
        spec.surfaces.truncate(1);
        let mut config = PipelineConfig::default();
        config.stages = vec![StageConfig::new(16), StageConfig::new(8)];
        config.refine.iterations = 3;
        config.num_views = 3;
        config.fusion.min_views = 3;
        config.workers = 2;

        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("scene");
        let depth_dir = dir.path().join("depths");
        let cloud_path = dir.path().join("cloud.ply");
        let eval_path = dir.path().join("metrics.json");

        synthesize_dataset(&spec, &config, &root).unwrap();
        assert!(root.join("scene.json").exists());
        estimate_dataset_depths(&root, &depth_dir, &config).unwrap();
        for id in 0..5 {
            assert!(depth_map_path(&depth_dir, id).exists());
            assert!(confidence_path(&depth_dir, id).exists());
        }
        let cloud = fuse_dataset(&root, &depth_dir, &cloud_path, &config).unwrap();
        assert!(!cloud.is_empty());
        let report =
            evaluate_dataset(&root, &cloud_path, Some(&eval_path), &config).unwrap();
        assert_eq!(report.points, cloud.len());
        assert!(report.accuracy.is_finite() && report.accuracy < config.eval_cap);
        assert!(report.completeness.is_finite());
        let text = fs::read_to_string(&eval_path).unwrap();
        let parsed: EvalReport = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed, report);
    }

    #[test]
    fn gradcheck_agrees_at_safe_probes() {
        let mut spec = SceneSpec::textured_arc(9);
        spec.width = 32;
        spec.height = 32;
        let config = PipelineConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("scene");
        synthesize_dataset(&spec, &config, &root).unwrap();
        let report_path = dir.path().join("gradcheck.json");
        let report =
            gradient_check_dataset(&root, 60, Some(&report_path), &config).unwrap();
        assert!(report.probes > 0);
        assert!(
            report.fraction >= 0.99,
            "agreement {} (max rel err {})",
            report.fraction,
            report.max_relative_error
        );
        let text = fs::read_to_string(&report_path).unwrap();
        let parsed: GradcheckReport = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed, report);
    }

    #[test]
    fn loss_maps_cover_every_term() {
        let mut spec = SceneSpec::textured_arc(11);
        spec.width = 32;
        spec.height = 32;
        let mut config = PipelineConfig::default();
        config.num_views = 3;
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("scene");
        synthesize_dataset(&spec, &config, &root).unwrap();
        let maps_dir = dir.path().join("maps");
        write_loss_maps(&root, 2, &maps_dir, &config).unwrap();
        for name in ["patch", "ssim", "geometric", "smoothness", "feature"] {
            let bytes = fs::read(maps_dir.join(format!("{name}.pfm"))).unwrap();
            let img = read_pfm(&bytes).unwrap();
            assert_eq!((img.width(), img.height()), (32, 32), "{name}");
            assert!(img.data().iter().all(|v| v.is_finite() && *v >= 0.0), "{name}");
        }
    }

    #[test]
    fn diag_stage_quality() {
        let bundle = plane_arc(48, 13);
        let r = 0usize;
        let cands: Vec<usize> = (1..bundle.views.len()).collect();
        let ranking =
            crate::view_selection::rank_sources(&bundle.views, &bundle.tracks, r, &cands).unwrap();
        println!("ranking: {:?}", ranking.sources);
        let srcs: Vec<(&Image, &CameraView)> = ranking.sources[..3]
            .iter()
            .map(|&(v, _)| (&bundle.images[v], &bundle.views[v]))
            .collect();
        // full-res single sweep, 48 hypotheses
        let range = bundle.views[r].depth_range();
        let gamma = (range.1 - range.0) / 47.0;
        let hyps = make_hypotheses(range, 48).unwrap();
        let volume =
            build_cost_volume(&bundle.images[r], &bundle.views[r], &srcs, &hyps).unwrap();
        for tau in [0.005, 0.002, 0.001, 0.0005] {
            let map = regress_depth(&volume, &hyps, tau).unwrap();
            let gt = &bundle.gt_depths[r];
            let mut close = 0usize;
            let mut total = 0usize;
            let mut sum = 0.0;
            for y in 0..gt.height() {
                for x in 0..gt.width() {
                    if let (Some(a), Some(b)) = (map.get(x, y), gt.get(x, y)) {
                        total += 1;
                        sum += (a - b) * (a - b);
                        if (a - b).abs() <= gamma {
                            close += 1;
                        }
                    }
                }
            }
            println!(
                "tau {tau}: rmse {:.2}, within gamma {des:.4} ({close}/{total})",
                (sum / total as f64).sqrt(),
                des = close as f64 / total as f64
            );
        }
        // cost profile at a few pixels vs GT depth
        let gt = &bundle.gt_depths[r];
        for &(x, y) in &[(24usize, 24usize), (10, 35), (40, 12)] {
            let gtd = gt.get(x, y).unwrap();
            let mut best = (f64::MAX, 0usize);
            let mut profile = Vec::new();
            for k in 0..48 {
                let c = volume.cost(x, y, k);
                profile.push((hyps.sample(x, y, k), c));
                if volume.valid(x, y, k) && c < best.0 {
                    best = (c, k);
                }
            }
            println!(
                "pixel ({x},{y}): gt {gtd:.1}, argmin depth {:.1} cost {:.6}",
                hyps.sample(x, y, best.1),
                best.0
            );
            let show: Vec<String> = profile
                .iter()
                .step_by(4)
                .map(|(d, c)| format!("{d:.0}:{c:.4}"))
                .collect();
            println!("  profile {}", show.join(" "));
        }
        // photo-consistency: intensity of ref pixel vs bilinear sample in sources at GT
        let refimg = &bundle.images[r];
        let refview = &bundle.views[r];
        for &(x, y) in &[(24usize, 24usize), (10, 35), (40, 12)] {
            let gtd = gt.get(x, y).unwrap();
            let rv = refimg.get(0, x, y);
            let mut line = format!("photo ({x},{y}) d={gtd:.1}: ref {rv:.4}");
            for &(v, _) in &ranking.sources[..3] {
                let sv = &bundle.views[v];
                let p = nalgebra::Vector2::new(x as f64, y as f64);
                let w = crate::geometry::warp_pixel(refview, sv, &p, gtd).unwrap();
                if w.depth > 0.0 && sv.contains(&w.coords) {
                    let s = crate::imaging::bilinear_at(
                        &bundle.images[v],
                        0,
                        w.coords.x,
                        w.coords.y,
                    );
                    line.push_str(&format!(
                        " | v{v} ({:.2},{:.2}) {s:.4}",
                        w.coords.x, w.coords.y
                    ));
                } else {
                    line.push_str(&format!(" | v{v} off"));
                }
            }
            println!("{line}");
        }
        // epipolar travel: where does (24,24) land in each source across depth?
        for &(x, y) in &[(24usize, 24usize), (40, 12)] {
            let p = nalgebra::Vector2::new(x as f64, y as f64);
            for &(v, _) in &ranking.sources[..3] {
                let sv = &bundle.views[v];
                let mut line = format!("travel ({x},{y}) v{v}:");
                for d in [425.0, 550.0, 680.0, 810.0, 935.0] {
                    let w = crate::geometry::warp_pixel(refview, sv, &p, d).unwrap();
                    let s = if sv.contains(&w.coords) {
                        crate::imaging::bilinear_at(&bundle.images[v], 0, w.coords.x, w.coords.y)
                    } else {
                        f64::NAN
                    };
                    line.push_str(&format!(
                        " d{d:.0}=({:.2},{:.2})I{s:.3}",
                        w.coords.x, w.coords.y
                    ));
                }
                println!("{line}");
            }
        }
        for (v, view) in bundle.views.iter().enumerate() {
            println!("cam {v}: center {:?}", view.center().as_slice());
        }
        panic!("diag done");
    }

    #[test]
    fn worker_pool_bounds_threads() {
        let pool = worker_pool(2).unwrap();
        assert_eq!(pool.install(rayon::current_num_threads), 2);
    }
}
