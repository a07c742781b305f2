//! Multi-view stereo as a direct numerical objective: plane-sweep depth
//! initialization, patch-wise photometric refinement with cross-view
//! geometric consistency, and consistency-filtered point cloud fusion.
//!
//! Modules:
//! - [`geometry`]: pinhole cameras, cross-view warps
//! - [`imaging`]: float rasters, bilinear sampling, patches, SSIM, gradients
//! - [`view_selection`]: covisibility scoring over sparse tracks
//! - [`plane_sweep`]: depth hypotheses, variance cost volumes, soft argmin
//! - [`render`]: warp whole depth maps into other views
//! - [`losses`]: photometric / SSIM / geometric / smoothness / feature terms
//! - [`refine`]: analytic depth gradients and descent over the pair loss
//! - [`fusion`]: consistency filtering, fused clouds, cloud metrics
//! - [`synthetic`]: procedural scenes with exact ground truth
//! - [`io`]: cam.txt / pair.txt / PFM / PLY round-trip formats
//! - [`pipeline`]: end-to-end dataset processing used by the CLI

pub mod error;
pub mod fusion;
pub mod geometry;
pub mod imaging;
pub mod io;
pub mod losses;
pub mod pipeline;
pub mod plane_sweep;
pub mod refine;
pub mod render;
pub mod synthetic;
pub mod view_selection;

pub use error::{Error, Result};
pub use fusion::{evaluate_cloud, fuse_point_cloud, CloudMetrics, FusionConfig, PointCloud};
pub use geometry::{warp_patch, warp_pixel, CameraView, PixelWarp, WarpField, Warper};
pub use imaging::{
    bilinear_sample, extract_patch_image, merge_patch_scales, patch_offsets, resize_bilinear,
    spatial_gradients, ssim_map, Image, PatchImage, ValidMask,
};
pub use io::{load_dataset, write_dataset, CamFile, Dataset};
pub use losses::{LossReport, LossWeights};
pub use pipeline::{
    estimate_depths, evaluate_dataset, fuse_dataset, gradient_check_dataset, scene_preset,
    synthesize_dataset, write_loss_maps, DepthStages, EvalReport, FeatureKind, GradcheckReport,
    PipelineConfig, StageConfig,
};
pub use plane_sweep::{
    build_cost_volume, make_hypotheses, narrow_range, regress_depth, CostVolume, DepthHypotheses,
    DepthMap,
};
pub use refine::{loss_gradient, pair_loss, refine_depth, PairViews, RefineConfig, RefineOutcome};
pub use synthetic::{generate_scene, SceneBundle, SceneSpec};
pub use view_selection::{rank_sources, SparseTrackSet, ViewRanking};
