//! Synthetic ground truth: analytic scenes rasterized to a grid, a camera
//! rig, per-view tone profiles, the rendered LDR/HDR datasets, and the
//! comparison of a trained model against them.

pub mod dataset;
pub mod profile;
pub mod scene;

pub use dataset::{
    apply_profile, camera_rig, gt_compare, load_gt_grid, load_profile, render_gt_dataset, render_ldr, synthesize,
    test_view_indices, tonemap_image, view_id, OracleDataset, RecoveryReport, RigSpec, MANIFEST_FILE,
};
pub use profile::{gamma_curve, GtToneProfile, ViewProfile};
pub use scene::{build_scene, default_scene_spec, emission_payload, OracleScene, Primitive, SceneSpec, Shape};
