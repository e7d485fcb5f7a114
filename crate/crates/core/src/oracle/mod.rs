//! Ground truth for testing: a brute-force renderer, finite-difference
//! gradients and synthetic labeled scenes.

mod check;
mod fd;
mod render;
mod synth;

pub use check::{check_gradients, Branch, GradientCheck};
pub use fd::{finite_diff_gradient, gradients_agree, ParamRef};
pub use render::{oracle_render, oracle_render_with, oracle_replay, ActiveBlend, ActiveSet, OracleOptions};
pub use synth::{
    generate_scene, initial_cloud, random_cloud, test_camera, true_masks, SceneSpec, SyntheticScene,
    SyntheticView, ID_COVERAGE_MIN,
};
