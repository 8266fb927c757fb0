//! SE(3)-equivariant graph attention learner with hand-written reverse-mode gradients.

mod learner;
mod params;
mod sh;
pub mod tape;

pub use learner::{
    backward, coords_tensor, forward, learner_on_tape, load_params, param_gradients, sigma_features, tensor_points,
    Conditioning, LearnerGraph, LearnerTrace, ParamVars,
};
pub use params::{ConditioningKind, LearnerConfig, LearnerParams, ParamTensor, BOND_CLASSES, SIGMA_FEATURES};
pub use sh::{spherical_harmonics, L_MAX};
