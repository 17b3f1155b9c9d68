//! The learnable planner: scene featurization, the attention network over the
//! planning vocabulary, losses, optimizer, and gradient verification.

pub mod encode;
pub mod model;
pub mod nn;
pub mod train;

pub use encode::{ego_features, encode_pair, encode_scene, SceneTokens, TokenType, D_RAW};
pub use model::{
    forward, load_model, model_hash, save_model, vocab_input, ForwardOutput, ModelConfig,
    StudentError, StudentModel,
};
pub use train::{
    ablated_mask, baseline_bce, build_item, evaluate_losses, grad_check, grad_check_max,
    loss_distill, loss_imitation, train, Hyper, TrainItem,
};
