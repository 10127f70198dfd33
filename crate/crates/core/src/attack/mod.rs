//! Adversarial optimization: losses, optimizer state, the motion-aware
//! attack driver and gradient-sign baselines.

pub mod adam;
pub mod baselines;
pub mod engine;
pub mod loss;
pub mod search;

pub use adam::{adam_step, lr_adjust, AdamState, SampleLrState};
pub use baselines::{cw_attack, fgsm_attack, ifgsm_attack};
pub use engine::{
    attack_inner, ma_adv_attack, Ablation, AttackConfig, AttackResult, InnerOutcome, LambdaStep,
    Method, Perturbation,
};
pub use loss::{chamfer_loss, margin_logit_loss, total_loss};
pub use search::BinarySearchState;
