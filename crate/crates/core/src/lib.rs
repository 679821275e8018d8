//! Certified bounds on input-gradient explanations of feed-forward networks.
//!
//! Interval bounds are propagated jointly over an input box and a box around
//! the trained parameters, through both the forward pass and the backward
//! gradient recursion. The resulting [`GradientBox`] encloses every input
//! gradient reachable inside the two boxes, and drives certificates, attacks
//! and certified training.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod attack;
pub mod autodiff;
pub mod backend;
pub mod bounds;
pub mod certify;
pub mod data;
pub mod error;
pub mod interval;
pub mod math;
pub mod network;
pub mod tensor;
pub mod train;

pub use bounds::{
    backward_bounds, explanation_bounds, explanation_bounds_batch, explanation_bounds_in, forward_bounds,
    forward_bounds_with, logit_bounds_margin, logits_certified, BoundMethod, ForwardBounds,
};
pub use attack::{input_attack, model_attack, AttackConfig, AttackGoal, AttackMode, AttackResult, GradientEstimator};
pub use certify::{
    bias_score, certified_top_k_exclusion, certify_targeted, certify_untargeted, cosine_similarity_min_bound, mse,
    targeted_witness, untargeted_witness, CertificationOutcome, Similarity, TargetSpec,
};
pub use data::{half_moons, label_poison, Dataset};
pub use error::{Error, Result};
pub use interval::{GradientBox, InputRegion, IntervalMatrix, ModelRegion};
pub use network::{Activation, ConvGeometry, Layer, LayerSpec, LossKind, Network};
pub use tensor::Tensor;
pub use train::{composite_loss, fit, grad_cert_regularizer, Optimizer, Ramp, Regularizer, TrainConfig, TrainReport};
