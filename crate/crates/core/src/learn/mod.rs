//! Losses with analytic gradients and the trainers for the fusion weights
//! and the naive-mode calibration.

pub mod backprop;
pub mod loss;
pub mod naive;
pub mod optim;
pub mod train;

pub use backprop::{rotmat_grad_to_quat, splat_backward, FusionTape};
pub use loss::{
    cross_entropy, lovasz_extension, lovasz_softmax, softmax_backward, softmax_probs, total_loss,
    ClassProbs, Lovasz, LossReport,
};
pub use naive::Calibration;
pub use optim::{AdamW, Schedule};
pub use train::{
    fusion_loss, fusion_loss_and_grad, train_calibration, train_fusion, write_loss_csv, StepRecord,
    TrainConfig, TrainOutcome, TrainSample,
};
