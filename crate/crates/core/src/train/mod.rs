//! Reverse-mode training of small binarized CNNs.
//!
//! Layers are differentiated by hand, one unit (convolution, optional
//! shuffle, batch norm, activation) at a time. In the binarized mode the
//! forward pass runs on the XNOR/popcount kernels with `sign(latent)`
//! weights, and gradients pass straight through the binarizers.

mod conv;
mod fold;
mod loss;
mod network;
mod optim;
mod par;
mod trainer;

pub use fold::{bn_affine, fold_batch_norm, FoldedThreshold, IntegerEncoder, IntegerLayer, IntegerNetwork, FOLD_RANGE};
pub use loss::{cross_entropy, distributional_loss, distributional_loss_grad, log_softmax, total_loss, LossConfig};
pub use network::{
    argmax_rows, BatchNorm, Classifier, ConvUnit, ForwardPass, ForwardTrace, Grads, InputEncoder, Mode, Network,
    ParamKind, ParamSlice, BN_EPS, BN_MOMENTUM,
};
pub use optim::{cosine_lr, Optimizer, OptimizerConfig};
pub use trainer::{
    batch_images, binarize, evaluate, forward_backward, initial_state, pretrain_then_binarize, resume_protocol,
    EpochRecord, Stage, StepOutcome, TrainConfig, TrainState,
};
