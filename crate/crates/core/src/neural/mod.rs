//! From-scratch tensor engine and the spatiotemporal encoder-decoder that
//! maps correlation blocks to super-resolved track-probability maps, plus
//! its training loop.

pub mod check;
mod checkpoint;
mod model;
mod ops;
mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{
    chi_to_input, init_params, model_backward, model_forward, threshold_binarize, Gradients,
    ModelConfig, ModelParams, Trace,
};
pub use ops::{
    avgpool3d_backward, avgpool3d_forward, concat_channels, conv3d_backward, conv3d_forward,
    dice_loss, maxpool3d_backward, maxpool3d_forward, nn_resize_backward, nn_resize_forward,
    prelu_backward, prelu_forward, sigmoid_backward, sigmoid_forward, split_channels,
    temporal_mean_backward, temporal_mean_forward, DICE_SMOOTHING,
};
pub use tensor::{Element, Tensor};
pub use train::{
    adam_step, dilate_mask, mask_to_target, train_two_phase, write_training_log, AdamState,
    EpochRecord, MultiStepSchedule, PhaseConfig, TrainConfig, TrainOutcome, TrainSample,
    ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON, DEFAULT_BATCH_SIZE,
};
