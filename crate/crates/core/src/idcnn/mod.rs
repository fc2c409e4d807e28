//! Inception-dilated density network: a small from-scratch engine with
//! forward and reverse passes, trained by plain gradient descent.

mod checkpoint;
mod data;
mod loss;
mod network;
mod ops;
mod tensor;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, MAGIC, VERSION};
pub use data::{
    distant_crop, frame_tensor, masked_prediction_sum, predict_count, prepare_input, prepare_sample, DistantCrop,
    InputNormalizer, PreparedInput, Sample,
};
pub use loss::{loss_mse, mse_with_grad};
pub use network::{inception_forward, Conv, InceptionDilatedLayer, Network, NetworkConfig, Trace, BRANCH_RATES, TAIL_DILATION};
pub use ops::{
    conv2d_dilated, conv2d_dilated_backward, maxpool2, maxpool2_backward, maxpool2_with_indices, relu_backward_inplace,
    relu_inplace, ConvGrads, ConvSpec,
};
pub use tensor::Tensor;
pub use train::{backward_and_step, train, TrainOptions, TrainState, DEFAULT_LEARNING_RATE};
