//! The detection network: a two-layer encoder, max-pooling, eight dilated
//! context convolutions, max-unpooling and two decoder branches (objectness
//! and corner offsets). Also the multi-task loss, SGD training and the
//! weight file format.

mod forward;
mod loss;
mod params;
mod train;
mod weights;

pub use forward::{backward, forward, infer, ForwardOptions, ForwardTrace, NetOutput};
pub use loss::{loss, pointwise_weights, smooth_l1, smooth_l1_grad, LossTargets, LossValue, PointwiseWeights};
pub use params::{
    sgd_step, Gradients, LMNetParams, Layer, NetConfig, CONTEXT, CONTEXT_LAYERS, CORNER_CHANNELS, COR_CONV1, COR_CONV2,
    DILATIONS, ENC1, ENC2, LAYER_NAMES, OBJ_CONV1, OBJ_CONV2,
};
pub use train::{evaluate_loss, sample_gradients, train, train_with_progress, TrainConfig, TrainSample};
pub use weights::{decode_weights, encode_weights, load_weights, save_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};
