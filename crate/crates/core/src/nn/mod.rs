//! Layers, architecture presets and whole-model forward/backward.

mod activation;
mod arch;
mod conv;
mod dense;
mod dropout;
mod model;
mod params;
mod pool;
mod softmax;

pub use activation::{relu_backward, relu_forward};
pub use arch::{
    build_preset, build_preset_with, ArchitectureSpec, DropoutParadigm, HeadDropout, LayerDesc, LayerShape,
    Placement, Preset, PresetOverrides,
};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads};
pub use dense::{dense_backward, dense_forward, DenseGrads};
pub use dropout::{dropout_backward, dropout_forward, dropout_mask, DropoutMode};
pub use model::{
    argmax_rows, count_correct, loss_and_gradients, model_backward, model_forward,
    model_forward_with_masks, predict,
    ForwardCache, ForwardOutput, StepOutput,
};
pub use params::{init_parameters, Gradients, LayerParams, Parameters};
pub use pool::{maxpool2x2_backward, maxpool2x2_forward};
pub use softmax::{softmax_cross_entropy, softmax_cross_entropy_backward};
