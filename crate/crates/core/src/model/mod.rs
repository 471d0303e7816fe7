//! The encoder `f_θ`: a context-stacked two-layer tanh network with a pooled
//! head and a smoothed per-frame head, analytic backward passes and Adam.

mod adam;
mod forward;
mod params;

pub use adam::{adam_step, adam_update, LrSchedule, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use forward::{
    backward_frames, backward_pooled, forward_frames, forward_pooled, mixture_from_raw, predict_frames, predict_pooled,
    AlphaSequence, FramePass, PooledPass,
};
pub use params::{
    init_model, load_model, model_from_json, model_to_json, save_model, Head, ModelConfig, ModelParams, Weights,
    MODEL_VERSION,
};
