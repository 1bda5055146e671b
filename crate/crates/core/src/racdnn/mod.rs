//! Network assembly: the initial encoder-decoder saliency network and the
//! recurrent attentional refinement network, with their training loops.
//!
//! Parameter names are namespaced so both networks live in one
//! [`ParamStore`](crate::nn::ParamStore): `init.*` for the initial network,
//! `ctx.*`, `rec.*` and `loc.*` for the refinement network.

mod config;
mod net;
mod train;

pub use config::{DecoderConfig, EncoderConfig, LayerSpec, Preset, StackConfig};
pub use net::{
    check_images, initial_saliency, run_refinement, InitialNet, RecurrentState, RefinementTrace, Refiner, Rollout,
    TraceEntry, CTX_ENC, CTX_FC, DEFAULT_ITERATIONS, INIT_DEC, INIT_ENC, REC_DEC, REC_ENC,
};
pub use train::{
    evaluate_stage, fit_image, initial_logits, initial_train_step, make_batch, predict_logits, predict_maps,
    refine_train_step, stage_loss, train_initial, train_refinement, Batch, EpochLog, Stage, StageOptions, TrainOutcome,
};
