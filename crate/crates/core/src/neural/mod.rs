//! Layers, losses and optimizer with hand-written backward passes.

pub mod adam;
pub mod attention;
pub mod dense;
pub mod gaussian;
pub mod gradcheck;
pub mod loss;
pub mod lstm;
pub mod params;

pub use adam::{clip_global_norm, Adam, AdamConfig, StepOutcome};
pub use attention::{attention, attention_backward, attention_forward, softmax, AttentionCache, AttentionScale};
pub use dense::{embed, relu_backward, relu_forward, DenseCache};
pub use gaussian::{gaussian_head, nll, GaussianParams, GAUSSIAN_OUTPUTS};
pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport};
pub use loss::{sequence_loss, LossConfig, LossMode};
pub use lstm::{lstm_backward, lstm_forward, lstm_step, LstmCache, LstmGrads, RecurrentState};
pub use params::{ParamId, ParameterSet};
