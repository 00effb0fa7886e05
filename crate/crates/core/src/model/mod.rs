//! The assembled model: forward pass, objectives, alternating training,
//! inference and unsupervised opinion extraction.

mod config;
mod network;
mod predict;
mod train;

pub use config::{Ablation, Alpha, DeltaMode, LearningRates, TrainConfig};
pub use network::{
    combine_losses, loss_sc, loss_total, prepare_dataset, prepare_sentence, sentence_losses, AspectForward, Context,
    ForwardOptions, LossTerms, ModelConfig, PreparedAspect, PreparedSentence, Resources, SarlModel, SentenceForward,
};
pub use predict::{
    extract_opinion, predict, predict_sentence, prediction_lines, rank_opinions, write_predictions, OpinionRef,
    Prediction, RankedOpinion,
};
pub use train::{discriminator_step, model_step, step_kind, train, EpochLog, ModelStepStats, StepKind};
