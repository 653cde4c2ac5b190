//! Stage 1: few-shot landmark generation from speech.

pub mod model;
pub mod train;

pub use model::{fuse, l1_landmark_loss, FusionWeights, LandmarkGenModel, LandmarkGenSpec};
pub use train::{
    predict_track, stage1_optimizer, train_stage1, write_loss_csv, SampleIndex, Stage1Batch,
    Stage1Clip, Stage1Dataset, Stage1Report,
};
