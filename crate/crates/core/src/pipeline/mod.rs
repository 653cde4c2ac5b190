//! Dataset preparation, the two training flows, fine-tuning, dubbing,
//! appearance transfer and evaluation as library calls.

pub mod commands;
pub mod manifest;

pub use commands::{
    cmd_dub, cmd_eval, cmd_finetune, cmd_train_stage1, cmd_train_stage2, cmd_transfer, dub_clip,
    exit_code, load_footage, load_stage1, load_stage2, Appearance, ConfigSource, DubInput,
    DubModels, DubOutput, DubPaths, DubTiming, TrainSummary, STAGE1_KIND, STAGE2_KIND,
};
pub use manifest::{cache_dir, cached_mel, prepare, DatasetManifest, ManifestEntry, CACHE_ENV};
