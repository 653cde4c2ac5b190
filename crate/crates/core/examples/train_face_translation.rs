//! Meta-trains a small landmark-to-face translator on two synthetic
//! speakers, then fine-tunes it on a third with the embedder frozen.
//!
//! cargo run --release --example train_face_translation -- [meta_steps] [finetune_steps]

use candle_core::{DType, Device};
use lipdub::landmarks::LandmarkPartition;
use lipdub::nn::{ConvStackExtractor, ParamStore};
use lipdub::stage2::{
    fine_tune, masked_reconstruction_error, meta_train, Stage2Clip, Stage2Dataset, TranslationModel,
};
use lipdub::synthetic::{synth_clip, SyntheticSpeaker};
use lipdub::TrainConfig;

fn clips(seeds: &[u64]) -> Vec<Stage2Clip> {
    seeds
        .iter()
        .map(|&s| {
            let sp = SyntheticSpeaker::random(format!("spk{s}"), s);
            let c = synth_clip(&sp, 40, Some(32), 100 + s);
            Stage2Clip {
                id: format!("clip{s}"),
                speaker_id: sp.id,
                frames: c.video.unwrap().frames,
                track: c.track,
            }
        })
        .collect()
}

fn main() -> lipdub::Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<usize>().ok());
    let mut cfg = TrainConfig::default();
    cfg.image_size = 32;
    cfg.unet_depth = 3;
    cfg.base_width = 8;
    cfg.disc_width = 8;
    cfg.embed_dim = 16;
    cfg.batch_stage2 = 2;
    cfg.steps_stage2 = args.next().flatten().unwrap_or(60);
    cfg.finetune_steps = args.next().flatten().unwrap_or(30);
    let p = LandmarkPartition::default();
    let (dt, dev) = (DType::F32, Device::Cpu);
    let extractor = ConvStackExtractor::default_rgb();

    let model = TranslationModel::new(&cfg, &ParamStore::new(dt, &dev, 0))?;
    let meta = Stage2Dataset::new(clips(&[0, 1]), &p, &cfg, dt, &dev)?;
    let r = meta_train(&model, &meta, &cfg, &extractor, |step, l| {
        if step % 20 == 0 {
            println!(
                "meta {step:>4}  L_r {:.4}  L_s {:.4}  L_t {:.4}",
                l.l_r, l.l_s, l.l_t
            );
        }
    })?;
    println!("meta-training done after {} steps", r.losses.len());

    let target = Stage2Dataset::new(clips(&[2]), &p, &cfg, dt, &dev)?;
    let before = masked_reconstruction_error(&model, &target, 0, 10, 0)?;
    fine_tune(&model, &target, &cfg, &extractor, None, |_, _| {})?;
    let after = masked_reconstruction_error(&model, &target, 0, 10, 0)?;
    println!("unseen speaker, masked L1 at frame 10: {before:.4} -> {after:.4}");
    Ok(())
}
