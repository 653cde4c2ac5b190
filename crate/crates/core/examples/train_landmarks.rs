//! Overfits the audio-to-landmark generator on one synthetic clip and
//! reports the learned fusion weights.
//!
//! cargo run --release --example train_landmarks -- [steps]

use candle_core::{DType, Device};
use lipdub::landmarks::{nme, LandmarkFrame, LandmarkPartition};
use lipdub::media::extract_mel;
use lipdub::nn::ParamStore;
use lipdub::stage1::{predict_track, train_stage1, LandmarkGenModel, Stage1Clip, Stage1Dataset};
use lipdub::synthetic::{synth_clip, SyntheticSpeaker};
use lipdub::TrainConfig;

fn main() -> lipdub::Result<()> {
    let steps = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(200);
    let mut cfg = TrainConfig::default();
    cfg.steps_stage1 = steps;
    cfg.lr_stage1 = 1e-3;
    cfg.hidden_width = 64;
    cfg.mel_width = 16;
    cfg.batch_size = 8;
    let p = LandmarkPartition::default();
    let clip = synth_clip(&SyntheticSpeaker::random("demo", 0), 200, None, 1);
    let mel = extract_mel(&clip.audio)?;
    let data = Stage1Dataset::new(
        vec![Stage1Clip {
            id: "demo".into(),
            mel: mel.clone(),
            track: clip.track.clone(),
        }],
        p.clone(),
    )?;
    let model =
        LandmarkGenModel::from_config(&cfg, &p, &ParamStore::new(DType::F32, &Device::Cpu, 0))?;
    let report = train_stage1(&model, &data, &cfg, |step, loss| {
        if step % 50 == 0 {
            println!("step {step:>4}  L1 {loss:.5}");
        }
    })?;
    println!(
        "fusion weights (mel, pose, reference): {:?}",
        report.fusion_weights
    );

    let pred = predict_track(&model, &mel, &clip.track, &clip.track, &p)?;
    let lower = |f: &LandmarkFrame| LandmarkFrame {
        points: p.lower.iter().map(|&i| f.points[i]).collect(),
    };
    let pred: Vec<LandmarkFrame> = pred
        .into_iter()
        .map(|points| LandmarkFrame { points })
        .collect();
    let gt: Vec<LandmarkFrame> = clip.track.frames.iter().map(lower).collect();
    println!(
        "lower-face NME on the training clip: {:.4}",
        nme(&pred, &gt)?
    );
    Ok(())
}
