//! The whole pipeline on synthetic data, through the same functions the CLI
//! uses: prepare, train both stages, fine-tune, dub, transfer and evaluate.
//! Everything lands in the directory given as the first argument (default
//! `dub-demo`).

use std::path::{Path, PathBuf};

use lipdub::landmarks::LandmarkPartition;
use lipdub::metrics::EvalMode;
use lipdub::pipeline::{self, ConfigSource, DubPaths};
use lipdub::synthetic::{synth_clip, write_clip_dir, SyntheticSpeaker};
use lipdub::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "dub-demo".into()));
    let p = LandmarkPartition::default();
    let cfg = ConfigSource {
        file: None,
        overrides: [
            "image_size=32",
            "unet_depth=3",
            "base_width=4",
            "disc_width=4",
            "embed_dim=8",
            "batch_stage2=1",
            "steps_stage1=30",
            "steps_stage2=20",
            "finetune_steps=20",
        ]
        .map(String::from)
        .to_vec(),
    }
    .resolve(TrainConfig::default())?;

    // Two training speakers with both modalities, and one target speaker.
    for (s, sub) in [(0u64, "train"), (1, "train"), (2, "target")] {
        let sp = SyntheticSpeaker::random(format!("spk{s}"), s);
        write_clip_dir(
            &synth_clip(&sp, 24, Some(32), s),
            root.join(sub).join(format!("clip{s}")),
            true,
            true,
        )?;
    }
    let cache = pipeline::cache_dir(&root);
    let manifest = pipeline::prepare(&root.join("train"), &root.join("train.json"), &cache)?;
    println!("{}", manifest.modality_summary());

    let s1 = pipeline::cmd_train_stage1(&manifest, &cfg, &p, &root.join("stage1"))?;
    let s2 = pipeline::cmd_train_stage2(&manifest, &cfg, &p, None, &root.join("stage2"))?;
    let ft = pipeline::cmd_finetune(
        &s2.checkpoint,
        &root.join("target/clip2"),
        &ConfigSource::default(),
        &p,
        None,
        &root.join("finetune"),
    )?;
    println!(
        "checkpoints: {}, {}, {}",
        s1.checkpoint.display(),
        s2.checkpoint.display(),
        ft.checkpoint.display()
    );

    let clip = root.join("target/clip2");
    let paths = |out: &str| DubPaths {
        frames: clip.join("frames"),
        audio: clip.join("audio.wav"),
        landmarks: clip.join("landmarks.json"),
        stage1: s1.checkpoint.clone(),
        stage2: ft.checkpoint.clone(),
        reference_landmarks: None,
        out_dir: root.join(out),
        cache: Some(cache.clone()),
    };
    let dub = pipeline::cmd_dub(&paths("dubbed"), p.clone(), 0)?;
    println!("dubbed {} frames: {:?}", dub.frames.len(), dub.timing);
    let other = root.join("train/clip0/frames/000000.png");
    pipeline::cmd_transfer(&paths("transferred"), p, &other)?;

    // Score both outputs against the original footage.
    let run = root.join("eval");
    for out in ["dubbed", "transferred"] {
        copy_dir(&root.join(out), &run.join("generated").join(out))?;
        copy_dir(&clip, &run.join("gt").join(out))?;
    }
    let report = pipeline::cmd_eval(&run, EvalMode::Paired, &cfg)?;
    print!("{}", report.to_csv());
    Ok(())
}

fn copy_dir(from: &Path, to: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(to)?;
    for entry in std::fs::read_dir(from)? {
        let src = entry?.path();
        let dst = to.join(src.file_name().unwrap());
        if src.is_dir() {
            copy_dir(&src, &dst)?;
        } else {
            std::fs::copy(&src, &dst)?;
        }
    }
    Ok(())
}
