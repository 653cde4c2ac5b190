//! Log-mel features from a synthetic speech track and the per-frame window
//! the landmark generator sees.
//!
//! cargo run --example mel_features

use lipdub::media::{extract_mel, mel_window_for_frame};
use lipdub::synthetic::{synth_clip, SyntheticSpeaker};

fn main() -> lipdub::Result<()> {
    let clip = synth_clip(&SyntheticSpeaker::random("demo", 7), 50, None, 3);
    let mel = extract_mel(&clip.audio)?;
    println!(
        "{:.2}s of audio at {} Hz -> {} mel frames (hop {} ms, window {} ms)",
        clip.audio.duration_secs(),
        clip.audio.sample_rate,
        mel.n_frames(),
        mel.hop_ms(),
        mel.win_ms()
    );
    for t in [0, 25, 49] {
        let w = mel_window_for_frame(&mel, t);
        let energy = w.iter().sum::<f32>() / w.len() as f32;
        println!(
            "video frame {t:>2}: window of {} values, mean log energy {energy:.3}",
            w.len()
        );
    }
    Ok(())
}
