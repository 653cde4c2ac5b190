//! SSIM, PSNR, perceptual distance and the temporal Fréchet distance on
//! synthetic videos with increasing amounts of damage.

use lipdub::media::{Image, VideoClip};
use lipdub::metrics::{perceptual_distance, psnr, ssim, temporal_extractor, temporal_fid};
use lipdub::nn::ConvStackExtractor;
use lipdub::synthetic::{synth_clip, SyntheticSpeaker};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noisy(img: &Image, sigma: f32, rng: &mut ChaCha8Rng) -> Image {
    let data = img
        .data
        .iter()
        .map(|v| (v + sigma * rng.gen_range(-1.0..1.0)).clamp(0.0, 1.0))
        .collect();
    Image::new(img.height, img.width, data).unwrap()
}

fn main() -> lipdub::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ex = ConvStackExtractor::default_rgb();
    let videos: Vec<VideoClip> = (0..4u64)
        .map(|s| {
            synth_clip(
                &SyntheticSpeaker::random(format!("s{s}"), s),
                12,
                Some(32),
                s,
            )
            .video
            .unwrap()
        })
        .collect();
    let frame = &videos[0].frames[0];
    println!("sigma    ssim    psnr  perceptual");
    for sigma in [0.0, 0.02, 0.05, 0.1, 0.2] {
        let d = noisy(frame, sigma, &mut rng);
        println!(
            "{sigma:<5} {:>7.4} {:>7.2} {:>11.5}",
            ssim(frame, &d)?,
            psnr(frame, &d)?,
            perceptual_distance(frame, &d, &ex)?
        );
    }

    // Shuffling frame order keeps appearance but breaks the motion.
    let shuffled: Vec<VideoClip> = videos
        .iter()
        .map(|v| {
            let mut f = v.frames.clone();
            f.shuffle(&mut rng);
            VideoClip::new(f).unwrap()
        })
        .collect();
    let tex = temporal_extractor(3);
    println!(
        "temporal FID, same set:     {:.4}",
        temporal_fid(&videos, &videos, &tex, 3, 1e-6)?
    );
    println!(
        "temporal FID, shuffled set: {:.4}",
        temporal_fid(&videos, &shuffled, &tex, 3, 1e-6)?
    );
    Ok(())
}
