//! Builds the conditioning composite for one frame: the lower face is masked
//! out and new mouth landmarks are drawn into the hole. Writes PNGs to a
//! directory given as the first argument (default `composite-demo`).

use lipdub::landmarks::{
    composite_output, make_composite, rasterize_frame, split_landmarks, LandmarkPartition,
};
use lipdub::synthetic::{face_landmarks, synth_clip, SyntheticSpeaker};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "composite-demo".into());
    std::fs::create_dir_all(&out)?;
    let p = LandmarkPartition::default();
    let sp = SyntheticSpeaker::random("demo", 1);
    let clip = synth_clip(&sp, 1, Some(128), 5);
    let frame = &clip.video.as_ref().unwrap().frames[0];
    let source = &clip.track.frames[0];

    // Pretend the audio asks for a wide-open mouth.
    let wide = face_landmarks(&sp, 0.9, clip.offsets[0]);
    let (_, lower) = split_landmarks(&wide, &p);
    let comp = make_composite(frame, source, &lower, &p, 0.1)?;
    println!(
        "mask rect (rows, cols): {:?}, area {} px",
        comp.mask.rect,
        comp.mask.area()
    );

    frame.save_png(format!("{out}/frame.png"))?;
    rasterize_frame(source, &p, 128, 128).save_png(format!("{out}/landmarks.png"))?;
    comp.image.save_png(format!("{out}/composite.png"))?;
    // A flat "generated" face pasted back through the mask.
    let pasted = composite_output(
        frame,
        &lipdub::media::Image::filled(128, 128, 0.8),
        &comp.mask,
    )?;
    pasted.save_png(format!("{out}/pasted.png"))?;
    println!("wrote {out}/{{frame,landmarks,composite,pasted}}.png");
    Ok(())
}
