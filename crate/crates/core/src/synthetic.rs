//! Procedural toy corpus: cartoon faces whose mouth opening is driven by a
//! smooth random signal, landmark tracks in the 216-point schema, and audio
//! whose loudness follows the same signal. Used by the examples, tests and
//! the acceptance suite in place of real footage.

use std::f32::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::landmarks::{
    save_landmark_track, LandmarkFrame, LandmarkPartition, LandmarkTrack, NUM_POINTS,
};
use crate::media::audio::{save_audio, AudioTrack, DEFAULT_SAMPLE_RATE};
use crate::media::mel::{HOP_MS, ROWS_PER_VIDEO_FRAME, WINDOW_ROWS};
use crate::media::video::{Image, VideoClip};

pub const MAX_OPENING: f32 = 0.08;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpeaker {
    pub id: String,
    pub skin: [f32; 3],
    pub lips: [f32; 3],
    pub background: [f32; 3],
    pub center: [f32; 2],
    pub scale: f32,
    pub pitch_hz: f32,
}

impl SyntheticSpeaker {
    pub fn random(id: impl Into<String>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut col = |lo: f32, hi: f32| {
            [
                rng.gen_range(lo..hi),
                rng.gen_range(lo..hi),
                rng.gen_range(lo..hi),
            ]
        };
        let skin = col(0.45, 0.9);
        let lips = col(0.3, 0.7);
        let background = col(0.05, 0.4);
        Self {
            id: id.into(),
            skin,
            lips: [lips[0].max(0.5), lips[1] * 0.5, lips[2] * 0.5],
            background,
            center: [rng.gen_range(0.47..0.53), rng.gen_range(0.45..0.5)],
            scale: rng.gen_range(0.95..1.05),
            pitch_hz: rng.gen_range(180.0..320.0),
        }
    }
}

/// Smooth per-frame mouth openings in `[0, MAX_OPENING]`.
pub fn mouth_openings(n_frames: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let comps: Vec<(f32, f32)> = (0..3)
        .map(|_| (rng.gen_range(0.08..0.35), rng.gen_range(0.0..2.0 * PI)))
        .collect();
    (0..n_frames)
        .map(|t| {
            let v: f32 = comps
                .iter()
                .map(|(f, ph)| (f * t as f32 + ph).sin())
                .sum::<f32>()
                / 3.0;
            (0.5 + 0.5 * v).clamp(0.0, 1.0) * MAX_OPENING
        })
        .collect()
}

/// Small head drift so the pose landmarks vary over a clip.
pub fn head_offsets(n_frames: usize, seed: u64) -> Vec<[f32; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let (fx, fy) = (rng.gen_range(0.03..0.08), rng.gen_range(0.03..0.08));
    let (px, py) = (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI));
    (0..n_frames)
        .map(|t| {
            [
                0.01 * (fx * t as f32 + px).sin(),
                0.01 * (fy * t as f32 + py).sin(),
            ]
        })
        .collect()
}

struct FaceGeom {
    cx: f32,
    cy: f32,
    rx: f32,
    ry: f32,
    s: f32,
    mouth_cy: f32,
    open: f32,
}

fn geom(sp: &SyntheticSpeaker, opening: f32, offset: [f32; 2]) -> FaceGeom {
    let s = sp.scale;
    FaceGeom {
        cx: sp.center[0] + offset[0],
        cy: sp.center[1] + offset[1],
        rx: 0.3 * s,
        ry: 0.38 * s + 0.5 * opening,
        s,
        mouth_cy: sp.center[1] + offset[1] + 0.2 * s + 0.5 * opening,
        open: opening,
    }
}

fn arc(cx: f32, cy: f32, rx: f32, ry: f32, from_deg: f32, to_deg: f32, n: usize) -> Vec<[f32; 2]> {
    (0..n)
        .map(|i| {
            let a =
                (from_deg + (to_deg - from_deg) * i as f32 / (n - 1).max(1) as f32).to_radians();
            [cx + rx * a.cos(), cy + ry * a.sin()]
        })
        .collect()
}

fn ring(cx: f32, cy: f32, rx: f32, ry: f32, n: usize) -> Vec<[f32; 2]> {
    (0..n)
        .map(|i| {
            let a = 2.0 * PI * i as f32 / n as f32;
            [cx + rx * a.cos(), cy + ry * a.sin()]
        })
        .collect()
}

/// Landmarks for one frame, laid out per the default partition table.
pub fn face_landmarks(sp: &SyntheticSpeaker, opening: f32, offset: [f32; 2]) -> LandmarkFrame {
    let g = geom(sp, opening, offset);
    let s = g.s;
    let mut pts: Vec<[f32; 2]> = Vec::with_capacity(NUM_POINTS);
    // y grows downwards, so angles in (0°, 180°) lie below the centre
    pts.extend(arc(g.cx, g.cy, g.rx, g.ry, 205.0, 172.0, 10));
    pts.extend(arc(g.cx, g.cy, g.rx, g.ry, 168.0, 12.0, 40));
    pts.extend(arc(g.cx, g.cy, g.rx, g.ry, 8.0, -25.0, 10));
    let eye_y = g.cy - 0.08 * s;
    for side in [-1.0f32, 1.0] {
        pts.extend(arc(
            g.cx + side * 0.12 * s,
            eye_y - 0.06 * s,
            0.07 * s,
            0.025 * s,
            200.0,
            340.0,
            18,
        ));
    }
    pts.extend(
        arc(g.cx, g.cy - 0.06 * s, 0.0, 0.12 * s, -90.0, 90.0, 10)
            .iter()
            .map(|p| [p[0], p[1]]),
    );
    pts.extend(arc(
        g.cx,
        g.cy + 0.07 * s,
        0.05 * s,
        0.01 * s,
        180.0,
        0.0,
        14,
    ));
    for side in [-1.0f32, 1.0] {
        pts.extend(ring(g.cx + side * 0.12 * s, eye_y, 0.05 * s, 0.02 * s, 24));
    }
    pts.extend(ring(
        g.cx,
        g.mouth_cy,
        0.11 * s,
        0.03 * s + 0.5 * g.open,
        28,
    ));
    pts.extend(ring(g.cx, g.mouth_cy, 0.08 * s, 0.003 + 0.45 * g.open, 20));
    let pts = pts
        .into_iter()
        .map(|p| [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)])
        .collect();
    LandmarkFrame::new(pts).expect("216 synthetic points")
}

fn smooth_inside(d: f32, px: f32) -> f32 {
    // d <= 1 inside; soft edge about one pixel wide
    ((1.0 - d) / px + 0.5).clamp(0.0, 1.0)
}

fn blend(a: [f32; 3], b: [f32; 3], w: f32) -> [f32; 3] {
    [
        a[0] + (b[0] - a[0]) * w,
        a[1] + (b[1] - a[1]) * w,
        a[2] + (b[2] - a[2]) * w,
    ]
}

/// Renders a `size × size` frame.
pub fn render_frame(sp: &SyntheticSpeaker, opening: f32, offset: [f32; 2], size: usize) -> Image {
    let g = geom(sp, opening, offset);
    let s = g.s;
    let mut img = Image::filled(size, size, 0.0);
    let px = 1.0 / size as f32;
    let ell = |x: f32, y: f32, cx: f32, cy: f32, rx: f32, ry: f32| {
        (((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2)).sqrt()
    };
    for r in 0..size {
        for c in 0..size {
            let (x, y) = ((c as f32 + 0.5) * px, (r as f32 + 0.5) * px);
            let shade = 0.85 + 0.15 * y;
            let mut col = sp.background.map(|v| v * (0.8 + 0.4 * x));
            let d = ell(x, y, g.cx, g.cy, g.rx, g.ry);
            col = blend(col, sp.skin.map(|v| v * shade), smooth_inside(d, px / g.rx));
            for side in [-1.0f32, 1.0] {
                let d = ell(
                    x,
                    y,
                    g.cx + side * 0.12 * s,
                    g.cy - 0.08 * s,
                    0.05 * s,
                    0.02 * s,
                );
                col = blend(col, [0.1, 0.1, 0.15], smooth_inside(d, px / (0.02 * s)));
            }
            let d = ell(x, y, g.cx, g.cy + 0.07 * s, 0.05 * s, 0.012 * s);
            col = blend(
                col,
                sp.skin.map(|v| v * 0.7),
                smooth_inside(d, px / (0.012 * s)),
            );
            let lip_ry = 0.03 * s + 0.5 * g.open;
            let d = ell(x, y, g.cx, g.mouth_cy, 0.11 * s, lip_ry);
            col = blend(col, sp.lips, smooth_inside(d, px / lip_ry));
            let in_ry = 0.003 + 0.45 * g.open;
            let d = ell(x, y, g.cx, g.mouth_cy, 0.08 * s, in_ry);
            col = blend(
                col,
                [0.15, 0.05, 0.05],
                smooth_inside(d, px / in_ry.max(px)),
            );
            img.put(r, c, col);
        }
    }
    img
}

/// Tone at the speaker's pitch whose loudness follows the opening aligned
/// with each frame's mel window (rows `5t..5t+20`).
pub fn synth_audio(
    sp: &SyntheticSpeaker,
    openings: &[f32],
    sample_rate: u32,
    seed: u64,
) -> AudioTrack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5151);
    let frame_secs = ROWS_PER_VIDEO_FRAME as f64 * HOP_MS / 1000.0;
    let lead = WINDOW_ROWS as f64 * HOP_MS / 1000.0 / 2.0;
    let secs = openings.len() as f64 * frame_secs + 2.0 * lead + 0.05;
    let n = (secs * sample_rate as f64) as usize;
    let samples = (0..n)
        .map(|i| {
            let tau = i as f64 / sample_rate as f64;
            let pos = ((tau - lead) / frame_secs).clamp(0.0, (openings.len() - 1) as f64);
            let k = pos.floor() as usize;
            let frac = (pos - k as f64) as f32;
            let next = openings[(k + 1).min(openings.len() - 1)];
            let env = (openings[k] * (1.0 - frac) + next * frac) / MAX_OPENING;
            let phase = 2.0 * std::f64::consts::PI * sp.pitch_hz as f64 * tau;
            let tone = (phase.sin() + 0.5 * (2.0 * phase).sin()) as f32 / 1.5;
            0.8 * env * tone + rng.gen_range(-0.005..0.005)
        })
        .collect();
    AudioTrack::new(samples, sample_rate).expect("finite synthetic audio")
}

#[derive(Debug, Clone)]
pub struct SyntheticClip {
    pub speaker: SyntheticSpeaker,
    pub openings: Vec<f32>,
    pub offsets: Vec<[f32; 2]>,
    pub track: LandmarkTrack,
    pub audio: AudioTrack,
    pub video: Option<VideoClip>,
}

/// One clip of `n_frames`; frames are rendered when `image_size` is given.
pub fn synth_clip(
    sp: &SyntheticSpeaker,
    n_frames: usize,
    image_size: Option<usize>,
    seed: u64,
) -> SyntheticClip {
    let openings = mouth_openings(n_frames, seed);
    let offsets = head_offsets(n_frames, seed);
    let frames = openings
        .iter()
        .zip(&offsets)
        .map(|(&o, &d)| face_landmarks(sp, o, d))
        .collect();
    let video = image_size.map(|size| {
        VideoClip::new(
            openings
                .iter()
                .zip(&offsets)
                .map(|(&o, &d)| render_frame(sp, o, d, size))
                .collect(),
        )
        .expect("uniform frames")
    });
    SyntheticClip {
        speaker: sp.clone(),
        audio: synth_audio(sp, &openings, DEFAULT_SAMPLE_RATE, seed),
        track: LandmarkTrack::new(sp.id.clone(), frames),
        openings,
        offsets,
        video,
    }
}

/// Writes the raw-clip layout `prepare` consumes: `landmarks.json`, plus
/// `audio.wav` and/or `frames/` when requested and available.
pub fn write_clip_dir(
    clip: &SyntheticClip,
    dir: impl AsRef<Path>,
    audio: bool,
    frames: bool,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_landmark_track(&clip.track, dir.join("landmarks.json"))?;
    if audio {
        save_audio(&clip.audio, dir.join("audio.wav"))?;
    }
    if frames {
        let video = clip
            .video
            .as_ref()
            .ok_or_else(|| Error::Invalid("clip was synthesized without frames".into()))?;
        video.save_frames(dir.join("frames"))?;
    }
    Ok(())
}

/// Sanity check that the synthetic layout agrees with a partition table.
pub fn mouth_is_lower(partition: &LandmarkPartition) -> bool {
    let sp = SyntheticSpeaker::random("x", 0);
    let f = face_landmarks(&sp, MAX_OPENING, [0.0, 0.0]);
    let nose = partition
        .nose_base
        .iter()
        .map(|&i| f.points[i][1])
        .fold(f32::MIN, f32::max);
    partition.lips.iter().all(|&i| f.points[i][1] > nose)
}
