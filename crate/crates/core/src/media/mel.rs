//! Log-mel front end: 40 ms Hann windows every 10 ms, 80 HTK-mel bands,
//! natural log of band power floored at 1e-10.

use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::audio::AudioTrack;
use crate::error::{Error, Result};

pub const MEL_BANDS: usize = 80;
pub const WIN_MS: f64 = 40.0;
pub const HOP_MS: f64 = 10.0;
/// Mel rows per video frame window (200 ms).
pub const WINDOW_ROWS: usize = 20;
/// Mel rows advanced per video frame (25 fps against a 10 ms hop).
pub const ROWS_PER_VIDEO_FRAME: usize = 5;
const LOG_FLOOR: f64 = 1e-10;

/// Time-major `[n_frames × 80]` log-mel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    data: Vec<f32>,
    n_frames: usize,
}

impl MelSpectrogram {
    pub fn from_rows(data: Vec<f32>, n_frames: usize) -> Result<Self> {
        if n_frames == 0 || data.len() != n_frames * MEL_BANDS {
            return Err(Error::shape(
                format!("[n_frames>=1 x {MEL_BANDS}]"),
                format!("{} values for {n_frames} frames", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite mel entry".into()));
        }
        Ok(Self { data, n_frames })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * MEL_BANDS..(i + 1) * MEL_BANDS]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn hop_ms(&self) -> f64 {
        HOP_MS
    }

    pub fn win_ms(&self) -> f64 {
        WIN_MS
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let t = candle_core::Tensor::from_slice(
            &self.data,
            (self.n_frames, MEL_BANDS),
            &candle_core::Device::Cpu,
        )?;
        t.save_safetensors("mel", path.as_ref())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let map = candle_core::safetensors::load(path, &candle_core::Device::Cpu)?;
        let t = map
            .get("mel")
            .ok_or_else(|| Error::format(path, "missing `mel` tensor"))?;
        let (n, bands) = t.dims2()?;
        if bands != MEL_BANDS {
            return Err(Error::format(
                path,
                format!("expected {MEL_BANDS} bands, got {bands}"),
            ));
        }
        Self::from_rows(t.flatten_all()?.to_vec1::<f32>()?, n)
    }
}

/// Window and hop lengths in samples for a sample rate.
pub fn frame_geometry(sample_rate: u32) -> (usize, usize) {
    let win = (WIN_MS / 1000.0 * sample_rate as f64).round() as usize;
    let hop = (HOP_MS / 1000.0 * sample_rate as f64).round() as usize;
    (win.max(1), hop.max(1))
}

/// Number of mel frames produced for `len` samples.
pub fn mel_frame_count(len: usize, sample_rate: u32) -> usize {
    let (win, hop) = frame_geometry(sample_rate);
    if len < win {
        0
    } else {
        1 + (len - win) / hop
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-mel filters over `n_fft / 2 + 1` bins, `[MEL_BANDS][bins]`.
pub fn mel_filterbank(sample_rate: u32, n_fft: usize) -> Vec<Vec<f64>> {
    let bins = n_fft / 2 + 1;
    let fmax = sample_rate as f64 / 2.0;
    let (mlo, mhi) = (hz_to_mel(0.0), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..MEL_BANDS + 2)
        .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (MEL_BANDS + 1) as f64))
        .collect();
    let bin_hz = |k: usize| k as f64 * sample_rate as f64 / n_fft as f64;
    (0..MEL_BANDS)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = bin_hz(k);
                    let up = (f - lo) / (mid - lo);
                    let down = (hi - f) / (hi - mid);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

pub fn extract_mel(audio: &AudioTrack) -> Result<MelSpectrogram> {
    let (win, hop) = frame_geometry(audio.sample_rate);
    let n_frames = mel_frame_count(audio.samples.len(), audio.sample_rate);
    if n_frames == 0 {
        return Err(Error::Invalid(format!(
            "audio has {} samples, shorter than one {win}-sample window",
            audio.samples.len()
        )));
    }
    let n_fft = win.next_power_of_two();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let hann: Vec<f64> = (0..win)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win as f64).cos())
        .collect();
    let filters = mel_filterbank(audio.sample_rate, n_fft);
    let bins = n_fft / 2 + 1;

    let mut data = Vec::with_capacity(n_frames * MEL_BANDS);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0; bins];
    for f in 0..n_frames {
        let start = f * hop;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (i, (b, w)) in buf.iter_mut().zip(&hann).enumerate() {
            b.re = audio.samples[start + i] as f64 * w;
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for filt in &filters {
            let e: f64 = filt.iter().zip(&power).map(|(a, b)| a * b).sum();
            data.push(e.max(LOG_FLOOR).ln() as f32);
        }
    }
    MelSpectrogram::from_rows(data, n_frames)
}

/// `[20 × 80]` window of rows `[5t, 5t + 20)`, zero padded past the end.
pub fn mel_window_for_frame(mel: &MelSpectrogram, t: usize) -> Vec<f32> {
    let mut out = vec![0.0; WINDOW_ROWS * MEL_BANDS];
    let start = t.saturating_mul(ROWS_PER_VIDEO_FRAME);
    for r in 0..WINDOW_ROWS {
        let src = start.saturating_add(r);
        if src >= mel.n_frames {
            break;
        }
        out[r * MEL_BANDS..(r + 1) * MEL_BANDS].copy_from_slice(mel.row(src));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn noise(len: usize, seed: u64) -> AudioTrack {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        AudioTrack::new((0..len).map(|_| rng.gen_range(-0.5..0.5)).collect(), 16_000).unwrap()
    }

    #[test]
    fn geometry_at_16k() {
        assert_eq!(frame_geometry(16_000), (640, 160));
    }

    #[test]
    fn single_window() {
        let mel = extract_mel(&noise(640, 1)).unwrap();
        assert_eq!(mel.n_frames(), 1);
    }

    #[test]
    fn one_second_has_97_frames() {
        // 1 + floor((16000 - 640) / 160)
        assert_eq!(extract_mel(&noise(16_000, 2)).unwrap().n_frames(), 97);
    }

    #[test]
    fn too_short_is_error() {
        assert!(extract_mel(&noise(639, 3)).is_err());
    }

    #[test]
    fn silence_hits_log_floor() {
        let mel = extract_mel(&AudioTrack::new(vec![0.0; 1000], 16_000).unwrap()).unwrap();
        let floor = (1e-10f64).ln() as f32;
        assert!(mel.as_slice().iter().all(|&v| v == floor));
    }

    #[test]
    fn tone_energy_lands_in_matching_band() {
        let sr = 16_000u32;
        let samples: Vec<f32> = (0..4000)
            .map(|n| {
                (2.0 * std::f64::consts::PI * 1000.0 * n as f64 / sr as f64).sin() as f32 * 0.5
            })
            .collect();
        let mel = extract_mel(&AudioTrack::new(samples, sr).unwrap()).unwrap();
        let row = mel.row(3);
        let argmax = (0..MEL_BANDS)
            .max_by(|&a, &b| row[a].total_cmp(&row[b]))
            .unwrap();
        let filters = mel_filterbank(sr, 1024);
        let bin = (1000.0 * 1024.0 / sr as f64).round() as usize;
        let best = (0..MEL_BANDS)
            .max_by(|&a, &b| filters[a][bin].total_cmp(&filters[b][bin]))
            .unwrap();
        assert!(
            argmax.abs_diff(best) <= 1,
            "argmax {argmax}, expected near {best}"
        );
    }

    #[test]
    fn windows_index_rows() {
        let data: Vec<f32> = (0..40 * MEL_BANDS)
            .map(|i| (i / MEL_BANDS) as f32)
            .collect();
        let mel = MelSpectrogram::from_rows(data, 40).unwrap();
        let w0 = mel_window_for_frame(&mel, 0);
        let w2 = mel_window_for_frame(&mel, 2);
        for r in 0..WINDOW_ROWS {
            assert_eq!(w0[r * MEL_BANDS], r as f32);
            assert_eq!(w2[r * MEL_BANDS + 7], (10 + r) as f32);
        }
        let w7 = mel_window_for_frame(&mel, 7);
        assert_eq!(w7[4 * MEL_BANDS], 39.0);
        assert!(w7[5 * MEL_BANDS..].iter().all(|&v| v == 0.0));
        assert!(mel_window_for_frame(&mel, 8).iter().all(|&v| v == 0.0));
        assert_eq!(
            mel_window_for_frame(&mel, usize::MAX).len(),
            WINDOW_ROWS * MEL_BANDS
        );
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mel = extract_mel(&noise(3000, 4)).unwrap();
        let p = dir.path().join("m.safetensors");
        mel.save(&p).unwrap();
        assert_eq!(MelSpectrogram::load(&p).unwrap(), mel);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn frame_count_law(len in 640usize..6000) {
            let mel = extract_mel(&noise(len, len as u64)).unwrap();
            prop_assert_eq!(mel.n_frames(), 1 + (len - 640) / 160);
        }

        #[test]
        fn deterministic(len in 640usize..3000) {
            let a = noise(len, 7);
            prop_assert_eq!(extract_mel(&a).unwrap(), extract_mel(&a).unwrap());
        }

        #[test]
        fn window_shape(t in 0usize..10_000) {
            let mel = MelSpectrogram::from_rows(vec![1.0; 30 * MEL_BANDS], 30).unwrap();
            prop_assert_eq!(mel_window_for_frame(&mel, t).len(), WINDOW_ROWS * MEL_BANDS);
        }
    }
}
