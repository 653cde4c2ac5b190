//! Stage-1 training: L1 regression of lower-face landmarks from audio,
//! pose landmarks and a reference landmark set. Needs no pixels.

use std::io::Write;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{l1_landmark_loss, LandmarkGenModel};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::landmarks::{split_landmarks, LandmarkPartition, LandmarkTrack};
use crate::media::mel::{mel_window_for_frame, MelSpectrogram, MEL_BANDS, WINDOW_ROWS};
use crate::nn::scalar;

#[derive(Debug, Clone)]
pub struct Stage1Clip {
    pub id: String,
    pub mel: MelSpectrogram,
    pub track: LandmarkTrack,
}

#[derive(Debug, Clone)]
pub struct Stage1Dataset {
    pub clips: Vec<Stage1Clip>,
    pub partition: LandmarkPartition,
}

/// Model-ready tensors for one batch.
#[derive(Debug, Clone)]
pub struct Stage1Batch {
    /// `[N, T, 20, 80]`
    pub mel: Tensor,
    /// `[N, T, n_upper * 2]`
    pub upper: Tensor,
    /// `[N, K, 432]`
    pub reference: Tensor,
    /// `[N, T, n_lower, 2]`
    pub target: Tensor,
}

/// Which frames make up one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleIndex {
    pub clip: usize,
    pub start: usize,
    pub len: usize,
    pub reference: Vec<usize>,
}

impl Stage1Dataset {
    pub fn new(clips: Vec<Stage1Clip>, partition: LandmarkPartition) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::NoEligible("stage-1 dataset is empty".into()));
        }
        if let Some(c) = clips.iter().find(|c| c.track.is_empty()) {
            return Err(Error::Invalid(format!(
                "clip `{}` has no landmark frames",
                c.id
            )));
        }
        Ok(Self { clips, partition })
    }

    pub fn total_frames(&self) -> usize {
        self.clips.iter().map(|c| c.track.len()).sum()
    }

    /// Window length used for every sample: `seq_len` capped by the
    /// shortest clip.
    pub fn window_len(&self, cfg: &TrainConfig) -> usize {
        let shortest = self.clips.iter().map(|c| c.track.len()).min().unwrap_or(1);
        cfg.seq_len.min(shortest).max(1)
    }

    /// Draws a window and reference frames (taken outside the window when
    /// the clip allows it).
    pub fn sample_index(&self, rng: &mut impl Rng, cfg: &TrainConfig) -> SampleIndex {
        let clip = rng.gen_range(0..self.clips.len());
        let n = self.clips[clip].track.len();
        let len = self.window_len(cfg);
        let start = rng.gen_range(0..=n - len);
        let outside: Vec<usize> = (0..n).filter(|&i| i < start || i >= start + len).collect();
        let pool = if outside.is_empty() {
            (0..n).collect()
        } else {
            outside
        };
        let k = cfg.ref_samples.min(pool.len());
        let mut reference: Vec<usize> = sample(rng, pool.len(), k)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        reference.sort_unstable();
        SampleIndex {
            clip,
            start,
            len,
            reference,
        }
    }

    pub fn make_batch(
        &self,
        samples: &[SampleIndex],
        dtype: DType,
        device: &Device,
    ) -> Result<Stage1Batch> {
        let n = samples.len();
        let t = samples[0].len;
        let k = samples[0].reference.len();
        if samples.iter().any(|s| s.len != t || s.reference.len() != k) {
            return Err(Error::Invalid("ragged stage-1 batch".into()));
        }
        let p = &self.partition;
        let (mut mel, mut upper, mut reference, mut target): (
            Vec<f32>,
            Vec<f32>,
            Vec<f32>,
            Vec<f32>,
        ) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for s in samples {
            let clip = &self.clips[s.clip];
            for f in s.start..s.start + s.len {
                mel.extend(mel_window_for_frame(&clip.mel, f));
                let (u, l) = split_landmarks(&clip.track.frames[f], p);
                upper.extend(u.iter().flatten());
                target.extend(l.iter().flatten());
            }
            for &r in &s.reference {
                reference.extend(clip.track.frames[r].points.iter().flatten());
            }
        }
        let to = |v: Vec<f32>, shape: &[usize]| -> Result<Tensor> {
            Ok(Tensor::from_vec(v, shape, device)?.to_dtype(dtype)?)
        };
        Ok(Stage1Batch {
            mel: to(mel, &[n, t, WINDOW_ROWS, MEL_BANDS])?,
            upper: to(upper, &[n, t, p.upper.len() * 2])?,
            reference: to(reference, &[n, k, crate::landmarks::NUM_POINTS * 2])?,
            target: to(target, &[n, t, p.lower.len(), 2])?,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct Stage1Report {
    pub losses: Vec<f64>,
    /// Largest `|ΣW − 1|` seen after any step.
    pub max_simplex_error: f64,
    pub fusion_weights: [f64; 3],
    pub clips_used: Vec<String>,
}

pub fn stage1_optimizer(model: &LandmarkGenModel, cfg: &TrainConfig) -> Result<AdamW> {
    let params = ParamsAdamW {
        lr: cfg.lr_stage1,
        weight_decay: 0.0,
        ..Default::default()
    };
    Ok(AdamW::new(model.store().vars(), params)?)
}

/// Runs `cfg.steps_stage1` optimizer steps. `on_step(step, loss)` is called
/// after each step.
pub fn train_stage1(
    model: &LandmarkGenModel,
    data: &Stage1Dataset,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Stage1Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = stage1_optimizer(model, cfg)?;
    let mut report = Stage1Report {
        clips_used: data.clips.iter().map(|c| c.id.clone()).collect(),
        ..Default::default()
    };
    for step in 0..cfg.steps_stage1 {
        let idx: Vec<SampleIndex> = (0..cfg.batch_size)
            .map(|_| data.sample_index(&mut rng, cfg))
            .collect();
        let batch = data.make_batch(&idx, model.dtype(), model.device())?;
        let pred = model.forward(&batch.mel, &batch.upper, &batch.reference)?;
        let loss = l1_landmark_loss(&pred, &batch.target)?;
        let value = scalar(&loss)?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "stage-1 loss is {value} at step {step}"
            )));
        }
        opt.backward_step(&loss)?;
        let w = model.fusion_weights_vec()?;
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "fusion weights non-finite at step {step}"
            )));
        }
        report.max_simplex_error = report
            .max_simplex_error
            .max((w.iter().sum::<f64>() - 1.0).abs());
        report.losses.push(value);
        on_step(step, value);
    }
    report.fusion_weights = model.fusion_weights_vec()?;
    Ok(report)
}

/// Predicts lower landmarks for every frame of a clip in one sequence.
/// `reference` holds the reference frames (all 216 points each).
pub fn predict_track(
    model: &LandmarkGenModel,
    mel: &MelSpectrogram,
    track: &LandmarkTrack,
    reference: &LandmarkTrack,
    partition: &LandmarkPartition,
) -> Result<Vec<Vec<crate::landmarks::Point>>> {
    let t = track.len();
    if t == 0 {
        return Ok(Vec::new());
    }
    if reference.is_empty() {
        return Err(Error::Invalid("reference track is empty".into()));
    }
    let (dt, dev) = (model.dtype(), model.device());
    let mut mels = Vec::with_capacity(t * WINDOW_ROWS * MEL_BANDS);
    let mut upper: Vec<f32> = Vec::new();
    for (f, frame) in track.frames.iter().enumerate() {
        mels.extend(mel_window_for_frame(mel, f));
        upper.extend(split_landmarks(frame, partition).0.iter().flatten());
    }
    let refs: Vec<f32> = reference
        .frames
        .iter()
        .flat_map(|f| f.points.iter().flatten().copied())
        .collect();
    let mel_t = Tensor::from_vec(mels, (1, t, WINDOW_ROWS, MEL_BANDS), dev)?.to_dtype(dt)?;
    let up_t = Tensor::from_vec(upper, (1, t, partition.upper.len() * 2), dev)?.to_dtype(dt)?;
    let ref_t = Tensor::from_vec(
        refs,
        (1, reference.len(), crate::landmarks::NUM_POINTS * 2),
        dev,
    )?
    .to_dtype(dt)?;
    let out = model
        .forward(&mel_t, &up_t, &ref_t)?
        .squeeze(0)?
        .to_dtype(DType::F32)?;
    let v: Vec<Vec<Vec<f32>>> = out.to_vec3()?;
    Ok(v.into_iter()
        .map(|frame| frame.into_iter().map(|p| [p[0], p[1]]).collect())
        .collect())
}

/// Writes `step,<columns...>` rows.
pub fn write_loss_csv(path: impl AsRef<Path>, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = format!("step,{}\n", columns.join(","));
    for (i, r) in rows.iter().enumerate() {
        let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        text.push_str(&format!("{i},{}\n", cells.join(",")));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
