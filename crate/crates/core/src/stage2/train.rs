//! Stage-2 training: meta-training over many speakers and single-speaker
//! fine-tuning with the embedder frozen. Needs no audio.

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{
    feature_matching, lsgan_d_loss, lsgan_g_loss, mask_weights, masked_l1, total_loss,
    weighted_perceptual_loss,
};
use super::model::TranslationModel;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::landmarks::{make_composite, split_landmarks, LandmarkPartition, LandmarkTrack};
use crate::media::video::Image;
use crate::nn::{scalar, FeatureExtractor, ParamStore};

#[derive(Debug, Clone)]
pub struct Stage2Clip {
    pub id: String,
    pub speaker_id: String,
    pub frames: Vec<Image>,
    pub track: LandmarkTrack,
}

/// Frames, ground-truth composites and masks as `[T, C, H, W]` tensors.
#[derive(Debug, Clone)]
pub struct PreparedClip {
    pub id: String,
    pub speaker_id: String,
    pub frames: Tensor,
    pub composites: Tensor,
    pub masks: Tensor,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct Stage2Dataset {
    pub clips: Vec<PreparedClip>,
}

/// Composites built from each frame's own landmarks, plus 0/1 masks.
pub fn clip_composites(
    frames: &[Image],
    track: &LandmarkTrack,
    partition: &LandmarkPartition,
    margin: f64,
) -> Result<(Vec<Image>, Vec<Vec<f32>>)> {
    if frames.len() != track.len() {
        return Err(Error::Invalid(format!(
            "{} frames but {} landmark frames",
            frames.len(),
            track.len()
        )));
    }
    let mut comps = Vec::with_capacity(frames.len());
    let mut masks = Vec::with_capacity(frames.len());
    for (img, lm) in frames.iter().zip(&track.frames) {
        let lower = split_landmarks(lm, partition).1;
        let c = make_composite(img, lm, &lower, partition, margin)?;
        masks.push(c.mask.values());
        comps.push(c.image);
    }
    Ok((comps, masks))
}

fn stack_images(images: &[Image], dtype: DType, device: &Device) -> Result<Tensor> {
    let ts = images
        .iter()
        .map(|i| i.to_tensor(dtype, device))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::stack(&ts, 0)?)
}

impl Stage2Dataset {
    pub fn new(
        clips: Vec<Stage2Clip>,
        partition: &LandmarkPartition,
        cfg: &TrainConfig,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::NoEligible("stage-2 dataset is empty".into()));
        }
        let size = cfg.image_size;
        let mut out = Vec::with_capacity(clips.len());
        for c in clips {
            if c.frames.len() < cfg.temporal_disc_window {
                return Err(Error::Invalid(format!(
                    "clip `{}` has {} frames; the temporal window needs {}",
                    c.id,
                    c.frames.len(),
                    cfg.temporal_disc_window
                )));
            }
            if let Some(f) = c
                .frames
                .iter()
                .find(|f| f.height != size || f.width != size)
            {
                return Err(Error::shape(
                    format!("{size}x{size} frames"),
                    format!("{}x{}", f.height, f.width),
                ));
            }
            let (comps, masks) = clip_composites(&c.frames, &c.track, partition, cfg.mask_margin)?;
            let t = c.frames.len();
            let masks: Vec<f32> = masks.into_iter().flatten().collect();
            out.push(PreparedClip {
                frames: stack_images(&c.frames, dtype, device)?,
                composites: stack_images(&comps, dtype, device)?,
                masks: Tensor::from_vec(masks, (t, 1, size, size), device)?.to_dtype(dtype)?,
                len: t,
                id: c.id,
                speaker_id: c.speaker_id,
            });
        }
        Ok(Self { clips: out })
    }

    pub fn num_speakers(&self) -> usize {
        let mut ids: Vec<&str> = self.clips.iter().map(|c| c.speaker_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

/// A window of `T` consecutive target frames and one reference frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSample {
    pub clip: usize,
    pub start: usize,
    pub reference: usize,
}

/// Model inputs for `B` windows of `T` frames, flattened to `B·T` rows.
pub struct Stage2Batch {
    pub volumes: Tensor,
    pub references: Tensor,
    pub frames: Tensor,
    pub composites: Tensor,
    pub masks: Tensor,
    pub windows: usize,
    pub window_len: usize,
}

fn u32_index(v: &[usize], device: &Device) -> Result<Tensor> {
    let v: Vec<u32> = v.iter().map(|&i| i as u32).collect();
    Ok(Tensor::from_vec(v.clone(), v.len(), device)?)
}

/// Volume `[(2p+1)·3, H, W]` for frame `t` of a prepared clip.
pub fn volume_at(clip: &PreparedClip, t: usize, half_window: usize) -> Result<Tensor> {
    let last = clip.len as i64 - 1;
    let idx: Vec<usize> = (-(half_window as i64)..=half_window as i64)
        .map(|d| (t as i64 + d).clamp(0, last) as usize)
        .collect();
    let v = clip
        .composites
        .index_select(&u32_index(&idx, clip.composites.device())?, 0)?;
    let (n, c, h, w) = v.dims4()?;
    Ok(v.reshape((n * c, h, w))?)
}

impl Stage2Dataset {
    pub fn sample(&self, rng: &mut impl Rng, window: usize) -> WindowSample {
        let clip = rng.gen_range(0..self.clips.len());
        let n = self.clips[clip].len;
        WindowSample {
            clip,
            start: rng.gen_range(0..=n - window),
            reference: rng.gen_range(0..n),
        }
    }

    pub fn make_batch(
        &self,
        samples: &[WindowSample],
        window: usize,
        half_window: usize,
    ) -> Result<Stage2Batch> {
        let (mut vols, mut refs, mut frames, mut comps, mut masks) =
            (vec![], vec![], vec![], vec![], vec![]);
        for s in samples {
            let c = &self.clips[s.clip];
            let dev = c.frames.device();
            for t in s.start..s.start + window {
                vols.push(volume_at(c, t, half_window)?);
            }
            let idx = u32_index(&(s.start..s.start + window).collect::<Vec<_>>(), dev)?;
            frames.push(c.frames.index_select(&idx, 0)?);
            comps.push(c.composites.index_select(&idx, 0)?);
            masks.push(c.masks.index_select(&idx, 0)?);
            refs.push(c.frames.narrow(0, s.reference, 1)?);
        }
        Ok(Stage2Batch {
            volumes: Tensor::stack(&vols, 0)?,
            references: Tensor::cat(&refs, 0)?,
            frames: Tensor::cat(&frames, 0)?,
            composites: Tensor::cat(&comps, 0)?,
            masks: Tensor::cat(&masks, 0)?,
            windows: samples.len(),
            window_len: window,
        })
    }
}

/// One row of the stage-2 loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stage2Losses {
    pub l_r: f64,
    pub l_s: f64,
    pub l_t: f64,
    pub l_v: f64,
    pub d_s: f64,
    pub d_t: f64,
}

impl Stage2Losses {
    pub const COLUMNS: [&'static str; 6] = ["l_r", "l_s", "l_t", "l_v", "d_s", "d_t"];

    pub fn row(&self) -> Vec<f64> {
        vec![self.l_r, self.l_s, self.l_t, self.l_v, self.d_s, self.d_t]
    }
}

#[derive(Debug, Clone, Default)]
pub struct Stage2Report {
    pub losses: Vec<Stage2Losses>,
    pub generator_steps: usize,
    pub discriminator_steps: usize,
    pub embedder_checksum_before: String,
    pub embedder_checksum_after: String,
    /// Held-out reconstruction loss before and after (fine-tuning only).
    pub held_out_before: Option<f64>,
    pub held_out_after: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage2Mode {
    /// All four networks train.
    Meta,
    /// The embedder is frozen.
    FineTune,
}

fn adam(vars: Vec<candle_core::Var>, lr: f64) -> Result<AdamW> {
    let params = ParamsAdamW {
        lr,
        beta1: 0.5,
        beta2: 0.999,
        weight_decay: 0.0,
        ..Default::default()
    };
    Ok(AdamW::new(vars, params)?)
}

fn finite(v: f64, what: &str, step: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("{what} is {v} at step {step}")))
    }
}

/// Generator output for every row of a batch.
pub fn generate_batch(model: &TranslationModel, batch: &Stage2Batch) -> Result<Tensor> {
    let e = model.embedder.forward(&batch.references)?;
    let rep: Vec<usize> = (0..batch.windows)
        .flat_map(|b| std::iter::repeat(b).take(batch.window_len))
        .collect();
    let e = e.index_select(&u32_index(&rep, e.device())?, 0)?;
    model.generator.forward(&batch.volumes, &e)
}

/// Mask-weighted perceptual reconstruction loss of a batch.
pub fn reconstruction_loss(
    model: &TranslationModel,
    batch: &Stage2Batch,
    extractor: &dyn FeatureExtractor,
    cfg: &TrainConfig,
) -> Result<f64> {
    let fake = generate_batch(model, batch)?;
    let w = mask_weights(&batch.masks, cfg.mask_weight)?;
    scalar(&weighted_perceptual_loss(
        &fake,
        &batch.frames,
        extractor,
        Some(&w),
    )?)
}

/// Mean absolute pixel error inside the mask when reconstructing frame `t`
/// of a clip with frame `reference` as the appearance source.
pub fn masked_reconstruction_error(
    model: &TranslationModel,
    data: &Stage2Dataset,
    clip: usize,
    t: usize,
    reference: usize,
) -> Result<f64> {
    let c = &data.clips[clip];
    let v = volume_at(c, t, model.half_window)?.unsqueeze(0)?;
    let e = model.embedder.forward(&c.frames.narrow(0, reference, 1)?)?;
    let fake = model.generator.forward(&v, &e)?;
    masked_l1(&fake, &c.frames.narrow(0, t, 1)?, &c.masks.narrow(0, t, 1)?)
}

/// Runs `steps` alternating discriminator / generator updates.
pub fn train_stage2(
    model: &TranslationModel,
    data: &Stage2Dataset,
    cfg: &TrainConfig,
    steps: usize,
    mode: Stage2Mode,
    extractor: &dyn FeatureExtractor,
    mut on_step: impl FnMut(usize, &Stage2Losses),
) -> Result<Stage2Report> {
    let mut g_vars = model.generator_store().vars();
    if mode == Stage2Mode::Meta {
        g_vars.extend(model.embedder_store().vars());
    }
    let d_vars: Vec<_> = model
        .discriminator_stores()
        .iter()
        .flat_map(ParamStore::vars)
        .collect();
    let mut opt_g = adam(g_vars, cfg.lr_g)?;
    let mut opt_d = adam(d_vars, cfg.lr_d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let window = model.temporal_window;
    let mut report = Stage2Report {
        embedder_checksum_before: model.embedder_store().checksum()?,
        ..Default::default()
    };
    for step in 0..steps {
        let samples: Vec<WindowSample> = (0..cfg.batch_stage2)
            .map(|_| data.sample(&mut rng, window))
            .collect();
        let batch = data.make_batch(&samples, window, model.half_window)?;
        let fake = generate_batch(model, &batch)?;
        let (b, t) = (batch.windows, batch.window_len);
        let (_, c, h, w) = batch.frames.dims4()?;
        let as_windows = |x: &Tensor| x.reshape((b, t, c, h, w));

        // discriminator step on detached fakes
        let fake_d = fake.detach();
        let ds_real = model
            .disc_spatial
            .forward(&model.spatial_input(&batch.composites, &batch.frames)?)?;
        let ds_fake = model
            .disc_spatial
            .forward(&model.spatial_input(&batch.composites, &fake_d)?)?;
        let dt_real = model.disc_temporal.forward(
            &model.temporal_input(&as_windows(&batch.composites)?, &as_windows(&batch.frames)?)?,
        )?;
        let dt_fake = model.disc_temporal.forward(
            &model.temporal_input(&as_windows(&batch.composites)?, &as_windows(&fake_d)?)?,
        )?;
        let d_s = lsgan_d_loss(&ds_real.score, &ds_fake.score)?;
        let d_t = lsgan_d_loss(&dt_real.score, &dt_fake.score)?;
        let d_total = (&d_s + &d_t)?;
        let (d_s_v, d_t_v) = (
            finite(scalar(&d_s)?, "spatial D loss", step)?,
            finite(scalar(&d_t)?, "temporal D loss", step)?,
        );
        opt_d.backward_step(&d_total)?;
        report.discriminator_steps += 1;

        // generator step against the updated discriminators
        let ds_real = model
            .disc_spatial
            .forward(&model.spatial_input(&batch.composites, &batch.frames)?)?;
        let ds_fake = model
            .disc_spatial
            .forward(&model.spatial_input(&batch.composites, &fake)?)?;
        let dt_real = model.disc_temporal.forward(
            &model.temporal_input(&as_windows(&batch.composites)?, &as_windows(&batch.frames)?)?,
        )?;
        let dt_fake = model.disc_temporal.forward(
            &model.temporal_input(&as_windows(&batch.composites)?, &as_windows(&fake)?)?,
        )?;
        let l_s = (lsgan_g_loss(&ds_fake.score)?
            + feature_matching(&ds_real.features, &ds_fake.features)?)?;
        let l_t = (lsgan_g_loss(&dt_fake.score)?
            + feature_matching(&dt_real.features, &dt_fake.features)?)?;
        let weights = mask_weights(&batch.masks, cfg.mask_weight)?;
        let l_r = weighted_perceptual_loss(&fake, &batch.frames, extractor, Some(&weights))?;
        let l_v = total_loss(&l_r, &l_s, &l_t, cfg)?;
        let row = Stage2Losses {
            l_r: finite(scalar(&l_r)?, "reconstruction loss", step)?,
            l_s: finite(scalar(&l_s)?, "spatial adversarial loss", step)?,
            l_t: finite(scalar(&l_t)?, "temporal adversarial loss", step)?,
            l_v: finite(scalar(&l_v)?, "total loss", step)?,
            d_s: d_s_v,
            d_t: d_t_v,
        };
        opt_g.backward_step(&l_v)?;
        report.generator_steps += 1;
        report.losses.push(row);
        on_step(step, &row);
    }
    report.embedder_checksum_after = model.embedder_store().checksum()?;
    Ok(report)
}

/// Multi-speaker training of all four networks for `cfg.steps_stage2`
/// steps. Requires at least two speakers.
pub fn meta_train(
    model: &TranslationModel,
    data: &Stage2Dataset,
    cfg: &TrainConfig,
    extractor: &dyn FeatureExtractor,
    on_step: impl FnMut(usize, &Stage2Losses),
) -> Result<Stage2Report> {
    if data.num_speakers() < 2 {
        return Err(Error::Invalid(format!(
            "meta-training needs at least 2 speakers, found {}",
            data.num_speakers()
        )));
    }
    train_stage2(
        model,
        data,
        cfg,
        cfg.steps_stage2,
        Stage2Mode::Meta,
        extractor,
        on_step,
    )
}

/// Single-speaker adaptation for `cfg.finetune_steps` steps with the
/// embedder frozen. `held_out` batches are scored before and after.
pub fn fine_tune(
    model: &TranslationModel,
    data: &Stage2Dataset,
    cfg: &TrainConfig,
    extractor: &dyn FeatureExtractor,
    held_out: Option<&Stage2Batch>,
    on_step: impl FnMut(usize, &Stage2Losses),
) -> Result<Stage2Report> {
    let before = held_out
        .map(|b| reconstruction_loss(model, b, extractor, cfg))
        .transpose()?;
    let mut report = train_stage2(
        model,
        data,
        cfg,
        cfg.finetune_steps,
        Stage2Mode::FineTune,
        extractor,
        on_step,
    )?;
    if report.embedder_checksum_before != report.embedder_checksum_after {
        return Err(Error::Numeric(
            "embedder parameters changed during fine-tuning".into(),
        ));
    }
    report.held_out_before = before;
    report.held_out_after = held_out
        .map(|b| reconstruction_loss(model, b, extractor, cfg))
        .transpose()?;
    Ok(report)
}
