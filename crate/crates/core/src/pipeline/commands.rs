//! The command implementations behind the `lipdub` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Device};
use serde::{Deserialize, Serialize};

use super::manifest::{
    cached_mel, DatasetManifest, ManifestEntry, FRAMES_DIR, FRAMES_RAW, LANDMARKS_FILE,
};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::landmarks::{
    composite_output, load_landmark_track, make_composite, merge_landmarks, save_landmark_track,
    split_landmarks, FaceMask, LandmarkPartition, LandmarkTrack,
};
use crate::media::{extract_mel, load_audio, Image, MelSpectrogram, VideoClip};
use crate::metrics::{evaluate, EvalMode, EvalOptions, MetricReport};
use crate::nn::{load_checkpoint, save_checkpoint, ConvStackExtractor, ParamStore};
use crate::stage1::{
    predict_track, train_stage1, write_loss_csv, LandmarkGenModel, Stage1Clip, Stage1Dataset,
};
use crate::stage2::{
    fine_tune, meta_train, ConditionVolume, Stage2Clip, Stage2Dataset, Stage2Losses,
    TranslationModel, WindowSample,
};

pub const STAGE1_KIND: &str = "stage1";
pub const STAGE2_KIND: &str = "stage2";

/// Process exit status for an error: 1 I/O or bad input, 2 nothing
/// eligible, 3 numeric failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NoEligible(_) => 2,
        Error::Numeric(_) => 3,
        _ => 1,
    }
}

/// A config file plus `key=value` overrides, applied on top of a base.
#[derive(Debug, Clone, Default)]
pub struct ConfigSource {
    pub file: Option<PathBuf>,
    pub overrides: Vec<String>,
}

impl ConfigSource {
    pub fn resolve(&self, base: TrainConfig) -> Result<TrainConfig> {
        let mut cfg = base;
        if let Some(p) = &self.file {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            for line in text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
            {
                set_pair(&mut cfg, line)?;
            }
        }
        for o in &self.overrides {
            set_pair(&mut cfg, o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set_pair(cfg: &mut TrainConfig, assignment: &str) -> Result<()> {
    let (k, v) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got `{assignment}`")))?;
    cfg.set(k, v)
}

/// What a training command produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub kind: String,
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub clips_used: Vec<String>,
    pub steps: usize,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

impl TrainSummary {
    fn write(&self, dir: &Path, name: &str) -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&p, e))
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn no_eligible(stage: &str, needs: &str, m: &DatasetManifest) -> Error {
    Error::NoEligible(format!(
        "{stage} needs clips with {needs}; manifest has {}",
        m.modality_summary()
    ))
}

fn stage1_clip(e: &ManifestEntry) -> Result<Stage1Clip> {
    let mel = match (&e.mel_cache, &e.audio) {
        (Some(c), _) if c.is_file() => MelSpectrogram::load(c)?,
        (_, Some(a)) => extract_mel(&load_audio(a)?)?,
        _ => return Err(Error::Invalid(format!("clip `{}` has no audio", e.clip_id))),
    };
    Ok(Stage1Clip {
        id: e.clip_id.clone(),
        mel,
        track: load_landmark_track(&e.landmarks)?,
    })
}

fn stage2_clip(e: &ManifestEntry) -> Result<Stage2Clip> {
    let path = e
        .frames
        .as_ref()
        .ok_or_else(|| Error::Invalid(format!("clip `{}` has no frames", e.clip_id)))?;
    let video = VideoClip::load(path)?;
    let track = load_landmark_track(&e.landmarks)?;
    if video.len() != track.len() {
        return Err(Error::shape(
            format!("{} frames for clip `{}`", track.len(), e.clip_id),
            video.len(),
        ));
    }
    Ok(Stage2Clip {
        id: e.clip_id.clone(),
        speaker_id: e.speaker_id.clone(),
        frames: video.frames,
        track,
    })
}

/// Trains the landmark generator on the audio+landmark entries only.
/// Frames are never opened.
pub fn cmd_train_stage1(
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    partition: &LandmarkPartition,
    out_dir: &Path,
) -> Result<TrainSummary> {
    let eligible = manifest.stage1_entries();
    if eligible.is_empty() {
        return Err(no_eligible("stage 1", "audio and landmarks", manifest));
    }
    let clips = eligible
        .iter()
        .map(|e| stage1_clip(e))
        .collect::<Result<Vec<_>>>()?;
    log::info!(
        "stage 1 on {} clips: {}",
        clips.len(),
        clips
            .iter()
            .map(|c| c.id.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    );
    let data = Stage1Dataset::new(clips, partition.clone())?;
    let store = ParamStore::new(DType::F32, &Device::Cpu, cfg.seed);
    let model = LandmarkGenModel::from_config(cfg, partition, &store)?;
    let report = train_stage1(&model, &data, cfg, |step, loss| {
        if step % 50 == 0 {
            log::info!("stage 1 step {step}: l1 {loss:.5}");
        }
    })?;
    ensure_dir(out_dir)?;
    let checkpoint = out_dir.join("stage1.safetensors");
    save_checkpoint(&checkpoint, STAGE1_KIND, cfg, &[model.store()])?;
    let loss_csv = out_dir.join("stage1_loss.csv");
    let rows: Vec<Vec<f64>> = report.losses.iter().map(|l| vec![*l]).collect();
    write_loss_csv(&loss_csv, &["l1"], &rows)?;
    let w = report.fusion_weights;
    let summary = TrainSummary {
        kind: STAGE1_KIND.into(),
        checkpoint,
        loss_csv,
        clips_used: report.clips_used,
        steps: report.losses.len(),
        config_hash: cfg.hash(),
        extra: BTreeMap::from([(
            "fusion_weights".into(),
            format!("{:.6},{:.6},{:.6}", w[0], w[1], w[2]),
        )]),
    };
    summary.write(out_dir, "stage1_summary.json")?;
    Ok(summary)
}

fn write_stage2_losses(path: &Path, losses: &[Stage2Losses]) -> Result<()> {
    let rows: Vec<Vec<f64>> = losses.iter().map(|l| l.row()).collect();
    write_loss_csv(path, &Stage2Losses::COLUMNS, &rows)
}

fn load_extractor(path: Option<&Path>) -> Result<ConvStackExtractor> {
    match path {
        Some(p) => ConvStackExtractor::load(p),
        None => Ok(ConvStackExtractor::default_rgb()),
    }
}

/// Meta-trains the translation networks on the frames+landmark entries
/// only. Audio is never opened.
pub fn cmd_train_stage2(
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    partition: &LandmarkPartition,
    extractor: Option<&Path>,
    out_dir: &Path,
) -> Result<TrainSummary> {
    let eligible = manifest.stage2_entries();
    if eligible.is_empty() {
        return Err(no_eligible("stage 2", "frames and landmarks", manifest));
    }
    let clips = eligible
        .iter()
        .map(|e| stage2_clip(e))
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = clips.iter().map(|c| c.id.clone()).collect();
    log::info!("stage 2 on {} clips: {}", ids.len(), ids.join(", "));
    let data = Stage2Dataset::new(clips, partition, cfg, DType::F32, &Device::Cpu)?;
    let model = TranslationModel::new(cfg, &ParamStore::new(DType::F32, &Device::Cpu, cfg.seed))?;
    let ex = load_extractor(extractor)?;
    let report = meta_train(&model, &data, cfg, &ex, |step, l| {
        if step % 10 == 0 {
            log::info!(
                "stage 2 step {step}: l_r {:.5} l_s {:.5} l_t {:.5}",
                l.l_r,
                l.l_s,
                l.l_t
            );
        }
    })?;
    ensure_dir(out_dir)?;
    let checkpoint = out_dir.join("stage2.safetensors");
    save_checkpoint(&checkpoint, STAGE2_KIND, cfg, &[model.store()])?;
    let loss_csv = out_dir.join("stage2_loss.csv");
    write_stage2_losses(&loss_csv, &report.losses)?;
    let summary = TrainSummary {
        kind: STAGE2_KIND.into(),
        checkpoint,
        loss_csv,
        clips_used: ids,
        steps: report.generator_steps,
        config_hash: cfg.hash(),
        extra: BTreeMap::new(),
    };
    summary.write(out_dir, "stage2_summary.json")?;
    Ok(summary)
}

/// Rebuilds a stage-1 model from its checkpoint.
pub fn load_stage1(
    path: &Path,
    partition: &LandmarkPartition,
) -> Result<(LandmarkGenModel, TrainConfig)> {
    let ck = load_checkpoint(path, STAGE1_KIND)?;
    let store = ParamStore::new(DType::F32, &Device::Cpu, ck.config.seed);
    let model = LandmarkGenModel::from_config(&ck.config, partition, &store)?;
    store.load(&ck.tensors)?;
    Ok((model, ck.config))
}

/// Rebuilds the translation networks from a checkpoint. Architecture keys
/// come from the checkpoint; `cfg` may change training keys only.
pub fn load_stage2(
    path: &Path,
    cfg: Option<&TrainConfig>,
) -> Result<(TranslationModel, TrainConfig)> {
    let ck = load_checkpoint(path, STAGE2_KIND)?;
    let cfg = cfg.cloned().unwrap_or(ck.config);
    let model = TranslationModel::new(&cfg, &ParamStore::new(DType::F32, &Device::Cpu, cfg.seed))?;
    model.store().load(&ck.tensors)?;
    Ok((model, cfg))
}

/// Footage for fine-tuning: a manifest file or a single clip directory.
pub fn load_footage(path: &Path) -> Result<Vec<Stage2Clip>> {
    if path.is_file() {
        let m = DatasetManifest::load(path)?;
        let eligible = m.stage2_entries();
        if eligible.is_empty() {
            return Err(no_eligible("fine-tuning", "frames and landmarks", &m));
        }
        return eligible.into_iter().map(stage2_clip).collect();
    }
    let id = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("clip")
        .to_string();
    let frames = [path.join(FRAMES_DIR), path.join(FRAMES_RAW)]
        .into_iter()
        .find(|p| p.exists())
        .ok_or_else(|| Error::NoEligible(format!("{} has no frames", path.display())))?;
    let track = load_landmark_track(path.join(LANDMARKS_FILE))?;
    let entry = ManifestEntry {
        clip_id: id.clone(),
        speaker_id: if track.source_id.is_empty() {
            id
        } else {
            track.source_id.clone()
        },
        frames: Some(frames),
        audio: None,
        landmarks: path.join(LANDMARKS_FILE),
        mel_cache: None,
    };
    Ok(vec![stage2_clip(&entry)?])
}

/// Adapts a stage-2 checkpoint to new footage with the embedder frozen.
pub fn cmd_finetune(
    checkpoint: &Path,
    footage: &Path,
    config: &ConfigSource,
    partition: &LandmarkPartition,
    extractor: Option<&Path>,
    out_dir: &Path,
) -> Result<TrainSummary> {
    let base = load_checkpoint(checkpoint, STAGE2_KIND)?.config;
    let cfg = config.resolve(base)?;
    let (model, cfg) = load_stage2(checkpoint, Some(&cfg))?;
    let clips = load_footage(footage)?;
    let ids: Vec<String> = clips.iter().map(|c| c.id.clone()).collect();
    let data = Stage2Dataset::new(clips, partition, &cfg, DType::F32, &Device::Cpu)?;
    let last = data.clips[0].len - cfg.temporal_disc_window;
    let probe = data.make_batch(
        &[WindowSample {
            clip: 0,
            start: last,
            reference: 0,
        }],
        cfg.temporal_disc_window,
        cfg.temporal_half_window_p,
    )?;
    let ex = load_extractor(extractor)?;
    let report = fine_tune(&model, &data, &cfg, &ex, Some(&probe), |step, l| {
        if step % 10 == 0 {
            log::info!("fine-tune step {step}: l_r {:.5}", l.l_r);
        }
    })?;
    log::info!(
        "embedder checksum before {}",
        report.embedder_checksum_before
    );
    log::info!(
        "embedder checksum after  {}",
        report.embedder_checksum_after
    );
    ensure_dir(out_dir)?;
    let out = out_dir.join("stage2_finetuned.safetensors");
    save_checkpoint(&out, STAGE2_KIND, &cfg, &[model.store()])?;
    let loss_csv = out_dir.join("finetune_loss.csv");
    write_stage2_losses(&loss_csv, &report.losses)?;
    let mut extra = BTreeMap::from([
        (
            "embedder_checksum_before".to_string(),
            report.embedder_checksum_before.clone(),
        ),
        (
            "embedder_checksum_after".to_string(),
            report.embedder_checksum_after.clone(),
        ),
    ]);
    if let (Some(b), Some(a)) = (report.held_out_before, report.held_out_after) {
        extra.insert("probe_loss_before".into(), b.to_string());
        extra.insert("probe_loss_after".into(), a.to_string());
    }
    let summary = TrainSummary {
        kind: STAGE2_KIND.into(),
        checkpoint: out,
        loss_csv,
        clips_used: ids,
        steps: report.generator_steps,
        config_hash: cfg.hash(),
        extra,
    };
    summary.write(out_dir, "finetune_summary.json")?;
    Ok(summary)
}

/// Where the appearance embedding comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Appearance {
    /// A frame of the clip being dubbed.
    Frame(usize),
    /// Any image of the model's resolution.
    Image(Image),
}

/// The clip to dub: frames, its landmark track and the driving audio.
#[derive(Debug, Clone)]
pub struct DubInput {
    pub video: VideoClip,
    pub track: LandmarkTrack,
    pub mel: MelSpectrogram,
    /// Reference landmarks for stage 1; the clip's own track when `None`.
    pub reference_track: Option<LandmarkTrack>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DubTiming {
    pub frames: usize,
    pub landmarks_secs: f64,
    pub composite_secs: f64,
    pub synthesis_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug, Clone)]
pub struct DubOutput {
    pub frames: Vec<Image>,
    /// Input upper landmarks with predicted lower landmarks.
    pub landmarks: LandmarkTrack,
    pub masks: Vec<FaceMask>,
    pub timing: DubTiming,
}

pub struct DubModels {
    pub stage1: LandmarkGenModel,
    pub stage2: TranslationModel,
    pub stage2_config: TrainConfig,
    pub partition: LandmarkPartition,
}

impl DubModels {
    pub fn load(stage1: &Path, stage2: &Path, partition: LandmarkPartition) -> Result<Self> {
        let (s1, _) = load_stage1(stage1, &partition)?;
        let (s2, cfg) = load_stage2(stage2, None)?;
        Ok(Self {
            stage1: s1,
            stage2: s2,
            stage2_config: cfg,
            partition,
        })
    }
}

/// Landmarks from audio, composites, synthesis and compositing for every
/// frame. Pixels outside each frame's mask are copied from the input.
pub fn dub_clip(
    models: &DubModels,
    input: &DubInput,
    appearance: &Appearance,
) -> Result<DubOutput> {
    let start = Instant::now();
    let n = input.video.len();
    if n == 0 {
        return Err(Error::NoEligible("input clip has no frames".into()));
    }
    if input.track.len() != n {
        return Err(Error::shape(
            format!("{n} landmark frames"),
            input.track.len(),
        ));
    }
    let reference = input.reference_track.as_ref().unwrap_or(&input.track);
    let lower = predict_track(
        &models.stage1,
        &input.mel,
        &input.track,
        reference,
        &models.partition,
    )?;
    let t_landmarks = start.elapsed().as_secs_f64();

    let mut composites = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    let mut merged = Vec::with_capacity(n);
    for t in 0..n {
        let src = &input.track.frames[t];
        let c = make_composite(
            &input.video.frames[t],
            src,
            &lower[t],
            &models.partition,
            models.stage2_config.mask_margin,
        )?;
        composites.push(c.image);
        masks.push(c.mask);
        merged.push(merge_landmarks(
            &split_landmarks(src, &models.partition).0,
            &lower[t],
            &models.partition,
        )?);
    }
    let t_composite = start.elapsed().as_secs_f64() - t_landmarks;

    let reference_image = match appearance {
        Appearance::Frame(i) => input.video.frames.get(*i).ok_or_else(|| {
            Error::Invalid(format!(
                "reference frame {i} is out of range (clip has {n})"
            ))
        })?,
        Appearance::Image(img) => img,
    };
    let e = models.stage2.embed_appearance(reference_image)?;
    let p = models.stage2_config.temporal_half_window_p;
    let mut frames = Vec::with_capacity(n);
    for t in 0..n {
        let volume = ConditionVolume::around(&composites, t, p)?;
        let generated = models.stage2.generate_face(&volume, &e)?;
        frames.push(composite_output(
            &input.video.frames[t],
            &generated,
            &masks[t],
        )?);
    }
    let total = start.elapsed().as_secs_f64();
    Ok(DubOutput {
        frames,
        landmarks: LandmarkTrack::new(input.track.source_id.clone(), merged),
        masks,
        timing: DubTiming {
            frames: n,
            landmarks_secs: t_landmarks,
            composite_secs: t_composite,
            synthesis_secs: total - t_landmarks - t_composite,
            total_secs: total,
        },
    })
}

/// Files for a dub or transfer run.
#[derive(Debug, Clone)]
pub struct DubPaths {
    pub frames: PathBuf,
    pub audio: PathBuf,
    pub landmarks: PathBuf,
    pub stage1: PathBuf,
    pub stage2: PathBuf,
    /// Reference landmarks for stage 1 (defaults to `landmarks`).
    pub reference_landmarks: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Mel cache directory.
    pub cache: Option<PathBuf>,
}

fn write_dub(out: &DubOutput, dir: &Path) -> Result<()> {
    VideoClip::new(out.frames.clone())?.save_frames(dir.join(FRAMES_DIR))?;
    save_landmark_track(&out.landmarks, dir.join(LANDMARKS_FILE))?;
    let p = dir.join("dub_report.json");
    std::fs::write(&p, serde_json::to_string_pretty(&out.timing)?).map_err(|e| Error::io(&p, e))
}

fn load_dub_input(paths: &DubPaths) -> Result<DubInput> {
    let mel = match &paths.cache {
        Some(c) => cached_mel(&paths.audio, c)?.0,
        None => extract_mel(&load_audio(&paths.audio)?)?,
    };
    Ok(DubInput {
        video: VideoClip::load(&paths.frames)?,
        track: load_landmark_track(&paths.landmarks)?,
        mel,
        reference_track: paths
            .reference_landmarks
            .as_ref()
            .map(load_landmark_track)
            .transpose()?,
    })
}

pub fn cmd_dub(
    paths: &DubPaths,
    partition: LandmarkPartition,
    reference_frame: usize,
) -> Result<DubOutput> {
    let models = DubModels::load(&paths.stage1, &paths.stage2, partition)?;
    let out = dub_clip(
        &models,
        &load_dub_input(paths)?,
        &Appearance::Frame(reference_frame),
    )?;
    write_dub(&out, &paths.out_dir)?;
    Ok(out)
}

/// Dubbing with the appearance taken from `reference_image`.
pub fn cmd_transfer(
    paths: &DubPaths,
    partition: LandmarkPartition,
    reference_image: &Path,
) -> Result<DubOutput> {
    let models = DubModels::load(&paths.stage1, &paths.stage2, partition)?;
    let img = Image::load(reference_image)?;
    let out = dub_clip(&models, &load_dub_input(paths)?, &Appearance::Image(img))?;
    write_dub(&out, &paths.out_dir)?;
    Ok(out)
}

pub fn cmd_eval(run_dir: &Path, mode: EvalMode, cfg: &TrainConfig) -> Result<MetricReport> {
    evaluate(run_dir, &EvalOptions::from_config(mode, cfg))
}
