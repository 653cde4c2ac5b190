//! Run-directory evaluation and the JSON/CSV report.
//!
//! A run directory holds `generated/<clip id>/` and, for paired evaluation,
//! `gt/<clip id>/`. Each clip directory has `frames/` (images or a raw frame
//! dump) and optionally `landmarks.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::frechet::{temporal_extractor, temporal_fid};
use super::image::{mean_over_frames, perceptual_distance, psnr, ssim};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::landmarks::{load_landmark_track, nme};
use crate::media::video::VideoClip;
use crate::nn::{ConvStackExtractor, FeatureExtractor};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_META: &str = "report_meta.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Generated clips are compared with their own ground truth.
    Paired,
    /// Only the reference-free temporal metric; the `gt/` clips serve as
    /// the real distribution and need not share ids.
    Unpaired,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paired" => Ok(Self::Paired),
            "unpaired" => Ok(Self::Unpaired),
            _ => Err(Error::Invalid(format!(
                "unknown mode `{s}` (expected paired or unpaired)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    /// Empty for set-level metrics (`temporal_fid`).
    pub per_video: BTreeMap<String, f64>,
    pub mean: f64,
}

impl MetricEntry {
    fn from_per_video(per_video: BTreeMap<String, f64>) -> Self {
        let mean = per_video.values().sum::<f64>() / per_video.len().max(1) as f64;
        Self { per_video, mean }
    }
}

/// `{metric → {per_video: {id: value}, mean: value}}`
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricReport {
    pub metrics: BTreeMap<String, MetricEntry>,
}

/// Counts and the config echo, written next to the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub mode: EvalMode,
    pub generated_clips: usize,
    pub reference_clips: usize,
    pub frames: usize,
    pub config: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn get(&self, metric: &str) -> Option<&MetricEntry> {
        self.metrics.get(metric)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,video,value\n");
        for (m, e) in &self.metrics {
            for (id, v) in &e.per_video {
                out.push_str(&format!("{m},{id},{v}\n"));
            }
            out.push_str(&format!("{m},mean,{}\n", e.mean));
        }
        out
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(self)?;
        let p = dir.join(REPORT_JSON);
        std::fs::write(&p, json).map_err(|e| Error::io(&p, e))?;
        let p = dir.join(REPORT_CSV);
        std::fs::write(&p, self.to_csv()).map_err(|e| Error::io(&p, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub struct EvalOptions {
    pub mode: EvalMode,
    pub tfid_window: usize,
    pub shrinkage: f64,
    pub perceptual: Box<dyn FeatureExtractor>,
    pub temporal: Box<dyn FeatureExtractor>,
    pub config: BTreeMap<String, String>,
}

impl EvalOptions {
    pub fn from_config(mode: EvalMode, cfg: &TrainConfig) -> Self {
        let config = cfg
            .to_text()
            .lines()
            .filter_map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
            })
            .collect();
        Self {
            mode,
            tfid_window: cfg.tfid_window,
            shrinkage: cfg.fid_shrinkage,
            perceptual: Box::new(ConvStackExtractor::default_rgb()),
            temporal: Box::new(temporal_extractor(cfg.tfid_window)),
            config,
        }
    }
}

struct ClipDir {
    id: String,
    path: PathBuf,
}

fn list_clips(dir: &Path) -> Result<Vec<ClipDir>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            let id = path
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_string();
            out.push(ClipDir { id, path });
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

fn load_frames(clip: &ClipDir) -> Result<VideoClip> {
    let dir = clip.path.join("frames");
    let raw = clip.path.join("frames.raw");
    if dir.exists() {
        VideoClip::load(&dir)
    } else if raw.exists() {
        VideoClip::load_raw(&raw)
    } else {
        Err(Error::format(
            &clip.path,
            "no frames/ directory or frames.raw",
        ))
    }
}

/// Evaluates `run_dir` and writes `report.json`, `report.csv` and
/// `report_meta.json` into it.
pub fn evaluate(run_dir: &Path, opts: &EvalOptions) -> Result<MetricReport> {
    let generated = list_clips(&run_dir.join("generated"))?;
    if generated.is_empty() {
        return Err(Error::NoEligible(format!(
            "{} has no generated clips",
            run_dir.display()
        )));
    }
    let gt_dir = run_dir.join("gt");
    if !gt_dir.is_dir() {
        let why = match opts.mode {
            EvalMode::Paired => "paired evaluation needs ground-truth clips",
            EvalMode::Unpaired => "unpaired evaluation needs real reference clips",
        };
        return Err(Error::Invalid(format!("{why} in {}", gt_dir.display())));
    }
    let reference = list_clips(&gt_dir)?;
    let gen_videos = generated
        .iter()
        .map(load_frames)
        .collect::<Result<Vec<_>>>()?;
    let mut report = MetricReport::default();

    let ref_videos = match opts.mode {
        EvalMode::Unpaired => reference
            .iter()
            .map(load_frames)
            .collect::<Result<Vec<_>>>()?,
        EvalMode::Paired => {
            let mut ssims = BTreeMap::new();
            let mut psnrs = BTreeMap::new();
            let mut percs = BTreeMap::new();
            let mut nmes = BTreeMap::new();
            let mut paired = Vec::new();
            for (g, gv) in generated.iter().zip(&gen_videos) {
                let gt = reference.iter().find(|r| r.id == g.id).ok_or_else(|| {
                    Error::Invalid(format!("no ground truth for generated clip `{}`", g.id))
                })?;
                let tv = load_frames(gt)?;
                if tv.len() != gv.len() {
                    return Err(Error::shape(
                        format!("{} frames for `{}`", tv.len(), g.id),
                        gv.len(),
                    ));
                }
                ssims.insert(
                    g.id.clone(),
                    mean_over_frames(&gv.frames, &tv.frames, ssim)?,
                );
                psnrs.insert(
                    g.id.clone(),
                    mean_over_frames(&gv.frames, &tv.frames, psnr)?,
                );
                percs.insert(
                    g.id.clone(),
                    mean_over_frames(&gv.frames, &tv.frames, |a, b| {
                        perceptual_distance(a, b, opts.perceptual.as_ref())
                    })?,
                );
                let pred = load_landmark_track(g.path.join("landmarks.json"))?;
                let truth = load_landmark_track(gt.path.join("landmarks.json"))?;
                nmes.insert(g.id.clone(), nme(&pred.frames, &truth.frames)?);
                paired.push(tv);
            }
            report
                .metrics
                .insert("ssim".into(), MetricEntry::from_per_video(ssims));
            report
                .metrics
                .insert("psnr".into(), MetricEntry::from_per_video(psnrs));
            report
                .metrics
                .insert("perceptual".into(), MetricEntry::from_per_video(percs));
            report
                .metrics
                .insert("nme".into(), MetricEntry::from_per_video(nmes));
            paired
        }
    };

    let tfid = temporal_fid(
        &gen_videos,
        &ref_videos,
        opts.temporal.as_ref(),
        opts.tfid_window,
        opts.shrinkage,
    )?;
    report.metrics.insert(
        "temporal_fid".into(),
        MetricEntry {
            per_video: BTreeMap::new(),
            mean: tfid,
        },
    );
    for (m, e) in &report.metrics {
        if !e.mean.is_finite() || e.per_video.values().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("metric `{m}` is not finite")));
        }
    }

    report.write(run_dir)?;
    let meta = ReportMeta {
        mode: opts.mode,
        generated_clips: gen_videos.len(),
        reference_clips: ref_videos.len(),
        frames: gen_videos.iter().map(|v| v.len()).sum(),
        config: opts.config.clone(),
    };
    let p = run_dir.join(REPORT_META);
    std::fs::write(&p, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&p, e))?;
    Ok(report)
}
