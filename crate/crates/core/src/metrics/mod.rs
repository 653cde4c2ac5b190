//! Evaluation metrics: SSIM, PSNR, perceptual distance, Fréchet distances
//! and the run-directory report. NME is re-exported from `landmarks`.

pub mod frechet;
pub mod image;
pub mod report;

pub use crate::landmarks::{nme, nme_frame};
pub use frechet::{
    frechet_distance, frechet_gaussians, temporal_extractor, temporal_fid, Gaussian,
};
pub use image::{perceptual_distance, perceptual_distance_weighted, psnr, ssim, PSNR_CAP};
pub use report::{
    evaluate, EvalMode, EvalOptions, MetricEntry, MetricReport, ReportMeta, REPORT_CSV,
    REPORT_JSON, REPORT_META,
};
