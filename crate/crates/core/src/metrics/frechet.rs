//! Fréchet distance between Gaussians and the temporal Fréchet metric.

use candle_core::{DType, Device, Tensor};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::media::video::{Image, VideoClip};
use crate::nn::extractor::DEFAULT_EXTRACTOR_SEED;
use crate::nn::{ConvStackExtractor, FeatureExtractor};

/// Relative tolerance for negative eigenvalues before a matrix is rejected
/// as not positive semidefinite.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Mean and covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Gaussian {
    /// Sample mean and unbiased covariance of the rows of `samples`, with
    /// `shrinkage` added to the diagonal so small sample sets stay well
    /// conditioned.
    pub fn fit(samples: &[Vec<f64>], shrinkage: f64) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::Invalid(format!(
                "need at least 2 samples to fit a covariance, got {n}"
            )));
        }
        let d = samples[0].len();
        if samples.iter().any(|s| s.len() != d) {
            return Err(Error::Invalid("samples have different dimensions".into()));
        }
        let x = DMatrix::from_fn(n, d, |i, j| samples[i][j]);
        let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
        let mut centered = x;
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let mut cov = centered.transpose() * &centered / (n - 1) as f64;
        for i in 0..d {
            cov[(i, i)] += shrinkage;
        }
        Ok(Self { mean, cov })
    }
}

/// Symmetric projection followed by an eigen square root. Eigenvalues
/// below `−PSD_TOLERANCE·scale` are an error; smaller negatives clamp to 0.
fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if let Some(v) = eig
        .eigenvalues
        .iter()
        .find(|v| **v < -PSD_TOLERANCE * scale)
    {
        return Err(Error::Numeric(format!(
            "{what} is not positive semidefinite (eigenvalue {v})"
        )));
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `‖μ1 − μ2‖² + tr(C1 + C2 − 2(C1·C2)^{1/2})`.
///
/// The cross term uses `tr((C1·C2)^{1/2}) = tr((√C1·C2·√C1)^{1/2})`, which
/// only needs symmetric eigendecompositions.
pub fn frechet_distance(
    mu1: &DVector<f64>,
    cov1: &DMatrix<f64>,
    mu2: &DVector<f64>,
    cov2: &DMatrix<f64>,
) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d || cov1.shape() != (d, d) || cov2.shape() != (d, d) {
        return Err(Error::shape(
            format!("mean {d} and {d}x{d} covariances"),
            format!(
                "means {} / {}, covariances {:?} / {:?}",
                d,
                mu2.len(),
                cov1.shape(),
                cov2.shape()
            ),
        ));
    }
    let s1 = psd_sqrt(cov1, "first covariance")?;
    psd_sqrt(cov2, "second covariance")?;
    let inner = &s1 * cov2 * &s1;
    let cross = psd_sqrt(&inner, "covariance product")?.trace();
    let diff = (mu1 - mu2).norm_squared();
    let v = diff + cov1.trace() + cov2.trace() - 2.0 * cross;
    if !v.is_finite() {
        return Err(Error::Numeric(format!("Fréchet distance is {v}")));
    }
    Ok(v.max(0.0))
}

pub fn frechet_gaussians(a: &Gaussian, b: &Gaussian) -> Result<f64> {
    frechet_distance(&a.mean, &a.cov, &b.mean, &b.cov)
}

/// The default extractor for `window`-frame stacks: a fixed random
/// convolution stack over `3·window` channels plus the raw input layer.
pub fn temporal_extractor(window: usize) -> ConvStackExtractor {
    ConvStackExtractor::random(3 * window, DEFAULT_EXTRACTOR_SEED, true)
}

/// Channel-stacks frames `t..t+window` into `[3·window, H, W]`.
pub fn stack_window(frames: &[Image], t: usize, window: usize) -> Result<Tensor> {
    let ts = frames[t..t + window]
        .iter()
        .map(|f| f.to_tensor(DType::F64, &Device::Cpu))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::cat(&ts, 0)?)
}

/// One feature vector per sliding window: every extractor layer is
/// average-pooled over space and the layers are concatenated.
pub fn window_features(
    clip: &VideoClip,
    extractor: &dyn FeatureExtractor,
    window: usize,
) -> Result<Vec<Vec<f64>>> {
    if clip.len() < window {
        return Err(Error::Invalid(format!(
            "clip of {} frames is shorter than the window {window}",
            clip.len()
        )));
    }
    let mut out = Vec::with_capacity(clip.len() + 1 - window);
    for t in 0..=clip.len() - window {
        let x = stack_window(&clip.frames, t, window)?.unsqueeze(0)?;
        let mut v = Vec::new();
        for f in extractor.extract(&x)? {
            v.extend(f.mean((2, 3))?.flatten_all()?.to_vec1::<f64>()?);
        }
        out.push(v);
    }
    Ok(out)
}

/// Fréchet distance between Gaussian fits of the window features of two
/// clip sets.
pub fn temporal_fid(
    videos_a: &[VideoClip],
    videos_b: &[VideoClip],
    extractor: &dyn FeatureExtractor,
    window: usize,
    shrinkage: f64,
) -> Result<f64> {
    if videos_a.len() < 2 || videos_b.len() < 2 {
        return Err(Error::Invalid(format!(
            "temporal Fréchet metric needs at least 2 clips per set, got {} and {}",
            videos_a.len(),
            videos_b.len()
        )));
    }
    if window == 0 {
        return Err(Error::Invalid("window must be > 0".into()));
    }
    if let Some(c) = extractor.in_channels() {
        if c != 3 * window {
            return Err(Error::shape(
                format!("an extractor over {} channels", 3 * window),
                c,
            ));
        }
    }
    let fit = |set: &[VideoClip]| -> Result<Gaussian> {
        let mut feats = Vec::new();
        for clip in set {
            feats.extend(window_features(clip, extractor, window)?);
        }
        Gaussian::fit(&feats, shrinkage)
    };
    frechet_gaussians(&fit(videos_a)?, &fit(videos_b)?)
}
