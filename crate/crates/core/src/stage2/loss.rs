//! Reconstruction and adversarial objectives for the translation stage.

use candle_core::Tensor;

use super::model::{DiscOutput, PatchDiscriminator};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::FeatureExtractor;

/// Σ over extractor layers of the mean absolute feature difference.
pub fn perceptual_loss(
    gen: &Tensor,
    gt: &Tensor,
    extractor: &dyn FeatureExtractor,
) -> Result<Tensor> {
    weighted_perceptual_loss(gen, gt, extractor, None)
}

/// Like [`perceptual_loss`], with each layer's absolute difference scaled by
/// `weights: [B, 1, H, W]` average-pooled to the layer's resolution.
pub fn weighted_perceptual_loss(
    gen: &Tensor,
    gt: &Tensor,
    extractor: &dyn FeatureExtractor,
    weights: Option<&Tensor>,
) -> Result<Tensor> {
    if gen.dims() != gt.dims() {
        return Err(Error::shape(
            format!("{:?}", gt.dims()),
            format!("{:?}", gen.dims()),
        ));
    }
    let fg = extractor.extract(gen)?;
    let ft = extractor.extract(gt)?;
    if fg.len() != extractor.num_layers() || ft.len() != fg.len() {
        return Err(Error::Invalid(format!(
            "extractor reported {} layers but returned {} and {}",
            extractor.num_layers(),
            fg.len(),
            ft.len()
        )));
    }
    let (_, _, h, _) = gen.dims4()?;
    let mut total = Tensor::zeros((), gen.dtype(), gen.device())?;
    for (a, b) in fg.iter().zip(&ft) {
        let diff = (a - b)?.abs()?;
        let term = match weights {
            None => diff.mean_all()?,
            Some(w) => {
                let (_, _, lh, _) = diff.dims4()?;
                let f = h / lh;
                let w = if f > 1 { w.avg_pool2d(f)? } else { w.clone() };
                diff.broadcast_mul(&w)?.mean_all()?
            }
        };
        total = (total + term)?;
    }
    Ok(total)
}

/// `1` everywhere except `mask_weight` inside the mask. `masks: [B, 1, H, W]`
/// of zeros and ones.
pub fn mask_weights(masks: &Tensor, mask_weight: f64) -> Result<Tensor> {
    Ok(masks.affine(mask_weight - 1.0, 1.0)?)
}

/// `½·mean[(D(real) − 1)² + D(fake)²]`
pub fn lsgan_d_loss(real_score: &Tensor, fake_score: &Tensor) -> Result<Tensor> {
    let r = (real_score - 1.0)?.sqr()?.mean_all()?;
    let f = fake_score.sqr()?.mean_all()?;
    Ok(((r + f)? * 0.5)?)
}

/// `mean[(D(fake) − 1)²]`
pub fn lsgan_g_loss(fake_score: &Tensor) -> Result<Tensor> {
    Ok((fake_score - 1.0)?.sqr()?.mean_all()?)
}

/// Σ over layers of mean |real − fake|; real features are treated as
/// constants.
pub fn feature_matching(real: &[Tensor], fake: &[Tensor]) -> Result<Tensor> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(Error::Invalid(
            "feature lists must be non-empty and equally long".into(),
        ));
    }
    let mut total = Tensor::zeros((), fake[0].dtype(), fake[0].device())?;
    for (r, f) in real.iter().zip(fake) {
        total = (total + (r.detach() - f)?.abs()?.mean_all()?)?;
    }
    Ok(total)
}

#[derive(Debug, Clone)]
pub struct GanLosses {
    pub adv_g: Tensor,
    pub adv_d: Tensor,
    pub feat_match: Tensor,
}

/// All three adversarial terms from precomputed discriminator outputs.
pub fn gan_losses_from(real: &DiscOutput, fake: &DiscOutput) -> Result<GanLosses> {
    Ok(GanLosses {
        adv_g: lsgan_g_loss(&fake.score)?,
        adv_d: lsgan_d_loss(&real.score, &fake.score)?,
        feat_match: feature_matching(&real.features, &fake.features)?,
    })
}

/// Runs `d` on real and fake inputs and returns the adversarial terms.
pub fn gan_losses(d: &PatchDiscriminator, real: &Tensor, fake: &Tensor) -> Result<GanLosses> {
    gan_losses_from(&d.forward(real)?, &d.forward(fake)?)
}

/// `L_r + λ_s·L_s + λ_t·L_t`
pub fn total_loss(l_r: &Tensor, l_s: &Tensor, l_t: &Tensor, cfg: &TrainConfig) -> Result<Tensor> {
    Ok(((l_r + (l_s * cfg.lambda_s)?)? + (l_t * cfg.lambda_t)?)?)
}

/// Mean absolute error inside the mask only; `masks: [B, 1, H, W]`.
pub fn masked_l1(a: &Tensor, b: &Tensor, masks: &Tensor) -> Result<f64> {
    let area = masks
        .sum_all()?
        .to_dtype(candle_core::DType::F64)?
        .to_scalar::<f64>()?
        * a.dim(1)? as f64;
    if area == 0.0 {
        return Err(Error::Invalid("empty mask".into()));
    }
    let s = (a - b)?.abs()?.broadcast_mul(masks)?.sum_all()?;
    Ok(s.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()? / area)
}
