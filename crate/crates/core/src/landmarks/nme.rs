use super::frame::{LandmarkFrame, Point};
use crate::error::{Error, Result};

/// Normalized mean error of one frame: mean point distance divided by the
/// diagonal of the ground-truth bounding box.
pub fn nme_frame(pred: &[Point], gt: &[Point]) -> Result<f64> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::shape(format!("{} points", gt.len()), pred.len()));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in gt {
        x0 = x0.min(p[0] as f64);
        x1 = x1.max(p[0] as f64);
        y0 = y0.min(p[1] as f64);
        y1 = y1.max(p[1] as f64);
    }
    let diag = (x1 - x0).hypot(y1 - y0);
    if !(diag > 0.0) {
        return Err(Error::Numeric(
            "ground-truth bounding box has zero diagonal".into(),
        ));
    }
    let total: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (p[0] as f64 - g[0] as f64).hypot(p[1] as f64 - g[1] as f64))
        .sum();
    Ok(total / gt.len() as f64 / diag)
}

/// Per-frame NME averaged over the sequence.
pub fn nme(pred: &[LandmarkFrame], gt: &[LandmarkFrame]) -> Result<f64> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::shape(format!("{} frames", gt.len()), pred.len()));
    }
    let mut sum = 0.0;
    for (t, (p, g)) in pred.iter().zip(gt).enumerate() {
        sum += nme_frame(&p.points, &g.points)
            .map_err(|e| Error::Invalid(format!("frame {t}: {e}")))?;
    }
    Ok(sum / gt.len() as f64)
}
