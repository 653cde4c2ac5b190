//! Lower-face mask, the masked-and-drawn conditioning composite, and the
//! final blend of generated pixels back into the source frame.

use super::frame::{LandmarkFrame, Point};
use super::partition::LandmarkPartition;
use super::raster::draw_landmarks;
use crate::error::{Error, Result};
use crate::media::video::Image;

pub const NEUTRAL_FILL: f32 = 0.5;
pub const DEFAULT_MARGIN: f64 = 0.1;

/// Binary `H × W` mask; the lower-face mask is always an axis-aligned
/// rectangle (possibly empty).
#[derive(Debug, Clone, PartialEq)]
pub struct FaceMask {
    pub height: usize,
    pub width: usize,
    /// `(row0, row1, col0, col1)`, half-open; `None` when empty.
    pub rect: Option<(usize, usize, usize, usize)>,
}

impl FaceMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            rect: None,
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            rect: Some((0, height, 0, width)),
        }
    }

    #[inline]
    pub fn contains(&self, y: usize, x: usize) -> bool {
        matches!(self.rect, Some((r0, r1, c0, c1)) if y >= r0 && y < r1 && x >= c0 && x < c1)
    }

    pub fn is_empty(&self) -> bool {
        self.rect.is_none()
    }

    pub fn area(&self) -> usize {
        self.rect
            .map_or(0, |(r0, r1, c0, c1)| (r1 - r0) * (c1 - c0))
    }

    /// Row-major `{0, 1}` values.
    pub fn values(&self) -> Vec<f32> {
        let mut v = vec![0.0; self.height * self.width];
        if let Some((r0, r1, c0, c1)) = self.rect {
            for y in r0..r1 {
                v[y * self.width + c0..y * self.width + c1].fill(1.0);
            }
        }
        v
    }
}

/// Bounding box of the lower landmarks grown by `margin` (a fraction of the
/// box size on every side), never reaching above the lowest nose-base
/// landmark, clipped to the image. Degenerate boxes give an empty mask.
pub fn lower_half_mask(
    frame: &LandmarkFrame,
    partition: &LandmarkPartition,
    height: usize,
    width: usize,
    margin: f64,
) -> FaceMask {
    let pts = partition.lower.iter().map(|&i| frame.points[i]);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for [x, y] in pts {
        x0 = x0.min(x as f64);
        x1 = x1.max(x as f64);
        y0 = y0.min(y as f64);
        y1 = y1.max(y as f64);
    }
    if !(x1 > x0 && y1 > y0) {
        return FaceMask::empty(height, width);
    }
    let (mx, my) = (margin * (x1 - x0), margin * (y1 - y0));
    x0 -= mx;
    x1 += mx;
    y0 -= my;
    y1 += my;
    if let Some(nose) = partition
        .nose_base
        .iter()
        .map(|&i| frame.points[i][1] as f64)
        .reduce(f64::max)
    {
        y0 = y0.max(nose);
    }
    let to_px = |v: f64, n: usize| ((v * n as f64).round().max(0.0) as usize).min(n);
    let (c0, c1) = (to_px(x0, width), to_px(x1, width));
    let (r0, r1) = (to_px(y0, height), to_px(y1, height));
    if c1 <= c0 || r1 <= r0 {
        return FaceMask::empty(height, width);
    }
    FaceMask {
        height,
        width,
        rect: Some((r0, r1, c0, c1)),
    }
}

/// The conditioning input `x(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeFrame {
    pub image: Image,
    pub mask: FaceMask,
    pub drawn_landmarks: Vec<Point>,
}

/// Masks the lower face of `frame` (mask taken from the frame's own
/// landmarks `source`) with neutral gray and draws `predicted_lower` into
/// the masked area.
pub fn make_composite(
    frame: &Image,
    source: &LandmarkFrame,
    predicted_lower: &[Point],
    partition: &LandmarkPartition,
    margin: f64,
) -> Result<CompositeFrame> {
    if predicted_lower.len() != partition.lower.len() {
        return Err(Error::shape(
            format!("{} lower landmarks", partition.lower.len()),
            predicted_lower.len(),
        ));
    }
    let mask = lower_half_mask(source, partition, frame.height, frame.width, margin);
    let mut image = frame.clone();
    if let Some((r0, r1, c0, c1)) = mask.rect {
        for y in r0..r1 {
            for x in c0..c1 {
                image.put(y, x, [NEUTRAL_FILL; 3]);
            }
        }
        draw_landmarks(
            &mut image,
            &partition.lower,
            predicted_lower,
            partition,
            Some(&mask),
        );
    }
    Ok(CompositeFrame {
        image,
        mask,
        drawn_landmarks: predicted_lower.to_vec(),
    })
}

/// `mask · generated + (1 − mask) · original`, per pixel.
pub fn composite_output(original: &Image, generated: &Image, mask: &FaceMask) -> Result<Image> {
    if !original.same_shape(generated)
        || original.height != mask.height
        || original.width != mask.width
    {
        return Err(Error::shape(
            format!("{}x{}", original.height, original.width),
            format!(
                "generated {}x{}, mask {}x{}",
                generated.height, generated.width, mask.height, mask.width
            ),
        ));
    }
    let mut out = original.clone();
    if let Some((r0, r1, c0, c1)) = mask.rect {
        for y in r0..r1 {
            let a = out.idx(y, c0, 0);
            let b = out.idx(y, c1 - 1, 2) + 1;
            out.data[a..b].copy_from_slice(&generated.data[a..b]);
        }
    }
    Ok(out)
}
