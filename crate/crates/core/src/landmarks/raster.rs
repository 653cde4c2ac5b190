//! Deterministic landmark drawing: white 1-px Bresenham polylines along the
//! partition's edges, plus a dot of radius [`DOT_RADIUS`] (every pixel with
//! `dx² + dy² <= r²`) at each point. No anti-aliasing.
//!
//! A normalized coordinate maps to pixel `floor(x * W)`, clamped to the
//! image.

use super::frame::{LandmarkFrame, Point};
use super::mask::FaceMask;
use super::partition::LandmarkPartition;
use crate::media::video::Image;

pub const DOT_RADIUS: i64 = 1;
const WHITE: [f32; 3] = [1.0; 3];

pub fn to_pixel(p: Point, height: usize, width: usize) -> (i64, i64) {
    let px = ((p[0] as f64 * width as f64).floor() as i64).clamp(0, width as i64 - 1);
    let py = ((p[1] as f64 * height as f64).floor() as i64).clamp(0, height as i64 - 1);
    (px, py)
}

fn plot(img: &mut Image, clip: Option<&FaceMask>, x: i64, y: i64) {
    if x < 0 || y < 0 || x >= img.width as i64 || y >= img.height as i64 {
        return;
    }
    let (x, y) = (x as usize, y as usize);
    if clip.is_some_and(|m| !m.contains(y, x)) {
        return;
    }
    img.put(y, x, WHITE);
}

fn line(img: &mut Image, clip: Option<&FaceMask>, (x0, y0): (i64, i64), (x1, y1): (i64, i64)) {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        plot(img, clip, x, y);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Draws the points with the given landmark indices onto `img`. Edges are
/// drawn only when both endpoints are among `indices`. With `clip`, pixels
/// outside the mask are left untouched.
pub fn draw_landmarks(
    img: &mut Image,
    indices: &[usize],
    points: &[Point],
    partition: &LandmarkPartition,
    clip: Option<&FaceMask>,
) {
    debug_assert_eq!(indices.len(), points.len());
    let (h, w) = (img.height, img.width);
    let mut pixel_of = vec![None; super::frame::NUM_POINTS];
    for (&i, &p) in indices.iter().zip(points) {
        if i < pixel_of.len() {
            pixel_of[i] = Some(to_pixel(p, h, w));
        }
    }
    for &(a, b) in &partition.edges {
        if let (Some(pa), Some(pb)) = (pixel_of[a], pixel_of[b]) {
            line(img, clip, pa, pb);
        }
    }
    for &(x, y) in pixel_of.iter().flatten() {
        for dy in -DOT_RADIUS..=DOT_RADIUS {
            for dx in -DOT_RADIUS..=DOT_RADIUS {
                if dx * dx + dy * dy <= DOT_RADIUS * DOT_RADIUS {
                    plot(img, clip, x + dx, y + dy);
                }
            }
        }
    }
}

/// Renders a subset of landmarks over black.
pub fn rasterize_landmarks(
    indices: &[usize],
    points: &[Point],
    partition: &LandmarkPartition,
    height: usize,
    width: usize,
) -> Image {
    let mut img = Image::filled(height, width, 0.0);
    draw_landmarks(&mut img, indices, points, partition, None);
    img
}

pub fn rasterize_frame(
    frame: &LandmarkFrame,
    partition: &LandmarkPartition,
    height: usize,
    width: usize,
) -> Image {
    let indices: Vec<usize> = (0..frame.points.len()).collect();
    rasterize_landmarks(&indices, &frame.points, partition, height, width)
}
