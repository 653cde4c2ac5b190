use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of keypoints in every landmark frame.
pub const NUM_POINTS: usize = 216;

/// `(x, y)` normalized by frame width and height.
pub type Point = [f32; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LandmarkFrame {
    pub points: Vec<Point>,
}

impl LandmarkFrame {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() != NUM_POINTS {
            return Err(Error::shape(format!("{NUM_POINTS} points"), points.len()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite landmark coordinate".into()));
        }
        Ok(Self { points })
    }

    pub fn in_unit_square(&self) -> bool {
        self.points
            .iter()
            .flatten()
            .all(|v| (0.0..=1.0).contains(v))
    }

    pub fn translated(&self, dx: f32, dy: f32) -> Self {
        Self {
            points: self.points.iter().map(|p| [p[0] + dx, p[1] + dy]).collect(),
        }
    }
}

/// Per-frame landmarks for one clip.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LandmarkTrack {
    pub source_id: String,
    pub frames: Vec<LandmarkFrame>,
}

impl LandmarkTrack {
    pub fn new(source_id: impl Into<String>, frames: Vec<LandmarkFrame>) -> Self {
        Self {
            source_id: source_id.into(),
            frames,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    fn validate(&self) -> std::result::Result<(), String> {
        for (t, f) in self.frames.iter().enumerate() {
            if f.points.len() != NUM_POINTS {
                return Err(format!(
                    "frame {t}: expected {NUM_POINTS} points, got {}",
                    f.points.len()
                ));
            }
            if let Some(n) = f
                .points
                .iter()
                .position(|p| !p.iter().all(|v| (0.0..=1.0).contains(v)))
            {
                return Err(format!(
                    "frame {t}, point {n}: coordinate {:?} outside [0,1]",
                    f.points[n]
                ));
            }
        }
        Ok(())
    }
}

/// Reads a JSON landmark track. A file holding only whitespace is an empty
/// track.
pub fn load_landmark_track(path: impl AsRef<Path>) -> Result<LandmarkTrack> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Ok(LandmarkTrack::default());
    }
    let track: LandmarkTrack =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    track.validate().map_err(|m| Error::format(path, m))?;
    Ok(track)
}

pub fn save_landmark_track(track: &LandmarkTrack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    track.validate().map_err(|m| Error::format(path, m))?;
    let text = serde_json::to_string(track)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(seed: u32) -> LandmarkFrame {
        let points = (0..NUM_POINTS)
            .map(|i| {
                let a = ((i as u32).wrapping_mul(2654435761u32) ^ seed) as f32 / u32::MAX as f32;
                let b =
                    ((i as u32).wrapping_mul(40503u32).wrapping_add(seed)) as f32 / u32::MAX as f32;
                [a, b]
            })
            .collect();
        LandmarkFrame::new(points).unwrap()
    }

    #[test]
    fn three_frame_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.json");
        let track = LandmarkTrack::new("spk", vec![frame(1), frame(2), frame(3)]);
        save_landmark_track(&track, &p).unwrap();
        let back = load_landmark_track(&p).unwrap();
        for (a, b) in track.frames.iter().zip(&back.frames) {
            for (p, q) in a.points.iter().zip(&b.points) {
                assert_eq!(p[0].to_bits(), q[0].to_bits());
                assert_eq!(p[1].to_bits(), q[1].to_bits());
            }
        }
        assert_eq!(back.source_id, "spk");
    }

    #[test]
    fn wrong_point_count_names_216() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        let pts: Vec<[f32; 2]> = vec![[0.5, 0.5]; 215];
        std::fs::write(
            &p,
            serde_json::json!({"source_id": "x", "frames": [pts]}).to_string(),
        )
        .unwrap();
        let err = load_landmark_track(&p).unwrap_err().to_string();
        assert!(err.contains("216"), "{err}");
    }

    #[test]
    fn out_of_range_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        let mut pts: Vec<[f32; 2]> = vec![[0.5, 0.5]; 216];
        pts[7] = [1.5, 0.2];
        std::fs::write(
            &p,
            serde_json::json!({"source_id": "x", "frames": [pts]}).to_string(),
        )
        .unwrap();
        assert!(load_landmark_track(&p)
            .unwrap_err()
            .to_string()
            .contains("point 7"));
    }

    #[test]
    fn empty_file_is_empty_track() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.json");
        std::fs::write(&p, "").unwrap();
        assert!(load_landmark_track(&p).unwrap().is_empty());
        std::fs::write(&p, r#"{"source_id":"a","frames":[]}"#).unwrap();
        assert!(load_landmark_track(&p).unwrap().is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_lossless(coords in proptest::collection::vec(0f32..=1.0, NUM_POINTS * 2)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("t.json");
            let f = LandmarkFrame::new(coords.chunks(2).map(|c| [c[0], c[1]]).collect()).unwrap();
            let track = LandmarkTrack::new("p", vec![f]);
            save_landmark_track(&track, &p).unwrap();
            prop_assert_eq!(load_landmark_track(&p).unwrap(), track);
        }
    }
}
