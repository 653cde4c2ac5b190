//! The 216-point schema: named regions, the pose/mouth split and polyline
//! connectivity. The default table ships in `data/partition216.json`.
//!
//! | region          | indices   | side  |
//! |-----------------|-----------|-------|
//! | `contour_left`  | 0..=9     | upper |
//! | `jaw`           | 10..=49   | lower |
//! | `contour_right` | 50..=59   | upper |
//! | `brow_left`     | 60..=77   | upper |
//! | `brow_right`    | 78..=95   | upper |
//! | `nose_bridge`   | 96..=105  | upper |
//! | `nose_base`     | 106..=119 | upper |
//! | `eye_left`      | 120..=143 | upper |
//! | `eye_right`     | 144..=167 | upper |
//! | `lip_outer`     | 168..=195 | lower, lips |
//! | `lip_inner`     | 196..=215 | lower, lips |
//!
//! The face contour 0..=59 is one open polyline; brows, eyes and lips are
//! closed loops; the nose bridge and nose base are open polylines joined at
//! the nose tip.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::frame::{LandmarkFrame, Point, NUM_POINTS};
use crate::error::{Error, Result};

const DEFAULT_TABLE: &str = include_str!("../../data/partition216.json");

#[derive(Debug, Deserialize)]
struct PartitionFile {
    num_points: usize,
    regions: BTreeMap<String, Vec<usize>>,
    upper: Vec<String>,
    lower: Vec<String>,
    lips: Vec<String>,
    nose_base: String,
    edges: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkPartition {
    pub regions: BTreeMap<String, Vec<usize>>,
    /// Pose landmarks, ascending.
    pub upper: Vec<usize>,
    /// Jaw and lip landmarks, ascending.
    pub lower: Vec<usize>,
    /// Lip landmarks, ascending; a subset of `lower`.
    pub lips: Vec<usize>,
    /// `lower` minus `lips`, ascending.
    pub jaw: Vec<usize>,
    pub nose_base: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
}

impl Default for LandmarkPartition {
    fn default() -> Self {
        Self::from_json(DEFAULT_TABLE).expect("bundled partition table is valid")
    }
}

impl LandmarkPartition {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: PartitionFile = serde_json::from_str(text)?;
        if file.num_points != NUM_POINTS {
            return Err(Error::Invalid(format!(
                "partition declares {} points, expected {NUM_POINTS}",
                file.num_points
            )));
        }
        let gather = |names: &[String]| -> Result<Vec<usize>> {
            let mut out = Vec::new();
            for n in names {
                let r = file
                    .regions
                    .get(n)
                    .ok_or_else(|| Error::Invalid(format!("unknown region `{n}`")))?;
                out.extend_from_slice(r);
            }
            out.sort_unstable();
            Ok(out)
        };
        let upper = gather(&file.upper)?;
        let lower = gather(&file.lower)?;
        let lips = gather(&file.lips)?;
        let nose_base = gather(std::slice::from_ref(&file.nose_base))?;
        let jaw: Vec<usize> = lower
            .iter()
            .copied()
            .filter(|i| lips.binary_search(i).is_err())
            .collect();
        let p = Self {
            regions: file.regions,
            upper,
            lower,
            lips,
            jaw,
            nose_base,
            edges: file.edges.into_iter().map(|[a, b]| (a, b)).collect(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    fn validate(&self) -> Result<()> {
        let mut seen = vec![0u8; NUM_POINTS];
        for &i in self.upper.iter().chain(&self.lower) {
            if i >= NUM_POINTS {
                return Err(Error::Invalid(format!("index {i} out of range")));
            }
            seen[i] += 1;
        }
        if let Some(i) = seen.iter().position(|&c| c != 1) {
            return Err(Error::Invalid(format!(
                "index {i} appears {} times across upper and lower",
                seen[i]
            )));
        }
        if self
            .lips
            .iter()
            .any(|i| self.lower.binary_search(i).is_err())
        {
            return Err(Error::Invalid("lip indices must be lower indices".into()));
        }
        if self
            .edges
            .iter()
            .any(|&(a, b)| a >= NUM_POINTS || b >= NUM_POINTS)
        {
            return Err(Error::Invalid("edge index out of range".into()));
        }
        Ok(())
    }
}

/// Splits a frame into (upper, lower) point lists in ascending index order.
pub fn split_landmarks(f: &LandmarkFrame, p: &LandmarkPartition) -> (Vec<Point>, Vec<Point>) {
    let pick = |idx: &[usize]| idx.iter().map(|&i| f.points[i]).collect();
    (pick(&p.upper), pick(&p.lower))
}

pub fn merge_landmarks(
    upper: &[Point],
    lower: &[Point],
    p: &LandmarkPartition,
) -> Result<LandmarkFrame> {
    if upper.len() != p.upper.len() || lower.len() != p.lower.len() {
        return Err(Error::shape(
            format!("{} upper + {} lower", p.upper.len(), p.lower.len()),
            format!("{} upper + {} lower", upper.len(), lower.len()),
        ));
    }
    let mut points = vec![[0.0; 2]; NUM_POINTS];
    for (&i, &pt) in p.upper.iter().zip(upper) {
        points[i] = pt;
    }
    for (&i, &pt) in p.lower.iter().zip(lower) {
        points[i] = pt;
    }
    LandmarkFrame::new(points)
}
