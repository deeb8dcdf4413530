//! Scalar volumes, synthetic generation, file I/O and observation extraction.

mod io;
mod state;
mod synthetic;

use std::collections::BTreeMap;

pub use io::{decode_volume, load_volume, read_volume, save_volume, write_volume};
pub use state::{extract_state, Plane, State};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use crate::{Error, Result};

/// Integer voxel position. Signed so that moves past a face can be expressed
/// before clamping.
pub type Position = [i64; 3];

/// A dense 3D intensity grid stored x-fastest, then y, then z.
///
/// Landmarks are voxel coordinates. Spacing (mm per voxel) is only used to
/// convert localization errors to millimetres.
#[derive(Clone, Debug)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<f32>,
    landmarks: BTreeMap<String, [f64; 3]>,
    min: f32,
    max: f32,
}

impl PartialEq for Volume {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self.spacing == other.spacing
            && self.landmarks == other.landmarks
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Volume {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        data: Vec<f32>,
        landmarks: BTreeMap<String, [f64; 3]>,
    ) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::config("dims", "every axis needs at least one voxel"));
        }
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::config("spacing", "must be finite and positive"));
        }
        let len = dims[0]
            .checked_mul(dims[1])
            .and_then(|n| n.checked_mul(dims[2]))
            .ok_or_else(|| Error::config("dims", "voxel count overflows"))?;
        if data.len() != len {
            return Err(Error::config(
                "data",
                format!("expected {len} voxels, got {}", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::config("data", format!("non-finite intensity at index {i}")));
        }
        for (name, p) in &landmarks {
            for axis in 0..3 {
                let hi = (dims[axis] - 1) as f64;
                if !p[axis].is_finite() || p[axis] < 0.0 || p[axis] > hi {
                    return Err(Error::config(
                        format!("landmarks.{name}"),
                        format!("coordinate {} outside [0, {hi}]", p[axis]),
                    ));
                }
            }
        }
        let (min, max) = data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        Ok(Volume {
            dims,
            spacing,
            data,
            landmarks,
            min,
            max,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn landmarks(&self) -> &BTreeMap<String, [f64; 3]> {
        &self.landmarks
    }

    pub fn landmark(&self, name: &str) -> Option<[f64; 3]> {
        self.landmarks.get(name).copied()
    }

    /// The first landmark in name order. Synthetic volumes carry exactly one.
    pub fn primary_landmark(&self) -> Option<(&str, [f64; 3])> {
        self.landmarks.iter().next().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn contains(&self, q: Position) -> bool {
        (0..3).all(|i| q[i] >= 0 && (q[i] as usize) < self.dims[i])
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    /// Raw intensity at `q`, or `None` outside the grid.
    pub fn sample(&self, q: Position) -> Option<f32> {
        self.contains(q)
            .then(|| self.get(q[0] as usize, q[1] as usize, q[2] as usize))
    }

    /// Intensity range used for min-max normalization of observations.
    pub fn intensity_range(&self) -> (f32, f32) {
        (self.min, self.max)
    }

    /// Returns the volume with every landmark replaced by the single given one.
    pub fn with_landmark(mut self, name: &str, p: [f64; 3]) -> Result<Self> {
        self.landmarks = BTreeMap::from([(name.to_string(), p)]);
        Volume::new(self.dims, self.spacing, self.data, self.landmarks)
    }
}

/// Clamp a position into the grid, axis by axis.
pub fn clamp_position(q: Position, dims: [usize; 3]) -> Position {
    let mut out = q;
    for i in 0..3 {
        out[i] = q[i].clamp(0, dims[i] as i64 - 1);
    }
    out
}
