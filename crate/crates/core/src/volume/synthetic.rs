//! Synthetic volumes: anisotropic Gaussian blobs plus additive Gaussian noise.
//!
//! One blob is designated the target. It is broader and brighter than the
//! distractors and carries a compact core whose center is the ground-truth
//! landmark, so the landmark is the intensity peak of its blob.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Volume;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Total number of blobs, target included.
    pub blobs: usize,
    /// Per-axis standard deviation range (voxels) of distractor blobs.
    pub radius_range: [f64; 2],
    /// Per-axis standard deviation range (voxels) of the target blob.
    pub target_radius_range: [f64; 2],
    /// Peak amplitude range of distractors. The target peaks at 1.
    pub distractor_amplitude: [f64; 2],
    /// Amplitude and width of the compact core marking the landmark.
    pub core_amplitude: f64,
    pub core_radius: f64,
    /// Standard deviation of the additive background noise.
    pub noise: f64,
    /// Index of the blob whose center becomes the landmark.
    pub target_blob: usize,
    pub landmark: String,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            dims: [64, 64, 64],
            spacing: [1.0, 1.0, 1.0],
            blobs: 3,
            radius_range: [3.0, 6.0],
            target_radius_range: [16.0, 22.0],
            distractor_amplitude: [-0.6, 0.4],
            core_amplitude: 0.5,
            core_radius: 1.5,
            noise: 0.01,
            target_blob: 0,
            landmark: "target".to_string(),
            seed: 0,
        }
    }
}

/// One generated blob, axis-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub center: [f64; 3],
    pub sigma: [f64; 3],
    pub amplitude: f64,
}

impl Blob {
    /// Whether `p` lies inside the one-sigma ellipsoid.
    pub fn supports(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|i| ((p[i] - self.center[i]) / self.sigma[i]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 2) {
            return Err(Error::config("dims", "every axis needs at least 2 voxels"));
        }
        let range_ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] > 0.0 && r[0] <= r[1];
        if !range_ok(self.radius_range) {
            return Err(Error::config("radius_range", "need 0 < min <= max"));
        }
        if !range_ok(self.target_radius_range) {
            return Err(Error::config("target_radius_range", "need 0 < min <= max"));
        }
        let [lo, hi] = self.distractor_amplitude;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi && hi < 1.0) {
            return Err(Error::config(
                "distractor_amplitude",
                "need min <= max < 1 (the target peaks at 1)",
            ));
        }
        if self.blobs == 0 {
            return Err(Error::config("blobs", "need at least the target blob"));
        }
        if self.target_blob >= self.blobs {
            return Err(Error::config("target_blob", "index past the blob count"));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::config("noise", "must be finite and non-negative"));
        }
        if !(self.core_amplitude.is_finite() && self.core_amplitude >= 0.0) {
            return Err(Error::config("core_amplitude", "must be finite and non-negative"));
        }
        if !(self.core_radius.is_finite() && self.core_radius > 0.0) {
            return Err(Error::config("core_radius", "must be positive"));
        }
        if self.landmark.is_empty() {
            return Err(Error::config("landmark", "name must not be empty"));
        }
        Ok(())
    }

    /// Deterministically draw the blob layout for this spec.
    pub fn blobs(&self) -> Result<Vec<Blob>> {
        self.validate()?;
        Ok(self.layout(&mut ChaCha8Rng::seed_from_u64(self.seed)))
    }

    fn layout(&self, rng: &mut ChaCha8Rng) -> Vec<Blob> {
        let uniform = |rng: &mut ChaCha8Rng, r: [f64; 2]| {
            if r[0] < r[1] {
                rng.random_range(r[0]..r[1])
            } else {
                r[0]
            }
        };
        // Target in the central half, on an integer voxel.
        let mut center = [0.0; 3];
        for (c, &d) in center.iter_mut().zip(&self.dims) {
            let margin = d / 4;
            let hi = d - 1 - margin;
            *c = rng.random_range(margin..=hi.max(margin)) as f64;
        }
        let target = Blob {
            center,
            sigma: [(); 3].map(|_| uniform(rng, self.target_radius_range)),
            amplitude: 1.0,
        };
        let separation = self.target_radius_range[1] + self.radius_range[1];
        let mut blobs = Vec::with_capacity(self.blobs);
        for k in 0..self.blobs {
            if k == self.target_blob {
                blobs.push(target.clone());
                continue;
            }
            let sigma = [(); 3].map(|_| uniform(rng, self.radius_range));
            let amplitude = uniform(rng, self.distractor_amplitude);
            let mut best = ([0.0; 3], f64::NEG_INFINITY);
            for _ in 0..256 {
                let c = [0, 1, 2].map(|i| rng.random_range(0..self.dims[i]) as f64);
                let d = dist(c, target.center);
                if d > best.1 {
                    best = (c, d);
                }
                if d >= separation {
                    break;
                }
            }
            blobs.push(Blob {
                center: best.0,
                sigma,
                amplitude,
            });
        }
        blobs
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}

/// Separable 1D Gaussian profile along one axis.
fn profile(n: usize, center: f64, sigma: f64) -> Vec<f64> {
    (0..n)
        .map(|i| (-0.5 * ((i as f64 - center) / sigma).powi(2)).exp())
        .collect()
}

/// Generate a volume from `spec`. Bit-identical output for identical specs.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Volume> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let blobs = spec.layout(&mut rng);
    let [nx, ny, nz] = spec.dims;
    let mut field = vec![0.0f64; nx * ny * nz];

    let mut add_separable = |center: [f64; 3], sigma: [f64; 3], amplitude: f64| {
        let px = profile(nx, center[0], sigma[0]);
        let py = profile(ny, center[1], sigma[1]);
        let pz = profile(nz, center[2], sigma[2]);
        for z in 0..nz {
            for y in 0..ny {
                let w = amplitude * pz[z] * py[y];
                let row = &mut field[(z * ny + y) * nx..(z * ny + y + 1) * nx];
                for (v, &fx) in row.iter_mut().zip(&px) {
                    *v += w * fx;
                }
            }
        }
    };
    for b in &blobs {
        add_separable(b.center, b.sigma, b.amplitude);
    }
    let target = &blobs[spec.target_blob];
    if spec.core_amplitude > 0.0 {
        add_separable(target.center, [spec.core_radius; 3], spec.core_amplitude);
    }
    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise).expect("validated noise level");
        for v in field.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    let data = field.into_iter().map(|v| v as f32).collect();
    Volume::new(
        spec.dims,
        spec.spacing,
        data,
        BTreeMap::from([(spec.landmark.clone(), target.center)]),
    )
}
