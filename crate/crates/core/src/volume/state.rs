use super::{Position, Volume};

/// The three orthogonal planes of a tri-planar observation, in channel order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Plane {
    /// XY at fixed z. Rows run along y, columns along x.
    Axial,
    /// XZ at fixed y. Rows run along z, columns along x.
    Coronal,
    /// YZ at fixed x. Rows run along z, columns along y.
    Sagittal,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Axial, Plane::Coronal, Plane::Sagittal];

    pub fn channel(self) -> usize {
        self as usize
    }
}

/// Stacked axial, coronal and sagittal `m x m` patches around a position,
/// min-max normalized to `[0, 1]` with zeros outside the volume.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    center: Position,
    window: usize,
    /// `3 * m * m` values, channel-major then row-major.
    data: Vec<f32>,
}

impl State {
    pub fn center(&self) -> Position {
        self.center
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// All three channels as one network input.
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn patch(&self, plane: Plane) -> &[f32] {
        let n = self.window * self.window;
        &self.data[plane.channel() * n..(plane.channel() + 1) * n]
    }

    /// Entry at `(row, col)` of one patch.
    pub fn at(&self, plane: Plane, row: usize, col: usize) -> f32 {
        self.patch(plane)[row * self.window + col]
    }
}

/// Offset of patch index 0 from the center. For even `m` the center sits at
/// index `m / 2`.
#[inline]
fn window_start(center: i64, m: usize) -> i64 {
    center - (m / 2) as i64
}

/// Extract the tri-planar observation centered at `q`. Total: positions
/// outside the volume simply observe zero padding.
pub fn extract_state(v: &Volume, q: Position, m: usize) -> State {
    let (lo, hi) = v.intensity_range();
    let scale = if hi > lo { 1.0 / (hi - lo) } else { 0.0 };
    let [nx, ny, nz] = v.dims().map(|d| d as i64);
    let mut data = vec![0.0f32; 3 * m * m];
    let norm = |x: i64, y: i64, z: i64| -> f32 {
        let raw = v.get(x as usize, y as usize, z as usize);
        ((raw - lo) * scale).clamp(0.0, 1.0)
    };
    let inside = |c: i64, n: i64| (0..n).contains(&c);

    let (x0, y0, z0) = (window_start(q[0], m), window_start(q[1], m), window_start(q[2], m));
    let n = m * m;
    // Axial: rows y, cols x, at z = q.z.
    if inside(q[2], nz) {
        let out = &mut data[..n];
        for r in 0..m {
            let y = y0 + r as i64;
            if !inside(y, ny) {
                continue;
            }
            for c in 0..m {
                let x = x0 + c as i64;
                if inside(x, nx) {
                    out[r * m + c] = norm(x, y, q[2]);
                }
            }
        }
    }
    // Coronal: rows z, cols x, at y = q.y.
    if inside(q[1], ny) {
        let out = &mut data[n..2 * n];
        for r in 0..m {
            let z = z0 + r as i64;
            if !inside(z, nz) {
                continue;
            }
            for c in 0..m {
                let x = x0 + c as i64;
                if inside(x, nx) {
                    out[r * m + c] = norm(x, q[1], z);
                }
            }
        }
    }
    // Sagittal: rows z, cols y, at x = q.x.
    if inside(q[0], nx) {
        let out = &mut data[2 * n..];
        for r in 0..m {
            let z = z0 + r as i64;
            if !inside(z, nz) {
                continue;
            }
            for c in 0..m {
                let y = y0 + c as i64;
                if inside(y, ny) {
                    out[r * m + c] = norm(q[0], y, z);
                }
            }
        }
    }
    State {
        center: q,
        window: m,
        data,
    }
}
