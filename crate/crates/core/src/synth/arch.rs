//! Dental arch curve in the occlusal plane with an arc-length table.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::RigidTransform;

/// `s = 2t - 1`, `x = w s`, `y = d (1 - (1 - k) s^2 - k s^4)`.
///
/// `t = 0` is the patient's right end, `t = 1/2` the front (apex) of the
/// arch, where the curve reaches `y = d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchParams {
    pub half_width: f64,
    pub depth: f64,
    pub kappa: f64,
}

impl Default for ArchParams {
    fn default() -> Self {
        Self { half_width: 24.5, depth: 33.0, kappa: 0.3 }
    }
}

const TABLE_SIZE: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct ArchCurve {
    params: ArchParams,
    /// Cumulative arc length at `t = i / TABLE_SIZE`.
    cumulative: Vec<f64>,
}

impl ArchCurve {
    pub fn new(params: ArchParams) -> Result<Self> {
        let ArchParams { half_width, depth, kappa } = params;
        if !(half_width > 0.0 && depth > 0.0 && (0.0..=1.0).contains(&kappa)) {
            return Err(Error::InvalidArgument(format!("invalid arch parameters {params:?}")));
        }
        let mut curve = Self { params, cumulative: Vec::with_capacity(TABLE_SIZE + 1) };
        curve.cumulative.push(0.0);
        let h = 1.0 / TABLE_SIZE as f64;
        let mut acc = 0.0;
        for i in 0..TABLE_SIZE {
            // Simpson's rule on each table interval.
            let t0 = i as f64 * h;
            let speed = |t: f64| curve.derivative(t).norm();
            acc += h / 6.0 * (speed(t0) + 4.0 * speed(t0 + h / 2.0) + speed(t0 + h));
            curve.cumulative.push(acc);
        }
        Ok(curve)
    }

    pub fn params(&self) -> &ArchParams {
        &self.params
    }

    pub fn point(&self, t: f64) -> Vector2<f64> {
        let ArchParams { half_width: w, depth: d, kappa: k } = self.params;
        let s = 2.0 * t - 1.0;
        let s2 = s * s;
        Vector2::new(w * s, d * (1.0 - (1.0 - k) * s2 - k * s2 * s2))
    }

    /// `dc/dt`.
    pub fn derivative(&self, t: f64) -> Vector2<f64> {
        let ArchParams { half_width: w, depth: d, kappa: k } = self.params;
        let s = 2.0 * t - 1.0;
        Vector2::new(2.0 * w, 2.0 * d * (-2.0 * (1.0 - k) * s - 4.0 * k * s * s * s))
    }

    /// Unit tangent in the direction of increasing `t`.
    pub fn tangent(&self, t: f64) -> Vector2<f64> {
        self.derivative(t).normalize()
    }

    /// Unit normal pointing away from the inside of the arch (buccal side).
    pub fn normal(&self, t: f64) -> Vector2<f64> {
        let tg = self.tangent(t);
        Vector2::new(-tg.y, tg.x)
    }

    pub fn length(&self) -> f64 {
        self.cumulative[TABLE_SIZE]
    }

    pub fn arclength_at(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        let f = t * TABLE_SIZE as f64;
        let i = (f.floor() as usize).min(TABLE_SIZE - 1);
        let frac = f - i as f64;
        self.cumulative[i] + frac * (self.cumulative[i + 1] - self.cumulative[i])
    }

    /// Inverse of [`arclength_at`](Self::arclength_at), clamped to `[0, 1]`.
    pub fn t_at_arclength(&self, l: f64) -> f64 {
        if l <= 0.0 {
            return 0.0;
        }
        if l >= self.length() {
            return 1.0;
        }
        let i = self.cumulative.partition_point(|&c| c <= l) - 1;
        let (c0, c1) = (self.cumulative[i], self.cumulative[i + 1]);
        (i as f64 + (l - c0) / (c1 - c0)) / TABLE_SIZE as f64
    }

    /// Rotation whose columns are tangent, buccal normal and +z. Upper
    /// teeth are additionally turned crown-down (half turn about the
    /// tangent).
    pub fn frame_rotation(&self, t: f64, upper: bool) -> Matrix3<f64> {
        let tg = self.tangent(t);
        let n = self.normal(t);
        let r = Matrix3::new(tg.x, n.x, 0.0, tg.y, n.y, 0.0, 0.0, 0.0, 1.0);
        if upper {
            r * Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))
        } else {
            r
        }
    }

    /// Rigid placement of a tooth at parameter `t` with its canonical
    /// origin at height `z`.
    pub fn placement(&self, t: f64, z: f64, upper: bool) -> Result<RigidTransform> {
        let c = self.point(t);
        RigidTransform::new(self.frame_rotation(t, upper), Vector3::new(c.x, c.y, z))
    }

    pub fn polyline(&self, segments: usize) -> Vec<Vector2<f64>> {
        (0..=segments).map(|i| self.point(i as f64 / segments as f64)).collect()
    }
}

/// Distance in the occlusal plane from `(x, y)` to a polyline.
pub(crate) fn polyline_distance(polyline: &[Vector2<f64>], x: f64, y: f64) -> f64 {
    let p = Vector2::new(x, y);
    let mut best = f64::INFINITY;
    for w in polyline.windows(2) {
        let (a, b) = (w[0], w[1]);
        let ab = b - a;
        let s = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
        best = best.min((a + ab * s - p).norm());
    }
    best
}
