use nalgebra::Vector3;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Coordinate frame a cloud is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Frame {
    /// Per-tooth local frame: crown along +z, cemento-enamel junction at the origin.
    Canonical,
    /// Jaw (volume) frame, millimetres.
    Global,
}

/// A non-empty, unordered set of finite 3D points in millimetres.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
    frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, frame: Frame) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(p) = points.iter().find(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(format!("point cloud coordinate {p:?}")));
        }
        Ok(Self { points, frame })
    }

    pub fn from_arrays(points: &[[f64; 3]], frame: Frame) -> Result<Self> {
        Self::new(points.iter().map(|p| Vector3::from(*p)).collect(), frame)
    }

    /// Builds a cloud from a row-major `n x 3` buffer.
    pub fn from_flat(flat: &[f64], frame: Frame) -> Result<Self> {
        if flat.len() % 3 != 0 {
            return Err(Error::InvalidArgument(format!(
                "flat coordinate buffer of length {} is not a multiple of 3",
                flat.len()
            )));
        }
        Self::new(
            flat.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect(),
            frame,
        )
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn with_frame(mut self, frame: Frame) -> Self {
        self.frame = frame;
        self
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64
    }

    /// Axis-aligned bounds `(min, max)`, both inclusive.
    pub fn extent(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points[1..] {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    /// Seeded uniform subsample without replacement; returns a clone when
    /// `n >= len`. Selected points keep their original relative order.
    pub fn subsample(&self, n: usize, seed: u64) -> Result<PointCloud> {
        if n == 0 {
            return Err(Error::EmptyCloud);
        }
        if n >= self.len() {
            return Ok(self.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = index::sample(&mut rng, self.len(), n).into_vec();
        idx.sort_unstable();
        Ok(PointCloud {
            points: idx.into_iter().map(|i| self.points[i]).collect(),
            frame: self.frame,
        })
    }

    /// Concatenates two clouds in the same frame.
    pub fn union(&self, other: &PointCloud) -> Result<PointCloud> {
        if self.frame != other.frame {
            return Err(Error::InvalidArgument("cannot merge clouds in different frames".into()));
        }
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        Ok(PointCloud { points, frame: self.frame })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(matches!(PointCloud::new(vec![], Frame::Global), Err(Error::EmptyCloud)));
        let bad = PointCloud::from_arrays(&[[0.0, f64::NAN, 0.0]], Frame::Global);
        assert!(matches!(bad, Err(Error::NonFinite(_))));
    }

    #[test]
    fn subsample_is_seeded() {
        let pts: Vec<[f64; 3]> = (0..100).map(|i| [i as f64, 0.0, 0.0]).collect();
        let c = PointCloud::from_arrays(&pts, Frame::Canonical).unwrap();
        let a = c.subsample(10, 7).unwrap();
        let b = c.subsample(10, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert_eq!(c.subsample(500, 1).unwrap(), c);
    }
}
