use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::cloud::{Frame, PointCloud};
use crate::error::{Error, Result};

/// `n` points uniform in the closed unit ball, seeded.
pub fn sample_sphere_points(n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::InvalidArgument("cannot sample zero points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n).map(|_| unit_ball_point(&mut rng)).collect();
    PointCloud::new(points, Frame::Canonical)
}

pub(crate) fn unit_ball_point(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let g = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let norm = g.norm();
        if norm > 1e-12 {
            let r = rng.gen::<f64>().cbrt();
            return g * (r / norm);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_inside_ball() {
        let a = sample_sphere_points(500, 42).unwrap();
        let b = sample_sphere_points(500, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.points().iter().all(|p| p.norm() <= 1.0));
        assert_ne!(a, sample_sphere_points(500, 43).unwrap());
    }

    #[test]
    fn zero_points_is_an_error() {
        assert!(sample_sphere_points(0, 1).is_err());
    }

    #[test]
    fn monte_carlo_mean_is_centred() {
        // Per-axis std of a uniform ball coordinate is sqrt(1/5) ≈ 0.447, so
        // the mean of 1e5 samples has std ≈ 0.0014; 0.02 is > 10 sigma.
        let c = sample_sphere_points(100_000, 7).unwrap();
        let m = c.centroid();
        assert!(m.amax() < 0.02, "mean {m:?}");
        // Radial CDF check: P(|p| <= 0.5) = 1/8.
        let inner = c.points().iter().filter(|p| p.norm() <= 0.5).count() as f64 / 1e5;
        assert!((inner - 0.125).abs() < 0.01);
    }
}
