use nalgebra::{Matrix3, Vector3};

use super::cloud::{Frame, PointCloud};
use crate::error::{Error, Result};

const ORTHO_TOL: f64 = 1e-9;

/// Proper rigid motion `p -> R p + t` (millimetres).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("rigid transform".into()));
        }
        let ortho_err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho_err > ORTHO_TOL || (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidArgument(format!(
                "rotation is not proper orthonormal (|RtR - I| = {ortho_err:e}, det = {det})"
            )));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation: t }
    }

    /// Rotation of `angle` radians about the unit axis `axis`.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Result<Self> {
        let unit = nalgebra::Unit::try_new(axis, 1e-12)
            .ok_or_else(|| Error::InvalidArgument("rotation axis has zero length".into()))?;
        let r = nalgebra::Rotation3::from_axis_angle(&unit, angle);
        Self::new(*r.matrix(), translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn compose(&self, first: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }

    /// `[R | t]` as 12 numbers, row-major.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }

    pub fn from_row_major(m: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        Self::new(rotation, Vector3::new(m[3], m[7], m[11]))
    }
}

/// Maps a canonical cloud into the global frame.
pub fn apply_transform(cloud: &PointCloud, t: &RigidTransform) -> PointCloud {
    let pts = cloud.points().iter().map(|p| t.apply_point(p)).collect();
    PointCloud::new(pts, Frame::Global).expect("rigid image of a valid cloud is valid")
}

/// Maps a global cloud back into the canonical frame of `t`.
pub fn to_canonical(cloud: &PointCloud, t: &RigidTransform) -> PointCloud {
    let inv = t.inverse();
    let pts = cloud.points().iter().map(|p| inv.apply_point(p)).collect();
    PointCloud::new(pts, Frame::Canonical).expect("rigid image of a valid cloud is valid")
}

/// Least-squares proper rigid transform taking `src[i]` onto `dst[i]`.
pub fn kabsch(src: &PointCloud, dst: &PointCloud) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::SizeMismatch { left: src.len(), right: dst.len() });
    }
    if src.len() < 3 {
        return Err(Error::Degenerate(format!("kabsch needs >= 3 correspondences, got {}", src.len())));
    }
    let cs = src.centroid();
    let cd = dst.centroid();
    let mut h = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (s, d) in src.points().iter().zip(dst.points()) {
        let a = s - cs;
        h += a * (d - cd).transpose();
        spread += a * a.transpose();
    }
    // Rank of the centred source configuration; collinear or coincident
    // points leave the rotation about the line undetermined.
    let sv = spread.symmetric_eigenvalues();
    let mut ev: Vec<f64> = sv.iter().map(|v| v.max(0.0)).collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if ev[0] <= f64::MIN_POSITIVE || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::Degenerate("source points are collinear or coincident".into()));
    }

    let svd = h.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Degenerate("SVD failed".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Degenerate("SVD failed".into()))?;
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = v * correction * u.transpose();
    let translation = cd - rotation * cs;
    RigidTransform::new(rotation, translation)
}

/// Sum of squared residuals `Σ |T(src_i) - dst_i|²`.
pub fn residual(t: &RigidTransform, src: &PointCloud, dst: &PointCloud) -> f64 {
    src.points()
        .iter()
        .zip(dst.points())
        .map(|(s, d)| (t.apply_point(s) - d).norm_squared())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::sample_sphere_points;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random_transform(rng: &mut impl Rng) -> RigidTransform {
        let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let t = Vector3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        RigidTransform::from_axis_angle(axis, rng.gen_range(-3.1..3.1), t).unwrap()
    }

    fn max_dev(a: &PointCloud, b: &PointCloud) -> f64 {
        a.points().iter().zip(b.points()).map(|(p, q)| (p - q).amax()).fold(0.0, f64::max)
    }

    #[test]
    fn identity_for_equal_clouds() {
        let c = sample_sphere_points(20, 3).unwrap();
        let t = kabsch(&c, &c).unwrap();
        assert!((t.rotation() - Matrix3::identity()).amax() < 1e-12);
        assert!(t.translation().amax() < 1e-12);
    }

    #[test]
    fn recovers_quarter_turn_about_z() {
        let truth = RigidTransform::from_axis_angle(Vector3::z(), FRAC_PI_2, Vector3::new(1.0, 2.0, 3.0)).unwrap();
        let src = sample_sphere_points(30, 11).unwrap();
        let dst = apply_transform(&src, &truth);
        let est = kabsch(&src, &dst).unwrap();
        assert!((est.rotation() - truth.rotation()).amax() < 1e-9);
        assert!((est.translation() - truth.translation()).amax() < 1e-9);
        let expected_r = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((est.rotation() - expected_r).amax() < 1e-9);
    }

    #[test]
    fn corrects_reflections() {
        // Mirror image: the best proper rotation must still have det +1.
        let src = sample_sphere_points(25, 5).unwrap();
        let mirrored: Vec<Vector3<f64>> = src.points().iter().map(|p| Vector3::new(-p.x, p.y, p.z)).collect();
        let dst = PointCloud::new(mirrored, Frame::Global).unwrap();
        let t = kabsch(&src, &dst).unwrap();
        assert!((t.rotation().determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn beats_random_search_on_noisy_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let truth = random_transform(&mut rng);
        let src = sample_sphere_points(40, 17).unwrap();
        let noisy: Vec<Vector3<f64>> = apply_transform(&src, &truth)
            .points()
            .iter()
            .map(|p| p + Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)))
            .collect();
        let dst = PointCloud::new(noisy, Frame::Global).unwrap();
        let best = residual(&kabsch(&src, &dst).unwrap(), &src, &dst);
        for _ in 0..100 {
            let candidate = random_transform(&mut rng);
            assert!(best <= residual(&candidate, &src, &dst) + 1e-12);
        }
        // Also no worse than small perturbations of the true motion.
        for _ in 0..100 {
            let small = RigidTransform::from_axis_angle(
                Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.0),
                rng.gen_range(-0.02..0.02),
                Vector3::new(rng.gen_range(-0.02..0.02), 0.0, 0.0),
            )
            .unwrap();
            assert!(best <= residual(&small.compose(&truth), &src, &dst) + 1e-12);
        }
    }

    #[test]
    fn errors() {
        let a = sample_sphere_points(5, 1).unwrap();
        let b = sample_sphere_points(6, 1).unwrap();
        assert!(matches!(kabsch(&a, &b), Err(Error::SizeMismatch { .. })));
        let line = PointCloud::from_arrays(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]], Frame::Global).unwrap();
        assert!(matches!(kabsch(&line, &line), Err(Error::Degenerate(_))));
    }

    #[test]
    fn translation_and_identity_application() {
        let c = PointCloud::from_arrays(&[[0.0, 0.0, 0.0]], Frame::Canonical).unwrap();
        let moved = apply_transform(&c, &RigidTransform::from_translation(Vector3::new(1.0, 0.0, 0.0)));
        assert_eq!(moved.points()[0], Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(moved.frame(), Frame::Global);
        let same = apply_transform(&c, &RigidTransform::identity());
        assert_eq!(same.points(), c.points());
    }

    #[test]
    fn row_major_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_transform(&mut rng);
        let back = RigidTransform::from_row_major(&t.to_row_major()).unwrap();
        assert_eq!(t, back);
        let mut bad = t.to_row_major();
        bad[0] *= -1.0;
        assert!(RigidTransform::from_row_major(&bad).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_composition_and_isometry(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t1 = random_transform(&mut rng);
            let t2 = random_transform(&mut rng);
            let c = sample_sphere_points(16, seed).unwrap();

            let back = to_canonical(&apply_transform(&c, &t1), &t1);
            prop_assert!(max_dev(&back, &c) <= 1e-12 * 16.0);
            prop_assert_eq!(back.frame(), Frame::Canonical);

            let seq = apply_transform(&apply_transform(&c, &t1), &t2);
            let composed = apply_transform(&c, &t2.compose(&t1));
            prop_assert!(max_dev(&seq, &composed) <= 1e-12 * 16.0);

            let moved = apply_transform(&c, &t1);
            for i in 0..c.len() {
                for j in 0..c.len() {
                    let d0 = (c.points()[i] - c.points()[j]).norm();
                    let d1 = (moved.points()[i] - moved.points()[j]).norm();
                    prop_assert!((d0 - d1).abs() <= 1e-12 * 8.0);
                }
            }

            let est = kabsch(&c, &moved).unwrap();
            prop_assert!((est.rotation() - t1.rotation()).amax() <= 1e-9);
            prop_assert!((est.translation() - t1.translation()).amax() <= 1e-9);
        }
    }
}
