//! Tooth shape templates: a superellipsoid crown over one to three tapered
//! cone roots, in the canonical frame (crown toward +z, cemento-enamel
//! junction at z = 0).

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::geom::{FdiTooth, Frame, PointCloud};

/// `|x/a|^e + |y/b|^e + |(z-c)/c|^e <= 1`: the crown sits on z = 0 and
/// reaches z = 2c. `a` is the mesiodistal, `b` the buccolingual semi-axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crown {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub exponent: f64,
}

/// Vertical cone with its base disc at `z = base_z` (inside the crown) and
/// its apex at `z = -length`, both centred on `(x, y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Root {
    pub x: f64,
    pub y: f64,
    pub length: f64,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToothTemplate {
    pub fdi: FdiTooth,
    pub crown: Crown,
    pub roots: Vec<Root>,
    /// Relative standard deviation applied to every size parameter.
    pub jitter: f64,
}

/// Fraction of the crown height at which root bases sit.
const ROOT_BASE: f64 = 0.4;

impl Root {
    fn base_z(&self, crown: &Crown) -> f64 {
        ROOT_BASE * crown.c
    }

    fn height(&self, crown: &Crown) -> f64 {
        self.base_z(crown) + self.length
    }

    fn radius_at(&self, crown: &Crown, z: f64) -> f64 {
        let h = self.height(crown);
        self.radius * (z + self.length) / h
    }

    fn contains(&self, crown: &Crown, p: &Vector3<f64>) -> bool {
        if p.z < -self.length || p.z > self.base_z(crown) {
            return false;
        }
        let r = self.radius_at(crown, p.z);
        let (dx, dy) = (p.x - self.x, p.y - self.y);
        dx * dx + dy * dy <= r * r
    }

    pub fn lateral_area(&self, crown: &Crown) -> f64 {
        let h = self.height(crown);
        std::f64::consts::PI * self.radius * (self.radius * self.radius + h * h).sqrt()
    }

    /// Cone volume, `pi r^2 H / 3`.
    pub fn volume(&self, crown: &Crown) -> f64 {
        std::f64::consts::PI * self.radius * self.radius * self.height(crown) / 3.0
    }
}

impl Crown {
    fn level(&self, p: &Vector3<f64>) -> f64 {
        (p.x / self.a).abs().powf(self.exponent)
            + (p.y / self.b).abs().powf(self.exponent)
            + ((p.z - self.c) / self.c).abs().powf(self.exponent)
    }

    fn contains(&self, p: &Vector3<f64>) -> bool {
        self.level(p) <= 1.0
    }

    /// Point on the surface along direction `u` from the centre.
    fn radial_point(&self, u: &Vector3<f64>) -> Vector3<f64> {
        let f = self.level(&(u + Vector3::new(0.0, 0.0, self.c)));
        let r = f.powf(-1.0 / self.exponent);
        u * r + Vector3::new(0.0, 0.0, self.c)
    }

    /// Outward normal (unnormalized gradient of the level function).
    fn gradient(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let e = self.exponent;
        let g = |v: f64, s: f64| e * (v / s).abs().powf(e - 1.0) * v.signum() / s;
        Vector3::new(g(p.x, self.a), g(p.y, self.b), g(p.z - self.c, self.c))
    }

    /// Area density (per unit solid angle) of the radial parametrization,
    /// `r^2 / cos(angle between ray and normal)`.
    fn radial_area_weight(&self, u: &Vector3<f64>) -> f64 {
        let p = self.radial_point(u);
        let d = p - Vector3::new(0.0, 0.0, self.c);
        let r = d.norm();
        let n = self.gradient(&p);
        let cos = (d.dot(&n) / (r * n.norm())).max(1e-6);
        r * r / cos
    }
}

impl ToothTemplate {
    /// Default template for a tooth, before jitter and scaling.
    pub fn nominal(fdi: FdiTooth) -> Self {
        // (a, b, c, exponent, root count, root length, root radius) per position.
        const TABLE: [(f64, f64, f64, f64, usize, f64, f64); 8] = [
            (3.4, 2.8, 4.2, 2.4, 1, 10.0, 1.5),
            (2.8, 2.6, 3.8, 2.4, 1, 10.0, 1.3),
            (3.2, 3.2, 4.4, 2.2, 1, 13.0, 1.7),
            (3.0, 3.6, 3.6, 2.5, 2, 11.0, 1.2),
            (2.9, 3.5, 3.4, 2.5, 1, 11.0, 1.5),
            (4.3, 4.4, 3.2, 2.8, 3, 10.0, 1.4),
            (4.0, 4.2, 3.0, 2.8, 2, 10.0, 1.5),
            (3.8, 4.0, 2.9, 2.8, 2, 9.0, 1.4),
        ];
        let (mut a, b, c, e, n_roots, length, radius) = TABLE[fdi.position() as usize - 1];
        if !fdi.is_upper() && fdi.is_incisor() {
            a *= 0.8;
        }
        let spots: &[(f64, f64)] = match n_roots {
            1 => &[(0.0, 0.0)],
            2 => &[(-0.4, 0.0), (0.4, 0.0)],
            _ => &[(-0.4, -0.35), (0.4, -0.35), (0.0, 0.45)],
        };
        let roots = spots
            .iter()
            .map(|&(fx, fy)| Root { x: fx * a, y: fy * b, length, radius })
            .collect();
        Self { fdi, crown: Crown { a, b, c, exponent: e }, roots, jitter: 0.05 }
    }

    /// Uniform scale of all lengths.
    pub fn scaled(mut self, s: f64) -> Self {
        let cr = &mut self.crown;
        cr.a *= s;
        cr.b *= s;
        cr.c *= s;
        for r in &mut self.roots {
            r.x *= s;
            r.y *= s;
            r.length *= s;
            r.radius *= s;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let cr = &self.crown;
        for (name, v) in [("a", cr.a), ("b", cr.b), ("c", cr.c)] {
            if !(1.0..=12.0).contains(&v) {
                return Err(Error::Degenerate(format!("tooth {}: crown semi-axis {name} = {v} outside [1, 12] mm", self.fdi)));
            }
        }
        if !(cr.exponent >= 1.0 && cr.exponent.is_finite()) {
            return Err(Error::Degenerate(format!("tooth {}: crown exponent {}", self.fdi, cr.exponent)));
        }
        let n = self.roots.len();
        if !(1..=3).contains(&n) {
            return Err(Error::Degenerate(format!("tooth {}: {n} roots", self.fdi)));
        }
        if self.fdi.is_molar() && n < 2 {
            return Err(Error::Degenerate(format!("molar {} needs at least 2 roots", self.fdi)));
        }
        if self.fdi.is_incisor() && n != 1 {
            return Err(Error::Degenerate(format!("incisor {} needs exactly 1 root", self.fdi)));
        }
        for r in &self.roots {
            if !(r.length > 0.0 && r.radius > 0.0 && r.length.is_finite() && r.radius.is_finite()) {
                return Err(Error::Degenerate(format!("tooth {}: bad root {r:?}", self.fdi)));
            }
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::Degenerate(format!("tooth {}: negative jitter", self.fdi)));
        }
        Ok(())
    }

    /// Multiplies every size parameter by `1 + jitter * N(0,1)`, clamped
    /// to `[0.8, 1.2]`. Draw order is fixed.
    pub fn jittered(&self, rng: &mut impl Rng) -> Self {
        let mut draw = |v: f64| {
            let z: f64 = rng.sample(StandardNormal);
            v * (1.0 + self.jitter * z).clamp(0.8, 1.2)
        };
        let mut t = self.clone();
        t.crown.a = draw(t.crown.a);
        t.crown.b = draw(t.crown.b);
        t.crown.c = draw(t.crown.c);
        for r in &mut t.roots {
            r.length = draw(r.length);
            r.radius = draw(r.radius);
        }
        t
    }

    /// Mesiodistal width of the crown.
    pub fn width(&self) -> f64 {
        2.0 * self.crown.a
    }

    /// Lowest root apex (negative z).
    pub fn apex_z(&self) -> f64 {
        -self.roots.iter().map(|r| r.length).fold(0.0, f64::max)
    }

    /// Top of the crown.
    pub fn top_z(&self) -> f64 {
        2.0 * self.crown.c
    }

    /// Canonical bounding box `(lo, hi)`.
    pub fn bbox(&self) -> (Vector3<f64>, Vector3<f64>) {
        let cr = &self.crown;
        let mut lo = Vector3::new(-cr.a, -cr.b, self.apex_z());
        let mut hi = Vector3::new(cr.a, cr.b, self.top_z());
        for r in &self.roots {
            lo.x = lo.x.min(r.x - r.radius);
            lo.y = lo.y.min(r.y - r.radius);
            hi.x = hi.x.max(r.x + r.radius);
            hi.y = hi.y.max(r.y + r.radius);
        }
        (lo, hi)
    }

    /// Occupancy test in the canonical frame.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        self.crown.contains(p) || self.roots.iter().any(|r| r.contains(&self.crown, p))
    }

    /// Analytic crown volume `8abc Γ(1+1/e)^3 / Γ(1+3/e)`.
    pub fn crown_volume(&self) -> f64 {
        let cr = &self.crown;
        let e = cr.exponent;
        8.0 * cr.a * cr.b * cr.c * gamma(1.0 + 1.0 / e).powi(3) / gamma(1.0 + 3.0 / e)
    }

    /// `n` points spread approximately uniformly by area over the surface
    /// of the union of crown and roots.
    pub fn surface_points(&self, n: usize, rng: &mut impl Rng) -> Result<PointCloud> {
        self.validate()?;
        if n == 0 {
            return Err(Error::InvalidArgument("surface point count must be >= 1".into()));
        }
        let crown = &self.crown;
        let (crown_area, w_max) = self.crown_area_estimate();
        let mut areas = vec![crown_area];
        areas.extend(self.roots.iter().map(|r| r.lateral_area(crown)));
        let total: f64 = areas.iter().sum();

        let mut pts = Vec::with_capacity(n);
        let mut guard = 0usize;
        while pts.len() < n {
            guard += 1;
            if guard > 1000 * n + 100_000 {
                return Err(Error::Degenerate(format!("tooth {}: surface sampling stalled", self.fdi)));
            }
            let mut pick = rng.gen::<f64>() * total;
            let mut comp = 0;
            while comp + 1 < areas.len() && pick >= areas[comp] {
                pick -= areas[comp];
                comp += 1;
            }
            let p = if comp == 0 {
                let u = unit_direction(rng);
                let w = crown.radial_area_weight(&u);
                if rng.gen::<f64>() * w_max > w {
                    continue;
                }
                crown.radial_point(&u)
            } else {
                let r = &self.roots[comp - 1];
                let h = r.height(crown);
                // Distance from the apex with density proportional to radius.
                let s = rng.gen::<f64>().sqrt();
                let theta = rng.gen::<f64>() * std::f64::consts::TAU;
                let z = -r.length + s * h;
                let rad = r.radius * s;
                Vector3::new(r.x + rad * theta.cos(), r.y + rad * theta.sin(), z)
            };
            let inside_other = (comp != 0 && crown.level(&p) < 1.0 - 1e-9)
                || self.roots.iter().enumerate().any(|(k, r)| {
                    k + 1 != comp && r.contains(crown, &p) && strictly_inside_root(r, crown, &p)
                });
            if !inside_other {
                pts.push(p);
            }
        }
        PointCloud::new(pts, Frame::Canonical)
    }

    /// Monte-Carlo crown area and an upper bound for the radial weight.
    fn crown_area_estimate(&self) -> (f64, f64) {
        // Fixed Fibonacci directions: deterministic and independent of the
        // caller's random stream.
        let k = 4096;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let mut sum = 0.0;
        let mut max: f64 = 0.0;
        for i in 0..k {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / k as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let u = Vector3::new(r * phi.cos(), r * phi.sin(), z);
            let w = self.crown.radial_area_weight(&u);
            sum += w;
            max = max.max(w);
        }
        (4.0 * std::f64::consts::PI * sum / k as f64, max * 1.25)
    }
}

fn strictly_inside_root(r: &Root, crown: &Crown, p: &Vector3<f64>) -> bool {
    let rad = r.radius_at(crown, p.z);
    let (dx, dy) = (p.x - r.x, p.y - r.y);
    (dx * dx + dy * dy).sqrt() < rad - 1e-9 && p.z < r.base_z(crown) - 1e-9
}

fn unit_direction(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        let n: f64 = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}
