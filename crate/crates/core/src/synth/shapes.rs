use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

const EPS: f64 = 1e-9;

/// Axis-aligned box or sphere, in world meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Primitive {
    Box { center: [f64; 3], size: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
}

impl Primitive {
    pub fn center(&self) -> Vector3<f64> {
        match self {
            Primitive::Box { center, .. } | Primitive::Sphere { center, .. } => Vector3::from(*center),
        }
    }

    pub fn is_valid(&self) -> bool {
        match self {
            Primitive::Box { center, size } => {
                center.iter().all(|x| x.is_finite()) && size.iter().all(|s| *s > 0.0 && s.is_finite())
            }
            Primitive::Sphere { center, radius } => {
                center.iter().all(|x| x.is_finite()) && *radius > 0.0 && radius.is_finite()
            }
        }
    }

    fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        match self {
            Primitive::Box { center, size } => {
                let c = Vector3::from(*center);
                let h = Vector3::from(*size) / 2.0;
                (c - h, c + h)
            }
            Primitive::Sphere { center, radius } => {
                let c = Vector3::from(*center);
                let r = Vector3::repeat(*radius);
                (c - r, c + r)
            }
        }
    }

    /// Nearest hit distance `t > 0` along `origin + t·dir`. `t` is measured in
    /// units of `dir`, so a direction with unit camera-z gives z-depth.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Primitive::Box { .. } => {
                let (lo, hi) = self.bounds();
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for i in 0..3 {
                    if dir[i].abs() < 1e-15 {
                        if origin[i] < lo[i] || origin[i] > hi[i] {
                            return None;
                        }
                        continue;
                    }
                    let a = (lo[i] - origin[i]) / dir[i];
                    let b = (hi[i] - origin[i]) / dir[i];
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                (t0 <= t1 && t0 > 0.0).then_some(t0)
            }
            Primitive::Sphere { center, radius } => {
                let oc = origin - Vector3::from(*center);
                let a = dir.norm_squared();
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let t = (-b - disc.sqrt()) / a;
                (t > 0.0).then_some(t)
            }
        }
    }

    /// Closed containment test with a small tolerance.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        match self {
            Primitive::Box { .. } => {
                let (lo, hi) = self.bounds();
                (0..3).all(|i| p[i] >= lo[i] - EPS && p[i] <= hi[i] + EPS)
            }
            Primitive::Sphere { center, radius } => (p - Vector3::from(*center)).norm() <= radius + EPS,
        }
    }

    /// Whether the interiors intersect; touching surfaces do not count.
    pub fn overlaps(&self, other: &Primitive) -> bool {
        match (self, other) {
            (Primitive::Box { .. }, Primitive::Box { .. }) => {
                let (a0, a1) = self.bounds();
                let (b0, b1) = other.bounds();
                (0..3).all(|i| a0[i] < b1[i] - EPS && b0[i] < a1[i] - EPS)
            }
            (Primitive::Sphere { center: c1, radius: r1 }, Primitive::Sphere { center: c2, radius: r2 }) => {
                (Vector3::from(*c1) - Vector3::from(*c2)).norm() < r1 + r2 - EPS
            }
            (Primitive::Box { .. }, Primitive::Sphere { center, radius }) => {
                let (lo, hi) = self.bounds();
                let c = Vector3::from(*center);
                let closest = Vector3::from_fn(|i, _| c[i].clamp(lo[i], hi[i]));
                (closest - c).norm() < radius - EPS
            }
            (Primitive::Sphere { .. }, Primitive::Box { .. }) => other.overlaps(self),
        }
    }

    /// Surface samples roughly `spacing` apart, in a fixed order.
    pub fn sample_surface(&self, spacing: f64) -> Vec<Vector3<f64>> {
        let mut out = Vec::new();
        match self {
            Primitive::Box { .. } => {
                let (lo, hi) = self.bounds();
                for axis in 0..3 {
                    let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
                    let na = ((hi[a] - lo[a]) / spacing).ceil().max(1.0) as usize;
                    let nb = ((hi[b] - lo[b]) / spacing).ceil().max(1.0) as usize;
                    for face in [lo[axis], hi[axis]] {
                        for i in 0..na {
                            for j in 0..nb {
                                let mut p = Vector3::zeros();
                                p[axis] = face;
                                p[a] = lo[a] + (i as f64 + 0.5) * (hi[a] - lo[a]) / na as f64;
                                p[b] = lo[b] + (j as f64 + 0.5) * (hi[b] - lo[b]) / nb as f64;
                                out.push(p);
                            }
                        }
                    }
                }
            }
            Primitive::Sphere { center, radius } => {
                // Fibonacci lattice.
                let c = Vector3::from(*center);
                let n = (4.0 * std::f64::consts::PI * radius * radius / (spacing * spacing)).ceil().max(1.0) as usize;
                let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
                for i in 0..n {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = golden * i as f64;
                    out.push(c + Vector3::new(r * phi.cos(), r * phi.sin(), z) * *radius);
                }
            }
        }
        out
    }

    /// Distance from `p` to the surface.
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        match self {
            Primitive::Sphere { center, radius } => ((p - Vector3::from(*center)).norm() - radius).abs(),
            Primitive::Box { .. } => {
                let (lo, hi) = self.bounds();
                let c = (lo + hi) / 2.0;
                let h = (hi - lo) / 2.0;
                let q = (p - c).abs() - h;
                let outside = q.map(|x| x.max(0.0)).norm();
                let inside = q.max().min(0.0);
                (outside + inside).abs()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(cx: f64) -> Primitive {
        Primitive::Box { center: [cx, 0.0, 0.0], size: [1.0, 1.0, 1.0] }
    }

    #[test]
    fn box_ray_hits_near_face() {
        let b = Primitive::Box { center: [0.0, 0.0, 2.5], size: [2.0, 2.0, 1.0] };
        let t = b.intersect(&Vector3::zeros(), &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(t, 2.0);
        let t = b.intersect(&Vector3::zeros(), &Vector3::new(0.1, 0.0, 1.0)).unwrap();
        assert!((t - 2.0).abs() < 1e-15);
        assert!(b.intersect(&Vector3::zeros(), &Vector3::new(0.0, 0.0, -1.0)).is_none());
    }

    #[test]
    fn sphere_ray() {
        let s = Primitive::Sphere { center: [0.0, 0.0, 3.0], radius: 0.5 };
        assert!((s.intersect(&Vector3::zeros(), &Vector3::z()).unwrap() - 2.5).abs() < 1e-12);
        assert!(s.intersect(&Vector3::zeros(), &Vector3::new(1.0, 0.0, 1.0)).is_none());
    }

    #[test]
    fn overlap_rules() {
        assert!(!unit_box(0.0).overlaps(&unit_box(1.0)));
        assert!(unit_box(0.0).overlaps(&unit_box(0.9)));
        let s = Primitive::Sphere { center: [1.5, 0.0, 0.0], radius: 1.0 };
        assert!(!unit_box(0.0).overlaps(&s));
        assert!(s.overlaps(&unit_box(0.1)));
        let s2 = Primitive::Sphere { center: [3.3, 0.0, 0.0], radius: 0.9 };
        assert!(s.overlaps(&s2));
    }

    #[test]
    fn samples_lie_on_surface() {
        for p in [unit_box(0.3), Primitive::Sphere { center: [0.0, 1.0, 0.0], radius: 0.4 }] {
            let pts = p.sample_surface(0.05);
            assert!(pts.len() > 100);
            assert!(pts.iter().all(|q| p.surface_distance(q) < 1e-9));
        }
    }
}
