use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{centroid, LabeledCloud, Landmark, Vec3};

/// Structure names in label order.
pub const STRUCTURES: [&str; 5] = ["tympanic_membrane", "malleus", "incus", "stapes", "ear_canal"];

pub fn structure_id(cloud: &LabeledCloud, name: &str) -> Option<usize> {
    cloud.structure_names().iter().position(|n| n == name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateConfig {
    /// Points per structure, in [`STRUCTURES`] order.
    pub points: [usize; 5],
    /// Uniform scale applied to the nominal anatomy (mm per unit).
    pub scale: f64,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        TemplateConfig {
            points: [800, 500, 450, 300, 1000],
            scale: 1.0,
        }
    }
}

/// A surface patch that can be sampled uniformly by area.
enum Surface {
    /// Cylinder with hemispherical caps.
    Capsule { a: Vec3, b: Vec3, radius: f64 },
    /// Cone from a circular rim in the z = 0 plane to an apex.
    Cone { radius: f64, apex: Vec3 },
    /// Both faces of a thin elliptic plate perpendicular to z.
    Plate { center: Vec3, semi: (f64, f64), thickness: f64 },
    /// Open cylinder about the z axis with an angular gap and a wavy
    /// lateral edge.
    Canal { radius: f64, z_lateral: f64, z_medial: f64, gap: f64 },
}

impl Surface {
    fn area(&self) -> f64 {
        match *self {
            Surface::Capsule { a, b, radius } => {
                2.0 * PI * radius * (b - a).norm() + 4.0 * PI * radius * radius
            }
            Surface::Cone { radius, apex } => {
                // Area of an oblique cone, by numerical integration over the rim.
                let n = 256;
                (0..n)
                    .map(|i| {
                        let t0 = 2.0 * PI * i as f64 / n as f64;
                        let t1 = 2.0 * PI * (i + 1) as f64 / n as f64;
                        let p0 = Vec3::new(radius * t0.cos(), radius * t0.sin(), 0.0);
                        let p1 = Vec3::new(radius * t1.cos(), radius * t1.sin(), 0.0);
                        0.5 * (p0 - apex).cross(&(p1 - apex)).norm()
                    })
                    .sum()
            }
            Surface::Plate {
                semi, thickness, ..
            } => 2.0 * PI * semi.0 * semi.1 + PI * (semi.0 + semi.1) * thickness,
            Surface::Canal {
                radius,
                z_lateral,
                z_medial,
                gap,
            } => (2.0 * PI - gap) * radius * (z_medial - z_lateral),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec3 {
        match *self {
            Surface::Capsule { a, b, radius } => {
                let axis = b - a;
                let len = axis.norm();
                let dir = axis / len;
                let (e1, e2) = orthonormal_basis(&dir);
                let side = 2.0 * PI * radius * len;
                let caps = 4.0 * PI * radius * radius;
                if rng.random::<f64>() * (side + caps) < side {
                    let t: f64 = rng.random();
                    let phi = rng.random::<f64>() * 2.0 * PI;
                    a + dir * (t * len) + (e1 * phi.cos() + e2 * phi.sin()) * radius
                } else {
                    let v = random_unit(rng);
                    let end = if v.dot(&dir) >= 0.0 { b } else { a };
                    end + v * radius
                }
            }
            Surface::Cone { radius, apex } => {
                // Area-uniform along the generator: density grows towards the rim.
                let s = 1.0 - rng.random::<f64>().sqrt();
                let t = rng.random::<f64>() * 2.0 * PI;
                let rim = Vec3::new(radius * t.cos(), radius * t.sin(), 0.0);
                rim * (1.0 - s) + apex * s
            }
            Surface::Plate {
                center,
                semi,
                thickness,
            } => {
                let faces = 2.0 * PI * semi.0 * semi.1;
                let rim = PI * (semi.0 + semi.1) * thickness;
                let t = rng.random::<f64>() * 2.0 * PI;
                if rng.random::<f64>() * (faces + rim) < faces {
                    let r = rng.random::<f64>().sqrt();
                    let z = if rng.random::<bool>() { 0.5 } else { -0.5 } * thickness;
                    center + Vec3::new(semi.1 * r * t.cos(), semi.0 * r * t.sin(), z)
                } else {
                    let z = (rng.random::<f64>() - 0.5) * thickness;
                    center + Vec3::new(semi.1 * t.cos(), semi.0 * t.sin(), z)
                }
            }
            Surface::Canal {
                radius,
                z_lateral,
                z_medial,
                gap,
            } => loop {
                let t = gap / 2.0 + rng.random::<f64>() * (2.0 * PI - gap);
                let z = z_lateral + rng.random::<f64>() * (z_medial - z_lateral);
                let edge = z_lateral + 0.6 * (1.0 + (2.0 * t).sin());
                if z >= edge {
                    break Vec3::new(radius * t.cos(), radius * t.sin(), z);
                }
            },
        }
    }

    /// Outward direction used to apply relief.
    fn normal(&self, p: &Vec3) -> Vec3 {
        match *self {
            Surface::Canal { .. } => Vec3::new(p.x, p.y, 0.0).normalize(),
            _ => Vec3::z(),
        }
    }

    /// True when `p` lies strictly inside the solid bounded by this surface.
    fn contains(&self, p: &Vec3) -> bool {
        match *self {
            Surface::Capsule { a, b, radius } => segment_distance(p, &a, &b) < radius * 0.999,
            _ => false,
        }
    }
}

fn segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn orthonormal_basis(dir: &Vec3) -> (Vec3, Vec3) {
    let helper = if dir.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = dir.cross(&helper).normalize();
    (e1, dir.cross(&e1))
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    let z: f64 = rng.random::<f64>() * 2.0 - 1.0;
    let t = rng.random::<f64>() * 2.0 * PI;
    let r = (1.0 - z * z).sqrt();
    Vec3::new(r * t.cos(), r * t.sin(), z)
}

fn v(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3::new(x, y, z)
}

/// Smooth surface relief: Gaussian bumps displacing points along a normal.
struct Relief {
    bumps: Vec<(Vec3, f64, f64)>,
}

impl Relief {
    /// `count` bumps on `surface`, from a fixed stream so the nominal
    /// anatomy does not depend on the template seed.
    fn on(surface: &Surface, count: usize, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + stream);
        let bumps = (0..count)
            .map(|_| {
                let c = surface.sample(&mut rng);
                let amp = rng.random_range(0.2..0.45) * if rng.random::<bool>() { 1.0 } else { -1.0 };
                let width = rng.random_range(0.6..1.1);
                (c, amp, width)
            })
            .collect();
        Relief { bumps }
    }

    fn offset(&self, p: &Vec3) -> f64 {
        self.bumps
            .iter()
            .map(|(c, a, w)| a * (-(p - c).norm_squared() / (2.0 * w * w)).exp())
            .sum()
    }
}

/// Nominal anatomy in millimetres. The ear canal runs along +z towards the
/// membrane, which closes it at z = 0; the ossicles sit medially (z > 0).
fn anatomy() -> [Vec<Surface>; 5] {
    let umbo = v(0.0, -0.5, 1.4);
    [
        vec![Surface::Cone {
            radius: 3.5,
            apex: umbo,
        }],
        vec![
            Surface::Capsule {
                a: umbo + v(0.0, 0.0, 0.32),
                b: v(0.0, 2.6, 0.75),
                radius: 0.3,
            },
            Surface::Capsule {
                a: v(0.0, 2.6, 0.75),
                b: v(0.3, 4.2, 2.3),
                radius: 0.75,
            },
            Surface::Capsule {
                a: v(0.0, 2.2, 0.75),
                b: v(-0.5, 2.4, 0.35),
                radius: 0.22,
            },
        ],
        vec![
            Surface::Capsule {
                a: v(0.7, 4.4, 3.05),
                b: v(1.3, 4.6, 3.9),
                radius: 0.72,
            },
            Surface::Capsule {
                a: v(1.3, 4.3, 3.9),
                b: v(1.5, 1.7, 4.35),
                radius: 0.28,
            },
            Surface::Capsule {
                a: v(1.3, 4.9, 3.9),
                b: v(1.6, 5.4, 4.7),
                radius: 0.25,
            },
        ],
        vec![
            Surface::Capsule {
                a: v(1.5, 1.6, 4.5),
                b: v(1.5, 1.5, 4.9),
                radius: 0.3,
            },
            Surface::Capsule {
                a: v(1.5, 1.45, 4.95),
                b: v(1.5, 0.6, 5.95),
                radius: 0.14,
            },
            Surface::Capsule {
                a: v(1.5, 1.55, 4.95),
                b: v(1.5, 2.4, 5.95),
                radius: 0.14,
            },
            Surface::Plate {
                center: v(1.5, 1.5, 6.1),
                semi: (1.4, 0.6),
                thickness: 0.2,
            },
        ],
        vec![Surface::Canal {
            radius: 3.8,
            z_lateral: -4.1,
            z_medial: -0.3,
            gap: 70f64.to_radians(),
        }],
    ]
}

fn sample_structure(
    surfaces: &[Surface],
    relief: Option<&Relief>,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec3> {
    let areas: Vec<f64> = surfaces.iter().map(Surface::area).collect();
    let total: f64 = areas.iter().sum();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut pick = rng.random::<f64>() * total;
        let mut idx = 0;
        while idx + 1 < areas.len() && pick >= areas[idx] {
            pick -= areas[idx];
            idx += 1;
        }
        let p = surfaces[idx].sample(rng);
        let buried = surfaces
            .iter()
            .enumerate()
            .any(|(j, s)| j != idx && s.contains(&p));
        if !buried {
            out.push(match relief {
                Some(r) => p + surfaces[idx].normal(&p) * r.offset(&p),
                None => p,
            });
        }
    }
    out
}

/// Extremal points of a structure along its principal axes: for each axis,
/// the points with minimum and maximum projection.
fn extremal_landmarks(points: &[Vec3]) -> Vec<Vec3> {
    let c = centroid(points);
    let mut cov = nalgebra::Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let mut out: Vec<Vec3> = Vec::new();
    for k in 0..3 {
        let axis = eig.eigenvectors.column(k).into_owned();
        let proj = |p: &Vec3| (p - c).dot(&axis);
        let lo = points
            .iter()
            .min_by(|a, b| proj(a).total_cmp(&proj(b)))
            .expect("non-empty");
        let hi = points
            .iter()
            .max_by(|a, b| proj(a).total_cmp(&proj(b)))
            .expect("non-empty");
        for p in [lo, hi] {
            if !out.contains(p) {
                out.push(*p);
            }
        }
    }
    out
}

/// Builds the five-structure middle-ear template cloud.
pub fn build_template(config: &TemplateConfig, seed: u64) -> Result<LabeledCloud> {
    if !(config.scale > 0.0 && config.scale.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "template scale must be positive, got {}",
            config.scale
        )));
    }
    if let Some(k) = config.points.iter().position(|&n| n < 50) {
        return Err(Error::InvalidConfig(format!(
            "structure {} requests {} points, need at least 50",
            STRUCTURES[k], config.points[k]
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut support = Vec::new();
    let mut landmarks = Vec::new();
    for (k, surfaces) in anatomy().iter().enumerate() {
        let relief = match STRUCTURES[k] {
            "tympanic_membrane" => Some(Relief::on(&surfaces[0], 9, 0)),
            "ear_canal" => Some(Relief::on(&surfaces[0], 16, 1)),
            _ => None,
        };
        let pts: Vec<Vec3> = sample_structure(surfaces, relief.as_ref(), config.points[k], &mut rng)
            .into_iter()
            .map(|p| p * config.scale)
            .collect();
        support.push(centroid(&pts));
        landmarks.extend(extremal_landmarks(&pts).into_iter().map(|position| Landmark {
            structure: k,
            position,
        }));
        labels.extend(std::iter::repeat_n(k, pts.len()));
        points.extend(pts);
    }
    let names = STRUCTURES.iter().map(|s| s.to_string()).collect();
    let cloud = LabeledCloud::new(points, labels, names, support, landmarks)?;
    cloud.validate_complete()?;
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::bbox_diagonal;

    #[test]
    fn default_template_shape() {
        let t = build_template(&TemplateConfig::default(), 7).unwrap();
        assert_eq!(t.structure_count(), 5);
        assert!(t.structure_counts().iter().all(|&c| c > 0));
        assert!((2000..=5000).contains(&t.len()));
        let diag = bbox_diagonal(t.points());
        assert!((13.0..=17.0).contains(&diag), "diagonal {diag}");
        for k in 0..5 {
            let n = t.landmarks().iter().filter(|l| l.structure == k).count();
            assert!(n >= 4, "structure {k} has {n} landmarks");
            let idx = t.structure_indices(k);
            let pts: Vec<Vec3> = idx.iter().map(|&i| t.points()[i]).collect();
            assert!((t.support_points()[k] - centroid(&pts)).norm() < 1e-12);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = build_template(&TemplateConfig::default(), 3).unwrap();
        let b = build_template(&TemplateConfig::default(), 3).unwrap();
        assert_eq!(a, b);
        let c = build_template(&TemplateConfig::default(), 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = TemplateConfig::default();
        cfg.points[2] = 0;
        assert!(matches!(build_template(&cfg, 1), Err(Error::InvalidConfig(_))));
        let cfg = TemplateConfig {
            scale: 0.0,
            ..TemplateConfig::default()
        };
        assert!(matches!(build_template(&cfg, 1), Err(Error::InvalidConfig(_))));
    }
}
