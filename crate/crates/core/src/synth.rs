//! Analytic shape families sampled into labelled point clouds.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{normalize, Point3, PointCloud};
use crate::rng::{derive_seed, rng_for};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Sphere,
    CubeSurface,
    Cylinder,
    Cone,
    Torus,
    Plane,
    Helix,
    TwoSpheres,
}

/// Major and minor radius of the torus family before normalization.
pub const TORUS_RADII: (f64, f64) = (1.0, 0.35);

impl Family {
    pub const ALL: [Family; 8] = [
        Family::Sphere,
        Family::CubeSurface,
        Family::Cylinder,
        Family::Cone,
        Family::Torus,
        Family::Plane,
        Family::Helix,
        Family::TwoSpheres,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Sphere => "sphere",
            Family::CubeSurface => "cube_surface",
            Family::Cylinder => "cylinder",
            Family::Cone => "cone",
            Family::Torus => "torus",
            Family::Plane => "plane",
            Family::Helix => "helix",
            Family::TwoSpheres => "two_spheres",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Shapes mapped onto themselves by `p ↦ −p`; they are sampled in antipodal pairs.
    fn point_symmetric(self) -> bool {
        !matches!(self, Family::Cone | Family::Helix)
    }

    fn sample_point(self, rng: &mut ChaCha8Rng) -> Point3 {
        match self {
            Family::Sphere => unit_vector(rng),
            Family::CubeSurface => {
                let face = rng.random_range(0..6usize);
                let (u, v) = (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
                let s = if face % 2 == 0 { 1.0 } else { -1.0 };
                match face / 2 {
                    0 => [s, u, v],
                    1 => [u, s, v],
                    _ => [u, v, s],
                }
            }
            Family::Cylinder => {
                let (r, h) = (0.6, 1.0);
                let side = TAU * r * 2.0 * h;
                let cap = PI * r * r;
                let theta = rng.random_range(0.0..TAU);
                if rng.random_range(0.0..side + 2.0 * cap) < side {
                    [r * theta.cos(), r * theta.sin(), rng.random_range(-h..=h)]
                } else {
                    let rho = r * rng.random::<f64>().sqrt();
                    let z = if rng.random::<bool>() { h } else { -h };
                    [rho * theta.cos(), rho * theta.sin(), z]
                }
            }
            Family::Cone => {
                let r = 0.8;
                let slant = (r * r + 4.0f64).sqrt();
                let side = PI * r * slant;
                let base = PI * r * r;
                let theta = rng.random_range(0.0..TAU);
                let rho = rng.random::<f64>().sqrt();
                if rng.random_range(0.0..side + base) < side {
                    [r * rho * theta.cos(), r * rho * theta.sin(), 1.0 - 2.0 * rho]
                } else {
                    [r * rho * theta.cos(), r * rho * theta.sin(), -1.0]
                }
            }
            Family::Torus => {
                let (big, small) = TORUS_RADII;
                let phi = loop {
                    let phi = rng.random_range(0.0..TAU);
                    if rng.random_range(0.0..big + small) < big + small * phi.cos() {
                        break phi;
                    }
                };
                let theta = rng.random_range(0.0..TAU);
                let ring = big + small * phi.cos();
                [ring * theta.cos(), ring * theta.sin(), small * phi.sin()]
            }
            Family::Plane => [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0), 0.0],
            Family::Helix => {
                let turns = 3.0;
                let t = rng.random_range(-turns * PI..=turns * PI);
                [0.8 * t.cos(), 0.8 * t.sin(), t / (turns * PI)]
            }
            Family::TwoSpheres => {
                let u = unit_vector(rng);
                let cx = if rng.random::<bool>() { 0.6 } else { -0.6 };
                [cx + 0.4 * u[0], 0.4 * u[1], 0.4 * u[2]]
            }
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::config(format!("unknown shape family '{s}'")))
    }
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Point3 {
    loop {
        let v: Point3 = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-9 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub family: Family,
    pub points: usize,
    pub seed: u64,
    /// Standard deviation of the isotropic Gaussian jitter, in shape units.
    pub jitter: f64,
    /// Per-axis scale factors, each in `[0.6, 1.4]`.
    pub scale: [f64; 3],
    pub rotate_z: bool,
}

impl ShapeSpec {
    /// Unit scale, no jitter, no rotation.
    pub fn plain(family: Family, points: usize, seed: u64) -> Self {
        ShapeSpec { family, points, seed, jitter: 0.0, scale: [1.0; 3], rotate_z: false }
    }

    /// Scale factors drawn uniformly from `[0.6, 1.4]` using `seed`.
    pub fn drawn(family: Family, seed: u64, opts: &DatasetOptions) -> Self {
        let mut rng = rng_for(seed, &[0x5ca1e]);
        let scale = std::array::from_fn(|_| rng.random_range(0.6..=1.4));
        ShapeSpec { family, points: opts.points, seed, jitter: opts.jitter, scale, rotate_z: opts.rotate_z }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points < 64 {
            return Err(Error::config(format!("shapes need at least 64 points, got {}", self.points)));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::config("jitter must be finite and non-negative"));
        }
        if self.scale.iter().any(|s| !(0.6..=1.4).contains(s)) {
            return Err(Error::config("scale factors must lie in [0.6, 1.4]"));
        }
        Ok(())
    }
}

/// Raw surface samples with jitter, scaling and rotation applied, before normalization.
pub fn sample_raw(spec: &ShapeSpec) -> Result<Vec<Point3>> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, &[spec.family.index() as u64]);
    let mut pts = Vec::with_capacity(spec.points);
    if spec.family.point_symmetric() {
        while pts.len() + 2 <= spec.points {
            let p = spec.family.sample_point(&mut rng);
            pts.push(p);
            pts.push([-p[0], -p[1], -p[2]]);
        }
    }
    while pts.len() < spec.points {
        pts.push(spec.family.sample_point(&mut rng));
    }
    if spec.jitter > 0.0 {
        let normal = Normal::new(0.0, spec.jitter).expect("valid jitter");
        for p in &mut pts {
            p.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
        }
    }
    let angle = if spec.rotate_z { rng.random_range(0.0..TAU) } else { 0.0 };
    let (s, c) = angle.sin_cos();
    for p in &mut pts {
        let [x, y, z] = [p[0] * spec.scale[0], p[1] * spec.scale[1], p[2] * spec.scale[2]];
        *p = if spec.rotate_z { [c * x - s * y, s * x + c * y, z] } else { [x, y, z] };
    }
    Ok(pts)
}

/// Normalized cloud of one shape, labelled with its family index.
pub fn sample_shape(spec: &ShapeSpec) -> Result<PointCloud> {
    let cloud = PointCloud::new(sample_raw(spec)?, None, Some(spec.family.index()))?;
    normalize(&cloud)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub points: usize,
    pub jitter: f64,
    pub rotate_z: bool,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions { points: 512, jitter: 0.01, rotate_z: false }
    }
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub cloud: PointCloud,
    pub family: Family,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Class-balanced train and test splits.
///
/// Labels are positions in `families`, so the full family list labels each
/// cloud with its family index.
pub fn make_dataset(
    families: &[Family],
    train_per_class: usize,
    test_per_class: usize,
    base_seed: u64,
    opts: &DatasetOptions,
) -> Result<Dataset> {
    if families.is_empty() {
        return Err(Error::config("at least one shape family is required"));
    }
    let split = |tag: u64, per_class: usize| -> Result<Vec<Sample>> {
        let jobs: Vec<(usize, Family, u64)> = families
            .iter()
            .enumerate()
            .flat_map(|(label, &f)| {
                (0..per_class).map(move |i| (label, f, derive_seed(base_seed, &[tag, label as u64, i as u64])))
            })
            .collect();
        crate::par::map(&jobs, |&(label, family, seed)| {
            let cloud = sample_shape(&ShapeSpec::drawn(family, seed, opts))?.with_label(Some(label));
            Ok(Sample { cloud, family, seed })
        })
        .into_iter()
        .collect()
    };
    Ok(Dataset { train: split(0, train_per_class)?, test: split(1, test_per_class)? })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_norms_equal() {
        let c = sample_shape(&ShapeSpec::plain(Family::Sphere, 200, 3)).unwrap();
        for p in c.coords() {
            let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn labels_and_counts() {
        let opts = DatasetOptions { points: 64, ..DatasetOptions::default() };
        let ds = make_dataset(&Family::ALL, 2, 1, 5, &opts).unwrap();
        assert_eq!(ds.train.len(), 16);
        assert_eq!(ds.test.len(), 8);
        for s in &ds.train {
            assert_eq!(s.cloud.label(), Some(s.family.index()));
            assert!(s.cloud.max_norm() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn rejects_small_and_out_of_range_specs() {
        assert!(sample_shape(&ShapeSpec::plain(Family::Torus, 10, 0)).is_err());
        let mut spec = ShapeSpec::plain(Family::Torus, 64, 0);
        spec.scale = [1.5, 1.0, 1.0];
        assert!(sample_shape(&spec).is_err());
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
    }
}
