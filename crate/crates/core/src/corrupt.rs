//! The five noise corruptions, each at severities 1 through 5.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud};
use crate::nn::Matrix;
use crate::rng::{derive_seed, rng_for};

/// Slack allowed above the unit sphere before a cloud counts as unnormalized.
pub const NORM_SLACK: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    Uniform,
    Gaussian,
    Impulse,
    Upsampling,
    Background,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 5] = [
        CorruptionKind::Uniform,
        CorruptionKind::Gaussian,
        CorruptionKind::Impulse,
        CorruptionKind::Upsampling,
        CorruptionKind::Background,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::Uniform => "uniform",
            CorruptionKind::Gaussian => "gaussian",
            CorruptionKind::Impulse => "impulse",
            CorruptionKind::Upsampling => "upsampling",
            CorruptionKind::Background => "background",
        }
    }

    /// Column heading used in report tables.
    pub fn short_label(self) -> &'static str {
        match self {
            CorruptionKind::Uniform => "Uniform",
            CorruptionKind::Gaussian => "Gaus.",
            CorruptionKind::Impulse => "Impulse",
            CorruptionKind::Upsampling => "Upsamp.",
            CorruptionKind::Background => "Bg.",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Whether the corruption keeps the point count.
    pub fn preserves_count(self) -> bool {
        matches!(self, CorruptionKind::Uniform | CorruptionKind::Gaussian | CorruptionKind::Impulse)
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown corruption kind '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8, seed: u64) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(Error::config(format!("severity {severity} outside 1..=5")));
        }
        Ok(CorruptionSpec { kind, severity, seed })
    }

    /// Half-width of the uniform noise.
    pub fn uniform_delta(&self) -> f64 {
        0.01 * f64::from(self.severity)
    }

    /// Standard deviation of the Gaussian noise.
    pub fn gaussian_sigma(&self) -> f64 {
        0.006 * f64::from(self.severity)
    }

    /// Per-coordinate displacement of an impulse point.
    pub fn impulse_magnitude(&self) -> f64 {
        0.3 * (1.0 + 0.25 * (f64::from(self.severity) - 1.0))
    }

    /// Points moved (impulse) or appended (upsampling, background) for a cloud of `n` points.
    pub fn affected(&self, n: usize) -> usize {
        let s = usize::from(self.severity);
        match self.kind {
            CorruptionKind::Uniform | CorruptionKind::Gaussian => n,
            CorruptionKind::Impulse => n * s / 30,
            CorruptionKind::Upsampling | CorruptionKind::Background => n * s / 10,
        }
    }

    /// Point count after corruption.
    pub fn output_len(&self, n: usize) -> usize {
        if self.kind.preserves_count() {
            n
        } else {
            n + self.affected(n)
        }
    }
}

/// Applies one corruption. The input must lie in the unit ball.
///
/// Appended points copy the features of their source point (upsampling) or
/// get zero features (background).
pub fn corrupt(cloud: &PointCloud, spec: &CorruptionSpec) -> Result<PointCloud> {
    CorruptionSpec::new(spec.kind, spec.severity, spec.seed)?;
    let max_norm = cloud.max_norm();
    if max_norm > 1.0 + NORM_SLACK {
        return Err(Error::NotNormalized(max_norm));
    }
    let mut rng = rng_for(spec.seed, &[spec.kind.index() as u64, u64::from(spec.severity)]);
    let n = cloud.len();
    let mut coords: Vec<Point3> = cloud.coords().to_vec();
    let mut feats = cloud.feats().cloned();
    match spec.kind {
        CorruptionKind::Uniform => {
            let d = spec.uniform_delta();
            for p in &mut coords {
                for v in p.iter_mut() {
                    *v += rng.random_range(-d..=d);
                }
            }
        }
        CorruptionKind::Gaussian => {
            let normal = Normal::new(0.0, spec.gaussian_sigma()).expect("positive sigma");
            for p in &mut coords {
                for v in p.iter_mut() {
                    *v += normal.sample(&mut rng);
                }
            }
        }
        CorruptionKind::Impulse => {
            let mag = spec.impulse_magnitude();
            let mut picked = sample(&mut rng, n, spec.affected(n)).into_vec();
            picked.sort_unstable();
            for i in picked {
                for v in coords[i].iter_mut() {
                    *v += if rng.random::<bool>() { mag } else { -mag };
                }
            }
        }
        CorruptionKind::Upsampling => {
            let extra = spec.affected(n);
            let mut sources = Vec::with_capacity(extra);
            for _ in 0..extra {
                let src = rng.random_range(0..n);
                let p = coords[src];
                let jitter: Point3 = std::array::from_fn(|_| rng.random_range(-0.05..=0.05));
                coords.push([p[0] + jitter[0], p[1] + jitter[1], p[2] + jitter[2]]);
                sources.push(src);
            }
            feats = feats.map(|f| append_rows(&f, sources.iter().map(|&s| f.row(s).to_vec())));
        }
        CorruptionKind::Background => {
            let extra = spec.affected(n);
            for _ in 0..extra {
                coords.push(std::array::from_fn(|_| rng.random_range(-1.0..=1.0)));
            }
            feats = feats.map(|f| {
                let c = f.cols();
                append_rows(&f, (0..extra).map(|_| vec![0.0; c]))
            });
        }
    }
    PointCloud::new(coords, feats, cloud.label())
}

fn append_rows(f: &Matrix, rows: impl Iterator<Item = Vec<f64>>) -> Matrix {
    let mut data = f.data().to_vec();
    let mut count = f.rows();
    for r in rows {
        data.extend(r);
        count += 1;
    }
    Matrix::new(count, f.cols(), data).expect("rows share the column count")
}

/// Seed of one cell of the suite for the cloud at `cloud_index`.
pub fn suite_seed(base_seed: u64, kind: CorruptionKind, severity: u8, cloud_index: usize) -> u64 {
    derive_seed(base_seed, &[kind.index() as u64, u64::from(severity), cloud_index as u64])
}

/// Every requested (kind, severity) corruption of one cloud, in kind-major order.
pub fn corruption_grid(
    cloud: &PointCloud,
    kinds: &[CorruptionKind],
    severities: &[u8],
    base_seed: u64,
    cloud_index: usize,
) -> Result<Vec<(CorruptionSpec, PointCloud)>> {
    let mut out = Vec::with_capacity(kinds.len() * severities.len());
    for &kind in kinds {
        for &s in severities {
            let spec = CorruptionSpec::new(kind, s, suite_seed(base_seed, kind, s, cloud_index))?;
            out.push((spec, corrupt(cloud, &spec)?));
        }
    }
    Ok(out)
}

/// All 25 corruptions (five kinds, five severities) of one cloud.
pub fn corruption_suite(
    cloud: &PointCloud,
    base_seed: u64,
    cloud_index: usize,
) -> Result<Vec<(CorruptionSpec, PointCloud)>> {
    corruption_grid(cloud, &CorruptionKind::ALL, &[1, 2, 3, 4, 5], base_seed, cloud_index)
}

/// One line of a corruption manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub cloud_id: String,
    pub kind: CorruptionKind,
    pub severity: u8,
    pub seed: u64,
    pub output_path: String,
}

/// Mean distance between corresponding points of two equally sized clouds.
pub fn mean_displacement(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::CountMismatch { clean: a.len(), corrupted: b.len() });
    }
    let total: f64 = a.coords().iter().zip(b.coords()).map(|(p, q)| crate::geom::dist2(p, q).sqrt()).sum();
    Ok(total / a.len() as f64)
}
