//! Spatial sorting of point sets and ordered feature assembly.
//!
//! A [`SortStrategy`] assigns one scalar key per point; sorting ascending by
//! key (ties by lexicographic coordinates) gives a permutation that depends
//! only on the point coordinates. Gathering the per-point features in each
//! strategy's order and concatenating the blocks along channels yields the
//! ordered feature matrix consumed by the mixer.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{cross, dot, lex_cmp, norm, sub, Point3};
use crate::nn::Matrix;

const UNIT_TOL: f64 = 1e-9;
const DEGENERATE_PROJECTION: f64 = 1e-12;

/// Center used by distance sorting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EdsCenter {
    Point(Point3),
    Named(NamedCenter),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedCenter {
    /// The sorted group's own spatial center.
    SpatialCenter,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SortStrategy {
    /// Axis projection: key = p · axis.
    Aps { axis: Point3 },
    /// Plane clockwise: signed in-plane angle from `reference` about `normal`.
    Pcs {
        normal: Point3,
        #[serde(rename = "ref")]
        reference: Point3,
    },
    /// Euclidean distance to a center.
    Eds { center: EdsCenter },
}

fn check_unit(v: &Point3, what: &'static str) -> Result<()> {
    if !v.iter().all(|x| x.is_finite()) || (norm(v) - 1.0).abs() > UNIT_TOL {
        return Err(Error::NotUnit(what));
    }
    Ok(())
}

impl SortStrategy {
    pub fn aps(axis: Point3) -> Result<Self> {
        let s = SortStrategy::Aps { axis };
        s.validate()?;
        Ok(s)
    }

    pub fn pcs(normal: Point3, reference: Point3) -> Result<Self> {
        let s = SortStrategy::Pcs { normal, reference };
        s.validate()?;
        Ok(s)
    }

    pub fn eds_spatial() -> Self {
        SortStrategy::Eds { center: EdsCenter::Named(NamedCenter::SpatialCenter) }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SortStrategy::Aps { axis } => check_unit(axis, "axis"),
            SortStrategy::Pcs { normal, reference } => {
                check_unit(normal, "normal")?;
                check_unit(reference, "ref")?;
                in_plane_reference(normal, reference).map(|_| ())
            }
            SortStrategy::Eds { center } => match center {
                EdsCenter::Point(p) if !p.iter().all(|v| v.is_finite()) => {
                    Err(Error::NonFinite("distance sort center"))
                }
                _ => Ok(()),
            },
        }
    }

    /// Sort keys of `points`; `spatial_center` resolves [`NamedCenter::SpatialCenter`].
    pub fn keys(&self, points: &[Point3], spatial_center: &Point3) -> Result<Vec<f64>> {
        match self {
            SortStrategy::Aps { axis } => Ok(aps_keys(points, axis)),
            SortStrategy::Pcs { normal, reference } => pcs_keys(points, normal, reference),
            SortStrategy::Eds { center } => {
                let c = match center {
                    EdsCenter::Point(p) => p,
                    EdsCenter::Named(NamedCenter::SpatialCenter) => spatial_center,
                };
                Ok(eds_keys(points, c))
            }
        }
    }

    /// Ascending-key permutation of `points`.
    pub fn permutation(&self, points: &[Point3], spatial_center: &Point3) -> Result<Vec<usize>> {
        sort_permutation(&self.keys(points, spatial_center)?, points)
    }
}

pub fn aps_keys(points: &[Point3], axis: &Point3) -> Vec<f64> {
    points.iter().map(|p| dot(p, axis)).collect()
}

fn in_plane_reference(normal: &Point3, reference: &Point3) -> Result<Point3> {
    let proj = sub(reference, &scaled(normal, dot(reference, normal)));
    let len = norm(&proj);
    if len <= UNIT_TOL {
        return Err(Error::DegenerateRef);
    }
    Ok(scaled(&proj, 1.0 / len))
}

fn scaled(v: &Point3, s: f64) -> Point3 {
    [v[0] * s, v[1] * s, v[2] * s]
}

/// Signed angle in (−π, π] from the in-plane reference to each point's
/// projection onto the plane, counter-clockwise about `normal`. Points that
/// project onto the origin get −π so they sort first.
pub fn pcs_keys(points: &[Point3], normal: &Point3, reference: &Point3) -> Result<Vec<f64>> {
    let r = in_plane_reference(normal, reference)?;
    Ok(points
        .iter()
        .map(|p| {
            let proj = sub(p, &scaled(normal, dot(p, normal)));
            if norm(&proj) < DEGENERATE_PROJECTION {
                return -PI;
            }
            let angle = dot(&cross(&r, &proj), normal).atan2(dot(&r, &proj));
            if angle == -PI {
                PI
            } else {
                angle
            }
        })
        .collect())
}

pub fn eds_keys(points: &[Point3], center: &Point3) -> Vec<f64> {
    points.iter().map(|p| norm(&sub(p, center))).collect()
}

/// Stable ascending order by key; exact key ties fall back to lexicographic coordinates.
pub fn sort_permutation(keys: &[f64], points: &[Point3]) -> Result<Vec<usize>> {
    if keys.len() != points.len() {
        return Err(Error::shape("sort_permutation", format!("{} keys for {} points", keys.len(), points.len())));
    }
    if keys.iter().any(|k| !k.is_finite()) {
        return Err(Error::NonFinite("sort keys"));
    }
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then_with(|| lex_cmp(&points[a], &points[b])));
    Ok(order)
}

/// Ordered list of strategies; each contributes one feature block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SortPlan {
    pub strategies: Vec<SortStrategy>,
}

impl SortPlan {
    pub fn new(strategies: Vec<SortStrategy>) -> Result<Self> {
        let plan = SortPlan { strategies };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::config("sort plan needs at least one strategy"));
        }
        self.strategies.iter().try_for_each(SortStrategy::validate)
    }

    pub fn len(&self) -> usize {
        self.strategies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strategies.is_empty()
    }

    /// Projection onto the x, y and z axes.
    pub fn aps_xyz() -> Self {
        SortPlan {
            strategies: vec![
                SortStrategy::Aps { axis: [1.0, 0.0, 0.0] },
                SortStrategy::Aps { axis: [0.0, 1.0, 0.0] },
                SortStrategy::Aps { axis: [0.0, 0.0, 1.0] },
            ],
        }
    }

    /// Clockwise sorting in the XY, YZ and XZ planes starting from x, y and z.
    pub fn pcs_planes() -> Self {
        SortPlan {
            strategies: vec![
                SortStrategy::Pcs { normal: [0.0, 0.0, 1.0], reference: [1.0, 0.0, 0.0] },
                SortStrategy::Pcs { normal: [1.0, 0.0, 0.0], reference: [0.0, 1.0, 0.0] },
                SortStrategy::Pcs { normal: [0.0, 1.0, 0.0], reference: [0.0, 0.0, 1.0] },
            ],
        }
    }

    /// Single distance sort about the group's spatial center.
    pub fn eds() -> Self {
        SortPlan { strategies: vec![SortStrategy::eds_spatial()] }
    }

    /// One permutation per strategy.
    pub fn permutations(&self, points: &[Point3], spatial_center: &Point3) -> Result<Vec<Vec<usize>>> {
        self.strategies.iter().map(|s| s.permutation(points, spatial_center)).collect()
    }
}

/// Gathers `feats` rows in each strategy's order and concatenates the blocks
/// along channels: the result is k × (n_sort · c).
pub fn ordered_features(points: &[Point3], feats: &Matrix, plan: &SortPlan) -> Result<Matrix> {
    if feats.rows() != points.len() {
        return Err(Error::shape(
            "ordered_features",
            format!("{} feature rows for {} points", feats.rows(), points.len()),
        ));
    }
    plan.validate()?;
    let center = crate::geom::mean_of(points.iter());
    let perms = plan.permutations(points, &center)?;
    Ok(gather_blocks(feats, &perms))
}

pub(crate) fn gather_blocks(feats: &Matrix, perms: &[Vec<usize>]) -> Matrix {
    let (k, c) = feats.shape();
    let mut out = Matrix::zeros(k, c * perms.len());
    for (j, perm) in perms.iter().enumerate() {
        for (r, &src) in perm.iter().enumerate() {
            out.row_mut(r)[j * c..(j + 1) * c].copy_from_slice(feats.row(src));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use super::*;

    #[test]
    fn aps_examples() {
        let pts = [[0.0, 0.0, 3.0], [0.0, 0.0, 1.0], [0.0, 0.0, 2.0]];
        assert_eq!(aps_keys(&pts, &[0.0, 0.0, 1.0]), vec![3.0, 1.0, 2.0]);
        assert_eq!(aps_keys(&[[4.0, 5.0, 6.0]], &[1.0, 0.0, 0.0]), vec![4.0]);
        assert!(matches!(SortStrategy::aps([1.0, 1.0, 0.0]), Err(Error::NotUnit(_))));
    }

    #[test]
    fn pcs_examples() {
        let z = [0.0, 0.0, 1.0];
        let x = [1.0, 0.0, 0.0];
        let keys = pcs_keys(&[[1.0, 0.0, 5.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 4.0]], &z, &x).unwrap();
        assert_eq!(keys[0], 0.0);
        assert!((keys[1] - FRAC_PI_2).abs() < 1e-15);
        assert!((keys[2] + FRAC_PI_2).abs() < 1e-15);
        assert_eq!(keys[3], PI);
        assert_eq!(keys[4], -PI);
        assert!(matches!(pcs_keys(&[[1.0; 3]], &z, &z), Err(Error::DegenerateRef)));
    }

    #[test]
    fn eds_examples() {
        assert_eq!(eds_keys(&[[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -3.0]], &[0.0; 3]), vec![2.0, 1.0, 3.0]);
        assert_eq!(eds_keys(&[[1.5, -2.0, 0.25]], &[1.5, -2.0, 0.25]), vec![0.0]);
    }

    #[test]
    fn permutation_examples() {
        let pts = [[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        assert_eq!(sort_permutation(&[3.0, 1.0, 2.0], &pts).unwrap(), vec![1, 2, 0]);
        let pts = [[1.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 1.0, 0.0]];
        assert_eq!(sort_permutation(&[7.0; 3], &pts).unwrap(), vec![2, 1, 0]);
        assert!(matches!(sort_permutation(&[f64::NAN, 1.0, 2.0], &pts), Err(Error::NonFinite(_))));
    }

    #[test]
    fn ordered_features_examples() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let feats = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        let ident = SortPlan::new(vec![SortStrategy::aps([1.0, 0.0, 0.0]).unwrap()]).unwrap();
        assert_eq!(ordered_features(&pts, &feats, &ident).unwrap(), feats);
        let rev = SortPlan::new(vec![SortStrategy::aps([-1.0, 0.0, 0.0]).unwrap()]).unwrap();
        assert_eq!(ordered_features(&pts, &feats, &rev).unwrap().data(), &[2.0, 1.0]);
        assert!(SortPlan::new(vec![]).is_err());
    }

    #[test]
    fn plan_json_shape() {
        let plan = SortPlan { strategies: vec![SortPlan::pcs_planes().strategies[0], SortStrategy::eds_spatial()] };
        let json = serde_json::to_string(&plan).unwrap();
        assert_eq!(
            json,
            r#"{"strategies":[{"kind":"pcs","normal":[0.0,0.0,1.0],"ref":[1.0,0.0,0.0]},{"kind":"eds","center":"spatial_center"}]}"#
        );
        let back: SortPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, plan);
        let fixed: SortStrategy = serde_json::from_str(r#"{"kind":"eds","center":[0.5,0,0]}"#).unwrap();
        assert_eq!(fixed, SortStrategy::Eds { center: EdsCenter::Point([0.5, 0.0, 0.0]) });
    }
}
