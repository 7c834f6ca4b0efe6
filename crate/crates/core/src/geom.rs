//! Point clouds, normalization, farthest point sampling and kNN grouping.
//!
//! Every selection tie is broken by lexicographic comparison of coordinates,
//! never by storage index, so the selected coordinates do not depend on the
//! order points are stored in (for pairwise-distinct points).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

pub type Point3 = [f64; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    coords: Vec<Point3>,
    feats: Option<Matrix>,
    label: Option<usize>,
}

impl PointCloud {
    pub fn new(coords: Vec<Point3>, feats: Option<Matrix>, label: Option<usize>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Empty);
        }
        if !coords.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("point coordinates"));
        }
        if let Some(f) = &feats {
            if f.rows() != coords.len() {
                return Err(Error::FeatureRows { points: coords.len(), feats: f.rows() });
            }
            if !f.is_finite() {
                return Err(Error::NonFinite("point features"));
            }
        }
        Ok(PointCloud { coords, feats, label })
    }

    pub fn from_coords(coords: Vec<Point3>) -> Result<Self> {
        Self::new(coords, None, None)
    }

    pub fn coords(&self) -> &[Point3] {
        &self.coords
    }

    pub fn feats(&self) -> Option<&Matrix> {
        self.feats.as_ref()
    }

    pub fn feat_channels(&self) -> usize {
        self.feats.as_ref().map_or(0, |f| f.cols())
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn centroid(&self) -> Point3 {
        mean_of(self.coords.iter())
    }

    pub fn max_norm(&self) -> f64 {
        self.coords.iter().map(norm).fold(0.0, f64::max)
    }

    /// Rows reordered so that output row `i` is input row `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<PointCloud> {
        let coords = order.iter().map(|&i| self.coords[i]).collect();
        let feats = self
            .feats
            .as_ref()
            .map(|f| Matrix::from_fn(order.len(), f.cols(), |r, c| f.get(order[r], c)));
        PointCloud::new(coords, feats, self.label)
    }
}

#[inline]
pub fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: &Point3, b: &Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
pub fn norm(a: &Point3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let d = sub(a, b);
    dot(&d, &d)
}

/// Total lexicographic order on coordinates.
pub fn lex_cmp(a: &Point3, b: &Point3) -> Ordering {
    a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])).then(a[2].total_cmp(&b[2]))
}

pub fn mean_of<'a>(points: impl Iterator<Item = &'a Point3>) -> Point3 {
    let mut acc = [0.0; 3];
    let mut n = 0usize;
    for p in points {
        acc[0] += p[0];
        acc[1] += p[1];
        acc[2] += p[2];
        n += 1;
    }
    let n = n.max(1) as f64;
    [acc[0] / n, acc[1] / n, acc[2] / n]
}

/// Centers the cloud at its centroid and scales it into the unit ball.
/// A cloud whose points all coincide becomes all zeros.
pub fn normalize(cloud: &PointCloud) -> Result<PointCloud> {
    if !cloud.coords.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("point coordinates"));
    }
    let c = cloud.centroid();
    let mut coords: Vec<Point3> = cloud.coords.iter().map(|p| sub(p, &c)).collect();
    let scale = coords.iter().map(norm).fold(0.0, f64::max);
    if scale > 0.0 {
        for p in &mut coords {
            p.iter_mut().for_each(|v| *v /= scale);
        }
    }
    PointCloud::new(coords, cloud.feats.clone(), cloud.label)
}

fn check_count(requested: usize, available: usize) -> Result<()> {
    if requested == 0 || requested > available {
        return Err(Error::BadCount { requested, available });
    }
    Ok(())
}

/// Storage indices sorted lexicographically by coordinate.
fn canonical_order(points: &[Point3]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| lex_cmp(&points[a], &points[b]).then(a.cmp(&b)));
    order
}

/// Greedy farthest point sampling of `m` indices.
///
/// The first pick is the point farthest from the centroid; each later pick
/// maximizes the distance to its nearest already-picked point.
pub fn fps(points: &[Point3], m: usize) -> Result<Vec<usize>> {
    check_count(m, points.len())?;
    let order = canonical_order(points);
    let centroid = mean_of(order.iter().map(|&i| &points[i]));
    // Scanning in canonical order with a strict comparison keeps the
    // lexicographically smallest point on exact ties.
    let argmax = |score: &dyn Fn(usize) -> f64| {
        let mut best = None;
        let mut best_score = f64::NEG_INFINITY;
        for &i in &order {
            let s = score(i);
            if s > best_score {
                best_score = s;
                best = Some(i);
            }
        }
        best.expect("non-empty")
    };
    let first = argmax(&|i| dist2(&points[i], &centroid));
    let mut picked = vec![first];
    let mut min_d: Vec<f64> = points.iter().map(|p| dist2(p, &points[first])).collect();
    min_d[first] = -1.0;
    while picked.len() < m {
        let next = argmax(&|i| min_d[i]);
        picked.push(next);
        for (i, d) in min_d.iter_mut().enumerate() {
            if *d >= 0.0 {
                *d = d.min(dist2(&points[i], &points[next]));
            }
        }
        min_d[next] = -1.0;
    }
    Ok(picked)
}

/// The `k` points nearest to `query`, nearest first.
pub fn knn(points: &[Point3], query: &Point3, k: usize) -> Result<Vec<usize>> {
    check_count(k, points.len())?;
    let mut scored: Vec<(f64, usize)> = points.iter().map(|p| dist2(p, query)).zip(0..).collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| {
        a.0.total_cmp(&b.0).then(lex_cmp(&points[a.1], &points[b.1])).then(a.1.cmp(&b.1))
    };
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    Ok(scored.into_iter().map(|(_, i)| i).collect())
}

/// Which coordinates represent a group at the next level.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterMode {
    QueryPoint,
    #[default]
    SpatialCenter,
}

/// `set_count` groups of `neighbor_count` member indices each.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupIndex {
    pub set_count: usize,
    pub neighbor_count: usize,
    /// Row-major `set_count × neighbor_count` indices into the grouped points.
    pub indices: Vec<usize>,
    /// Index of each group's query point.
    pub queries: Vec<usize>,
    /// Query point of each group.
    pub centers: Vec<Point3>,
    /// Mean of each group's member coordinates.
    pub spatial_centers: Vec<Point3>,
    pub mode: CenterMode,
}

impl GroupIndex {
    pub fn members(&self, set: usize) -> &[usize] {
        &self.indices[set * self.neighbor_count..(set + 1) * self.neighbor_count]
    }

    /// Coordinates that stand for each group at the next level.
    pub fn output_centers(&self) -> &[Point3] {
        match self.mode {
            CenterMode::QueryPoint => &self.centers,
            CenterMode::SpatialCenter => &self.spatial_centers,
        }
    }
}

/// Samples `m` query points by FPS and gathers each one's `k` nearest neighbours.
///
/// `points` is the cloud at the first level and the previous level's
/// output centers at deeper levels.
pub fn group(points: &[Point3], m: usize, k: usize, mode: CenterMode) -> Result<GroupIndex> {
    check_count(k, points.len())?;
    let queries = fps(points, m)?;
    let mut indices = Vec::with_capacity(m * k);
    let mut centers = Vec::with_capacity(m);
    let mut spatial_centers = Vec::with_capacity(m);
    for &q in &queries {
        let nbrs = knn(points, &points[q], k)?;
        spatial_centers.push(mean_of(nbrs.iter().map(|&i| &points[i])));
        centers.push(points[q]);
        indices.extend(nbrs);
    }
    Ok(GroupIndex { set_count: m, neighbor_count: k, indices, queries, centers, spatial_centers, mode })
}

/// Re-evaluates a grouping's centers on moved coordinates, keeping its membership.
pub fn regroup_frozen(points: &[Point3], frozen: &GroupIndex) -> Result<GroupIndex> {
    if let Some(&bad) = frozen.indices.iter().chain(&frozen.queries).find(|&&i| i >= points.len()) {
        return Err(Error::BadCount { requested: bad + 1, available: points.len() });
    }
    let centers = frozen.queries.iter().map(|&q| points[q]).collect();
    let spatial_centers = (0..frozen.set_count)
        .map(|s| mean_of(frozen.members(s).iter().map(|&i| &points[i])))
        .collect();
    Ok(GroupIndex { centers, spatial_centers, ..frozen.clone() })
}
