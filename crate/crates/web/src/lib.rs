//! Browser bindings: sample a shape, color its groups by sort order, corrupt it.
//!
//! Point arrays cross the boundary as flat `[x0, y0, z0, x1, …]` slices.

use setmixer::corrupt::{corrupt, CorruptionKind, CorruptionSpec};
use setmixer::geom::{group, normalize, CenterMode, Point3, PointCloud};
use setmixer::sort::SortStrategy;
use setmixer::synth::{sample_shape, Family, ShapeSpec};
use wasm_bindgen::prelude::*;

fn unflatten(coords: &[f64]) -> Result<Vec<Point3>, String> {
    if !coords.len().is_multiple_of(3) {
        return Err(format!("{} values is not a whole number of points", coords.len()));
    }
    Ok(coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

fn flatten(points: &[Point3]) -> Vec<f64> {
    points.iter().flatten().copied().collect()
}

pub fn shape_points(family: &str, points: usize, seed: u64, jitter: f64) -> Result<Vec<f64>, String> {
    let family: Family = family.parse().map_err(|e| format!("{e}"))?;
    let spec = ShapeSpec { jitter, ..ShapeSpec::plain(family, points, seed) };
    let cloud = sample_shape(&spec).map_err(|e| e.to_string())?;
    Ok(flatten(cloud.coords()))
}

fn strategy(name: &str) -> Result<SortStrategy, String> {
    let s = match name {
        "aps-x" => SortStrategy::aps([1.0, 0.0, 0.0]),
        "aps-y" => SortStrategy::aps([0.0, 1.0, 0.0]),
        "aps-z" => SortStrategy::aps([0.0, 0.0, 1.0]),
        "pcs-z" => SortStrategy::pcs([0.0, 0.0, 1.0], [1.0, 0.0, 0.0]),
        "pcs-x" => SortStrategy::pcs([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
        "pcs-y" => SortStrategy::pcs([0.0, 1.0, 0.0], [0.0, 0.0, 1.0]),
        "eds" => Ok(SortStrategy::eds_spatial()),
        other => return Err(format!("unknown sort strategy '{other}'")),
    };
    s.map_err(|e| e.to_string())
}

/// For every point: its group (−1 when ungrouped) and its rank within that
/// group's sort order scaled to `[0, 1]`, interleaved as `[g0, r0, g1, r1, …]`.
/// A point in several groups reports the first.
pub fn group_ranks(coords: &[f64], sets: usize, k: usize, sort: &str) -> Result<Vec<f64>, String> {
    let points = unflatten(coords)?;
    let strat = strategy(sort)?;
    let groups = group(&points, sets, k, CenterMode::SpatialCenter).map_err(|e| e.to_string())?;
    let mut out = vec![-1.0; 2 * points.len()];
    for g in 0..groups.set_count {
        let members = groups.members(g);
        let local: Vec<Point3> = members.iter().map(|&i| points[i]).collect();
        let perm = strat.permutation(&local, &groups.spatial_centers[g]).map_err(|e| e.to_string())?;
        let denom = (k.max(2) - 1) as f64;
        for (rank, &pos) in perm.iter().enumerate() {
            let i = members[pos];
            if out[2 * i] < 0.0 {
                out[2 * i] = g as f64;
                out[2 * i + 1] = rank as f64 / denom;
            }
        }
    }
    Ok(out)
}

pub fn corrupt_points(coords: &[f64], kind: &str, severity: u8, seed: u64) -> Result<Vec<f64>, String> {
    let kind: CorruptionKind = kind.parse().map_err(|e| format!("{e}"))?;
    let spec = CorruptionSpec::new(kind, severity, seed).map_err(|e| e.to_string())?;
    let cloud = PointCloud::from_coords(unflatten(coords)?).map_err(|e| e.to_string())?;
    let cloud = if cloud.max_norm() > 1.0 { normalize(&cloud).map_err(|e| e.to_string())? } else { cloud };
    Ok(flatten(corrupt(&cloud, &spec).map_err(|e| e.to_string())?.coords()))
}

#[wasm_bindgen]
pub fn shape(family: &str, points: usize, seed: u32, jitter: f64) -> Result<Vec<f64>, JsError> {
    shape_points(family, points, u64::from(seed), jitter).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn grouping(coords: &[f64], sets: usize, k: usize, sort: &str) -> Result<Vec<f64>, JsError> {
    group_ranks(coords, sets, k, sort).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = corrupt)]
pub fn corrupt_js(coords: &[f64], kind: &str, severity: u8, seed: u32) -> Result<Vec<f64>, JsError> {
    corrupt_points(coords, kind, severity, u64::from(seed)).map_err(|e| JsError::new(&e))
}
