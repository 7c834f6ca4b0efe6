//! Parameter-free geometry of a forward pass.
//!
//! Grouping and sorting depend only on coordinates, so they are computed once
//! per cloud and reused across epochs.

use super::config::{Aggregator, ModelConfig, SaLayerConfig};
use crate::error::{Error, Result};
use crate::geom::{group, regroup_frozen, GroupIndex, Point3};

#[derive(Clone, Debug, PartialEq)]
pub struct LevelPlan {
    pub groups: GroupIndex,
    /// One row-major `set_count × k` table per sort block: entry `(g, r)` is
    /// the position within group `g`'s member list of the `r`-th point in order.
    pub orders: Vec<Vec<usize>>,
    /// Coordinates of every member, row-major `set_count × k`.
    pub member_coords: Vec<Point3>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CloudPlan {
    pub levels: Vec<LevelPlan>,
}

impl CloudPlan {
    /// Coordinates that are grouped at `level`.
    pub fn level_points<'a>(&'a self, cloud: &'a [Point3], level: usize) -> &'a [Point3] {
        if level == 0 {
            cloud
        } else {
            self.levels[level - 1].groups.output_centers()
        }
    }
}

fn orders_for(sa: &SaLayerConfig, points: &[Point3], groups: &GroupIndex) -> Result<Vec<Vec<usize>>> {
    let k = groups.neighbor_count;
    match &sa.aggregator {
        Aggregator::SetMixer { plan, .. } => {
            let mut orders = vec![Vec::with_capacity(groups.indices.len()); plan.len()];
            for g in 0..groups.set_count {
                let members: Vec<Point3> = groups.members(g).iter().map(|&i| points[i]).collect();
                let perms = plan.permutations(&members, &groups.spatial_centers[g])?;
                for (o, p) in orders.iter_mut().zip(perms) {
                    o.extend(p);
                }
            }
            Ok(orders)
        }
        Aggregator::MixerNoSort { .. } => {
            let mut order = Vec::with_capacity(groups.indices.len());
            for g in 0..groups.set_count {
                let members = groups.members(g);
                let mut local: Vec<usize> = (0..k).collect();
                local.sort_by_key(|&r| members[r]);
                order.extend(local);
            }
            Ok(vec![order])
        }
        Aggregator::MaxPool | Aggregator::MeanPool => Ok(Vec::new()),
    }
}

fn level_plan(sa: &SaLayerConfig, points: &[Point3], frozen: Option<&GroupIndex>) -> Result<LevelPlan> {
    let groups = match frozen {
        Some(f) => regroup_frozen(points, f)?,
        None => group(points, sa.m_sets, sa.k, sa.center_mode)?,
    };
    let orders = orders_for(sa, points, &groups)?;
    let member_coords = groups.indices.iter().map(|&i| points[i]).collect();
    Ok(LevelPlan { groups, orders, member_coords })
}

/// Groups and sort orders for every level of `cfg` on a cloud.
pub fn plan_cloud(coords: &[Point3], cfg: &ModelConfig) -> Result<CloudPlan> {
    plan_with_frozen(coords, cfg, None)
}

/// Like [`plan_cloud`], but levels up to `frozen.levels.len()` reuse the frozen
/// group memberships while centers and orders follow the new coordinates.
pub fn plan_with_frozen(coords: &[Point3], cfg: &ModelConfig, frozen: Option<&CloudPlan>) -> Result<CloudPlan> {
    let mut levels: Vec<LevelPlan> = Vec::with_capacity(cfg.sa_layers.len());
    for (i, sa) in cfg.sa_layers.iter().enumerate() {
        let points = if i == 0 { coords } else { levels[i - 1].groups.output_centers() };
        if i == 0 && sa.k > points.len() {
            return Err(Error::BadCount { requested: sa.k, available: points.len() });
        }
        let fz = frozen.and_then(|f| f.levels.get(i)).map(|l| &l.groups);
        let plan = level_plan(sa, points, fz)?;
        levels.push(plan);
    }
    Ok(CloudPlan { levels })
}
