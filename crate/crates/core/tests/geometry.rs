use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setmixer::geom::{fps, group, knn, lex_cmp, normalize, regroup_frozen, CenterMode, Point3, PointCloud};

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
    (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect()
}

fn d2(a: &Point3, b: &Point3) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Greedy reference: the first pick is farthest from the centroid, then each
/// pick maximizes the minimum distance to everything picked so far.
fn greedy_fps(points: &[Point3], m: usize) -> Vec<usize> {
    let mut lex: Vec<usize> = (0..points.len()).collect();
    lex.sort_by(|&a, &b| lex_cmp(&points[a], &points[b]).then(a.cmp(&b)));
    let mut c = [0.0; 3];
    for &i in &lex {
        (0..3).for_each(|j| c[j] += points[i][j]);
    }
    let c = c.map(|v| v / points.len() as f64);
    let mut picked: Vec<usize> = Vec::new();
    while picked.len() < m {
        let score = |i: usize| {
            if picked.is_empty() {
                d2(&points[i], &c)
            } else {
                picked.iter().map(|&p| d2(&points[i], &points[p])).fold(f64::INFINITY, f64::min)
            }
        };
        let next = lex
            .iter()
            .copied()
            .filter(|i| !picked.contains(i))
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if score(i) <= score(b) => Some(b),
                _ => Some(i),
            })
            .unwrap();
        picked.push(next);
    }
    picked
}

#[test]
fn normalized_cloud_is_centered_on_the_unit_sphere() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pts: Vec<Point3> = (0..100).map(|_| std::array::from_fn(|_| rng.random_range(-7.0..11.0))).collect();
    let cloud = normalize(&PointCloud::from_coords(pts).unwrap()).unwrap();
    let n = cloud.len() as f64;
    for axis in 0..3 {
        let mean = cloud.coords().iter().map(|p| p[axis]).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9);
    }
    let max = cloud.coords().iter().map(|p| d2(p, &[0.0; 3]).sqrt()).fold(0.0, f64::max);
    assert!((max - 1.0).abs() < 1e-9);
}

#[test]
fn fps_matches_greedy_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let pts = random_points(&mut rng, 32);
        assert_eq!(fps(&pts, 8).unwrap(), greedy_fps(&pts, 8));
    }
}

#[test]
fn fps_full_sample_is_a_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts = random_points(&mut rng, 40);
    let mut got = fps(&pts, 40).unwrap();
    got.sort_unstable();
    assert_eq!(got, (0..40).collect::<Vec<_>>());
}

#[test]
fn knn_matches_full_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let pts = random_points(&mut rng, 64);
        let q: Point3 = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let mut all: Vec<usize> = (0..64).collect();
        all.sort_by(|&a, &b| d2(&pts[a], &q).total_cmp(&d2(&pts[b], &q)).then(a.cmp(&b)));
        assert_eq!(knn(&pts, &q, 16).unwrap(), all[..16]);
    }
}

#[test]
fn clusters_form_their_own_groups() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut pts = Vec::new();
    for offset in [-5.0, 5.0] {
        for _ in 0..8 {
            pts.push([offset + rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)]);
        }
    }
    let g = group(&pts, 2, 8, CenterMode::SpatialCenter).unwrap();
    for s in 0..2 {
        let mut members = g.members(s).to_vec();
        members.sort_unstable();
        let first = members[0];
        assert!(first == 0 || first == 8);
        assert_eq!(members, (first..first + 8).collect::<Vec<_>>());
        for axis in 0..3 {
            let mean = pts[first..first + 8].iter().map(|p| p[axis]).sum::<f64>() / 8.0;
            assert!((g.spatial_centers[s][axis] - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn spatial_centers_are_member_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pts = random_points(&mut rng, 16);
    for mode in [CenterMode::SpatialCenter, CenterMode::QueryPoint] {
        let g = group(&pts, 4, 4, mode).unwrap();
        for s in 0..4 {
            for axis in 0..3 {
                let mean = g.members(s).iter().map(|&i| pts[i][axis]).sum::<f64>() / 4.0;
                assert!((g.spatial_centers[s][axis] - mean).abs() < 1e-12);
            }
            assert_eq!(g.centers[s], pts[g.queries[s]]);
        }
        let expected = if mode == CenterMode::QueryPoint { &g.centers } else { &g.spatial_centers };
        assert_eq!(g.output_centers(), expected.as_slice());
    }
}

#[test]
fn frozen_regrouping_keeps_membership_and_moves_centers() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pts = random_points(&mut rng, 64);
    let g = group(&pts, 8, 8, CenterMode::SpatialCenter).unwrap();
    let mut moved = pts.clone();
    moved[g.members(3)[0]][0] += 0.5;
    let f = regroup_frozen(&moved, &g).unwrap();
    assert_eq!(f.indices, g.indices);
    for s in 0..8 {
        let touched = g.members(s).contains(&g.members(3)[0]);
        assert_eq!(f.spatial_centers[s] != g.spatial_centers[s], touched);
    }
    assert!(regroup_frozen(&pts[..10], &g).is_err());
}

#[test]
fn group_requests_beyond_the_cloud_fail() {
    let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
    assert!(group(&pts, 3, 1, CenterMode::SpatialCenter).is_err());
    assert!(group(&pts, 1, 3, CenterMode::SpatialCenter).is_err());
    assert!(knn(&pts, &[0.0; 3], 0).is_err());
}

fn cloud_strategy() -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec(prop::array::uniform3(-4i32..=4), 2..60)
        .prop_map(|v| v.into_iter().map(|p| p.map(|c| f64::from(c) / 4.0)).collect())
}

proptest! {
    #[test]
    fn fps_picks_distinct_points(pts in cloud_strategy(), m in 1usize..20) {
        let m = m.min(pts.len());
        let picked = fps(&pts, m).unwrap();
        let mut sorted = picked.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), m);
    }

    #[test]
    fn fps_and_knn_are_permutation_equivariant(pts in cloud_strategy(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..pts.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled: Vec<Point3> = order.iter().map(|&i| pts[i]).collect();
        let m = pts.len().min(5);
        let a: Vec<Point3> = fps(&pts, m).unwrap().into_iter().map(|i| pts[i]).collect();
        let b: Vec<Point3> = fps(&shuffled, m).unwrap().into_iter().map(|i| shuffled[i]).collect();
        prop_assert_eq!(a, b);
        let q = pts[0];
        let k = pts.len().min(7);
        let a: Vec<Point3> = knn(&pts, &q, k).unwrap().into_iter().map(|i| pts[i]).collect();
        let b: Vec<Point3> = knn(&shuffled, &q, k).unwrap().into_iter().map(|i| shuffled[i]).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn knn_distances_are_sorted(pts in cloud_strategy(), k in 1usize..20) {
        let k = k.min(pts.len());
        let q = pts[pts.len() / 2];
        let idx = knn(&pts, &q, k).unwrap();
        let ds: Vec<f64> = idx.iter().map(|&i| d2(&pts[i], &q)).collect();
        prop_assert!(ds.windows(2).all(|w| w[0] <= w[1]));
        let worst = ds[k - 1];
        let closer = pts.iter().filter(|p| d2(p, &q) < worst).count();
        prop_assert!(closer < k);
    }
}
