use nalgebra::{Rotation3, Unit, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setmixer::geom::{lex_cmp, Point3};
use setmixer::nn::Matrix;
use setmixer::sort::{aps_keys, eds_keys, ordered_features, pcs_keys, sort_permutation, SortPlan, SortStrategy};

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
    (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect()
}

/// Rotates the frame so `normal` becomes +z and the projected reference
/// becomes +x, then reads the planar angle.
fn planar_angles(points: &[Point3], normal: Vector3<f64>, reference: Vector3<f64>) -> Vec<f64> {
    let to_z = Rotation3::rotation_between(&normal, &Vector3::z()).unwrap_or_else(|| {
        Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI)
    });
    let r = to_z * reference;
    let spin = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::z()), -r.y.atan2(r.x));
    let frame = spin * to_z;
    points
        .iter()
        .map(|p| {
            let q = frame * Vector3::new(p[0], p[1], p[2]);
            q.y.atan2(q.x)
        })
        .collect()
}

#[test]
fn pcs_order_matches_rotated_frame_angles() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let pts = random_points(&mut rng, 24);
        let normal = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            .normalize();
        let reference = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let keys = pcs_keys(&pts, &[normal.x, normal.y, normal.z], &[reference.x, reference.y, reference.z]).unwrap();
        let angles = planar_angles(&pts, normal, reference);
        for (k, a) in keys.iter().zip(&angles) {
            assert!((k - a).abs() < 1e-9, "key {k} angle {a}");
        }
        let mut by_angle: Vec<usize> = (0..pts.len()).collect();
        by_angle.sort_by(|&a, &b| angles[a].total_cmp(&angles[b]));
        assert_eq!(sort_permutation(&keys, &pts).unwrap(), by_angle);
    }
}

#[test]
fn aps_and_eds_match_direct_formulas() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pts = random_points(&mut rng, 100);
    let s = 1.0 / 3f64.sqrt();
    let c = [0.1, -0.2, 0.3];
    for (p, k) in pts.iter().zip(aps_keys(&pts, &[s, s, s])) {
        assert!((k - (p[0] + p[1] + p[2]) * s).abs() < 1e-12);
    }
    for (p, k) in pts.iter().zip(eds_keys(&pts, &c)) {
        let d = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt();
        assert!((k - d).abs() < 1e-12);
    }
}

#[test]
fn equal_keys_fall_back_to_coordinates() {
    let pts = [[0.5, 0.0, 0.0], [-1.0, 2.0, 0.0], [-1.0, 1.0, 3.0]];
    assert_eq!(sort_permutation(&[7.0; 3], &pts).unwrap(), vec![2, 1, 0]);
}

#[test]
fn canonical_plan_gathers_each_block_by_its_axis() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let pts = random_points(&mut rng, 16);
    let feats = Matrix::from_fn(16, 3, |_, _| rng.random_range(-1.0..1.0));
    let out = ordered_features(&pts, &feats, &SortPlan::aps_xyz()).unwrap();
    assert_eq!(out.shape(), (16, 9));
    for axis in 0..3 {
        let mut order: Vec<usize> = (0..16).collect();
        order.sort_by(|&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
        for (r, &src) in order.iter().enumerate() {
            assert_eq!(&out.row(r)[axis * 3..axis * 3 + 3], feats.row(src));
        }
    }
}

#[test]
fn strategies_reject_degenerate_frames() {
    assert!(SortStrategy::aps([0.0; 3]).is_err());
    assert!(SortStrategy::pcs([0.0, 0.0, 1.0], [0.0, 0.0, 2.0]).is_err());
    assert!(SortStrategy::pcs([0.0, 0.0, 1.0], [1.0, 0.0, 0.0]).is_ok());
}

proptest! {
    #[test]
    fn permutation_sorts_by_key_then_coordinates(
        raw in prop::collection::vec((-3i32..=3, prop::array::uniform3(-2i32..=2)), 1..50)
    ) {
        let keys: Vec<f64> = raw.iter().map(|(k, _)| f64::from(*k)).collect();
        let pts: Vec<Point3> = raw.iter().map(|(_, p)| p.map(f64::from)).collect();
        let perm = sort_permutation(&keys, &pts).unwrap();
        let mut seen = perm.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..keys.len()).collect::<Vec<_>>());
        for w in perm.windows(2) {
            let (a, b) = (w[0], w[1]);
            prop_assert!(keys[a] < keys[b] || (keys[a] == keys[b] && lex_cmp(&pts[a], &pts[b]).is_le()));
        }
    }

    #[test]
    fn sorted_features_ignore_input_order(seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(&mut rng, 12);
        let feats = Matrix::from_fn(12, 2, |_, _| rng.random_range(-1.0..1.0));
        let mut order: Vec<usize> = (0..12).collect();
        order.shuffle(&mut rng);
        let p2: Vec<Point3> = order.iter().map(|&i| pts[i]).collect();
        let f2 = Matrix::from_fn(12, 2, |r, c| feats.get(order[r], c));
        for plan in [SortPlan::aps_xyz(), SortPlan::pcs_planes(), SortPlan::eds()] {
            let a = ordered_features(&pts, &feats, &plan).unwrap();
            let b = ordered_features(&p2, &f2, &plan).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
