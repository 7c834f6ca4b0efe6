use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setmixer::corrupt::{corrupt, corruption_suite, mean_displacement, CorruptionKind, CorruptionSpec};
use setmixer::geom::{normalize, PointCloud};
use setmixer::io::encode_pcf;
use setmixer::rng::sha256_hex;
use setmixer::synth::{make_dataset, sample_raw, sample_shape, DatasetOptions, Family, ShapeSpec};

fn sphere(points: usize, seed: u64) -> PointCloud {
    sample_shape(&ShapeSpec::plain(Family::Sphere, points, seed)).unwrap()
}

#[test]
fn plane_samples_are_coplanar() {
    let cloud = sample_shape(&ShapeSpec::plain(Family::Plane, 300, 3)).unwrap();
    let n = cloud.len();
    let m = DMatrix::from_fn(n, 3, |r, c| cloud.coords()[r][c]);
    let centered = &m - DMatrix::from_fn(n, 3, |_, c| m.column(c).mean());
    let sv = centered.singular_values();
    assert!(sv.min() < 1e-9, "{sv}");
    assert!(sv.max() > 1.0);
}

#[test]
fn torus_points_satisfy_the_implicit_equation() {
    let (big, small) = (1.0, 0.35);
    let residual = |p: &[f64; 3]| (((p[0] * p[0] + p[1] * p[1]).sqrt() - big).powi(2) + p[2] * p[2]).sqrt() - small;
    let exact = sample_raw(&ShapeSpec::plain(Family::Torus, 512, 4)).unwrap();
    assert!(exact.iter().all(|p| residual(p).abs() < 1e-12));

    let sigma = 0.01;
    let spec = ShapeSpec { jitter: sigma, ..ShapeSpec::plain(Family::Torus, 512, 4) };
    let noisy = sample_raw(&spec).unwrap();
    let within = noisy.iter().filter(|p| residual(p).abs() <= 3.0 * sigma).count();
    assert!(within as f64 >= 0.98 * 512.0, "{within}");
    assert!(noisy.iter().all(|p| residual(p).abs() <= 6.0 * sigma));
}

#[test]
fn every_family_is_normalized_and_labelled() {
    for family in Family::ALL {
        let opts = DatasetOptions { rotate_z: true, ..DatasetOptions::default() };
        let cloud = sample_shape(&ShapeSpec::drawn(family, 9, &opts)).unwrap();
        assert_eq!(cloud.len(), 512);
        assert_eq!(cloud.label(), Some(family.index()));
        assert!((cloud.max_norm() - 1.0).abs() < 1e-9);
        assert!(cloud.centroid().iter().all(|c| c.abs() < 1e-9));
    }
}

#[test]
fn dataset_is_balanced_deterministic_and_split_disjoint() {
    let opts = DatasetOptions { points: 128, ..DatasetOptions::default() };
    let a = make_dataset(&Family::ALL, 20, 5, 42, &opts).unwrap();
    let b = make_dataset(&Family::ALL, 20, 5, 42, &opts).unwrap();
    assert_eq!((a.train.len(), a.test.len()), (160, 40));
    for (x, y) in a.train.iter().chain(&a.test).zip(b.train.iter().chain(&b.test)) {
        assert_eq!(encode_pcf(&x.cloud), encode_pcf(&y.cloud));
    }
    for label in 0..8 {
        assert_eq!(a.train.iter().filter(|s| s.cloud.label() == Some(label)).count(), 20);
    }
    let train: HashSet<String> = a.train.iter().map(|s| sha256_hex(&encode_pcf(&s.cloud))).collect();
    let test: HashSet<String> = a.test.iter().map(|s| sha256_hex(&encode_pcf(&s.cloud))).collect();
    assert_eq!(train.len(), 160);
    assert!(train.is_disjoint(&test));
    let seeds: HashSet<u64> = a.train.iter().chain(&a.test).map(|s| s.seed).collect();
    assert_eq!(seeds.len(), 200);
}

#[test]
fn subset_labels_follow_the_requested_order() {
    let opts = DatasetOptions { points: 64, ..DatasetOptions::default() };
    let d = make_dataset(&[Family::Helix, Family::Sphere], 2, 1, 1, &opts).unwrap();
    for s in d.train.iter().chain(&d.test) {
        let want = if s.family == Family::Helix { 0 } else { 1 };
        assert_eq!(s.cloud.label(), Some(want));
    }
}

#[test]
fn suite_has_every_cell_with_exact_counts() {
    let cloud = sphere(1000, 1);
    let suite = corruption_suite(&cloud, 5, 0).unwrap();
    assert_eq!(suite.len(), 25);
    for (spec, out) in &suite {
        let s = usize::from(spec.severity);
        let expected = if spec.kind.preserves_count() { 1000 } else { 1000 + 1000 * s / 10 };
        assert_eq!(out.len(), expected, "{spec:?}");
        assert_eq!(out.label(), cloud.label());
    }
}

#[test]
fn magnitudes_follow_their_bounds() {
    let cloud = sphere(1024, 2);
    let uni = corrupt(&cloud, &CorruptionSpec::new(CorruptionKind::Uniform, 5, 3).unwrap()).unwrap();
    for (p, q) in cloud.coords().iter().zip(uni.coords()) {
        assert!(p.iter().zip(q).all(|(a, b)| (a - b).abs() <= 0.05));
    }
    let imp = corrupt(&cloud, &CorruptionSpec::new(CorruptionKind::Impulse, 3, 3).unwrap()).unwrap();
    let moved: Vec<f64> = cloud
        .coords()
        .iter()
        .zip(imp.coords())
        .filter(|(p, q)| p != q)
        .flat_map(|(p, q)| (0..3).map(move |i| (q[i] - p[i]).abs()))
        .collect();
    assert_eq!(moved.len(), 102 * 3);
    assert!(moved.iter().all(|d| (d - 0.45).abs() < 1e-12));
    let bg = corrupt(&cloud, &CorruptionSpec::new(CorruptionKind::Background, 4, 3).unwrap()).unwrap();
    assert_eq!(&bg.coords()[..1024], cloud.coords());
    assert!(bg.coords()[1024..].iter().flatten().all(|v| v.abs() <= 1.0));
    let up = corrupt(&cloud, &CorruptionSpec::new(CorruptionKind::Upsampling, 2, 3).unwrap()).unwrap();
    for q in &up.coords()[1024..] {
        let near = cloud.coords().iter().any(|p| p.iter().zip(q).all(|(a, b)| (a - b).abs() <= 0.05));
        assert!(near);
    }
}

#[test]
fn gaussian_spread_tracks_its_sigma() {
    let cloud = sphere(4000, 5);
    for s in 1..=5u8 {
        let spec = CorruptionSpec::new(CorruptionKind::Gaussian, s, 9).unwrap();
        let out = corrupt(&cloud, &spec).unwrap();
        let d: Vec<f64> = cloud.coords().iter().zip(out.coords()).flat_map(|(p, q)| (0..3).map(move |i| q[i] - p[i])).collect();
        let sd = (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt();
        assert!((sd / spec.gaussian_sigma() - 1.0).abs() < 0.05, "s{s}: {sd}");
    }
}

#[test]
fn different_seeds_differ_and_unnormalized_input_fails() {
    let cloud = sphere(256, 6);
    let a = corrupt(&cloud, &CorruptionSpec::new(CorruptionKind::Gaussian, 2, 1).unwrap()).unwrap();
    let b = corrupt(&cloud, &CorruptionSpec::new(CorruptionKind::Gaussian, 2, 2).unwrap()).unwrap();
    assert!(mean_displacement(&a, &b).unwrap() > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let big = PointCloud::from_coords((0..10).map(|_| [rng.random_range(2.0..3.0), 0.0, 0.0]).collect()).unwrap();
    assert!(corrupt(&big, &CorruptionSpec::new(CorruptionKind::Uniform, 1, 1).unwrap()).is_err());
    assert!(corrupt(&normalize(&big).unwrap(), &CorruptionSpec::new(CorruptionKind::Uniform, 1, 1).unwrap()).is_ok());
}
