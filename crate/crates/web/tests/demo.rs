use setmixer_web::{corrupt_points, group_ranks, shape_points};

#[test]
fn shape_is_normalized() {
    let pts = shape_points("torus", 256, 3, 0.0).unwrap();
    assert_eq!(pts.len(), 768);
    for p in pts.chunks(3) {
        assert!((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() <= 1.0 + 1e-12);
    }
    assert!(shape_points("teapot", 256, 3, 0.0).is_err());
}

#[test]
fn ranks_cover_each_group() {
    let pts = shape_points("sphere", 200, 1, 0.0).unwrap();
    let out = group_ranks(&pts, 8, 16, "aps-z").unwrap();
    let mut firsts = 0;
    for g in 0..8 {
        let ranks: Vec<f64> = out.chunks(2).filter(|c| c[0] == g as f64).map(|c| c[1]).collect();
        assert!(!ranks.is_empty());
        assert!(ranks.iter().all(|r| (0.0..=1.0).contains(r)));
        firsts += usize::from(ranks.contains(&0.0));
    }
    assert!(firsts >= 1);
    assert!(group_ranks(&pts, 8, 16, "zigzag").is_err());
    assert!(group_ranks(&pts[..5], 1, 1, "eds").is_err());
}

#[test]
fn corruption_counts() {
    let pts = shape_points("cube_surface", 300, 2, 0.0).unwrap();
    assert_eq!(corrupt_points(&pts, "background", 5, 0).unwrap().len(), 3 * 450);
    assert_eq!(corrupt_points(&pts, "gaussian", 2, 0).unwrap().len(), 900);
    assert!(corrupt_points(&pts, "gaussian", 9, 0).is_err());
}
