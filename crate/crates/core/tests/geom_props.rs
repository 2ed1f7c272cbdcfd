use c2p_core::geom::*;
use proptest::prelude::*;

fn point() -> impl Strategy<Value = Vec3> {
    (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn cloud(max: usize) -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec(point(), 1..max)
}

fn transform() -> impl Strategy<Value = RigidTransform> {
    (point(), -3.0..3.0f64, point()).prop_map(|(axis, angle, t)| RigidTransform::from_axis_angle(&axis, angle, t))
}

fn brute_nearest(q: &Vec3, pts: &[Vec3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, p) in pts.iter().enumerate() {
        let d = (p - q).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kdtree_matches_exhaustive_scan(pts in cloud(300), queries in prop::collection::vec(point(), 1..20), k in 1usize..10) {
        let tree = KdTree::new(&pts);
        for q in &queries {
            prop_assert_eq!(tree.nearest_sq(q).unwrap(), brute_nearest(q, &pts));
            let mut all: Vec<(usize, f64)> = pts.iter().enumerate().map(|(i, p)| (i, (p - q).norm_squared())).collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            all.truncate(k);
            prop_assert_eq!(tree.knn_sq(q, k), all);
            let r = 4.0;
            let inside: Vec<usize> = (0..pts.len()).filter(|&i| (pts[i] - q).norm_squared() <= r * r).collect();
            prop_assert_eq!(tree.within_radius(q, r), inside);
        }
    }

    #[test]
    fn chamfer_is_symmetric_nonnegative_and_zero_on_self(a in cloud(80), b in cloud(80)) {
        let ab = chamfer_distance(&a, &b).unwrap();
        let ba = chamfer_distance(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
        prop_assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_is_rigidly_invariant(a in cloud(60), b in cloud(60), t in transform()) {
        let ta: Vec<Vec3> = a.iter().map(|p| t.apply(p)).collect();
        let tb: Vec<Vec3> = b.iter().map(|p| t.apply(p)).collect();
        let d0 = chamfer_distance(&a, &b).unwrap();
        let d1 = chamfer_distance(&ta, &tb).unwrap();
        prop_assert!((d0 - d1).abs() < 1e-9);
    }

    #[test]
    fn transforms_compose_and_invert(a in transform(), b in transform(), p in point()) {
        prop_assert!((a.compose(&a.inverse()).apply(&p) - p).norm() < 1e-9);
        prop_assert!((a.compose(&b).apply(&p) - a.apply(&b.apply(&p))).norm() < 1e-9);
        prop_assert!(a.angle() >= 0.0 && a.angle() <= std::f64::consts::PI + 1e-12);
    }

    #[test]
    fn kabsch_recovers_random_motion(t in transform(), pts in prop::collection::vec(point(), 4..40)) {
        let spread = pts.iter().map(|p| (p - centroid(&pts)).norm()).fold(0.0, f64::max);
        prop_assume!(spread > 1.0);
        let moved: Vec<Vec3> = pts.iter().map(|p| t.apply(p)).collect();
        if let Ok(est) = estimate_rigid(&pts, &moved, None) {
            for (p, q) in pts.iter().zip(&moved) {
                prop_assert!((est.apply(p) - q).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn field_text_is_stable_at_nine_digits(v in prop::collection::vec(point(), 1..50)) {
        let f = DisplacementField::new(v).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.txt");
        f.save(&path).unwrap();
        let back = DisplacementField::load(&path).unwrap();
        for (a, b) in back.vectors().iter().zip(f.vectors()) {
            prop_assert!((a - b).amax() <= 1e-8 * b.amax().max(1e-300));
        }
        prop_assert_eq!(back.to_text(), f.to_text());
    }

    #[test]
    fn cloud_text_is_stable_at_nine_digits(pts in cloud(50), seed in 0u64..1000) {
        let labels: Vec<usize> = (0..pts.len()).map(|i| (i as u64 * 7 + seed) as usize % 3).collect();
        let c = LabeledCloud::from_labeled_points(pts, labels).unwrap();
        let back = LabeledCloud::parse(&c.to_text(), std::path::Path::new("mem")).unwrap();
        for (a, b) in back.points().iter().zip(c.points()) {
            prop_assert!((a - b).amax() <= 1e-8 * b.amax().max(1e-300));
        }
        prop_assert_eq!(back.labels(), c.labels());
        prop_assert_eq!(back.to_text(), c.to_text());
    }
}
