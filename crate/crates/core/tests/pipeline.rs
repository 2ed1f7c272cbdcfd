use c2p_core::geom::{centroid, RigidTransform, Vec3};
use c2p_core::ndp::{c2p_register, C2pConfig};
use c2p_core::synth::*;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn registering_a_cloud_to_itself_is_the_identity() {
    let t = build_template(&TemplateConfig::default(), 11).unwrap();
    let r = c2p_register(&t, &t, &C2pConfig::default()).unwrap();
    let id = RigidTransform::identity();
    let m = r.transform.to_row_major();
    for (a, b) in m.iter().zip(id.to_row_major()) {
        assert!((a - b).abs() < 1e-6, "{m:?}");
    }
    let err = median(r.field.vectors().iter().map(Vec3::norm).collect());
    assert!(err < 1e-3, "median {err}");
}

#[test]
fn rigid_only_sample_is_recovered() {
    let cfg = GeneratorConfig {
        nonrigid: NonRigidParams::null(0),
        ..GeneratorConfig::default()
    };
    let t = build_template(&cfg.template, 7).unwrap();
    let s = generate_sample(&t, &cfg, SampleSeeds::derive(7, 0)).unwrap();
    let r = c2p_register(&t, &s.partial, &C2pConfig::default()).unwrap();
    let c = centroid(t.points());
    assert!(r.transform.compose(&s.pose.inverse()).angle() < 0.05);
    assert!((r.transform.apply(&c) - s.pose.apply(&c)).norm() < 0.2);
    let err = median(r.field.vectors().iter().zip(s.gt_field.vectors()).map(|(a, b)| (a - b).norm()).collect());
    assert!(err < 0.1, "median {err}");
}

#[test]
fn registration_is_deterministic_per_seed() {
    let cfg = GeneratorConfig::default();
    let t = build_template(&cfg.template, 5).unwrap();
    let s = generate_sample(&t, &cfg, SampleSeeds::derive(5, 1)).unwrap();
    let a = c2p_register(&t, &s.partial, &C2pConfig::default()).unwrap();
    let b = c2p_register(&t, &s.partial, &C2pConfig::default()).unwrap();
    assert_eq!(a.field, b.field);
    assert_eq!(a.transform, b.transform);
}
