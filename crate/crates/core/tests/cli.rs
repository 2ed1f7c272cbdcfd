mod common;

use common::{c2p, ok, snapshot};

#[test]
fn generate_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&c2p(&["--seed", "4", "generate", "--n", "3", "--out", "d"], tmp.path()));
    let first = snapshot(&tmp.path().join("d"));
    std::fs::remove_dir_all(tmp.path().join("d")).unwrap();
    ok(&c2p(&["--seed", "4", "generate", "--n", "3", "--out", "d"], tmp.path()));
    assert_eq!(first, snapshot(&tmp.path().join("d")));
    assert!(first.keys().any(|p| p.ends_with("manifest.json")));
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(c2p(&["generate", "--n", "3"], tmp.path()).status.code(), Some(2));
    let out = c2p(&["register", "--src", "a.xyz", "--tgt", "b.xyz", "--method", "sgd"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("icp, nicp, cpd, c2p"));
    let out = c2p(&["register", "--src", "missing.xyz", "--tgt", "missing.xyz"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(tmp.path().join("bad.toml"), "[c2p]\nbogus = 1\n").unwrap();
    let out = c2p(&["--config", "bad.toml", "generate", "--n", "1", "--out", "d"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn register_writes_one_field_row_per_source_point() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&c2p(&["--seed", "2", "generate", "--n", "1", "--out", "d"], tmp.path()));
    let out = c2p(
        &["register", "--src", "d/template.xyz", "--tgt", "d/samples/00000_partial.xyz", "--method", "icp", "--out", "r"],
        tmp.path(),
    );
    ok(&out);
    let template = std::fs::read_to_string(tmp.path().join("d/template.xyz")).unwrap();
    let field = std::fs::read_to_string(tmp.path().join("r/field.txt")).unwrap();
    let count = |s: &str| s.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()).count();
    let points = c2p_core::geom::LabeledCloud::parse(&template, "t".as_ref()).unwrap().len();
    assert_eq!(count(&field), points);
    let transform = std::fs::read_to_string(tmp.path().join("r/transform.txt")).unwrap();
    assert_eq!(transform.lines().count(), 3);
    let diag: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("r/diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["status"], "ok");
    assert!(tmp.path().join("r/run.json").exists());
}

#[test]
fn bench_reports_every_method_and_plot_rerenders() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&c2p(&["--seed", "9", "generate", "--n", "1", "--out", "d"], tmp.path()));
    let out = c2p(&["bench", "--dataset", "d", "--out", "b"], tmp.path());
    ok(&out);
    let summary = std::fs::read_to_string(tmp.path().join("b/summary.txt")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).filter(|l| !l.contains("spearman")).collect();
    assert_eq!(rows.len(), 4, "{summary}");
    for (row, m) in rows.iter().zip(["icp", "nicp", "cpd", "c2p"]) {
        assert!(row.starts_with(m), "{row}");
        assert!(row.contains("1/1"), "{row}");
    }
    let csv = std::fs::read_to_string(tmp.path().join("b/results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);

    ok(&c2p(&["plot", "--csv", "b/results.csv", "--out", "p"], tmp.path()));
    for f in ["mde_vs_visible_ratio.svg", "mde_vs_initial_error.svg"] {
        let a = std::fs::read(tmp.path().join("b").join(f)).unwrap();
        assert_eq!(a, std::fs::read(tmp.path().join("p").join(f)).unwrap());
    }
}

#[test]
fn bench_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&c2p(&["--seed", "5", "generate", "--n", "2", "--out", "d"], tmp.path()));
    let run = || {
        ok(&c2p(&["bench", "--dataset", "d", "--methods", "icp,c2p", "--out", "b"], tmp.path()));
        let s = snapshot(&tmp.path().join("b"));
        std::fs::remove_dir_all(tmp.path().join("b")).unwrap();
        s
    };
    let first = run();
    assert_eq!(first, run());
    assert!(first.len() >= 6);
}
