use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{deform_landmarks, landmark_error, mde};
use super::plot::render_plots;
use super::sha256_hex;
use super::trend::{trend_analysis, TrendPoint, TrendReport, MIN_TREND_SAMPLES};
use crate::baselines::{cpd, icp, nicp, CpdConfig, IcpConfig, NicpConfig};
use crate::error::{Error, Result};
use crate::geom::{chamfer_distance, DisplacementField, LabeledCloud, RigidTransform, Vec3};
use crate::ndp::{c2p_register, C2pConfig};
use crate::synth::{load_manifest, DatasetManifest, MANIFEST_NAME};

/// Largest tolerated fraction of failed samples per method.
pub const MAX_FAILURE_RATE: f64 = 0.2;

pub const CSV_NAME: &str = "results.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Icp,
    Nicp,
    Cpd,
    C2p,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Icp, Method::Nicp, Method::Cpd, Method::C2p];

    pub fn name(self) -> &'static str {
        match self {
            Method::Icp => "icp",
            Method::Nicp => "nicp",
            Method::Cpd => "cpd",
            Method::C2p => "c2p",
        }
    }

    /// Parses a comma-separated list, keeping the given order.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        let methods: Vec<Method> = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        if methods.is_empty() {
            return Err(Error::InvalidConfig("method list is empty".into()));
        }
        Ok(methods)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}; valid methods: icp, nicp, cpd, c2p")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodConfigs {
    pub icp: IcpConfig,
    pub nicp: NicpConfig,
    pub cpd: CpdConfig,
    pub c2p: C2pConfig,
}

/// A method's answer for one source/target pair.
#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub method: Method,
    /// Displacement of every source point, rigid part included.
    pub field: DisplacementField,
    pub deformed: Vec<Vec3>,
    /// Rigid part: the coarse alignment for the pipeline, the estimate for
    /// ICP, the identity otherwise.
    pub transform: RigidTransform,
    /// Chamfer distance (mm) of the source under the method's rigid
    /// initialisation.
    pub initial_rigid_chamfer: f64,
    pub diagnostics: serde_json::Value,
}

pub fn run_method(method: Method, source: &LabeledCloud, target: &LabeledCloud, cfg: &MethodConfigs) -> Result<MethodOutput> {
    let src = source.points();
    let tgt = target.points();
    let unaligned = || chamfer_distance(src, tgt);
    let (field, transform, initial_rigid_chamfer, diagnostics) = match method {
        Method::Icp => {
            let r = icp(src, tgt, &cfg.icp)?;
            let moved: Vec<Vec3> = src.iter().map(|p| r.transform.apply(p)).collect();
            let diag = serde_json::json!({ "iterations": r.iterations, "residuals": r.residuals });
            (DisplacementField::between(src, &moved)?, r.transform, unaligned()?, diag)
        }
        Method::Nicp => {
            let r = nicp(src, tgt, &cfg.nicp)?;
            let diag = serde_json::json!({ "residuals": r.residuals, "bridges": r.bridges });
            (r.field, RigidTransform::identity(), unaligned()?, diag)
        }
        Method::Cpd => {
            let r = cpd(src, tgt, &cfg.cpd)?;
            let diag = serde_json::json!({ "iterations": r.iterations, "objective": r.objective, "sigma2": r.sigma2 });
            (r.field, RigidTransform::identity(), unaligned()?, diag)
        }
        Method::C2p => {
            let r = c2p_register(source, target, &cfg.c2p)?;
            let diag = serde_json::json!({ "summary": r.diagnostics, "levels": r.trace });
            (r.field, r.transform, r.diagnostics.initial_chamfer, diag)
        }
    };
    let deformed = field.apply(src)?;
    Ok(MethodOutput {
        method,
        field,
        deformed,
        transform,
        initial_rigid_chamfer,
        diagnostics,
    })
}

/// One row of the per-sample CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub sample_id: usize,
    pub method: Method,
    pub mde_mm: Option<f64>,
    pub chamfer_mm: Option<f64>,
    pub landmark_mm: Option<f64>,
    pub visible_ratio: f64,
    pub init_rigid_chamfer_mm: Option<f64>,
    pub wall_time_s: f64,
    pub status: String,
}

impl BenchRecord {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub samples: usize,
    pub failures: usize,
    pub mde_mm: Option<f64>,
    pub landmark_mm: Option<f64>,
    pub chamfer_mm: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub manifest_sha256: String,
    pub config_sha256: String,
    pub master_seed: u64,
    pub methods: Vec<Method>,
    pub timings: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub provenance: Provenance,
    pub config: MethodConfigs,
    pub records: Vec<BenchRecord>,
    pub aggregates: Vec<Aggregate>,
    /// Trend analyses per method with enough successful samples.
    pub trends: Vec<(Method, TrendReport)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    pub jobs: usize,
    /// Record measured wall times. Off by default so that reruns are
    /// byte-identical; the column then holds zeros.
    pub timings: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { jobs: 1, timings: false }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn aggregate(records: &[BenchRecord], methods: &[Method]) -> Vec<Aggregate> {
    methods
        .iter()
        .map(|&m| {
            let rows: Vec<&BenchRecord> = records.iter().filter(|r| r.method == m).collect();
            let ok: Vec<&&BenchRecord> = rows.iter().filter(|r| r.ok()).collect();
            Aggregate {
                method: m,
                samples: rows.len(),
                failures: rows.len() - ok.len(),
                mde_mm: mean(ok.iter().filter_map(|r| r.mde_mm)),
                landmark_mm: mean(ok.iter().filter_map(|r| r.landmark_mm)),
                chamfer_mm: mean(ok.iter().filter_map(|r| r.chamfer_mm)),
                wall_time_s: mean(rows.iter().map(|r| r.wall_time_s)).unwrap_or(0.0),
            }
        })
        .collect()
}

pub fn trends(records: &[BenchRecord], methods: &[Method]) -> Vec<(Method, TrendReport)> {
    methods
        .iter()
        .filter_map(|&m| {
            let points: Vec<TrendPoint> = records
                .iter()
                .filter(|r| r.method == m && r.ok())
                .filter_map(|r| {
                    Some(TrendPoint {
                        visible_ratio: r.visible_ratio,
                        initial_error: r.init_rigid_chamfer_mm?,
                        mde: r.mde_mm?,
                    })
                })
                .collect();
            if points.len() < MIN_TREND_SAMPLES {
                return None;
            }
            trend_analysis(&points).ok().map(|t| (m, t))
        })
        .collect()
}

struct LoadedSample {
    id: usize,
    template: LabeledCloud,
    partial: LabeledCloud,
    gt: DisplacementField,
    visible_ratio: f64,
}

fn load_sample(manifest: &DatasetManifest, i: usize) -> Result<LoadedSample> {
    let rec = &manifest.samples[i];
    let template = LabeledCloud::load(&manifest.path(&rec.template))?;
    let partial = LabeledCloud::load(&manifest.path(&rec.partial))?;
    let gt = DisplacementField::load(&manifest.path(&rec.gt_field))?;
    if gt.len() != template.len() {
        return Err(Error::ShapeMismatch {
            expected: template.len(),
            actual: gt.len(),
        });
    }
    Ok(LoadedSample {
        id: rec.id,
        template,
        partial,
        gt,
        visible_ratio: rec.visible_ratio,
    })
}

fn evaluate(sample: &LoadedSample, method: Method, cfg: &MethodConfigs, timings: bool) -> BenchRecord {
    let start = Instant::now();
    let out = run_method(method, &sample.template, &sample.partial, cfg);
    let wall = if timings { start.elapsed().as_secs_f64() } else { 0.0 };
    let base = BenchRecord {
        sample_id: sample.id,
        method,
        mde_mm: None,
        chamfer_mm: None,
        landmark_mm: None,
        visible_ratio: sample.visible_ratio,
        init_rigid_chamfer_mm: None,
        wall_time_s: wall,
        status: "ok".into(),
    };
    let metrics = out.and_then(|o| {
        let m = mde(&o.field, &sample.gt)?;
        let cd = chamfer_distance(&o.deformed, sample.partial.points())?;
        let moved = deform_landmarks(sample.template.points(), &o.field, sample.template.landmarks())?;
        let lm = match landmark_error(&moved, sample.partial.landmarks()) {
            Ok(l) => Some(l.mean),
            Err(Error::EmptyLandmarks) => None,
            Err(e) => return Err(e),
        };
        Ok((m, cd, lm, o.initial_rigid_chamfer))
    });
    match metrics {
        Ok((m, cd, lm, init)) => BenchRecord {
            mde_mm: Some(m),
            chamfer_mm: Some(cd),
            landmark_mm: lm,
            init_rigid_chamfer_mm: Some(init),
            ..base
        },
        Err(e) => BenchRecord {
            status: format!("failed: {e}"),
            ..base
        },
    }
}

/// Runs every method on every sample of the dataset. Per-sample failures
/// are recorded; more than 20% failures for any method is an error.
pub fn run_benchmark(
    manifest: &DatasetManifest,
    methods: &[Method],
    cfg: &MethodConfigs,
    opts: &BenchOptions,
) -> Result<RunReport> {
    if methods.is_empty() {
        return Err(Error::InvalidConfig("method list is empty".into()));
    }
    if manifest.samples.is_empty() {
        return Err(Error::InvalidConfig("dataset has no samples".into()));
    }
    let manifest_bytes = fs::read(manifest.path(MANIFEST_NAME)).map_err(|e| Error::io(manifest.path(MANIFEST_NAME), e))?;
    let config_json = serde_json::to_string(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::Harness(e.to_string()))?;
    let records: Vec<BenchRecord> = pool.install(|| {
        (0..manifest.samples.len())
            .into_par_iter()
            .map(|i| -> Result<Vec<BenchRecord>> {
                let sample = load_sample(manifest, i)?;
                Ok(methods.iter().map(|&m| evaluate(&sample, m, cfg, opts.timings)).collect())
            })
            .collect::<Result<Vec<_>>>()
    })?
    .into_iter()
    .flatten()
    .collect();

    let aggregates = aggregate(&records, methods);
    for a in &aggregates {
        if a.failures as f64 > MAX_FAILURE_RATE * a.samples as f64 {
            let first = records
                .iter()
                .find(|r| r.method == a.method && !r.ok())
                .map(|r| r.status.clone())
                .unwrap_or_default();
            return Err(Error::Harness(format!(
                "{}: {} of {} samples failed ({first})",
                a.method, a.failures, a.samples
            )));
        }
    }
    Ok(RunReport {
        provenance: Provenance {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            manifest_sha256: sha256_hex(&manifest_bytes),
            config_sha256: sha256_hex(config_json.as_bytes()),
            master_seed: manifest.master_seed,
            methods: methods.to_vec(),
            timings: opts.timings,
        },
        config: cfg.clone(),
        trends: trends(&records, methods),
        aggregates,
        records,
    })
}

/// Loads the manifest at `dataset` and runs [`run_benchmark`].
pub fn run_benchmark_at(dataset: &Path, methods: &[Method], cfg: &MethodConfigs, opts: &BenchOptions) -> Result<RunReport> {
    run_benchmark(&load_manifest(dataset)?, methods, cfg, opts)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn write_csv(records: &[BenchRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "sample_id",
        "method",
        "mde_mm",
        "chamfer_mm",
        "landmark_mm",
        "visible_ratio",
        "init_rigid_chamfer_mm",
        "wall_time_s",
        "status",
    ])?;
    for r in records {
        w.write_record([
            r.sample_id.to_string(),
            r.method.to_string(),
            opt(r.mde_mm),
            opt(r.chamfer_mm),
            opt(r.landmark_mm),
            r.visible_ratio.to_string(),
            opt(r.init_rigid_chamfer_mm),
            r.wall_time_s.to_string(),
            r.status.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<BenchRecord>> {
    let mut rd = csv::Reader::from_path(path)?;
    let parse_opt = |s: &str, line: usize| -> Result<Option<f64>> {
        if s.is_empty() {
            return Ok(None);
        }
        s.parse().map(Some).map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("bad number {s:?}"),
        })
    };
    let mut out = Vec::new();
    for (i, row) in rd.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let field = |k: usize| row.get(k).unwrap_or("");
        let bad = |m: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: m,
        };
        out.push(BenchRecord {
            sample_id: field(0).parse().map_err(|_| bad(format!("bad sample id {:?}", field(0))))?,
            method: field(1).parse()?,
            mde_mm: parse_opt(field(2), line)?,
            chamfer_mm: parse_opt(field(3), line)?,
            landmark_mm: parse_opt(field(4), line)?,
            visible_ratio: parse_opt(field(5), line)?.ok_or_else(|| bad("missing visible ratio".into()))?,
            init_rigid_chamfer_mm: parse_opt(field(6), line)?,
            wall_time_s: parse_opt(field(7), line)?.unwrap_or(0.0),
            status: field(8).to_string(),
        });
    }
    Ok(out)
}

/// Aligned text table: one row per method.
pub fn summary_table(aggregates: &[Aggregate]) -> String {
    let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:>10} {:>10} {:>10} {:>9} {:>10}",
        "method", "M_MDE[mm]", "M_L[mm]", "M_CD[mm]", "ok/total", "time[s]"
    );
    for a in aggregates {
        let _ = writeln!(
            out,
            "{:<8} {:>10} {:>10} {:>10} {:>9} {:>10.2}",
            a.method.name(),
            f(a.mde_mm),
            f(a.landmark_mm),
            f(a.chamfer_mm),
            format!("{}/{}", a.samples - a.failures, a.samples),
            a.wall_time_s
        );
    }
    out
}

/// Writes `results.csv`, `summary.txt`, `summary.json`, `report.json` and
/// the scatter plots into `dir`.
pub fn write_report(report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(&report.records, &dir.join(CSV_NAME))?;
    let mut text = summary_table(&report.aggregates);
    for (m, t) in &report.trends {
        let rho = |r: Option<f64>| r.map_or_else(|| "undefined".to_string(), |v| format!("{v:.3}"));
        let _ = writeln!(
            text,
            "{m}: spearman(visible ratio, MDE) = {}, spearman(initial rigid error, MDE) = {}",
            rho(t.visible_ratio_rho),
            rho(t.initial_error_rho)
        );
    }
    let p = dir.join("summary.txt");
    fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    let p = dir.join("summary.json");
    let summary = serde_json::json!({ "provenance": report.provenance, "aggregates": report.aggregates });
    fs::write(&p, serde_json::to_string_pretty(&summary)? + "\n").map_err(|e| Error::io(&p, e))?;
    let p = dir.join("report.json");
    fs::write(&p, serde_json::to_string_pretty(report)? + "\n").map_err(|e| Error::io(&p, e))?;
    render_plots(&report.records, dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: usize, method: Method, mde: f64, ok: bool) -> BenchRecord {
        BenchRecord {
            sample_id: id,
            method,
            mde_mm: Some(mde),
            chamfer_mm: Some(0.1 * id as f64),
            landmark_mm: None,
            visible_ratio: 0.5,
            init_rigid_chamfer_mm: Some(0.25),
            wall_time_s: 0.0,
            status: if ok { "ok".into() } else { "failed: x, y".into() },
        }
    }

    #[test]
    fn method_parsing() {
        assert_eq!(Method::parse_list("icp, c2p").unwrap(), vec![Method::Icp, Method::C2p]);
        assert!(matches!(Method::parse_list(""), Err(Error::InvalidConfig(_))));
        let e = "foo".parse::<Method>().unwrap_err().to_string();
        assert!(e.contains("icp, nicp, cpd, c2p"));
    }

    #[test]
    fn csv_round_trip_keeps_aggregates_exact() {
        let dir = tempfile::tempdir().unwrap();
        let recs: Vec<BenchRecord> = (0..7)
            .map(|i| record(i, Method::Icp, 1.0 / (i as f64 + 3.0), i != 4))
            .collect();
        let path = dir.path().join("r.csv");
        write_csv(&recs, &path).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back, recs);
        assert_eq!(aggregate(&back, &[Method::Icp]), aggregate(&recs, &[Method::Icp]));
        let agg = &aggregate(&recs, &[Method::Icp])[0];
        assert_eq!(agg.failures, 1);
        assert_eq!(agg.landmark_mm, None);
    }

    #[test]
    fn summary_has_one_row_per_method() {
        let recs = vec![record(0, Method::Icp, 1.0, true), record(0, Method::C2p, 0.5, true)];
        let t = summary_table(&aggregate(&recs, &[Method::Icp, Method::C2p]));
        assert_eq!(t.lines().count(), 3);
        assert!(t.lines().nth(2).unwrap().starts_with("c2p"));
    }
}
