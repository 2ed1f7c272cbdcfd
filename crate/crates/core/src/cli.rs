//! Command-line front end: argument definitions, configuration files and
//! the four commands.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::baselines::{CpdConfig, IcpConfig, NicpConfig};
use crate::error::{Error, Result};
use crate::eval::{
    read_csv, render_plots, run_benchmark, run_method, sha256_hex, summary_table, write_report, BenchOptions, Method,
    MethodConfigs,
};
use crate::geom::LabeledCloud;
use crate::ndp::C2pConfig;
use crate::synth::{generate_dataset, load_manifest, GeneratorConfig, MANIFEST_NAME};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "c2p", version, about = "Complete-to-partial point cloud registration toolkit")]
pub struct Cli {
    /// TOML configuration file; command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed.
    #[arg(long, global = true, env = "C2P_SEED")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Generate(GenerateArgs),
    /// Register a source cloud to a target cloud.
    Register(RegisterArgs),
    /// Run methods over a dataset and write reports and plots.
    Bench(BenchArgs),
    /// Re-render the scatter plots from a results CSV.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Number of samples.
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    /// One of icp, nicp, cpd, c2p.
    #[arg(long, default_value = "c2p")]
    pub method: String,
    #[arg(long, default_value = "c2p_out")]
    pub out: PathBuf,
    /// Fall back to the identity when the rigid stage fails.
    #[arg(long)]
    pub allow_identity_init: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated methods.
    #[arg(long, default_value = "icp,nicp,cpd,c2p")]
    pub methods: String,
    /// Output directory; defaults to `<dataset>/bench`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Samples processed in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Record measured wall times (makes reruns differ in that column).
    #[arg(long)]
    pub timings: bool,
    #[arg(long)]
    pub allow_identity_init: bool,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub csv: PathBuf,
    /// Output directory; defaults to the CSV's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Contents of a configuration file. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub generator: GeneratorConfig,
    pub icp: IcpConfig,
    pub nicp: NicpConfig,
    pub cpd: CpdConfig,
    pub c2p: C2pConfig,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn methods(&self) -> MethodConfigs {
        MethodConfigs {
            icp: self.icp.clone(),
            nicp: self.nicp.clone(),
            cpd: self.cpd.clone(),
            c2p: self.c2p.clone(),
        }
    }

    /// Seeds every randomised component with `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.c2p.coarse.seed = seed;
        self.c2p.pyramid.seed = seed;
        self
    }
}

/// Exit status for an error: configuration and input problems are usage
/// errors, everything else is a runtime failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_) | Error::Io { .. } | Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

/// Record written next to every command's outputs.
#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    tool_version: &'a str,
    command: Vec<String>,
    config_sha256: String,
    seed: Option<u64>,
    config: &'a FileConfig,
}

fn write_run_manifest(dir: &Path, args: &[String], seed: Option<u64>, cfg: &FileConfig) -> Result<()> {
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        command: args.to_vec(),
        config_sha256: sha256_hex(serde_json::to_string(cfg)?.as_bytes()),
        seed,
        config: cfg,
    };
    let path = dir.join("run.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs a parsed command line. `args` is the raw argument list, recorded
/// in the run manifest. Human-readable output goes to stdout.
pub fn run(cli: Cli, args: &[String]) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    match cli.command {
        Command::Generate(a) => {
            cfg.generator.validate()?;
            let seed = cli.seed.unwrap_or(0);
            let m = generate_dataset(a.n, &cfg.generator, &a.out, seed)?;
            write_run_manifest(&a.out, args, Some(seed), &cfg)?;
            println!("manifest: {}", a.out.join(MANIFEST_NAME).display());
            println!("samples: {}", m.samples.len());
            println!("mean target displacement: {:.4} mm", m.mean_gt_displacement());
            println!("mean visible ratio: {:.4}", m.mean_visible_ratio());
            Ok(())
        }
        Command::Register(a) => {
            let method: Method = a.method.parse()?;
            cfg.c2p.allow_identity_init |= a.allow_identity_init;
            let src = LabeledCloud::load(&a.src)?;
            let tgt = LabeledCloud::load(&a.tgt)?;
            create_dir(&a.out)?;
            write_run_manifest(&a.out, args, cli.seed, &cfg)?;
            let start = std::time::Instant::now();
            let out = match run_method(method, &src, &tgt, &cfg.methods()) {
                Ok(o) => o,
                Err(e) => {
                    let diag = serde_json::json!({ "method": method, "status": "failed", "error": e.to_string() });
                    let p = a.out.join("diagnostics.json");
                    fs::write(&p, serde_json::to_string_pretty(&diag)? + "\n").map_err(|e| Error::io(&p, e))?;
                    return Err(e);
                }
            };
            let seconds = start.elapsed().as_secs_f64();
            out.field.save(&a.out.join("field.txt"))?;
            let deformed = src.with_geometry(out.deformed.clone(), src.support_points().to_vec(), src.landmarks().to_vec())?;
            deformed.save(&a.out.join("deformed.xyz"))?;
            let row = out.transform.to_row_major();
            let text: Vec<String> = row.chunks(4).map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")).collect();
            let p = a.out.join("transform.txt");
            fs::write(&p, text.join("\n") + "\n").map_err(|e| Error::io(&p, e))?;
            let diag = serde_json::json!({
                "method": method,
                "status": "ok",
                "wall_time_s": seconds,
                "initial_rigid_chamfer_mm": out.initial_rigid_chamfer,
                "details": out.diagnostics,
            });
            let p = a.out.join("diagnostics.json");
            fs::write(&p, serde_json::to_string_pretty(&diag)? + "\n").map_err(|e| Error::io(&p, e))?;
            println!("{method}: {} points registered in {seconds:.2} s -> {}", src.len(), a.out.display());
            Ok(())
        }
        Command::Bench(a) => {
            let methods = Method::parse_list(&a.methods)?;
            cfg.c2p.allow_identity_init |= a.allow_identity_init;
            let manifest = load_manifest(&a.dataset)?;
            let out = a.out.clone().unwrap_or_else(|| manifest.root.join("bench"));
            let opts = BenchOptions {
                jobs: a.jobs,
                timings: a.timings,
            };
            let report = run_benchmark(&manifest, &methods, &cfg.methods(), &opts)?;
            write_report(&report, &out)?;
            write_run_manifest(&out, args, cli.seed, &cfg)?;
            print!("{}", summary_table(&report.aggregates));
            for (m, t) in &report.trends {
                let f = |r: Option<f64>| r.map_or_else(|| "undefined".into(), |v| format!("{v:.3}"));
                println!(
                    "{m}: spearman(visible ratio, MDE) = {}, spearman(initial rigid error, MDE) = {}",
                    f(t.visible_ratio_rho),
                    f(t.initial_error_rho)
                );
            }
            println!("reports: {}", out.display());
            Ok(())
        }
        Command::Plot(a) => {
            let records = read_csv(&a.csv)?;
            let out = a
                .out
                .clone()
                .unwrap_or_else(|| a.csv.parent().map(Path::to_path_buf).unwrap_or_default());
            create_dir(&out)?;
            render_plots(&records, &out)?;
            println!("plots: {}", out.display());
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_sections_parse_and_reject_unknown_keys() {
        let text = "[c2p.pyramid]\nlevels = 3\n[cpd]\nbeta = 1.5\n[generator.nonrigid]\nslab_displacement = 0.1\n";
        let c = FileConfig::parse(text, Path::new("c.toml")).unwrap();
        assert_eq!(c.c2p.pyramid.levels, 3);
        assert_eq!(c.cpd.beta, 1.5);
        assert_eq!(c.generator.nonrigid.slab_displacement, 0.1);
        assert_eq!(c.icp, IcpConfig::default());
        let bad = FileConfig::parse("[c2p.pyramid]\nlevelz = 3\n", Path::new("c.toml"));
        assert!(matches!(bad, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn default_config_round_trips_through_toml() {
        let c = FileConfig::default();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(FileConfig::parse(&text, Path::new("c.toml")).unwrap(), c);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::InvalidConfig("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::RegistrationFailed("x".into())), EXIT_RUNTIME);
    }

    #[test]
    fn parses_commands() {
        let c = Cli::try_parse_from(["c2p", "generate", "--n", "3", "--out", "d"]).unwrap();
        assert!(matches!(c.command, Command::Generate(GenerateArgs { n: 3, .. })));
        assert!(Cli::try_parse_from(["c2p", "generate", "--n", "3"]).is_err());
    }
}
