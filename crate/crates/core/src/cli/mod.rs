//! Command-line entry points.
//!
//! Exit codes: 0 success, 1 runtime failure (including a failed covariance
//! check), 2 invalid input. Errors are printed to stderr as one JSON line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::CorrelationAccumulator;
use crate::noise::{sample_structured, theoretical_correlation, SharedTemporalMode, StructuredNoise};
use crate::pipeline::{run_psf4d, Ablation, TraceRecord};
use crate::tensor;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "psf4d", version, about = "Structured noise and view-consistent refinement for multi-view latent editing")]
pub struct Cli {
    /// Flat `key = value` config file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random stream (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Machine-readable JSON on stdout instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample structured noise and write it with a JSON sidecar.
    SampleNoise(SampleNoiseArgs),
    /// Compare empirical block correlations of a noise file with theory.
    VerifyCovariance(VerifyArgs),
    /// Run the edit pipeline on the synthetic scene.
    RunPipeline(RunPipelineArgs),
    /// Tabulate final-iteration metric deltas between traces.
    Compare(CompareArgs),
}

#[derive(Debug, Args, Default)]
pub struct NoiseFlags {
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub windows: Option<usize>,
    /// Frames per window.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    /// independent_per_window | ar_chained
    #[arg(long)]
    pub shared_temporal_mode: Option<SharedTemporalMode>,
}

#[derive(Debug, Args)]
pub struct SampleNoiseArgs {
    #[command(flatten)]
    pub noise: NoiseFlags,
    /// Output tensor path; the sidecar goes next to it with a `.json` extension.
    #[arg(long, default_value = "noise.bin")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub file: PathBuf,
    /// Absolute tolerance; defaults to max(0.015, 5 / sqrt(elements per block)).
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunPipelineArgs {
    #[command(flatten)]
    pub noise: NoiseFlags,
    /// Refinement iterations L.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub omega_start: Option<f64>,
    #[arg(long)]
    pub omega_end: Option<f64>,
    #[arg(long)]
    pub ddim_steps: Option<usize>,
    #[arg(long)]
    pub t_edit_fraction: Option<f64>,
    #[arg(long)]
    pub guidance_scale: Option<f64>,
    /// Switch off a component: no-anm | no-cnm | no-vcr (repeatable).
    #[arg(long = "ablate", value_name = "ARM")]
    pub ablate: Vec<Ablation>,
    /// Also write the per-iteration latents.
    #[arg(long)]
    pub dump_latents: bool,
    #[arg(long, default_value = "run")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// `trace.jsonl` files; deltas are relative to the first.
    #[arg(required = true, num_args = 1..)]
    pub traces: Vec<PathBuf>,
}

/// One line of `trace.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub config_hash: String,
    pub ablations: Vec<Ablation>,
    #[serde(flatten)]
    pub record: TraceRecord,
}

/// `metrics.csv` row; the column order is the field order.
#[derive(Debug, Serialize)]
struct CsvRow {
    iteration: usize,
    omega: Option<f64>,
    temporal_flicker: f64,
    inter_window_flicker: Option<f64>,
    cross_view_inconsistency: f64,
    psnr: f64,
    ssim: Option<f64>,
}

pub const CSV_COLUMNS: [&str; 7] = [
    "iteration",
    "omega",
    "temporal_flicker",
    "inter_window_flicker",
    "cross_view_inconsistency",
    "psnr",
    "ssim",
];

impl NoiseFlags {
    fn apply(&self, c: &mut RunConfig) {
        macro_rules! take {
            ($($field:ident => $key:ident),*) => {
                $(if let Some(v) = self.$field { c.$key = v; })*
            };
        }
        take!(gamma => gamma, lambda => lambda, views => views, windows => windows,
              frames => frames, channels => channels, height => height, width => width,
              shared_temporal_mode => shared_temporal_mode);
    }
}

impl Cli {
    /// Defaults, then the config file, then flags.
    fn base_config(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        Ok(c)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn cmd_sample_noise(cli: &Cli, args: &SampleNoiseArgs) -> Result<i32> {
    let mut c = cli.base_config()?;
    args.noise.apply(&mut c);
    let cfg = c.noise_config();
    cfg.validate()?;
    let noise = sample_structured(&cfg, &cfg.rng())?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    noise.save(&args.out)?;
    if cli.json {
        print_json(&serde_json::json!({
            "status": "ok",
            "tensor": args.out,
            "sidecar": crate::noise::sidecar_path(&args.out),
            "shape": cfg.shape(),
        }))?;
    } else {
        println!("wrote {} with shape {:?}", args.out.display(), cfg.shape());
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct PairCheck {
    a: (usize, usize),
    b: (usize, usize),
    empirical: Option<f64>,
    theoretical: f64,
    ok: bool,
}

fn cmd_verify_covariance(cli: &Cli, args: &VerifyArgs) -> Result<i32> {
    let noise = StructuredNoise::load(&args.file)?;
    let cfg = noise.config().clone();
    cfg.validate()?;
    let n = cfg.block_len();
    let tolerance = match args.tolerance {
        Some(t) if t > 0.0 && t.is_finite() => t,
        Some(t) => return Err(Error::param("tolerance", format!("must be positive, got {t}"))),
        None => (5.0 / (n as f64).sqrt()).max(0.015),
    };
    let blocks: Vec<(usize, usize)> = (0..cfg.views)
        .flat_map(|k| (0..cfg.windows).map(move |i| (k, i)))
        .collect();
    let mut checks = Vec::new();
    for (ia, &a) in blocks.iter().enumerate() {
        for &b in &blocks[ia + 1..] {
            let theoretical = theoretical_correlation(&cfg, a.0, a.1, b.0, b.1)?;
            let mut acc = CorrelationAccumulator::default();
            acc.push(noise.block(a.0, a.1)?, noise.block(b.0, b.1)?)?;
            let empirical = acc.correlation().ok();
            let ok = empirical.is_some_and(|e| (e - theoretical).abs() <= tolerance);
            checks.push(PairCheck {
                a,
                b,
                empirical,
                theoretical,
                ok,
            });
        }
    }
    let failed: Vec<&PairCheck> = checks.iter().filter(|c| !c.ok).collect();
    let pass = failed.is_empty();
    if cli.json {
        print_json(&serde_json::json!({
            "status": if pass { "PASS" } else { "FAIL" },
            "tolerance": tolerance,
            "elements_per_pair": n,
            "pairs": checks.len(),
            "offending": failed,
        }))?;
    } else {
        let worst = checks
            .iter()
            .filter_map(|c| c.empirical.map(|e| (e - c.theoretical).abs()))
            .fold(0.0, f64::max);
        println!("pairs checked     {}", checks.len());
        println!("elements per pair {n}");
        println!("tolerance         {tolerance:.4}");
        println!("max |emp - theo|  {worst:.4}");
        if !pass {
            println!("{:>10} {:>10} {:>11} {:>11}", "block a", "block b", "empirical", "theoretical");
            for c in &failed {
                let emp = c.empirical.map_or("degenerate".to_string(), |e| format!("{e:.4}"));
                println!(
                    "{:>10} {:>10} {:>11} {:>11.4}",
                    format!("({},{})", c.a.0, c.a.1),
                    format!("({},{})", c.b.0, c.b.1),
                    emp,
                    c.theoretical
                );
            }
        }
        println!("{}", if pass { "PASS" } else { "FAIL" });
    }
    Ok(if pass { EXIT_OK } else { EXIT_RUNTIME })
}

fn cmd_run_pipeline(cli: &Cli, args: &RunPipelineArgs) -> Result<i32> {
    let mut c = cli.base_config()?;
    args.noise.apply(&mut c);
    macro_rules! take {
        ($($field:ident),*) => { $(if let Some(v) = args.$field { c.$field = v; })* };
    }
    take!(iterations, omega_start, omega_end, ddim_steps, t_edit_fraction, guidance_scale);
    c.validate()?;
    let config_hash = c.hash();

    let mut pipeline = c.pipeline_config()?;
    let mut ablations = args.ablate.clone();
    ablations.sort_by_key(|a| a.to_string());
    ablations.dedup();
    for a in &ablations {
        a.apply(&mut pipeline);
    }
    let run = run_psf4d(&c.scene()?, &c.edit()?, &pipeline)?;

    let out = &args.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("config.txt"), c.to_text().as_bytes())?;

    let mut trace = Vec::new();
    for record in &run.trace {
        let line = TraceLine {
            config_hash: config_hash.clone(),
            ablations: ablations.clone(),
            record: record.clone(),
        };
        serde_json::to_writer(&mut trace, &line)?;
        trace.push(b'\n');
    }
    write_file(&out.join("trace.jsonl"), &trace)?;

    let mut csv = csv::Writer::from_writer(Vec::new());
    for r in &run.trace {
        csv.serialize(CsvRow {
            iteration: r.iteration,
            omega: r.omega,
            temporal_flicker: r.metrics.temporal_flicker,
            inter_window_flicker: r.metrics.inter_window_flicker,
            cross_view_inconsistency: r.metrics.cross_view_inconsistency,
            psnr: r.metrics.psnr,
            ssim: r.metrics.ssim,
        })
        .map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    let csv = csv.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    write_file(&out.join("metrics.csv"), &csv)?;

    tensor::save(out.join("model.bin"), &run.model.canonical)?;
    if args.dump_latents {
        let dir = out.join("latents");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (l, latents) in run.snapshots.iter().enumerate() {
            tensor::save(dir.join(format!("iter_{l}.bin")), latents)?;
        }
    }

    if cli.json {
        let last = run.trace.last().expect("trace has the initial record");
        print_json(&serde_json::json!({
            "status": "ok",
            "out_dir": out,
            "records": run.trace.len(),
            "config_hash": config_hash,
            "final": last,
        }))?;
    } else {
        println!("{:>9} {:>6} {:>12} {:>12} {:>9} {:>7}", "iteration", "omega", "flicker", "inconsist.", "psnr", "ssim");
        for r in &run.trace {
            let m = &r.metrics;
            println!(
                "{:>9} {:>6} {:>12.6} {:>12.6} {:>9.3} {:>7}",
                r.iteration,
                r.omega.map_or("-".into(), |w| format!("{w:.3}")),
                m.temporal_flicker,
                m.cross_view_inconsistency,
                m.psnr,
                m.ssim.map_or("-".into(), |s| format!("{s:.4}")),
            );
        }
        println!("wrote {}", out.display());
    }
    Ok(EXIT_OK)
}

/// Reads a trace file written by `run-pipeline`.
pub fn read_trace(path: &Path) -> Result<Vec<TraceLine>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<TraceLine> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<std::result::Result<_, _>>()?;
    if lines.is_empty() {
        return Err(Error::Config(format!("{} holds no trace records", path.display())));
    }
    Ok(lines)
}

#[derive(Debug, Serialize)]
struct CompareRow {
    trace: PathBuf,
    ablations: Vec<Ablation>,
    iterations: usize,
    temporal_flicker: f64,
    cross_view_inconsistency: f64,
    psnr: f64,
    delta_temporal_flicker: f64,
    delta_cross_view_inconsistency: f64,
    delta_psnr: f64,
}

fn cmd_compare(cli: &Cli, args: &CompareArgs) -> Result<i32> {
    let finals: Vec<TraceLine> = args
        .traces
        .iter()
        .map(|p| Ok(read_trace(p)?.pop().expect("non-empty")))
        .collect::<Result<_>>()?;
    let base = &finals[0];
    for (path, t) in args.traces.iter().zip(&finals).skip(1) {
        if t.config_hash != base.config_hash {
            eprintln!(
                "warning: {} was produced with config {} but {} with {}",
                path.display(),
                t.config_hash,
                args.traces[0].display(),
                base.config_hash
            );
        }
    }
    let delta = |a: f64, b: f64| if a == b { 0.0 } else { a - b };
    let rows: Vec<CompareRow> = args
        .traces
        .iter()
        .zip(&finals)
        .map(|(path, t)| {
            let (m, b) = (&t.record.metrics, &base.record.metrics);
            CompareRow {
                trace: path.clone(),
                ablations: t.ablations.clone(),
                iterations: t.record.iteration,
                temporal_flicker: m.temporal_flicker,
                cross_view_inconsistency: m.cross_view_inconsistency,
                psnr: m.psnr,
                delta_temporal_flicker: delta(m.temporal_flicker, b.temporal_flicker),
                delta_cross_view_inconsistency: delta(m.cross_view_inconsistency, b.cross_view_inconsistency),
                delta_psnr: delta(m.psnr, b.psnr),
            }
        })
        .collect();
    if cli.json {
        print_json(&rows)?;
    } else {
        println!(
            "{:<28} {:>4} {:>11} {:>11} {:>11} {:>11} {:>9} {:>9}",
            "run", "L", "flicker", "d flicker", "inconsist.", "d incons.", "psnr", "d psnr"
        );
        for r in &rows {
            let name = if r.ablations.is_empty() {
                "full".to_string()
            } else {
                r.ablations.iter().map(|a| a.to_string()).collect::<Vec<_>>().join("+")
            };
            println!(
                "{:<28} {:>4} {:>11.6} {:>+11.6} {:>11.6} {:>+11.6} {:>9.3} {:>+9.3}",
                name,
                r.iterations,
                r.temporal_flicker,
                r.delta_temporal_flicker,
                r.cross_view_inconsistency,
                r.delta_cross_view_inconsistency,
                r.psnr,
                r.delta_psnr
            );
        }
    }
    Ok(EXIT_OK)
}

fn dispatch(cli: &Cli) -> Result<i32> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::param("threads", "must be >= 1"));
        }
        // a second initialisation in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::SampleNoise(a) => cmd_sample_noise(cli, a),
        Command::VerifyCovariance(a) => cmd_verify_covariance(cli, a),
        Command::RunPipeline(a) => cmd_run_pipeline(cli, a),
        Command::Compare(a) => cmd_compare(cli, a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            let kind = if e.is_validation() { "validation" } else { "runtime" };
            let line = serde_json::json!({ "error": kind, "message": e.to_string() });
            let _ = writeln!(std::io::stderr(), "{line}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
