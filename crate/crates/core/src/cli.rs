//! The `unmix` command line: `simulate`, `unmix`, `evaluate` and `benchmark`.
//!
//! Every command reads one flat key-per-line configuration file (TOML
//! syntax, every key optional) and lets flags override individual keys.
//! Each run writes a `manifest.toml` holding the effective configuration
//! followed by a `[manifest]` table with timings and output checksums.
//! Passing that manifest back as `--config` repeats the run exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::{
    format_label_map, format_library, format_matrix, format_trace, read_label_map, read_library,
    read_matrix, read_text, write_text,
};
use crate::error::{Result, UnmixError};
use crate::metrics::{evaluate, rms, EvaluationReport};
use crate::model::{
    AbundanceMatrix, EndmemberMatrix, HyperspectralScene, InitStrategy, SumToOne, UnmixConfig, Variant,
};
use crate::simdata::{simulate, simulate_from, MapStyle, SimConfig, SimulatedScene};
use crate::unmixing::solve;

pub const SCENE_FILE: &str = "scene.txt";
pub const ENDMEMBERS_FILE: &str = "endmembers.txt";
pub const ABUNDANCES_FILE: &str = "abundances.txt";
pub const LABELS_FILE: &str = "labels.txt";
pub const LIBRARY_FILE: &str = "library.txt";
pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_FILE: &str = "evaluation.txt";
pub const REPORT_KV_FILE: &str = "evaluation.toml";
pub const BENCHMARK_FILE: &str = "benchmark.txt";
pub const RUNS_FILE: &str = "runs.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";

/// Every configurable key. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    pub rows: usize,
    pub cols: usize,
    pub classes: usize,
    pub bands: usize,
    pub map_style: MapStyle,
    pub factor: usize,
    pub snr_db: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_map: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub library: Option<PathBuf>,

    pub variant: Variant,
    /// Defaults to `classes`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endmembers: Option<usize>,
    pub alpha: f64,
    pub beta: f64,
    pub sigma1: f64,
    pub neighbors: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub sum_to_one: SumToOne,
    pub delta: f64,
    pub init: InitStrategy,

    pub seeds: usize,
    pub variants: Vec<Variant>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<PathBuf>,

    /// Run record written by a previous command; ignored on input.
    #[serde(skip_serializing)]
    pub manifest: Option<toml::Table>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        let unmix = UnmixConfig::default();
        RunConfig {
            seed: 0,
            rows: sim.rows,
            cols: sim.cols,
            classes: sim.classes,
            bands: sim.bands,
            map_style: sim.style,
            factor: sim.factor,
            snr_db: sim.snr_db,
            label_map: None,
            library: None,
            variant: unmix.variant,
            endmembers: None,
            alpha: unmix.alpha,
            beta: unmix.beta,
            sigma1: unmix.sigma1,
            neighbors: unmix.neighbors,
            max_iterations: unmix.max_iterations,
            tolerance: unmix.objective_tolerance,
            sum_to_one: unmix.sum_to_one,
            delta: unmix.delta,
            init: unmix.init,
            seeds: 10,
            variants: Variant::ALL.to_vec(),
            scene: None,
            truth: None,
            result: None,
            manifest: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| UnmixError::Config(e.to_string().trim().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?)
            .map_err(|e| UnmixError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn sim_config(&self, seed: u64) -> SimConfig {
        SimConfig {
            rows: self.rows,
            cols: self.cols,
            classes: self.classes,
            bands: self.bands,
            style: self.map_style,
            factor: self.factor,
            snr_db: self.snr_db,
            seed,
        }
    }

    pub fn unmix_config(&self, variant: Variant, seed: u64) -> UnmixConfig {
        UnmixConfig {
            endmember_count: self.endmembers.unwrap_or(self.classes),
            variant,
            alpha: self.alpha,
            beta: self.beta,
            sigma1: self.sigma1,
            neighbors: self.neighbors,
            max_iterations: self.max_iterations,
            objective_tolerance: self.tolerance,
            seed,
            sum_to_one: self.sum_to_one,
            delta: self.delta,
            init: self.init,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "unmix", version, about = "Hyperspectral unmixing with graph-regularized sparse NMF")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic mixed-pixel scene with ground truth.
    Simulate(CommonArgs),
    /// Factorize a scene into endmembers and abundances.
    Unmix {
        /// Scene matrix file, or a directory containing `scene.txt`.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Score an unmixing result against ground truth.
    Evaluate {
        /// Directory with reference `endmembers.txt` and `abundances.txt`.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Directory with estimated `endmembers.txt` and `abundances.txt`.
        #[arg(long)]
        result: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run several variants over several seeds and tabulate RMS angles.
    Benchmark(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub sigma1: Option<f64>,
    #[arg(long)]
    pub neighbors: Option<usize>,
    #[arg(long)]
    pub factor: Option<usize>,
    #[arg(long = "snr-db")]
    pub snr_db: Option<f64>,
    #[arg(long = "max-iterations")]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

impl CommonArgs {
    /// Loads the config file (or defaults) and applies flag overrides.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    cfg.$field = v;
                }
            )*};
        }
        apply!(seed, variant, alpha, beta, sigma1, neighbors, factor, snr_db, max_iterations, tolerance);
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self
            .out
            .clone()
            .ok_or_else(|| UnmixError::Config("missing required `--out` directory".into()))?;
        fs::create_dir_all(&dir).map_err(|e| UnmixError::io(&dir, e))?;
        Ok(dir)
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(common) => {
            let cfg = common.resolve()?;
            cmd_simulate(&cfg, &common.out_dir()?)
        }
        Command::Unmix { scene, common } => {
            let mut cfg = common.resolve()?;
            if scene.is_some() {
                cfg.scene = scene;
            }
            cmd_unmix(&cfg, &common.out_dir()?)
        }
        Command::Evaluate {
            truth,
            result,
            common,
        } => {
            let mut cfg = common.resolve()?;
            if truth.is_some() {
                cfg.truth = truth;
            }
            if result.is_some() {
                cfg.result = result;
            }
            let out = match &common.out {
                Some(_) => common.out_dir()?,
                None => cfg
                    .result
                    .clone()
                    .ok_or_else(|| UnmixError::Config("missing `result` directory".into()))?,
            };
            cmd_evaluate(&cfg, &out)
        }
        Command::Benchmark(common) => {
            let cfg = common.resolve()?;
            cmd_benchmark(&cfg, &common.out_dir()?).map(|_| ())
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects output files and writes the manifest once the run is done.
struct Recorder {
    dir: PathBuf,
    started: Instant,
    outputs: Vec<(String, String)>,
}

impl Recorder {
    fn new(dir: &Path) -> Self {
        Recorder {
            dir: dir.to_path_buf(),
            started: Instant::now(),
            outputs: Vec::new(),
        }
    }

    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        write_text(&self.dir.join(name), text)?;
        self.outputs.push((name.to_string(), sha256_hex(text.as_bytes())));
        Ok(())
    }

    fn finish(self, command: &str, cfg: &RunConfig, extra: toml::Table) -> Result<()> {
        let mut table = toml::Table::new();
        table.insert("command".into(), command.into());
        table.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        table.insert(
            "wall_clock_seconds".into(),
            self.started.elapsed().as_secs_f64().into(),
        );
        let mut outputs = toml::Table::new();
        for (name, hash) in self.outputs {
            outputs.insert(name, hash.into());
        }
        table.insert("sha256".into(), outputs.into());
        table.extend(extra);
        let mut doc = toml::Table::new();
        doc.insert("manifest".into(), table.into());
        let text = format!(
            "# Re-run with: unmix {command} --config <this file> --out <dir>\n{}\n{}",
            cfg.to_toml(),
            toml::to_string(&doc).expect("manifest serializes")
        );
        write_text(&self.dir.join(MANIFEST_FILE), &text)
    }
}

/// Builds the simulated scene the config describes for one seed.
pub fn simulate_for(cfg: &RunConfig, seed: u64) -> Result<SimulatedScene> {
    let sim = cfg.sim_config(seed);
    if cfg.label_map.is_none() && cfg.library.is_none() {
        return simulate(&sim);
    }
    let map = match &cfg.label_map {
        Some(p) => read_label_map(p)?,
        None => crate::simdata::generate_label_map(sim.rows, sim.cols, sim.classes, seed, sim.style)?,
    };
    let library = match &cfg.library {
        Some(p) => read_library(p)?,
        None => crate::simdata::synthesize_library(map.class_count(), sim.bands, seed)?,
    };
    simulate_from(&sim, map, library)
}

pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut rec = Recorder::new(out);
    let sim = simulate_for(cfg, cfg.seed)?;
    rec.write(SCENE_FILE, &format_matrix(sim.scene.data()))?;
    rec.write(ENDMEMBERS_FILE, &format_matrix(sim.true_endmembers.signatures()))?;
    rec.write(ABUNDANCES_FILE, &format_matrix(sim.true_abundances.fractions()))?;
    rec.write(LABELS_FILE, &format_label_map(&sim.map))?;
    rec.write(LIBRARY_FILE, &format_library(&sim.library))?;
    eprintln!(
        "simulated {} pixels × {} bands, {} endmembers, noise σ = {:.3e} ({} clamped)",
        sim.scene.pixel_count(),
        sim.scene.band_count(),
        sim.true_endmembers.endmember_count(),
        sim.noise.sigma,
        sim.noise.clamped
    );
    let mut extra = toml::Table::new();
    extra.insert("pixels".into(), (sim.scene.pixel_count() as i64).into());
    extra.insert("noise_sigma".into(), sim.noise.sigma.into());
    extra.insert("noise_clamped".into(), (sim.noise.clamped as i64).into());
    rec.finish("simulate", cfg, extra)
}

fn scene_path(cfg: &RunConfig) -> Result<PathBuf> {
    let p = cfg
        .scene
        .clone()
        .ok_or_else(|| UnmixError::Config("missing `scene` (use --scene)".into()))?;
    Ok(if p.is_dir() { p.join(SCENE_FILE) } else { p })
}

pub fn cmd_unmix(cfg: &RunConfig, out: &Path) -> Result<()> {
    let path = scene_path(cfg)?;
    let scene = HyperspectralScene::new(read_matrix(&path)?)?;
    let mut rec = Recorder::new(out);
    let config = cfg.unmix_config(cfg.variant, cfg.seed);
    let result = solve(&scene, &config)?;
    rec.write(ENDMEMBERS_FILE, &format_matrix(result.endmembers.signatures()))?;
    rec.write(ABUNDANCES_FILE, &format_matrix(result.abundances.fractions()))?;
    rec.write(TRACE_FILE, &format_trace(&result.trace))?;
    let final_total = result.trace.last().map_or(result.initial.total, |o| o.total);
    eprintln!(
        "{}: {} iterations, {}, objective {final_total:.6e}",
        config.variant, result.iterations_run, result.termination
    );
    let mut extra = toml::Table::new();
    extra.insert("iterations_run".into(), (result.iterations_run as i64).into());
    extra.insert("termination".into(), result.termination.to_string().into());
    extra.insert("final_objective".into(), final_total.into());
    rec.finish("unmix", cfg, extra)
}

fn load_pair(dir: &Path) -> Result<(EndmemberMatrix, AbundanceMatrix)> {
    let w = EndmemberMatrix::new(read_matrix(&dir.join(ENDMEMBERS_FILE))?)?;
    let h = AbundanceMatrix::new(read_matrix(&dir.join(ABUNDANCES_FILE))?)?;
    Ok((w, h))
}

pub fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let truth = cfg
        .truth
        .clone()
        .ok_or_else(|| UnmixError::Config("missing `truth` directory (use --truth)".into()))?;
    let result = cfg
        .result
        .clone()
        .ok_or_else(|| UnmixError::Config("missing `result` directory (use --result)".into()))?;
    let (w_true, h_true) = load_pair(&truth)?;
    let (w_est, h_est) = load_pair(&result)?;
    if w_true.band_count() != w_est.band_count() {
        return Err(UnmixError::dims("band count", w_true.band_count(), w_est.band_count()));
    }
    let report = evaluate(&w_true, &h_true, &w_est, &h_est)?;
    fs::create_dir_all(out).map_err(|e| UnmixError::io(out, e))?;
    let mut rec = Recorder::new(out);
    rec.write(REPORT_FILE, &report.render_text())?;
    rec.write(REPORT_KV_FILE, &report.render_key_values())?;
    eprintln!(
        "rms SAD {:.4}°, rms AAD {:.4}°",
        report.rms_sad_display(),
        report.rms_aad_display()
    );
    rec.finish("evaluate", cfg, toml::Table::new())
}

/// One (variant, seed) cell of a benchmark.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkRun {
    pub variant: Variant,
    pub seed: u64,
    pub rms_sad_deg: f64,
    pub rms_aad_deg: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub variant: Variant,
    pub sad_mean: f64,
    pub sad_spread: f64,
    pub aad_mean: f64,
    pub aad_spread: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub runs: Vec<BenchmarkRun>,
    pub rows: Vec<BenchmarkRow>,
}

fn mean_and_spread(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl BenchmarkReport {
    pub fn row(&self, variant: Variant) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// `Some(true)` when GNMF-SMC has a lower mean on both angles than NMF.
    pub fn proposed_beats_baseline(&self) -> Option<(bool, bool)> {
        let base = self.row(Variant::Nmf)?;
        let prop = self.row(Variant::GnmfSmc)?;
        Some((prop.sad_mean < base.sad_mean, prop.aad_mean < base.aad_mean))
    }

    /// Methods × {SAD, AAD} grid, mean ± sample standard deviation in degrees.
    pub fn render_grid(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# rms angles in degrees, mean ± std over seeds");
        let _ = writeln!(out, "{:<10} {:>20} {:>20} {:>6}", "method", "SAD", "AAD", "seeds");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<10} {:>20} {:>20} {:>6}",
                r.variant.to_string(),
                format!("{:.4} ± {:.4}", r.sad_mean, r.sad_spread),
                format!("{:.4} ± {:.4}", r.aad_mean, r.aad_spread),
                r.seeds
            );
        }
        if let Some((sad, aad)) = self.proposed_beats_baseline() {
            let _ = writeln!(out, "gnmf_smc_sad_below_nmf\t{sad}");
            let _ = writeln!(out, "gnmf_smc_aad_below_nmf\t{aad}");
        }
        out
    }

    pub fn render_runs(&self) -> String {
        let mut out = String::from("variant,seed,rms_sad_deg,rms_aad_deg,iterations\n");
        for r in &self.runs {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.variant.key(),
                r.seed,
                r.rms_sad_deg,
                r.rms_aad_deg,
                r.iterations
            );
        }
        out
    }
}

/// Runs every configured variant on `seeds` consecutive seeds starting at
/// `cfg.seed`. Cells run in parallel; results are ordered by variant, then seed.
pub fn run_benchmark(cfg: &RunConfig) -> Result<BenchmarkReport> {
    if cfg.seeds == 0 || cfg.variants.is_empty() {
        return Err(UnmixError::Config("benchmark needs `seeds` ≥ 1 and at least one variant".into()));
    }
    let seeds: Vec<u64> = (0..cfg.seeds as u64).map(|k| cfg.seed + k).collect();
    let scenes: Vec<SimulatedScene> = seeds
        .par_iter()
        .map(|&s| simulate_for(cfg, s))
        .collect::<Result<_>>()?;
    let cells: Vec<(Variant, usize)> = cfg
        .variants
        .iter()
        .flat_map(|&v| (0..seeds.len()).map(move |i| (v, i)))
        .collect();
    let runs: Vec<BenchmarkRun> = cells
        .par_iter()
        .map(|&(variant, i)| {
            let sim = &scenes[i];
            let result = solve(&sim.scene, &cfg.unmix_config(variant, seeds[i]))?;
            let report: EvaluationReport =
                evaluate(&sim.true_endmembers, &sim.true_abundances, &result.endmembers, &result.abundances)?;
            Ok(BenchmarkRun {
                variant,
                seed: seeds[i],
                rms_sad_deg: report.rms_sad.to_degrees(),
                rms_aad_deg: report.rms_aad.to_degrees(),
                iterations: result.iterations_run,
            })
        })
        .collect::<Result<_>>()?;
    let rows = cfg
        .variants
        .iter()
        .map(|&variant| {
            let mine: Vec<&BenchmarkRun> = runs.iter().filter(|r| r.variant == variant).collect();
            let sad: Vec<f64> = mine.iter().map(|r| r.rms_sad_deg).collect();
            let aad: Vec<f64> = mine.iter().map(|r| r.rms_aad_deg).collect();
            let (sad_mean, sad_spread) = mean_and_spread(&sad);
            let (aad_mean, aad_spread) = mean_and_spread(&aad);
            BenchmarkRow {
                variant,
                sad_mean,
                sad_spread,
                aad_mean,
                aad_spread,
                seeds: mine.len(),
            }
        })
        .collect();
    Ok(BenchmarkReport { runs, rows })
}

pub fn cmd_benchmark(cfg: &RunConfig, out: &Path) -> Result<BenchmarkReport> {
    let mut rec = Recorder::new(out);
    let report = run_benchmark(cfg)?;
    rec.write(BENCHMARK_FILE, &report.render_grid())?;
    rec.write(RUNS_FILE, &report.render_runs())?;
    eprint!("{}", report.render_grid());
    let mut extra = toml::Table::new();
    let overall: Vec<f64> = report.runs.iter().map(|r| r.rms_sad_deg).collect();
    extra.insert("cells".into(), (report.runs.len() as i64).into());
    extra.insert("rms_of_all_sad_deg".into(), rms(&overall).into());
    rec.finish("benchmark", cfg, extra)?;
    Ok(report)
}
