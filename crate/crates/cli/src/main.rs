//! `ht-sentinel` command-line interface.
//!
//! Machine-readable JSON goes to stdout, human-readable notes to stderr.
//! Exit codes: 0 success, 1 usage or configuration, 2 input data,
//! 3 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ht_sentinel::calibration::{self, CalibrationConfig, SelectionRule};
use ht_sentinel::criterion::{self, PhaseRuleParams, StopMode, Trajectory};
use ht_sentinel::ingest::{self, EntryKind};
use ht_sentinel::powerlaw::{self, TailSample, DEFAULT_SIGNIFICANCE};
use ht_sentinel::report::{self, EntryFailure, PlotKind, Series};
use ht_sentinel::spectra::{esd, Spectrum};
use ht_sentinel::synth::{self, SampleDistribution, TrajectorySpec};
use ht_sentinel::theory::{self, TheoryConfig};
use ht_sentinel::{Error, ErrorKind, SCHEMA};
use rayon::prelude::*;
use serde_json::{json, Value};

const THREADS_ENV: &str = "HT_SENTINEL_THREADS";

#[derive(Parser)]
#[command(
    name = "ht-sentinel",
    version,
    about = "Heavy-tail spectral diagnostics for weight matrices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the eigenvalues of WᵀW for an NPY matrix.
    Esd { matrix: PathBuf, out: PathBuf },
    /// Fit a power-law tail to a matrix (.npy) or eigenvalue list.
    Fit {
        input: PathBuf,
        #[arg(long, default_value_t = powerlaw::DEFAULT_MIN_TAIL)]
        min_tail: usize,
        /// Bootstrap replicates for the goodness-of-fit p-value (at least 100).
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Threshold constant C in d* = C/√n_tail.
        #[arg(long, default_value_t = calibration::DEFAULT_C)]
        c: f64,
    },
    /// Monte Carlo calibration of the threshold constant C.
    Calibrate {
        #[arg(long, value_delimiter = ',', default_values_t = calibration::DEFAULT_ALPHAS)]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = calibration::DEFAULT_N_TAILS)]
        ntails: Vec<usize>,
        #[arg(long, default_value_t = calibration::DEFAULT_RUNS)]
        runs: usize,
        #[arg(long, default_value_t = calibration::DEFAULT_SEED)]
        seed: u64,
        /// Output prefix; writes <out>.json and <out>.hist.csv.
        #[arg(long, default_value = "calibration")]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        x_min: f64,
        /// Pooled quantile of S that C must cover.
        #[arg(long, default_value_t = SelectionRule::default().quantile)]
        quantile: f64,
        #[arg(long, default_value_t = SelectionRule::default().grid_step)]
        grid_step: f64,
        #[arg(long, default_value_t = 40)]
        bins: usize,
        /// Include every S value in the JSON output.
        #[arg(long)]
        include_samples: bool,
    },
    /// Run the full pipeline over a manifest of checkpoints.
    Analyze {
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Offline)]
        mode: Mode,
        #[arg(long, default_value_t = criterion::DEFAULT_PATIENCE)]
        patience: usize,
        /// Output prefix for the CSV, JSON and SVG files.
        #[arg(long, default_value = "trajectory")]
        out_prefix: PathBuf,
        #[arg(long, default_value_t = PhaseRuleParams::default().window)]
        window: usize,
        #[arg(long, default_value_t = PhaseRuleParams::default().alpha_std_threshold)]
        alpha_std: f64,
        #[arg(long, default_value_t = PhaseRuleParams::default().alpha_ceiling)]
        alpha_ceiling: f64,
        #[arg(long, default_value_t = PhaseRuleParams::default().xmin_slope_threshold)]
        xmin_slope: f64,
    },
    /// Generate synthetic samples, matrices or a whole trajectory.
    Synth(SynthArgs),
    /// Numerical checks of the cross-entropy smoothness claims.
    Theory {
        #[arg(long, default_value = "theory.json")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = TheoryConfig::default().probes)]
        probes: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Offline,
    Online,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    PowerLaw,
    Exponential,
    LogNormal,
    GaussianMatrix,
    HeavytailMatrix,
    Trajectory,
}

/// A command failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Config => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numeric => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_failure(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

type CmdResult = Result<(Value, u8), Failure>;

fn emit(mut value: Value) {
    if let Some(obj) = value.as_object_mut() {
        obj.insert("schema".into(), Value::from(SCHEMA));
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&value).expect("JSON values always serialize")
    );
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Error> {
    std::fs::write(path, contents).map_err(|e| Error::Io(e).at_path(path))
}

fn load_spectrum(path: &Path) -> Result<Spectrum, Error> {
    ingest::read_spectrum(path, EntryKind::infer(path))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_esd(matrix: &Path, out: &Path) -> CmdResult {
    let w = ingest::read_matrix(matrix)?;
    let spectrum = esd(&w).map_err(|e| e.at_path(matrix))?;
    ingest::write_eigenvalues(out, &spectrum)?;
    let top: Vec<f64> = spectrum.eigenvalues().iter().rev().take(5).copied().collect();
    eprintln!(
        "{} eigenvalues written to {}; largest: {:?}",
        spectrum.len(),
        out.display(),
        top
    );
    Ok((
        json!({
            "command": "esd",
            "count": spectrum.len(),
            "source_rows": spectrum.source_rows(),
            "source_cols": spectrum.source_cols(),
            "top_eigenvalues": top,
            "out": out,
        }),
        0,
    ))
}

fn cmd_fit(input: &Path, min_tail: usize, bootstrap: Option<usize>, seed: u64, c: f64) -> CmdResult {
    if let Some(n) = bootstrap {
        if n < powerlaw::MIN_BOOTSTRAP {
            return Err(config_failure(format!(
                "--bootstrap needs at least {} replicates, got {n}",
                powerlaw::MIN_BOOTSTRAP
            )));
        }
    }
    let spectrum = load_spectrum(input)?;
    let fit = powerlaw::select_xmin(&spectrum, min_tail)?;
    let tail = TailSample::from_spectrum(&spectrum, fit.x_min)?;
    let vs_exp = powerlaw::loglik_ratio(&tail, &fit, &powerlaw::fit_exponential(&tail)?, DEFAULT_SIGNIFICANCE)?;
    let vs_lognormal = match powerlaw::fit_lognormal(&tail) {
        Ok(ln) => {
            serde_json::to_value(powerlaw::loglik_ratio(&tail, &fit, &ln, DEFAULT_SIGNIFICANCE)?).unwrap_or(Value::Null)
        }
        Err(_) => Value::Null,
    };
    let d_star = calibration::threshold_d_star(c, fit.n_tail)?;
    let gof = bootstrap
        .map(|n| powerlaw::bootstrap_pvalue(&spectrum, &fit, n, seed, min_tail))
        .transpose()?;
    let heavy = fit.ks_d <= d_star;
    eprintln!(
        "alpha = {:.4}, x_min = {:.6}, n_tail = {}, d = {:.4}, d* = {:.4}, heavy-tailed: {heavy}",
        fit.alpha, fit.x_min, fit.n_tail, fit.ks_d, d_star
    );
    Ok((
        json!({
            "command": "fit",
            "input": input,
            "n_eigenvalues": spectrum.len(),
            "alpha": fit.alpha,
            "x_min": fit.x_min,
            "n_tail": fit.n_tail,
            "d_tilde": fit.ks_d,
            "d_star": d_star,
            "indicator": d_star - fit.ks_d,
            "heavy_tailed": heavy,
            "log_likelihood": fit.log_likelihood,
            "vs_exponential": vs_exp,
            "vs_log_normal": vs_lognormal,
            "goodness_of_fit": gof,
        }),
        0,
    ))
}

#[allow(clippy::too_many_arguments)]
fn cmd_calibrate(
    alphas: Vec<f64>,
    n_tails: Vec<usize>,
    runs: usize,
    seed: u64,
    out: &Path,
    x_min: f64,
    quantile: f64,
    grid_step: f64,
    bins: usize,
    include_samples: bool,
) -> CmdResult {
    if bins == 0 {
        return Err(config_failure("--bins must be positive"));
    }
    let config = CalibrationConfig {
        alphas,
        n_tails,
        runs,
        x_min,
        seed,
        selection: SelectionRule {
            quantile,
            grid_step,
            ..SelectionRule::default()
        },
    };
    let result = calibration::run_calibration(&config)?;
    let json_path = with_suffix(out, ".json");
    let hist_path = with_suffix(out, ".hist.csv");
    write_file(&json_path, result.to_json(include_samples)? + "\n")?;
    let hist = result.histogram(bins);
    write_file(&hist_path, calibration::write_histogram_csv(&hist))?;
    let series = Series::new("S", hist.iter().map(|b| (b.bin_left, b.count as f64)).collect());
    let svg_path = with_suffix(out, ".hist.svg");
    report::render_plot(
        &[series],
        PlotKind::Histogram,
        "Calibration S = d·sqrt(n_tail)",
        ("S", "count"),
        &svg_path,
    )?;
    eprintln!(
        "pooled q99.9 = {:.4}, selection quantile = {:.4}, max = {:.4}",
        result.pooled.q999, result.selection_quantile, result.pooled.max
    );
    eprintln!("C = {:.1}", result.recommended_c);
    Ok((
        json!({
            "command": "calibrate",
            "recommended_c": result.recommended_c,
            "pooled": result.pooled,
            "selection_quantile": result.selection_quantile,
            "outputs": [json_path, hist_path, svg_path],
        }),
        0,
    ))
}

fn cmd_analyze(
    manifest_path: &Path,
    mode: Mode,
    patience: usize,
    out_prefix: &Path,
    rules: PhaseRuleParams,
) -> CmdResult {
    let manifest = ingest::load_manifest(manifest_path)?;
    if let Some(dir) = out_prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io(e).at_path(dir))?;
    }
    let outcomes: Vec<_> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            ingest::read_spectrum(&entry.path, entry.kind)
                .and_then(|s| criterion::evaluate_epoch(&s, manifest.c_constant, manifest.min_tail).map(|r| (r, s)))
        })
        .collect();

    let mut records = Vec::new();
    let mut spectra = Vec::new();
    let mut failures = Vec::new();
    for (entry, outcome) in manifest.entries.iter().zip(outcomes) {
        match outcome {
            Ok((mut record, spectrum)) => {
                record.epoch = entry.epoch;
                records.push(record);
                spectra.push(spectrum);
            }
            Err(e) => {
                eprintln!("epoch {}: {e}", entry.epoch);
                failures.push(EntryFailure {
                    epoch: entry.epoch,
                    path: entry.path.display().to_string(),
                    error: e.to_string(),
                });
            }
        }
    }
    if records.is_empty() {
        return Err(Failure {
            code: 2,
            message: format!(
                "none of the {} manifest entries could be analyzed",
                manifest.entries.len()
            ),
        });
    }

    let trajectory = Trajectory::new(manifest.model_label.clone(), records)?;
    let segmentation = match criterion::classify_phases(&trajectory, &rules) {
        Ok(s) => Some(s),
        Err(Error::InvalidInput(msg)) => {
            eprintln!("phase segmentation skipped: {msg}");
            None
        }
        Err(e) => return Err(e.into()),
    };
    let (stop_mode, stop_patience) = match mode {
        Mode::Offline => (StopMode::Offline, None),
        Mode::Online => (StopMode::Online, Some(patience)),
    };
    let decision = criterion::stop_epoch(&trajectory, stop_mode, stop_patience);
    let (csv_path, json_path) =
        report::write_trajectory(&trajectory, segmentation.as_ref(), &decision, &failures, out_prefix)?;

    let recs = trajectory.records();
    let along = |f: fn(&criterion::EpochRecord) -> f64| recs.iter().map(|r| (r.epoch as f64, f(r))).collect();
    let indicator_svg = with_suffix(out_prefix, ".indicator.svg");
    report::render_plot(
        &[
            Series::new("d_tilde", along(|r| r.d_tilde)),
            Series::new("d_star", along(|r| r.d_star)),
            Series::new("d_star - d_tilde", along(|r| r.indicator)),
        ],
        PlotKind::Trajectory,
        &format!("{} {}", manifest.model_label, manifest.matrix_id),
        ("epoch", "KS distance"),
        &indicator_svg,
    )?;
    let params_svg = with_suffix(out_prefix, ".params.svg");
    report::render_plot(
        &[
            Series::new("alpha", along(|r| r.alpha)),
            Series::new("x_min", along(|r| r.x_min)),
        ],
        PlotKind::Trajectory,
        "power-law parameters",
        ("epoch", "value"),
        &params_svg,
    )?;
    let stop_idx = recs.iter().position(|r| r.epoch == decision.stop_epoch).unwrap_or(0);
    let esd_svg = with_suffix(out_prefix, ".esd.svg");
    report::render_plot(
        &[report::survival_series(&spectra[stop_idx])],
        PlotKind::EsdLogLog {
            fit: Some((recs[stop_idx].alpha, recs[stop_idx].x_min)),
        },
        &format!("ESD at epoch {}", decision.stop_epoch),
        ("eigenvalue", "P(X >= x)"),
        &esd_svg,
    )?;

    eprintln!(
        "stop epoch: {} (indicator {:.4}, triggered: {})",
        decision.stop_epoch, decision.peak_indicator, decision.triggered
    );
    if let Some(s) = &segmentation {
        eprintln!(
            "phase I ends at epoch {}, phase II ends at epoch {}",
            s.phase1_end, s.phase2_end
        );
    }
    let code = if failures.is_empty() { 0 } else { 2 };
    Ok((
        json!({
            "command": "analyze",
            "model_label": manifest.model_label,
            "matrix_id": manifest.matrix_id,
            "records": trajectory.len(),
            "stop_decision": decision,
            "segmentation": segmentation,
            "failures": failures,
            "outputs": [csv_path, json_path, indicator_svg, params_svg, esd_svg],
        }),
        code,
    ))
}

fn write_samples(path: &Path, values: &[f64]) -> Result<(), Error> {
    let mut text = String::new();
    for v in values {
        text.push_str(&format!("{v}\n"));
    }
    write_file(path, text)
}

fn cmd_synth(args: &SynthArgs) -> CmdResult {
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::Io(e).at_path(&args.out_dir))?;
    let dist = match args.kind {
        SynthKind::PowerLaw => Some(SampleDistribution::PowerLaw {
            alpha: args.alpha,
            x_min: args.x_min,
        }),
        SynthKind::Exponential => Some(SampleDistribution::Exponential {
            lambda: args.lambda,
            x_min: 0.0,
        }),
        SynthKind::LogNormal => Some(SampleDistribution::LogNormal {
            mu: args.mu,
            sigma: args.sigma,
        }),
        _ => None,
    };
    let output = if let Some(dist) = dist {
        let values = synth::gen_distribution(&dist, args.n, args.seed)?;
        let path = args.out_dir.join("samples.txt");
        write_samples(&path, &values)?;
        json!({ "distribution": dist, "n": args.n, "outputs": [path] })
    } else {
        match args.kind {
            SynthKind::GaussianMatrix | SynthKind::HeavytailMatrix => {
                let w = if matches!(args.kind, SynthKind::GaussianMatrix) {
                    synth::gen_gaussian_matrix(args.rows, args.cols, args.sigma, args.seed)?
                } else {
                    synth::gen_heavytail_matrix(args.rows, args.cols, args.alpha, args.seed)?
                };
                let path = args.out_dir.join("matrix.npy");
                ingest::write_matrix(&path, &w)?;
                json!({ "rows": w.rows(), "cols": w.cols(), "outputs": [path] })
            }
            _ => {
                let spec = TrajectorySpec {
                    epochs: args.epochs,
                    seed: args.seed,
                    ..TrajectorySpec::default()
                };
                let manifest = synth::write_trajectory_files(&spec, &args.out_dir)?;
                json!({
                    "spec": spec,
                    "files": manifest.entries.len(),
                    "outputs": [args.out_dir.join("manifest.json")],
                })
            }
        }
    };
    eprintln!("wrote synthetic data to {}", args.out_dir.display());
    let mut output = output;
    output["command"] = Value::from("synth");
    Ok((output, 0))
}

#[derive(Args)]
struct SynthArgs {
    #[arg(value_enum)]
    kind: SynthKind,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample size for distributions.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 2.5)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    x_min: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 400)]
    rows: usize,
    #[arg(long, default_value_t = 400)]
    cols: usize,
    #[arg(long, default_value_t = TrajectorySpec::default().epochs)]
    epochs: u32,
}

fn cmd_theory(out: &Path, seed: u64, probes: usize) -> CmdResult {
    let report = theory::run_theory_checks(&TheoryConfig {
        seed,
        probes,
        ..TheoryConfig::default()
    })?;
    let value = serde_json::to_value(&report).map_err(Error::from)?;
    write_file(out, serde_json::to_string_pretty(&value).map_err(Error::from)? + "\n")?;
    for c in &report.claims {
        let status = match (c.passed, c.asserted) {
            (true, _) => "pass",
            (false, true) => "FAIL",
            (false, false) => "fails (reported only)",
        };
        eprintln!(
            "{:<34} observed {:>12.4e} bound {:>12.4e}  {status}",
            c.claim, c.observed, c.bound
        );
    }
    let code = if report.all_asserted_pass() { 0 } else { 3 };
    let mut value = value;
    value["command"] = Value::from("theory");
    value["out"] = json!(out);
    Ok((value, code))
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| config_failure(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| config_failure(format!("cannot configure thread pool: {e}")))
}

fn run(cli: Cli) -> CmdResult {
    configure_threads()?;
    match cli.command {
        Command::Esd { matrix, out } => cmd_esd(&matrix, &out),
        Command::Fit {
            input,
            min_tail,
            bootstrap,
            seed,
            c,
        } => cmd_fit(&input, min_tail, bootstrap, seed, c),
        Command::Calibrate {
            alphas,
            ntails,
            runs,
            seed,
            out,
            x_min,
            quantile,
            grid_step,
            bins,
            include_samples,
        } => cmd_calibrate(
            alphas,
            ntails,
            runs,
            seed,
            &out,
            x_min,
            quantile,
            grid_step,
            bins,
            include_samples,
        ),
        Command::Analyze {
            manifest,
            mode,
            patience,
            out_prefix,
            window,
            alpha_std,
            alpha_ceiling,
            xmin_slope,
        } => cmd_analyze(
            &manifest,
            mode,
            patience,
            &out_prefix,
            PhaseRuleParams {
                window,
                alpha_std_threshold: alpha_std,
                alpha_ceiling,
                xmin_slope_threshold: xmin_slope,
            },
        ),
        Command::Synth(args) => cmd_synth(&args),
        Command::Theory { out, seed, probes } => cmd_theory(&out, seed, probes),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok((value, code)) => {
            emit(value);
            ExitCode::from(code)
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            emit(json!({ "error": f.message, "exit_code": f.code }));
            ExitCode::from(f.code)
        }
    }
}
