use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use modekit::eval::{self, AnalysisReport};
use modekit::io::{self, EigenRecord};
use modekit::optim::{self, FitConfig, FitResult};
use modekit::synth::{self, SynthConfig};
use modekit::{par, Dataset, Error, Result};

#[derive(Parser)]
#[command(name = "modekit", version, about = "Discriminant dynamic mode decomposition")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a labeled synthetic dataset (manifest + episode CSVs).
    GenSynthetic(GenArgs),
    /// Fit one configuration and write eigenvalues and the objective trace.
    Fit(FitArgs),
    /// Fit a list of alphas and write the reconstruction/discrimination table.
    Sweep(SweepArgs),
    /// MDS coordinates, eigenvalue, NRMSE and dominant-mode tables for a fit.
    Report(ReportArgs),
    /// NRMSE of a rank-k PCA reconstruction per episode.
    PcaBaseline(PcaArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    tau: usize,
    /// Image side; p = side².
    #[arg(long, default_value_t = 10)]
    side: usize,
    #[arg(long, default_value_t = 0.1)]
    gamma_d: f64,
    #[arg(long, default_value_t = 0.1)]
    gamma_c: f64,
    /// Frequency range for the distinctive mode, `lo,hi`.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 1.0])]
    omega_d: Vec<f64>,
    /// Frequency range for the shared mode, `lo,hi`.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 1.0])]
    omega_c: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    noise_sd: f64,
}

#[derive(Args, Clone)]
struct FitOpts {
    /// Modes per episode.
    #[arg(long, default_value_t = 1)]
    r: usize,
    #[arg(long, default_value_t = 1e-8)]
    epsilon: f64,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    grad_tol: f64,
    #[arg(long, default_value_t = 1e-10)]
    step_tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-10)]
    rank_rtol: f64,
}

impl FitOpts {
    fn config(&self, alpha: f64) -> FitConfig {
        FitConfig {
            r: self.r,
            alpha,
            epsilon: self.epsilon,
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            step_tol: self.step_tol,
            seed: self.seed,
            rank_rtol: self.rank_rtol,
            ..FitConfig::default()
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[command(flatten)]
    opts: FitOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated list, e.g. `0,0.2,0.4`.
    #[arg(long, value_delimiter = ',', required = true)]
    alphas: Vec<f64>,
    #[command(flatten)]
    opts: FitOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory of a previous `fit`.
    #[arg(long)]
    fit: PathBuf,
    #[arg(long, default_value_t = 2)]
    dims: usize,
    #[arg(long, default_value_t = 1e-10)]
    rank_rtol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PcaArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    components: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            if e.use_stderr() {
                eprintln!("{}", json!({ "error": { "category": "usage", "message": e.kind().to_string() } }));
            }
            return ExitCode::from(code as u8);
        }
    };
    par::init_global_pool();
    let result = match cli.cmd {
        Cmd::GenSynthetic(a) => gen_synthetic(a),
        Cmd::Fit(a) => fit(a),
        Cmd::Sweep(a) => sweep(a),
        Cmd::Report(a) => report(a),
        Cmd::PcaBaseline(a) => pca_baseline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": { "category": e.category(), "message": e.to_string() } }));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn meta(command: &str, config: serde_json::Value) -> serde_json::Value {
    json!({
        "command": command,
        "modekit_version": env!("CARGO_PKG_VERSION"),
        "parallel": cfg!(feature = "parallel"),
        "config": config,
    })
}

fn with_timing(mut m: serde_json::Value, start: Instant) -> serde_json::Value {
    m["threads"] = json!(par::current_threads());
    m["elapsed_seconds"] = json!(start.elapsed().as_secs_f64());
    m
}

fn range(v: &[f64], name: &str) -> Result<(f64, f64)> {
    match v {
        [lo, hi] => Ok((*lo, *hi)),
        _ => Err(Error::Config(format!("--{name} expects `lo,hi`"))),
    }
}

fn gen_synthetic(a: GenArgs) -> Result<()> {
    let cfg = SynthConfig {
        n: a.n,
        tau: a.tau,
        image_side: a.side,
        gamma_d: a.gamma_d,
        gamma_c: a.gamma_c,
        omega_d: range(&a.omega_d, "omega-d")?,
        omega_c: range(&a.omega_c, "omega-c")?,
        noise_sd: a.noise_sd,
        seed: a.seed,
        modes: None,
    };
    let data = synth::gen_synthetic(&cfg)?;
    io::write_dataset(&data.dataset, &a.out)?;
    let m = &data.modes;
    io::write_table(
        &a.out.join("true_modes.csv"),
        &["feature", "w_d1", "w_d2", "w_c"],
        (0..m.w_c.len()).map(|k| vec![(k + 1).to_string(), m.w_d1[k].to_string(), m.w_d2[k].to_string(), m.w_c[k].to_string()]),
    )?;
    io::write_table(
        &a.out.join("true_eigenvalues.csv"),
        &["id", "label", "lambda_d_re", "lambda_d_im", "lambda_c_re", "lambda_c_im"],
        data.dataset.episodes().iter().enumerate().map(|(i, e)| {
            let (d, c) = (data.lambda_d[i], data.lambda_c[i]);
            vec![e.id().to_string(), e.label().to_string(), d.re.to_string(), d.im.to_string(), c.re.to_string(), c.im.to_string()]
        }),
    )?;
    io::write_json(&a.out.join("run.json"), &meta("gen-synthetic", serde_json::to_value(&cfg).unwrap_or_default()))
}

fn records(ds: &Dataset, thetas: &[Vec<modekit::C64>]) -> Vec<EigenRecord> {
    ds.episodes()
        .iter()
        .zip(thetas)
        .map(|(e, t)| EigenRecord { id: e.id().to_string(), label: e.label(), theta: t.clone() })
        .collect()
}

fn write_fit(dir: &Path, ds: &Dataset, res: &FitResult) -> Result<()> {
    io::write_eigenvalues(&dir.join("eigenvalues.csv"), &records(ds, &res.theta_values()))?;
    io::write_table(
        &dir.join("trace.csv"),
        &["iteration", "objective", "f_dmd_mean", "f_kfd"],
        res.objective_trace
            .iter()
            .enumerate()
            .map(|(i, v)| vec![i.to_string(), v.total.to_string(), v.f_dmd_mean.to_string(), v.f_kfd.to_string()]),
    )
}

fn fit_summary(res: &FitResult) -> serde_json::Value {
    let v = res.final_value();
    json!({
        "converged": res.converged,
        "stop_reason": res.stop_reason,
        "iterations": res.iterations,
        "guard_nudges": res.guard_nudges,
        "degenerate_pairs": res.diagnostics.degenerate_pairs,
        "singular_alpha_term": res.diagnostics.singular_alpha_term,
        "objective": v.total,
        "f_dmd_mean": v.f_dmd_mean,
        "f_kfd": finite_or_null(v.f_kfd),
    })
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        serde_json::Value::Null
    }
}

fn fit(a: FitArgs) -> Result<()> {
    let start = Instant::now();
    let ds = io::load_dataset(&a.manifest)?;
    let cfg = a.opts.config(a.alpha);
    let res = optim::fit(&ds, &cfg)?;
    write_fit(&a.out, &ds, &res)?;
    let mut m = meta("fit", serde_json::to_value(&cfg).unwrap_or_default());
    m["manifest"] = json!(a.manifest);
    m["result"] = fit_summary(&res);
    io::write_json(&a.out.join("run.json"), &with_timing(m, start))
}

fn sweep(a: SweepArgs) -> Result<()> {
    let start = Instant::now();
    let ds = io::load_dataset(&a.manifest)?;
    let base = a.opts.config(0.0);
    let results = optim::sweep(&ds, &a.alphas, &base)?;
    io::write_table(
        &a.out.join("sweep.csv"),
        &["alpha", "f_dmd_mean", "f_kfd", "objective"],
        a.alphas.iter().zip(&results).map(|(alpha, r)| {
            let v = r.final_value();
            vec![alpha.to_string(), v.f_dmd_mean.to_string(), v.f_kfd.to_string(), v.total.to_string()]
        }),
    )?;
    for (alpha, r) in a.alphas.iter().zip(&results) {
        write_fit(&a.out.join(format!("alpha-{alpha}")), &ds, r)?;
    }
    let mut m = meta("sweep", serde_json::to_value(&base).unwrap_or_default());
    m["manifest"] = json!(a.manifest);
    m["alphas"] = json!(a.alphas);
    m["results"] = json!(results.iter().map(fit_summary).collect::<Vec<_>>());
    io::write_json(&a.out.join("run.json"), &with_timing(m, start))
}

fn thetas_for(ds: &Dataset, recs: Vec<EigenRecord>) -> Result<Vec<Vec<modekit::C64>>> {
    if recs.len() != ds.len() {
        return Err(Error::DimensionMismatch(format!("{} eigenvalue groups for {} episodes", recs.len(), ds.len())));
    }
    ds.episodes()
        .iter()
        .zip(recs)
        .map(|(e, r)| {
            if r.id != e.id() {
                return Err(Error::Parse(format!("eigenvalue table lists `{}` where `{}` was expected", r.id, e.id())));
            }
            Ok(r.theta)
        })
        .collect()
}

fn report(a: ReportArgs) -> Result<()> {
    let start = Instant::now();
    let ds = io::load_dataset(&a.manifest)?;
    let recs = io::read_eigenvalues(&a.fit.join("eigenvalues.csv"))?;
    let thetas = thetas_for(&ds, recs)?;
    let rep: AnalysisReport = eval::analyze(&ds, &thetas, a.rank_rtol, a.dims)?;
    let eps = ds.episodes();

    let mut header = vec!["id".to_string(), "label".to_string()];
    let axes = ["x", "y", "z"];
    header.extend((0..a.dims).map(|k| axes.get(k).map_or(format!("x{}", k + 1), |s| s.to_string())));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    io::write_table(
        &a.out.join("mds.csv"),
        &header,
        eps.iter().enumerate().map(|(i, e)| {
            let mut row = vec![e.id().to_string(), e.label().to_string()];
            row.extend(rep.mds.coords.row(i).iter().map(|v| v.to_string()));
            row
        }),
    )?;
    io::write_eigenvalues(&a.out.join("eigenvalues.csv"), &records(&ds, &thetas))?;
    io::write_table(
        &a.out.join("nrmse.csv"),
        &["id", "label", "value"],
        eps.iter().zip(&rep.nrmse).map(|(e, v)| vec![e.id().to_string(), e.label().to_string(), v.to_string()]),
    )?;
    for (l, w) in rep.dominant_modes.iter().enumerate() {
        io::write_table(
            &a.out.join(format!("dominant_mode_class{}.csv", l + 1)),
            &["feature", "re", "im"],
            w.iter().enumerate().map(|(k, z)| vec![(k + 1).to_string(), z.re.to_string(), z.im.to_string()]),
        )?;
    }
    let mut m = meta("report", json!({ "dims": a.dims, "rank_rtol": a.rank_rtol }));
    m["manifest"] = json!(a.manifest);
    m["fit"] = json!(a.fit);
    m["result"] = json!({
        "nrmse_median": finite_or_null(rep.nrmse_median),
        "loo_1nn_accuracy": finite_or_null(rep.loo_accuracy),
        "mds_eigenvalues": rep.mds.eigenvalues,
        "mds_padded_axes": rep.mds.padded_axes,
    });
    io::write_json(&a.out.join("run.json"), &with_timing(m, start))
}

fn pca_baseline(a: PcaArgs) -> Result<()> {
    let start = Instant::now();
    let ds = io::load_dataset(&a.manifest)?;
    let errs = ds
        .episodes()
        .iter()
        .map(|e| eval::pca_baseline(e, a.components).map(|(_, v)| v))
        .collect::<Result<Vec<_>>>()?;
    io::write_table(
        &a.out.join("nrmse.csv"),
        &["id", "label", "value"],
        ds.episodes().iter().zip(&errs).map(|(e, v)| vec![e.id().to_string(), e.label().to_string(), v.to_string()]),
    )?;
    let mut m = meta("pca-baseline", json!({ "components": a.components }));
    m["manifest"] = json!(a.manifest);
    m["result"] = json!({ "nrmse_median": finite_or_null(eval::median_of(&errs)) });
    io::write_json(&a.out.join("run.json"), &with_timing(m, start))
}
