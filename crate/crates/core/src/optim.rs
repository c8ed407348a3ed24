//! The discriminant-DMD objective, its gradient and the fitting driver.
//!
//! The objective over all episodes' parameters is
//!
//! ```text
//! f(Θ_1..Θ_n) = (n⁻¹ Σ_i f_DMD(Θ_i)) / (f_KFD(Θ_1..Θ_n)^α + ε)
//! ```
//!
//! Parameters are optimized as a stacked real vector `[Re θ; Im θ]` of length
//! `2nr` (episode-major, then mode). The gradient of that real function is
//! `[Re ∇; Im ∇]` with `∇ = 2 conj(∂f/∂θ)`.

use crate::dataset::Dataset;
use crate::dmd::{self, ThetaSet, Varpro, DISTINCT_DELTA};
use crate::error::{Error, Result};
use crate::kernel::{self, DmsBasis};
use crate::kfd;
use crate::numerics::{c, CMat, C64, DEFAULT_RTOL};
use crate::par;

mod lbfgs;

pub use lbfgs::{LbfgsSettings, StopReason};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FitConfig {
    /// Number of modes per episode.
    pub r: usize,
    /// Weight of the discriminant term; 0 gives plain optimized DMD.
    pub alpha: f64,
    /// Stabilizer added to `f_KFD^α`.
    pub epsilon: f64,
    pub max_iters: usize,
    /// Stop when the ∞-norm of the real gradient falls below this.
    pub grad_tol: f64,
    /// Stop when the ∞-norm of an accepted step falls below this.
    pub step_tol: f64,
    /// Recorded with the run; the driver itself is deterministic.
    pub seed: u64,
    pub rank_rtol: f64,
    pub lbfgs: LbfgsSettings,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            r: 1,
            alpha: 0.0,
            epsilon: 1e-8,
            max_iters: 500,
            grad_tol: 1e-6,
            step_tol: 1e-10,
            seed: 0,
            rank_rtol: DEFAULT_RTOL,
            lbfgs: LbfgsSettings::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(Error::Config("r must be at least 1".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be a finite value >= 0, got {}", self.alpha)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.grad_tol > 0.0 && self.step_tol > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if !(self.rank_rtol > 0.0 && self.rank_rtol < 1.0) {
            return Err(Error::Config("rank_rtol must lie in (0, 1)".into()));
        }
        self.lbfgs.validate()
    }
}

/// One objective evaluation: the total and its two ingredients.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ObjectiveValue {
    pub total: f64,
    pub f_dmd_mean: f64,
    /// `NaN` when the discriminant term was not evaluated.
    pub f_kfd: f64,
}

/// Stacked real gradient `[Re ∇θ; Im ∇θ]`, `∇ = 2 conj(∂f/∂θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn from_wirtinger(d: &[Vec<C64>]) -> Self {
        let flat: Vec<C64> = d.iter().flatten().copied().collect();
        let m = flat.len();
        let mut out = vec![0.0; 2 * m];
        for (k, z) in flat.iter().enumerate() {
            let g = (z * 2.0).conj();
            out[k] = g.re;
            out[m + k] = g.im;
        }
        Self(out)
    }

    pub fn inf_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

pub fn pack(thetas: &[Vec<C64>]) -> Vec<f64> {
    let flat: Vec<C64> = thetas.iter().flatten().copied().collect();
    let m = flat.len();
    let mut x = vec![0.0; 2 * m];
    for (k, z) in flat.iter().enumerate() {
        x[k] = z.re;
        x[m + k] = z.im;
    }
    x
}

pub fn unpack(x: &[f64], n: usize, r: usize) -> Vec<Vec<C64>> {
    let m = n * r;
    (0..n).map(|i| (0..r).map(|j| c(x[i * r + j], x[m + i * r + j])).collect()).collect()
}

/// Non-fatal events observed during one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalDiagnostics {
    /// Class pairs whose Q1 denominator vanished.
    pub degenerate_pairs: usize,
    /// `f_KFD = 0` with `α < 1`: the discriminant part of the gradient was dropped.
    pub singular_alpha_term: bool,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: ObjectiveValue,
    /// Wirtinger derivatives `∂f/∂θ_{i,j}` when requested.
    pub wirtinger: Option<Vec<Vec<C64>>>,
    pub diagnostics: EvalDiagnostics,
}

impl Evaluation {
    pub fn gradient(&self) -> Option<GradientVector> {
        self.wirtinger.as_deref().map(GradientVector::from_wirtinger)
    }
}

fn check_thetas(ds: &Dataset, thetas: &[Vec<C64>], r: usize) -> Result<()> {
    if thetas.len() != ds.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} theta sets for {} episodes",
            thetas.len(),
            ds.len()
        )));
    }
    if let Some(i) = thetas.iter().position(|t| t.len() != r) {
        return Err(Error::DimensionMismatch(format!(
            "theta set {i} has {} entries, expected r = {r}",
            thetas[i].len()
        )));
    }
    Ok(())
}

/// `n⁻¹ Σ f_DMD(Θ_i)` and, optionally, its Wirtinger derivatives.
fn dmd_term(ds: &Dataset, thetas: &[Vec<C64>], with_grad: bool) -> Result<(f64, Option<Vec<Vec<C64>>>)> {
    let eps = ds.episodes();
    let per = par::try_map_range(eps.len(), |i| -> Result<(f64, Option<Vec<C64>>)> {
        let vp = Varpro::new(&eps[i], &thetas[i])?;
        let g = with_grad.then(|| vp.loss_grad(&eps[i], &thetas[i]));
        Ok((vp.loss(&eps[i]), g))
    })?;
    let n = eps.len() as f64;
    let mean = per.iter().map(|(f, _)| f).sum::<f64>() / n;
    let grads = with_grad.then(|| {
        per.into_iter()
            .map(|(_, g)| g.unwrap().into_iter().map(|z| z / n).collect())
            .collect()
    });
    Ok((mean, grads))
}

fn bases(ds: &Dataset, thetas: &[Vec<C64>], rtol: f64) -> Result<Vec<DmsBasis>> {
    let eps = ds.episodes();
    par::try_map_range(eps.len(), |i| kernel::dms_basis(&eps[i], &thetas[i], rtol))
}

/// Evaluates the objective and, if `with_grad`, its derivatives.
///
/// At `α = 0` the discriminant term does not enter the objective; `f_KFD` is
/// still reported (as `NaN` if it cannot be formed) and the gradient reduces
/// to the reconstruction gradient divided by `1 + ε`.
pub fn evaluate(ds: &Dataset, thetas: &[Vec<C64>], cfg: &FitConfig, with_grad: bool) -> Result<Evaluation> {
    cfg.validate()?;
    check_thetas(ds, thetas, cfg.r)?;
    let (d_mean, d_grad) = dmd_term(ds, thetas, with_grad)?;
    let labels = ds.labels();
    let ncls = ds.num_classes();
    let mut diagnostics = EvalDiagnostics::default();

    if cfg.alpha == 0.0 {
        let f_kfd = bases(ds, thetas, cfg.rank_rtol)
            .and_then(|b| kfd::assemble_gram(&b, &labels, ncls, false))
            .map(|g| kfd::f_kfd(&g))
            .unwrap_or(f64::NAN);
        let den = 1.0 + cfg.epsilon;
        let wirtinger = d_grad.map(|g| scale_all(g, den));
        return Ok(Evaluation {
            value: ObjectiveValue { total: d_mean / den, f_dmd_mean: d_mean, f_kfd },
            wirtinger,
            diagnostics,
        });
    }

    let b = bases(ds, thetas, cfg.rank_rtol)?;
    let gram = kfd::assemble_gram(&b, &labels, ncls, with_grad)?;
    let adj = kfd::kfd_adjoint(&gram);
    diagnostics.degenerate_pairs = adj.degenerate_pairs;
    let f_kfd = adj.q1 * adj.q2;
    let den = f_kfd.powf(cfg.alpha) + cfg.epsilon;
    if den == 0.0 {
        return Err(Error::DivisionGuard);
    }
    let total = d_mean / den;
    let value = ObjectiveValue { total, f_dmd_mean: d_mean, f_kfd };

    let wirtinger = match d_grad {
        None => None,
        Some(dg) => {
            let kg = kfd::contract_slabs(&gram, &adj.d_f())?;
            let mut coef = cfg.alpha * d_mean * f_kfd.powf(cfg.alpha - 1.0);
            if !coef.is_finite() {
                diagnostics.singular_alpha_term = true;
                coef = 0.0;
            }
            let den2 = den * den;
            Some(
                dg.iter()
                    .zip(&kg)
                    .map(|(gd, gk)| gd.iter().zip(gk).map(|(a, b)| (a * den - b * coef) / den2).collect())
                    .collect(),
            )
        }
    };
    Ok(Evaluation { value, wirtinger, diagnostics })
}

fn scale_all(g: Vec<Vec<C64>>, den: f64) -> Vec<Vec<C64>> {
    g.into_iter().map(|v| v.into_iter().map(|z| z / den).collect()).collect()
}

pub fn objective(ds: &Dataset, thetas: &[Vec<C64>], cfg: &FitConfig) -> Result<ObjectiveValue> {
    Ok(evaluate(ds, thetas, cfg, false)?.value)
}

pub fn gradient(ds: &Dataset, thetas: &[Vec<C64>], cfg: &FitConfig) -> Result<GradientVector> {
    Ok(evaluate(ds, thetas, cfg, true)?.gradient().expect("gradient requested"))
}

/// Plain optimized DMD over the whole dataset: minimizes `n⁻¹ Σ f_DMD / (1 + ε)`.
///
/// The `1 + ε` scale matches the discriminant objective at `α = 0`, so the two
/// produce directly comparable traces.
pub fn evaluate_optimized_dmd(ds: &Dataset, thetas: &[Vec<C64>], cfg: &FitConfig, with_grad: bool) -> Result<Evaluation> {
    cfg.validate()?;
    check_thetas(ds, thetas, cfg.r)?;
    let (d_mean, d_grad) = dmd_term(ds, thetas, with_grad)?;
    let den = 1.0 + cfg.epsilon;
    Ok(Evaluation {
        value: ObjectiveValue { total: d_mean / den, f_dmd_mean: d_mean, f_kfd: f64::NAN },
        wirtinger: d_grad.map(|g| scale_all(g, den)),
        diagnostics: EvalDiagnostics::default(),
    })
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub thetas: Vec<ThetaSet>,
    /// Variable-projection modes `X_i V_Θi†`, one `p x r` matrix per episode.
    pub modes: Vec<CMat>,
    /// Objective at the start point and after every accepted step.
    pub objective_trace: Vec<ObjectiveValue>,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub iterations: usize,
    pub init_thetas: Vec<ThetaSet>,
    /// Parameter pairs pushed apart by the distinctness guard.
    pub guard_nudges: usize,
    pub diagnostics: EvalDiagnostics,
}

impl FitResult {
    pub fn final_value(&self) -> ObjectiveValue {
        *self.objective_trace.last().expect("trace always holds the start point")
    }

    pub fn theta_values(&self) -> Vec<Vec<C64>> {
        self.thetas.iter().map(|t| t.to_vec()).collect()
    }
}

/// Exact-DMD starting point for every episode.
pub fn initial_thetas(ds: &Dataset, r: usize) -> Result<Vec<Vec<C64>>> {
    if r > ds.max_rank() {
        return Err(Error::Config(format!(
            "r = {r} exceeds the largest admissible rank {} for this dataset",
            ds.max_rank()
        )));
    }
    let eps = ds.episodes();
    par::try_map_range(eps.len(), |i| dmd::exact_dmd(&eps[i], r).map(|f| f.theta.into_inner()))
}

/// Discriminant DMD: exact-DMD initialization, quasi-Newton minimization of
/// the full objective, then variable-projection modes at the optimum.
pub fn fit(ds: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let init = initial_thetas(ds, cfg.r)?;
    fit_from(ds, init, cfg)
}

/// Like [`fit`] from a caller-supplied starting point.
pub fn fit_from(ds: &Dataset, init: Vec<Vec<C64>>, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    run(ds, init, cfg, |t, g| evaluate(ds, t, cfg, g))
}

/// Optimized DMD fitted jointly over the dataset with the same driver.
pub fn fit_optimized_dmd(ds: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let init = initial_thetas(ds, cfg.r)?;
    run(ds, init, cfg, |t, g| evaluate_optimized_dmd(ds, t, cfg, g))
}

fn run<F>(ds: &Dataset, init: Vec<Vec<C64>>, cfg: &FitConfig, eval: F) -> Result<FitResult>
where
    F: Fn(&[Vec<C64>], bool) -> Result<Evaluation>,
{
    check_thetas(ds, &init, cfg.r)?;
    let (n, r) = (ds.len(), cfg.r);
    let start = eval(&init, true)?;
    if !start.value.total.is_finite() {
        return Err(Error::NumericFailure("objective is not finite at the starting point".into()));
    }

    let outcome = lbfgs::minimize(
        pack(&init),
        start,
        cfg,
        |x: &[f64], with_grad: bool| eval(&unpack(x, n, r), with_grad),
        |x: &mut Vec<f64>| {
            let mut nudges = 0;
            let mut thetas = unpack(x, n, r);
            for t in thetas.iter_mut() {
                let mut set = ThetaSet::new(std::mem::take(t)).expect("finite iterate");
                nudges += set.separate(DISTINCT_DELTA);
                *t = set.into_inner();
            }
            if nudges > 0 {
                *x = pack(&thetas);
            }
            nudges
        },
    )?;

    let thetas = unpack(&outcome.x, n, r);
    let eps = ds.episodes();
    let modes = par::try_map_range(n, |i| dmd::varpro_modes(&eps[i], &thetas[i]))?;
    let to_sets = |v: Vec<Vec<C64>>| v.into_iter().map(ThetaSet::new).collect::<Result<Vec<_>>>();
    Ok(FitResult {
        thetas: to_sets(thetas)?,
        modes,
        objective_trace: outcome.trace,
        converged: outcome.reason.is_converged(),
        stop_reason: outcome.reason,
        iterations: outcome.iterations,
        init_thetas: to_sets(init)?,
        guard_nudges: outcome.nudges,
        diagnostics: outcome.diagnostics,
    })
}

/// Independent fits of the same dataset for each `α`, in input order.
pub fn sweep(ds: &Dataset, alphas: &[f64], base: &FitConfig) -> Result<Vec<FitResult>> {
    let init = initial_thetas(ds, base.r)?;
    par::map_slice(alphas, |&alpha| fit_from(ds, init.clone(), &FitConfig { alpha, ..base.clone() }))
        .into_iter()
        .collect()
}
