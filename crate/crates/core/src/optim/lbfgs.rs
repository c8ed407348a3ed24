//! Limited-memory BFGS with Armijo backtracking.

use std::collections::VecDeque;

use super::{EvalDiagnostics, Evaluation, FitConfig, ObjectiveValue};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LbfgsSettings {
    /// Number of stored curvature pairs.
    pub memory: usize,
    /// Sufficient-decrease constant.
    pub armijo_c: f64,
    /// Step shrink factor per backtrack.
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        Self { memory: 10, armijo_c: 1e-4, backtrack: 0.5, max_backtracks: 40 }
    }
}

impl LbfgsSettings {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 {
            return Err(Error::Config("L-BFGS memory must be at least 1".into()));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::Config("armijo_c must lie in (0, 1)".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::Config("backtrack factor must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    GradientTolerance,
    StepTolerance,
    MaxIterations,
    /// No step satisfying sufficient decrease was found.
    LineSearchFailed,
}

impl StopReason {
    pub fn is_converged(self) -> bool {
        matches!(self, Self::GradientTolerance | Self::StepTolerance)
    }
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::GradientTolerance => "gradient-tolerance",
            Self::StepTolerance => "step-tolerance",
            Self::MaxIterations => "max-iterations",
            Self::LineSearchFailed => "line-search-failed",
        })
    }
}

pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub trace: Vec<ObjectiveValue>,
    pub reason: StopReason,
    pub iterations: usize,
    pub nudges: usize,
    pub diagnostics: EvalDiagnostics,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

fn direction(g: &[f64], mem: &VecDeque<Pair>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(mem.len());
    for p in mem.iter().rev() {
        let a = p.rho * dot(&p.s, &q);
        q.iter_mut().zip(&p.y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some(last) = mem.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (p, a) in mem.iter().zip(alphas.iter().rev()) {
        let b = p.rho * dot(&p.y, &q);
        q.iter_mut().zip(&p.s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

fn grad_of(ev: &Evaluation) -> Result<Vec<f64>> {
    let g = ev.gradient().ok_or_else(|| Error::NumericFailure("gradient missing".into()))?.0;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure("gradient is not finite".into()));
    }
    Ok(g)
}

fn merge(d: &mut EvalDiagnostics, e: &EvalDiagnostics) {
    d.degenerate_pairs = d.degenerate_pairs.max(e.degenerate_pairs);
    d.singular_alpha_term |= e.singular_alpha_term;
}

pub(crate) fn minimize<F, G>(mut x: Vec<f64>, start: Evaluation, cfg: &FitConfig, eval: F, mut guard: G) -> Result<Outcome>
where
    F: Fn(&[f64], bool) -> Result<Evaluation>,
    G: FnMut(&mut Vec<f64>) -> usize,
{
    let st = cfg.lbfgs;
    let mut diagnostics = start.diagnostics;
    let mut f = start.value.total;
    let mut g = grad_of(&start)?;
    let mut trace = vec![start.value];
    let mut mem: VecDeque<Pair> = VecDeque::with_capacity(st.memory);
    let mut nudges = 0;
    let mut iterations = 0;

    let reason = loop {
        if inf_norm(&g) < cfg.grad_tol {
            break StopReason::GradientTolerance;
        }
        if iterations >= cfg.max_iters {
            break StopReason::MaxIterations;
        }
        let mut d = direction(&g, &mem);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            mem.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = if mem.is_empty() { (0.1 / inf_norm(&g)).min(1.0) } else { 1.0 };

        let mut accepted = None;
        for _ in 0..=st.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let ft = match eval(&trial, false) {
                Ok(ev) if ev.value.total.is_finite() => ev.value.total,
                Ok(_) => f64::INFINITY,
                Err(e @ Error::DivisionGuard) => return Err(e),
                Err(_) => f64::INFINITY,
            };
            if ft <= f + st.armijo_c * step * slope {
                accepted = Some(trial);
                break;
            }
            step *= st.backtrack;
        }
        let Some(mut x_new) = accepted else {
            break StopReason::LineSearchFailed;
        };
        nudges += guard(&mut x_new);
        let ev = eval(&x_new, true)?;
        if !ev.value.total.is_finite() {
            break StopReason::LineSearchFailed;
        }
        merge(&mut diagnostics, &ev.diagnostics);
        let g_new = grad_of(&ev)?;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if mem.len() == st.memory {
                mem.pop_front();
            }
            mem.push_back(Pair { rho: 1.0 / sy, s: s.clone(), y });
        }
        iterations += 1;
        x = x_new;
        f = ev.value.total;
        g = g_new;
        trace.push(ev.value);
        if inf_norm(&s) < cfg.step_tol {
            break StopReason::StepTolerance;
        }
    };

    Ok(Outcome { x, trace, reason, iterations, nudges, diagnostics })
}
