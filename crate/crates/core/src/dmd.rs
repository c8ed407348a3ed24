//! Exact DMD, variable projection and the per-episode reconstruction loss.
//!
//! Derivatives with respect to a time-evolution parameter are holomorphic
//! Wirtinger derivatives `∂f/∂θ` (with `conj(θ)` held fixed). The steepest
//! ascent direction in the complex plane is `2 * conj(∂f/∂θ)`; that mapping
//! is applied once, in [`crate::optim`].

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::{self, c, CMat, CVec, C64, DEFAULT_RTOL};

/// Minimal separation kept between two parameters of one episode.
pub const DISTINCT_DELTA: f64 = 1e-8;

const SEPARATE_MAX_PASSES: usize = 64;

/// One labeled multivariate time-series; columns of `snapshots` are time steps.
#[derive(Debug, Clone)]
pub struct Episode {
    id: String,
    label: usize,
    snapshots: DMatrix<f64>,
    complex: CMat,
}

impl Episode {
    pub fn new(id: impl Into<String>, label: usize, snapshots: DMatrix<f64>) -> Result<Self> {
        let id = id.into();
        if snapshots.nrows() < 1 || snapshots.ncols() < 2 {
            return Err(Error::DimensionMismatch(format!(
                "episode `{id}` must have p >= 1 and tau >= 2, got {}x{}",
                snapshots.nrows(),
                snapshots.ncols()
            )));
        }
        if snapshots.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parse(format!("episode `{id}` has non-finite entries")));
        }
        if label == 0 {
            return Err(Error::Config(format!("episode `{id}` has label 0; labels are 1-based")));
        }
        let complex = numerics::to_complex(&snapshots);
        Ok(Self { id, label, snapshots, complex })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn snapshots(&self) -> &DMatrix<f64> {
        &self.snapshots
    }

    /// The snapshot matrix lifted to complex entries.
    pub fn complex(&self) -> &CMat {
        &self.complex
    }

    pub fn p(&self) -> usize {
        self.snapshots.nrows()
    }

    pub fn tau(&self) -> usize {
        self.snapshots.ncols()
    }
}

/// The `r` complex time-evolution parameters of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaSet(Vec<C64>);

impl ThetaSet {
    pub fn new(values: Vec<C64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("theta set must be nonempty".into()));
        }
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NumericFailure("theta set has non-finite entries".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[C64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<C64> {
        self.0
    }

    /// Smallest pairwise distance, `inf` for a single value.
    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for a in 0..self.0.len() {
            for b in (a + 1)..self.0.len() {
                best = best.min((self.0[a] - self.0[b]).norm());
            }
        }
        best
    }

    /// Pushes apart any pair closer than `delta` along their difference
    /// direction (or along the real axis for exact ties), repeating passes
    /// until no such pair remains. Returns the number of nudges applied.
    pub fn separate(&mut self, delta: f64) -> usize {
        let mut nudges = 0;
        let n = self.0.len();
        for _ in 0..SEPARATE_MAX_PASSES {
            let before = nudges;
            for a in 0..n {
                for b in (a + 1)..n {
                    let diff = self.0[b] - self.0[a];
                    let dist = diff.norm();
                    if dist < delta {
                        let dir = if dist > 0.0 { diff / dist } else { c(1.0, 0.0) };
                        let push = dir * (0.5 * (delta - dist) + 0.5 * delta);
                        self.0[a] -= push;
                        self.0[b] += push;
                        nudges += 1;
                    }
                }
            }
            if nudges == before {
                break;
            }
        }
        nudges
    }
}

impl std::ops::Deref for ThetaSet {
    type Target = [C64];

    fn deref(&self) -> &[C64] {
        &self.0
    }
}

/// Eigenvalues, modes and amplitudes of one episode.
#[derive(Debug, Clone)]
pub struct DmdFit {
    pub theta: ThetaSet,
    /// `p x r`; column `j` is the dynamic mode of `theta[j]`.
    pub modes: CMat,
    /// Weight of each mode in the first snapshot.
    pub amplitudes: Vec<C64>,
}

/// Eigendecomposition-based DMD with rank-`r` SVD truncation.
///
/// Modes are the exact DMD modes `X⁺ V S⁻¹ w / λ` (projected modes `U w` for
/// zero eigenvalues). Amplitudes are the least-squares fit of `x_1` onto the
/// modes. Eigenvalues are ordered by descending modulus, then by argument.
pub fn exact_dmd(ep: &Episode, r: usize) -> Result<DmdFit> {
    let (p, tau) = (ep.p(), ep.tau());
    if r == 0 || r > p.min(tau - 1) {
        return Err(Error::Config(format!(
            "r = {r} must lie in 1..={} for a {p}x{tau} episode",
            p.min(tau - 1)
        )));
    }
    let x = ep.complex();
    let x_minus = x.columns(0, tau - 1).into_owned();
    let x_plus = x.columns(1, tau - 1).into_owned();

    let f = numerics::svd(&x_minus)?;
    let rank = f.rank(DEFAULT_RTOL);
    if rank < r {
        return Err(Error::RankDeficient { requested: r, achievable: rank });
    }
    let u = f.u.columns(0, r).into_owned();
    let vh = f.vh.rows(0, r).into_owned();
    let mut v_sinv = vh.adjoint();
    for k in 0..r {
        v_sinv.column_mut(k).iter_mut().for_each(|z| *z /= f.s[k]);
    }
    let xv = &x_plus * &v_sinv;
    let a_tilde = u.adjoint() * &xv;
    let (vals, vecs) = numerics::eig(&a_tilde)?;

    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| {
        vals[b]
            .norm()
            .partial_cmp(&vals[a].norm())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(vals[a].arg().partial_cmp(&vals[b].arg()).unwrap_or(std::cmp::Ordering::Equal))
    });

    let scale = vals.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut modes = CMat::zeros(p, r);
    let mut theta = Vec::with_capacity(r);
    for (slot, &k) in order.iter().enumerate() {
        let lam = vals[k];
        let w = vecs.column(k);
        let mode: CVec = if lam.norm() > 1e-12 * scale.max(1e-300) {
            (&xv * w) / lam
        } else {
            &u * w
        };
        modes.set_column(slot, &mode);
        theta.push(lam);
    }
    let x1 = x.column(0).into_owned();
    let amps = numerics::pinv(&modes, DEFAULT_RTOL)? * x1;
    let mut theta = ThetaSet::new(theta)?;
    theta.separate(DISTINCT_DELTA);
    Ok(DmdFit { theta, modes, amplitudes: amps.iter().copied().collect() })
}

fn check_tau(ep: &Episode, theta: &[C64]) -> Result<()> {
    if theta.is_empty() {
        return Err(Error::Config("theta set must be nonempty".into()));
    }
    if ep.tau() < 1 {
        return Err(Error::DimensionMismatch("episode has no snapshots".into()));
    }
    Ok(())
}

/// Per-episode quantities of the variable-projection model at one `Θ`.
#[derive(Debug, Clone)]
pub struct Varpro {
    /// `V_Θ`, `r x tau`.
    pub v: CMat,
    /// `V_Θ†`, `tau x r`.
    pub v_pinv: CMat,
    /// `W = X V_Θ†`, `p x r`.
    pub modes: CMat,
}

impl Varpro {
    pub fn new(ep: &Episode, theta: &[C64]) -> Result<Self> {
        check_tau(ep, theta)?;
        let v = numerics::vandermonde(theta, ep.tau());
        if !numerics::is_finite(&v) {
            return Err(Error::NumericFailure("Vandermonde matrix overflowed".into()));
        }
        let v_pinv = numerics::pinv(&v, DEFAULT_RTOL)?;
        let modes = ep.complex() * &v_pinv;
        Ok(Self { v, v_pinv, modes })
    }

    /// `X V† V`.
    pub fn fitted(&self) -> CMat {
        &self.modes * &self.v
    }

    /// `(1/τ) ‖X − X V† V‖²_F`.
    pub fn loss(&self, ep: &Episode) -> f64 {
        numerics::fro2(&(ep.complex() - self.fitted())) / ep.tau() as f64
    }

    /// `∂f/∂θ_j = sum(∂f/∂V ∘ ∂V/∂θ_j)` with `∂f/∂V = (1/τ)((V†V − I) XᴴX V†)ᵀ`.
    pub fn loss_grad(&self, ep: &Episode, theta: &[C64]) -> Vec<C64> {
        let xhw = ep.complex().adjoint() * &self.modes;
        let mut m = &self.v_pinv * (&self.v * &xhw) - xhw;
        m.scale_mut(1.0 / ep.tau() as f64);
        numerics::contract_with_vandermonde_deriv(&m, theta)
    }
}

/// Variable-projection modes `W = X V_Θ†`.
pub fn varpro_modes(ep: &Episode, theta: &[C64]) -> Result<CMat> {
    Ok(Varpro::new(ep, theta)?.modes)
}

/// Reconstruction loss `(1/τ) ‖X − X V_Θ† V_Θ‖²_F`.
pub fn f_dmd(ep: &Episode, theta: &[C64]) -> Result<f64> {
    Ok(Varpro::new(ep, theta)?.loss(ep))
}

/// Wirtinger derivative of [`f_dmd`] with respect to each entry of `theta`.
///
/// This is the per-episode derivative; the dataset mean's `1/n` is applied by
/// the caller.
pub fn f_dmd_grad(ep: &Episode, theta: &[C64]) -> Result<Vec<C64>> {
    Ok(Varpro::new(ep, theta)?.loss_grad(ep, theta))
}

/// Real-valued reconstruction plus the largest discarded imaginary part.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub values: DMatrix<f64>,
    pub imag_residue: f64,
}

pub fn reconstruct(ep: &Episode, theta: &[C64]) -> Result<Reconstruction> {
    let fitted = Varpro::new(ep, theta)?.fitted();
    let imag_residue = fitted.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    Ok(Reconstruction { values: fitted.map(|z| z.re), imag_residue })
}

/// `t ↦ θ_j^(t−1) · amplitude_j` for `t = 1..=tau`.
pub fn temporal_profile(fit: &DmdFit, j: usize, tau: usize) -> Result<Vec<C64>> {
    if j >= fit.theta.len() {
        return Err(Error::Config(format!("mode index {j} out of range for r = {}", fit.theta.len())));
    }
    let amp = fit.amplitudes.get(j).copied().unwrap_or(c(1.0, 0.0));
    let t = fit.theta[j];
    let mut acc = c(1.0, 0.0);
    Ok((0..tau)
        .map(|_| {
            let out = acc * amp;
            acc *= t;
            out
        })
        .collect())
}
