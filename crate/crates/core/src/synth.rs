//! Labeled synthetic episodes built from one distinctive and one shared mode.
//!
//! Episode `i` with label `y` is the real part of
//!
//! ```text
//! x_t = λ_d^t w_{d,y} + λ_c^t w_c + e_t,   t = 1..=τ
//! ```
//!
//! with `λ = exp(−γ + iω)`, `ω` uniform per episode and `e_t` circular complex
//! Gaussian noise.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::Dataset;
use crate::dmd::Episode;
use crate::error::{Error, Result};
use crate::numerics::C64;

/// Spatial patterns on a `side x side` grid, stored row-major (`p = side²`).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModeShapes {
    pub w_d1: Vec<f64>,
    pub w_d2: Vec<f64>,
    pub w_c: Vec<f64>,
}

impl ModeShapes {
    /// A horizontal bar near the top edge for class 1, a vertical bar near
    /// the left edge for class 2 and a centred Gaussian blob for the shared mode.
    pub fn builtin(side: usize) -> Self {
        let s = side as f64;
        let lo = ((s * 0.1).round() as usize).min(side.saturating_sub(1));
        let hi = ((s * 0.9).round() as usize).max(lo + 1).min(side);
        let band = |k: usize| k >= lo && k < lo + 2;
        let span = |k: usize| k >= lo && k < hi;
        let grid = |f: &dyn Fn(usize, usize) -> f64| -> Vec<f64> {
            (0..side * side).map(|k| f(k / side, k % side)).collect()
        };
        let bar_h = grid(&|i, j| if band(i) && span(j) { 1.0 } else { 0.0 });
        let bar_v = grid(&|i, j| if band(j) && span(i) { 1.0 } else { 0.0 });
        let centre = (s - 1.0) / 2.0;
        let sigma = (s / 5.0).max(0.5);
        let blob = grid(&|i, j| {
            let d2 = (i as f64 - centre).powi(2) + (j as f64 - centre).powi(2);
            2.0 * (-d2 / (2.0 * sigma * sigma)).exp()
        });
        Self { w_d1: bar_h, w_d2: bar_v, w_c: blob }
    }

    pub fn w_d(&self, label: usize) -> &[f64] {
        if label == 1 {
            &self.w_d1
        } else {
            &self.w_d2
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    /// Number of episodes; even, first half class 1.
    pub n: usize,
    pub tau: usize,
    /// Image side `s`, so `p = s²`.
    pub image_side: usize,
    pub gamma_d: f64,
    pub gamma_c: f64,
    pub omega_d: (f64, f64),
    pub omega_c: (f64, f64),
    pub noise_sd: f64,
    pub seed: u64,
    /// Built-in shapes for `image_side` when absent.
    pub modes: Option<ModeShapes>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 20,
            tau: 100,
            image_side: 10,
            gamma_d: 0.1,
            gamma_c: 0.1,
            omega_d: (0.0, 1.0),
            omega_c: (0.0, 1.0),
            noise_sd: 0.05,
            seed: 0,
            modes: None,
        }
    }
}

impl SynthConfig {
    pub fn p(&self) -> usize {
        self.image_side * self.image_side
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.n % 2 != 0 {
            return Err(Error::Config(format!("n must be even and at least 2, got {}", self.n)));
        }
        if self.tau < 2 {
            return Err(Error::Config("tau must be at least 2".into()));
        }
        if self.image_side == 0 {
            return Err(Error::Config("image_side must be positive".into()));
        }
        for (name, g) in [("gamma_d", self.gamma_d), ("gamma_c", self.gamma_c)] {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        for (name, (lo, hi)) in [("omega_d", self.omega_d), ("omega_c", self.omega_c)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("{name} range must be finite with lo <= hi")));
            }
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config("noise_sd must be finite and >= 0".into()));
        }
        if let Some(m) = &self.modes {
            let p = self.p();
            if m.w_d1.len() != p || m.w_d2.len() != p || m.w_c.len() != p {
                return Err(Error::DimensionMismatch(format!("mode shapes must have length p = {p}")));
            }
        }
        Ok(())
    }

    pub fn shapes(&self) -> ModeShapes {
        self.modes.clone().unwrap_or_else(|| ModeShapes::builtin(self.image_side))
    }
}

/// The generating parameters alongside the dataset.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub dataset: Dataset,
    pub modes: ModeShapes,
    pub lambda_d: Vec<C64>,
    pub lambda_c: Vec<C64>,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let modes = cfg.shapes();
    let (n, tau, p) = (cfg.n, cfg.tau, cfg.p());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // each of re and im carries half the variance of the circular noise
    let noise = Normal::new(0.0, cfg.noise_sd / std::f64::consts::SQRT_2)
        .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;

    let mut episodes = Vec::with_capacity(n);
    let mut lambda_d = Vec::with_capacity(n);
    let mut lambda_c = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i < n / 2 { 1 } else { 2 };
        let ld = C64::from_polar((-cfg.gamma_d).exp(), uniform(&mut rng, cfg.omega_d));
        let lc = C64::from_polar((-cfg.gamma_c).exp(), uniform(&mut rng, cfg.omega_c));
        let wd = modes.w_d(label);
        let mut x = DMatrix::zeros(p, tau);
        let (mut pd, mut pc) = (ld, lc);
        for t in 0..tau {
            for k in 0..p {
                let e = C64::new(noise.sample(&mut rng), noise.sample(&mut rng));
                x[(k, t)] = (pd * wd[k] + pc * modes.w_c[k] + e).re;
            }
            pd *= ld;
            pc *= lc;
        }
        episodes.push(Episode::new(format!("ep{:03}", i + 1), label, x)?);
        lambda_d.push(ld);
        lambda_c.push(lc);
    }
    let dataset = Dataset::new(episodes, vec!["class1".into(), "class2".into()])?;
    Ok(SynthData { dataset, modes, lambda_d, lambda_c })
}
