//! Kernel Fisher discriminant quality of a labeled set of subspaces.
//!
//! `f_KFD = Q1 · Q2` where, in the feature space of the projection kernel,
//!
//! - `Q1 = 2/(c(c−1)) Σ_{l<m} tr(Σ_l Σ_m) / (tr(Σ_l Σ_l) + tr(Σ_m Σ_m))` measures how
//!   alike the class covariances are, and
//! - `Q2 = Σ_{l<m} (n_l n_m / n²) ‖μ_l − μ_m‖²` measures how far apart the class means are.
//!
//! Class covariances use the `1/n_l` normalization, so with one-sided
//! centering `K̃_{l,m} = K_{l,m}(I − O_{n_m})`,
//! `tr(Σ_l Σ_m) = tr(K̃_{l,m} K̃_{m,l}) / (n_l n_m)`.
//!
//! Gradients are assembled in adjoint form: `∂f/∂K` is formed once as an
//! `n x n` matrix and contracted with the per-entry kernel gradient slabs.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernel::{self, DmsBasis, Side};
use crate::numerics::{c, C64};
use crate::par;

/// Relative threshold below which a `Q1` denominator is treated as zero.
const DEGENERATE_TOL: f64 = 1e-24;

/// Per-class lists of dataset indices, `classes[l][p] = i_{l,p}` (0-based `l`).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassIndex {
    classes: Vec<Vec<usize>>,
    n: usize,
}

impl ClassIndex {
    /// `labels` are 1-based class ids; `c` is the number of classes.
    pub fn new(labels: &[usize], c: usize) -> Result<Self> {
        if c < 2 {
            return Err(Error::Config(format!("need at least two classes, got {c}")));
        }
        let mut classes = vec![Vec::new(); c];
        for (i, &y) in labels.iter().enumerate() {
            if y == 0 || y > c {
                return Err(Error::Config(format!("label {y} of episode {i} outside 1..={c}")));
            }
            classes[y - 1].push(i);
        }
        if let Some(l) = classes.iter().position(Vec::is_empty) {
            return Err(Error::Config(format!("class {} has no episodes", l + 1)));
        }
        Ok(Self { classes, n: labels.len() })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn members(&self, l: usize) -> &[usize] {
        &self.classes[l]
    }

    pub fn count(&self, l: usize) -> usize {
        self.classes[l].len()
    }
}

/// Kernel matrix over a dataset, grouped by class, optionally with gradients.
#[derive(Debug, Clone)]
pub struct ClassGram {
    pub index: ClassIndex,
    /// Full `n x n` kernel matrix in dataset order.
    pub k: DMatrix<f64>,
    /// `slabs[a * n + b] = ∂k(a, b)/∂θ_a`; the derivative w.r.t. `θ_b` is `slabs[b * n + a]`.
    slabs: Option<Vec<Vec<C64>>>,
}

impl ClassGram {
    pub fn n(&self) -> usize {
        self.k.nrows()
    }

    pub fn has_grads(&self) -> bool {
        self.slabs.is_some()
    }

    /// `∂k(a, b)/∂θ_a`.
    pub fn slab(&self, a: usize, b: usize) -> Option<&[C64]> {
        self.slabs.as_ref().map(|s| s[a * self.n() + b].as_slice())
    }

    /// `K_{l,m}`, rows indexed by class `l` members and columns by class `m` (0-based).
    pub fn block(&self, l: usize, m: usize) -> DMatrix<f64> {
        let rows = self.index.members(l);
        let cols = self.index.members(m);
        DMatrix::from_fn(rows.len(), cols.len(), |p, q| self.k[(rows[p], cols[q])])
    }

    /// `K̃_{l,m} = K_{l,m}(I − O_{n_m})`.
    pub fn centered_block(&self, l: usize, m: usize) -> DMatrix<f64> {
        let mut b = self.block(l, m);
        let n_m = b.ncols() as f64;
        for mut row in b.row_iter_mut() {
            let mean = row.sum() / n_m;
            row.add_scalar_mut(-mean);
        }
        b
    }
}

/// Kernel matrix for `bases` grouped by `labels` (1-based, `c` classes).
/// Each unordered pair is evaluated once.
pub fn assemble_gram(bases: &[DmsBasis], labels: &[usize], c: usize, with_grads: bool) -> Result<ClassGram> {
    if bases.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} bases but {} labels",
            bases.len(),
            labels.len()
        )));
    }
    let index = ClassIndex::new(labels, c)?;
    let n = bases.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a..n).map(move |b| (a, b))).collect();
    let evals = par::map_slice(&pairs, |&(a, b)| -> Result<(f64, Option<(Vec<C64>, Vec<C64>)>)> {
        let value = kernel::k_dms(&bases[a], &bases[b])?;
        let grads = if with_grads {
            Some((
                kernel::k_dms_grad(&bases[a], &bases[b], Side::Left)?,
                kernel::k_dms_grad(&bases[a], &bases[b], Side::Right)?,
            ))
        } else {
            None
        };
        Ok((value, grads))
    });

    let mut k = DMatrix::zeros(n, n);
    let mut slabs = with_grads.then(|| vec![Vec::new(); n * n]);
    for (&(a, b), ev) in pairs.iter().zip(evals) {
        let (value, grads) = ev?;
        k[(a, b)] = value;
        k[(b, a)] = value;
        if let (Some(s), Some((lhs, rhs))) = (slabs.as_mut(), grads) {
            s[a * n + b] = lhs;
            s[b * n + a] = rhs;
        }
    }
    Ok(ClassGram { index, k, slabs })
}

/// `H K H` restricted to classes `(l, m)`, where `H` is the centering matrix.
fn double_centered(gram: &ClassGram, l: usize, m: usize) -> DMatrix<f64> {
    let mut b = gram.centered_block(l, m);
    let n_l = b.nrows() as f64;
    for mut col in b.column_iter_mut() {
        let mean = col.sum() / n_l;
        col.add_scalar_mut(-mean);
    }
    b
}

/// `tr(Σ_l Σ_m)` for every class pair (symmetric `c x c`).
fn cov_traces(gram: &ClassGram) -> DMatrix<f64> {
    let c = gram.index.num_classes();
    let mut t = DMatrix::zeros(c, c);
    for l in 0..c {
        for m in l..c {
            let a = gram.centered_block(l, m);
            let b = gram.centered_block(m, l);
            let tr = (&a * &b).trace() / (gram.index.count(l) * gram.index.count(m)) as f64;
            t[(l, m)] = tr;
            t[(m, l)] = tr;
        }
    }
    t
}

fn is_degenerate(den: f64, gram: &ClassGram) -> bool {
    let scale = gram.k.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    den <= DEGENERATE_TOL * (1.0 + scale * scale)
}

/// Value of `Q1` with the number of class pairs whose denominator vanished.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Q1Value {
    pub value: f64,
    pub degenerate_pairs: usize,
}

pub fn q1_with_diagnostics(gram: &ClassGram) -> Q1Value {
    let c = gram.index.num_classes();
    let t = cov_traces(gram);
    let mut sum = 0.0;
    let mut degenerate_pairs = 0;
    for l in 0..c {
        for m in (l + 1)..c {
            let den = t[(l, l)] + t[(m, m)];
            if is_degenerate(den, gram) {
                degenerate_pairs += 1;
            } else {
                sum += t[(l, m)] / den;
            }
        }
    }
    Q1Value { value: 2.0 / (c * (c - 1)) as f64 * sum, degenerate_pairs }
}

/// Homoscedasticity term; degenerate class pairs contribute 0.
pub fn q1(gram: &ClassGram) -> f64 {
    q1_with_diagnostics(gram).value
}

fn block_mean(gram: &ClassGram, l: usize, m: usize) -> f64 {
    let b = gram.block(l, m);
    b.sum() / (b.nrows() * b.ncols()) as f64
}

/// Class-separability term.
pub fn q2(gram: &ClassGram) -> f64 {
    let c = gram.index.num_classes();
    let n2 = (gram.n() * gram.n()) as f64;
    let mut sum = 0.0;
    for l in 0..c {
        for m in (l + 1)..c {
            let w = (gram.index.count(l) * gram.index.count(m)) as f64 / n2;
            let dist = block_mean(gram, l, l) - block_mean(gram, l, m) - block_mean(gram, m, l)
                + block_mean(gram, m, m);
            sum += w * dist;
        }
    }
    sum
}

pub fn f_kfd(gram: &ClassGram) -> f64 {
    q1(gram) * q2(gram)
}

/// `∂Q1/∂K` and `∂Q2/∂K` as `n x n` matrices in dataset order.
#[derive(Debug, Clone)]
pub struct KfdAdjoint {
    pub q1: f64,
    pub q2: f64,
    pub d_q1: DMatrix<f64>,
    pub d_q2: DMatrix<f64>,
    pub degenerate_pairs: usize,
}

impl KfdAdjoint {
    /// `∂f_KFD/∂K = Q2 ∂Q1/∂K + Q1 ∂Q2/∂K`.
    pub fn d_f(&self) -> DMatrix<f64> {
        &self.d_q1 * self.q2 + &self.d_q2 * self.q1
    }
}

/// Scatters a class-block matrix into an `n x n` dataset-ordered matrix.
fn scatter_add(out: &mut DMatrix<f64>, gram: &ClassGram, l: usize, m: usize, blk: &DMatrix<f64>, scale: f64) {
    let rows = gram.index.members(l);
    let cols = gram.index.members(m);
    for (p, &i) in rows.iter().enumerate() {
        for (q, &j) in cols.iter().enumerate() {
            out[(i, j)] += scale * blk[(p, q)];
        }
    }
}

pub fn kfd_adjoint(gram: &ClassGram) -> KfdAdjoint {
    let n = gram.n();
    let c = gram.index.num_classes();
    let t = cov_traces(gram);
    let counts: Vec<f64> = (0..c).map(|l| gram.index.count(l) as f64).collect();

    // ∂T_lm/∂K_lm = H_l K_lm H_m / (n_l n_m); for l = m the factor doubles.
    let d_trace = |l: usize, m: usize, out: &mut DMatrix<f64>, scale: f64| {
        let norm = counts[l] * counts[m];
        if l == m {
            scatter_add(out, gram, l, l, &double_centered(gram, l, l), 2.0 * scale / norm);
        } else {
            scatter_add(out, gram, l, m, &double_centered(gram, l, m), scale / norm);
            scatter_add(out, gram, m, l, &double_centered(gram, m, l), scale / norm);
        }
    };

    let kappa = 2.0 / (c * (c - 1)) as f64;
    let mut d_q1 = DMatrix::zeros(n, n);
    let mut q1 = 0.0;
    let mut degenerate_pairs = 0;
    for l in 0..c {
        for m in (l + 1)..c {
            let den = t[(l, l)] + t[(m, m)];
            if is_degenerate(den, gram) {
                degenerate_pairs += 1;
                continue;
            }
            q1 += t[(l, m)] / den;
            d_trace(l, m, &mut d_q1, kappa / den);
            let s = -kappa * t[(l, m)] / (den * den);
            d_trace(l, l, &mut d_q1, s);
            d_trace(m, m, &mut d_q1, s);
        }
    }
    q1 *= kappa;

    let n2 = (n * n) as f64;
    let mut d_q2 = DMatrix::zeros(n, n);
    let fill = |out: &mut DMatrix<f64>, l: usize, m: usize, v: f64| {
        for &i in gram.index.members(l) {
            for &j in gram.index.members(m) {
                out[(i, j)] += v;
            }
        }
    };
    for l in 0..c {
        for m in (l + 1)..c {
            let w = counts[l] * counts[m] / n2;
            fill(&mut d_q2, l, l, w / (counts[l] * counts[l]));
            fill(&mut d_q2, m, m, w / (counts[m] * counts[m]));
            fill(&mut d_q2, l, m, -w / (counts[l] * counts[m]));
            fill(&mut d_q2, m, l, -w / (counts[l] * counts[m]));
        }
    }

    KfdAdjoint { q1, q2: q2(gram), d_q1, d_q2, degenerate_pairs }
}

/// Contracts an adjoint `∂f/∂K` with the gradient slabs: the Wirtinger
/// derivative of `f` with respect to every `θ_{i,j}`, indexed `[i][j]`.
pub fn contract_slabs(gram: &ClassGram, adj: &DMatrix<f64>) -> Result<Vec<Vec<C64>>> {
    let slabs = gram
        .slabs
        .as_ref()
        .ok_or_else(|| Error::Config("gram was assembled without gradients".into()))?;
    let n = gram.n();
    Ok((0..n)
        .map(|i| {
            let r = slabs[i * n + i].len();
            let mut g = vec![c(0.0, 0.0); r];
            for b in 0..n {
                let w = adj[(i, b)] + adj[(b, i)];
                if w == 0.0 {
                    continue;
                }
                for (gj, sj) in g.iter_mut().zip(&slabs[i * n + b]) {
                    *gj += sj * w;
                }
            }
            g
        })
        .collect())
}

/// Wirtinger derivatives of `f_KFD` for every episode and mode.
pub fn f_kfd_grad_all(gram: &ClassGram) -> Result<Vec<Vec<C64>>> {
    let adj = kfd_adjoint(gram);
    contract_slabs(gram, &adj.d_f())
}

/// Wirtinger derivative of `f_KFD` with respect to `θ_{i,j}`.
pub fn f_kfd_grad(gram: &ClassGram, episode: usize, mode: usize) -> Result<C64> {
    if episode >= gram.n() {
        return Err(Error::Config(format!("episode index {episode} out of range")));
    }
    let all = f_kfd_grad_all(gram)?;
    all[episode]
        .get(mode)
        .copied()
        .ok_or_else(|| Error::Config(format!("mode index {mode} out of range")))
}
