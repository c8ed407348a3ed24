//! Dense complex linear algebra shared by the rest of the crate.
//!
//! Matrices are `nalgebra::DMatrix<Complex<f64>>`, stored column-major.
//! Decompositions are deterministic for a fixed input: singular values come
//! out in descending order and every left singular vector is rotated so its
//! largest-magnitude entry is real and positive.

use nalgebra::{Complex, DMatrix, DVector, Schur};

use crate::error::{Error, Result};

#[allow(non_camel_case_types)]
pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Default rank cutoff relative to the largest singular value.
pub const DEFAULT_RTOL: f64 = 1e-10;

const SCHUR_MAX_ITERS: usize = 10_000;

pub fn c(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

/// Thin SVD `m = u * diag(s) * vh`.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: CMat,
    pub s: Vec<f64>,
    pub vh: CMat,
}

impl SvdFactors {
    /// Number of singular values above `rtol * s_max`.
    pub fn rank(&self, rtol: f64) -> usize {
        let smax = self.s.first().copied().unwrap_or(0.0);
        if smax <= 0.0 {
            return 0;
        }
        self.s.iter().take_while(|&&s| s > rtol * smax).count()
    }

    pub fn reconstruct(&self) -> CMat {
        let mut us = self.u.clone();
        for (k, &s) in self.s.iter().enumerate() {
            us.column_mut(k).scale_mut(s);
        }
        us * &self.vh
    }
}

pub fn is_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn svd(m: &CMat) -> Result<SvdFactors> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::DimensionMismatch("svd of an empty matrix".into()));
    }
    if !is_finite(m) {
        return Err(Error::NumericFailure("svd input has non-finite entries".into()));
    }
    let fm = faer::Mat::<C64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let dec = fm
        .thin_svd()
        .map_err(|e| Error::NumericFailure(format!("svd did not converge: {e:?}")))?;
    let (fu, fs, fv) = (dec.U(), dec.S(), dec.V());
    let k = fs.dim();
    let u0 = CMat::from_fn(m.nrows(), k, |i, j| fu[(i, j)]);
    let vh0 = CMat::from_fn(k, m.ncols(), |i, j| fv[(j, i)].conj());
    let s0: Vec<f64> = (0..k).map(|j| fs[j].re).collect();

    let mut order: Vec<usize> = (0..s0.len()).collect();
    order.sort_by(|&a, &b| s0[b].total_cmp(&s0[a]));
    let mut u = CMat::from_fn(u0.nrows(), order.len(), |i, k| u0[(i, order[k])]);
    let mut vh = CMat::from_fn(order.len(), vh0.ncols(), |k, j| vh0[(order[k], j)]);
    let s: Vec<f64> = order.iter().map(|&k| s0[k]).collect();

    for k in 0..s.len() {
        let mut best = 0;
        let mut best_mag: f64 = -1.0;
        for i in 0..u.nrows() {
            let mag = u[(i, k)].norm();
            if mag > best_mag + 1e-14 * best_mag.max(1.0) {
                best = i;
                best_mag = mag;
            }
        }
        if best_mag > 0.0 {
            let phase = u[(best, k)].conj() / best_mag;
            u.column_mut(k).iter_mut().for_each(|z| *z *= phase);
            vh.row_mut(k).iter_mut().for_each(|z| *z *= phase.conj());
            u[(best, k)] = c(u[(best, k)].re, 0.0);
        }
    }

    Ok(SvdFactors { u, s, vh })
}

/// Moore-Penrose pseudoinverse from precomputed factors.
pub fn pinv_from_svd(f: &SvdFactors, rows: usize, cols: usize, rtol: f64) -> CMat {
    let rank = f.rank(rtol);
    let mut out = CMat::zeros(cols, rows);
    for k in 0..rank {
        let inv = 1.0 / f.s[k];
        let v = f.vh.row(k).adjoint();
        let uh = f.u.column(k).adjoint();
        out += (v * uh).scale(inv);
    }
    out
}

/// Moore-Penrose pseudoinverse; singular values at or below `rtol * s_max` are dropped.
pub fn pinv(m: &CMat, rtol: f64) -> Result<CMat> {
    check_rtol(rtol)?;
    let f = svd(m)?;
    Ok(pinv_from_svd(&f, m.nrows(), m.ncols(), rtol))
}

/// Orthonormal basis of `range(m)` with as many columns as the numerical rank.
pub fn range_basis(m: &CMat, rtol: f64) -> Result<CMat> {
    check_rtol(rtol)?;
    let f = svd(m)?;
    let rank = f.rank(rtol);
    Ok(f.u.columns(0, rank).into_owned())
}

fn check_rtol(rtol: f64) -> Result<()> {
    if rtol > 0.0 && rtol < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("rtol must lie in (0, 1), got {rtol}")))
    }
}

/// `r x tau` Vandermonde matrix, row `j` is `[1, t_j, t_j^2, ..., t_j^(tau-1)]`.
pub fn vandermonde(theta: &[C64], tau: usize) -> CMat {
    let mut v = CMat::zeros(theta.len(), tau);
    for (j, &t) in theta.iter().enumerate() {
        let mut acc = c(1.0, 0.0);
        for col in 0..tau {
            v[(j, col)] = acc;
            acc *= t;
        }
    }
    v
}

/// Row `j` of the derivative of the Vandermonde matrix w.r.t. `theta[j]`:
/// `[0, 1, 2 t_j, ..., (tau-1) t_j^(tau-2)]`.
pub fn vandermonde_deriv_row(t: C64, tau: usize) -> Vec<C64> {
    let mut row = vec![c(0.0, 0.0); tau];
    let mut pow = c(1.0, 0.0);
    for (k, slot) in row.iter_mut().enumerate().skip(1) {
        *slot = pow * k as f64;
        pow *= t;
    }
    row
}

/// Full `r x tau` derivative of the Vandermonde matrix w.r.t. `theta[j]`.
/// All rows except `j` are zero.
pub fn vandermonde_deriv(theta: &[C64], tau: usize, j: usize) -> CMat {
    assert!(j < theta.len(), "mode index {j} out of range");
    let mut d = CMat::zeros(theta.len(), tau);
    for (col, v) in vandermonde_deriv_row(theta[j], tau).into_iter().enumerate() {
        d[(j, col)] = v;
    }
    d
}

/// `sum(g ∘ dV/dθ_j)` for every `j`, where `gt` holds `g` transposed (`tau x r`).
///
/// Chain rule from a matrix derivative with respect to the Vandermonde
/// matrix to the Wirtinger derivative with respect to each node.
pub fn contract_with_vandermonde_deriv(gt: &CMat, theta: &[C64]) -> Vec<C64> {
    let tau = gt.nrows();
    theta
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            vandermonde_deriv_row(t, tau)
                .iter()
                .enumerate()
                .fold(c(0.0, 0.0), |acc, (k, d)| acc + gt[(k, j)] * d)
        })
        .collect()
}

/// Eigenvalues and right eigenvectors of a general complex square matrix.
///
/// Eigenvectors are computed by back-substitution on the complex Schur form
/// and normalized to unit length.
pub fn eig(m: &CMat) -> Result<(Vec<C64>, CMat)> {
    let n = m.nrows();
    if n != m.ncols() || n == 0 {
        return Err(Error::DimensionMismatch("eig needs a nonempty square matrix".into()));
    }
    let schur = Schur::try_new(m.clone(), 1e-15, SCHUR_MAX_ITERS)
        .ok_or_else(|| Error::NumericFailure("Schur decomposition did not converge".into()))?;
    let (q, t) = schur.unpack();
    let vals: Vec<C64> = (0..n).map(|k| t[(k, k)]).collect();
    let scale = t.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut vecs = CMat::zeros(n, n);
    for k in 0..n {
        let lam = vals[k];
        let mut y = CVec::zeros(n);
        y[k] = c(1.0, 0.0);
        for i in (0..k).rev() {
            let mut acc = c(0.0, 0.0);
            for j in (i + 1)..=k {
                acc += t[(i, j)] * y[j];
            }
            let mut den = t[(i, i)] - lam;
            if den.norm() < 1e-14 * scale {
                den = c(1e-14 * scale, 0.0);
            }
            y[i] = -acc / den;
        }
        let x = &q * y;
        let nrm = x.norm();
        vecs.set_column(k, &(x / c(nrm, 0.0)));
    }
    Ok((vals, vecs))
}

pub fn to_complex(m: &DMatrix<f64>) -> CMat {
    m.map(|x| c(x, 0.0))
}

/// Squared Frobenius norm.
pub fn fro2(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cmat(rng: &mut ChaCha8Rng, r: usize, k: usize) -> CMat {
        CMat::from_fn(r, k, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn max_abs(m: &CMat) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn svd_identity() {
        let f = svd(&CMat::identity(2, 2)).unwrap();
        assert_eq!(f.s, vec![1.0, 1.0]);
        assert!(max_abs(&(&f.u * &f.vh - CMat::identity(2, 2))) < 1e-15);
    }

    #[test]
    fn svd_diagonal_with_zero() {
        let mut m = CMat::zeros(2, 2);
        m[(0, 0)] = c(3.0, 0.0);
        let f = svd(&m).unwrap();
        assert!((f.s[0] - 3.0).abs() < 1e-15 && f.s[1].abs() < 1e-15);
        assert_eq!(f.rank(DEFAULT_RTOL), 1);
    }

    #[test]
    fn svd_reconstructs_rank_deficient_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..300 {
            let p = rng.random_range(2..8);
            let tau = rng.random_range(2..30);
            let k = rng.random_range(1..=p.min(tau));
            let m = random_cmat(&mut rng, p, k) * random_cmat(&mut rng, k, tau);
            let f = svd(&m).unwrap();
            assert!(max_abs(&(f.reconstruct() - &m)) < 1e-12 * m.norm().max(1.0));
            assert_eq!(f.rank(DEFAULT_RTOL), k);
        }
    }

    #[test]
    fn svd_reconstructs_and_matches_gram_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_cmat(&mut rng, 4, 3);
        let f = svd(&m).unwrap();
        assert!(max_abs(&(f.reconstruct() - &m)) < 1e-10);
        assert!(max_abs(&(f.u.adjoint() * &f.u - CMat::identity(3, 3))) < 1e-10);
        assert!(max_abs(&(&f.vh * f.vh.adjoint() - CMat::identity(3, 3))) < 1e-10);
        // independent reference: eigenvalues of the Hermitian Gram matrix
        let gram = m.adjoint() * &m;
        let mut ev: Vec<f64> = nalgebra::SymmetricEigen::new(gram).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (s, e) in f.s.iter().zip(ev) {
            assert!((s * s - e).abs() < 1e-10);
        }
    }

    #[test]
    fn svd_phase_convention() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_cmat(&mut rng, 5, 3);
        let f = svd(&m).unwrap();
        for k in 0..3 {
            let col = f.u.column(k);
            let (i, _) = col.iter().enumerate().fold((0, -1.0), |(bi, bm), (i, z)| {
                if z.norm() > bm { (i, z.norm()) } else { (bi, bm) }
            });
            assert!(col[i].im == 0.0 && col[i].re > 0.0);
        }
        let g = svd(&m).unwrap();
        assert_eq!(f.u, g.u);
        assert_eq!(f.vh, g.vh);
    }

    #[test]
    fn svd_rejects_empty_and_nonfinite() {
        assert!(svd(&CMat::zeros(0, 3)).is_err());
        let mut m = CMat::identity(2, 2);
        m[(0, 1)] = c(f64::NAN, 0.0);
        assert!(matches!(svd(&m), Err(Error::NumericFailure(_))));
    }

    #[test]
    fn pinv_diagonal() {
        let mut m = CMat::zeros(2, 2);
        m[(0, 0)] = c(2.0, 0.0);
        m[(1, 1)] = c(4.0, 0.0);
        let p = pinv(&m, DEFAULT_RTOL).unwrap();
        assert!((p[(0, 0)] - c(0.5, 0.0)).norm() < 1e-15);
        assert!((p[(1, 1)] - c(0.25, 0.0)).norm() < 1e-15);
        assert!(p[(0, 1)].norm() < 1e-15);
    }

    #[test]
    fn pinv_zero_matrix() {
        let p = pinv(&CMat::zeros(2, 3), DEFAULT_RTOL).unwrap();
        assert_eq!(p.shape(), (3, 2));
        assert!(p.iter().all(|z| *z == c(0.0, 0.0)));
    }

    #[test]
    fn pinv_rank_one_penrose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_cmat(&mut rng, 3, 1);
        let v = random_cmat(&mut rng, 3, 1);
        let m = &u * v.adjoint();
        let p = pinv(&m, DEFAULT_RTOL).unwrap();
        assert!(max_abs(&(&m * &p * &m - &m)) < 1e-9);
    }

    #[test]
    fn pinv_rejects_bad_rtol() {
        assert!(pinv(&CMat::identity(2, 2), 0.0).is_err());
        assert!(pinv(&CMat::identity(2, 2), 1.0).is_err());
    }

    #[test]
    fn range_basis_identity_and_rank_one() {
        let b = range_basis(&CMat::identity(3, 3), DEFAULT_RTOL).unwrap();
        assert_eq!(b.ncols(), 3);
        assert!(max_abs(&(b.adjoint() * &b - CMat::identity(3, 3))) < 1e-12);

        let u = CMat::from_column_slice(3, 1, &[c(1.0, 1.0), c(0.0, 2.0), c(-1.0, 0.5)]);
        let v = CMat::from_column_slice(2, 1, &[c(0.3, -0.2), c(1.0, 0.0)]);
        let b = range_basis(&(&u * v.adjoint()), DEFAULT_RTOL).unwrap();
        assert_eq!(b.ncols(), 1);
        let cos = (b.adjoint() * &u)[(0, 0)].norm() / u.norm();
        assert!((cos - 1.0).abs() < 1e-12);
    }

    /// Modified Gram-Schmidt, kept independent of the SVD path.
    fn gram_schmidt(m: &CMat) -> CMat {
        let mut q = m.clone();
        for k in 0..q.ncols() {
            for j in 0..k {
                let qj = q.column(j).into_owned();
                let proj = qj.dotc(&q.column(k));
                let new = q.column(k) - qj * proj;
                q.set_column(k, &new);
            }
            let n = q.column(k).norm();
            let new = q.column(k) / c(n, 0.0);
            q.set_column(k, &new);
        }
        q
    }

    #[test]
    fn range_basis_projector_matches_qr_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let m = random_cmat(&mut rng, 5, 3);
        let b = range_basis(&m, DEFAULT_RTOL).unwrap();
        assert!(max_abs(&(b.adjoint() * &b - CMat::identity(3, 3))) < 1e-10);
        let q = gram_schmidt(&m);
        let diff = &b * b.adjoint() - &q * q.adjoint();
        assert!(max_abs(&diff) < 1e-8);
    }

    #[test]
    fn vandermonde_cases() {
        let v = vandermonde(&[c(1.0, 0.0)], 3);
        assert!(v.iter().all(|z| *z == c(1.0, 0.0)));

        let v = vandermonde(&[c(2.0, 0.0), c(0.0, 1.0)], 3);
        let expect = [[c(1.0, 0.0), c(2.0, 0.0), c(4.0, 0.0)], [c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0)]];
        for j in 0..2 {
            for k in 0..3 {
                assert_eq!(v[(j, k)], expect[j][k]);
            }
        }

        let t = C64::from_polar(0.9, 0.5);
        let v = vandermonde(&[t], 5);
        for k in 0..5 {
            let oracle = t.powu(k as u32);
            assert!((v[(0, k)] - oracle).norm() < 1e-14);
        }
    }

    #[test]
    fn vandermonde_deriv_cases() {
        let d = vandermonde_deriv(&[c(2.0, 0.0)], 3, 0);
        assert_eq!(d[(0, 0)], c(0.0, 0.0));
        assert_eq!(d[(0, 1)], c(1.0, 0.0));
        assert_eq!(d[(0, 2)], c(4.0, 0.0));

        let d = vandermonde_deriv(&[c(0.3, 0.1), c(-0.2, 0.5)], 1, 1);
        assert!(d.iter().all(|z| *z == c(0.0, 0.0)));
    }

    #[test]
    fn vandermonde_deriv_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let theta: Vec<C64> = (0..3)
            .map(|_| C64::from_polar(rng.random_range(0.5..1.1), rng.random_range(-3.0..3.0)))
            .collect();
        let tau = 6;
        let h = 1e-6;
        for j in 0..theta.len() {
            let d = vandermonde_deriv(&theta, tau, j);
            // holomorphic: perturbing the real part gives the derivative,
            // perturbing the imaginary part gives i times the derivative
            for (dir, factor) in [(c(h, 0.0), c(1.0, 0.0)), (c(0.0, h), c(0.0, 1.0))] {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[j] += dir;
                tm[j] -= dir;
                let fd = (vandermonde(&tp, tau) - vandermonde(&tm, tau)) / c(2.0 * h, 0.0);
                let expect = &d * factor;
                let err = max_abs(&(fd - &expect));
                assert!(err <= 1e-6 * max_abs(&expect).max(1.0), "j={j} err={err}");
            }
        }
    }

    #[test]
    fn eig_of_rotation() {
        let phi = std::f64::consts::FRAC_PI_4;
        let m = CMat::from_row_slice(
            2,
            2,
            &[c(phi.cos(), 0.0), c(-phi.sin(), 0.0), c(phi.sin(), 0.0), c(phi.cos(), 0.0)],
        );
        let (vals, vecs) = eig(&m).unwrap();
        for (k, lam) in vals.iter().enumerate() {
            assert!((lam.norm() - 1.0).abs() < 1e-12);
            assert!((lam.arg().abs() - phi).abs() < 1e-12);
            let r = &m * vecs.column(k) - vecs.column(k) * *lam;
            assert!(r.norm() < 1e-12);
        }
    }
}
