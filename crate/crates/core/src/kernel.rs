//! Dynamic-mode subspaces and the projection kernel between them.
//!
//! The subspace of an episode `X` at parameters `Θ` is `range(X V_Θ†)`. Two
//! subspaces are compared with `k(a, b) = ‖B_aᴴ B_b‖²_F`, the sum of squared
//! cosines of their principal angles, where `B` is an orthonormal basis.

use crate::dmd::{Episode, Varpro};
use crate::error::{Error, Result};
use crate::numerics::{self, c, CMat, SvdFactors, C64};

/// Orthonormal basis of one episode's dynamic-mode subspace, with the factors
/// needed to differentiate the kernel without recomputing any SVD.
#[derive(Debug, Clone)]
pub struct DmsBasis {
    /// `p x r'` with orthonormal columns, `r'` the numerical rank of `W`.
    pub basis: CMat,
    /// Thin SVD of `W = X V_Θ†`.
    pub svd: SvdFactors,
    pub theta: Vec<C64>,
    pub episode_id: String,
    x: CMat,
    varpro: Varpro,
    rtol: f64,
}

impl DmsBasis {
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// Number of parameters `r` (may exceed [`rank`](Self::rank)).
    pub fn r(&self) -> usize {
        self.theta.len()
    }

    pub fn p(&self) -> usize {
        self.basis.nrows()
    }

    /// `B Bᴴ`, the orthogonal projector onto the subspace.
    pub fn projector(&self) -> CMat {
        &self.basis * self.basis.adjoint()
    }

    pub fn modes(&self) -> &CMat {
        &self.varpro.modes
    }

    pub fn varpro(&self) -> &Varpro {
        &self.varpro
    }

    /// `(W†)ᴴ = U S⁻¹ Vh`, defined when `W` has full column rank.
    fn modes_pinv_adjoint(&self) -> Result<CMat> {
        let r = self.r();
        if self.rank() < r {
            return Err(Error::RankDeficient { requested: r, achievable: self.rank() });
        }
        let smax = self.svd.s[0];
        let mut out = CMat::zeros(self.p(), r);
        for k in 0..r {
            let s = self.svd.s[k];
            if s <= self.rtol * smax {
                return Err(Error::RankDeficient { requested: r, achievable: k });
            }
            out += self.svd.u.column(k) * self.svd.vh.row(k) * c(1.0 / s, 0.0);
        }
        Ok(out)
    }
}

/// Builds the subspace basis of `ep` at `theta`.
pub fn dms_basis(ep: &Episode, theta: &[C64], rtol: f64) -> Result<DmsBasis> {
    let varpro = Varpro::new(ep, theta)?;
    let svd = numerics::svd(&varpro.modes)?;
    let rank = svd.rank(rtol);
    if rank == 0 {
        return Err(Error::DegenerateSubspace(ep.id().to_string()));
    }
    Ok(DmsBasis {
        basis: svd.u.columns(0, rank).into_owned(),
        svd,
        theta: theta.to_vec(),
        episode_id: ep.id().to_string(),
        x: ep.complex().clone(),
        varpro,
        rtol,
    })
}

fn check_ambient(a: &DmsBasis, b: &DmsBasis) -> Result<()> {
    if a.p() != b.p() {
        return Err(Error::DimensionMismatch(format!(
            "subspaces live in dimensions {} and {}",
            a.p(),
            b.p()
        )));
    }
    Ok(())
}

/// Projection kernel `‖B_aᴴ B_b‖²_F`.
///
/// The squared entries are summed in sorted order, so `k(a, b)` and `k(b, a)`
/// agree bitwise.
pub fn k_dms(a: &DmsBasis, b: &DmsBasis) -> Result<f64> {
    check_ambient(a, b)?;
    let mut sq: Vec<f64> = a
        .basis
        .column_iter()
        .flat_map(|ca| b.basis.column_iter().map(move |cb| ca.dotc(&cb).norm_sqr()))
        .collect();
    sq.sort_by(f64::total_cmp);
    Ok(sq.iter().sum())
}

/// Projection metric `(Σ sin² α_d)^(1/2) = sqrt(r' − k(a, b))`, with
/// `r' = min(rank a, rank b)` when the ranks differ.
pub fn proj_distance(a: &DmsBasis, b: &DmsBasis) -> Result<f64> {
    let k = k_dms(a, b)?;
    let r = a.rank().min(b.rank()) as f64;
    Ok((r - k).max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Wirtinger derivative of `k(a, b)` with respect to the parameters of the
/// chosen argument.
///
/// With `C₁ = W_a† B_b B_bᴴ (I − B_a B_aᴴ) X_a`,
///
/// ```text
/// (∂k/∂V)ᵀ = V† (V†)ᴴ C₁ᴴ (I − V V†)ᴴ
///          + (I − V† V)ᴴ C₁ᴴ (V†)ᴴ V†
///          − V† C₁ V†
/// ```
///
/// and `∂k/∂θ_j = sum(∂k/∂V ∘ ∂V/∂θ_j)`.
pub fn k_dms_grad(a: &DmsBasis, b: &DmsBasis, side: Side) -> Result<Vec<C64>> {
    match side {
        Side::Left => k_dms_grad_left(a, b),
        Side::Right => k_dms_grad_left(b, a),
    }
}

fn k_dms_grad_left(a: &DmsBasis, b: &DmsBasis) -> Result<Vec<C64>> {
    check_ambient(a, b)?;
    let wph = a.modes_pinv_adjoint()?;
    // (I − P_a) P_b (W_a†)ᴴ
    let pb = &b.basis * (b.basis.adjoint() * &wph);
    let q = &pb - &a.basis * (a.basis.adjoint() * &pb);
    let c1h = a.x.adjoint() * q;
    let c1 = c1h.adjoint();

    let v = &a.varpro.v;
    let vp = &a.varpro.v_pinv;
    let vph = vp.adjoint();
    let r = v.nrows();

    let left_res = CMat::identity(r, r) - v * vp; // I − V V†
    let term1 = vp * (&vph * &c1h) * left_res.adjoint();

    let y = &c1h * (&vph * vp);
    let term2 = &y - vp * (v * &y); // (I − V†V) is Hermitian

    let term3 = vp * (&c1 * vp);

    let t = term1 + term2 - term3;
    Ok(numerics::contract_with_vandermonde_deriv(&t, &a.theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DEFAULT_RTOL;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_episode(rng: &mut ChaCha8Rng, id: &str, p: usize, tau: usize) -> Episode {
        Episode::new(id, 1, DMatrix::from_fn(p, tau, |_, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    fn random_theta(rng: &mut ChaCha8Rng, r: usize) -> Vec<C64> {
        (0..r)
            .map(|_| C64::from_polar(rng.random_range(0.6..1.0), rng.random_range(-3.0..3.0)))
            .collect()
    }

    /// Episode whose modes are exactly the given real vectors.
    fn basis_from_vectors(id: &str, vecs: &[Vec<f64>]) -> DmsBasis {
        let p = vecs[0].len();
        let r = vecs.len();
        // interpolating case r = tau: V is square and W = X V⁻¹ spans the columns of X
        let theta: Vec<C64> = (0..r).map(|j| c(0.3 + 0.2 * j as f64, 0.0)).collect();
        let x = DMatrix::from_fn(p, r, |i, t| vecs[t][i]);
        let ep = Episode::new(id, 1, x).unwrap_or_else(|_| {
            // tau must be at least 2; pad a single vector with a scaled copy
            let x = DMatrix::from_fn(p, 2, |i, t| vecs[0][i] * (1.0 + t as f64));
            Episode::new(id, 1, x).unwrap()
        });
        let theta = if ep.tau() == r { theta } else { vec![c(2.0, 0.0)] };
        dms_basis(&ep, &theta, DEFAULT_RTOL).unwrap()
    }

    fn e(p: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; p];
        v[i] = 1.0;
        v
    }

    #[test]
    fn kernel_reference_values() {
        let a = basis_from_vectors("a", &[e(3, 0), e(3, 1)]);
        assert!((k_dms(&a, &a).unwrap() - 2.0).abs() < 1e-12);
        let b = basis_from_vectors("b", &[e(3, 0), e(3, 2)]);
        assert!((k_dms(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let x = basis_from_vectors("x", &[e(2, 0)]);
        let y = basis_from_vectors("y", &[e(2, 1)]);
        assert!(k_dms(&x, &y).unwrap().abs() < 1e-12);
        assert!((proj_distance(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        assert!(proj_distance(&a, &a).unwrap() < 1e-6);
    }

    #[test]
    fn ambient_dimension_mismatch() {
        let a = basis_from_vectors("a", &[e(3, 0)]);
        let b = basis_from_vectors("b", &[e(4, 0)]);
        assert!(matches!(k_dms(&a, &b), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn zero_episode_is_degenerate() {
        let ep = Episode::new("z", 1, DMatrix::zeros(3, 5)).unwrap();
        assert!(matches!(
            dms_basis(&ep, &[c(0.5, 0.1)], DEFAULT_RTOL),
            Err(Error::DegenerateSubspace(_))
        ));
    }

    #[test]
    fn rank_one_basis_is_parallel_to_generating_mode() {
        let t = C64::from_polar(0.9, 0.4);
        let w = [1.0, -2.0, 0.5];
        let x = CMat::from_fn(3, 10, |i, k| t.powu(k as u32) * w[i]);
        let ep = Episode::new("m", 1, x.map(|z| z.re)).unwrap();
        // real w: the r = 1 basis stays in span{w}
        let b = dms_basis(&ep, &[t], DEFAULT_RTOL).unwrap();
        assert_eq!(b.rank(), 1);
        let wv = CMat::from_column_slice(3, 1, &w.map(|v| c(v, 0.0)));
        let cos = (b.basis.adjoint() * &wv)[(0, 0)].norm() / wv.norm();
        assert!((cos - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_mode_basis_spans_generating_modes() {
        let ld = C64::from_polar(0.9, 0.5);
        let lc = C64::from_polar(0.95, 0.2);
        let wd = [1.0, 0.0, 2.0, -1.0];
        let wc = [0.0, 1.0, 1.0, 1.0];
        // complex data carried as real via conjugate pairs: use r = 4
        let ep = Episode::new(
            "m",
            1,
            DMatrix::from_fn(4, 20, |i, k| (ld.powu(k as u32) * wd[i] + lc.powu(k as u32) * wc[i]).re),
        )
        .unwrap();
        let b = dms_basis(&ep, &[ld, ld.conj(), lc, lc.conj()], DEFAULT_RTOL).unwrap();
        assert_eq!(b.rank(), 2);
        // projector onto span{wd, wc} by Gram-Schmidt
        let n1: f64 = wd.iter().map(|v| v * v).sum::<f64>().sqrt();
        let q1: Vec<f64> = wd.iter().map(|v| v / n1).collect();
        let d: f64 = q1.iter().zip(&wc).map(|(a, b)| a * b).sum();
        let mut q2: Vec<f64> = wc.iter().zip(&q1).map(|(b, a)| b - d * a).collect();
        let n2: f64 = q2.iter().map(|v| v * v).sum::<f64>().sqrt();
        q2.iter_mut().for_each(|v| *v /= n2);
        let proj = CMat::from_fn(4, 4, |i, j| c(q1[i] * q1[j] + q2[i] * q2[j], 0.0));
        let diff = b.projector() - proj;
        assert!(diff.iter().all(|z| z.norm() < 1e-10));
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ep = random_episode(&mut rng, "a", 6, 12);
        let other = random_episode(&mut rng, "b", 6, 12);
        let theta = random_theta(&mut rng, 3);
        let rev: Vec<C64> = theta.iter().rev().copied().collect();
        let a1 = dms_basis(&ep, &theta, DEFAULT_RTOL).unwrap();
        let a2 = dms_basis(&ep, &rev, DEFAULT_RTOL).unwrap();
        let diff = a1.projector() - a2.projector();
        assert!(diff.iter().all(|z| z.norm() < 1e-10));
        let b = dms_basis(&other, &random_theta(&mut rng, 3), DEFAULT_RTOL).unwrap();
        assert!((k_dms(&a1, &b).unwrap() - k_dms(&a2, &b).unwrap()).abs() < 1e-10);
    }

    /// Central differences of `k(a(θ), b)` recombined into Wirtinger form.
    fn fd_grad(ep: &Episode, theta: &[C64], other: &DmsBasis, h: f64) -> Vec<C64> {
        let k = |t: &[C64]| k_dms(&dms_basis(ep, t, DEFAULT_RTOL).unwrap(), other).unwrap();
        (0..theta.len())
            .map(|j| {
                let mut part = [0.0; 2];
                for (s, dir) in [c(h, 0.0), c(0.0, h)].into_iter().enumerate() {
                    let mut tp = theta.to_vec();
                    let mut tm = theta.to_vec();
                    tp[j] += dir;
                    tm[j] -= dir;
                    part[s] = (k(&tp) - k(&tm)) / (2.0 * h);
                }
                c(0.5 * part[0], -0.5 * part[1])
            })
            .collect()
    }

    fn rel_err(a: &[C64], b: &[C64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
        num / den.max(1e-12)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let ea = random_episode(&mut rng, "a", 6, 12);
            let eb = random_episode(&mut rng, "b", 6, 12);
            let ta = random_theta(&mut rng, 2);
            let tb = random_theta(&mut rng, 2);
            let a = dms_basis(&ea, &ta, DEFAULT_RTOL).unwrap();
            let b = dms_basis(&eb, &tb, DEFAULT_RTOL).unwrap();
            let g = k_dms_grad(&a, &b, Side::Left).unwrap();
            let fd = fd_grad(&ea, &ta, &b, 1e-6);
            assert!(rel_err(&g, &fd) < 1e-5, "{g:?} vs {fd:?}");
            let g = k_dms_grad(&a, &b, Side::Right).unwrap();
            let fd = fd_grad(&eb, &tb, &a, 1e-6);
            assert!(rel_err(&g, &fd) < 1e-5);
        }
    }

    #[test]
    fn full_ambient_subspace_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        // p = r: W is square and nonsingular, so the subspace is all of C^p
        let ea = random_episode(&mut rng, "a", 2, 8);
        let eb = random_episode(&mut rng, "b", 2, 8);
        let a = dms_basis(&ea, &random_theta(&mut rng, 2), DEFAULT_RTOL).unwrap();
        let b = dms_basis(&eb, &random_theta(&mut rng, 1), DEFAULT_RTOL).unwrap();
        let g = k_dms_grad(&a, &b, Side::Left).unwrap();
        assert!(g.iter().all(|z| z.norm() < 1e-10), "{g:?}");
    }

    #[test]
    fn self_similarity_gradient_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let ep = random_episode(&mut rng, "a", 6, 12);
        let theta = random_theta(&mut rng, 2);
        let a = dms_basis(&ep, &theta, DEFAULT_RTOL).unwrap();
        let total: Vec<C64> = k_dms_grad(&a, &a, Side::Left)
            .unwrap()
            .iter()
            .zip(k_dms_grad(&a, &a, Side::Right).unwrap())
            .map(|(x, y)| x + y)
            .collect();
        assert!(total.iter().all(|z| z.norm() < 1e-10));
    }

    #[test]
    fn rank_deficient_gradient_errors() {
        let ep = Episode::new("r", 1, DMatrix::from_fn(3, 6, |i, t| (i + 1) as f64 * 0.9f64.powi(t as i32))).unwrap();
        let a = dms_basis(&ep, &[c(0.9, 0.0), c(-0.5, 0.3)], DEFAULT_RTOL).unwrap();
        assert_eq!(a.rank(), 1);
        assert!(matches!(k_dms_grad(&a, &a, Side::Left), Err(Error::RankDeficient { .. })));
    }
}
