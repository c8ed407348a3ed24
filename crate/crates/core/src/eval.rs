//! Reconstruction error, PCA baseline, MDS, nearest-neighbour accuracy and
//! dominant-mode summaries.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::dataset::Dataset;
use crate::dmd::{self, Episode};
use crate::error::{Error, Result};
use crate::kernel::{self, DmsBasis};
use crate::numerics::{self, CMat, CVec, C64};
use crate::par;

/// `‖X − X̂‖_F / ‖X − X̄‖_F` with `X̄` the per-feature temporal mean.
pub fn nrmse(x: &DMatrix<f64>, xhat: &DMatrix<f64>) -> Result<f64> {
    if x.shape() != xhat.shape() {
        return Err(Error::DimensionMismatch(format!(
            "reconstruction is {:?}, episode is {:?}",
            xhat.shape(),
            x.shape()
        )));
    }
    let centered = x - row_means(x);
    let den = centered.norm();
    if den == 0.0 {
        return Err(Error::UndefinedNormalization("episode has zero temporal variance".into()));
    }
    Ok((x - xhat).norm() / den)
}

fn row_means(x: &DMatrix<f64>) -> DMatrix<f64> {
    let m = x.column_mean();
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, _| m[i])
}

/// Rank-`k` reconstruction of the mean-centred episode plus the mean.
pub fn pca_baseline(ep: &Episode, k: usize) -> Result<(DMatrix<f64>, f64)> {
    let x = ep.snapshots();
    let kmax = x.nrows().min(x.ncols());
    if k > kmax {
        return Err(Error::Config(format!("k = {k} exceeds min(p, tau) = {kmax}")));
    }
    let mean = row_means(x);
    let centered = x - &mean;
    let f = numerics::svd(&numerics::to_complex(&centered))?;
    let mut recon = mean;
    for j in 0..k.min(f.s.len()) {
        let term = f.u.column(j) * f.vh.row(j) * C64::new(f.s[j], 0.0);
        recon += term.map(|z| z.re);
    }
    let e = nrmse(x, &recon)?;
    Ok((recon, e))
}

/// Symmetric matrix of projection distances between fitted bases.
pub fn distance_matrix(bases: &[DmsBasis]) -> Result<DMatrix<f64>> {
    let n = bases.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let vals = par::map_slice(&pairs, |&(a, b)| kernel::proj_distance(&bases[a], &bases[b]));
    let mut d = DMatrix::zeros(n, n);
    for (&(a, b), v) in pairs.iter().zip(vals) {
        let v = v?;
        d[(a, b)] = v;
        d[(b, a)] = v;
    }
    Ok(d)
}

#[derive(Debug, Clone)]
pub struct MdsEmbedding {
    /// `n x dims`, column means zero.
    pub coords: DMatrix<f64>,
    /// The eigenvalues used, in decreasing order.
    pub eigenvalues: Vec<f64>,
    /// Axes filled with zeros for lack of positive eigenvalues.
    pub padded_axes: usize,
}

/// Classical multidimensional scaling of a distance matrix.
pub fn mds_embed(d: &DMatrix<f64>, dims: usize) -> Result<MdsEmbedding> {
    let n = d.nrows();
    if d.ncols() != n {
        return Err(Error::DimensionMismatch("distance matrix must be square".into()));
    }
    if n == 0 || dims == 0 {
        return Err(Error::Config("need at least one point and one dimension".into()));
    }
    let scale = d.amax().max(1.0);
    for a in 0..n {
        for b in 0..n {
            if !d[(a, b)].is_finite() || (d[(a, b)] - d[(b, a)]).abs() > 1e-12 * scale {
                return Err(Error::Config("distance matrix must be finite and symmetric".into()));
            }
        }
    }
    let d2 = d.map(|v| v * v);
    let rm = d2.row_mean();
    let cm = d2.column_mean();
    let all = d2.mean();
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (d2[(i, j)] - cm[i] - rm[j] + all));
    let b = (&b + b.transpose()) * 0.5;
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));

    let tol = 1e-12 * eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let mut coords = DMatrix::zeros(n, dims);
    let mut eigenvalues = Vec::with_capacity(dims);
    let mut padded_axes = 0;
    for k in 0..dims {
        let Some(&j) = order.get(k).filter(|&&j| eig.eigenvalues[j] > tol) else {
            padded_axes += 1;
            eigenvalues.push(0.0);
            continue;
        };
        let lam = eig.eigenvalues[j];
        let mut col: DVector<f64> = eig.eigenvectors.column(j) * lam.sqrt();
        let m = col.mean();
        col.add_scalar_mut(-m);
        let cutoff = 1e-12 * col.amax();
        if col.iter().find(|v| v.abs() > cutoff).is_some_and(|&v| v < 0.0) {
            col.neg_mut();
        }
        coords.set_column(k, &col);
        eigenvalues.push(lam);
    }
    Ok(MdsEmbedding { coords, eigenvalues, padded_axes })
}

/// Leave-one-out 1-NN accuracy; ties go to the lower index.
pub fn loo_1nn_accuracy(d: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
    let n = labels.len();
    if d.nrows() != n || d.ncols() != n {
        return Err(Error::DimensionMismatch(format!("{n} labels for a {}x{} distance matrix", d.nrows(), d.ncols())));
    }
    if n < 2 {
        return Err(Error::Config("leave-one-out needs at least two points".into()));
    }
    let hits = (0..n)
        .filter(|&a| {
            let nn = (0..n)
                .filter(|&b| b != a)
                .min_by(|&x, &y| d[(a, x)].total_cmp(&d[(a, y)]).then(x.cmp(&y)))
                .expect("n >= 2");
            labels[nn] == labels[a]
        })
        .count();
    Ok(hits as f64 / n as f64)
}

/// Column with the largest norm, rotated so its largest-magnitude entry is real-positive.
pub fn dominant_mode(modes: &CMat) -> Result<CVec> {
    if modes.ncols() == 0 || modes.nrows() == 0 {
        return Err(Error::DimensionMismatch("no modes".into()));
    }
    let j = (0..modes.ncols())
        .max_by(|&a, &b| modes.column(a).norm().total_cmp(&modes.column(b).norm()).then(b.cmp(&a)))
        .expect("nonempty");
    let col = modes.column(j).into_owned();
    Ok(phase_align(col))
}

pub fn phase_align(mut v: CVec) -> CVec {
    let (k, mag) = v.iter().enumerate().fold((0, -1.0), |(bk, bm), (k, z)| {
        if z.norm() > bm {
            (k, z.norm())
        } else {
            (bk, bm)
        }
    });
    if mag > 0.0 {
        let ph = v[k].conj() / mag;
        v.iter_mut().for_each(|z| *z *= ph);
        v[k] = C64::new(v[k].re, 0.0);
    }
    v
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// Median of a nonempty list; `NaN` when empty.
pub fn median_of(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        median(xs.to_vec())
    }
}

/// Per class `1..=c`: elementwise median (re and im separately) of the episodes' dominant modes.
pub fn dominant_mode_summary(modes: &[CMat], labels: &[usize], c: usize) -> Result<Vec<CVec>> {
    if modes.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!("{} mode sets for {} labels", modes.len(), labels.len())));
    }
    let dom = modes.iter().map(dominant_mode).collect::<Result<Vec<_>>>()?;
    let p = dom.first().map_or(0, |v| v.len());
    if dom.iter().any(|v| v.len() != p) {
        return Err(Error::DimensionMismatch("episodes disagree on p".into()));
    }
    (1..=c)
        .map(|l| {
            let members: Vec<&CVec> = dom.iter().zip(labels).filter(|(_, &y)| y == l).map(|(v, _)| v).collect();
            if members.is_empty() {
                return Err(Error::Config(format!("class {l} has no episodes")));
            }
            Ok(CVec::from_fn(p, |k, _| {
                C64::new(
                    median(members.iter().map(|v| v[k].re).collect()),
                    median(members.iter().map(|v| v[k].im).collect()),
                )
            }))
        })
        .collect()
}

/// `|⟨a, b⟩| / (‖a‖ ‖b‖)` for a complex summary against a real pattern.
pub fn abs_cosine(a: &CVec, b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("lengths {} and {}", a.len(), b.len())));
    }
    let dot: C64 = a.iter().zip(b).map(|(z, &w)| z.conj() * w).sum();
    let na = a.norm();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(dot.norm() / (na * nb))
}

/// Everything the report step derives from a set of fitted eigenvalues.
#[derive(Debug, Clone)]
pub struct AnalysisReport {
    pub distances: DMatrix<f64>,
    pub mds: MdsEmbedding,
    pub nrmse: Vec<f64>,
    pub nrmse_median: f64,
    /// Per class `1..=c`.
    pub dominant_modes: Vec<CVec>,
    pub loo_accuracy: f64,
}

pub fn analyze(ds: &Dataset, thetas: &[Vec<C64>], rank_rtol: f64, dims: usize) -> Result<AnalysisReport> {
    if thetas.len() != ds.len() {
        return Err(Error::DimensionMismatch(format!("{} theta sets for {} episodes", thetas.len(), ds.len())));
    }
    let eps = ds.episodes();
    let bases = par::try_map_range(eps.len(), |i| kernel::dms_basis(&eps[i], &thetas[i], rank_rtol))?;
    let nrmse = par::try_map_range(eps.len(), |i| {
        let rec = dmd::reconstruct(&eps[i], &thetas[i])?;
        nrmse(eps[i].snapshots(), &rec.values)
    })?;
    let distances = distance_matrix(&bases)?;
    let mds = mds_embed(&distances, dims)?;
    let labels = ds.labels();
    let modes: Vec<CMat> = bases.iter().map(|b| b.modes().clone()).collect();
    let dominant_modes = dominant_mode_summary(&modes, &labels, ds.num_classes())?;
    let loo_accuracy = if ds.len() >= 2 { loo_1nn_accuracy(&distances, &labels)? } else { f64::NAN };
    Ok(AnalysisReport { nrmse_median: median_of(&nrmse), distances, mds, nrmse, dominant_modes, loo_accuracy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_episode(rng: &mut ChaCha8Rng, p: usize, tau: usize) -> Episode {
        Episode::new("e", 1, DMatrix::from_fn(p, tau, |_, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    #[test]
    fn nrmse_anchors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ep = random_episode(&mut rng, 4, 9);
        let x = ep.snapshots();
        assert_eq!(nrmse(x, x).unwrap(), 0.0);
        assert_eq!(nrmse(x, &row_means(x)).unwrap(), 1.0);
        let flat = DMatrix::from_element(3, 5, 2.0);
        assert!(matches!(nrmse(&flat, &flat), Err(Error::UndefinedNormalization(_))));
        assert!(nrmse(x, &DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn nrmse_matches_column_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_episode(&mut rng, 5, 7).snapshots().clone();
        let y = random_episode(&mut rng, 5, 7).snapshots().clone();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..5 {
            let mean: f64 = (0..7).map(|t| x[(i, t)]).sum::<f64>() / 7.0;
            for t in 0..7 {
                num += (x[(i, t)] - y[(i, t)]).powi(2);
                den += (x[(i, t)] - mean).powi(2);
            }
        }
        assert!((nrmse(&x, &y).unwrap() - (num / den).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn pca_anchors_and_eckart_young() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ep = random_episode(&mut rng, 6, 10);
        assert_eq!(pca_baseline(&ep, 0).unwrap().1, 1.0);
        assert!(pca_baseline(&ep, 6).unwrap().1 < 1e-12);
        assert!(pca_baseline(&ep, 7).is_err());
        let x = ep.snapshots();
        let centered = x - row_means(x);
        let mut s: Vec<f64> = centered.singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = s.iter().map(|v| v * v).sum();
        let mut prev = f64::INFINITY;
        for k in 0..=6 {
            let (recon, e) = pca_baseline(&ep, k).unwrap();
            let tail: f64 = s[k..].iter().map(|v| v * v).sum();
            assert!(((x - recon).norm_squared() - tail).abs() < 1e-10);
            assert!((e - (tail / total).sqrt()).abs() < 1e-10);
            assert!(e <= prev + 1e-15);
            prev = e;
        }
    }

    fn pairwise(points: &DMatrix<f64>) -> DMatrix<f64> {
        let n = points.nrows();
        DMatrix::from_fn(n, n, |a, b| (points.row(a) - points.row(b)).norm())
    }

    #[test]
    fn mds_equilateral_triangle() {
        let d = DMatrix::from_fn(3, 3, |a, b| if a == b { 0.0 } else { 1.0 });
        let m = mds_embed(&d, 2).unwrap();
        let got = pairwise(&m.coords);
        assert!((got - &d).amax() < 1e-10);
        for k in 0..2 {
            assert!(m.coords.column(k).sum().abs() < 1e-10);
        }
        assert_eq!(m.padded_axes, 0);
    }

    #[test]
    fn mds_collinear_points() {
        let d = DMatrix::from_fn(5, 5, |a, b| (a as f64 - b as f64).abs());
        let m = mds_embed(&d, 2).unwrap();
        assert!(m.coords.column(1).amax() < 1e-7);
        assert_eq!(m.padded_axes, 1);
        assert!((pairwise(&m.coords) - d).amax() < 1e-8);
        // sign convention: first nonzero coordinate positive
        assert!(m.coords[(0, 0)] > 0.0);
    }

    #[test]
    fn mds_reproduces_euclidean_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let pts = DMatrix::from_fn(8, 2, |_, _| rng.random_range(-3.0..3.0));
            let d = pairwise(&pts);
            let m = mds_embed(&d, 2).unwrap();
            assert!((pairwise(&m.coords) - &d).amax() < 1e-8);
        }
    }

    #[test]
    fn mds_rejects_asymmetric() {
        let mut d = DMatrix::from_fn(3, 3, |a, b| if a == b { 0.0 } else { 1.0 });
        d[(0, 1)] = 2.0;
        assert!(mds_embed(&d, 2).is_err());
    }

    #[test]
    fn one_nn_accuracy() {
        let pts: [f64; 6] = [0.0, 0.1, 0.2, 5.0, 5.1, 5.3];
        let d = DMatrix::from_fn(6, 6, |a, b| (pts[a] - pts[b]).abs());
        assert_eq!(loo_1nn_accuracy(&d, &[1, 1, 1, 2, 2, 2]).unwrap(), 1.0);
        assert_eq!(loo_1nn_accuracy(&d, &[1, 2, 1, 2, 1, 2]).unwrap(), 0.0);
        assert!(loo_1nn_accuracy(&d, &[1, 2]).is_err());
    }

    #[test]
    fn dominant_mode_picks_largest_column_and_aligns_phase() {
        let m = CMat::from_row_slice(2, 2, &[C64::new(0.1, 0.0), C64::new(0.0, -3.0), C64::new(0.0, 0.2), C64::new(1.0, 0.0)]);
        let v = dominant_mode(&m).unwrap();
        assert_eq!(v[0], C64::new(3.0, 0.0));
        assert!((v[1] - C64::new(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn summary_of_identical_episodes_is_the_common_mode() {
        let w = CMat::from_column_slice(3, 1, &[C64::new(0.0, 2.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        let other = CMat::from_column_slice(3, 1, &[C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.5, 0.0)]);
        let s = dominant_mode_summary(&[w.clone(), w.clone(), other.clone()], &[1, 1, 2], 2).unwrap();
        assert_eq!(s[0], phase_align(w.column(0).into_owned()));
        assert_eq!(s[1], other.column(0).into_owned());
    }

    #[test]
    fn summary_is_elementwise_median_for_single_modes() {
        let cols: Vec<CMat> =
            [1.0, 3.0, 2.0].iter().map(|&a| CMat::from_column_slice(2, 1, &[C64::new(2.0 * a, 0.0), C64::new(0.5 * a, a)])).collect();
        let s = dominant_mode_summary(&cols, &[1, 1, 1], 1).unwrap();
        assert_eq!(s[0][0], C64::new(4.0, 0.0));
        assert_eq!(s[0][1], C64::new(1.0, 2.0));
    }

    #[test]
    fn cosine_bounds() {
        let a = CVec::from_vec(vec![C64::new(0.0, 1.0), C64::new(0.0, 1.0)]);
        assert!((abs_cosine(&a, &[1.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(abs_cosine(&a, &[1.0, -1.0]).unwrap().abs() < 1e-15);
        assert_eq!(abs_cosine(&a, &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn medians() {
        assert_eq!(median_of(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median_of(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median_of(&[]).is_nan());
    }
}
