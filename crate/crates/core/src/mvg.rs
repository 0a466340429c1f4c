//! Streaming multivariate-Gaussian estimation of real/fake patch features
//! and Mahalanobis-based pseudo forgery-location maps.
//!
//! One Gaussian is fitted to patch features of real samples (all grid
//! positions) and one to patch features of fake samples inside the General
//! Forgery Region, a fixed center-square prior. Between periodic refreshes
//! the fitted moments are frozen; per-patch Mahalanobis distances to the two
//! distributions then vote each patch real or fake.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative ridge added to the covariance diagonal before inversion:
/// `eps = RIDGE_REL * trace(cov) / dim`.
pub const RIDGE_REL: f64 = 1e-4;

/// Online mean/co-moment accumulator (Welford update, one observation at a
/// time). Equals the two-pass batch estimate up to floating-point drift.
#[derive(Debug, Clone)]
pub struct Welford<T> {
    dim: usize,
    count: usize,
    mean: Vec<T>,
    comoment: Vec<T>,
    delta: Vec<T>,
}

impl<T: Scalar> Welford<T> {
    pub fn new(dim: usize) -> Self {
        Welford {
            dim,
            count: 0,
            mean: vec![T::zero(); dim],
            comoment: vec![T::zero(); dim * dim],
            delta: vec![T::zero(); dim],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, row: &[T]) {
        debug_assert_eq!(row.len(), self.dim);
        self.count += 1;
        let n = T::from_f(self.count as f64);
        for i in 0..self.dim {
            self.delta[i] = row[i] - self.mean[i];
            self.mean[i] += self.delta[i] / n;
        }
        for i in 0..self.dim {
            let di = self.delta[i];
            let row_c = &mut self.comoment[i * self.dim..(i + 1) * self.dim];
            for j in 0..self.dim {
                // second factor uses the updated mean; the pair is exact
                row_c[j] += di * (row[j] - self.mean[j]);
            }
        }
    }

    pub fn reset(&mut self) {
        self.count = 0;
        self.mean.iter_mut().for_each(|v| *v = T::zero());
        self.comoment.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    /// Unbiased sample covariance (divisor `count - 1`), symmetrized.
    pub fn covariance(&self) -> Option<Vec<T>> {
        if self.count < 2 {
            return None;
        }
        let denom = T::from_f((self.count - 1) as f64);
        let d = self.dim;
        let mut cov = vec![T::zero(); d * d];
        let half = T::from_f(0.5);
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] =
                    half * (self.comoment[i * d + j] + self.comoment[j * d + i]) / denom;
            }
        }
        Some(cov)
    }
}

/// Frozen Gaussian moments for one class plus a regularized inverse.
#[derive(Debug, Clone)]
pub struct GaussianStats<T> {
    pub dim: usize,
    pub mean: Vec<T>,
    pub cov: Vec<T>,
    pub inv: Vec<T>,
    pub count: usize,
}

impl<T: Scalar> GaussianStats<T> {
    /// Build stats from explicit moments. `ridge_rel` scales the diagonal
    /// jitter relative to `trace(cov)/dim`; pass 0 for none.
    pub fn from_moments(mean: Vec<T>, cov: Vec<T>, count: usize, ridge_rel: f64) -> Result<Self> {
        let dim = mean.len();
        if cov.len() != dim * dim {
            return Err(Error::Dim {
                op: "gaussian_stats",
                lhs: vec![dim],
                rhs: vec![cov.len()],
            });
        }
        let mut trace = T::zero();
        for i in 0..dim {
            trace += cov[i * dim + i];
        }
        let eps = T::from_f(ridge_rel) * trace / T::from_f(dim as f64);
        let mut ridged = cov.clone();
        for i in 0..dim {
            ridged[i * dim + i] += eps;
        }
        let inv = spd_inverse(&ridged, dim)?;
        Ok(GaussianStats {
            dim,
            mean,
            cov,
            inv,
            count,
        })
    }

    /// Mahalanobis distance `sqrt((f-mean)^T inv (f-mean))`.
    pub fn mahalanobis(&self, f: &[T]) -> Result<T> {
        if f.len() != self.dim {
            return Err(Error::Dim {
                op: "mahalanobis",
                lhs: vec![f.len()],
                rhs: vec![self.dim],
            });
        }
        let d = self.dim;
        let mut diff = vec![T::zero(); d];
        for i in 0..d {
            diff[i] = f[i] - self.mean[i];
        }
        let mut q = T::zero();
        for i in 0..d {
            let mut s = T::zero();
            let row = &self.inv[i * d..(i + 1) * d];
            for j in 0..d {
                s += row[j] * diff[j];
            }
            q += diff[i] * s;
        }
        Ok(q.max(T::zero()).sqrt())
    }
}

/// Named General Forgery Region variants over a `P x P` patch grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GfrVariant {
    /// Centered square covering half the grid side.
    Standard,
    /// Bottom-half rows, centered columns.
    Low,
    /// Centered square covering three quarters of the side.
    Large,
    /// Centered square covering one quarter of the side.
    Small,
}

/// Boolean patch-grid prior marking the assumed forgery region.
#[derive(Debug, Clone)]
pub struct GfrMask {
    pub p: usize,
    pub variant: GfrVariant,
    grid: Vec<bool>,
}

impl GfrMask {
    pub fn new(p: usize, variant: GfrVariant) -> Self {
        let mut grid = vec![false; p * p];
        let centered = |len: usize| {
            let start = (p - len) / 2;
            (start, start + len)
        };
        let (rows, cols) = match variant {
            GfrVariant::Standard => (centered(p / 2), centered(p / 2)),
            GfrVariant::Large => (centered(3 * p / 4), centered(3 * p / 4)),
            GfrVariant::Small => (centered(p / 4), centered(p / 4)),
            GfrVariant::Low => ((p / 2, p), centered(p / 2)),
        };
        for r in rows.0..rows.1 {
            for c in cols.0..cols.1 {
                grid[r * p + c] = true;
            }
        }
        GfrMask { p, variant, grid }
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.grid[r * self.p + c]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.grid
    }

    pub fn true_count(&self) -> usize {
        self.grid.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapMode {
    Binary,
    Soft,
}

/// `P x P` pseudo forgery-location map.
#[derive(Debug, Clone)]
pub struct LocationMap<T> {
    pub p: usize,
    pub mode: MapMode,
    pub values: Vec<T>,
}

impl<T: Scalar> LocationMap<T> {
    pub fn zeros(p: usize, mode: MapMode) -> Self {
        LocationMap {
            p,
            mode,
            values: vec![T::zero(); p * p],
        }
    }

    pub fn from_gfr(gfr: &GfrMask) -> Self {
        LocationMap {
            p: gfr.p,
            mode: MapMode::Binary,
            values: gfr
                .as_slice()
                .iter()
                .map(|&b| if b { T::one() } else { T::zero() })
                .collect(),
        }
    }

    pub fn positive_fraction(&self) -> f64 {
        let pos = self.values.iter().filter(|v| **v > T::zero()).count();
        pos as f64 / self.values.len() as f64
    }
}

/// Outcome of a refresh attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefreshOutcome {
    Refreshed,
    /// A buffer held fewer than `dim + 1` rows; previous stats were kept.
    Stale,
}

/// The paired real/fake streaming estimator.
#[derive(Debug, Clone)]
pub struct MvgLocator<T> {
    pub dim: usize,
    pub p: usize,
    ridge_rel: f64,
    real_acc: Welford<T>,
    fake_acc: Welford<T>,
    stats: Option<(GaussianStats<T>, GaussianStats<T>)>,
}

impl<T: Scalar> MvgLocator<T> {
    pub fn new(dim: usize, p: usize) -> Self {
        MvgLocator {
            dim,
            p,
            ridge_rel: RIDGE_REL,
            real_acc: Welford::new(dim),
            fake_acc: Welford::new(dim),
            stats: None,
        }
    }

    pub fn with_ridge(mut self, ridge_rel: f64) -> Self {
        self.ridge_rel = ridge_rel;
        self
    }

    pub fn pending_real_rows(&self) -> usize {
        self.real_acc.count()
    }

    pub fn pending_fake_rows(&self) -> usize {
        self.fake_acc.count()
    }

    /// Feed one sample's detached layer-K features (`P^2 x dim`, row-major).
    /// Real samples contribute every position; fake samples contribute only
    /// positions inside the prior region.
    pub fn accumulate(&mut self, features: &[T], is_fake: bool, gfr: &GfrMask) {
        debug_assert_eq!(features.len(), self.p * self.p * self.dim);
        debug_assert_eq!(gfr.p, self.p);
        for idx in 0..self.p * self.p {
            let row = &features[idx * self.dim..(idx + 1) * self.dim];
            if is_fake {
                if gfr.as_slice()[idx] {
                    self.fake_acc.push(row);
                }
            } else {
                self.real_acc.push(row);
            }
        }
    }

    /// Feed a whole batch; `features[i]` pairs with `is_fake[i]`.
    pub fn accumulate_batch(&mut self, features: &[&[T]], is_fake: &[bool], gfr: &GfrMask) {
        for (f, &fake) in features.iter().zip(is_fake) {
            self.accumulate(f, fake, gfr);
        }
    }

    /// Fit both Gaussians from the pending observations and clear them.
    /// Requires at least `dim + 1` rows per class; otherwise keeps whatever
    /// stats were last fitted and reports [`RefreshOutcome::Stale`].
    pub fn refresh(&mut self) -> Result<RefreshOutcome> {
        if self.real_acc.count() < self.dim + 1 || self.fake_acc.count() < self.dim + 1 {
            return Ok(RefreshOutcome::Stale);
        }
        let real = GaussianStats::from_moments(
            self.real_acc.mean().to_vec(),
            self.real_acc.covariance().expect("count checked"),
            self.real_acc.count(),
            self.ridge_rel,
        )?;
        let fake = GaussianStats::from_moments(
            self.fake_acc.mean().to_vec(),
            self.fake_acc.covariance().expect("count checked"),
            self.fake_acc.count(),
            self.ridge_rel,
        )?;
        self.stats = Some((real, fake));
        self.real_acc.reset();
        self.fake_acc.reset();
        Ok(RefreshOutcome::Refreshed)
    }

    /// Fitted (real, fake) stats, if any refresh has succeeded.
    pub fn stats(&self) -> Option<&(GaussianStats<T>, GaussianStats<T>)> {
        self.stats.as_ref()
    }

    pub fn set_stats(&mut self, real: GaussianStats<T>, fake: GaussianStats<T>) {
        self.stats = Some((real, fake));
    }

    /// Binary map: for fakes, patch (i,j) is 1 iff it sits closer to the
    /// fake distribution than the real one; for reals the map is all-zero
    /// by definition.
    pub fn pseudo_location_map(&self, features: &[T], is_fake: bool) -> Result<LocationMap<T>> {
        if !is_fake {
            return Ok(LocationMap::zeros(self.p, MapMode::Binary));
        }
        let (real, fake) = self.stats.as_ref().ok_or(Error::Stale)?;
        let mut map = LocationMap::zeros(self.p, MapMode::Binary);
        for idx in 0..self.p * self.p {
            let row = &features[idx * self.dim..(idx + 1) * self.dim];
            let dr = real.mahalanobis(row)?;
            let df = fake.mahalanobis(row)?;
            if dr - df > T::zero() {
                map.values[idx] = T::one();
            }
        }
        Ok(map)
    }

    /// Soft map: `max(0, d_real - d_fake)` per patch, for inspection.
    pub fn soft_location_map(&self, features: &[T]) -> Result<LocationMap<T>> {
        let (real, fake) = self.stats.as_ref().ok_or(Error::Stale)?;
        let mut map = LocationMap::zeros(self.p, MapMode::Soft);
        for idx in 0..self.p * self.p {
            let row = &features[idx * self.dim..(idx + 1) * self.dim];
            let dr = real.mahalanobis(row)?;
            let df = fake.mahalanobis(row)?;
            map.values[idx] = (dr - df).max(T::zero());
        }
        Ok(map)
    }
}

/// Cholesky factor (lower) of a symmetric positive-definite matrix.
fn cholesky<T: Scalar>(a: &[T], n: usize) -> Result<Vec<T>> {
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= T::zero() {
                    return Err(Error::Numeric(
                        "matrix not positive definite in Cholesky factorization".into(),
                    ));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Inverse of a symmetric positive-definite matrix via its Cholesky factor.
pub fn spd_inverse<T: Scalar>(a: &[T], n: usize) -> Result<Vec<T>> {
    let l = cholesky(a, n)?;
    let mut inv = vec![T::zero(); n * n];
    let mut y = vec![T::zero(); n];
    let mut x = vec![T::zero(); n];
    for col in 0..n {
        // forward solve L y = e_col
        for i in 0..n {
            let mut s = if i == col { T::one() } else { T::zero() };
            for k in 0..i {
                s -= l[i * n + k] * y[k];
            }
            y[i] = s / l[i * n + i];
        }
        // back solve L^T x = y
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[k * n + i] * x[k];
            }
            x[i] = s / l[i * n + i];
        }
        for i in 0..n {
            inv[i * n + col] = x[i];
        }
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// One-pass naive batch oracle: two loops over stored rows.
    fn batch_moments(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let n = rows.len();
        let d = rows[0].len();
        let mut mean = vec![0.0; d];
        for r in rows {
            for i in 0..d {
                mean[i] += r[i];
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut cov = vec![0.0; d * d];
        for r in rows {
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += (r[i] - mean[i]) * (r[j] - mean[j]);
                }
            }
        }
        for c in &mut cov {
            *c /= (n - 1) as f64;
        }
        (mean, cov)
    }

    #[test]
    fn hand_computed_two_point_covariance() {
        let mut w: Welford<f64> = Welford::new(2);
        w.push(&[0.0, 0.0]);
        w.push(&[2.0, 2.0]);
        assert_eq!(w.mean(), &[1.0, 1.0]);
        let cov = w.covariance().unwrap();
        assert_eq!(cov, vec![2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn identical_rows_give_zero_cov_and_ridge_inverse() {
        let mut w: Welford<f64> = Welford::new(2);
        for _ in 0..5 {
            w.push(&[3.0, -1.0]);
        }
        let cov = w.covariance().unwrap();
        assert!(cov.iter().all(|&v| v.abs() < 1e-12));
        // zero trace means the relative ridge is zero too; use an absolute
        // floor for the degenerate all-identical case
        let eps = 1e-6;
        let mut ridged = cov.clone();
        ridged[0] += eps;
        ridged[3] += eps;
        let inv = spd_inverse(&ridged, 2).unwrap();
        assert!((inv[0] - 1.0 / eps).abs() / (1.0 / eps) < 1e-9);
        assert!((inv[3] - 1.0 / eps).abs() / (1.0 / eps) < 1e-9);
        assert!(inv[1].abs() < 1e-3);
    }

    #[test]
    fn welford_matches_batch_oracle_on_random_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 6;
        let rows: Vec<Vec<f64>> = (0..500)
            .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let mut w: Welford<f64> = Welford::new(d);
        for r in &rows {
            w.push(r);
        }
        let (mean, cov) = batch_moments(&rows);
        for (a, b) in w.mean().iter().zip(&mean) {
            assert!((a - b).abs() <= 1e-10, "mean {a} vs {b}");
        }
        for (a, b) in w.covariance().unwrap().iter().zip(&cov) {
            assert!((a - b).abs() <= 1e-10, "cov {a} vs {b}");
        }
    }

    #[test]
    fn welford_is_interleaving_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let d = 3;
        let rows: Vec<Vec<f64>> = (0..120)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        // push in two different chunkings; same final moments
        let mut w1: Welford<f64> = Welford::new(d);
        for r in &rows {
            w1.push(r);
        }
        let mut w2: Welford<f64> = Welford::new(d);
        for chunk in rows.chunks(7) {
            for r in chunk {
                w2.push(r);
            }
        }
        assert_eq!(w1.mean(), w2.mean());
        assert_eq!(w1.covariance().unwrap(), w2.covariance().unwrap());
    }

    #[test]
    fn mahalanobis_at_mean_is_zero() {
        let stats =
            GaussianStats::from_moments(vec![1.0, 2.0], vec![1.0, 0.0, 0.0, 1.0], 10, 0.0)
                .unwrap();
        assert_eq!(stats.mahalanobis(&[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn mahalanobis_identity_cov_is_euclidean() {
        let stats: GaussianStats<f64> =
            GaussianStats::from_moments(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0], 10, 0.0)
                .unwrap();
        assert!((stats.mahalanobis(&[3.0, 4.0]).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn mahalanobis_diagonal_closed_form() {
        let stats: GaussianStats<f64> =
            GaussianStats::from_moments(vec![1.0, 1.0], vec![4.0, 0.0, 0.0, 1.0], 10, 0.0)
                .unwrap();
        assert!((stats.mahalanobis(&[3.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mahalanobis_shape_mismatch() {
        let stats =
            GaussianStats::from_moments(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0], 10, 0.0)
                .unwrap();
        assert!(matches!(
            stats.mahalanobis(&[1.0, 2.0, 3.0]),
            Err(Error::Dim { .. })
        ));
    }

    #[test]
    fn mahalanobis_affine_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for d in 1..=4usize {
            for _ in 0..20 {
                // well-conditioned covariance: A A^T + I
                let a: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mut cov = vec![0.0; d * d];
                for i in 0..d {
                    for j in 0..d {
                        let mut s = if i == j { 1.0 } else { 0.0 };
                        for k in 0..d {
                            s += a[i * d + k] * a[j * d + k];
                        }
                        cov[i * d + j] = s;
                    }
                }
                let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let f: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();

                // invertible map M = random + 2I
                let mut m = vec![0.0; d * d];
                for i in 0..d {
                    for j in 0..d {
                        m[i * d + j] = rng.random_range(-0.5..0.5) + if i == j { 2.0 } else { 0.0 };
                    }
                }
                let apply = |v: &[f64]| -> Vec<f64> {
                    (0..d)
                        .map(|i| (0..d).map(|j| m[i * d + j] * v[j]).sum())
                        .collect()
                };
                let mut cov2 = vec![0.0; d * d];
                for i in 0..d {
                    for j in 0..d {
                        let mut s = 0.0;
                        for p in 0..d {
                            for q in 0..d {
                                s += m[i * d + p] * cov[p * d + q] * m[j * d + q];
                            }
                        }
                        cov2[i * d + j] = s;
                    }
                }

                let s1 = GaussianStats::from_moments(mean.clone(), cov, 10, 0.0).unwrap();
                let s2 = GaussianStats::from_moments(apply(&mean), cov2, 10, 0.0).unwrap();
                let d1 = s1.mahalanobis(&f).unwrap();
                let d2 = s2.mahalanobis(&apply(&f)).unwrap();
                assert!(
                    (d1 - d2).abs() <= 1e-8 * d1.max(1.0),
                    "d={d}: {d1} vs {d2}"
                );
            }
        }
    }

    #[test]
    fn spd_inverse_satisfies_identity_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let d = 8;
        let a: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let mut s = if i == j { 0.5 } else { 0.0 };
                for k in 0..d {
                    s += a[i * d + k] * a[j * d + k];
                }
                cov[i * d + j] = s;
            }
        }
        let inv = spd_inverse(&cov, d).unwrap();
        let mut max_resid: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += cov[i * d + k] * inv[k * d + j];
                }
                let want = if i == j { 1.0 } else { 0.0 };
                max_resid = max_resid.max((s - want).abs());
            }
        }
        assert!(max_resid <= 1e-6, "residual {max_resid}");
    }

    #[test]
    fn gfr_standard_is_centered_half_square() {
        let gfr = GfrMask::new(8, GfrVariant::Standard);
        assert_eq!(gfr.true_count(), 16);
        for r in 0..8 {
            for c in 0..8 {
                let inside = (2..6).contains(&r) && (2..6).contains(&c);
                assert_eq!(gfr.contains(r, c), inside);
            }
        }
    }

    #[test]
    fn gfr_variants_have_expected_sizes() {
        assert_eq!(GfrMask::new(8, GfrVariant::Large).true_count(), 36);
        assert_eq!(GfrMask::new(8, GfrVariant::Small).true_count(), 4);
        let low = GfrMask::new(8, GfrVariant::Low);
        assert_eq!(low.true_count(), 16);
        assert!(low.contains(7, 3) && !low.contains(0, 3));
    }

    fn locator_with_separated_stats(dim: usize, p: usize) -> MvgLocator<f64> {
        let mut loc = MvgLocator::new(dim, p);
        let real =
            GaussianStats::from_moments(vec![0.0; dim], identity(dim), 100, 0.0).unwrap();
        let fake =
            GaussianStats::from_moments(vec![4.0; dim], identity(dim), 100, 0.0).unwrap();
        loc.set_stats(real, fake);
        loc
    }

    fn identity(d: usize) -> Vec<f64> {
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            m[i * d + i] = 1.0;
        }
        m
    }

    #[test]
    fn real_samples_always_get_zero_maps() {
        let loc = locator_with_separated_stats(2, 2);
        // features deliberately at the fake mean; the label wins
        let features = vec![4.0; 2 * 4];
        let map = loc.pseudo_location_map(&features, false).unwrap();
        assert!(map.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fake_features_at_fake_mean_get_all_one_map() {
        let loc = locator_with_separated_stats(2, 2);
        let features = vec![4.0; 2 * 4];
        let map = loc.pseudo_location_map(&features, true).unwrap();
        assert!(map.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn maps_match_per_patch_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let (dim, p) = (3, 4);
        let loc = locator_with_separated_stats(dim, p);
        let features: Vec<f64> = (0..p * p * dim)
            .map(|_| rng.random_range(-2.0..6.0))
            .collect();
        let binary = loc.pseudo_location_map(&features, true).unwrap();
        let soft = loc.soft_location_map(&features).unwrap();
        let (real, fake) = loc.stats().unwrap();
        for idx in 0..p * p {
            let row = &features[idx * dim..(idx + 1) * dim];
            let dr = real.mahalanobis(row).unwrap();
            let df = fake.mahalanobis(row).unwrap();
            let want_bin = if dr - df > 0.0 { 1.0 } else { 0.0 };
            assert_eq!(binary.values[idx], want_bin);
            let want_soft = (dr - df).max(0.0);
            assert!((soft.values[idx] - want_soft).abs() <= 1e-12);
        }
    }

    #[test]
    fn binary_map_is_zero_threshold_of_soft_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let (dim, p) = (2, 4);
        let loc = locator_with_separated_stats(dim, p);
        let features: Vec<f64> = (0..p * p * dim)
            .map(|_| rng.random_range(-1.0..5.0))
            .collect();
        let binary = loc.pseudo_location_map(&features, true).unwrap();
        let soft = loc.soft_location_map(&features).unwrap();
        for (b, s) in binary.values.iter().zip(&soft.values) {
            assert_eq!(*b > 0.0, *s > 0.0);
        }
    }

    #[test]
    fn soft_map_zero_at_real_mean() {
        let loc = locator_with_separated_stats(2, 2);
        let features = vec![0.0; 2 * 4];
        let soft = loc.soft_location_map(&features).unwrap();
        assert!(soft.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_before_first_refresh() {
        let loc: MvgLocator<f64> = MvgLocator::new(2, 2);
        let features = vec![0.0; 8];
        assert!(matches!(
            loc.pseudo_location_map(&features, true),
            Err(Error::Stale)
        ));
    }

    #[test]
    fn accumulate_counts_rows_per_label() {
        let mut loc: MvgLocator<f64> = MvgLocator::new(2, 8);
        let gfr = GfrMask::new(8, GfrVariant::Standard);
        let features = vec![0.0; 64 * 2];
        loc.accumulate(&features, false, &gfr);
        assert_eq!(loc.pending_real_rows(), 64);
        assert_eq!(loc.pending_fake_rows(), 0);
        loc.accumulate(&features, true, &gfr);
        assert_eq!(loc.pending_fake_rows(), 16);
        // empty batch: no change
        loc.accumulate_batch(&[], &[], &gfr);
        assert_eq!(loc.pending_real_rows(), 64);
        assert_eq!(loc.pending_fake_rows(), 16);
    }

    #[test]
    fn refresh_requires_enough_rows_then_clears() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let mut loc: MvgLocator<f64> = MvgLocator::new(2, 2);
        let gfr = GfrMask::new(2, GfrVariant::Standard);
        assert_eq!(loc.refresh().unwrap(), RefreshOutcome::Stale);
        assert!(loc.stats().is_none());
        for _ in 0..4 {
            let feats: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            loc.accumulate(&feats, false, &gfr);
            let feats: Vec<f64> = (0..8).map(|_| rng.random_range(2.0..4.0)).collect();
            loc.accumulate(&feats, true, &gfr);
        }
        assert_eq!(loc.refresh().unwrap(), RefreshOutcome::Refreshed);
        assert!(loc.stats().is_some());
        assert_eq!(loc.pending_real_rows(), 0);
        assert_eq!(loc.pending_fake_rows(), 0);
    }

    #[test]
    fn refreshed_cov_is_symmetric_and_inverse_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let d = 5;
        let mut loc: MvgLocator<f64> = MvgLocator::new(d, 2);
        let gfr = GfrMask::new(2, GfrVariant::Standard);
        for _ in 0..50 {
            let feats: Vec<f64> = (0..4 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            loc.accumulate(&feats, false, &gfr);
            let feats: Vec<f64> = (0..4 * d).map(|_| rng.random_range(0.0..2.0)).collect();
            loc.accumulate(&feats, true, &gfr);
        }
        loc.refresh().unwrap();
        let (real, _) = loc.stats().unwrap();
        let mut ridged = real.cov.clone();
        let mut trace = 0.0;
        for i in 0..d {
            trace += real.cov[i * d + i];
        }
        let eps = RIDGE_REL * trace / d as f64;
        for i in 0..d {
            for j in 0..d {
                assert!(
                    (real.cov[i * d + j] - real.cov[j * d + i]).abs() <= 1e-10,
                    "asymmetric cov"
                );
            }
            ridged[i * d + i] += eps;
        }
        // || (cov + eps I) inv - I ||_inf <= 1e-6
        let mut max_resid: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += ridged[i * d + k] * real.inv[k * d + j];
                }
                let want = if i == j { 1.0 } else { 0.0 };
                max_resid = max_resid.max((s - want).abs());
            }
        }
        assert!(max_resid <= 1e-6, "residual {max_resid}");
    }
}
