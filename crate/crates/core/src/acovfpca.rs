//! Lag-κ sample autocovariance operators and the eigen-based split of the
//! state space into a nonstationary block and its stationary complement.

use std::sync::Arc;

use log::warn;

use crate::error::{Error, Result};
use crate::fgrid::{eig_self_adjoint, EigenSystem, FnSeries, LinOp};

/// Default `(a1, a2_exp)` for the eigenvalue threshold `a1 · T^{-a2_exp}`.
pub const DEFAULT_THRESHOLD: (f64, f64) = (0.4, 0.2);

/// Lag-κ autocovariance `Ĉκ` together with `D̂κ = Ĉκ*Ĉκ`, `Êκ = ĈκĈκ*` and
/// their eigensystems.
///
/// `Ĉκ` maps `h ↦ T⁻¹ Σ_{t=κ+1}^{T} ⟨z_t, h⟩ z_{t−κ}`.
#[derive(Clone, Debug)]
pub struct AcovSet {
    pub kappa: usize,
    pub centered: bool,
    pub periods: usize,
    pub c: LinOp,
    pub d: LinOp,
    pub e: LinOp,
    pub eig_d: EigenSystem,
    pub eig_e: EigenSystem,
}

/// Cross-covariance `h ↦ T⁻¹ Σ_{t=κ+1}^{T} ⟨x_{t−κ}, h⟩ y_t`.
pub fn cross_cov(x: &FnSeries, y: &FnSeries, kappa: usize) -> Result<LinOp> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "series lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let t = x.len();
    if t <= kappa {
        return Err(Error::InvalidArgument(format!(
            "lag {kappa} needs more than {kappa} periods, got {t}"
        )));
    }
    let m = t - kappa;
    let x_lag = x.matrix().rows(0, m);
    let y_lead = y.matrix().rows(kappa, m);
    let kernel = y_lead.transpose() * x_lag / t as f64;
    LinOp::from_kernel(x.grid().clone(), y.grid().clone(), kernel)
}

/// Builds the lag-κ autocovariance set from the raw or demeaned series.
pub fn autocov(series: &FnSeries, kappa: usize, centered: bool) -> Result<AcovSet> {
    let t = series.len();
    if t <= kappa + 2 {
        return Err(Error::InvalidArgument(format!(
            "lag {kappa} needs more than {} periods, got {t}",
            kappa + 2
        )));
    }
    let z = if centered {
        series.demeaned()
    } else {
        series.clone()
    };
    // Ĉκ is the adjoint of the cross-covariance of z with itself
    let c = cross_cov(&z, &z, kappa)?.adjoint();
    let ca = c.adjoint();
    let d = ca.compose(&c)?;
    let e = c.compose(&ca)?;
    let eig_d = eig_self_adjoint(&d)?;
    let eig_e = eig_self_adjoint(&e)?;
    Ok(AcovSet {
        kappa,
        centered,
        periods: t,
        c,
        d,
        e,
        eig_d,
        eig_e,
    })
}

impl AcovSet {
    /// `λ_j(D̂ˢκ) / Σ_i λ_i(D̂ˢκ)` for the stationary block after `d_n`.
    pub fn scaled_stationary(&self, d_n: usize) -> Vec<f64> {
        let tail: Vec<f64> = self
            .eig_d
            .values()
            .iter()
            .skip(d_n)
            .map(|l| l.max(0.0))
            .collect();
        let total: f64 = tail.iter().sum();
        if total <= 0.0 {
            return vec![0.0; tail.len()];
        }
        tail.iter().map(|l| l / total).collect()
    }

    /// Rows `(j, λ_j, λ̃_j)` for inspection; `λ̃_j` is `NaN` inside the
    /// nonstationary block.
    pub fn eigen_table(&self, d_n: usize) -> Vec<(usize, f64, f64)> {
        let scaled = self.scaled_stationary(d_n);
        self.eig_d
            .values()
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let s = if i < d_n { f64::NAN } else { scaled[i - d_n] };
                (i + 1, l, s)
            })
            .collect()
    }

    /// `Σ_{j=lo}^{hi} λ_j⁻¹ Π_j(D̂κ)`, 1-based inclusive.
    pub fn restricted_inverse(&self, lo: usize, hi: usize) -> Result<LinOp> {
        if lo == 0 || hi < lo || hi > self.eig_d.values().len() {
            return Err(Error::InvalidArgument(format!(
                "invalid eigen index range {lo}..={hi}"
            )));
        }
        let floor = self.eig_d.floor();
        for j in lo..=hi {
            let v = self.eig_d.value(j);
            if !(v > floor) {
                return Err(Error::EigenFloor { index: j, value: v });
            }
        }
        Ok(self.eig_d.spectral_sum(lo, hi, |l| 1.0 / l))
    }
}

/// Result of the eigenvalue threshold rule.
#[derive(Clone, Debug, PartialEq)]
pub struct KSelection {
    pub k: usize,
    pub k_s: usize,
    pub threshold: f64,
}

/// Counts scaled stationary eigenvalues above `a1 · T^{-a2_exp}`.
///
/// A zero count is logged as a warning and returned with `k = d_n`.
pub fn select_k(acov: &AcovSet, d_n: usize, a1: f64, a2_exp: f64, t: usize) -> KSelection {
    let threshold = a1 * (t as f64).powf(-a2_exp);
    let k_s = count_above(&acov.scaled_stationary(d_n), threshold);
    if k_s == 0 {
        warn!(
            "no scaled stationary eigenvalue exceeds {threshold:.4e}; stationary block is empty"
        );
    }
    KSelection {
        k: d_n + k_s,
        k_s,
        threshold,
    }
}

pub(crate) fn count_above(scaled: &[f64], threshold: f64) -> usize {
    scaled.iter().filter(|&&l| l > threshold).count()
}

/// The projections onto the leading `d_n` eigenspaces of `D̂κ` and `Êκ` and
/// their complements.
#[derive(Clone, Debug)]
pub struct FpcaSplit {
    pub d_n: usize,
    pub k: Option<usize>,
    pub p_n: LinOp,
    pub p_s: LinOp,
    pub q_n: LinOp,
    pub q_s: LinOp,
    pub acov: Arc<AcovSet>,
}

pub fn split(acov: Arc<AcovSet>, d_n: usize) -> Result<FpcaSplit> {
    if d_n == 0 {
        return Err(Error::InvalidArgument("d_N must be positive".into()));
    }
    let rank_d = acov.eig_d.numerical_rank();
    let rank_e = acov.eig_e.numerical_rank();
    let rank = rank_d.min(rank_e);
    if d_n > rank {
        return Err(Error::RankExceeded {
            requested: d_n,
            rank,
        });
    }
    let grid = acov.c.domain().clone();
    let id = LinOp::identity(grid);
    let p_n = acov.eig_d.projection(1, d_n);
    let q_n = acov.eig_e.projection(1, d_n);
    let p_s = id.sub(&p_n)?;
    let q_s = id.sub(&q_n)?;
    Ok(FpcaSplit {
        d_n,
        k: None,
        p_n,
        p_s,
        q_n,
        q_s,
        acov,
    })
}

impl FpcaSplit {
    pub fn with_k(mut self, k: usize) -> Self {
        self.k = Some(k);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fgrid::{tensor, Grid, GridFn};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_series(t: usize, n: usize, seed: u64) -> FnSeries {
        let g = Grid::uniform(0.0, 1.0, n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FnSeries::new(g, DMatrix::from_fn(t, n, |_, _| rng.gen_range(-1.0..1.0))).unwrap()
    }

    fn max_diff(a: &LinOp, b: &LinOp) -> f64 {
        (a.kernel() - b.kernel()).abs().max()
    }

    #[test]
    fn lag_zero_single_term() {
        let x = random_series(4, 5, 1);
        let a = cross_cov(&x, &x, 0).unwrap();
        let mut want = LinOp::zero(x.grid().clone(), x.grid().clone());
        for r in x.rows() {
            want = want.add(&tensor(&r, &r)).unwrap();
        }
        assert!(max_diff(&a, &want.scale(0.25)) < 1e-14);
    }

    #[test]
    fn lag_one_two_periods() {
        let x = random_series(2, 5, 2);
        let a = cross_cov(&x, &x, 1).unwrap().adjoint();
        // h ↦ ½⟨x₂, h⟩ x₁
        let want = tensor(&x.row(1), &x.row(0)).scale(0.5);
        assert!(max_diff(&a, &want) < 1e-14);
    }

    #[test]
    fn autocov_matches_double_loop() {
        let x = random_series(6, 4, 3);
        let acov = autocov(&x, 2, false).unwrap();
        let w = x.grid().weights();
        for i in 0..4 {
            for j in 0..4 {
                // kernel entry of h ↦ T⁻¹ Σ ⟨x_t, h⟩ x_{t−2}
                let mut s = 0.0;
                for t in 2..6 {
                    s += x.matrix()[(t - 2, i)] * x.matrix()[(t, j)];
                }
                assert_abs_diff_eq!(acov.c.kernel()[(i, j)], s / 6.0, epsilon = 1e-14);
            }
        }
        // brute-force action on a test function
        let h = GridFn::from_fn(x.grid().clone(), |u| u * u - 0.3);
        let got = acov.c.apply(&h).unwrap();
        for i in 0..4 {
            let mut s = 0.0;
            for t in 2..6 {
                let ip: f64 = (0..4).map(|k| x.matrix()[(t, k)] * h.values()[k] * w[k]).sum();
                s += ip * x.matrix()[(t - 2, i)];
            }
            assert_abs_diff_eq!(got.values()[i], s / 6.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn too_short_series() {
        let x = random_series(3, 4, 4);
        assert!(autocov(&x, 1, false).is_err());
    }

    #[test]
    fn d_and_e_share_spectrum() {
        let x = random_series(20, 9, 5);
        let a = autocov(&x, 1, false).unwrap();
        let r = a.eig_d.numerical_rank();
        for j in 1..=r {
            assert_abs_diff_eq!(a.eig_d.value(j), a.eig_e.value(j), epsilon = 1e-8);
        }
        assert!(a.d.asymmetry() < 1e-8 && a.e.asymmetry() < 1e-8);
        // v_j(E) ∝ C v_j(D)
        for j in 1..=3 {
            let u = a.c.apply(a.eig_d.function(j)).unwrap();
            let u = u.scale(1.0 / a.eig_d.value(j).sqrt());
            let ve = a.eig_e.function(j);
            let ip = u.inner(ve).unwrap();
            assert_abs_diff_eq!(ip.abs(), 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn centered_equals_demeaned() {
        let x = random_series(15, 7, 6);
        let a = autocov(&x, 1, true).unwrap();
        let b = autocov(&x.demeaned(), 1, false).unwrap();
        assert!(max_diff(&a.c, &b.c) < 1e-10);
    }

    #[test]
    fn projection_algebra() {
        let x = random_series(30, 11, 7);
        let a = Arc::new(autocov(&x, 1, false).unwrap());
        let s = split(a, 2).unwrap();
        let id = LinOp::identity(x.grid().clone());
        assert!(max_diff(&s.p_n.add(&s.p_s).unwrap(), &id) < 1e-10);
        assert!(max_diff(&s.p_n.compose(&s.p_n).unwrap(), &s.p_n) < 1e-8);
        assert!(s.p_n.compose(&s.p_s).unwrap().hs_norm() < 1e-8);
        assert_abs_diff_eq!(s.p_n.trace().unwrap(), 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(s.q_n.trace().unwrap(), 2.0, epsilon = 1e-8);
        assert!(s.p_n.asymmetry() < 1e-8);
    }

    #[test]
    fn split_rejects_excess_rank() {
        let x = random_series(4, 9, 8);
        let a = Arc::new(autocov(&x, 1, false).unwrap());
        // Ĉ₁ has rank at most 3
        assert!(matches!(
            split(a, 4),
            Err(Error::RankExceeded { .. })
        ));
    }

    #[test]
    fn full_rank_split_annihilates_span() {
        let x = random_series(4, 9, 9);
        let a = Arc::new(autocov(&x, 0, false).unwrap());
        let r = a.eig_d.numerical_rank();
        assert_eq!(r, 4);
        let s = split(a, r).unwrap();
        for row in x.rows() {
            assert!(s.p_s.apply(&row).unwrap().norm() < 1e-8);
        }
    }

    #[test]
    fn threshold_rule_arithmetic() {
        let threshold = 0.4 * 100f64.powf(-0.2);
        // 100^{-0.2} = 10^{-0.4}
        assert_abs_diff_eq!(threshold, 0.4 * 10f64.powf(-0.4), epsilon = 1e-15);
        assert_abs_diff_eq!(threshold, 0.159_243, epsilon = 1e-6);
        assert_eq!(count_above(&[0.5, 0.3, 0.15, 0.05], threshold), 2);
    }

    #[test]
    fn select_k_counts_and_warns() {
        let x = random_series(40, 9, 10);
        let a = autocov(&x, 0, false).unwrap();
        let sel = select_k(&a, 1, 0.4, 0.2, 40);
        assert!(sel.k >= 1);
        assert_eq!(sel.k, 1 + sel.k_s);
        let none = select_k(&a, 1, 10.0, 0.2, 40);
        assert_eq!(none.k_s, 0);
        assert_eq!(none.k, 1);
    }

    #[test]
    fn restricted_inverse_rank_one() {
        let g = Grid::uniform(0.0, 1.0, 41).unwrap();
        let v = GridFn::from_fn(g.clone(), |u| (2.0f64).sqrt() * (std::f64::consts::PI * u).sin());
        let v = v.scale(1.0 / v.norm());
        let x = FnSeries::from_fns(&[v.scale(2f64.sqrt()), v.scale(2f64.sqrt()), v.scale(2f64.sqrt())]).unwrap();
        let a = autocov(&x, 0, false).unwrap();
        // Ĉ₀ = 2 v⊗v, D = 4 v⊗v
        let inv = a.restricted_inverse(1, 1).unwrap();
        assert!(max_diff(&inv, &tensor(&v, &v).scale(0.25)) < 1e-10);
        assert!(matches!(
            a.restricted_inverse(2, 3),
            Err(Error::EigenFloor { index: 2, .. })
        ));
    }

    #[test]
    fn restricted_inverse_projection_identity() {
        let x = random_series(25, 10, 11);
        let a = autocov(&x, 1, false).unwrap();
        let inv = a.restricted_inverse(1, 5).unwrap();
        let p = inv.compose(&a.d).unwrap();
        assert!(max_diff(&p, &a.eig_d.projection(1, 5)) < 1e-8);
    }
}
