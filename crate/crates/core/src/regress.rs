//! Two-step slope estimation for functional regressions with nonstationary
//! regressors, plus the plug-in inference built on it.

use std::sync::Arc;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::acovfpca::{autocov, cross_cov, select_k, split, FpcaSplit, KSelection, DEFAULT_THRESHOLD};
use crate::densities::{density_moments, inv_clr};
use crate::error::{Error, Result};
use crate::fgrid::{check_same, FnSeries, Grid, GridFn, LinOp};
use crate::vrtest::{sequential_dn, VRConfig, VRReport};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitConfig {
    pub kappa: usize,
    pub d_n: usize,
    pub a1: f64,
    pub a2_exp: f64,
    pub centered: bool,
}

impl FitConfig {
    pub fn new(kappa: usize, d_n: usize) -> Self {
        FitConfig {
            kappa,
            d_n,
            a1: DEFAULT_THRESHOLD.0,
            a2_exp: DEFAULT_THRESHOLD.1,
            centered: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_n == 0 {
            return Err(Error::InvalidArgument("d_N must be at least 1".into()));
        }
        if !(self.a1 > 0.0) {
            return Err(Error::InvalidArgument(format!("a1 must be positive, got {}", self.a1)));
        }
        if !(self.a2_exp > 0.0 && self.a2_exp < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "a2_exp must lie in (0, 0.5), got {}",
                self.a2_exp
            )));
        }
        Ok(())
    }
}

/// A fitted slope operator together with everything inference needs.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub config: FitConfig,
    pub periods: usize,
    pub selection: KSelection,
    pub f_n: LinOp,
    pub f_s: LinOp,
    pub f_total: LinOp,
    /// `ȳ − f̂(x̄)` in centered mode, zero otherwise.
    pub intercept: GridFn,
    pub split: FpcaSplit,
    pub residuals: FnSeries,
    pub c_u: LinOp,
    pub x_mean: GridFn,
    pub y_mean: GridFn,
    r_s: LinOp,
    c0_s: LinOp,
}

/// Estimates `f` in `y_t = μ + f(x_t) + u_t` from the lag-κ autocovariance
/// of `x`.
pub fn fit(x: &FnSeries, y: &FnSeries, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "x has {} periods, y has {}",
            x.len(),
            y.len()
        )));
    }
    let t = x.len();
    let x_mean = x.mean();
    let y_mean = y.mean();
    let (xc, yc) = if cfg.centered {
        (x.demeaned(), y.demeaned())
    } else {
        (x.clone(), y.clone())
    };

    let mut acov = autocov(&xc, cfg.kappa, false)?;
    acov.centered = cfg.centered;
    let selection = select_k(&acov, cfg.d_n, cfg.a1, cfg.a2_exp, t);
    if selection.k_s == 0 {
        return Err(Error::EmptyStationaryBlock {
            threshold: selection.threshold,
        });
    }
    let k = selection.k;
    if t <= cfg.kappa + k + 2 {
        return Err(Error::InvalidArgument(format!(
            "{t} periods are too few for lag {} with K = {k}",
            cfg.kappa
        )));
    }
    let acov = Arc::new(acov);
    let r_n = acov.restricted_inverse(1, cfg.d_n)?;
    let r_s = acov.restricted_inverse(cfg.d_n + 1, k)?;
    let sp = split(acov.clone(), cfg.d_n)?.with_k(k);

    let f_n = cross_cov(&xc, &yc, cfg.kappa)?
        .compose(&acov.c)?
        .compose(&r_n)?;
    let y_rest = yc.sub(&xc.map_op(&f_n)?)?;
    let f_s = cross_cov(&xc, &y_rest, cfg.kappa)?
        .compose(&acov.c)?
        .compose(&r_s)?;
    let f_total = f_n.add(&f_s)?;

    let residuals = yc.sub(&xc.map_op(&f_total)?)?;
    let intercept = if cfg.centered {
        y_mean.sub(&f_total.apply(&x_mean)?)?
    } else {
        GridFn::zeros(y.grid().clone())
    };
    let c_u = cross_cov(&residuals, &residuals, 0)?;
    let xs = xc.map_op(&sp.p_s)?;
    let c0_s = cross_cov(&xs, &xs, 0)?;

    Ok(FitResult {
        config: *cfg,
        periods: t,
        selection,
        f_n,
        f_s,
        f_total,
        intercept,
        split: sp,
        residuals,
        c_u,
        x_mean,
        y_mean,
        r_s,
        c0_s,
    })
}

impl FitResult {
    pub fn x_grid(&self) -> &Arc<Grid> {
        self.f_total.domain()
    }

    pub fn y_grid(&self) -> &Arc<Grid> {
        self.f_total.codomain()
    }

    /// Plug-in scale `θ̂(ζ)` of the stationary-block estimation error.
    pub fn theta_hat(&self, zeta: &GridFn) -> Result<f64> {
        let g = self.split.acov.c.apply(&self.r_s.apply(zeta)?)?;
        Ok(self.c0_s.quadratic(&g, &g)?.max(0.0))
    }

    /// `f̂(ζ)`.
    pub fn partial_effect(&self, zeta: &GridFn) -> Result<GridFn> {
        self.f_total.apply(zeta)
    }

    /// Fitted values `μ̂ + f̂(x_t)`.
    pub fn predict(&self, x: &FnSeries) -> Result<FnSeries> {
        let fx = x.map_op(&self.f_total)?;
        let n = self.intercept.values().len();
        let mut m = fx.matrix().clone();
        for mut row in m.row_iter_mut() {
            for j in 0..n {
                row[j] += self.intercept.values()[j];
            }
        }
        FnSeries::new(self.y_grid().clone(), m)
    }

    /// Interval for `⟨f(ζ), φ⟩` at confidence `level`.
    pub fn ci_scalar(&self, zeta: &GridFn, phi: &GridFn, level: f64) -> Result<InferenceReport> {
        self.report(zeta, phi, Target::Functional, level)
    }

    /// Intervals for the local averages of `f(ζ)` between consecutive
    /// breakpoints. Breakpoints are snapped to the nearest grid node.
    pub fn local_band(&self, zeta: &GridFn, breakpoints: &[f64], level: f64) -> Result<Vec<InferenceReport>> {
        let grid = self.y_grid().clone();
        if breakpoints.len() < 2 {
            return Err(Error::InvalidArgument("need at least two breakpoints".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("breakpoints must be strictly increasing".into()));
        }
        let tol = 1e-9 * grid.len();
        if breakpoints[0] < grid.a1() - tol || *breakpoints.last().unwrap() > grid.a2() + tol {
            return Err(Error::InvalidArgument(format!(
                "breakpoints must lie in [{}, {}]",
                grid.a1(),
                grid.a2()
            )));
        }
        let idx: Vec<usize> = breakpoints.iter().map(|&b| grid.nearest_index(b)).collect();
        if idx.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "breakpoints collapse onto the same grid node".into(),
            ));
        }
        idx.windows(2)
            .map(|w| {
                let phi = interval_average(&grid, w[0], w[1]);
                let (lo, hi) = (grid.nodes()[w[0]], grid.nodes()[w[1]]);
                self.report(zeta, &phi, Target::Interval(lo, hi), level)
            })
            .collect()
    }

    /// One interval per grid cell: the finest band `local_band` can resolve.
    pub fn pointwise_band(&self, zeta: &GridFn, level: f64) -> Result<Vec<InferenceReport>> {
        let nodes = self.y_grid().nodes().to_vec();
        self.local_band(zeta, &nodes, level)
    }

    fn report(&self, zeta: &GridFn, phi: &GridFn, target: Target, level: f64) -> Result<InferenceReport> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::InvalidArgument(format!("level must lie in (0, 1), got {level}")));
        }
        check_same(phi.grid(), self.y_grid(), "test function")?;
        let point = self.partial_effect(zeta)?.inner(phi)?;
        let theta_hat = self.theta_hat(zeta)?;
        let cu = self.c_u.quadratic(phi, phi)?.max(0.0);
        let variance = theta_hat * cu / self.periods as f64;
        let half = normal_quantile(0.5 + level / 2.0) * variance.sqrt();
        Ok(InferenceReport {
            zeta: zeta.clone(),
            phi: phi.clone(),
            target,
            point,
            theta_hat,
            variance,
            ci_low: point - half,
            ci_high: point + half,
            level,
        })
    }

    /// Densities `inv_clr(y_ref + q f̂(ζ))` for each scale `q`.
    pub fn shock_response(&self, y_ref: &GridFn, zeta: &GridFn, qs: &[f64]) -> Result<Vec<ShockPoint>> {
        shock_response(&self.f_total, y_ref, zeta, qs)
    }
}

/// Densities `inv_clr(y_ref + q A ζ)` for each scale `q`. The reference must
/// be a CLR function, so it has to integrate to zero.
pub fn shock_response(op: &LinOp, y_ref: &GridFn, zeta: &GridFn, qs: &[f64]) -> Result<Vec<ShockPoint>> {
    check_same(y_ref.grid(), op.codomain(), "reference")?;
    let mass = y_ref.integral();
    if mass.abs() > 1e-6 * (1.0 + y_ref.norm()) {
        return Err(Error::InvalidArgument(format!(
            "reference must integrate to zero, integral is {mass:e}"
        )));
    }
    let effect = op.apply(zeta)?;
    qs.iter()
        .map(|&q| {
            let density = inv_clr(&y_ref.add(&effect.scale(q))?)?;
            let (mean, variance) = density_moments(&density);
            Ok(ShockPoint {
                q,
                density,
                mean,
                variance,
            })
        })
        .collect()
}

/// Variance-ratio check for a leftover stochastic trend in
/// `y_t − f̂ᴺ(x_t)`. The check passes when the estimated dimension is zero.
pub fn diagnostic_trend_check(fit: &FitResult, x: &FnSeries, y: &FnSeries, cfg: &VRConfig) -> Result<TrendCheck> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument("x and y lengths differ".into()));
    }
    let resid = y.sub(&x.map_op(&fit.f_n)?)?;
    let mut vr = cfg.clone();
    vr.centered = fit.config.centered;
    let report = sequential_dn(&resid, &vr)?;
    Ok(TrendCheck {
        passes: report.d_hat == 0,
        report,
    })
}

#[derive(Clone, Debug)]
pub struct TrendCheck {
    pub passes: bool,
    pub report: VRReport,
}

fn interval_average(grid: &Arc<Grid>, i0: usize, i1: usize) -> GridFn {
    let w = grid.weights();
    let h = grid.step();
    let len = h * (i1 - i0) as f64;
    let mut v = vec![0.0; grid.n()];
    for (k, slot) in v.iter_mut().enumerate().take(i1 + 1).skip(i0) {
        let local = if k == i0 || k == i1 { h / 2.0 } else { h };
        *slot = local / (w[k] * len);
    }
    GridFn::new(grid.clone(), v).expect("values match grid")
}

/// What the interval in an [`InferenceReport`] refers to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Functional,
    Interval(f64, f64),
}

#[derive(Clone, Debug)]
pub struct InferenceReport {
    pub zeta: GridFn,
    pub phi: GridFn,
    pub target: Target,
    pub point: f64,
    pub theta_hat: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
}

impl InferenceReport {
    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

#[derive(Clone, Debug)]
pub struct ShockPoint {
    pub q: f64,
    pub density: GridFn,
    pub mean: f64,
    pub variance: f64,
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(p)
}
