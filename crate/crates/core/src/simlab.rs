//! Monte Carlo harness for cointegrated functional regressions observed with
//! measurement error.
//!
//! Functions are synthesized on the Fourier basis (constant excluded). The
//! first `d_N` coefficients are integrated AR(1) processes, the rest are
//! stationary AR(1) processes with decaying innovation scales, and the
//! response loads on each coordinate through a diagonal slope.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fgrid::{basis_matrix, fourier_basis, FnSeries, Grid, GridFn, LinOp};
use crate::regress::{fit, FitConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Design {
    Exponential,
    Sparse,
}

impl Design {
    fn base(self) -> f64 {
        match self {
            Design::Exponential => 0.8,
            Design::Sparse => 0.1,
        }
    }

    fn code(self) -> u64 {
        match self {
            Design::Exponential => 1,
            Design::Sparse => 2,
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Design::Exponential => "exponential",
            Design::Sparse => "sparse",
        })
    }
}

impl FromStr for Design {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exponential" | "exp" => Ok(Design::Exponential),
            "sparse" => Ok(Design::Sparse),
            other => Err(Error::InvalidArgument(format!("unknown design {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Metric {
    HsError,
    Coverage,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::HsError => "hs_error",
            Metric::Coverage => "coverage",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hs_error" | "hs" => Ok(Metric::HsError),
            "coverage" => Ok(Metric::Coverage),
            other => Err(Error::InvalidArgument(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DgpConfig {
    pub d_n: usize,
    pub m: usize,
    pub big_m: usize,
    pub design: Design,
    pub t: usize,
    pub error_scale_pct: f64,
    pub j_trunc: usize,
    pub calib_reps: usize,
    pub burn_in: usize,
    pub grid_n: usize,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            d_n: 2,
            m: 7,
            big_m: 20,
            design: Design::Exponential,
            t: 200,
            error_scale_pct: 0.0,
            j_trunc: 40,
            calib_reps: 800,
            burn_in: 50,
            grid_n: 161,
            seed: 1,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.d_n == 0 {
            return bad("d_N must be at least 1".into());
        }
        if self.big_m <= self.m {
            return bad(format!("M ({}) must exceed m ({})", self.big_m, self.m));
        }
        if self.j_trunc < self.big_m + 5 || self.j_trunc <= self.d_n + self.m {
            return bad(format!("J_trunc ({}) must be at least M + 5", self.j_trunc));
        }
        if self.grid_n < 4 * self.j_trunc {
            return bad(format!(
                "grid of {} nodes cannot carry {} Fourier functions",
                self.grid_n, self.j_trunc
            ));
        }
        if !(self.error_scale_pct >= 0.0) {
            return bad(format!("error scale must be nonnegative, got {}", self.error_scale_pct));
        }
        if self.error_scale_pct > 100.0 {
            warn!("error scale {}% lies outside [0, 100]", self.error_scale_pct);
        }
        if self.t < 10 {
            return bad(format!("T = {} is too short", self.t));
        }
        Ok(())
    }

    /// Innovation scale of the `j`-th coordinate (1-based); the same rule
    /// sets the regression error scales.
    pub fn sigma_eps(&self, j: usize) -> f64 {
        let knee = self.d_n + self.m;
        let base = self.design.base();
        if j <= knee {
            1.0
        } else if j <= self.big_m {
            base.powi((j - knee) as i32)
        } else {
            let at_m = if self.big_m <= knee {
                1.0
            } else {
                base.powi((self.big_m - knee) as i32)
            };
            at_m / ((j - self.big_m) as f64).powi(2)
        }
    }

    fn slope_scale(&self, j: usize) -> f64 {
        let knee = self.d_n + self.m;
        if j <= knee {
            1.0
        } else {
            0.8f64.powi((j - knee) as i32)
        }
    }
}

/// Per-run random parameters.
#[derive(Clone, Debug)]
pub struct DgpParams {
    pub beta_n: Vec<f64>,
    /// Indexed by `j − d_N − 1`.
    pub beta_s: Vec<f64>,
    pub sigma: Vec<f64>,
    pub gamma: Vec<f64>,
    pub c_x: Vec<f64>,
    pub c_y: Vec<f64>,
}

pub fn draw_params(cfg: &DgpConfig, rng: &mut ChaCha8Rng) -> DgpParams {
    let j = cfg.j_trunc;
    let beta_n = (0..cfg.d_n)
        .map(|_| {
            let s = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            s * rng.gen_range(-0.5..=0.5)
        })
        .collect();
    let beta_s = (cfg.d_n + 1..=j)
        .map(|jj| {
            if jj <= cfg.big_m {
                rng.gen_range(0.5..=0.9)
            } else {
                rng.gen_range(-0.9..=0.9)
            }
        })
        .collect();
    let sigma = (1..=j).map(|jj| cfg.sigma_eps(jj)).collect();
    let gamma = (1..=j)
        .map(|jj| cfg.slope_scale(jj) * rng.gen_range(-1.0..1.0))
        .collect();
    let c_x = (0..10.min(j)).map(|_| rng.sample(StandardNormal)).collect();
    let c_y = (0..10.min(j)).map(|_| rng.sample(StandardNormal)).collect();
    DgpParams {
        beta_n,
        beta_s,
        sigma,
        gamma,
        c_x,
        c_y,
    }
}

/// Coefficient paths `⟨x_t⁰, v_j⟩` as a `T × J` matrix.
fn simulate_coefs(cfg: &DgpConfig, p: &DgpParams, t: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let j = cfg.j_trunc;
    let mut c = DMatrix::zeros(t, j);
    for k in 0..j {
        let s = p.sigma[k];
        if k < cfg.d_n {
            let b = p.beta_n[k];
            let (mut level, mut diff) = (0.0, 0.0);
            for r in 0..t {
                let e: f64 = rng.sample(StandardNormal);
                diff = b * diff + s * e;
                level += diff;
                c[(r, k)] = level;
            }
        } else {
            let b = p.beta_s[k - cfg.d_n];
            let mut z = 0.0;
            for _ in 0..cfg.burn_in {
                let e: f64 = rng.sample(StandardNormal);
                z = b * z + s * e;
            }
            for r in 0..t {
                let e: f64 = rng.sample(StandardNormal);
                z = b * z + s * e;
                c[(r, k)] = z;
            }
        }
    }
    c
}

/// Average over `reps` simulated paths of the sample nuclear norm of the
/// covariance of `(ΔPᴺx_t, Pˢx_t)`.
pub fn calibration_target(cfg: &DgpConfig, p: &DgpParams, reps: usize, rng: &mut ChaCha8Rng) -> f64 {
    let t = cfg.t;
    let tf = t as f64;
    let mut total = 0.0;
    for _ in 0..reps {
        for k in 0..cfg.j_trunc {
            let s = p.sigma[k];
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            if k < cfg.d_n {
                let b = p.beta_n[k];
                let mut diff = 0.0;
                for _ in 0..t {
                    let e: f64 = rng.sample(StandardNormal);
                    diff = b * diff + s * e;
                    sum += diff;
                    sum_sq += diff * diff;
                }
            } else {
                let b = p.beta_s[k - cfg.d_n];
                let mut z = 0.0;
                for _ in 0..cfg.burn_in {
                    let e: f64 = rng.sample(StandardNormal);
                    z = b * z + s * e;
                }
                for _ in 0..t {
                    let e: f64 = rng.sample(StandardNormal);
                    z = b * z + s * e;
                    sum += z;
                    sum_sq += z * z;
                }
            }
            total += sum_sq / tf - (sum / tf).powi(2);
        }
    }
    total / reps as f64
}

/// `(σ_e, σ_{e,y})` putting `pct`% of `target` into the regressor error and
/// the remainder into the response error.
pub fn error_scales(target: f64, pct: f64, d_n: usize) -> (f64, f64) {
    let dims = (d_n + 1) as f64;
    let sx = (pct / 100.0 * target / dims).max(0.0).sqrt();
    let sy = ((100.0 - pct) / 100.0 * target / dims).max(0.0).sqrt();
    (sx, sy)
}

/// Draws the run parameters for `stream` and calibrates the two error scales.
pub fn calibrate_error_scale(cfg: &DgpConfig, stream: u64) -> Result<(f64, f64)> {
    cfg.validate()?;
    if cfg.calib_reps < 1 {
        return Err(Error::InvalidArgument("calibration needs at least one path".into()));
    }
    let mut rng = stream_rng(cfg.seed, stream);
    let p = draw_params(cfg, &mut rng);
    let mut crng = calib_rng(cfg.seed, stream);
    let target = calibration_target(cfg, &p, cfg.calib_reps, &mut crng);
    Ok(error_scales(target, cfg.error_scale_pct, cfg.d_n))
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn calib_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    stream_rng(seed, stream | (1 << 62))
}

/// One simulated sample with its ground truth.
#[derive(Clone, Debug)]
pub struct DgpDraw {
    pub basis: Vec<GridFn>,
    pub params: DgpParams,
    pub x_tilde: FnSeries,
    pub y_tilde: FnSeries,
    pub x_latent: FnSeries,
    pub f_true: LinOp,
    pub f_n_true: LinOp,
    pub p_n_true: LinOp,
    /// `μ_y − f(μ_x)`.
    pub mu: GridFn,
    pub sigma_e: f64,
    pub sigma_ey: f64,
    pub target: f64,
}

/// Generates replication `stream` of the design. Identical `(cfg, stream)`
/// pairs give identical draws.
pub fn draw_dgp(cfg: &DgpConfig, stream: u64) -> Result<DgpDraw> {
    cfg.validate()?;
    let grid = Grid::uniform(0.0, 1.0, cfg.grid_n)?;
    let basis = fourier_basis(&grid, cfg.j_trunc, false)?;
    draw_on_basis(cfg, stream, &grid, &basis)
}

fn draw_on_basis(cfg: &DgpConfig, stream: u64, grid: &Arc<Grid>, basis: &[GridFn]) -> Result<DgpDraw> {
    let mut rng = stream_rng(cfg.seed, stream);
    let p = draw_params(cfg, &mut rng);
    let (target, sigma_e, sigma_ey) = if cfg.calib_reps == 0 {
        (0.0, 0.0, 0.0)
    } else {
        let mut crng = calib_rng(cfg.seed, stream);
        let target = calibration_target(cfg, &p, cfg.calib_reps, &mut crng);
        let (a, b) = error_scales(target, cfg.error_scale_pct, cfg.d_n);
        (target, a, b)
    };
    let mut draw = synthesize(cfg, p, sigma_e, sigma_ey, &mut rng, grid, basis)?;
    draw.target = target;
    Ok(draw)
}

fn synthesize(
    cfg: &DgpConfig,
    p: DgpParams,
    sigma_e: f64,
    sigma_ey: f64,
    rng: &mut ChaCha8Rng,
    grid: &Arc<Grid>,
    basis: &[GridFn],
) -> Result<DgpDraw> {
    let t = cfg.t;
    let j = cfg.j_trunc;
    let c = simulate_coefs(cfg, &p, t, rng);
    let mut cy = DMatrix::zeros(t, j);
    for r in 0..t {
        for k in 0..j {
            let u: f64 = rng.sample(StandardNormal);
            cy[(r, k)] = p.gamma[k] * c[(r, k)] + p.sigma[k] * u;
        }
    }
    let mut cx = c;
    for r in 0..t {
        for k in 0..p.c_x.len() {
            cx[(r, k)] += p.c_x[k];
            cy[(r, k)] += p.c_y[k];
        }
    }
    let cx_lat = cx.clone();
    let ne = cfg.d_n + 1;
    for r in 0..t {
        for k in 0..ne {
            let e: f64 = rng.sample(StandardNormal);
            cx[(r, k)] += sigma_e * e;
        }
        for k in 0..ne {
            let e: f64 = rng.sample(StandardNormal);
            cy[(r, k)] += sigma_ey * e;
        }
    }
    let cx_obs = cx;

    let b = basis_matrix(basis);
    let bt = b.transpose();
    let x_tilde = FnSeries::new(grid.clone(), &cx_obs * &bt)?;
    let y_tilde = FnSeries::new(grid.clone(), &cy * &bt)?;
    let x_latent = FnSeries::new(grid.clone(), &cx_lat * &bt)?;

    let kernel_of = |weights: &dyn Fn(usize) -> f64| {
        let d = DVector::from_fn(j, |k, _| weights(k));
        &b * DMatrix::from_diagonal(&d) * &bt
    };
    let f_true = LinOp::from_kernel(grid.clone(), grid.clone(), kernel_of(&|k| p.gamma[k]))?;
    let f_n_true = LinOp::from_kernel(
        grid.clone(),
        grid.clone(),
        kernel_of(&|k| if k < cfg.d_n { p.gamma[k] } else { 0.0 }),
    )?;
    let p_n_true = LinOp::from_kernel(
        grid.clone(),
        grid.clone(),
        kernel_of(&|k| if k < cfg.d_n { 1.0 } else { 0.0 }),
    )?;
    let mut mu_c = vec![0.0; grid.n()];
    for k in 0..p.c_x.len() {
        let coef = p.c_y[k] - p.gamma[k] * p.c_x[k];
        for (i, v) in mu_c.iter_mut().enumerate() {
            *v += coef * b[(i, k)];
        }
    }
    let mu = GridFn::new(grid.clone(), mu_c)?;
    Ok(DgpDraw {
        basis: basis.to_vec(),
        params: p,
        x_tilde,
        y_tilde,
        x_latent,
        f_true,
        f_n_true,
        p_n_true,
        mu,
        sigma_e,
        sigma_ey,
        target: 0.0,
    })
}

/// `ζ = Σ_j c_j v_j` with `c_j = 1` for `j ≤ 9` and `(j − 8)⁻²` after.
pub fn coverage_zeta(basis: &[GridFn]) -> GridFn {
    let grid = basis[0].grid().clone();
    basis.iter().enumerate().fold(GridFn::zeros(grid), |acc, (k, v)| {
        let j = k + 1;
        let c = if j <= 9 { 1.0 } else { ((j - 8) as f64).powi(-2) };
        acc.add(&v.scale(c)).expect("shared grid")
    })
}

/// Estimator settings shared by every replication.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorSettings {
    pub a1: f64,
    pub a2_exp: f64,
    pub level: f64,
    pub centered: bool,
    pub rate_diagnostics: bool,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        EstimatorSettings {
            a1: 0.4,
            a2_exp: 0.2,
            level: 0.95,
            centered: true,
            rate_diagnostics: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KappaOutcome {
    pub kappa: usize,
    pub k: usize,
    pub hs_error: f64,
    pub covered: bool,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `‖P̂ᴺ − Pᴺ‖_op`, when rate diagnostics are on.
    pub p_n_error: Option<f64>,
    /// `HS(f̂ᴺ − fᴺ)`, when rate diagnostics are on.
    pub f_n_error: Option<f64>,
}

/// Fits every lag in `kappas` to one draw. Errors are kept per lag.
pub fn evaluate_draw(draw: &DgpDraw, d_n: usize, kappas: &[usize], est: &EstimatorSettings) -> Vec<std::result::Result<KappaOutcome, String>> {
    let zeta = coverage_zeta(&draw.basis);
    let phi = &draw.basis[0];
    let truth = draw.params.gamma[0];
    kappas
        .iter()
        .map(|&kappa| {
            let cfg = FitConfig {
                kappa,
                d_n,
                a1: est.a1,
                a2_exp: est.a2_exp,
                centered: est.centered,
            };
            let r = fit(&draw.x_tilde, &draw.y_tilde, &cfg).map_err(|e| e.to_string())?;
            let hs_error = r.f_total.sub(&draw.f_true).map_err(|e| e.to_string())?.hs_norm();
            let rep = r.ci_scalar(&zeta, phi, est.level).map_err(|e| e.to_string())?;
            let (p_n_error, f_n_error) = if est.rate_diagnostics {
                (
                    Some(r.split.p_n.sub(&draw.p_n_true).map_err(|e| e.to_string())?.op_norm()),
                    Some(r.f_n.sub(&draw.f_n_true).map_err(|e| e.to_string())?.hs_norm()),
                )
            } else {
                (None, None)
            };
            Ok(KappaOutcome {
                kappa,
                k: r.selection.k,
                hs_error,
                covered: rep.covers(truth),
                point: rep.point,
                ci_low: rep.ci_low,
                ci_high: rep.ci_high,
                p_n_error,
                f_n_error,
            })
        })
        .collect()
}

/// Runs `reps` replications of one design cell in parallel. Output order is
/// the replication index, so results do not depend on the worker count.
pub fn run_cell(cfg: &DgpConfig, reps: usize, kappas: &[usize], est: &EstimatorSettings) -> Result<Vec<Vec<std::result::Result<KappaOutcome, String>>>> {
    cfg.validate()?;
    let grid = Grid::uniform(0.0, 1.0, cfg.grid_n)?;
    let basis = fourier_basis(&grid, cfg.j_trunc, false)?;
    let out = (0..reps as u64)
        .into_par_iter()
        .map(|rep| match draw_on_basis(cfg, rep, &grid, &basis) {
            Ok(draw) => evaluate_draw(&draw, cfg.d_n, kappas, est),
            Err(e) => kappas.iter().map(|_| Err(e.to_string())).collect(),
        })
        .collect();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableSpec {
    pub d_n: usize,
    pub designs: Vec<Design>,
    pub scales: Vec<f64>,
    pub ts: Vec<usize>,
    pub kappas: Vec<usize>,
    pub metrics: Vec<Metric>,
    pub reps: usize,
    pub seed: u64,
    pub m: usize,
    pub big_m: usize,
    pub j_trunc: usize,
    pub calib_reps: usize,
    pub burn_in: usize,
    pub grid_n: usize,
    pub estimator: EstimatorSettings,
}

impl Default for TableSpec {
    fn default() -> Self {
        let d = DgpConfig::default();
        TableSpec {
            d_n: d.d_n,
            designs: vec![Design::Exponential, Design::Sparse],
            scales: vec![0.0, 50.0, 100.0],
            ts: vec![100, 200, 400, 800],
            kappas: vec![0, 1],
            metrics: vec![Metric::HsError, Metric::Coverage],
            reps: 500,
            seed: d.seed,
            m: d.m,
            big_m: d.big_m,
            j_trunc: d.j_trunc,
            calib_reps: d.calib_reps,
            burn_in: d.burn_in,
            grid_n: d.grid_n,
            estimator: EstimatorSettings::default(),
        }
    }
}

impl TableSpec {
    /// The configuration of one cell; its seed is derived from the master
    /// seed and the cell coordinates.
    pub fn cell_config(&self, design: Design, scale: f64, t: usize) -> DgpConfig {
        let mut h = splitmix(self.seed);
        for v in [self.d_n as u64, design.code(), (scale * 1000.0).round() as u64, t as u64] {
            h = splitmix(h ^ v);
        }
        DgpConfig {
            d_n: self.d_n,
            m: self.m,
            big_m: self.big_m,
            design,
            t,
            error_scale_pct: scale,
            j_trunc: self.j_trunc,
            calib_reps: self.calib_reps,
            burn_in: self.burn_in,
            grid_n: self.grid_n,
            seed: h,
        }
    }
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub design: Design,
    pub scale_pct: f64,
    pub t: usize,
    pub kappa: usize,
    pub metric: Metric,
    pub value: f64,
    pub mc_se: f64,
    pub reps: usize,
    pub failures: usize,
}

/// Summarizes one cell's outcomes into table rows.
pub fn summarize_cell(cfg: &DgpConfig, kappas: &[usize], metrics: &[Metric], outcomes: &[Vec<std::result::Result<KappaOutcome, String>>]) -> Vec<TableRow> {
    let mut rows = Vec::new();
    for (ki, &kappa) in kappas.iter().enumerate() {
        let ok: Vec<&KappaOutcome> = outcomes.iter().filter_map(|o| o[ki].as_ref().ok()).collect();
        let failures = outcomes.len() - ok.len();
        for (i, o) in outcomes.iter().enumerate() {
            if let Err(e) = &o[ki] {
                debug!("rep {i}, kappa {kappa}: {e}");
            }
        }
        if failures * 200 > outcomes.len() {
            warn!(
                "{} / {} replications failed for {} {}% T={} kappa={kappa}",
                failures,
                outcomes.len(),
                cfg.design,
                cfg.error_scale_pct,
                cfg.t
            );
        }
        let n = ok.len() as f64;
        for &metric in metrics {
            let (value, mc_se) = if ok.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                match metric {
                    Metric::HsError => {
                        let mean = ok.iter().map(|o| o.hs_error).sum::<f64>() / n;
                        let var = ok.iter().map(|o| (o.hs_error - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                        (mean, (var / n).sqrt())
                    }
                    Metric::Coverage => {
                        let p = ok.iter().filter(|o| o.covered).count() as f64 / n;
                        (p, (p * (1.0 - p) / n).sqrt())
                    }
                }
            };
            rows.push(TableRow {
                design: cfg.design,
                scale_pct: cfg.error_scale_pct,
                t: cfg.t,
                kappa,
                metric,
                value,
                mc_se,
                reps: ok.len(),
                failures,
            });
        }
    }
    rows
}

/// Runs every cell of the design grid.
pub fn run_table(spec: &TableSpec) -> Result<Vec<TableRow>> {
    if spec.reps < 2 {
        return Err(Error::InvalidArgument("need at least two replications".into()));
    }
    let mut rows = Vec::new();
    for &design in &spec.designs {
        for &scale in &spec.scales {
            for &t in &spec.ts {
                let cfg = spec.cell_config(design, scale, t);
                let out = run_cell(&cfg, spec.reps, &spec.kappas, &spec.estimator).map_err(|e| Error::InCell {
                    cell: format!("design={design} scale={scale} T={t}"),
                    source: Box::new(e),
                })?;
                rows.extend(summarize_cell(&cfg, &spec.kappas, &spec.metrics, &out));
            }
        }
    }
    Ok(rows)
}
