//! Variance-ratio test for the dimension of the stochastic-trend subspace.
//!
//! The statistic compares the covariance of the partial-sum process with the
//! covariance of the series on the leading `ℓ` principal directions. Its null
//! law is tabulated by simulating Brownian motion; tables can be cached on
//! disk.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::acovfpca::cross_cov;
use crate::densities::quantile_sorted;
use crate::error::{Error, Result};
use crate::fgrid::{eig_self_adjoint, FnSeries, LinOp};

/// Environment variable naming the null-table cache directory.
pub const CACHE_ENV: &str = "FCOINT_CACHE_DIR";

const CACHE_VERSION: u32 = 1;
const REPORTED_QUANTILES: [f64; 3] = [0.90, 0.95, 0.99];

#[derive(Clone, Debug, PartialEq)]
pub struct VRConfig {
    pub ell: usize,
    pub d_max: usize,
    pub level: f64,
    pub centered: bool,
    pub null_draws: usize,
    pub bm_steps: usize,
    pub seed: u64,
    pub cache_dir: Option<PathBuf>,
}

impl Default for VRConfig {
    fn default() -> Self {
        VRConfig {
            ell: 5,
            d_max: 5,
            level: 0.05,
            centered: true,
            null_draws: 100_000,
            bm_steps: 1_000,
            seed: 20_240_601,
            cache_dir: None,
        }
    }
}

impl VRConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_max < 1 || self.ell < self.d_max {
            return Err(Error::InvalidArgument(format!(
                "need ell >= d_max >= 1, got ell = {}, d_max = {}",
                self.ell, self.d_max
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "level must lie in (0, 1), got {}",
                self.level
            )));
        }
        if self.null_draws < 1000 || self.bm_steps < 100 {
            return Err(Error::InvalidArgument(format!(
                "null simulation needs draws >= 1000 and steps >= 100, got {} and {}",
                self.null_draws, self.bm_steps
            )));
        }
        Ok(())
    }

    fn resolved_cache_dir(&self) -> Option<PathBuf> {
        self.cache_dir
            .clone()
            .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
    }
}

/// `T⁻¹ Σ_t S_t ⊗ S_t` with `S_t` the partial sums of the (optionally
/// demeaned) series.
pub fn k0_hat(series: &FnSeries, centered: bool) -> Result<LinOp> {
    let z = if centered {
        series.demeaned()
    } else {
        series.clone()
    };
    let s = z.partial_sums();
    cross_cov(&s, &s, 0)
}

/// Generalized eigenvalues `γ` of the pencil `γ A φ = B φ`, ascending,
/// with `A` symmetric positive definite and `B` symmetric.
pub fn pencil_eigenvalues(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("projected partial-sum covariance is not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("triangular factor is not invertible".into()))?;
    let m = &linv * b * linv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let mut g: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    g.sort_by(f64::total_cmp);
    Ok(g)
}

/// The `ℓ` pencil eigenvalues of a series, ascending.
#[derive(Clone, Debug)]
pub struct VrEigen {
    pub periods: usize,
    pub gammas: Vec<f64>,
}

impl VrEigen {
    /// `T² Σ_{j ≤ d0} γ_j`.
    pub fn stat(&self, d0: usize) -> f64 {
        let t = self.periods as f64;
        t * t * self.gammas[..d0].iter().sum::<f64>()
    }
}

pub fn vr_eigen(series: &FnSeries, ell: usize, centered: bool) -> Result<VrEigen> {
    let t = series.len();
    if t < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 periods, got {t}")));
    }
    if ell == 0 {
        return Err(Error::InvalidArgument("ell must be positive".into()));
    }
    let z = if centered {
        series.demeaned()
    } else {
        series.clone()
    };
    let c0 = cross_cov(&z, &z, 0)?;
    let eig = eig_self_adjoint(&c0)?;
    let rank = eig.numerical_rank();
    if rank < ell {
        warn!("covariance has numerical rank {rank}, below ell = {ell}");
        return Err(Error::RankExceeded {
            requested: ell,
            rank,
        });
    }
    let k0 = k0_hat(&z, false)?;
    let mut a = DMatrix::zeros(ell, ell);
    let kv: Vec<_> = (1..=ell)
        .map(|j| k0.apply(eig.function(j)))
        .collect::<Result<_>>()?;
    for i in 0..ell {
        for j in 0..ell {
            a[(i, j)] = eig.function(i + 1).inner(&kv[j])?;
        }
    }
    let a = (&a + a.transpose()) * 0.5;
    let b = DMatrix::from_diagonal(&DVector::from_iterator(ell, eig.values()[..ell].iter().copied()));
    Ok(VrEigen {
        periods: t,
        gammas: pencil_eigenvalues(&a, &b)?,
    })
}

/// The test statistic for `H₀: d_N = d0`.
pub fn vr_stat(series: &FnSeries, d0: usize, cfg: &VRConfig) -> Result<f64> {
    if d0 == 0 || d0 > cfg.ell {
        return Err(Error::InvalidArgument(format!(
            "d0 must lie in 1..={}, got {d0}",
            cfg.ell
        )));
    }
    Ok(vr_eigen(series, cfg.ell, cfg.centered)?.stat(d0))
}

/// Simulated null distribution of the statistic for one `d0`.
#[derive(Clone, Debug, PartialEq)]
pub struct NullTable {
    pub d0: usize,
    pub centered: bool,
    pub draws: usize,
    pub steps: usize,
    pub seed: u64,
    sorted: Vec<f64>,
}

impl NullTable {
    pub fn quantile(&self, p: f64) -> f64 {
        quantile_sorted(&self.sorted, p)
    }

    pub fn quantiles(&self) -> Vec<(f64, f64)> {
        REPORTED_QUANTILES.iter().map(|&p| (p, self.quantile(p))).collect()
    }

    /// Share of null draws exceeding `stat`.
    pub fn p_value(&self, stat: f64) -> f64 {
        let below = self.sorted.partition_point(|&v| v <= stat);
        (self.sorted.len() - below) as f64 / self.sorted.len() as f64
    }

    pub fn sorted_draws(&self) -> &[f64] {
        &self.sorted
    }

    fn file_name(d0: usize, centered: bool, draws: usize, steps: usize, seed: u64) -> String {
        format!(
            "vrnull_v{CACHE_VERSION}_d{d0}_{}_n{draws}_s{steps}_seed{seed}.csv",
            if centered { "c" } else { "r" }
        )
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "version,d0,centered,draws,steps,seed")?;
        writeln!(
            w,
            "{CACHE_VERSION},{},{},{},{},{}",
            self.d0, self.centered, self.draws, self.steps, self.seed
        )?;
        writeln!(w, "quantile,value")?;
        for (p, q) in self.quantiles() {
            writeln!(w, "{p},{q}")?;
        }
        writeln!(w, "draw")?;
        for v in &self.sorted {
            writeln!(w, "{v}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<NullTable> {
        let loc = |line: usize| format!("{}:{}", path.display(), line);
        let f = BufReader::new(fs::File::open(path)?);
        let lines: Vec<String> = f.lines().collect::<std::io::Result<_>>()?;
        if lines.len() < 6 + REPORTED_QUANTILES.len() {
            return Err(Error::data(loc(lines.len()), "truncated null table"));
        }
        let head: Vec<&str> = lines[1].split(',').collect();
        if head.len() != 6 {
            return Err(Error::data(loc(2), "expected 6 header fields"));
        }
        let bad = |i: usize| Error::data(loc(2), format!("unparsable header field {}", i + 1));
        let version: u32 = head[0].parse().map_err(|_| bad(0))?;
        if version != CACHE_VERSION {
            return Err(Error::data(loc(2), format!("unsupported table version {version}")));
        }
        let d0 = head[1].parse().map_err(|_| bad(1))?;
        let centered = head[2].parse().map_err(|_| bad(2))?;
        let draws: usize = head[3].parse().map_err(|_| bad(3))?;
        let steps = head[4].parse().map_err(|_| bad(4))?;
        let seed = head[5].parse().map_err(|_| bad(5))?;
        let start = 4 + REPORTED_QUANTILES.len();
        let mut sorted = Vec::with_capacity(draws);
        for (i, l) in lines.iter().enumerate().skip(start) {
            sorted.push(
                l.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::data(loc(i + 1), format!("not a number: {l:?}")))?,
            );
        }
        if sorted.len() != draws {
            return Err(Error::data(
                loc(lines.len()),
                format!("header promises {draws} draws, found {}", sorted.len()),
            ));
        }
        Ok(NullTable {
            d0,
            centered,
            draws,
            steps,
            seed,
            sorted,
        })
    }
}

/// One draw of `tr((∫VV′)⁻¹ ∫WW′)` from a discretized `d0`-dimensional
/// Brownian motion; `None` when `∫VV′` is numerically singular.
fn null_functional(rng: &mut ChaCha8Rng, d0: usize, steps: usize, centered: bool, buf: &mut Vec<f64>) -> Option<f64> {
    let n = steps;
    let scale = 1.0 / (n as f64).sqrt();
    buf.clear();
    buf.resize(n * d0, 0.0);
    let mut w = vec![0.0; d0];
    for k in 0..n {
        for (c, wc) in w.iter_mut().enumerate() {
            let e: f64 = rng.sample(StandardNormal);
            *wc += e * scale;
            buf[k * d0 + c] = *wc;
        }
    }
    if centered {
        let mut mean = vec![0.0; d0];
        for k in 0..n {
            for c in 0..d0 {
                mean[c] += buf[k * d0 + c];
            }
        }
        for k in 0..n {
            for c in 0..d0 {
                buf[k * d0 + c] -= mean[c] / n as f64;
            }
        }
    }
    let mut ww = DMatrix::<f64>::zeros(d0, d0);
    let mut vv = DMatrix::<f64>::zeros(d0, d0);
    let mut v = vec![0.0; d0];
    let inv_n = 1.0 / n as f64;
    for k in 0..n {
        let wk = &buf[k * d0..(k + 1) * d0];
        for c in 0..d0 {
            v[c] += wk[c] * inv_n;
        }
        for i in 0..d0 {
            for j in 0..=i {
                ww[(i, j)] += wk[i] * wk[j];
                vv[(i, j)] += v[i] * v[j];
            }
        }
    }
    for i in 0..d0 {
        for j in 0..i {
            ww[(j, i)] = ww[(i, j)];
            vv[(j, i)] = vv[(i, j)];
        }
    }
    let max_diag = (0..d0).map(|i| vv[(i, i)]).fold(0.0, f64::max);
    let chol = vv.cholesky()?;
    let l = chol.l();
    let min_pivot = (0..d0).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-12 * max_diag) {
        return None;
    }
    let x = chol.solve(&ww);
    Some(x.trace())
}

/// Simulates the null law for `d0` from scratch (no cache).
pub fn simulate_null(d0: usize, centered: bool, draws: usize, steps: usize, seed: u64) -> Result<NullTable> {
    if d0 == 0 || draws == 0 || steps < 2 {
        return Err(Error::InvalidArgument(format!(
            "invalid null simulation size: d0 = {d0}, draws = {draws}, steps = {steps}"
        )));
    }
    let tag = ((d0 as u64) << 56) | ((centered as u64) << 55);
    let results: Vec<(f64, u32)> = (0..draws as u64)
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            let mut attempt = 0u64;
            loop {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(tag | (attempt << 40) | i);
                if let Some(v) = null_functional(&mut rng, d0, steps, centered, buf) {
                    return (v, attempt as u32);
                }
                attempt += 1;
            }
        })
        .collect();
    let redraws: u32 = results.iter().map(|r| r.1).sum();
    if redraws > 0 {
        info!("null simulation for d0 = {d0}: {redraws} near-singular draws redrawn");
    }
    let mut sorted: Vec<f64> = results.into_iter().map(|r| r.0).collect();
    sorted.sort_by(f64::total_cmp);
    Ok(NullTable {
        d0,
        centered,
        draws,
        steps,
        seed,
        sorted,
    })
}

/// Null table for `d0`, read from the cache directory when one is
/// configured and the file exists, simulated (and stored) otherwise.
pub fn null_quantiles(d0: usize, cfg: &VRConfig) -> Result<NullTable> {
    let dir = cfg.resolved_cache_dir();
    let name = NullTable::file_name(d0, cfg.centered, cfg.null_draws, cfg.bm_steps, cfg.seed);
    if let Some(dir) = &dir {
        let path = dir.join(&name);
        if path.exists() {
            match NullTable::read(&path) {
                Ok(t) => return Ok(t),
                Err(e) => warn!("ignoring unreadable null table {}: {e}", path.display()),
            }
        }
    }
    let table = simulate_null(d0, cfg.centered, cfg.null_draws, cfg.bm_steps, cfg.seed)?;
    if let Some(dir) = &dir {
        fs::create_dir_all(dir)?;
        table.write(&dir.join(&name))?;
    }
    Ok(table)
}

#[derive(Clone, Debug)]
pub struct VRRow {
    pub d0: usize,
    pub stat: f64,
    pub p_value: f64,
    pub quantiles: Vec<(f64, f64)>,
}

/// Sequential test results; rows run from `d_max` down to 1.
#[derive(Clone, Debug)]
pub struct VRReport {
    pub rows: Vec<VRRow>,
    pub d_hat: usize,
    pub level: f64,
}

/// Tests `d_N = d0` against `d_N < d0` for `d0 = d_max, …, 1`. The estimate
/// is the first `d0` not rejected, or 0. Statistics and p-values are
/// reported for every `d0`.
pub fn sequential_dn(series: &FnSeries, cfg: &VRConfig) -> Result<VRReport> {
    cfg.validate()?;
    let tables = (1..=cfg.d_max)
        .map(|d0| null_quantiles(d0, cfg))
        .collect::<Result<Vec<_>>>()?;
    sequential_with_tables(series, cfg, &tables)
}

/// As [`sequential_dn`] with precomputed null tables indexed by `d0 − 1`.
pub fn sequential_with_tables(series: &FnSeries, cfg: &VRConfig, tables: &[NullTable]) -> Result<VRReport> {
    if tables.len() < cfg.d_max {
        return Err(Error::InvalidArgument(format!(
            "need {} null tables, got {}",
            cfg.d_max,
            tables.len()
        )));
    }
    let eig = vr_eigen(series, cfg.ell, cfg.centered)?;
    let mut rows = Vec::with_capacity(cfg.d_max);
    let mut d_hat = None;
    for d0 in (1..=cfg.d_max).rev() {
        let table = &tables[d0 - 1];
        let stat = eig.stat(d0);
        let p_value = table.p_value(stat);
        if d_hat.is_none() && p_value > cfg.level {
            d_hat = Some(d0);
        }
        rows.push(VRRow {
            d0,
            stat,
            p_value,
            quantiles: table.quantiles(),
        });
    }
    Ok(VRReport {
        rows,
        d_hat: d_hat.unwrap_or(0),
        level: cfg.level,
    })
}
