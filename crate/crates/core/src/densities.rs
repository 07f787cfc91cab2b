//! Density front-end: Gaussian KDE with Silverman's bandwidth, common support
//! truncation, and the centered log-ratio (CLR) transform with its inverse.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fgrid::{FnSeries, Grid, GridFn};

/// Default relative floor applied before taking logs in [`clr`].
pub const DEFAULT_FLOOR_EPS: f64 = 1e-10;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Per-period raw scalar observations.
#[derive(Clone, Debug)]
pub struct SamplePanel {
    samples: Vec<Vec<f64>>,
}

impl SamplePanel {
    pub fn new(samples: Vec<Vec<f64>>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::data("panel", "no periods"));
        }
        for (t, s) in samples.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::data(format!("row {}", t + 1), "period has no observations"));
            }
            if let Some(bad) = s.iter().find(|v| !v.is_finite()) {
                return Err(Error::data(format!("row {}", t + 1), format!("non-finite value {bad}")));
            }
        }
        Ok(SamplePanel { samples })
    }

    pub fn periods(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn pooled(&self) -> Vec<f64> {
        self.samples.iter().flatten().copied().collect()
    }
}

/// A series of densities on a common grid; rows integrate to one.
#[derive(Clone, Debug)]
pub struct DensitySeries {
    series: FnSeries,
    bandwidths: Vec<f64>,
}

impl DensitySeries {
    pub fn series(&self) -> &FnSeries {
        &self.series
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.series.grid()
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    /// CLR transform of every row.
    pub fn to_clr(&self, floor_eps: f64) -> Result<FnSeries> {
        let rows: Result<Vec<GridFn>> = self.series.rows().map(|g| clr(&g, floor_eps)).collect();
        FnSeries::from_fns(&rows?)
    }
}

/// Empirical quantile with linear interpolation between order statistics
/// (position `(m − 1)·p` in the sorted sample).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let m = sorted.len();
    if m == 1 {
        return sorted[0];
    }
    let pos = (m - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(m - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn sorted_copy(sample: &[f64]) -> Vec<f64> {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn sample_sd(sample: &[f64]) -> f64 {
    let m = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / m;
    (sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
}

/// Robust rule-of-thumb bandwidth `0.9 · min(sd, IQR/1.349) · m^{-1/5}`.
///
/// Falls back to `sd` when the interquartile range is zero.
pub fn silverman_bandwidth(sample: &[f64]) -> Result<f64> {
    if sample.len() < 2 {
        return Err(Error::DegenerateSample(format!(
            "bandwidth needs at least 2 observations, got {}",
            sample.len()
        )));
    }
    let sd = sample_sd(sample);
    if !(sd > 0.0) {
        return Err(Error::DegenerateSample("sample has zero dispersion".into()));
    }
    let s = sorted_copy(sample);
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.349) } else { sd };
    Ok(0.9 * spread * (sample.len() as f64).powf(-0.2))
}

/// Gaussian kernel sum `(1/(m h)) Σ_i φ((s − x_i)/h)` at the grid nodes,
/// without renormalization.
pub fn kde_unnormalized(sample: &[f64], grid: &Arc<Grid>, bandwidth: f64) -> Result<GridFn> {
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    if sample.is_empty() {
        return Err(Error::DegenerateSample("empty sample".into()));
    }
    let scale = 1.0 / (sample.len() as f64 * bandwidth);
    Ok(GridFn::from_fn(grid.clone(), |s| {
        scale
            * sample
                .iter()
                .map(|x| {
                    let z = (s - x) / bandwidth;
                    INV_SQRT_2PI * (-0.5 * z * z).exp()
                })
                .sum::<f64>()
    }))
}

/// Gaussian KDE evaluated on `grid`, renormalized to unit mass on the grid.
pub fn kde(sample: &[f64], grid: &Arc<Grid>, bandwidth: f64) -> Result<GridFn> {
    let raw = kde_unnormalized(sample, grid, bandwidth)?;
    let mass = raw.integral();
    if !(mass > 0.0) {
        return Err(Error::DegenerateSample(
            "kernel estimate has no mass on the grid".into(),
        ));
    }
    Ok(raw.scale(1.0 / mass))
}

/// Central interval holding `mass` of the pooled sample, from linearly
/// interpolated empirical quantiles.
pub fn common_support(panel: &SamplePanel, mass: f64) -> Result<(f64, f64)> {
    if !(mass > 0.0 && mass < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "support mass must lie in (0, 1), got {mass}"
        )));
    }
    let pooled = sorted_copy(&panel.pooled());
    if pooled.len() < 10 {
        return Err(Error::DegenerateSample(format!(
            "support needs at least 10 pooled observations, got {}",
            pooled.len()
        )));
    }
    let lo = quantile_sorted(&pooled, (1.0 - mass) / 2.0);
    let hi = quantile_sorted(&pooled, (1.0 + mass) / 2.0);
    Ok((lo, hi))
}

/// Estimates one density per period on a shared grid over the central
/// `mass` support.
pub fn estimate_densities(panel: &SamplePanel, mass: f64, n: usize) -> Result<DensitySeries> {
    let (a1, a2) = common_support(panel, mass)?;
    let grid = Grid::uniform(a1, a2, n)?;
    let mut rows = Vec::with_capacity(panel.periods());
    let mut bandwidths = Vec::with_capacity(panel.periods());
    for (t, s) in panel.samples().iter().enumerate() {
        let h = silverman_bandwidth(s).map_err(|e| Error::data(format!("row {}", t + 1), e.to_string()))?;
        rows.push(kde(s, &grid, h).map_err(|e| Error::data(format!("row {}", t + 1), e.to_string()))?);
        bandwidths.push(h);
    }
    Ok(DensitySeries {
        series: FnSeries::from_fns(&rows)?,
        bandwidths,
    })
}

/// Wraps an existing matrix of densities (rows are periods).
pub fn density_series(grid: Arc<Grid>, values: DMatrix<f64>) -> Result<DensitySeries> {
    let series = FnSeries::new(grid, values)?;
    for (t, row) in series.rows().enumerate() {
        if row.values().iter().any(|v| *v < 0.0) {
            return Err(Error::data(format!("row {}", t + 1), "negative density value"));
        }
        let m = row.integral();
        if (m - 1.0).abs() > 1e-6 {
            return Err(Error::data(format!("row {}", t + 1), format!("density integrates to {m}")));
        }
    }
    let bandwidths = vec![f64::NAN; series.len()];
    Ok(DensitySeries { series, bandwidths })
}

/// Centered log-ratio transform `log g − (a2 − a1)^{-1} ∫ log g`.
///
/// The density is first floored at `floor_eps · max(g)` and renormalized.
/// With `floor_eps = 0` the input must be strictly positive.
pub fn clr(density: &GridFn, floor_eps: f64) -> Result<GridFn> {
    let grid = density.grid().clone();
    let vals = density.values();
    if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument("density must be finite and nonnegative".into()));
    }
    let max = vals.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::InvalidArgument("density is identically zero".into()));
    }
    let floor = floor_eps * max;
    let floored: Vec<f64> = vals.iter().map(|v| v.max(floor)).collect();
    if floored.iter().any(|v| *v <= 0.0) {
        return Err(Error::InvalidArgument(
            "density has zeros; use a positive floor".into(),
        ));
    }
    let floored = GridFn::new(grid.clone(), floored)?;
    let mass = floored.integral();
    let logs = GridFn::from_vector(
        grid.clone(),
        floored.vector().map(|v| (v / mass).ln()),
    );
    let center = logs.integral() / grid.len();
    Ok(GridFn::from_vector(grid, logs.vector().add_scalar(-center)))
}

/// Inverse CLR `exp(h) / ∫ exp(h)`, computed with the maximum subtracted first.
pub fn inv_clr(h: &GridFn) -> Result<GridFn> {
    let vals = h.values();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("CLR function has non-finite values".into()));
    }
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = GridFn::from_vector(h.grid().clone(), h.vector().map(|v| (v - max).exp()));
    let mass = e.integral();
    Ok(e.scale(1.0 / mass))
}

/// Mean and variance of a density under grid quadrature.
pub fn density_moments(density: &GridFn) -> (f64, f64) {
    let nodes = density.grid().nodes();
    let w = density.grid().weights();
    let v = density.values();
    let mass: f64 = v.iter().zip(w).map(|(g, w)| g * w).sum();
    let mean: f64 = nodes.iter().zip(v).zip(w).map(|((u, g), w)| u * g * w).sum::<f64>() / mass;
    let var: f64 = nodes
        .iter()
        .zip(v)
        .zip(w)
        .map(|((u, g), w)| (u - mean).powi(2) * g * w)
        .sum::<f64>()
        / mass;
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn silverman_two_points() {
        // sd = 1/√2, quartiles 0.25 and 0.75 → IQR/1.349 = 0.370645
        let h = silverman_bandwidth(&[0.0, 1.0]).unwrap();
        let expected = 0.9 * (0.5f64 / 1.349) * 2f64.powf(-0.2);
        assert_abs_diff_eq!(h, expected, epsilon = 1e-15);
    }

    #[test]
    fn silverman_standard_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
        let h = silverman_bandwidth(&s).unwrap();
        assert!((h - 0.2254).abs() < 0.02, "h = {h}");
    }

    #[test]
    fn silverman_constant_sample_errors() {
        assert!(matches!(
            silverman_bandwidth(&[2.0; 5]),
            Err(Error::DegenerateSample(_))
        ));
    }

    #[test]
    fn kde_single_point_is_normal_pdf() {
        let g = Grid::uniform(-8.0, 9.0, 341).unwrap();
        let raw = kde_unnormalized(&[0.5], &g, 1.0).unwrap();
        for (u, v) in g.nodes().iter().zip(raw.values()) {
            let z = u - 0.5;
            assert_abs_diff_eq!(*v, INV_SQRT_2PI * (-0.5 * z * z).exp(), epsilon = 1e-15);
        }
        let k = kde(&[0.5], &g, 1.0).unwrap();
        assert_abs_diff_eq!(k.integral(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn kde_symmetric_points() {
        let g = Grid::uniform(-3.0, 3.0, 61).unwrap();
        let k = kde(&[-0.7, 0.7], &g, 0.4).unwrap();
        let v = k.values();
        for i in 0..61 {
            assert_abs_diff_eq!(v[i], v[60 - i], epsilon = 1e-10);
        }
    }

    #[test]
    fn kde_matches_double_loop() {
        let g = Grid::uniform(-2.0, 2.0, 11).unwrap();
        let pts = [0.13, -0.52, 1.7, 0.9, -1.33, 0.05, 0.61];
        let h = 0.37;
        let raw = kde_unnormalized(&pts, &g, h).unwrap();
        for (i, s) in g.nodes().iter().enumerate() {
            let mut acc = 0.0;
            for x in pts {
                let z = (s - x) / h;
                acc += (-(z * z) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
            }
            assert_abs_diff_eq!(raw.values()[i], acc / (7.0 * h), epsilon = 1e-14);
        }
    }

    #[test]
    fn support_by_interpolated_quantiles() {
        let panel = SamplePanel::new(vec![(1..=50).map(f64::from).collect(), (51..=100).map(f64::from).collect()]).unwrap();
        let (lo, hi) = common_support(&panel, 0.9).unwrap();
        assert_abs_diff_eq!(lo, 5.95, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 95.05, epsilon = 1e-12);
        let (lo, hi) = common_support(&panel, 1.0 - 1e-12).unwrap();
        assert!((lo - 1.0).abs() < 1e-8 && (hi - 100.0).abs() < 1e-8);
        assert!(common_support(&panel, 1.0).is_err());
        assert!(common_support(&panel, 0.0).is_err());
    }

    #[test]
    fn empty_period_is_named() {
        let err = SamplePanel::new(vec![vec![1.0], vec![]]).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn clr_of_uniform_is_zero() {
        let g = Grid::uniform(0.0, 1.0, 51).unwrap();
        let c = clr(&GridFn::constant(g, 1.0), DEFAULT_FLOOR_EPS).unwrap();
        assert!(c.values().iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn clr_of_exponential_density() {
        let g = Grid::uniform(0.0, 1.0, 201).unwrap();
        let e = GridFn::from_fn(g.clone(), f64::exp);
        let d = e.scale(1.0 / e.integral());
        let c = clr(&d, 0.0).unwrap();
        // trapezoid integral of u is exact, so the centering is exactly 1/2
        let expect = GridFn::from_fn(g, |u| u - 0.5);
        assert!(c.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn clr_matches_direct_formula() {
        let g = Grid::uniform(0.0, 2.0, 9).unwrap();
        let raw = [0.2, 0.9, 1.4, 0.3, 0.05, 0.6, 1.1, 0.8, 0.4];
        let d = GridFn::new(g.clone(), raw.to_vec()).unwrap();
        let d = d.scale(1.0 / d.integral());
        let c = clr(&d, 0.0).unwrap();
        let w = g.weights();
        let logs: Vec<f64> = d.values().iter().map(|v| v.ln()).collect();
        let mean_log: f64 = logs.iter().zip(w).map(|(l, w)| l * w).sum::<f64>() / 2.0;
        for i in 0..9 {
            assert_abs_diff_eq!(c.values()[i], logs[i] - mean_log, epsilon = 1e-12);
        }
    }

    #[test]
    fn inv_clr_basics() {
        let g = Grid::uniform(-1.0, 3.0, 41).unwrap();
        let u = inv_clr(&GridFn::zeros(g.clone())).unwrap();
        assert!(u.values().iter().all(|v| (v - 0.25).abs() < 1e-14));
        let h = GridFn::from_fn(g.clone(), |s| (2.0 * s).sin());
        let a = inv_clr(&h).unwrap();
        let b = inv_clr(&h.add(&GridFn::constant(g, 7.5)).unwrap()).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
        assert_abs_diff_eq!(a.integral(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn inv_clr_survives_large_values() {
        let g = Grid::uniform(0.0, 1.0, 21).unwrap();
        let h = GridFn::from_fn(g, |s| 900.0 * s);
        let d = inv_clr(&h).unwrap();
        assert!(d.values().iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(d.integral(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn moments_of_uniform() {
        let g = Grid::uniform(0.0, 2.0, 2001).unwrap();
        let (m, v) = density_moments(&GridFn::constant(g, 0.5));
        assert_abs_diff_eq!(m, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-6);
    }
}
