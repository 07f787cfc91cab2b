//! CSV formats for series, panels, operator kernels, fit artifacts and
//! reports. Floats are written in shortest round-trip decimal form.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::densities::SamplePanel;
use crate::error::{Error, Result};
use crate::fgrid::{FnSeries, Grid, GridFn, LinOp};
use crate::regress::{FitResult, InferenceReport, ShockPoint, Target};
use crate::simlab::TableRow;
use crate::vrtest::VRReport;

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::WriterBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?)
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?)
}

fn fmt_all(v: &[f64]) -> Vec<String> {
    v.iter().map(|x| x.to_string()).collect()
}

fn parse_cell(s: &str, path: &Path, row: usize, col: usize) -> Result<f64> {
    s.parse::<f64>().map_err(|_| {
        Error::data(
            format!("{} row {} column {}", path.display(), row, col),
            format!("not a number: {s:?}"),
        )
    })
}

fn read_numeric_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (i, rec) in reader(path)?.records().enumerate() {
        let rec = rec?;
        let mut row = Vec::with_capacity(rec.len());
        for (j, cell) in rec.iter().enumerate() {
            row.push(parse_cell(cell, path, i + 1, j + 1)?);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Rebuilds a uniform grid from its listed nodes.
pub fn grid_from_nodes(nodes: &[f64]) -> Result<Arc<Grid>> {
    if nodes.len() < 2 {
        return Err(Error::data("grid", "need at least two nodes"));
    }
    let grid = Grid::uniform(nodes[0], *nodes.last().unwrap(), nodes.len())?;
    let tol = 1e-9 * grid.len();
    for (i, (a, b)) in nodes.iter().zip(grid.nodes()).enumerate() {
        if (a - b).abs() > tol {
            return Err(Error::data(
                format!("grid node {}", i + 1),
                format!("nodes are not uniformly spaced ({a} vs {b})"),
            ));
        }
    }
    Ok(grid)
}

/// Reads a series: the first row lists the grid nodes, every further row is
/// one observation.
pub fn read_series(path: &Path) -> Result<FnSeries> {
    let rows = read_numeric_rows(path)?;
    let Some((nodes, obs)) = rows.split_first() else {
        return Err(Error::data(path.display().to_string(), "empty file"));
    };
    let grid = grid_from_nodes(nodes)?;
    if obs.is_empty() {
        return Err(Error::data(path.display().to_string(), "no observations after the grid row"));
    }
    for (i, r) in obs.iter().enumerate() {
        if r.len() != nodes.len() {
            return Err(Error::data(
                format!("{} row {}", path.display(), i + 2),
                format!("expected {} values, found {}", nodes.len(), r.len()),
            ));
        }
    }
    FnSeries::from_rows(grid, obs)
}

pub fn write_series(path: &Path, series: &FnSeries) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(fmt_all(series.grid().nodes()))?;
    for r in series.rows() {
        w.write_record(fmt_all(r.values()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a single function stored in series format (one observation).
pub fn read_function(path: &Path) -> Result<GridFn> {
    let s = read_series(path)?;
    if s.len() != 1 {
        return Err(Error::data(
            path.display().to_string(),
            format!("expected one function, found {}", s.len()),
        ));
    }
    Ok(s.row(0))
}

pub fn write_function(path: &Path, f: &GridFn) -> Result<()> {
    write_series(path, &FnSeries::from_fns(std::slice::from_ref(f))?)
}

/// Reads a raw sample panel: one period per row, variable length, `NaN`
/// and blank cells ignored.
pub fn read_panel(path: &Path) -> Result<SamplePanel> {
    let mut samples = Vec::new();
    for (i, rec) in reader(path)?.records().enumerate() {
        let rec = rec?;
        let mut row = Vec::new();
        for (j, cell) in rec.iter().enumerate() {
            if cell.is_empty() {
                continue;
            }
            let v = parse_cell(cell, path, i + 1, j + 1)?;
            if !v.is_nan() {
                row.push(v);
            }
        }
        if row.is_empty() {
            return Err(Error::data(
                format!("{} row {}", path.display(), i + 1),
                "period has no observations",
            ));
        }
        samples.push(row);
    }
    SamplePanel::new(samples)
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = writer(path)?;
    for r in m.row_iter() {
        w.write_record(r.iter().map(|x| x.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let rows = read_numeric_rows(path)?;
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if nr == 0 || nc == 0 {
        return Err(Error::data(path.display().to_string(), "empty matrix"));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != nc) {
        return Err(Error::data(
            format!("{} row {}", path.display(), i + 1),
            format!("expected {nc} values, found {}", rows[i].len()),
        ));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

fn write_key_values(path: &Path, kv: &[(&str, String)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["key", "value"])?;
    for (k, v) in kv {
        w.write_record([*k, v.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, rec) in reader(path)?.records().enumerate().skip(1) {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::data(
                format!("{} row {}", path.display(), i + 1),
                "expected key,value",
            ));
        }
        out.push((rec[0].to_string(), rec[1].to_string()));
    }
    Ok(out)
}

/// Operator kernels, eigen diagnostics, residuals and a metadata table.
pub fn export_fit(dir: &Path, fit: &FitResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_matrix(&dir.join("f_total.csv"), fit.f_total.kernel())?;
    write_matrix(&dir.join("f_n.csv"), fit.f_n.kernel())?;
    write_matrix(&dir.join("f_s.csv"), fit.f_s.kernel())?;
    write_matrix(&dir.join("c_u.csv"), fit.c_u.kernel())?;
    write_function(&dir.join("intercept.csv"), &fit.intercept)?;
    write_series(&dir.join("residuals.csv"), &fit.residuals)?;
    let acov = &fit.split.acov;
    let mut w = writer(&dir.join("eigenvalues.csv"))?;
    w.write_record(["index", "lambda", "lambda_tilde"])?;
    let rank = acov.eig_d.numerical_rank().max(fit.selection.k);
    for (j, l, s) in acov.eigen_table(fit.config.d_n).into_iter().take(rank) {
        w.write_record([j.to_string(), l.to_string(), s.to_string()])?;
    }
    w.flush()?;
    let xg = fit.x_grid();
    let yg = fit.y_grid();
    let c = &fit.config;
    write_key_values(
        &dir.join("metadata.csv"),
        &[
            ("kappa", c.kappa.to_string()),
            ("d_n", c.d_n.to_string()),
            ("k", fit.selection.k.to_string()),
            ("k_s", fit.selection.k_s.to_string()),
            ("threshold", fit.selection.threshold.to_string()),
            ("a1", c.a1.to_string()),
            ("a2_exp", c.a2_exp.to_string()),
            ("centered", c.centered.to_string()),
            ("periods", fit.periods.to_string()),
            ("x_a1", xg.a1().to_string()),
            ("x_a2", xg.a2().to_string()),
            ("x_n", xg.n().to_string()),
            ("y_a1", yg.a1().to_string()),
            ("y_a2", yg.a2().to_string()),
            ("y_n", yg.n().to_string()),
        ],
    )
}

/// The parts of an exported fit needed to evaluate it again.
#[derive(Clone, Debug)]
pub struct SavedFit {
    pub f_total: LinOp,
    pub f_n: LinOp,
    pub f_s: LinOp,
    pub c_u: LinOp,
    pub intercept: GridFn,
    pub metadata: Vec<(String, String)>,
}

impl SavedFit {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

pub fn load_fit(dir: &Path) -> Result<SavedFit> {
    let metadata = read_key_values(&dir.join("metadata.csv"))?;
    let get = |k: &str| -> Result<f64> {
        let v = metadata
            .iter()
            .find(|(key, _)| key == k)
            .ok_or_else(|| Error::data(format!("{}/metadata.csv", dir.display()), format!("missing key {k}")))?;
        v.1.parse::<f64>()
            .map_err(|_| Error::data(format!("{}/metadata.csv", dir.display()), format!("bad value for {k}")))
    };
    let xg = Grid::uniform(get("x_a1")?, get("x_a2")?, get("x_n")? as usize)?;
    let yg = Grid::uniform(get("y_a1")?, get("y_a2")?, get("y_n")? as usize)?;
    let op = |name: &str, dom: &Arc<Grid>, cod: &Arc<Grid>| -> Result<LinOp> {
        LinOp::from_kernel(dom.clone(), cod.clone(), read_matrix(&dir.join(name))?)
    };
    let intercept = read_function(&dir.join("intercept.csv"))?;
    let intercept = GridFn::new(yg.clone(), intercept.into_values())?;
    Ok(SavedFit {
        f_total: op("f_total.csv", &xg, &yg)?,
        f_n: op("f_n.csv", &xg, &yg)?,
        f_s: op("f_s.csv", &xg, &yg)?,
        c_u: op("c_u.csv", &yg, &yg)?,
        intercept,
        metadata,
    })
}

pub fn write_inference(path: &Path, reports: &[InferenceReport]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["interval", "point", "lo", "hi", "theta_hat", "variance", "level"])?;
    for r in reports {
        let interval = match r.target {
            Target::Functional => "functional".to_string(),
            Target::Interval(a, b) => format!("[{a};{b}]"),
        };
        w.write_record([
            interval,
            r.point.to_string(),
            r.ci_low.to_string(),
            r.ci_high.to_string(),
            r.theta_hat.to_string(),
            r.variance.to_string(),
            r.level.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_table(path: &Path, rows: &[TableRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["design", "scale_pct", "T", "kappa", "metric", "value", "mc_se", "reps", "failures"])?;
    for r in rows {
        w.write_record([
            r.design.to_string(),
            r.scale_pct.to_string(),
            r.t.to_string(),
            r.kappa.to_string(),
            r.metric.to_string(),
            r.value.to_string(),
            r.mc_se.to_string(),
            r.reps.to_string(),
            r.failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_vr_report(path: &Path, report: &VRReport) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["d0", "statistic", "p_value", "q90", "q95", "q99"])?;
    for r in &report.rows {
        let mut rec = vec![r.d0.to_string(), r.stat.to_string(), r.p_value.to_string()];
        rec.extend(r.quantiles.iter().map(|(_, q)| q.to_string()));
        w.write_record(rec)?;
    }
    w.write_record(["d_hat".to_string(), report.d_hat.to_string()])?;
    w.flush()?;
    Ok(())
}

pub fn write_shock(dir: &Path, points: &[ShockPoint]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("no shock scales given".into()));
    }
    let dens: Vec<GridFn> = points.iter().map(|p| p.density.clone()).collect();
    write_series(&dir.join("shock_densities.csv"), &FnSeries::from_fns(&dens)?)?;
    let mut w = writer(&dir.join("shock_moments.csv"))?;
    w.write_record(["q", "mean", "variance"])?;
    for p in points {
        w.write_record([p.q.to_string(), p.mean.to_string(), p.variance.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_eigen_table(path: &Path, rows: &[(usize, f64, f64)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["index", "lambda", "lambda_tilde"])?;
    for (j, l, s) in rows {
        w.write_record([j.to_string(), l.to_string(), s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn series_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::uniform(-5.8, 6.68, 13).unwrap();
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|t| (0..13).map(|i| ((t * 13 + i) as f64 * 0.37).sin() / 3.0).collect())
            .collect();
        let s = FnSeries::from_rows(g, &rows).unwrap();
        let p = dir.path().join("s.csv");
        write_series(&p, &s).unwrap();
        let back = read_series(&p).unwrap();
        assert_eq!(back.matrix(), s.matrix());
        assert_eq!(back.grid().nodes(), s.grid().nodes());
    }

    #[test]
    fn panel_ignores_nan_and_names_empty_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        let mut f = fs::File::create(&p).unwrap();
        writeln!(f, "1.5,2.5,NaN,3").unwrap();
        writeln!(f, "0.1,,0.2").unwrap();
        drop(f);
        let panel = read_panel(&p).unwrap();
        assert_eq!(panel.samples()[0], vec![1.5, 2.5, 3.0]);
        assert_eq!(panel.samples()[1], vec![0.1, 0.2]);
        let mut f = fs::OpenOptions::new().append(true).open(&p).unwrap();
        writeln!(f, "NaN,NaN").unwrap();
        drop(f);
        let err = read_panel(&p).unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
    }

    #[test]
    fn bad_cell_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, "0,0.5,1\n1,2,x\n").unwrap();
        let err = read_series(&p).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2") && msg.contains("column 3"), "{msg}");
    }

    #[test]
    fn nonuniform_grid_is_rejected() {
        assert!(grid_from_nodes(&[0.0, 0.3, 1.0]).is_err());
    }
}
