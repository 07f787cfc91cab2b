use std::fs;
use std::path::Path;

use fcoint::densities::estimate_densities;
use fcoint::io;
use fcoint::regress::{fit, shock_response};
use fcoint::simlab::run_table;
use fcoint::vrtest::sequential_dn;
use log::{info, warn};

use crate::config::RunConfig;
use crate::CliError;

pub fn ingest_density(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let panel_path = cfg.input("panel", &cfg.panel)?;
    if !(cfg.support_mass > 0.0 && cfg.support_mass < 1.0) {
        return Err(CliError::Config(format!("support_mass must lie in (0, 1), got {}", cfg.support_mass)));
    }
    if cfg.density_grid_n < 3 {
        return Err(CliError::Config("density_grid_n must be at least 3".into()));
    }
    let panel = io::read_panel(&panel_path)?;
    let dens = estimate_densities(&panel, cfg.support_mass, cfg.density_grid_n)?;
    let clr = dens.to_clr(cfg.floor_eps)?;
    io::write_series(&out.join("densities.csv"), dens.series())?;
    io::write_series(&out.join("clr.csv"), &clr)?;

    let g = dens.grid();
    let mut w = String::from("period,observations,bandwidth,support_lo,support_hi\n");
    for (t, (s, h)) in panel.samples().iter().zip(dens.bandwidths()).enumerate() {
        w.push_str(&format!("{},{},{},{},{}\n", t + 1, s.len(), h, g.a1(), g.a2()));
    }
    fs::write(out.join("provenance.csv"), w)?;
    println!(
        "ingested {} periods on [{}, {}] with {} nodes",
        panel.periods(),
        g.a1(),
        g.a2(),
        g.n()
    );
    Ok(())
}

pub fn estimate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let fit_cfg = cfg.fit_config()?;
    let x_path = cfg.input("x", &cfg.x)?;
    let y_path = cfg.input("y", &cfg.y)?;
    let zeta_path = cfg.optional_input("zeta", &cfg.zeta)?;
    let phi_path = cfg.optional_input("phi", &cfg.phi)?;
    if phi_path.is_some() && zeta_path.is_none() {
        return Err(CliError::Config("phi requires zeta".into()));
    }
    let x = io::read_series(&x_path)?;
    let y = io::read_series(&y_path)?;
    if x.len() != y.len() {
        return Err(CliError::Data(format!(
            "x has {} observations but y has {}",
            x.len(),
            y.len()
        )));
    }
    let result = fit(&x, &y, &fit_cfg).inspect_err(|e| {
        if let fcoint::Error::EmptyStationaryBlock { threshold } = e {
            warn!("K_S = 0 at threshold {threshold}");
        }
    })?;
    io::export_fit(out, &result)?;

    if let Some(zp) = zeta_path {
        let zeta = io::read_function(&zp)?;
        io::write_function(&out.join("partial_effect.csv"), &result.partial_effect(&zeta)?)?;
        let band = if cfg.breakpoints.is_empty() {
            result.pointwise_band(&zeta, cfg.level)?
        } else {
            result.local_band(&zeta, &cfg.breakpoints, cfg.level)?
        };
        io::write_inference(&out.join("band.csv"), &band)?;
        if let Some(pp) = phi_path {
            let phi = io::read_function(&pp)?;
            let ci = result.ci_scalar(&zeta, &phi, cfg.level)?;
            io::write_inference(&out.join("ci.csv"), &[ci])?;
        }
    }
    println!(
        "d_N = {}, K = {}, kappa = {}, threshold = {}",
        fit_cfg.d_n, result.selection.k, fit_cfg.kappa, result.selection.threshold
    );
    Ok(())
}

pub fn vr_test(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let vr = cfg.vr_config()?;
    let x = io::read_series(&cfg.input("x", &cfg.x)?)?;
    info!("variance-ratio test on {} observations", x.len());
    let report = sequential_dn(&x, &vr)?;
    io::write_vr_report(&out.join("vr_report.csv"), &report)?;
    println!("{:>4} {:>14} {:>10}", "d0", "statistic", "p-value");
    for r in &report.rows {
        println!("{:>4} {:>14.4} {:>10.4}", r.d0, r.stat, r.p_value);
    }
    println!("d_hat = {}", report.d_hat);
    Ok(())
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let spec = cfg.table_spec()?;
    let rows = run_table(&spec)?;
    io::write_table(&out.join("table.csv"), &rows)?;
    for r in &rows {
        println!(
            "{} {:>5} T={:<5} kappa={} {:<9} {:.4} (se {:.4}, failures {})",
            r.design, r.scale_pct, r.t, r.kappa, r.metric, r.value, r.mc_se, r.failures
        );
    }
    Ok(())
}

pub fn shock(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let fit_dir = cfg.input("fit_dir", &cfg.fit_dir)?;
    let y_ref = io::read_function(&cfg.input("y_ref", &cfg.y_ref)?)?;
    let zeta = io::read_function(&cfg.input("zeta", &cfg.zeta)?)?;
    if cfg.qs.is_empty() {
        return Err(CliError::Config("qs must be non-empty".into()));
    }
    let saved = io::load_fit(&fit_dir)?;
    let zeta = fcoint::GridFn::new(saved.f_total.domain().clone(), zeta.into_values())
        .map_err(|e| CliError::Data(format!("zeta: {e}")))?;
    let y_ref = fcoint::GridFn::new(saved.f_total.codomain().clone(), y_ref.into_values())
        .map_err(|e| CliError::Data(format!("y_ref: {e}")))?;
    let points = shock_response(&saved.f_total, &y_ref, &zeta, &cfg.qs)?;
    io::write_shock(out, &points)?;
    for p in &points {
        println!("q = {}: mean {:.6}, variance {:.6}", p.q, p.mean, p.variance);
    }
    Ok(())
}
