//! CSV and JSON emission with a fixed, versioned column order. Floats are
//! written with full precision so identical configs and seeds reproduce
//! byte-identical files.

use crate::config::RunConfig;
use evm::error::{EvmError, Result};
use evm::scenario::{DecaySummary, GronwallReport, RunRow};
use std::io::Write;
use std::path::Path;

pub const CSV_COLUMNS: &str = "T,tau,e1,e2,cal_e,bb_e1,bb_e2,f_norm,varrho,support_g,abs_tau_g,e_tot,smallness,res_hamiltonian,res_momentum,res_div_rho,res_div_j,res_gauge,n_min,n_max,x_norm,g_dev,sigma_norm,n_dev,psi_norm,gauss_defect,min_f,equiv_ratio";

fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

pub fn write_series(dir: &Path, rows: &[RunRow]) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| EvmError::Config(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join("series.csv");
    let mut out = std::fs::File::create(&path)
        .map_err(|e| EvmError::Config(format!("cannot create {}: {e}", path.display())))?;
    writeln!(out, "{CSV_COLUMNS}").map_err(io_err)?;
    for r in rows {
        let cols = [
            r.t_log,
            r.tau,
            r.e1,
            r.e2,
            r.cal_e,
            r.bb_e1,
            r.bb_e2,
            r.f_norm,
            r.varrho,
            r.support,
            r.abs_tau_support,
            r.e_tot,
            r.smallness,
            r.res_hamiltonian,
            r.res_momentum,
            r.res_div_rho,
            r.res_div_j,
            r.res_gauge,
            r.n_min,
            r.n_max,
            r.x_norm,
            r.g_dev_norm,
            r.sigma_norm,
            r.n_dev_norm,
            r.psi_norm,
            r.gauss_defect,
            r.min_f,
            r.equivalence_ratio,
        ];
        let line: Vec<String> = cols.iter().map(|v| fmt(*v)).collect();
        writeln!(out, "{}", line.join(",")).map_err(io_err)?;
    }
    Ok(())
}

fn io_err(e: std::io::Error) -> EvmError {
    EvmError::Config(format!("io error: {e}"))
}

pub fn write_summary(
    dir: &Path,
    cfg: &RunConfig,
    rows: &[RunRow],
    decay: Option<&DecaySummary>,
    gronwall: Option<&GronwallReport>,
) -> Result<()> {
    let status = if rows.is_empty() { "no-data" } else { "ok" };
    let fit_json = |f: &evm::energy::DecayFit| {
        serde_json::json!({
            "exponent": f.exponent,
            "band": f.band,
            "samples": f.samples,
        })
    };
    let decay_json = decay.map(|d| {
        serde_json::json!({
            "g_dev": fit_json(&d.g_dev),
            "sigma": fit_json(&d.sigma),
            "n_dev": fit_json(&d.n_dev),
            "shift": fit_json(&d.shift),
            "cal_e": fit_json(&d.cal_e),
            "bb_e": fit_json(&d.bb_e),
            "varrho": fit_json(&d.varrho),
            "abs_tau_support_monotone": d.tau_support_monotone,
        })
    });
    let gronwall_json = gronwall.map(|g| {
        serde_json::json!({
            "epsilon": g.epsilon,
            "c_bar": g.c_bar,
            "fraction_ok": g.fraction_ok,
            "integrated_bound_ok": g.integrated_bound_ok,
            "integrated_margin": g.integrated_margin,
        })
    });
    let max_res = rows.iter().fold((0.0f64, 0.0f64, 0.0f64), |acc, r| {
        (
            acc.0.max(r.res_hamiltonian),
            acc.1.max(r.res_momentum),
            acc.2.max(r.res_gauge),
        )
    });
    let summary = serde_json::json!({
        "schema_version": crate::config::SCHEMA_VERSION,
        "status": status,
        "seed": cfg.seed,
        "rows": rows.len(),
        "decay_fits": decay_json,
        "gronwall": gronwall_json,
        "max_residuals": {
            "hamiltonian": max_res.0,
            "momentum": max_res.1,
            "gauge_cmcsh": max_res.2,
        },
        "config": cfg,
    });
    let path = dir.join("summary.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&summary).map_err(|e| EvmError::Config(e.to_string()))?,
    )
    .map_err(io_err)?;
    Ok(())
}
