//! `evm` — scenario runner and verification harness for the rescaled
//! Einstein–Vlasov–Maxwell simulator.

mod config;
mod report;

use clap::{Parser, Subcommand, ValueEnum};
use config::RunConfig;
use evm::error::EvmError;
use evm::evolution::{EvolutionConfig, SectorMask};
use evm::scenario::{
    build_perturbed_state, decay_summary, gronwall_measure, milne_state, run_series,
    PerturbationSpec,
};
use evm::energy::EnergyWeights;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(
    name = "evm",
    about = "Rescaled Einstein-Vlasov-Maxwell desk simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured scenario, writing series.csv and summary.json.
    Run {
        #[arg(long, required_unless_present = "example_config")]
        config: Option<PathBuf>,
        /// Print a template configuration and exit.
        #[arg(long)]
        example_config: bool,
    },
    /// Run a randomized identity suite and report the maximum residual.
    Verify {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        checks: usize,
    },
    /// Evolve exact background data and verify it stays put.
    FixedPoint {
        #[arg(long, default_value = "runs/fixed-point")]
        out: PathBuf,
    },
    /// Run a reduced sector against the full path with the other sector
    /// switched off by its coupling, and report the trajectory drift.
    Reduce {
        #[arg(value_enum)]
        which: Reduction,
        #[arg(long, default_value = "runs/reduce")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Identities,
    Commutators,
    Moments,
}

#[derive(Clone, Copy, ValueEnum)]
enum Reduction {
    VlasovOnly,
    MaxwellOnly,
}

fn main() -> ExitCode {
    evm::threads::configure_from_env();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let class = error_class(&err);
            println!(
                "{{\"status\":\"error\",\"class\":\"{class}\",\"message\":{}}}",
                serde_json::to_string(&err.to_string()).unwrap_or_else(|_| "\"\"".into())
            );
            ExitCode::FAILURE
        }
    }
}

fn error_class(err: &EvmError) -> &'static str {
    match err {
        EvmError::SingularMetric(_) => "SingularMetric",
        EvmError::LapsePositivityViolation(_) => "LapsePositivityViolation",
        EvmError::ShiftTooLarge(_) => "ShiftTooLarge",
        EvmError::SupportOverflow(_) => "SupportOverflow",
        EvmError::GaugeProjectionFailed(_) => "GaugeProjectionFailed",
        EvmError::EllipticSolvability(_) => "EllipticSolvability",
        EvmError::SolverDiverged(_) => "SolverDiverged",
        EvmError::InvalidWeights(_) => "InvalidWeights",
        EvmError::FitDomain(_) => "FitDomain",
        EvmError::Config(_) => "Config",
    }
}

fn dispatch(cli: Cli) -> Result<(), EvmError> {
    match cli.command {
        Command::Run {
            config,
            example_config,
        } => {
            if example_config {
                let text = toml::to_string_pretty(&RunConfig::example())
                    .map_err(|e| EvmError::Config(e.to_string()))?;
                print!("{text}");
                Ok(())
            } else {
                run_command(config.as_deref().expect("clap enforces --config"))
            }
        }
        Command::Verify {
            suite,
            seed,
            checks,
        } => verify_command(suite, seed, checks),
        Command::FixedPoint { out } => fixed_point_command(&out),
        Command::Reduce { which, out } => reduce_command(which, &out),
    }
}

fn run_command(path: &Path) -> Result<(), EvmError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| EvmError::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg = RunConfig::parse(&text).map_err(EvmError::Config)?;
    let bg = Arc::new(evm::BackgroundGeometry::hyperbolic());
    let spec = PerturbationSpec {
        delta0: cfg.perturbation.amplitude,
        charge: cfg.charge,
        lattice_n: cfg.lattice.n,
        lattice_extent: cfg.lattice.extent,
        tau0: cfg.tau0,
        seed: cfg.seed,
    };
    let state = if cfg.perturbation.amplitude == 0.0 {
        let lattice = evm::kinetic::MomentumLattice::new(cfg.lattice.n, cfg.lattice.extent)?;
        evm::evolution::SliceState::milne(bg, lattice, cfg.tau0, cfg.charge)
    } else {
        build_perturbed_state(bg, &spec)?
    };
    let weights =
        EnergyWeights::for_background(&state.bg, cfg.weights.delta_e, cfg.weights.delta_cal)?;
    let mut run_cfg = EvolutionConfig::new(cfg.time.dt, cfg.time.t_start, cfg.time.t_end)?;
    if cfg.sectors.vlasov_only {
        run_cfg.mask = SectorMask::vlasov_only();
    } else if cfg.sectors.maxwell_only {
        run_cfg.mask = SectorMask::maxwell_only();
    }
    let series = run_series(state, &run_cfg, &weights, cfg.time.output_every, Vec::new())?;
    let dir = PathBuf::from(&cfg.output.dir);
    report::write_series(&dir, &series.rows)?;
    let decay = decay_summary(&series.rows).ok();
    let gronwall = gronwall_measure(&series.rows).ok();
    report::write_summary(&dir, &cfg, &series.rows, decay.as_ref(), gronwall.as_ref())?;
    println!(
        "wrote {} rows to {} (summary.json alongside)",
        series.rows.len(),
        dir.join("series.csv").display()
    );
    Ok(())
}

fn verify_command(suite: Suite, seed: u64, checks: usize) -> Result<(), EvmError> {
    match suite {
        Suite::Identities => {
            let a = evm::verify::suite_difference_tensor(seed, checks)?;
            let c = evm::verify::suite_sasaki(seed.wrapping_add(1), checks)?;
            let e = evm::verify::suite_vertical(seed.wrapping_add(2), checks)?;
            let g = evm::verify::suite_time_derivatives(seed.wrapping_add(3), checks)?;
            let max = a.max(c).max(e).max(g);
            println!(
                "{{\"suite\":\"identities\",\"difference_tensor\":{a:e},\"sasaki\":{c:e},\"vertical\":{e:e},\"time_derivatives\":{g:e},\"max\":{max:e},\"pass\":{}}}",
                max <= 1e-5
            );
            if max > 1e-5 {
                return Err(EvmError::Config(format!("identity residual {max:e}")));
            }
        }
        Suite::Commutators => {
            let rep = evm::verify::suite_commutators(seed, checks.min(400));
            println!(
                "{{\"suite\":\"commutators\",\"max\":{:e},\"pass\":{}}}",
                rep.max(),
                rep.max() <= 1e-5
            );
            if rep.max() > 1e-5 {
                return Err(EvmError::Config(format!(
                    "commutator residual {:e}",
                    rep.max()
                )));
            }
        }
        Suite::Moments => {
            let m = evm::verify::suite_moments(seed, checks)?;
            println!(
                "{{\"suite\":\"moments\",\"max\":{m:e},\"pass\":{}}}",
                m <= 1e-4
            );
            if m > 1e-4 {
                return Err(EvmError::Config(format!("moment residual {m:e}")));
            }
        }
    }
    Ok(())
}

fn fixed_point_command(out: &Path) -> Result<(), EvmError> {
    let state = milne_state(9, -3.0)?;
    let weights = EnergyWeights::for_background(&state.bg, 0.01, 0.02)?;
    let cfg = EvolutionConfig::new(0.05, 0.0, 5.0)?;
    let series = run_series(state, &cfg, &weights, 10, Vec::new())?;
    report::write_series(out, &series.rows)?;
    let mut worst: f64 = 0.0;
    for row in &series.rows {
        worst = worst.max(row.e_tot.abs());
        worst = worst.max((row.n_max - 3.0).abs());
        worst = worst.max(row.x_norm);
        worst = worst.max(row.psi_norm);
    }
    println!(
        "{{\"scenario\":\"fixed-point\",\"max_drift\":{worst:e},\"pass\":{}}}",
        worst <= 1e-10
    );
    if worst > 1e-10 {
        return Err(EvmError::Config(format!("fixed point drift {worst:e}")));
    }
    Ok(())
}

fn reduce_command(which: Reduction, out: &Path) -> Result<(), EvmError> {
    let bg = Arc::new(evm::BackgroundGeometry::hyperbolic());
    let (spec, mask) = match which {
        Reduction::VlasovOnly => (
            PerturbationSpec {
                charge: 0.0,
                lattice_n: 21,
                seed: 7,
                tau0: -1.0,
                ..Default::default()
            },
            SectorMask::vlasov_only(),
        ),
        Reduction::MaxwellOnly => (
            PerturbationSpec {
                lattice_n: 21,
                seed: 7,
                tau0: -1.0,
                ..Default::default()
            },
            SectorMask::maxwell_only(),
        ),
    };
    let mut state = build_perturbed_state(bg, &spec)?;
    match which {
        Reduction::VlasovOnly => {
            state.pot = evm::maxwell::PotentialState::zero(1);
        }
        Reduction::MaxwellOnly => {
            let lattice = state.dist.lattice.clone();
            state.dist = evm::kinetic::DistributionGrid::zero(lattice, 1);
        }
    }
    let mut cfg_full = EvolutionConfig::new(0.01, 0.0, 0.5)?;
    cfg_full.mask = SectorMask::full();
    let mut cfg_reduced = cfg_full.clone();
    cfg_reduced.mask = mask;
    let weights = EnergyWeights::for_background(&state.bg, 0.01, 0.02)?;
    let full = run_series(state.clone(), &cfg_full, &weights, 5, Vec::new())?;
    let reduced = run_series(state, &cfg_reduced, &weights, 5, Vec::new())?;
    report::write_series(out, &full.rows)?;
    let drift = state_drift(&full.final_state, &reduced.final_state);
    println!(
        "{{\"scenario\":\"reduce\",\"drift\":{drift:e},\"pass\":{}}}",
        drift <= 1e-12
    );
    if drift > 1e-12 {
        return Err(EvmError::Config(format!("reduction drift {drift:e}")));
    }
    Ok(())
}

fn state_drift(a: &evm::evolution::SliceState, b: &evm::evolution::SliceState) -> f64 {
    let mut d: f64 = 0.0;
    for s in 0..a.bg.sample_count() {
        for i in 0..3 {
            for j in 0..3 {
                d = d.max((a.metric.g[s][i][j] - b.metric.g[s][i][j]).abs());
                d = d.max((a.sigma.sigma[s][i][j] - b.sigma.sigma[s][i][j]).abs());
            }
            d = d.max((a.pot.omega[s][i] - b.pot.omega[s][i]).abs());
            d = d.max((a.pot.omega_dot[s][i] - b.pot.omega_dot[s][i]).abs());
        }
        for (x, y) in a.dist.values[s].iter().zip(b.dist.values[s].iter()) {
            d = d.max((x - y).abs());
        }
    }
    d
}
