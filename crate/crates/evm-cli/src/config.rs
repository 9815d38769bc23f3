//! Run configuration: versioned TOML with unknown keys rejected.

use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// "homogeneous-hyperbolic" (the physics backend).
    pub backend: String,
    pub seed: u64,
    pub charge: f64,
    pub tau0: f64,
    pub lattice: LatticeConfig,
    pub weights: WeightsConfig,
    pub perturbation: PerturbationConfig,
    pub time: TimeConfig,
    pub output: OutputConfig,
    #[serde(default)]
    pub sectors: SectorConfig,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub n: usize,
    pub extent: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    pub delta_e: f64,
    pub delta_cal: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    pub amplitude: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
    pub output_every: usize,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SectorConfig {
    #[serde(default)]
    pub vlasov_only: bool,
    #[serde(default)]
    pub maxwell_only: bool,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            ));
        }
        if cfg.backend != "homogeneous-hyperbolic" {
            return Err(format!(
                "unsupported backend '{}' for scenario runs",
                cfg.backend
            ));
        }
        if cfg.perturbation.amplitude < 0.0 {
            return Err("perturbation amplitude must be nonnegative".into());
        }
        Ok(cfg)
    }

    pub fn example() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            backend: "homogeneous-hyperbolic".into(),
            seed: 1,
            charge: 1.0,
            tau0: -3.0,
            lattice: LatticeConfig {
                n: 21,
                extent: 1.2,
            },
            weights: WeightsConfig {
                delta_e: 0.01,
                delta_cal: 0.02,
            },
            perturbation: PerturbationConfig { amplitude: 1e-3 },
            time: TimeConfig {
                t_start: 0.0,
                t_end: 10.0,
                dt: 0.01,
                output_every: 20,
            },
            output: OutputConfig {
                dir: "runs/example".into(),
            },
            sectors: SectorConfig::default(),
        }
    }
}
