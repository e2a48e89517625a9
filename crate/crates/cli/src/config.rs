use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use privshare_core::econ::EconParams;
use privshare_core::grid::{CountMode, GridSpec};
use privshare_core::optimize::{Bounds, SweepParameter};
use privshare_core::privacy::default_frequency_ladder;
use privshare_core::trajectory::SyntheticConfig;
use privshare_core::utility::AverageOver;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Trace CSV; when absent, commands that need traces fall back to
    /// synthetic data only if `--synthetic` is given.
    pub traces: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub grid: GridSpec,
    pub econ: EconParams,
    pub bounds: Bounds,
    pub optimizer: OptimizerConfig,
    pub synthetic: SyntheticRun,
    pub calibration: CalibrationConfig,
    pub utility_surface: SurfaceConfig,
    pub sweep: SweepConfig,
    pub simulation: SimulationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            traces: None,
            out_dir: PathBuf::from("out"),
            seed: 42,
            grid: GridSpec::default(),
            econ: EconParams::default(),
            bounds: Bounds::default(),
            optimizer: OptimizerConfig::default(),
            synthetic: SyntheticRun::default(),
            calibration: CalibrationConfig::default(),
            utility_surface: SurfaceConfig::default(),
            sweep: SweepConfig::default(),
            simulation: SimulationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub n_starts: usize,
    /// Points per axis of the certifying grid oracle; 0 skips it.
    pub oracle_resolution: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            n_starts: 32,
            oracle_resolution: 41,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticRun {
    pub vehicles: usize,
    /// Minutes, one sample per minute.
    pub duration: usize,
    pub walk: SyntheticConfig,
}

impl Default for SyntheticRun {
    fn default() -> Self {
        Self {
            vehicles: 200,
            duration: 120,
            walk: SyntheticConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub frequencies: Vec<f64>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            frequencies: default_frequency_ladder(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceConfig {
    pub vehicle_counts: Vec<usize>,
    pub frequencies: Vec<f64>,
    pub count_mode: CountMode,
    pub average_over: AverageOver,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self {
            vehicle_counts: vec![10, 25, 50, 100, 200],
            frequencies: vec![1.0, 0.5, 0.25, 0.125, 0.1],
            count_mode: CountMode::default(),
            average_over: AverageOver::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            parameter: SweepParameter::C2,
            values: vec![2.5e-7, 5e-7, 1e-6, 2e-6, 4e-6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Sampling frequency and server count of the aggregation run.
    pub f_d: f64,
    pub servers: usize,
    pub compromised: usize,
    /// Grid of the empirical privacy curve.
    pub curve_frequencies: Vec<f64>,
    pub curve_servers: Vec<usize>,
    pub curve_seeds: usize,
    /// Share matrices above this many elements are left out of the
    /// transcript unless `--keep-shares` is given.
    pub share_elision_threshold: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            f_d: 0.5,
            servers: 4,
            compromised: 1,
            curve_frequencies: default_frequency_ladder(),
            curve_servers: vec![1, 2, 4, 8],
            curve_seeds: 5,
            share_elision_threshold: 100_000,
        }
    }
}

impl RunConfig {
    /// Reads a config file. A `manifest.json` from an earlier run is also
    /// accepted; its recorded config is used.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let value = match value.get("config") {
            Some(inner) if value.get("config_sha256").is_some() => inner.clone(),
            _ => value,
        };
        serde_json::from_value(value).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.econ.validate()?;
        self.bounds.validate()?;
        self.synthetic.walk.bbox.validate()?;
        if let Some(path) = &self.traces {
            if !path.is_file() {
                bail!("trace file {} does not exist", path.display());
            }
        }
        if self.optimizer.n_starts == 0 {
            bail!("optimizer.n_starts must be at least 1");
        }
        if self.optimizer.oracle_resolution == 1 {
            bail!("optimizer.oracle_resolution must be 0 or at least 2");
        }
        if self.synthetic.vehicles == 0 || self.synthetic.duration < 2 {
            bail!("synthetic data needs at least 1 vehicle and 2 minutes");
        }
        let sim = &self.simulation;
        if sim.servers == 0 || sim.compromised == 0 || sim.compromised > sim.servers {
            bail!("simulation needs 1 <= compromised <= servers");
        }
        if !(sim.f_d > 0.0 && sim.f_d.is_finite()) {
            bail!("simulation.f_d must be positive");
        }
        if sim.curve_servers.iter().any(|&s| s < sim.compromised) || sim.curve_seeds == 0 {
            bail!("every curve server count must be at least `compromised`, and curve_seeds at least 1");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}
