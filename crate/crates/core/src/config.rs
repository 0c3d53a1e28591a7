//! Experiment configuration, read from TOML.
//!
//! ```toml
//! scenario = "diffusion"        # colocated | diffusion | dcs2
//! runs = 100                    # runs per symbol
//! horizon = 40.0                # s
//! master_seed = 1
//! methods = ["history-filter", "molecular-circuit", "one-sample"]
//!
//! [decision]
//! step = 0.5                    # grid step, s; or give `times = [...]`
//!
//! [receptors]
//! g_plus = 0.135
//! g_minus = 1.0
//! count = 40
//!
//! [grid]
//! dims = [6, 6, 3]
//! voxel_edge = 0.3333333333333333
//! diffusion = 1.0
//! transmitter = [1, 2, 1]
//! receiver = [4, 2, 1]
//! escape_divisor = 50.0
//!
//! [emission]
//! rates = [150.0, 600.0]
//! on_duration = 20.0
//! basal_rate = 0.0
//! ```
//!
//! The co-located scenario instead gives `[symbols]` with `amplitudes`,
//! `off_level` and `duration`; the sections `[reference]`, `[circuit]`,
//! `[hill]` and `[dcs2]` are optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dcs2::{Dcs2FitConfig, FixedRates};
use crate::hill::HillFitConfig;
use crate::rdme::{EmissionSchedule, ReceptorParams, VoxelGrid};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Colocated,
    Diffusion,
    Dcs2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    HistoryFilter,
    MolecularCircuit,
    OneSample,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::HistoryFilter => "history-filter",
            Method::MolecularCircuit => "molecular-circuit",
            Method::OneSample => "one-sample",
        }
    }
}

/// Decision instants: either explicit `times` or a grid `start, start+step,
/// ...` up to `end` (default: the horizon).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionGrid {
    pub step: f64,
    pub start: Option<f64>,
    pub end: Option<f64>,
    pub times: Option<Vec<f64>>,
}

impl Default for DecisionGrid {
    fn default() -> Self {
        Self {
            step: 0.5,
            start: None,
            end: None,
            times: None,
        }
    }
}

impl DecisionGrid {
    pub fn times(&self, horizon: f64) -> Vec<f64> {
        if let Some(t) = &self.times {
            return t.clone();
        }
        let start = self.start.unwrap_or(self.step);
        let end = self.end.unwrap_or(horizon);
        let n = ((end - start) / self.step + 1e-9).floor();
        if !(n >= 0.0) {
            return Vec::new();
        }
        (0..=n as usize).map(|i| start + i as f64 * self.step).collect()
    }
}

/// Co-located alphabet; amplitudes are derived from the channel when
/// diffusion is simulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolConfig {
    #[serde(default)]
    pub amplitudes: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub off_level: f64,
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(default)]
    pub priors: Option<Vec<f64>>,
}

impl Default for SymbolConfig {
    fn default() -> Self {
        Self {
            amplitudes: None,
            off_level: 1.0,
            duration: None,
            priors: None,
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    /// sigma_k(t) from the mean-field lattice ODE.
    MeanField,
    /// Rectangular a_k then the OFF level.
    Rectangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub kind: ReferenceKind,
    /// Sampling step of the mean-field reference, s.
    pub dt: f64,
    /// Lower bound of the rectangular OFF level.
    pub floor: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            kind: ReferenceKind::MeanField,
            dt: 0.01,
            floor: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CircuitInput {
    /// Instantaneous receiver-voxel count n_R(t).
    ReceiverCount,
    /// Rectangular profile of the transmitted symbol.
    Clamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircuitConfig {
    pub k_a: f64,
    pub input: CircuitInput,
}

impl Default for CircuitConfig {
    fn default() -> Self {
        Self {
            k_a: 1.0,
            input: CircuitInput::ReceiverCount,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dcs2Config {
    /// Reporter CSV (time column plus one column per profile).
    #[serde(default)]
    pub data: Option<PathBuf>,
    /// Input CSV with the same columns as `data`.
    #[serde(default)]
    pub inputs: Option<PathBuf>,
    #[serde(default)]
    pub fixed: Option<FixedRates>,
    #[serde(default)]
    pub fit: Option<Dcs2FitConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Sampling step of exported paths and filters, s.
    #[serde(default = "default_sample_dt")]
    pub sample_dt: f64,
    /// Runs per symbol whose trajectories and filters are exported.
    #[serde(default = "default_saved")]
    pub saved_runs: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub decision: DecisionGrid,
    #[serde(default)]
    pub symbols: SymbolConfig,
    #[serde(default)]
    pub receptors: Option<ReceptorParams>,
    #[serde(default)]
    pub grid: Option<VoxelGrid>,
    #[serde(default)]
    pub emission: Option<EmissionSchedule>,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub circuit: CircuitConfig,
    #[serde(default)]
    pub hill: HillFitConfig,
    #[serde(default)]
    pub dcs2: Option<Dcs2Config>,
}

fn default_runs() -> usize {
    100
}
fn default_seed() -> u64 {
    1
}
fn default_sample_dt() -> f64 {
    0.1
}
fn default_saved() -> usize {
    1
}
fn default_methods() -> Vec<Method> {
    vec![Method::HistoryFilter, Method::MolecularCircuit, Method::OneSample]
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: Self = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Canonical TOML form, used for the output snapshot.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Co-located receptor example: a = 11 / 58, d = 50 s, b = 1,
    /// g+ = 0.02, g- = 0.5, M = 100.
    pub fn colocated_reference() -> Self {
        Self {
            scenario: Scenario::Colocated,
            runs: 100,
            horizon: Some(60.0),
            master_seed: 1,
            output_dir: None,
            sample_dt: 0.1,
            saved_runs: 1,
            methods: default_methods(),
            decision: DecisionGrid::default(),
            symbols: SymbolConfig {
                amplitudes: Some(vec![11.0, 58.0]),
                off_level: 1.0,
                duration: Some(50.0),
                priors: None,
            },
            receptors: Some(ReceptorParams {
                g_plus: 0.02,
                g_minus: 0.5,
                count: 100,
            }),
            grid: None,
            emission: None,
            reference: ReferenceConfig::default(),
            circuit: CircuitConfig {
                k_a: 1.0,
                input: CircuitInput::Clamped,
            },
            hill: HillFitConfig::default(),
            dcs2: None,
        }
    }

    /// Lattice channel: 6 x 6 x 3 voxels, rates 150 / 600 for 20 s,
    /// g+ = 0.005 / W^3, g- = 1, k_a = 1.
    pub fn diffusion_reference(receptors: u32) -> Self {
        let grid = VoxelGrid::standard();
        let w3 = grid.voxel_edge.powi(3);
        Self {
            scenario: Scenario::Diffusion,
            runs: 100,
            horizon: Some(40.0),
            master_seed: 1,
            output_dir: None,
            sample_dt: 0.1,
            saved_runs: 1,
            methods: default_methods(),
            decision: DecisionGrid::default(),
            symbols: SymbolConfig::default(),
            receptors: Some(ReceptorParams {
                g_plus: 0.005 / w3,
                g_minus: 1.0,
                count: receptors,
            }),
            grid: Some(grid),
            emission: Some(EmissionSchedule {
                rates: vec![150.0, 600.0],
                on_duration: 20.0,
                basal_rate: 0.0,
            }),
            reference: ReferenceConfig::default(),
            circuit: CircuitConfig::default(),
            hill: HillFitConfig::default(),
            dcs2: None,
        }
    }

    /// Promoter-model fit on the synthetic profiles.
    pub fn dcs2_reference() -> Self {
        Self {
            scenario: Scenario::Dcs2,
            runs: 1,
            horizon: None,
            master_seed: 1,
            output_dir: None,
            sample_dt: 0.1,
            saved_runs: 1,
            methods: default_methods(),
            decision: DecisionGrid::default(),
            symbols: SymbolConfig::default(),
            receptors: None,
            grid: None,
            emission: None,
            reference: ReferenceConfig::default(),
            circuit: CircuitConfig::default(),
            hill: HillFitConfig::default(),
            dcs2: Some(Dcs2Config::default()),
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon.unwrap_or(match self.scenario {
            Scenario::Colocated => 60.0,
            Scenario::Diffusion => 40.0,
            Scenario::Dcs2 => 157.5,
        })
    }

    pub fn decision_times(&self) -> Vec<f64> {
        self.decision.times(self.horizon())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.runs < 1 {
            return bad("runs must be at least 1".into());
        }
        let h = self.horizon();
        if !(h > 0.0 && h.is_finite()) {
            return bad("horizon must be positive".into());
        }
        if !(self.sample_dt > 0.0) {
            return bad("sample_dt must be positive".into());
        }
        if self.decision.times.is_none() && !(self.decision.step > 0.0) {
            return bad("decision.step must be positive".into());
        }
        let times = self.decision_times();
        if self.scenario != Scenario::Dcs2 && times.is_empty() {
            return bad("no decision times".into());
        }
        if let Some(t) = times.iter().find(|&&t| !(0.0..=h + 1e-9).contains(&t)) {
            return bad(format!("decision time {t} lies outside [0, {h}]"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return bad("decision times must increase".into());
        }
        if !(self.circuit.k_a > 0.0 && self.circuit.k_a.is_finite()) {
            return bad("circuit.k_a must be positive".into());
        }
        if !(self.reference.floor > 0.0) {
            return bad("reference.floor must be positive".into());
        }
        if !(self.reference.dt > 0.0) {
            return bad("reference.dt must be positive".into());
        }
        match self.scenario {
            Scenario::Colocated => {
                if self.receptors.is_none() {
                    return bad("colocated scenario needs [receptors]".into());
                }
                if self.symbols.amplitudes.is_none() || self.symbols.duration.is_none() {
                    return bad("colocated scenario needs symbols.amplitudes and symbols.duration".into());
                }
            }
            Scenario::Diffusion => {
                if self.receptors.is_none() || self.grid.is_none() || self.emission.is_none() {
                    return bad("diffusion scenario needs [receptors], [grid] and [emission]".into());
                }
                let e = self.emission.as_ref().expect("checked");
                if let Some(p) = &self.symbols.priors {
                    if p.len() != e.rates.len() {
                        return bad("one prior per emission rate is required".into());
                    }
                }
            }
            Scenario::Dcs2 => {}
        }
        if let Some(r) = &self.receptors {
            r.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if let Some(g) = &self.grid {
            g.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if let Some(e) = &self.emission {
            e.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for c in [
            ExperimentConfig::colocated_reference(),
            ExperimentConfig::diffusion_reference(40),
        ] {
            c.validate().unwrap();
            let text = c.to_toml();
            let back = ExperimentConfig::from_toml(&text).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_toml(), text);
        }
    }

    #[test]
    fn minimal_diffusion_file() {
        let text = r#"
            scenario = "diffusion"
            [receptors]
            g_plus = 0.135
            g_minus = 1.0
            count = 10
            [grid]
            dims = [6, 6, 3]
            voxel_edge = 0.3333333333333333
            diffusion = 1.0
            transmitter = [1, 2, 1]
            receiver = [4, 2, 1]
            escape_divisor = 50.0
            [emission]
            rates = [150.0, 600.0]
            on_duration = 20.0
            basal_rate = 0.0
        "#;
        let c = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(c.runs, 100);
        assert_eq!(c.methods.len(), 3);
        let t = c.decision_times();
        assert_eq!(t.len(), 80);
        assert_eq!(t[0], 0.5);
        assert_eq!(*t.last().unwrap(), 40.0);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml("scenario = \"colocated\"").is_err());
        assert!(ExperimentConfig::from_toml("scenario = \"elsewhere\"").is_err());
        let mut c = ExperimentConfig::colocated_reference();
        c.runs = 0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::colocated_reference();
        c.decision.times = Some(vec![10.0, 70.0]);
        assert!(c.validate().is_err());
        let text = format!("bogus = 1\n{}", ExperimentConfig::colocated_reference().to_toml());
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }
}
