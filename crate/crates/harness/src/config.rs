//! Experiment configuration (TOML). Every table rejects unknown keys.

use std::path::{Path, PathBuf};

use lhuc::synth::{BumpSpec, ClusterTaskSpec, MixtureSpec};
use lhuc::{AdaptConfig, FactorisedConfig, NewbobConfig, SatConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::checkpoint::CRC64;
use crate::error::{io_err, HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    TrainSi,
    TrainSat,
    Adapt,
    TwoPass,
    OneShot,
    Factorised,
    BumpDemo,
    Gradcheck,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::TrainSi => "train_si",
            Self::TrainSat => "train_sat",
            Self::Adapt => "adapt",
            Self::TwoPass => "two_pass",
            Self::OneShot => "one_shot",
            Self::Factorised => "factorised",
            Self::BumpDemo => "bump_demo",
            Self::Gradcheck => "gradcheck",
        }
    }
}

/// Hidden layer widths of the classifier; input and output widths come
/// from the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 64] }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoPassConfig {
    /// Also train a SAT-LHUC model and adapt it with the same protocol.
    pub compare_sat: bool,
    /// Also adapt on the reference labels.
    pub compare_supervised: bool,
}

/// Sweeps over adaptation settings on the held-out speakers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptStudyConfig {
    /// Number of held-out speakers to use; 0 means all.
    pub speakers: usize,
    /// Largest number of adaptation sweeps in the iteration curve.
    pub max_sweeps: usize,
    /// Fractions of each speaker's data (temporal prefix) used for adaptation.
    pub fractions: Vec<f64>,
    /// Corruption rates of the adaptation targets.
    pub corruption_rates: Vec<f64>,
}

impl Default for AdaptStudyConfig {
    fn default() -> Self {
        Self {
            speakers: 0,
            max_sweeps: 4,
            fractions: vec![0.1, 0.25, 0.5, 1.0],
            corruption_rates: vec![0.0, 0.1, 0.3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OneShotConfig {
    /// Held-out speakers recorded in both sessions.
    pub speakers: usize,
    /// Session id of the reuse session (the task's own session is the first).
    pub session_b: u64,
}

impl Default for OneShotConfig {
    fn default() -> Self {
        Self { speakers: 10, session_b: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BumpDemoConfig {
    pub hidden_units: usize,
    /// Input-weight magnitude of the spread initialisation; 0 keeps the
    /// plain random initialisation.
    pub init_gain: f64,
    /// Seeds of the mixture (SAT-LHUC) comparison; each seeds both data and
    /// initialisation.
    pub mixture_seeds: Vec<u64>,
    pub train: TrainConfig,
    pub adapt: AdaptConfig,
    pub sat: SatConfig,
    pub spec: BumpSpec,
    pub mixture: MixtureSpec,
}

impl Default for BumpDemoConfig {
    fn default() -> Self {
        Self {
            hidden_units: 4,
            init_gain: 4.0,
            mixture_seeds: vec![1, 2, 3, 4, 5],
            train: TrainConfig {
                initial_lr: 0.3,
                batch_size: 8,
                max_epochs: 3000,
                newbob: NewbobConfig {
                    ramp_threshold: 1e-4,
                    stop_threshold: 1e-6,
                    ..NewbobConfig::default()
                },
                ..TrainConfig::default()
            },
            adapt: AdaptConfig {
                sweeps: 20,
                batch_size: 8,
                ..AdaptConfig::default()
            },
            sat: SatConfig::default(),
            spec: BumpSpec::default(),
            mixture: MixtureSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub cases: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { cases: 25 }
    }
}

/// One experiment. `seed` drives network initialisation; data and training
/// randomness come from the seeds of the nested sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Experiment id written into every metric record; defaults to the kind.
    #[serde(default)]
    pub name: Option<String>,
    pub output_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sat: SatConfig,
    #[serde(default)]
    pub adapt: AdaptConfig,
    #[serde(default)]
    pub task: ClusterTaskSpec,
    #[serde(default)]
    pub two_pass: TwoPassConfig,
    #[serde(default)]
    pub study: AdaptStudyConfig,
    #[serde(default)]
    pub one_shot: OneShotConfig,
    #[serde(default)]
    pub factorised: FactorisedConfig,
    #[serde(default)]
    pub bump: BumpDemoConfig,
    #[serde(default)]
    pub gradcheck: GradcheckConfig,
}

fn default_seed() -> u64 {
    1
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            kind,
            name: None,
            output_dir: output_dir.into(),
            seed: default_seed(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            sat: SatConfig::default(),
            adapt: AdaptConfig::default(),
            task: ClusterTaskSpec::default(),
            two_pass: TwoPassConfig::default(),
            study: AdaptStudyConfig::default(),
            one_shot: OneShotConfig::default(),
            factorised: FactorisedConfig::default(),
            bump: BumpDemoConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }

    pub fn experiment_id(&self) -> &str {
        self.name.as_deref().unwrap_or(self.kind.name())
    }

    /// Checks every section, whether or not the chosen kind uses it; the
    /// one-shot speaker count is only held against the task for one-shot runs.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
            return bad(format!("network.hidden must list nonzero widths, got {:?}", self.network.hidden));
        }
        self.train.validate()?;
        self.sat.validate()?;
        self.adapt.validate()?;
        self.task.validate()?;
        for &a in &self.factorised.alphas {
            if !(0.0..=1.0).contains(&a) {
                return bad(format!("factorised.alphas: {a} outside [0, 1]"));
            }
        }
        for &f in &self.study.fractions {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("study.fractions: {f} outside (0, 1]"));
            }
        }
        for &r in &self.study.corruption_rates {
            if !(0.0..1.0).contains(&r) {
                return bad(format!("study.corruption_rates: {r} outside [0, 1)"));
            }
        }
        if self.one_shot.session_b == self.task.session {
            return bad("one_shot.session_b must differ from task.session".into());
        }
        if self.one_shot.speakers == 0
            || (self.kind == ExperimentKind::OneShot && self.one_shot.speakers > self.task.n_test_speakers)
        {
            return bad(format!(
                "one_shot.speakers must be in 1..={}",
                self.task.n_test_speakers
            ));
        }
        if self.bump.hidden_units == 0 {
            return bad("bump.hidden_units must be >= 1".into());
        }
        if !(self.bump.init_gain >= 0.0 && self.bump.init_gain.is_finite()) {
            return bad(format!("bump.init_gain must be finite and >= 0, got {}", self.bump.init_gain));
        }
        self.bump.train.validate()?;
        self.bump.adapt.validate()?;
        self.bump.sat.validate()?;
        if self.gradcheck.cases == 0 {
            return bad("gradcheck.cases must be >= 1".into());
        }
        Ok(())
    }

    /// The fully resolved config, defaults filled in.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// CRC-64 of the resolved TOML, ignoring where the outputs go.
    pub fn hash(&self) -> Result<u64> {
        let placed = Self { output_dir: PathBuf::new(), ..self.clone() };
        Ok(CRC64.checksum(placed.to_toml()?.as_bytes()))
    }
}

/// Parses and validates a config. Unknown keys are reported by name.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(&std::fs::read_to_string(path).map_err(io_err(path))?)
}
