use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::builders::ChainPairConfig;
use crate::error::{Error, Result};
use crate::solver::{Loss, NoiseSchedule, Setting, StepSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// MCGD against SGD-T on the autoregressive stream, both losses.
    ArComparison,
    /// MCGD on node least squares under the reversible and lifted chains.
    ChainComparison,
    /// MCGD against SGD-T on node data over one finite chain.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSection {
    pub n: usize,
    pub edge_prob: f64,
    pub num_cycles: usize,
    pub cycle_len: usize,
    pub w0_factor: f64,
    /// Transition matrix file; relative paths resolve against the config file.
    pub matrix: Option<PathBuf>,
}

impl Default for ChainSection {
    fn default() -> Self {
        let d = ChainPairConfig::default();
        ChainSection {
            n: d.n,
            edge_prob: d.edge_prob,
            num_cycles: d.num_cycles,
            cycle_len: d.cycle_len,
            w0_factor: d.w0_factor,
            matrix: None,
        }
    }
}

impl ChainSection {
    pub fn pair_config(&self) -> ChainPairConfig {
        ChainPairConfig {
            n: self.n,
            edge_prob: self.edge_prob,
            num_cycles: self.num_cycles,
            cycle_len: self.cycle_len,
            w0_factor: self.w0_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSection {
    /// Loss for `custom` runs.
    pub loss: Loss,
    pub ar_dimension: usize,
    /// Held-out stream samples that define the reported AR objective.
    pub eval_samples: usize,
    /// Feature dimension of node data.
    pub features: usize,
    pub noise_std: f64,
    /// Radius of the centered ball used in the convex setting.
    pub radius: f64,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        ObjectiveSection {
            loss: Loss::LeastSquares,
            ar_dimension: crate::data::DEFAULT_AR_DIMENSION,
            eval_samples: 500,
            features: 10,
            noise_std: 0.0,
            radius: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleFamily {
    Power,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub family: ScheduleFamily,
    pub a: f64,
    pub q: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection { family: ScheduleFamily::Power, a: 1.0, q: 0.501 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    /// Zero disables the gradient error.
    pub c: f64,
    pub p: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection { c: 0.0, p: 0.6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdtSection {
    pub t_list: Vec<usize>,
}

impl Default for SgdtSection {
    fn default() -> Self {
        SgdtSection { t_list: vec![1, 2, 4, 8, 16, 32] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixingSection {
    pub k_max: usize,
}

impl Default for MixingSection {
    fn default() -> Self {
        MixingSection { k_max: 100 }
    }
}

/// Full experiment description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seeds: Vec<u64>,
    pub iterations: usize,
    pub log_every: usize,
    /// Bypass the step-size and noise gates.
    #[serde(rename = "unsafe")]
    pub unsafe_schedule: bool,
    pub output_dir: Option<PathBuf>,
    pub chain: ChainSection,
    pub objective: ObjectiveSection,
    pub schedule: ScheduleSection,
    pub noise: NoiseSection,
    pub sgdt: SgdtSection,
    pub mixing: MixingSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentKind::ArComparison,
            seeds: vec![1],
            iterations: 100_000,
            log_every: 100,
            unsafe_schedule: false,
            output_dir: None,
            chain: ChainSection::default(),
            objective: ObjectiveSection::default(),
            schedule: ScheduleSection::default(),
            noise: NoiseSection::default(),
            sgdt: SgdtSection::default(),
            mixing: MixingSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.message().to_string()))
    }

    /// Reads a config file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(m) = &cfg.chain.matrix {
            if m.is_relative() {
                cfg.chain.matrix = Some(base.join(m));
            }
        }
        if let Some(o) = &cfg.output_dir {
            if o.is_relative() {
                cfg.output_dir = Some(base.join(o));
            }
        }
        Ok(cfg)
    }

    pub fn step_schedule(&self) -> StepSchedule {
        match self.schedule.family {
            ScheduleFamily::Power => StepSchedule::power(self.schedule.a, self.schedule.q),
            ScheduleFamily::Constant => StepSchedule::Constant { a: self.schedule.a },
        }
    }

    pub fn noise_schedule(&self) -> NoiseSchedule {
        if self.noise.c == 0.0 {
            NoiseSchedule::None
        } else {
            NoiseSchedule::power(self.noise.c, self.noise.p)
        }
    }

    /// Losses run by this experiment, in output order.
    pub fn losses(&self) -> Vec<Loss> {
        match self.experiment {
            ExperimentKind::ArComparison => vec![Loss::Logistic, Loss::SigmoidSq],
            ExperimentKind::ChainComparison => vec![Loss::LeastSquares],
            ExperimentKind::Custom => vec![self.objective.loss],
        }
    }

    /// Settings whose step-size and noise conditions this experiment needs.
    pub fn settings(&self) -> Vec<Setting> {
        let mut out: Vec<Setting> = self.losses().iter().map(|l| setting_of(*l)).collect();
        out.dedup();
        out
    }

    /// Structural checks that do not depend on the convergence conditions.
    pub fn check_shape(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.log_every == 0 {
            return bad("log_every must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.sgdt.t_list.contains(&0) {
            return bad("every t_list entry must be at least 1");
        }
        if !(self.objective.radius > 0.0) {
            return bad("objective.radius must be positive");
        }
        if self.objective.eval_samples == 0 || self.objective.ar_dimension == 0 || self.objective.features == 0 {
            return bad("objective sizes must be at least 1");
        }
        if !(self.noise.c >= 0.0) {
            return bad("noise.c must be non-negative");
        }
        Ok(())
    }
}

/// Logistic and least squares run projected on a ball; the sigmoid loss runs
/// unconstrained.
pub fn setting_of(loss: Loss) -> Setting {
    if loss.is_convex() {
        Setting::Convex
    } else {
        Setting::Nonconvex
    }
}
