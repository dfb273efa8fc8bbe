//! One structured config file drives every subcommand. Unknown keys are
//! rejected everywhere, cross-section dimension mismatches are caught at
//! load time with field paths, and the fully-resolved config is meant to be
//! echoed into output artifacts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::costing::{paper_ww_frames, CostConvention, PAPER_FRAMES};
use crate::data::{generate, read_dataset, TaskSpec, Utterance};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, SeededRng};
use crate::schedule::ScheduleSpec;
use crate::stream_sim::{StreamScenario, DEFAULT_FRAME_DURATION_S};
use crate::train::TrainingConfig;
use crate::transducer::{JointSpec, ModelSpec, TransducerModel};

fn default_model() -> ModelSpec {
    ModelSpec {
        vocab_size: 33,
        feature_dim: 16,
        encoder_layers: 2,
        branch_dims: vec![32],
        shared_output_dim: 24,
        zero_init_on_switch: false,
        embed_dim: 16,
        decoder_hidden_dims: vec![24, 24],
        joint: JointSpec::Feedforward { joint_dim: 32, activation: Default::default() },
    }
}

fn default_schedule() -> ScheduleSpec {
    ScheduleSpec::constant(0)
}

fn default_train_utterances() -> usize {
    256
}
fn default_test_utterances() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Generate a corpus from a synthetic task spec...
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskSpec>,
    /// ...or load one from a dataset file. Exactly one source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_path: Option<PathBuf>,
    #[serde(default = "default_train_utterances")]
    pub train_utterances: usize,
    #[serde(default = "default_test_utterances")]
    pub test_utterances: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            task: Some(TaskSpec::default()),
            dataset_path: None,
            train_utterances: default_train_utterances(),
            test_utterances: default_test_utterances(),
        }
    }
}

impl DataSection {
    pub fn validate(&self) -> Result<()> {
        match (&self.task, &self.dataset_path) {
            (Some(task), None) => task.validate()?,
            (None, Some(_)) => {}
            (Some(_), Some(_)) => {
                return Err(Error::config("data", "give either task or dataset_path, not both"))
            }
            (None, None) => {
                return Err(Error::config("data", "needs a task spec or a dataset_path"))
            }
        }
        if self.train_utterances == 0 {
            return Err(Error::config("data.train_utterances", "must be positive"));
        }
        Ok(())
    }
}

fn default_sim_frames() -> usize {
    PAPER_FRAMES
}
fn default_sim_ww() -> usize {
    paper_ww_frames()
}
fn default_device_rate() -> f64 {
    3.5e9
}
fn default_sweep_rates() -> Vec<f64> {
    vec![1.0e9, 2.0e9, 3.5e9, 5.0e9, 8.0e9]
}
fn default_frame_duration() -> f64 {
    DEFAULT_FRAME_DURATION_S
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_frame_duration")]
    pub frame_duration_s: f64,
    #[serde(default = "default_sim_frames")]
    pub frames: usize,
    #[serde(default = "default_sim_ww")]
    pub ww_frame_index: usize,
    #[serde(default = "default_device_rate")]
    pub device_rate: f64,
    #[serde(default = "default_sweep_rates")]
    pub sweep_rates: Vec<f64>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            frame_duration_s: default_frame_duration(),
            frames: default_sim_frames(),
            ww_frame_index: default_sim_ww(),
            device_rate: default_device_rate(),
            sweep_rates: default_sweep_rates(),
        }
    }
}

impl SimulationSection {
    pub fn scenario(&self) -> StreamScenario {
        StreamScenario {
            frame_duration_s: self.frame_duration_s,
            frames: self.frames,
            ww_frame_index: self.ww_frame_index,
            device_rate: self.device_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario().validate()?;
        if self.sweep_rates.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::config("simulation.sweep_rates", "rates must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Cost-model preset at published scale; `flops` and `simulate` only.
    /// Training at these dimensions is refused.
    #[serde(default)]
    pub paper_dims: bool,
    #[serde(default = "default_model")]
    pub model: ModelSpec,
    #[serde(default = "default_schedule")]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub costing: CostConvention,
    #[serde(default)]
    pub simulation: SimulationSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            paper_dims: false,
            model: default_model(),
            schedule: default_schedule(),
            training: TrainingConfig::default(),
            data: DataSection::default(),
            costing: CostConvention::default(),
            simulation: SimulationSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Single-branch toy model; the training baseline.
    pub fn toy_monolithic() -> Self {
        ExperimentConfig::default()
    }

    /// Small lead-in branch pivoting into the full-size branch, with
    /// learned state projections for the one switch the schedule takes.
    pub fn toy_bifocal() -> Self {
        let mut c = ExperimentConfig::default();
        c.model.branch_dims = vec![16, 32];
        c.schedule = ScheduleSpec::ww_pivot();
        c
    }

    /// Ablation: same switch but zero re-initialization instead of learned
    /// projections.
    pub fn toy_bifocal_no_proj() -> Self {
        let mut c = ExperimentConfig::toy_bifocal();
        c.model.zero_init_on_switch = true;
        c
    }

    /// Published-scale preset for cost reports and latency simulation.
    pub fn paper_dims() -> Self {
        ExperimentConfig { paper_dims: true, ..ExperimentConfig::default() }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::config(path.display().to_string(), j.to_string()),
            other => other,
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.vocab_size < 2 {
            return Err(Error::config("model.vocab_size", "needs blank plus at least one label"));
        }
        if self.model.branch_dims.is_empty() || self.model.branch_dims.contains(&0) {
            return Err(Error::config("model.branch_dims", "need positive branch widths"));
        }
        if self.model.encoder_layers == 0 {
            return Err(Error::config("model.encoder_layers", "must be at least 1"));
        }
        for (path, d) in [
            ("model.feature_dim", self.model.feature_dim),
            ("model.shared_output_dim", self.model.shared_output_dim),
            ("model.embed_dim", self.model.embed_dim),
        ] {
            if d == 0 {
                return Err(Error::config(path, "must be positive"));
            }
        }
        if self.model.decoder_hidden_dims.is_empty() || self.model.decoder_hidden_dims.contains(&0)
        {
            return Err(Error::config("model.decoder_hidden_dims", "need positive layer widths"));
        }
        self.schedule.validate(self.model.branch_dims.len())?;
        self.training.validate()?;
        self.data.validate()?;
        self.simulation.validate()?;
        if let Some(task) = &self.data.task {
            if task.feature_dim != self.model.feature_dim {
                return Err(Error::config(
                    "data.task.feature_dim",
                    format!("{} but model.feature_dim is {}", task.feature_dim, self.model.feature_dim),
                ));
            }
            if task.vocab_size + 1 != self.model.vocab_size {
                return Err(Error::config(
                    "data.task.vocab_size",
                    format!(
                        "{} real tokens need model.vocab_size {} (got {})",
                        task.vocab_size,
                        task.vocab_size + 1,
                        self.model.vocab_size
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Refuse the published-scale preset outside the cost/latency tools.
    pub fn ensure_trainable(&self) -> Result<()> {
        if self.paper_dims {
            return Err(Error::config(
                "paper_dims",
                "published-scale preset is for flops/simulate only; train at toy scale",
            ));
        }
        Ok(())
    }

    /// Branch switches the schedule can take; projections are allocated for
    /// exactly these.
    pub fn directions(&self) -> Vec<(usize, usize)> {
        self.schedule.required_transitions()
    }

    pub fn build_model<F: Scalar>(&self, seed: u64) -> Result<TransducerModel<F>> {
        let mut rng = SeededRng::new(seed);
        TransducerModel::init(&self.model, &self.directions(), &mut rng)
    }

    /// Generate or load the corpus; length covers both splits.
    pub fn load_corpus(&self) -> Result<Vec<Utterance>> {
        let want = self.data.train_utterances + self.data.test_utterances;
        match (&self.data.task, &self.data.dataset_path) {
            (Some(task), None) => generate(task, want),
            (None, Some(path)) => {
                let corpus = read_dataset(path)?;
                if corpus.len() < want {
                    return Err(Error::config(
                        "data.dataset_path",
                        format!("{} utterances, config needs {}", corpus.len(), want),
                    ));
                }
                Ok(corpus)
            }
            _ => Err(Error::config("data", "needs a task spec or a dataset_path")),
        }
    }

    /// Index-partition split: first train_utterances train, next
    /// test_utterances test.
    pub fn split_corpus<'a>(&self, corpus: &'a [Utterance]) -> (&'a [Utterance], &'a [Utterance]) {
        let train_end = self.data.train_utterances.min(corpus.len());
        let test_end = (train_end + self.data.test_utterances).min(corpus.len());
        (&corpus[..train_end], &corpus[train_end..test_end])
    }
}
