//! Experiment configuration. Precedence, lowest first: built-in defaults,
//! the JSON file given with `--config`, command-line flags.

use std::path::{Path, PathBuf};

use ncml_core::datasets::{generate, GeneratorParams};
use ncml_core::grid::load_grid_file;
use ncml_core::model::{ModelArch, DEFAULT_LOG_SCALE_MIN};
use ncml_core::sampling::CompletionMode;
use ncml_core::training::{MuSpec, TrainConfig};
use ncml_core::{Dataset, SdeKind, SdeSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum DatasetSource {
    Generator {
        generator: String,
        #[serde(default = "default_count")]
        count: usize,
        #[serde(default = "default_bit_depth")]
        bit_depth: u8,
        #[serde(default)]
        seed: u64,
    },
    File {
        path: PathBuf,
    },
}

fn default_count() -> usize {
    2000
}

fn default_bit_depth() -> u8 {
    3
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset, CliError> {
        match self {
            DatasetSource::Generator {
                generator,
                count,
                bit_depth,
                seed,
            } => Ok(generate(
                generator,
                &GeneratorParams {
                    count: *count,
                    bit_depth: *bit_depth,
                    seed: *seed,
                },
            )?),
            DatasetSource::File { path } => Ok(load_grid_file(path)?),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub components: usize,
    pub fourier_features: usize,
    pub fourier_log_std: f64,
    pub class_conditional: bool,
    pub log_scale_min: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: vec![128],
            components: 5,
            fourier_features: 8,
            fourier_log_std: 1.0,
            class_conditional: false,
            log_scale_min: DEFAULT_LOG_SCALE_MIN,
        }
    }
}

impl ModelSection {
    pub fn arch(&self, data: &Dataset, horizon: f64) -> Result<ModelArch, CliError> {
        let mut a = ModelArch::new(data.dims().to_vec(), data.bit_depth(), horizon);
        a.hidden = self.hidden.clone();
        a.components = self.components;
        a.fourier_features = self.fourier_features;
        a.fourier_log_std = self.fourier_log_std;
        a.log_scale_min = self.log_scale_min;
        if self.class_conditional {
            let labels = data
                .labels()
                .ok_or_else(|| CliError::config("model.class_conditional requires a labelled dataset"))?;
            a.class_count = Some(labels.iter().max().map_or(1, |m| m + 1));
        }
        a.validate()?;
        Ok(a)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeSection {
    pub kind: Option<SdeKind>,
    pub horizon: Option<f64>,
    pub sigma_min: Option<f64>,
    pub sigma_max: Option<f64>,
    pub beta_min: Option<f64>,
    pub beta_max: Option<f64>,
}

impl SdeSection {
    pub fn is_set(&self) -> bool {
        *self != Self::default()
    }

    /// Unset fields take the defaults of the chosen kind (VP if unset).
    pub fn spec(&self) -> Result<SdeSpec, CliError> {
        let mut s = SdeSpec::new(self.kind.unwrap_or(SdeKind::Vp));
        if let Some(h) = self.horizon {
            s.horizon = h;
        }
        s.sigma_min = self.sigma_min.unwrap_or(s.sigma_min);
        s.sigma_max = self.sigma_max.unwrap_or(s.sigma_max);
        s.beta_min = self.beta_min.unwrap_or(s.beta_min);
        s.beta_max = self.beta_max.unwrap_or(s.beta_max);
        s.validate()?;
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub dropout: f64,
    pub eval_every: usize,
    /// Defaults to six evenly spaced times over `[0, T]`.
    pub probe_ts: Option<Vec<f64>>,
    pub eval_pi: f64,
    pub eval_count: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
            dropout: 0.0,
            eval_every: 250,
            probe_ts: None,
            eval_pi: 1.0,
            eval_count: 256,
            checkpoint_every: 0,
        }
    }
}

pub fn even_grid(horizon: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points).map(|i| horizon * i as f64 / (points - 1) as f64).collect(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMode {
    Direct,
    #[default]
    TwoPhase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub mode: SampleMode,
    /// Defaults to the crossover time of the reference data.
    pub t_start: Option<f64>,
    pub steps: usize,
    pub corrector_steps: usize,
    pub snr: f64,
    pub denoise_final: bool,
    pub count: usize,
    pub class: Option<usize>,
    pub crossover_points: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            mode: SampleMode::TwoPhase,
            t_start: None,
            steps: 100,
            corrector_steps: 0,
            snr: 0.16,
            denoise_final: true,
            count: 64,
            class: None,
            crossover_points: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompleteSection {
    pub mode: CompletionMode,
    /// Observed raster prefix length; half of the grid when unset.
    pub prefix_len: Option<usize>,
    /// Dataset rows used as observations.
    pub rows: usize,
    pub per_row: usize,
}

impl Default for CompleteSection {
    fn default() -> Self {
        Self {
            mode: CompletionMode::Direct,
            prefix_len: None,
            rows: 8,
            per_row: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SanitySection {
    pub pi: f64,
    /// Defaults to eleven evenly spaced times over `[0, T]`.
    pub t_grid: Option<Vec<f64>>,
}

impl Default for SanitySection {
    fn default() -> Self {
        Self { pi: 1.0, t_grid: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeStatsSection {
    pub points: usize,
    pub mc_draws: usize,
}

impl Default for SdeStatsSection {
    fn default() -> Self {
        Self {
            points: 21,
            mc_draws: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub weights: Vec<f64>,
    /// Component means, flat `K × 2`.
    pub means: Vec<f64>,
    pub variance: f64,
    pub samples: usize,
    pub weight_tol: f64,
    pub mean_tol: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            weights: vec![0.3, 0.7],
            means: vec![-0.5, -0.4, 0.45, 0.5],
            variance: 0.01,
            samples: 10_000,
            weight_tol: 0.03,
            mean_tol: 0.05,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    /// Per-pixel perturbation std target in pixel units of the data's bit
    /// depth; defaults to 10 eight-bit units.
    pub target_std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: Option<DatasetSource>,
    /// Held-out data for evaluation; the first `train.eval_count` training
    /// rows when unset.
    pub eval_dataset: Option<DatasetSource>,
    pub checkpoint: Option<PathBuf>,
    pub model: ModelSection,
    pub sde: SdeSection,
    pub mu: MuSpec,
    pub train: TrainSection,
    pub sampler: SamplerSection,
    pub complete: CompleteSection,
    pub sanity: SanitySection,
    pub sde_stats: SdeStatsSection,
    pub oracle: OracleSection,
    pub calibration: CalibrationSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            dataset: None,
            eval_dataset: None,
            checkpoint: None,
            model: ModelSection::default(),
            sde: SdeSection::default(),
            mu: MuSpec::Uniform,
            train: TrainSection::default(),
            sampler: SamplerSection::default(),
            complete: CompleteSection::default(),
            sanity: SanitySection::default(),
            sde_stats: SdeStatsSection::default(),
            oracle: OracleSection::default(),
            calibration: CalibrationSection::default(),
        }
    }
}

/// Flag values that override the configuration file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub sde: Option<SdeKind>,
    pub pi: Option<f64>,
    pub t_start: Option<f64>,
    /// Training steps for `train`, refinement steps otherwise.
    pub steps: Option<usize>,
    pub class: Option<usize>,
    pub checkpoint: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn apply(&mut self, o: &Overrides, training: bool) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        if let Some(k) = o.sde {
            self.sde.kind = Some(k);
        }
        if let Some(pi) = o.pi {
            self.sanity.pi = pi;
            self.train.eval_pi = pi;
        }
        if let Some(t) = o.t_start {
            self.sampler.t_start = Some(t);
        }
        if let Some(n) = o.steps {
            if training {
                self.train.steps = n;
            } else {
                self.sampler.steps = n;
            }
        }
        if let Some(c) = o.class {
            self.sampler.class = Some(c);
        }
        if let Some(p) = &o.checkpoint {
            self.checkpoint = Some(p.clone());
        }
    }

    /// Checks that referenced files exist and that every section is valid.
    pub fn validate(&self) -> Result<(), CliError> {
        for src in [&self.dataset, &self.eval_dataset].into_iter().flatten() {
            if let DatasetSource::File { path } = src {
                if !path.is_file() {
                    return Err(CliError::config(format!("dataset file {} not found", path.display())));
                }
            }
        }
        if let Some(p) = &self.checkpoint {
            if !p.is_file() {
                return Err(CliError::config(format!("checkpoint {} not found", p.display())));
            }
        }
        let spec = self.sde.spec()?;
        self.mu.validate(spec.horizon)?;
        self.train_config(&spec).validate()?;
        if !(0.0..=1.0).contains(&self.sanity.pi) {
            return Err(CliError::config(format!("sanity.pi {} not in [0, 1]", self.sanity.pi)));
        }
        if let Some(t) = self.sampler.t_start {
            if !(t > 0.0 && t <= spec.horizon) {
                return Err(CliError::config(format!("t_start {t} not in (0, {}]", spec.horizon)));
            }
        }
        if self.sampler.steps == 0 {
            return Err(CliError::config("sampler.steps must be at least 1"));
        }
        Ok(())
    }

    pub fn dataset(&self) -> Result<Dataset, CliError> {
        self.dataset
            .as_ref()
            .ok_or_else(|| CliError::config("no dataset configured"))?
            .load()
    }

    pub fn eval_dataset(&self, train: &Dataset) -> Result<Dataset, CliError> {
        match &self.eval_dataset {
            Some(src) => src.load(),
            None => Ok(train.take(self.train.eval_count.min(train.len()))),
        }
    }

    pub fn probe_ts(&self, spec: &SdeSpec) -> Vec<f64> {
        self.train.probe_ts.clone().unwrap_or_else(|| even_grid(spec.horizon, 6))
    }

    pub fn sanity_grid(&self, spec: &SdeSpec) -> Vec<f64> {
        self.sanity.t_grid.clone().unwrap_or_else(|| even_grid(spec.horizon, 11))
    }

    pub fn train_config(&self, spec: &SdeSpec) -> TrainConfig {
        let t = &self.train;
        let mut c = TrainConfig::new(spec.clone(), self.mu.clone());
        c.steps = t.steps;
        c.batch_size = t.batch_size;
        c.learning_rate = t.learning_rate;
        c.beta1 = t.beta1;
        c.beta2 = t.beta2;
        c.eps = t.eps;
        c.clip_norm = t.clip_norm;
        c.dropout = t.dropout;
        c.seed = self.seed;
        c.eval_every = t.eval_every;
        c.probe_ts = self.probe_ts(spec);
        c.eval_pi = t.eval_pi;
        c.checkpoint_every = t.checkpoint_every;
        c
    }
}
