//! The experiment config file: one TOML document drives every
//! subcommand, so a run is reproducible from the file alone. All
//! randomness flows from seeds written here (or the --seed override);
//! nothing is seeded from the clock.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use vdu_core::data::{self, LabeledDataset, MixtureSpec};
use vdu_core::denoiser::{Activation, DenoiserArch};
use vdu_core::schedule::{NoiseSchedule, ScheduleParams};
use vdu_core::vdu::VduConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub schedule: ScheduleParams,
    pub arch: ArchConfig,
    pub pretrain: PretrainConfig,
    pub stats: StatsConfig,
    pub unlearn: VduConfig,
    pub eval: EvalConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub finetune: FinetuneConfig,
    pub output: OutputConfig,
}

/// Where training data comes from: a synthetic 2-D ring mixture or a
/// pair of IDX files (images + labels).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Mixture {
        #[serde(default)]
        name: Option<String>,
        n_train: usize,
        seed: u64,
        forget_labels: Vec<u32>,
        #[serde(default = "default_ring_modes")]
        ring_modes: usize,
        #[serde(default = "default_ring_radius")]
        ring_radius: f64,
        #[serde(default = "default_ring_std")]
        ring_std: f64,
    },
    Idx {
        #[serde(default)]
        name: Option<String>,
        images: PathBuf,
        labels: PathBuf,
        forget_labels: Vec<u32>,
    },
}

fn default_ring_modes() -> usize {
    8
}
fn default_ring_radius() -> f64 {
    4.0
}
fn default_ring_std() -> f64 {
    0.3
}

impl DatasetConfig {
    pub fn name(&self) -> String {
        match self {
            DatasetConfig::Mixture {
                name, ring_modes, ..
            } => name
                .clone()
                .unwrap_or_else(|| format!("mixture{ring_modes}")),
            DatasetConfig::Idx { name, .. } => name.clone().unwrap_or_else(|| "idx".to_string()),
        }
    }

    pub fn forget_labels(&self) -> &[u32] {
        match self {
            DatasetConfig::Mixture { forget_labels, .. } => forget_labels,
            DatasetConfig::Idx { forget_labels, .. } => forget_labels,
        }
    }

    /// The mixture spec, when the dataset is synthetic. Image datasets
    /// have none, which rules out the nearest-mode classifier.
    pub fn mixture_spec(&self) -> Result<Option<MixtureSpec>> {
        match self {
            DatasetConfig::Mixture {
                ring_modes,
                ring_radius,
                ring_std,
                ..
            } => Ok(Some(MixtureSpec::ring(
                *ring_modes,
                *ring_radius,
                *ring_std,
            )?)),
            DatasetConfig::Idx { .. } => Ok(None),
        }
    }

    pub fn load(&self, config_dir: &Path) -> Result<LabeledDataset> {
        match self {
            DatasetConfig::Mixture { n_train, seed, .. } => {
                let spec = self.mixture_spec()?.expect("mixture dataset");
                Ok(data::sample_mixture(&spec, *n_train, *seed)?)
            }
            DatasetConfig::Idx { images, labels, .. } => {
                // Relative paths resolve against the config file, not the
                // process working directory.
                let images = config_dir.join(images);
                let labels = config_dir.join(labels);
                data::load_idx(&images, &labels)
                    .with_context(|| format!("loading IDX data from {}", images.display()))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    /// One training run per seed (seeding minibatch order and noise
    /// draws); the first seed's final checkpoint doubles as θ* for
    /// unlearning.
    pub seeds: Vec<u64>,
    /// All runs start from the same initial parameters. The checkpoint
    /// ensemble estimates a posterior around one optimum; runs with
    /// independent inits land in unrelated basins and their mean stops
    /// being a usable anchor.
    pub init_seed: u64,
    pub epochs: usize,
    pub eta: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsModeConfig {
    MultiRun,
    SingleRun,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsConfig {
    pub mode: StatsModeConfig,
    /// single_run only: number of late snapshots to keep.
    #[serde(default)]
    pub snapshots: Option<usize>,
    /// single_run only: epochs between snapshots.
    #[serde(default)]
    pub spacing: Option<usize>,
    /// Absolute floor for σ*; omitted means 1e−4·RMS(μ*).
    #[serde(default)]
    pub sigma_floor: Option<f64>,
    /// Absolute ceiling for σ*; omitted means unbounded.
    #[serde(default)]
    pub sigma_ceiling: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Generated samples per model; 2000 is the desk-scale default.
    pub n_samples: usize,
    pub seed: u64,
    /// Held-out draw used as the retained reference set.
    pub holdout_n: usize,
    pub holdout_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub gammas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            gammas: vec![0.0, 0.1, 0.3, 0.6, 0.8, 1.0],
        }
    }
}

/// The reference baseline: continue ordinary denoising training from θ*
/// on the retain set alone. Dominates unlearning methods on both metrics
/// when the retain set is available, which is what makes it the bar to
/// compare against.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub eta: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 1,
            eta: 1e-3,
            batch_size: 128,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

/// A loaded config with the derived objects every command needs.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub schedule: NoiseSchedule,
    pub arch: DenoiserArch,
    pub out_dir: PathBuf,
    /// Directory of the config file, for resolving relative data paths.
    pub config_dir: PathBuf,
}

/// Which seed the --seed flag should replace, per subcommand.
pub enum SeedOverride {
    None,
    Pretrain(u64),
    Unlearn(u64),
    Eval(u64),
}

impl Experiment {
    pub fn load(config_path: &Path, out: Option<PathBuf>, seed: SeedOverride) -> Result<Self> {
        let text = std::fs::read_to_string(config_path)
            .with_context(|| format!("reading config {}", config_path.display()))?;
        let mut config: ExperimentConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", config_path.display()))?;

        match seed {
            SeedOverride::None => {}
            SeedOverride::Pretrain(s) => {
                let n = config.pretrain.seeds.len();
                config.pretrain.seeds = (0..n as u64).map(|i| s + i).collect();
            }
            SeedOverride::Unlearn(s) => config.unlearn.seed = s,
            SeedOverride::Eval(s) => config.eval.seed = s,
        }

        let config_dir = config_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let out_dir = out.unwrap_or_else(|| config.output.dir.clone());

        let schedule = config.schedule.build()?;
        let input_dim = match &config.dataset {
            DatasetConfig::Mixture { .. } => 2,
            DatasetConfig::Idx { .. } => {
                // Load once to learn the dimension; commands reload as
                // needed (the parse is cheap and deterministic).
                config.dataset.load(&config_dir)?.dim()
            }
        };
        let arch = DenoiserArch {
            input_dim,
            hidden_dims: config.arch.hidden_dims.clone(),
            embed_dim: config.arch.embed_dim,
            activation: config.arch.activation,
        };
        arch.validate()?;
        validate_semantics(&config)?;

        Ok(Experiment {
            config,
            schedule,
            arch,
            out_dir,
            config_dir,
        })
    }

    pub fn dataset(&self) -> Result<LabeledDataset> {
        self.config.dataset.load(&self.config_dir)
    }
}

fn validate_semantics(config: &ExperimentConfig) -> Result<()> {
    if config.pretrain.seeds.is_empty() {
        bail!("pretrain.seeds must list at least one seed");
    }
    if config.pretrain.epochs == 0 {
        bail!("pretrain.epochs must be at least 1");
    }
    if config.pretrain.eta <= 0.0 || config.pretrain.eta.is_nan() {
        bail!("pretrain.eta must be positive");
    }
    if config.dataset.forget_labels().is_empty() {
        bail!("dataset.forget_labels must name at least one label");
    }
    match config.stats.mode {
        StatsModeConfig::MultiRun => {
            if config.pretrain.seeds.len() < 2 {
                bail!("multi_run stats need at least 2 pretrain seeds");
            }
            let mut sorted = config.pretrain.seeds.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != config.pretrain.seeds.len() {
                bail!("pretrain.seeds must be distinct for multi_run stats");
            }
        }
        StatsModeConfig::SingleRun => {
            if config.pretrain.seeds.len() != 1 {
                bail!("single_run stats use exactly one pretrain seed");
            }
            let k = config
                .stats
                .snapshots
                .context("single_run stats need stats.snapshots")?;
            let spacing = config
                .stats
                .spacing
                .context("single_run stats need stats.spacing")?;
            // Surfaces impossible snapshot plans at config time.
            vdu_core::checkpoints::single_run_snapshot_epochs(config.pretrain.epochs, k, spacing)?;
        }
    }
    config.unlearn.validate(config.schedule.t_steps())?;
    if config.eval.n_samples == 0 {
        bail!("eval.n_samples must be at least 1");
    }
    if config.eval.holdout_n == 0 {
        bail!("eval.holdout_n must be at least 1");
    }
    for &g in &config.sweep.gammas {
        if !(0.0..=1.0).contains(&g) {
            bail!("sweep.gammas entries must lie in [0, 1], got {g}");
        }
    }
    Ok(())
}
