//! Experiment configuration: one TOML file with `[run]`, `[model]`,
//! `[train]`, and `[eval]` tables. Every key is optional and falls back to
//! the defaults listed in `SCHEMA_HELP`; unknown keys are rejected so typos
//! fail loudly. Command-line flags override the file, and `FORGENET_SEED`
//! overrides any configured seed.

use std::path::Path;

use forgenet::synth::{table2_grid, RunConfig};
use forgenet::train::TrainConfig;
use forgenet::{NetSpec, TubeSpec};
use serde::{Deserialize, Serialize};

/// TOML schema, shown under `--help`.
pub const SCHEMA_HELP: &str = "\
Config file keys (all optional; TOML tables):
  [run]
    phi                  outer-diameter log strain      (default 0.2107, i.e. 30 -> 27 mm)
    alpha_deg            die half angle, degrees        (default 15)
    mu                   friction coefficient           (default 0.05)
    outer_diameter_mm    blank outer diameter           (default 30)
    wall_thickness_mm    blank wall thickness           (default 1.5)
    length_mm            blank length                   (default 16)
    element_size_mm      mesh element edge length       (default 0.4)
    stamp_speed_mm_s     stamp feed rate                (default 1000)
    dt_s                 time step, seconds             (default 1.5e-5)
    n_steps              trajectory steps               (default 500)
    seed                 generator seed                 (default 1)
  [model]
    latent_dim           latent width                   (default 32)
    n_blocks             message-passing blocks         (default 5)
    n_hidden_layers      hidden layers per MLP          (default 3)
  [train]
    epochs               passes over the pair set       (default 50)
    batch_size           pairs per optimizer step       (default 28)
    lr_start, lr_end     geometric learning-rate decay  (default 1e-4 -> 1e-5)
    noise_factor         input-noise scale              (default 1e-3)
    contact_radius       contact search radius, meters  (default 8e-4)
    step_stride          frames jumped per pair         (default 1)
    seed                 shuffling/init seed            (default 0)
    checkpoint_every     steps between checkpoints      (default: final only)
    max_steps            hard optimizer-step cap        (default: none)
    stop_below           early-exit loss floor          (default: none)
  [eval]
    window               profile fraction compared      (default 0.8)
    strides              ablation stride list           (default [1, 2, 5, 10, 20])

Environment: FORGENET_SEED=<u64> overrides [run].seed and [train].seed.
The campaign grid keeps its fixed per-cell generator seeds either way.";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub phi: Option<f64>,
    pub alpha_deg: Option<f64>,
    pub mu: Option<f64>,
    pub outer_diameter_mm: Option<f64>,
    pub wall_thickness_mm: Option<f64>,
    pub length_mm: Option<f64>,
    pub element_size_mm: Option<f64>,
    pub stamp_speed_mm_s: Option<f64>,
    pub dt_s: Option<f64>,
    pub n_steps: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub latent_dim: usize,
    pub n_blocks: usize,
    pub n_hidden_layers: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { latent_dim: 32, n_blocks: 5, n_hidden_layers: 3 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr_start: Option<f64>,
    pub lr_end: Option<f64>,
    pub noise_factor: Option<f64>,
    pub contact_radius: Option<f64>,
    pub step_stride: Option<usize>,
    pub seed: Option<u64>,
    pub checkpoint_every: Option<usize>,
    pub max_steps: Option<usize>,
    pub stop_below: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub window: f64,
    pub strides: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { window: 0.8, strides: vec![1, 2, 5, 10, 20] }
    }
}

/// `FORGENET_SEED`, parsed; a set-but-malformed value is a config error.
pub fn env_seed() -> Result<Option<u64>, String> {
    match std::env::var("FORGENET_SEED") {
        Ok(raw) => raw
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| format!("FORGENET_SEED must be an unsigned integer, got {raw:?}")),
        Err(_) => Ok(None),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))
    }

    pub fn net_spec(&self) -> NetSpec {
        NetSpec {
            latent_dim: self.model.latent_dim,
            n_blocks: self.model.n_blocks,
            n_hidden_layers: self.model.n_hidden_layers,
        }
    }

    /// Blank geometry with `[run]` overrides applied over the desk default.
    fn tube(&self, base: TubeSpec) -> TubeSpec {
        let r = &self.run;
        TubeSpec {
            outer_diameter_mm: r.outer_diameter_mm.unwrap_or(base.outer_diameter_mm),
            wall_thickness_mm: r.wall_thickness_mm.unwrap_or(base.wall_thickness_mm),
            length_mm: r.length_mm.unwrap_or(base.length_mm),
            element_size_mm: r.element_size_mm.unwrap_or(base.element_size_mm),
        }
    }

    fn apply_process_overrides(&self, config: &mut RunConfig) {
        let r = &self.run;
        if let Some(v) = r.stamp_speed_mm_s {
            config.stamp_speed_mm_s = v;
        }
        if let Some(v) = r.dt_s {
            config.dt_s = v;
        }
        if let Some(v) = r.n_steps {
            config.n_steps = v;
        }
    }

    /// One fully resolved single-run config. Flags beat the file, the file
    /// beats the desk defaults; the die is re-derived for the final blank.
    /// Not validated here so the caller controls the error path.
    pub fn resolved_run(
        &self,
        phi_flag: Option<f64>,
        alpha_flag: Option<f64>,
        mu_flag: Option<f64>,
    ) -> Result<RunConfig, String> {
        let defaults = RunConfig::desk_default();
        let phi = phi_flag.or(self.run.phi).unwrap_or(defaults.phi_target);
        let alpha = alpha_flag.or(self.run.alpha_deg).unwrap_or(defaults.die.half_angle_deg);
        let mut config = RunConfig::with_phi_alpha_tube(phi, alpha, self.tube(defaults.tube));
        if let Some(mu) = mu_flag.or(self.run.mu) {
            config.mu = mu;
        }
        self.apply_process_overrides(&mut config);
        if let Some(seed) = self.run.seed {
            config.seed = seed;
        }
        if let Some(seed) = env_seed()? {
            config.seed = seed;
        }
        Ok(config)
    }

    /// The full campaign grid with `[run]` geometry/process overrides but
    /// untouched per-cell (phi, alpha) and seeds.
    pub fn campaign_configs(&self, mu_flag: Option<f64>) -> Vec<RunConfig> {
        table2_grid()
            .into_iter()
            .map(|cell| {
                let mut config = RunConfig::with_phi_alpha_tube(
                    cell.phi_target,
                    cell.die.half_angle_deg,
                    self.tube(cell.tube),
                );
                config.mu = mu_flag.or(self.run.mu).unwrap_or(cell.mu);
                config.seed = cell.seed;
                self.apply_process_overrides(&mut config);
                config
            })
            .collect()
    }

    pub fn resolved_train(&self) -> Result<TrainConfig, String> {
        let t = &self.train;
        let base = TrainConfig::default();
        let mut config = TrainConfig {
            epochs: t.epochs.unwrap_or(base.epochs),
            batch_size: t.batch_size.unwrap_or(base.batch_size),
            lr_start: t.lr_start.unwrap_or(base.lr_start),
            lr_end: t.lr_end.unwrap_or(base.lr_end),
            noise_factor: t.noise_factor.unwrap_or(base.noise_factor),
            contact_radius: t.contact_radius.unwrap_or(base.contact_radius),
            step_stride: t.step_stride.unwrap_or(base.step_stride),
            seed: t.seed.unwrap_or(base.seed),
            checkpoint_every: t.checkpoint_every.or(base.checkpoint_every),
            max_steps: t.max_steps.or(base.max_steps),
            stop_below: t.stop_below.or(base.stop_below),
        };
        if let Some(seed) = env_seed()? {
            config.seed = seed;
        }
        Ok(config)
    }
}
