//! Run configuration: one JSON file wires the schedule, the world, the
//! trainer, the network architecture and the evaluation settings together.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use igct::net::NetArch;
use igct::oracle::WorldSpec;
use igct::train::TrainConfig;
use igct::{MixtureWorld, Real, ScheduleConfig};

/// `schedule` section: the schedule constants, stated explicitly in every
/// config. Only sigma_data may be omitted (measured from the world) and
/// q_cap falls back to 0.9.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleSection {
    pub p_mean: Real,
    pub p_std: Real,
    pub t_min: Real,
    pub t_max: Real,
    pub d: u64,
    pub t_low: Real,
    pub t_high: Real,
    pub w_min: Real,
    pub w_max: Real,
    #[serde(default)]
    pub sigma_data: Option<Real>,
    #[serde(default = "default_q_cap")]
    pub q_cap: Real,
}

fn default_q_cap() -> Real {
    0.9
}

impl ScheduleSection {
    pub fn resolve(&self, world: &MixtureWorld) -> ScheduleConfig {
        ScheduleConfig {
            p_mean: self.p_mean,
            p_std: self.p_std,
            t_min: self.t_min,
            t_max: self.t_max,
            d: self.d,
            t_low: self.t_low,
            t_high: self.t_high,
            w_min: self.w_min,
            w_max: self.w_max,
            sigma_data: self.sigma_data.unwrap_or_else(|| world.sigma_data()),
            q_cap: self.q_cap,
        }
    }
}

/// `eval` section: metric settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_samples: usize,
    pub held_out: usize,
    pub knn_k: usize,
    pub band_sigmas: Real,
    /// 2-step consistency sampling intermediate level.
    pub t_mid: Real,
    /// Heun solver steps for diffusion-style sampling.
    pub heun_nfe: usize,
    pub w_list: Vec<Real>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            held_out: 1_000,
            knn_k: 5,
            band_sigmas: 3.0,
            t_mid: 0.8,
            heun_nfe: 18,
            w_list: vec![1.0, 7.0, 13.0],
        }
    }
}

/// The whole run-config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub schedule: ScheduleSection,
    pub world: WorldSpec<Real>,
    #[serde(default)]
    pub train: TrainConfig<Real>,
    #[serde(default)]
    pub net: NetArch,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Parsed and cross-validated configuration.
pub struct ResolvedConfig {
    pub world: MixtureWorld,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig<Real>,
    pub net: NetArch,
    pub eval: EvalConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
}

/// Load a run config; error messages name the offending field path.
pub fn load(path: &Path) -> igct::Result<ResolvedConfig> {
    let text = std::fs::read_to_string(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let cfg: RunConfig =
        serde_path_to_error::deserialize(de).map_err(|e| igct::Error::InvalidConfig {
            field: e.path().to_string(),
            reason: e.inner().to_string(),
        })?;
    resolve(cfg)
}

pub fn resolve(cfg: RunConfig) -> igct::Result<ResolvedConfig> {
    let world: MixtureWorld = cfg.world.try_into()?;
    let schedule = cfg.schedule.resolve(&world);
    schedule.validate()?;
    cfg.train.validate()?;
    let eval = cfg.eval;
    if eval.n_samples == 0 || eval.held_out == 0 {
        return Err(igct::Error::InvalidConfig {
            field: "eval.n_samples".into(),
            reason: "sample counts must be >= 1".into(),
        });
    }
    if eval.knn_k == 0 || eval.knn_k >= eval.n_samples {
        return Err(igct::Error::InvalidConfig {
            field: "eval.knn_k".into(),
            reason: "require 0 < knn_k < n_samples".into(),
        });
    }
    if !(eval.t_mid >= schedule.t_min && eval.t_mid <= schedule.t_max) {
        return Err(igct::Error::InvalidConfig {
            field: "eval.t_mid".into(),
            reason: "must lie within [t_min, t_max]".into(),
        });
    }
    if eval.w_list.is_empty() {
        return Err(igct::Error::InvalidConfig {
            field: "eval.w_list".into(),
            reason: "must contain at least one guidance strength".into(),
        });
    }
    Ok(ResolvedConfig {
        world,
        schedule,
        train: cfg.train,
        net: cfg.net,
        eval,
        seed: cfg.seed,
        output_dir: cfg.output_dir,
    })
}
