//! Checkpoint persistence: a JSON envelope holding the schedule, the world,
//! the iteration counter, flat named parameter arrays per network, and the
//! optimizer state. Decimal number lists keep the format portable at desk
//! scale.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{DenoiserNet, NoiserNet};
use crate::net::{NetParams, NetSpec, OptState};
use crate::oracle::MixtureWorld;
use crate::scalar::Scalar;
use crate::schedule::ScheduleConfig;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Which trainer produced a checkpoint; decides which networks it carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Igct,
    CfgEdm,
    GuidedCd,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Igct => "igct",
            Algorithm::CfgEdm => "cfg-edm",
            Algorithm::GuidedCd => "guided-cd",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "igct" => Ok(Algorithm::Igct),
            "cfg-edm" => Ok(Algorithm::CfgEdm),
            "guided-cd" => Ok(Algorithm::GuidedCd),
            other => Err(Error::InvalidConfig {
                field: "algorithm".into(),
                reason: format!("unknown algorithm `{other}` (igct | cfg-edm | guided-cd)"),
            }),
        }
    }
}

/// One flat parameter tensor with its name and shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamArray<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetEntry<F> {
    pub name: String,
    pub spec: NetSpec,
    pub arrays: Vec<ParamArray<F>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptEntry<F> {
    pub name: String,
    pub step: u64,
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    /// First/second moment tensors, prefixed "m." / "v.".
    pub arrays: Vec<ParamArray<F>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct Checkpoint<F: Scalar> {
    pub schema_version: u32,
    pub algorithm: Algorithm,
    pub schedule: ScheduleConfig<F>,
    pub world: MixtureWorld<F>,
    pub iteration: u64,
    pub nets: Vec<NetEntry<F>>,
    pub optimizers: Vec<OptEntry<F>>,
}

fn arrays_of<F: Scalar>(params: &NetParams<F>, prefix: &str) -> Vec<ParamArray<F>> {
    params
        .named_tensors()
        .into_iter()
        .map(|(name, shape, data)| ParamArray {
            name: format!("{prefix}{name}"),
            shape,
            data: data.clone(),
        })
        .collect()
}

impl<F: Scalar> Checkpoint<F> {
    pub fn build(
        algorithm: Algorithm,
        schedule: &ScheduleConfig<F>,
        world: &MixtureWorld<F>,
        iteration: u64,
        entries: &[(&str, &NetParams<F>, &OptState<F>)],
    ) -> Self {
        let nets = entries
            .iter()
            .map(|(name, params, _)| NetEntry {
                name: name.to_string(),
                spec: params.spec,
                arrays: arrays_of(params, ""),
            })
            .collect();
        let optimizers = entries
            .iter()
            .map(|(name, _, opt)| {
                let (m, v) = opt.moments();
                let mut arrays = arrays_of(m, "m.");
                arrays.extend(arrays_of(v, "v."));
                OptEntry {
                    name: name.to_string(),
                    step: opt.step,
                    lr: opt.lr,
                    beta1: opt.beta1,
                    beta2: opt.beta2,
                    eps: opt.eps,
                    arrays,
                }
            })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            algorithm,
            schedule: schedule.clone(),
            world: world.clone(),
            iteration,
            nets,
            optimizers,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let ckpt: Self = serde_json::from_reader(std::io::BufReader::new(file))?;
        if ckpt.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaMismatch {
                got: ckpt.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        ckpt.schedule.validate()?;
        Ok(ckpt)
    }

    fn net_entry(&self, name: &'static str) -> Result<&NetEntry<F>> {
        self.nets
            .iter()
            .find(|e| e.name == name)
            .ok_or(Error::MissingNet(name))
    }

    /// Reconstruct a network's parameters by name.
    pub fn net(&self, name: &'static str) -> Result<NetParams<F>> {
        let entry = self.net_entry(name)?;
        let mut params = NetParams::zeros(entry.spec)?;
        for arr in &entry.arrays {
            params.fill_tensor(&arr.name, &arr.data)?;
        }
        Ok(params)
    }

    /// Reconstruct an optimizer state by network name.
    pub fn optimizer(&self, name: &'static str, params: &NetParams<F>) -> Result<OptState<F>> {
        let entry = self
            .optimizers
            .iter()
            .find(|e| e.name == name)
            .ok_or(Error::MissingNet(name))?;
        let mut opt = OptState::new(params, entry.lr, entry.beta1, entry.beta2, entry.eps);
        opt.step = entry.step;
        let (m, v) = opt.moments_mut();
        for arr in &entry.arrays {
            if let Some(rest) = arr.name.strip_prefix("m.") {
                m.fill_tensor(rest, &arr.data)?;
            } else if let Some(rest) = arr.name.strip_prefix("v.") {
                v.fill_tensor(rest, &arr.data)?;
            } else {
                return Err(Error::UnknownArray(arr.name.clone()));
            }
        }
        Ok(opt)
    }

    /// Assembled denoiser (all algorithms carry one).
    pub fn denoiser(&self) -> Result<DenoiserNet<F>> {
        Ok(DenoiserNet::new(
            self.net("denoiser")?,
            self.schedule.sigma_data,
            self.schedule.t_min,
        ))
    }

    /// Assembled noiser (iGCT checkpoints only).
    pub fn noiser(&self) -> Result<NoiserNet<F>> {
        Ok(NoiserNet::new(
            self.net("noiser")?,
            self.schedule.sigma_data,
            self.schedule.t_max,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trips_params_and_optimizer() {
        let spec = NetSpec {
            in_dim: 1,
            hidden_width: 6,
            hidden_layers: 2,
            time_features: 4,
            class_features: 2,
            guidance_features: 4,
            n_classes: 2,
        };
        let params = NetParams::<f64>::init(spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut opt = OptState::new(&params, 3e-4, 0.9, 0.999, 1e-8);
        opt.step = 17;
        let schedule = ScheduleConfig::default();
        let world = MixtureWorld::two_mode_1d(2.0, 0.2);
        let ckpt = Checkpoint::build(
            Algorithm::Igct,
            &schedule,
            &world,
            123,
            &[("denoiser", &params, &opt)],
        );
        let dir = std::env::temp_dir().join("igct-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ck.json");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::<f64>::load(&path).unwrap();
        assert_eq!(loaded.iteration, 123);
        assert_eq!(loaded.net("denoiser").unwrap(), params);
        let opt2 = loaded.optimizer("denoiser", &params).unwrap();
        assert_eq!(opt2.step, 17);
        assert_eq!(opt2.moments().0, opt.moments().0);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let dir = std::env::temp_dir().join("igct-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.json");
        let spec = NetSpec {
            in_dim: 1,
            hidden_width: 2,
            hidden_layers: 1,
            time_features: 2,
            class_features: 1,
            guidance_features: 0,
            n_classes: 1,
        };
        let params = NetParams::<f64>::zeros(spec).unwrap();
        let opt = OptState::new(&params, 1e-4, 0.9, 0.999, 1e-8);
        let world = MixtureWorld::new(
            1,
            vec![crate::oracle::MixtureComponent {
                class_id: 0,
                mean: vec![0.0],
                std: 1.0,
                weight: 1.0,
            }],
        )
        .unwrap();
        let mut ckpt = Checkpoint::build(
            Algorithm::CfgEdm,
            &ScheduleConfig::default(),
            &world,
            0,
            &[("denoiser", &params, &opt)],
        );
        ckpt.schema_version = 99;
        ckpt.save(&path).unwrap();
        assert!(matches!(
            Checkpoint::<f64>::load(&path),
            Err(Error::SchemaMismatch { got: 99, .. })
        ));
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn algorithm_names_round_trip() {
        for (alg, name) in [
            (Algorithm::Igct, "igct"),
            (Algorithm::CfgEdm, "cfg-edm"),
            (Algorithm::GuidedCd, "guided-cd"),
        ] {
            assert_eq!(alg.to_string(), name);
            assert_eq!(name.parse::<Algorithm>().unwrap(), alg);
        }
        assert!("edm".parse::<Algorithm>().is_err());
    }
}
