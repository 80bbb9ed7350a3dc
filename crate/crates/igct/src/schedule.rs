//! Time/noise/guidance scheduling shared by training and sampling.
//!
//! Noise levels are drawn from LogNormal(p_mean, p_std) and clamped to
//! [t_min, t_max]. The consistency step width follows the halving curriculum
//! `raw_dt(t) = t / 2^floor(k / d) * n(t)` with the sigmoid adjustment
//! `n(t) = 1 + 8 sigma(-t)`, and the guided-target mask ramps quadratically
//! from t_low to t_high up to q_cap.

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::{Error, Result};

/// All schedule constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct ScheduleConfig<F> {
    /// Lognormal location of log t.
    pub p_mean: F,
    /// Lognormal scale of log t.
    pub p_std: F,
    /// Noise floor.
    pub t_min: F,
    /// Noise ceiling.
    pub t_max: F,
    /// Iterations per halving of the consistency step.
    pub d: u64,
    /// Guidance-mask ramp start.
    pub t_low: F,
    /// Guidance-mask ramp end.
    pub t_high: F,
    /// Lowest guidance strength (w_min = 1 encodes "no guidance").
    pub w_min: F,
    /// Highest guidance strength.
    pub w_max: F,
    /// Data standard deviation used by the preconditioners.
    pub sigma_data: F,
    /// Guidance-mask ceiling.
    #[serde(default = "default_q_cap")]
    pub q_cap: F,
}

fn default_q_cap<F: Scalar>() -> F {
    F::of(0.9)
}

impl<F: Scalar> Default for ScheduleConfig<F> {
    fn default() -> Self {
        Self {
            p_mean: F::of(-1.1),
            p_std: F::of(2.0),
            t_min: F::of(0.002),
            t_max: F::of(80.0),
            d: 40_000,
            t_low: F::of(11.0),
            t_high: F::of(14.3),
            w_min: F::of(1.0),
            w_max: F::of(15.0),
            sigma_data: F::of(0.5),
            q_cap: F::of(0.9),
        }
    }
}

impl<F: Scalar> ScheduleConfig<F> {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Error::InvalidConfig {
            field: format!("schedule.{field}"),
            reason: reason.to_string(),
        };
        if !(self.t_min > F::zero()) {
            return Err(bad("t_min", "must be > 0"));
        }
        if !(self.t_min < self.t_low && self.t_low < self.t_high && self.t_high < self.t_max) {
            return Err(bad(
                "t_low",
                "require t_min < t_low < t_high < t_max",
            ));
        }
        if !(self.w_min >= F::zero()) {
            return Err(bad("w_min", "must be >= 0"));
        }
        if !(self.w_max >= self.w_min) {
            return Err(bad("w_max", "must be >= w_min"));
        }
        if self.d < 1 {
            return Err(bad("d", "must be >= 1"));
        }
        if !(self.p_std > F::zero()) {
            return Err(bad("p_std", "must be > 0"));
        }
        if !(self.q_cap >= F::zero() && self.q_cap <= F::one()) {
            return Err(bad("q_cap", "must lie in [0, 1]"));
        }
        if !(self.sigma_data > F::zero()) {
            return Err(bad("sigma_data", "must be > 0"));
        }
        Ok(())
    }
}

/// An adjacent (noisier, cleaner) level pair with its loss weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPair<F> {
    /// Noisier level.
    pub t: F,
    /// Cleaner level, clamped to t_min.
    pub r: F,
    /// Effective step t - r.
    pub delta_t: F,
    /// Consistency weight 1 / (t - r).
    pub lambda_gct: F,
    /// Inversion weight delta_t / t_max.
    pub lambda_ict: F,
}

/// Lognormal noise draw clamped to [t_min, t_max].
pub fn sample_noise_level<F: Scalar, R: Rng + ?Sized>(rng: &mut R, cfg: &ScheduleConfig<F>) -> F {
    let g = F::standard_normal(rng);
    let raw = (cfg.p_mean + cfg.p_std * g).exp();
    raw.max(cfg.t_min).min(cfg.t_max)
}

/// Sigmoid step adjustment `n(t) = 1 + 8 sigma(-t)`, decreasing from 5 to 1.
pub fn sigmoid_adjust<F: Scalar>(t: F) -> F {
    F::one() + F::of(8.0) / (F::one() + t.exp())
}

/// Unclamped step width `t / 2^floor(k / d) * n(t)`.
pub fn raw_step<F: Scalar>(t: F, k: u64, cfg: &ScheduleConfig<F>) -> F {
    let stage = halving_stage(k, cfg);
    // 2^stage is exact in binary, so successive stages halve raw_step exactly.
    let scale = F::of(2.0).powi(stage as i32);
    t / scale * sigmoid_adjust(t)
}

/// Halving stage floor(k / d) active at iteration k.
pub fn halving_stage<F: Scalar>(k: u64, cfg: &ScheduleConfig<F>) -> u64 {
    k / cfg.d
}

/// Build the (t, r) pair for iteration k. Clamping r to t_min degenerates the
/// pair to a denoising-style target, which is what makes the early curriculum
/// plain diffusion training.
///
/// At exactly t = t_min (a clamped draw) no cleaner level exists: the pair
/// comes back with delta_t = 0 and an infinite consistency weight. Loss code
/// treats such samples as carrying no consistency signal.
pub fn step_pair<F: Scalar>(t: F, k: u64, cfg: &ScheduleConfig<F>) -> Result<StepPair<F>> {
    if t < cfg.t_min || t > cfg.t_max {
        return Err(Error::TimeOutOfRange {
            t: t.as_f64(),
            lo: cfg.t_min.as_f64(),
            hi: cfg.t_max.as_f64(),
        });
    }
    let raw = raw_step(t, k, cfg);
    let r = (t - raw).max(cfg.t_min);
    let delta_t = t - r;
    Ok(StepPair {
        t,
        r,
        delta_t,
        lambda_gct: F::one() / delta_t,
        lambda_ict: delta_t / cfg.t_max,
    })
}

/// Probability that a draw at level t takes the guided-target branch:
/// `q(t) = q_cap * clamp((t - t_low) / (t_high - t_low), 0, 1)^2`.
pub fn guidance_mask_prob<F: Scalar>(t: F, cfg: &ScheduleConfig<F>) -> F {
    let ramp = ((t - cfg.t_low) / (cfg.t_high - cfg.t_low))
        .max(F::zero())
        .min(F::one());
    cfg.q_cap * ramp * ramp
}

/// Guidance strength drawn uniformly from [w_min, w_max].
pub fn sample_guidance_w<F: Scalar, R: Rng + ?Sized>(rng: &mut R, cfg: &ScheduleConfig<F>) -> F {
    Uniform::new_inclusive(cfg.w_min, cfg.w_max)
        .expect("validated w range")
        .sample(rng)
}

/// Power-spaced level grid from `a` to `b` (inclusive, n_steps+1 points):
/// interpolation is linear in t^(1/rho), so levels bunch near the smaller end.
/// Works in either direction; endpoints are exact.
pub fn karras_grid<F: Scalar>(a: F, b: F, n_steps: usize, rho: F) -> Result<Vec<F>> {
    if n_steps < 1 || a == b || a <= F::zero() || b <= F::zero() {
        return Err(Error::BadTimeGrid);
    }
    let inv_rho = F::one() / rho;
    let ia = a.powf(inv_rho);
    let ib = b.powf(inv_rho);
    let n = F::of(n_steps as f64);
    let mut grid = Vec::with_capacity(n_steps + 1);
    grid.push(a);
    for i in 1..n_steps {
        let u = F::of(i as f64) / n;
        grid.push((ia + u * (ib - ia)).powf(rho));
    }
    grid.push(b);
    Ok(grid)
}
