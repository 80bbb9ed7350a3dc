//! Loss functions and the three trainers: iGCT (denoiser + noiser with
//! reconstruction coupling), the CFG diffusion baseline, and guided
//! consistency distillation against the analytic teacher.
//!
//! Every loss draws its own minibatch from a dedicated RNG stream in a fixed
//! per-sample order (documented on each function), which is what makes runs
//! bit-reproducible and lets tests replay draws against independent
//! reimplementations.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Algorithm, Checkpoint};
use crate::model::{DenoiserNet, NoiserNet};
use crate::net::{optimizer_step, NetArch, NetParams, OptState};
use crate::ode;
use crate::oracle::{MixtureWorld, OracleModel};
use crate::scalar::{dist_sq, Scalar};
use crate::schedule::{
    guidance_mask_prob, halving_stage, karras_grid, sample_guidance_w, sample_noise_level,
    step_pair, ScheduleConfig,
};
use crate::{Error, Result};

/// One step of the reconstruction weight schedule: `value` applies while
/// k <= until_iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaStage<F> {
    pub until_iteration: u64,
    pub value: F,
}

/// Training hyperparameters shared by all three loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct TrainConfig<F: Scalar> {
    pub batch_size: usize,
    pub total_iters: u64,
    /// Reconstruction cadence: the coupling loss runs when k % i_skip == 0.
    pub i_skip: u64,
    pub lambda_recon: Vec<LambdaStage<F>>,
    pub huber_c: F,
    /// CFG baseline only: probability of replacing the class with null.
    pub label_dropout: F,
    /// Distillation baseline: number of grid segments.
    pub distill_n: usize,
    /// Karras spacing exponent for the distillation grid.
    pub rho: F,
    pub lr: F,
    /// Optional geometric learning-rate decay target reached at the last
    /// iteration; None keeps the rate constant.
    pub lr_decay_to: Option<F>,
    pub beta1: F,
    pub beta2: F,
    pub adam_eps: F,
    pub log_every: u64,
    pub checkpoint_every: Option<u64>,
    /// Optional early stop once floor(k / d) exceeds this halving stage.
    pub final_stage: Option<u64>,
}

impl<F: Scalar> Default for TrainConfig<F> {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            total_iters: 360_000,
            i_skip: 10,
            lambda_recon: vec![LambdaStage {
                until_iteration: u64::MAX,
                value: F::of(2e-5),
            }],
            huber_c: F::of(0.03),
            label_dropout: F::of(0.1),
            distill_n: 18,
            rho: F::of(7.0),
            lr: F::of(1e-4),
            lr_decay_to: None,
            beta1: F::of(0.9),
            beta2: F::of(0.999),
            adam_eps: F::of(1e-8),
            log_every: 100,
            checkpoint_every: None,
            final_stage: None,
        }
    }
}

impl<F: Scalar> TrainConfig<F> {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Error::InvalidConfig {
            field: format!("train.{field}"),
            reason: reason.to_string(),
        };
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be >= 1"));
        }
        if self.total_iters == 0 {
            return Err(bad("total_iters", "must be >= 1"));
        }
        if self.i_skip == 0 {
            return Err(bad("i_skip", "must be >= 1"));
        }
        if !(self.huber_c > F::zero()) {
            return Err(bad("huber_c", "must be > 0"));
        }
        if !(self.label_dropout >= F::zero() && self.label_dropout <= F::one()) {
            return Err(bad("label_dropout", "must lie in [0, 1]"));
        }
        if self.lambda_recon.is_empty() {
            return Err(bad("lambda_recon", "must contain at least one stage"));
        }
        if self
            .lambda_recon
            .windows(2)
            .any(|w| w[1].until_iteration <= w[0].until_iteration)
        {
            return Err(bad(
                "lambda_recon",
                "stage thresholds must be strictly increasing",
            ));
        }
        if self.distill_n == 0 {
            return Err(bad("distill_n", "must be >= 1"));
        }
        if self.log_every == 0 {
            return Err(bad("log_every", "must be >= 1"));
        }
        if let Some(target) = self.lr_decay_to {
            if !(target > F::zero() && target <= self.lr) {
                return Err(bad("lr_decay_to", "must satisfy 0 < lr_decay_to <= lr"));
            }
        }
        Ok(())
    }
}

/// Learning rate at iteration k under the optional geometric decay.
pub fn lr_at<F: Scalar>(tcfg: &TrainConfig<F>, k: u64) -> F {
    match tcfg.lr_decay_to {
        Some(target) if tcfg.total_iters > 1 => {
            let frac = F::of(k as f64) / F::of((tcfg.total_iters - 1) as f64);
            tcfg.lr * (target / tcfg.lr).powf(frac)
        }
        _ => tcfg.lr,
    }
}

/// Active reconstruction weight at iteration k (last stage extends forever).
pub fn lambda_recon_at<F: Scalar>(stages: &[LambdaStage<F>], k: u64) -> F {
    stages
        .iter()
        .find(|s| k <= s.until_iteration)
        .or(stages.last())
        .map(|s| s.value)
        .unwrap_or_else(F::zero)
}

/// Pseudo-Huber distance sqrt(|a - b|^2 + c^2) - c.
pub fn pseudo_huber<F: Scalar>(a: &[F], b: &[F], c: F) -> F {
    (dist_sq(a, b) + c * c).sqrt() - c
}

/// Plain consistency target x_r = x_t - delta z.
fn ct_target<F: Scalar>(x_t: &[F], z: &[F], delta: F) -> Vec<F> {
    x_t.iter().zip(z).map(|(&xt, &zi)| xt - delta * zi).collect()
}

/// Guided target x_r = x_t - delta [w z* + (1 - w) z].
fn guided_target<F: Scalar>(x_t: &[F], z_star: &[F], z: &[F], w: F, delta: F) -> Vec<F> {
    x_t.iter()
        .zip(z_star.iter().zip(z))
        .map(|(&xt, (&zs, &zi))| xt - delta * (w * zs + (F::one() - w) * zi))
        .collect()
}

/// Batch outcome of the guided consistency loss.
#[derive(Debug, Clone, Copy)]
pub struct GctStats<F> {
    pub loss: F,
    /// How many samples took the guided branch.
    pub guided: usize,
}

/// Guided consistency loss for the denoiser.
///
/// Per-sample draw order: source pair, target pair, z (dims), t, w, branch u.
/// Gradients (averaged over the batch, weight inside the mean) accumulate
/// into `grads`; the frozen target branch is a stop-gradient evaluation.
#[allow(clippy::too_many_arguments)]
pub fn loss_gct<F: Scalar, R: Rng + ?Sized>(
    den: &DenoiserNet<F>,
    grads: &mut NetParams<F>,
    world: &MixtureWorld<F>,
    scfg: &ScheduleConfig<F>,
    k: u64,
    batch_size: usize,
    huber_c: F,
    rng: &mut R,
) -> Result<GctStats<F>> {
    let dims = world.dims();
    let inv_b = F::one() / F::of(batch_size as f64);
    let mut total = F::zero();
    let mut guided_count = 0usize;
    for _ in 0..batch_size {
        let src = world.sample_data(rng, None)?;
        let tar = world.sample_data(rng, None)?;
        let z: Vec<F> = (0..dims).map(|_| F::standard_normal(rng)).collect();
        let t = sample_noise_level(rng, scfg);
        let w = sample_guidance_w(rng, scfg);
        let u = F::unit_uniform(rng);
        let pair = step_pair(t, k, scfg)?;
        if pair.delta_t == F::zero() {
            continue; // clamped draw at the floor: no consistency signal
        }
        let x_t: Vec<F> = src.x.iter().zip(&z).map(|(&x0, &zi)| x0 + t * zi).collect();
        let guided = u < guidance_mask_prob(t, scfg);
        let (x_r, class) = if guided {
            guided_count += 1;
            let z_star: Vec<F> = x_t
                .iter()
                .zip(&tar.x)
                .map(|(&xt, &x0)| (xt - x0) / t)
                .collect();
            (guided_target(&x_t, &z_star, &z, w, pair.delta_t), tar.class)
        } else {
            (ct_target(&x_t, &z, pair.delta_t), src.class)
        };
        let (online, tape) = den.denoise_traced(&x_t, t, Some(class), Some(w))?;
        let target = den.denoise(&x_r, pair.r, Some(class), Some(w))?;
        let soft = (dist_sq(&online, &target) + huber_c * huber_c).sqrt();
        total += pair.lambda_gct * (soft - huber_c) * inv_b;
        let scale = pair.lambda_gct * inv_b / soft;
        let upstream: Vec<F> = online
            .iter()
            .zip(&target)
            .map(|(&o, &tg)| scale * (o - tg))
            .collect();
        den.backward(&tape, &upstream, grads, None)?;
    }
    Ok(GctStats {
        loss: total,
        guided: guided_count,
    })
}

/// Inverse consistency loss for the noiser. The online branch sits at the
/// cleaner level x_r and regresses toward the frozen noisier evaluation at
/// x_t (the swap relative to the denoiser loss).
///
/// Per-sample draw order: data pair, z (dims), t.
#[allow(clippy::too_many_arguments)]
pub fn loss_ict<F: Scalar, R: Rng + ?Sized>(
    noi: &NoiserNet<F>,
    grads: &mut NetParams<F>,
    world: &MixtureWorld<F>,
    scfg: &ScheduleConfig<F>,
    k: u64,
    batch_size: usize,
    huber_c: F,
    rng: &mut R,
) -> Result<F> {
    let dims = world.dims();
    let inv_b = F::one() / F::of(batch_size as f64);
    let mut total = F::zero();
    for _ in 0..batch_size {
        let sample = world.sample_data(rng, None)?;
        let z: Vec<F> = (0..dims).map(|_| F::standard_normal(rng)).collect();
        let t = sample_noise_level(rng, scfg);
        let pair = step_pair(t, k, scfg)?;
        if pair.delta_t == F::zero() {
            continue;
        }
        let x_t: Vec<F> = sample
            .x
            .iter()
            .zip(&z)
            .map(|(&x0, &zi)| x0 + t * zi)
            .collect();
        let x_r = ct_target(&x_t, &z, pair.delta_t);
        let (online, tape) = noi.latent_traced(&x_r, pair.r, Some(sample.class))?;
        let target = noi.latent(&x_t, t, Some(sample.class))?;
        let soft = (dist_sq(&online, &target) + huber_c * huber_c).sqrt();
        total += pair.lambda_ict * (soft - huber_c) * inv_b;
        let scale = pair.lambda_ict * inv_b / soft;
        let upstream: Vec<F> = online
            .iter()
            .zip(&target)
            .map(|(&o, &tg)| scale * (o - tg))
            .collect();
        noi.backward(&tape, &upstream, grads, None)?;
    }
    Ok(total)
}

/// Reconstruction coupling d(D(N(x_0, t_min, c), t_max, c, w_min), x_0).
/// Gradients flow through both networks, scaled by `weight` (the active
/// lambda_recon); the returned loss is unweighted.
///
/// Per-sample draw order: data pair.
#[allow(clippy::too_many_arguments)]
pub fn loss_recon<F: Scalar, R: Rng + ?Sized>(
    den: &DenoiserNet<F>,
    noi: &NoiserNet<F>,
    g_den: &mut NetParams<F>,
    g_noi: &mut NetParams<F>,
    world: &MixtureWorld<F>,
    scfg: &ScheduleConfig<F>,
    batch_size: usize,
    huber_c: F,
    weight: F,
    rng: &mut R,
) -> Result<F> {
    let dims = world.dims();
    let inv_b = F::one() / F::of(batch_size as f64);
    let mut total = F::zero();
    let guidance = den.takes_guidance().then_some(scfg.w_min);
    for _ in 0..batch_size {
        let sample = world.sample_data(rng, None)?;
        let (latent, n_tape) = noi.latent_traced(&sample.x, scfg.t_min, Some(sample.class))?;
        let (recon, d_tape) =
            den.denoise_traced(&latent, scfg.t_max, Some(sample.class), guidance)?;
        let soft = (dist_sq(&recon, &sample.x) + huber_c * huber_c).sqrt();
        total += (soft - huber_c) * inv_b;
        let scale = weight * inv_b / soft;
        let upstream: Vec<F> = recon
            .iter()
            .zip(&sample.x)
            .map(|(&r, &x0)| scale * (r - x0))
            .collect();
        let mut d_latent = vec![F::zero(); dims];
        den.backward(&d_tape, &upstream, g_den, Some(&mut d_latent))?;
        noi.backward(&n_tape, &d_latent, g_noi, None)?;
    }
    Ok(total)
}

/// CFG diffusion baseline objective: EDM-weighted denoising with label
/// dropout to the null class.
///
/// Per-sample draw order: data pair, z (dims), t, dropout u.
pub fn loss_edm_denoise<F: Scalar, R: Rng + ?Sized>(
    den: &DenoiserNet<F>,
    grads: &mut NetParams<F>,
    world: &MixtureWorld<F>,
    scfg: &ScheduleConfig<F>,
    batch_size: usize,
    label_dropout: F,
    rng: &mut R,
) -> Result<F> {
    let dims = world.dims();
    let sig = scfg.sigma_data;
    let inv_b = F::one() / F::of(batch_size as f64);
    let two = F::of(2.0);
    let mut total = F::zero();
    for _ in 0..batch_size {
        let sample = world.sample_data(rng, None)?;
        let z: Vec<F> = (0..dims).map(|_| F::standard_normal(rng)).collect();
        let t = sample_noise_level(rng, scfg);
        let u = F::unit_uniform(rng);
        let class = if u < label_dropout {
            None
        } else {
            Some(sample.class)
        };
        let x_t: Vec<F> = sample
            .x
            .iter()
            .zip(&z)
            .map(|(&x0, &zi)| x0 + t * zi)
            .collect();
        let lambda = (t * t + sig * sig) / (t * sig * (t * sig));
        let (out, tape) = den.denoise_traced(&x_t, t, class, None)?;
        total += lambda * dist_sq(&out, &sample.x) * inv_b;
        let upstream: Vec<F> = out
            .iter()
            .zip(&sample.x)
            .map(|(&o, &x0)| two * lambda * inv_b * (o - x0))
            .collect();
        den.backward(&tape, &upstream, grads, None)?;
    }
    Ok(total)
}

/// Guided consistency distillation against the analytic teacher: the cleaner
/// point is one Heun step of the guided PF-ODE (shared with solve_pf_ode).
///
/// Per-sample draw order: data pair, z (dims), segment index, w.
#[allow(clippy::too_many_arguments)]
pub fn loss_gcd<F: Scalar, R: Rng + ?Sized>(
    student: &DenoiserNet<F>,
    grads: &mut NetParams<F>,
    world: &MixtureWorld<F>,
    scfg: &ScheduleConfig<F>,
    grid: &[F],
    batch_size: usize,
    huber_c: F,
    rng: &mut R,
) -> Result<F> {
    let dims = world.dims();
    let teacher = OracleModel { world };
    let inv_b = F::one() / F::of(batch_size as f64);
    let segments = grid.len() - 1;
    let mut total = F::zero();
    for _ in 0..batch_size {
        let sample = world.sample_data(rng, None)?;
        let z: Vec<F> = (0..dims).map(|_| F::standard_normal(rng)).collect();
        let n = rng.random_range(0..segments);
        let w = sample_guidance_w(rng, scfg);
        let (t_clean, t_noisy) = (grid[n], grid[n + 1]);
        let x_noisy: Vec<F> = sample
            .x
            .iter()
            .zip(&z)
            .map(|(&x0, &zi)| x0 + t_noisy * zi)
            .collect();
        let x_clean = ode::heun_step(&teacher, &x_noisy, t_noisy, t_clean, Some(sample.class), w)?;
        let lambda = F::one() / (t_noisy - t_clean);
        let (online, tape) = student.denoise_traced(&x_noisy, t_noisy, Some(sample.class), Some(w))?;
        let target = student.denoise(&x_clean, t_clean, Some(sample.class), Some(w))?;
        let soft = (dist_sq(&online, &target) + huber_c * huber_c).sqrt();
        total += lambda * (soft - huber_c) * inv_b;
        let scale = lambda * inv_b / soft;
        let upstream: Vec<F> = online
            .iter()
            .zip(&target)
            .map(|(&o, &tg)| scale * (o - tg))
            .collect();
        student.backward(&tape, &upstream, grads, None)?;
    }
    Ok(total)
}

/// One logged training row. `loss_gct` carries the primary objective of
/// whichever loop produced it; the other loss columns stay empty for the
/// baselines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunRecordRow<F> {
    pub k: u64,
    pub loss_gct: F,
    pub loss_ict: Option<F>,
    pub loss_recon: Option<F>,
    pub lambda_recon: Option<F>,
    pub delta_t_stage: u64,
    pub wall_ms: u64,
}

/// Receives streamed rows and periodic checkpoints during a run.
pub trait TrainSink<F: Scalar> {
    fn on_record(&mut self, row: &RunRecordRow<F>) -> std::io::Result<()> {
        let _ = row;
        Ok(())
    }
    fn on_checkpoint(&mut self, ckpt: &Checkpoint<F>) -> std::io::Result<()> {
        let _ = ckpt;
        Ok(())
    }
}

/// Sink that drops everything (tests, calibration runs).
pub struct NullSink;

impl<F: Scalar> TrainSink<F> for NullSink {}

/// Sink that keeps rows in memory.
#[derive(Default)]
pub struct MemorySink<F> {
    pub rows: Vec<RunRecordRow<F>>,
}

impl<F: Scalar> TrainSink<F> for MemorySink<F> {
    fn on_record(&mut self, row: &RunRecordRow<F>) -> std::io::Result<()> {
        self.rows.push(*row);
        Ok(())
    }
}

// Independent ChaCha streams per purpose, all derived from the master seed.
// Keeping the draws disjoint is what makes the lambda_recon = 0 ablation an
// exact parameter-trajectory match.
const STREAM_DEN_INIT: u64 = 0;
const STREAM_NOI_INIT: u64 = 1;
const STREAM_GCT: u64 = 2;
const STREAM_ICT: u64 = 3;
const STREAM_RECON: u64 = 4;
const STREAM_BASELINE: u64 = 5;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn ensure_finite<F: Scalar>(value: F, quantity: &str, iteration: u64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            quantity: quantity.to_string(),
            iteration,
        })
    }
}

fn step_or_diverge<F: Scalar>(
    params: &mut NetParams<F>,
    grads: &NetParams<F>,
    opt: &mut OptState<F>,
    k: u64,
) -> Result<()> {
    optimizer_step(params, grads, opt).map_err(|e| match e {
        Error::NonFinite { quantity, .. } => Error::NonFinite {
            quantity,
            iteration: k,
        },
        other => other,
    })
}

/// Trained iGCT pair with optimizer states.
#[derive(Debug)]
pub struct IgctModels<F: Scalar> {
    pub denoiser: DenoiserNet<F>,
    pub noiser: NoiserNet<F>,
    pub den_opt: OptState<F>,
    pub noi_opt: OptState<F>,
    pub iterations: u64,
}

/// Trained single-denoiser baseline.
#[derive(Debug)]
pub struct BaselineModel<F: Scalar> {
    pub denoiser: DenoiserNet<F>,
    pub opt: OptState<F>,
    pub iterations: u64,
}

/// Joint iGCT loop: per iteration the guided consistency loss updates theta,
/// the inverse consistency loss updates phi, and every i_skip iterations the
/// reconstruction loss couples both.
pub fn run_igct<F: Scalar, S: TrainSink<F>>(
    world: &MixtureWorld<F>,
    scfg: &ScheduleConfig<F>,
    arch: &NetArch,
    tcfg: &TrainConfig<F>,
    seed: u64,
    sink: &mut S,
) -> Result<IgctModels<F>> {
    scfg.validate()?;
    tcfg.validate()?;
    let sigma = scfg.sigma_data;
    let den_spec = arch.guided_denoiser_spec(world.dims(), world.n_classes());
    let noi_spec = arch.plain_spec(world.dims(), world.n_classes());
    let mut den = DenoiserNet::new(
        NetParams::init(den_spec, &mut stream(seed, STREAM_DEN_INIT))?,
        sigma,
        scfg.t_min,
    );
    let mut noi = NoiserNet::new(
        NetParams::init(noi_spec, &mut stream(seed, STREAM_NOI_INIT))?,
        sigma,
        scfg.t_max,
    );
    let mut g_den = den.net.zeros_like();
    let mut g_noi = noi.net.zeros_like();
    let mut den_opt = OptState::new(&den.net, tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.adam_eps);
    let mut noi_opt = OptState::new(&noi.net, tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.adam_eps);
    let mut rng_gct = stream(seed, STREAM_GCT);
    let mut rng_ict = stream(seed, STREAM_ICT);
    let mut rng_recon = stream(seed, STREAM_RECON);

    let started = Instant::now();
    let mut iterations = 0u64;
    for k in 0..tcfg.total_iters {
        if tcfg
            .final_stage
            .is_some_and(|stage| halving_stage(k, scfg) > stage)
        {
            break;
        }
        g_den.zero();
        g_noi.zero();
        let gct = loss_gct(
            &den,
            &mut g_den,
            world,
            scfg,
            k,
            tcfg.batch_size,
            tcfg.huber_c,
            &mut rng_gct,
        )?;
        let ict = loss_ict(
            &noi,
            &mut g_noi,
            world,
            scfg,
            k,
            tcfg.batch_size,
            tcfg.huber_c,
            &mut rng_ict,
        )?;
        let (recon, lambda) = if k % tcfg.i_skip == 0 {
            let lambda = lambda_recon_at(&tcfg.lambda_recon, k);
            let recon = loss_recon(
                &den,
                &noi,
                &mut g_den,
                &mut g_noi,
                world,
                scfg,
                tcfg.batch_size,
                tcfg.huber_c,
                lambda,
                &mut rng_recon,
            )?;
            (Some(recon), Some(lambda))
        } else {
            (None, None)
        };

        let row = RunRecordRow {
            k,
            loss_gct: gct.loss,
            loss_ict: Some(ict),
            loss_recon: recon,
            lambda_recon: lambda,
            delta_t_stage: halving_stage(k, scfg),
            wall_ms: started.elapsed().as_millis() as u64,
        };
        let diverged = !gct.loss.is_finite()
            || !ict.is_finite()
            || recon.is_some_and(|r| !r.is_finite());
        if diverged || k % tcfg.log_every == 0 || k + 1 == tcfg.total_iters {
            sink.on_record(&row)?;
        }
        ensure_finite(gct.loss, "loss_gct", k)?;
        ensure_finite(ict, "loss_ict", k)?;
        if let Some(r) = recon {
            ensure_finite(r, "loss_recon", k)?;
        }

        den_opt.lr = lr_at(tcfg, k);
        noi_opt.lr = den_opt.lr;
        step_or_diverge(&mut den.net, &g_den, &mut den_opt, k)?;
        step_or_diverge(&mut noi.net, &g_noi, &mut noi_opt, k)?;
        iterations = k + 1;

        if tcfg
            .checkpoint_every
            .is_some_and(|every| (k + 1) % every == 0)
        {
            let ckpt = Checkpoint::build(
                Algorithm::Igct,
                scfg,
                world,
                k + 1,
                &[("denoiser", &den.net, &den_opt), ("noiser", &noi.net, &noi_opt)],
            );
            sink.on_checkpoint(&ckpt)?;
        }
    }
    Ok(IgctModels {
        denoiser: den,
        noiser: noi,
        den_opt,
        noi_opt,
        iterations,
    })
}

/// CFG diffusion baseline loop.
pub fn run_cfg_edm<F: Scalar, S: TrainSink<F>>(
    world: &MixtureWorld<F>,
    scfg: &ScheduleConfig<F>,
    arch: &NetArch,
    tcfg: &TrainConfig<F>,
    seed: u64,
    sink: &mut S,
) -> Result<BaselineModel<F>> {
    scfg.validate()?;
    tcfg.validate()?;
    let spec = arch.plain_spec(world.dims(), world.n_classes());
    let mut den = DenoiserNet::new(
        NetParams::init(spec, &mut stream(seed, STREAM_DEN_INIT))?,
        scfg.sigma_data,
        scfg.t_min,
    );
    let mut grads = den.net.zeros_like();
    let mut opt = OptState::new(&den.net, tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.adam_eps);
    let mut rng = stream(seed, STREAM_BASELINE);
    let started = Instant::now();
    for k in 0..tcfg.total_iters {
        grads.zero();
        let loss = loss_edm_denoise(
            &den,
            &mut grads,
            world,
            scfg,
            tcfg.batch_size,
            tcfg.label_dropout,
            &mut rng,
        )?;
        let row = RunRecordRow {
            k,
            loss_gct: loss,
            loss_ict: None,
            loss_recon: None,
            lambda_recon: None,
            delta_t_stage: halving_stage(k, scfg),
            wall_ms: started.elapsed().as_millis() as u64,
        };
        if !loss.is_finite() || k % tcfg.log_every == 0 || k + 1 == tcfg.total_iters {
            sink.on_record(&row)?;
        }
        ensure_finite(loss, "loss_edm", k)?;
        opt.lr = lr_at(tcfg, k);
        step_or_diverge(&mut den.net, &grads, &mut opt, k)?;
        if tcfg
            .checkpoint_every
            .is_some_and(|every| (k + 1) % every == 0)
        {
            let ckpt = Checkpoint::build(
                Algorithm::CfgEdm,
                scfg,
                world,
                k + 1,
                &[("denoiser", &den.net, &opt)],
            );
            sink.on_checkpoint(&ckpt)?;
        }
    }
    Ok(BaselineModel {
        denoiser: den,
        opt,
        iterations: tcfg.total_iters,
    })
}

/// Guided consistency distillation loop with the analytic teacher.
pub fn run_guided_cd<F: Scalar, S: TrainSink<F>>(
    world: &MixtureWorld<F>,
    scfg: &ScheduleConfig<F>,
    arch: &NetArch,
    tcfg: &TrainConfig<F>,
    seed: u64,
    sink: &mut S,
) -> Result<BaselineModel<F>> {
    scfg.validate()?;
    tcfg.validate()?;
    let spec = arch.guided_denoiser_spec(world.dims(), world.n_classes());
    let mut den = DenoiserNet::new(
        NetParams::init(spec, &mut stream(seed, STREAM_DEN_INIT))?,
        scfg.sigma_data,
        scfg.t_min,
    );
    let grid = karras_grid(scfg.t_min, scfg.t_max, tcfg.distill_n, tcfg.rho)?;
    let mut grads = den.net.zeros_like();
    let mut opt = OptState::new(&den.net, tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.adam_eps);
    let mut rng = stream(seed, STREAM_BASELINE);
    let started = Instant::now();
    for k in 0..tcfg.total_iters {
        grads.zero();
        let loss = loss_gcd(
            &den,
            &mut grads,
            world,
            scfg,
            &grid,
            tcfg.batch_size,
            tcfg.huber_c,
            &mut rng,
        )?;
        let row = RunRecordRow {
            k,
            loss_gct: loss,
            loss_ict: None,
            loss_recon: None,
            lambda_recon: None,
            delta_t_stage: halving_stage(k, scfg),
            wall_ms: started.elapsed().as_millis() as u64,
        };
        if !loss.is_finite() || k % tcfg.log_every == 0 || k + 1 == tcfg.total_iters {
            sink.on_record(&row)?;
        }
        ensure_finite(loss, "loss_gcd", k)?;
        opt.lr = lr_at(tcfg, k);
        step_or_diverge(&mut den.net, &grads, &mut opt, k)?;
        if tcfg
            .checkpoint_every
            .is_some_and(|every| (k + 1) % every == 0)
        {
            let ckpt = Checkpoint::build(
                Algorithm::GuidedCd,
                scfg,
                world,
                k + 1,
                &[("denoiser", &den.net, &opt)],
            );
            sink.on_checkpoint(&ckpt)?;
        }
    }
    Ok(BaselineModel {
        denoiser: den,
        opt,
        iterations: tcfg.total_iters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetSpec;

    fn world() -> MixtureWorld<f64> {
        MixtureWorld::two_mode_1d(2.0, 0.2)
    }

    fn scfg() -> ScheduleConfig<f64> {
        ScheduleConfig {
            sigma_data: world().sigma_data(),
            ..ScheduleConfig::default()
        }
    }

    /// Schedule with all noise draws pinned (numerically) at one level.
    fn pinned_scfg(t: f64) -> ScheduleConfig<f64> {
        ScheduleConfig {
            p_mean: t.ln(),
            p_std: 1e-12,
            ..scfg()
        }
    }

    fn tiny_arch() -> NetArch {
        NetArch {
            hidden_width: 8,
            hidden_layers: 2,
            time_features: 8,
            class_features: 4,
            guidance_features: 4,
        }
    }

    fn randomized_denoiser(seed: u64, guidance: usize) -> DenoiserNet<f64> {
        let spec = NetSpec {
            in_dim: 1,
            hidden_width: 8,
            hidden_layers: 2,
            time_features: 8,
            class_features: 4,
            guidance_features: guidance,
            n_classes: 2,
        };
        let mut net = NetParams::init(spec, &mut stream(seed, 0)).unwrap();
        let mut rng = stream(seed, 90);
        for t in net.tensors_mut() {
            for v in t.iter_mut() {
                *v = 0.25 * f64::standard_normal(&mut rng);
            }
        }
        DenoiserNet::new(net, scfg().sigma_data, scfg().t_min)
    }

    fn randomized_noiser(seed: u64) -> NoiserNet<f64> {
        let spec = NetSpec {
            in_dim: 1,
            hidden_width: 8,
            hidden_layers: 2,
            time_features: 8,
            class_features: 4,
            guidance_features: 0,
            n_classes: 2,
        };
        let mut net = NetParams::init(spec, &mut stream(seed, 1)).unwrap();
        let mut rng = stream(seed, 91);
        for t in net.tensors_mut() {
            for v in t.iter_mut() {
                *v = 0.25 * f64::standard_normal(&mut rng);
            }
        }
        NoiserNet::new(net, scfg().sigma_data, scfg().t_max)
    }

    #[test]
    fn pseudo_huber_vanishes_on_equal_inputs() {
        assert_eq!(pseudo_huber(&[1.0, -2.0], &[1.0, -2.0], 0.03), 0.0);
    }

    #[test]
    fn pseudo_huber_approaches_l1_for_large_residuals() {
        let c = 0.03f64;
        let r = 100.0 * c;
        let val = pseudo_huber(&[r], &[0.0], c);
        let l1 = r - c;
        assert!((val - l1).abs() / l1 < 1e-3, "{val} vs {l1}");
    }

    #[test]
    fn pseudo_huber_approaches_half_quadratic_for_small_residuals() {
        // Taylor: sqrt(r^2 + c^2) - c = r^2 / (2c) + O(r^4 / c^3).
        let c = 0.03f64;
        let r = c / 100.0;
        let val = pseudo_huber(&[r], &[0.0], c);
        let l2 = r * r / (2.0 * c);
        assert!((val - l2).abs() / l2 < 1e-3, "{val} vs {l2}");
    }

    #[test]
    fn guided_target_at_unit_w_uses_only_the_guided_noise() {
        let x_t = [3.0, -1.0];
        let z_star = [0.5, 0.25];
        let z = [9.9, -9.9];
        let out = guided_target(&x_t, &z_star, &z, 1.0, 0.4);
        let expected = ct_target(&x_t, &z_star, 0.4);
        assert_eq!(out, expected);
    }

    #[test]
    fn guided_target_collapses_when_noises_coincide() {
        // Source = target sample makes z* identical to z; both branches then
        // build the same cleaner point for any w (up to the rounding of the
        // w z* + (1 - w) z recombination).
        let x_t = [3.0f64, -1.0];
        let z = [0.7, -0.3];
        for w in [1.0f64, 7.0, 15.0] {
            let guided = guided_target(&x_t, &z, &z, w, 0.4);
            let plain = ct_target(&x_t, &z, 0.4);
            for (g, p) in guided.iter().zip(&plain) {
                assert!((g - p).abs() <= 16.0 * f64::EPSILON * w, "{g} vs {p}");
            }
        }
    }

    #[test]
    fn lambda_recon_schedule_staging() {
        let stages = vec![
            LambdaStage { until_iteration: 180_000, value: 2e-5 },
            LambdaStage { until_iteration: 200_000, value: 4e-5 },
            LambdaStage { until_iteration: 260_000, value: 6e-5 },
        ];
        assert_eq!(lambda_recon_at(&stages, 0), 2e-5);
        assert_eq!(lambda_recon_at(&stages, 180_000), 2e-5);
        assert_eq!(lambda_recon_at(&stages, 180_001), 4e-5);
        assert_eq!(lambda_recon_at(&stages, 250_000), 6e-5);
        assert_eq!(lambda_recon_at(&stages, 999_999), 6e-5);
    }

    #[test]
    fn gct_low_noise_region_never_takes_guided_branch() {
        let den = randomized_denoiser(1, 4);
        let cfg = pinned_scfg(5.0);
        let mut grads = den.net.zeros_like();
        let mut rng = stream(7, STREAM_GCT);
        let stats = loss_gct(&den, &mut grads, &world(), &cfg, 0, 100_000, 0.03, &mut rng).unwrap();
        assert_eq!(stats.guided, 0);
    }

    #[test]
    fn gct_branch_frequency_tracks_mask_probability() {
        let den = randomized_denoiser(2, 4);
        let w = world();
        for t in [11.5, 12.65, 14.3, 20.0, 80.0] {
            let cfg = pinned_scfg(t);
            let q = crate::schedule::guidance_mask_prob(t, &cfg);
            let n = 20_000usize;
            let mut grads = den.net.zeros_like();
            let mut rng = stream(8, STREAM_GCT);
            let stats = loss_gct(&den, &mut grads, &w, &cfg, 0, n, 0.03, &mut rng).unwrap();
            let freq = stats.guided as f64 / n as f64;
            let sigma = (q * (1.0 - q) / n as f64).sqrt();
            assert!(
                (freq - q).abs() <= 3.0 * sigma + 1e-9,
                "t = {t}: freq {freq} vs q {q}"
            );
        }
    }

    /// Independent plain conditional CT implementation on shared randomness:
    /// with the guided branch disabled (q_cap = 0) and w pinned at w_min,
    /// loss_gct must reproduce it term by term.
    #[test]
    fn gct_degenerates_to_plain_ct() {
        let den = randomized_denoiser(3, 4);
        let w = world();
        let cfg = ScheduleConfig {
            q_cap: 0.0,
            w_min: 1.0,
            w_max: 1.0,
            ..scfg()
        };
        let (k, batch, c) = (75_000u64, 64usize, 0.03);
        let mut rng = stream(9, STREAM_GCT);
        let mut replay = rng.clone();
        let mut grads = den.net.zeros_like();
        let got = loss_gct(&den, &mut grads, &w, &cfg, k, batch, c, &mut rng)
            .unwrap()
            .loss;

        let mut expected = 0.0;
        for _ in 0..batch {
            let src = w.sample_data(&mut replay, None).unwrap();
            let _tar = w.sample_data(&mut replay, None).unwrap();
            let z = f64::standard_normal(&mut replay);
            let t = sample_noise_level(&mut replay, &cfg);
            let wg = sample_guidance_w(&mut replay, &cfg);
            assert_eq!(wg, 1.0);
            let _u = f64::unit_uniform(&mut replay);
            let pair = step_pair(t, k, &cfg).unwrap();
            if pair.delta_t == 0.0 {
                continue;
            }
            let x_t = [src.x[0] + t * z];
            let x_r = [x_t[0] - pair.delta_t * z];
            let online = den.denoise(&x_t, t, Some(src.class), Some(wg)).unwrap();
            let target = den.denoise(&x_r, pair.r, Some(src.class), Some(wg)).unwrap();
            let soft = (dist_sq(&online, &target) + c * c).sqrt();
            expected += pair.lambda_gct * (soft - c) / batch as f64;
        }
        assert_eq!(got, expected);
    }

    /// The frozen target is treated as a constant within the step: finite
    /// differences of the loss with the target pinned at the original
    /// parameters must match the analytic gradients.
    #[test]
    fn gct_target_branch_is_detached() {
        let den = randomized_denoiser(4, 4);
        let w = world();
        let cfg = scfg();
        let (k, c) = (50_000u64, 0.03);
        let mut rng = stream(10, STREAM_GCT);
        let mut replay = rng.clone();
        let mut grads = den.net.zeros_like();
        loss_gct(&den, &mut grads, &w, &cfg, k, 1, c, &mut rng).unwrap();

        // Replay the single sample's draws.
        let src = w.sample_data(&mut replay, None).unwrap();
        let tar = w.sample_data(&mut replay, None).unwrap();
        let z = f64::standard_normal(&mut replay);
        let t = sample_noise_level(&mut replay, &cfg);
        let wg = sample_guidance_w(&mut replay, &cfg);
        let u = f64::unit_uniform(&mut replay);
        let pair = step_pair(t, k, &cfg).unwrap();
        assert!(pair.delta_t > 0.0, "degenerate draw; pick another seed");
        let x_t = [src.x[0] + t * z];
        let guided = u < crate::schedule::guidance_mask_prob(t, &cfg);
        let (x_r, class) = if guided {
            let z_star = [(x_t[0] - tar.x[0]) / t];
            (guided_target(&x_t, &z_star, &[z], wg, pair.delta_t), tar.class)
        } else {
            (ct_target(&x_t, &[z], pair.delta_t), src.class)
        };
        // Target frozen at the ORIGINAL parameters while online weights move.
        let frozen_target = den.denoise(&x_r, pair.r, Some(class), Some(wg)).unwrap();
        let loss_with_frozen_target = |d: &DenoiserNet<f64>| -> f64 {
            let online = d.denoise(&x_t, t, Some(class), Some(wg)).unwrap();
            pair.lambda_gct * ((dist_sq(&online, &frozen_target) + c * c).sqrt() - c)
        };

        let h = 1e-6;
        let mut perturbed = den.clone();
        let n_tensors = perturbed.net.named_tensors().len();
        for ti in 0..n_tensors {
            let len = perturbed.net.named_tensors()[ti].2.len();
            for i in (0..len).step_by(5) {
                let orig = perturbed.net.tensors_mut()[ti][i];
                perturbed.net.tensors_mut()[ti][i] = orig + h;
                let up = loss_with_frozen_target(&perturbed);
                perturbed.net.tensors_mut()[ti][i] = orig - h;
                let down = loss_with_frozen_target(&perturbed);
                perturbed.net.tensors_mut()[ti][i] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grads.named_tensors()[ti].2[i];
                let rel = (an - fd).abs() / (an.abs() + fd.abs()).max(1e-7);
                assert!(rel < 1e-3, "tensor {ti} [{i}]: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn ict_at_ceiling_regresses_toward_the_noised_sample() {
        let noi = randomized_noiser(5);
        let w = world();
        let cfg = pinned_scfg(1e9); // clamps every draw to t_max
        let mut rng = stream(11, STREAM_ICT);
        let mut replay = rng.clone();
        let mut grads = noi.net.zeros_like();
        let got = loss_ict(&noi, &mut grads, &w, &cfg, 0, 4, 0.03, &mut rng).unwrap();

        let mut expected = 0.0;
        for _ in 0..4 {
            let s = w.sample_data(&mut replay, None).unwrap();
            let z = f64::standard_normal(&mut replay);
            let t = sample_noise_level(&mut replay, &cfg);
            assert_eq!(t, cfg.t_max);
            let pair = step_pair(t, 0, &cfg).unwrap();
            let x_t = [s.x[0] + t * z];
            let x_r = [x_t[0] - pair.delta_t * z];
            // Boundary: the frozen noisier target is the sample itself.
            let target = noi.latent(&x_t, t, Some(s.class)).unwrap();
            assert_eq!(target[0], x_t[0]);
            let online = noi.latent(&x_r, pair.r, Some(s.class)).unwrap();
            let soft = (dist_sq(&online, &target) + 0.03 * 0.03).sqrt();
            expected += pair.lambda_ict * (soft - 0.03) / 4.0;
        }
        assert_eq!(got, expected);
    }

    #[test]
    fn ict_weight_is_step_over_ceiling() {
        let cfg = scfg();
        let pair = step_pair(8.0, cfg.d, &cfg).unwrap();
        assert_eq!(pair.lambda_ict, pair.delta_t / cfg.t_max);
        // delta ~ 8 n(8) / 2 ~ 4.01, so the weight sits at ~0.05.
        assert!((pair.lambda_ict - 0.05).abs() < 3e-4, "{}", pair.lambda_ict);
    }

    #[test]
    fn recon_with_fresh_noiser_reduces_to_denoiser_round_trip() {
        // A fresh (zero output layer) noiser is the identity at t_min, so the
        // reconstruction term compares D(x_0, t_max) against x_0.
        let den = randomized_denoiser(6, 4);
        let noi = {
            let spec = NetSpec {
                in_dim: 1,
                hidden_width: 8,
                hidden_layers: 2,
                time_features: 8,
                class_features: 4,
                guidance_features: 0,
                n_classes: 2,
            };
            let net = NetParams::init(spec, &mut stream(12, 1)).unwrap();
            NoiserNet::new(net, scfg().sigma_data, scfg().t_max)
        };
        let w = world();
        let cfg = scfg();
        let mut rng = stream(13, STREAM_RECON);
        let mut replay = rng.clone();
        let mut g_den = den.net.zeros_like();
        let mut g_noi = noi.net.zeros_like();
        let got = loss_recon(
            &den, &noi, &mut g_den, &mut g_noi, &w, &cfg, 8, 0.03, 2e-5, &mut rng,
        )
        .unwrap();

        let mut expected = 0.0;
        for _ in 0..8 {
            let s = w.sample_data(&mut replay, None).unwrap();
            let latent = noi.latent(&s.x, cfg.t_min, Some(s.class)).unwrap();
            assert_eq!(latent, s.x);
            let recon = den
                .denoise(&latent, cfg.t_max, Some(s.class), Some(cfg.w_min))
                .unwrap();
            expected += ((dist_sq(&recon, &s.x) + 0.03f64 * 0.03).sqrt() - 0.03) / 8.0;
        }
        assert_eq!(got, expected);
    }

    #[test]
    fn recon_gradients_reach_both_networks() {
        let den = randomized_denoiser(7, 4);
        let noi = randomized_noiser(8);
        let w = world();
        let cfg = scfg();
        let mut g_den = den.net.zeros_like();
        let mut g_noi = noi.net.zeros_like();
        let mut rng = stream(14, STREAM_RECON);
        loss_recon(
            &den, &noi, &mut g_den, &mut g_noi, &w, &cfg, 8, 0.03, 1.0, &mut rng,
        )
        .unwrap();
        let nonzero = |p: &NetParams<f64>| {
            p.tensors()
                .iter()
                .any(|t| t.iter().any(|&v| v != 0.0))
        };
        assert!(nonzero(&g_den), "denoiser gradient all zero");
        assert!(nonzero(&g_noi), "noiser gradient all zero");
    }

    #[test]
    fn edm_full_dropout_trains_only_the_null_class() {
        let den = randomized_denoiser(9, 0);
        let w = world();
        let cfg = scfg();
        let mut grads = den.net.zeros_like();
        let mut rng = stream(15, STREAM_BASELINE);
        loss_edm_denoise(&den, &mut grads, &w, &cfg, 256, 1.0, &mut rng).unwrap();
        let (_, shape, table) = grads
            .named_tensors()
            .into_iter()
            .find(|(n, _, _)| n == "class_table")
            .unwrap();
        let (rows, cf) = (shape[0], shape[1]);
        // Real-class rows untouched, null row active.
        for r in 0..rows - 1 {
            assert!(table[r * cf..(r + 1) * cf].iter().all(|&v| v == 0.0));
        }
        assert!(table[(rows - 1) * cf..].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn edm_at_floor_gets_zero_gradient_from_the_boundary() {
        // Every draw clamps to t_min where c_out = 0: the network never sees
        // a learning signal, and the residual is the t_min-scaled noise.
        let den = randomized_denoiser(10, 0);
        let w = world();
        let cfg = pinned_scfg(1e-12);
        let mut grads = den.net.zeros_like();
        let mut rng = stream(16, STREAM_BASELINE);
        let mut replay = rng.clone();
        let got = loss_edm_denoise(&den, &mut grads, &w, &cfg, 16, 0.1, &mut rng).unwrap();
        assert!(grads.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));

        let sig = cfg.sigma_data;
        let lambda = (cfg.t_min * cfg.t_min + sig * sig) / (cfg.t_min * sig).powi(2);
        let mut expected = 0.0;
        for _ in 0..16 {
            let _s = w.sample_data(&mut replay, None).unwrap();
            let z = f64::standard_normal(&mut replay);
            let t = sample_noise_level(&mut replay, &cfg);
            assert_eq!(t, cfg.t_min);
            let _u = f64::unit_uniform(&mut replay);
            // D(x_t, t_min) = x_t exactly, so the residual is t_min z.
            expected += lambda * (cfg.t_min * z).powi(2) / 16.0;
        }
        assert!((got - expected).abs() < 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn gcd_teacher_step_is_shared_with_the_ode_solver() {
        let student = randomized_denoiser(11, 4);
        let w = world();
        let cfg = scfg();
        let grid = karras_grid(cfg.t_min, cfg.t_max, 18, 7.0f64).unwrap();
        let mut rng = stream(17, STREAM_BASELINE);
        let mut replay = rng.clone();
        let mut grads = student.net.zeros_like();
        let got = loss_gcd(&student, &mut grads, &w, &cfg, &grid, 3, 0.03, &mut rng).unwrap();

        let mut expected = 0.0;
        for _ in 0..3 {
            let s = w.sample_data(&mut replay, None).unwrap();
            let z = f64::standard_normal(&mut replay);
            let n = replay.random_range(0..grid.len() - 1);
            let wg = sample_guidance_w(&mut replay, &cfg);
            let (t_clean, t_noisy) = (grid[n], grid[n + 1]);
            let x_noisy = [s.x[0] + t_noisy * z];
            // One-step solve_pf_ode between the same levels must be the
            // teacher update bitwise.
            let traj = w
                .solve_pf_ode(&x_noisy, t_noisy, t_clean, Some(s.class), wg, 1)
                .unwrap();
            let x_clean = &traj.last().unwrap().1;
            let online = student.denoise(&x_noisy, t_noisy, Some(s.class), Some(wg)).unwrap();
            let target = student.denoise(x_clean, t_clean, Some(s.class), Some(wg)).unwrap();
            let soft = (dist_sq(&online, &target) + 0.03f64 * 0.03).sqrt();
            expected += (soft - 0.03) / (t_noisy - t_clean) / 3.0;
        }
        assert_eq!(got, expected);
    }

    #[test]
    fn gcd_collapses_to_conditional_distillation_at_unit_w() {
        // At w = 1 the guided teacher is the conditional denoiser; the two
        // extrapolation terms coincide.
        let w = world();
        let teacher = OracleModel { world: &w };
        let x = [1.7];
        let (t1, t0) = (5.0, 2.0);
        let guided = ode::heun_step(&teacher, &x, t1, t0, Some(1), 1.0).unwrap();
        // Reference: slope built from the conditional-only denoiser.
        let cond_model = CondOnly { world: &w };
        let plain = ode::heun_step(&cond_model, &x, t1, t0, Some(1), 1.0).unwrap();
        assert_eq!(guided, plain);
    }

    struct CondOnly<'a> {
        world: &'a MixtureWorld<f64>,
    }
    impl crate::ode::DenoiseModel<f64> for CondOnly<'_> {
        fn dims(&self) -> usize {
            1
        }
        fn denoise(&self, x: &[f64], t: f64, class: Option<usize>, _w: f64) -> crate::Result<Vec<f64>> {
            self.world.exact_denoiser(x, t, class)
        }
    }

    fn quick_tcfg() -> TrainConfig<f64> {
        TrainConfig {
            batch_size: 8,
            total_iters: 30,
            i_skip: 10,
            lambda_recon: vec![LambdaStage { until_iteration: u64::MAX, value: 2e-5 }],
            lr: 1e-3,
            log_every: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn igct_run_is_bit_reproducible() {
        let w = world();
        let cfg = scfg();
        let mut sink_a = MemorySink::default();
        let mut sink_b = MemorySink::default();
        let a = run_igct(&w, &cfg, &tiny_arch(), &quick_tcfg(), 42, &mut sink_a).unwrap();
        let b = run_igct(&w, &cfg, &tiny_arch(), &quick_tcfg(), 42, &mut sink_b).unwrap();
        assert_eq!(a.denoiser, b.denoiser);
        assert_eq!(a.noiser, b.noiser);
        assert_eq!(sink_a.rows.len(), sink_b.rows.len());
        for (ra, rb) in sink_a.rows.iter().zip(&sink_b.rows) {
            // wall_ms is wall-clock and exempt from determinism.
            assert_eq!(ra.k, rb.k);
            assert_eq!(ra.loss_gct, rb.loss_gct);
            assert_eq!(ra.loss_ict, rb.loss_ict);
            assert_eq!(ra.loss_recon, rb.loss_recon);
            assert_eq!(ra.lambda_recon, rb.lambda_recon);
            assert_eq!(ra.delta_t_stage, rb.delta_t_stage);
        }
        let c = run_igct(&w, &cfg, &tiny_arch(), &quick_tcfg(), 43, &mut MemorySink::default())
            .unwrap();
        assert_ne!(a.denoiser, c.denoiser);
    }

    #[test]
    fn recon_rows_follow_the_skip_cadence() {
        let w = world();
        let cfg = scfg();
        let tcfg = TrainConfig {
            log_every: 1,
            ..quick_tcfg()
        };
        let mut sink = MemorySink::default();
        run_igct(&w, &cfg, &tiny_arch(), &tcfg, 1, &mut sink).unwrap();
        for row in &sink.rows {
            assert_eq!(row.loss_recon.is_some(), row.k % tcfg.i_skip == 0, "k = {}", row.k);
            assert_eq!(row.lambda_recon.is_some(), row.k % tcfg.i_skip == 0);
        }
    }

    /// With lambda_recon = 0 the denoiser trajectory cannot depend on
    /// anything the noiser or the reconstruction pass does: varying the
    /// reconstruction cadence must leave both parameter trajectories
    /// bit-identical (separate RNG streams make this exact).
    #[test]
    fn zero_recon_weight_decouples_the_networks() {
        let w = world();
        let cfg = scfg();
        let base = TrainConfig {
            lambda_recon: vec![LambdaStage { until_iteration: u64::MAX, value: 0.0 }],
            ..quick_tcfg()
        };
        let with_skip_1 = TrainConfig { i_skip: 1, ..base.clone() };
        let with_skip_7 = TrainConfig { i_skip: 7, ..base };
        let a = run_igct(&w, &cfg, &tiny_arch(), &with_skip_1, 5, &mut NullSink).unwrap();
        let b = run_igct(&w, &cfg, &tiny_arch(), &with_skip_7, 5, &mut NullSink).unwrap();
        assert_eq!(a.denoiser, b.denoiser);
        assert_eq!(a.noiser, b.noiser);

        // Sanity: a nonzero weight couples them.
        let coupled = TrainConfig {
            i_skip: 1,
            lambda_recon: vec![LambdaStage { until_iteration: u64::MAX, value: 1e-2 }],
            ..quick_tcfg()
        };
        let c = run_igct(&w, &cfg, &tiny_arch(), &coupled, 5, &mut NullSink).unwrap();
        assert_ne!(a.denoiser, c.denoiser);
    }

    #[test]
    fn diverging_run_aborts_with_nonfinite_error() {
        let w = world();
        let cfg = scfg();
        let tcfg = TrainConfig {
            lr: 1e300,
            ..quick_tcfg()
        };
        let err = run_igct(&w, &cfg, &tiny_arch(), &tcfg, 2, &mut NullSink).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err}");
    }

    #[test]
    fn config_validation_rejects_bad_stages() {
        let mut tcfg = quick_tcfg();
        tcfg.lambda_recon = vec![
            LambdaStage { until_iteration: 100, value: 1e-5 },
            LambdaStage { until_iteration: 100, value: 2e-5 },
        ];
        let err = tcfg.validate().unwrap_err().to_string();
        assert!(err.contains("train.lambda_recon"), "{err}");
    }

    #[test]
    fn baseline_runs_are_reproducible_and_log_single_loss() {
        let w = world();
        let cfg = scfg();
        let tcfg = TrainConfig {
            total_iters: 10,
            log_every: 5,
            ..quick_tcfg()
        };
        let mut sink = MemorySink::default();
        let a = run_cfg_edm(&w, &cfg, &tiny_arch(), &tcfg, 3, &mut sink).unwrap();
        let b = run_cfg_edm(&w, &cfg, &tiny_arch(), &tcfg, 3, &mut NullSink).unwrap();
        assert_eq!(a.denoiser, b.denoiser);
        assert!(sink.rows.iter().all(|r| r.loss_ict.is_none() && r.loss_recon.is_none()));

        let d = run_guided_cd(&w, &cfg, &tiny_arch(), &tcfg, 3, &mut NullSink).unwrap();
        let e = run_guided_cd(&w, &cfg, &tiny_arch(), &tcfg, 3, &mut NullSink).unwrap();
        assert_eq!(d.denoiser, e.denoiser);
    }

    #[test]
    fn final_stage_stops_the_run_early() {
        let w = world();
        let mut cfg = scfg();
        cfg.d = 4; // fast halvings
        let tcfg = TrainConfig {
            total_iters: 100,
            final_stage: Some(2),
            ..quick_tcfg()
        };
        let out = run_igct(&w, &cfg, &tiny_arch(), &tcfg, 6, &mut NullSink).unwrap();
        // Stage exceeds 2 at k = 12; the loop stops there.
        assert_eq!(out.iterations, 12);
    }

    #[test]
    fn gct_loss_decreases_on_a_short_run() {
        let w = world();
        let cfg = scfg();
        let tcfg = TrainConfig {
            batch_size: 32,
            total_iters: 400,
            log_every: 1,
            lr: 3e-3,
            ..quick_tcfg()
        };
        let mut sink = MemorySink::default();
        run_cfg_edm(&w, &cfg, &tiny_arch(), &tcfg, 7, &mut sink).unwrap();
        let first: f64 = sink.rows[..40].iter().map(|r| r.loss_gct).sum::<f64>() / 40.0;
        let last: f64 = sink.rows[sink.rows.len() - 40..]
            .iter()
            .map(|r| r.loss_gct)
            .sum::<f64>()
            / 40.0;
        assert!(last < first, "no progress: first {first}, last {last}");
    }

    }
