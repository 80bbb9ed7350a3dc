//! Generation, inversion and editing procedures for trained models and the
//! oracle.
//!
//! Consistency sampling uses 1 or 2 network evaluations; diffusion-style
//! sampling integrates the guided PF-ODE with Heun steps on a Karras grid.
//! Inversion is either the noiser's single evaluation or reverse DDIM
//! integration. Everything is a deterministic function of (seed, request,
//! params): per-sample randomness comes from ChaCha streams keyed by index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{DenoiserNet, NoiserNet};
use crate::ode::{self, DenoiseModel};
use crate::scalar::Scalar;
use crate::schedule::{karras_grid, ScheduleConfig};
use crate::{Error, Result};

/// A batch sampling request.
#[derive(Debug, Clone, Copy)]
pub struct SampleRequest<F> {
    pub class: Option<usize>,
    pub w: F,
    pub nfe: usize,
    pub count: usize,
    pub seed: u64,
}

fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn normal_vec<F: Scalar>(rng: &mut ChaCha8Rng, dims: usize) -> Vec<F> {
    (0..dims).map(|_| F::standard_normal(rng)).collect()
}

/// Consistency sampling: 1 step maps pure noise straight to data; 2 steps
/// re-noise the first estimate to t_mid with fresh noise and denoise again.
pub fn cm_sample<F: Scalar>(
    den: &DenoiserNet<F>,
    req: &SampleRequest<F>,
    scfg: &ScheduleConfig<F>,
    t_mid: F,
) -> Result<Vec<Vec<F>>> {
    if req.nfe != 1 && req.nfe != 2 {
        return Err(Error::UnsupportedNfe {
            nfe: req.nfe,
            kind: "consistency sampling",
        });
    }
    let dims = den.net.spec.in_dim;
    let guidance = den.takes_guidance().then_some(req.w);
    let mut out = Vec::with_capacity(req.count);
    for i in 0..req.count {
        let mut rng = sample_rng(req.seed, i as u64);
        let z = normal_vec::<F>(&mut rng, dims);
        let x_max: Vec<F> = z.iter().map(|&zi| scfg.t_max * zi).collect();
        let mut x = den.denoise(&x_max, scfg.t_max, req.class, guidance)?;
        if req.nfe == 2 {
            let z2 = normal_vec::<F>(&mut rng, dims);
            let x_mid: Vec<F> = x
                .iter()
                .zip(&z2)
                .map(|(&xi, &zi)| xi + t_mid * zi)
                .collect();
            x = den.denoise(&x_mid, t_mid, req.class, guidance)?;
        }
        out.push(x);
    }
    Ok(out)
}

/// Heun integration of the guided PF-ODE from fresh noise at t_max down to
/// t_min on a Karras grid with `req.nfe` steps. Works for any model kind.
pub fn heun_sample<F: Scalar, M: DenoiseModel<F> + ?Sized>(
    model: &M,
    req: &SampleRequest<F>,
    scfg: &ScheduleConfig<F>,
    rho: F,
) -> Result<Vec<Vec<F>>> {
    Ok(heun_sample_trajectories(model, req, scfg, rho)?
        .into_iter()
        .map(|traj| traj.into_iter().last().expect("nonempty trajectory").1)
        .collect())
}

/// Same as [`heun_sample`] but keeping the full (t, x) trajectories.
pub fn heun_sample_trajectories<F: Scalar, M: DenoiseModel<F> + ?Sized>(
    model: &M,
    req: &SampleRequest<F>,
    scfg: &ScheduleConfig<F>,
    rho: F,
) -> Result<Vec<Vec<(F, Vec<F>)>>> {
    let grid = karras_grid(scfg.t_max, scfg.t_min, req.nfe, rho)?;
    let dims = model.dims();
    let mut out = Vec::with_capacity(req.count);
    for i in 0..req.count {
        let mut rng = sample_rng(req.seed, i as u64);
        let z = normal_vec::<F>(&mut rng, dims);
        let x0: Vec<F> = z.iter().map(|&zi| scfg.t_max * zi).collect();
        out.push(ode::integrate(model, &x0, &grid, req.class, req.w)?);
    }
    Ok(out)
}

/// Generation leg from an existing latent at t_max (editing, round trips).
pub fn heun_generate_from<F: Scalar, M: DenoiseModel<F> + ?Sized>(
    model: &M,
    latent: &[F],
    class: Option<usize>,
    w: F,
    n_steps: usize,
    scfg: &ScheduleConfig<F>,
    rho: F,
) -> Result<Vec<F>> {
    let grid = karras_grid(scfg.t_max, scfg.t_min, n_steps, rho)?;
    let traj = ode::integrate(model, latent, &grid, class, w)?;
    Ok(traj.into_iter().last().expect("nonempty trajectory").1)
}

/// Single-evaluation inversion: the noiser's latent estimate at t_min.
pub fn noiser_invert<F: Scalar>(
    noi: &NoiserNet<F>,
    x: &[F],
    class: Option<usize>,
    scfg: &ScheduleConfig<F>,
) -> Result<Vec<F>> {
    noi.latent(x, scfg.t_min, class)
}

/// DDIM-style inversion: reverse Heun integration of the unguided (w = 1)
/// PF-ODE from t_min up to t_max on the sampling grid.
pub fn ddim_invert<F: Scalar, M: DenoiseModel<F> + ?Sized>(
    model: &M,
    x: &[F],
    class: Option<usize>,
    n_steps: usize,
    scfg: &ScheduleConfig<F>,
    rho: F,
) -> Result<Vec<F>> {
    let grid = karras_grid(scfg.t_min, scfg.t_max, n_steps, rho)?;
    let traj = ode::integrate(model, x, &grid, class, F::one())?;
    Ok(traj.into_iter().last().expect("nonempty trajectory").1)
}

/// Inversion-based class editing with the trained iGCT pair: invert under the
/// source class, regenerate under the target class. Exactly two network
/// evaluations.
pub fn edit_igct<F: Scalar>(
    den: &DenoiserNet<F>,
    noi: &NoiserNet<F>,
    x_src: &[F],
    class_src: usize,
    class_tar: usize,
    w: F,
    scfg: &ScheduleConfig<F>,
) -> Result<Vec<F>> {
    let latent = noiser_invert(noi, x_src, Some(class_src), scfg)?;
    let guidance = den.takes_guidance().then_some(w);
    den.denoise(&latent, scfg.t_max, Some(class_tar), guidance)
}

/// DDIM editing baseline: invert under the source class at w = 1, then run
/// the guided generation leg under the target class.
#[allow(clippy::too_many_arguments)]
pub fn edit_ddim<F: Scalar, M: DenoiseModel<F> + ?Sized>(
    model: &M,
    x_src: &[F],
    class_src: usize,
    class_tar: usize,
    w: F,
    n_steps: usize,
    scfg: &ScheduleConfig<F>,
    rho: F,
) -> Result<Vec<F>> {
    let latent = ddim_invert(model, x_src, Some(class_src), n_steps, scfg, rho)?;
    heun_generate_from(model, &latent, Some(class_tar), w, n_steps, scfg, rho)
}
