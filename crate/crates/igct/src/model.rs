//! Preconditioned network assemblies: the denoiser D and the noiser N, plus
//! the sampler-facing model adapters that realize guidance per model kind.
//!
//! D(x, t, c, w) = c_skip(t) x + c_out(t) F(c_in(t) x; c_noise(t), c, w)
//! N(x, t, c)    = x + (t_max - t) F(c_in(t) x; c_noise(t), c)
//!
//! Both boundary identities (D at t_min, N at t_max) are exact because the
//! respective c_out vanishes.

use crate::net::{NetParams, Tape};
use crate::ode::DenoiseModel;
use crate::precond::{denoiser_coeffs, noiser_coeffs, PrecondCoeffs};
use crate::scalar::Scalar;
use crate::Result;

/// Activation record through the preconditioning wrapper.
#[derive(Debug, Clone)]
pub struct AssemblyTape<F> {
    net_tape: Tape<F>,
    coeffs: PrecondCoeffs<F>,
}

fn assemble<F: Scalar>(x: &[F], f: &[F], c: &PrecondCoeffs<F>) -> Vec<F> {
    x.iter()
        .zip(f)
        .map(|(&xi, &fi)| c.c_skip * xi + c.c_out * fi)
        .collect()
}

/// A preconditioned denoiser core. `net.spec.guidance_features > 0` makes it
/// guidance-conditioned (iGCT, guided-CD); 0 gives the plain conditional
/// denoiser of the CFG baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserNet<F: Scalar> {
    pub net: NetParams<F>,
    pub sigma_data: F,
    pub t_min: F,
}

impl<F: Scalar> DenoiserNet<F> {
    pub fn new(net: NetParams<F>, sigma_data: F, t_min: F) -> Self {
        Self {
            net,
            sigma_data,
            t_min,
        }
    }

    pub fn takes_guidance(&self) -> bool {
        self.net.spec.guidance_features > 0
    }

    /// Stop-gradient evaluation of D.
    pub fn denoise(&self, x: &[F], t: F, class: Option<usize>, w: Option<F>) -> Result<Vec<F>> {
        let co = denoiser_coeffs(t, self.sigma_data, self.t_min)?;
        let x_in: Vec<F> = x.iter().map(|&v| co.c_in * v).collect();
        let f = self.net.eval(&x_in, co.c_noise, class, w)?;
        Ok(assemble(x, &f, &co))
    }

    /// Forward pass keeping the tape for backprop.
    pub fn denoise_traced(
        &self,
        x: &[F],
        t: F,
        class: Option<usize>,
        w: Option<F>,
    ) -> Result<(Vec<F>, AssemblyTape<F>)> {
        let co = denoiser_coeffs(t, self.sigma_data, self.t_min)?;
        let x_in: Vec<F> = x.iter().map(|&v| co.c_in * v).collect();
        let (f, net_tape) = self.net.forward(&x_in, co.c_noise, class, w)?;
        Ok((
            assemble(x, &f, &co),
            AssemblyTape {
                net_tape,
                coeffs: co,
            },
        ))
    }

    /// Backprop through the assembly; accumulates into `grads` and optionally
    /// produces the gradient w.r.t. the raw input x.
    pub fn backward(
        &self,
        tape: &AssemblyTape<F>,
        upstream: &[F],
        grads: &mut NetParams<F>,
        d_x: Option<&mut [F]>,
    ) -> Result<()> {
        backward_assembly(&self.net, tape, upstream, grads, d_x)
    }
}

/// A preconditioned noiser core (no guidance input).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiserNet<F: Scalar> {
    pub net: NetParams<F>,
    pub sigma_data: F,
    pub t_max: F,
}

impl<F: Scalar> NoiserNet<F> {
    pub fn new(net: NetParams<F>, sigma_data: F, t_max: F) -> Self {
        Self {
            net,
            sigma_data,
            t_max,
        }
    }

    /// Stop-gradient evaluation of N: the level-t_max latent estimate for a
    /// sample sitting at level t.
    pub fn latent(&self, x: &[F], t: F, class: Option<usize>) -> Result<Vec<F>> {
        let co = noiser_coeffs(t, self.sigma_data, self.t_max)?;
        let x_in: Vec<F> = x.iter().map(|&v| co.c_in * v).collect();
        let f = self.net.eval(&x_in, co.c_noise, class, None)?;
        Ok(assemble(x, &f, &co))
    }

    pub fn latent_traced(
        &self,
        x: &[F],
        t: F,
        class: Option<usize>,
    ) -> Result<(Vec<F>, AssemblyTape<F>)> {
        let co = noiser_coeffs(t, self.sigma_data, self.t_max)?;
        let x_in: Vec<F> = x.iter().map(|&v| co.c_in * v).collect();
        let (f, net_tape) = self.net.forward(&x_in, co.c_noise, class, None)?;
        Ok((
            assemble(x, &f, &co),
            AssemblyTape {
                net_tape,
                coeffs: co,
            },
        ))
    }

    pub fn backward(
        &self,
        tape: &AssemblyTape<F>,
        upstream: &[F],
        grads: &mut NetParams<F>,
        d_x: Option<&mut [F]>,
    ) -> Result<()> {
        backward_assembly(&self.net, tape, upstream, grads, d_x)
    }
}

fn backward_assembly<F: Scalar>(
    net: &NetParams<F>,
    tape: &AssemblyTape<F>,
    upstream: &[F],
    grads: &mut NetParams<F>,
    d_x: Option<&mut [F]>,
) -> Result<()> {
    let co = &tape.coeffs;
    let up_net: Vec<F> = upstream.iter().map(|&u| co.c_out * u).collect();
    match d_x {
        Some(dx) => {
            let mut d_x_in = vec![F::zero(); upstream.len()];
            net.backward(&tape.net_tape, &up_net, grads, Some(&mut d_x_in))?;
            for ((dxi, &u), &din) in dx.iter_mut().zip(upstream).zip(&d_x_in) {
                *dxi = co.c_skip * u + co.c_in * din;
            }
        }
        None => net.backward(&tape.net_tape, &up_net, grads, None)?,
    }
    Ok(())
}

/// Guidance-conditioned denoiser viewed as a sampler model: w feeds the
/// network directly.
pub struct GuidedModel<'a, F: Scalar>(pub &'a DenoiserNet<F>);

impl<F: Scalar> DenoiseModel<F> for GuidedModel<'_, F> {
    fn dims(&self) -> usize {
        self.0.net.spec.in_dim
    }
    fn denoise(&self, x: &[F], t: F, class: Option<usize>, w: F) -> Result<Vec<F>> {
        self.0.denoise(x, t, class, Some(w))
    }
}

/// Plain conditional denoiser viewed as a CFG model: guidance is the
/// two-pass extrapolation w D(x|c) + (1-w) D(x|null).
pub struct CfgModel<'a, F: Scalar>(pub &'a DenoiserNet<F>);

impl<F: Scalar> DenoiseModel<F> for CfgModel<'_, F> {
    fn dims(&self) -> usize {
        self.0.net.spec.in_dim
    }
    fn denoise(&self, x: &[F], t: F, class: Option<usize>, w: F) -> Result<Vec<F>> {
        let cond = self.0.denoise(x, t, class, None)?;
        if w == F::one() || class.is_none() {
            return Ok(cond);
        }
        let uncond = self.0.denoise(x, t, None, None)?;
        Ok(cond
            .iter()
            .zip(&uncond)
            .map(|(&c, &u)| w * c + (F::one() - w) * u)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(guidance: usize) -> NetSpec {
        NetSpec {
            in_dim: 1,
            hidden_width: 8,
            hidden_layers: 2,
            time_features: 8,
            class_features: 4,
            guidance_features: guidance,
            n_classes: 2,
        }
    }

    fn randomized_net(g: usize, seed: u64) -> NetParams<f64> {
        let mut net = NetParams::init(spec(g), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for t in net.tensors_mut() {
            for v in t.iter_mut() {
                *v = 0.3 * f64::standard_normal(&mut rng);
            }
        }
        net
    }

    #[test]
    fn denoiser_boundary_identity_is_bitwise() {
        let den = DenoiserNet::new(randomized_net(4, 1), 2.01, 0.002);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let x = [5.0 * f64::standard_normal(&mut rng)];
            let out = den.denoise(&x, 0.002, Some(1), Some(7.0)).unwrap();
            assert_eq!(out[0], x[0]);
        }
    }

    #[test]
    fn noiser_boundary_identity_is_bitwise() {
        let noi = NoiserNet::new(randomized_net(0, 3), 2.01, 80.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let x = [80.0 * f64::standard_normal(&mut rng)];
            let out = noi.latent(&x, 80.0, Some(0)).unwrap();
            assert_eq!(out[0], x[0]);
        }
    }

    #[test]
    fn zero_core_noiser_is_skip_path() {
        let net = NetParams::init(spec(0), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let zeroed = {
            let mut n = net.clone();
            n.zero();
            n
        };
        let noi = NoiserNet::new(zeroed, 2.01, 80.0);
        // c_skip = 1 and the core outputs 0, so N(x, t, c) = x at every level.
        for &t in &[0.002, 1.0, 40.0] {
            assert_eq!(noi.latent(&[1.7], t, Some(0)).unwrap()[0], 1.7);
        }
    }

    /// Finite-difference check of the gradient w.r.t. the raw input x, which
    /// is the path the reconstruction loss uses to reach the noiser.
    #[test]
    fn assembly_input_gradient_matches_finite_differences() {
        let den = DenoiserNet::new(randomized_net(4, 6), 2.01, 0.002);
        let (x, t, w) = ([0.8], 3.0, 5.0);
        let (_, tape) = den.denoise_traced(&x, t, Some(0), Some(w)).unwrap();
        let mut grads = den.net.zeros_like();
        let mut d_x = [0.0];
        den.backward(&tape, &[1.0], &mut grads, Some(&mut d_x)).unwrap();
        let h = 1e-6;
        let up = den.denoise(&[x[0] + h], t, Some(0), Some(w)).unwrap()[0];
        let down = den.denoise(&[x[0] - h], t, Some(0), Some(w)).unwrap()[0];
        let fd = (up - down) / (2.0 * h);
        assert!(
            (d_x[0] - fd).abs() / fd.abs().max(1e-8) < 1e-6,
            "{} vs {fd}",
            d_x[0]
        );
    }

    #[test]
    fn cfg_model_extrapolation_identities() {
        let den = DenoiserNet::new(randomized_net(0, 7), 2.01, 0.002);
        let m = CfgModel(&den);
        let x = [0.4];
        let at_one = m.denoise(&x, 2.0, Some(1), 1.0).unwrap();
        assert_eq!(at_one, den.denoise(&x, 2.0, Some(1), None).unwrap());
        let at_zero = m.denoise(&x, 2.0, Some(1), 0.0).unwrap();
        assert_eq!(at_zero, den.denoise(&x, 2.0, None, None).unwrap());
    }
}
