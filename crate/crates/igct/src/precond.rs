//! Input/output/skip scalings for the denoiser and the noiser.
//!
//! Denoiser: EDM-style coefficients shifted by t_min so the consistency
//! boundary D(x, t_min) = x holds exactly. Noiser: c_skip = 1,
//! c_out = t_max - t, c_in = 1/sqrt(t^2 + sigma_data^2), which pins
//! N(x, t_max) = x while keeping the effective network target unit variance.

use crate::scalar::Scalar;
use crate::{Error, Result};

/// Scalings wrapped around a raw network evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecondCoeffs<F> {
    pub c_skip: F,
    pub c_out: F,
    pub c_in: F,
    /// Time-conditioning transform fed to the raw network: ln(t) / 4.
    pub c_noise: F,
}

/// Denoiser coefficients with the boundary pinned at t_min.
pub fn denoiser_coeffs<F: Scalar>(t: F, sigma_data: F, t_min: F) -> Result<PrecondCoeffs<F>> {
    if t < t_min {
        return Err(Error::TimeOutOfRange {
            t: t.as_f64(),
            lo: t_min.as_f64(),
            hi: f64::INFINITY,
        });
    }
    let sig_sq = sigma_data * sigma_data;
    let shifted = t - t_min;
    Ok(PrecondCoeffs {
        c_skip: sig_sq / (shifted * shifted + sig_sq),
        c_out: sigma_data * shifted / (sig_sq + t * t).sqrt(),
        c_in: F::one() / (t * t + sig_sq).sqrt(),
        c_noise: c_noise(t),
    })
}

/// Noiser coefficients with the boundary pinned at t_max.
pub fn noiser_coeffs<F: Scalar>(t: F, sigma_data: F, t_max: F) -> Result<PrecondCoeffs<F>> {
    if t > t_max {
        return Err(Error::TimeOutOfRange {
            t: t.as_f64(),
            lo: 0.0,
            hi: t_max.as_f64(),
        });
    }
    let sig_sq = sigma_data * sigma_data;
    Ok(PrecondCoeffs {
        c_skip: F::one(),
        c_out: t_max - t,
        c_in: F::one() / (t * t + sig_sq).sqrt(),
        c_noise: c_noise(t),
    })
}

fn c_noise<F: Scalar>(t: F) -> F {
    F::of(0.25) * t.ln()
}
