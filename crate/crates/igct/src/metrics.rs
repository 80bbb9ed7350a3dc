//! Low-dimensional evaluation: 1-Wasserstein distance (the toy-scale stand-in
//! for FID), k-NN manifold precision/recall, the overshoot statistic, latent
//! Gaussianity, and reconstruction error.

use serde::{Deserialize, Serialize};

use crate::model::{DenoiserNet, NoiserNet};
use crate::oracle::{LabeledSample, MixtureWorld};
use crate::scalar::{dist_sq, norm, Scalar};
use crate::schedule::ScheduleConfig;
use crate::{Error, Result};

/// One evaluated condition, as appended to the report CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport<F> {
    pub method: String,
    pub w: F,
    pub nfe: usize,
    pub w1: F,
    pub precision: F,
    pub recall: F,
    pub overshoot_fraction: F,
    pub recon_mae: Option<F>,
    pub latent_mean_norm: Option<F>,
    pub latent_std_ratio: Option<F>,
    pub n_samples: usize,
}

/// Exact 1-Wasserstein distance between two 1D empirical distributions
/// (integral of |F_a - F_b|); multi-dimensional inputs fall back to sliced
/// W1 with 64 fixed projections.
pub fn wasserstein1<F: Scalar>(samples: &[Vec<F>], reference: &[Vec<F>]) -> Result<F> {
    if samples.is_empty() || reference.is_empty() {
        return Err(Error::EmptyInput("wasserstein1"));
    }
    let dims = samples[0].len();
    if reference[0].len() != dims {
        return Err(Error::DimMismatch {
            expected: dims,
            got: reference[0].len(),
        });
    }
    if dims == 1 {
        let a: Vec<F> = samples.iter().map(|s| s[0]).collect();
        let b: Vec<F> = reference.iter().map(|s| s[0]).collect();
        Ok(w1_1d(a, b))
    } else {
        sliced_wasserstein1(samples, reference, 64)
    }
}

fn w1_1d<F: Scalar>(mut a: Vec<F>, mut b: Vec<F>) -> F {
    a.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    b.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    let (na, nb) = (F::of(a.len() as f64), F::of(b.len() as f64));
    let mut total = F::zero();
    let (mut i, mut j) = (0usize, 0usize);
    let mut cursor = a[0].min(b[0]);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => break,
        };
        let fa = F::of(i as f64) / na;
        let fb = F::of(j as f64) / nb;
        total += (fa - fb).abs() * (next - cursor);
        cursor = next;
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
    }
    total
}

/// Sliced W1: average exact 1D W1 over evenly rotating unit projections.
pub fn sliced_wasserstein1<F: Scalar>(
    samples: &[Vec<F>],
    reference: &[Vec<F>],
    n_projections: usize,
) -> Result<F> {
    if samples.is_empty() || reference.is_empty() {
        return Err(Error::EmptyInput("sliced_wasserstein1"));
    }
    let dims = samples[0].len();
    let mut total = F::zero();
    for p in 0..n_projections {
        // Deterministic direction ladder from the golden-angle sequence.
        let mut dir = Vec::with_capacity(dims);
        let theta = 2.399_963_229_728_653 * (p + 1) as f64;
        for d in 0..dims {
            dir.push(F::of((theta * (d + 1) as f64 + p as f64).sin()));
        }
        let len = norm(&dir);
        for v in dir.iter_mut() {
            *v /= len;
        }
        let proj = |set: &[Vec<F>]| -> Vec<F> {
            set.iter()
                .map(|x| x.iter().zip(&dir).map(|(&xi, &di)| xi * di).sum())
                .collect()
        };
        total += w1_1d(proj(samples), proj(reference));
    }
    Ok(total / F::of(n_projections as f64))
}

/// k-NN manifold precision/recall.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionRecall<F> {
    pub precision: F,
    pub recall: F,
    /// Radii that collapsed to zero (duplicated points) and were floored at
    /// machine epsilon.
    pub floored_radii: usize,
}

/// A generated point is precise if it falls inside the k-NN radius of some
/// real point; recall swaps the roles.
pub fn knn_precision_recall<F: Scalar>(
    gen: &[Vec<F>],
    real: &[Vec<F>],
    k: usize,
) -> Result<PrecisionRecall<F>> {
    if gen.is_empty() || real.is_empty() {
        return Err(Error::EmptyInput("knn_precision_recall"));
    }
    if k == 0 || k >= gen.len() || k >= real.len() {
        return Err(Error::InvalidConfig {
            field: "eval.knn_k".into(),
            reason: format!("k = {k} must satisfy 0 < k < both set sizes"),
        });
    }
    let mut floored = 0usize;
    let mut radii = |set: &[Vec<F>]| -> Vec<F> {
        let mut out = Vec::with_capacity(set.len());
        let mut dists = Vec::with_capacity(set.len() - 1);
        for (i, x) in set.iter().enumerate() {
            dists.clear();
            for (j, y) in set.iter().enumerate() {
                if i != j {
                    dists.push(dist_sq(x, y));
                }
            }
            dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
            let mut r = dists[k - 1].sqrt();
            if r == F::zero() {
                r = F::epsilon();
                floored += 1;
            }
            out.push(r);
        }
        out
    };
    let real_radii = radii(real);
    let gen_radii = radii(gen);

    let covered = |points: &[Vec<F>], anchors: &[Vec<F>], radii: &[F]| -> usize {
        points
            .iter()
            .filter(|p| {
                anchors
                    .iter()
                    .zip(radii)
                    .any(|(a, &r)| dist_sq(p, a) <= r * r)
            })
            .count()
    };
    let precision =
        F::of(covered(gen, real, &real_radii) as f64) / F::of(gen.len() as f64);
    let recall = F::of(covered(real, gen, &gen_radii) as f64) / F::of(real.len() as f64);
    Ok(PrecisionRecall {
        precision,
        recall,
        floored_radii: floored,
    })
}

/// Fraction of samples farther than band_sigmas * component_std from every
/// component mean: the out-of-support mass that high guidance produces.
pub fn overshoot_fraction<F: Scalar>(
    samples: &[Vec<F>],
    world: &MixtureWorld<F>,
    band_sigmas: F,
) -> Result<F> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("overshoot_fraction"));
    }
    let outside = samples
        .iter()
        .filter(|x| {
            world.components().iter().all(|c| {
                let band = band_sigmas * c.std;
                dist_sq(x, &c.mean) > band * band
            })
        })
        .count();
    Ok(F::of(outside as f64) / F::of(samples.len() as f64))
}

/// Mean reconstruction error of an invert/restore pair over a dataset.
/// The pair is supplied as closures so the same metric serves trained
/// networks and oracle-substituted references.
pub fn reconstruction_mae<F: Scalar>(
    dataset: &[LabeledSample<F>],
    mut invert: impl FnMut(&[F], usize) -> Result<Vec<F>>,
    mut restore: impl FnMut(&[F], usize) -> Result<Vec<F>>,
) -> Result<F> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("reconstruction_mae"));
    }
    let mut total = F::zero();
    for s in dataset {
        let latent = invert(&s.x, s.class)?;
        let recon = restore(&latent, s.class)?;
        total += dist_sq(&recon, &s.x).sqrt();
    }
    Ok(total / F::of(dataset.len() as f64))
}

/// Reconstruction error of a trained noiser/denoiser pair.
pub fn reconstruction_mae_nets<F: Scalar>(
    den: &DenoiserNet<F>,
    noi: &NoiserNet<F>,
    dataset: &[LabeledSample<F>],
    scfg: &ScheduleConfig<F>,
) -> Result<F> {
    let guidance = den.takes_guidance().then_some(scfg.w_min);
    reconstruction_mae(
        dataset,
        |x, class| noi.latent(x, scfg.t_min, Some(class)),
        |latent, class| den.denoise(latent, scfg.t_max, Some(class), guidance),
    )
}

/// (norm of the latent mean, pooled std / t_max): a trained noiser should
/// produce approximately N(0, t_max^2 I) latents.
pub fn latent_stats<F: Scalar>(latents: &[Vec<F>], t_max: F) -> Result<(F, F)> {
    if latents.is_empty() {
        return Err(Error::EmptyInput("latent_stats"));
    }
    let dims = latents[0].len();
    let n = F::of(latents.len() as f64);
    let mut mean = vec![F::zero(); dims];
    for x in latents {
        for (m, &xi) in mean.iter_mut().zip(x) {
            *m += xi / n;
        }
    }
    let mut pooled = F::zero();
    for x in latents {
        pooled += dist_sq(x, &mean);
    }
    let std = (pooled / (n * F::of(dims as f64))).sqrt();
    Ok((norm(&mean), std / t_max))
}
