//! Analytic labeled Gaussian-mixture world: exact sampling, exact
//! conditional/unconditional denoisers and scores, and exact guided PF-ODE
//! trajectories. Serves as ground truth for every test and as the
//! distillation teacher.
//!
//! With components x_0 ~ N(mu_i, s_i^2 I) and x_t = x_0 + t z, each component
//! convolves to N(mu_i, (s_i^2 + t^2) I), so the posterior mean
//! E[x_0 | x_t] is a softmax-weighted blend of per-component shrinkages
//! (s_i^2 x_t + t^2 mu_i) / (s_i^2 + t^2).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ode::{self, DenoiseModel};
use crate::scalar::Scalar;
use crate::schedule::karras_grid;
use crate::{Error, Result};

/// One labeled Gaussian component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent<F> {
    pub class_id: usize,
    pub mean: Vec<F>,
    pub std: F,
    pub weight: F,
}

/// Serialized form of a world: just dims + components.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldSpec<F> {
    pub dims: usize,
    pub components: Vec<MixtureComponent<F>>,
}

/// Validated mixture world with derived quantities cached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "WorldSpec<F>",
    into = "WorldSpec<F>",
    bound(serialize = "F: Scalar", deserialize = "F: Scalar")
)]
pub struct MixtureWorld<F: Scalar> {
    dims: usize,
    components: Vec<MixtureComponent<F>>,
    sigma_data: F,
    n_classes: usize,
}

/// A draw from the world.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample<F> {
    pub x: Vec<F>,
    pub class: usize,
}

impl<F: Scalar> TryFrom<WorldSpec<F>> for MixtureWorld<F> {
    type Error = Error;
    fn try_from(spec: WorldSpec<F>) -> Result<Self> {
        MixtureWorld::new(spec.dims, spec.components)
    }
}

impl<F: Scalar> From<MixtureWorld<F>> for WorldSpec<F> {
    fn from(w: MixtureWorld<F>) -> Self {
        WorldSpec {
            dims: w.dims,
            components: w.components,
        }
    }
}

impl<F: Scalar> MixtureWorld<F> {
    /// Validate and normalize a component list. Weights are rescaled to sum
    /// to one; class ids must cover 0..n contiguously.
    pub fn new(dims: usize, mut components: Vec<MixtureComponent<F>>) -> Result<Self> {
        let bad = |field: &str, reason: String| Error::InvalidConfig {
            field: format!("world.{field}"),
            reason,
        };
        if dims == 0 {
            return Err(bad("dims", "must be >= 1".into()));
        }
        if components.is_empty() {
            return Err(bad("components", "must be nonempty".into()));
        }
        let mut total = F::zero();
        let mut max_class = 0usize;
        for (i, c) in components.iter().enumerate() {
            if c.mean.len() != dims {
                return Err(bad(
                    &format!("components[{i}].mean"),
                    format!("expected {dims} entries, got {}", c.mean.len()),
                ));
            }
            if !(c.std >= F::zero()) || !c.std.is_finite() {
                return Err(bad(&format!("components[{i}].std"), "must be finite and >= 0".into()));
            }
            if !(c.weight > F::zero()) || !c.weight.is_finite() {
                return Err(bad(&format!("components[{i}].weight"), "must be finite and > 0".into()));
            }
            max_class = max_class.max(c.class_id);
            total += c.weight;
        }
        for c in &mut components {
            c.weight /= total;
        }
        let n_classes = max_class + 1;
        for class in 0..n_classes {
            if !components.iter().any(|c| c.class_id == class) {
                return Err(bad(
                    "components",
                    format!("class {class} has no component (ids must cover 0..{n_classes})"),
                ));
            }
        }
        let sigma_data = derived_sigma(dims, &components);
        if !(sigma_data > F::zero()) {
            return Err(bad("components", "data distribution has zero variance".into()));
        }
        Ok(Self {
            dims,
            components,
            sigma_data,
            n_classes,
        })
    }

    /// The 1D two-mode benchmark world: class 0 at -offset, class 1 at
    /// +offset, equal weights.
    pub fn two_mode_1d(offset: F, std: F) -> Self {
        Self::new(
            1,
            vec![
                MixtureComponent {
                    class_id: 0,
                    mean: vec![-offset],
                    std,
                    weight: F::of(0.5),
                },
                MixtureComponent {
                    class_id: 1,
                    mean: vec![offset],
                    std,
                    weight: F::of(0.5),
                },
            ],
        )
        .expect("two-mode world is valid")
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Standard deviation of the data distribution, pooled over dimensions.
    pub fn sigma_data(&self) -> F {
        self.sigma_data
    }

    pub fn components(&self) -> &[MixtureComponent<F>] {
        &self.components
    }

    /// Marginal probability of a class.
    pub fn class_weight(&self, class: usize) -> F {
        self.components
            .iter()
            .filter(|c| c.class_id == class)
            .map(|c| c.weight)
            .sum()
    }

    fn check_class(&self, class: Option<usize>) -> Result<()> {
        if let Some(id) = class {
            if id >= self.n_classes {
                return Err(Error::ClassOutOfRange {
                    id,
                    n_classes: self.n_classes,
                });
            }
        }
        Ok(())
    }

    /// Draw a labeled sample, optionally restricted to one class.
    pub fn sample_data<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        class: Option<usize>,
    ) -> Result<LabeledSample<F>> {
        self.check_class(class)?;
        let total: F = match class {
            Some(id) => self.class_weight(id),
            None => F::one(),
        };
        let mut u = F::unit_uniform(rng) * total;
        let mut chosen = None;
        for (i, c) in self.components.iter().enumerate() {
            if class.is_some_and(|id| id != c.class_id) {
                continue;
            }
            if u < c.weight {
                chosen = Some(i);
                break;
            }
            u -= c.weight;
        }
        // Guard against accumulated rounding at u ~ total.
        let idx = chosen.unwrap_or_else(|| {
            self.components
                .iter()
                .rposition(|c| class.is_none_or(|id| id == c.class_id))
                .expect("class coverage validated")
        });
        let comp = &self.components[idx];
        let x = comp
            .mean
            .iter()
            .map(|&m| m + comp.std * F::standard_normal(rng))
            .collect();
        Ok(LabeledSample {
            x,
            class: comp.class_id,
        })
    }

    /// Log-sum-exp stabilized posterior component weights given x at level t.
    fn posterior_weights(&self, x: &[F], t: F, class: Option<usize>) -> Vec<(usize, F)> {
        let half = F::of(0.5);
        let mut logs: Vec<(usize, F)> = Vec::with_capacity(self.components.len());
        for (i, c) in self.components.iter().enumerate() {
            if class.is_some_and(|id| id != c.class_id) {
                continue;
            }
            let var = c.std * c.std + t * t;
            let d2: F = x
                .iter()
                .zip(&c.mean)
                .map(|(&xi, &mi)| (xi - mi) * (xi - mi))
                .sum();
            let ll = c.weight.ln()
                - half * d2 / var
                - half * F::of(self.dims as f64) * var.ln();
            logs.push((i, ll));
        }
        let m = logs
            .iter()
            .map(|&(_, l)| l)
            .fold(F::neg_infinity(), F::max);
        let mut total = F::zero();
        for (_, l) in logs.iter_mut() {
            *l = (*l - m).exp();
            total += *l;
        }
        for (_, l) in logs.iter_mut() {
            *l /= total;
        }
        logs
    }

    /// Exact posterior mean E[x_0 | x_t] under the (class-conditional or
    /// marginal) mixture convolved with N(0, t^2 I).
    pub fn exact_denoiser(&self, x: &[F], t: F, class: Option<usize>) -> Result<Vec<F>> {
        self.check_class(class)?;
        if x.len() != self.dims {
            return Err(Error::DimMismatch {
                expected: self.dims,
                got: x.len(),
            });
        }
        if t < F::zero() {
            return Err(Error::TimeOutOfRange {
                t: t.as_f64(),
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        let t_sq = t * t;
        let weights = self.posterior_weights(x, t, class);
        let mut out = vec![F::zero(); self.dims];
        for (i, pi) in weights {
            let c = &self.components[i];
            let var = c.std * c.std + t_sq;
            for (o, (&xi, &mi)) in out.iter_mut().zip(x.iter().zip(&c.mean)) {
                *o += pi * (c.std * c.std * xi + t_sq * mi) / var;
            }
        }
        Ok(out)
    }

    /// Exact score of the convolved mixture: (E[x_0 | x_t] - x_t) / t^2.
    pub fn exact_score(&self, x: &[F], t: F, class: Option<usize>) -> Result<Vec<F>> {
        if t <= F::zero() {
            return Err(Error::ScoreAtZero);
        }
        let d = self.exact_denoiser(x, t, class)?;
        let t_sq = t * t;
        Ok(d.iter().zip(x).map(|(&di, &xi)| (di - xi) / t_sq).collect())
    }

    /// Classifier-free-guidance extrapolation of the exact denoisers:
    /// w * D(x | c) + (1 - w) * D(x | unconditional).
    pub fn cfg_denoiser(&self, x: &[F], t: F, class: usize, w: F) -> Result<Vec<F>> {
        let cond = self.exact_denoiser(x, t, Some(class))?;
        if w == F::one() {
            return Ok(cond);
        }
        let uncond = self.exact_denoiser(x, t, None)?;
        Ok(cond
            .iter()
            .zip(&uncond)
            .map(|(&c, &u)| w * c + (F::one() - w) * u)
            .collect())
    }

    /// Heun integration of the guided PF-ODE between two levels on a
    /// rho=7 power grid. Reversed level order performs DDIM-style inversion.
    pub fn solve_pf_ode(
        &self,
        x_start: &[F],
        t_start: F,
        t_end: F,
        class: Option<usize>,
        w: F,
        n_steps: usize,
    ) -> Result<Vec<(F, Vec<F>)>> {
        let grid = karras_grid(t_start, t_end, n_steps, F::of(7.0))?;
        ode::integrate(&OracleModel { world: self }, x_start, &grid, class, w)
    }
}

fn derived_sigma<F: Scalar>(dims: usize, components: &[MixtureComponent<F>]) -> F {
    // Pooled per-dimension variance of the mixture.
    let mut mean = vec![F::zero(); dims];
    for c in components {
        for (m, &mu) in mean.iter_mut().zip(&c.mean) {
            *m += c.weight * mu;
        }
    }
    let mut var = F::zero();
    for c in components {
        for (d, &mu) in c.mean.iter().enumerate() {
            let centered = mu - mean[d];
            var += c.weight * (c.std * c.std + centered * centered);
        }
    }
    (var / F::of(dims as f64)).sqrt()
}

/// The analytic world viewed as a guided denoising model for the ODE
/// machinery and the distillation teacher.
pub struct OracleModel<'a, F: Scalar> {
    pub world: &'a MixtureWorld<F>,
}

impl<F: Scalar> DenoiseModel<F> for OracleModel<'_, F> {
    fn dims(&self) -> usize {
        self.world.dims()
    }

    fn denoise(&self, x: &[F], t: F, class: Option<usize>, w: F) -> Result<Vec<F>> {
        match class {
            Some(c) => self.world.cfg_denoiser(x, t, c, w),
            None => self.world.exact_denoiser(x, t, None),
        }
    }
}
