//! Small conditioned MLPs with hand-written forward/backward passes and an
//! Adam optimizer.
//!
//! Conditioning enters through fixed sinusoidal feature ladders followed by
//! learned linear projections (time and guidance strength) and a learned
//! class-embedding table whose last row is the null class. The trunk is a
//! plain dense stack with SiLU activations and a zero-initialized output
//! layer, so a fresh network is exactly the zero map.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::{Error, Result};

/// Architecture description of one network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    /// Data dimension (inputs and outputs).
    pub in_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Sinusoidal time features (even).
    pub time_features: usize,
    /// Class-embedding width; the table has n_classes + 1 rows (null last).
    pub class_features: usize,
    /// Sinusoidal guidance features (even); 0 disables the guidance input.
    pub guidance_features: usize,
    pub n_classes: usize,
}

/// Config-level architecture knobs, independent of world dims/classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetArch {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub time_features: usize,
    pub class_features: usize,
    pub guidance_features: usize,
}

impl Default for NetArch {
    fn default() -> Self {
        Self {
            hidden_width: 128,
            hidden_layers: 2,
            time_features: 32,
            class_features: 16,
            guidance_features: 16,
        }
    }
}

impl NetArch {
    /// Spec for a guidance-conditioned denoiser core.
    pub fn guided_denoiser_spec(&self, in_dim: usize, n_classes: usize) -> NetSpec {
        NetSpec {
            in_dim,
            hidden_width: self.hidden_width,
            hidden_layers: self.hidden_layers,
            time_features: self.time_features,
            class_features: self.class_features,
            guidance_features: self.guidance_features,
            n_classes,
        }
    }

    /// Spec for a class-conditioned core without guidance input
    /// (the CFG baseline denoiser and the noiser).
    pub fn plain_spec(&self, in_dim: usize, n_classes: usize) -> NetSpec {
        NetSpec {
            guidance_features: 0,
            ..self.guided_denoiser_spec(in_dim, n_classes)
        }
    }
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Error::InvalidConfig {
            field: format!("net.{field}"),
            reason: reason.to_string(),
        };
        if self.in_dim == 0 {
            return Err(bad("in_dim", "must be >= 1"));
        }
        if self.hidden_width == 0 || self.hidden_layers == 0 {
            return Err(bad("hidden_width", "width and layer count must be >= 1"));
        }
        if self.time_features < 2 || self.time_features % 2 != 0 {
            return Err(bad("time_features", "must be even and >= 2"));
        }
        if self.class_features == 0 {
            return Err(bad("class_features", "must be >= 1"));
        }
        if self.guidance_features % 2 != 0 {
            return Err(bad("guidance_features", "must be even (0 disables)"));
        }
        if self.n_classes == 0 {
            return Err(bad("n_classes", "must be >= 1"));
        }
        Ok(())
    }

    fn concat_dim(&self) -> usize {
        self.in_dim + self.time_features + self.class_features + self.guidance_features
    }
}

/// Dense layer, weights stored row-major as [out, in].
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<F>,
    pub b: Vec<F>,
}

impl<F: Scalar> Dense<F> {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            w: vec![F::zero(); in_dim * out_dim],
            b: vec![F::zero(); out_dim],
        }
    }

    fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, scale: F, rng: &mut R) -> Self {
        let mut layer = Self::zeros(in_dim, out_dim);
        for w in layer.w.iter_mut() {
            *w = scale * F::standard_normal(rng);
        }
        layer
    }

    fn forward(&self, x: &[F]) -> Vec<F> {
        let mut out = self.b.clone();
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            *out_v += dot(row, x);
        }
        out
    }

    /// Accumulate parameter gradients and (optionally) the input gradient.
    fn backward(
        &self,
        x: &[F],
        d_out: &[F],
        d_w: &mut [F],
        d_b: &mut [F],
        mut d_x: Option<&mut [F]>,
    ) {
        for (o, &g) in d_out.iter().enumerate() {
            d_b[o] += g;
            let row = o * self.in_dim;
            for (i, &xi) in x.iter().enumerate() {
                d_w[row + i] += g * xi;
            }
            if let Some(dx) = d_x.as_deref_mut() {
                for (i, dxi) in dx.iter_mut().enumerate() {
                    *dxi += g * self.w[row + i];
                }
            }
        }
    }
}

/// Four-lane dot product: breaks the sequential FP dependency chain so the
/// trunk matvecs are throughput- rather than latency-bound. The fixed
/// accumulation pattern keeps results deterministic.
fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let chunks = a.len() / 4;
    let mut acc = [F::zero(); 4];
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] = acc[0] + a[i] * b[i];
        acc[1] = acc[1] + a[i + 1] * b[i + 1];
        acc[2] = acc[2] + a[i + 2] * b[i + 2];
        acc[3] = acc[3] + a[i + 3] * b[i + 3];
    }
    let mut rest = F::zero();
    for i in 4 * chunks..a.len() {
        rest = rest + a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + rest
}

fn silu<F: Scalar>(z: F) -> F {
    z / (F::one() + (-z).exp())
}

fn silu_prime<F: Scalar>(z: F) -> F {
    let s = F::one() / (F::one() + (-z).exp());
    s * (F::one() + z * (F::one() - s))
}

// Sinusoidal frequency ladders. c_noise spans roughly [-1.6, 1.1] and the
// guidance strength spans [1, 15]; the ceilings keep the embeddings smooth
// enough to extrapolate into the thinly sampled high-noise tail.
const TIME_FREQ_LO: f64 = 0.25;
const TIME_FREQ_HI: f64 = 8.0;
const GUID_FREQ_LO: f64 = 1.0 / 16.0;
const GUID_FREQ_HI: f64 = 1.0;

fn geomspace<F: Scalar>(lo: f64, hi: f64, n: usize) -> Vec<F> {
    if n == 1 {
        return vec![F::of(lo)];
    }
    (0..n)
        .map(|i| F::of(lo * (hi / lo).powf(i as f64 / (n - 1) as f64)))
        .collect()
}

fn fourier<F: Scalar>(u: F, freqs: &[F]) -> Vec<F> {
    let mut out = Vec::with_capacity(2 * freqs.len());
    for &f in freqs {
        out.push((f * u).sin());
        out.push((f * u).cos());
    }
    out
}

/// All learnable parameters of one network, plus its fixed frequency ladders.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<F> {
    pub spec: NetSpec,
    time_freqs: Vec<F>,
    guid_freqs: Vec<F>,
    time_proj: Dense<F>,
    guidance_proj: Option<Dense<F>>,
    /// (n_classes + 1) x class_features, null-class row last.
    class_table: Vec<F>,
    trunk: Vec<Dense<F>>,
}

/// Activation record from one forward pass; consumed by [`NetParams::backward`].
#[derive(Debug, Clone)]
pub struct Tape<F> {
    class_row: usize,
    time_fourier: Vec<F>,
    guid_fourier: Option<Vec<F>>,
    /// Trunk input: [x_in, time feat, class feat, guidance feat].
    h0: Vec<F>,
    /// Pre-activations per trunk layer.
    pre: Vec<Vec<F>>,
    /// Activations per non-final trunk layer.
    act: Vec<Vec<F>>,
}

impl<F: Scalar> NetParams<F> {
    /// Random initialization: He-scaled trunk, zeroed output layer, unit
    /// normal class table.
    pub fn init<R: Rng + ?Sized>(spec: NetSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let tf = spec.time_features;
        let gf = spec.guidance_features;
        let time_proj = Dense::init(tf, tf, (F::one() / F::of(tf as f64)).sqrt(), rng);
        let guidance_proj = (gf > 0)
            .then(|| Dense::init(gf, gf, (F::one() / F::of(gf as f64)).sqrt(), rng));
        let rows = spec.n_classes + 1;
        let class_table: Vec<F> = (0..rows * spec.class_features)
            .map(|_| F::standard_normal(rng))
            .collect();
        let mut trunk = Vec::with_capacity(spec.hidden_layers + 1);
        let mut prev = spec.concat_dim();
        for _ in 0..spec.hidden_layers {
            let scale = (F::of(2.0) / F::of(prev as f64)).sqrt();
            trunk.push(Dense::init(prev, spec.hidden_width, scale, rng));
            prev = spec.hidden_width;
        }
        trunk.push(Dense::zeros(prev, spec.in_dim));
        Ok(Self {
            spec,
            time_freqs: geomspace(TIME_FREQ_LO, TIME_FREQ_HI, tf / 2),
            guid_freqs: geomspace(GUID_FREQ_LO, GUID_FREQ_HI, gf / 2),
            time_proj,
            guidance_proj,
            class_table,
            trunk,
        })
    }

    /// All-zero parameters for a spec (checkpoint loading target).
    pub fn zeros(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let mut trunk = Vec::with_capacity(spec.hidden_layers + 1);
        let mut prev = spec.concat_dim();
        for _ in 0..spec.hidden_layers {
            trunk.push(Dense::zeros(prev, spec.hidden_width));
            prev = spec.hidden_width;
        }
        trunk.push(Dense::zeros(prev, spec.in_dim));
        Ok(Self {
            spec,
            time_freqs: geomspace(TIME_FREQ_LO, TIME_FREQ_HI, spec.time_features / 2),
            guid_freqs: geomspace(GUID_FREQ_LO, GUID_FREQ_HI, spec.guidance_features / 2),
            time_proj: Dense::zeros(spec.time_features, spec.time_features),
            guidance_proj: (spec.guidance_features > 0)
                .then(|| Dense::zeros(spec.guidance_features, spec.guidance_features)),
            class_table: vec![F::zero(); (spec.n_classes + 1) * spec.class_features],
            trunk,
        })
    }

    /// Same shapes, all parameters zero. Gradient/moment container.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero();
        z
    }

    /// Reset every parameter tensor to zero in place.
    pub fn zero(&mut self) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v = F::zero();
            }
        }
    }

    /// Parameter tensors with stable names and shapes, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &Vec<F>)> {
        let s = &self.spec;
        let mut out = vec![
            (
                "time_proj.w".to_string(),
                vec![s.time_features, s.time_features],
                &self.time_proj.w,
            ),
            ("time_proj.b".to_string(), vec![s.time_features], &self.time_proj.b),
        ];
        if let Some(g) = &self.guidance_proj {
            out.push((
                "guidance_proj.w".to_string(),
                vec![s.guidance_features, s.guidance_features],
                &g.w,
            ));
            out.push(("guidance_proj.b".to_string(), vec![s.guidance_features], &g.b));
        }
        out.push((
            "class_table".to_string(),
            vec![s.n_classes + 1, s.class_features],
            &self.class_table,
        ));
        for (l, layer) in self.trunk.iter().enumerate() {
            out.push((
                format!("trunk.{l}.w"),
                vec![layer.out_dim, layer.in_dim],
                &layer.w,
            ));
            out.push((format!("trunk.{l}.b"), vec![layer.out_dim], &layer.b));
        }
        out
    }

    /// Tensors without names, same order as [`Self::named_tensors`].
    pub fn tensors(&self) -> Vec<&Vec<F>> {
        let mut out = vec![&self.time_proj.w, &self.time_proj.b];
        if let Some(g) = &self.guidance_proj {
            out.push(&g.w);
            out.push(&g.b);
        }
        out.push(&self.class_table);
        for layer in &self.trunk {
            out.push(&layer.w);
            out.push(&layer.b);
        }
        out
    }

    /// Mutable tensors in the same order as [`Self::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<F>> {
        let mut out = vec![&mut self.time_proj.w, &mut self.time_proj.b];
        if let Some(g) = &mut self.guidance_proj {
            out.push(&mut g.w);
            out.push(&mut g.b);
        }
        out.push(&mut self.class_table);
        for layer in &mut self.trunk {
            out.push(&mut layer.w);
            out.push(&mut layer.b);
        }
        out
    }

    /// Overwrite one named tensor (checkpoint loading).
    pub fn fill_tensor(&mut self, name: &str, data: &[F]) -> Result<()> {
        let idx = self
            .named_tensors()
            .iter()
            .position(|(n, _, _)| n == name)
            .ok_or_else(|| Error::UnknownArray(name.to_string()))?;
        let tensor = self.tensors_mut().swap_remove(idx);
        if tensor.len() != data.len() {
            return Err(Error::DimMismatch {
                expected: tensor.len(),
                got: data.len(),
            });
        }
        tensor.copy_from_slice(data);
        Ok(())
    }

    fn class_row(&self, class: Option<usize>) -> Result<usize> {
        match class {
            Some(id) if id >= self.spec.n_classes => Err(Error::ClassOutOfRange {
                id,
                n_classes: self.spec.n_classes,
            }),
            Some(id) => Ok(id),
            None => Ok(self.spec.n_classes),
        }
    }

    /// Forward pass. `x_in` must already be scaled by c_in and `c_noise` is
    /// the transformed time. Returns the output and the tape for backprop.
    pub fn forward(
        &self,
        x_in: &[F],
        c_noise: F,
        class: Option<usize>,
        w: Option<F>,
    ) -> Result<(Vec<F>, Tape<F>)> {
        let s = &self.spec;
        if x_in.len() != s.in_dim {
            return Err(Error::DimMismatch {
                expected: s.in_dim,
                got: x_in.len(),
            });
        }
        if w.is_some() != (s.guidance_features > 0) {
            return Err(Error::GuidanceArg {
                expects: s.guidance_features > 0,
            });
        }
        let class_row = self.class_row(class)?;

        let time_fourier = fourier(c_noise, &self.time_freqs);
        let time_feat = self.time_proj.forward(&time_fourier);
        let class_feat =
            &self.class_table[class_row * s.class_features..(class_row + 1) * s.class_features];
        let (guid_fourier, guid_feat) = match (w, &self.guidance_proj) {
            (Some(w), Some(proj)) => {
                let four = fourier(w, &self.guid_freqs);
                let feat = proj.forward(&four);
                (Some(four), Some(feat))
            }
            _ => (None, None),
        };

        let mut h0 = Vec::with_capacity(s.concat_dim());
        h0.extend_from_slice(x_in);
        h0.extend_from_slice(&time_feat);
        h0.extend_from_slice(class_feat);
        if let Some(g) = &guid_feat {
            h0.extend_from_slice(g);
        }

        let n_layers = self.trunk.len();
        let mut pre = Vec::with_capacity(n_layers);
        let mut act = Vec::with_capacity(n_layers - 1);
        let mut cur = h0.clone();
        for (l, layer) in self.trunk.iter().enumerate() {
            let z = layer.forward(&cur);
            if l + 1 < n_layers {
                cur = z.iter().map(|&v| silu(v)).collect();
                act.push(cur.clone());
            } else {
                cur = z.clone();
            }
            pre.push(z);
        }
        Ok((
            cur,
            Tape {
                class_row,
                time_fourier,
                guid_fourier,
                h0,
                pre,
                act,
            },
        ))
    }

    /// Stop-gradient evaluation: same arithmetic as [`Self::forward`], tape
    /// discarded, so targets built from it contribute no gradients.
    pub fn eval(
        &self,
        x_in: &[F],
        c_noise: F,
        class: Option<usize>,
        w: Option<F>,
    ) -> Result<Vec<F>> {
        self.forward(x_in, c_noise, class, w).map(|(out, _)| out)
    }

    /// Reverse-mode pass: accumulates parameter gradients into `grads` and,
    /// when requested, the gradient w.r.t. x_in into `d_x_in`.
    pub fn backward(
        &self,
        tape: &Tape<F>,
        upstream: &[F],
        grads: &mut NetParams<F>,
        mut d_x_in: Option<&mut [F]>,
    ) -> Result<()> {
        let s = &self.spec;
        if upstream.len() != s.in_dim {
            return Err(Error::DimMismatch {
                expected: s.in_dim,
                got: upstream.len(),
            });
        }
        if grads.spec != *s {
            return Err(Error::DimMismatch {
                expected: s.concat_dim(),
                got: grads.spec.concat_dim(),
            });
        }

        let n_layers = self.trunk.len();
        let mut d_z = upstream.to_vec();
        let mut d_h0 = vec![F::zero(); s.concat_dim()];
        for l in (0..n_layers).rev() {
            let input: &[F] = if l == 0 { &tape.h0 } else { &tape.act[l - 1] };
            let mut d_input = if l == 0 {
                std::mem::take(&mut d_h0)
            } else {
                vec![F::zero(); self.trunk[l].in_dim]
            };
            let g_layer = &mut grads.trunk[l];
            self.trunk[l].backward(input, &d_z, &mut g_layer.w, &mut g_layer.b, Some(&mut d_input));
            if l == 0 {
                d_h0 = d_input;
            } else {
                // Chain through the SiLU that produced this layer's input.
                d_z = d_input
                    .iter()
                    .zip(&tape.pre[l - 1])
                    .map(|(&g, &z)| g * silu_prime(z))
                    .collect();
            }
        }

        let mut offset = 0;
        if let Some(dx) = d_x_in.as_deref_mut() {
            dx.copy_from_slice(&d_h0[..s.in_dim]);
        }
        offset += s.in_dim;

        let d_tfeat = &d_h0[offset..offset + s.time_features];
        self.time_proj.backward(
            &tape.time_fourier,
            d_tfeat,
            &mut grads.time_proj.w,
            &mut grads.time_proj.b,
            None,
        );
        offset += s.time_features;

        let row = tape.class_row * s.class_features;
        for (i, &g) in d_h0[offset..offset + s.class_features].iter().enumerate() {
            grads.class_table[row + i] += g;
        }
        offset += s.class_features;

        if let (Some(proj), Some(four)) = (&self.guidance_proj, &tape.guid_fourier) {
            let gp = grads
                .guidance_proj
                .as_mut()
                .expect("grads mirror params shape");
            proj.backward(four, &d_h0[offset..offset + s.guidance_features], &mut gp.w, &mut gp.b, None);
        }
        Ok(())
    }
}

/// Adam accumulator state mirroring one network's parameters.
#[derive(Debug, Clone)]
pub struct OptState<F> {
    m: NetParams<F>,
    v: NetParams<F>,
    pub step: u64,
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
}

impl<F: Scalar> OptState<F> {
    pub fn new(params: &NetParams<F>, lr: F, beta1: F, beta2: F, eps: F) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            lr,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn moments(&self) -> (&NetParams<F>, &NetParams<F>) {
        (&self.m, &self.v)
    }

    pub fn moments_mut(&mut self) -> (&mut NetParams<F>, &mut NetParams<F>) {
        (&mut self.m, &mut self.v)
    }
}

/// One Adam update. Rejects non-finite gradients so a diverging run stops
/// with its parameters still intact.
pub fn optimizer_step<F: Scalar>(
    params: &mut NetParams<F>,
    grads: &NetParams<F>,
    opt: &mut OptState<F>,
) -> Result<()> {
    for tensor in grads.tensors() {
        if tensor.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "gradient".to_string(),
                iteration: opt.step,
            });
        }
    }
    opt.step += 1;
    let one = F::one();
    let bc1 = one - opt.beta1.powi(opt.step as i32);
    let bc2 = one - opt.beta2.powi(opt.step as i32);
    let (beta1, beta2, lr, eps) = (opt.beta1, opt.beta2, opt.lr, opt.eps);
    let g_tensors = grads.tensors();
    let mut p_tensors = params.tensors_mut();
    let mut m_tensors = opt.m.tensors_mut();
    let mut v_tensors = opt.v.tensors_mut();
    for (((p, g), m), v) in p_tensors
        .iter_mut()
        .zip(g_tensors)
        .zip(m_tensors.iter_mut())
        .zip(v_tensors.iter_mut())
    {
        for (((p, &g), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = beta1 * *m + (one - beta1) * g;
            *v = beta2 * *v + (one - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
