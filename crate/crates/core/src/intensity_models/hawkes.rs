use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{IntensityModel, ModelCheckpoint, CHECKPOINT_VERSION};
use crate::error::{Error, Result};
use crate::scalar::{softplus, softplus_grad, softplus_inv, Real};

/// How decay rates are shared across (source, target) pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayLayout {
    /// One β per (source, target) pair: K² decays, K² state per stream.
    #[default]
    Full,
    /// One β per source type: K decays, K state per stream.
    Shared,
}

impl DecayLayout {
    fn count(self, k: usize) -> usize {
        match self {
            DecayLayout::Full => k * k,
            DecayLayout::Shared => k,
        }
    }

    fn name(self) -> &'static str {
        match self {
            DecayLayout::Full => "full",
            DecayLayout::Shared => "shared",
        }
    }
}

/// Multivariate Hawkes process with exponential kernels:
///
/// ```text
/// λ_k(t) = μ_k + Σ_{t_i < t} α_{k_i,k} exp(−β_{k_i,k} (t − t_i))
/// ```
///
/// All of μ, α, β are softplus images of unconstrained raw parameters laid
/// out as `[μ (K) | α (K×K, row = source) | β (K×K or K)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HawkesExpModel<F> {
    num_types: usize,
    layout: DecayLayout,
    raw: Vec<F>,
    linked: Vec<F>,
    dlink: Vec<F>,
}

/// Per-decay exponentially weighted event sums. For decay `d` with source `j`:
/// `decayed[d] = Σ_{i: k_i = j} e^{−β_d (t − t_i)}` and
/// `lagged[d] = Σ_{i: k_i = j} (t − t_i) e^{−β_d (t − t_i)}`.
#[derive(Debug, Clone)]
pub struct HawkesState<F> {
    time: F,
    decayed: Vec<F>,
    lagged: Vec<F>,
}

impl<F: Real> HawkesExpModel<F> {
    pub fn from_raw(num_types: usize, layout: DecayLayout, raw: Vec<F>) -> Result<Self> {
        let expected = num_types + num_types * num_types + layout.count(num_types);
        if num_types == 0 || raw.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "Hawkes model with K = {num_types} needs {expected} raw parameters, got {}",
                raw.len()
            )));
        }
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite raw parameter".into()));
        }
        let mut m = Self {
            num_types,
            layout,
            raw: Vec::new(),
            linked: Vec::new(),
            dlink: Vec::new(),
        };
        m.set_raw_params(&raw);
        Ok(m)
    }

    /// Builds a model from positive parameter values. `alpha` is row-major
    /// with the source type as the row; `beta` follows `layout`.
    pub fn from_linked(
        num_types: usize,
        mu: &[F],
        alpha: &[F],
        beta: &[F],
        layout: DecayLayout,
    ) -> Result<Self> {
        if mu.len() != num_types
            || alpha.len() != num_types * num_types
            || beta.len() != layout.count(num_types)
        {
            return Err(Error::InvalidArgument(
                "parameter array lengths do not match K".into(),
            ));
        }
        if mu
            .iter()
            .chain(alpha)
            .chain(beta)
            .any(|&v| !(v > F::zero()))
        {
            return Err(Error::InvalidArgument(
                "linked parameters must be strictly positive".into(),
            ));
        }
        let raw = mu
            .iter()
            .chain(alpha)
            .chain(beta)
            .map(|&v| softplus_inv(v))
            .collect();
        Self::from_raw(num_types, layout, raw)
    }

    /// Initial model for training: raw parameters normal with sd 0.1 around
    /// the softplus preimages of μ = rate/K, α = 0.1, β = 1.
    pub fn init_for_data<R: Rng + ?Sized>(
        num_types: usize,
        layout: DecayLayout,
        empirical_rate: F,
        rng: &mut R,
    ) -> Result<Self> {
        let k = num_types;
        let mu0 = (empirical_rate / F::from_usize_lossy(k.max(1))).max(F::lit(1e-6));
        let noise = Normal::new(0.0, 0.1).expect("valid normal");
        let mut raw = Vec::with_capacity(k + k * k + layout.count(k));
        let targets = std::iter::repeat_n(mu0, k)
            .chain(std::iter::repeat_n(F::lit(0.1), k * k))
            .chain(std::iter::repeat_n(F::one(), layout.count(k)));
        for target in targets {
            raw.push(softplus_inv(target) + F::lit(noise.sample(rng)));
        }
        Self::from_raw(k, layout, raw)
    }

    /// A random stable model: μ ~ U(0.5, 1.5), β ~ U(0.5, 2), and α scaled so
    /// every target's branching sum `Σ_j α_{j,k}/β_{j,k}` is below 0.5.
    pub fn random<R: Rng + ?Sized>(
        num_types: usize,
        layout: DecayLayout,
        rng: &mut R,
    ) -> Result<Self> {
        let k = num_types;
        let mu: Vec<F> = (0..k).map(|_| F::lit(rng.random_range(0.5..1.5))).collect();
        let beta: Vec<F> = (0..layout.count(k))
            .map(|_| F::lit(rng.random_range(0.5..2.0)))
            .collect();
        let weight = 0.5 / k as f64;
        let mut alpha = Vec::with_capacity(k * k);
        for j in 0..k {
            for t in 0..k {
                let d = match layout {
                    DecayLayout::Full => j * k + t,
                    DecayLayout::Shared => j,
                };
                let u: f64 = rng.random_range(0.02..1.0);
                alpha.push(beta[d] * F::lit(u * weight));
            }
        }
        Self::from_linked(k, &mu, &alpha, &beta, layout)
    }

    /// Stationary mean intensities, the solution of `λ = μ + Gᵀλ` with
    /// `G_{j,k} = α_{j,k}/β_{j,k}`; `None` when the branching proxy is ≥ 1.
    pub fn stationary_rates(&self) -> Option<Vec<F>> {
        if self.stationarity_proxy()? >= F::one() {
            return None;
        }
        let k = self.num_types;
        let mut lam = self.mu_all().to_vec();
        for _ in 0..100_000 {
            let next: Vec<F> = (0..k)
                .map(|t| {
                    self.mu(t)
                        + (0..k)
                            .map(|j| self.alpha(j, t) / self.beta(j, t) * lam[j])
                            .sum::<F>()
                })
                .collect();
            let change = next
                .iter()
                .zip(&lam)
                .fold(F::zero(), |a, (&x, &y)| a.max((x - y).abs()));
            lam = next;
            if change <= F::lit(1e-13) * lam.iter().copied().sum::<F>() {
                break;
            }
        }
        Some(lam)
    }

    /// Multiplies every base rate by `factor`, which scales the stationary
    /// rates by the same factor.
    pub fn scale_base_rates(&mut self, factor: F) {
        let mut raw = self.raw.clone();
        for (r, &m) in raw.iter_mut().zip(&self.linked[..self.num_types]) {
            *r = softplus_inv(m * factor);
        }
        self.set_raw_params(&raw);
    }

    pub fn layout(&self) -> DecayLayout {
        self.layout
    }

    fn alpha_offset(&self) -> usize {
        self.num_types
    }

    fn beta_offset(&self) -> usize {
        self.num_types + self.num_types * self.num_types
    }

    fn num_decays(&self) -> usize {
        self.layout.count(self.num_types)
    }

    #[inline]
    fn decay_index(&self, source: usize, target: usize) -> usize {
        match self.layout {
            DecayLayout::Full => source * self.num_types + target,
            DecayLayout::Shared => source,
        }
    }

    pub fn mu(&self, k: usize) -> F {
        self.linked[k]
    }

    pub fn alpha(&self, source: usize, target: usize) -> F {
        self.linked[self.alpha_offset() + source * self.num_types + target]
    }

    pub fn beta(&self, source: usize, target: usize) -> F {
        self.linked[self.beta_offset() + self.decay_index(source, target)]
    }

    pub fn mu_all(&self) -> &[F] {
        &self.linked[..self.num_types]
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self> {
        ck.check_header("hawkes_exp")?;
        let layout = match ck.decay.as_deref() {
            None | Some("full") => DecayLayout::Full,
            Some("shared") => DecayLayout::Shared,
            Some(other) => {
                return Err(Error::Checkpoint(format!("unknown decay layout {other:?}")))
            }
        };
        let alpha = ck
            .alpha
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("missing alpha".into()))?;
        let beta = ck
            .beta
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("missing beta".into()))?;
        let raw = ck
            .mu
            .iter()
            .chain(alpha)
            .chain(beta)
            .map(|&v| F::lit(v))
            .collect();
        Self::from_raw(ck.num_types, layout, raw).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

impl<F: Real> IntensityModel<F> for HawkesExpModel<F> {
    type State = HawkesState<F>;

    fn num_types(&self) -> usize {
        self.num_types
    }

    fn raw_params(&self) -> &[F] {
        &self.raw
    }

    fn set_raw_params(&mut self, raw: &[F]) {
        self.raw.clear();
        self.raw.extend_from_slice(raw);
        self.linked = raw.iter().map(|&x| softplus(x)).collect();
        self.dlink = raw.iter().map(|&x| softplus_grad(x)).collect();
    }

    fn linked_params(&self) -> Vec<F> {
        self.linked.clone()
    }

    fn start(&self) -> HawkesState<F> {
        let n = self.num_decays();
        HawkesState {
            time: F::zero(),
            decayed: vec![F::zero(); n],
            lagged: vec![F::zero(); n],
        }
    }

    fn state_time(&self, s: &HawkesState<F>) -> F {
        s.time
    }

    fn advance(&self, s: &mut HawkesState<F>, t: F) {
        let dt = t - s.time;
        debug_assert!(dt >= F::zero(), "advance backwards: {} -> {}", s.time, t);
        if dt > F::zero() {
            let betas = &self.linked[self.beta_offset()..];
            for ((sd, ld), &b) in s.decayed.iter_mut().zip(s.lagged.iter_mut()).zip(betas) {
                if *sd == F::zero() {
                    continue;
                }
                let e = (-b * dt).exp();
                *ld = (*ld + dt * *sd) * e;
                *sd = *sd * e;
            }
        }
        s.time = t;
    }

    fn observe(&self, s: &mut HawkesState<F>, j: usize) {
        match self.layout {
            DecayLayout::Full => {
                let k = self.num_types;
                for v in &mut s.decayed[j * k..(j + 1) * k] {
                    *v += F::one();
                }
            }
            DecayLayout::Shared => s.decayed[j] += F::one(),
        }
    }

    fn rate(&self, s: &HawkesState<F>, k: usize) -> F {
        let kk = self.num_types;
        let a0 = self.alpha_offset();
        let mut v = self.linked[k];
        for j in 0..kk {
            let sd = s.decayed[self.decay_index(j, k)];
            if sd != F::zero() {
                v += self.linked[a0 + j * kk + k] * sd;
            }
        }
        v
    }

    fn add_rate_grad(&self, s: &HawkesState<F>, k: usize, scale: F, out: &mut [F]) {
        let kk = self.num_types;
        let a0 = self.alpha_offset();
        let b0 = self.beta_offset();
        out[k] += scale * self.dlink[k];
        for j in 0..kk {
            let d = self.decay_index(j, k);
            let sd = s.decayed[d];
            if sd == F::zero() {
                continue;
            }
            let ai = a0 + j * kk + k;
            out[ai] += scale * sd * self.dlink[ai];
            out[b0 + d] -= scale * self.linked[ai] * s.lagged[d] * self.dlink[b0 + d];
        }
    }

    fn integral(&self, s: &HawkesState<F>, k: usize, dt: F) -> F {
        let kk = self.num_types;
        let a0 = self.alpha_offset();
        let b0 = self.beta_offset();
        let mut v = self.linked[k] * dt;
        for j in 0..kk {
            let d = self.decay_index(j, k);
            let sd = s.decayed[d];
            if sd == F::zero() {
                continue;
            }
            let b = self.linked[b0 + d];
            let one_minus = -(-b * dt).exp_m1();
            v += self.linked[a0 + j * kk + k] / b * sd * one_minus;
        }
        v
    }

    fn add_integral_grad(&self, s: &HawkesState<F>, k: usize, dt: F, scale: F, out: &mut [F]) {
        let kk = self.num_types;
        let a0 = self.alpha_offset();
        let b0 = self.beta_offset();
        out[k] += scale * dt * self.dlink[k];
        for j in 0..kk {
            let d = self.decay_index(j, k);
            let s0 = s.decayed[d];
            if s0 == F::zero() {
                continue;
            }
            let ai = a0 + j * kk + k;
            let a = self.linked[ai];
            let b = self.linked[b0 + d];
            let e = (-b * dt).exp();
            let one_minus = -(-b * dt).exp_m1();
            let d0 = s.lagged[d];
            let d1 = (d0 + dt * s0) * e;
            // ∫ kernel sum / α over the interval
            let area = s0 * one_minus / b;
            out[ai] += scale * area * self.dlink[ai];
            let darea = (d1 - d0) / b - area / b;
            out[b0 + d] += scale * a * darea * self.dlink[b0 + d];
        }
    }

    fn stationarity_proxy(&self) -> Option<F> {
        let kk = self.num_types;
        (0..kk)
            .map(|k| {
                (0..kk)
                    .map(|j| self.alpha(j, k) / self.beta(j, k))
                    .sum::<F>()
            })
            .fold(None, |acc: Option<F>, v| Some(acc.map_or(v, |a| a.max(v))))
    }

    fn to_checkpoint(&self) -> ModelCheckpoint {
        let raw: Vec<f64> = self.raw.iter().map(|v| v.as_f64()).collect();
        let (a0, b0) = (self.alpha_offset(), self.beta_offset());
        ModelCheckpoint {
            format_version: CHECKPOINT_VERSION,
            family: "hawkes_exp".into(),
            num_types: self.num_types,
            link: "softplus".into(),
            decay: Some(self.layout.name().into()),
            mu: raw[..a0].to_vec(),
            alpha: Some(raw[a0..b0].to_vec()),
            beta: Some(raw[b0..].to_vec()),
        }
    }
}
