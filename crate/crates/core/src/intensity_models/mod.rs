//! Parametric intensity models with analytic gradients and closed-form
//! compensators.
//!
//! Every model exposes its history through an explicit, incrementally updated
//! state: [`IntensityModel::advance`] moves the state forward in time with the
//! history held fixed and [`IntensityModel::observe`] appends an event at the
//! state's current time. Rates read from a state are conditioned on the events
//! observed so far, so the rate of an event at `t` must be read *before* that
//! event is observed.

mod checkpoint;
mod hawkes;
mod noise;
mod poisson;

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_streams::Event;
use crate::scalar::Real;

pub use checkpoint::{ModelCheckpoint, NoiseCheckpoint, CHECKPOINT_VERSION};
pub use hawkes::{DecayLayout, HawkesExpModel, HawkesState};
pub use noise::{fit_noise_model, noise_intensity, CoarseNoiseModel, NoiseFamily, NoiseFitConfig};
pub use poisson::{PoissonModel, PoissonState};

/// Counts of intensity-function evaluations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounter {
    pub model_evals: u64,
    pub noise_evals: u64,
}

impl EvalCounter {
    pub fn total(&self) -> u64 {
        self.model_evals + self.noise_evals
    }

    pub fn merge(&mut self, other: &EvalCounter) {
        *self += *other;
    }
}

impl AddAssign for EvalCounter {
    fn add_assign(&mut self, rhs: Self) {
        self.model_evals += rhs.model_evals;
        self.noise_evals += rhs.noise_evals;
    }
}

impl Add for EvalCounter {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

/// A multivariate point process whose intensities are non-increasing between
/// events for a fixed history.
pub trait IntensityModel<F: Real>: Clone + Send + Sync {
    type State: Clone + Send + Sync + std::fmt::Debug;

    fn num_types(&self) -> usize;

    /// Unconstrained parameters, in the order gradients are reported.
    fn raw_params(&self) -> &[F];

    fn set_raw_params(&mut self, raw: &[F]);

    fn num_params(&self) -> usize {
        self.raw_params().len()
    }

    /// Parameters after the positivity link, same layout as `raw_params`.
    fn linked_params(&self) -> Vec<F>;

    /// State at time 0 with an empty history.
    fn start(&self) -> Self::State;

    fn state_time(&self, state: &Self::State) -> F;

    /// Moves the state to `t ≥ state_time` without adding events.
    fn advance(&self, state: &mut Self::State, t: F);

    /// Adds an event of type `k` at the state's current time.
    fn observe(&self, state: &mut Self::State, k: usize);

    /// λ_k at the state's time.
    fn rate(&self, state: &Self::State, k: usize) -> F;

    fn total_rate(&self, state: &Self::State) -> F {
        (0..self.num_types()).map(|k| self.rate(state, k)).sum()
    }

    /// `out += scale · ∂λ_k/∂raw`.
    fn add_rate_grad(&self, state: &Self::State, k: usize, scale: F, out: &mut [F]);

    /// ∫ λ_k over `[state_time, state_time + dt]` with the history held fixed.
    fn integral(&self, state: &Self::State, k: usize, dt: F) -> F;

    /// `out += scale · ∂/∂raw` of [`IntensityModel::integral`].
    fn add_integral_grad(&self, state: &Self::State, k: usize, dt: F, scale: F, out: &mut [F]);

    fn total_integral(&self, state: &Self::State, dt: F) -> F {
        (0..self.num_types())
            .map(|k| self.integral(state, k, dt))
            .sum()
    }

    fn add_total_integral_grad(&self, state: &Self::State, dt: F, scale: F, out: &mut [F]) {
        for k in 0..self.num_types() {
            self.add_integral_grad(state, k, dt, scale, out);
        }
    }

    /// `max_k Σ_j α_{j,k}/β_{j,k}` for self-exciting models; `None` when the
    /// model cannot explode.
    fn stationarity_proxy(&self) -> Option<F> {
        None
    }

    fn to_checkpoint(&self) -> ModelCheckpoint;
}

/// Replays `history` into a fresh state. Times must be non-decreasing.
pub fn replay<F: Real, M: IntensityModel<F>>(model: &M, history: &[Event<F>]) -> Result<M::State> {
    let mut state = model.start();
    for e in history {
        check_type(e.type_id, model.num_types())?;
        let now = model.state_time(&state);
        if e.time < now {
            return Err(Error::HistoryOrder {
                time: e.time.as_f64(),
                last: now.as_f64(),
            });
        }
        model.advance(&mut state, e.time);
        model.observe(&mut state, e.type_id);
    }
    Ok(state)
}

pub(crate) fn check_type(k: usize, num_types: usize) -> Result<()> {
    if k >= num_types {
        Err(Error::TypeOutOfRange { k, num_types })
    } else {
        Ok(())
    }
}

fn check_after_history<F: Real>(t: F, history: &[Event<F>]) -> Result<()> {
    match history.last() {
        Some(last) if t <= last.time => Err(Error::HistoryOrder {
            time: t.as_f64(),
            last: last.time.as_f64(),
        }),
        _ if t < F::zero() => Err(Error::InvalidArgument(format!("negative time {t}"))),
        _ => Ok(()),
    }
}

/// λ_k(t | history); counts one model evaluation.
pub fn intensity<F: Real, M: IntensityModel<F>>(
    model: &M,
    k: usize,
    t: F,
    history: &[Event<F>],
    counter: &mut EvalCounter,
) -> Result<F> {
    check_type(k, model.num_types())?;
    check_after_history(t, history)?;
    let mut s = replay(model, history)?;
    model.advance(&mut s, t);
    counter.model_evals += 1;
    Ok(model.rate(&s, k))
}

/// ∂λ_k(t | history)/∂raw.
pub fn intensity_gradient<F: Real, M: IntensityModel<F>>(
    model: &M,
    k: usize,
    t: F,
    history: &[Event<F>],
) -> Result<Vec<F>> {
    check_type(k, model.num_types())?;
    check_after_history(t, history)?;
    let mut s = replay(model, history)?;
    model.advance(&mut s, t);
    let mut g = vec![F::zero(); model.num_params()];
    model.add_rate_grad(&s, k, F::one(), &mut g);
    Ok(g)
}

fn compensator_state<F: Real, M: IntensityModel<F>>(
    model: &M,
    k: usize,
    t0: F,
    t1: F,
    history: &[Event<F>],
) -> Result<M::State> {
    check_type(k, model.num_types())?;
    if t1 < t0 {
        return Err(Error::InvalidArgument(format!(
            "compensator interval [{t0}, {t1}] is reversed"
        )));
    }
    if let Some(last) = history.last() {
        if last.time > t0 {
            return Err(Error::HistoryOrder {
                time: t0.as_f64(),
                last: last.time.as_f64(),
            });
        }
    }
    let mut s = replay(model, history)?;
    model.advance(&mut s, t0);
    Ok(s)
}

/// ∫_{t0}^{t1} λ_k(s | history) ds for a history that ends at or before `t0`.
pub fn compensator<F: Real, M: IntensityModel<F>>(
    model: &M,
    k: usize,
    t0: F,
    t1: F,
    history: &[Event<F>],
) -> Result<F> {
    let s = compensator_state(model, k, t0, t1, history)?;
    Ok(model.integral(&s, k, t1 - t0))
}

pub fn compensator_gradient<F: Real, M: IntensityModel<F>>(
    model: &M,
    k: usize,
    t0: F,
    t1: F,
    history: &[Event<F>],
) -> Result<Vec<F>> {
    let s = compensator_state(model, k, t0, t1, history)?;
    let mut g = vec![F::zero(); model.num_params()];
    model.add_integral_grad(&s, k, t1 - t0, F::one(), &mut g);
    Ok(g)
}

/// Either supported model family, dispatched at runtime.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel<F> {
    Hawkes(HawkesExpModel<F>),
    Poisson(PoissonModel<F>),
}

#[derive(Debug, Clone)]
pub enum AnyState<F> {
    Hawkes(HawkesState<F>),
    Poisson(PoissonState<F>),
}

macro_rules! dispatch {
    ($self:expr, $m:ident => $e:expr) => {
        match $self {
            AnyModel::Hawkes($m) => $e,
            AnyModel::Poisson($m) => $e,
        }
    };
}

macro_rules! dispatch_state {
    ($self:expr, $state:expr, $m:ident, $s:ident => $e:expr) => {
        match ($self, $state) {
            (AnyModel::Hawkes($m), AnyState::Hawkes($s)) => $e,
            (AnyModel::Poisson($m), AnyState::Poisson($s)) => $e,
            _ => panic!("state does not belong to this model family"),
        }
    };
}

impl<F: Real> AnyModel<F> {
    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self> {
        match ck.family.as_str() {
            "hawkes_exp" => Ok(AnyModel::Hawkes(HawkesExpModel::from_checkpoint(ck)?)),
            "poisson" => Ok(AnyModel::Poisson(PoissonModel::from_checkpoint(ck)?)),
            other => Err(Error::Checkpoint(format!("unknown model family {other:?}"))),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            AnyModel::Hawkes(_) => "hawkes_exp",
            AnyModel::Poisson(_) => "poisson",
        }
    }
}

impl<F: Real> IntensityModel<F> for AnyModel<F> {
    type State = AnyState<F>;

    fn num_types(&self) -> usize {
        dispatch!(self, m => m.num_types())
    }
    fn raw_params(&self) -> &[F] {
        dispatch!(self, m => m.raw_params())
    }
    fn set_raw_params(&mut self, raw: &[F]) {
        dispatch!(self, m => m.set_raw_params(raw))
    }
    fn linked_params(&self) -> Vec<F> {
        dispatch!(self, m => m.linked_params())
    }
    fn start(&self) -> AnyState<F> {
        match self {
            AnyModel::Hawkes(m) => AnyState::Hawkes(m.start()),
            AnyModel::Poisson(m) => AnyState::Poisson(m.start()),
        }
    }
    fn state_time(&self, state: &AnyState<F>) -> F {
        dispatch_state!(self, state, m, s => m.state_time(s))
    }
    fn advance(&self, state: &mut AnyState<F>, t: F) {
        dispatch_state!(self, state, m, s => m.advance(s, t))
    }
    fn observe(&self, state: &mut AnyState<F>, k: usize) {
        dispatch_state!(self, state, m, s => m.observe(s, k))
    }
    fn rate(&self, state: &AnyState<F>, k: usize) -> F {
        dispatch_state!(self, state, m, s => m.rate(s, k))
    }
    fn total_rate(&self, state: &AnyState<F>) -> F {
        dispatch_state!(self, state, m, s => m.total_rate(s))
    }
    fn add_rate_grad(&self, state: &AnyState<F>, k: usize, scale: F, out: &mut [F]) {
        dispatch_state!(self, state, m, s => m.add_rate_grad(s, k, scale, out))
    }
    fn integral(&self, state: &AnyState<F>, k: usize, dt: F) -> F {
        dispatch_state!(self, state, m, s => m.integral(s, k, dt))
    }
    fn add_integral_grad(&self, state: &AnyState<F>, k: usize, dt: F, scale: F, out: &mut [F]) {
        dispatch_state!(self, state, m, s => m.add_integral_grad(s, k, dt, scale, out))
    }
    fn total_integral(&self, state: &AnyState<F>, dt: F) -> F {
        dispatch_state!(self, state, m, s => m.total_integral(s, dt))
    }
    fn stationarity_proxy(&self) -> Option<F> {
        dispatch!(self, m => m.stationarity_proxy())
    }
    fn to_checkpoint(&self) -> ModelCheckpoint {
        dispatch!(self, m => m.to_checkpoint())
    }
}

impl<F> From<HawkesExpModel<F>> for AnyModel<F> {
    fn from(m: HawkesExpModel<F>) -> Self {
        AnyModel::Hawkes(m)
    }
}

impl<F> From<PoissonModel<F>> for AnyModel<F> {
    fn from(m: PoissonModel<F>) -> Self {
        AnyModel::Poisson(m)
    }
}
