//! Thinning samplers: simulation of event streams from an intensity model and
//! the noise-stream sampler used by the NCE objective.
//!
//! Both rely on intensities being non-increasing between events for a fixed
//! history (excitation-only kernels), so the total intensity just after the
//! last event is an exact upper bound until the next event.

use log::warn;
use rand::RngCore;

use crate::error::{Error, Result};
use crate::event_streams::{Dataset, Event, EventStream};
use crate::intensity_models::{replay, AnyState, CoarseNoiseModel, EvalCounter, IntensityModel};
use crate::rng::{exp_draw, open_unit, stream_rng, Purpose};
use crate::scalar::Real;

/// Hard cap on simulated events per stream.
pub const EXPLOSION_CAP: usize = 1_000_000;

/// Default fractional-acceptance threshold.
pub const DEFAULT_FRACTIONAL_THRESHOLD: f64 = 0.05;

/// An upper bound on total intensity, valid on `(t_beg, t_end)` for the
/// history it was computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpperBound<F> {
    pub value: F,
    pub t_beg: F,
    pub t_end: F,
}

/// Bound from a state positioned at `t_beg` (after any event at `t_beg` has
/// been observed). Valid until the next event, so `t_end` is open-ended.
pub fn bound_from_state<F: Real, M: IntensityModel<F>>(
    model: &M,
    state: &M::State,
) -> UpperBound<F> {
    UpperBound {
        value: model.total_rate(state),
        t_beg: model.state_time(state),
        t_end: F::infinity(),
    }
}

/// Upper bound on Σ_k λ_k after `t_beg` given `history` (times ≤ `t_beg`).
pub fn upper_bound<F: Real, M: IntensityModel<F>>(
    model: &M,
    t_beg: F,
    history: &[Event<F>],
) -> Result<UpperBound<F>> {
    if let Some(last) = history.last() {
        if last.time > t_beg {
            return Err(Error::HistoryOrder {
                time: t_beg.as_f64(),
                last: last.time.as_f64(),
            });
        }
    }
    let mut s = replay(model, history)?;
    model.advance(&mut s, t_beg);
    Ok(bound_from_state(model, &s))
}

/// Same as [`upper_bound`] for a coarse noise model (sum over `C` coarse types).
pub fn noise_upper_bound<F: Real>(
    q: &CoarseNoiseModel<F>,
    t_beg: F,
    history: &[Event<F>],
) -> Result<UpperBound<F>> {
    if let Some(last) = history.last() {
        if last.time > t_beg {
            return Err(Error::HistoryOrder {
                time: t_beg.as_f64(),
                last: last.time.as_f64(),
            });
        }
    }
    let mut s = q.replay(history)?;
    q.advance(&mut s, t_beg);
    Ok(UpperBound {
        value: q.total_rate(&s),
        t_beg,
        t_end: F::infinity(),
    })
}

/// Simulates one stream on `[0, horizon)` by thinning.
pub fn sample_stream<F: Real, M: IntensityModel<F>, R: RngCore + ?Sized>(
    model: &M,
    horizon: F,
    rng: &mut R,
) -> Result<EventStream<F>> {
    if !(horizon > F::zero()) {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} must be positive"
        )));
    }
    if let Some(p) = model.stationarity_proxy() {
        if p >= F::one() {
            warn!("branching proxy {p} ≥ 1: the process may be explosive");
        }
    }
    let mut state = model.start();
    let mut events: Vec<Event<F>> = Vec::new();
    let mut t = F::zero();
    loop {
        let bound = model.total_rate(&state);
        if !(bound > F::zero()) || !bound.is_finite() {
            break;
        }
        t += F::lit(exp_draw(rng, bound.as_f64()));
        if t >= horizon {
            break;
        }
        model.advance(&mut state, t);
        let threshold = F::lit(open_unit(rng)) * bound;
        let mut acc = F::zero();
        let mut chosen = None;
        for k in 0..model.num_types() {
            acc += model.rate(&state, k);
            if threshold < acc {
                chosen = Some(k);
                break;
            }
        }
        let Some(k) = chosen else { continue };
        if events.last().is_some_and(|e| e.time >= t) {
            continue;
        }
        if events.len() == EXPLOSION_CAP {
            return Err(Error::ExplosionCap { cap: EXPLOSION_CAP });
        }
        events.push(Event::new(t, k));
        model.observe(&mut state, k);
    }
    Ok(EventStream::new(horizon, events))
}

/// `n` streams, stream `i` drawn from `stream_rng(seed, i, Simulate)`.
pub fn simulate_dataset<F: Real, M: IntensityModel<F>>(
    model: &M,
    num_streams: usize,
    horizon: F,
    seed: u64,
) -> Result<Dataset<F>> {
    let streams = (0..num_streams)
        .map(|i| sample_stream(model, horizon, &mut stream_rng(seed, i, Purpose::Simulate)))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(model.num_types(), streams, None)
}

/// An accepted noise proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSample<F> {
    pub time: F,
    pub type_id: usize,
    /// λ^q_k(t) under the observed history.
    pub noise_intensity: F,
    /// 1 for stochastically accepted proposals, else μ = λ^q(t)/λ̄ ≥ threshold.
    pub weight: F,
}

#[derive(Debug, Clone, Copy)]
pub struct NoiseSettings<F> {
    /// Number of superposed noise streams; any non-negative real.
    pub m: F,
    pub fractional_threshold: F,
}

impl<F: Real> NoiseSettings<F> {
    pub fn new(m: F) -> Self {
        Self {
            m,
            fractional_threshold: F::lit(DEFAULT_FRACTIONAL_THRESHOLD),
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.m >= F::zero()) || !self.m.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "M = {} must be finite and ≥ 0",
                self.m
            )));
        }
        Ok(())
    }
}

/// Draws noise on `(t_beg, t_end)` from a state positioned at `t_beg`; the
/// state is advanced through the interval. Returns the number of proposals.
pub(crate) fn draw_interval<F: Real, R: RngCore + ?Sized>(
    q: &CoarseNoiseModel<F>,
    state: &mut AnyState<F>,
    t_end: F,
    settings: &NoiseSettings<F>,
    rng: &mut R,
    counter: &mut EvalCounter,
    coarse: &mut Vec<F>,
    out: &mut Vec<NoiseSample<F>>,
) -> u64 {
    let t_beg = q.state_time(state);
    let bound = q.total_rate(state);
    let rate = settings.m * bound;
    if !(rate > F::zero()) || !rate.is_finite() {
        return 0;
    }
    coarse.resize(q.num_coarse(), F::zero());
    let rate = rate.as_f64();
    let mut t = t_beg;
    let mut proposals = 0;
    loop {
        let next = t + F::lit(exp_draw(rng, rate));
        if next >= t_end {
            break;
        }
        if next <= t {
            continue;
        }
        t = next;
        proposals += 1;
        q.advance(state, t);
        q.coarse_rates(state, coarse, counter);
        let total: F = coarse.iter().copied().sum();
        let mut mu = total / bound;
        if mu < settings.fractional_threshold {
            if F::lit(open_unit(rng)) < mu {
                mu = F::one();
            } else {
                continue;
            }
        }
        let pick = F::lit(open_unit(rng)) * total;
        let mut acc = F::zero();
        let mut c = coarse.len() - 1;
        for (i, &r) in coarse.iter().enumerate() {
            acc += r;
            if pick < acc {
                c = i;
                break;
            }
        }
        let k = q.refine_type(c, F::lit(open_unit(rng)));
        out.push(NoiseSample {
            time: t,
            type_id: k,
            noise_intensity: q.refine_prob(k) * coarse[c],
            weight: mu.min(F::one()),
        });
    }
    proposals
}

/// Noise samples on `(t_beg, t_end)` conditioned on the observed `history`,
/// which must end at or before `t_beg`. Each proposal costs `C` noise
/// evaluations; the bound itself is not counted.
pub fn draw_noise_samples<F: Real, R: RngCore + ?Sized>(
    q: &CoarseNoiseModel<F>,
    t_beg: F,
    t_end: F,
    history: &[Event<F>],
    settings: &NoiseSettings<F>,
    rng: &mut R,
    counter: &mut EvalCounter,
) -> Result<Vec<NoiseSample<F>>> {
    settings.check()?;
    if !(t_beg < t_end) {
        return Err(Error::InvalidArgument(format!(
            "noise interval ({t_beg}, {t_end}) is empty"
        )));
    }
    if let Some(last) = history.last() {
        if last.time > t_beg {
            return Err(Error::HistoryOrder {
                time: t_beg.as_f64(),
                last: last.time.as_f64(),
            });
        }
    }
    let mut state = q.replay(history)?;
    q.advance(&mut state, t_beg);
    let mut out = Vec::new();
    draw_interval(
        q,
        &mut state,
        t_end,
        settings,
        rng,
        counter,
        &mut Vec::new(),
        &mut out,
    );
    Ok(out)
}

/// All noise for one observed stream, interval by interval between events.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw<F> {
    pub samples: Vec<NoiseSample<F>>,
    /// Number of thinning proposals (J).
    pub proposals: u64,
    /// Evaluations spent while sampling.
    pub counter: EvalCounter,
}

pub fn draw_stream_noise<F: Real, R: RngCore + ?Sized>(
    q: &CoarseNoiseModel<F>,
    stream: &EventStream<F>,
    settings: &NoiseSettings<F>,
    rng: &mut R,
) -> Result<NoiseDraw<F>> {
    settings.check()?;
    let mut state = q.start();
    let mut counter = EvalCounter::default();
    let mut samples = Vec::new();
    let mut coarse = Vec::new();
    let mut proposals = 0;
    for e in &stream.events {
        if e.time > q.state_time(&state) {
            proposals += draw_interval(
                q,
                &mut state,
                e.time,
                settings,
                rng,
                &mut counter,
                &mut coarse,
                &mut samples,
            );
        }
        q.advance(&mut state, e.time);
        q.observe(&mut state, e.type_id);
    }
    if stream.horizon > q.state_time(&state) {
        proposals += draw_interval(
            q,
            &mut state,
            stream.horizon,
            settings,
            rng,
            &mut counter,
            &mut coarse,
            &mut samples,
        );
    }
    Ok(NoiseDraw {
        samples,
        proposals,
        counter,
    })
}
