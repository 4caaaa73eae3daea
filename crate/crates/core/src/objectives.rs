//! Training and evaluation objectives with analytic gradients over the
//! model's raw parameters: continuous-time ranking NCE, Monte-Carlo MLE and
//! the exact log-likelihood.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicBool, Ordering};

use log::warn;
use rand::RngCore;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::event_streams::{Dataset, EventStream};
use crate::intensity_models::{CoarseNoiseModel, EvalCounter, IntensityModel};
use crate::rng::open_unit;
use crate::scalar::Real;
use crate::thinning::{draw_stream_noise, NoiseDraw, NoiseSample, NoiseSettings};

/// Smallest argument passed to `ln`.
pub const LOG_FLOOR: f64 = 1e-300;

static EMPTY_MC_WARNED: AtomicBool = AtomicBool::new(false);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectiveReport<F> {
    pub value: F,
    pub gradient: Vec<F>,
    pub counter: EvalCounter,
    /// Real events scored (I).
    pub event_count: usize,
    /// Noise samples or Monte-Carlo points used (J).
    pub noise_or_mc_count: usize,
    /// Logarithms whose argument hit [`LOG_FLOOR`].
    pub clamped: u64,
}

impl<F: Real> ObjectiveReport<F> {
    pub fn zero(num_params: usize) -> Self {
        Self {
            value: F::zero(),
            gradient: vec![F::zero(); num_params],
            counter: EvalCounter::default(),
            event_count: 0,
            noise_or_mc_count: 0,
            clamped: 0,
        }
    }

    /// Adds another report into this one.
    pub fn accumulate(&mut self, other: &ObjectiveReport<F>) {
        self.value += other.value;
        for (a, &b) in self.gradient.iter_mut().zip(&other.gradient) {
            *a += b;
        }
        self.counter += other.counter;
        self.event_count += other.event_count;
        self.noise_or_mc_count += other.noise_or_mc_count;
        self.clamped += other.clamped;
    }
}

fn guarded_ln<F: Real>(x: F, clamped: &mut u64) -> F {
    let floor = F::lit(LOG_FLOOR);
    if x < floor || x.is_nan() {
        *clamped += 1;
        floor.ln()
    } else {
        x.ln()
    }
}

/// NCE objective over the whole stream.
pub fn nce_objective<F: Real, M: IntensityModel<F>>(
    model: &M,
    q: &CoarseNoiseModel<F>,
    stream: &EventStream<F>,
    noise: &[NoiseSample<F>],
    m: F,
) -> Result<ObjectiveReport<F>> {
    nce_objective_window(model, q, stream, noise, m, F::zero(), stream.horizon)
}

/// NCE objective restricted to real events and noise samples in `[t0, t1)`.
/// Events before `t0` still condition both processes.
///
/// Per real event `k` at `t`: `log λ_k / (λ_k + M λ^q_k)`. Per noise sample
/// with weight `w`: `w · log λ^q_k / (λ_k + M λ^q_k)`. `q` is held fixed.
pub fn nce_objective_window<F: Real, M: IntensityModel<F>>(
    model: &M,
    q: &CoarseNoiseModel<F>,
    stream: &EventStream<F>,
    noise: &[NoiseSample<F>],
    m: F,
    t0: F,
    t1: F,
) -> Result<ObjectiveReport<F>> {
    if !(m >= F::zero()) {
        return Err(Error::InvalidArgument(format!("M = {m} must be ≥ 0")));
    }
    let mut rep = ObjectiveReport::zero(model.num_params());
    let mut ps = model.start();
    let mut qs = q.start();
    let inside = |t: F| t >= t0 && t < t1;
    let mut ni = 0;

    let mut score_noise = |upto: Option<F>,
                           ps: &mut M::State,
                           rep: &mut ObjectiveReport<F>|
     -> Result<()> {
        while ni < noise.len() {
            let s = &noise[ni];
            match upto {
                Some(t) if s.time > t => break,
                Some(t) if s.time == t => return Err(Error::NoiseCollision { time: t.as_f64() }),
                _ => {}
            }
            ni += 1;
            if !inside(s.time) {
                continue;
            }
            if s.time < model.state_time(ps) {
                return Err(Error::InvalidArgument(format!(
                    "noise samples are not sorted at time {}",
                    s.time
                )));
            }
            model.advance(ps, s.time);
            let lam = model.rate(ps, s.type_id);
            rep.counter.model_evals += 1;
            let denom = lam + m * s.noise_intensity;
            rep.value += s.weight * guarded_ln(s.noise_intensity / denom, &mut rep.clamped);
            model.add_rate_grad(ps, s.type_id, -s.weight / denom, &mut rep.gradient);
            rep.noise_or_mc_count += 1;
        }
        Ok(())
    };

    for e in &stream.events {
        score_noise(Some(e.time), &mut ps, &mut rep)?;
        model.advance(&mut ps, e.time);
        q.advance(&mut qs, e.time);
        if inside(e.time) {
            let lam = model.rate(&ps, e.type_id);
            rep.counter.model_evals += 1;
            let lq = q.noise_rate(&qs, e.type_id, &mut rep.counter);
            let denom = lam + m * lq;
            rep.value += guarded_ln(lam / denom, &mut rep.clamped);
            let scale = if lam > F::zero() {
                m * lq / (lam * denom)
            } else {
                F::zero()
            };
            model.add_rate_grad(&ps, e.type_id, scale, &mut rep.gradient);
            rep.event_count += 1;
        }
        model.observe(&mut ps, e.type_id);
        q.observe(&mut qs, e.type_id);
    }
    score_noise(None, &mut ps, &mut rep)?;
    Ok(rep)
}

/// Monte-Carlo MLE objective: exact log-intensity terms at events and a
/// Monte-Carlo estimate of the compensator from `J` uniform points, where `J`
/// is `ρI` rounded at random. A point coinciding with an event time is
/// conditioned on the history strictly before it.
pub fn mle_objective<F: Real, M: IntensityModel<F>, R: RngCore + ?Sized>(
    model: &M,
    stream: &EventStream<F>,
    rho: F,
    rng: &mut R,
) -> Result<ObjectiveReport<F>> {
    if !(rho > F::zero()) || !rho.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "rho = {rho} must be positive"
        )));
    }
    let i = stream.len();
    let target = rho.as_f64() * i as f64;
    let base = target.floor();
    let j = base as usize + usize::from(open_unit(rng) < target - base);
    let mut points: Vec<F> = (0..j)
        .map(|_| F::lit(open_unit(rng)) * stream.horizon)
        .collect();
    points.sort_by(|a, b| a.partial_cmp(b).expect("finite"));

    let k_types = model.num_types();
    let mut rep = ObjectiveReport::zero(model.num_params());
    if j == 0 && !EMPTY_MC_WARNED.swap(true, Ordering::Relaxed) {
        warn!("Monte-Carlo grid is empty; integral term estimated as 0");
    }
    let weight = if j > 0 {
        stream.horizon / F::from_usize_lossy(j)
    } else {
        F::zero()
    };
    let mut s = model.start();
    let mut pi = 0;
    let mut grid = |upto: Option<F>, s: &mut M::State, rep: &mut ObjectiveReport<F>| {
        while pi < points.len() && upto.is_none_or(|t| points[pi] <= t) {
            model.advance(s, points[pi]);
            for k in 0..k_types {
                rep.value -= weight * model.rate(s, k);
                model.add_rate_grad(s, k, -weight, &mut rep.gradient);
            }
            rep.counter.model_evals += k_types as u64;
            pi += 1;
        }
    };
    for e in &stream.events {
        grid(Some(e.time), &mut s, &mut rep);
        model.advance(&mut s, e.time);
        let lam = model.rate(&s, e.type_id);
        rep.counter.model_evals += 1;
        rep.value += guarded_ln(lam, &mut rep.clamped);
        if lam > F::zero() {
            model.add_rate_grad(&s, e.type_id, lam.recip(), &mut rep.gradient);
        }
        model.observe(&mut s, e.type_id);
    }
    grid(None, &mut s, &mut rep);
    rep.event_count = i;
    rep.noise_or_mc_count = j;
    Ok(rep)
}

fn exact_impl<F: Real, M: IntensityModel<F>>(
    model: &M,
    stream: &EventStream<F>,
    mut grad: Option<&mut [F]>,
) -> F {
    let mut s = model.start();
    let mut ll = F::zero();
    let mut clamped = 0;
    for e in &stream.events {
        let dt = e.time - model.state_time(&s);
        ll -= model.total_integral(&s, dt);
        if let Some(g) = grad.as_deref_mut() {
            model.add_total_integral_grad(&s, dt, -F::one(), g);
        }
        model.advance(&mut s, e.time);
        let lam = model.rate(&s, e.type_id);
        ll += guarded_ln(lam, &mut clamped);
        if let Some(g) = grad.as_deref_mut() {
            if lam > F::zero() {
                model.add_rate_grad(&s, e.type_id, lam.recip(), g);
            }
        }
        model.observe(&mut s, e.type_id);
    }
    let dt = stream.horizon - model.state_time(&s);
    if dt > F::zero() {
        ll -= model.total_integral(&s, dt);
        if let Some(g) = grad {
            model.add_total_integral_grad(&s, dt, -F::one(), g);
        }
    }
    ll
}

/// Exact log-likelihood of a stream on `[0, T)`.
pub fn exact_loglik<F: Real, M: IntensityModel<F>>(model: &M, stream: &EventStream<F>) -> F {
    exact_impl(model, stream, None)
}

pub fn exact_loglik_gradient<F: Real, M: IntensityModel<F>>(
    model: &M,
    stream: &EventStream<F>,
) -> Vec<F> {
    exact_loglik_and_gradient(model, stream).1
}

pub fn exact_loglik_and_gradient<F: Real, M: IntensityModel<F>>(
    model: &M,
    stream: &EventStream<F>,
) -> (F, Vec<F>) {
    let mut g = vec![F::zero(); model.num_params()];
    let v = exact_impl(model, stream, Some(&mut g));
    (v, g)
}

/// Sum of exact log-likelihoods and gradients over a dataset, in stream order.
pub fn dataset_loglik_and_gradient<F: Real, M: IntensityModel<F>>(
    model: &M,
    data: &Dataset<F>,
) -> (F, Vec<F>) {
    let mut g = vec![F::zero(); model.num_params()];
    let mut v = F::zero();
    for s in &data.streams {
        v += exact_impl(model, s, Some(&mut g));
    }
    (v, g)
}

/// Fingerprint of a noise model's parameters, partition and refinement.
pub fn noise_fingerprint<F: Real>(q: &CoarseNoiseModel<F>) -> u64 {
    let ck = q.to_checkpoint();
    let mut h = DefaultHasher::new();
    ck.coarse_process.family.hash(&mut h);
    ck.partition.hash(&mut h);
    for v in ck
        .refine_probs
        .iter()
        .chain(&ck.coarse_process.mu)
        .chain(ck.coarse_process.alpha.iter().flatten())
        .chain(ck.coarse_process.beta.iter().flatten())
    {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Noise draws kept per stream index for reuse across epochs. The cache is
/// tied to one `(M, q, seed)` combination and is emptied when any changes.
#[derive(Debug, Clone, Default)]
pub struct NoiseCache<F> {
    key: Option<(u64, u64, u64)>,
    entries: HashMap<usize, NoiseDraw<F>>,
}

impl<F: Real> NoiseCache<F> {
    pub fn new() -> Self {
        Self {
            key: None,
            entries: HashMap::new(),
        }
    }

    /// Empties the cache unless it was built under the same `(M, q, seed)`.
    pub fn bind(&mut self, m: F, q: &CoarseNoiseModel<F>, seed: u64) {
        let key = (m.as_f64().to_bits(), noise_fingerprint(q), seed);
        if self.key != Some(key) {
            self.entries.clear();
            self.key = Some(key);
        }
    }

    pub fn get(&self, stream_index: usize) -> Option<&NoiseDraw<F>> {
        self.entries.get(&stream_index)
    }

    pub fn insert(&mut self, stream_index: usize, draw: NoiseDraw<F>) {
        self.entries.insert(stream_index, draw);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Returns the cached draw and `true`, or draws, stores it and returns `false`.
    pub fn get_or_draw<R: RngCore + ?Sized>(
        &mut self,
        stream_index: usize,
        q: &CoarseNoiseModel<F>,
        stream: &EventStream<F>,
        settings: &NoiseSettings<F>,
        rng: &mut R,
    ) -> Result<(&NoiseDraw<F>, bool)> {
        let hit = self.entries.contains_key(&stream_index);
        if !hit {
            let d = draw_stream_noise(q, stream, settings, rng)?;
            self.entries.insert(stream_index, d);
        }
        Ok((&self.entries[&stream_index], hit))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_streams::Event;
    use crate::intensity_models::{
        compensator, intensity, noise_intensity, AnyModel, DecayLayout, HawkesExpModel,
        PoissonModel,
    };
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hawkes() -> HawkesExpModel<f64> {
        HawkesExpModel::from_linked(
            2,
            &[0.4, 0.7],
            &[0.5, 0.2, 0.3, 0.6],
            &[1.1, 2.0, 0.8, 1.4],
            DecayLayout::Full,
        )
        .unwrap()
    }

    fn stream() -> EventStream<f64> {
        EventStream::new(
            6.0,
            vec![Event::new(0.4, 0), Event::new(1.3, 1), Event::new(2.9, 0)],
        )
    }

    #[test]
    fn poisson_exact_loglik() {
        let m = PoissonModel::from_rates(&[1.7]).unwrap();
        let s = EventStream::new(
            4.0,
            vec![Event::new(0.5, 0), Event::new(1.5, 0), Event::new(3.0, 0)],
        );
        let v = exact_loglik(&m, &s);
        assert!((v - (3.0 * 1.7f64.ln() - 1.7 * 4.0)).abs() < 1e-12);
    }

    #[test]
    fn exact_matches_compensator_sum() {
        let m = hawkes();
        let s = stream();
        let mut expect = 0.0;
        let mut c = EvalCounter::default();
        let mut bounds = vec![0.0];
        bounds.extend(s.events.iter().map(|e| e.time));
        bounds.push(s.horizon);
        for (i, w) in bounds.windows(2).enumerate() {
            let hist = &s.events[..i];
            for k in 0..2 {
                expect -= compensator(&m, k, w[0], w[1], hist).unwrap();
            }
        }
        for (i, e) in s.events.iter().enumerate() {
            expect += intensity(&m, e.type_id, e.time, &s.events[..i], &mut c)
                .unwrap()
                .ln();
        }
        assert!((exact_loglik(&m, &s) - expect).abs() < 1e-12);
    }

    #[test]
    fn empty_stream_gradient_is_base_rate_only() {
        let m: PoissonModel<f64> = PoissonModel::from_rates(&[0.9]).unwrap();
        let g = exact_loglik_gradient(&m, &EventStream::empty(3.0));
        let raw = m.raw_params()[0];
        assert!((g[0] + 3.0 * crate::scalar::softplus_grad(raw)).abs() < 1e-12);
    }

    #[test]
    fn single_event_alpha_gradient_zero() {
        let m = hawkes();
        let s = EventStream::new(0.7, vec![Event::new(0.7, 0)]);
        let g = exact_loglik_gradient(&m, &s);
        assert!(g[2..6].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_nce_is_zero() {
        let m = hawkes();
        let q = CoarseNoiseModel::uniform(
            2,
            AnyModel::Poisson(PoissonModel::from_rates(&[1.0]).unwrap()),
        )
        .unwrap();
        let r = nce_objective(&m, &q, &EventStream::empty(5.0), &[], 3.0).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.gradient.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn symmetric_discrimination_is_log_half() {
        let m = PoissonModel::from_rates(&[0.8]).unwrap();
        let q = CoarseNoiseModel::uniform(
            1,
            AnyModel::Poisson(PoissonModel::from_rates(&[0.8]).unwrap()),
        )
        .unwrap();
        let s = EventStream::new(2.0, vec![Event::new(1.0, 0)]);
        let r = nce_objective(&m, &q, &s, &[], 1.0).unwrap();
        assert!((r.value - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(
            r.counter,
            EvalCounter {
                model_evals: 1,
                noise_evals: 1
            }
        );
    }

    #[test]
    fn nce_matches_straight_line_recomputation() {
        let m = hawkes();
        let qh = HawkesExpModel::from_linked(1, &[0.9], &[0.3], &[1.7], DecayLayout::Full).unwrap();
        let q = CoarseNoiseModel::new(
            AnyModel::Hawkes(qh),
            crate::event_streams::Partition::single(2),
            vec![0.35, 0.65],
        )
        .unwrap();
        let s = stream();
        let big_m = 2.5;
        let noise = vec![
            NoiseSample {
                time: 0.1,
                type_id: 1,
                noise_intensity: 0.0,
                weight: 1.0,
            },
            NoiseSample {
                time: 0.9,
                type_id: 0,
                noise_intensity: 0.0,
                weight: 0.3,
            },
            NoiseSample {
                time: 2.0,
                type_id: 1,
                noise_intensity: 0.0,
                weight: 1.0,
            },
            NoiseSample {
                time: 3.5,
                type_id: 0,
                noise_intensity: 0.0,
                weight: 0.07,
            },
            NoiseSample {
                time: 5.2,
                type_id: 1,
                noise_intensity: 0.0,
                weight: 1.0,
            },
        ];
        let mut c = EvalCounter::default();
        let hist = |t: f64| s.history_before(t);
        let noise: Vec<_> = noise
            .into_iter()
            .map(|n| NoiseSample {
                noise_intensity: noise_intensity(&q, n.type_id, n.time, hist(n.time), &mut c)
                    .unwrap(),
                ..n
            })
            .collect();
        let mut expect = 0.0;
        for e in &s.events {
            let lam = intensity(&m, e.type_id, e.time, hist(e.time), &mut c).unwrap();
            let lq = noise_intensity(&q, e.type_id, e.time, hist(e.time), &mut c).unwrap();
            expect += (lam / (lam + big_m * lq)).ln();
        }
        for n in &noise {
            let lam = intensity(&m, n.type_id, n.time, hist(n.time), &mut c).unwrap();
            expect += n.weight * (n.noise_intensity / (lam + big_m * n.noise_intensity)).ln();
        }
        let r = nce_objective(&m, &q, &s, &noise, big_m).unwrap();
        assert!((r.value - expect).abs() < 1e-10, "{} vs {expect}", r.value);
        assert_eq!(r.counter.model_evals, 8);
        assert_eq!(r.counter.noise_evals, 3);
    }

    #[test]
    fn nce_collision_errors() {
        let m = hawkes();
        let q = CoarseNoiseModel::uniform(
            2,
            AnyModel::Poisson(PoissonModel::from_rates(&[1.0]).unwrap()),
        )
        .unwrap();
        let noise = [NoiseSample {
            time: 1.3,
            type_id: 0,
            noise_intensity: 0.5,
            weight: 1.0,
        }];
        assert!(matches!(
            nce_objective(&m, &q, &stream(), &noise, 1.0),
            Err(Error::NoiseCollision { .. })
        ));
    }

    #[test]
    fn nce_decomposes_over_windows() {
        let m = hawkes();
        let q = CoarseNoiseModel::uniform(
            2,
            AnyModel::Poisson(PoissonModel::from_rates(&[1.5]).unwrap()),
        )
        .unwrap();
        let s = stream();
        let draw = draw_stream_noise(
            &q,
            &s,
            &NoiseSettings::new(3.0),
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        let whole = nce_objective(&m, &q, &s, &draw.samples, 3.0).unwrap();
        let cuts = [0.0, 1.0, 2.5, 4.4, 6.0];
        let mut sum = 0.0;
        for w in cuts.windows(2) {
            sum += nce_objective_window(&m, &q, &s, &draw.samples, 3.0, w[0], w[1])
                .unwrap()
                .value;
        }
        assert!((sum - whole.value).abs() < 1e-12);
    }

    #[test]
    fn mle_counter_identity() {
        let m = hawkes();
        let s = stream();
        for seed in 0..20 {
            let r = mle_objective(&m, &s, 1.7, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(r.counter.model_evals, (3 + 2 * r.noise_or_mc_count) as u64);
            assert!(r.noise_or_mc_count == 5 || r.noise_or_mc_count == 6);
        }
    }

    #[test]
    fn mle_empty_stream() {
        let m = hawkes();
        let r = mle_objective(
            &m,
            &EventStream::empty(3.0),
            1.0,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.counter.total(), 0);
        assert!(mle_objective(&m, &stream(), 0.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn cache_binding() {
        let q = CoarseNoiseModel::uniform(
            2,
            AnyModel::Poisson(PoissonModel::from_rates(&[1.5]).unwrap()),
        )
        .unwrap();
        let mut cache = NoiseCache::new();
        cache.bind(2.0, &q, 1);
        let settings = NoiseSettings::new(2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let first = cache
            .get_or_draw(0, &q, &stream(), &settings, &mut rng)
            .unwrap()
            .0
            .clone();
        let (again, hit) = cache
            .get_or_draw(0, &q, &stream(), &settings, &mut rng)
            .unwrap();
        assert!(hit);
        assert_eq!(&first, again);
        cache.bind(2.0, &q, 1);
        assert_eq!(cache.len(), 1);
        cache.bind(3.0, &q, 1);
        assert!(cache.is_empty());
    }
}
