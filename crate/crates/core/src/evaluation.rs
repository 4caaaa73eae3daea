//! Held-out scoring, next-event prediction, cost accounting checks and the
//! replication experiments behind the estimator-efficiency and recovery
//! checks.

use std::io::Write;
use std::path::Path;

use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::event_streams::{Dataset, Event};
use crate::intensity_models::{
    fit_noise_model, replay, CoarseNoiseModel, IntensityModel, NoiseFitConfig,
};
use crate::objectives::{
    dataset_loglik_and_gradient, exact_loglik, nce_objective, ObjectiveReport,
};
use crate::optim::{maximize, MaximizeOptions};
use crate::rng::{derive_seed, exp_draw, open_unit, stream_rng, Purpose};
use crate::scalar::Real;
use crate::thinning::{draw_stream_noise, simulate_dataset, NoiseDraw, NoiseSettings};
use crate::trainer::{run_pool, CurvePoint, EpochStats, Objective};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeldoutLoglik {
    pub total: f64,
    pub per_stream: f64,
    pub per_event: f64,
    pub streams: usize,
    pub events: usize,
}

pub fn heldout_loglik<F: Real, M: IntensityModel<F>>(
    model: &M,
    data: &Dataset<F>,
) -> HeldoutLoglik {
    let total: f64 = data
        .streams
        .iter()
        .map(|s| exact_loglik(model, s).as_f64())
        .sum();
    let streams = data.len();
    let events = data.num_events();
    HeldoutLoglik {
        total,
        per_stream: total / streams.max(1) as f64,
        per_event: total / events.max(1) as f64,
        streams,
        events,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub time: f64,
    pub type_id: usize,
}

/// Predicts the next event after `history`: the time is the mean of the
/// first simulated event time over `n_draws` continuations (each capped at
/// `horizon_cap`), the type is the most intense type at that time.
pub fn predict_next<F: Real, M: IntensityModel<F>, R: RngCore + ?Sized>(
    model: &M,
    history: &[Event<F>],
    horizon_cap: F,
    n_draws: usize,
    rng: &mut R,
) -> Result<Prediction> {
    if n_draws == 0 {
        return Err(Error::InvalidArgument("n_draws must be at least 1".into()));
    }
    let state = replay(model, history)?;
    let start = model.state_time(&state);
    if !(horizon_cap > start) {
        return Err(Error::InvalidArgument(format!(
            "horizon cap {horizon_cap} must exceed the last history time {start}"
        )));
    }
    let mut sum = 0.0;
    for _ in 0..n_draws {
        let mut s = state.clone();
        let mut t = start;
        let first = loop {
            let bound = model.total_rate(&s);
            if !(bound > F::zero()) {
                break horizon_cap;
            }
            t += F::lit(exp_draw(rng, bound.as_f64()));
            if t >= horizon_cap {
                break horizon_cap;
            }
            model.advance(&mut s, t);
            if F::lit(open_unit(rng)) * bound < model.total_rate(&s) {
                break t;
            }
        };
        sum += first.as_f64();
    }
    let time = sum / n_draws as f64;
    let mut s = state;
    model.advance(&mut s, F::lit(time).max(start));
    let type_id = (0..model.num_types())
        .map(|k| (k, model.rate(&s, k)))
        .fold(
            (0, F::neg_infinity()),
            |best, x| if x.1 > best.1 { x } else { best },
        )
        .0;
    Ok(Prediction { time, type_id })
}

/// Maximizes the exact log-likelihood over `data` from `init`.
pub fn fit_exact_mle<F: Real, M: IntensityModel<F>>(
    init: &M,
    data: &Dataset<F>,
    opts: MaximizeOptions,
) -> (M, bool) {
    let mut work = init.clone();
    let res = maximize(
        |raw: &[F]| {
            work.set_raw_params(raw);
            dataset_loglik_and_gradient(&work, data)
        },
        init.raw_params().to_vec(),
        opts,
    );
    let mut out = init.clone();
    out.set_raw_params(&res.x);
    (out, res.converged)
}

/// Draws one noise set per stream, stream `i` from `stream_rng(seed, i, Noise{epoch})`.
pub fn draw_dataset_noise<F: Real>(
    q: &CoarseNoiseModel<F>,
    data: &Dataset<F>,
    settings: &NoiseSettings<F>,
    seed: u64,
    epoch: u64,
) -> Result<Vec<NoiseDraw<F>>> {
    data.streams
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            draw_stream_noise(
                q,
                s,
                settings,
                &mut stream_rng(seed, i, Purpose::Noise { epoch }),
            )
        })
        .collect()
}

/// Summed NCE objective over a dataset with fixed noise, in stream order.
pub fn dataset_nce<F: Real, M: IntensityModel<F>>(
    model: &M,
    q: &CoarseNoiseModel<F>,
    data: &Dataset<F>,
    noise: &[NoiseDraw<F>],
    m: F,
) -> Result<ObjectiveReport<F>> {
    let parts: Vec<ObjectiveReport<F>> = data
        .streams
        .par_iter()
        .zip(noise.par_iter())
        .map(|(s, d)| nce_objective(model, q, s, &d.samples, m))
        .collect::<Result<_>>()?;
    let mut total = ObjectiveReport::zero(model.num_params());
    for p in &parts {
        total.accumulate(p);
    }
    Ok(total)
}

/// Maximizes the NCE objective over `data` with the noise held fixed.
pub fn fit_nce_fixed_noise<F: Real, M: IntensityModel<F>>(
    init: &M,
    q: &CoarseNoiseModel<F>,
    data: &Dataset<F>,
    noise: &[NoiseDraw<F>],
    m: F,
    opts: MaximizeOptions,
) -> Result<(M, bool)> {
    if noise.len() != data.len() {
        return Err(Error::InvalidArgument(
            "one noise draw per stream is required".into(),
        ));
    }
    let mut work = init.clone();
    let mut failure = None;
    let res = maximize(
        |raw: &[F]| {
            work.set_raw_params(raw);
            match dataset_nce(&work, q, data, noise, m) {
                Ok(r) => (r.value, r.gradient),
                Err(e) => {
                    failure.get_or_insert(e);
                    (F::nan(), vec![F::zero(); raw.len()])
                }
            }
        },
        init.raw_params().to_vec(),
        opts,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let mut out = init.clone();
    out.set_raw_params(&res.x);
    Ok((out, res.converged))
}

/// `‖a − b‖₂ / ‖b‖₂`.
pub fn relative_l2_error(estimate: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let den: f64 = truth.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

fn linked_f64<F: Real, M: IntensityModel<F>>(m: &M) -> Vec<f64> {
    m.linked_params().iter().map(|v| v.as_f64()).collect()
}

fn sample_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceConfig {
    pub m_values: Vec<f64>,
    pub replications: usize,
    pub num_streams: usize,
    pub horizon: f64,
    pub seed: u64,
    pub fractional_threshold: f64,
    pub workers: usize,
}

impl Default for VarianceConfig {
    fn default() -> Self {
        Self {
            m_values: vec![1.0, 10.0],
            replications: 200,
            num_streams: 200,
            horizon: 50.0,
            seed: 0,
            fractional_threshold: crate::thinning::DEFAULT_FRACTIONAL_THRESHOLD,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceRow {
    pub estimator: String,
    #[serde(rename = "M")]
    pub m: Option<f64>,
    pub param: usize,
    pub mean: f64,
    pub variance: f64,
    pub ratio_to_mle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceReport {
    pub config: VarianceConfig,
    pub truth: Vec<f64>,
    pub rows: Vec<VarianceRow>,
    /// Fits that stopped without meeting the convergence test.
    pub unconverged: usize,
}

impl VarianceReport {
    pub fn ratio(&self, m: f64, param: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.m == Some(m) && r.param == param)
            .map(|r| r.ratio_to_mle)
    }

    pub fn variance(&self, m: Option<f64>, param: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.m == m && r.param == param)
            .map(|r| r.variance)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "estimator,M,param,mean,variance,ratio_to_mle")?;
        for r in &self.rows {
            let m = r.m.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.estimator, m, r.param, r.mean, r.variance, r.ratio_to_mle
            )?;
        }
        Ok(())
    }
}

/// Replicated fits of MLE and NCE (one per `M`) on fresh synthetic datasets.
/// Each replication shares one dataset across all estimators; every fit is
/// the exact argmax of its objective, started from the truth.
pub fn variance_experiment<F: Real, M: IntensityModel<F>>(
    truth: &M,
    q: &CoarseNoiseModel<F>,
    cfg: &VarianceConfig,
) -> Result<VarianceReport> {
    if cfg.replications < 2 {
        return Err(Error::InvalidArgument(
            "at least two replications are needed".into(),
        ));
    }
    let opts = MaximizeOptions {
        rel_tol: 1e-12,
        ..Default::default()
    };
    let one = |r: usize| -> Result<(Vec<Vec<f64>>, usize)> {
        let seed = derive_seed(cfg.seed, Purpose::Replication { index: r as u64 });
        let data = simulate_dataset(truth, cfg.num_streams, F::lit(cfg.horizon), seed)?;
        let mut fits = Vec::with_capacity(cfg.m_values.len() + 1);
        let mut unconverged = 0;
        let (mle, ok) = fit_exact_mle(truth, &data, opts);
        unconverged += usize::from(!ok);
        fits.push(linked_f64(&mle));
        for (mi, &m) in cfg.m_values.iter().enumerate() {
            let settings = NoiseSettings {
                m: F::lit(m),
                fractional_threshold: F::lit(cfg.fractional_threshold),
            };
            let noise = draw_dataset_noise(q, &data, &settings, seed, mi as u64)?;
            let (fit, ok) = fit_nce_fixed_noise(truth, q, &data, &noise, F::lit(m), opts)?;
            unconverged += usize::from(!ok);
            fits.push(linked_f64(&fit));
        }
        Ok((fits, unconverged))
    };
    let results: Vec<(Vec<Vec<f64>>, usize)> = run_pool(cfg.workers, || {
        (0..cfg.replications)
            .into_par_iter()
            .map(one)
            .collect::<Result<Vec<_>>>()
    })??;

    let p = truth.num_params();
    let mut rows = Vec::new();
    let mut mle_var = vec![0.0; p];
    for e in 0..=cfg.m_values.len() {
        for j in 0..p {
            let xs: Vec<f64> = results.iter().map(|r| r.0[e][j]).collect();
            let (mean, variance) = sample_variance(&xs);
            if e == 0 {
                mle_var[j] = variance;
            }
            rows.push(VarianceRow {
                estimator: if e == 0 { "mle".into() } else { "nce".into() },
                m: if e == 0 {
                    None
                } else {
                    Some(cfg.m_values[e - 1])
                },
                param: j,
                mean,
                variance,
                ratio_to_mle: variance / mle_var[j],
            });
        }
    }
    Ok(VarianceReport {
        config: cfg.clone(),
        truth: linked_f64(truth),
        rows,
        unconverged: results.iter().map(|r| r.1).sum(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryConfig {
    pub small_streams: usize,
    pub large_streams: usize,
    pub horizon: f64,
    pub repetitions: usize,
    #[serde(rename = "M")]
    pub m: f64,
    pub seed: u64,
    pub fractional_threshold: f64,
    pub workers: usize,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            small_streams: 50,
            large_streams: 500,
            horizon: 50.0,
            repetitions: 20,
            m: 5.0,
            seed: 0,
            fractional_threshold: crate::thinning::DEFAULT_FRACTIONAL_THRESHOLD,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryRow {
    pub repetition: usize,
    pub small_error: f64,
    pub large_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub config: RecoveryConfig,
    pub truth: Vec<f64>,
    pub rows: Vec<RecoveryRow>,
    pub large_wins: usize,
}

impl RecoveryReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "repetition,small_error,large_error")?;
        for r in &self.rows {
            writeln!(w, "{},{},{}", r.repetition, r.small_error, r.large_error)?;
        }
        Ok(())
    }
}

/// For each repetition, fits NCE (Poisson noise trained by MLE on the same
/// data) on independent datasets of two sizes and compares the relative L2
/// error of the linked parameters.
pub fn recovery_experiment<F: Real, M: IntensityModel<F>>(
    truth: &M,
    cfg: &RecoveryConfig,
) -> Result<RecoveryReport> {
    let opts = MaximizeOptions::default();
    let target = linked_f64(truth);
    let settings = NoiseSettings {
        m: F::lit(cfg.m),
        fractional_threshold: F::lit(cfg.fractional_threshold),
    };
    let fit_error = |n: usize, seed: u64| -> Result<f64> {
        let data = simulate_dataset(truth, n, F::lit(cfg.horizon), seed)?;
        let q = fit_noise_model(&data, &NoiseFitConfig::default())?;
        let noise = draw_dataset_noise(&q, &data, &settings, seed, 0)?;
        let (fit, _) = fit_nce_fixed_noise(truth, &q, &data, &noise, settings.m, opts)?;
        Ok(relative_l2_error(&linked_f64(&fit), &target))
    };
    let rows: Vec<RecoveryRow> = run_pool(cfg.workers, || {
        (0..cfg.repetitions)
            .into_par_iter()
            .map(|r| {
                let base = derive_seed(cfg.seed, Purpose::Replication { index: r as u64 });
                Ok(RecoveryRow {
                    repetition: r,
                    small_error: fit_error(cfg.small_streams, base)?,
                    large_error: fit_error(cfg.large_streams, base ^ 0x5bd1_e995)?,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let large_wins = rows
        .iter()
        .filter(|r| r.large_error < r.small_error)
        .count();
    Ok(RecoveryReport {
        config: cfg.clone(),
        truth: target,
        rows,
        large_wins,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostConfig {
    pub objective: Objective,
    #[serde(rename = "M")]
    pub m: f64,
    pub rho: f64,
    #[serde(rename = "K")]
    pub num_types: usize,
    #[serde(rename = "C")]
    pub num_coarse: usize,
    pub target_dev_ll: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochCost {
    pub epoch: usize,
    pub evals: u64,
    pub events: u64,
    pub proposals: u64,
    /// `I + J·K` for MLE, `(C+1)·J + 2·I` for NCE.
    pub bound: u64,
    pub within_bound: bool,
    pub proposals_per_event: f64,
    pub evals_per_event: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub config: CostConfig,
    /// First curve point at or above the target dev log-likelihood.
    pub evals_to_target: Option<CurvePoint>,
    pub epochs: Vec<EpochCost>,
    /// MLE: every epoch equals its identity; NCE: every epoch is within its bound.
    pub all_within_bound: bool,
    pub budget_line: String,
}

pub fn cost_report(
    curve: &[CurvePoint],
    epochs: &[EpochStats],
    cfg: &CostConfig,
) -> Result<CostReport> {
    if curve.is_empty() {
        return Err(Error::InvalidArgument(
            "cost report needs a nonempty curve".into(),
        ));
    }
    let k = cfg.num_types as u64;
    let c = cfg.num_coarse as u64;
    let rows: Vec<EpochCost> = epochs
        .iter()
        .map(|e| {
            let evals = e.counter.total();
            let (bound, ok) = match cfg.objective {
                Objective::Mle => {
                    let b = e.events + e.proposals * k;
                    (b, evals == b)
                }
                Objective::Nce => {
                    let b = (c + 1) * e.proposals + 2 * e.events;
                    (b, evals <= b)
                }
            };
            let per = |x: u64| x as f64 / e.events.max(1) as f64;
            EpochCost {
                epoch: e.epoch,
                evals,
                events: e.events,
                proposals: e.proposals,
                bound,
                within_bound: ok,
                proposals_per_event: per(e.proposals),
                evals_per_event: per(evals),
            }
        })
        .collect();
    let evals_to_target = cfg
        .target_dev_ll
        .and_then(|t| curve.iter().find(|p| p.dev_ll_per_stream >= t).copied());
    let lhs = (cfg.m + 1.0) * (cfg.num_coarse as f64 + 1.0);
    let rhs = cfg.rho * cfg.num_types as f64;
    let budget_line = format!(
        "(M+1)(C+1) = {lhs} {} rho*K = {rhs}: NCE is {} per event than MLE",
        if lhs <= rhs { "<=" } else { ">" },
        if lhs <= rhs {
            "no more expensive"
        } else {
            "more expensive"
        }
    );
    Ok(CostReport {
        config: cfg.clone(),
        evals_to_target,
        all_within_bound: rows.iter().all(|r| r.within_bound),
        epochs: rows,
        budget_line,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n1 - j as f64 / n2).abs());
    }
    let en = (n1 * n2 / (n1 + n2)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    KsResult {
        statistic: d,
        p_value: kolmogorov_q(lambda),
    }
}

fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let a2 = -2.0 * lambda * lambda;
    let mut sum = 0.0;
    let mut sign = 2.0;
    let mut prev = 0.0f64;
    for j in 1..=100 {
        let jf = j as f64;
        let term = sign * (a2 * jf * jf).exp();
        sum += term;
        if term.abs() <= 1e-10 * prev.abs() || term.abs() <= 1e-16 * sum.abs() {
            return sum.clamp(0.0, 1.0);
        }
        sign = -sign;
        prev = term;
    }
    1.0
}

/// Writes `value` as pretty JSON followed by a newline.
pub fn write_json_report<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_streams::EventStream;
    use crate::intensity_models::{AnyModel, DecayLayout, HawkesExpModel, PoissonModel};
    use crate::trainer::CurvePoint;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn heldout_is_order_invariant_and_matches_closed_form() {
        let m: PoissonModel<f64> = PoissonModel::from_rates(&[2.0]).unwrap();
        let a = EventStream::new(3.0, vec![Event::new(1.0, 0)]);
        let b = EventStream::new(5.0, vec![Event::new(0.2, 0), Event::new(4.0, 0)]);
        let d1 = Dataset::new(1, vec![a.clone(), b.clone()], None).unwrap();
        let d2 = Dataset::new(1, vec![b, a], None).unwrap();
        let h1 = heldout_loglik(&m, &d1);
        let h2 = heldout_loglik(&m, &d2);
        assert!((h1.total - h2.total).abs() < 1e-12);
        assert!((h1.total - (3.0 * 2f64.ln() - 16.0)).abs() < 1e-12);
        assert!((h1.per_event - h1.total / 3.0).abs() < 1e-12);
    }

    #[test]
    fn poisson_prediction_mean() {
        let r = 2.0;
        let m: PoissonModel<f64> = PoissonModel::from_rates(&[r]).unwrap();
        let hist = [Event::new(1.0, 0), Event::new(3.0, 0)];
        let n = 20_000;
        let p = predict_next(&m, &hist, 1e9, n, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let se = (1.0 / r) / (n as f64).sqrt();
        assert!((p.time - (3.0 + 1.0 / r)).abs() < 3.0 * se);
        assert_eq!(p.type_id, 0);
        let again = predict_next(&m, &hist, 1e9, n, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn prediction_picks_most_intense_type() {
        let m = HawkesExpModel::from_linked(
            2,
            &[0.1, 0.2],
            &[3.0, 0.01, 0.01, 0.01],
            &[1.0, 1.0, 1.0, 1.0],
            DecayLayout::Full,
        )
        .unwrap();
        let p = predict_next(
            &m,
            &[Event::new(1.0f64, 0)],
            1e6,
            500,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert!(p.time > 1.0);
        assert!(predict_next(&m, &[], 1.0, 0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn ks_identical_and_shifted() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a: Vec<f64> = (0..2000).map(|_| open_unit(&mut rng)).collect();
        let b: Vec<f64> = (0..2000).map(|_| open_unit(&mut rng)).collect();
        assert!(ks_two_sample(&a, &b).p_value > 0.001);
        let c: Vec<f64> = b.iter().map(|x| x + 0.2).collect();
        assert!(ks_two_sample(&a, &c).p_value < 1e-6);
        assert_eq!(ks_two_sample(&a, &a).statistic, 0.0);
    }

    #[test]
    fn cost_report_lines() {
        let curve = [
            CurvePoint {
                epoch: 0,
                evals: 0,
                seconds: 0.0,
                dev_ll_per_stream: -10.0,
                train_obj: f64::NAN,
            },
            CurvePoint {
                epoch: 1,
                evals: 50,
                seconds: 0.1,
                dev_ll_per_stream: -5.0,
                train_obj: -3.0,
            },
        ];
        let cfg = CostConfig {
            objective: Objective::Nce,
            m: 5.0,
            rho: 1.0,
            num_types: 2,
            num_coarse: 1,
            target_dev_ll: Some(-6.0),
        };
        let r = cost_report(&curve, &[], &cfg).unwrap();
        assert_eq!(r.evals_to_target.unwrap().epoch, 1);
        assert!(r.budget_line.contains("12 > rho*K = 2"));
        let unreached = cost_report(
            &curve,
            &[],
            &CostConfig {
                target_dev_ll: Some(0.0),
                ..cfg
            },
        )
        .unwrap();
        assert!(unreached.evals_to_target.is_none());
        assert!(cost_report(&[], &[], &unreached.config).is_err());
    }

    #[test]
    fn small_variance_experiment_runs() {
        let truth = AnyModel::Poisson(PoissonModel::from_rates(&[1.0f64]).unwrap());
        let q = CoarseNoiseModel::identity(truth.clone()).unwrap();
        let cfg = VarianceConfig {
            replications: 6,
            num_streams: 10,
            horizon: 10.0,
            ..Default::default()
        };
        let a = variance_experiment(&truth, &q, &cfg).unwrap();
        let b = variance_experiment(&truth, &q, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 3);
        assert!(a.ratio(1.0, 0).unwrap() > 0.0);
    }
}
