//! Minibatch training with Adam for the NCE and Monte-Carlo MLE objectives.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::{error, info};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_streams::Dataset;
use crate::intensity_models::{CoarseNoiseModel, EvalCounter, IntensityModel};
use crate::objectives::{mle_objective, nce_objective, NoiseCache, ObjectiveReport};
use crate::rng::{stream_rng, Purpose};
use crate::scalar::Real;
use crate::thinning::{draw_stream_noise, NoiseDraw, NoiseSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Nce,
    Mle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Redraw {
    Always,
    Never,
}

macro_rules! str_enum {
    ($t:ty { $($v:ident => $s:literal),+ }) => {
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok(<$t>::$v),)+
                    _ => Err(Error::InvalidArgument(format!(
                        concat!("expected one of:", $(" ", $s),+, ", got {:?}"), s
                    ))),
                }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(<$t>::$v => $s,)+ })
            }
        }
    };
}

str_enum!(Objective { Nce => "nce", Mle => "mle" });
str_enum!(Redraw { Always => "always", Never => "never" });

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub step: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![F::zero(); n],
            v: vec![F::zero(); n],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in the ascent direction.
pub fn adam_step<F: Real>(
    params: &mut [F],
    grad: &[F],
    state: &mut AdamState<F>,
    cfg: &AdamConfig,
) {
    state.step += 1;
    let b1 = F::lit(cfg.beta1);
    let b2 = F::lit(cfg.beta2);
    let t = state.step as i32;
    let c1 = F::one() - b1.powi(t);
    let c2 = F::one() - b2.powi(t);
    let lr = F::lit(cfg.learning_rate);
    let eps = F::lit(cfg.epsilon);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (F::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (F::one() - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] += lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    /// Noise streams per real stream (NCE only).
    #[serde(rename = "M")]
    pub m: f64,
    /// Monte-Carlo points per event (MLE only).
    pub rho: f64,
    pub batch_size: usize,
    pub redraw: Redraw,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub fractional_threshold: f64,
    /// Evaluations without dev improvement before stopping.
    pub patience: usize,
    pub workers: usize,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Nce,
            m: 5.0,
            rho: 1.0,
            batch_size: 32,
            redraw: Redraw::Always,
            adam: AdamConfig::default(),
            max_epochs: 100,
            eval_every: 1,
            seed: 0,
            fractional_threshold: crate::thinning::DEFAULT_FRACTIONAL_THRESHOLD,
            patience: 10,
            workers: 1,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        match self.objective {
            Objective::Nce if !(self.m > 0.0 && self.m.is_finite()) => {
                bad(format!("M = {} must be positive", self.m))
            }
            Objective::Mle if !(self.rho > 0.0 && self.rho.is_finite()) => {
                bad(format!("rho = {} must be positive", self.rho))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    /// Cumulative model plus noise intensity evaluations.
    pub evals: u64,
    /// Cumulative training wall-clock time.
    pub seconds: f64,
    pub dev_ll_per_stream: f64,
    pub train_obj: f64,
}

/// Raw per-epoch accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Everything spent this epoch, sampling included.
    pub counter: EvalCounter,
    /// Spent drawing noise this epoch (zero on cache hits).
    pub sampling_counter: EvalCounter,
    /// Real events scored (I).
    pub events: u64,
    /// Thinning proposals behind the noise used (NCE) or Monte-Carlo points (MLE): J.
    pub proposals: u64,
    pub noise_samples: u64,
    pub cache_hits: usize,
    /// Hash of every noise sample used, in stream-index order.
    pub noise_digest: u64,
    pub train_obj: f64,
    pub seconds: f64,
    pub clamped: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    /// Parameters with the best dev log-likelihood seen.
    pub model: M,
    pub final_model: M,
    pub curve: Vec<CurvePoint>,
    pub epochs: Vec<EpochStats>,
    pub best_dev_ll_per_stream: f64,
    pub stopped_early: bool,
}

fn dev_ll_per_stream<F: Real, M: IntensityModel<F>>(model: &M, dev: &Dataset<F>) -> f64 {
    crate::evaluation::heldout_loglik(model, dev).per_stream
}

fn digest_draw<F: Real>(d: &NoiseDraw<F>) -> u64 {
    let mut h = DefaultHasher::new();
    for s in &d.samples {
        s.time.as_f64().to_bits().hash(&mut h);
        s.type_id.hash(&mut h);
        s.weight.as_f64().to_bits().hash(&mut h);
    }
    h.finish()
}

/// Runs `f` on a dedicated pool of `workers` threads, or inline for one worker.
pub fn run_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers <= 1 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Trains `model` on `train`, evaluating exact log-likelihood on `dev`.
/// `q` is required for NCE and ignored for MLE.
pub fn train<F: Real, M: IntensityModel<F>>(
    model: M,
    q: Option<&CoarseNoiseModel<F>>,
    train: &Dataset<F>,
    dev: &Dataset<F>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<M>> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::InvalidDataset(
            "train and dev sets must be nonempty".into(),
        ));
    }
    if train.num_types != model.num_types() {
        return Err(Error::InvalidDataset(format!(
            "model has {} types, data has {}",
            model.num_types(),
            train.num_types
        )));
    }
    let q = match (cfg.objective, q) {
        (Objective::Nce, None) => {
            return Err(Error::InvalidArgument(
                "NCE training needs a noise model".into(),
            ))
        }
        (Objective::Nce, Some(q)) if q.num_types() != model.num_types() => {
            return Err(Error::InvalidArgument(
                "noise model type count differs from model".into(),
            ))
        }
        (_, q) => q,
    };
    run_pool(cfg.workers, || train_loop(model, q, train, dev, cfg))?
}

fn train_loop<F: Real, M: IntensityModel<F>>(
    mut model: M,
    q: Option<&CoarseNoiseModel<F>>,
    train: &Dataset<F>,
    dev: &Dataset<F>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<M>> {
    let parallel = cfg.workers > 1;
    let m = F::lit(cfg.m);
    let rho = F::lit(cfg.rho);
    let settings = NoiseSettings {
        m,
        fractional_threshold: F::lit(cfg.fractional_threshold),
    };
    let mut cache = NoiseCache::new();
    if let Some(q) = q {
        cache.bind(m, q, cfg.seed);
    }
    let mut adam = AdamState::new(model.num_params());
    let mut params = model.raw_params().to_vec();

    let initial_dev = dev_ll_per_stream(&model, dev);
    let mut curve = vec![CurvePoint {
        epoch: 0,
        evals: 0,
        seconds: 0.0,
        dev_ll_per_stream: initial_dev,
        train_obj: f64::NAN,
    }];
    let mut best = (initial_dev, model.clone());
    let mut epochs = Vec::new();
    let mut cumulative_evals = 0u64;
    let mut seconds = 0.0;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream_rng(
            cfg.seed,
            0,
            Purpose::Shuffle {
                epoch: epoch as u64,
            },
        ));

        let mut stats = EpochStats {
            epoch,
            counter: EvalCounter::default(),
            sampling_counter: EvalCounter::default(),
            events: 0,
            proposals: 0,
            noise_samples: 0,
            cache_hits: 0,
            noise_digest: 0,
            train_obj: 0.0,
            seconds: 0.0,
            clamped: 0,
        };
        let mut stream_digests = vec![0u64; train.len()];

        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let reports: Vec<ObjectiveReport<F>> = match (cfg.objective, q) {
                (Objective::Nce, Some(q)) => {
                    let noise_rng = |i: usize| {
                        let e = match cfg.redraw {
                            Redraw::Always => epoch as u64,
                            Redraw::Never => 0,
                        };
                        stream_rng(cfg.seed, i, Purpose::Noise { epoch: e })
                    };
                    let draw = |i: usize| {
                        draw_stream_noise(q, &train.streams[i], &settings, &mut noise_rng(i))
                    };
                    let fresh: Vec<(usize, NoiseDraw<F>)> = {
                        let need: Vec<usize> = match cfg.redraw {
                            Redraw::Always => batch.to_vec(),
                            Redraw::Never => batch
                                .iter()
                                .copied()
                                .filter(|&i| cache.get(i).is_none())
                                .collect(),
                        };
                        let drawn: Result<Vec<_>> = if parallel {
                            need.par_iter().map(|&i| draw(i).map(|d| (i, d))).collect()
                        } else {
                            need.iter().map(|&i| draw(i).map(|d| (i, d))).collect()
                        };
                        drawn?
                    };
                    for (_, d) in &fresh {
                        stats.sampling_counter += d.counter;
                    }
                    let fresh_count = fresh.len();
                    stats.cache_hits += batch.len() - fresh_count;
                    let local: Vec<(usize, NoiseDraw<F>)>;
                    let draws: Vec<(usize, &NoiseDraw<F>)> = match cfg.redraw {
                        Redraw::Always => {
                            local = fresh;
                            local.iter().map(|(i, d)| (*i, d)).collect()
                        }
                        Redraw::Never => {
                            for (i, d) in fresh {
                                cache.insert(i, d);
                            }
                            batch
                                .iter()
                                .map(|&i| (i, cache.get(i).expect("just filled")))
                                .collect()
                        }
                    };
                    for &(i, d) in &draws {
                        stream_digests[i] = digest_draw(d);
                        stats.proposals += d.proposals;
                        stats.noise_samples += d.samples.len() as u64;
                    }
                    let eval = |&(i, d): &(usize, &NoiseDraw<F>)| {
                        nce_objective(&model, q, &train.streams[i], &d.samples, m)
                    };
                    let r: Result<Vec<_>> = if parallel {
                        draws.par_iter().map(eval).collect()
                    } else {
                        draws.iter().map(eval).collect()
                    };
                    r?
                }
                _ => {
                    let eval = |&i: &usize| {
                        let mut rng = stream_rng(
                            cfg.seed,
                            i,
                            Purpose::MonteCarlo {
                                epoch: epoch as u64,
                            },
                        );
                        mle_objective(&model, &train.streams[i], rho, &mut rng)
                    };
                    let r: Result<Vec<_>> = if parallel {
                        batch.par_iter().map(eval).collect()
                    } else {
                        batch.iter().map(eval).collect()
                    };
                    let r = r?;
                    for x in &r {
                        stats.proposals += x.noise_or_mc_count as u64;
                    }
                    r
                }
            };

            let mut total = ObjectiveReport::zero(model.num_params());
            for r in &reports {
                total.accumulate(r);
            }
            if !total.value.is_finite() || total.gradient.iter().any(|g| !g.is_finite()) {
                let streams = batch.to_vec();
                error!(
                    "objective diverged at epoch {epoch}, minibatch {b}: value {}, streams {streams:?}",
                    total.value
                );
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    streams,
                });
            }
            stats.counter += total.counter;
            stats.events += total.event_count as u64;
            stats.clamped += total.clamped;
            stats.train_obj += total.value.as_f64();
            adam_step(&mut params, &total.gradient, &mut adam, &cfg.adam);
            model.set_raw_params(&params);
        }
        stats.counter += stats.sampling_counter;
        stats.noise_digest = {
            let mut h = DefaultHasher::new();
            stream_digests.hash(&mut h);
            h.finish()
        };
        let spent = started.elapsed().as_secs_f64();
        seconds += spent;
        stats.seconds = spent;
        cumulative_evals += stats.counter.total();
        let train_obj = stats.train_obj;
        epochs.push(stats);

        if epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs {
            let dev_ll = dev_ll_per_stream(&model, dev);
            curve.push(CurvePoint {
                epoch,
                evals: cumulative_evals,
                seconds,
                dev_ll_per_stream: dev_ll,
                train_obj,
            });
            info!("epoch {epoch}: dev ll/stream {dev_ll:.6}, train objective {train_obj:.6}");
            if let Some(path) = &cfg.checkpoint_path {
                model.to_checkpoint().save(path)?;
            }
            if dev_ll > best.0 {
                best = (dev_ll, model.clone());
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    Ok(TrainOutcome {
        model: best.1,
        final_model: model,
        curve,
        epochs,
        best_dev_ll_per_stream: best.0,
        stopped_early,
    })
}

pub const CURVE_HEADER: &str = "epoch,evals,seconds,dev_ll_per_stream,train_obj";

pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], mut w: W) -> Result<()> {
    writeln!(w, "{CURVE_HEADER}")?;
    for p in curve {
        writeln!(
            w,
            "{},{},{},{},{}",
            p.epoch, p.evals, p.seconds, p.dev_ll_per_stream, p.train_obj
        )?;
    }
    Ok(())
}

pub fn save_curve_csv(curve: &[CurvePoint], path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_curve_csv(curve, std::io::BufWriter::new(file))
}
