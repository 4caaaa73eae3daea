use serde::{Deserialize, Serialize};

use super::{
    check_type, AnyModel, AnyState, DecayLayout, EvalCounter, HawkesExpModel, IntensityModel,
    NoiseCheckpoint, PoissonModel, CHECKPOINT_VERSION,
};
use crate::error::{Error, Result};
use crate::event_streams::{Dataset, Event, Partition};
use crate::objectives::dataset_loglik_and_gradient;
use crate::optim::{maximize, MaximizeOptions};
use crate::scalar::Real;

/// Coarse-to-fine noise process: a point process over `C` coarse types whose
/// events are refined to fine types by `q(k | c)` under a hard partition, so
/// `λ^q_k(t) = q(k | c(k)) · λ^q_{c(k)}(t)`.
///
/// The coarse process reads the observed (fine) history through the
/// partition map.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseNoiseModel<F> {
    process: AnyModel<F>,
    partition: Partition,
    refine: Vec<F>,
    members: Vec<Vec<usize>>,
}

impl<F: Real> CoarseNoiseModel<F> {
    pub fn new(process: AnyModel<F>, partition: Partition, refine: Vec<F>) -> Result<Self> {
        let k = partition.coarse_of.len();
        if process.num_types() != partition.num_coarse {
            return Err(Error::InvalidArgument(format!(
                "coarse process has {} types but the partition has C = {}",
                process.num_types(),
                partition.num_coarse
            )));
        }
        if refine.len() != k {
            return Err(Error::InvalidArgument(format!(
                "refine_probs has {} entries, expected K = {k}",
                refine.len()
            )));
        }
        let members = partition.members();
        let tol = F::lit(1e-12).max(F::epsilon() * F::from_usize_lossy(16 * k.max(1)));
        for (c, ks) in members.iter().enumerate() {
            if ks.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "coarse type {c} has no members"
                )));
            }
            if ks.iter().any(|&k| !(refine[k] > F::zero())) {
                return Err(Error::InvalidArgument(format!(
                    "refinement probabilities of cluster {c} must be positive"
                )));
            }
            let sum: F = ks.iter().map(|&k| refine[k]).sum();
            if (sum - F::one()).abs() > tol {
                return Err(Error::InvalidArgument(format!(
                    "refinement probabilities of cluster {c} sum to {sum}"
                )));
            }
        }
        Ok(Self {
            process,
            partition,
            refine,
            members,
        })
    }

    /// One cluster with uniform refinement over all `K` types.
    pub fn uniform(num_types: usize, process: AnyModel<F>) -> Result<Self> {
        let p = F::one() / F::from_usize_lossy(num_types);
        Self::new(process, Partition::single(num_types), vec![p; num_types])
    }

    /// Noise with exactly the law of `model`: one cluster per type.
    pub fn identity(model: AnyModel<F>) -> Result<Self> {
        let k = model.num_types();
        let partition = Partition::new(k, (0..k).collect(), k)?;
        Self::new(model, partition, vec![F::one(); k])
    }

    pub fn num_types(&self) -> usize {
        self.refine.len()
    }

    pub fn num_coarse(&self) -> usize {
        self.partition.num_coarse
    }

    pub fn process(&self) -> &AnyModel<F> {
        &self.process
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn refine_prob(&self, k: usize) -> F {
        self.refine[k]
    }

    pub fn start(&self) -> AnyState<F> {
        self.process.start()
    }

    pub fn state_time(&self, s: &AnyState<F>) -> F {
        self.process.state_time(s)
    }

    pub fn advance(&self, s: &mut AnyState<F>, t: F) {
        self.process.advance(s, t)
    }

    /// Records an observed fine-type event.
    pub fn observe(&self, s: &mut AnyState<F>, k: usize) {
        self.process.observe(s, self.partition.coarse_of[k])
    }

    pub fn replay(&self, history: &[Event<F>]) -> Result<AnyState<F>> {
        let mut s = self.start();
        for e in history {
            check_type(e.type_id, self.num_types())?;
            if e.time < self.state_time(&s) {
                return Err(Error::HistoryOrder {
                    time: e.time.as_f64(),
                    last: self.state_time(&s).as_f64(),
                });
            }
            self.advance(&mut s, e.time);
            self.observe(&mut s, e.type_id);
        }
        Ok(s)
    }

    /// Fills `out` with the `C` coarse intensities; counts `C` noise evaluations.
    pub fn coarse_rates(&self, s: &AnyState<F>, out: &mut [F], counter: &mut EvalCounter) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.process.rate(s, c);
        }
        counter.noise_evals += out.len() as u64;
    }

    /// Sum of coarse intensities, uncounted.
    pub fn total_rate(&self, s: &AnyState<F>) -> F {
        self.process.total_rate(s)
    }

    /// λ^q_k at the state's time; counts one noise evaluation.
    pub fn noise_rate(&self, s: &AnyState<F>, k: usize, counter: &mut EvalCounter) -> F {
        counter.noise_evals += 1;
        self.refine[k] * self.process.rate(s, self.partition.coarse_of[k])
    }

    /// Maps `u ∈ [0, 1)` to a member of cluster `c` by inverse CDF of `q(· | c)`.
    pub fn refine_type(&self, c: usize, u: F) -> usize {
        let ks = &self.members[c];
        let mut acc = F::zero();
        for &k in ks {
            acc += self.refine[k];
            if u < acc {
                return k;
            }
        }
        *ks.last().expect("clusters are nonempty")
    }

    pub fn to_checkpoint(&self) -> NoiseCheckpoint {
        NoiseCheckpoint {
            format_version: CHECKPOINT_VERSION,
            num_types: self.num_types(),
            num_coarse: self.num_coarse(),
            partition: self.partition.coarse_of.clone(),
            refine_probs: self.refine.iter().map(|v| v.as_f64()).collect(),
            coarse_process: self.process.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(ck: &NoiseCheckpoint) -> Result<Self> {
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {}",
                ck.format_version
            )));
        }
        let partition = Partition::new(ck.num_coarse, ck.partition.clone(), ck.num_types)?;
        let process = AnyModel::from_checkpoint(&ck.coarse_process)?;
        let refine = ck.refine_probs.iter().map(|&v| F::lit(v)).collect();
        Self::new(process, partition, refine).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

/// λ^q_k(t | history) under a noise model; counts one noise evaluation.
pub fn noise_intensity<F: Real>(
    q: &CoarseNoiseModel<F>,
    k: usize,
    t: F,
    history: &[Event<F>],
    counter: &mut EvalCounter,
) -> Result<F> {
    check_type(k, q.num_types())?;
    if let Some(last) = history.last() {
        if t <= last.time {
            return Err(Error::HistoryOrder {
                time: t.as_f64(),
                last: last.time.as_f64(),
            });
        }
    }
    let mut s = q.replay(history)?;
    q.advance(&mut s, t);
    Ok(q.noise_rate(&s, k, counter))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    #[default]
    Poisson,
    Hawkes,
}

#[derive(Debug, Clone)]
pub struct NoiseFitConfig {
    pub family: NoiseFamily,
    /// Takes precedence over the dataset's own partition.
    pub partition: Option<Partition>,
    /// Used only when no partition is available: contiguous blocks of types.
    pub num_coarse: usize,
    pub decay: DecayLayout,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for NoiseFitConfig {
    fn default() -> Self {
        Self {
            family: NoiseFamily::Poisson,
            partition: None,
            num_coarse: 1,
            decay: DecayLayout::Full,
            max_iters: 2000,
            rel_tol: 1e-7,
        }
    }
}

/// Fits `q` by maximum likelihood on the coarsened data. Poisson rates are
/// the closed-form `n_c / ΣT` (a cluster with no events gets half an event's
/// worth of rate); a coarse Hawkes process is fitted by L-BFGS on the exact
/// log-likelihood. `q(k | c)` uses add-one smoothed within-cluster counts.
pub fn fit_noise_model<F: Real>(
    data: &Dataset<F>,
    config: &NoiseFitConfig,
) -> Result<CoarseNoiseModel<F>> {
    if data.is_empty() {
        return Err(Error::InvalidDataset(
            "cannot fit noise on an empty dataset".into(),
        ));
    }
    let k = data.num_types;
    let partition = match (&config.partition, &data.partition) {
        (Some(p), _) => Partition::new(p.num_coarse, p.coarse_of.clone(), k)?,
        (None, Some(p)) => p.clone(),
        (None, None) if config.num_coarse <= 1 => Partition::single(k),
        (None, None) => Partition::blocks(k, config.num_coarse)?,
    };
    let c = partition.num_coarse;
    let type_counts = data.type_counts();
    let mut coarse_counts = vec![0usize; c];
    for (t, &n) in type_counts.iter().enumerate() {
        coarse_counts[partition.coarse_of[t]] += n;
    }
    let total_time = data.total_time();
    if !(total_time > F::zero()) {
        return Err(Error::InvalidDataset(
            "total observation time is zero".into(),
        ));
    }
    let rates: Vec<F> = coarse_counts
        .iter()
        .map(|&n| F::from_usize_lossy(n).max(F::lit(0.5)) / total_time)
        .collect();

    let process = match config.family {
        NoiseFamily::Poisson => AnyModel::Poisson(PoissonModel::from_rates(&rates)?),
        NoiseFamily::Hawkes => {
            let coarse = data.coarsened(&partition);
            let alpha = F::lit(0.2);
            let beta_count = match config.decay {
                DecayLayout::Full => c * c,
                DecayLayout::Shared => c,
            };
            let mu: Vec<F> = rates.iter().map(|&r| r * F::lit(0.5)).collect();
            let init = HawkesExpModel::from_linked(
                c,
                &mu,
                &vec![alpha / F::from_usize_lossy(c); c * c],
                &vec![F::one(); beta_count],
                config.decay,
            )?;
            let mut work = init.clone();
            let opts = MaximizeOptions {
                max_iters: config.max_iters,
                rel_tol: config.rel_tol,
                ..Default::default()
            };
            let res = maximize(
                |raw: &[F]| {
                    work.set_raw_params(raw);
                    dataset_loglik_and_gradient(&work, &coarse)
                },
                init.raw_params().to_vec(),
                opts,
            );
            if !res.value.is_finite() {
                return Err(Error::InvalidDataset("coarse Hawkes fit diverged".into()));
            }
            let mut fitted = init;
            fitted.set_raw_params(&res.x);
            AnyModel::Hawkes(fitted)
        }
    };

    let members = partition.members();
    let mut refine = vec![F::zero(); k];
    for (cl, ks) in members.iter().enumerate() {
        let denom = F::from_usize_lossy(coarse_counts[cl] + ks.len());
        for &t in ks {
            refine[t] = F::from_usize_lossy(type_counts[t] + 1) / denom;
        }
    }
    CoarseNoiseModel::new(process, partition, refine)
}
