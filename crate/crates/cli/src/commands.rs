use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Parser;
use log::{info, warn};
use serde::{Deserialize, Serialize};

use nce_tpp::evaluation::{
    cost_report, heldout_loglik, predict_next, recovery_experiment, variance_experiment,
    write_json_report, CostConfig, CostReport, HeldoutLoglik, RecoveryConfig, VarianceConfig,
};
use nce_tpp::event_streams::{load_dataset, save_dataset, split_dataset};
use nce_tpp::intensity_models::{
    fit_noise_model, ModelCheckpoint, NoiseCheckpoint, NoiseFamily, NoiseFitConfig,
};
use nce_tpp::objectives::{exact_loglik, mle_objective};
use nce_tpp::rng::{open_unit, stream_rng, Purpose};
use nce_tpp::thinning::simulate_dataset;
use nce_tpp::trainer::{
    run_pool, save_curve_csv, train, AdamConfig, CurvePoint, EpochStats, Objective, TrainConfig,
};
use nce_tpp::{
    AnyModel, CoarseNoiseModel, Dataset, DecayLayout, HawkesExpModel, IntensityModel, Partition,
    PoissonModel,
};

use crate::args::{
    Cli, Command, Decay, EvalArgs, ExperimentCommand, Family, FitNoiseArgs, RecoveryArgs,
    SimulateArgs, SplitArgs, TrainArgs, VarianceArgs,
};
use crate::manifest::{self, Manifest};
use crate::UsageError;

type Model = AnyModel<f64>;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Files a command wrote. Unless `manifest` is set, the manifest is named
/// after the first file.
struct Outputs {
    files: Vec<PathBuf>,
    manifest: Option<PathBuf>,
}

impl Outputs {
    fn files(files: Vec<PathBuf>) -> Self {
        Self {
            files,
            manifest: None,
        }
    }
}

pub fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    if let Command::Replay(r) = &cli.command {
        let recorded = Manifest::read(&r.manifest_file)?;
        if matches!(recorded.argv.get(1).map(String::as_str), Some("replay")) {
            return Err(usage("a replay manifest cannot be replayed"));
        }
        info!("replaying {}", recorded.argv.join(" "));
        let again = Cli::try_parse_from(&recorded.argv).map_err(|e| usage(e.to_string()))?;
        return run(again, recorded.argv);
    }

    let resolved = serde_json::to_value(&cli)?;
    let workers = cli.workers.max(1);
    let outputs = match &cli.command {
        Command::Simulate(a) => simulate(a, workers)?,
        Command::Split(a) => split(a)?,
        Command::FitNoise(a) => fit_noise(a, workers)?,
        Command::Train(a) => train_cmd(a, workers)?,
        Command::Eval(a) => eval(a, workers)?,
        Command::Experiment(ExperimentCommand::Variance(a)) => variance(a, workers)?,
        Command::Experiment(ExperimentCommand::Recovery(a)) => recovery(a, workers)?,
        Command::Replay(_) => unreachable!(),
    };
    let path = match (&cli.manifest, &outputs.manifest) {
        (Some(p), _) | (None, Some(p)) => p.clone(),
        (None, None) => manifest::default_path(&outputs.files[0]),
    };
    Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        argv,
        resolved,
        outputs: outputs.files,
    }
    .write(&path)?;
    info!("manifest written to {}", path.display());
    Ok(())
}

fn layout(d: Decay) -> DecayLayout {
    match d {
        Decay::Full => DecayLayout::Full,
        Decay::Shared => DecayLayout::Shared,
    }
}

/// Parses `K=<int>` with an optional `seed=<int>`, separated by commas or spaces.
fn parse_random_model(text: &str, default_seed: u64) -> Result<(usize, u64)> {
    let mut k = None;
    let mut seed = default_seed;
    for part in text.split([',', ' ']).filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| usage(format!("--random-model: expected key=value, got {part:?}")))?;
        match key.trim() {
            "K" | "k" => {
                k = Some(
                    value
                        .trim()
                        .parse::<usize>()
                        .map_err(|e| usage(format!("--random-model K: {e}")))?,
                )
            }
            "seed" => {
                seed = value
                    .trim()
                    .parse()
                    .map_err(|e| usage(format!("--random-model seed: {e}")))?
            }
            other => return Err(usage(format!("--random-model: unknown key {other:?}"))),
        }
    }
    match k {
        Some(k) if k > 0 => Ok((k, seed)),
        _ => Err(usage("--random-model needs K=<positive int>")),
    }
}

fn random_model(family: Family, decay: Decay, k: usize, seed: u64) -> Result<Model> {
    let mut rng = stream_rng(seed, 0, Purpose::Init);
    Ok(match family {
        Family::Hawkes => AnyModel::Hawkes(HawkesExpModel::random(k, layout(decay), &mut rng)?),
        Family::Poisson => {
            let rates: Vec<f64> = (0..k).map(|_| 0.5 + open_unit(&mut rng)).collect();
            AnyModel::Poisson(PoissonModel::from_rates(&rates)?)
        }
    })
}

fn load_model(path: &Path) -> Result<Model> {
    let ck =
        ModelCheckpoint::load(path).with_context(|| format!("loading model {}", path.display()))?;
    Ok(AnyModel::from_checkpoint(&ck)?)
}

fn load_data(path: &Path) -> Result<Dataset<f64>> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

/// Rescales base rates so the expected stationary event count per stream is `target`.
fn rescale_to_mean_events(model: &mut Model, target: f64, horizon: f64) -> Result<()> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(usage("--mean-events must be positive"));
    }
    match model {
        AnyModel::Hawkes(h) => {
            let Some(rates) = h.stationary_rates() else {
                bail!("model is not stationary, so its mean event count is undefined");
            };
            let current: f64 = rates.iter().sum::<f64>() * horizon;
            h.scale_base_rates(target / current);
        }
        AnyModel::Poisson(p) => {
            let current: f64 = p.rates().iter().sum::<f64>() * horizon;
            let scaled: Vec<f64> = p.rates().iter().map(|r| r * target / current).collect();
            *p = PoissonModel::from_rates(&scaled)?;
        }
    }
    Ok(())
}

fn simulate(a: &SimulateArgs, workers: usize) -> Result<Outputs> {
    if !(a.horizon > 0.0 && a.horizon.is_finite()) {
        return Err(usage("--horizon must be positive"));
    }
    let mut model = match (&a.model, &a.random_model) {
        (Some(path), _) => load_model(path)?,
        (None, Some(text)) => {
            let (k, seed) = parse_random_model(text, a.seed)?;
            random_model(a.family, a.decay, k, seed)?
        }
        (None, None) => return Err(usage("one of --model or --random-model is required")),
    };
    if let Some(target) = a.mean_events {
        rescale_to_mean_events(&mut model, target, a.horizon)?;
    }
    let data = run_pool(workers, || {
        simulate_dataset(&model, a.streams, a.horizon, a.seed)
    })??;
    save_dataset(&data, &a.out)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(p) = &a.model_out {
        model.to_checkpoint().save(p)?;
        outputs.push(p.clone());
    }
    let events = data.num_events();
    println!(
        "{} streams, {} events ({:.2} per stream), type counts {:?} -> {}",
        data.len(),
        events,
        events as f64 / data.len().max(1) as f64,
        data.type_counts(),
        a.out.display()
    );
    Ok(Outputs::files(outputs))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn split(a: &SplitArgs) -> Result<Outputs> {
    let data = load_data(&a.data)?;
    let parts = split_dataset(&data, a.train_frac, a.dev_frac, a.seed)?;
    let paths: Vec<PathBuf> = ["train", "dev", "test"]
        .iter()
        .map(|name| with_suffix(&a.out_prefix, &format!(".{name}.jsonl")))
        .collect();
    for (part, path) in [&parts.train, &parts.dev, &parts.test]
        .into_iter()
        .zip(&paths)
    {
        save_dataset(part, path)?;
    }
    println!(
        "train {} / dev {} / test {} streams",
        parts.train.len(),
        parts.dev.len(),
        parts.test.len()
    );
    Ok(Outputs {
        files: paths,
        manifest: Some(with_suffix(&a.out_prefix, ".manifest.json")),
    })
}

fn read_partition(path: &Path, num_types: usize) -> Result<Partition> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let coarse_of: Vec<usize> = serde_json::from_str(&text)
        .with_context(|| format!("parsing partition {}", path.display()))?;
    let num_coarse = coarse_of.iter().max().map_or(0, |m| m + 1);
    Ok(Partition::new(num_coarse, coarse_of, num_types)?)
}

fn fit_noise(a: &FitNoiseArgs, workers: usize) -> Result<Outputs> {
    let data = load_data(&a.data)?;
    let partition = a
        .partition
        .as_deref()
        .map(|p| read_partition(p, data.num_types))
        .transpose()?;
    let cfg = NoiseFitConfig {
        family: match a.family {
            Family::Poisson => NoiseFamily::Poisson,
            Family::Hawkes => NoiseFamily::Hawkes,
        },
        partition,
        num_coarse: a.coarse,
        decay: layout(a.decay),
        max_iters: a.max_iters,
        rel_tol: a.rel_tol,
    };
    let q = run_pool(workers, || fit_noise_model(&data, &cfg))??;
    q.to_checkpoint().save(&a.out)?;
    let coarse = data.coarsened(q.partition());
    let ll = heldout_loglik(q.process(), &coarse);
    println!(
        "noise model: {} over {} coarse types, coarse log-likelihood {:.4} per stream -> {}",
        q.process().family(),
        q.num_coarse(),
        ll.per_stream,
        a.out.display()
    );
    Ok(Outputs::files(vec![a.out.clone()]))
}

/// Curve point with the epoch-0 objective (undefined) written as `null`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct ReportPoint {
    epoch: usize,
    evals: u64,
    seconds: f64,
    dev_ll_per_stream: f64,
    train_obj: Option<f64>,
}

impl From<&CurvePoint> for ReportPoint {
    fn from(p: &CurvePoint) -> Self {
        Self {
            epoch: p.epoch,
            evals: p.evals,
            seconds: p.seconds,
            dev_ll_per_stream: p.dev_ll_per_stream,
            train_obj: p.train_obj.is_finite().then_some(p.train_obj),
        }
    }
}

impl From<&ReportPoint> for CurvePoint {
    fn from(p: &ReportPoint) -> Self {
        Self {
            epoch: p.epoch,
            evals: p.evals,
            seconds: p.seconds,
            dev_ll_per_stream: p.dev_ll_per_stream,
            train_obj: p.train_obj.unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainReport {
    config: TrainConfig,
    family: String,
    #[serde(rename = "K")]
    num_types: usize,
    #[serde(rename = "C")]
    num_coarse: usize,
    best_dev_ll_per_stream: f64,
    stopped_early: bool,
    curve: Vec<ReportPoint>,
    epochs: Vec<EpochStats>,
}

fn initial_model(a: &TrainArgs, data: &Dataset<f64>) -> Result<Model> {
    if let Some(p) = &a.init {
        return load_model(p);
    }
    let k = data.num_types;
    let rate = data.num_events() as f64 / data.total_time();
    Ok(match a.family {
        Family::Hawkes => {
            let mut rng = stream_rng(a.seed, 0, Purpose::Init);
            AnyModel::Hawkes(HawkesExpModel::init_for_data(
                k,
                layout(a.decay),
                rate,
                &mut rng,
            )?)
        }
        Family::Poisson => AnyModel::Poisson(PoissonModel::from_rates(&vec![
            (rate / k as f64)
                .max(1e-6);
            k
        ])?),
    })
}

fn train_cmd(a: &TrainArgs, workers: usize) -> Result<Outputs> {
    let train_data = load_data(&a.train)?;
    let dev_data = load_data(&a.dev)?;
    if train_data.num_types != dev_data.num_types {
        bail!(
            "train has K = {} but dev has K = {}",
            train_data.num_types,
            dev_data.num_types
        );
    }
    let q = match (a.objective, &a.noise) {
        (Objective::Nce, None) => return Err(usage("--objective nce requires --noise")),
        (Objective::Nce, Some(p)) => {
            let ck = NoiseCheckpoint::load(p)
                .with_context(|| format!("loading noise {}", p.display()))?;
            Some(CoarseNoiseModel::from_checkpoint(&ck)?)
        }
        (Objective::Mle, Some(_)) => {
            warn!("--noise is ignored by the mle objective");
            None
        }
        (Objective::Mle, None) => None,
    };
    let model = initial_model(a, &train_data)?;
    if model.num_types() != train_data.num_types {
        bail!(
            "model has K = {} but the data has K = {}",
            model.num_types(),
            train_data.num_types
        );
    }
    let cfg = TrainConfig {
        objective: a.objective,
        m: a.m,
        rho: a.rho,
        batch_size: a.batch_size,
        redraw: a.redraw,
        adam: AdamConfig {
            learning_rate: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            epsilon: a.epsilon,
        },
        max_epochs: a.epochs,
        eval_every: a.eval_every,
        seed: a.seed,
        fractional_threshold: a.threshold,
        patience: a.patience,
        workers,
        checkpoint_path: Some(a.out.clone()),
    };
    let outcome = train(model, q.as_ref(), &train_data, &dev_data, &cfg)?;
    outcome.model.to_checkpoint().save(&a.out)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(p) = &a.curve {
        save_curve_csv(&outcome.curve, p)?;
        outputs.push(p.clone());
    }
    if let Some(p) = &a.report {
        let report = TrainReport {
            family: outcome.model.family().into(),
            num_types: train_data.num_types,
            num_coarse: q.as_ref().map_or(0, |q| q.num_coarse()),
            config: cfg.clone(),
            best_dev_ll_per_stream: outcome.best_dev_ll_per_stream,
            stopped_early: outcome.stopped_early,
            curve: outcome.curve.iter().map(ReportPoint::from).collect(),
            epochs: outcome.epochs.clone(),
        };
        write_json_report(&report, p)?;
        outputs.push(p.clone());
    }
    let evals = outcome.curve.last().map_or(0, |c| c.evals);
    println!(
        "{} epochs, {} intensity evaluations, best dev log-likelihood {:.4} per stream{} -> {}",
        outcome.epochs.len(),
        evals,
        outcome.best_dev_ll_per_stream,
        if outcome.stopped_early {
            " (stopped early)"
        } else {
            ""
        },
        a.out.display()
    );
    Ok(Outputs::files(outputs))
}

#[derive(Debug, Serialize)]
struct PredictionSummary {
    predicted: usize,
    draws: usize,
    mean_abs_time_error: f64,
    type_accuracy: f64,
}

#[derive(Debug, Serialize)]
struct McCheck {
    rho: f64,
    replications: usize,
    exact_total: f64,
    mc_mean: f64,
    mc_std_error: f64,
    z: f64,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    heldout: HeldoutLoglik,
    #[serde(skip_serializing_if = "Option::is_none")]
    cost: Option<CostReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prediction: Option<PredictionSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    monte_carlo: Option<McCheck>,
}

fn load_train_report(path: &Path) -> Result<TrainReport> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing training report {}", path.display()))
}

/// Predicts every event from its strict history, walking streams in order
/// until `max` predictions have been made.
fn prediction_summary(
    model: &Model,
    data: &Dataset<f64>,
    draws: usize,
    max: usize,
    seed: u64,
) -> Result<PredictionSummary> {
    let mut abs_err = 0.0;
    let mut hits = 0usize;
    let mut n = 0usize;
    'streams: for (i, s) in data.streams.iter().enumerate() {
        let mut rng = stream_rng(seed, i, Purpose::Predict);
        for j in 0..s.events.len() {
            if n == max {
                break 'streams;
            }
            let target = s.events[j];
            if j > 0 && s.events[j - 1].time >= target.time {
                continue;
            }
            let p = predict_next(model, &s.events[..j], s.horizon, draws, &mut rng)?;
            abs_err += (p.time - target.time).abs();
            hits += usize::from(p.type_id == target.type_id);
            n += 1;
        }
    }
    Ok(PredictionSummary {
        predicted: n,
        draws,
        mean_abs_time_error: abs_err / n.max(1) as f64,
        type_accuracy: hits as f64 / n.max(1) as f64,
    })
}

fn mc_check(
    model: &Model,
    data: &Dataset<f64>,
    rho: f64,
    reps: usize,
    seed: u64,
) -> Result<McCheck> {
    if reps < 2 {
        return Err(usage("--mc-reps must be at least 2"));
    }
    let exact_total: f64 = data.streams.iter().map(|s| exact_loglik(model, s)).sum();
    let mut values = Vec::with_capacity(reps);
    for r in 0..reps {
        let mut total = 0.0;
        for (i, s) in data.streams.iter().enumerate() {
            let mut rng = stream_rng(seed, i, Purpose::MonteCarlo { epoch: r as u64 });
            total += mle_objective(model, s, rho, &mut rng)?.value;
        }
        values.push(total);
    }
    let mean = values.iter().sum::<f64>() / reps as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    let se = (var / reps as f64).sqrt();
    Ok(McCheck {
        rho,
        replications: reps,
        exact_total,
        mc_mean: mean,
        mc_std_error: se,
        z: if se > 0.0 {
            (mean - exact_total) / se
        } else {
            0.0
        },
    })
}

fn eval(a: &EvalArgs, workers: usize) -> Result<Outputs> {
    let model = load_model(&a.model)?;
    let data = load_data(&a.data)?;
    if model.num_types() != data.num_types {
        bail!(
            "model has K = {} but the data has K = {}",
            model.num_types(),
            data.num_types
        );
    }
    let heldout = heldout_loglik(&model, &data);
    println!(
        "held-out log-likelihood {:.6} ({:.6} per stream, {:.6} per event)",
        heldout.total, heldout.per_stream, heldout.per_event
    );
    let cost = match &a.train_report {
        Some(p) => {
            let r = load_train_report(p)?;
            let curve: Vec<CurvePoint> = r.curve.iter().map(CurvePoint::from).collect();
            let report = cost_report(
                &curve,
                &r.epochs,
                &CostConfig {
                    objective: r.config.objective,
                    m: r.config.m,
                    rho: r.config.rho,
                    num_types: r.num_types,
                    num_coarse: r.num_coarse,
                    target_dev_ll: a.target_ll,
                },
            )?;
            println!("{}", report.budget_line);
            if let Some(t) = &report.evals_to_target {
                println!(
                    "target reached at epoch {} after {} evaluations",
                    t.epoch, t.evals
                );
            }
            Some(report)
        }
        None if a.target_ll.is_some() => return Err(usage("--target-ll requires --train-report")),
        None => None,
    };
    let prediction = if a.predict_draws > 0 {
        let p = run_pool(workers, || {
            prediction_summary(&model, &data, a.predict_draws, a.predict_max, a.seed)
        })??;
        println!(
            "next-event prediction over {} events: mean |dt| {:.4}, type accuracy {:.3}",
            p.predicted, p.mean_abs_time_error, p.type_accuracy
        );
        Some(p)
    } else {
        None
    };
    let monte_carlo = if a.mc_rho > 0.0 {
        let m = mc_check(&model, &data, a.mc_rho, a.mc_reps, a.seed)?;
        println!(
            "Monte-Carlo log-likelihood {:.4} +- {:.4} vs exact {:.4} (z = {:.2})",
            m.mc_mean, m.mc_std_error, m.exact_total, m.z
        );
        Some(m)
    } else {
        None
    };
    write_json_report(
        &EvalReport {
            heldout,
            cost,
            prediction,
            monte_carlo,
        },
        &a.out,
    )?;
    Ok(Outputs::files(vec![a.out.clone()]))
}

fn write_csv_file(
    path: &Path,
    write: impl FnOnce(BufWriter<File>) -> nce_tpp::Result<()>,
) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write(BufWriter::new(f))?;
    Ok(())
}

fn variance(a: &VarianceArgs, workers: usize) -> Result<Outputs> {
    if !(a.rate > 0.0 && a.rate.is_finite()) {
        return Err(usage("--rate must be positive"));
    }
    std::fs::create_dir_all(&a.out_dir)?;
    let truth = PoissonModel::from_rates(&[a.rate])?;
    let q = CoarseNoiseModel::identity(AnyModel::Poisson(truth.clone()))?;
    let cfg = VarianceConfig {
        m_values: a.m.clone(),
        replications: a.replications,
        num_streams: a.streams,
        horizon: a.horizon,
        seed: a.seed,
        fractional_threshold: a.threshold,
        workers,
    };
    let report = variance_experiment(&truth, &q, &cfg)?;
    let csv = a.out_dir.join("variance.csv");
    let json = a.out_dir.join("variance.json");
    write_csv_file(&csv, |w| report.write_csv(w))?;
    write_json_report(&report, &json)?;
    for &m in &a.m {
        if let Some(r) = report.ratio(m, 0) {
            println!("M = {m}: Var(NCE)/Var(MLE) = {r:.4}");
        }
    }
    if report.unconverged > 0 {
        warn!("{} fits did not converge", report.unconverged);
    }
    Ok(Outputs {
        files: vec![csv, json],
        manifest: Some(a.out_dir.join("manifest.json")),
    })
}

fn recovery(a: &RecoveryArgs, workers: usize) -> Result<Outputs> {
    let truth = match (&a.model, &a.random_model) {
        (Some(p), _) => load_model(p)?,
        (None, Some(text)) => {
            let (k, seed) = parse_random_model(text, a.seed)?;
            random_model(Family::Hawkes, a.decay, k, seed)?
        }
        (None, None) => return Err(usage("one of --model or --random-model is required")),
    };
    std::fs::create_dir_all(&a.out_dir)?;
    let cfg = RecoveryConfig {
        small_streams: a.small,
        large_streams: a.large,
        horizon: a.horizon,
        repetitions: a.repetitions,
        m: a.m,
        seed: a.seed,
        fractional_threshold: a.threshold,
        workers,
    };
    let report = recovery_experiment(&truth, &cfg)?;
    let csv = a.out_dir.join("recovery.csv");
    let json = a.out_dir.join("recovery.json");
    write_csv_file(&csv, |w| report.write_csv(w))?;
    write_json_report(&report, &json)?;
    println!(
        "larger dataset had the smaller error in {}/{} repetitions",
        report.large_wins,
        report.rows.len()
    );
    Ok(Outputs {
        files: vec![csv, json],
        manifest: Some(a.out_dir.join("manifest.json")),
    })
}
