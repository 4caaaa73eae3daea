//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with a
//! non-zero status if any criterion fails.
//!
//! Set `ACCEPTANCE_ONLY=3,4` to run a subset.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nce_tpp::evaluation::{
    cost_report, heldout_loglik, ks_two_sample, recovery_experiment, relative_l2_error,
    variance_experiment, CostConfig, RecoveryConfig, VarianceConfig,
};
use nce_tpp::event_streams::{Dataset, Event, EventStream};
use nce_tpp::intensity_models::{
    compensator, compensator_gradient, fit_noise_model, intensity, intensity_gradient, AnyModel,
    CoarseNoiseModel, DecayLayout, EvalCounter, HawkesExpModel, IntensityModel, NoiseFamily,
    NoiseFitConfig, PoissonModel,
};
use nce_tpp::objectives::{exact_loglik, exact_loglik_and_gradient, mle_objective, nce_objective};
use nce_tpp::thinning::{
    draw_noise_samples, draw_stream_noise, sample_stream, simulate_dataset, NoiseSettings,
};
use nce_tpp::trainer::{save_curve_csv, train, Objective, Redraw, TrainConfig, TrainOutcome};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// 1. gradients

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-6;

fn random_hawkes(rng: &mut ChaCha8Rng) -> HawkesExpModel<f64> {
    let k = rng.random_range(1..=3usize);
    let layout = if rng.random_bool(0.5) {
        DecayLayout::Full
    } else {
        DecayLayout::Shared
    };
    let nb = match layout {
        DecayLayout::Full => k * k,
        DecayLayout::Shared => k,
    };
    let mu: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.5)).collect();
    let alpha: Vec<f64> = (0..k * k).map(|_| rng.random_range(0.05..0.8)).collect();
    let beta: Vec<f64> = (0..nb).map(|_| rng.random_range(0.5..3.0)).collect();
    HawkesExpModel::from_linked(k, &mu, &alpha, &beta, layout).unwrap()
}

fn random_stream(rng: &mut ChaCha8Rng, k: usize) -> EventStream<f64> {
    let horizon = rng.random_range(2.0..10.0);
    let n = rng.random_range(0..=10usize);
    let mut times: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..horizon)).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    EventStream::new(
        horizon,
        times
            .into_iter()
            .map(|t| Event::new(t, rng.random_range(0..k)))
            .collect(),
    )
}

fn fd_gradient(model: &HawkesExpModel<f64>, f: &dyn Fn(&HawkesExpModel<f64>) -> f64) -> Vec<f64> {
    let raw = model.raw_params().to_vec();
    let mut work = model.clone();
    (0..raw.len())
        .map(|i| {
            let mut p = raw.clone();
            p[i] = raw[i] + FD_STEP;
            work.set_raw_params(&p);
            let up = f(&work);
            p[i] = raw[i] - FD_STEP;
            work.set_raw_params(&p);
            let down = f(&work);
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn normwise_error(analytic: &[f64], fd: &[f64]) -> f64 {
    let scale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
    analytic
        .iter()
        .zip(fd)
        .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()))
        / scale
}

fn criterion_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = [0.0f64; 5];
    for inst in 0..100 {
        let model = random_hawkes(&mut rng);
        let k = model.num_types();
        let stream = random_stream(&mut rng, k);
        let last = stream.events.last().map_or(0.0, |e| e.time);
        let hist = &stream.events[..];

        let kq = rng.random_range(0..k);
        let t = last + rng.random_range(0.01..2.0);
        let a = intensity_gradient(&model, kq, t, hist).unwrap();
        let fd = fd_gradient(&model, &|m| {
            intensity(m, kq, t, hist, &mut EvalCounter::default()).unwrap()
        });
        worst[0] = worst[0].max(normwise_error(&a, &fd));

        let t0 = last + rng.random_range(0.0..1.0);
        let t1 = t0 + rng.random_range(0.0..3.0);
        let a = compensator_gradient(&model, kq, t0, t1, hist).unwrap();
        let fd = fd_gradient(&model, &|m| compensator(m, kq, t0, t1, hist).unwrap());
        worst[1] = worst[1].max(normwise_error(&a, &fd));

        let (_, a) = exact_loglik_and_gradient(&model, &stream);
        let fd = fd_gradient(&model, &|m| exact_loglik(m, &stream));
        worst[2] = worst[2].max(normwise_error(&a, &fd));

        let seed = 1000 + inst as u64;
        let mle = |m: &HawkesExpModel<f64>| {
            mle_objective(m, &stream, 2.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
        };
        let a = mle(&model).gradient;
        let fd = fd_gradient(&model, &|m| mle(m).value);
        worst[3] = worst[3].max(normwise_error(&a, &fd));

        let q = if inst % 2 == 0 {
            CoarseNoiseModel::uniform(
                k,
                AnyModel::Poisson(PoissonModel::from_rates(&[1.3]).unwrap()),
            )
            .unwrap()
        } else {
            let qh =
                HawkesExpModel::from_linked(1, &[0.7], &[0.5], &[1.4], DecayLayout::Full).unwrap();
            CoarseNoiseModel::uniform(k, AnyModel::Hawkes(qh)).unwrap()
        };
        let m_noise = 2.5;
        let noise = draw_stream_noise(
            &q,
            &stream,
            &NoiseSettings::new(m_noise),
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap();
        let nce = |m: &HawkesExpModel<f64>| {
            nce_objective(m, &q, &stream, &noise.samples, m_noise).unwrap()
        };
        let a = nce(&model).gradient;
        let fd = fd_gradient(&model, &|m| nce(m).value);
        worst[4] = worst[4].max(normwise_error(&a, &fd));
    }
    let names = [
        "intensity",
        "compensator",
        "exact_loglik",
        "mle_objective",
        "nce_objective",
    ];
    let detail = names
        .iter()
        .zip(&worst)
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        worst.iter().all(|&w| w < FD_TOL),
        format!("max normwise rel. error over 100 instances: {detail}"),
    )
}

// ---------------------------------------------------------------------------
// 2. sampler statistics

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn criterion_sampler() -> Outcome {
    let poisson: PoissonModel<f64> = PoissonModel::from_rates(&[2.0]).unwrap();
    let counts: Vec<f64> = (0..1000)
        .map(|r| {
            sample_stream(&poisson, 100.0, &mut ChaCha8Rng::seed_from_u64(r))
                .unwrap()
                .len() as f64
        })
        .collect();
    let (pm, pse) = mean_se(&counts);
    let poisson_ok = (pm - 200.0).abs() < 3.0 * pse;

    let hawkes: HawkesExpModel<f64> =
        HawkesExpModel::from_linked(1, &[0.5], &[0.8], &[1.0], DecayLayout::Full).unwrap();
    let counts: Vec<f64> = (0..200)
        .map(|r| {
            sample_stream(&hawkes, 1000.0, &mut ChaCha8Rng::seed_from_u64(5000 + r))
                .unwrap()
                .len() as f64
        })
        .collect();
    let (hm, hse) = mean_se(&counts);
    let hawkes_ok = (hm - 2500.0).abs() < 3.0 * hse;

    let q = CoarseNoiseModel::uniform(
        2,
        AnyModel::Poisson(PoissonModel::from_rates(&[1.5]).unwrap()),
    )
    .unwrap();
    let length = 200.0;
    let gaps = |times: &mut Vec<f64>| -> Vec<f64> {
        times.sort_by(f64::total_cmp);
        let mut prev = 0.0;
        times
            .iter()
            .map(|&t| {
                let g = t - prev;
                prev = t;
                g
            })
            .collect()
    };
    let mut failures = 0;
    let mut min_p = 1.0f64;
    for trial in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + trial);
        let mut c = EvalCounter::default();
        let single = NoiseSettings {
            m: 1.0,
            fractional_threshold: 0.0,
        };
        let mut union = Vec::new();
        for _ in 0..4 {
            union.extend(
                draw_noise_samples(&q, 0.0, length, &[], &single, &mut rng, &mut c)
                    .unwrap()
                    .iter()
                    .map(|s| s.time),
            );
        }
        let four = NoiseSettings {
            m: 4.0,
            fractional_threshold: 0.0,
        };
        let mut scaled: Vec<f64> =
            draw_noise_samples(&q, 0.0, length, &[], &four, &mut rng, &mut c)
                .unwrap()
                .iter()
                .map(|s| s.time)
                .collect();
        let p = ks_two_sample(&gaps(&mut union), &gaps(&mut scaled)).p_value;
        min_p = min_p.min(p);
        failures += usize::from(p <= 0.01);
    }
    let ks_ok = failures <= 1;
    outcome(
        poisson_ok && hawkes_ok && ks_ok,
        format!(
            "Poisson mean {pm:.2} (3 SE = {:.2}, target 200); Hawkes mean {hm:.1} (3 SE = {:.1}, target 2500); \
             superposition KS failures {failures}/20 (min p {min_p:.3})",
            3.0 * pse,
            3.0 * hse
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Monte-Carlo MLE unbiasedness

fn criterion_mc_mle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst_z = 0.0f64;
    for inst in 0..10u64 {
        let model = random_hawkes(&mut rng);
        let stream = sample_stream(&model, 20.0, &mut rng).unwrap();
        let exact = exact_loglik(&model, &stream);
        let values: Vec<f64> = (0..200)
            .map(|s| {
                mle_objective(
                    &model,
                    &stream,
                    1.0,
                    &mut ChaCha8Rng::seed_from_u64(inst * 1000 + s),
                )
                .unwrap()
                .value
            })
            .collect();
        let (mean, se) = mean_se(&values);
        worst_z = worst_z.max((mean - exact).abs() / se);
    }
    outcome(
        worst_z < 3.0,
        format!("largest |mean − exact| / SE over 10 instances: {worst_z:.2}"),
    )
}

// ---------------------------------------------------------------------------
// 4, 6, 8. recovery testbed

struct Testbed {
    truth: HawkesExpModel<f64>,
    train: Dataset<f64>,
    dev: Dataset<f64>,
    q: CoarseNoiseModel<f64>,
    init: HawkesExpModel<f64>,
    true_dev_per_event: f64,
}

fn testbed() -> Testbed {
    let truth = HawkesExpModel::from_linked(
        2,
        &[0.6, 0.4],
        &[0.6, 0.3, 0.2, 0.5],
        &[1.5, 1.0, 1.2, 2.0],
        DecayLayout::Full,
    )
    .unwrap();
    let train = simulate_dataset(&truth, 500, 50.0, 4040).unwrap();
    let dev = simulate_dataset(&truth, 100, 50.0, 4041).unwrap();
    let q = fit_noise_model(
        &train,
        &NoiseFitConfig {
            family: NoiseFamily::Hawkes,
            ..Default::default()
        },
    )
    .unwrap();
    let rate = train.num_events() as f64 / train.total_time();
    let init = HawkesExpModel::init_for_data(
        2,
        DecayLayout::Full,
        rate,
        &mut ChaCha8Rng::seed_from_u64(7),
    )
    .unwrap();
    let true_dev_per_event = heldout_loglik(&truth, &dev).per_event;
    Testbed {
        truth,
        train,
        dev,
        q,
        init,
        true_dev_per_event,
    }
}

fn run_training(
    tb: &Testbed,
    objective: Objective,
    redraw: Redraw,
) -> TrainOutcome<HawkesExpModel<f64>> {
    let cfg = TrainConfig {
        objective,
        m: 5.0,
        rho: 1.0,
        redraw,
        max_epochs: 600,
        eval_every: 5,
        seed: 17,
        workers: 4,
        ..Default::default()
    };
    let q = (objective == Objective::Nce).then_some(&tb.q);
    train(tb.init.clone(), q, &tb.train, &tb.dev, &cfg).unwrap()
}

struct FitSummary {
    gap: f64,
    error: f64,
    epochs: usize,
    seconds: f64,
}

fn summarize(tb: &Testbed, out: &TrainOutcome<HawkesExpModel<f64>>) -> FitSummary {
    let dev = heldout_loglik(&out.model, &tb.dev).per_event;
    FitSummary {
        gap: tb.true_dev_per_event - dev,
        error: relative_l2_error(&out.model.linked_params(), &tb.truth.linked_params()),
        epochs: out.epochs.len(),
        seconds: out.curve.last().map_or(0.0, |p| p.seconds),
    }
}

fn fit_ok(s: &FitSummary) -> bool {
    s.gap <= 0.05 && s.error < 0.15
}

fn describe(name: &str, s: &FitSummary) -> String {
    format!(
        "{name}: LL gap {:.4} nats/event, param error {:.1}% ({} epochs, {:.0} s)",
        s.gap,
        100.0 * s.error,
        s.epochs,
        s.seconds
    )
}

fn write_curve(name: &str, out: &TrainOutcome<HawkesExpModel<f64>>) {
    let dir = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    if std::fs::create_dir_all(&dir).is_ok() {
        let _ = save_curve_csv(&out.curve, dir.join(format!("{name}.csv")));
    }
}

// ---------------------------------------------------------------------------
// 5. efficiency

fn criterion_efficiency() -> Outcome {
    let truth = AnyModel::Poisson(PoissonModel::from_rates(&[1.0]).unwrap());
    let q = CoarseNoiseModel::identity(truth.clone()).unwrap();
    let cfg = VarianceConfig {
        m_values: vec![1.0, 10.0],
        replications: 200,
        num_streams: 200,
        horizon: 50.0,
        seed: 55,
        ..Default::default()
    };
    let report = variance_experiment(&truth, &q, &cfg).unwrap();
    let r1 = report.ratio(1.0, 0).unwrap();
    let r10 = report.ratio(10.0, 0).unwrap();
    let params = truth.num_params();
    let smaller = (0..params)
        .filter(|&j| report.variance(Some(10.0), j) < report.variance(Some(1.0), j))
        .count();
    let ok =
        (1.6..=2.5).contains(&r1) && (0.95..=1.35).contains(&r10) && smaller * 10 >= params * 9;
    outcome(
        ok,
        format!(
            "variance ratio NCE/MLE: M=1 {r1:.3} (band 1.6–2.5), M=10 {r10:.3} (band 0.95–1.35); \
             M=10 below M=1 in {smaller}/{params} coordinates"
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. consistency trend

fn criterion_consistency() -> Outcome {
    let truth = HawkesExpModel::from_linked(
        2,
        &[0.6, 0.4],
        &[0.6, 0.3, 0.2, 0.5],
        &[1.5, 1.0, 1.2, 2.0],
        DecayLayout::Full,
    )
    .unwrap();
    let cfg = RecoveryConfig {
        small_streams: 50,
        large_streams: 500,
        horizon: 50.0,
        repetitions: 20,
        m: 5.0,
        seed: 77,
        ..Default::default()
    };
    let report = recovery_experiment(&truth, &cfg).unwrap();
    let mean = |f: fn(&nce_tpp::evaluation::RecoveryRow) -> f64| {
        report.rows.iter().map(f).sum::<f64>() / report.rows.len() as f64
    };
    outcome(
        report.large_wins >= 18,
        format!(
            "N=500 beats N=50 in {}/20 repetitions (mean error {:.1}% vs {:.1}%)",
            report.large_wins,
            100.0 * mean(|r| r.large_error),
            100.0 * mean(|r| r.small_error)
        ),
    )
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|v| v.contains(&n));
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut timed =
        |n: usize, name: &'static str, setup_secs: f64, f: &mut dyn FnMut() -> Outcome| {
            if wanted(n) {
                let start = Instant::now();
                let o = f();
                let secs = setup_secs + start.elapsed().as_secs_f64();
                println!(
                    "{} criterion {n} ({name}, {secs:.1} s): {}",
                    if o.pass { "PASS" } else { "FAIL" },
                    o.detail
                );
                results.push((n, name, o, secs));
            }
        };

    timed(1, "gradient suite", 0.0, &mut criterion_gradients);
    timed(2, "sampler statistics", 0.0, &mut criterion_sampler);
    timed(
        3,
        "Monte-Carlo MLE unbiasedness",
        0.0,
        &mut criterion_mc_mle,
    );

    if wanted(4) || wanted(6) || wanted(8) {
        let tb = testbed();
        let started = Instant::now();
        let nce = run_training(&tb, Objective::Nce, Redraw::Always);
        let nce_secs = started.elapsed().as_secs_f64();
        let started = Instant::now();
        let mle = run_training(&tb, Objective::Mle, Redraw::Always);
        let mle_secs = started.elapsed().as_secs_f64();
        write_curve("nce_m5", &nce);
        write_curve("mle_rho1", &mle);
        let (sn, sm) = (summarize(&tb, &nce), summarize(&tb, &mle));

        timed(
            4,
            "optimality and recovery",
            nce_secs + mle_secs,
            &mut || {
                outcome(
                    fit_ok(&sn) && fit_ok(&sm) && nce_secs < 600.0 && mle_secs < 600.0,
                    format!(
                        "{}; {}",
                        describe("NCE M=5", &sn),
                        describe("MLE rho=1", &sm)
                    ),
                )
            },
        );

        timed(5, "efficiency", 0.0, &mut criterion_efficiency);

        timed(6, "cost model", 0.0, &mut || {
            let cost = |out: &TrainOutcome<HawkesExpModel<f64>>, objective| {
                cost_report(
                    &out.curve,
                    &out.epochs,
                    &CostConfig {
                        objective,
                        m: 5.0,
                        rho: 1.0,
                        num_types: 2,
                        num_coarse: 1,
                        target_dev_ll: None,
                    },
                )
                .unwrap()
            };
            let cn = cost(&nce, Objective::Nce);
            let cm = cost(&mle, Objective::Mle);
            let ratios: Vec<f64> = cn.epochs.iter().map(|e| e.proposals_per_event).collect();
            let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ratios.iter().copied().fold(0.0, f64::max);
            let band = lo >= 2.5 && hi <= 10.0;
            outcome(
                cn.all_within_bound && cm.all_within_bound && band,
                format!(
                    "MLE identity held in {}/{} epochs; NCE bound held in {}/{} epochs; J/I range [{lo:.2}, {hi:.2}] \
                     (band [2.5, 10]); {}",
                    cm.epochs.iter().filter(|e| e.within_bound).count(),
                    cm.epochs.len(),
                    cn.epochs.iter().filter(|e| e.within_bound).count(),
                    cn.epochs.len(),
                    cn.budget_line
                ),
            )
        });

        timed(7, "consistency trend", 0.0, &mut criterion_consistency);

        timed(8, "redraw strategies", 0.0, &mut || {
            let never = run_training(&tb, Objective::Nce, Redraw::Never);
            write_curve("nce_m5_never", &never);
            let first = never.epochs[0].noise_digest;
            let identical = never.epochs.iter().all(|e| e.noise_digest == first)
                && never.epochs[1..]
                    .iter()
                    .all(|e| e.cache_hits == tb.train.len() && e.sampling_counter.total() == 0);
            let sv = summarize(&tb, &never);
            outcome(
                identical && fit_ok(&sv) && fit_ok(&sn),
                format!(
                    "cached noise identical across {} epochs: {identical}; {}; {}",
                    never.epochs.len(),
                    describe("never", &sv),
                    describe("always", &sn)
                ),
            )
        });
    } else {
        timed(5, "efficiency", 0.0, &mut criterion_efficiency);
        timed(7, "consistency trend", 0.0, &mut criterion_consistency);
    }

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
