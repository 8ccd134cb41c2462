//! End-to-end acceptance checks on the real digit data. Prints one
//! PASS/FAIL line per criterion.
//!
//! Set `STROKEFORGE_ACCEPTANCE=1,2,3` to run a subset and
//! `STROKEFORGE_ACCEPTANCE_STRICT=1` to exit nonzero when a criterion fails.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strokeforge::curriculum::{CurriculumKind, CurriculumState};
use strokeforge::model::{
    bivariate_density, gradient_check, max_abs_weight, mdn_transform, prediction_loss, Batch,
    LayerKind, LossSettings, MdnOutput, Model, ModelConfig, StepTarget, TaskMode, CLASS_COUNT,
};
use strokeforge::strokes::{
    binarize, convert_dataset, extract_strokes, parse_idx_images, parse_idx_labels, read_idx_file,
    render_sequence, select_threshold, thin, GrayImage, PenStep, StrokeSequence, CANVAS,
};
use strokeforge::tensor::{Matrix, ParamStore};
use strokeforge::trainer::{
    loss_by_position, transfer_run, views, BatchMode, Checkpoint, MetricsRecord, NoObserver,
    Observer, TrainConfig, Trainer, TransferVariant,
};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const TRAIN_SEQUENCES: usize = 1000;
const TEST_SEQUENCES: usize = 500;
const BUDGET: u64 = 2_000_000;
const TRANSFER_BUDGET: u64 = 3_000_000;
const TARGET_ACCURACY: f64 = 0.6;

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

fn load_split(split: &str) -> (Vec<GrayImage>, Vec<u8>) {
    let dir = data_dir();
    let images = read_idx_file(&dir.join(format!("{split}-images-idx3-ubyte.gz")))
        .and_then(|b| parse_idx_images(&b))
        .expect("digit images");
    let labels = read_idx_file(&dir.join(format!("{split}-labels-idx1-ubyte.gz")))
        .and_then(|b| parse_idx_labels(&b))
        .expect("digit labels");
    (images, labels)
}

/// The first `n` convertible images of a split.
fn first_sequences(split: &str, n: usize) -> Vec<StrokeSequence> {
    let (images, labels) = load_split(split);
    let mut out = Vec::new();
    let mut start = 0;
    while out.len() < n && start < images.len() {
        let end = (start + n).min(images.len());
        out.extend(
            convert_dataset(&images[start..end], &labels[start..end])
                .expect("conversion")
                .sequences,
        );
        start = end;
    }
    out.truncate(n);
    out
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn random_sequence(rng: &mut ChaCha8Rng, len: usize, label: u8) -> StrokeSequence {
    let mut steps: Vec<PenStep> = (0..len - 1)
        .map(|_| {
            if rng.random_bool(0.15) {
                PenStep::PEN_UP
            } else {
                PenStep::moveto(rng.random_range(-3..=3), rng.random_range(-3..=3))
            }
        })
        .collect();
    steps.push(PenStep::END);
    StrokeSequence::new(steps, label).unwrap()
}

fn gradient_fidelity() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let seqs: Vec<StrokeSequence> = (0..3)
        .map(|i| random_sequence(&mut rng, 5, 2 * i + 1))
        .collect();
    let batch = Batch::new(&views(&seqs), 10.0);
    let mut worst: f64 = 0.0;
    for kind in [LayerKind::Recurrent, LayerKind::Feedforward] {
        let config = ModelConfig {
            num_mixtures: 2,
            hidden_sizes: vec![8, 8],
            layer_kind: kind,
            scale: 10.0,
        };
        let model = Model::with_init_scale(config, 0.3, &mut rng).unwrap();
        for task in [
            TaskMode::Prediction,
            TaskMode::Classification {
                with_prediction: false,
            },
            TaskMode::Classification {
                with_prediction: true,
            },
        ] {
            let settings = LossSettings {
                task,
                ..LossSettings::default()
            };
            let report = gradient_check(&model, &batch, &settings, 1e-4, usize::MAX, &mut rng)
                .expect("gradient check");
            assert_eq!(report.checked, model.params().num_values());
            worst = worst.max(report.max_rel_error);
        }
    }
    let elapsed = started.elapsed();
    outcome(
        worst < 1e-4 && elapsed < Duration::from_secs(60),
        format!(
            "max relative error {worst:.2e} (< 1e-4) in {}",
            secs(elapsed)
        ),
    )
}

fn loss_oracle() -> Outcome {
    let mut out = MdnOutput::zeros(1);
    out.pi[0] = 1.0;
    out.mu_x[0] = 0.4;
    out.mu_y[0] = -0.1;
    out.sigma_x[0] = 1.0;
    out.sigma_y[0] = 1.0;
    out.eos_p = 0.5;
    out.eod_p = 0.5;
    out.class_p = vec![1.0 / CLASS_COUNT as f64; CLASS_COUNT];
    let target = StepTarget {
        dx: 0.4,
        dy: -0.1,
        eos: false,
        eod: false,
        class: 0,
    };
    let expected = (2.0 * PI).ln() + 2.0 * 2f64.ln();
    let mut weights = ParamStore::new();
    weights
        .insert(
            "layer0.w_input",
            Matrix::from_vec(1, 3, vec![0.3, -1.7, 0.2]).unwrap(),
        )
        .unwrap();
    weights
        .insert("layer0.bias", Matrix::from_vec(1, 1, vec![9.0]).unwrap())
        .unwrap();
    let base = prediction_loss(&[out.clone()], &[target], &weights, 0.0)
        .unwrap()
        .total();
    let shifted = prediction_loss(&[out], &[target], &weights, 0.25)
        .unwrap()
        .total();
    let max_w = max_abs_weight(&weights).unwrap().value.abs();
    let shift_error = (shifted - base - 0.25 * max_w).abs();
    outcome(
        (base - expected).abs() <= 1e-9 && (base - 3.224171).abs() < 1e-6 && shift_error < 1e-12,
        format!(
            "hand case {base:.9} vs {expected:.9}; lambda shift error {shift_error:.1e} (max |w| {max_w})"
        ),
    )
}

fn pipeline_round_trip() -> Outcome {
    let started = Instant::now();
    let (images, labels) = load_split("train");
    let mut checked = 0;
    let mut failures = Vec::new();
    for (i, (img, &label)) in images.iter().zip(&labels).enumerate().take(1100) {
        let Ok(level) = select_threshold(img) else {
            continue;
        };
        let skeleton = thin(&binarize(img, level));
        let Ok(steps) = extract_strokes(&skeleton) else {
            continue;
        };
        checked += 1;
        let rendered = render_sequence(&steps, CANVAS, CANVAS);
        let pen_down = steps.iter().filter(|s| !s.eos).count();
        let valid = StrokeSequence::new(steps, label).is_ok();
        if rendered.as_ref().ok() != Some(&skeleton) || pen_down != skeleton.ink_count() || !valid {
            failures.push(i);
        }
    }
    let elapsed = started.elapsed();
    outcome(
        checked >= 1000 && failures.is_empty() && elapsed < Duration::from_secs(60),
        format!(
            "{checked} images, {} mismatches {failures:?}, {}",
            failures.len(),
            secs(elapsed)
        ),
    )
}

fn dataset_statistic() -> Outcome {
    let started = Instant::now();
    let (images, labels) = load_split("train");
    let conversion = convert_dataset(&images, &labels).expect("conversion");
    let mean = conversion.mean_length();
    let elapsed = started.elapsed();
    outcome(
        (mean - 40.0).abs() <= 6.0 && elapsed < Duration::from_secs(300),
        format!(
            "mean length {mean:.2} over {} sequences ({} skipped), {}",
            conversion.sequences.len(),
            conversion.skipped.len(),
            secs(elapsed)
        ),
    )
}

/// Final metrics and checkpoint of one desk-scale prediction run.
struct DeskRun {
    metrics: Vec<MetricsRecord>,
    checkpoint: Checkpoint,
}

impl DeskRun {
    fn final_rmse(&self) -> f64 {
        self.metrics.last().unwrap().test_rmse
    }

    fn best_rmse(&self) -> (f64, u64) {
        self.metrics.iter().fold((f64::INFINITY, 0), |best, r| {
            if r.test_rmse < best.0 {
                (r.test_rmse, r.points)
            } else {
                best
            }
        })
    }

    /// First point count at which test RMSE is at or below `level`.
    fn reaches(&self, level: f64) -> f64 {
        self.metrics
            .iter()
            .find(|r| r.test_rmse <= level)
            .map_or(f64::INFINITY, |r| r.points as f64)
    }
}

fn desk_config(curriculum: CurriculumKind, layer: LayerKind, seed: u64) -> TrainConfig {
    TrainConfig {
        num_mixtures: 5,
        hidden: vec![64, 64],
        layer,
        batch_mode: BatchMode::Points(2000),
        budget_points: BUDGET,
        curriculum,
        seed,
        ..TrainConfig::default()
    }
}

fn desk_run(config: TrainConfig, train: &[StrokeSequence], test: &[StrokeSequence]) -> DeskRun {
    let started = Instant::now();
    let label = format!(
        "{} {} seed {}",
        config.curriculum, config.layer, config.seed
    );
    let mut trainer = Trainer::new(config, train, test).expect("trainer");
    trainer.run(&mut NoObserver).expect("training run");
    let run = DeskRun {
        metrics: trainer.metrics().to_vec(),
        checkpoint: trainer.checkpoint(),
    };
    eprintln!(
        "  {label}: final test rmse {:.4}, best {:.4}, {}",
        run.final_rmse(),
        run.best_rmse().0,
        secs(started.elapsed())
    );
    run
}

struct Experiment {
    regular: Vec<DeskRun>,
    incremental: Vec<DeskRun>,
}

fn experiment(layer: LayerKind, train: &[StrokeSequence], test: &[StrokeSequence]) -> Experiment {
    let mut regular = Vec::new();
    let mut incremental = Vec::new();
    for seed in SEEDS {
        regular.push(desk_run(
            desk_config(CurriculumKind::Regular, layer, seed),
            train,
            test,
        ));
        incremental.push(desk_run(
            desk_config(CurriculumKind::IncrementalLength, layer, seed),
            train,
            test,
        ));
    }
    Experiment {
        regular,
        incremental,
    }
}

impl Experiment {
    fn median_final(runs: &[DeskRun]) -> f64 {
        median(&runs.iter().map(DeskRun::final_rmse).collect::<Vec<_>>())
    }

    fn gap(&self) -> f64 {
        Self::median_final(&self.regular) - Self::median_final(&self.incremental)
    }
}

fn curriculum_direction(lstm: &Experiment) -> Outcome {
    let reg = Experiment::median_final(&lstm.regular);
    let isl = Experiment::median_final(&lstm.incremental);
    let mut reg_points = Vec::new();
    let mut isl_points = Vec::new();
    for (r, i) in lstm.regular.iter().zip(&lstm.incremental) {
        let (best, at) = r.best_rmse();
        reg_points.push(at as f64);
        isl_points.push(i.reaches(best));
    }
    let (reg_med, isl_med) = (median(&reg_points), median(&isl_points));
    outcome(
        isl < reg && isl_med < reg_med,
        format!(
            "median final test rmse isl {isl:.4} vs regular {reg:.4}; points to regular best: isl {isl_med} vs regular {reg_med} (per seed isl {isl_points:?}, regular {reg_points:?})"
        ),
    )
}

fn feedforward_ablation(lstm: &Experiment, ff: &Experiment) -> Outcome {
    let (gap_lstm, gap_ff) = (lstm.gap(), ff.gap());
    outcome(
        gap_ff < gap_lstm,
        format!(
            "gap ff {gap_ff:.4} < gap lstm {gap_lstm:.4} (ff medians: regular {:.4}, isl {:.4})",
            Experiment::median_final(&ff.regular),
            Experiment::median_final(&ff.incremental)
        ),
    )
}

fn loss_profile(baseline: &DeskRun, test: &[StrokeSequence]) -> Outcome {
    let ck = &baseline.checkpoint;
    let model = Model::from_params(ck.config.model_config(), ck.params.clone()).unwrap();
    let longest = test.iter().map(StrokeSequence::len).max().unwrap_or(1);
    let rows = loss_by_position(&model, &views(test), longest).expect("profile");
    let first = rows[0].mean;
    let early_min = rows[1..6]
        .iter()
        .map(|r| r.mean)
        .fold(f64::INFINITY, f64::min);
    let (sum, count) = rows[29..]
        .iter()
        .filter(|r| r.count > 0)
        .fold((0.0, 0), |(s, c), r| {
            (s + r.mean * r.count as f64, c + r.count)
        });
    let late = sum / count.max(1) as f64;
    outcome(
        first > early_min && late > early_min,
        format!(
            "position 1 {first:.4}, min of positions 2-6 {early_min:.4}, positions >= 30 {late:.4} over {count} steps"
        ),
    )
}

/// Remembers when accuracy first reaches the target and then stops the run.
struct UntilAccuracy {
    target: f64,
    reached: Option<u64>,
}

impl Observer for UntilAccuracy {
    fn on_record(&mut self, record: &MetricsRecord) -> strokeforge::Result<()> {
        if self.reached.is_none() && record.accuracy >= self.target {
            self.reached = Some(record.points);
        }
        Ok(())
    }

    fn should_stop(&self) -> bool {
        self.reached.is_some()
    }
}

fn transfer_direction(
    lstm: &Experiment,
    train: &[StrokeSequence],
    test: &[StrokeSequence],
) -> Outcome {
    let mut transfer = Vec::new();
    let mut scratch = Vec::new();
    for run in &lstm.incremental {
        let base = TrainConfig {
            budget_points: TRANSFER_BUDGET,
            ..run.checkpoint.config.clone()
        };
        for (variant, out) in [
            (TransferVariant::TransferClassOnly, &mut transfer),
            (TransferVariant::ScratchClassOnly, &mut scratch),
        ] {
            let started = Instant::now();
            let mut stop = UntilAccuracy {
                target: TARGET_ACCURACY,
                reached: None,
            };
            let metrics = transfer_run(
                Some(&run.checkpoint),
                variant,
                &base,
                train,
                test,
                &mut stop,
            )
            .expect("transfer run");
            let best = metrics.iter().map(|r| r.accuracy).fold(0.0, f64::max);
            eprintln!(
                "  {variant} seed {}: reached {:?}, best accuracy {best:.3}, {}",
                base.seed,
                stop.reached,
                secs(started.elapsed())
            );
            out.push(stop.reached.map_or(f64::INFINITY, |p| p as f64));
        }
    }
    let (t, s) = (median(&transfer), median(&scratch));
    outcome(
        t < s,
        format!(
            "median points to {TARGET_ACCURACY} accuracy: transfer {t} vs scratch {s} (per seed transfer {transfer:?}, scratch {scratch:?}; budget {TRANSFER_BUDGET})"
        ),
    )
}

/// Keeps the checkpoint taken at the end of a given epoch.
struct CaptureAt {
    epoch: u64,
    text: Option<String>,
}

impl Observer for CaptureAt {
    fn on_epoch_end(&mut self, trainer: &Trainer<'_>) -> strokeforge::Result<()> {
        if trainer.state().epoch == self.epoch {
            self.text = Some(trainer.checkpoint().to_text());
        }
        Ok(())
    }
}

fn determinism(train: &[StrokeSequence], test: &[StrokeSequence]) -> Outcome {
    let (train, test) = (&train[..200], &test[..100]);
    let config = TrainConfig {
        num_mixtures: 3,
        hidden: vec![16, 16],
        batch_mode: BatchMode::Points(500),
        budget_points: 60_000,
        eval_every: 7,
        curriculum: CurriculumKind::IncrementalLength,
        threshold: 6.0,
        seed: 11,
        ..TrainConfig::default()
    };
    let run = |observer: &mut dyn Observer| {
        let mut t = Trainer::new(config.clone(), train, test).unwrap();
        t.run(observer).unwrap();
        (
            strokeforge::trainer::metrics_csv(t.metrics()),
            t.checkpoint().params,
        )
    };
    let mut capture = CaptureAt {
        epoch: 5,
        text: None,
    };
    let (first, final_params) = run(&mut capture);
    let (second, _) = run(&mut NoObserver);
    let identical = first == second;

    let text = capture.text.expect("run reached the capture epoch");
    let ck = Checkpoint::parse(&text).unwrap();
    let cut = ck.state.last_record.unwrap();
    let mut resumed = Trainer::resume(ck, train, test).unwrap();
    resumed.run(&mut NoObserver).unwrap();
    let full = strokeforge::trainer::parse_metrics_csv(&first).unwrap();
    let mut stitched: Vec<MetricsRecord> =
        full.iter().copied().filter(|r| r.points <= cut).collect();
    stitched.extend_from_slice(resumed.metrics());
    let resumes = strokeforge::trainer::metrics_csv(&stitched) == first
        && resumed.model().params() == &final_params;
    outcome(
        identical && resumes,
        format!(
            "reruns identical: {identical}; resume from epoch 5 matches: {resumes} ({} records)",
            full.len()
        ),
    )
}

fn invariant_sweeps() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut mdn_bad = 0;
    for _ in 0..10_000 {
        let m = rng.random_range(1..=20);
        let spread = [1.0, 10.0, 100.0][rng.random_range(0..3)];
        let raw: Vec<f64> = (0..6 * m + 2 + CLASS_COUNT)
            .map(|_| rng.random_range(-spread..spread))
            .collect();
        let o = mdn_transform(&raw, m).expect("transform");
        let ok = (o.pi.iter().sum::<f64>() - 1.0).abs() <= 1e-9
            && o.pi.iter().all(|&p| (0.0..=1.0).contains(&p))
            && (o.class_p.iter().sum::<f64>() - 1.0).abs() <= 1e-9
            && o.sigma_x.iter().chain(&o.sigma_y).all(|&s| s > 0.0)
            && o.rho.iter().all(|&r| r.abs() < 1.0)
            && (0.0..=1.0).contains(&o.eos_p)
            && (0.0..=1.0).contains(&o.eod_p);
        mdn_bad += usize::from(!ok);
    }

    let mut curriculum_bad = 0;
    for trial in 0..1000 {
        let n = rng.random_range(1..40);
        let data: Vec<StrokeSequence> = (0..n)
            .map(|i| {
                let len = rng.random_range(1..70);
                random_sequence(&mut rng, len, (i % 10) as u8)
            })
            .collect();
        let kind = CurriculumKind::ALL[trial % 4];
        let mut state = CurriculumState::new(kind, &data, trial as u64);
        let mut prev = state.limit();
        let mut ok = true;
        for epoch in 0..rng.random_range(1..40u64) {
            let rmse = rng.random_range(0.0..8.0);
            state.on_epoch_end(rmse, epoch);
            let now = state.limit();
            ok &= now >= prev && now <= state.maximum();
            ok &= now == prev || now == prev.saturating_mul(2).min(state.maximum());
            prev = now;
        }
        if state.is_saturated() {
            let view = state.view(&data);
            ok &= view.len() == data.len()
                && view.iter().zip(&data).all(|(v, d)| v.steps == d.steps());
        }
        curriculum_bad += usize::from(!ok);
    }

    let mut worst: f64 = 0.0;
    for sigma in [0.5, 1.0, 2.0] {
        for rho in [-0.9, 0.0, 0.9] {
            let half = 8.0 * sigma;
            let n = 1600;
            let h = 2.0 * half / n as f64;
            let mut total = 0.0;
            for i in 0..=n {
                let x = -half + i as f64 * h;
                let wx = if i == 0 || i == n { 0.5 } else { 1.0 };
                for j in 0..=n {
                    let y = -half + j as f64 * h;
                    let wy = if j == 0 || j == n { 0.5 } else { 1.0 };
                    total +=
                        wx * wy * bivariate_density(x, y, 0.0, 0.0, sigma, sigma, rho).unwrap();
                }
            }
            worst = worst.max((total * h * h - 1.0).abs());
        }
    }
    outcome(
        mdn_bad == 0 && curriculum_bad == 0 && worst <= 1e-3,
        format!(
            "mdn violations {mdn_bad}/10000, curriculum violations {curriculum_bad}/1000, worst quadrature error {worst:.1e}"
        ),
    )
}

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("STROKEFORGE_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let strict = std::env::var_os("STROKEFORGE_ACCEPTANCE_STRICT").is_some();
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let names = [
        "gradient fidelity",
        "loss oracle",
        "pipeline round trip",
        "dataset statistic",
        "curriculum direction",
        "feed-forward ablation",
        "loss-by-position shape",
        "transfer direction",
        "determinism and persistence",
        "invariant sweeps",
    ];
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |n: usize, o: Outcome| {
        println!(
            "{} criterion {n} ({}): {}",
            if o.pass { "PASS" } else { "FAIL" },
            names[n - 1],
            o.detail
        );
        results.push((n, o));
    };

    if wanted(1) {
        report(1, gradient_fidelity());
    }
    if wanted(2) {
        report(2, loss_oracle());
    }
    if wanted(3) {
        report(3, pipeline_round_trip());
    }
    if wanted(4) {
        report(4, dataset_statistic());
    }
    let needs_data = [5, 6, 7, 8, 9].into_iter().any(wanted);
    if needs_data {
        let train = first_sequences("train", TRAIN_SEQUENCES);
        let test = first_sequences("t10k", TEST_SEQUENCES);
        if wanted(9) {
            report(9, determinism(&train, &test));
        }
        if [5, 6, 7, 8].into_iter().any(wanted) {
            eprintln!("desk experiment, lstm");
            let lstm = experiment(LayerKind::Recurrent, &train, &test);
            if wanted(5) {
                report(5, curriculum_direction(&lstm));
            }
            if wanted(6) {
                eprintln!("desk experiment, feed-forward");
                let ff = experiment(LayerKind::Feedforward, &train, &test);
                report(6, feedforward_ablation(&lstm, &ff));
            }
            if wanted(7) {
                report(7, loss_profile(&lstm.regular[0], &test));
            }
            if wanted(8) {
                eprintln!("transfer runs");
                report(8, transfer_direction(&lstm, &train, &test));
            }
        }
    }
    if wanted(10) {
        report(10, invariant_sweeps());
    }

    let failed: Vec<usize> = results
        .iter()
        .filter(|(_, o)| !o.pass)
        .map(|(n, _)| *n)
        .collect();
    println!(
        "acceptance: {} passed, {} failed {failed:?}",
        results.len() - failed.len(),
        failed.len()
    );
    if strict && !failed.is_empty() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
