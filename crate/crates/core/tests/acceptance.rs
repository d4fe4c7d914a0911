//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trafficlens::config::{ExtractionConfig, RunConfig};
use trafficlens::dataset::{stratified_split, LabeledData};
use trafficlens::evalkit::{
    default_profiles, fraction_above, ks_uniform, EvalReport, DEFAULT_ECE_BINS,
};
use trafficlens::features::{band_features, feature_names, swt_haar, DetailStdMode, FEATURE_DIM};
use trafficlens::model::{Model, WindowScore};
use trafficlens::ood::{covariance_set, kde_tail_p, MahalanobisMetric};
use trafficlens::pipeline::fit_model;
use trafficlens::protonet::{Network, TrainConfig};

const WINDOWS_PER_CLASS: usize = 1000;
const GENERATION_SEED: u64 = 7;
const SPLIT_SEED: u64 = 11;
const HELD_OUT: &str = "VOIP";

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn report(n: u32, name: &str, elapsed: Duration, o: &Outcome) -> bool {
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    println!(
        "criterion {n} {verdict} {name}: {} [{:.1}s]",
        o.detail,
        elapsed.as_secs_f64()
    );
    o.pass
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn feature_fidelity() -> Outcome {
    let names = feature_names();
    let net = Network::new(
        &TrainConfig::default().layer_dims,
        0.25,
        &mut ChaCha8Rng::seed_from_u64(0),
    );
    let data =
        common::synthetic_dataset(&default_profiles()[..1], 5, &ExtractionConfig::default(), 0);
    let dims_ok = data.rows.iter().all(|r| r.len() == 129);
    let order_ok = names.len() == 129
        && names[0] == "total_forward"
        && names[5] == "fiat_mean"
        && names[24] == "idle_std"
        && names[25] == "rel_energy_forward_0"
        && names[77] == "rel_energy_backward_0"
        && names[128] == "log_std_detail_backward_12";
    let params = net.parameter_count();
    outcome(
        FEATURE_DIM == 129 && dims_ok && order_ok && params == 20_800,
        format!("dim {FEATURE_DIM}, canonical order {order_ok}, parameters {params}"),
    )
}

fn wavelet_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // The transform is linear, so rounding differences between two exact
    // summation orders grow with the input; errors are measured relative to
    // each signal's peak magnitude.
    let mut worst: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    let mut shift_failures = 0;
    let signals = 1000;
    for i in 0..signals {
        let n = [8usize, 16, 32, 64][i % 4];
        let bands = n.trailing_zeros() as usize + 1;
        let x: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.5) {
                    rng.random_range(0.0..1500.0)
                } else {
                    0.0
                }
            })
            .collect();
        let d = swt_haar(&x, bands).unwrap();
        let oracle = common::atrous_oracle(&x, bands);
        let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (k, band) in oracle.iter().enumerate() {
            for (t, v) in band.iter().enumerate() {
                let err = (d.get(t, k) - v).abs();
                worst_abs = worst_abs.max(err);
                worst = worst.max(err / scale);
            }
        }
        let base = band_features(&d, DetailStdMode::default());
        for s in 1..n {
            let mut y = x.clone();
            y.rotate_right(s);
            if band_features(&swt_haar(&y, bands).unwrap(), DetailStdMode::default()) != base {
                shift_failures += 1;
            }
        }
    }
    outcome(
        worst <= 1e-12 && shift_failures == 0,
        format!(
            "{signals} signals, max |swt - oracle| / max|x| {worst:.2e} (absolute {worst_abs:.2e}), inexact shifted feature sets {shift_failures}"
        ),
    )
}

fn gradient_check() -> Outcome {
    let errors: Vec<f64> = (0..8).map(common::gradient_check).collect();
    let worst = errors.iter().copied().fold(0.0, f64::max);
    outcome(
        worst < 1e-4,
        format!("max relative error {worst:.2e} over {} seeds", errors.len()),
    )
}

fn to_matrix(rows: &[Vec<f64>]) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

fn ood_math() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut maha: f64 = 0.0;
    for t in 0..500 {
        let n = 2 + t % 15;
        let cov = common::random_spd(&mut rng, n);
        let inv = common::gauss_jordan_inverse(&cov);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mu: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let want = common::quadratic_form(&inv, &x, &mu);
        let got = MahalanobisMetric::new(&to_matrix(&cov))
            .unwrap()
            .squared(&x, &mu);
        maha = maha.max((got - want).abs() / want.max(1.0));
    }
    let mut kde = (kde_tail_p(&[-1.0, 0.0, 2.0], 0.5, 0.3)
        - common::kde_tail_quadrature(&[-1.0, 0.0, 2.0], 0.5, 0.3))
    .abs();
    for _ in 0..100 {
        let n = rng.random_range(2..40);
        let pts: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let h = rng.random_range(0.05..2.0);
        let r = rng.random_range(-6.0..6.0);
        kde = kde.max((kde_tail_p(&pts, h, r) - common::kde_tail_quadrature(&pts, h, r)).abs());
    }
    let mut cov_err: f64 = 0.0;
    for _ in 0..20 {
        let dim = rng.random_range(2..8);
        let grouped: Vec<Vec<Vec<f64>>> = (0..rng.random_range(2..5))
            .map(|_| {
                (0..rng.random_range(2..15))
                    .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
                    .collect()
            })
            .collect();
        let set = covariance_set(&grouped).unwrap();
        let all: Vec<&Vec<f64>> = grouped.iter().flatten().collect();
        let global = common::mean_oracle(&all);
        let total = common::scatter_oracle(&all, &global, all.len() as f64);
        let mut pooled = vec![vec![0.0; dim]; dim];
        for (k, g) in grouped.iter().enumerate() {
            let rows: Vec<&Vec<f64>> = g.iter().collect();
            let mu = common::mean_oracle(&rows);
            let own = common::scatter_oracle(&rows, &mu, rows.len() as f64);
            let part = common::scatter_oracle(&rows, &mu, all.len() as f64);
            for i in 0..dim {
                for j in 0..dim {
                    cov_err = cov_err.max((set.per_class[k][(i, j)] - own[i][j]).abs());
                    pooled[i][j] += part[i][j];
                }
            }
        }
        for i in 0..dim {
            for j in 0..dim {
                cov_err = cov_err.max((set.pooled[(i, j)] - pooled[i][j]).abs());
                cov_err = cov_err.max((set.total[(i, j)] - total[i][j]).abs());
            }
        }
    }
    outcome(
        maha <= 1e-8 && kde <= 1e-8 && cov_err <= 1e-10,
        format!("Mahalanobis rel err {maha:.2e} (500 SPD), KDE tail err {kde:.2e}, covariance err {cov_err:.2e}"),
    )
}

/// Training and test parts of one synthetic dataset.
struct Split {
    train: LabeledData,
    test: LabeledData,
}

fn split(data: &LabeledData) -> Split {
    let (train, test) = stratified_split(&data.labels, 0.2, SPLIT_SEED);
    Split {
        train: data.subset(&train),
        test: data.subset(&test),
    }
}

fn run_config() -> RunConfig {
    let mut config = RunConfig::default();
    config.train.n_episodes = 2000;
    config
}

fn evaluate(model: &Model, test: &LabeledData) -> (EvalReport, Vec<WindowScore>) {
    let scores = model.score_all(&test.rows).unwrap();
    let predicted: Vec<usize> = scores.iter().map(|s| s.class).collect();
    let confidence: Vec<f64> = scores.iter().map(|s| s.confidence).collect();
    let report = EvalReport::new(
        model.class_names.clone(),
        &test.labels,
        &predicted,
        &confidence,
        DEFAULT_ECE_BINS,
    )
    .unwrap();
    (report, scores)
}

/// Rows of `data` whose class is not `class`, relabeled densely.
fn without_class(data: &LabeledData, class: usize) -> LabeledData {
    let keep: Vec<usize> = (0..data.len())
        .filter(|&i| data.labels[i] != class)
        .collect();
    let mut out = data.subset(&keep);
    out.labels = out
        .labels
        .iter()
        .map(|&y| if y > class { y - 1 } else { y })
        .collect();
    out.classes.remove(class);
    out
}

fn rows_of_class(data: &LabeledData, class: usize) -> Vec<Vec<f64>> {
    (0..data.len())
        .filter(|&i| data.labels[i] == class)
        .map(|i| data.rows[i].clone())
        .collect()
}

fn main() {
    let mut all_pass = true;
    let mut check = |n: u32, name: &str, f: &dyn Fn() -> Outcome| {
        let (o, t) = timed(f);
        all_pass &= report(n, name, t, &o);
    };
    check(1, "feature fidelity", &feature_fidelity);
    check(2, "wavelet oracle", &wavelet_oracle);
    check(3, "gradient check", &gradient_check);
    check(4, "Mahalanobis/OOD math", &ood_math);

    let profiles = default_profiles();
    let extraction = ExtractionConfig::default();
    let (data, t_data) = timed(|| {
        common::synthetic_dataset(&profiles, WINDOWS_PER_CLASS, &extraction, GENERATION_SEED)
    });
    let parts = split(&data);
    let config = run_config();
    println!(
        "dataset: {} classes x {} windows, {} train / {} test, extracted in {:.1}s",
        data.classes.len(),
        WINDOWS_PER_CLASS,
        parts.train.len(),
        parts.test.len(),
        t_data.as_secs_f64()
    );

    // 5: end-to-end classification.
    let (model, t_fit) = timed(|| fit_model(&parts.train, &config).unwrap());
    let (full, full_scores) = evaluate(&model, &parts.test);
    let o = outcome(
        full.micro_f1 >= 0.90 && full.ece <= 0.10 && t_fit <= Duration::from_secs(600),
        format!(
            "micro-F1 {:.4}, ECE {:.4}, fit {:.1}s on {} windows",
            full.micro_f1,
            full.ece,
            t_fit.as_secs_f64(),
            parts.train.len()
        ),
    );
    all_pass &= report(5, "end-to-end classification", t_fit, &o);

    // 6: held-out class, before and after it joins the training data.
    let held = data.classes.iter().position(|c| c == HELD_OUT).unwrap();
    let (before, t_6) = timed(|| {
        let reduced = fit_model(&without_class(&parts.train, held), &config).unwrap();
        let scores = reduced
            .score_all(&rows_of_class(&parts.test, held))
            .unwrap();
        fraction_above(
            &scores.iter().map(|s| s.ood_score).collect::<Vec<_>>(),
            0.95,
        )
    });
    let held_scores: Vec<f64> = (0..parts.test.len())
        .filter(|&i| parts.test.labels[i] == held)
        .map(|i| full_scores[i].ood_score)
        .collect();
    let after = fraction_above(&held_scores, 0.95);
    let o = outcome(
        before >= 0.6 && after < 0.3,
        format!("{HELD_OUT} above 0.95: {before:.3} unseen, {after:.3} after retraining with it"),
    );
    all_pass &= report(6, "OOD detection", t_6, &o);

    // 7: in-distribution uniformity on a 500-window holdout (100 per class).
    let (_, probe) = stratified_split(&parts.test.labels, 0.5, SPLIT_SEED);
    let ood: Vec<f64> = probe.iter().map(|&i| full_scores[i].ood_score).collect();
    let chi: Vec<f64> = probe.iter().map(|&i| full_scores[i].chi2_score).collect();
    let ks = ks_uniform(&ood);
    let bimodal = chi.iter().filter(|&&c| c <= 0.05 || c >= 0.95).count() as f64 / chi.len() as f64;
    let o = outcome(
        probe.len() == 500 && ks < 0.1 && bimodal >= 0.7,
        format!(
            "{} windows: KS {ks:.4}, fraction above 0.95 {:.3}, chi2 mass at the ends {bimodal:.3}",
            probe.len(),
            fraction_above(&ood, 0.95)
        ),
    );
    all_pass &= report(7, "in-distribution score uniformity", Duration::ZERO, &o);

    // 8: padded sizes.
    let (masked, t_8) = timed(|| {
        let masked_extraction = ExtractionConfig {
            mask_sizes: Some(1500),
            ..extraction
        };
        let data = common::synthetic_dataset(
            &profiles,
            WINDOWS_PER_CLASS,
            &masked_extraction,
            GENERATION_SEED,
        );
        let parts = split(&data);
        let mut config = run_config();
        config.extraction = masked_extraction;
        let model = fit_model(&parts.train, &config).unwrap();
        evaluate(&model, &parts.test).0
    });
    let drop = full.micro_f1 - masked.micro_f1;
    let o = outcome(
        drop < 0.05,
        format!(
            "micro-F1 {:.4} masked vs {:.4} unmasked (drop {drop:.4})",
            masked.micro_f1, full.micro_f1
        ),
    );
    all_pass &= report(8, "padded-size robustness", t_8, &o);

    // 9: determinism and persistence.
    let (o, t_9) = timed(|| {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        model.save(&a).unwrap();
        fit_model(&parts.train, &config).unwrap().save(&b).unwrap();
        let identical = std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap();
        let loaded = Model::load(&a).unwrap();
        let resaved = dir.path().join("c.json");
        loaded.save(&resaved).unwrap();
        let reloaded = Model::load(&resaved).unwrap();
        let probe = &parts.test.rows[..100];
        let same = model.score_all(probe).unwrap() == reloaded.score_all(probe).unwrap();
        outcome(
            identical && same,
            format!("retrained model bytes identical {identical}, predictions after load/save identical on 100 windows {same}"),
        )
    });
    all_pass &= report(9, "determinism and persistence", t_9, &o);

    if !all_pass {
        std::process::exit(1);
    }
}
