//! Acceptance suite: one test per release criterion, each printing a
//! pass/fail line (visible with `cargo test --test acceptance -- --nocapture`)
//! and enforcing its runtime budget.

use std::time::Instant;

use augvr_core::{
    ancova_estimate, contraction_gap, cuped_estimate, fit_prior, gen_ana_population,
    gen_experiment, naive_delta, significance_scorecard, theta_max_corr, theta_min_error, AnaPrior,
    AnaScenario, AncovaVariant, Assignment, BootstrapConfig, ColumnKind, ColumnSchema,
    DecomposedDeltaRecord, ExperimentData, Mat2, MetricSpec, OutcomeDist, SimScenario,
};
use augvr_core::{parallel, posterior, rng, stats};
use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// The empirically fitted effect and mean-noise covariances used as the
/// canonical generative model throughout this suite.
const LAMBDA: [[f64; 2]; 2] = [[0.576, -0.896], [-0.896, 4.329]];
const SIGMA: [[f64; 2]; 2] = [[4.020, 0.169], [0.169, 0.811]];

fn report(number: u32, name: &str, ok: bool, detail: &str, start: Instant, budget_s: f64) {
    let elapsed = start.elapsed().as_secs_f64();
    let in_budget = elapsed <= budget_s;
    println!(
        "acceptance {number:02} {name}: {} ({detail}; {elapsed:.1}s of {budget_s:.0}s budget)",
        if ok && in_budget { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {number} failed: {detail}");
    assert!(
        in_budget,
        "criterion {number} exceeded its runtime budget: {elapsed:.1}s > {budget_s}s"
    );
}

fn schema_yx() -> ColumnSchema {
    [
        ("y".to_string(), ColumnKind::Outcome),
        ("x".to_string(), ColumnKind::PrePeriod),
    ]
    .into_iter()
    .collect()
}

fn ref_prior() -> AnaPrior {
    AnaPrior::new(LAMBDA, SIGMA, 25).unwrap()
}

fn ref_scenario(n_experiments: usize, seed: u64) -> AnaScenario {
    AnaScenario {
        n_experiments,
        lambda: Mat2(LAMBDA),
        sigma: Mat2(SIGMA),
        sigma_dispersion: 0.0,
        seed,
    }
}

#[test]
fn acceptance_01_variance_reduction_factor() {
    let start = Instant::now();
    let reps = 1000;
    let boot = BootstrapConfig::default();
    let results = parallel::map_indexed(reps, |i| {
        let scenario = SimScenario {
            n_units: 100_000,
            p_treatment: 0.5,
            rho_pre: 0.8,
            true_delta: 0.0,
            outcome_dist: OutcomeDist::Normal { mu: 0.0, sd: 1.0 },
            seed: 100_000 + i as u64,
        };
        let data = gen_experiment(&scenario).unwrap();
        let res = cuped_estimate(
            &data,
            &MetricSpec::mean("y"),
            &[MetricSpec::mean("x_pre")],
            &boot,
        )
        .unwrap();
        let naive = naive_delta(&data, &MetricSpec::mean("y"), &boot).unwrap();
        (
            res.variance_reduction_factor,
            naive.estimate,
            res.delta.estimate,
        )
    });
    let mean_factor = results.iter().map(|r| r.0).sum::<f64>() / reps as f64;
    // Cross-replication empirical variances, for the record.
    let naive_series: Vec<f64> = results.iter().map(|r| r.1).collect();
    let cuped_series: Vec<f64> = results.iter().map(|r| r.2).collect();
    let empirical_ratio =
        stats::sample_variance(&cuped_series) / stats::sample_variance(&naive_series);

    let ok = (0.34..=0.38).contains(&mean_factor);
    report(
        1,
        "variance_reduction_factor",
        ok,
        &format!(
            "mean per-replication Var[cuped]/Var[naive] = {mean_factor:.4}, \
             cross-replication ratio = {empirical_ratio:.4}, target [0.34, 0.38]"
        ),
        start,
        120.0,
    );
}

/// Heterogeneous-covariance dataset: different outcome slopes per group,
/// unequal allocation.
fn heterogeneous_dataset(seed: u64, n: usize, p: f64) -> ExperimentData {
    let mut r = rng::stream(seed, 0);
    let mut assignments = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    for _ in 0..n {
        let xv: f64 = StandardNormal.sample(&mut r);
        let noise: f64 = StandardNormal.sample(&mut r);
        let treated = r.gen_range(0.0..1.0) < p;
        let slope = if treated { 1.5 } else { 0.5 };
        let shift = if treated { 0.3 } else { 0.0 };
        assignments.push(if treated {
            Assignment::Treatment
        } else {
            Assignment::Control
        });
        x.push(xv);
        y.push(shift + slope * xv + noise);
    }
    let unit_ids: Vec<String> = (0..n).map(|i| format!("u{i}")).collect();
    let columns: IndexMap<String, Vec<f64>> = [("y".to_string(), y), ("x".to_string(), x)]
        .into_iter()
        .collect();
    ExperimentData::from_columns(
        format!("het-{seed}"),
        schema_yx(),
        unit_ids,
        assignments,
        columns,
    )
    .unwrap()
}

#[test]
fn acceptance_02_cuped_ancova2_equivalence() {
    let start = Instant::now();
    let seeds = 100;
    let boot = BootstrapConfig::default();
    let outcomes = parallel::map_indexed(seeds, |s| {
        let data = heterogeneous_dataset(7_000 + s as u64, 100_000, 0.3);
        let cuped = cuped_estimate(
            &data,
            &MetricSpec::mean("y"),
            &[MetricSpec::mean("x")],
            &boot,
        )
        .unwrap()
        .delta
        .estimate;
        let a2 = ancova_estimate(&data, "y", "x", AncovaVariant::Ancova2)
            .unwrap()
            .estimate;
        let a1 = ancova_estimate(&data, "y", "x", AncovaVariant::Ancova1)
            .unwrap()
            .estimate;
        let tol = 1e-2
            * naive_delta(&data, &MetricSpec::mean("y"), &boot)
                .unwrap()
                .se();
        ((cuped - a2).abs() < tol, (cuped - a1).abs() >= tol)
    });
    let a2_close = outcomes.iter().filter(|o| o.0).count();
    let a1_far = outcomes.iter().filter(|o| o.1).count();
    let ok = a2_close >= 95 && a1_far >= 50;
    report(
        2,
        "cuped_ancova2_equivalence",
        ok,
        &format!(
            "|cuped-ancova2| < 1e-2*SE in {a2_close}/100 (need >=95); \
             ancova1 misses in {a1_far}/100 (need >=50)"
        ),
        start,
        120.0,
    );
}

/// Equal group sizes with matched within-group covariate second moments
/// (control covariate is a constant shift of the treatment covariate). In
/// this design the p = 0.5 equivalence of the two regression adjustments is
/// exact finite-sample algebra, not just asymptotics, while the covariate
/// adjustment itself stays non-trivial (group covariate means differ).
fn matched_moment_dataset(seed: u64, n_per_group: usize) -> ExperimentData {
    let mut r = rng::stream(seed, 0);
    let xt: Vec<f64> = (0..n_per_group).map(|_| r.gen_range(-3.0..3.0)).collect();
    let mut unit_ids = Vec::new();
    let mut assignments = Vec::new();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, &xv) in xt.iter().enumerate() {
        unit_ids.push(format!("t{i}"));
        assignments.push(Assignment::Treatment);
        x.push(xv);
        y.push(1.7 * xv + r.gen_range(-1.0..1.0));
    }
    for (i, &xv) in xt.iter().enumerate() {
        unit_ids.push(format!("c{i}"));
        assignments.push(Assignment::Control);
        x.push(xv + 1.5);
        y.push(0.4 * xv + r.gen_range(-1.0..1.0));
    }
    let columns: IndexMap<String, Vec<f64>> = [("y".to_string(), y), ("x".to_string(), x)]
        .into_iter()
        .collect();
    ExperimentData::from_columns(
        format!("mm-{seed}"),
        schema_yx(),
        unit_ids,
        assignments,
        columns,
    )
    .unwrap()
}

#[test]
fn acceptance_03_ancova1_equals_ancova2_at_half() {
    let start = Instant::now();
    let boot = BootstrapConfig::default();
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let data = matched_moment_dataset(seed, 100 + (seed as usize % 50));
        let a1 = ancova_estimate(&data, "y", "x", AncovaVariant::Ancova1).unwrap();
        let a2 = ancova_estimate(&data, "y", "x", AncovaVariant::Ancova2).unwrap();
        // The adjustment is live (group covariate means differ by 1.5), so
        // this is not the trivial zero-adjustment case.
        let naive = naive_delta(&data, &MetricSpec::mean("y"), &boot)
            .unwrap()
            .estimate;
        assert!(
            (a1.estimate - naive).abs() > 0.1,
            "covariate adjustment should move the estimate"
        );
        worst = worst.max((a1.estimate - a2.estimate).abs());
    }
    // Degenerate covariate: both collapse to the plain difference in means.
    let degenerate = {
        let n = 40;
        let mut r = rng::stream(9, 0);
        let unit_ids: Vec<String> = (0..n).map(|i| format!("u{i}")).collect();
        let assignments: Vec<Assignment> = (0..n)
            .map(|i| {
                if i % 2 == 0 {
                    Assignment::Treatment
                } else {
                    Assignment::Control
                }
            })
            .collect();
        let y: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let x = vec![2.0; n];
        let columns: IndexMap<String, Vec<f64>> = [("y".to_string(), y), ("x".to_string(), x)]
            .into_iter()
            .collect();
        ExperimentData::from_columns("deg", schema_yx(), unit_ids, assignments, columns).unwrap()
    };
    let d1 = ancova_estimate(&degenerate, "y", "x", AncovaVariant::Ancova1).unwrap();
    let d2 = ancova_estimate(&degenerate, "y", "x", AncovaVariant::Ancova2).unwrap();
    let degenerate_gap = (d1.estimate - d2.estimate).abs();

    let ok = worst < 1e-8 && degenerate_gap < 1e-8;
    report(
        3,
        "ancova1_equals_ancova2_at_p_half",
        ok,
        &format!(
            "max |ancova1-ancova2| = {worst:.2e} over 100 equal-size moment-matched \
             datasets (tolerance 1e-8); degenerate-covariate gap {degenerate_gap:.2e}"
        ),
        start,
        1.0,
    );
}

#[test]
fn acceptance_04_bayesian_contraction() {
    let start = Instant::now();
    let prior = ref_prior();
    let reference_gap = contraction_gap(&prior, &Mat2(SIGMA));

    let mut r = rng::stream(44, 0);
    let mut min_gap = f64::INFINITY;
    let mut strict = 0usize;
    let mut non_degenerate = 0usize;
    for _ in 0..1000 {
        let gl = Mat2([
            [r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)],
            [r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)],
        ]);
        let gs = Mat2([
            [r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)],
            [r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)],
        ]);
        let lambda = gl.matmul(&gl.transpose());
        let sigma = gs.matmul(&gs.transpose());
        let p = AnaPrior::new(lambda.0, sigma.0, 2).unwrap();
        let gap = contraction_gap(&p, &sigma);
        min_gap = min_gap.min(gap);
        if lambda.max_abs() > 1e-9 && sigma.det() > 1e-9 {
            non_degenerate += 1;
            if gap > 0.0 {
                strict += 1;
            }
        }
    }
    let ok = reference_gap > 0.0 && min_gap >= -1e-12 && strict == non_degenerate;
    report(
        4,
        "bayesian_contraction",
        ok,
        &format!(
            "reference gap = {reference_gap:.4} (> 0); min random gap = {min_gap:.2e} \
             (>= -1e-12); strict positivity {strict}/{non_degenerate} non-degenerate draws"
        ),
        start,
        10.0,
    );
}

#[test]
fn acceptance_05_proxy_coefficient_optimality() {
    let start = Instant::now();
    let population = gen_ana_population(&ref_scenario(100_000, 55)).unwrap();
    let truth_total: Vec<f64> = population
        .truths
        .iter()
        .map(|t| t.delta[0] + t.delta[1])
        .collect();
    let d1: Vec<f64> = population.records.iter().map(|r| r.delta[0]).collect();
    let d2: Vec<f64> = population.records.iter().map(|r| r.delta[1]).collect();

    let mse = |theta: f64| -> f64 {
        truth_total
            .iter()
            .zip(d1.iter().zip(&d2))
            .map(|(t, (a, b))| {
                let proxy = b + theta * a;
                (t - proxy) * (t - proxy)
            })
            .sum::<f64>()
            / truth_total.len() as f64
    };
    let corr = |theta: f64| -> f64 {
        let proxy: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| b + theta * a).collect();
        stats::sample_correlation(&truth_total, &proxy)
    };

    let prior = ref_prior();
    let te = theta_min_error(&prior, &Mat2(SIGMA)).unwrap().theta;
    let tc = theta_max_corr(&prior, &Mat2(SIGMA)).unwrap().theta;

    let mse_ok = mse(te) <= mse(te - 0.05) && mse(te) <= mse(te + 0.05);
    let corr_ok = corr(tc) >= corr(tc - 0.05) && corr(tc) >= corr(tc + 0.05);
    report(
        5,
        "proxy_coefficient_optimality",
        mse_ok && corr_ok,
        &format!(
            "MSE({te:.4}) = {:.5} vs {:.5}/{:.5} at +-0.05; \
             corr({tc:.4}) = {:.5} vs {:.5}/{:.5} at +-0.05; 1e5 paired draws",
            mse(te),
            mse(te - 0.05),
            mse(te + 0.05),
            corr(tc),
            corr(tc - 0.05),
            corr(tc + 0.05)
        ),
        start,
        60.0,
    );
}

#[test]
fn acceptance_06_cuped_reduction() {
    let start = Instant::now();
    let mut r = rng::stream(66, 0);
    let mut ok = true;
    for _ in 0..200 {
        // lambda11 = 0 forces lambda12 = 0 for a PSD matrix.
        let lambda = [[0.0, 0.0], [0.0, r.gen_range(0.0..5.0)]];
        let g = Mat2([
            [r.gen_range(0.2..2.0), r.gen_range(-1.0..1.0)],
            [r.gen_range(-1.0..1.0), r.gen_range(0.2..2.0)],
        ]);
        let sigma = g.matmul(&g.transpose());
        let prior = AnaPrior::new(lambda, SIGMA, 2).unwrap();
        let theta = theta_min_error(&prior, &sigma).unwrap().theta;
        let expected = -sigma.get(0, 1) / sigma.get(0, 0);
        if theta.to_bits() != expected.to_bits() {
            ok = false;
            break;
        }
    }
    report(
        6,
        "cuped_reduction",
        ok,
        "lambda11 = 0 gives theta_min_error == -sigma12/sigma11 bit-exactly over 200 draws",
        start,
        1.0,
    );
}

#[test]
fn acceptance_07_rescaled_posterior_identity() {
    let start = Instant::now();
    let mut r = rng::stream(77, 0);
    let mut checked = 0usize;
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let gl = Mat2([
            [r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)],
            [r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)],
        ]);
        let lambda = gl.matmul(&gl.transpose());
        let gs = Mat2([
            [r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)],
            [r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)],
        ]);
        let sigma = gs.matmul(&gs.transpose()).add(&Mat2::IDENTITY.scale(0.05));
        let prior = AnaPrior::new(lambda.0, sigma.0, 2).unwrap();
        let Ok(t) = theta_max_corr(&prior, &sigma) else {
            continue;
        };
        let rec = DecomposedDeltaRecord::new(format!("r{i}"), [0.1, 0.2], sigma.0).unwrap();
        let post = posterior(&prior, &rec).unwrap();
        let ratio = post.weights[0] / post.weights[1];
        let err = (t.theta - ratio).abs() / (1.0 + ratio.abs());
        worst = worst.max(err);
        checked += 1;
    }
    let ok = worst <= 1e-8 && checked >= 990;
    report(
        7,
        "rescaled_posterior_identity",
        ok,
        &format!("worst relative |theta_max_corr - w1/w2| = {worst:.2e} over {checked} draws"),
        start,
        10.0,
    );
}

#[test]
fn acceptance_08_scorecard_pattern() {
    let start = Instant::now();
    let reps = 500;
    let outcomes = parallel::map_indexed(reps, |rep| {
        let population = gen_ana_population(&ref_scenario(25, 900_000 + rep as u64)).unwrap();
        let prior = fit_prior(&population.records).unwrap();
        let card = significance_scorecard(&population.records, &prior, 0.05).unwrap();
        let c = card.counts;
        (
            c.ana_min_err >= c.naive,
            c.ana_max_corr >= c.naive,
            c.delta1 <= c.naive,
        )
    });
    let err_ge = outcomes.iter().filter(|o| o.0).count();
    let corr_ge = outcomes.iter().filter(|o| o.1).count();
    let d1_le = outcomes.iter().filter(|o| o.2).count();
    let ok = err_ge * 10 >= reps * 9 && corr_ge * 10 >= reps * 9 && d1_le * 10 >= reps * 8;
    report(
        8,
        "scorecard_pattern",
        ok,
        &format!(
            "ana_err >= naive in {err_ge}/{reps} (need >=450); \
             ana_corr >= naive in {corr_ge}/{reps} (need >=450); \
             delta1 <= naive in {d1_le}/{reps} (need >=400)"
        ),
        start,
        300.0,
    );
}

#[test]
fn acceptance_09_prior_recovery() {
    let start = Instant::now();
    let population = gen_ana_population(&ref_scenario(5000, 99)).unwrap();
    let prior = fit_prior(&population.records).unwrap();
    let target = Mat2(LAMBDA);
    let floor = 0.1 * target.max_abs();
    let mut worst_excess = f64::NEG_INFINITY;
    let mut ok = true;
    for i in 0..2 {
        for j in 0..2 {
            let err = (prior.lambda().get(i, j) - target.get(i, j)).abs();
            let tol = (0.1 * target.get(i, j).abs()).max(floor);
            worst_excess = worst_excess.max(err - tol);
            ok &= err <= tol;
        }
    }
    report(
        9,
        "prior_recovery",
        ok,
        &format!(
            "fitted lambda = {:?}; worst (error - tolerance) = {worst_excess:.3} (must be <= 0)",
            prior.lambda()
        ),
        start,
        30.0,
    );
}
