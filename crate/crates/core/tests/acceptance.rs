//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::Rng;

use tdp_core::attacks::{
    baseline_singling_out, distinguishing_protection, nn_attribute_attack, net_attack, non_private_distinguishing,
    NetReading, NetSpec, SINGLING_OUT_SCALES,
};
use tdp_core::calculus::{max_feasible_b, switch_to_classic, BaseBudget, SplitBudget, TdpBudget};
use tdp_core::data::{clip_rows_to_unit_ball, RecordMatrix};
use tdp_core::experiment::{run_sweep, ExperimentConfig, Grid};
use tdp_core::linalg::relative_frobenius;
use tdp_core::mondrian::{mondrian_anonymize, verify_k_anonymity, AnonymityParams};
use tdp_core::projection::{
    covariance_sigma, delta_convention, gaussian_matrix, partition_rows, privatize_partitioned_with,
    privatize_traced, privatize_with, projection_sigma, symmetric_gaussian, NoiseMode,
};
use tdp_core::synth::{sample_moments, synth_classification_dataset, synth_regression_dataset, SynthSpec};
use tdp_core::targeting::{
    eligibility_by_percentile, exclusion_errors_scaled, fit_logistic, fit_ridge, lending_profit, logistic_gradient,
    logistic_objective, EligibilityRule, ProfitLedger, DEFAULT_POPULATION,
};
use tdp_core::RandomSource;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn unit_ball(n: usize, d: usize, rng: &mut RandomSource) -> RecordMatrix {
    clip_rows_to_unit_ball(&RecordMatrix::new(gaussian_matrix(n, d, 0.5, rng)).unwrap())
}

const TOGO_DELTA_ROWS: usize = 4201;
const B_GRID: [f64; 8] = [0.05, 0.075, 0.1, 0.25, 0.5, 0.75, 1.0, 2.0];

fn feasibility_bound() -> Check {
    let a = max_feasible_b(1.0, 1e-4, 0.99);
    let b = max_feasible_b(4.0, 1e-4, 0.99);
    ensure(a == 0.4 && b == 1.0, format!("got {a} and {b}"))?;
    Ok(format!("max B = {a} at eps=1, {b} at eps=4"))
}

fn switch_identity() -> Check {
    let mut rng = RandomSource::from_seed(2);
    for _ in 0..100 {
        let eps = rng.random_range(0.01..10.0);
        let delta = rng.random_range(1e-9..0.99);
        let c = switch_to_classic(&TdpBudget::new(2.0, eps, delta).map_err(|e| e.to_string())?, 2.0)
            .map_err(|e| e.to_string())?;
        ensure(
            c.s == 1 && c.epsilon_hat == eps && c.delta_hat == delta,
            format!("eps={eps} delta={delta} -> {c:?}"),
        )?;
    }
    Ok("100 random budgets map to (1, eps, delta) exactly".into())
}

fn zero_noise_reconstruction() -> Check {
    let budget = SplitBudget::new(1.0, 3.0, 0.01, 0.9999, 0.005, 200).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let mut rng = RandomSource::from_seed(seed);
        let x = unit_ball(100, 10, &mut rng);
        let out = privatize_with(&x, &budget, &mut rng, NoiseMode::ForcedZero).map_err(|e| e.to_string())?;
        let err = relative_frobenius(&(out.x_priv.values() * 200.0), x.values());
        worst = worst.max(err);
    }
    ensure(worst <= 1e-8, format!("worst relative error {worst:e}"))?;
    Ok(format!("worst relative error {worst:.2e} over 20 seeds"))
}

fn noise_calibration() -> Check {
    let delta = delta_convention(TOGO_DELTA_ROWS, 1).unwrap().delta;
    let budgets = [(0.05, 2.0, 0.5), (0.25, 3.0, 0.9999), (0.5, 2.0, 0.9999), (1.0, 3.0, 0.5), (2.0, 3.0, 0.9999)];
    let mut worst: f64 = 0.0;
    for (i, &(b, e1, e2)) in budgets.iter().enumerate() {
        let split = BaseBudget { b, epsilon1: e1, epsilon2: e2, k: 10_000 }.with_delta(delta).unwrap();
        let mut rng = RandomSource::from_seed(100 + i as u64);
        // projection noise as actually added by the mechanism: 100 x 10_000 draws
        let x = unit_ball(100, 10, &mut rng);
        let (_, trace) = privatize_traced(&x, &split, &mut rng, NoiseMode::Calibrated).map_err(|e| e.to_string())?;
        let noise = &trace.p_priv - &trace.p;
        let empirical = (noise.norm_squared() / noise.len() as f64).sqrt();
        let target = projection_sigma(&split, 10);
        let rel = (empirical / target - 1.0).abs();
        worst = worst.max(rel);
        ensure(rel <= 0.01, format!("projection noise B={b}: {empirical} vs {target}"))?;

        // Gram noise: 1414 x 1414 symmetric gives 1,000,405 independent draws
        let sigma = covariance_sigma(&split);
        let g = symmetric_gaussian(1414, sigma, &mut rng);
        ensure(g == g.transpose(), "Gram noise is not symmetric")?;
        let (mut ss, mut count) = (0.0, 0usize);
        for j in 0..1414 {
            for i in j..1414 {
                ss += g[(i, j)] * g[(i, j)];
                count += 1;
            }
        }
        let empirical = (ss / count as f64).sqrt();
        let rel = (empirical / sigma - 1.0).abs();
        worst = worst.max(rel);
        ensure(rel <= 0.01, format!("Gram noise B={b}: {empirical} vs {sigma}"))?;
    }
    Ok(format!("worst relative std deviation {:.3}% over 5 budgets", worst * 100.0))
}

fn distinguishing() -> Check {
    ensure(non_private_distinguishing() == 0.0, "non-private score is not 0")?;
    let delta = delta_convention(TOGO_DELTA_ROWS, 1).unwrap().delta;
    for e1 in [2.0, 3.0] {
        for e2 in [0.5, 0.9999] {
            let scores: Vec<f64> = B_GRID
                .iter()
                .map(|&b| {
                    let split = BaseBudget { b, epsilon1: e1, epsilon2: e2, k: 10_000 }.with_delta(delta).unwrap();
                    distinguishing_protection(&split).unwrap().d_score
                })
                .collect();
            ensure(scores.windows(2).all(|w| w[0] <= w[1]), format!("not monotone at ({e1}, {e2}): {scores:?}"))?;
        }
    }
    let example = SplitBudget::new(2.0, 2.0, 0.1, 0.9999, 0.05, 100).unwrap();
    let d = distinguishing_protection(&example).map_err(|e| e.to_string())?.d_score;
    ensure((d - 0.799).abs() <= 0.001, format!("example score {d}"))?;
    Ok(format!("monotone over 4 grids; example score {d:.5}"))
}

fn brute_net(x: &RecordMatrix, release: &RecordMatrix, eta: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    for r in 0..release.nrows() {
        let inside: Vec<usize> = (0..x.nrows())
            .filter(|&i| (0..x.ncols()).all(|j| (x.get(i, j) - release.get(r, j)).abs() <= eta[j]))
            .collect();
        if inside.len() == 1 && !out.contains(&inside[0]) {
            out.push(inside[0]);
        }
    }
    out.sort_unstable();
    out
}

fn attack_oracles() -> Check {
    let mut rng = RandomSource::from_seed(6);
    for _ in 0..50 {
        let n = rng.random_range(2..30);
        let d = rng.random_range(1..4);
        let mut rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(0..4) as f64).collect())
            .collect();
        let copies = rng.random_range(0..n);
        for c in 0..copies {
            rows[(c * 7 + 1) % n] = rows[c % n].clone();
        }
        let x = RecordMatrix::from_rows(&rows).unwrap();
        let unique = rows.iter().filter(|r| rows.iter().filter(|s| s == r).count() == 1).count();
        let expected = (n - unique) as f64 / n as f64;
        let got = baseline_singling_out(&x);
        ensure(got == expected, format!("baseline {got} vs {expected}"))?;
    }
    let mut comparisons = 0;
    for seed in 0..3 {
        let mut rng = RandomSource::from_seed(60 + seed);
        let mut raw = gaussian_matrix(10, 3, 1.0, &mut rng);
        raw.apply(|v| *v = (*v * 2.0).round() / 2.0);
        let x = RecordMatrix::new(raw.clone()).unwrap();
        let release = RecordMatrix::new(raw + gaussian_matrix(10, 3, 0.4, &mut rng)).unwrap();
        for &c in &SINGLING_OUT_SCALES {
            let spec = NetSpec::from_release(&release, c);
            let got = net_attack(&x, &release, &spec, NetReading::PerRecord).map_err(|e| e.to_string())?;
            ensure(got == brute_net(&x, &release, &spec.eta), format!("net mismatch seed {seed} scale {c}"))?;
            comparisons += 1;
        }
    }
    for seed in 0..20 {
        let mut rng = RandomSource::from_seed(80 + seed);
        let victims = RecordMatrix::new(gaussian_matrix(5, 4, 1.0, &mut rng).map(|v| v.round())).unwrap();
        let release = RecordMatrix::new(gaussian_matrix(5, 4, 1.0, &mut rng).map(|v| v.round())).unwrap();
        let known = [0, 2];
        let unknown = [1, 3];
        let got = nn_attribute_attack(&victims, &release, &known, &unknown).map_err(|e| e.to_string())?;
        for i in 0..5 {
            let mut best = (f64::INFINITY, 0);
            for r in 0..5 {
                let dist: f64 = known.iter().map(|&j| (victims.get(i, j) - release.get(r, j)).powi(2)).sum();
                if dist < best.0 {
                    best = (dist, r);
                }
            }
            for (c, &j) in unknown.iter().enumerate() {
                ensure(got[(i, c)] == release.get(best.1, j), format!("nn mismatch seed {seed} row {i}"))?;
            }
        }
    }
    Ok(format!("50 baseline cases, {comparisons} net comparisons, 20 nearest-neighbour cases"))
}

fn harness_oracles() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let mut rng = RandomSource::from_seed(200 + seed);
        let n = rng.random_range(20..80);
        let d = rng.random_range(1..8);
        let lambda = rng.random_range(0.0..3.0);
        let x = gaussian_matrix(n, d, 1.0, &mut rng);
        let y: Vec<f64> = gaussian_matrix(n, 1, 2.0, &mut rng).iter().copied().collect();
        let m = fit_ridge(&x, &y, lambda).map_err(|e| e.to_string())?;
        let a = x.clone().insert_column(d, 1.0);
        let mut lhs = a.tr_mul(&a);
        for i in 0..d {
            lhs[(i, i)] += lambda;
        }
        let theta = lhs.lu().solve(&a.tr_mul(&DVector::from_vec(y))).ok_or("oracle solve failed")?;
        for j in 0..d {
            worst = worst.max((m.weights[j] - theta[j]).abs());
        }
        worst = worst.max((m.intercept - theta[d]).abs());
    }
    ensure(worst <= 1e-10, format!("ridge differs from normal equations by {worst:e}"))?;

    let mut rng = RandomSource::from_seed(300);
    let mut worst_fd: f64 = 0.0;
    for _ in 0..20 {
        let x = gaussian_matrix(25, 4, 1.0, &mut rng);
        let y: Vec<f64> = (0..25).map(|_| f64::from(rng.random_bool(0.5))).collect();
        let theta: Vec<f64> = gaussian_matrix(5, 1, 0.5, &mut rng).iter().copied().collect();
        let lambda = 0.3;
        let g = logistic_gradient(&x, &y, &theta, lambda);
        for i in 0..5 {
            let h = 1e-5;
            let mut up = theta.clone();
            up[i] += h;
            let mut down = theta.clone();
            down[i] -= h;
            let fd = (logistic_objective(&x, &y, &up, lambda) - logistic_objective(&x, &y, &down, lambda)) / (2.0 * h);
            worst_fd = worst_fd.max((fd - g[i]).abs() / g[i].abs().max(1.0));
        }
    }
    ensure(worst_fd <= 1e-6, format!("gradient vs finite differences {worst_fd:e}"))?;
    let fitted = fit_logistic(&gaussian_matrix(50, 3, 1.0, &mut rng), &[1.0; 50], 1e-3).map_err(|e| e.to_string())?;
    ensure(fitted.converged, "logistic fit did not converge")?;

    let preds: Vec<f64> = (1..=100).map(f64::from).collect();
    let eligible = eligibility_by_percentile(&preds, &EligibilityRule::default()).map_err(|e| e.to_string())?;
    let count = eligible.iter().filter(|e| **e).count();
    ensure(count == 29, format!("{count} eligible"))?;

    let y: Vec<f64> = gaussian_matrix(300, 1, 1.0, &mut rng).iter().copied().collect();
    let perfect = exclusion_errors_scaled(&y, &y, &EligibilityRule::default(), DEFAULT_POPULATION)
        .map_err(|e| e.to_string())?;
    ensure(perfect.sample_count == 0 && perfect.national_estimate == 0.0, "perfect predictions exclude someone")?;

    // one applicant per outcome
    let ledger = ProfitLedger {
        loan: vec![10.0, 12.0, 8.0, 20.0],
        revenue: vec![1.5, 1.8, 1.2, 3.0],
        interest: vec![1.5, 1.8, 1.2, 3.0],
    };
    let low_risk = [false, true, false, true];
    let approved = [false, true, true, false];
    let expected = [0.0, 1.8, -(8.0 + 1.2), -3.0];
    for j in 0..4 {
        let got = ledger.outcome(j, low_risk[j], approved[j]).map_err(|e| e.to_string())?;
        ensure(got == expected[j], format!("applicant {j}: {got} vs {}", expected[j]))?;
    }
    let total = lending_profit(&low_risk, &approved, &ledger).map_err(|e| e.to_string())?;
    ensure((total - expected.iter().sum::<f64>()).abs() < 1e-12, format!("total profit {total}"))?;
    Ok(format!("ridge max diff {worst:.1e}, gradient max rel diff {worst_fd:.1e}, 29 eligible, profit {total}"))
}

fn partitioned_privatization() -> Check {
    let n = 20_788;
    let parts = partition_rows(n, 6, &mut RandomSource::from_seed(8)).map_err(|e| e.to_string())?;
    let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
    ensure(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, format!("sizes {sizes:?}"))?;
    let conv = delta_convention(n, 6).map_err(|e| e.to_string())?;
    ensure(conv.delta == 1.0 / 3466.0, format!("delta {}", conv.delta))?;

    let mut rng = RandomSource::from_seed(9);
    let x = unit_ball(n, 10, &mut rng);
    let base = BaseBudget { b: 0.5, epsilon1: 3.0, epsilon2: 0.9999, k: 500 };
    let out = privatize_partitioned_with(&x, &base, 6, &mut rng, NoiseMode::ForcedZero).map_err(|e| e.to_string())?;
    let spent = out.budget.delta1 + out.budget.delta2;
    ensure((spent - 1.0 / 3466.0).abs() <= 1e-15, format!("per-partition delta {spent}"))?;
    let mut seen = vec![false; n];
    for rows in &out.partition_rows {
        for &r in rows {
            ensure(!seen[r], format!("row {r} appears twice"))?;
            seen[r] = true;
        }
    }
    ensure(seen.iter().all(|s| *s), "some row is missing from the partitions")?;
    let mut worst: f64 = 0.0;
    for rows in &out.partition_rows {
        let original = x.select_rows(rows).unwrap();
        let released = out.x_priv.select_rows(rows).unwrap();
        worst = worst.max(relative_frobenius(&(released.values() * 500.0), original.values()));
    }
    ensure(worst <= 1e-8, format!("worst partition relative error {worst:e}"))?;
    Ok(format!("sizes {sizes:?}, delta 1/3466, worst partition error {worst:.1e}"))
}

fn mondrian() -> Check {
    let x = RecordMatrix::new(gaussian_matrix(500, 10, 1.0, &mut RandomSource::from_seed(10))).unwrap();
    let mut worst: f64 = 0.0;
    for k in 2..=10 {
        let out = mondrian_anonymize(&x, &AnonymityParams::new(k).unwrap()).map_err(|e| e.to_string())?;
        ensure(verify_k_anonymity(&out, k), format!("not {k}-anonymous"))?;
        for j in 0..10 {
            let a = x.column(j).iter().sum::<f64>() / 500.0;
            let b = out.column(j).iter().sum::<f64>() / 500.0;
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= 1e-10, format!("column mean drift {worst:e}"))?;
    Ok(format!("k = 2..10 anonymous, mean drift {worst:.1e}"))
}

fn synthetic_fixtures() -> Check {
    let (_, y) = synth_regression_dataset(&SynthSpec::togo()).map_err(|e| e.to_string())?;
    let (mean, std, skew) = sample_moments(&y.values);
    ensure(
        (mean - 0.073).abs() <= 0.01 && (std - 0.068).abs() <= 0.01 && (skew - 4.207).abs() <= 0.5,
        format!("togo moments {mean}, {std}, {skew}"),
    )?;
    let (_, labels) = synth_classification_dataset(&SynthSpec::nigeria()).map_err(|e| e.to_string())?;
    let rate = labels.values.iter().sum::<f64>() / labels.values.len() as f64;
    ensure((rate - 0.633).abs() <= 0.01, format!("nigeria rate {rate}"))?;
    Ok(format!("togo mean {mean:.4} std {std:.4} skew {skew:.3}; nigeria rate {rate:.4}"))
}

fn end_to_end() -> Check {
    let mut config = ExperimentConfig::default();
    config.seed = 11;
    config.data.synthetic_rows = Some(1000);
    config.grid = Grid {
        b: vec![0.05, 2.0],
        epsilon1: vec![3.0],
        epsilon2: vec![0.9999],
        k: 2000,
    };
    config.repetitions = 25;
    config.folds = 5;
    config.mondrian_k = vec![];
    config.attacks.singling_out = false;
    config.attacks.attribute_inference = false;
    let result = run_sweep(&config, None).map_err(|e| e.to_string())?;
    let points = result.points();
    let at = |b: f64| points.iter().find(|p| p.b == Some(b)).cloned().ok_or(format!("no cell for B={b}"));
    let (low, high) = (at(0.05)?, at(2.0)?);
    ensure(low.failures == 0 && high.failures == 0, "some repetitions failed")?;
    let (el, eh) = (low.metric_mean.unwrap(), high.metric_mean.unwrap());
    let (dl, dh) = (low.distinguishing.unwrap(), high.distinguishing.unwrap());
    ensure(eh >= el, format!("exclusion errors {eh} at B=2 below {el} at B=0.05"))?;
    ensure(dh > dl, format!("distinguishing {dh} at B=2 not above {dl} at B=0.05"))?;
    Ok(format!(
        "exclusion errors {el:.0} (B=0.05) vs {eh:.0} (B=2); distinguishing {dl:.4} vs {dh:.4}"
    ))
}

fn main() {
    type Criterion = (u32, &'static str, fn() -> Check, Duration);
    let criteria: [Criterion; 11] = [
        (1, "feasibility bound on B", feasibility_bound, Duration::from_secs(1)),
        (2, "switch to classic DP at B=2", switch_identity, Duration::from_secs(1)),
        (3, "zero-noise reconstruction", zero_noise_reconstruction, Duration::from_secs(10)),
        (4, "noise calibration", noise_calibration, Duration::from_secs(30)),
        (5, "distinguishing protection", distinguishing, Duration::from_secs(1)),
        (6, "attack oracles", attack_oracles, Duration::from_secs(30)),
        (7, "targeting harness oracles", harness_oracles, Duration::from_secs(30)),
        (8, "partitioned privatization", partitioned_privatization, Duration::from_secs(60)),
        (9, "Mondrian k-anonymity", mondrian, Duration::from_secs(30)),
        (10, "synthetic fixtures", synthetic_fixtures, Duration::from_secs(30)),
        (11, "end-to-end tradeoff direction", end_to_end, Duration::from_secs(600)),
    ];
    let mut failed = 0;
    for (id, name, check, limit) in criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let (status, detail) = match outcome {
            Ok(detail) if elapsed <= limit => ("PASS", detail),
            Ok(detail) => ("FAIL", format!("{detail}; too slow, limit {limit:?}")),
            Err(why) => ("FAIL", why),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("criterion {id:>2} {status}: {name} ({:.2}s) {detail}", elapsed.as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
