//! Acceptance criteria AC1 to AC10. Each criterion prints one `ACn PASS|FAIL` line and then
//! asserts at its stated tolerance; the binary exits nonzero if any criterion fails.
//!
//! Slow full-scale runs: `cargo test -p privdist-core --test acceptance -- --ignored`.
//! Any other argument selects criteria by substring, e.g. `-- ac9`.

use std::panic;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use privdist::analysis::{
    audit_sensitivity, build_gain_system, compare_sensitivities, limit_matrix, q1_bound, rho_less_than,
    spectral_radius, trace_metrics, GainInputs, DEFAULT_THETA, ORDERINGS,
};
use privdist::engine::{simulate, Dynamics, Method, RunOptions};
use privdist::harness::{run_trials, Setup};
use privdist::objective::{make_adjacent, make_adjacent_with_shift, random_problem, Problem};
use privdist::privacy_eval::{
    collect_attacker_view, knn_mutual_information_seeded, mnmi, AttackerVariant, Scenario, DEFAULT_NEIGHBORS,
};
use privdist::rng::{substream, Purpose};
use privdist::schedule::{privacy_spent, privacy_spent_closed_form, ScheduleParams};
use privdist::stats::welch_greater;
use privdist::topology::{erdos_renyi_connected, metropolis_weights, ring, spectral_constants, WeightMatrix};
use privdist::Algorithm;

/// Experiment triples `(ε, γ, β, q1, q2)` from the sensor-fusion study.
const SENSOR_TRIPLES: [(f64, f64, f64, f64, f64); 3] =
    [(0.1, 0.001, 1000.0, 0.92, 0.99), (1.0, 0.001, 1000.0, 0.97, 0.99), (10.0, 0.002, 100.0, 0.97, 0.99)];

fn sensor_schedule(i: usize, delta: f64) -> ScheduleParams {
    let (eps, gamma, beta, q1, q2) = SENSOR_TRIPLES[i];
    ScheduleParams::new(gamma, beta, q1, q2, eps, delta).unwrap()
}

fn report(id: &str, pass: bool, elapsed: Duration, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("{id} {verdict} ({:.2}s): {detail}", elapsed.as_secs_f64());
}

/// Audit corpus shared by AC2 and AC3: 10-agent quadratic instances with δ = 1.
struct Instance {
    problem: Problem,
    weights: WeightMatrix,
    i0: usize,
    seed: u64,
}

const AUDIT_INSTANCES: u64 = 100;
const AUDIT_TRIALS: usize = 200;
const AUDIT_ITERATIONS: u64 = 50;

fn audit_corpus() -> Vec<Instance> {
    (0..AUDIT_INSTANCES)
        .map(|s| {
            let g = erdos_renyi_connected(10, 0.4, 1000 + s, 500).unwrap();
            Instance {
                problem: random_problem(10, 3, 2, (0.1, 1.0), 1000 + s).unwrap(),
                weights: metropolis_weights(&g).unwrap(),
                i0: (s % 10) as usize,
                seed: 1000 + s,
            }
        })
        .collect()
}

fn audit_schedule() -> ScheduleParams {
    sensor_schedule(1, 1.0)
}

fn ac1_accountant_exactness() {
    let t = Instant::now();
    let horizon = 1_000_000u64;
    let mut worst = 0.0f64;
    let mut limit_exact = true;
    for i in 0..SENSOR_TRIPLES.len() {
        let sp = sensor_schedule(i, 1.0);
        let spend = privacy_spent(&sp, horizon).unwrap();
        let expected = sp.epsilon * (1.0 - (sp.q1 / sp.q2).powf(horizon as f64));
        worst = worst.max((spend.termwise - expected).abs() / expected);
        limit_exact &= privacy_spent_closed_form(&sp, u64::MAX) == sp.epsilon;
    }
    let elapsed = t.elapsed();
    let pass = worst <= 1e-9 && limit_exact && elapsed < Duration::from_secs(1);
    report("AC1", pass, elapsed, &format!("max relative gap {worst:.3e}, K->inf limit exact: {limit_exact}"));
    assert!(worst <= 1e-9, "termwise vs closed form: {worst}");
    assert!(limit_exact);
    assert!(elapsed < Duration::from_secs(1), "runtime {elapsed:?}");
}

fn ac2_sensitivity_bound() {
    let t = Instant::now();
    let sp = audit_schedule();
    let mut worst_margin = f64::INFINITY;
    let mut worst_k1 = 0.0f64;
    let mut leaked_rows = 0.0f64;
    for inst in audit_corpus() {
        let pair = make_adjacent(&inst.problem, inst.i0, 1.0, inst.seed).unwrap();
        let env = audit_sensitivity(&pair, Algorithm::Alg1, &inst.weights, &sp, AUDIT_ITERATIONS, AUDIT_TRIALS, inst.seed)
            .unwrap();
        worst_margin = env.margins().into_iter().fold(worst_margin, f64::min);
        leaked_rows = leaked_rows.max(env.max_other_rows());

        // Sign-aligned linear shift: the first step moves agent i0 by exactly δα₁.
        let aligned = make_adjacent_with_shift(&inst.problem, inst.i0, &[0.5, 0.5]).unwrap();
        let env = audit_sensitivity(&aligned, Algorithm::Alg1, &inst.weights, &sp, 1, 4, inst.seed).unwrap();
        worst_k1 = worst_k1.max((env.delta_hat[0] - env.bound[0]).abs());
    }
    let elapsed = t.elapsed();
    let pass = worst_margin >= -1e-12 && worst_k1 <= 1e-12 && elapsed < Duration::from_secs(120);
    report(
        "AC2",
        pass,
        elapsed,
        &format!(
            "{AUDIT_INSTANCES} pairs x {AUDIT_TRIALS} trials: min(bound - delta_hat) = {worst_margin:.3e}, \
             |delta_hat(1) - delta*alpha_1| <= {worst_k1:.1e}, other rows {leaked_rows:.1e}"
        ),
    );
    assert!(worst_margin >= -1e-12, "bound exceeded by {}", -worst_margin);
    assert!(worst_k1 <= 1e-12);
    assert!(elapsed < Duration::from_secs(120), "runtime {elapsed:?}");
}

fn ac3_sensitivity_orderings() {
    let t = Instant::now();
    let sp = audit_schedule();
    let corpus = audit_corpus();
    // failures[j] = (instances violating ORDERINGS[j], worst excess).
    let mut failures = vec![(0usize, f64::NEG_INFINITY); ORDERINGS.len()];
    for inst in &corpus {
        let pair = make_adjacent(&inst.problem, inst.i0, 1.0, inst.seed).unwrap();
        let rep = compare_sensitivities(&pair, &inst.weights, &sp, AUDIT_ITERATIONS, AUDIT_TRIALS, inst.seed).unwrap();
        for (f, c) in failures.iter_mut().zip(&rep.checks) {
            f.0 += usize::from(!c.holds);
            f.1 = f.1.max(c.worst_excess);
        }
    }
    let elapsed = t.elapsed();
    let summary: Vec<String> = ORDERINGS
        .iter()
        .zip(&failures)
        .map(|((l, r), (bad, ex))| format!("{l}<={r}: {bad}/{} violated (max excess {ex:.2e})", corpus.len()))
        .collect();
    let pass = failures.iter().all(|f| f.0 == 0) && elapsed < Duration::from_secs(300);
    report("AC3", pass, elapsed, &summary.join("; "));
    assert!(failures.iter().all(|f| f.0 == 0), "orderings violated: {summary:?}");
    assert!(elapsed < Duration::from_secs(300), "runtime {elapsed:?}");
}

fn ac4_noiseless_exact_convergence() {
    let t = Instant::now();
    let g = erdos_renyi_connected(10, 0.5, 1, 500).unwrap();
    let w = metropolis_weights(&g).unwrap();
    let pr = random_problem(10, 3, 2, (0.1, 1.0), 1).unwrap();
    // Constant α = γ with αβ = 1 and no noise.
    let sp = ScheduleParams::new(0.01, 100.0, 0.97, 0.99, 1.0, 0.0).unwrap();
    let iters = 20_000;
    let run = |d: Dynamics| simulate(&pr, &w, &sp, d, iters, 7, 0, None, RunOptions::default()).unwrap();
    let alg1 = run(Algorithm::Alg1NoiselessConstant.dynamics());
    let gt = run(Algorithm::GtNoiseless.dynamics());
    let dgd = run(Dynamics::noiseless_constant(Method::DpDgd));
    let (a, g_, d) = (alg1.last(), gt.last(), dgd.last());
    let elapsed = t.elapsed();
    let ok_alg1 = a.residual < 1e-8 && a.consensus_err < 1e-8;
    let ok_gt = g_.residual < 1e-8 && g_.consensus_err < 1e-8;
    let ok_dgd = d.residual > 10.0 * a.residual && d.residual > 1e-8;
    let pass = ok_alg1 && ok_gt && ok_dgd && elapsed < Duration::from_secs(30);
    report(
        "AC4",
        pass,
        elapsed,
        &format!(
            "residual/consensus after {iters}: alg1 {:.2e}/{:.2e}, gt {:.2e}/{:.2e}, dgd floor {:.3e}",
            a.residual, a.consensus_err, g_.residual, g_.consensus_err, d.residual
        ),
    );
    assert!(ok_alg1 && ok_gt && ok_dgd);
    assert!(elapsed < Duration::from_secs(30), "runtime {elapsed:?}");
}

fn ac5_structural_invariants() {
    let t = Instant::now();
    let mut worst = [0.0f64; 3];
    let mut runs = 0;
    for s in 0..20u64 {
        let n = 3 + (s % 8) as usize;
        let g = erdos_renyi_connected(n, 0.5, s, 500).unwrap();
        let w = metropolis_weights(&g).unwrap();
        let pr = random_problem(n, 3, 2, (0.1, 1.0), s).unwrap();
        for i in 0..SENSOR_TRIPLES.len() {
            let sp = sensor_schedule(i, 1.0);
            for a in Algorithm::ALL {
                for trial in 0..3 {
                    let tr = simulate(&pr, &w, &sp, a.dynamics(), 300, s, trial, None, RunOptions::default()).unwrap();
                    let inv = tr.invariants;
                    // Y-based identities are judged relative to the size of Y itself.
                    let scale = inv.y_scale.max(1.0);
                    worst[0] = worst[0].max(inv.y_mean.unwrap_or(0.0) / scale);
                    worst[1] = worst[1].max(inv.gt_tracking.unwrap_or(0.0) / scale);
                    worst[2] = worst[2].max(inv.mean_dynamics.unwrap_or(0.0));
                    runs += 1;
                }
            }
        }
    }
    let elapsed = t.elapsed();
    let pass = worst.iter().all(|v| *v <= 1e-12);
    report(
        "AC5",
        pass,
        elapsed,
        &format!(
            "{runs} runs: max |mean Y| {:.2e}, GT tracking {:.2e}, mean dynamics {:.2e}",
            worst[0], worst[1], worst[2]
        ),
    );
    assert!(pass, "{worst:?}");
}

/// Final residuals per trial for each ε, for one algorithm.
fn final_residuals(setup: &Setup, alg: Algorithm, trials: usize, iterations: u64) -> Vec<Vec<f64>> {
    (0..SENSOR_TRIPLES.len())
        .map(|i| {
            let sp = sensor_schedule(i, 1.0);
            let traces = run_trials(setup, &sp, alg.dynamics(), iterations, trials, 2, false).unwrap();
            traces.iter().map(|tr| tr.last().residual).collect()
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn ac6_privacy_accuracy_tradeoff() {
    let t = Instant::now();
    let graph = erdos_renyi_connected(20, 0.3, 2, 500).unwrap();
    let setup = Setup {
        weights: metropolis_weights(&graph).unwrap(),
        graph,
        problem: random_problem(20, 3, 2, (0.1, 1.0), 2).unwrap(),
    };
    let alg1 = final_residuals(&setup, Algorithm::Alg1, 100, 1000);
    let dgd = final_residuals(&setup, Algorithm::DpDgd, 100, 1000);
    let elapsed = t.elapsed();

    let m1: Vec<f64> = alg1.iter().map(|v| mean(v)).collect();
    let m2: Vec<f64> = dgd.iter().map(|v| mean(v)).collect();
    let decreasing = m1.windows(2).all(|w| w[1] < w[0]);
    let tests: Vec<_> = dgd.iter().zip(&alg1).map(|(d, a)| welch_greater(d, a).unwrap()).collect();
    let dominated = m1.iter().zip(&m2).all(|(a, d)| a <= d);
    let significant = tests.iter().all(|w| w.p_greater < 0.01);
    let detail = SENSOR_TRIPLES
        .iter()
        .enumerate()
        .map(|(i, tr)| format!("eps={}: alg1 {:.4} dp-dgd {:.4} p={:.3}", tr.0, m1[i], m2[i], tests[i].p_greater))
        .collect::<Vec<_>>()
        .join("; ");
    let pass = decreasing && dominated && significant && elapsed < Duration::from_secs(600);
    report(
        "AC6",
        pass,
        elapsed,
        &format!("{detail}; decreasing in eps: {decreasing}, alg1 <= dp-dgd: {dominated}, Welch p<0.01: {significant}"),
    );
    assert!(decreasing, "alg1 means not decreasing: {m1:?}");
    assert!(dominated, "alg1 {m1:?} vs dp-dgd {m2:?}");
    assert!(significant, "Welch p-values {:?}", tests.iter().map(|w| w.p_greater).collect::<Vec<_>>());
    assert!(elapsed < Duration::from_secs(600), "runtime {elapsed:?}");
}

fn irreducible(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    (0..n).all(|s| {
        let mut seen = vec![false; n];
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if !seen[j] && m[(i, j)] > 0.0 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|v| v)
    })
}

fn ac7_determinant_test_oracle() {
    let t = Instant::now();
    let mut rng = substream(77, 0, Purpose::Other(7));
    let (mut cases, mut agree) = (0usize, 0usize);
    while cases < 10_000 {
        let n = if cases % 2 == 0 { 2 } else { 3 };
        let lambda = rng.random_range(0.2..3.0);
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = if i == j {
                    rng.random_range(0.0..lambda)
                } else if rng.random_bool(0.8) {
                    rng.random_range(0.0..2.0)
                } else {
                    0.0
                };
            }
        }
        if !irreducible(&m) {
            continue;
        }
        cases += 1;
        if rho_less_than(&m, lambda).unwrap() == (spectral_radius(&m) < lambda) {
            agree += 1;
        }
    }
    let elapsed = t.elapsed();
    let pass = agree == cases && elapsed < Duration::from_secs(10);
    report("AC7", pass, elapsed, &format!("{agree}/{cases} agree with the eigenvalue oracle"));
    assert_eq!(agree, cases);
    assert!(elapsed < Duration::from_secs(10), "runtime {elapsed:?}");
}

fn ac8_gain_system_consistency() {
    let t = Instant::now();
    let w = metropolis_weights(&ring(4).unwrap()).unwrap();
    let sc = spectral_constants(&w).unwrap();
    let bound = q1_bound(sc.sigma, DEFAULT_THETA, sc.w_minus_i_norm).unwrap();
    let q1 = 0.5 * bound;

    let inputs = GainInputs {
        mu: 0.2,
        l: 2.0,
        sigma: sc.sigma,
        q1,
        alpha_next: 0.0,
        alpha_k: 0.0,
        nu_k: 0.1,
        nu_next: 0.1,
        n: 4,
        p: 2,
        w_minus_i_norm: sc.w_minus_i_norm,
    };
    let limit = limit_matrix(sc.sigma, q1, sc.w_minus_i_norm);
    let exact = build_gain_system(inputs).unwrap().lower_block() == limit;
    let rho = spectral_radius(&DMatrix::from_iterator(2, 2, limit.iter().copied()));

    let hi = limit_matrix(sc.sigma, 0.2, sc.w_minus_i_norm);
    let det_hi = (nalgebra::Matrix2::identity() - hi).determinant();
    let elapsed = t.elapsed();
    let pass = exact && rho < 1.0 && det_hi < 0.0 && elapsed < Duration::from_secs(1);
    report(
        "AC8",
        pass,
        elapsed,
        &format!(
            "ring(4): sigma {:.4}, q1 = {q1:.5} (bound {bound:.5}), alpha->0 block exact: {exact}, rho {rho:.4}, \
             det(I - A) at q1=0.2: {det_hi:.4}",
            sc.sigma
        ),
    );
    assert!(exact && rho < 1.0 && det_hi < 0.0);
    assert!(elapsed < Duration::from_secs(1), "runtime {elapsed:?}");
}

fn scenario_mnmi(scenario: &Scenario, epsilon: f64, trials: usize, horizon: u64) -> f64 {
    let (pr, w, sp) = scenario.build(epsilon).unwrap();
    let ds = collect_attacker_view(&pr, &w, &sp, horizon, trials, 1).unwrap();
    mnmi(&ds, DEFAULT_NEIGHBORS, AttackerVariant::Reconstructed).unwrap().mnmi
}

fn ac9_mnmi_ordering() {
    let t = Instant::now();
    let (trials, horizon) = (2000, 300);
    let scenario = Scenario::default();
    let values: Vec<f64> = [10.0, 1.0, 0.1].iter().map(|e| scenario_mnmi(&scenario, *e, trials, horizon)).collect();
    let decreasing = values.windows(2).all(|w| w[1] < w[0]);

    let noiseless = scenario_mnmi(&Scenario { delta: 0.0, ..scenario }, 1.0, trials, horizon);

    // Attacker estimate replaced by noise independent of the private gradient.
    let (pr, w, sp) = scenario.build(1.0).unwrap();
    let mut ds = collect_attacker_view(&pr, &w, &sp, horizon, trials, 1).unwrap();
    let mut rng = substream(9, 0, Purpose::Other(9));
    for col in ds.reconstructed.iter_mut() {
        for v in col.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
    }
    let independent = mnmi(&ds, DEFAULT_NEIGHBORS, AttackerVariant::Reconstructed).unwrap().mnmi;

    let elapsed = t.elapsed();
    let pass = decreasing && noiseless >= 0.95 && independent <= 0.05 && elapsed < Duration::from_secs(900);
    report(
        "AC9",
        pass,
        elapsed,
        &format!(
            "M-NMI eps=10/1/0.1: {:.4}/{:.4}/{:.4}, noiseless {noiseless:.4}, independent {independent:.4}",
            values[0], values[1], values[2]
        ),
    );
    assert!(decreasing, "{values:?}");
    assert!(noiseless >= 0.95 && independent <= 0.05);
    assert!(elapsed < Duration::from_secs(900), "runtime {elapsed:?}");
}

fn ac10_estimator_calibration() {
    let t = Instant::now();
    let n = 5000;
    let rho: f64 = 0.9;
    let truth = -0.5 * (1.0 - rho * rho).ln();
    let mut rng = substream(10, 0, Purpose::Other(10));
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let xs: Vec<f64> = (0..n).map(|_| normal()).collect();
    let ys: Vec<f64> = xs.iter().map(|x| rho * x + (1.0 - rho * rho).sqrt() * normal()).collect();
    let est = knn_mutual_information_seeded(&xs, &ys, DEFAULT_NEIGHBORS, 1).unwrap();
    let rel = (est - truth).abs() / truth;

    // One independent sample of the same size; a few more replicates show the spread.
    let mut independent = Vec::new();
    for rep in 0..5u64 {
        let a: Vec<f64> = (0..n).map(|_| normal()).collect();
        let b: Vec<f64> = (0..n).map(|_| normal()).collect();
        independent.push(knn_mutual_information_seeded(&a, &b, DEFAULT_NEIGHBORS, rep).unwrap());
    }
    let indep = independent[0].abs();
    let elapsed = t.elapsed();
    let pass = rel <= 0.10 && indep <= 0.02 && elapsed < Duration::from_secs(30);
    report(
        "AC10",
        pass,
        elapsed,
        &format!("rho=0.9: {est:.4} vs {truth:.4} ({:.1}% off); independent |I| = {indep:.4} (replicates {independent:.4?})", 100.0 * rel),
    );
    assert!(rel <= 0.10 && indep <= 0.02);
    assert!(elapsed < Duration::from_secs(30), "runtime {elapsed:?}");
}

fn ac6_full_scale_curve_shapes() {
    let t = Instant::now();
    let graph = erdos_renyi_connected(100, 0.1, 3, 500).unwrap();
    let setup = Setup {
        weights: metropolis_weights(&graph).unwrap(),
        graph,
        problem: random_problem(100, 3, 2, (0.1, 1.0), 3).unwrap(),
    };
    let mut finals = Vec::new();
    for (i, triple) in SENSOR_TRIPLES.iter().enumerate() {
        let sp = sensor_schedule(i, 1.0);
        let traces = run_trials(&setup, &sp, Algorithm::Alg1.dynamics(), 1000, 1000, 3, false).unwrap();
        let curves = trace_metrics(&traces).unwrap();
        let r = &curves.residual_mean;
        let decays = r[r.len() - 1] < r[0];
        println!("eps={}: residual {:.4} -> {:.4}, decays {decays}", triple.0, r[0], r[r.len() - 1]);
        finals.push(r[r.len() - 1]);
    }
    let ordered = finals.windows(2).all(|w| w[1] < w[0]);
    report("AC6-full", ordered, t.elapsed(), &format!("final means {finals:?}"));
    assert!(ordered);
}

fn ac9_full_scale_table() {
    let t = Instant::now();
    let scenario = Scenario::default();
    let targets = [(10.0, 0.52), (1.0, 0.24), (0.1, 0.047)];
    let got: Vec<f64> = targets.iter().map(|(e, _)| scenario_mnmi(&scenario, *e, 5000, 1000)).collect();
    let within = got.iter().zip(&targets).all(|(g, (_, r))| (g - r).abs() <= 0.1);
    report("AC9-full", within, t.elapsed(), &format!("M-NMI eps=10/1/0.1: {got:?} vs 0.52/0.24/0.047"));
    assert!(within);
}

type Criterion = (&'static str, fn());

const CRITERIA: [Criterion; 10] = [
    ("ac1_accountant_exactness", ac1_accountant_exactness),
    ("ac2_sensitivity_bound", ac2_sensitivity_bound),
    ("ac3_sensitivity_orderings", ac3_sensitivity_orderings),
    ("ac4_noiseless_exact_convergence", ac4_noiseless_exact_convergence),
    ("ac5_structural_invariants", ac5_structural_invariants),
    ("ac6_privacy_accuracy_tradeoff", ac6_privacy_accuracy_tradeoff),
    ("ac7_determinant_test_oracle", ac7_determinant_test_oracle),
    ("ac8_gain_system_consistency", ac8_gain_system_consistency),
    ("ac9_mnmi_ordering", ac9_mnmi_ordering),
    ("ac10_estimator_calibration", ac10_estimator_calibration),
];

const SLOW: [Criterion; 2] =
    [("ac6_full_scale_curve_shapes", ac6_full_scale_curve_shapes), ("ac9_full_scale_table", ac9_full_scale_table)];

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let slow = args.iter().any(|a| a == "--ignored" || a == "--include-ignored");
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with("--")).collect();
    let mut selected: Vec<Criterion> = Vec::new();
    if !slow || args.iter().any(|a| a == "--include-ignored") {
        selected.extend(CRITERIA);
    }
    if slow {
        selected.extend(SLOW);
    }
    selected.retain(|(name, _)| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str())));

    let mut failed = Vec::new();
    for (name, f) in &selected {
        if panic::catch_unwind(f).is_err() {
            failed.push(*name);
        }
    }
    println!("acceptance: {} of {} criteria passed", selected.len() - failed.len(), selected.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
