//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if a hard criterion fails. The negative control (7) is
//! reported but never fails the run.

use std::io::BufReader;
use std::path::Path;
use std::time::{Duration, Instant};

use dfpd_cli::pipeline::read_records;
use dfpd_cli::{Pipeline, PipelineConfig, System, TransitionSource};
use dfpd_core::engine::{evaluate_global_kl, synthesize, SynthesisInputs};
use dfpd_core::estimator::{build_models, Offsets, PolicyModel, TransitionCounts, TransitionModel, Triplet};
use dfpd_core::grid::UniformGrid;
use dfpd_core::model_io::ModelFile;
use dfpd_core::prob::{self, total_variation, Histogram};
use dfpd_core::solver::{
    objective, solve_constrained, solve_unconstrained, ConstraintSet, LinearConstraint, LocalCost,
};
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_pmf(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
    Histogram::from_weights(w).unwrap().into_inner()
}

fn random_simplex_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().max(1e-12).ln()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

// ---------------------------------------------------------------------------
// 1. local solver against an exhaustive simplex grid

struct SolverInstance {
    c: Vec<f64>,
    /// `(weights, bound)` pairs, all of the `<=` kind.
    constraints: Vec<(Vec<f64>, f64)>,
}

fn solver_instance(rng: &mut ChaCha8Rng) -> SolverInstance {
    let z = rng.random_range(2..=4);
    let c = (0..z).map(|_| rng.random_range(-3.0..3.0)).collect();
    let k = rng.random_range(1..=2);
    let anchor = random_simplex_point(rng, z);
    let constraints = (0..k)
        .map(|_| {
            let w: Vec<f64> = if rng.random_bool(0.3) {
                // indicator of a random input subset, like a bound constraint
                (0..z).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect()
            } else {
                (0..z).map(|_| rng.random_range(-1.0..1.0)).collect()
            };
            let range = w.iter().cloned().fold(f64::MIN, f64::max) - w.iter().cloned().fold(f64::MAX, f64::min);
            let at_anchor: f64 = w.iter().zip(&anchor).map(|(a, b)| a * b).sum();
            (w, at_anchor + rng.random_range(0.01..0.05) * range)
        })
        .collect();
    SolverInstance { c, constraints }
}

/// Enumerates all but the last two coordinates on the 1e-3 grid; along the
/// remaining segment the objective is convex in one variable, so its exact
/// minimizer is the unconstrained stationary point clipped to the feasible
/// interval.
fn grid_search(inst: &SolverInstance) -> Option<(Vec<f64>, f64)> {
    const N: usize = 1000;
    let z = inst.c.len();
    let outer = z - 2;
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut k = vec![0usize; outer];
    loop {
        let used: usize = k.iter().sum();
        if used <= N {
            let mut p: Vec<f64> = k.iter().map(|&v| v as f64 / N as f64).collect();
            let r = (N - used) as f64 / N as f64;
            let (c1, c2) = (inst.c[z - 2], inst.c[z - 1]);
            let (mut lo, mut hi) = (0.0f64, r);
            let mut feasible = true;
            for (w, b) in &inst.constraints {
                let fixed: f64 = w[..outer].iter().zip(&p).map(|(a, b)| a * b).sum();
                let slope = w[z - 2] - w[z - 1];
                let slack = b - fixed - w[z - 1] * r;
                if slope.abs() < 1e-15 {
                    feasible &= slack >= -1e-12;
                } else if slope > 0.0 {
                    hi = hi.min(slack / slope);
                } else {
                    lo = lo.max(slack / slope);
                }
            }
            if feasible && lo <= hi + 1e-15 {
                let stationary = r / (1.0 + (c1 - c2).exp());
                let a = stationary.clamp(lo, hi.max(lo));
                p.push(a);
                p.push((r - a).max(0.0));
                let f = objective(&p, &inst.c);
                if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
                    best = Some((p, f));
                }
            }
        }
        // odometer over the outer coordinates
        let mut d = 0;
        loop {
            if d == outer {
                return best;
            }
            k[d] += 1;
            if k.iter().sum::<usize>() <= N {
                break;
            }
            k[d] = 0;
            d += 1;
        }
    }
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let instances: Vec<SolverInstance> = (0..200).map(|_| solver_instance(&mut rng)).collect();

    let start = Instant::now();
    let mut solved = Vec::with_capacity(instances.len());
    let mut softmax_err = 0.0f64;
    for inst in &instances {
        let cost = LocalCost::new(inst.c.clone()).unwrap();
        let set = inst
            .constraints
            .iter()
            .enumerate()
            .fold(ConstraintSet::new(), |s, (i, (w, b))| {
                s.with(LinearConstraint::less_equal(w.clone(), *b, format!("c{i}")))
            });
        solved.push(solve_constrained(&cost, &set));
        let free = solve_unconstrained(&cost);
        let norm: f64 = inst.c.iter().map(|v| (-v).exp()).sum();
        for (p, v) in free.p.iter().zip(&inst.c) {
            softmax_err = softmax_err.max((p - (-v).exp() / norm).abs());
        }
    }
    let solver_time = start.elapsed();

    let oracle_start = Instant::now();
    let oracle: Vec<Option<(Vec<f64>, f64)>> = instances.par_iter().map(grid_search).collect();
    let oracle_time = oracle_start.elapsed();

    let mut worst_tv = 0.0f64;
    let mut failures = 0;
    for (s, o) in solved.iter().zip(&oracle) {
        match (s, o) {
            (Ok(sol), Some((p, _))) => worst_tv = worst_tv.max(total_variation(&sol.p, p).unwrap()),
            _ => failures += 1,
        }
    }
    let pass = failures == 0 && worst_tv <= 5e-3 && softmax_err <= 1e-10 && solver_time < Duration::from_secs(10);
    outcome(
        pass,
        format!(
            "200 instances, max TV {worst_tv:.2e} (<= 5e-3), softmax error {softmax_err:.1e} (<= 1e-10), \
             {failures} failures, solver {solver_time:.2?} (< 10 s), grid oracle {oracle_time:.2?}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. global optimum against brute-force policy search

struct Mdp {
    p: Vec<Vec<Vec<f64>>>,
    q: Vec<Vec<Vec<f64>>>,
    qu: Vec<Vec<f64>>,
    initial: Vec<f64>,
}

fn random_mdp(rng: &mut ChaCha8Rng) -> Mdp {
    let m = rng.random_range(2..=3);
    let z = rng.random_range(2..=3);
    let tensor = |rng: &mut ChaCha8Rng| -> Vec<Vec<Vec<f64>>> {
        (0..m).map(|_| (0..z).map(|_| random_pmf(rng, m)).collect()).collect()
    };
    Mdp {
        p: tensor(rng),
        q: tensor(rng),
        qu: (0..m).map(|_| random_pmf(rng, z)).collect(),
        initial: random_pmf(rng, m),
    }
}

/// KL between the two joint trajectory distributions by explicit
/// enumeration of every path `x0 u0 x1 ... u_{n-1} x_n`.
fn enumerate_kl(mdp: &Mdp, policies: &[Vec<Vec<f64>>]) -> f64 {
    fn walk(mdp: &Mdp, policies: &[Vec<Vec<f64>>], k: usize, x: usize, pp: f64, pq: f64) -> f64 {
        if k == policies.len() {
            return if pp > 0.0 { pp * (pp / pq).ln() } else { 0.0 };
        }
        let mut total = 0.0;
        for (u, &pu) in policies[k][x].iter().enumerate() {
            if pu == 0.0 {
                continue;
            }
            for (y, &px) in mdp.p[x][u].iter().enumerate() {
                total += walk(
                    mdp,
                    policies,
                    k + 1,
                    y,
                    pp * pu * px,
                    pq * mdp.qu[x][u] * mdp.q[x][u][y],
                );
            }
        }
        total
    }
    (0..mdp.initial.len())
        .map(|x| walk(mdp, policies, 0, x, mdp.initial[x], mdp.initial[x]))
        .sum()
}

fn occupancy(mdp: &Mdp, policies: &[Vec<Vec<f64>>], k: usize) -> Vec<f64> {
    let m = mdp.initial.len();
    let mut mu = mdp.initial.clone();
    for pol in &policies[..k] {
        let mut next = vec![0.0; m];
        for x in 0..m {
            for (u, pu) in pol[x].iter().enumerate() {
                for y in 0..m {
                    next[y] += mu[x] * pu * mdp.p[x][u][y];
                }
            }
        }
        mu = next;
    }
    mu
}

fn simplex_grid(z: usize, n: usize) -> Vec<Vec<f64>> {
    match z {
        2 => (0..=n)
            .map(|a| vec![a as f64 / n as f64, (n - a) as f64 / n as f64])
            .collect(),
        3 => (0..=n)
            .flat_map(|a| {
                (0..=n - a).map(move |b| vec![a as f64 / n as f64, b as f64 / n as f64, (n - a - b) as f64 / n as f64])
            })
            .collect(),
        _ => unreachable!("instances use z <= 3"),
    }
}

/// Row-by-row search over the 1e-3 simplex grid, sweeping backward in time
/// until nothing improves. With one row free, the joint KL equals
/// `a * sum pi ln(pi/q) + <pi, g>` where `a` is the state's occupancy; `g`
/// is read off by evaluating the enumerator at the vertices.
fn brute_force(mdp: &Mdp, n: usize) -> (Vec<Vec<Vec<f64>>>, f64) {
    let (m, z) = (mdp.initial.len(), mdp.qu[0].len());
    let grid = simplex_grid(z, 1000);
    let mut policies = vec![mdp.qu.clone(); n];
    let mut value = enumerate_kl(mdp, &policies);
    for _sweep in 0..6 {
        let before = value;
        for k in (0..n).rev() {
            for i in 0..m {
                let a = occupancy(mdp, &policies, k)[i];
                let g: Vec<f64> = (0..z)
                    .map(|h| {
                        let mut trial = policies.clone();
                        trial[k][i] = (0..z).map(|v| if v == h { 1.0 } else { 0.0 }).collect();
                        enumerate_kl(mdp, &trial) + a * mdp.qu[i][h].ln()
                    })
                    .collect();
                let f = |pi: &[f64]| -> f64 {
                    pi.iter()
                        .enumerate()
                        .map(|(h, &x)| {
                            if x > 0.0 {
                                a * x * (x / mdp.qu[i][h]).ln() + x * g[h]
                            } else {
                                x * g[h]
                            }
                        })
                        .sum()
                };
                let best = grid.iter().min_by(|x, y| f(x).total_cmp(&f(y))).unwrap();
                policies[k][i] = best.clone();
            }
        }
        value = enumerate_kl(mdp, &policies);
        if before - value < 1e-12 {
            break;
        }
    }
    (policies, value)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mdps: Vec<Mdp> = (0..20).map(|_| random_mdp(&mut rng)).collect();
    let n = 2;
    let results: Vec<(f64, f64, f64)> = mdps
        .par_iter()
        .map(|mdp| {
            let p = TransitionModel::from_dense(&mdp.p).unwrap();
            let q = TransitionModel::from_dense(&mdp.q).unwrap();
            let qu = PolicyModel::from_rows(&mdp.qu).unwrap();
            let inputs = SynthesisInputs::new(&p, &q, &qu, n).keep_all_steps(true);
            let out = synthesize(&inputs).unwrap();
            let per_step = out.per_step_policies.unwrap();
            let synthesized = evaluate_global_kl(&per_step, &inputs, &mdp.initial).unwrap();
            let dense: Vec<Vec<Vec<f64>>> = per_step
                .iter()
                .map(|pm| pm.rows().map(|r| r.to_vec()).collect())
                .collect();
            let enumerated = enumerate_kl(mdp, &dense);
            let (_, brute) = brute_force(mdp, n);
            (synthesized, enumerated, brute)
        })
        .collect();
    let elapsed = start.elapsed();
    let gap = results.iter().map(|(s, _, b)| (s - b).abs()).fold(0.0, f64::max);
    let eval_err = results.iter().map(|(s, e, _)| (s - e).abs()).fold(0.0, f64::max);
    let beaten = results.iter().filter(|(s, _, b)| *b < s - 1e-9).count();
    let pass = gap <= 1e-2 && eval_err <= 1e-9 && beaten == 0 && elapsed < Duration::from_secs(300);
    outcome(
        pass,
        format!(
            "20 MDPs, max |KL_synth - KL_brute| {gap:.2e} (<= 1e-2), brute force better in {beaten}, \
             evaluator vs enumeration {eval_err:.1e}, {elapsed:.2?} (< 5 min)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. identity fixed point

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let (m, z) = (40, 6);
    let tensor: Vec<Vec<Vec<f64>>> = (0..m)
        .map(|_| (0..z).map(|_| random_pmf(&mut rng, m)).collect())
        .collect();
    let p = TransitionModel::from_dense(&tensor).unwrap();
    let qu = PolicyModel::from_rows(&(0..m).map(|_| random_pmf(&mut rng, z)).collect::<Vec<_>>()).unwrap();
    let out = synthesize(&SynthesisInputs::new(&p, &p, &qu, 10)).unwrap();
    let elapsed = start.elapsed();
    let tv = (0..m)
        .map(|i| total_variation(out.policy.row(i), qu.row(i)).unwrap())
        .fold(0.0, f64::max);
    let d = out.cost_table.d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let pass = tv <= 1e-9 && d <= 1e-12 && elapsed < Duration::from_secs(1);
    outcome(
        pass,
        format!("max row TV {tv:.1e} (<= 1e-9), max |d| {d:.1e}, {elapsed:.2?} (< 1 s)"),
    )
}

// ---------------------------------------------------------------------------
// 4. estimation consistency

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let (m, z) = (6, 3);
    let truth: Vec<Vec<Vec<f64>>> = (0..m)
        .map(|_| {
            (0..z)
                .map(|_| {
                    // some rows have structural zeros
                    let mut w: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
                    if rng.random_bool(0.5) {
                        w[rng.random_range(0..m)] = 0.0;
                    }
                    Histogram::from_weights(w).unwrap().into_inner()
                })
                .collect()
        })
        .collect();
    // state 5 is never visited and pair (2, 1) never tried
    let visited = |i: usize, h: usize| i != 5 && (i, h) != (2, 1);
    let mut counts = TransitionCounts::new(m, z);
    for i in 0..m {
        for h in 0..z {
            if !visited(i, h) {
                continue;
            }
            for _ in 0..100_000 {
                let j = prob::sample(&truth[i][h], &mut rng).unwrap();
                counts.record(Triplet::new(i, h, j)).unwrap();
            }
        }
    }
    let offsets = Offsets::default_for(m, z);
    let (model, policy) = build_models(&counts, offsets).unwrap();
    let mut worst = 0.0f64;
    for i in 0..m {
        for h in 0..z {
            if visited(i, h) {
                worst = worst.max(total_variation(&model.dense_row(i, h), &truth[i][h]).unwrap());
            }
        }
    }
    let file = ModelFile {
        state_grid: UniformGrid::from_counts(&[0.0], &[5.0], &[m]).unwrap(),
        input_grid: UniformGrid::from_counts(&[-1.0], &[1.0], &[z]).unwrap(),
        offsets,
        reference_policy: policy,
        reference_transitions: model.clone(),
        target_transitions: Some(model),
    };
    let reloaded = ModelFile::load(BufReader::new(file.to_text().as_bytes())).unwrap();
    let mut sum_err = 0.0f64;
    for t in [
        &reloaded.reference_transitions,
        reloaded.target_transitions.as_ref().unwrap(),
    ] {
        for i in 0..m {
            for h in 0..z {
                sum_err = sum_err.max((t.dense_row(i, h).iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    for row in reloaded.reference_policy.rows() {
        sum_err = sum_err.max((row.iter().sum::<f64>() - 1.0).abs());
    }
    let fallback = reloaded.reference_transitions.is_fallback(2, 1) && reloaded.reference_transitions.is_fallback(5, 0);
    let pass = worst < 0.02 && sum_err <= 1e-9 && fallback;
    outcome(
        pass,
        format!("max TV {worst:.2e} (< 0.02) over 1e5 samples per row, max |row sum - 1| {sum_err:.1e} (<= 1e-9), unvisited rows uniform: {fallback}"),
    )
}

// ---------------------------------------------------------------------------
// 5-7. pendulum benchmark through the pipeline

fn shipped(name: &str) -> PipelineConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    PipelineConfig::load(&path).unwrap()
}

struct Benchmark {
    unconstrained: Outcome,
    constrained: Outcome,
    negative: Outcome,
}

fn benchmarks(work: &Path) -> Benchmark {
    let start = Instant::now();
    let free = Pipeline::new(shipped("pendulum_swing_up.toml"), work.join("free")).unwrap();
    let data = free.generate_data(None).unwrap();
    free.estimate(None, None).unwrap();
    let synth = free.synthesize(None, None, |_| {}).unwrap();
    let eval = free.simulate(System::Target, None, None).unwrap();
    let elapsed = start.elapsed();
    let rate = eval.success_rate();
    let unconstrained = outcome(
        rate >= 0.9 && synth.max_kkt_residual <= 1e-7 && elapsed < Duration::from_secs(900),
        format!(
            "stabilized {}/{} ({:.0}% >= 90%), coverage {:.3}, max KKT residual {:.1e}, end-to-end {elapsed:.2?} (< 15 min)",
            eval.successes(),
            eval.rollouts.len(),
            100.0 * rate,
            data.target_coverage,
            synth.max_kkt_residual
        ),
    );

    let negative_policy = work.join("free/negative.txt");
    free.synthesize(Some(TransitionSource::Reference), Some(&negative_policy), |_| {})
        .unwrap();
    let neg = free.simulate(System::Target, Some(&negative_policy), None).unwrap();
    let failed = neg.rollouts.len() - neg.successes();
    let negative = outcome(
        2 * failed >= neg.rollouts.len(),
        format!(
            "policy from reference transitions failed {failed}/{} rollouts (>= 50%)",
            neg.rollouts.len()
        ),
    );

    let start = Instant::now();
    let bounded = Pipeline::new(shipped("pendulum_swing_up_constrained.toml"), work.join("constrained")).unwrap();
    bounded.generate_data(None).unwrap();
    bounded.estimate(None, None).unwrap();
    let synth = bounded.synthesize(None, None, |_| {}).unwrap();
    let eval = bounded.simulate(System::Target, None, None).unwrap();
    let elapsed = start.elapsed();
    let records = read_records(&eval.trajectory_path).unwrap();
    let max_tau = records.iter().fold(0.0f64, |a, r| a.max(r.tau.abs()));
    let policy = bounded.load_policy(&synth.policy_path).unwrap();
    let ig = bounded.config().input_grid().unwrap();
    let outside = policy
        .policy
        .rows()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(h, _)| ig.center(*h).unwrap()[0].abs() > 0.5)
                .map(|(_, q)| q)
                .sum::<f64>()
        })
        .fold(0.0f64, f64::max);
    let rate = eval.success_rate();
    let constrained = outcome(
        rate >= 0.9 && max_tau <= 5.75 && outside == 0.0,
        format!(
            "stabilized {}/{} ({:.0}% >= 90%), max |tau| {max_tau:.4} N·m (<= 5.75), max policy mass outside band {outside:.1e}, {elapsed:.2?}",
            eval.successes(),
            eval.rollouts.len(),
            100.0 * rate
        ),
    );
    Benchmark {
        unconstrained,
        constrained,
        negative,
    }
}

// ---------------------------------------------------------------------------
// 8. property suites (compact; the full suites run with each crate's tests)

fn dense_recursion(p: &[Vec<Vec<f64>>], q: &[Vec<Vec<f64>>], qu: &[Vec<f64>], n: usize, in_place: bool) -> Vec<f64> {
    let (m, z) = (p.len(), qu[0].len());
    let mut d = vec![0.0; m];
    for _ in 0..n {
        let mut next = d.clone();
        for i in 0..m {
            let source = if in_place { next.clone() } else { d.clone() };
            let total: f64 = (0..z)
                .map(|h| {
                    let kl: f64 = (0..m).map(|j| p[i][h][j] * (p[i][h][j] / q[i][h][j]).ln()).sum();
                    let r: f64 = (0..m).map(|j| p[i][h][j] * source[j]).sum();
                    (-(kl + r) + qu[i][h].ln()).exp()
                })
                .sum();
            next[i] = -total.ln();
        }
        d = next;
    }
    d
}

fn criterion_8() -> Outcome {
    let mut runner = TestRunner::new(ProptestConfig {
        cases: 256,
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    let mut checks = Vec::new();

    let pmf_pair = (2usize..8).prop_flat_map(|n| {
        (
            proptest::collection::vec(0.01f64..1.0, n),
            proptest::collection::vec(0.01f64..1.0, n),
        )
    });
    checks.push((
        "KL non-negative",
        runner
            .run(&pmf_pair, |(a, b)| {
                let p = Histogram::from_weights(a).unwrap().into_inner();
                let q = Histogram::from_weights(b).unwrap().into_inner();
                prop_assert!(prob::kl_divergence(&p, &q).unwrap() >= -1e-15);
                prop_assert!(prob::kl_divergence(&p, &p).unwrap().abs() <= 1e-15);
                Ok(())
            })
            .is_ok(),
    ));

    let grid = UniformGrid::new(&[-1.5872, -1.8107], &[1.9583, 19.6537], &[0.1223, 0.7402]).unwrap();
    checks.push((
        "quantizer round trip",
        runner
            .run(&(0usize..900, -0.49f64..0.49, -0.49f64..0.49), |(i, a, b)| {
                let c = grid.center(i).unwrap();
                prop_assert_eq!(grid.quantize(&c).unwrap(), i);
                let jittered = [c[0] + a * grid.step()[0], c[1] + b * grid.step()[1]];
                prop_assert_eq!(grid.quantize(&jittered).unwrap(), i);
                Ok(())
            })
            .is_ok(),
    ));

    // deferred commit: the synthesized cost table matches the dense
    // recursion that reads only the previous table, and differs from the
    // variant that overwrites it mid-sweep
    let p = vec![
        vec![vec![0.9, 0.1], vec![0.2, 0.8]],
        vec![vec![0.95, 0.05], vec![0.1, 0.9]],
    ];
    let q = vec![
        vec![vec![0.3, 0.7], vec![0.6, 0.4]],
        vec![vec![0.5, 0.5], vec![0.7, 0.3]],
    ];
    let qu = vec![vec![0.5, 0.5], vec![0.2, 0.8]];
    let (pm, qm) = (
        TransitionModel::from_dense(&p).unwrap(),
        TransitionModel::from_dense(&q).unwrap(),
    );
    let qum = PolicyModel::from_rows(&qu).unwrap();
    let out = synthesize(&SynthesisInputs::new(&pm, &qm, &qum, 3)).unwrap();
    let deferred = dense_recursion(&p, &q, &qu, 3, false);
    let in_place = dense_recursion(&p, &q, &qu, 3, true);
    let matches = out
        .cost_table
        .d
        .iter()
        .zip(&deferred)
        .all(|(a, b)| (a - b).abs() < 1e-12);
    let differs = out
        .cost_table
        .d
        .iter()
        .zip(&in_place)
        .any(|(a, b)| (a - b).abs() > 1e-6);
    checks.push(("deferred-commit detection", matches && differs));

    let costs = proptest::collection::vec(-3.0f64..3.0, 2..6);
    checks.push((
        "constraints only raise the cost",
        runner
            .run(&(costs, 0.05f64..0.95), |(c, frac)| {
                let z = c.len();
                let cost = LocalCost::new(c).unwrap();
                let free = solve_unconstrained(&cost);
                let weights: Vec<f64> = (0..z).map(|h| h as f64).collect();
                let bound = frac * (z - 1) as f64;
                let one = ConstraintSet::new().with(LinearConstraint::less_equal(weights, bound, "mean"));
                let tight = one.clone().with(LinearConstraint::less_equal(
                    (0..z).map(|h| if h == 0 { 1.0 } else { 0.0 }).collect(),
                    0.5,
                    "first",
                ));
                let a = solve_constrained(&cost, &one).unwrap();
                let b = solve_constrained(&cost, &tight).unwrap();
                prop_assert!(a.cost >= free.cost - 1e-9);
                prop_assert!(b.cost >= a.cost - 1e-9);
                Ok(())
            })
            .is_ok(),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let (m, z) = (12, 4);
    let tensor = |rng: &mut ChaCha8Rng| -> Vec<Vec<Vec<f64>>> {
        (0..m).map(|_| (0..z).map(|_| random_pmf(rng, m)).collect()).collect()
    };
    let (tp, tq) = (tensor(&mut rng), tensor(&mut rng));
    let (pm, qm) = (
        TransitionModel::from_dense(&tp).unwrap(),
        TransitionModel::from_dense(&tq).unwrap(),
    );
    let qum = PolicyModel::from_rows(&(0..m).map(|_| random_pmf(&mut rng, z)).collect::<Vec<_>>()).unwrap();
    let inputs = SynthesisInputs::new(&pm, &qm, &qum, 5);
    let same_policy = synthesize(&inputs).unwrap() == synthesize(&inputs).unwrap();
    let mut cfg = shipped("pendulum_swing_up.toml");
    cfg.simulation.excitation.episodes = 500;
    cfg.simulation.demonstrations.episodes = 5;
    let data = |seed| {
        let a = dfpd_pendulum::data::generate_target_excitation(&cfg.excitation_config().unwrap(), seed).unwrap();
        let b = dfpd_pendulum::data::generate_reference_dataset(&cfg.reference_config(), seed).unwrap();
        (a, b)
    };
    let same_data = data(3) == data(3) && data(3) != data(4);
    checks.push(("determinism under fixed seeds", same_policy && same_data));

    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let names: Vec<&str> = checks.iter().map(|(n, _)| *n).collect();
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} green", names.join(", "))
        } else {
            format!("failing: {}", failed.join(", "))
        },
    )
}

fn report(id: &str, name: &str, o: &Outcome, hard: bool) -> bool {
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    let note = if !o.pass && !hard { " (reported only)" } else { "" };
    println!("[{verdict}] {id} {name}: {}{note}", o.detail);
    o.pass || !hard
}

fn main() {
    // `cargo test -- --list` and filters from the harness are not meaningful here
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let work = tempfile::TempDir::new().unwrap();
    println!("acceptance suite");
    let mut ok = true;
    ok &= report("1", "solver oracle equivalence", &criterion_1(), true);
    ok &= report("2", "global optimum equivalence", &criterion_2(), true);
    ok &= report("3", "identity fixed point", &criterion_3(), true);
    ok &= report("4", "estimation consistency", &criterion_4(), true);
    let b = benchmarks(work.path());
    ok &= report("5", "pendulum, unconstrained", &b.unconstrained, true);
    ok &= report("6", "pendulum, |u| <= 0.5", &b.constrained, true);
    ok &= report("7", "negative control", &b.negative, false);
    ok &= report("8", "property suites", &criterion_8(), true);
    if !ok {
        println!("acceptance: FAILED");
        std::process::exit(1);
    }
    println!("acceptance: all hard criteria passed");
}
