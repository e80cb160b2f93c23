//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without the libtest harness.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::Instant;

use depd::engine::{asvr_beta_next, pd_step, run, FlatRun, NodeState, RoundInbox, RunConfig, StepSize};
use depd::estimators::{exact_expectation, exact_second_moment, Estimator, EstimatorKind, EstimatorState};
use depd::graph::Topology;
use depd::linalg;
use depd::metrics::{compute_reference, kkt_residuals, three_point_identity_check, psi, sigma_at_reference, Trace};
use depd::problem::{synth_dataset, LocalProblem, LossKind, Regularizer, SynthKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{desk_least_squares, desk_logistic, least_squares_closed_form, loglog_slope, median, ring_quadratic, two_stage_step};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Small random instance: `K ≤ 5`, `n ≤ 4`, logistic or least squares.
fn tiny_instance(rng: &mut ChaCha8Rng, seed: u64) -> LocalProblem<f64> {
    let k = rng.random_range(1..=5);
    let n = rng.random_range(1..=4);
    if rng.random_bool(0.5) {
        let ds = synth_dataset(n, k, SynthKind::separable_logistic(), seed).unwrap();
        let tau = rng.random_range(0.0..0.2);
        LocalProblem::new(ds, LossKind::LogisticL2 { tau }, Regularizer::Zero).unwrap()
    } else {
        let ds = synth_dataset(n, k, SynthKind::gaussian_least_squares(), seed).unwrap();
        LocalProblem::new(ds, LossKind::LeastSquares, Regularizer::Zero).unwrap()
    }
}

fn random_point(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Estimator whose memory sits at random points rather than at `x0`.
fn scrambled(kind: EstimatorKind, p: &LocalProblem<f64>, rng: &mut ChaCha8Rng) -> Estimator<f64> {
    let n = p.dim();
    let (mut est, _) = Estimator::new(kind, p, &random_point(rng, n, 2.0));
    for _ in 0..8 {
        let z = random_point(rng, n, 2.0);
        est.estimate(p, &z, rng);
    }
    if kind == EstimatorKind::AsvrInner {
        est.set_probability(rng.random_range(0.05..1.0)).unwrap();
    }
    est
}

/// `D_f(a, b) = f(a) − f(b) − ⟨∇f(b), a − b⟩` on the smooth part.
fn bregman(p: &LocalProblem<f64>, a: &[f64], b: &[f64]) -> f64 {
    let gb = p.full_grad(b).unwrap();
    p.value(a).unwrap() - p.value(b).unwrap() - linalg::dot(&gb, &linalg::sub(a, b))
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let kinds = [
        EstimatorKind::Sgd,
        EstimatorKind::Saga,
        EstimatorKind::SvrgPlusPlus,
        EstimatorKind::LooplessSvrg,
        EstimatorKind::Sega,
        EstimatorKind::AsvrInner,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for inst in 0..20u64 {
        let p = tiny_instance(&mut rng, 1000 + inst);
        let x = random_point(&mut rng, p.dim(), 2.0);
        let truth = p.full_grad(&x).unwrap();
        for kind in kinds {
            let est = scrambled(kind, &p, &mut rng);
            let e = exact_expectation(&est, &p, &x).map_err(|e| e.to_string())?;
            worst = worst.max(linalg::max_abs_diff(&e, &truth));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-12 && secs < 5.0,
        format!("max |E[g] - grad f| = {worst:.2e} (tol 1e-12), runtime {secs:.2}s (limit 5s)"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = f64::INFINITY;
    let mut worst_asvr = f64::INFINITY;
    for inst in 0..20u64 {
        let p = tiny_instance(&mut rng, 2000 + inst);
        let n = p.dim();
        let kk = p.num_components();
        let l = p.smoothness();
        let x_star = compute_reference(std::slice::from_ref(&p), &Topology::single(), 1e-12, 1_000_000)
            .map_err(|e| e.to_string())?
            .x_star;
        let x = random_point(&mut rng, n, 2.0);
        let d = bregman(&p, &x, &x_star);
        let grad_star = p.full_grad(&x_star).unwrap();
        let comp_star: Vec<Vec<f64>> = (0..kk).map(|k| p.component_grad(&x_star, k).unwrap()).collect();

        let sgd = Estimator::new(EstimatorKind::Sgd, &p, &x).0;
        let sigma2 = comp_star.iter().map(|c| linalg::dist_sq(c, &grad_star)).sum::<f64>() / kk as f64;
        let lhs = exact_second_moment(&sgd, &p, &x, &x_star).unwrap();
        worst = worst.min(4.0 * l * d + 2.0 * sigma2 - lhs);

        let saga = scrambled(EstimatorKind::Saga, &p, &mut rng);
        let EstimatorState::Saga(table) = saga.state() else {
            return Err("SAGA estimator without a table".into());
        };
        let phi = table.rows().zip(&comp_star).map(|(r, c)| linalg::dist_sq(r, c)).sum::<f64>() / kk as f64;
        let lhs = exact_second_moment(&saga, &p, &x, &x_star).unwrap();
        worst = worst.min(4.0 * l * d + 2.0 * phi - lhs);

        for kind in [EstimatorKind::SvrgPlusPlus, EstimatorKind::LooplessSvrg] {
            let est = scrambled(kind, &p, &mut rng);
            let snap = est.snapshot().unwrap().snapshot_x.clone();
            let phi = 2.0 * l * bregman(&p, &snap, &x_star);
            let lhs = exact_second_moment(&est, &p, &x, &x_star).unwrap();
            worst = worst.min(4.0 * l * d + 2.0 * phi - lhs);
        }

        for prob in [0.1, 0.5, 1.0] {
            let mut est = scrambled(EstimatorKind::AsvrInner, &p, &mut rng);
            est.set_probability(prob).unwrap();
            let snap = est.snapshot().unwrap().snapshot_x.clone();
            let lhs = exact_second_moment(&est, &p, &x, &x).unwrap();
            worst_asvr = worst_asvr.min(2.0 * l / prob * bregman(&p, &snap, &x) - lhs);
        }
    }
    check(
        worst >= -1e-9 && worst_asvr >= -1e-9,
        format!("min slack: second-moment bound {worst:.2e}, accelerated variance bound {worst_asvr:.2e} (tol -1e-9)"),
    )
}

fn exact_pd(rho: f64) -> RunConfig<f64> {
    let mut cfg = RunConfig::new(EstimatorKind::Full, rho, 20_000);
    cfg.threads = Some(1);
    cfg
}

fn criterion_3() -> Outcome {
    let (ps, topo) = ring_quadratic();
    let cfg = exact_pd(1.0);
    let mut run = FlatRun::new(&ps, &topo, &cfg).map_err(|e| e.to_string())?;
    let mut rounds = 0;
    let mut res = kkt_residuals(run.states(), &ps, &topo).unwrap();
    while rounds < 20_000 {
        for _ in 0..50 {
            run.step().map_err(|e| e.to_string())?;
        }
        rounds += 50;
        res = kkt_residuals(run.states(), &ps, &topo).unwrap();
        if res.consensus <= 1e-8 && res.dual_antisymmetry <= 1e-8 && res.stationarity <= 1e-6 {
            break;
        }
    }
    let closed = least_squares_closed_form(&ps);
    let err = run
        .states()
        .iter()
        .map(|s| linalg::max_abs_diff(&s.x, &closed))
        .fold(0.0, f64::max);
    check(
        res.consensus <= 1e-8 && res.dual_antisymmetry <= 1e-8 && res.stationarity <= 1e-6 && err <= 1e-6,
        format!(
            "{rounds} rounds: consensus {:.1e}, antisymmetry {:.1e}, stationarity {:.1e}, |x - closed form| {err:.1e}",
            res.consensus, res.dual_antisymmetry, res.stationarity
        ),
    )
}

fn criterion_4() -> Outcome {
    let (ps, topo) = ring_quadratic();
    let rho = 1.0;
    let reference = compute_reference(&ps, &topo, 1e-12, 1_000_000).map_err(|e| e.to_string())?;
    let cfg = exact_pd(rho);
    let mut run = FlatRun::new(&ps, &topo, &cfg).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let prev = run.states().to_vec();
        run.step().map_err(|e| e.to_string())?;
        let lhs = three_point_identity_check(&prev, run.states(), &reference, rho).unwrap();
        let scale = 1.0 + psi(&prev, &reference, rho).unwrap().abs();
        worst = worst.max(lhs / scale);
    }
    check(worst <= 1e-8, format!("max |dPsi + 2<dx, dlambda>| / (1 + |Psi|) = {worst:.2e} (tol 1e-8)"))
}

/// `(median oracle calls, median ergodic gap)` per recorded iteration.
fn median_ergodic(traces: &[Trace<f64>]) -> Vec<(f64, f64)> {
    let ergodic: Vec<Vec<(f64, f64)>> = traces
        .iter()
        .map(|t| {
            let mut sum = 0.0;
            t.rows[1..]
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    sum += r.bregman_gap;
                    (r.oracle_calls as f64, sum / (i + 1) as f64)
                })
                .collect()
        })
        .collect();
    let len = ergodic.iter().map(|e| e.len()).min().unwrap();
    (0..len)
        .map(|i| {
            let xs: Vec<f64> = ergodic.iter().map(|e| e[i].0).collect();
            let ys: Vec<f64> = ergodic.iter().map(|e| e[i].1).collect();
            (median(&xs), median(&ys))
        })
        .collect()
}

fn median_raw(traces: &[Trace<f64>]) -> Vec<(f64, f64)> {
    let len = traces.iter().map(|t| t.rows.len()).min().unwrap();
    (1..len)
        .map(|i| {
            let xs: Vec<f64> = traces.iter().map(|t| t.rows[i].oracle_calls as f64).collect();
            let ys: Vec<f64> = traces.iter().map(|t| t.rows[i].bregman_gap).collect();
            (median(&xs), median(&ys))
        })
        .collect()
}

fn final_decade(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let last = points.last().unwrap().0;
    points.iter().copied().filter(|p| p.0 >= last / 10.0).collect()
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for (kind, rho) in [
        (EstimatorKind::Saga, 0.5),
        (EstimatorKind::SvrgPlusPlus, 0.9),
        (EstimatorKind::LooplessSvrg, 0.5),
    ] {
        let mut traces = Vec::new();
        for seed in 1..=5u64 {
            let (ps, topo) = desk_logistic(seed);
            let reference = compute_reference(&ps, &topo, 1e-10, 1_000_000).map_err(|e| e.to_string())?;
            let mut cfg = RunConfig::new(kind, rho, 5000);
            cfg.seed = seed;
            traces.push(run(&ps, &topo, &cfg, Some(&reference)).map_err(|e| e.to_string())?);
        }
        let slope = loglog_slope(&final_decade(&median_ergodic(&traces)));
        let raw = loglog_slope(&final_decade(&median_raw(&traces)));
        ok &= (-1.6..=-0.7).contains(&slope);
        parts.push(format!("{kind} {slope:.3} (last-iterate {raw:.3})"));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 120.0;
    check(
        ok,
        format!("ergodic gap slopes in [-1.6, -0.7]: {}; runtime {secs:.1}s", parts.join(", ")),
    )
}

fn criterion_6() -> Outcome {
    let mut per_seed = Vec::new();
    for seed in 1..=5u64 {
        let (ps, topo) = desk_logistic(seed);
        let reference = compute_reference(&ps, &topo, 1e-10, 1_000_000).map_err(|e| e.to_string())?;
        let mut cfg = RunConfig::new(EstimatorKind::AsvrInner, 0.9, 0);
        cfg.seed = seed;
        cfg.epochs = Some(20);
        let trace = run(&ps, &topo, &cfg, Some(&reference)).map_err(|e| e.to_string())?;
        per_seed.push(trace.epochs.iter().map(|e| e.bregman_gap).collect::<Vec<f64>>());
    }
    let points: Vec<(f64, f64)> = (4..=20)
        .map(|s| {
            let gaps: Vec<f64> = per_seed.iter().map(|g| g[s - 1]).collect();
            (s as f64, median(&gaps))
        })
        .collect();
    let slope = loglog_slope(&points);
    let mut beta = 0.5f64;
    let mut beta_ok = true;
    for s in 1..=100u32 {
        beta_ok &= beta <= 2.0 / (s as f64 + 3.0);
        beta = asvr_beta_next(beta);
    }
    check(
        (-2.6..=-1.4).contains(&slope) && beta_ok,
        format!("median gap vs epoch slope over epochs 4-20 = {slope:.3} (range [-2.6, -1.4]); beta_s <= 2/(s+3) for s <= 100: {beta_ok}"),
    )
}

/// Median gap at the budget for each step size `c/(6L)` on the grid, with
/// the default step size first.
fn budget_gaps(kind: EstimatorKind, rho: f64, grid: &[f64]) -> Result<Vec<f64>, String> {
    let mut per_step = vec![Vec::new(); grid.len() + 1];
    for seed in 1..=5u64 {
        let (ps, topo) = desk_logistic(seed);
        let reference = compute_reference(&ps, &topo, 1e-10, 1_000_000).map_err(|e| e.to_string())?;
        let budget_per_node = 50 * ps[0].num_components();
        let budget = (budget_per_node * ps.len()) as u64;
        let l = ps.iter().map(|p| p.smoothness()).fold(0.0, f64::max);
        let steps = std::iter::once(StepSize::Auto).chain(grid.iter().map(|c| StepSize::Uniform(c / (6.0 * l))));
        for (slot, eta) in steps.enumerate() {
            let mut cfg = RunConfig::new(kind, rho, budget_per_node);
            cfg.seed = seed;
            cfg.eta = eta;
            if kind == EstimatorKind::Sgd {
                cfg.sigma = Some(ps.iter().map(|p| sigma_at_reference(p, &reference).unwrap()).collect());
            }
            let t = run(&ps, &topo, &cfg, Some(&reference)).map_err(|e| e.to_string())?;
            per_step[slot].push(t.gap_at_budget(budget).ok_or("no trace row within the budget")?);
        }
    }
    Ok(per_step.iter().map(|g| median(g)).collect())
}

/// Both methods at the default step size and at their best step size from a
/// shared grid.
fn criterion_7() -> Outcome {
    let grid = [0.5, 1.0, 2.0, 4.0, 8.0];
    let sgd = budget_gaps(EstimatorKind::Sgd, 0.5, &grid)?;
    let svrg = budget_gaps(EstimatorKind::SvrgPlusPlus, 0.9, &grid)?;
    let best = |g: &[f64]| {
        g[1..]
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, &v)| (grid[i], v))
            .unwrap()
    };
    let (c_sgd, a) = best(&sgd);
    let (c_svrg, b) = best(&svrg);
    check(
        2.0 * b <= a,
        format!(
            "median gap at 50 K_i calls/node, best eta = c/(6L): SGD {a:.3e} (c = {c_sgd}), SVRG {b:.3e} (c = {c_svrg}), ratio {:.1} (need >= 2); default steps: SGD {:.3e}, SVRG {:.3e}",
            a / b,
            sgd[0],
            svrg[0]
        ),
    )
}

fn criterion_8() -> Outcome {
    let (ps, topo) = desk_least_squares(8, 8);
    let reference = compute_reference(&ps, &topo, 1e-12, 1_000_000).map_err(|e| e.to_string())?;
    let iters = 5000;
    let mut cfg = RunConfig::new(EstimatorKind::Sega, 0.5, iters);
    cfg.seed = 8;
    let eta = 1.0 / (8.0 * 8.0 * ps.iter().map(|p| p.smoothness()).fold(0.0, f64::max));
    cfg.eta = StepSize::PerNode(ps.iter().map(|p| 1.0 / (8.0 * 8.0 * p.smoothness())).collect());
    let t = run(&ps, &topo, &cfg, Some(&reference)).map_err(|e| e.to_string())?;
    let first = t.rows[0].bregman_gap;
    let last = t.last().unwrap();
    let reduction = first / last.bregman_gap;
    let v = ps.len() as u64;
    let accounting = t.rows.iter().all(|r| r.sketched_calls == v * r.iter && r.oracle_calls == 0);
    check(
        reduction >= 10.0 && accounting && last.iter == iters as u64,
        format!(
            "gap {first:.3e} -> {:.3e} ({reduction:.1}x, need >= 10x; smallest eta {eta:.2e}); sketched calls = nodes x iterations on every row: {accounting}",
            last.bregman_gap
        ),
    )
}

fn criterion_9() -> Outcome {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut configs: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    configs.sort();
    if configs.is_empty() {
        return Err("no CI configs found".into());
    }
    let mut names = Vec::new();
    for cfg in &configs {
        let mut outputs = Vec::new();
        for threads in ["1", "2", "8"] {
            let out = Command::new(env!("CARGO_BIN_EXE_depd"))
                .args(["run", "--config"])
                .arg(cfg)
                .env("DEPD_THREADS", threads)
                .output()
                .map_err(|e| e.to_string())?;
            if !out.status.success() {
                return Err(format!("{}: {}", cfg.display(), String::from_utf8_lossy(&out.stderr)));
            }
            outputs.push(out.stdout);
        }
        if !outputs.windows(2).all(|w| w[0] == w[1]) || outputs[0].is_empty() {
            return Err(format!("{} differs across thread counts", cfg.display()));
        }
        names.push(cfg.file_name().unwrap().to_string_lossy().into_owned());
    }
    Ok(format!("byte-identical CSV at 1, 2, 8 threads for {}", names.join(", ")))
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut worst = 0.0f64;
    for trial in 0..5u64 {
        let v = rng.random_range(2..=7);
        let topo = Topology::random_connected(v, (v - 1 + trial as usize).min(v * (v - 1) / 2), trial).unwrap();
        let n = rng.random_range(1..=5);
        let rho = rng.random_range(0.1..2.0);
        let etas: Vec<f64> = (0..v).map(|_| rng.random_range(0.01..0.5)).collect();
        let reg = match trial % 3 {
            0 => Regularizer::l1(rng.random_range(0.01..0.5)).unwrap(),
            1 => Regularizer::squared_l2(rng.random_range(0.01..0.5)).unwrap(),
            _ => Regularizer::boxed(vec![-0.5; n], vec![0.7; n]).unwrap(),
        };
        let init: Vec<NodeState<f64>> = (0..v)
            .map(|i| NodeState {
                x: random_point(&mut rng, n, 1.0),
                duals: (0..topo.degree(i)).map(|_| random_point(&mut rng, n, 1.0)).collect(),
                subgradient: vec![0.0; n],
            })
            .collect();
        let mut one = init.clone();
        let mut two = init;
        for _ in 0..100 {
            let grads: Vec<Vec<f64>> = (0..v).map(|_| random_point(&mut rng, n, 1.0)).collect();
            let next_one: Vec<NodeState<f64>> = (0..v)
                .map(|i| pd_step(&one[i].x, &RoundInbox::gather(&topo, i, &one), &grads[i], etas[i], rho, &reg).unwrap())
                .collect();
            let next_two: Vec<NodeState<f64>> = (0..v)
                .map(|i| two_stage_step(i, &two, &topo, &grads[i], etas[i], rho, &reg))
                .collect();
            one = next_one;
            two = next_two;
            for (a, b) in one.iter().zip(&two) {
                worst = worst.max(linalg::max_abs_diff(&a.x, &b.x));
                for (la, lb) in a.duals.iter().zip(&b.duals) {
                    worst = worst.max(linalg::max_abs_diff(la, lb));
                }
            }
        }
    }
    check(worst <= 1e-12, format!("max trajectory difference over 100 rounds = {worst:.2e} (tol 1e-12)"))
}

fn main() -> ExitCode {
    let criteria: [(u32, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, f) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {id}: PASS  {d}  [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("criterion {id}: FAIL  {d}  [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
