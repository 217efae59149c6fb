//! Acceptance criteria for the four-tank benchmark. Prints one PASS/FAIL
//! line per criterion and exits nonzero if a criterion fails that is not
//! listed in `KNOWN_RED`.
//!
//! Run with `cargo test -p deeprc --test acceptance`.

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::Instant;

use deeprc::behavior::{predict, HankelPool};
use deeprc::controllers::{ExperimentMode, RunReport};
use deeprc::harness::{costs_csv, rank_trace_csv, run_experiment, trajectory_csv, ExperimentConfig, ExperimentReport};
use deeprc::lin_plant::{extended_realization, four_tank, step, PlantModel, Trajectory};
use deeprc::safe_set::{Admission, Branch, SafeSet};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria that fail for reasons recorded in the project notes; they are
/// still evaluated and printed.
const KNOWN_RED: &[u32] = &[2, 3];

const REF_J0: f64 = 10.7171;
const REF_CONVERGED: f64 = 7.7484;
const REF_2S_J1: f64 = 8.0201;
const REF_2S_J1_NOM: f64 = 8.0186;
const REF_1S_J1: f64 = 8.0192;
const REF_FIXED: [f64; 4] = [7.9852, 7.9401, 7.9298, 7.9227];

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn run_of(report: &ExperimentReport, mode: ExperimentMode) -> &RunReport {
    report.run(mode).unwrap_or_else(|| panic!("{mode} missing from report"))
}

fn table_regression(report: &ExperimentReport) -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;
    let mut check = |ok: bool, msg: String| {
        pass &= ok;
        notes.push(format!("{}{msg}", if ok { "" } else { "!" }));
    };
    for (mode, j1_real, j1_nom) in [
        (ExperimentMode::TwoStageLkb, REF_2S_J1, Some(REF_2S_J1_NOM)),
        (ExperimentMode::OneStage, REF_1S_J1, None),
    ] {
        let run = run_of(report, mode);
        let it = &run.iterations;
        check(it.len() > 2, format!("{mode} iterations {}", it.len()));
        if it.len() <= 2 {
            continue;
        }
        check(rel(it[0].cost_real, REF_J0) <= 0.05, format!("{mode} J0 {:.4}", it[0].cost_real));
        check(rel(it[1].cost_real, j1_real) <= 0.05, format!("{mode} J1 {:.4}", it[1].cost_real));
        if let Some(nom) = j1_nom {
            check(rel(it[1].cost_nominal, nom) <= 0.05, format!("{mode} J1nom {:.4}", it[1].cost_nominal));
        }
        check(
            it[1].horizon == Some(8) && it[2].horizon == Some(50),
            format!("{mode} N {:?}->{:?}", it[1].horizon, it[2].horizon),
        );
        for r in &it[2..] {
            check(rel(r.cost_real, REF_CONVERGED) <= 0.02, format!("{mode} J{} {:.4}", r.j, r.cost_real));
        }
    }
    Verdict {
        id: 1,
        name: "reference cost regression",
        pass,
        detail: notes.join(", "),
    }
}

fn rank_exactness(report: &ExperimentReport) -> Verdict {
    let run = run_of(report, ExperimentMode::TwoStageLkb);
    let needed = run.full_rank - run.initial_rank;
    let trace = &run.rank_trace;
    let steps: Vec<(usize, usize)> = trace
        .windows(2)
        .map(|w| (w[1].columns - w[0].columns, w[1].rank - w[0].rank))
        .collect();
    let unit = steps.iter().all(|&(c, r)| c == 1 && r == 1);
    let explored = run.exploration_steps();
    let designed = run.designed_steps();
    let end_rank = trace.last().map(|p| p.rank).unwrap_or(0);
    let pass = unit && explored == needed && designed == needed && end_rank == run.full_rank;
    let one = run_of(report, ExperimentMode::OneStage);
    Verdict {
        id: 2,
        name: "rank-increment exactness",
        pass,
        detail: format!(
            "2s-lkb: needed {needed}, exploration columns {} (+1 each: {unit}), nonzero-d steps {designed}, final rank {end_rank}; \
             1s: exploration columns {}, nonzero-d steps {}",
            steps.len(),
            one.exploration_steps(),
            one.designed_steps()
        ),
    }
}

fn passive_slower(report: &ExperimentReport) -> Verdict {
    let passive = run_of(report, ExperimentMode::Passive);
    let active = run_of(report, ExperimentMode::TwoStageLkb);
    let mut ties = Vec::new();
    let mut faster = Vec::new();
    for level in passive.initial_rank + 5..=active.full_rank {
        let a = active.columns_to_reach(level);
        let p = passive.columns_to_reach(level);
        match (a, p) {
            (Some(a), Some(p)) if p == a => ties.push(level),
            (Some(a), Some(p)) if p < a => faster.push(level),
            (None, _) => faster.push(level),
            _ => {}
        }
    }
    let span = |v: &[usize]| match (v.first(), v.last()) {
        (Some(a), Some(b)) => format!("{} levels ({a}..={b})", v.len()),
        _ => "none".into(),
    };
    let top = passive.rank_trace.last().map(|p| p.rank).unwrap_or(0);
    Verdict {
        id: 3,
        name: "passive slower than 2s-LKB",
        pass: ties.is_empty() && faster.is_empty(),
        detail: format!(
            "ties at {}, passive not slower at {}; passive reaches rank {top} after {} columns",
            span(&ties),
            span(&faster),
            passive.rank_trace.last().map(|p| p.columns - passive.rank_trace[0].columns).unwrap_or(0)
        ),
    }
}

fn rollout(plant: &PlantModel, x0: &DVector<f64>, inputs: &[DVector<f64>]) -> (DVector<f64>, Vec<DVector<f64>>) {
    let mut x = x0.clone();
    let mut ys = Vec::new();
    for u in inputs {
        let (xn, y) = step(plant, &x, u).unwrap();
        ys.push(y);
        x = xn;
    }
    (x, ys)
}

fn stack(v: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(v.iter().map(|x| x.len()).sum(), v.iter().flat_map(|x| x.iter().copied()))
}

fn prediction_oracle(report: &ExperimentReport) -> Verdict {
    let plant = four_tank();
    let ell = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // the initial pool, and a full-rank pool from a random input sequence
    let lay = report.initial.layout();
    let initial = HankelPool::from_trajectory(lay, 50, 4, 1e-6, &report.initial, 0).unwrap();
    let mut random = Trajectory::with_prefix(ell, &DVector::zeros(2), &DVector::zeros(2));
    let mut x = DVector::zeros(4);
    for _ in 0..400 {
        let u = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let (xn, y) = step(&plant, &x, &u).unwrap();
        random.push(u, y);
        x = xn;
    }
    let rich = HankelPool::from_trajectory(lay, 50, 4, 1e-6, &random, 0).unwrap();

    let mut worst = 0.0_f64;
    let mut horizons = Vec::new();
    for pool in [&initial, &rich] {
        let nmax = pool.max_horizon();
        horizons.push(nmax);
        for _ in 0..50 {
            let n = rng.random_range(1..=nmax);
            let blocks = pool.partition(ell, n).unwrap();
            let x0 = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let u_ini: Vec<_> = (0..ell).map(|_| DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0))).collect();
            let (x_now, y_ini) = rollout(&plant, &x0, &u_ini);
            let u: Vec<_> = (0..n).map(|_| DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0))).collect();
            let (_, y) = rollout(&plant, &x_now, &u);
            let y = stack(&y);
            let yhat = predict(&blocks, &stack(&u_ini), &stack(&y_ini), &stack(&u)).unwrap();
            worst = worst.max((&yhat - &y).norm() / y.norm().max(1e-300));
        }
    }
    Verdict {
        id: 4,
        name: "prediction oracle",
        pass: worst <= 1e-8,
        detail: format!("100 probes, max horizons {horizons:?}, worst relative error {worst:.2e}"),
    }
}

fn invariance_suite(report: &ExperimentReport, cfg: &ExperimentConfig) -> Verdict {
    let s = &cfg.settings;
    let lay = s.layout;
    let adm = Admission {
        input_box: &s.input_box,
        output_box: &s.output_box,
        box_tol: s.box_tol,
        terminal_tol: s.terminal_tol,
    };
    let mut safe = SafeSet::new(lay, &s.cost.u_target, &s.cost.y_target);
    safe.add_trajectory(&report.initial, &s.cost, 0, Branch::Nominal, &adm).unwrap();
    let j1 = &run_of(report, ExperimentMode::NominalFixed).iterations[1].real;
    safe.add_trajectory(j1, &s.cost, 1, Branch::Nominal, &adm).unwrap();
    let samples = safe.samples();
    let succ: Vec<usize> = (0..samples.len())
        .map(|i| match samples.get(i + 1) {
            Some(n) if n.iteration == samples[i].iteration && n.time == samples[i].time + 1 => i + 1,
            _ => i,
        })
        .collect();
    let ext = extended_realization(&cfg.plant, lay.ell).unwrap();
    let y_slot = lay.y_offset(lay.ell - 1);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_decrease = f64::NEG_INFINITY;
    let mut worst_dyn = 0.0_f64;
    let mut failures = 0;
    for _ in 0..100 {
        let picks: Vec<usize> = (0..3).map(|_| rng.random_range(0..samples.len())).collect();
        let w: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = w.iter().sum();
        let mut xi = DVector::zeros(lay.n_xi());
        for (k, &i) in picks.iter().enumerate() {
            xi += &samples[i].xi * (w[k] / total);
        }
        let Ok((p_now, gamma)) = safe.terminal_cost(&xi) else {
            failures += 1;
            continue;
        };
        let u_bar = safe.safe_policy(&gamma);
        let mut xi_next = DVector::zeros(lay.n_xi());
        for (i, g) in gamma.iter().enumerate() {
            xi_next += &samples[succ[i]].xi * *g;
        }
        let y_bar = xi_next.rows(y_slot, lay.p).into_owned();
        let xi_true = &ext.a * &xi + &ext.b * &u_bar;
        worst_dyn = worst_dyn.max((&xi_true - &xi_next).amax());
        let in_boxes = s.input_box.contains(&u_bar, 1e-9) && s.output_box.contains(&y_bar, 1e-9);
        match safe.terminal_cost(&xi_next) {
            Ok((p_next, _)) if in_boxes => {
                worst_decrease = worst_decrease.max(p_next - p_now + s.cost.eval(&u_bar, &y_bar));
            }
            _ => failures += 1,
        }
    }
    Verdict {
        id: 5,
        name: "safe-set invariance and decrease",
        pass: failures == 0 && worst_decrease <= 1e-6,
        detail: format!(
            "100 hull points, {failures} infeasible, max P(xi+) - P(xi) + h = {worst_decrease:.2e}, plant successor mismatch {worst_dyn:.2e} (terminal samples are their own successor)"
        ),
    }
}

fn feasibility_and_lyapunov(report: &ExperimentReport) -> Verdict {
    let mut worst = f64::NEG_INFINITY;
    let mut steps = 0;
    for run in &report.runs {
        for it in &run.iterations[1..] {
            worst = worst.max(it.lyapunov_excess);
            steps += it.steps;
        }
    }
    // an infeasible step aborts the run, so completed runs had none
    let complete = report.runs.len() == ExperimentMode::ALL.len();
    Verdict {
        id: 6,
        name: "recursive feasibility and Lyapunov decrease",
        pass: complete && worst <= 1e-6,
        detail: format!("{} modes, {steps} closed-loop steps, max J*(t+1) - J*(t) + h = {worst:.2e}", report.runs.len()),
    }
}

fn monotonicity(report: &ExperimentReport) -> Verdict {
    let mut worst = f64::NEG_INFINITY;
    for run in &report.runs {
        // exploring modes are compared once the pool is complete
        let first = if run.mode.explores() {
            run.iterations.iter().position(|it| it.rank_end == run.full_rank).map_or(run.iterations.len(), |k| k + 1)
        } else {
            1
        };
        for w in run.iterations[first.min(run.iterations.len())..].windows(2) {
            worst = worst.max(w[1].cost_real - w[0].cost_real);
        }
    }
    let fixed = run_of(report, ExperimentMode::NominalFixed);
    let costs: Vec<f64> = fixed.iterations[1..].iter().take(4).map(|it| it.cost_real).collect();
    let within = costs.len() == 4 && costs.iter().zip(REF_FIXED).all(|(c, t)| rel(*c, t) <= 0.05);
    let decreasing = costs.windows(2).all(|w| w[1] < w[0]);
    Verdict {
        id: 7,
        name: "iteration-cost monotonicity",
        pass: worst <= 1e-6 && within && decreasing,
        detail: format!(
            "max J(j+1) - J(j) = {worst:.2e}; fixed-horizon J1..J4 = [{}] (strictly decreasing: {decreasing})",
            costs.iter().map(|c| format!("{c:.4}")).collect::<Vec<_>>().join(", ")
        ),
    }
}

fn rpi_containment(report: &ExperimentReport, cfg: &ExperimentConfig) -> Verdict {
    let run = run_of(report, ExperimentMode::TwoStageLkb);
    let tube = run.tube.as_ref().expect("tube setup");
    let a_cl = tube.closed_loop();
    let dbar = cfg.settings.disturbance.upper.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = f64::NEG_INFINITY;
    for r in 0..40 {
        let mut e = DVector::zeros(a_cl.nrows());
        for _ in 0..500 {
            let d = DVector::from_fn(dbar.len(), |i, _| {
                if r % 2 == 0 {
                    rng.random_range(-dbar[i]..=dbar[i])
                } else if rng.random_bool(0.5) {
                    dbar[i]
                } else {
                    -dbar[i]
                }
            });
            e = &a_cl * e + &tube.b * d;
            for i in 0..e.len() {
                worst = worst.max(e[i].abs() - tube.rpi.radius[i]);
            }
        }
    }
    let s = &cfg.settings;
    let mut violations = 0;
    let mut checked = 0;
    for mode in [ExperimentMode::TwoStageLkb, ExperimentMode::OneStage] {
        for it in &run_of(report, mode).iterations[1..] {
            let t = &it.real;
            for k in 0..t.len() as i64 {
                checked += 1;
                if !s.input_box.contains(t.input(k).unwrap(), 0.0) || !s.output_box.contains(t.output(k).unwrap(), 0.0) {
                    violations += 1;
                }
            }
        }
    }
    Verdict {
        id: 8,
        name: "RPI containment and constraint satisfaction",
        pass: worst <= 1e-8 && violations == 0,
        detail: format!(
            "40 rollouts x 500 steps, max excess {worst:.2e}; {violations} box violations in {checked} real tube-mode steps"
        ),
    }
}

fn artifacts(report: &ExperimentReport) -> HashMap<String, String> {
    let mut out = HashMap::new();
    out.insert("costs.csv".to_string(), costs_csv(report));
    for run in &report.runs {
        out.insert(format!("rank_trace_{}.csv", run.mode), rank_trace_csv(run));
        for it in &run.iterations {
            out.insert(
                format!("trajectory_{}_{}.csv", run.mode, it.j),
                trajectory_csv(&it.real, it.nominal.as_ref()),
            );
        }
    }
    out
}

fn determinism(report: &ExperimentReport, cfg: &ExperimentConfig) -> Verdict {
    let again = run_experiment(cfg).expect("second run");
    let a = artifacts(report);
    let b = artifacts(&again);
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    Verdict {
        id: 9,
        name: "determinism",
        pass: differing.is_empty() && a.len() == b.len(),
        detail: format!("{} artifacts compared, {} differ", a.len(), differing.len()),
    }
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let clock = Instant::now();
    let mut cfg = ExperimentConfig::four_tank();
    // reference costs cover iterations 0..=4
    cfg.settings.max_iterations = 4;
    let report = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => {
            println!("FAIL  experiment aborted: {e}");
            return ExitCode::FAILURE;
        }
    };
    let verdicts = vec![
        table_regression(&report),
        rank_exactness(&report),
        passive_slower(&report),
        prediction_oracle(&report),
        invariance_suite(&report, &cfg),
        feasibility_and_lyapunov(&report),
        monotonicity(&report),
        rpi_containment(&report, &cfg),
        determinism(&report, &cfg),
    ];
    let mut unexpected = 0;
    for v in &verdicts {
        let tag = match (v.pass, KNOWN_RED.contains(&v.id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => {
                unexpected += 1;
                "FAIL"
            }
        };
        println!("{tag:<12} criterion {}: {} | {}", v.id, v.name, v.detail);
    }
    println!("acceptance finished in {:.1} s", clock.elapsed().as_secs_f64());
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
