//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints a PASS/FAIL line; the process fails if any check fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use erpf::dynamics::{
    build_prediction_matrices, lane_change_reference, rollout, stack_controls, unstack_states,
    ControlInput, LinearModel, VehicleState,
};
use erpf::flops::{self, FlopCounter};
use erpf::io::{export_log, read_trajectory, trajectory_rows, write_trajectory};
use erpf::mpc::{build_quadratic, solve, BoxConstraints, MpcWeights, Problem, SolverConfig};
use erpf::risk_ellipse::{aspect_ratio_sweep, EllipseParams};
use erpf::risk_field::{
    erpf_gradient, erpf_value, EvolutionMode, RiskField, RiskFieldParams, RiskTerm,
};
use erpf::sim::{
    compute_metrics, highway, monte_carlo, run_scenario, scenario1, scenario2, ControllerKind,
    SimConfig, UncertaintyModel,
};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn noisy() -> SimConfig {
    SimConfig {
        uncertainty: Some(UncertaintyModel::default()),
        ..SimConfig::default()
    }
}

fn lane_change() -> Check {
    let start = Instant::now();
    let log = run_scenario(
        &scenario1(),
        ControllerKind::ErpfMpc,
        0,
        &SimConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    let m = compute_metrics(&log).map_err(|e| e.to_string())?;
    let min = m.min_distance.unwrap_or(f64::NAN);
    let summary = format!(
        "collisions {}, min distance {min:.3} m (soft target 2.3 +/- 0.5: {}), lane change at {:?} s, runtime {elapsed:.3} s",
        m.collision_count,
        if (min - 2.3).abs() <= 0.5 { "met" } else { "missed" },
        m.lane_change_time
    );
    ensure(log.is_valid(), format!("run failed: {:?}", log.failure))?;
    ensure(m.collision_count == 0, &summary)?;
    ensure(min >= 2.0, &summary)?;
    ensure(m.lane_change_time.is_some(), &summary)?;
    ensure(elapsed < 10.0, &summary)?;
    Ok(summary)
}

fn monte_carlo_ordering() -> Check {
    let start = Instant::now();
    let s = monte_carlo(&scenario2(), &ControllerKind::ALL, 20, 0, &noisy())
        .map_err(|e| e.to_string())?;
    let get = |k: ControllerKind| {
        s.iter()
            .find(|c| c.controller == k)
            .expect("controller present")
    };
    let (erpf, rpf, plain, cbf) = (
        get(ControllerKind::ErpfMpc),
        get(ControllerKind::RpfMpc),
        get(ControllerKind::PlainMpc),
        get(ControllerKind::CbfFilter),
    );
    for c in [erpf, rpf, plain, cbf] {
        ensure(
            c.invalid_seeds.is_empty(),
            format!("{} failed on seeds {:?}", c.controller, c.invalid_seeds),
        )?;
    }
    let mean = |c: &erpf::sim::ControllerSummary| c.collisions.map_or(f64::NAN, |s| s.mean);
    let speed = |c: &erpf::sim::ControllerSummary| c.avg_speed.map_or(f64::NAN, |s| s.mean);
    let summary = format!(
        "mean collisions erpf {} / cbf {} / rpf {} / plain {}; speeds erpf {:.2} cbf {:.2} m/s; erpf min distance {:.3} m; {:.1} s",
        mean(erpf),
        mean(cbf),
        mean(rpf),
        mean(plain),
        speed(erpf),
        speed(cbf),
        erpf.min_distance.map_or(f64::NAN, |d| d.min),
        start.elapsed().as_secs_f64()
    );
    ensure(
        erpf.runs.iter().all(|r| r.metrics.collision_count == 0),
        format!("erpf collided: {summary}"),
    )?;
    ensure(
        mean(erpf) == 0.0
            && mean(erpf) <= mean(cbf)
            && mean(cbf) < mean(rpf)
            && mean(rpf) <= mean(plain),
        format!("ordering broken: {summary}"),
    )?;
    ensure(
        (speed(erpf) - 35.0).abs() <= 3.5 && speed(erpf) > speed(cbf),
        format!("speed check: {summary}"),
    )?;
    Ok(summary)
}

fn six_vehicle_highway() -> Check {
    let log = run_scenario(
        &highway(),
        ControllerKind::ErpfMpc,
        0,
        &SimConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let m = compute_metrics(&log).map_err(|e| e.to_string())?;
    let min = m.min_distance.unwrap_or(f64::NAN);
    let summary = format!(
        "{} vehicles around ego, collisions {}, min clearance {min:.3} m over {} ticks",
        log.obstacle_ids.len(),
        m.collision_count,
        m.steps
    );
    ensure(
        log.is_valid() && m.collision_count == 0 && min >= 2.0,
        &summary,
    )?;
    Ok(summary)
}

fn ellipse_sweep() -> Check {
    let p = EllipseParams::default();
    let ttc: Vec<f64> = (1..=20).map(|i| 0.5 * i as f64).collect();
    let twh: Vec<f64> = (1..=20).map(|i| 0.1 * i as f64).collect();
    let cells = aspect_ratio_sweep(&ttc, &twh, 10.0, 2.0, &p).map_err(|e| e.to_string())?;
    let at = |i: usize, j: usize| &cells[i * twh.len() + j];
    let target = cells
        .iter()
        .find(|c| (c.ttc - 4.0).abs() < 1e-12 && (c.twh - 0.2).abs() < 1e-12)
        .ok_or("grid lacks the (4, 0.2) cell")?;
    ensure(
        target.aspect_ratio > 5.0,
        format!("a/b = {} at TTC 4, TWH 0.2", target.aspect_ratio),
    )?;

    let mut checked = 0;
    for v_rel in [2.0, 5.0, 10.0, 20.0, 40.0] {
        for w in [1.5, 2.0, 3.0] {
            let grid = aspect_ratio_sweep(&ttc, &twh, v_rel, w, &p).map_err(|e| e.to_string())?;
            for c in &grid {
                ensure(
                    c.a > 0.0 && c.a <= p.a_cap && c.b >= w / 2.0 && c.b <= p.b_cap,
                    format!("cap violated: {c:?} at v_rel {v_rel}"),
                )?;
                checked += 1;
            }
        }
    }
    for j in 0..twh.len() {
        for i in 1..ttc.len() {
            let (prev, cur) = (at(i - 1, j), at(i, j));
            ensure(cur.a >= prev.a, format!("a decreases in TTC at {cur:?}"))?;
            ensure(
                cur.aspect_ratio >= prev.aspect_ratio,
                format!("a/b decreases in TTC at {cur:?}"),
            )?;
        }
    }
    for i in 0..ttc.len() {
        for j in 1..twh.len() {
            let (prev, cur) = (at(i, j - 1), at(i, j));
            ensure(cur.b >= prev.b, format!("b decreases in TWH at {cur:?}"))?;
        }
    }
    Ok(format!(
        "a/b = {:.3} at (TTC 4 s, TWH 0.2 s); caps hold on {checked} cells; rows and columns monotone",
        target.aspect_ratio
    ))
}

fn near_kink(d: f64, params: &RiskFieldParams) -> bool {
    (d - params.d_safe).abs() < 1e-3 || (d - params.epsilon).abs() < 1e-3
}

fn numerical_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = LinearModel::new(0.1).map_err(|e| e.to_string())?;
    let params = RiskFieldParams::default();
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1.0);

    // Field gradient against central differences.
    let mut field_checks = 0;
    let mut worst_field = 0.0f64;
    for _ in 0..500 {
        let terms: Vec<RiskTerm> = (0..3)
            .map(|_| RiskTerm {
                position: Vector2::new(rng.gen_range(-10.0..10.0), rng.gen_range(0.0..7.0)),
                velocity: Vector2::new(rng.gen_range(-5.0..5.0), 0.0),
                gain: rng.gen_range(0.5..2.0),
                eta: rng.gen_range(1.0..3.0),
            })
            .collect();
        let k = rng.gen_range(0..5);
        let s = VehicleState::new(rng.gen_range(-8.0..8.0), rng.gen_range(0.0..7.0), 20.0);
        if terms
            .iter()
            .any(|t| near_kink((s.position() - t.position_at(k, 0.1)).norm(), &params))
        {
            continue;
        }
        let g = erpf_gradient(&s, &terms, k, 0.1, &params);
        let h = 1e-6;
        for axis in 0..2 {
            let mut sp = s;
            let mut sm = s;
            if axis == 0 {
                sp.x += h;
                sm.x -= h;
            } else {
                sp.y += h;
                sm.y -= h;
            }
            let fd = (erpf_value(&sp, &terms, k, 0.1, &params)
                - erpf_value(&sm, &terms, k, 0.1, &params))
                / (2.0 * h);
            worst_field = worst_field.max(rel(g[axis], fd));
        }
        field_checks += 1;
    }
    ensure(
        worst_field <= 1e-5,
        format!("field gradient error {worst_field:e}"),
    )?;

    // Full objective gradient.
    let n = 12;
    let pred = build_prediction_matrices(&model, n).map_err(|e| e.to_string())?;
    let s0 = VehicleState::new(0.0, 1.75, 28.0);
    let reference =
        lane_change_reference(1.75, 5.25, 30.0, 0.0, n, 0.1).map_err(|e| e.to_string())?;
    let qf = build_quadratic(&pred, &MpcWeights::default(), s0, &reference)
        .map_err(|e| e.to_string())?;
    let bounds = BoxConstraints::default().with_band(0.5, 6.5);
    let field = RiskField::new(
        vec![
            RiskTerm {
                position: Vector2::new(18.0, 1.75),
                velocity: Vector2::new(15.0, 0.0),
                gain: 1.0,
                eta: 2.3,
            },
            RiskTerm {
                position: Vector2::new(10.0, 5.25),
                velocity: Vector2::new(25.0, 0.0),
                gain: 0.8,
                eta: 1.4,
            },
        ],
        0.1,
        params.clone(),
    );
    let problem = Problem {
        quadratic: &qf,
        prediction: &pred,
        s0,
        field: Some(&field),
        gamma: 120.0,
        bounds: &bounds,
        state_penalty: 1e3,
    };
    let mut objective_checks = 0;
    let mut worst_objective = 0.0f64;
    for _ in 0..60 {
        let u = DVector::from_fn(2 * n, |i, _| {
            if i % 2 == 0 {
                rng.gen_range(-3.0..3.0)
            } else {
                rng.gen_range(-1.5..1.5)
            }
        });
        let states = unstack_states(&pred.predict(s0, &u));
        let kinked = states.iter().enumerate().take(n).any(|(k, s)| {
            field
                .terms
                .iter()
                .any(|t| near_kink((s.position() - t.position_at(k, 0.1)).norm(), &params))
        }) || states
            .iter()
            .any(|s| (s.y - 0.5).abs() < 1e-3 || (s.y - 6.5).abs() < 1e-3);
        if kinked {
            continue;
        }
        let (_, g) = problem.evaluate(&u, None);
        let h = 1e-6;
        for i in 0..u.len() {
            let mut up = u.clone();
            let mut um = u.clone();
            up[i] += h;
            um[i] -= h;
            let fd = (problem.evaluate(&up, None).0 - problem.evaluate(&um, None).0) / (2.0 * h);
            worst_objective = worst_objective.max(rel(g[i], fd));
        }
        objective_checks += 1;
    }
    ensure(
        worst_objective <= 1e-5 && objective_checks >= 20 && field_checks >= 200,
        format!("objective gradient error {worst_objective:e} over {objective_checks} points"),
    )?;

    // Stacked prediction against step-by-step rollout.
    let mut worst_rollout = 0.0f64;
    for _ in 0..50 {
        let controls: Vec<ControlInput> = (0..n)
            .map(|_| ControlInput::new(rng.gen_range(-6.0..3.0), rng.gen_range(-2.5..2.5)))
            .collect();
        let s = VehicleState::new(
            rng.gen_range(-50.0..50.0),
            rng.gen_range(0.0..7.0),
            rng.gen_range(0.0..40.0),
        );
        let iterated = rollout(s, &controls, &model).map_err(|e| e.to_string())?;
        let stacked = unstack_states(&pred.predict(s, &stack_controls(&controls)));
        for (a, b) in iterated.iter().zip(&stacked) {
            worst_rollout = worst_rollout
                .max((a.x - b.x).abs())
                .max((a.y - b.y).abs())
                .max((a.v - b.v).abs());
        }
    }
    ensure(
        worst_rollout <= 1e-9,
        format!("rollout mismatch {worst_rollout:e}"),
    )?;

    // No risk term: the solver recovers the linear-system minimiser.
    let small_ref =
        lane_change_reference(1.75, 2.5, 30.5, 0.0, 10, 0.1).map_err(|e| e.to_string())?;
    let pred10 = build_prediction_matrices(&model, 10).map_err(|e| e.to_string())?;
    let s_c = VehicleState::new(0.0, 1.75, 30.0);
    let qf10 = build_quadratic(&pred10, &MpcWeights::default(), s_c, &small_ref)
        .map_err(|e| e.to_string())?;
    let exact = qf10
        .h
        .clone()
        .lu()
        .solve(&(-&qf10.g))
        .ok_or("singular Hessian")?;
    let c_problem = Problem {
        quadratic: &qf10,
        prediction: &pred10,
        s0: s_c,
        field: None,
        gamma: 0.0,
        bounds: &bounds,
        state_penalty: 1e3,
    };
    let tight = SolverConfig {
        max_iters: 20_000,
        tol: 1e-9,
        ..SolverConfig::default()
    };
    let out = solve(&c_problem, &tight, &DVector::zeros(20), None).map_err(|e| e.to_string())?;
    let closed_form = (&out.u - &exact).norm() / exact.norm();
    ensure(
        closed_form <= 1e-6,
        format!("closed-form relative error {closed_form:e}"),
    )?;

    // Two-step problem against an exhaustive grid.
    let pred2 = build_prediction_matrices(&model, 2).map_err(|e| e.to_string())?;
    let s_d = VehicleState::new(0.0, 1.75, 20.0);
    let ref2 = lane_change_reference(1.75, 5.25, 25.0, 0.0, 2, 0.1).map_err(|e| e.to_string())?;
    let qf2 =
        build_quadratic(&pred2, &MpcWeights::default(), s_d, &ref2).map_err(|e| e.to_string())?;
    let unit_box = BoxConstraints {
        a_min: -1.0,
        a_max: 1.0,
        vy_min: -1.0,
        vy_max: 1.0,
        ..BoxConstraints::default().with_band(0.5, 6.5)
    };
    let obstacle = RiskField::new(
        vec![RiskTerm {
            position: Vector2::new(1.5, 2.2),
            velocity: Vector2::zeros(),
            gain: 1.0,
            eta: 1.7,
        }],
        0.1,
        params.clone(),
    );
    let d_problem = Problem {
        quadratic: &qf2,
        prediction: &pred2,
        s0: s_d,
        field: Some(&obstacle),
        gamma: 120.0,
        bounds: &unit_box,
        state_penalty: 1e3,
    };
    let grid: Vec<f64> = (0..=40).map(|i| -1.0 + 0.05 * i as f64).collect();
    let mut best = f64::INFINITY;
    for &a0 in &grid {
        for &v0 in &grid {
            for &a1 in &grid {
                for &v1 in &grid {
                    let u = DVector::from_vec(vec![a0, v0, a1, v1]);
                    best = best.min(d_problem.evaluate(&u, None).0);
                }
            }
        }
    }
    let d_out = solve(
        &d_problem,
        &SolverConfig::default(),
        &DVector::zeros(4),
        None,
    )
    .map_err(|e| e.to_string())?;
    ensure(
        d_out.value <= best + 1e-3,
        format!("solver {} vs grid {best}", d_out.value),
    )?;

    // Without evolution gain the two field controllers coincide.
    let mut flat = SimConfig::default();
    flat.planner.risk.lambda = 0.0;
    flat.uncertainty = Some(UncertaintyModel::default());
    let mut identical = 0;
    for (scenario, seed) in [(scenario1(), 0), (scenario2(), 4)] {
        let a = run_scenario(&scenario, ControllerKind::ErpfMpc, seed, &flat)
            .map_err(|e| e.to_string())?;
        let b = run_scenario(&scenario, ControllerKind::RpfMpc, seed, &flat)
            .map_err(|e| e.to_string())?;
        let same = a.records.len() == b.records.len()
            && a.records
                .iter()
                .zip(&b.records)
                .all(|(x, y)| x.state == y.state && x.control == y.control);
        ensure(same, format!("trajectories differ on {}", scenario.name))?;
        identical += 1;
    }

    Ok(format!(
        "gradients: field {worst_field:.1e} over {field_checks} points, objective {worst_objective:.1e} over {objective_checks}; \
         rollout {worst_rollout:.1e}; closed form {closed_form:.1e}; grid oracle: solver {:.6} vs {best:.6}; \
         zero evolution gain: {identical} scenarios identical",
        d_out.value
    ))
}

fn smoothness() -> Check {
    let run = |mode: EvolutionMode| -> Result<f64, String> {
        let mut cfg = SimConfig::default();
        cfg.planner.evolution = mode;
        let log = run_scenario(&scenario1(), ControllerKind::ErpfMpc, 0, &cfg)
            .map_err(|e| e.to_string())?;
        Ok(compute_metrics(&log)
            .map_err(|e| e.to_string())?
            .max_control_change)
    };
    let sigmoid = run(EvolutionMode::Sigmoid)?;
    let indicator = run(EvolutionMode::Indicator)?;
    let summary = format!("max |du|: sigmoid {sigmoid:.4}, indicator {indicator:.4}");
    ensure(sigmoid < indicator, &summary)?;
    Ok(summary)
}

fn determinism_and_formats() -> Check {
    let cfg = noisy();
    let a =
        run_scenario(&scenario2(), ControllerKind::ErpfMpc, 7, &cfg).map_err(|e| e.to_string())?;
    let b =
        run_scenario(&scenario2(), ControllerKind::ErpfMpc, 7, &cfg).map_err(|e| e.to_string())?;
    let da = tempfile::tempdir().map_err(|e| e.to_string())?;
    let db = tempfile::tempdir().map_err(|e| e.to_string())?;
    let pa = export_log(&a, da.path()).map_err(|e| e.to_string())?;
    let pb = export_log(&b, db.path()).map_err(|e| e.to_string())?;
    for (x, y) in [
        (&pa.trajectory, &pb.trajectory),
        (&pa.metrics, &pb.metrics),
        (&pa.diagnostics, &pb.diagnostics),
    ] {
        let (bx, by) = (
            std::fs::read(x).map_err(|e| e.to_string())?,
            std::fs::read(y).map_err(|e| e.to_string())?,
        );
        ensure(
            bx == by,
            format!("{} differs between identical runs", x.display()),
        )?;
    }

    let mut buf = Vec::new();
    write_trajectory(&a, &mut buf).map_err(|e| e.to_string())?;
    let (_, rows) = read_trajectory(buf.as_slice()).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (r, e) in rows.iter().zip(trajectory_rows(&a)) {
        let lhs = [r.t, r.x, r.y, r.v, r.a_cmd, r.vy_cmd, r.v_erpf];
        let rhs = [e.t, e.x, e.y, e.v, e.a_cmd, e.vy_cmd, e.v_erpf];
        for (p, q) in lhs
            .iter()
            .chain(&r.distances)
            .chain(&r.etas)
            .zip(rhs.iter().chain(&e.distances).chain(&e.etas))
        {
            worst = worst.max((p - q).abs());
        }
    }
    ensure(
        rows.len() == a.records.len() && worst <= 1e-9,
        format!("round trip error {worst:e}"),
    )?;

    // Field cost per interaction and per evaluated state.
    let params = RiskFieldParams::default();
    let s = VehicleState::new(0.0, 1.75, 30.0);
    let mut per_state = Vec::new();
    for n_obs in 1..=6usize {
        let terms = (0..n_obs)
            .map(|i| RiskTerm {
                position: Vector2::new(4.0 * i as f64 + 3.0, if i % 2 == 0 { 1.75 } else { 5.25 }),
                velocity: Vector2::new(20.0, 0.0),
                gain: 1.0,
                eta: 1.5,
            })
            .collect();
        let field = RiskField::new(terms, 0.1, params.clone());
        let counter = FlopCounter::new();
        for k in 0..30 {
            field.evaluate(&s, k, Some(&counter));
        }
        let snap = counter.snapshot();
        ensure(
            snap.interactions == 30 * n_obs as u64
                && snap.flops == snap.interactions * flops::INTERACTION,
            format!("non-constant interaction cost with {n_obs} obstacles: {snap:?}"),
        )?;
        per_state.push(snap.flops / 30);
    }
    let linear = per_state
        .iter()
        .enumerate()
        .all(|(i, &f)| f == (i as u64 + 1) * per_state[0]);
    ensure(linear, format!("per-state cost not linear: {per_state:?}"))?;

    let log = run_scenario(
        &highway(),
        ControllerKind::ErpfMpc,
        0,
        &SimConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let m = compute_metrics(&log).map_err(|e| e.to_string())?;
    let n_obs = log.obstacle_ids.len() as u64;
    ensure(
        m.interactions_total % n_obs == 0,
        "closed-loop interactions not a multiple of the obstacle count",
    )?;
    let interaction = flops::INTERACTION as f64;
    let state_cost = (n_obs * flops::INTERACTION) as f64;
    let within = |ours: f64, theirs: f64| ours / theirs <= 10.0 && theirs / ours <= 10.0;
    ensure(
        within(interaction, 60.7) && within(state_cost, 350.0),
        format!("order of magnitude: {interaction} vs 60.7, {state_cost} vs 350"),
    )?;
    Ok(format!(
        "exports byte-identical, round trip {worst:.1e}; {interaction} ops per interaction (reference 60.7), \
         {state_cost} per evaluated state with {n_obs} vehicles (reference 350), per-state cost {per_state:?}"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("lane change with slow leader", lane_change),
        ("monte carlo controller ordering", monte_carlo_ordering),
        ("six-vehicle highway", six_vehicle_highway),
        ("ellipse aspect-ratio sweep", ellipse_sweep),
        ("numerical properties", numerical_suite),
        ("sigmoid vs indicator smoothness", smoothness),
        (
            "determinism, formats and operation counts",
            determinism_and_formats,
        ),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
