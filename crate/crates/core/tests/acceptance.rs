//! Acceptance suite. Prints one line per criterion and exits non-zero when
//! any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use synchro::harness::{
    high_order_equilibrium, plan, rmse_window, run_comparison, ClosedLoop, Scenario, ScenarioEvent, Signal,
};
use synchro::models::{
    damped_manifolds, elemental_fast_residual, elemental_manifolds, elemental_rhs, BusSignal, HighOrderConfig,
    HighOrderModel, ModelKind, SecondOrderState, IDX,
};
use synchro::network::LoadDemand;
use synchro::params::{derive_constants, MachineParameters, Setpoints};
use synchro::solver::{eigenvalues, finite_difference_jacobian, integrate, FnSystem, IntegratorConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn table_ii() -> MachineParameters {
    MachineParameters::table_ii()
}

fn ho(p: &MachineParameters) -> HighOrderModel {
    HighOrderModel::new(p, HighOrderConfig::default()).expect("model")
}

fn equilibrium_fidelity() -> Outcome {
    let p = table_ii();
    let m = ho(&p);
    let load = LoadDemand::new(0.05, 0.0);
    let op = high_order_equilibrium(&m, &load, 1.0).expect("equilibrium");
    let (vq, vd) = op.bus.machine_frame(op.x.delta());
    let eval = m.evaluate(&op.x.x, vq, vd, &op.sp).expect("evaluation");
    let rhs = eval.dx.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mis = load.mismatch(vq, vd, eval.stator.i_q, eval.stator.i_d);
    let bus = mis[0].abs().max(mis[1].abs());
    outcome(
        rhs < 1e-8 && bus < 1e-9 && (op.bus.v_l - 1.0).abs() < 1e-6,
        format!("|rhs|inf = {rhs:.2e}, bus residual = {bus:.2e}, V_l = {:.9}, V_r = {:.6}", op.bus.v_l, op.sp.v_ref),
    )
}

fn manifold_fixed_point() -> Outcome {
    let p = table_ii();
    let c = derive_constants(&p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let (mut accepted, mut rejected) = (0, 0);
    // Past about 1.2 rad of load angle the exciter loop has no real solution,
    // so such draws are redrawn and counted.
    while accepted < 100 {
        let s = SecondOrderState {
            delta: rng.random_range(-1.5..1.5),
            omega: p.omega0 + rng.random_range(-5.0..5.0),
        };
        let bus = BusSignal::fixed(rng.random_range(0.8..1.2), rng.random_range(-1.0..1.0));
        let sp = Setpoints {
            v_ref: rng.random_range(0.9..1.1),
            p_c: rng.random_range(0.0..0.5),
        };
        let Ok(z) = elemental_manifolds(s, &bus, &p, &c, &sp) else {
            rejected += 1;
            continue;
        };
        accepted += 1;
        let r = elemental_fast_residual(s, &bus, &p, &sp, &z).expect("residual");
        worst = r.iter().fold(worst, |a, v| a.max(v.abs()));
    }
    outcome(
        worst < 1e-12,
        format!("max fast residual over {accepted} states = {worst:.2e} ({rejected} draws without an exciter solution)"),
    )
}

// Steady-forced q-axis damper and transient windings of the lossless
// machine, slow state frozen at constant slip.
fn q_axis_errors(p: &MachineParameters, slip: f64) -> (f64, f64) {
    let c = derive_constants(p).unwrap();
    let v = 1.0;
    let horizon = 60.0;
    let theta_end = std::f64::consts::FRAC_PI_4;
    let theta0 = theta_end - slip * horizon;
    let (lq, xq2) = (p.x_qp - p.x_k, p.x_qpp + p.x_e);
    let cq = (p.x_qp - p.x_qpp) / (lq * lq);
    let current = |phi_q2: f64, e_dp: f64, vd: f64| {
        ((p.x_qp - p.x_qpp) / lq * phi_q2 - (p.x_qpp - p.x_k) / lq * e_dp + vd) / xq2
    };
    let mut sys = FnSystem {
        dim: 2,
        f: |t: f64, y: &[f64], dy: &mut [f64]| {
            let vd = v * (theta0 + slip * t).sin();
            let (phi_q2, e_dp) = (y[0], y[1]);
            let iq = current(phi_q2, e_dp, vd);
            dy[0] = (-phi_q2 - lq * iq - e_dp) / p.tau_qpp;
            dy[1] = (-e_dp + (p.x_q - p.x_qp) * (iq - cq * (phi_q2 + lq * iq + e_dp))) / p.tau_qp;
            Ok(())
        },
    };
    let y = integrate(&mut sys, &[0.0, 0.0], (0.0, horizon), &IntegratorConfig::rk4(1e-3), &[], |_, _, _| Ok(()))
        .expect("relaxation");
    let exact = y[1];

    let s = SecondOrderState {
        delta: theta_end,
        omega: p.omega0 + slip,
    };
    let bus = BusSignal::fixed(v, 0.0);
    let sp = Setpoints { v_ref: 1.0, p_c: 0.0 };
    let first = damped_manifolds(s, &bus, p, &c, &sp).expect("manifolds").e_dp;
    let zero = (p.x_q - p.x_qp) / c.x_q_e * v * theta_end.sin();
    ((first - exact).abs(), (zero - exact).abs())
}

fn first_order_accuracy() -> Outcome {
    let base = table_ii();
    let slip = 0.05;
    let scaled = |k: f64| {
        let mut p = base;
        p.tau_qpp *= k;
        p.tau_qp *= k;
        p
    };
    let (f1, z1) = q_axis_errors(&scaled(1.0), slip);
    let (f2, z2) = q_axis_errors(&scaled(0.5), slip);
    let (rf, rz) = (f1 / f2, z1 / z2);
    outcome(
        (3.5..=4.5).contains(&rf) && (1.75..=2.25).contains(&rz),
        format!("first-order error ratio {rf:.3} ({f1:.2e} -> {f2:.2e}), zero-order ratio {rz:.3} ({z1:.2e} -> {z2:.2e})"),
    )
}

fn special_cases() -> Outcome {
    let mut p = table_ii();
    p.x_qp = p.x_q;
    let scenario = Scenario {
        duration: 10.0,
        events: vec![ScenarioEvent {
            t: 1.0,
            load: LoadDemand::new(0.25, 0.0),
            target: Some(1.0),
        }],
        models: vec![ModelKind::HighOrder],
        ..Scenario::case1()
    };
    let mut worst = f64::NAN;
    let mut swing = 0.0f64;
    let run = plan(&p, &scenario).and_then(|pl| {
        let (mut sys, y0) = ClosedLoop::new(ModelKind::HighOrder, &p, &pl.initial)?;
        worst = 0.0;
        let omega0 = y0[IDX::OMEGA];
        integrate(&mut sys, &y0, (0.0, scenario.duration), &scenario.high_order, &pl.events, |_, y, _| {
            worst = worst.max(y[IDX::E_DP].abs());
            swing = swing.max((y[IDX::OMEGA] - omega0).abs());
            Ok(())
        })
    });
    let c_x = derive_constants(&table_ii()).map(|c| c.c_x);
    let detail = format!(
        "X_q = X_q': max |E_d'| = {worst:.2e} over 10 s (speed excursion {swing:.2e} rad/s){}; X_q = X_d: C_x = {:?}",
        run.as_ref().err().map(|e| format!(" [{e}]")).unwrap_or_default(),
        c_x.as_ref().ok()
    );
    outcome(run.is_ok() && worst < 1e-10 && swing > 1e-3 && c_x.ok() == Some(0.0), detail)
}

fn case1_qualitative() -> Outcome {
    let p = table_ii();
    let cmp = run_comparison(&p, &Scenario::case1()).expect("case 1");
    let reference = &cmp.reference.samples;
    let mut lines = Vec::new();
    let mut pass = true;
    for run in &cmp.runs {
        let early = rmse_window(reference, &run.samples, Signal::OmegaRpm, 30.0, 31.0);
        let late = rmse_window(reference, &run.samples, Signal::OmegaRpm, 31.0, 90.0);
        let ratio = late / early;
        let ok = match run.kind {
            ModelKind::Classical => ratio >= 5.0,
            _ => ratio <= 2.0,
        };
        pass &= ok;
        lines.push(format!("{} {:.3}/{:.3} rpm = {ratio:.2}{}", run.kind, late, early, if ok { "" } else { "!" }));
    }
    outcome(pass, format!("late/early omega error: {}", lines.join(", ")))
}

fn table_i_ratios() -> Outcome {
    let p = table_ii();
    let cmp = run_comparison(&p, &Scenario::case2_compressed()).expect("compressed case 2");
    let r = |k| cmp.report.get(k).expect("model in report");
    let (el, da, sd) = (r(ModelKind::Elemental), r(ModelKind::Damped), r(ModelKind::SemiDamped));
    let ratio = el.omega_rpm / da.omega_rpm;
    let omega_spread = (da.omega_rpm - sd.omega_rpm).abs() / da.omega_rpm;
    let v = [el.v_s, da.v_s, sd.v_s];
    let v_max = v.iter().cloned().fold(f64::MIN, f64::max);
    let v_min = v.iter().cloned().fold(f64::MAX, f64::min);
    let v_spread = (v_max - v_min) / v_min;
    outcome(
        ratio > 10.0 && omega_spread < 0.01 && v_spread < 0.01,
        format!(
            "omega RMSE elemental/damped = {ratio:.3} ({:.4}/{:.4} rpm), damped vs semi-damped {:.3}%, V_s spread {:.2}% ({:.3e}, {:.3e}, {:.3e} pu)",
            el.omega_rpm,
            da.omega_rpm,
            100.0 * omega_spread,
            100.0 * v_spread,
            el.v_s,
            da.v_s,
            sd.v_s
        ),
    )
}

fn time_scale_separation() -> Outcome {
    let p = table_ii();
    let m = ho(&p);
    let load = LoadDemand::new(0.05, 0.0);
    let op = high_order_equilibrium(&m, &load, 1.0).expect("equilibrium");
    let dynamic: Vec<usize> = (0..IDX::N).filter(|&i| !m.quasi_static()[i]).collect();
    let n = dynamic.len();
    let guess = op.bus.machine_frame(op.x.delta());
    let u0: Vec<f64> = dynamic.iter().map(|&i| op.x.x[i]).collect();
    let jac = finite_difference_jacobian(
        |u, out| {
            let mut x = op.x.x;
            for (k, &i) in dynamic.iter().enumerate() {
                x[i] = u[k];
            }
            let e = m.evaluate_with_load(&x, &load, &op.sp, guess)?;
            for (k, &i) in dynamic.iter().enumerate() {
                out[k] = e.dx[i];
            }
            Ok(())
        },
        &u0,
        None,
    )
    .expect("jacobian");
    // Slow pair (δ, ω) reduced on the fast subsystem's steady state.
    let slow = [0usize, 1];
    let fast: Vec<usize> = (2..n).collect();
    let pick = |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |i, j| jac[(rows[i], cols[j])]);
    let (jss, jsf, jfs, jff) = (pick(&slow, &slow), pick(&slow, &fast), pick(&fast, &slow), pick(&fast, &fast));
    let fast_ev = eigenvalues(&jff);
    let reduced = &jss - &jsf * jff.clone().lu().solve(&jfs).expect("regular fast subsystem");
    let slow_ev = eigenvalues(&reduced);
    let min_fast = fast_ev.iter().map(|l| l.re.abs()).fold(f64::INFINITY, f64::min);
    // δ enters no right-hand side; its structural zero eigenvalue is not a mode.
    let max_slow = slow_ev.iter().map(|l| l.re.abs()).filter(|r| *r > 1e-9).fold(0.0, f64::max);
    let ratio = min_fast / max_slow;
    let slowest_fast = fast_ev
        .iter()
        .min_by(|a, b| a.re.abs().partial_cmp(&b.re.abs()).unwrap())
        .copied()
        .unwrap();
    outcome(
        ratio > 10.0,
        format!(
            "min |Re fast| = {min_fast:.4} (λ = {:.4}{:+.4}i), max |Re slow| = {max_slow:.4}, ratio {ratio:.3}",
            slowest_fast.re, slowest_fast.im
        ),
    )
}

fn integrator_order() -> Outcome {
    let p = table_ii();
    let c = derive_constants(&p).unwrap();
    let m = ho(&p);
    let op = high_order_equilibrium(&m, &LoadDemand::new(0.05, 0.0), 1.0).expect("equilibrium");
    let bus = BusSignal::fixed(1.0, 0.0);
    let sp = op.sp;
    let solve = |dt: f64| {
        let mut sys = FnSystem {
            dim: 2,
            f: |_t: f64, y: &[f64], dy: &mut [f64]| {
                let s = SecondOrderState { delta: y[0], omega: y[1] };
                let rec = elemental_manifolds(s, &bus, &p, &c, &sp)?;
                let (a, b) = elemental_rhs(s, &bus, &p, &c, &sp, &rec);
                dy[0] = a;
                dy[1] = b;
                Ok(())
            },
        };
        integrate(&mut sys, &[op.x.delta() + 0.2, op.x.omega()], (0.0, 2.0), &IntegratorConfig::rk4(dt), &[], |_, _, _| Ok(()))
            .expect("integration")
    };
    let reference = solve(1.25e-4);
    let err = |dt: f64| {
        let y = solve(dt);
        (y[0] - reference[0]).abs().max((y[1] - reference[1]).abs() / p.omega0)
    };
    let e = [err(4e-3), err(2e-3), err(1e-3)];
    let orders = [(e[0] / e[1]).log2(), (e[1] / e[2]).log2()];
    let order = orders[0].min(orders[1]);
    outcome(
        order >= 3.5,
        format!("errors {:.2e}, {:.2e}, {:.2e}; empirical orders {:.2}, {:.2}", e[0], e[1], e[2], orders[0], orders[1]),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn() -> Outcome); 8] = [
        ("equilibrium fidelity", Duration::from_secs(5), equilibrium_fidelity),
        ("manifold fixed point", Duration::from_secs(5), manifold_fixed_point),
        ("first-order manifold accuracy", Duration::from_secs(30), first_order_accuracy),
        ("special-case identities", Duration::from_secs(10), special_cases),
        ("case 1 qualitative claim", Duration::from_secs(60), case1_qualitative),
        ("table I ratios, compressed case 2", Duration::from_secs(300), table_i_ratios),
        ("time-scale separation", Duration::from_secs(5), time_scale_separation),
        ("integrator order", Duration::from_secs(30), integrator_order),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (k, (name, budget, run)) in criteria.iter().enumerate() {
        let label = format!("criterion {} {}", k + 1, name);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(run);
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass && elapsed <= *budget, o.detail),
            Err(e) => (
                false,
                format!(
                    "panicked: {}",
                    e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
                ),
            ),
        };
        if !pass {
            failures += 1;
        }
        println!(
            "{} {label}: {detail} [{:.2} s of {} s]",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} failed", failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
