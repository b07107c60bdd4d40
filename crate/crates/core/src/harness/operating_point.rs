use std::cell::Cell;

use crate::error::{Error, Result};
use crate::models::{
    elemental_manifolds, BusSignal, FastReconstruction, HighOrderModel, HighOrderState, SecondOrderState, IDX,
};
use crate::network::{autotune_vref, solve_bus, LoadDemand};
use crate::params::{derive_constants, DerivedConstants, MachineParameters, Setpoints};
use crate::solver::{find_equilibrium, finite_difference_jacobian};

const N: usize = IDX::N;
const VREF_BRACKET: (f64, f64) = (0.5, 1.5);

/// A steady state of the high-order model closed by a constant-power load.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub x: HighOrderState,
    pub sp: Setpoints,
    pub load: LoadDemand,
    pub bus: BusSignal,
    pub v_s: f64,
    /// ‖right-hand side‖∞ together with quasi-static slot consistency.
    pub residual: f64,
    /// Largest complex-power mismatch at the bus.
    pub bus_residual: f64,
}

/// Elemental steady state at speed `omega` with the bus closed by `load`.
/// The power angle is the gauge `δ_l = 0`.
pub fn elemental_static(
    p: &MachineParameters,
    c: &DerivedConstants,
    load: &LoadDemand,
    omega: f64,
    sp: &Setpoints,
) -> Result<(SecondOrderState, BusSignal, FastReconstruction)> {
    let s0 = SecondOrderState { delta: 0.0, omega };
    let (vq, vd) = solve_bus(
        load,
        |vq, vd| {
            let z = elemental_manifolds(s0, &BusSignal::from_machine_frame(0.0, vq, vd), p, c, sp)?;
            Ok((z.i_q, z.i_d))
        },
        (1.0, 0.0),
    )?;
    let s = SecondOrderState {
        delta: vd.atan2(vq),
        omega,
    };
    let bus = BusSignal::fixed(vq.hypot(vd), 0.0);
    let z = elemental_manifolds(s, &bus, p, c, sp)?;
    Ok((s, bus, z))
}

/// Exciter reference holding the elemental steady-state bus at `target`.
pub fn elemental_vref(
    p: &MachineParameters,
    c: &DerivedConstants,
    load: &LoadDemand,
    omega: f64,
    target: f64,
) -> Result<f64> {
    autotune_vref(
        |vr| {
            let sp = Setpoints { v_ref: vr, p_c: 0.0 };
            Ok(elemental_static(p, c, load, omega, &sp)?.1.v_l)
        },
        target,
        VREF_BRACKET,
    )
}

fn air_gap_power(p: &MachineParameters, load: &LoadDemand, z: &FastReconstruction) -> f64 {
    load.p + (p.r_s + p.r_e) * (z.i_q * z.i_q + z.i_d * z.i_d)
}

/// Elemental estimate of the high-order steady state. With `p_c` given the
/// speed settles on the droop line; otherwise `ω = ω0` and `P_c` balances.
fn elemental_guess(
    p: &MachineParameters,
    load: &LoadDemand,
    target: f64,
    p_c: Option<f64>,
) -> Result<(HighOrderState, Setpoints)> {
    let c = derive_constants(p)?;
    let mut omega = p.omega0;
    let mut sp = Setpoints { v_ref: target, p_c: 0.0 };
    for _ in 0..2 {
        sp.v_ref = elemental_vref(p, &c, load, omega, target)?;
        let z = elemental_static(p, &c, load, omega, &sp)?.2;
        let p_air = air_gap_power(p, load, &z);
        match p_c {
            Some(pc) => {
                sp.p_c = pc;
                omega = (pc + p.d0_bar * p.omega0 - p_air) / c.d_0;
            }
            None => sp.p_c = p_air + p.d0_tilde * p.omega0,
        }
    }
    let (s, _, z) = elemental_static(p, &c, load, omega, &sp)?;
    Ok((z.to_high_order(s), sp))
}

struct Unknowns {
    fixed_pc: Option<f64>,
    fixed_vref: Option<f64>,
    delta: f64,
}

impl Unknowns {
    fn count(&self) -> usize {
        N - 1 + self.fixed_vref.is_none() as usize + self.fixed_pc.is_none() as usize
    }

    fn pack(&self, x: &HighOrderState, sp: &Setpoints) -> Vec<f64> {
        let mut u = x.x[1..].to_vec();
        if self.fixed_vref.is_none() {
            u.push(sp.v_ref);
        }
        if self.fixed_pc.is_none() {
            u.push(sp.p_c);
        }
        u
    }

    fn unpack(&self, u: &[f64]) -> ([f64; N], Setpoints) {
        let mut x = [0.0; N];
        x[0] = self.delta;
        x[1..].copy_from_slice(&u[..N - 1]);
        let mut k = N - 1;
        let mut next = || {
            k += 1;
            u[k - 1]
        };
        let v_ref = self.fixed_vref.unwrap_or_else(&mut next);
        let p_c = self.fixed_pc.unwrap_or_else(&mut next);
        (x, Setpoints { v_ref, p_c })
    }
}

fn solve(
    model: &HighOrderModel,
    load: &LoadDemand,
    target: Option<f64>,
    unknowns: Unknowns,
    guess: (&HighOrderState, &Setpoints),
    bus_guess: (f64, f64),
) -> Result<OperatingPoint> {
    let bus = Cell::new(bus_guess);
    let n = unknowns.count();
    let absolute = unknowns.fixed_pc.is_none();
    let residual = |u: &[f64], r: &mut [f64]| -> Result<()> {
        let (x, sp) = unknowns.unpack(u);
        let eval = model.evaluate_with_load(&x, load, &sp, bus.get())?;
        bus.set((eval.stator.v_q_l, eval.stator.v_d_l));
        let m = model.manifold_residual(&x, &eval);
        let mut k = 0;
        for (i, v) in m.iter().enumerate() {
            if i == IDX::DELTA && !absolute {
                continue;
            }
            r[k] = *v;
            k += 1;
        }
        if let Some(t) = target {
            r[k] = eval.stator.v_q_l.hypot(eval.stator.v_d_l) - t;
            k += 1;
        }
        debug_assert_eq!(k, n);
        Ok(())
    };
    // Each row scaled by its largest sensitivity at the guess.
    let u0 = unknowns.pack(guess.0, guess.1);
    let jac = finite_difference_jacobian(&residual, &u0, None)?;
    let scale: Vec<f64> = (0..n)
        .map(|i| {
            let row = (0..n).fold(0.0f64, |a, j| a.max(jac[(i, j)].abs() * u0[j].abs().max(1.0)));
            1.0 / row.max(1.0)
        })
        .collect();
    let scaled = |u: &[f64], r: &mut [f64]| -> Result<()> {
        residual(u, r)?;
        for (v, s) in r.iter_mut().zip(&scale) {
            *v *= s;
        }
        Ok(())
    };
    let root = find_equilibrium(scaled, &u0, 1e-12)?;
    let (mut x, sp) = unknowns.unpack(&root.x);
    let eval = model.evaluate_with_load(&x, load, &sp, bus.get())?;
    let (vq, vd) = (eval.stator.v_q_l, eval.stator.v_d_l);
    if absolute {
        // Gauge: bus angle zero.
        x[IDX::DELTA] = vd.atan2(vq);
    }
    for i in 0..N {
        if model.quasi_static()[i] {
            x[i] = eval.projected[i];
        }
    }
    let m = model.manifold_residual(&x, &eval);
    let residual = m
        .iter()
        .enumerate()
        .filter(|(i, _)| absolute || *i != IDX::DELTA)
        .fold(0.0f64, |a, (_, v)| a.max(v.abs()));
    let mis = load.mismatch(vq, vd, eval.stator.i_q, eval.stator.i_d);
    Ok(OperatingPoint {
        x: HighOrderState::from_array(x),
        sp,
        load: *load,
        bus: BusSignal::from_machine_frame(x[IDX::DELTA], vq, vd),
        v_s: eval.stator.v_s,
        residual,
        bus_residual: mis[0].abs().max(mis[1].abs()),
    })
}

/// Equilibrium at nominal speed with the exciter reference and the governor
/// setting solved so the bus sits at `target`. The bus angle is zero.
pub fn high_order_equilibrium(model: &HighOrderModel, load: &LoadDemand, target: f64) -> Result<OperatingPoint> {
    let p = model.params();
    let (x, sp) = elemental_guess(p, load, target, None)?;
    let (vq, vd) = BusSignal::fixed(target, 0.0).machine_frame(x.delta());
    let unknowns = Unknowns {
        fixed_pc: None,
        fixed_vref: None,
        delta: x.delta(),
    };
    let op = solve(model, load, Some(target), unknowns, (&x, &sp), (vq, vd))?;
    if (op.x.omega() - p.omega0).abs() > 1e-6 {
        return Err(Error::EquilibriumNotFound {
            residual: (op.x.omega() - p.omega0).abs(),
        });
    }
    Ok(op)
}

/// Steady state after the load changes with the governor setting held. The
/// speed settles off nominal, so the angle drifts and only `δ − δ_l` is
/// steady. With a `target` the exciter reference is re-solved, otherwise it
/// is kept.
pub fn high_order_relative_equilibrium(
    model: &HighOrderModel,
    from: &OperatingPoint,
    load: &LoadDemand,
    target: Option<f64>,
) -> Result<OperatingPoint> {
    let p = model.params();
    let unknowns = Unknowns {
        fixed_pc: Some(from.sp.p_c),
        fixed_vref: if target.is_some() { None } else { Some(from.sp.v_ref) },
        delta: from.x.delta(),
    };
    let mut guess = (from.x, from.sp);
    if let Some(t) = target {
        if let Ok(g) = elemental_guess(p, load, t, Some(from.sp.p_c)) {
            guess = g;
            guess.0.x[IDX::DELTA] = from.x.delta();
        }
    }
    let bus_guess = from.bus.machine_frame(from.x.delta());
    solve(model, load, target, unknowns, (&guess.0, &guess.1), bus_guess)
}
