//! Two-bus coupling: constant-power load, bus solves, bus-rate estimates and
//! exciter reference tuning.
//!
//! Bus voltages are handled in the rotor frame of the machine,
//! `V_q = V cos(δ − δ_l)` and `V_d = V sin(δ − δ_l)`. Load power is positive
//! when consumed; stator current flows out of the machine.

use crate::error::{Error, Result};
use crate::models::BusSignal;

/// Constant-power load at the bus.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LoadDemand {
    pub p: f64,
    pub q: f64,
}

impl LoadDemand {
    pub fn new(p: f64, q: f64) -> Self {
        Self { p, q }
    }

    /// Mismatch between delivered and demanded power.
    pub fn mismatch(&self, v_q: f64, v_d: f64, i_q: f64, i_d: f64) -> [f64; 2] {
        [v_q * i_q + v_d * i_d - self.p, v_d * i_q - v_q * i_d - self.q]
    }

    /// Currents drawn by the load from a bus at `(V_q, V_d)`.
    pub fn currents(&self, v_q: f64, v_d: f64) -> (f64, f64) {
        let v2 = v_q * v_q + v_d * v_d;
        (
            (self.p * v_q + self.q * v_d) / v2,
            (self.p * v_d - self.q * v_q) / v2,
        )
    }
}

/// Bus voltage that makes the given currents deliver the load.
pub fn bus_from_currents(load: &LoadDemand, i_q: f64, i_d: f64) -> Result<(f64, f64)> {
    let i2 = i_q * i_q + i_d * i_d;
    if i2 == 0.0 {
        return Err(Error::InfeasibleLoad {
            p: load.p,
            q: load.q,
            residual: load.p.hypot(load.q),
        });
    }
    Ok((
        (load.p * i_q - load.q * i_d) / i2,
        (load.p * i_d + load.q * i_q) / i2,
    ))
}

/// Newton solve for the bus `(V_q, V_d)` at which the machine currents
/// deliver `load`. `machine` maps a candidate bus to `(I_q, I_d)`.
///
/// Iterates past the 1e-9 acceptance threshold until the update stalls, so the
/// result is as precise as the machine algebra allows.
pub fn solve_bus<F>(load: &LoadDemand, mut machine: F, guess: (f64, f64)) -> Result<(f64, f64)>
where
    F: FnMut(f64, f64) -> Result<(f64, f64)>,
{
    let mut residual = |v: [f64; 2]| -> Result<[f64; 2]> {
        let (iq, id) = machine(v[0], v[1])?;
        Ok(load.mismatch(v[0], v[1], iq, id))
    };
    let mut v = [guess.0, guess.1];
    if v[0].hypot(v[1]) < 1e-3 {
        v = [1.0, 0.0];
    }
    let mut f = residual(v)?;
    let mut norm = f[0].abs().max(f[1].abs());
    let infeasible = |r: f64| Error::InfeasibleLoad {
        p: load.p,
        q: load.q,
        residual: r,
    };
    for _ in 0..60 {
        if norm < 1e-14 {
            break;
        }
        let mut jac = [[0.0; 2]; 2];
        for j in 0..2 {
            let h = 1e-7 * v[j].abs().max(1.0);
            let (mut vp, mut vm) = (v, v);
            vp[j] += h;
            vm[j] -= h;
            let (fp, fm) = (residual(vp)?, residual(vm)?);
            for i in 0..2 {
                jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det == 0.0 || !det.is_finite() {
            return Err(infeasible(norm));
        }
        let step = [
            (jac[1][1] * f[0] - jac[0][1] * f[1]) / det,
            (jac[0][0] * f[1] - jac[1][0] * f[0]) / det,
        ];
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = [v[0] - lambda * step[0], v[1] - lambda * step[1]];
            let ft = residual(trial)?;
            let nt = ft[0].abs().max(ft[1].abs());
            if nt.is_finite() && (nt < norm || (norm < 1e-9 && nt <= norm)) {
                v = trial;
                f = ft;
                norm = nt;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
        if step[0].abs().max(step[1].abs()) * lambda < 1e-15 * v[0].hypot(v[1]) {
            break;
        }
    }
    if norm < 1e-9 && v[0].hypot(v[1]) > 0.0 {
        Ok((v[0], v[1]))
    } else {
        Err(infeasible(norm))
    }
}

/// Backward-difference bus rates from a uniformly sampled history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BusRates {
    pub v_l_dot: f64,
    pub delta_l_dot: f64,
    /// False when fewer than two samples were available.
    pub complete: bool,
}

pub fn bus_derivatives(history: &[BusSignal], dt: f64) -> BusRates {
    match history {
        [.., a, b] if dt > 0.0 => BusRates {
            v_l_dot: (b.v_l - a.v_l) / dt,
            delta_l_dot: (b.delta_l - a.delta_l) / dt,
            complete: true,
        },
        _ => BusRates {
            v_l_dot: 0.0,
            delta_l_dot: 0.0,
            complete: false,
        },
    }
}

/// Finds the exciter reference at which `bus_voltage(V_r)` equals `target`,
/// searching `[lo, hi]` by secant steps with a bisection fallback.
pub fn autotune_vref<F>(mut bus_voltage: F, target: f64, bracket: (f64, f64)) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (lo, hi) = bracket;
    let fail = || Error::Autotune { lo, hi, target };
    let mut g = |vr: f64| bus_voltage(vr).map(|v| v - target);

    let (mut a, mut b) = (target.clamp(lo, hi), (target + 0.01).clamp(lo, hi));
    if a == b {
        b = a - 0.01;
    }
    if let (Ok(mut fa), Ok(mut fb)) = (g(a), g(b)) {
        for _ in 0..50 {
            if fb.abs() < 1e-11 {
                return Ok(b);
            }
            if fb == fa {
                break;
            }
            let c = b - fb * (b - a) / (fb - fa);
            if !(lo..=hi).contains(&c) {
                break;
            }
            match g(c) {
                Ok(fc) => {
                    (a, fa) = (b, fb);
                    (b, fb) = (c, fc);
                }
                Err(_) => break,
            }
        }
    }

    // Bisection over the whole bracket.
    let (mut a, mut b) = (lo, hi);
    let (fa, fb) = (g(a).map_err(|_| fail())?, g(b).map_err(|_| fail())?);
    if fa.signum() == fb.signum() {
        return Err(fail());
    }
    let mut fa = fa;
    for _ in 0..200 {
        let c = 0.5 * (a + b);
        let fc = g(c).map_err(|_| fail())?;
        if fc.abs() < 1e-11 || (b - a) < 1e-14 {
            return Ok(c);
        }
        if fc.signum() == fa.signum() {
            (a, fa) = (c, fc);
        } else {
            b = c;
        }
    }
    Err(fail())
}
