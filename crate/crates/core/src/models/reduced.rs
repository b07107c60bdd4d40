use crate::error::{Error, Result};
use crate::params::{derive_constants, DerivedConstants, MachineParameters, Setpoints};

use super::{BusSignal, FastReconstruction, ModelKind, SecondOrderState};

/// Zero-order manifolds of the exciter and governor, shared by the elemental,
/// damped and semi-damped models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommonManifolds {
    pub e_f: f64,
    pub u_f: f64,
    pub u_f_bar: f64,
    pub t_m: f64,
    pub p_u: f64,
    pub p_a1: f64,
    pub p_a2: f64,
    pub p_b1: f64,
    pub p_b2: f64,
}

pub fn common_zero_order_manifolds(
    s: SecondOrderState,
    p: &MachineParameters,
    sp: &Setpoints,
    v_s: f64,
) -> Result<CommonManifolds> {
    let r_fb = feedback_ratio(p)?;
    let e_f = p.k_u * (sp.v_ref - v_s) / p.k_f;
    let p_u = sp.p_c - p.d0_bar * (s.omega - p.omega0);
    Ok(CommonManifolds {
        e_f,
        u_f: p.k_f * e_f,
        u_f_bar: r_fb * e_f,
        t_m: p_u,
        p_u,
        p_a1: 0.0,
        p_a2: 0.0,
        p_b1: 0.0,
        p_b2: 0.0,
    })
}

fn feedback_ratio(p: &MachineParameters) -> Result<f64> {
    if p.k_u_bar == 0.0 {
        Ok(0.0)
    } else if p.tau_u_bar == 0.0 {
        Err(Error::Singularity("K_u_bar is nonzero while tau_u_bar = 0".into()))
    } else {
        Ok(p.k_u_bar / p.tau_u_bar)
    }
}

/// Closes the excitation loop `E_f = C_k (V_r − V_s(E_f))` for a terminal
/// voltage that is affine in `E_f`. Returns `E_f` and the terminal components.
pub fn solve_excitation<F>(c_k: f64, v_ref: f64, terminal: F) -> Result<(f64, f64, f64)>
where
    F: Fn(f64) -> (f64, f64),
{
    let a = terminal(0.0);
    let one = terminal(1.0);
    let b = (one.0 - a.0, one.1 - a.1);
    let at = |e: f64| (a.0 + b.0 * e, a.1 + b.1 * e);
    let g = |e: f64| {
        let (vq, vd) = at(e);
        let vs = vq.hypot(vd);
        let slope = 1.0 + if vs > 0.0 { c_k * (vq * b.0 + vd * b.1) / vs } else { 0.0 };
        (e - c_k * (v_ref - vs), slope)
    };

    // Squaring C_k |a + b e| = C_k V_r − e gives a quadratic in e; the
    // regulated root is the one where the loop residual increases.
    let w = c_k * v_ref;
    let k2 = c_k * c_k;
    let qa = k2 * (b.0 * b.0 + b.1 * b.1) - 1.0;
    let qb = 2.0 * (k2 * (a.0 * b.0 + a.1 * b.1) + w);
    let qc = k2 * (a.0 * a.0 + a.1 * a.1) - w * w;
    let mut roots = Vec::with_capacity(2);
    if qa.abs() <= 1e-12 * qb.abs() {
        roots.push(-qc / qb);
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let q = -0.5 * (qb + qb.signum() * disc.sqrt());
            roots.push(q / qa);
            if q != 0.0 {
                roots.push(qc / q);
            }
        }
    }
    let scale = w.abs().max(1.0);
    let mut best: Option<f64> = None;
    for e in roots.into_iter().filter(|e| e.is_finite() && *e <= w + 1e-9 * scale) {
        if g(e).1 > 0.0 && best.is_none_or(|b| e > b) {
            best = Some(e);
        }
    }
    let Some(mut e) = best else {
        return Err(Error::Convergence {
            what: "excitation loop",
            iterations: 0,
            residual: f64::NAN,
        });
    };
    let mut residual = g(e).0;
    for _ in 0..4 {
        let (r, slope) = g(e);
        if r == 0.0 {
            break;
        }
        let next = e - r / slope;
        if g(next).0.abs() >= r.abs() {
            break;
        }
        e = next;
        residual = g(e).0;
    }
    if !(residual.abs() <= 1e-9 * e.abs().max(1.0)) {
        return Err(Error::Convergence {
            what: "excitation loop",
            iterations: 4,
            residual: residual.abs(),
        });
    }
    let (vq, vd) = at(e);
    Ok((e, vq, vd))
}

/// Zero-order manifolds of the elemental model, with the loop between the
/// stator currents and the regulated terminal voltage closed.
pub fn elemental_manifolds(
    s: SecondOrderState,
    bus: &BusSignal,
    p: &MachineParameters,
    c: &DerivedConstants,
    sp: &Setpoints,
) -> Result<FastReconstruction> {
    let (vq, vd) = bus.machine_frame(s.delta);
    let r = c.r_s_e;
    let den = r * r + c.x_q_e * c.x_d_e;
    let currents = |e_f: f64| {
        (
            (r * e_f - r * vq + c.x_d_e * vd) / den,
            (c.x_q_e * e_f - c.x_q_e * vq - r * vd) / den,
        )
    };
    let terminal = |iq: f64, id: f64| (p.r_e * iq + p.x_e * id + vq, p.r_e * id - p.x_e * iq + vd);
    let (e_f, v_q_s, v_d_s) = solve_excitation(c.c_k, sp.v_ref, |e| {
        let (iq, id) = currents(e);
        terminal(iq, id)
    })?;
    let (i_q, i_d) = currents(e_f);
    let v_s = v_q_s.hypot(v_d_s);
    let m = common_zero_order_manifolds(s, p, sp, v_s)?;
    Ok(FastReconstruction {
        phi_q: -r * i_d - vd,
        phi_d: r * i_q + vq,
        e_dp: (p.x_q - p.x_qp) * i_q,
        e_qp: -(p.x_d - p.x_dp) * i_d + m.e_f,
        phi_q2: -(p.x_q - p.x_k) * i_q,
        phi_d1: -(p.x_d - p.x_k) * i_d + m.e_f,
        phi_q_e: -p.x_e * i_q,
        phi_d_e: -p.x_e * i_d,
        e_f: m.e_f,
        u_f: m.u_f,
        u_f_bar: m.u_f_bar,
        t_m: m.t_m,
        p_u: m.p_u,
        p_a1: m.p_a1,
        p_a2: m.p_a2,
        p_b1: m.p_b1,
        p_b2: m.p_b2,
        i_q,
        i_d,
        v_q_s,
        v_d_s,
        v_s,
    })
}

/// Fast-subsystem right-hand sides with every small parameter set to zero,
/// evaluated at a reconstruction. Rows follow the canonical fast-state order,
/// with the two stator flux relations in place of `δ` and `ω`.
pub fn elemental_fast_residual(
    s: SecondOrderState,
    bus: &BusSignal,
    p: &MachineParameters,
    sp: &Setpoints,
    z: &FastReconstruction,
) -> Result<[f64; 19]> {
    let (vq, vd) = bus.machine_frame(s.delta);
    let r = p.r_s + p.r_e;
    let (iq, id) = (z.i_q, z.i_d);
    let (lq, ld) = (p.x_qp - p.x_k, p.x_dp - p.x_k);
    let (cq, cd) = ((p.x_qp - p.x_qpp) / (lq * lq), (p.x_dp - p.x_dpp) / (ld * ld));
    let r_fb = feedback_ratio(p)?;
    let v_s = z.v_q_s.hypot(z.v_d_s);
    Ok([
        -(p.x_qpp + p.x_e) * iq + (p.x_qp - p.x_qpp) / lq * z.phi_q2 - (p.x_qpp - p.x_k) / lq * z.e_dp
            - z.phi_q,
        -(p.x_dpp + p.x_e) * id + (p.x_dp - p.x_dpp) / ld * z.phi_d1 + (p.x_dpp - p.x_k) / ld * z.e_qp
            - z.phi_d,
        -z.phi_d + vq + r * iq,
        z.phi_q + vd + r * id,
        -z.e_dp + (p.x_q - p.x_qp) * (iq - cq * (z.phi_q2 + lq * iq + z.e_dp)),
        -z.e_qp - (p.x_d - p.x_dp) * (id - cd * (z.phi_d1 + ld * id - z.e_qp)) + z.e_f,
        -z.phi_q2 - lq * iq - z.e_dp,
        -z.phi_d1 - ld * id + z.e_qp,
        p.r_e * iq - z.phi_d_e - z.v_q_s + vq,
        p.r_e * id + z.phi_q_e - z.v_d_s + vd,
        -p.k_f * z.e_f + z.u_f,
        -z.u_f + p.k_u * z.u_f_bar - p.k_u * r_fb * z.e_f + p.k_u * (sp.v_ref - v_s),
        -z.u_f_bar + r_fb * z.e_f,
        -z.t_m + z.p_u,
        z.p_a1 + p.tau_4 * z.p_a2,
        z.p_a2,
        -(z.p_a1 - p.kappa * (z.p_b1 + p.tau_3 * z.p_b2)) / (p.tau_5 + p.tau_6) - z.p_a2,
        z.p_b2,
        (sp.p_c - z.p_u) / (p.d0_bar * p.omega0) - (s.omega - p.omega0) / p.omega0 - z.p_b1,
    ])
}

/// `(δ̇, ω̇)` of the elemental model.
pub fn elemental_rhs(
    s: SecondOrderState,
    bus: &BusSignal,
    p: &MachineParameters,
    c: &DerivedConstants,
    sp: &Setpoints,
    rec: &FastReconstruction,
) -> (f64, f64) {
    let th = s.delta - bus.delta_l;
    let v = bus.v_l;
    let reg = sp.v_ref - rec.v_s;
    let i2 = rec.i_q * rec.i_q + rec.i_d * rec.i_d;
    let acc = sp.p_r(p) - c.d_0 * s.omega - c.r_s_e * i2 + c.c_r * v * v
        - c.c_k * c.c_r * reg * v * th.cos()
        - c.c_k * c.c_x_tilde * reg * v * th.sin()
        - 0.5 * c.c_x * v * v * (2.0 * th).sin();
    (s.omega - p.omega0, acc / p.m)
}

/// Stator currents and terminal voltage of a reduced model's equivalent
/// circuit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircuitSolution {
    pub i_q: f64,
    pub i_d: f64,
    pub e_f: f64,
    pub v_q_s: f64,
    pub v_d_s: f64,
    pub v_s: f64,
}

/// Equivalent circuit of the damped model:
/// `I_q = V_d/X_q^e + C_q V̇_d`, `I_d = (E_f − V_q)/X_d^e − C_d V̇_q`.
pub fn damped_circuit(
    s: SecondOrderState,
    bus: &BusSignal,
    p: &MachineParameters,
    c: &DerivedConstants,
    sp: &Setpoints,
) -> Result<CircuitSolution> {
    let (vq, vd) = bus.machine_frame(s.delta);
    let (dvq, dvd) = bus.machine_frame_rates(s.delta, s.omega - p.omega0);
    circuit(vq, vd, p, c, sp, |e| {
        (vd / c.x_q_e + c.c_q * dvd, (e - vq) / c.x_d_e - c.c_d * dvq)
    })
}

/// Equivalent circuit of the semi-damped model:
/// `I_q = V_d/X_q^e + C̃_q' V̇_d`, `I_d = (E_f − V_q)/X_d^e`.
pub fn semi_damped_circuit(
    s: SecondOrderState,
    bus: &BusSignal,
    p: &MachineParameters,
    c: &DerivedConstants,
    sp: &Setpoints,
) -> Result<CircuitSolution> {
    let (vq, vd) = bus.machine_frame(s.delta);
    let (_, dvd) = bus.machine_frame_rates(s.delta, s.omega - p.omega0);
    circuit(vq, vd, p, c, sp, |e| {
        (vd / c.x_q_e + c.c_qp_tilde * dvd, (e - vq) / c.x_d_e)
    })
}

fn circuit<F>(vq: f64, vd: f64, p: &MachineParameters, c: &DerivedConstants, sp: &Setpoints, currents: F) -> Result<CircuitSolution>
where
    F: Fn(f64) -> (f64, f64),
{
    let (e_f, v_q_s, v_d_s) = solve_excitation(c.c_k, sp.v_ref, |e| {
        let (iq, id) = currents(e);
        (vq + p.x_e * id, vd - p.x_e * iq)
    })?;
    let (i_q, i_d) = currents(e_f);
    Ok(CircuitSolution {
        i_q,
        i_d,
        e_f,
        v_q_s,
        v_d_s,
        v_s: v_q_s.hypot(v_d_s),
    })
}

/// `(δ̇, ω̇)` of the damped model. The slip rate `δ̇` is substituted as
/// `ω − ω0` in the damping terms.
pub fn damped_rhs(
    s: SecondOrderState,
    bus: &BusSignal,
    p: &MachineParameters,
    c: &DerivedConstants,
    sp: &Setpoints,
) -> Result<(f64, f64)> {
    let v_s = damped_circuit(s, bus, p, c, sp)?.v_s;
    let delta_dot = s.omega - p.omega0;
    let th = s.delta - bus.delta_l;
    let (sn, cs) = th.sin_cos();
    let v = bus.v_l;
    let slip = delta_dot - bus.delta_l_dot;
    let acc = sp.p_r(p) - c.d_0 * s.omega - 0.5 * c.c_x * v * v * (2.0 * th).sin()
        - c.c_k / c.x_d_e * (sp.v_ref - v_s) * v * sn
        - c.c_q * v * v * cs * cs * slip
        - c.c_d * v * v * sn * sn * slip
        - 0.5 * (c.c_q - c.c_d) * bus.v_l_dot * v * (2.0 * th).sin();
    Ok((delta_dot, acc / p.m))
}

fn require_round_rotor(p: &MachineParameters) -> Result<()> {
    if p.is_round_rotor() {
        Ok(())
    } else {
        Err(Error::NotApplicable {
            model: "semi-damped",
            reason: format!("X_q = {} differs from X_d = {} (salient pole)", p.x_q, p.x_d),
        })
    }
}

/// `(δ̇, ω̇)` of the semi-damped model. Round-rotor machines only.
pub fn semi_damped_rhs(
    s: SecondOrderState,
    bus: &BusSignal,
    p: &MachineParameters,
    c: &DerivedConstants,
    sp: &Setpoints,
) -> Result<(f64, f64)> {
    require_round_rotor(p)?;
    let v_s = semi_damped_circuit(s, bus, p, c, sp)?.v_s;
    let delta_dot = s.omega - p.omega0;
    let th = s.delta - bus.delta_l;
    let (sn, cs) = th.sin_cos();
    let v = bus.v_l;
    let slip = delta_dot - bus.delta_l_dot;
    let acc = sp.p_r(p) - c.d_0 * s.omega
        - 0.5 * c.c_qp_tilde * bus.v_l_dot * v * (2.0 * th).sin()
        - c.c_qp_tilde * v * v * cs * cs * slip
        - c.c_k / c.x_d_e * (sp.v_ref - v_s) * v * sn;
    Ok((delta_dot, acc / p.m))
}

/// Zero- and first-order manifolds of the damped model.
pub fn damped_manifolds(
    s: SecondOrderState,
    bus: &BusSignal,
    p: &MachineParameters,
    c: &DerivedConstants,
    sp: &Setpoints,
) -> Result<FastReconstruction> {
    if c.d_q == 0.0 {
        return Err(Error::SingularConstant("D_q"));
    }
    if c.d_d == 0.0 {
        return Err(Error::SingularConstant("D_d"));
    }
    if c.d_q_tilde == 0.0 {
        return Err(Error::SingularConstant("D_q_tilde"));
    }
    if p.tau_qp == 0.0 || p.tau_dp == 0.0 {
        return Err(Error::Singularity("transient time constants must be positive".into()));
    }
    let (vq, vd) = bus.machine_frame(s.delta);
    let (dvq, dvd) = bus.machine_frame_rates(s.delta, s.omega - p.omega0);
    let (xqe, xde, xke) = (c.x_q_e, c.x_d_e, c.x_k_e);
    let (xq1, xd1, xq2, xd2) = (c.x_qp_e, c.x_dp_e, c.x_qpp_e, c.x_dpp_e);

    let e_dp0 = (p.x_q - p.x_qp) / xqe * vd - c.n_q / c.d_q * dvd;
    let e_dp1 = -c.n_qp / c.d_q_tilde * dvd;
    let e_dp = e_dp0 + p.tau_qp * e_dp1;
    let phi_q2_0 = -xke / xq1 * e_dp - (p.x_qp - p.x_k) / xq1 * vd;
    let phi_q2_1 = -xq2 * xke / (p.tau_qp * xq1.powi(3)) * (xqe * e_dp - (p.x_q - p.x_qp) * vd)
        + xq2 * (p.x_qp - p.x_k) / (xq1 * xq1) * dvd;
    let phi_q2 = phi_q2_0 + p.tau_qpp * phi_q2_1;

    let (lq, ld) = (p.x_qp - p.x_k, p.x_dp - p.x_k);
    let i_q = ((p.x_qp - p.x_qpp) / lq * phi_q2 - (p.x_qpp - p.x_k) / lq * e_dp + vd) / xq2;

    let d_axis = |e_f: f64| {
        let e_qp = xd1 / xde * e_f - c.n_d / c.d_d * dvq + (p.x_d - p.x_dp) / xde * vq;
        let phi_d1_0 = xke / xd1 * e_qp + ld / xd1 * vq;
        let phi_d1_1 = xd2 * xke / (p.tau_dp * xd1.powi(3)) * (xde * e_qp - (p.x_d - p.x_dp) * vq)
            - xd2 * ld / (xd1 * xd1) * dvq
            - xd2 * xke / (p.tau_dp * xd1 * xd1) * e_f;
        let phi_d1 = phi_d1_0 + p.tau_dpp * phi_d1_1;
        let i_d = ((p.x_dp - p.x_dpp) / ld * phi_d1 + (p.x_dpp - p.x_k) / ld * e_qp - vq) / xd2;
        (e_qp, phi_d1, i_d)
    };
    let (e_f, v_q_s, v_d_s) = solve_excitation(c.c_k, sp.v_ref, |e| {
        let (_, _, i_d) = d_axis(e);
        (vq + p.x_e * i_d, vd - p.x_e * i_q)
    })?;
    let (e_qp, phi_d1, i_d) = d_axis(e_f);
    let v_s = v_q_s.hypot(v_d_s);
    let m = common_zero_order_manifolds(s, p, sp, v_s)?;
    Ok(FastReconstruction {
        phi_q: -vd,
        phi_d: vq,
        e_dp,
        e_qp,
        phi_q2,
        phi_d1,
        phi_q_e: v_d_s - vd,
        phi_d_e: -v_q_s + vq,
        e_f: m.e_f,
        u_f: m.u_f,
        u_f_bar: m.u_f_bar,
        t_m: m.t_m,
        p_u: m.p_u,
        p_a1: m.p_a1,
        p_a2: m.p_a2,
        p_b1: m.p_b1,
        p_b2: m.p_b2,
        i_q,
        i_d,
        v_q_s,
        v_d_s,
        v_s,
    })
}

/// Zero-order manifolds of the semi-damped model with the first-order
/// transient `E_d'` manifold.
pub fn semi_damped_manifolds(
    s: SecondOrderState,
    bus: &BusSignal,
    p: &MachineParameters,
    c: &DerivedConstants,
    sp: &Setpoints,
) -> Result<FastReconstruction> {
    require_round_rotor(p)?;
    let (vq, vd) = bus.machine_frame(s.delta);
    let (_, dvd) = bus.machine_frame_rates(s.delta, s.omega - p.omega0);
    let (xqe, xde) = (c.x_q_e, c.x_d_e);
    let (xq1, xd1) = (c.x_qp_e, c.x_dp_e);

    let e_dp0 = (p.x_q - p.x_qp) / xqe * vd;
    let e_dp1 = -xq1 * (p.x_q - p.x_qp) / (xqe * xqe) * dvd;
    let e_dp = e_dp0 + p.tau_qp * e_dp1;
    let i_q = (vd - e_dp) / xq1;

    let d_axis = |e_f: f64| {
        let e_qp = xd1 / xde * e_f + (p.x_d - p.x_dp) / xde * vq;
        (e_qp, (e_qp - vq) / xd1)
    };
    let (e_f, v_q_s, v_d_s) = solve_excitation(c.c_k, sp.v_ref, |e| {
        let (_, i_d) = d_axis(e);
        (vq + p.x_e * i_d, vd - p.x_e * i_q)
    })?;
    let (e_qp, i_d) = d_axis(e_f);
    let v_s = v_q_s.hypot(v_d_s);
    let m = common_zero_order_manifolds(s, p, sp, v_s)?;
    Ok(FastReconstruction {
        phi_q: -vd,
        phi_d: vq,
        e_dp,
        e_qp,
        phi_q2: -(p.x_qp - p.x_k) * i_q - e_dp,
        phi_d1: -(p.x_dp - p.x_k) * i_d + e_qp,
        phi_q_e: v_d_s - vd,
        phi_d_e: -v_q_s + vq,
        e_f: m.e_f,
        u_f: m.u_f,
        u_f_bar: m.u_f_bar,
        t_m: m.t_m,
        p_u: m.p_u,
        p_a1: m.p_a1,
        p_a2: m.p_a2,
        p_b1: m.p_b1,
        p_b2: m.p_b2,
        i_q,
        i_d,
        v_q_s,
        v_d_s,
        v_s,
    })
}

/// `(δ̇, ω̇)` of the classical model: constant `E0` behind `X_d'^e`, frozen
/// mechanical torque, friction damping only.
pub fn classical_rhs(s: SecondOrderState, bus: &BusSignal, p: &MachineParameters, e0: f64, t_m0: f64) -> (f64, f64) {
    let x = p.x_dp + p.x_e;
    let acc = t_m0 - e0 / x * bus.v_l * (s.delta - bus.delta_l).sin() - p.d0_tilde * s.omega;
    (s.omega - p.omega0, acc / p.m)
}

/// Terminal voltage, current magnitude and power delivered to the bus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalOutputs {
    pub v_s: f64,
    pub i: f64,
    pub p_e: f64,
    pub i_q: f64,
    pub i_d: f64,
}

/// Terminal quantities of a reduced model from its own manifold set.
/// `e0` is only read by the classical model.
pub fn terminal_outputs(
    kind: ModelKind,
    s: SecondOrderState,
    bus: &BusSignal,
    p: &MachineParameters,
    sp: &Setpoints,
    e0: f64,
) -> Result<TerminalOutputs> {
    let (vq, vd) = bus.machine_frame(s.delta);
    let (i_q, i_d, v_s) = match kind {
        ModelKind::HighOrder => {
            return Err(Error::NotApplicable {
                model: "high-order",
                reason: "terminal quantities come from the state evaluation".into(),
            })
        }
        ModelKind::Classical => {
            let x = p.x_dp + p.x_e;
            let (iq, id) = (vd / x, (e0 - vq) / x);
            (iq, id, (vq + p.x_e * id).hypot(vd - p.x_e * iq))
        }
        ModelKind::Elemental => {
            let c = derive_constants(p)?;
            let z = elemental_manifolds(s, bus, p, &c, sp)?;
            (z.i_q, z.i_d, z.v_s)
        }
        ModelKind::Damped => {
            let c = derive_constants(p)?;
            let z = damped_manifolds(s, bus, p, &c, sp)?;
            (z.i_q, z.i_d, z.v_s)
        }
        ModelKind::SemiDamped => {
            let c = derive_constants(p)?;
            let z = semi_damped_manifolds(s, bus, p, &c, sp)?;
            (z.i_q, z.i_d, z.v_s)
        }
    };
    Ok(TerminalOutputs {
        v_s,
        i: i_q.hypot(i_d),
        p_e: vq * i_q + vd * i_d,
        i_q,
        i_d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (MachineParameters, DerivedConstants, Setpoints) {
        let p = MachineParameters::table_ii();
        let c = derive_constants(&p).unwrap();
        (p, c, Setpoints { v_ref: 1.01, p_c: 0.3 })
    }

    fn state(delta: f64, omega: f64) -> SecondOrderState {
        SecondOrderState { delta, omega }
    }

    #[test]
    fn excitation_loop_is_consistent() {
        let (p, c, sp) = setup();
        let z = elemental_manifolds(state(0.3, p.omega0), &BusSignal::fixed(0.98, 0.1), &p, &c, &sp).unwrap();
        assert!((z.e_f - c.c_k * (sp.v_ref - z.v_s)).abs() < 1e-12);
    }

    #[test]
    fn common_manifold_cases() {
        let (p, _, sp) = setup();
        let m = common_zero_order_manifolds(state(0.0, p.omega0), &p, &sp, sp.v_ref).unwrap();
        assert_eq!((m.e_f, m.u_f), (0.0, 0.0));
        assert_eq!(m.p_u, sp.p_c);
        assert_eq!(m.t_m, sp.p_c);
        let m = common_zero_order_manifolds(state(0.0, p.omega0), &p, &sp, 0.9).unwrap();
        assert_eq!(m.u_f_bar, 0.0);
        let mut q = p;
        q.k_u_bar = 0.2;
        q.tau_u_bar = 0.0;
        assert!(common_zero_order_manifolds(state(0.0, p.omega0), &q, &sp, 0.9).is_err());
    }

    #[test]
    fn elemental_manifold_zeroes_fast_subsystem() {
        let (p, c, sp) = setup();
        let s = state(0.7, p.omega0 + 2.0);
        let bus = BusSignal::fixed(1.03, 0.2);
        let z = elemental_manifolds(s, &bus, &p, &c, &sp).unwrap();
        let r = elemental_fast_residual(s, &bus, &p, &sp, &z).unwrap();
        for (i, v) in r.iter().enumerate() {
            assert!(v.abs() < 1e-12, "row {i}: {v}");
        }
    }

    #[test]
    fn elemental_lossless_aligned_bus_has_no_q_current() {
        let p = MachineParameters::table_ii().lossless();
        let c = derive_constants(&p).unwrap();
        let sp = Setpoints { v_ref: 1.0, p_c: 0.0 };
        let z = elemental_manifolds(state(0.2, p.omega0), &BusSignal::fixed(1.0, 0.2), &p, &c, &sp).unwrap();
        assert!(z.i_q.abs() < 1e-15);
    }

    #[test]
    fn elemental_vanishing_bus_terms() {
        let (p, c, sp) = setup();
        let bus = BusSignal::fixed(0.0, 0.0);
        let s = state(0.3, p.omega0 + 1.0);
        let mut rec = elemental_manifolds(s, &bus, &p, &c, &sp).unwrap();
        rec.v_s = sp.v_ref;
        let (_, w) = elemental_rhs(s, &bus, &p, &c, &sp, &rec);
        let i2 = rec.i_q.powi(2) + rec.i_d.powi(2);
        let expect = (sp.p_r(&p) - c.d_0 * s.omega - c.r_s_e * i2) / p.m;
        assert!((w - expect).abs() < 1e-12);
    }

    #[test]
    fn classical_cases() {
        let p = MachineParameters::table_ii();
        let (d, _) = classical_rhs(state(0.5, p.omega0), &BusSignal::fixed(1.0, 0.0), &p, 1.2, 0.3);
        assert_eq!(d, 0.0);
        let s = state(1.1, p.omega0 + 3.0);
        let (_, w) = classical_rhs(s, &BusSignal::fixed(1.0, 0.0), &p, 0.0, 0.3);
        assert!((w - (0.3 - p.d0_tilde * s.omega) / p.m).abs() < 1e-15);

        let (e0, v, t_m0) = (1.15, 0.99, 0.4);
        let th = ((t_m0 - p.d0_tilde * p.omega0) * (p.x_dp + p.x_e) / (e0 * v)).asin();
        let (d, w) = classical_rhs(state(th + 0.25, p.omega0), &BusSignal::fixed(v, 0.25), &p, e0, t_m0);
        assert_eq!(d, 0.0);
        assert!(w.abs() < 1e-12);
    }

    #[test]
    fn damped_without_damping_terms() {
        let (p, c, sp) = setup();
        let s = state(0.4, p.omega0 + 0.7);
        let mut bus = BusSignal::fixed(1.0, 0.1);
        bus.delta_l_dot = s.omega - p.omega0;
        let v_s = damped_circuit(s, &bus, &p, &c, &sp).unwrap().v_s;
        let (_, w) = damped_rhs(s, &bus, &p, &c, &sp).unwrap();
        let th: f64 = 0.3;
        let expect = (sp.p_r(&p) - c.d_0 * s.omega - c.c_k / c.x_d_e * (sp.v_ref - v_s) * th.sin()) / p.m;
        assert!((w - expect).abs() < 1e-12);
    }

    #[test]
    fn damped_power_matches_circuit() {
        let (p, c, sp) = setup();
        let s = state(0.5, p.omega0 - 1.3);
        let bus = BusSignal { v_l: 0.97, delta_l: 0.05, v_l_dot: 0.02, delta_l_dot: 0.4 };
        let k = damped_circuit(s, &bus, &p, &c, &sp).unwrap();
        let (vq, vd) = bus.machine_frame(s.delta);
        let p_bus = vq * k.i_q + vd * k.i_d;
        let (_, w) = damped_rhs(s, &bus, &p, &c, &sp).unwrap();
        let expect = (sp.p_r(&p) - c.d_0 * s.omega - p_bus) / p.m;
        assert!((w - expect).abs() < 1e-11, "{w} vs {expect}");
    }

    #[test]
    fn semi_damped_power_matches_circuit() {
        let (p, c, sp) = setup();
        let s = state(0.5, p.omega0 - 1.3);
        let bus = BusSignal { v_l: 0.97, delta_l: 0.05, v_l_dot: 0.02, delta_l_dot: 0.4 };
        let k = semi_damped_circuit(s, &bus, &p, &c, &sp).unwrap();
        let (vq, vd) = bus.machine_frame(s.delta);
        let (_, w) = semi_damped_rhs(s, &bus, &p, &c, &sp).unwrap();
        let expect = (sp.p_r(&p) - c.d_0 * s.omega - (vq * k.i_q + vd * k.i_d)) / p.m;
        assert!((w - expect).abs() < 1e-11);
    }

    #[test]
    fn semi_damped_currents_match_manifolds() {
        let (p, c, sp) = setup();
        let s = state(0.5, p.omega0 - 1.3);
        let bus = BusSignal { v_l: 0.97, delta_l: 0.05, v_l_dot: 0.02, delta_l_dot: 0.4 };
        let k = semi_damped_circuit(s, &bus, &p, &c, &sp).unwrap();
        let z = semi_damped_manifolds(s, &bus, &p, &c, &sp).unwrap();
        assert!((k.i_q - z.i_q).abs() < 1e-12 && (k.i_d - z.i_d).abs() < 1e-12);
        assert!((k.v_s - z.v_s).abs() < 1e-12);
    }

    #[test]
    fn semi_damped_decoupled_case() {
        let (p, c, _) = setup();
        let s = state(0.2, p.omega0 + 0.5);
        let bus = BusSignal { v_l: 1.0, delta_l: 0.2, v_l_dot: 0.0, delta_l_dot: 0.5 };
        let v_s = semi_damped_circuit(s, &bus, &p, &c, &Setpoints { v_ref: 1.0, p_c: 0.3 }).unwrap().v_s;
        let sp = Setpoints { v_ref: v_s, p_c: 0.3 };
        // Aligned bus: sin terms vanish, and the slip is zero.
        let (_, w) = semi_damped_rhs(s, &bus, &p, &c, &sp).unwrap();
        assert!((w - (sp.p_r(&p) - c.d_0 * s.omega) / p.m).abs() < 1e-9);
    }

    #[test]
    fn semi_damped_rejects_salient() {
        let (mut p, _, sp) = setup();
        p.x_q = 1.2;
        let c = derive_constants(&p).unwrap();
        let r = semi_damped_rhs(state(0.0, p.omega0), &BusSignal::fixed(1.0, 0.0), &p, &c, &sp);
        assert!(matches!(r, Err(Error::NotApplicable { .. })));
    }

    #[test]
    fn semi_damped_zero_forcing_and_salient_degeneracy() {
        let (p, c, sp) = setup();
        let s = state(0.6, p.omega0);
        let bus = BusSignal::fixed(1.0, 0.1);
        let z = semi_damped_manifolds(s, &bus, &p, &c, &sp).unwrap();
        assert_eq!(z.e_dp, (p.x_q - p.x_qp) / c.x_q_e * (0.5f64).sin());

        let mut q = p;
        q.x_qp = q.x_q;
        let cq = derive_constants(&q).unwrap();
        let bus = BusSignal { v_l: 1.0, delta_l: 0.1, v_l_dot: 0.3, delta_l_dot: -0.2 };
        let z = semi_damped_manifolds(s, &bus, &q, &cq, &sp).unwrap();
        assert_eq!(z.e_dp, 0.0);
    }

    #[test]
    fn damped_frozen_bus_reduces_to_static_flux() {
        let (p, c, sp) = setup();
        let s = state(0.6, p.omega0);
        let mut bus = BusSignal::fixed(1.0, 0.1);
        bus.delta_l_dot = 0.0;
        let z = damped_manifolds(s, &bus, &p, &c, &sp).unwrap();
        let vd = (0.5f64).sin();
        let e_dp = (p.x_q - p.x_qp) / c.x_q_e * vd;
        assert!((z.e_dp - e_dp).abs() < 1e-15);
        let phi0 = -c.x_k_e / c.x_qp_e * e_dp - (p.x_qp - p.x_k) / c.x_qp_e * vd;
        // The first-order correction vanishes on the static manifold.
        assert!((z.phi_q2 - phi0).abs() < 1e-12);
    }

    #[test]
    fn round_rotor_has_no_saliency_term() {
        let (p, c, _) = setup();
        assert_eq!(c.c_x, 0.0);
        assert!(p.is_round_rotor());
    }

    #[test]
    fn damped_manifold_singular_polynomial() {
        let (mut p, _, sp) = setup();
        let mut c = derive_constants(&p).unwrap();
        c.d_q = 0.0;
        p.tau_qp = 1.0;
        let r = damped_manifolds(state(0.0, p.omega0), &BusSignal::fixed(1.0, 0.0), &p, &c, &sp);
        assert!(matches!(r, Err(Error::SingularConstant("D_q"))));
    }

    #[test]
    fn open_line_terminal_equals_bus() {
        let p = MachineParameters::table_ii();
        let sp = Setpoints { v_ref: 1.0, p_c: 0.0 };
        // Classical source equal to the bus: no current flows.
        let bus = BusSignal::fixed(1.05, 0.0);
        let out = terminal_outputs(ModelKind::Classical, state(0.0, p.omega0), &bus, &p, &sp, 1.05).unwrap();
        assert!(out.i.abs() < 1e-15);
        assert!((out.v_s - 1.05).abs() < 1e-15);
    }
}
