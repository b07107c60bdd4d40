use crate::error::{Error, Result};
use crate::network::{self, LoadDemand};
use crate::params::{MachineParameters, Setpoints};

use super::BusSignal;

/// Canonical positions of the nineteen high-order states.
#[allow(non_snake_case)]
pub mod IDX {
    pub const DELTA: usize = 0;
    pub const OMEGA: usize = 1;
    pub const PHI_Q: usize = 2;
    pub const PHI_D: usize = 3;
    pub const E_DP: usize = 4;
    pub const E_QP: usize = 5;
    pub const PHI_Q2: usize = 6;
    pub const PHI_D1: usize = 7;
    pub const PHI_Q_E: usize = 8;
    pub const PHI_D_E: usize = 9;
    pub const E_F: usize = 10;
    pub const U_F: usize = 11;
    pub const U_F_BAR: usize = 12;
    pub const T_M: usize = 13;
    pub const P_U: usize = 14;
    pub const P_A1: usize = 15;
    pub const P_A2: usize = 16;
    pub const P_B1: usize = 17;
    pub const P_B2: usize = 18;
    pub const N: usize = 19;

    pub const NAMES: [&str; N] = [
        "delta", "omega", "Phi_q", "Phi_d", "E_dp", "E_qp", "Phi_q2", "Phi_d1", "Phi_q_e",
        "Phi_d_e", "E_f", "U_f", "U_f_bar", "T_m", "P_u", "P_a1", "P_a2", "P_b1", "P_b2",
    ];
}

const N: usize = IDX::N;

/// The nineteen states of the reference model in canonical order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HighOrderState {
    pub x: [f64; N],
}

impl HighOrderState {
    pub fn from_array(x: [f64; N]) -> Self {
        Self { x }
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        let x: [f64; N] = x
            .try_into()
            .map_err(|_| Error::Contract(format!("high-order state needs {N} entries, got {}", x.len())))?;
        Ok(Self { x })
    }

    pub fn delta(&self) -> f64 {
        self.x[IDX::DELTA]
    }

    pub fn omega(&self) -> f64 {
        self.x[IDX::OMEGA]
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite())
    }
}

/// How the stator and line fluxes are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkMode {
    /// `Φ_q`, `Φ_d`, `Φ_q^e`, `Φ_d^e` integrated as differential states.
    Dynamic,
    /// Flux derivatives set to zero and the stator/line algebra solved.
    QuasiStatic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HighOrderConfig {
    /// Time constants below this value [s] put their state on its zero-order
    /// manifold.
    pub floor: f64,
    pub network: NetworkMode,
}

impl Default for HighOrderConfig {
    fn default() -> Self {
        Self {
            floor: 1e-6,
            network: NetworkMode::QuasiStatic,
        }
    }
}

/// Stator currents, the bus they were evaluated against, and the terminal
/// voltage.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StatorSolution {
    pub i_q: f64,
    pub i_d: f64,
    pub v_q_l: f64,
    pub v_d_l: f64,
    pub v_q_s: f64,
    pub v_d_s: f64,
    pub v_s: f64,
}

/// Inverts the two flux relations of the stator for `(I_q, I_d)`.
pub fn stator_algebraic_currents(x: &HighOrderState, p: &MachineParameters) -> Result<(f64, f64)> {
    let (xq, xd) = (p.x_qpp + p.x_e, p.x_dpp + p.x_e);
    if xq == 0.0 || xd == 0.0 {
        return Err(Error::Singularity("zero augmented sub-transient reactance".into()));
    }
    let k = Coefficients::new(p);
    let (psi_q, psi_d) = k.rotor_flux(&x.x);
    Ok(((psi_q - x.x[IDX::PHI_Q]) / xq, (psi_d - x.x[IDX::PHI_D]) / xd))
}

#[derive(Debug, Clone, Copy)]
struct Coefficients {
    aq: f64,
    bq: f64,
    ad: f64,
    bd: f64,
    cq: f64,
    cd: f64,
}

impl Coefficients {
    fn new(p: &MachineParameters) -> Self {
        let (lq, ld) = (p.x_qp - p.x_k, p.x_dp - p.x_k);
        Self {
            aq: (p.x_qp - p.x_qpp) / lq,
            bq: (p.x_qpp - p.x_k) / lq,
            ad: (p.x_dp - p.x_dpp) / ld,
            bd: (p.x_dpp - p.x_k) / ld,
            cq: (p.x_qp - p.x_qpp) / (lq * lq),
            cd: (p.x_dp - p.x_dpp) / (ld * ld),
        }
    }

    // Flux behind the sub-transient reactance on each axis.
    fn rotor_flux(&self, x: &[f64; N]) -> (f64, f64) {
        (
            self.aq * x[IDX::PHI_Q2] - self.bq * x[IDX::E_DP],
            self.ad * x[IDX::PHI_D1] + self.bd * x[IDX::E_QP],
        )
    }
}

/// Result of one right-hand-side evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub dx: [f64; N],
    /// The state with every quasi-static slot replaced by its manifold value.
    pub projected: [f64; N],
    pub stator: StatorSolution,
}

/// The nineteenth-order reference model bound to one parameter set.
#[derive(Debug, Clone)]
pub struct HighOrderModel {
    p: MachineParameters,
    cfg: HighOrderConfig,
    k: Coefficients,
    quasi_static: [bool; N],
    // Rate-feedback ratio K̄_u / τ̄_u.
    r_fb: f64,
    tau_a2: f64,
}

impl HighOrderModel {
    pub fn new(p: &MachineParameters, cfg: HighOrderConfig) -> Result<Self> {
        p.validate().into_result()?;
        for (name, tau) in [
            ("tau_u", p.tau_u),
            ("tau_qpp", p.tau_qpp),
            ("tau_dpp", p.tau_dpp),
            ("tau_qp", p.tau_qp),
            ("tau_dp", p.tau_dp),
            ("tau_1", p.tau_1),
        ] {
            if tau < cfg.floor {
                return Err(Error::Contract(format!(
                    "{name} = {tau} s is below the stiffness floor {} s but its state has no quasi-static form",
                    cfg.floor
                )));
            }
        }
        if p.tau_5 + p.tau_6 <= 0.0 {
            return Err(Error::Contract("tau_5 + tau_6 must be positive".into()));
        }
        let r_fb = if p.k_u_bar == 0.0 {
            0.0
        } else if p.tau_u_bar == 0.0 {
            return Err(Error::Singularity("K_u_bar is nonzero while tau_u_bar = 0".into()));
        } else {
            p.k_u_bar / p.tau_u_bar
        };
        let tau_a2 = p.tau_5 * p.tau_6 / (p.tau_5 + p.tau_6);
        let mut quasi_static = [false; N];
        quasi_static[IDX::E_F] = p.tau_f < cfg.floor;
        quasi_static[IDX::U_F_BAR] = p.tau_u_bar < cfg.floor;
        quasi_static[IDX::T_M] = p.tau_m < cfg.floor;
        quasi_static[IDX::P_A2] = tau_a2 < cfg.floor;
        quasi_static[IDX::P_B2] = p.tau_2 < cfg.floor;
        if cfg.network == NetworkMode::QuasiStatic {
            for i in [IDX::PHI_Q, IDX::PHI_D, IDX::PHI_Q_E, IDX::PHI_D_E] {
                quasi_static[i] = true;
            }
        }
        Ok(Self {
            p: *p,
            cfg,
            k: Coefficients::new(p),
            quasi_static,
            r_fb,
            tau_a2,
        })
    }

    pub fn params(&self) -> &MachineParameters {
        &self.p
    }

    pub fn config(&self) -> HighOrderConfig {
        self.cfg
    }

    /// Which slots are held on their zero-order manifolds.
    pub fn quasi_static(&self) -> &[bool; N] {
        &self.quasi_static
    }

    /// Replaces exciter and governor quasi-static slots by their manifold
    /// values, in dependency order.
    fn project_controls(&self, x: &mut [f64; N], sp: &Setpoints) {
        let p = &self.p;
        let qs = &self.quasi_static;
        if qs[IDX::E_F] {
            x[IDX::E_F] = x[IDX::U_F] / p.k_f;
        }
        if qs[IDX::U_F_BAR] {
            x[IDX::U_F_BAR] = self.r_fb * x[IDX::E_F];
        }
        if qs[IDX::T_M] {
            x[IDX::T_M] = x[IDX::P_U];
        }
        if qs[IDX::P_B2] {
            x[IDX::P_B2] = self.governor_b2_drive(x, sp) - x[IDX::P_B1] / p.tau_1;
        }
        if qs[IDX::P_A2] {
            x[IDX::P_A2] = self.governor_a2_drive(x);
        }
    }

    fn governor_b2_drive(&self, x: &[f64; N], sp: &Setpoints) -> f64 {
        let p = &self.p;
        ((sp.p_c - x[IDX::P_U]) / (p.d0_bar * p.omega0) - (x[IDX::OMEGA] - p.omega0) / p.omega0)
            / p.tau_1
    }

    fn governor_a2_drive(&self, x: &[f64; N]) -> f64 {
        let p = &self.p;
        -(x[IDX::P_A1] - p.kappa * (x[IDX::P_B1] + p.tau_3 * x[IDX::P_B2])) / (p.tau_5 + p.tau_6)
    }

    /// Stator currents for a given bus under the active network mode.
    pub fn currents(&self, x: &[f64; N], v_q_l: f64, v_d_l: f64) -> Result<(f64, f64)> {
        let p = &self.p;
        let (xq, xd) = (p.x_qpp + p.x_e, p.x_dpp + p.x_e);
        let (psi_q, psi_d) = self.k.rotor_flux(x);
        match self.cfg.network {
            NetworkMode::Dynamic => Ok(((psi_q - x[IDX::PHI_Q]) / xq, (psi_d - x[IDX::PHI_D]) / xd)),
            NetworkMode::QuasiStatic => {
                let k = x[IDX::OMEGA] / p.omega0;
                let r = p.r_s + p.r_e;
                // [ r    k·xd ] [I_q]   [ k·ψ_d − V_q ]
                // [-k·xq  r   ] [I_d] = [-k·ψ_q − V_d ]
                let (b1, b2) = (k * psi_d - v_q_l, -k * psi_q - v_d_l);
                let det = r * r + k * k * xq * xd;
                if det == 0.0 {
                    return Err(Error::Singularity("stator algebra at zero speed".into()));
                }
                Ok(((r * b1 - k * xd * b2) / det, (k * xq * b1 + r * b2) / det))
            }
        }
    }

    /// Bus components `(V_q, V_d)` that deliver `load` from state `x`.
    pub fn bus_for_load(&self, x: &[f64; N], load: &LoadDemand, guess: (f64, f64)) -> Result<(f64, f64)> {
        match self.cfg.network {
            NetworkMode::Dynamic => {
                let (iq, id) = self.currents(x, 0.0, 0.0)?;
                network::bus_from_currents(load, iq, id)
            }
            NetworkMode::QuasiStatic => {
                network::solve_bus(load, |vq, vd| self.currents(x, vq, vd), guess)
            }
        }
    }

    /// Right-hand side against a given bus.
    pub fn rhs(&self, x: &HighOrderState, bus: &BusSignal, sp: &Setpoints) -> Result<[f64; N]> {
        let (vq, vd) = bus.machine_frame(x.delta());
        Ok(self.evaluate(&x.x, vq, vd, sp)?.dx)
    }

    /// Full evaluation against rotor-frame bus components.
    pub fn evaluate(&self, x: &[f64; N], v_q_l: f64, v_d_l: f64, sp: &Setpoints) -> Result<Evaluation> {
        if !x.iter().all(|v| v.is_finite()) || !v_q_l.is_finite() || !v_d_l.is_finite() {
            return Err(Error::Domain("high-order state".into()));
        }
        let p = &self.p;
        let k = &self.k;
        let mut y = *x;
        self.project_controls(&mut y, sp);

        let (xq2, xd2) = (p.x_qpp + p.x_e, p.x_dpp + p.x_e);
        let (iq, id) = self.currents(&y, v_q_l, v_d_l)?;
        let (psi_q, psi_d) = k.rotor_flux(&y);
        let quasi_network = self.cfg.network == NetworkMode::QuasiStatic;
        if quasi_network {
            y[IDX::PHI_Q] = psi_q - xq2 * iq;
            y[IDX::PHI_D] = psi_d - xd2 * id;
            y[IDX::PHI_Q_E] = -p.x_e * iq;
            y[IDX::PHI_D_E] = -p.x_e * id;
        }

        let w0 = p.omega0;
        let omega = y[IDX::OMEGA];
        let ks = omega / w0;
        let r = p.r_s + p.r_e;
        let (phi_q, phi_d) = (y[IDX::PHI_Q], y[IDX::PHI_D]);
        let (e_dp, e_qp) = (y[IDX::E_DP], y[IDX::E_QP]);
        let (phi_q2, phi_d1) = (y[IDX::PHI_Q2], y[IDX::PHI_D1]);
        let e_f = y[IDX::E_F];

        let mut dx = [0.0; N];
        dx[IDX::DELTA] = omega - w0;
        dx[IDX::OMEGA] =
            (y[IDX::T_M] - (phi_d * iq - phi_q * id) - p.d0_tilde * omega) / p.m;

        dx[IDX::E_DP] = (-e_dp
            + (p.x_q - p.x_qp) * (iq - k.cq * (phi_q2 + (p.x_qp - p.x_k) * iq + e_dp)))
            / p.tau_qp;
        dx[IDX::E_QP] = (-e_qp
            - (p.x_d - p.x_dp) * (id - k.cd * (phi_d1 + (p.x_dp - p.x_k) * id - e_qp))
            + e_f)
            / p.tau_dp;
        dx[IDX::PHI_Q2] = (-phi_q2 - (p.x_qp - p.x_k) * iq - e_dp) / p.tau_qpp;
        dx[IDX::PHI_D1] = (-phi_d1 - (p.x_dp - p.x_k) * id + e_qp) / p.tau_dpp;

        let (mut diq, mut did) = (0.0, 0.0);
        if !quasi_network {
            dx[IDX::PHI_Q] = w0 * (-ks * phi_d + v_q_l + r * iq);
            dx[IDX::PHI_D] = w0 * (ks * phi_q + v_d_l + r * id);
            diq = (k.aq * dx[IDX::PHI_Q2] - k.bq * dx[IDX::E_DP] - dx[IDX::PHI_Q]) / xq2;
            did = (k.ad * dx[IDX::PHI_D1] + k.bd * dx[IDX::E_QP] - dx[IDX::PHI_D]) / xd2;
            dx[IDX::PHI_Q_E] = -p.x_e * diq;
            dx[IDX::PHI_D_E] = -p.x_e * did;
        }
        let v_q_s = p.r_e * iq + ks * p.x_e * id + v_q_l + p.x_e / w0 * diq;
        let v_d_s = p.r_e * id - ks * p.x_e * iq + v_d_l + p.x_e / w0 * did;
        let v_s = v_q_s.hypot(v_d_s);

        dx[IDX::E_F] = (-p.k_f * e_f + y[IDX::U_F]) / p.tau_f;
        dx[IDX::U_F] = (-y[IDX::U_F] + p.k_u * y[IDX::U_F_BAR] - p.k_u * self.r_fb * e_f
            + p.k_u * (sp.v_ref - v_s))
            / p.tau_u;
        dx[IDX::U_F_BAR] = (-y[IDX::U_F_BAR] + self.r_fb * e_f) / p.tau_u_bar;

        dx[IDX::T_M] = (-y[IDX::T_M] + y[IDX::P_U]) / p.tau_m;
        dx[IDX::P_U] = y[IDX::P_A1] + p.tau_4 * y[IDX::P_A2];
        dx[IDX::P_A1] = y[IDX::P_A2];
        dx[IDX::P_A2] = (self.governor_a2_drive(&y) - y[IDX::P_A2]) / self.tau_a2;
        dx[IDX::P_B1] = y[IDX::P_B2];
        dx[IDX::P_B2] =
            (self.governor_b2_drive(&y, sp) - y[IDX::P_B2] - y[IDX::P_B1] / p.tau_1) / p.tau_2;

        for (d, &qs) in dx.iter_mut().zip(&self.quasi_static) {
            if qs {
                *d = 0.0;
            }
        }
        if !dx.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("high-order derivative".into()));
        }
        Ok(Evaluation {
            dx,
            projected: y,
            stator: StatorSolution {
                i_q: iq,
                i_d: id,
                v_q_l,
                v_d_l,
                v_q_s,
                v_d_s,
                v_s,
            },
        })
    }

    /// Evaluation with the bus closed by a constant-power load.
    pub fn evaluate_with_load(
        &self,
        x: &[f64; N],
        load: &LoadDemand,
        sp: &Setpoints,
        guess: (f64, f64),
    ) -> Result<Evaluation> {
        let mut y = *x;
        self.project_controls(&mut y, sp);
        let (vq, vd) = self.bus_for_load(&y, load, guess)?;
        self.evaluate(x, vq, vd, sp)
    }

    /// Equilibrium residual: derivatives for dynamic slots, distance to the
    /// manifold for quasi-static slots.
    pub fn manifold_residual(&self, x: &[f64; N], eval: &Evaluation) -> [f64; N] {
        let mut r = eval.dx;
        for i in 0..N {
            if self.quasi_static[i] {
                r[i] = x[i] - eval.projected[i];
            }
        }
        r
    }
}
