//! Right-hand sides of the five machine models and the manifold algebra that
//! connects them.
//!
//! All models share the slow pair `(δ, ω)`. The bus is described either by
//! magnitude and phase ([`BusSignal`]) or, inside the machine, by its
//! rotor-frame components `V_q = V cos(δ − δ_l)`, `V_d = V sin(δ − δ_l)`.

mod high_order;
mod reduced;

pub use high_order::{
    stator_algebraic_currents, HighOrderConfig, HighOrderModel, HighOrderState, NetworkMode,
    Evaluation, StatorSolution, IDX,
};
pub use reduced::{
    classical_rhs, common_zero_order_manifolds, damped_circuit, damped_manifolds, damped_rhs,
    elemental_fast_residual, elemental_manifolds, elemental_rhs, semi_damped_circuit,
    semi_damped_manifolds, semi_damped_rhs, solve_excitation, terminal_outputs, CircuitSolution, CommonManifolds,
    TerminalOutputs,
};

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Slow states shared by every second-order model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecondOrderState {
    /// Power angle [elec. rad].
    pub delta: f64,
    /// Speed [elec. rad/s].
    pub omega: f64,
}

/// Load-bus voltage and its rates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BusSignal {
    pub v_l: f64,
    pub delta_l: f64,
    pub v_l_dot: f64,
    pub delta_l_dot: f64,
}

impl BusSignal {
    pub fn fixed(v_l: f64, delta_l: f64) -> Self {
        Self {
            v_l,
            delta_l,
            ..Self::default()
        }
    }

    /// Rebuilds the bus from its rotor-frame components at power angle `delta`.
    pub fn from_machine_frame(delta: f64, v_q: f64, v_d: f64) -> Self {
        Self::fixed(v_q.hypot(v_d), delta - v_d.atan2(v_q))
    }

    /// Rotor-frame components `(V_q, V_d)` at power angle `delta`.
    pub fn machine_frame(&self, delta: f64) -> (f64, f64) {
        let (s, c) = (delta - self.delta_l).sin_cos();
        (self.v_l * c, self.v_l * s)
    }

    /// Rotor-frame rates `(V̇_q, V̇_d)` given `δ̇`.
    pub fn machine_frame_rates(&self, delta: f64, delta_dot: f64) -> (f64, f64) {
        let (s, c) = (delta - self.delta_l).sin_cos();
        let slip = delta_dot - self.delta_l_dot;
        (
            self.v_l_dot * c - self.v_l * s * slip,
            self.v_l * c * slip + self.v_l_dot * s,
        )
    }
}

/// Fast-state estimates rebuilt from slow states and the bus, plus the
/// terminal quantities they imply.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FastReconstruction {
    pub phi_q: f64,
    pub phi_d: f64,
    pub e_dp: f64,
    pub e_qp: f64,
    pub phi_q2: f64,
    pub phi_d1: f64,
    pub phi_q_e: f64,
    pub phi_d_e: f64,
    pub e_f: f64,
    pub u_f: f64,
    pub u_f_bar: f64,
    pub t_m: f64,
    pub p_u: f64,
    pub p_a1: f64,
    pub p_a2: f64,
    pub p_b1: f64,
    pub p_b2: f64,
    pub i_q: f64,
    pub i_d: f64,
    pub v_q_s: f64,
    pub v_d_s: f64,
    pub v_s: f64,
}

impl FastReconstruction {
    pub fn current(&self) -> f64 {
        self.i_q.hypot(self.i_d)
    }

    /// Full high-order state with these fast estimates.
    pub fn to_high_order(&self, s: SecondOrderState) -> HighOrderState {
        HighOrderState::from_array([
            s.delta,
            s.omega,
            self.phi_q,
            self.phi_d,
            self.e_dp,
            self.e_qp,
            self.phi_q2,
            self.phi_d1,
            self.phi_q_e,
            self.phi_d_e,
            self.e_f,
            self.u_f,
            self.u_f_bar,
            self.t_m,
            self.p_u,
            self.p_a1,
            self.p_a2,
            self.p_b1,
            self.p_b2,
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    HighOrder,
    Classical,
    Elemental,
    Damped,
    SemiDamped,
}

impl ModelKind {
    pub const REDUCED: [ModelKind; 4] = [
        ModelKind::Classical,
        ModelKind::Elemental,
        ModelKind::Damped,
        ModelKind::SemiDamped,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::HighOrder => "high-order",
            ModelKind::Classical => "classical",
            ModelKind::Elemental => "elemental",
            ModelKind::Damped => "damped",
            ModelKind::SemiDamped => "semi-damped",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "high-order" | "highorder" | "high_order" | "ho" => ModelKind::HighOrder,
            "classical" => ModelKind::Classical,
            "elemental" => ModelKind::Elemental,
            "damped" => ModelKind::Damped,
            "semi-damped" | "semidamped" | "semi_damped" => ModelKind::SemiDamped,
            other => return Err(Error::Invalid(format!("unknown model `{other}`"))),
        })
    }
}
