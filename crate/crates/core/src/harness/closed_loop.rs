use std::cell::Cell;

use crate::error::{Error, Result};
use crate::models::{
    classical_rhs, damped_circuit, damped_rhs, elemental_manifolds, elemental_rhs, semi_damped_rhs,
    terminal_outputs, BusSignal, HighOrderConfig, HighOrderModel, ModelKind, SecondOrderState,
    IDX,
};
use crate::network::{solve_bus, LoadDemand};
use crate::params::{derive_constants, DerivedConstants, MachineParameters, Setpoints};
use crate::solver::OdeSystem;

use super::OperatingPoint;

/// Load step with the setpoints that go with it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Retune {
    pub load: LoadDemand,
    pub sp: Setpoints,
}

/// One recorded instant of a closed-loop run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sample {
    pub t: f64,
    pub delta_deg: f64,
    pub omega: f64,
    pub omega_rpm: f64,
    pub v_s: f64,
    pub v_l: f64,
    pub delta_l_deg: f64,
}

pub(crate) fn rpm(omega: f64) -> f64 {
    omega * 60.0 / (2.0 * std::f64::consts::PI)
}

/// A machine model and the constant-power load bus it feeds, as one ODE.
///
/// State layouts: high-order `x` (19); classical and elemental `[δ, ω]`;
/// damped `[δ, ω, V_q, V_d]`; semi-damped `[δ, ω, V_d]` with `V_q` algebraic.
/// Bus components are in the rotor frame of the machine.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    kind: ModelKind,
    p: MachineParameters,
    c: DerivedConstants,
    ho: Option<HighOrderModel>,
    load: LoadDemand,
    sp: Setpoints,
    e0: f64,
    t_m0: f64,
    guess: Cell<(f64, f64)>,
}

impl ClosedLoop {
    /// Builds the closed loop for `kind` at `op` and returns it with its
    /// initial state. Every model starts from the operating point's `(δ, ω)`.
    pub fn new(kind: ModelKind, p: &MachineParameters, op: &OperatingPoint) -> Result<(Self, Vec<f64>)> {
        let c = derive_constants(p)?;
        let x = &op.x;
        let mut sys = Self {
            kind,
            p: *p,
            c,
            ho: None,
            load: op.load,
            sp: op.sp,
            e0: DerivedConstants::classical_e0(x.x[IDX::E_QP], x.x[IDX::E_DP]),
            t_m0: 0.0,
            guess: Cell::new(op.bus.machine_frame(x.delta())),
        };
        let s = SecondOrderState {
            delta: x.delta(),
            omega: x.omega(),
        };
        let y0 = match kind {
            ModelKind::HighOrder => {
                sys.ho = Some(HighOrderModel::new(p, HighOrderConfig::default())?);
                x.x.to_vec()
            }
            ModelKind::Classical => {
                sys.t_m0 = op.load.p + p.d0_tilde * p.omega0;
                vec![s.delta, s.omega]
            }
            ModelKind::Elemental => vec![s.delta, s.omega],
            ModelKind::Damped | ModelKind::SemiDamped => {
                if kind == ModelKind::SemiDamped && !p.is_round_rotor() {
                    return Err(Error::NotApplicable {
                        model: "semi-damped",
                        reason: "salient-pole machine".into(),
                    });
                }
                let capacitance = if kind == ModelKind::Damped { c.c_q.min(c.c_d) } else { c.c_qp_tilde };
                if !(capacitance > 0.0) {
                    return Err(Error::NotApplicable {
                        model: kind.name(),
                        reason: "the bus has no dynamics (zero damping constant)".into(),
                    });
                }
                let (vq, vd) = sys.static_circuit_bus(s)?;
                sys.guess.set((vq, vd));
                if kind == ModelKind::Damped {
                    vec![s.delta, s.omega, vq, vd]
                } else {
                    vec![s.delta, s.omega, vd]
                }
            }
        };
        Ok((sys, y0))
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn setpoints(&self) -> Setpoints {
        self.sp
    }

    pub fn load(&self) -> LoadDemand {
        self.load
    }

    // Bus of the damped/semi-damped circuit with all rates zero.
    fn static_circuit_bus(&self, s: SecondOrderState) -> Result<(f64, f64)> {
        solve_bus(
            &self.load,
            |vq, vd| {
                let bus = BusSignal::from_machine_frame(s.delta, vq, vd);
                let sol = damped_circuit(s, &bus, &self.p, &self.c, &self.sp)?;
                Ok((sol.i_q, sol.i_d))
            },
            self.guess.get(),
        )
    }

    fn algebraic_bus<F>(&self, currents: F) -> Result<(f64, f64)>
    where
        F: FnMut(f64, f64) -> Result<(f64, f64)>,
    {
        let v = solve_bus(&self.load, currents, self.guess.get())?;
        self.guess.set(v);
        Ok(v)
    }

    fn classical_bus(&self) -> Result<(f64, f64)> {
        let x = self.p.x_dp + self.p.x_e;
        let e0 = self.e0;
        self.algebraic_bus(|vq, vd| Ok((vd / x, (e0 - vq) / x)))
    }

    fn elemental_bus(&self, s: SecondOrderState) -> Result<(f64, f64)> {
        self.algebraic_bus(|vq, vd| {
            let z = elemental_manifolds(s, &BusSignal::from_machine_frame(s.delta, vq, vd), &self.p, &self.c, &self.sp)?;
            Ok((z.i_q, z.i_d))
        })
    }

    // Load currents and the field voltage of the lossless circuit.
    fn circuit_drive(&self, vq: f64, vd: f64) -> (f64, f64, f64) {
        let (iq, id) = self.load.currents(vq, vd);
        let xe = self.p.x_e;
        let v_s = (vq + xe * id).hypot(vd - xe * iq);
        (iq, id, self.c.c_k * (self.sp.v_ref - v_s))
    }

    fn damped_rates(&self, vq: f64, vd: f64) -> (f64, f64) {
        let (iq, id, ef) = self.circuit_drive(vq, vd);
        let c = &self.c;
        (((ef - vq) / c.x_d_e - id) / c.c_d, (iq - vd / c.x_q_e) / c.c_q)
    }

    // d-axis balance of the semi-damped circuit, zero on the algebraic branch.
    fn semi_damped_balance(&self, vq: f64, vd: f64) -> f64 {
        let (_, id, ef) = self.circuit_drive(vq, vd);
        (ef - vq) / self.c.x_d_e - id
    }

    fn semi_damped_vq(&self, vd: f64) -> Result<f64> {
        let mut vq = self.guess.get().0;
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            let h = self.semi_damped_balance(vq, vd);
            if h.abs() < 1e-13 {
                break;
            }
            let e = 1e-7 * vq.abs().max(1.0);
            let dh = (self.semi_damped_balance(vq + e, vd) - self.semi_damped_balance(vq - e, vd)) / (2.0 * e);
            let step = h / dh;
            if !step.is_finite() {
                return Err(Error::Singularity("semi-damped bus balance".into()));
            }
            vq -= step;
            if step.abs() < 1e-15 * vq.abs().max(1.0) || (step.abs() >= last && h.abs() < 1e-10) {
                break;
            }
            last = step.abs();
        }
        let h = self.semi_damped_balance(vq, vd);
        if !(h.abs() < 1e-9) {
            return Err(Error::Convergence {
                what: "semi-damped bus balance",
                iterations: 50,
                residual: h.abs(),
            });
        }
        self.guess.set((vq, vd));
        Ok(vq)
    }

    fn semi_damped_rates(&self, vq: f64, vd: f64) -> (f64, f64) {
        let (iq, _, _) = self.circuit_drive(vq, vd);
        let dvd = (iq - vd / self.c.x_q_e) / self.c.c_qp_tilde;
        let (eq, ed) = (1e-7 * vq.abs().max(1.0), 1e-7 * vd.abs().max(1.0));
        let h_q = (self.semi_damped_balance(vq + eq, vd) - self.semi_damped_balance(vq - eq, vd)) / (2.0 * eq);
        let h_d = (self.semi_damped_balance(vq, vd + ed) - self.semi_damped_balance(vq, vd - ed)) / (2.0 * ed);
        (-h_d / h_q * dvd, dvd)
    }

    fn moving_bus(&self, s: SecondOrderState, vq: f64, vd: f64, dvq: f64, dvd: f64) -> BusSignal {
        let v2 = vq * vq + vd * vd;
        let v = v2.sqrt();
        let theta_dot = (vq * dvd - vd * dvq) / v2;
        BusSignal {
            v_l: v,
            delta_l: s.delta - vd.atan2(vq),
            v_l_dot: (vq * dvq + vd * dvd) / v,
            delta_l_dot: (s.omega - self.p.omega0) - theta_dot,
        }
    }

    /// Slow state and bus (with rates) of a reduced-model state vector.
    pub fn reduced_bus(&self, y: &[f64]) -> Result<(SecondOrderState, BusSignal)> {
        let s = SecondOrderState { delta: y[0], omega: y[1] };
        let bus = match self.kind {
            ModelKind::HighOrder => {
                let ho = self.ho.as_ref().expect("high-order model present");
                let x: &[f64; IDX::N] = y.try_into().map_err(|_| Error::Contract("state length".into()))?;
                let (vq, vd) = ho.bus_for_load(x, &self.load, self.guess.get())?;
                BusSignal::from_machine_frame(s.delta, vq, vd)
            }
            ModelKind::Classical => {
                let (vq, vd) = self.classical_bus()?;
                BusSignal::from_machine_frame(s.delta, vq, vd)
            }
            ModelKind::Elemental => {
                let (vq, vd) = self.elemental_bus(s)?;
                BusSignal::from_machine_frame(s.delta, vq, vd)
            }
            ModelKind::Damped => {
                let (vq, vd) = (y[2], y[3]);
                let (dvq, dvd) = self.damped_rates(vq, vd);
                self.moving_bus(s, vq, vd, dvq, dvd)
            }
            ModelKind::SemiDamped => {
                let vd = y[2];
                let vq = self.semi_damped_vq(vd)?;
                let (dvq, dvd) = self.semi_damped_rates(vq, vd);
                self.moving_bus(s, vq, vd, dvq, dvd)
            }
        };
        if !(bus.v_l > 0.0) || !bus.v_l.is_finite() {
            return Err(Error::Domain("bus voltage".into()));
        }
        Ok((s, bus))
    }

    /// Signals recorded at time `t`.
    pub fn sample(&self, t: f64, y: &[f64]) -> Result<Sample> {
        let (s, bus, v_s) = if self.kind == ModelKind::HighOrder {
            let ho = self.ho.as_ref().expect("high-order model present");
            let x: &[f64; IDX::N] = y.try_into().map_err(|_| Error::Contract("state length".into()))?;
            let eval = ho.evaluate_with_load(x, &self.load, &self.sp, self.guess.get())?;
            let s = SecondOrderState { delta: y[0], omega: y[1] };
            let bus = BusSignal::from_machine_frame(s.delta, eval.stator.v_q_l, eval.stator.v_d_l);
            (s, bus, eval.stator.v_s)
        } else {
            let (s, bus) = self.reduced_bus(y)?;
            let out = terminal_outputs(self.kind, s, &bus, &self.p, &self.sp, self.e0)?;
            (s, bus, out.v_s)
        };
        Ok(Sample {
            t,
            delta_deg: s.delta.to_degrees(),
            omega: s.omega,
            omega_rpm: rpm(s.omega),
            v_s,
            v_l: bus.v_l,
            delta_l_deg: bus.delta_l.to_degrees(),
        })
    }
}

impl OdeSystem for ClosedLoop {
    type Event = Retune;

    fn dim(&self) -> usize {
        match self.kind {
            ModelKind::HighOrder => IDX::N,
            ModelKind::Classical | ModelKind::Elemental => 2,
            ModelKind::Damped => 4,
            ModelKind::SemiDamped => 3,
        }
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        if let ModelKind::HighOrder = self.kind {
            let ho = self.ho.as_ref().expect("high-order model present");
            let x: &[f64; IDX::N] = y.try_into().map_err(|_| Error::Contract("state length".into()))?;
            let eval = ho.evaluate_with_load(x, &self.load, &self.sp, self.guess.get())?;
            self.guess.set((eval.stator.v_q_l, eval.stator.v_d_l));
            dy.copy_from_slice(&eval.dx);
            return Ok(());
        }
        let (s, bus) = self.reduced_bus(y)?;
        let (d_delta, d_omega) = match self.kind {
            ModelKind::Classical => classical_rhs(s, &bus, &self.p, self.e0, self.t_m0),
            ModelKind::Elemental => {
                let rec = elemental_manifolds(s, &bus, &self.p, &self.c, &self.sp)?;
                elemental_rhs(s, &bus, &self.p, &self.c, &self.sp, &rec)
            }
            ModelKind::Damped => damped_rhs(s, &bus, &self.p, &self.c, &self.sp)?,
            ModelKind::SemiDamped => semi_damped_rhs(s, &bus, &self.p, &self.c, &self.sp)?,
            ModelKind::HighOrder => unreachable!(),
        };
        dy[0] = d_delta;
        dy[1] = d_omega;
        match self.kind {
            ModelKind::Damped => {
                let (dvq, dvd) = self.damped_rates(y[2], y[3]);
                dy[2] = dvq;
                dy[3] = dvd;
            }
            ModelKind::SemiDamped => {
                let vq = self.guess.get().0;
                dy[2] = self.semi_damped_rates(vq, y[2]).1;
            }
            _ => {}
        }
        Ok(())
    }

    fn apply_event(&mut self, event: &Retune, _y: &mut [f64]) -> Result<()> {
        self.load = event.load;
        self.sp = event.sp;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::high_order_equilibrium;

    fn op() -> (MachineParameters, OperatingPoint) {
        let p = MachineParameters::table_ii();
        let m = HighOrderModel::new(&p, HighOrderConfig::default()).unwrap();
        let op = high_order_equilibrium(&m, &LoadDemand::new(0.05, 0.0), 1.0).unwrap();
        (p, op)
    }

    #[test]
    fn every_model_starts_at_rest() {
        let (p, op) = op();
        for kind in [
            ModelKind::HighOrder,
            ModelKind::Classical,
            ModelKind::Elemental,
            ModelKind::Damped,
            ModelKind::SemiDamped,
        ] {
            let (sys, y0) = ClosedLoop::new(kind, &p, &op).unwrap();
            let mut dy = vec![0.0; sys.dim()];
            sys.rhs(0.0, &y0, &mut dy).unwrap();
            assert_eq!(dy[0], y0[1] - p.omega0, "{kind}");
            let tol = match kind {
                // Lossless circuit: the line loss is left unbalanced.
                ModelKind::Damped | ModelKind::SemiDamped => 1e-3,
                _ => 1e-8,
            };
            assert!(dy.iter().all(|v| v.abs() < tol), "{kind}: {dy:?}");
            let s = sys.sample(0.0, &y0).unwrap();
            assert!((s.v_l - 1.0).abs() < 0.01, "{kind}: {}", s.v_l);
            assert!((s.v_s - op.v_s).abs() < 0.01, "{kind}: {}", s.v_s);
        }
    }

    #[test]
    fn damped_bus_rates_match_state_rates() {
        let (p, op) = op();
        let (sys, mut y) = ClosedLoop::new(ModelKind::Damped, &p, &op).unwrap();
        y[3] += 1e-3;
        let (s, bus) = sys.reduced_bus(&y).unwrap();
        let mut dy = [0.0; 4];
        sys.rhs(0.0, &y, &mut dy).unwrap();
        let (dvq, dvd) = bus.machine_frame_rates(s.delta, s.omega - p.omega0);
        assert!((dvq - dy[2]).abs() < 1e-9 * dy[2].abs().max(1.0));
        assert!((dvd - dy[3]).abs() < 1e-9 * dy[3].abs().max(1.0));
    }
}
