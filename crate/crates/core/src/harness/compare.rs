use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{HighOrderConfig, HighOrderModel, ModelKind};
use crate::params::MachineParameters;
use crate::solver::integrate;

use super::{high_order_equilibrium, high_order_relative_equilibrium, ClosedLoop, OperatingPoint, Retune, Sample, Scenario};

/// Initial operating point and the precomputed event schedule of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub initial: OperatingPoint,
    /// Steady states the retunes aim for, one per event.
    pub targets: Vec<OperatingPoint>,
    pub events: Vec<(f64, Retune)>,
}

/// Solves the initial equilibrium and the setpoints of every event.
pub fn plan(p: &MachineParameters, scenario: &Scenario) -> Result<Plan> {
    scenario.check()?;
    let model = HighOrderModel::new(p, HighOrderConfig::default())?;
    let initial = high_order_equilibrium(&model, &scenario.initial_load, scenario.initial_target)?;
    let mut targets = Vec::with_capacity(scenario.events.len());
    let mut events = Vec::with_capacity(scenario.events.len());
    let mut from = initial.clone();
    for e in &scenario.events {
        let next = high_order_relative_equilibrium(&model, &from, &e.load, e.target)?;
        events.push((
            e.t,
            Retune {
                load: e.load,
                sp: next.sp,
            },
        ));
        targets.push(next.clone());
        from = next;
    }
    Ok(Plan {
        initial,
        targets,
        events,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRun {
    pub kind: ModelKind,
    pub samples: Vec<Sample>,
}

/// Runs one model through a planned scenario.
pub fn run_model(kind: ModelKind, p: &MachineParameters, plan: &Plan, scenario: &Scenario) -> Result<ModelRun> {
    let (mut sys, y0) = ClosedLoop::new(kind, p, &plan.initial)?;
    let cfg = scenario.config_for(kind);
    let mut samples = Vec::with_capacity((scenario.duration / scenario.sample_interval) as usize + 2);
    integrate(&mut sys, &y0, (0.0, scenario.duration), &cfg, &plan.events, |t, y, sys| {
        samples.push(sys.sample(t, y)?);
        Ok(())
    })?;
    Ok(ModelRun { kind, samples })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    OmegaRpm,
    VS,
    DeltaDeg,
    VL,
}

impl Signal {
    pub fn value(self, s: &Sample) -> f64 {
        match self {
            Signal::OmegaRpm => s.omega_rpm,
            Signal::VS => s.v_s,
            Signal::DeltaDeg => s.delta_deg,
            Signal::VL => s.v_l,
        }
    }
}

/// `signal` of `samples` at time `t`, linearly interpolated and clamped to
/// the ends.
pub fn interpolate(samples: &[Sample], signal: Signal, t: f64) -> f64 {
    let k = samples.partition_point(|s| s.t < t);
    if k == 0 {
        return signal.value(&samples[0]);
    }
    if k == samples.len() {
        return signal.value(&samples[k - 1]);
    }
    let (a, b) = (&samples[k - 1], &samples[k]);
    if b.t == t || b.t == a.t {
        return signal.value(b);
    }
    let w = (t - a.t) / (b.t - a.t);
    (1.0 - w) * signal.value(a) + w * signal.value(b)
}

/// Root-mean-square difference on the reference grid restricted to
/// `[t0, t1]`, with `other` resampled linearly.
pub fn rmse_window(reference: &[Sample], other: &[Sample], signal: Signal, t0: f64, t1: f64) -> f64 {
    if other.is_empty() {
        return f64::NAN;
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for r in reference.iter().filter(|r| r.t >= t0 && r.t <= t1) {
        let d = signal.value(r) - interpolate(other, signal, r.t);
        sum += d * d;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        (sum / n as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rmse {
    pub omega_rpm: f64,
    pub v_s: f64,
    pub delta_deg: f64,
}

pub fn rmse(reference: &[Sample], other: &[Sample]) -> Rmse {
    let all = |s| rmse_window(reference, other, s, f64::NEG_INFINITY, f64::INFINITY);
    Rmse {
        omega_rpm: all(Signal::OmegaRpm),
        v_s: all(Signal::VS),
        delta_deg: all(Signal::DeltaDeg),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseReport {
    pub rows: Vec<(ModelKind, Rmse)>,
}

impl RmseReport {
    pub fn get(&self, kind: ModelKind) -> Option<Rmse> {
        self.rows.iter().find(|(k, _)| *k == kind).map(|(_, r)| *r)
    }

    pub fn to_document(&self) -> String {
        let mut out = String::from("model,omega_rpm,v_s_pu,delta_deg\n");
        for (k, r) in &self.rows {
            let _ = writeln!(out, "{k},{:.6e},{:.6e},{:.6e}", r.omega_rpm, r.v_s, r.delta_deg);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub plan: Plan,
    pub reference: ModelRun,
    pub runs: Vec<ModelRun>,
    pub report: RmseReport,
}

impl Comparison {
    pub fn run(&self, kind: ModelKind) -> Option<&ModelRun> {
        if kind == ModelKind::HighOrder {
            return Some(&self.reference);
        }
        self.runs.iter().find(|r| r.kind == kind)
    }
}

/// Runs the high-order reference and every other selected model in
/// parallel, then scores each against the reference.
pub fn run_comparison(p: &MachineParameters, scenario: &Scenario) -> Result<Comparison> {
    let plan = plan(p, scenario)?;
    let mut kinds = vec![ModelKind::HighOrder];
    kinds.extend(scenario.models.iter().copied().filter(|k| *k != ModelKind::HighOrder));
    let mut runs = kinds
        .par_iter()
        .map(|&k| run_model(k, p, &plan, scenario))
        .collect::<Result<Vec<_>>>()?;
    let reference = runs.remove(0);
    let report = RmseReport {
        rows: runs.iter().map(|r| (r.kind, rmse(&reference.samples, &r.samples))).collect(),
    };
    Ok(Comparison {
        plan,
        reference,
        runs,
        report,
    })
}

pub const CSV_HEADER: &str = "t_s,delta_deg,omega_rad_s,omega_rpm,v_s_pu,v_l_pu,delta_l_deg";

pub fn write_csv<W: Write>(samples: &[Sample], mut w: W) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for s in samples {
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            s.t, s.delta_deg, s.omega, s.omega_rpm, s.v_s, s.v_l, s.delta_l_deg
        )?;
    }
    Ok(())
}

pub fn export_csv(samples: &[Sample], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_csv(samples, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn parse_csv(text: &str) -> Result<Vec<Sample>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "missing trajectory header".into(),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let v: Vec<f64> = l
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            if v.len() != 7 {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected 7 fields, found {}", v.len()),
                });
            }
            Ok(Sample {
                t: v[0],
                delta_deg: v[1],
                omega: v[2],
                omega_rpm: v[3],
                v_s: v[4],
                v_l: v[5],
                delta_l_deg: v[6],
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, dt: f64, offset: f64) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let t = i as f64 * dt;
                Sample {
                    t,
                    delta_deg: 10.0 * t,
                    omega: 377.0,
                    omega_rpm: 3600.0 + t,
                    v_s: 1.0 + offset + 0.01 * t,
                    v_l: 1.0,
                    delta_l_deg: 0.0,
                }
            })
            .collect()
    }

    #[test]
    fn self_comparison_is_zero() {
        let a = ramp(50, 0.1, 0.0);
        let r = rmse(&a, &a);
        assert_eq!((r.omega_rpm, r.v_s, r.delta_deg), (0.0, 0.0, 0.0));
    }

    #[test]
    fn constant_offset() {
        let a = ramp(50, 0.1, 0.0);
        let b = ramp(50, 0.1, 0.003);
        assert!((rmse(&a, &b).v_s - 0.003).abs() < 1e-12);
    }

    #[test]
    fn finer_sampling_does_not_change_rmse() {
        let a = ramp(51, 0.1, 0.0);
        let coarse = ramp(51, 0.1, 0.002);
        let fine = ramp(501, 0.01, 0.002);
        let (x, y) = (rmse(&a, &coarse), rmse(&a, &fine));
        assert!((x.v_s - y.v_s).abs() < 1e-6);
        assert!((x.delta_deg - y.delta_deg).abs() < 1e-6);
    }

    #[test]
    fn csv_round_trip() {
        let a = ramp(7, 0.1, 1.0 / 3.0);
        let mut buf = Vec::new();
        write_csv(&a, &mut buf).unwrap();
        let back = parse_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, a);

        let mut empty = Vec::new();
        write_csv(&[], &mut empty).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap(), format!("{CSV_HEADER}\n"));
    }
}
