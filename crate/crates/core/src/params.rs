//! Machine parameter records, their text format, validation, and the
//! composite constants used by the reduced models.
//!
//! The parameter document is a flat `key = value` text file. Blank lines and
//! anything after `#` are ignored. Two keys, `V_r_s` and `P_r_s`, may be set to
//! `auto` (or omitted) to have them solved from the initial equilibrium.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

const TABLE_II: &str = include_str!("../assets/tableII.params");

/// Per-unit parameter record for the machine, exciter, governor and line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineParameters {
    /// q-axis sub-transient time constant [s].
    pub tau_qpp: f64,
    /// d-axis sub-transient time constant [s].
    pub tau_dpp: f64,
    /// q-axis transient time constant [s].
    pub tau_qp: f64,
    /// d-axis transient (field) time constant [s].
    pub tau_dp: f64,
    pub x_qpp: f64,
    pub x_qp: f64,
    pub x_q: f64,
    pub x_dpp: f64,
    pub x_dp: f64,
    pub x_d: f64,
    /// Leakage reactance [pu].
    pub x_k: f64,
    /// Nominal speed [elec. rad/s].
    pub omega0: f64,
    /// Stator resistance [pu].
    pub r_s: f64,
    pub tau_f: f64,
    pub tau_u: f64,
    pub tau_u_bar: f64,
    pub k_f: f64,
    pub k_u: f64,
    /// Rate-feedback gain [s].
    pub k_u_bar: f64,
    pub tau_1: f64,
    pub tau_2: f64,
    pub tau_3: f64,
    pub tau_4: f64,
    pub tau_5: f64,
    pub tau_6: f64,
    pub tau_m: f64,
    /// Actuator gain.
    pub kappa: f64,
    /// Governor power reference `P_c + D̄0·ω0` [pu]; `None` means solve it.
    pub p_r_s: Option<f64>,
    /// Inertia [s²].
    pub m: f64,
    /// Friction and windage damping [s/rad].
    pub d0_tilde: f64,
    /// Droop damping [s/rad].
    pub d0_bar: f64,
    /// Line resistance [pu].
    pub r_e: f64,
    /// Line reactance [pu].
    pub x_e: f64,
    /// Exciter voltage reference [pu]; `None` means solve it.
    pub v_r_s: Option<f64>,
}

type Accessor = fn(&mut MachineParameters) -> &mut f64;

// Required keys, in document order.
const REQUIRED: &[(&str, Accessor)] = &[
    ("tau_qpp", |p| &mut p.tau_qpp),
    ("tau_dpp", |p| &mut p.tau_dpp),
    ("tau_qp", |p| &mut p.tau_qp),
    ("tau_dp", |p| &mut p.tau_dp),
    ("X_qpp", |p| &mut p.x_qpp),
    ("X_qp", |p| &mut p.x_qp),
    ("X_q", |p| &mut p.x_q),
    ("X_dpp", |p| &mut p.x_dpp),
    ("X_dp", |p| &mut p.x_dp),
    ("X_d", |p| &mut p.x_d),
    ("X_k", |p| &mut p.x_k),
    ("omega0", |p| &mut p.omega0),
    ("R_s", |p| &mut p.r_s),
    ("tau_f", |p| &mut p.tau_f),
    ("tau_u", |p| &mut p.tau_u),
    ("tau_u_bar", |p| &mut p.tau_u_bar),
    ("K_f", |p| &mut p.k_f),
    ("K_u", |p| &mut p.k_u),
    ("K_u_bar", |p| &mut p.k_u_bar),
    ("tau_1", |p| &mut p.tau_1),
    ("tau_2", |p| &mut p.tau_2),
    ("tau_3", |p| &mut p.tau_3),
    ("tau_4", |p| &mut p.tau_4),
    ("tau_5", |p| &mut p.tau_5),
    ("tau_6", |p| &mut p.tau_6),
    ("tau_m", |p| &mut p.tau_m),
    ("kappa", |p| &mut p.kappa),
    ("M", |p| &mut p.m),
    ("D0_tilde", |p| &mut p.d0_tilde),
    ("D0_bar", |p| &mut p.d0_bar),
    ("R_e", |p| &mut p.r_e),
    ("X_e", |p| &mut p.x_e),
];

const OPTIONAL: &[&str] = &["P_r_s", "V_r_s"];

impl MachineParameters {
    /// The built-in round-rotor data set (`tableII`).
    pub fn table_ii() -> Self {
        TABLE_II.parse().expect("built-in parameter asset parses")
    }

    /// Resolves a built-in asset name. `SYNCHRO_SEED_DIR`, when set, is
    /// searched first for `<name>.params`.
    pub fn builtin(name: &str) -> Option<Result<Self>> {
        if let Ok(dir) = std::env::var("SYNCHRO_SEED_DIR") {
            let candidate = Path::new(&dir).join(format!("{name}.params"));
            if candidate.is_file() {
                return Some(Self::load(&candidate));
            }
        }
        match name {
            "tableII" | "table-ii" | "tableii" => Some(Ok(Self::table_ii())),
            _ => None,
        }
    }

    /// Reads and parses a parameter document from disk.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        text.parse()
    }

    /// Serializes to the key/value document format. Values use the shortest
    /// representation that parses back to the same `f64`.
    pub fn to_document(&self) -> String {
        let mut copy = *self;
        let mut out = String::new();
        for (key, get) in REQUIRED {
            let _ = writeln!(out, "{key} = {}", get(&mut copy));
        }
        let auto = |v: Option<f64>| v.map_or_else(|| "auto".to_string(), |x| x.to_string());
        let _ = writeln!(out, "P_r_s = {}", auto(self.p_r_s));
        let _ = writeln!(out, "V_r_s = {}", auto(self.v_r_s));
        out
    }

    /// Same machine with stator and line resistance removed.
    pub fn lossless(&self) -> Self {
        Self {
            r_s: 0.0,
            r_e: 0.0,
            ..*self
        }
    }

    /// Power-change setting `P_c = P_r_s − D̄0·ω0`, when the reference is fixed.
    pub fn p_c(&self) -> Option<f64> {
        self.p_r_s.map(|p_r| p_r - self.d0_bar * self.omega0)
    }

    pub fn is_round_rotor(&self) -> bool {
        self.x_q == self.x_d
    }

    /// Lists every violated invariant; an empty report means the record is
    /// usable.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let mut copy = *self;
        for (key, get) in REQUIRED {
            let v = *get(&mut copy);
            if !v.is_finite() {
                report.push("finite values", format!("{key} = {v}"));
            }
        }
        for (key, v) in [("P_r_s", self.p_r_s), ("V_r_s", self.v_r_s)] {
            if let Some(v) = v {
                if !v.is_finite() {
                    report.push("finite values", format!("{key} = {v}"));
                }
            }
        }
        let taus = [
            ("tau_qpp", self.tau_qpp),
            ("tau_dpp", self.tau_dpp),
            ("tau_qp", self.tau_qp),
            ("tau_dp", self.tau_dp),
            ("tau_f", self.tau_f),
            ("tau_u", self.tau_u),
            ("tau_u_bar", self.tau_u_bar),
            ("tau_1", self.tau_1),
            ("tau_2", self.tau_2),
            ("tau_3", self.tau_3),
            ("tau_4", self.tau_4),
            ("tau_5", self.tau_5),
            ("tau_6", self.tau_6),
            ("tau_m", self.tau_m),
        ];
        for (key, tau) in taus {
            if tau < 0.0 {
                report.push("time constants >= 0", format!("{key} = {tau}"));
            }
        }
        if !(self.m > 0.0) {
            report.push("M > 0", format!("M = {}", self.m));
        }
        if !(self.omega0 > 0.0) {
            report.push("omega0 > 0", format!("omega0 = {}", self.omega0));
        }
        if !(self.k_f > 0.0) {
            report.push("K_f > 0", format!("K_f = {}", self.k_f));
        }
        if !(self.k_u > 0.0) {
            report.push("K_u > 0", format!("K_u = {}", self.k_u));
        }
        for (axis, xk, xpp, xp, x) in [
            ("q", self.x_k, self.x_qpp, self.x_qp, self.x_q),
            ("d", self.x_k, self.x_dpp, self.x_dp, self.x_d),
        ] {
            if !(xk < xpp && xpp <= xp && xp <= x) {
                report.push(
                    "reactance ordering",
                    format!("{axis}-axis: X_k = {xk}, X'' = {xpp}, X' = {xp}, X = {x}"),
                );
            }
        }
        report
    }
}

impl FromStr for MachineParameters {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut p = MachineParameters {
            tau_qpp: f64::NAN,
            tau_dpp: f64::NAN,
            tau_qp: f64::NAN,
            tau_dp: f64::NAN,
            x_qpp: f64::NAN,
            x_qp: f64::NAN,
            x_q: f64::NAN,
            x_dpp: f64::NAN,
            x_dp: f64::NAN,
            x_d: f64::NAN,
            x_k: f64::NAN,
            omega0: f64::NAN,
            r_s: f64::NAN,
            tau_f: f64::NAN,
            tau_u: f64::NAN,
            tau_u_bar: f64::NAN,
            k_f: f64::NAN,
            k_u: f64::NAN,
            k_u_bar: f64::NAN,
            tau_1: f64::NAN,
            tau_2: f64::NAN,
            tau_3: f64::NAN,
            tau_4: f64::NAN,
            tau_5: f64::NAN,
            tau_6: f64::NAN,
            tau_m: f64::NAN,
            kappa: f64::NAN,
            p_r_s: None,
            m: f64::NAN,
            d0_tilde: f64::NAN,
            d0_bar: f64::NAN,
            r_e: f64::NAN,
            x_e: f64::NAN,
            v_r_s: None,
        };
        let mut seen = vec![false; REQUIRED.len()];
        for entry in key_values(text) {
            let (line, key, value) = entry?;
            let key = match key {
                "tau_q2pp" => "tau_qpp",
                "tau_d2pp" => "tau_dpp",
                other => other,
            };
            if let Some(i) = REQUIRED.iter().position(|(k, _)| *k == key) {
                if seen[i] {
                    return Err(Error::Parse {
                        line,
                        message: format!("duplicate key `{key}`"),
                    });
                }
                seen[i] = true;
                *(REQUIRED[i].1)(&mut p) = parse_number(line, key, value)?;
            } else if OPTIONAL.contains(&key) {
                let v = if value.eq_ignore_ascii_case("auto") {
                    None
                } else {
                    Some(parse_number(line, key, value)?)
                };
                match key {
                    "P_r_s" => p.p_r_s = v,
                    _ => p.v_r_s = v,
                }
            } else {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown key `{key}`"),
                });
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::MissingField(REQUIRED[i].0.to_string()));
        }
        Ok(p)
    }
}

/// Splits a key/value document into `(line number, key, value)` triples,
/// skipping comments and blank lines. Shared with the scenario format.
pub(crate) fn key_values(text: &str) -> impl Iterator<Item = Result<(usize, &str, &str)>> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            return None;
        }
        Some(match content.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => Ok((line, k.trim(), v.trim())),
            _ => Err(Error::Parse {
                line,
                message: format!("expected `key = value`, found `{content}`"),
            }),
        })
    })
}

pub(crate) fn parse_number(line: usize, key: &str, value: &str) -> Result<f64> {
    value.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("`{key}`: `{value}` is not a number"),
    })
}

/// Operating setpoints shared by every model: exciter voltage reference and
/// governor power-change setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setpoints {
    pub v_ref: f64,
    pub p_c: f64,
}

impl Setpoints {
    /// Governor reference `P_r = P_c + D̄0·ω0`.
    pub fn p_r(&self, p: &MachineParameters) -> f64 {
        self.p_c + p.d0_bar * p.omega0
    }
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub rule: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn push(&mut self, rule: &'static str, detail: String) {
        self.violations.push(Violation { rule, detail });
    }

    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, rule: &str) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            return Ok(());
        }
        let msg = self
            .violations
            .iter()
            .map(|v| format!("{} ({})", v.rule, v.detail))
            .collect::<Vec<_>>()
            .join("; ");
        Err(Error::Invalid(msg))
    }
}

/// Composite constants of the reduced models, computed once per parameter set.
///
/// Reactances with an `_e` suffix are augmented by the line reactance `X_e`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants {
    /// `R_s + R_e`.
    pub r_s_e: f64,
    pub x_q_e: f64,
    pub x_d_e: f64,
    pub x_k_e: f64,
    pub x_qp_e: f64,
    pub x_dp_e: f64,
    pub x_qpp_e: f64,
    pub x_dpp_e: f64,

    // elemental model
    pub c_r: f64,
    pub c_k: f64,
    pub c_x: f64,
    pub c_x_tilde: f64,

    // damped model, q-axis
    pub c_q: f64,
    pub c_qpp: f64,
    pub c_q_tilde: f64,
    pub c_qp: f64,
    pub c_qpp_tilde: f64,
    pub n_q: f64,
    pub d_q: f64,
    pub n_qp: f64,
    pub d_q_tilde: f64,

    // damped model, d-axis
    pub c_d: f64,
    pub c_dpp: f64,
    pub c_d_tilde: f64,
    pub c_dp: f64,
    pub c_dpp_tilde: f64,
    pub n_d: f64,
    pub d_d: f64,
    pub d_d_tilde: f64,

    /// Semi-damped damping constant `C̃_q'`.
    pub c_qp_tilde: f64,
    /// Total damping `D̄0 + D̃0`.
    pub d_0: f64,
}

/// Computes every composite constant. Fails if the parameters are invalid or
/// a manifold denominator vanishes.
pub fn derive_constants(p: &MachineParameters) -> Result<DerivedConstants> {
    p.validate().into_result()?;

    let r = p.r_s + p.r_e;
    let xe = p.x_e;
    let (x_q_e, x_d_e, x_k_e) = (p.x_q + xe, p.x_d + xe, p.x_k + xe);
    let (x_qp_e, x_dp_e) = (p.x_qp + xe, p.x_dp + xe);
    let (x_qpp_e, x_dpp_e) = (p.x_qpp + xe, p.x_dpp + xe);

    let den = r * r + x_q_e * x_d_e;
    let c_r = r / den;
    let c_x_tilde = x_q_e / den;
    let c_x = (p.x_d - p.x_q) / (x_q_e * x_d_e);
    let c_k = p.k_u / p.k_f;

    let (tq2, tq1) = (p.tau_qpp, p.tau_qp);
    let n_q = tq1 * tq2 * x_qp_e * x_k_e * (p.x_q - p.x_qp) * (p.x_qp - p.x_qpp) * (p.x_qp - p.x_k);
    let d_q = tq1 * x_q_e * x_qp_e.powi(2) * (p.x_qp - p.x_k).powi(2)
        - tq2 * x_q_e * x_k_e.powi(2) * (p.x_q - p.x_qp) * (p.x_qp - p.x_qpp);
    if d_q == 0.0 {
        return Err(Error::SingularConstant("D_q"));
    }
    let n_qp = tq1 * x_qp_e.powi(3) * (p.x_q - p.x_qp) * (p.x_qp - p.x_k).powi(2);
    let d_q_tilde = x_q_e * d_q;

    let (td2, td1) = (p.tau_dpp, p.tau_dp);
    let n_d = td1 * td2 * x_dp_e * x_k_e * (p.x_d - p.x_dp) * (p.x_dp - p.x_dpp) * (p.x_dp - p.x_k);
    let d_d = td1 * x_d_e * x_dp_e.powi(2) * (p.x_dp - p.x_k).powi(2)
        - td2 * x_d_e * x_k_e.powi(2) * (p.x_d - p.x_dp) * (p.x_dp - p.x_dpp);
    if d_d == 0.0 {
        return Err(Error::SingularConstant("D_d"));
    }
    let d_d_tilde = x_d_e * d_d;

    let c_qpp = tq2 * (p.x_qp - p.x_qpp) / x_qp_e.powi(2);
    let c_q_tilde = (p.x_q - p.x_qp) / d_q_tilde;
    let c_qp = tq1 * x_qp_e * (p.x_qp - p.x_k);
    let c_qpp_tilde = tq2 * x_q_e * x_k_e * (p.x_qp - p.x_qpp) / x_qp_e;
    let c_q = c_qpp + (c_qp + c_qpp_tilde).powi(2) * c_q_tilde;

    let c_dpp = td2 * (p.x_dp - p.x_dpp) / x_dp_e.powi(2);
    let c_d_tilde = (p.x_d - p.x_dp) / d_d_tilde;
    let c_dp = td1 * x_dp_e * (p.x_dp - p.x_k);
    let c_dpp_tilde = td2 * x_d_e * x_k_e * (p.x_dp - p.x_dpp) / x_dp_e;
    // Only Φ_d1 carries a first-order correction on the d-axis, hence the
    // asymmetry with C_q.
    let c_d = c_dpp + (c_dp + c_dpp_tilde) * c_dpp_tilde * c_d_tilde;

    let c_qp_tilde = tq1 * (p.x_q - p.x_qp) / x_q_e.powi(2);

    Ok(DerivedConstants {
        r_s_e: r,
        x_q_e,
        x_d_e,
        x_k_e,
        x_qp_e,
        x_dp_e,
        x_qpp_e,
        x_dpp_e,
        c_r,
        c_k,
        c_x,
        c_x_tilde,
        c_q,
        c_qpp,
        c_q_tilde,
        c_qp,
        c_qpp_tilde,
        n_q,
        d_q,
        n_qp,
        d_q_tilde,
        c_d,
        c_dpp,
        c_d_tilde,
        c_dp,
        c_dpp_tilde,
        n_d,
        d_d,
        d_d_tilde,
        c_qp_tilde,
        d_0: p.d0_bar + p.d0_tilde,
    })
}

impl DerivedConstants {
    /// Internal voltage of the classical model from the transient voltages of
    /// a high-order operating point.
    pub fn classical_e0(e_qp: f64, e_dp: f64) -> f64 {
        e_qp.hypot(e_dp)
    }

    /// Key/value listing, one constant per line.
    pub fn to_document(&self) -> String {
        let rows: [(&str, f64); 31] = [
            ("R_s_e", self.r_s_e),
            ("X_q_e", self.x_q_e),
            ("X_d_e", self.x_d_e),
            ("X_k_e", self.x_k_e),
            ("X_qp_e", self.x_qp_e),
            ("X_dp_e", self.x_dp_e),
            ("X_qpp_e", self.x_qpp_e),
            ("X_dpp_e", self.x_dpp_e),
            ("C_r", self.c_r),
            ("C_k", self.c_k),
            ("C_x", self.c_x),
            ("C_x_tilde", self.c_x_tilde),
            ("C_q", self.c_q),
            ("C_qpp", self.c_qpp),
            ("C_q_tilde", self.c_q_tilde),
            ("C_qp", self.c_qp),
            ("C_qpp_tilde", self.c_qpp_tilde),
            ("N_q", self.n_q),
            ("D_q", self.d_q),
            ("N_qp", self.n_qp),
            ("D_q_tilde", self.d_q_tilde),
            ("C_d", self.c_d),
            ("C_dpp", self.c_dpp),
            ("C_d_tilde", self.c_d_tilde),
            ("C_dp", self.c_dp),
            ("C_dpp_tilde", self.c_dpp_tilde),
            ("N_d", self.n_d),
            ("D_d", self.d_d),
            ("D_d_tilde", self.d_d_tilde),
            ("C_qp_tilde", self.c_qp_tilde),
            ("D_0", self.d_0),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
