use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::ModelKind;
use crate::network::LoadDemand;
use crate::params::{key_values, parse_number};
use crate::solver::{IntegratorConfig, Method};

/// A load step, optionally followed by retuning the exciter reference so the
/// bus settles at `target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioEvent {
    pub t: f64,
    pub load: LoadDemand,
    pub target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub duration: f64,
    pub initial_load: LoadDemand,
    /// Bus voltage magnitude of the initial equilibrium.
    pub initial_target: f64,
    pub events: Vec<ScenarioEvent>,
    pub models: Vec<ModelKind>,
    pub high_order: IntegratorConfig,
    pub reduced: IntegratorConfig,
    /// Spacing of recorded samples [s].
    pub sample_interval: f64,
}

const SAMPLE_INTERVAL: f64 = 0.01;

fn record_every(dt: f64, interval: f64) -> usize {
    ((interval / dt).round() as usize).max(1)
}

impl Scenario {
    fn stepped(name: &str, duration: f64, steps: &[(f64, f64)]) -> Self {
        let mut s = Self {
            name: name.into(),
            duration,
            initial_load: LoadDemand::new(0.05, 0.0),
            initial_target: 1.0,
            events: steps
                .iter()
                .map(|&(t, p)| ScenarioEvent {
                    t,
                    load: LoadDemand::new(p, 0.0),
                    target: Some(1.0),
                })
                .collect(),
            models: vec![
                ModelKind::HighOrder,
                ModelKind::Classical,
                ModelKind::Elemental,
                ModelKind::Damped,
                ModelKind::SemiDamped,
            ],
            high_order: IntegratorConfig::rk4(1e-4),
            reduced: IntegratorConfig::rk4(1e-3),
            sample_interval: SAMPLE_INTERVAL,
        };
        s.sync_recording();
        s
    }

    /// Load step from 0.05 to 0.25 pu at 30 s, bus held at 1 pu.
    pub fn case1() -> Self {
        Self::stepped("case1", 90.0, &[(30.0, 0.25)])
    }

    /// Four load steps over 6000 s.
    pub fn case2() -> Self {
        Self::stepped(
            "case2",
            6000.0,
            &[(30.0, 0.25), (1530.0, 0.35), (3030.0, 0.3), (4530.0, 0.15)],
        )
    }

    /// The load levels of [`Scenario::case2`] on a 270 s schedule.
    pub fn case2_compressed() -> Self {
        Self::stepped(
            "case2-compressed",
            270.0,
            &[(30.0, 0.25), (90.0, 0.35), (150.0, 0.3), (210.0, 0.15)],
        )
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "case1" => Some(Self::case1()),
            "case2" => Some(Self::case2()),
            "case2-compressed" | "case2_compressed" => Some(Self::case2_compressed()),
            _ => None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        std::fs::read_to_string(path)?.parse()
    }

    /// Sets both step sizes, keeping the sample spacing.
    pub fn with_dt(mut self, dt: f64) -> Self {
        self.high_order.dt = dt;
        self.reduced.dt = dt;
        self.sync_recording();
        self
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.high_order.method = method;
        self.reduced.method = method;
        self
    }

    pub fn with_duration(mut self, duration: f64) -> Self {
        self.duration = duration;
        self.events.retain(|e| e.t < duration);
        self
    }

    fn sync_recording(&mut self) {
        self.high_order.record_every = record_every(self.high_order.dt, self.sample_interval);
        self.reduced.record_every = record_every(self.reduced.dt, self.sample_interval);
    }

    pub fn config_for(&self, kind: ModelKind) -> IntegratorConfig {
        match kind {
            ModelKind::HighOrder => self.high_order,
            _ => self.reduced,
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::Invalid(format!("duration must be positive, got {}", self.duration)));
        }
        let mut last = 0.0;
        for (i, e) in self.events.iter().enumerate() {
            if !(e.t > last || (i == 0 && e.t >= 0.0)) || e.t > self.duration {
                return Err(Error::Invalid(format!(
                    "event times must be strictly increasing within [0, {}], got {}",
                    self.duration, e.t
                )));
            }
            if !e.load.p.is_finite() || !e.load.q.is_finite() {
                return Err(Error::Invalid(format!("event at {} s has a non-finite load", e.t)));
            }
            last = e.t;
        }
        if self.models.is_empty() {
            return Err(Error::Invalid("no models selected".into()));
        }
        Ok(())
    }
}

/// Key/value document:
///
/// ```text
/// name = my-case
/// duration = 90
/// initial_P_L = 0.05
/// initial_Q_L = 0
/// initial_target = 1.0
/// event = 30, 0.25, 0, 1.0      # t, P_L, Q_L, target (or `none`)
/// models = high-order, elemental
/// dt = 1e-3                     # optional, overrides both step sizes
/// dt_high_order = 1e-4
/// method = rk4
/// sample_interval = 0.01
/// ```
impl FromStr for Scenario {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut s = Scenario::stepped("custom", 0.0, &[]);
        let mut duration = None;
        let mut dt_ho = None;
        let mut dt_red = None;
        for kv in key_values(text) {
            let (line, key, value) = kv?;
            let num = |v: &str| parse_number(line, key, v);
            match key {
                "name" => s.name = value.to_string(),
                "duration" => duration = Some(num(value)?),
                "initial_P_L" => s.initial_load.p = num(value)?,
                "initial_Q_L" => s.initial_load.q = num(value)?,
                "initial_target" => s.initial_target = num(value)?,
                "sample_interval" => s.sample_interval = num(value)?,
                "dt" => {
                    let dt = num(value)?;
                    dt_ho = Some(dt);
                    dt_red = Some(dt);
                }
                "dt_high_order" => dt_ho = Some(num(value)?),
                "dt_reduced" => dt_red = Some(num(value)?),
                "method" => {
                    let m: Method = value.parse().map_err(|_| Error::Parse {
                        line,
                        message: format!("unknown method `{value}`"),
                    })?;
                    s = s.with_method(m);
                }
                "models" => {
                    s.models = value
                        .split(',')
                        .map(|m| {
                            m.parse::<ModelKind>().map_err(|e| Error::Parse {
                                line,
                                message: e.to_string(),
                            })
                        })
                        .collect::<Result<_>>()?;
                }
                "event" => {
                    let fields: Vec<&str> = value.split(',').map(str::trim).collect();
                    if fields.len() != 4 {
                        return Err(Error::Parse {
                            line,
                            message: format!("event needs `t, P_L, Q_L, target`, found `{value}`"),
                        });
                    }
                    let target = match fields[3] {
                        "none" | "-" => None,
                        v => Some(num(v)?),
                    };
                    s.events.push(ScenarioEvent {
                        t: num(fields[0])?,
                        load: LoadDemand::new(num(fields[1])?, num(fields[2])?),
                        target,
                    });
                }
                other => {
                    return Err(Error::Parse {
                        line,
                        message: format!("unknown key `{other}`"),
                    })
                }
            }
        }
        s.duration = duration.ok_or_else(|| Error::MissingField("duration".into()))?;
        if let Some(dt) = dt_ho {
            s.high_order.dt = dt;
        }
        if let Some(dt) = dt_red {
            s.reduced.dt = dt;
        }
        if !(s.sample_interval > 0.0) {
            return Err(Error::Invalid("sample_interval must be positive".into()));
        }
        s.sync_recording();
        s.check()?;
        Ok(s)
    }
}
