//! Fixed-step integration, Newton solves, finite-difference Jacobians and
//! eigenvalues.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rk4,
    /// Implicit trapezoidal rule with a modified Newton iteration.
    Trapezoidal,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rk4" | "rk4-fixed" => Ok(Method::Rk4),
            "trapezoidal" | "implicit-trapezoidal" | "trap" => Ok(Method::Trapezoidal),
            other => Err(Error::Invalid(format!("unknown integration method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub method: Method,
    pub dt: f64,
    pub newton_tol: f64,
    pub newton_max: usize,
    /// Record one sample every this many steps.
    pub record_every: usize,
}

impl IntegratorConfig {
    pub fn rk4(dt: f64) -> Self {
        Self {
            method: Method::Rk4,
            dt,
            newton_tol: 1e-10,
            newton_max: 8,
            record_every: 1,
        }
    }

    pub fn trapezoidal(dt: f64) -> Self {
        Self {
            method: Method::Trapezoidal,
            ..Self::rk4(dt)
        }
    }

    pub fn recording_every(mut self, n: usize) -> Self {
        self.record_every = n.max(1);
        self
    }

    fn check(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.newton_tol > 0.0) {
            return Err(Error::Invalid("newton_tol must be positive".into()));
        }
        Ok(())
    }
}

/// A first-order system `ẏ = f(t, y)` whose parameters may jump at events.
pub trait OdeSystem {
    type Event;

    fn dim(&self) -> usize;

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;

    /// Applies a scheduled change. The state is passed for systems that keep
    /// algebraic variables in it; differential states must be left alone.
    fn apply_event(&mut self, _event: &Self::Event, _y: &mut [f64]) -> Result<()> {
        Ok(())
    }

    /// Called after every accepted step.
    fn after_step(&mut self, _t: f64, _y: &mut [f64]) -> Result<()> {
        Ok(())
    }
}

/// Wraps a closure as an event-free system.
pub struct FnSystem<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> OdeSystem for FnSystem<F>
where
    F: Fn(f64, &[f64], &mut [f64]) -> Result<()>,
{
    type Event = ();

    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        (self.f)(t, y, dy)
    }
}

/// Raw states at the recorded times.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
}

/// Integrates over `t_span`, applying `events` (sorted by time) between steps
/// exactly at their times. `observe` sees the initial state, every
/// `record_every`-th grid step and the final state. Returns the final state.
pub fn integrate<S, O>(
    sys: &mut S,
    y0: &[f64],
    t_span: (f64, f64),
    cfg: &IntegratorConfig,
    events: &[(f64, S::Event)],
    mut observe: O,
) -> Result<Vec<f64>>
where
    S: OdeSystem,
    O: FnMut(f64, &[f64], &S) -> Result<()>,
{
    cfg.check()?;
    let n = sys.dim();
    if y0.len() != n {
        return Err(Error::Contract(format!("initial state has {} entries, system has {n}", y0.len())));
    }
    if events.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(Error::Contract("events must be sorted by time".into()));
    }
    if !y0.iter().all(|v| v.is_finite()) {
        return Err(Error::Domain("initial state".into()));
    }
    let (t0, t1) = t_span;
    let eps = 1e-9 * cfg.dt;
    let mut y = y0.to_vec();
    let mut next_event = 0;
    while next_event < events.len() && events[next_event].0 <= t0 + eps {
        sys.apply_event(&events[next_event].1, &mut y)?;
        next_event += 1;
    }
    observe(t0, &y, sys)?;

    let mut t = t0;
    let mut k: u64 = 0;
    let mut stepper = Stepper::new(n);
    let mut last_recorded = true;
    while t < t1 - eps {
        let grid = t0 + (k + 1) as f64 * cfg.dt;
        let event_t = events.get(next_event).map(|e| e.0).unwrap_or(f64::INFINITY);
        let mut target = grid.min(t1);
        if event_t < target - eps {
            target = event_t;
        }
        let h = target - t;
        match cfg.method {
            Method::Rk4 => stepper.rk4(sys, t, &mut y, h)?,
            Method::Trapezoidal => stepper.trapezoidal(sys, t, &mut y, h, cfg)?,
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence { t: target, last_good: t });
        }
        let on_grid = (target - grid).abs() <= eps;
        if on_grid {
            k += 1;
        }
        t = if on_grid { grid } else { target };
        stepper.stepped.copy_from_slice(&y);
        sys.after_step(t, &mut y)?;
        let mut changed = false;
        while next_event < events.len() && events[next_event].0 <= t + eps {
            sys.apply_event(&events[next_event].1, &mut y)?;
            next_event += 1;
            changed = true;
        }
        if changed {
            stepper.invalidate();
        }
        stepper.forget_overwritten(&y);
        last_recorded = false;
        if on_grid && k % cfg.record_every as u64 == 0 {
            observe(t, &y, sys)?;
            last_recorded = true;
        }
    }
    if !last_recorded {
        observe(t, &y, sys)?;
    }
    Ok(y)
}

/// Integrates and keeps every recorded raw state.
pub fn integrate_recorded<S: OdeSystem>(
    sys: &mut S,
    y0: &[f64],
    t_span: (f64, f64),
    cfg: &IntegratorConfig,
    events: &[(f64, S::Event)],
) -> Result<Trajectory> {
    let mut traj = Trajectory::default();
    integrate(sys, y0, t_span, cfg, events, |t, y, _| {
        traj.t.push(t);
        traj.y.push(y.to_vec());
        Ok(())
    })?;
    Ok(traj)
}

struct Stepper {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
    // Low-order bits lost when adding a step increment to the state.
    carry: Vec<f64>,
    stepped: Vec<f64>,
    jac: Option<DMatrix<f64>>,
    lu: Option<(f64, nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>)>,
}

impl Stepper {
    fn new(n: usize) -> Self {
        Self {
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            tmp: vec![0.0; n],
            carry: vec![0.0; n],
            stepped: vec![0.0; n],
            jac: None,
            lu: None,
        }
    }

    fn forget_overwritten(&mut self, y: &[f64]) {
        for ((c, a), b) in self.carry.iter_mut().zip(&self.stepped).zip(y) {
            if a != b {
                *c = 0.0;
            }
        }
    }

    fn invalidate(&mut self) {
        self.jac = None;
        self.lu = None;
    }

    fn rk4<S: OdeSystem>(&mut self, sys: &S, t: f64, y: &mut [f64], h: f64) -> Result<()> {
        let n = y.len();
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        sys.rhs(t, y, k1)?;
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        sys.rhs(t + 0.5 * h, tmp, k2)?;
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        sys.rhs(t + 0.5 * h, tmp, k3)?;
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        sys.rhs(t + h, tmp, k4)?;
        for i in 0..n {
            let inc = h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) + self.carry[i];
            let next = y[i] + inc;
            self.carry[i] = inc - (next - y[i]);
            y[i] = next;
        }
        Ok(())
    }

    fn trapezoidal<S: OdeSystem>(
        &mut self,
        sys: &S,
        t: f64,
        y: &mut [f64],
        h: f64,
        cfg: &IntegratorConfig,
    ) -> Result<()> {
        let n = y.len();
        let mut f0 = vec![0.0; n];
        sys.rhs(t, y, &mut f0)?;
        let mut fresh = false;
        loop {
            if self.jac.is_none() {
                let j = finite_difference_jacobian(|x, out| sys.rhs(t + h, x, out), y, None)?;
                self.jac = Some(j);
                self.lu = None;
                fresh = true;
            }
            if self.lu.as_ref().map_or(true, |(hl, _)| *hl != h) {
                let j = self.jac.as_ref().expect("jacobian present");
                let m = DMatrix::identity(n, n) - j * (0.5 * h);
                self.lu = Some((h, m.lu()));
            }
            match self.newton(sys, t, y, &f0, h, cfg)? {
                Some(z) => {
                    y.copy_from_slice(&z);
                    return Ok(());
                }
                None if fresh => {
                    let mut g = vec![0.0; n];
                    sys.rhs(t + h, y, &mut g)?;
                    let residual = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                    return Err(Error::StepFailure { t: t + h, residual });
                }
                None => self.invalidate(),
            }
        }
    }

    // Modified Newton on z − y − h/2 (f(y) + f(z)) = 0. None when the
    // iteration stalls with the current Jacobian.
    fn newton<S: OdeSystem>(
        &mut self,
        sys: &S,
        t: f64,
        y: &[f64],
        f0: &[f64],
        h: f64,
        cfg: &IntegratorConfig,
    ) -> Result<Option<Vec<f64>>> {
        let n = y.len();
        let lu = &self.lu.as_ref().expect("factorization present").1;
        let mut z: Vec<f64> = (0..n).map(|i| y[i] + h * f0[i]).collect();
        let mut fz = vec![0.0; n];
        let mut last = f64::INFINITY;
        for _ in 0..cfg.newton_max {
            if sys.rhs(t + h, &z, &mut fz).is_err() {
                return Ok(None);
            }
            let g = DVector::from_iterator(n, (0..n).map(|i| z[i] - y[i] - 0.5 * h * (f0[i] + fz[i])));
            let dz = match lu.solve(&g) {
                Some(d) => d,
                None => return Ok(None),
            };
            let scale = z.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            let size = dz.amax();
            for i in 0..n {
                z[i] -= dz[i];
            }
            if !size.is_finite() || size > 0.9 * last && last < f64::INFINITY && size > cfg.newton_tol * scale {
                return Ok(None);
            }
            if size <= cfg.newton_tol * scale {
                return Ok(Some(z));
            }
            last = size;
        }
        Ok(None)
    }
}

/// Central-difference Jacobian. The default perturbation of component `i` is
/// `1e-7·max(1, |x_i|)`.
pub fn finite_difference_jacobian<F>(mut f: F, x: &[f64], h: Option<f64>) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let n = x.len();
    let mut base = vec![0.0; n];
    f(x, &mut base)?;
    let m = base.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    let (mut fp, mut fm) = (vec![0.0; m], vec![0.0; m]);
    for j in 0..n {
        let hj = h.unwrap_or(1e-7 * x[j].abs().max(1.0));
        xp[j] = x[j] + hj;
        f(&xp, &mut fp)?;
        xp[j] = x[j] - hj;
        f(&xp, &mut fm)?;
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * hj);
        }
    }
    Ok(jac)
}

/// Eigenvalues of a square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    m.clone().complex_eigenvalues().iter().copied().collect()
}

/// Outcome of a root solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Root {
    pub x: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Damped Newton with a finite-difference Jacobian. Stops when the residual
/// infinity norm is below `tol` and can no longer be reduced.
pub fn newton<F>(mut f: F, x0: &[f64], tol: f64, max_iter: usize) -> Result<Root>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = vec![0.0; n];
    f(&x, &mut r)?;
    let mut norm = max_abs(&r);
    let mut trial = vec![0.0; n];
    let mut rt = vec![0.0; n];
    for it in 0..max_iter {
        if norm < tol * 1e-3 {
            return Ok(Root { x, residual: norm, iterations: it });
        }
        let jac = finite_difference_jacobian(&mut f, &x, None)?;
        let Some(step) = jac.lu().solve(&DVector::from_column_slice(&r)) else {
            break;
        };
        let mut lambda = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            for i in 0..n {
                trial[i] = x[i] - lambda * step[i];
            }
            if f(&trial, &mut rt).is_ok() {
                let nt = max_abs(&rt);
                if nt.is_finite() && nt < norm {
                    x.copy_from_slice(&trial);
                    r.copy_from_slice(&rt);
                    norm = nt;
                    improved = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !improved {
            if norm < tol {
                return Ok(Root { x, residual: norm, iterations: it });
            }
            break;
        }
    }
    if norm < tol {
        Ok(Root { x, residual: norm, iterations: max_iter })
    } else {
        Err(Error::Convergence {
            what: "Newton solve",
            iterations: max_iter,
            residual: norm,
        })
    }
}

/// Root of `residual` near `guess`: Newton first, then pseudo-transient
/// continuation from the guess when Newton stalls.
pub fn find_equilibrium<F>(mut residual: F, guess: &[f64], tol: f64) -> Result<Root>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let mut best = f64::INFINITY;
    match newton(&mut residual, guess, tol, 60) {
        Ok(root) => return Ok(root),
        Err(Error::Convergence { residual, .. }) => best = best.min(residual),
        Err(e) if e.is_numerical() => {}
        Err(e) => return Err(e),
    }

    // Pseudo-transient continuation: (I/τ + J) Δ = −r with growing τ.
    let n = guess.len();
    let mut x = guess.to_vec();
    let mut r = vec![0.0; n];
    residual(&x, &mut r)?;
    let mut norm = max_abs(&r);
    let mut tau = 1e-3;
    for _ in 0..400 {
        if norm < tol {
            return newton(&mut residual, &x, tol, 20).or(Ok(Root { x, residual: norm, iterations: 0 }));
        }
        let jac = finite_difference_jacobian(&mut residual, &x, None)?;
        let m = DMatrix::identity(n, n) / tau - jac;
        let Some(step) = m.lu().solve(&DVector::from_column_slice(&r)) else {
            break;
        };
        let trial: Vec<f64> = (0..n).map(|i| x[i] + step[i]).collect();
        let mut rt = vec![0.0; n];
        if residual(&trial, &mut rt).is_ok() && max_abs(&rt).is_finite() {
            let nt = max_abs(&rt);
            tau *= if nt < norm { 2.0 } else { 0.5 };
            x = trial;
            r = rt;
            norm = nt;
        } else {
            tau *= 0.25;
        }
        best = best.min(norm);
    }
    Err(Error::EquilibriumNotFound { residual: best })
}
