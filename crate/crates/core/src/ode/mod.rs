//! Explicit integration of `ẋ = f(x, λ, t), λ̇ = g(x, λ, t)` and simulation
//! checks of invariance claims.

mod builtins;
mod monitor;

pub use builtins::{builtin, cascade_abs, prototype, regulation, BuiltinName};
pub use monitor::{batch_membership_trial, monitor, BatchSummary, MonitorReport, SampleBox, SampleVerdict};

use serde::Serialize;
use thiserror::Error;

use crate::bounds::{FnError, ScalarFn};
use crate::domain::InvarianceDomain;
use crate::exprlang::{parse, Env, EvalError, Expr, ParseError, Scope};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("right-hand side failed at t = {t}: {source}")]
    Rhs { t: f64, source: FnError },
    #[error("invalid model: {0}")]
    Model(String),
    #[error("invalid initial state: {0}")]
    Init(String),
    #[error("invalid step configuration: {0}")]
    Config(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("no point of the domain found in {0} draws")]
    EmptyDomain(usize),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Fn(#[from] FnError),
}

/// One component of the right-hand side.
#[derive(Debug, Clone)]
pub enum Rhs {
    Expr(Expr),
    /// `scale * law(v(x))`, for tuning laws given as functions of `V`.
    Law { law: ScalarFn, v: Expr, scale: f64 },
}

/// State `(x1, .., xn, lambda)` with `λ` last.
#[derive(Debug, Clone)]
pub struct SystemModel {
    pub name: String,
    n_x: usize,
    rhs: Vec<Rhs>,
    v: Expr,
}

struct StateScope<'a> {
    y: &'a [f64],
    t: f64,
}

impl Scope for StateScope<'_> {
    fn lookup(&self, name: &str) -> Option<f64> {
        match name {
            "lambda" => self.y.last().copied(),
            "t" => Some(self.t),
            _ => {
                let i: usize = name.strip_prefix('x')?.parse().ok()?;
                (i >= 1 && i < self.y.len()).then(|| self.y[i - 1])
            }
        }
    }
}

fn check_vars(e: &Expr, n_x: usize, what: &str) -> Result<(), OdeError> {
    for v in e.free_vars() {
        let ok = v == "lambda"
            || v == "t"
            || v
                .strip_prefix('x')
                .and_then(|i| i.parse::<usize>().ok())
                .is_some_and(|i| i >= 1 && i <= n_x);
        if !ok {
            return Err(OdeError::Model(format!("{what} uses unknown variable `{v}`")));
        }
    }
    Ok(())
}

impl SystemModel {
    /// Model from expression strings over `x1..xn`, `lambda` and `t`; names in
    /// `params` are substituted as constants.
    pub fn from_strings(name: &str, x_rhs: &[&str], lambda_rhs: &str, v: &str, params: &Env) -> Result<Self, OdeError> {
        let sub = |text: &str| -> Result<Expr, OdeError> { Ok(parse(text)?.substitute(&|n| params.get(n))) };
        let mut rhs = Vec::with_capacity(x_rhs.len() + 1);
        for t in x_rhs {
            rhs.push(Rhs::Expr(sub(t)?));
        }
        rhs.push(Rhs::Expr(sub(lambda_rhs)?));
        SystemModel::new(name, rhs, sub(v)?)
    }

    pub fn new(name: &str, rhs: Vec<Rhs>, v: Expr) -> Result<Self, OdeError> {
        if rhs.len() < 2 {
            return Err(OdeError::Model("need at least one x component and λ".to_string()));
        }
        let n_x = rhs.len() - 1;
        for (i, r) in rhs.iter().enumerate() {
            let e = match r {
                Rhs::Expr(e) => e,
                Rhs::Law { v, .. } => v,
            };
            check_vars(e, n_x, &format!("component {}", i + 1))?;
        }
        check_vars(&v, n_x, "V")?;
        if v.free_vars().iter().any(|n| n == "lambda" || n == "t") {
            return Err(OdeError::Model("V must depend on x only".to_string()));
        }
        let model = SystemModel {
            name: name.to_string(),
            n_x,
            rhs,
            v,
        };
        let v0 = model.v_of(&vec![0.0; n_x])?;
        if v0.abs() > 1e-12 {
            return Err(OdeError::Model(format!("V(0) = {v0} != 0")));
        }
        Ok(model)
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn dim(&self) -> usize {
        self.n_x + 1
    }

    pub fn v_expr(&self) -> &Expr {
        &self.v
    }

    pub fn v_of(&self, x: &[f64]) -> Result<f64, FnError> {
        let mut y = x.to_vec();
        y.push(0.0);
        Ok(self.v.eval(&StateScope { y: &y, t: 0.0 })?)
    }

    fn v_of_state(&self, y: &[f64]) -> Result<f64, EvalError> {
        self.v.eval(&StateScope { y, t: 0.0 })
    }

    pub fn eval_rhs(&self, t: f64, y: &[f64], out: &mut [f64]) -> Result<(), OdeError> {
        let scope = StateScope { y, t };
        let wrap = |source: FnError| OdeError::Rhs { t, source };
        for (o, r) in out.iter_mut().zip(&self.rhs) {
            *o = match r {
                Rhs::Expr(e) => e.eval(&scope).map_err(|e| wrap(e.into()))?,
                Rhs::Law { law, v, scale } => {
                    let vv = v.eval(&scope).map_err(|e| wrap(e.into()))?;
                    scale * law.eval(vv).map_err(wrap)?
                }
            };
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum Method {
    Rk4 { h: f64 },
    Dopri45 { rtol: f64, atol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepConfig {
    pub method: Method,
    pub t_end: f64,
    pub max_steps: usize,
    pub blowup_norm: f64,
    pub min_step: f64,
}

impl StepConfig {
    pub fn adaptive(t_end: f64) -> Self {
        StepConfig {
            method: Method::Dopri45 { rtol: 1e-9, atol: 1e-12 },
            t_end,
            max_steps: 10_000_000,
            blowup_norm: 1e6,
            min_step: 1e-12,
        }
    }

    pub fn rk4(h: f64, t_end: f64) -> Self {
        StepConfig {
            method: Method::Rk4 { h },
            ..Self::adaptive(t_end)
        }
    }

    pub fn with_tolerances(self, rtol: f64, atol: f64) -> Self {
        StepConfig {
            method: Method::Dopri45 { rtol, atol },
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), OdeError> {
        let ok = match self.method {
            Method::Rk4 { h } => h > 0.0,
            Method::Dopri45 { rtol, atol } => rtol > 0.0 && atol > 0.0,
        };
        if !ok || !(self.t_end > 0.0) || !(self.blowup_norm > 0.0) || !(self.min_step > 0.0) {
            return Err(OdeError::Config(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    /// State norm above `blowup_norm`.
    Blowup,
    /// Step size below `min_step`; a finite-escape suspect like `Blowup`.
    StepCollapse,
    MaxSteps,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Events {
    pub exit_time: Option<f64>,
    pub blowup_time: Option<f64>,
    pub lambda_limit: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub n_x: usize,
    pub t: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub v: Vec<f64>,
    pub psi_v: Option<Vec<f64>>,
    pub in_domain: Option<Vec<bool>>,
    pub events: Events,
    pub stop: StopReason,
    pub steps: usize,
}

/// Membership slack used when checking samples: `1e-6 (1 + |λ|)`.
pub fn tol_inv(lambda: f64) -> f64 {
    1e-6 * (1.0 + lambda.abs())
}

impl Trajectory {
    pub fn lambda(&self) -> impl Iterator<Item = f64> + '_ {
        self.states.iter().map(|s| s[s.len() - 1])
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory has the initial sample")
    }

    /// Fills `psi_v`, `in_domain` and the first exit time.
    pub fn attach_domain(&mut self, dom: &InvarianceDomain) -> Result<(), FnError> {
        let mut psi = Vec::with_capacity(self.t.len());
        let mut inside = Vec::with_capacity(self.t.len());
        let mut exit = None;
        for (i, (s, &v)) in self.states.iter().zip(&self.v).enumerate() {
            let lam = s[s.len() - 1];
            psi.push(dom.boundary.eval(v)?);
            let ok = dom.contains_within(v, lam, tol_inv(lam))?;
            if !ok && exit.is_none() {
                exit = Some(self.t[i]);
            }
            inside.push(ok);
        }
        self.psi_v = Some(psi);
        self.in_domain = Some(inside);
        self.events.exit_time = exit;
        Ok(())
    }

    /// Columns `t, x1..xn, lambda, V, psi_V, in_domain`; the last two are
    /// empty without an attached domain.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 1..=self.n_x {
            out.push_str(&format!(",x{i}"));
        }
        out.push_str(",lambda,V,psi_V,in_domain\n");
        for (i, s) in self.states.iter().enumerate() {
            out.push_str(&self.t[i].to_string());
            for c in s {
                out.push_str(&format!(",{c}"));
            }
            out.push_str(&format!(",{}", self.v[i]));
            match (&self.psi_v, &self.in_domain) {
                (Some(p), Some(d)) => out.push_str(&format!(",{},{}\n", p[i], u8::from(d[i]))),
                _ => out.push_str(",,\n"),
            }
        }
        out
    }
}

fn norm(y: &[f64]) -> f64 {
    y.iter().map(|v| v * v).sum::<f64>().sqrt()
}

struct Recorder<'a> {
    sys: &'a SystemModel,
    traj: Trajectory,
}

impl Recorder<'_> {
    fn push(&mut self, t: f64, y: &[f64]) -> Result<(), OdeError> {
        let v = self
            .sys
            .v_of_state(y)
            .map_err(|e| OdeError::Rhs { t, source: e.into() })?;
        self.traj.t.push(t);
        self.traj.states.push(y.to_vec());
        self.traj.v.push(v);
        Ok(())
    }
}

pub fn integrate(sys: &SystemModel, init: &[f64], cfg: &StepConfig) -> Result<Trajectory, OdeError> {
    cfg.validate()?;
    if init.len() != sys.dim() {
        return Err(OdeError::Init(format!("expected {} components, got {}", sys.dim(), init.len())));
    }
    if init.iter().any(|v| !v.is_finite()) {
        return Err(OdeError::Init(format!("{init:?} is not finite")));
    }
    let mut rec = Recorder {
        sys,
        traj: Trajectory {
            n_x: sys.n_x,
            t: Vec::new(),
            states: Vec::new(),
            v: Vec::new(),
            psi_v: None,
            in_domain: None,
            events: Events::default(),
            stop: StopReason::Completed,
            steps: 0,
        },
    };
    rec.push(0.0, init)?;
    let stop = match cfg.method {
        Method::Rk4 { h } => run_rk4(sys, init, h, cfg, &mut rec)?,
        Method::Dopri45 { rtol, atol } => run_dopri(sys, init, rtol, atol, cfg, &mut rec)?,
    };
    let mut traj = rec.traj;
    traj.stop = stop;
    match stop {
        StopReason::StepCollapse => traj.events.blowup_time = traj.t.last().copied(),
        StopReason::Blowup => {}
        StopReason::Completed => traj.events.lambda_limit = traj.lambda().last(),
        StopReason::MaxSteps => {}
    }
    Ok(traj)
}

fn run_rk4(sys: &SystemModel, init: &[f64], h: f64, cfg: &StepConfig, rec: &mut Recorder) -> Result<StopReason, OdeError> {
    let n = init.len();
    let mut y = init.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let steps = (cfg.t_end / h).round().max(1.0) as usize;
    for i in 0..steps.min(cfg.max_steps) {
        let t = i as f64 * h;
        let hh = if i + 1 == steps { cfg.t_end - t } else { h };
        sys.eval_rhs(t, &y, &mut k1)?;
        for j in 0..n {
            tmp[j] = y[j] + 0.5 * hh * k1[j];
        }
        sys.eval_rhs(t + 0.5 * hh, &tmp, &mut k2)?;
        for j in 0..n {
            tmp[j] = y[j] + 0.5 * hh * k2[j];
        }
        sys.eval_rhs(t + 0.5 * hh, &tmp, &mut k3)?;
        for j in 0..n {
            tmp[j] = y[j] + hh * k3[j];
        }
        sys.eval_rhs(t + hh, &tmp, &mut k4)?;
        for j in 0..n {
            y[j] += hh / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        let t_new = if i + 1 == steps { cfg.t_end } else { (i + 1) as f64 * h };
        rec.traj.steps += 1;
        if !(norm(&y) <= cfg.blowup_norm) {
            rec.traj.events.blowup_time = Some(t_new);
            return Ok(StopReason::Blowup);
        }
        rec.push(t_new, &y)?;
    }
    Ok(if steps > cfg.max_steps { StopReason::MaxSteps } else { StopReason::Completed })
}

// Dormand–Prince 5(4) tableau
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// difference between the 5th and embedded 4th order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const SAFETY: f64 = 0.9;
const MAX_GROWTH: f64 = 5.0;
const MIN_SHRINK: f64 = 0.2;

fn run_dopri(
    sys: &SystemModel,
    init: &[f64],
    rtol: f64,
    atol: f64,
    cfg: &StepConfig,
    rec: &mut Recorder,
) -> Result<StopReason, OdeError> {
    let n = init.len();
    let mut y = init.to_vec();
    let mut t = 0.0;
    let mut k = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    sys.eval_rhs(t, &y, &mut k[0])?;

    let scale = |y: &[f64]| -> Vec<f64> { y.iter().map(|v| atol + rtol * v.abs()).collect() };
    let sc = scale(&y);
    let d0 = y.iter().zip(&sc).map(|(v, s)| (v / s).abs()).fold(0.0, f64::max);
    let d1 = k[0].iter().zip(&sc).map(|(v, s)| (v / s).abs()).fold(0.0, f64::max);
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(cfg.t_end);

    let mut steps = 0;
    while t < cfg.t_end {
        if steps >= cfg.max_steps {
            return Ok(StopReason::MaxSteps);
        }
        let last = t + h >= cfg.t_end;
        if last {
            h = cfg.t_end - t;
        } else if h < cfg.min_step {
            return Ok(StopReason::StepCollapse);
        }
        for s in 1..7 {
            let (head, tail) = k.split_at_mut(s);
            for j in 0..n {
                let mut acc = y[j];
                for (m, a) in A[s].iter().enumerate().take(s) {
                    acc += h * a * head[m][j];
                }
                tmp[j] = acc;
            }
            sys.eval_rhs(t + C[s] * h, &tmp, &mut tail[0])?;
            if s == 6 {
                y_new.copy_from_slice(&tmp);
            }
        }
        let mut err = 0.0_f64;
        for j in 0..n {
            let e: f64 = (0..7).map(|m| E[m] * k[m][j]).sum::<f64>() * h;
            let s = atol + rtol * y[j].abs().max(y_new[j].abs());
            err = err.max((e / s).abs());
        }
        if !err.is_finite() {
            err = f64::INFINITY;
        }
        steps += 1;
        if err <= 1.0 {
            t = if last { cfg.t_end } else { t + h };
            y.copy_from_slice(&y_new);
            k.swap(0, 6);
            rec.traj.steps += 1;
            if !(norm(&y) <= cfg.blowup_norm) {
                rec.traj.events.blowup_time = Some(t);
                return Ok(StopReason::Blowup);
            }
            rec.push(t, &y)?;
        }
        let factor = if err == 0.0 {
            MAX_GROWTH
        } else {
            (SAFETY * err.powf(-0.2)).clamp(MIN_SHRINK, MAX_GROWTH)
        };
        h *= factor;
    }
    Ok(StopReason::Completed)
}
