//! Certificate margins over `[0, a]`.
//!
//! Each check samples a margin function on a uniform grid, refines once
//! around the worst node and compares the worst value against a slack:
//!
//! * `lemma1`: `G(V) = ψ'(V)[α(V) + β(V)φ(ψ(V))] + δ(α̲⁻¹(V)) + ξ(ψ(V)) <= 0`,
//!   which makes `ψ(a) >= λ >= ψ(V(x))` forward invariant.
//! * `lemma2`: `G₂(V) = ψ(V)[α + βφ(ψ)] + V[δ(α̲⁻¹(V)) + ξ(ψ)] <= 0`, valid when
//!   the epigraph of `ψ` is star-shaped with respect to the origin.
//! * `escape`: `ψ'(V)[α + βφ(ψ - ε)] + δ(α̲⁻¹(V)) + ξ(ψ - ε) >= 0`, which keeps
//!   `λ <= ψ(V(x)) - ε` invariant.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bounds::{inverse_growing, BoundSet, FnError, InverseError, ScalarFn};
use crate::envelope::{is_star_shaped, EnvelopeError, StarWitness};
use crate::exprlang::Env;
use crate::grid::{uniform_nodes, GridFunction};

pub const DEFAULT_CHECK_GRID: usize = 1024;
pub const DEFAULT_STAR_GRID: usize = 256;
const REFINE_FACTOR: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertError {
    #[error("invalid problem: {0}")]
    Problem(String),
    #[error("boundary candidate: {0}")]
    Boundary(String),
    #[error("epigraph of ψ is not star-shaped: ψ({gamma}·{v}) exceeds {gamma}·ψ({v}) by {excess:e}", v = .0.v, gamma = .0.gamma, excess = .0.excess)]
    NotStarShaped(StarWitness),
    #[error(transparent)]
    Inverse(#[from] InverseError),
    #[error(transparent)]
    Fn(#[from] FnError),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum BoundaryFamily {
    /// `ψ(V) = p V`.
    Linear { p: f64 },
    /// `ψ(V) = r √V`.
    Sqrt { r: f64 },
    Expression,
    /// Sampled, e.g. a synthesized envelope.
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeSource {
    Symbolic,
    FiniteDifference,
}

#[derive(Debug, Clone)]
pub struct BoundaryCandidate {
    psi: ScalarFn,
    family: BoundaryFamily,
}

impl BoundaryCandidate {
    pub fn linear(p: f64) -> Result<Self, CertError> {
        if !(p > 0.0 && p.is_finite()) {
            return Err(CertError::Boundary(format!("linear slope p = {p} must be positive")));
        }
        let psi = ScalarFn::parse_with("p*V", "V", &Env::new().with("p", p))?;
        Ok(BoundaryCandidate {
            psi,
            family: BoundaryFamily::Linear { p },
        })
    }

    pub fn sqrt(r: f64) -> Result<Self, CertError> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(CertError::Boundary(format!("sqrt coefficient r = {r} must be positive")));
        }
        let psi = ScalarFn::parse_with("r*sqrt(V)", "V", &Env::new().with("r", r))?;
        Ok(BoundaryCandidate {
            psi,
            family: BoundaryFamily::Sqrt { r },
        })
    }

    pub fn expression(psi: ScalarFn) -> Self {
        let family = if psi.is_tabulated() {
            BoundaryFamily::Table
        } else {
            BoundaryFamily::Expression
        };
        BoundaryCandidate { psi, family }
    }

    pub fn table(grid: GridFunction) -> Self {
        BoundaryCandidate {
            psi: ScalarFn::tabulated(grid, true),
            family: BoundaryFamily::Table,
        }
    }

    pub fn psi(&self) -> &ScalarFn {
        &self.psi
    }

    pub fn family(&self) -> BoundaryFamily {
        self.family
    }

    pub fn dpsi_source(&self) -> DerivativeSource {
        if self.psi.symbolic_derivative().is_some() {
            DerivativeSource::Symbolic
        } else {
            DerivativeSource::FiniteDifference
        }
    }

    pub fn eval(&self, v: f64) -> Result<f64, FnError> {
        self.psi.eval(v)
    }

    pub fn derivative(&self, v: f64) -> Result<f64, FnError> {
        self.psi.derivative(v)
    }
}

#[derive(Debug, Clone)]
pub struct CertificateProblem {
    pub bounds: BoundSet,
    pub boundary: BoundaryCandidate,
    pub a: f64,
    /// Escape offset; zero for the boundedness checks.
    pub epsilon: f64,
}

impl CertificateProblem {
    pub fn new(bounds: BoundSet, boundary: BoundaryCandidate, a: f64, epsilon: f64) -> Self {
        CertificateProblem {
            bounds,
            boundary,
            a,
            epsilon,
        }
    }

    pub fn with_a(&self, a: f64) -> Self {
        CertificateProblem { a, ..self.clone() }
    }

    fn validate(&self, kind: MarginKind) -> Result<(), CertError> {
        if !(self.a >= 0.0 && self.a.is_finite()) {
            return Err(CertError::Problem(format!("a = {} must be nonnegative", self.a)));
        }
        if self.a > self.bounds.v_max {
            return Err(CertError::Problem(format!("a = {} exceeds v_max = {}", self.a, self.bounds.v_max)));
        }
        match kind {
            MarginKind::Escape if !(self.epsilon > 0.0) => {
                Err(CertError::Problem(format!("escape check needs ε > 0, got {}", self.epsilon)))
            }
            MarginKind::Lemma1 | MarginKind::Lemma2 if self.epsilon != 0.0 => {
                Err(CertError::Problem(format!("boundedness check needs ε = 0, got {}", self.epsilon)))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginKind {
    Lemma1,
    Lemma2,
    Escape,
}

impl MarginKind {
    pub fn name(self) -> &'static str {
        match self {
            MarginKind::Lemma1 => "lemma1",
            MarginKind::Lemma2 => "lemma2",
            MarginKind::Escape => "escape",
        }
    }
}

/// How `φ` and `ξ` see the shifted argument `ψ(V) - ε` in the escape check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EscapeArgs {
    /// Pass `ψ(V) - ε` through unchanged, negative values included.
    #[default]
    Signed,
    /// Use `max(ψ(V) - ε, 0)`.
    Clamp,
}

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    pub grid_n: usize,
    pub slack: f64,
    /// Lipschitz constant of the margin function; enables rigorous mode.
    pub lipschitz: Option<f64>,
    pub escape_args: EscapeArgs,
    /// Grid size of the star-shapedness precondition of `lemma2`.
    pub star_grid: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            grid_n: DEFAULT_CHECK_GRID,
            slack: 0.0,
            lipschitz: None,
            escape_args: EscapeArgs::Signed,
            star_grid: DEFAULT_STAR_GRID,
        }
    }
}

impl CheckOptions {
    pub fn with_grid(self, grid_n: usize) -> Self {
        CheckOptions { grid_n, ..self }
    }

    pub fn with_slack(self, slack: f64) -> Self {
        CheckOptions { slack, ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateVerdict {
    pub kind: MarginKind,
    pub a: f64,
    /// Worst margin value; for `escape` this is the largest `-E(V)`.
    pub margin_max: f64,
    pub argmax_v: f64,
    /// Margin at `V = 0` in the same sign convention as `margin_max`.
    pub value_at_zero: f64,
    pub grid_n: usize,
    pub slack: f64,
    pub pass: bool,
    pub rigorous: bool,
    pub notes: Vec<String>,
}

struct Evaluator<'a> {
    prob: &'a CertificateProblem,
    kind: MarginKind,
    escape_args: EscapeArgs,
}

impl Evaluator<'_> {
    /// Margin in "must be <= 0" orientation.
    fn at(&self, v: f64) -> Result<f64, CertError> {
        let b = &self.prob.bounds;
        let s = &b.stable;
        let u = &b.unstable;
        let psi = self.prob.boundary.eval(v)?;
        let arg = match self.kind {
            MarginKind::Escape => {
                let shifted = psi - self.prob.epsilon;
                match self.escape_args {
                    EscapeArgs::Signed => shifted,
                    EscapeArgs::Clamp => shifted.max(0.0),
                }
            }
            _ => psi,
        };
        let drift = s.alpha.eval(v)? + s.beta.eval(v)? * s.phi.eval(arg)?;
        let norm = inverse_growing(&s.alpha_lower, v, b.v_max)?;
        let coupling = u.delta.eval(norm)? + u.xi.eval(arg)?;
        Ok(match self.kind {
            MarginKind::Lemma1 => self.prob.boundary.derivative(v)? * drift + coupling,
            MarginKind::Lemma2 => psi * drift + v * coupling,
            MarginKind::Escape => -(self.prob.boundary.derivative(v)? * drift + coupling),
        })
    }

    /// The margin at the origin, falling back to a tiny positive `V` when
    /// `ψ'` is singular there.
    fn at_zero(&self, notes: &mut Vec<String>) -> Result<f64, CertError> {
        match self.at(0.0) {
            Ok(g) if g.is_finite() => Ok(g),
            first => {
                let v0 = f64::MIN_POSITIVE.sqrt();
                let g = self.at(v0)?;
                let why = match first {
                    Ok(g) => format!("value {g}"),
                    Err(e) => e.to_string(),
                };
                notes.push(format!("margin at V = 0 not evaluable ({why}); used V = {v0:e}"));
                Ok(g)
            }
        }
    }
}

fn worst(values: &[(f64, f64)]) -> (f64, f64) {
    // ties toward smaller V: strict comparison in index order
    let mut best = values[0];
    for &(v, g) in &values[1..] {
        if g > best.1 || (best.1.is_nan() && !g.is_nan()) {
            best = (v, g);
        }
    }
    best
}

fn check_monotone_boundary(prob: &CertificateProblem, nodes: &[f64]) -> Result<(), CertError> {
    let psi0 = prob.boundary.eval(0.0)?;
    if psi0.abs() > 1e-12 {
        return Err(CertError::Boundary(format!("ψ(0) = {psi0} != 0")));
    }
    let vals = nodes
        .par_iter()
        .map(|&v| prob.boundary.eval(v))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(i) = vals.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(CertError::Boundary(format!("ψ not strictly increasing near V = {}", nodes[i + 1])));
    }
    Ok(())
}

fn run_check(prob: &CertificateProblem, kind: MarginKind, opts: &CheckOptions) -> Result<CertificateVerdict, CertError> {
    prob.validate(kind)?;
    let mut notes = Vec::new();
    let eval = Evaluator {
        prob,
        kind,
        escape_args: opts.escape_args,
    };
    let grid_n = opts.grid_n.max(2);

    if prob.a == 0.0 {
        let g0 = eval.at_zero(&mut notes)?;
        notes.push("a = 0: only V = 0 checked".to_string());
        return Ok(finish(kind, prob.a, (0.0, g0), g0, grid_n, 0.0, opts, notes));
    }

    let nodes: Vec<f64> = uniform_nodes(0.0, prob.a, grid_n).collect();
    match kind {
        MarginKind::Lemma1 | MarginKind::Escape => check_monotone_boundary(prob, &nodes)?,
        MarginKind::Lemma2 => {
            let star = is_star_shaped(prob.boundary.psi(), prob.a, opts.star_grid)?;
            if let Some(w) = star.witness {
                return Err(CertError::NotStarShaped(w));
            }
        }
    }
    if kind == MarginKind::Escape {
        notes.push("escape margin stored as max of -E(V); pass iff every E(V) >= -slack".to_string());
        if opts.escape_args == EscapeArgs::Clamp {
            notes.push("φ and ξ evaluated at max(ψ(V) - ε, 0)".to_string());
        } else {
            notes.push("φ and ξ evaluated at the signed argument ψ(V) - ε".to_string());
        }
    }

    let g0 = eval.at_zero(&mut notes)?;
    let mut samples = Vec::with_capacity(nodes.len());
    samples.push((0.0, g0));
    let rest = nodes[1..]
        .par_iter()
        .map(|&v| eval.at(v).map(|g| (v, g)))
        .collect::<Result<Vec<_>, _>>()?;
    samples.extend(rest);
    let (v_star, g_star) = worst(&samples);

    // one refinement pass at 4x density on the cells next to the worst node
    let h = prob.a / grid_n as f64;
    let fine_h = h / REFINE_FACTOR as f64;
    let lo = (v_star - h).max(0.0);
    let hi = (v_star + h).min(prob.a);
    let k = ((hi - lo) / fine_h).round() as usize;
    let fine: Vec<f64> = (1..k)
        .map(|i| lo + i as f64 * fine_h)
        .filter(|&v| v > 0.0 && v < prob.a)
        .collect();
    let refined = fine
        .par_iter()
        .map(|&v| eval.at(v).map(|g| (v, g)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut best = (v_star, g_star);
    for (v, g) in refined {
        if g > best.1 || (g == best.1 && v < best.0) {
            best = (v, g);
        }
    }
    Ok(finish(kind, prob.a, best, g0, grid_n, h, opts, notes))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    kind: MarginKind,
    a: f64,
    (argmax_v, margin_max): (f64, f64),
    value_at_zero: f64,
    grid_n: usize,
    h: f64,
    opts: &CheckOptions,
    mut notes: Vec<String>,
) -> CertificateVerdict {
    let (pass, rigorous) = match opts.lipschitz {
        Some(l) => {
            let need = -l * h / 2.0;
            notes.push(format!("rigorous mode: L = {l}, requires margin <= {need:e}"));
            (margin_max <= need && margin_max <= opts.slack, true)
        }
        None => (margin_max <= opts.slack, false),
    };
    CertificateVerdict {
        kind,
        a,
        margin_max,
        argmax_v,
        value_at_zero,
        grid_n,
        slack: opts.slack,
        pass,
        rigorous,
        notes,
    }
}

pub fn lemma1_margin(prob: &CertificateProblem, opts: &CheckOptions) -> Result<CertificateVerdict, CertError> {
    run_check(prob, MarginKind::Lemma1, opts)
}

pub fn lemma2_margin(prob: &CertificateProblem, opts: &CheckOptions) -> Result<CertificateVerdict, CertError> {
    run_check(prob, MarginKind::Lemma2, opts)
}

pub fn escape_margin(prob: &CertificateProblem, opts: &CheckOptions) -> Result<CertificateVerdict, CertError> {
    run_check(prob, MarginKind::Escape, opts)
}

pub fn check(prob: &CertificateProblem, kind: MarginKind, opts: &CheckOptions) -> Result<CertificateVerdict, CertError> {
    run_check(prob, kind, opts)
}

#[derive(Debug, Clone, Serialize)]
pub struct FeasibleA {
    pub a_star: f64,
    pub tol: f64,
    pub bisection_steps: usize,
    /// Verdict at `a_star`, absent when nothing passed.
    pub verdict: Option<CertificateVerdict>,
    pub note: Option<String>,
}

/// Largest `a` in `[0, a_hi]` (to within `tol`) for which the boundedness
/// certificate passes. Feasibility is monotone in `a` because the condition
/// set over `[0, a]` grows with `a`.
pub fn max_feasible_a(
    prob: &CertificateProblem,
    kind: MarginKind,
    a_hi: f64,
    tol: f64,
    opts: &CheckOptions,
) -> Result<FeasibleA, CertError> {
    if kind == MarginKind::Escape {
        return Err(CertError::Problem("max_feasible_a applies to lemma1 and lemma2".to_string()));
    }
    if !(a_hi > 0.0 && tol > 0.0) {
        return Err(CertError::Problem(format!("need a_hi > 0 and tol > 0, got {a_hi} and {tol}")));
    }
    let passes = |a: f64| run_check(&prob.with_a(a), kind, opts);
    let at_tol = passes(tol.min(a_hi))?;
    if !at_tol.pass {
        return Ok(FeasibleA {
            a_star: 0.0,
            tol,
            bisection_steps: 0,
            verdict: None,
            note: Some(format!(
                "certificate fails already at a = {} (margin {:e} at V = {})",
                tol.min(a_hi),
                at_tol.margin_max,
                at_tol.argmax_v
            )),
        });
    }
    let top = passes(a_hi)?;
    if top.pass {
        return Ok(FeasibleA {
            a_star: a_hi,
            tol,
            bisection_steps: 0,
            verdict: Some(top),
            note: Some("passes on the whole search interval".to_string()),
        });
    }
    let (mut lo, mut hi) = (tol.min(a_hi), a_hi);
    let mut best = at_tol;
    let mut steps = 0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let v = passes(mid)?;
        if v.pass {
            lo = mid;
            best = v;
        } else {
            hi = mid;
        }
        steps += 1;
    }
    Ok(FeasibleA {
        a_star: lo,
        tol,
        bisection_steps: steps,
        verdict: Some(best),
        note: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmallGainData {
    /// Decay rate in `dV/dx f <= -k V`.
    pub k: f64,
    pub sigma: f64,
    /// Lipschitz constant of the coupling in `λ`.
    pub b: f64,
    pub p_lower: f64,
    pub p_upper: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmallGainBound {
    pub gamma_star: f64,
    pub r_star: f64,
    pub omega_inner_slope: f64,
    pub omega_outer_slope: f64,
    /// `gamma < gamma_star`.
    pub pass: bool,
}

pub fn smallgain_bound(d: &SmallGainData) -> Result<SmallGainBound, CertError> {
    let all = [d.k, d.sigma, d.b, d.p_lower, d.p_upper, d.gamma];
    if !all.iter().all(|v| *v > 0.0 && v.is_finite()) {
        return Err(CertError::Problem(format!("small-gain data must be positive: {d:?}")));
    }
    if d.p_lower > d.p_upper {
        return Err(CertError::Problem(format!("p_lower = {} exceeds p_upper = {}", d.p_lower, d.p_upper)));
    }
    let c = 2.0 * d.sigma * d.b / d.p_lower.sqrt();
    let gamma_star = d.k * d.k * d.p_lower / (16.0 * d.sigma * d.b);
    Ok(SmallGainBound {
        gamma_star,
        r_star: d.k / (2.0 * c),
        omega_inner_slope: d.k * (d.p_lower * d.p_upper).sqrt() / (4.0 * d.sigma * d.b),
        omega_outer_slope: d.k * d.p_lower / (4.0 * d.sigma * d.b),
        pass: d.gamma < gamma_star,
    })
}
