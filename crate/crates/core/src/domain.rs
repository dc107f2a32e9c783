//! Domain estimates built from certificate checks: cone unions over linear
//! boundaries, the escape slope range of the prototype, and tuning-law
//! synthesis from envelopes of the stable part's decay rate.

use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::bounds::{classify_comparison, inverse_growing, BoundSet, ComparisonClass, FnError, ScalarFn, StableBoundSet, UnstableBoundSet};
use crate::catalog;
use crate::certificates::{
    escape_margin, lemma2_margin, max_feasible_a, BoundaryCandidate, CertError, CertificateProblem, CertificateVerdict,
    CheckOptions, MarginKind,
};
use crate::envelope::{convex_env, star_env_with, EnvelopeError, EnvelopeKind, StarEnvConfig};
use crate::grid::{uniform_nodes, GridFunction};

pub const DEFAULT_SWEEP_POINTS: usize = 64;
pub const SYNTHESIS_GRID: usize = 4096;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("synthesis failed after {halvings} halvings of a (last a = {last_a:e}, margin {last_margin:e})")]
    Synthesis {
        halvings: usize,
        last_a: f64,
        last_margin: f64,
    },
    #[error(transparent)]
    Cert(#[from] CertError),
    #[error(transparent)]
    Fn(#[from] FnError),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    /// `ψ(a) >= λ >= ψ(V)`.
    Bounded,
    /// `λ <= ψ(V) - ε`.
    Escape,
}

#[derive(Debug, Clone)]
pub struct InvarianceDomain {
    pub kind: DomainKind,
    pub boundary: BoundaryCandidate,
    pub a: f64,
    pub epsilon: f64,
}

impl InvarianceDomain {
    pub fn bounded(boundary: BoundaryCandidate, a: f64) -> Self {
        InvarianceDomain {
            kind: DomainKind::Bounded,
            boundary,
            a,
            epsilon: 0.0,
        }
    }

    pub fn escape(boundary: BoundaryCandidate, epsilon: f64) -> Self {
        InvarianceDomain {
            kind: DomainKind::Escape,
            boundary,
            a: f64::INFINITY,
            epsilon,
        }
    }

    /// Boundary-inclusive membership of `(V, λ)`.
    pub fn contains(&self, v: f64, lambda: f64) -> Result<bool, FnError> {
        self.contains_within(v, lambda, 0.0)
    }

    /// Membership with every inequality relaxed by `tol`.
    pub fn contains_within(&self, v: f64, lambda: f64, tol: f64) -> Result<bool, FnError> {
        let psi = self.boundary.eval(v)?;
        Ok(match self.kind {
            DomainKind::Bounded => {
                v <= self.a + tol && lambda >= psi - tol && lambda <= self.boundary.eval(self.a)? + tol
            }
            DomainKind::Escape => lambda <= psi - self.epsilon + tol,
        })
    }
}

pub fn membership(dom: &InvarianceDomain, v: f64, lambda: f64) -> Result<bool, FnError> {
    dom.contains(v, lambda)
}

/// One point of the lower boundary of a cone union, against `r = |x|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnionPoint {
    pub r: f64,
    pub v: f64,
    /// Smallest `p V` over cones reaching `V`; `None` outside every cone.
    pub lambda_min: Option<f64>,
    /// Largest cap `p a(p)` over the same cones.
    pub lambda_max: Option<f64>,
    pub p_min: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConeSweep {
    pub p_values: Vec<f64>,
    pub a_of_p: Vec<f64>,
    pub union: Vec<UnionPoint>,
    pub notes: Vec<String>,
}

impl ConeSweep {
    /// `r,V,lambda_min,lambda_max,p` lines; empty fields outside the union.
    pub fn union_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from("r,V,lambda_min,lambda_max,p\n");
        for u in &self.union {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                u.r,
                u.v,
                opt(u.lambda_min),
                opt(u.lambda_max),
                opt(u.p_min)
            ));
        }
        out
    }

    pub fn cones_csv(&self) -> String {
        let mut out = String::from("p,a\n");
        for (p, a) in self.p_values.iter().zip(&self.a_of_p) {
            out.push_str(&format!("{p},{a}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    pub check: CheckOptions,
    pub a_tol: f64,
    /// Samples of `|x|` in the union boundary.
    pub union_points: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            check: CheckOptions::default(),
            a_tol: 1e-9,
            union_points: 512,
        }
    }
}

/// Log-spaced slopes from `p_lo` to `p_hi`, both included.
pub fn log_grid(p_lo: f64, p_hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![p_lo];
    }
    let (l0, l1) = (p_lo.ln(), p_hi.ln());
    (0..n)
        .map(|i| match i {
            0 => p_lo,
            _ if i == n - 1 => p_hi,
            _ => (l0 + (l1 - l0) * i as f64 / (n - 1) as f64).exp(),
        })
        .collect()
}

pub fn sweep_linear_cones(bounds: &BoundSet, p_lo: f64, p_hi: f64, n: usize, opts: &SweepOptions) -> Result<ConeSweep, DomainError> {
    if !(p_lo > 0.0 && p_hi >= p_lo) || n < 2 {
        return Err(DomainError::Input(format!(
            "sweep needs 0 < p_lo <= p_hi and n >= 2, got p_lo = {p_lo}, p_hi = {p_hi}, n = {n}"
        )));
    }
    sweep_cones_at(bounds, &log_grid(p_lo, p_hi, n), opts)
}

/// Max feasible `a` of the cone `λ >= pV` for each listed `p`, plus the
/// union's lower boundary `λ_min(r) = min p α̲(r)` over cones with
/// `α̲(r) <= a(p)`.
pub fn sweep_cones_at(bounds: &BoundSet, ps: &[f64], opts: &SweepOptions) -> Result<ConeSweep, DomainError> {
    let a_of_p = ps
        .par_iter()
        .map(|&p| -> Result<f64, DomainError> {
            let prob = CertificateProblem::new(bounds.clone(), BoundaryCandidate::linear(p)?, bounds.v_max, 0.0);
            Ok(max_feasible_a(&prob, MarginKind::Lemma1, bounds.v_max, opts.a_tol, &opts.check)?.a_star)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut notes = Vec::new();
    let a_max = a_of_p.iter().copied().fold(0.0, f64::max);
    if a_max <= 0.0 {
        notes.push("no slope in the sweep admits a nonempty cone".to_string());
        return Ok(ConeSweep {
            p_values: ps.to_vec(),
            a_of_p,
            union: Vec::new(),
            notes,
        });
    }
    let lower = &bounds.stable.alpha_lower;
    let r_max = inverse_growing(lower, a_max, bounds.v_max).map_err(CertError::from)?;
    let union = uniform_nodes(0.0, r_max, opts.union_points.max(2))
        .map(|r| -> Result<UnionPoint, DomainError> {
            let v = lower.eval(r)?;
            let mut best: Option<(f64, f64)> = None;
            let mut cap: Option<f64> = None;
            for (&p, &a) in ps.iter().zip(&a_of_p) {
                if a > 0.0 && v <= a {
                    let lam = p * v;
                    if best.is_none_or(|(l, _)| lam < l) {
                        best = Some((lam, p));
                    }
                    cap = Some(cap.map_or(p * a, |c: f64| c.max(p * a)));
                }
            }
            Ok(UnionPoint {
                r,
                v,
                lambda_min: best.map(|b| b.0),
                lambda_max: cap,
                p_min: best.map(|b| b.1),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let empty = a_of_p.iter().filter(|a| **a == 0.0).count();
    if empty > 0 {
        notes.push(format!("{empty} of {} slopes give an empty cone", ps.len()));
    }
    Ok(ConeSweep {
        p_values: ps.to_vec(),
        a_of_p,
        union,
        notes,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EscapeRange {
    pub k: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Upper end of `(0, p_max]`; `None` when the range is empty.
    pub p_max: Option<f64>,
    pub check_below: Option<CertificateVerdict>,
    pub check_above: Option<CertificateVerdict>,
    /// Both grid checks agree with the closed form.
    pub consistent: bool,
}

fn escape_problem(k: f64, gamma: f64, eps: f64, p: f64) -> Result<CertificateProblem, CertError> {
    // the minimizer of the reduced margin sits at ε/(3p); cover it generously
    let a = 4.0 * eps / p;
    Ok(CertificateProblem::new(
        catalog::example3_bounds(k, gamma, a),
        BoundaryCandidate::linear(p)?,
        a,
        eps,
    ))
}

/// Escape slopes of the prototype, closed form plus a grid cross-check just
/// inside and just outside the range.
pub fn escape_p_range(k: f64, gamma: f64, epsilon: f64) -> Result<EscapeRange, DomainError> {
    if !(k > 0.0 && epsilon > 0.0 && gamma >= 0.0) {
        return Err(DomainError::Input(format!(
            "escape range needs k > 0, ε > 0, γ >= 0; got k = {k}, γ = {gamma}, ε = {epsilon}"
        )));
    }
    let p_max = catalog::escape_p_max(k, gamma, epsilon);
    if p_max <= 0.0 {
        return Ok(EscapeRange {
            k,
            gamma,
            epsilon,
            p_max: None,
            check_below: None,
            check_above: None,
            consistent: true,
        });
    }
    let opts = CheckOptions::default().with_grid(4096);
    let below = escape_margin(&escape_problem(k, gamma, epsilon, p_max * (1.0 - 1e-6))?, &opts)?;
    let above = escape_margin(&escape_problem(k, gamma, epsilon, p_max * (1.0 + 1e-3))?, &opts)?;
    Ok(EscapeRange {
        k,
        gamma,
        epsilon,
        p_max: Some(p_max),
        consistent: below.pass && !above.pass,
        check_below: Some(below),
        check_above: Some(above),
    })
}

fn display<S: Serializer>(f: &ScalarFn, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&f.to_string())
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthesisResult {
    pub psi: GridFunction,
    pub d_a: f64,
    #[serde(serialize_with = "display")]
    pub gamma0: ScalarFn,
    /// `γ(V) = ψ(V) γ₀(V)`; the tuning law is `λ̇ = -γ(V(x))`.
    #[serde(serialize_with = "display")]
    pub gamma_fn: ScalarFn,
    pub a_star: f64,
    pub envelope_kind: EnvelopeKind,
    pub halvings: usize,
    pub verdict: CertificateVerdict,
    /// Largest `-α₀(V)/2 + D ψ(V)` on the output grid; never positive.
    pub chain_max: f64,
    pub notes: Vec<String>,
}

impl SynthesisResult {
    pub fn domain(&self) -> InvarianceDomain {
        InvarianceDomain::bounded(BoundaryCandidate::table(self.psi.clone()), self.a_star)
    }
}

struct Attempt {
    psi: GridFunction,
    d_a: f64,
    gamma0: ScalarFn,
    gamma_fn: ScalarFn,
    verdict: CertificateVerdict,
    chain_max: f64,
    notes: Vec<String>,
}

fn attempt(
    alpha0: &ScalarFn,
    beta: &ScalarFn,
    phi: &ScalarFn,
    phi_lipschitz: f64,
    a: f64,
    kind: EnvelopeKind,
) -> Result<Attempt, DomainError> {
    let mut notes = Vec::new();
    let nodes: Vec<f64> = uniform_nodes(0.0, a, SYNTHESIS_GRID).collect();
    let beta_max = nodes
        .par_iter()
        .map(|&v| beta.eval(v))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let d_a = phi_lipschitz * beta_max;
    if !(d_a > 0.0) {
        return Err(DomainError::Input(format!("D(a) = {d_a} must be positive")));
    }
    let target = ScalarFn::scaled(1.0 / (2.0 * d_a), alpha0.clone());
    let psi = match kind {
        EnvelopeKind::Star => {
            let cfg = StarEnvConfig {
                output_intervals: SYNTHESIS_GRID,
                ..StarEnvConfig::default()
            };
            let rep = star_env_with(&target, 0.0, 0.0, a, &cfg)?;
            if let Some(w) = rep.warning {
                notes.push(w);
            }
            rep.envelope
        }
        EnvelopeKind::Convex => convex_env(&target, 0.0, a, SYNTHESIS_GRID)?,
    };
    let psi_fn = ScalarFn::tabulated(psi.clone(), true);
    let gamma0 = ScalarFn::scaled(1.0 / (2.0 * a), alpha0.clone());
    let gamma_fn = ScalarFn::product(psi_fn.clone(), gamma0.clone());

    let alpha0_vals = nodes.iter().map(|&v| alpha0.eval(v)).collect::<Result<Vec<_>, _>>()?;
    let chain_max = alpha0_vals
        .iter()
        .zip(psi.values())
        .map(|(a0, p)| -0.5 * a0 + d_a * p)
        .fold(f64::NEG_INFINITY, f64::max);
    if let Some(v) = nodes[1..nodes.len() - 1]
        .iter()
        .zip(&alpha0_vals[1..])
        .find(|(_, a0)| **a0 == 0.0)
        .map(|(v, _)| *v)
    {
        notes.push(format!("α₀ vanishes at V = {v}: the tuning law stalls there"));
    }

    let identity = ScalarFn::parse("s", "s")?;
    let bounds = BoundSet::new(
        StableBoundSet {
            alpha_lower: identity.clone(),
            alpha_upper: identity,
            alpha: ScalarFn::scaled(-1.0, alpha0.clone()),
            beta: beta.clone(),
            phi: phi.clone(),
        },
        UnstableBoundSet {
            delta: gamma_fn.clone(),
            xi: ScalarFn::constant(0.0),
        },
        a,
    );
    let prob = CertificateProblem::new(bounds, BoundaryCandidate::table(psi.clone()), a, 0.0);
    let verdict = lemma2_margin(&prob, &CheckOptions::default().with_grid(SYNTHESIS_GRID))?;
    Ok(Attempt {
        psi,
        d_a,
        gamma0,
        gamma_fn,
        verdict,
        chain_max,
        notes,
    })
}

/// Builds `ψ` as an envelope of `α₀/(2D(a))` with `D(a) = L max β`, the law
/// `γ(V) = ψ(V) α₀(V)/(2a)`, and confirms it with the `lemma2` check,
/// halving `a` until it passes.
pub fn synthesize_tuning_law(
    alpha0: &ScalarFn,
    beta: &ScalarFn,
    phi: &ScalarFn,
    phi_lipschitz: f64,
    a_init: f64,
    kind: EnvelopeKind,
) -> Result<SynthesisResult, DomainError> {
    if !(a_init > 0.0 && a_init.is_finite() && phi_lipschitz > 0.0) {
        return Err(DomainError::Input(format!(
            "need a_init > 0 and a positive Lipschitz constant, got {a_init} and {phi_lipschitz}"
        )));
    }
    let mut pre_notes = Vec::new();
    if classify_comparison(alpha0, SYNTHESIS_GRID, a_init)? == ComparisonClass::Neither {
        // zeros inside the interval are tolerated, negative values are not
        let vals = uniform_nodes(0.0, a_init, SYNTHESIS_GRID)
            .map(|v| alpha0.eval(v))
            .collect::<Result<Vec<_>, _>>()?;
        if vals[0].abs() > 1e-12 || vals.iter().any(|v| *v < 0.0) {
            return Err(DomainError::Input("α₀ must vanish at 0 and be nonnegative on [0, a_init]".to_string()));
        }
        pre_notes.push("α₀ is not positive on all of (0, a_init]".to_string());
    }
    let mut a = a_init;
    let mut last_margin = f64::NAN;
    for halvings in 0..=MAX_HALVINGS {
        let att = attempt(alpha0, beta, phi, phi_lipschitz, a, kind)?;
        if att.verdict.pass && att.chain_max <= 0.0 {
            let mut notes = pre_notes;
            notes.extend(att.notes);
            if halvings > 0 {
                notes.push(format!("a halved {halvings} times from {a_init}"));
            }
            return Ok(SynthesisResult {
                psi: att.psi,
                d_a: att.d_a,
                gamma0: att.gamma0,
                gamma_fn: att.gamma_fn,
                a_star: a,
                envelope_kind: kind,
                halvings,
                verdict: att.verdict,
                chain_max: att.chain_max,
                notes,
            });
        }
        last_margin = att.verdict.margin_max;
        a *= 0.5;
    }
    Err(DomainError::Synthesis {
        halvings: MAX_HALVINGS,
        last_a: a * 2.0,
        last_margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn membership_examples() {
        let dom = InvarianceDomain::bounded(BoundaryCandidate::linear(1.0).unwrap(), 1.0);
        assert!(membership(&dom, 0.5, 0.7).unwrap());
        assert!(!membership(&dom, 0.5, 0.4).unwrap());
        assert!(membership(&dom, 0.5, 0.5).unwrap());
        assert!(membership(&dom, 1.0, 1.0).unwrap());
        assert!(!membership(&dom, 0.5, 1.0 + 1e-12).unwrap());
        let esc = InvarianceDomain::escape(BoundaryCandidate::linear(1.0).unwrap(), 0.1);
        assert!(membership(&esc, 0.5, 0.35).unwrap());
        assert!(membership(&esc, 0.5, 0.4).unwrap());
        assert!(!membership(&esc, 0.5, 0.41).unwrap());
    }

    #[test]
    fn cone_sweep_matches_closed_form() {
        let b = catalog::example3_bounds(1.0, 0.1, 10.0);
        let s = sweep_linear_cones(&b, 0.06, 30.0, 12, &SweepOptions::default()).unwrap();
        for (p, a) in s.p_values.iter().zip(&s.a_of_p) {
            assert!((a - catalog::example3_a(*p, 1.0, 0.1)).abs() <= 1e-6, "p = {p}");
        }
        let figure = sweep_cones_at(&b, &[0.3, 3.0, 20.0], &SweepOptions::default()).unwrap();
        for (p, a) in figure.p_values.iter().zip(&figure.a_of_p) {
            assert!((a - catalog::example3_a(*p, 1.0, 0.1)).abs() <= 1e-6);
        }
        assert!(figure.union_csv().starts_with("r,V,lambda_min,lambda_max,p\n"));
    }

    #[test]
    fn cone_below_threshold_is_empty() {
        let b = catalog::example3_bounds(1.0, 0.1, 10.0);
        let s = sweep_cones_at(&b, &[0.049, 0.0499], &SweepOptions::default()).unwrap();
        assert_eq!(s.a_of_p, vec![0.0, 0.0]);
        assert!(s.union.is_empty());
        assert!(!s.notes.is_empty());
    }

    #[test]
    fn zero_gamma_gives_every_cone() {
        let b = catalog::example3_bounds(1.0, 0.0, 10.0);
        let s = sweep_cones_at(&b, &[0.2, 1.0, 5.0], &SweepOptions::default()).unwrap();
        for (p, a) in s.p_values.iter().zip(&s.a_of_p) {
            assert!((a - (1.0 / p).powf(2.0 / 3.0)).abs() <= 1e-6);
        }
    }

    #[test]
    fn union_boundary_is_lowest_covering_cone() {
        let b = catalog::example3_bounds(1.0, 0.1, 10.0);
        let s = sweep_cones_at(&b, &[0.3, 3.0, 20.0], &SweepOptions::default()).unwrap();
        for u in &s.union {
            let covering: Vec<f64> = s
                .p_values
                .iter()
                .zip(&s.a_of_p)
                .filter(|(_, a)| u.v <= **a)
                .map(|(p, _)| p * u.v)
                .collect();
            let expect = covering.iter().copied().reduce(f64::min);
            assert_eq!(u.lambda_min, expect);
        }
    }

    #[test]
    fn escape_range_examples() {
        let r = escape_p_range(1.0, 0.1, 0.1).unwrap();
        assert!(r.consistent);
        let small = escape_p_range(1.0, 0.1, 1e-6).unwrap();
        assert!((small.p_max.unwrap() - 0.05).abs() < 1e-6);
        let none = escape_p_range(1.0, 0.0, 0.1).unwrap();
        assert!(none.p_max.is_none());
    }

    #[test]
    fn synthesis_on_linear_decay() {
        let alpha0 = ScalarFn::parse("3*V", "V").unwrap();
        let beta = ScalarFn::constant(2.0);
        let phi = ScalarFn::parse("s", "s").unwrap();
        for kind in [EnvelopeKind::Star, EnvelopeKind::Convex] {
            let r = synthesize_tuning_law(&alpha0, &beta, &phi, 1.0, 1.0, kind).unwrap();
            assert!(r.verdict.pass);
            assert!(r.chain_max <= 0.0);
            assert_eq!(r.d_a, 2.0);
            // ψ = α₀/(2D) = 0.75 V, itself linear
            for (v, p) in r.psi.nodes().zip(r.psi.values()) {
                assert!((p - 0.75 * v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn synthesis_flags_stalling_law() {
        let alpha0 = ScalarFn::parse("V*(V-0.5)^2", "V").unwrap();
        let beta = ScalarFn::constant(1.0);
        let phi = ScalarFn::parse("s", "s").unwrap();
        let r = synthesize_tuning_law(&alpha0, &beta, &phi, 1.0, 1.0, EnvelopeKind::Star).unwrap();
        assert!(r.verdict.pass);
        assert!(r.notes.iter().any(|n| n.contains("stalls")));
        let mid = r.psi.eval(0.5).unwrap();
        assert!(mid.abs() < 1e-12);
    }

    #[test]
    fn synthesis_rejects_non_positive_rate() {
        let alpha0 = ScalarFn::parse("V-0.5", "V").unwrap();
        let beta = ScalarFn::constant(1.0);
        let phi = ScalarFn::parse("s", "s").unwrap();
        assert!(matches!(
            synthesize_tuning_law(&alpha0, &beta, &phi, 1.0, 1.0, EnvelopeKind::Star),
            Err(DomainError::Input(_))
        ));
    }
}
