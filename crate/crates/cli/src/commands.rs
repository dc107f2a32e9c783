//! The config-driven subcommands.

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use invarlab_core::certificates::{check as run_check, max_feasible_a, EscapeArgs};
use invarlab_core::domain::{sweep_linear_cones, synthesize_tuning_law, DomainError, InvarianceDomain, SweepOptions, SynthesisResult};
use invarlab_core::envelope::{convex_env, star_env_with, EnvelopeKind, StarEnvConfig};
use invarlab_core::ode::{batch_membership_trial, builtin, integrate, monitor, BuiltinName, Method, SampleBox, StepConfig, SystemModel};
use invarlab_core::{
    BoundSet, BoundaryCandidate, CertificateProblem, CheckOptions, Env, MarginKind, ScalarFn, StableBoundSet, UnstableBoundSet,
};

use crate::config::{
    BoundarySection, BoundsSection, CertificateSection, Config, ConfigError, DomainSection, EnvelopeChoice, EscapeArgsChoice, Kind,
    Level, MethodChoice, SimulationSection,
};
use crate::output::Outputs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
}

pub struct Outcome {
    pub status: Status,
    pub summary: String,
    pub result: Value,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Flags {
    pub seed: Option<u64>,
    pub grid: Option<usize>,
}

fn located(pointer: &str, err: impl std::fmt::Display) -> anyhow::Error {
    anyhow!(ConfigError::at(pointer, err.to_string()))
}

fn section<'a, T>(s: &'a Option<T>, name: &str, cmd: &str) -> Result<&'a T> {
    s.as_ref()
        .ok_or_else(|| located(&format!("/{name}"), format!("section required by `{cmd}`")))
}

fn env_of<'a>(maps: impl IntoIterator<Item = &'a std::collections::BTreeMap<String, f64>>) -> Env {
    let mut env = Env::new();
    for m in maps {
        for (k, v) in m {
            env.insert(k.clone(), *v);
        }
    }
    env
}

fn parse_fn(text: &str, var: &str, env: &Env, pointer: &str) -> Result<ScalarFn> {
    ScalarFn::parse_with(text, var, env).map_err(|e| located(pointer, e))
}

fn build_bounds(b: &BoundsSection, env: &Env) -> Result<BoundSet> {
    if !(b.v_max > 0.0 && b.v_max.is_finite()) {
        return Err(located("/bounds/v_max", format!("must be positive and finite, got {}", b.v_max)));
    }
    let f = |text: &str, var: &str, field: &str| parse_fn(text, var, env, &format!("/bounds/{field}"));
    Ok(BoundSet::new(
        StableBoundSet {
            alpha_lower: f(&b.alpha_lower, "s", "alpha_lower")?,
            alpha_upper: f(&b.alpha_upper, "s", "alpha_upper")?,
            alpha: f(&b.alpha, "V", "alpha")?,
            beta: f(&b.beta, "V", "beta")?,
            phi: f(&b.phi, "s", "phi")?,
        },
        UnstableBoundSet {
            delta: f(&b.delta, "s", "delta")?,
            xi: f(&b.xi, "s", "xi")?,
        },
        b.v_max,
    ))
}

fn build_boundary(b: &BoundarySection, env: &Env) -> Result<BoundaryCandidate> {
    match b {
        BoundarySection::Linear { p } => BoundaryCandidate::linear(*p).map_err(|e| located("/boundary/p", e)),
        BoundarySection::Sqrt { r } => BoundaryCandidate::sqrt(*r).map_err(|e| located("/boundary/r", e)),
        BoundarySection::Expression { psi } => Ok(BoundaryCandidate::expression(parse_fn(psi, "V", env, "/boundary/psi")?)),
    }
}

fn describe_boundary(b: &BoundarySection) -> Value {
    serde_json::to_value(b).expect("boundary serializes")
}

fn check_options(c: Option<&CertificateSection>, flags: Flags) -> CheckOptions {
    let mut opts = CheckOptions::default();
    if let Some(c) = c {
        if let Some(n) = c.grid_n {
            opts.grid_n = n;
        }
        opts.slack = c.slack;
        opts.lipschitz = c.lipschitz;
        if let Some(e) = c.escape_args {
            opts.escape_args = match e {
                EscapeArgsChoice::Signed => EscapeArgs::Signed,
                EscapeArgsChoice::Clamp => EscapeArgs::Clamp,
            };
        }
    }
    if let Some(n) = flags.grid {
        opts.grid_n = n;
    }
    opts
}

fn margin_kind(k: Kind) -> MarginKind {
    match k {
        Kind::Lemma1 => MarginKind::Lemma1,
        Kind::Lemma2 => MarginKind::Lemma2,
        Kind::Escape => MarginKind::Escape,
    }
}

fn status(pass: bool) -> Status {
    if pass {
        Status::Pass
    } else {
        Status::Fail
    }
}

pub fn check(cfg: &Config, flags: Flags, _out: &mut Outputs) -> Result<Outcome> {
    let env = env_of([&cfg.params]);
    let bounds = build_bounds(section(&cfg.bounds, "bounds", "check")?, &env)?;
    let boundary_sec = section(&cfg.boundary, "boundary", "check")?;
    let boundary = build_boundary(boundary_sec, &env)?;
    let c = section(&cfg.certificate, "certificate", "check")?;
    let kind = margin_kind(c.kind);
    let opts = check_options(Some(c), flags);
    let violations = bounds.validate();
    let v_max = bounds.v_max;

    match c.a {
        Level::Value(a) => {
            let prob = CertificateProblem::new(bounds, boundary, a, c.epsilon);
            let verdict = run_check(&prob, kind, &opts)?;
            let summary = format!(
                "{} at a = {a}: {} (margin_max {:e} at V = {})",
                kind.name(),
                if verdict.pass { "pass" } else { "fail" },
                verdict.margin_max,
                verdict.argmax_v
            );
            Ok(Outcome {
                status: status(verdict.pass),
                summary,
                result: json!({
                    "kind": kind,
                    "boundary": describe_boundary(boundary_sec),
                    "epsilon": c.epsilon,
                    "bound_violations": violations,
                    "verdict": verdict,
                }),
            })
        }
        Level::Max(_) => {
            if kind == MarginKind::Escape {
                return Err(located("/certificate/a", "\"max\" applies to lemma1 and lemma2 only"));
            }
            let a_hi = c.a_hi.unwrap_or(v_max);
            let prob = CertificateProblem::new(bounds, boundary, a_hi, c.epsilon);
            let fa = max_feasible_a(&prob, kind, a_hi, c.a_tol, &opts)?;
            let summary = format!("{} largest feasible a = {:.9e}", kind.name(), fa.a_star);
            Ok(Outcome {
                status: status(fa.a_star > 0.0),
                summary,
                result: json!({
                    "kind": kind,
                    "boundary": describe_boundary(boundary_sec),
                    "epsilon": c.epsilon,
                    "bound_violations": violations,
                    "feasible": fa,
                }),
            })
        }
    }
}

pub fn sweep(cfg: &Config, flags: Flags, out: &mut Outputs) -> Result<Outcome> {
    let env = env_of([&cfg.params]);
    let bounds = build_bounds(section(&cfg.bounds, "bounds", "sweep")?, &env)?;
    let s = section(&cfg.sweep, "sweep", "sweep")?;
    let mut opts = SweepOptions {
        check: check_options(cfg.certificate.as_ref(), flags),
        ..SweepOptions::default()
    };
    if let Some(u) = s.union_points {
        opts.union_points = u;
    }
    let sw = sweep_linear_cones(&bounds, s.p_lo, s.p_hi, s.n, &opts).map_err(|e| match e {
        DomainError::Input(m) => located("/sweep", m),
        other => other.into(),
    })?;
    out.csv("cones.csv", &sw.cones_csv())?;
    out.csv("union.csv", &sw.union_csv())?;
    let best = sw.a_of_p.iter().copied().fold(0.0, f64::max);
    Ok(Outcome {
        status: Status::Pass,
        summary: format!("{} cones, largest a(p) = {best:.6e}", sw.p_values.len()),
        result: json!({ "sweep": sw }),
    })
}

fn envelope_choice(k: EnvelopeChoice) -> EnvelopeKind {
    match k {
        EnvelopeChoice::Star => EnvelopeKind::Star,
        EnvelopeChoice::Convex => EnvelopeKind::Convex,
    }
}

pub fn envelope(cfg: &Config, flags: Flags, out: &mut Outputs) -> Result<Outcome> {
    let env = env_of([&cfg.params]);
    let e = section(&cfg.envelope, "envelope", "envelope")?;
    let f = parse_fn(&e.function, &e.var, &env, "/envelope/function")?;
    let defaults = StarEnvConfig::default();
    let nodes = flags.grid.or(e.nodes).unwrap_or(defaults.output_intervals);
    let (grid, result, summary) = match e.kind {
        EnvelopeChoice::Star => {
            let scfg = StarEnvConfig {
                tol: e.tol.unwrap_or(defaults.tol),
                n0: e.n0.unwrap_or(defaults.n0),
                output_intervals: nodes,
                ..defaults
            };
            let rep = star_env_with(&f, e.base, e.lo, e.hi, &scfg)?;
            let summary = format!(
                "star envelope, {} levels, converged = {}{}",
                rep.iterations,
                rep.converged,
                rep.warning.as_deref().map(|w| format!(" ({w})")).unwrap_or_default()
            );
            (rep.envelope.clone(), json!({ "kind": EnvelopeKind::Star, "report": rep }), summary)
        }
        EnvelopeChoice::Convex => {
            let g = convex_env(&f, e.lo, e.hi, nodes)?;
            (
                g.clone(),
                json!({ "kind": EnvelopeKind::Convex, "envelope": g }),
                format!("convex envelope on {nodes} intervals"),
            )
        }
    };
    let mut csv = String::from("y,f,envelope\n");
    for (y, v) in grid.nodes().zip(grid.values()) {
        csv.push_str(&format!("{y},{},{v}\n", f.eval(y)?));
    }
    out.csv("envelope.csv", &csv)?;
    Ok(Outcome {
        status: Status::Pass,
        summary,
        result,
    })
}

/// Runs the `synthesis` section; `Ok(Err(..))` when no level passed.
fn run_synthesis(cfg: &Config, cmd: &str) -> Result<std::result::Result<SynthesisResult, DomainError>> {
    let env = env_of([&cfg.params]);
    let s = section(&cfg.synthesis, "synthesis", cmd)?;
    let alpha0 = parse_fn(&s.alpha0, "V", &env, "/synthesis/alpha0")?;
    let beta = parse_fn(&s.beta, "V", &env, "/synthesis/beta")?;
    let phi = parse_fn(&s.phi, "s", &env, "/synthesis/phi")?;
    match synthesize_tuning_law(&alpha0, &beta, &phi, s.phi_lipschitz, s.a_init, envelope_choice(s.envelope)) {
        Ok(r) => Ok(Ok(r)),
        Err(e @ DomainError::Synthesis { .. }) => Ok(Err(e)),
        Err(DomainError::Input(m)) => Err(located("/synthesis", m)),
        Err(e) => Err(e.into()),
    }
}

fn psi_csv(syn: &SynthesisResult) -> Result<String> {
    let mut csv = String::from("V,psi,gamma\n");
    for (v, p) in syn.psi.nodes().zip(syn.psi.values()) {
        csv.push_str(&format!("{v},{p},{}\n", syn.gamma_fn.eval(v)?));
    }
    Ok(csv)
}

pub fn synthesize(cfg: &Config, _flags: Flags, out: &mut Outputs) -> Result<Outcome> {
    match run_synthesis(cfg, "synthesize")? {
        Ok(syn) => {
            out.csv("psi.csv", &psi_csv(&syn)?)?;
            Ok(Outcome {
                status: Status::Pass,
                summary: format!(
                    "a* = {:e} after {} halvings, lemma2 margin_max {:e}",
                    syn.a_star, syn.halvings, syn.verdict.margin_max
                ),
                result: json!({ "synthesis": syn }),
            })
        }
        Err(e) => Ok(Outcome {
            status: Status::Fail,
            summary: e.to_string(),
            result: json!({ "synthesis": null, "failure": e.to_string() }),
        }),
    }
}

pub fn step_config(s: &SimulationSection) -> Result<StepConfig> {
    let mut c = match s.method {
        MethodChoice::Dopri45 => {
            let d = StepConfig::adaptive(s.t_end);
            match d.method {
                Method::Dopri45 { rtol, atol } => d.with_tolerances(s.rtol.unwrap_or(rtol), s.atol.unwrap_or(atol)),
                Method::Rk4 { .. } => d,
            }
        }
        MethodChoice::Rk4 => {
            let h = s.h.ok_or_else(|| located("/simulation/h", "rk4 needs a step size"))?;
            StepConfig::rk4(h, s.t_end)
        }
    };
    if let Some(m) = s.max_steps {
        c.max_steps = m;
    }
    c.validate().map_err(|e| located("/simulation", e))?;
    Ok(c)
}

fn build_system(cfg: &Config, synthesis: Option<&SynthesisResult>) -> Result<SystemModel> {
    let sys = section(&cfg.system, "system", "simulate")?;
    let env = env_of([&cfg.params, &sys.params]);
    match (&sys.builtin, &sys.x_rhs) {
        (Some(name), None) => {
            let b = BuiltinName::from_name(name)
                .ok_or_else(|| located("/system/builtin", format!("unknown builtin `{name}`")))?;
            builtin(b, &env, synthesis).map_err(|e| located("/system", e))
        }
        (None, Some(x_rhs)) => {
            let lam = sys
                .lambda_rhs
                .as_deref()
                .ok_or_else(|| located("/system/lambda_rhs", "required with x_rhs"))?;
            let v = sys.v.as_deref().ok_or_else(|| located("/system/v", "required with x_rhs"))?;
            let refs: Vec<&str> = x_rhs.iter().map(String::as_str).collect();
            SystemModel::from_strings("custom", &refs, lam, v, &env).map_err(|e| located("/system", e))
        }
        _ => Err(located("/system", "give exactly one of `builtin` or `x_rhs`")),
    }
}

fn needs_synthesis(cfg: &Config) -> bool {
    let builtin_reg = cfg
        .system
        .as_ref()
        .and_then(|s| s.builtin.as_deref())
        .is_some_and(|b| b == "regulation");
    let synth_dom = matches!(cfg.simulation.as_ref().and_then(|s| s.domain.as_ref()), Some(DomainSection::Synthesized));
    builtin_reg || synth_dom
}

fn build_domain(cfg: &Config, d: &DomainSection, synthesis: Option<&SynthesisResult>) -> Result<InvarianceDomain> {
    let env = env_of([&cfg.params]);
    match d {
        DomainSection::Synthesized => synthesis
            .map(SynthesisResult::domain)
            .ok_or_else(|| located("/simulation/domain", "needs a successful synthesis")),
        DomainSection::Bounded { a } => {
            let b = build_boundary(section(&cfg.boundary, "boundary", "simulate")?, &env)?;
            Ok(InvarianceDomain::bounded(b, *a))
        }
        DomainSection::Escape { epsilon } => {
            let b = build_boundary(section(&cfg.boundary, "boundary", "simulate")?, &env)?;
            Ok(InvarianceDomain::escape(b, *epsilon))
        }
    }
}

fn samples_csv(s: &invarlab_core::ode::BatchSummary, dim: usize) -> String {
    let mut csv = String::from("index");
    for i in 0..dim {
        csv.push_str(&format!(",init{i}"));
    }
    csv.push_str(",stayed,lambda_monotone,x_final_norm,v_final,lambda_final,min_dist_origin,first_exit\n");
    for v in &s.samples {
        csv.push_str(&v.index.to_string());
        for c in &v.init {
            csv.push_str(&format!(",{c}"));
        }
        let r = &v.report;
        csv.push_str(&format!(
            ",{},{},{},{},{},{},{}\n",
            u8::from(r.stayed),
            u8::from(r.lambda_monotone),
            r.x_final_norm,
            r.v_final,
            r.lambda_final,
            r.min_dist_origin,
            r.first_exit.map(|t| t.to_string()).unwrap_or_default()
        ));
    }
    csv
}

pub fn simulate(cfg: &Config, flags: Flags, out: &mut Outputs) -> Result<Outcome> {
    let sim = section(&cfg.simulation, "simulation", "simulate")?;
    let synthesis = if needs_synthesis(cfg) {
        match run_synthesis(cfg, "simulate")? {
            Ok(s) => Some(s),
            Err(e) => bail!("synthesis for the simulated system failed: {e}"),
        }
    } else {
        None
    };
    let sys = build_system(cfg, synthesis.as_ref())?;
    let step = step_config(sim)?;
    let dom = sim
        .domain
        .as_ref()
        .map(|d| build_domain(cfg, d, synthesis.as_ref()))
        .transpose()?;

    if let Some(sampler) = &sim.sampler {
        if !sim.initial.is_empty() {
            return Err(located("/simulation", "give either `initial` or `sampler`, not both"));
        }
        let dom = dom.ok_or_else(|| located("/simulation/domain", "required by `sampler`"))?;
        let bbox = SampleBox::new(sampler.ranges.iter().map(|r| (r[0], r[1])).collect());
        let seed = flags.seed.unwrap_or(sampler.seed);
        let s = batch_membership_trial(&sys, &dom, &bbox, sampler.n, seed, &step).context("sampling trial")?;
        out.csv("samples.csv", &samples_csv(&s, sys.dim()))?;
        let pass = s.stayed == s.n_samples;
        return Ok(Outcome {
            status: status(pass),
            summary: format!(
                "{} samples, stayed {}, λ nonincreasing {}, blowups {}",
                s.n_samples, s.stayed, s.lambda_monotone, s.blowups
            ),
            result: json!({ "system": sys.name, "step": step, "domain": dom.kind, "summary": s }),
        });
    }

    if sim.initial.is_empty() {
        return Err(located("/simulation", "give `initial` points or a `sampler`"));
    }
    let runs = sim
        .initial
        .par_iter()
        .enumerate()
        .map(|(i, init)| -> Result<_> {
            let mut tr = integrate(&sys, init, &step).with_context(|| format!("/simulation/initial/{i}"))?;
            let report = match &dom {
                Some(d) => {
                    tr.attach_domain(d)?;
                    Some(monitor(&tr, d)?)
                }
                None => None,
            };
            Ok((tr, report))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut results = Vec::with_capacity(runs.len());
    let mut all_stayed = true;
    for (i, (tr, report)) in runs.iter().enumerate() {
        out.csv(&format!("trajectory_{i}.csv"), &tr.to_csv())?;
        if let Some(r) = report {
            all_stayed &= r.stayed;
        }
        results.push(json!({
            "index": i,
            "init": sim.initial[i],
            "final": tr.last(),
            "stop": tr.stop,
            "steps": tr.steps,
            "events": tr.events,
            "monitor": report,
        }));
    }
    Ok(Outcome {
        status: status(all_stayed),
        summary: format!("{} trajectories{}", runs.len(), if dom.is_some() { format!(", all stayed = {all_stayed}") } else { String::new() }),
        result: json!({ "system": sys.name, "step": step, "runs": results }),
    })
}
