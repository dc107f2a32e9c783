//! Acceptance criteria, one pass/fail line each. Run with
//! `cargo test -p invarlab-core --test acceptance`.

use std::process::ExitCode;
use std::time::Instant;

use invarlab_core::catalog;
use invarlab_core::certificates::{
    escape_margin, max_feasible_a, smallgain_bound, BoundaryCandidate, CertificateProblem, CheckOptions,
    MarginKind, SmallGainData,
};
use invarlab_core::domain::{synthesize_tuning_law, InvarianceDomain};
use invarlab_core::envelope::{convex_env, star_env, EnvelopeKind};
use invarlab_core::exprlang::{differentiate, fd_derivative, parse, Bound, Expr};
use invarlab_core::ode::{batch_membership_trial, integrate, prototype, regulation, SampleBox, StepConfig, SystemModel};
use invarlab_core::{Env, ScalarFn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

const K: f64 = 1.0;
const GAMMA: f64 = 0.1;
const PS: [f64; 4] = [0.3, 1.0, 3.0, 20.0];

fn closed_a(p: f64) -> f64 {
    ((1.0 / p) * (K - GAMMA / (2.0 * p))).powf(2.0 / 3.0)
}

fn cone_problem(p: f64) -> CertificateProblem {
    CertificateProblem::new(catalog::example3_bounds(K, GAMMA, 10.0), BoundaryCandidate::linear(p).unwrap(), 1.0, 0.0)
}

fn feasible(p: f64, kind: MarginKind) -> f64 {
    max_feasible_a(&cone_problem(p), kind, 10.0, 1e-9, &CheckOptions::default())
        .unwrap()
        .a_star
}

fn example3_feasibility() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for p in PS {
        worst = worst.max((feasible(p, MarginKind::Lemma1) - closed_a(p)).abs());
    }
    let at_threshold = feasible(GAMMA / (2.0 * K), MarginKind::Lemma1);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-6 && at_threshold == 0.0 && secs < 5.0,
        format!("max |a* - a(p)| = {worst:.2e}, a*(0.05) = {at_threshold}, {secs:.2} s"),
    )
}

fn lemma_agreement() -> Outcome {
    let mut worst: f64 = 0.0;
    for p in PS {
        worst = worst.max((feasible(p, MarginKind::Lemma1) - feasible(p, MarginKind::Lemma2)).abs());
    }
    outcome(worst <= 1e-6, format!("max |a*1 - a*2| = {worst:.2e}"))
}

fn smallgain_reproduction() -> Outcome {
    let (tau1, c1) = (1.0, 1.0);
    let d = SmallGainData {
        k: 2.0 * tau1,
        sigma: 1.0,
        b: c1,
        p_lower: 1.0,
        p_upper: 1.0,
        gamma: 0.2,
    };
    let s = smallgain_bound(&d).unwrap();
    let prior = (1.0 / 16.0) * tau1 * tau1 / c1;
    let ratio = s.gamma_star / prior;
    outcome(
        (s.gamma_star - 0.25).abs() <= 1e-15 && ratio == 4.0,
        format!("gamma_star = {}, ratio to prior bound = {ratio}", s.gamma_star),
    )
}

fn escape_range() -> Outcome {
    let eps: f64 = 0.1;
    let p_max = (((16.0 / 27.0 * eps.powi(3) + 8.0 * GAMMA * K).sqrt() - 4.0 / 3.0 * (eps.powi(3) / 3.0).sqrt()) / (4.0 * K)).powi(2);
    let check = |p: f64| {
        let a = 4.0 * eps / p;
        let prob = CertificateProblem::new(catalog::example3_bounds(K, GAMMA, a), BoundaryCandidate::linear(p).unwrap(), a, eps);
        escape_margin(&prob, &CheckOptions::default().with_grid(4096)).unwrap()
    };
    let below = check(p_max * (1.0 - 1e-6));
    let above = check(p_max * (1.0 + 1e-3));
    outcome(
        below.pass && !above.pass,
        format!(
            "p_max = {p_max:.9}; below: worst -E = {:.2e}, above: worst -E = {:.2e} at V = {:.4}",
            below.margin_max, above.margin_max, above.argmax_v
        ),
    )
}

fn invariance_by_simulation() -> Outcome {
    let start = Instant::now();
    let a = closed_a(1.0);
    let dom = InvarianceDomain::bounded(BoundaryCandidate::linear(1.0).unwrap(), a);
    let sys = prototype(K, GAMMA).unwrap();
    let bbox = SampleBox::new(vec![(-a.sqrt(), a.sqrt()), (0.0, a)]);
    let s = batch_membership_trial(&sys, &dom, &bbox, 100, 20240531, &StepConfig::adaptive(200.0)).unwrap();
    let small = s.samples.iter().filter(|v| v.report.x_final_norm < 1e-3).count();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        s.stayed == 100 && s.lambda_monotone == 100 && small == 100 && secs < 30.0,
        format!(
            "stayed {}/100, λ nonincreasing {}/100, |x1(200)| < 1e-3 {small}/100, {secs:.2} s",
            s.stayed, s.lambda_monotone
        ),
    )
}

fn escape_by_simulation() -> Outcome {
    let eps = 0.1;
    let p = 0.5 * catalog::escape_p_max(K, GAMMA, eps);
    let dom = InvarianceDomain::escape(BoundaryCandidate::linear(p).unwrap(), eps);
    let sys = prototype(K, GAMMA).unwrap();
    let x_hi: f64 = 3.0;
    // |x1 λ| < 1 on the box, so x1 < 0 starts have no finite escape
    let bbox = SampleBox::new(vec![(-x_hi, x_hi), (-0.3, p * x_hi * x_hi - eps)]);
    let s = batch_membership_trial(&sys, &dom, &bbox, 100, 17, &StepConfig::adaptive(50.0)).unwrap();
    let far = s.samples.iter().filter(|v| v.report.min_dist_origin >= eps / 2.0).count();
    outcome(
        far == 100,
        format!("p = {p:.6}, min_dist_origin >= ε/2 {far}/100 (smallest {:.4})", s.min_dist_origin),
    )
}

const CONV_SAMPLES: usize = 1 << 18;

fn envelope_properties() -> Outcome {
    let catalog = [
        "y^2",
        "sqrt(y)",
        "min(y, 0.5) + 0.1*sin(10*y)",
        "y + 0.05*sin(8*y)^2",
        "exp(y) - 1",
        "(y - 0.3)^2",
        "y*(2 + sin(12*y))",
        "ln(1 + 5*y)",
        "tanh(4*y)",
        "1 - cos(6*y)",
    ];
    let monotone = ["y^2", "sqrt(y)", "y + 0.05*sin(8*y)^2", "exp(y) - 1", "ln(1 + 5*y)", "tanh(4*y)"];
    let mut failures = Vec::new();
    for text in catalog {
        let f = ScalarFn::parse(text, "y").unwrap();
        let rep = star_env(&f, 0.0, 0.0, 1.0, 1e-8, 64).unwrap();
        // sample hulls sit above conv(f) by O(h^2); use enough samples to stay inside the slack
        let conv = convex_env(&f, 0.0, 1.0, CONV_SAMPLES).unwrap();
        for (y, s) in rep.envelope.nodes().zip(rep.envelope.values()) {
            let c = conv.eval(y).unwrap();
            let fy = f.eval(y).unwrap();
            if !(c <= s + 1e-9 && *s <= fy + 1e-9) {
                failures.push(format!("{text}: ordering at y = {y}"));
                break;
            }
        }
        if monotone.contains(&text) && !rep.envelope.values().windows(2).all(|w| w[1] >= w[0]) {
            failures.push(format!("{text}: envelope not monotone"));
        }
        if !rep.sup_norm_deltas.windows(2).all(|w| w[1] <= w[0]) {
            failures.push(format!("{text}: deltas {:?}", rep.sup_norm_deltas));
        }
    }
    let root = star_env(&ScalarFn::parse("sqrt(y)", "y").unwrap(), 0.0, 0.0, 1.0, 1e-8, 64).unwrap();
    let lin_err = root
        .envelope
        .nodes()
        .zip(root.envelope.values())
        .map(|(y, v)| (v - y).abs())
        .fold(0.0, f64::max);
    if !(lin_err <= 1e-3) {
        failures.push(format!("sqrt envelope off the chord by {lin_err:e}"));
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} functions, sqrt envelope within {lin_err:.1e} of y on {} intervals", catalog.len(), root.envelope.intervals())
        } else {
            failures.join("; ")
        },
    )
}

/// Regulation synthesis level; small enough that the certified region keeps
/// |x| below 1e-2 for all time.
const REGULATION_A: f64 = 2e-5;

fn synthesis_postcondition() -> Outcome {
    let rb = catalog::regulation_bounds(1.0);
    let syn = match synthesize_tuning_law(&rb.alpha0, &rb.beta, &rb.phi, rb.phi_lipschitz, REGULATION_A, EnvelopeKind::Star) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("synthesis error: {e}")),
    };
    let verdict_ok = syn.a_star > 0.0 && syn.verdict.pass && syn.verdict.margin_max <= 0.0 && syn.verdict.grid_n >= 4096;
    let sys = regulation(0.3, 1.0, &syn).unwrap();
    let dom = syn.domain();
    let psi_a = dom.boundary.eval(syn.a_star).unwrap();
    let r = (2.0 * syn.a_star).sqrt();
    let bbox = SampleBox::new(vec![(-r, r), (0.0, psi_a)]);
    let s = batch_membership_trial(&sys, &dom, &bbox, 20, 4, &StepConfig::adaptive(200.0)).unwrap();
    let small = s.samples.iter().filter(|v| v.report.x_final_norm < 1e-2).count();
    outcome(
        verdict_ok && small == 20,
        format!(
            "a* = {:.3e}, lemma2 margin_max = {:.3e} on {} intervals, |x(200)| < 1e-2 {small}/20 (largest {:.2e}), stayed {}/20",
            syn.a_star, syn.verdict.margin_max, syn.verdict.grid_n, s.max_x_final_norm, s.stayed
        ),
    )
}

fn random_smooth(rng: &mut ChaCha8Rng, depth: usize) -> String {
    if depth == 0 || rng.random_bool(0.25) {
        return match rng.random_range(0..3) {
            0 => "V".to_string(),
            1 => format!("{:.3}", rng.random_range(0.1..2.0)),
            _ => format!("{:.2}*V", rng.random_range(-1.5..1.5)),
        };
    }
    let a = random_smooth(rng, depth - 1);
    match rng.random_range(0..9) {
        0 => format!("({a} + {})", random_smooth(rng, depth - 1)),
        1 => format!("({a} - {})", random_smooth(rng, depth - 1)),
        2 => format!("({a} * {})", random_smooth(rng, depth - 1)),
        3 => format!("sin({a})"),
        4 => format!("cos({a})"),
        5 => format!("tanh({a})"),
        6 => format!("exp(sin({a}))"),
        7 => format!("sqrt(1 + ({a})^2)"),
        _ => format!("({a}) / (2 + cos({}))", random_smooth(rng, depth - 1)),
    }
}

fn integrator_and_derivatives() -> Outcome {
    let decay = SystemModel::from_strings("decay", &["-x1"], "0", "x1^2", &Env::new()).unwrap();
    let err = |h: f64| {
        let tr = integrate(&decay, &[1.0, 0.0], &StepConfig::rk4(h, 1.0)).unwrap();
        (tr.last()[0] - (-1.0f64).exp()).abs()
    };
    let ratios: Vec<f64> = [0.2, 0.1, 0.05].iter().map(|&h| err(h) / err(h / 2.0)).collect();
    let order_ok = ratios.iter().all(|r| (12.0..=20.0).contains(r));

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    let mut worst_expr = String::new();
    for _ in 0..100 {
        let text = random_smooth(&mut rng, 4);
        let e: Expr = parse(&text).unwrap();
        let d = differentiate(&e, "V").unwrap();
        let v = rng.random_range(0.1..2.0);
        let sym = d.eval(&("V", v)).unwrap();
        let fd = fd_derivative(&Bound { expr: &e, var: "V" }, v).unwrap();
        let rel = (sym - fd).abs() / (1.0 + sym.abs());
        if rel > worst {
            worst = rel;
            worst_expr = text;
        }
    }
    outcome(
        order_ok && worst <= 1e-6,
        format!("RK4 ratios {ratios:.2?}; worst symbolic/fd relative gap {worst:.1e} ({worst_expr})"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 cone feasibility", example3_feasibility),
        ("2 lemma agreement", lemma_agreement),
        ("3 small-gain bound", smallgain_reproduction),
        ("4 escape range", escape_range),
        ("5 invariance by simulation", invariance_by_simulation),
        ("6 escape by simulation", escape_by_simulation),
        ("7 envelope properties", envelope_properties),
        ("8 synthesis postcondition", synthesis_postcondition),
        ("9 integrator and derivatives", integrator_and_derivatives),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
