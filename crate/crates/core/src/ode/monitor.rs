use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{integrate, tol_inv, OdeError, StepConfig, StopReason, SystemModel, Trajectory};
use crate::bounds::FnError;
use crate::domain::InvarianceDomain;

const MAX_DRAWS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonitorReport {
    pub stayed: bool,
    pub first_exit: Option<f64>,
    /// `λ(t_{i+1}) <= λ(t_i) + 1e-9` at every sample.
    pub lambda_monotone: bool,
    pub x_final_norm: f64,
    pub v_final: f64,
    pub lambda_final: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Smallest `√(|x|² + λ²)` over the samples.
    pub min_dist_origin: f64,
    pub stop: StopReason,
}

pub fn monitor(traj: &Trajectory, dom: &InvarianceDomain) -> Result<MonitorReport, FnError> {
    let mut first_exit = None;
    for ((s, &v), &t) in traj.states.iter().zip(&traj.v).zip(&traj.t) {
        let lam = s[s.len() - 1];
        if !dom.contains_within(v, lam, tol_inv(lam))? {
            first_exit = Some(t);
            break;
        }
    }
    let lam: Vec<f64> = traj.lambda().collect();
    let last = traj.last();
    let x_norm = |s: &[f64]| s[..s.len() - 1].iter().map(|c| c * c).sum::<f64>().sqrt();
    let min_dist = traj
        .states
        .iter()
        .map(|s| {
            let x = x_norm(s);
            let l = s[s.len() - 1];
            (x * x + l * l).sqrt()
        })
        .fold(f64::INFINITY, f64::min);
    let blown = matches!(traj.stop, StopReason::Blowup | StopReason::StepCollapse);
    Ok(MonitorReport {
        stayed: first_exit.is_none() && !blown,
        first_exit,
        lambda_monotone: lam.windows(2).all(|w| w[1] <= w[0] + 1e-9),
        x_final_norm: x_norm(last),
        v_final: *traj.v.last().expect("initial sample"),
        lambda_final: *lam.last().expect("initial sample"),
        lambda_min: lam.iter().copied().fold(f64::INFINITY, f64::min),
        lambda_max: lam.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min_dist_origin: min_dist,
        stop: traj.stop,
    })
}

/// Axis-aligned sampling box over `(x1, .., xn, λ)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleBox {
    pub ranges: Vec<(f64, f64)>,
}

impl SampleBox {
    pub fn new(ranges: Vec<(f64, f64)>) -> Self {
        SampleBox { ranges }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.ranges
            .iter()
            .map(|&(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleVerdict {
    pub index: usize,
    pub init: Vec<f64>,
    pub report: MonitorReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchSummary {
    pub seed: u64,
    pub n_samples: usize,
    pub draws: usize,
    pub stayed: usize,
    pub lambda_monotone: usize,
    pub blowups: usize,
    pub max_x_final_norm: f64,
    pub min_dist_origin: f64,
    pub samples: Vec<SampleVerdict>,
}

/// Draws initial points uniformly from `bbox`, keeps those inside `dom`,
/// simulates each and aggregates the monitors in sample order.
pub fn batch_membership_trial(
    sys: &SystemModel,
    dom: &InvarianceDomain,
    bbox: &SampleBox,
    n_samples: usize,
    seed: u64,
    cfg: &StepConfig,
) -> Result<BatchSummary, OdeError> {
    if bbox.ranges.len() != sys.dim() {
        return Err(OdeError::Init(format!(
            "sample box has {} ranges for a {}-dimensional state",
            bbox.ranges.len(),
            sys.dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inits = Vec::with_capacity(n_samples);
    let mut draws = 0;
    while inits.len() < n_samples {
        if draws >= MAX_DRAWS {
            return Err(OdeError::EmptyDomain(draws));
        }
        draws += 1;
        let y = bbox.draw(&mut rng);
        let v = sys.v_of(&y[..sys.n_x()])?;
        if dom.contains(v, y[sys.n_x()])? {
            inits.push(y);
        }
    }
    let samples = inits
        .into_par_iter()
        .enumerate()
        .map(|(index, init)| -> Result<SampleVerdict, OdeError> {
            let traj = integrate(sys, &init, cfg)?;
            let report = monitor(&traj, dom)?;
            Ok(SampleVerdict { index, init, report })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let count = |f: &dyn Fn(&MonitorReport) -> bool| samples.iter().filter(|s| f(&s.report)).count();
    Ok(BatchSummary {
        seed,
        n_samples,
        draws,
        stayed: count(&|r| r.stayed),
        lambda_monotone: count(&|r| r.lambda_monotone),
        blowups: count(&|r| matches!(r.stop, StopReason::Blowup | StopReason::StepCollapse)),
        max_x_final_norm: samples.iter().map(|s| s.report.x_final_norm).fold(0.0, f64::max),
        min_dist_origin: samples.iter().map(|s| s.report.min_dist_origin).fold(f64::INFINITY, f64::min),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::certificates::BoundaryCandidate;
    use crate::ode::prototype;

    fn cone(p: f64) -> InvarianceDomain {
        InvarianceDomain::bounded(BoundaryCandidate::linear(p).unwrap(), catalog::example3_a(p, 1.0, 0.1))
    }

    #[test]
    fn boundary_start_stays_and_converges() {
        let dom = cone(1.0);
        let sys = prototype(1.0, 0.1).unwrap();
        let v0 = 0.9 * dom.a;
        let tr = integrate(&sys, &[v0.sqrt(), v0], &StepConfig::adaptive(50.0)).unwrap();
        let r = monitor(&tr, &dom).unwrap();
        assert!(r.stayed && r.lambda_monotone);
        assert!(r.x_final_norm < 1e-3);
    }

    #[test]
    fn escape_start_keeps_distance() {
        let eps = 0.1;
        let p = 0.5 * catalog::escape_p_max(1.0, 0.1, eps);
        let dom = InvarianceDomain::escape(BoundaryCandidate::linear(p).unwrap(), eps);
        let sys = prototype(1.0, 0.1).unwrap();
        let x0: f64 = 2.0;
        let tr = integrate(&sys, &[x0, p * x0 * x0 - 2.0 * eps], &StepConfig::adaptive(50.0)).unwrap();
        let r = monitor(&tr, &dom).unwrap();
        assert!(r.stayed);
        assert!(r.min_dist_origin >= eps / 2.0);
    }

    #[test]
    fn batch_is_deterministic() {
        let dom = cone(1.0);
        let sys = prototype(1.0, 0.1).unwrap();
        let a = dom.a;
        let bbox = SampleBox::new(vec![(-a.sqrt(), a.sqrt()), (0.0, a)]);
        let cfg = StepConfig::adaptive(10.0);
        let s1 = batch_membership_trial(&sys, &dom, &bbox, 8, 7, &cfg).unwrap();
        let s2 = batch_membership_trial(&sys, &dom, &bbox, 8, 7, &cfg).unwrap();
        assert_eq!(format!("{s1:?}"), format!("{s2:?}"));
        assert_eq!(s1.stayed, 8);
        let empty = batch_membership_trial(&sys, &dom, &bbox, 0, 7, &cfg).unwrap();
        assert_eq!((empty.n_samples, empty.samples.len()), (0, 0));
    }

    #[test]
    fn empty_domain_is_reported() {
        let dom = cone(1.0);
        let sys = prototype(1.0, 0.1).unwrap();
        let bbox = SampleBox::new(vec![(5.0, 6.0), (-2.0, -1.0)]);
        assert!(matches!(
            batch_membership_trial(&sys, &dom, &bbox, 1, 0, &StepConfig::adaptive(1.0)),
            Err(OdeError::EmptyDomain(_))
        ));
    }
}
