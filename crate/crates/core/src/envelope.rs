//! One-dimensional star-shaped and convex envelopes.
//!
//! The star-shaped envelope of `f` with respect to a base point `x` is the
//! infimum over `z` of the chord minorants `phi_{z,x}`: `f(y)` replaced by the
//! chord from `(x, f(x))` to `(z, f(z))` wherever that chord passes below it.
//! It is computed on nested chord grids that double until the sup-norm
//! change drops below a tolerance. Local extrema of the chord slope between
//! nodes are polished by golden-section search, so a level is exact once
//! every basin of the slope has a node in it.
//!
//! Convention: a function is star-shaped with respect to the origin when
//! its epigraph is, i.e. `f(γV) <= γ f(V)` for `f(0) = 0` and `γ ∈ [0, 1]`.
//! Chords from the base lie on or above the graph, which gives
//! `conv(f) <= star(f) <= f`.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bounds::{FnError, ScalarFn};
use crate::grid::{uniform_nodes, GridError, GridFunction};

pub const DEFAULT_OUTPUT_INTERVALS: usize = 4096;
pub const DEFAULT_ENVELOPE_TOL: f64 = 1e-8;
pub const MAX_DOUBLINGS: usize = 16;
const STAR_SLACK: f64 = 1e-12;
const GOLDEN_ITERS: usize = 120;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvelopeError {
    #[error("degenerate chord: z = x = {0}")]
    DegenerateChord(f64),
    #[error("base point {x} outside [{lo}, {hi}]")]
    BaseOutside { x: f64, lo: f64, hi: f64 },
    #[error("f(0) = {0} is not zero")]
    NotZeroAtOrigin(f64),
    #[error("non-finite value {value} at {at}")]
    NonFinite { at: f64, value: f64 },
    #[error(transparent)]
    Fn(#[from] FnError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// `min(f(y), chord_{x,z}(y))` when `y` lies strictly between `x` and `z`,
/// `f(y)` otherwise.
pub fn chord_minorant(f: &ScalarFn, x: f64, z: f64, y: f64) -> Result<f64, EnvelopeError> {
    if z == x {
        return Err(EnvelopeError::DegenerateChord(x));
    }
    let fy = f.eval(y)?;
    let t = (y - x) / (z - x);
    if !(t > 0.0 && t < 1.0) {
        return Ok(fy);
    }
    let chord = (1.0 - t) * f.eval(x)? + t * f.eval(z)?;
    Ok(fy.min(chord))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EnvelopeKind {
    Star,
    Convex,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeReport {
    pub envelope: GridFunction,
    /// Chord-grid levels evaluated.
    pub iterations: usize,
    /// Sup-norm change between consecutive levels.
    pub sup_norm_deltas: Vec<f64>,
    pub base_point: f64,
    /// Intervals of the finest chord grid used.
    pub chord_intervals: usize,
    pub converged: bool,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct StarEnvConfig {
    pub tol: f64,
    /// Intervals of the first chord grid.
    pub n0: usize,
    /// Intervals of the output grid.
    pub output_intervals: usize,
    pub max_doublings: usize,
    /// Refine local slope extrema between chord nodes.
    pub refine: bool,
}

impl Default for StarEnvConfig {
    fn default() -> Self {
        StarEnvConfig {
            tol: DEFAULT_ENVELOPE_TOL,
            n0: 64,
            output_intervals: DEFAULT_OUTPUT_INTERVALS,
            max_doublings: MAX_DOUBLINGS,
            refine: true,
        }
    }
}

fn sample_finite(f: &ScalarFn, nodes: &[f64]) -> Result<Vec<f64>, EnvelopeError> {
    nodes
        .par_iter()
        .map(|&y| {
            let v = f.eval(y)?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(EnvelopeError::NonFinite { at: y, value: v })
            }
        })
        .collect()
}

/// Golden-section search for the minimum of `g` on `[l, r]`; returns the best
/// point evaluated.
fn golden_min(g: &dyn Fn(f64) -> Result<f64, EnvelopeError>, mut l: f64, mut r: f64) -> Result<(f64, f64), EnvelopeError> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut best = (l, g(l)?);
    let gr = g(r)?;
    if gr < best.1 {
        best = (r, gr);
    }
    let mut c = r - INV_PHI * (r - l);
    let mut d = l + INV_PHI * (r - l);
    let (mut gc, mut gd) = (g(c)?, g(d)?);
    for _ in 0..GOLDEN_ITERS {
        if gc < best.1 {
            best = (c, gc);
        }
        if gd < best.1 {
            best = (d, gd);
        }
        if r - l <= 4.0 * f64::EPSILON * r.abs().max(l.abs()).max(f64::MIN_POSITIVE) {
            break;
        }
        if gc <= gd {
            r = d;
            d = c;
            gd = gc;
            c = r - INV_PHI * (r - l);
            gc = g(c)?;
        } else {
            l = c;
            c = d;
            gc = gd;
            d = l + INV_PHI * (r - l);
            gd = g(d)?;
        }
    }
    Ok(best)
}

/// Chord endpoints and their slopes from `(x, fx)`, grid nodes plus the local
/// slope extrema refined inside their bracketing grid cells. Sorted by `z`.
fn chord_candidates(
    f: &ScalarFn,
    chord_nodes: &[f64],
    chord_vals: &[f64],
    x: f64,
    fx: f64,
    refine: bool,
) -> Result<(Vec<f64>, Vec<f64>), EnvelopeError> {
    let k = chord_nodes.len();
    let slopes: Vec<f64> = (0..k)
        .map(|i| (chord_vals[i] - fx) / (chord_nodes[i] - x))
        .collect();
    let mut zs = chord_nodes.to_vec();
    let mut ss = slopes.clone();
    if refine {
        // right of x the envelope takes slope minima, left of x maxima
        let mut brackets = Vec::new();
        for i in 0..k {
            let z = chord_nodes[i];
            if z == x {
                continue;
            }
            let sign = if z > x { 1.0 } else { -1.0 };
            let side = |j: usize| (chord_nodes[j] - x) * sign > 0.0;
            let lower = i > 0 && side(i - 1);
            let upper = i + 1 < k && side(i + 1);
            let prev_worse = !lower || sign * slopes[i - 1] > sign * slopes[i];
            let next_not_better = !upper || sign * slopes[i + 1] >= sign * slopes[i];
            if prev_worse && next_not_better && (lower || upper) {
                let l = if lower { chord_nodes[i - 1] } else { z };
                let r = if upper { chord_nodes[i + 1] } else { z };
                brackets.push((l, r, sign));
            }
        }
        let refined: Vec<(f64, f64)> = brackets
            .par_iter()
            .map(|&(l, r, sign)| {
                let g = |z: f64| -> Result<f64, EnvelopeError> {
                    let v = f.eval(z)?;
                    if !v.is_finite() {
                        return Err(EnvelopeError::NonFinite { at: z, value: v });
                    }
                    Ok(sign * (v - fx) / (z - x))
                };
                golden_min(&g, l, r).map(|(z, gz)| (z, sign * gz))
            })
            .collect::<Result<_, _>>()?;
        if !refined.is_empty() {
            let mut all: Vec<(f64, f64)> = zs.iter().copied().zip(ss.iter().copied()).chain(refined).collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0));
            zs = all.iter().map(|p| p.0).collect();
            ss = all.iter().map(|p| p.1).collect();
        }
    }
    Ok((zs, ss))
}

/// One chord level: `min(f(y), inf_z chord_{x,z}(y))` over the chord
/// candidates, using running extrema of the chord slopes seen from the base
/// point.
fn chord_level(out_nodes: &[f64], out_vals: &[f64], zs: &[f64], slopes: &[f64], x: f64, fx: f64) -> Vec<f64> {
    let k = zs.len();
    // suffix minimum of slopes over candidates right of x
    let mut suffix_min = vec![f64::INFINITY; k + 1];
    for i in (0..k).rev() {
        let s = if zs[i] > x { slopes[i] } else { f64::INFINITY };
        suffix_min[i] = suffix_min[i + 1].min(s);
    }
    // prefix maximum of slopes over candidates left of x
    let mut prefix_max = vec![f64::NEG_INFINITY; k + 1];
    for i in 0..k {
        let s = if zs[i] < x { slopes[i] } else { f64::NEG_INFINITY };
        prefix_max[i + 1] = prefix_max[i].max(s);
    }
    out_nodes
        .iter()
        .zip(out_vals)
        .map(|(&y, &fy)| {
            let s = if y > x {
                suffix_min[zs.partition_point(|&z| z <= y)]
            } else if y < x {
                prefix_max[zs.partition_point(|&z| z < y)]
            } else {
                f64::NAN
            };
            if s.is_finite() {
                fy.min(fx + (y - x) * s)
            } else {
                fy
            }
        })
        .collect()
}

/// Star-shaped envelope of `f` on `[lo, hi]` with respect to `x`, using the
/// default output grid.
pub fn star_env(f: &ScalarFn, x: f64, lo: f64, hi: f64, tol: f64, n0: usize) -> Result<EnvelopeReport, EnvelopeError> {
    star_env_with(
        f,
        x,
        lo,
        hi,
        &StarEnvConfig {
            tol,
            n0,
            ..StarEnvConfig::default()
        },
    )
}

pub fn star_env_with(f: &ScalarFn, x: f64, lo: f64, hi: f64, cfg: &StarEnvConfig) -> Result<EnvelopeReport, EnvelopeError> {
    if !(x >= lo && x <= hi) {
        return Err(EnvelopeError::BaseOutside { x, lo, hi });
    }
    let out_nodes: Vec<f64> = uniform_nodes(lo, hi, cfg.output_intervals.max(2)).collect();
    let out_vals = sample_finite(f, &out_nodes)?;
    let fx = f.eval(x)?;
    if !fx.is_finite() {
        return Err(EnvelopeError::NonFinite { at: x, value: fx });
    }

    let mut m = cfg.n0.max(1);
    let mut chord_nodes: Vec<f64> = uniform_nodes(lo, hi, m).collect();
    let mut chord_vals = sample_finite(f, &chord_nodes)?;
    let level = |nodes: &[f64], vals: &[f64]| -> Result<Vec<f64>, EnvelopeError> {
        let (zs, ss) = chord_candidates(f, nodes, vals, x, fx, cfg.refine)?;
        Ok(chord_level(&out_nodes, &out_vals, &zs, &ss, x, fx))
    };
    let mut current = level(&chord_nodes, &chord_vals)?;
    let mut deltas = Vec::new();
    let mut converged = false;

    for _ in 0..cfg.max_doublings {
        // refine: keep the old nodes at even indices, sample only the new ones
        let m2 = 2 * m;
        let fresh: Vec<f64> = uniform_nodes(lo, hi, m2).skip(1).step_by(2).collect();
        let fresh_vals = sample_finite(f, &fresh)?;
        let mut nodes = Vec::with_capacity(m2 + 1);
        let mut vals = Vec::with_capacity(m2 + 1);
        for i in 0..m {
            nodes.push(chord_nodes[i]);
            vals.push(chord_vals[i]);
            nodes.push(fresh[i]);
            vals.push(fresh_vals[i]);
        }
        nodes.push(chord_nodes[m]);
        vals.push(chord_vals[m]);
        chord_nodes = nodes;
        chord_vals = vals;
        m = m2;

        // every level value is an attained chord, so keep the running minimum
        let next: Vec<f64> = level(&chord_nodes, &chord_vals)?
            .into_iter()
            .zip(&current)
            .map(|(a, &b)| a.min(b))
            .collect();
        let delta = current
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        deltas.push(delta);
        current = next;
        if delta <= cfg.tol {
            converged = true;
            break;
        }
    }

    let warning = (!converged).then(|| {
        format!(
            "no convergence to {} after {} doublings (last change {:e})",
            cfg.tol,
            cfg.max_doublings,
            deltas.last().copied().unwrap_or(f64::NAN)
        )
    });
    Ok(EnvelopeReport {
        envelope: GridFunction::new(lo, hi, current)?,
        iterations: deltas.len() + 1,
        sup_norm_deltas: deltas,
        base_point: x,
        chord_intervals: m,
        converged,
        warning,
    })
}

/// Lower convex hull of the `n + 1` uniform samples, evaluated at the nodes.
pub fn convex_env(f: &ScalarFn, lo: f64, hi: f64, n: usize) -> Result<GridFunction, EnvelopeError> {
    let nodes: Vec<f64> = uniform_nodes(lo, hi, n.max(2)).collect();
    let vals = sample_finite(f, &nodes)?;
    Ok(GridFunction::new(lo, hi, lower_hull_values(&nodes, &vals))?)
}

/// Monotone-chain lower hull through `(xs[i], ys[i])`, `xs` increasing,
/// evaluated back at `xs`.
pub fn lower_hull_values(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let mut hull: Vec<usize> = Vec::with_capacity(xs.len());
    for i in 0..xs.len() {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            // drop b unless it lies strictly below segment a -> i
            let cross = (xs[b] - xs[a]) * (ys[i] - ys[a]) - (ys[b] - ys[a]) * (xs[i] - xs[a]);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let mut out = vec![0.0; xs.len()];
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        out[a] = ys[a];
        for j in a + 1..b {
            let t = (xs[j] - xs[a]) / (xs[b] - xs[a]);
            out[j] = ys[a] + t * (ys[b] - ys[a]);
        }
    }
    if let Some(&last) = hull.last() {
        out[last] = ys[last];
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StarWitness {
    pub v: f64,
    pub gamma: f64,
    /// `f(γV) - γ f(V)`.
    pub excess: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StarTest {
    pub pass: bool,
    /// Largest violation on the grid; ties go to smaller `V`, then smaller `γ`.
    pub witness: Option<StarWitness>,
}

/// Tests `f(γV) <= γ f(V)` for `V` on a grid over `(0, a]` and `γ` on a grid
/// over `(0, 1)`.
pub fn is_star_shaped(f: &ScalarFn, a: f64, grid_n: usize) -> Result<StarTest, EnvelopeError> {
    let f0 = f.eval(0.0)?;
    if f0.abs() > STAR_SLACK {
        return Err(EnvelopeError::NotZeroAtOrigin(f0));
    }
    let n = grid_n.max(2);
    let vs: Vec<f64> = uniform_nodes(0.0, a, n).skip(1).collect();
    let worst_per_v = vs
        .par_iter()
        .map(|&v| -> Result<Option<StarWitness>, EnvelopeError> {
            let fv = f.eval(v)?;
            let mut worst: Option<StarWitness> = None;
            for i in 1..n {
                let gamma = i as f64 / n as f64;
                let excess = f.eval(gamma * v)? - gamma * fv;
                if excess > STAR_SLACK && worst.is_none_or(|w| excess > w.excess) {
                    worst = Some(StarWitness { v, gamma, excess });
                }
            }
            Ok(worst)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let witness = worst_per_v
        .into_iter()
        .flatten()
        .fold(None::<StarWitness>, |best, w| match best {
            Some(b) if b.excess >= w.excess => Some(b),
            _ => Some(w),
        });
    Ok(StarTest {
        pass: witness.is_none(),
        witness,
    })
}
