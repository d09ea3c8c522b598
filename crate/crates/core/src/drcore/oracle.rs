//! Brute-force evaluation of the linearised inner minimisation, for
//! checking the closed form on tiny instances.

use std::f64::consts::PI;

use super::{DrConfig, GradientEstimate, PNorm};
use crate::error::{Error, Result};

const MAX_MEMBERS: usize = 2;
const MAX_DIM: usize = 3;

/// Minimises `(1/B) Σ_b j0_b + <g_b, v_b>` over perturbations inside the
/// ball, by grids over directions and over the split of the radius budget
/// between members, each followed by a local refinement.
pub fn worstcase_oracle(j0: &[f64], grads: &GradientEstimate, config: &DrConfig, resolution: usize) -> Result<f64> {
    let b = grads.members();
    if b == 0 || b > MAX_MEMBERS || j0.len() != b {
        return Err(Error::OracleRefused(format!("oracle handles 1..={MAX_MEMBERS} members with matching returns, got {b}")));
    }
    if grads.grads.iter().any(|g| g.len() > MAX_DIM) {
        return Err(Error::OracleRefused(format!("oracle handles score dimension <= {MAX_DIM}")));
    }
    if resolution < 2 {
        return Err(Error::OracleRefused("grid resolution must be at least 2".into()));
    }
    config.validate()?;
    let nominal = j0.iter().sum::<f64>() / b as f64;
    let eps = config.epsilon;
    if eps == 0.0 {
        return Ok(nominal);
    }
    // Per unit of radius, the best each member can do.
    let c: Vec<f64> = grads.grads.iter().map(|g| min_on_sphere(g, resolution)).collect();
    let loss = |m: &[f64]| m.iter().zip(&c).map(|(m, c)| m * c).sum::<f64>() / b as f64;
    let grid = |hi: f64, i: usize| hi * i as f64 / resolution as f64;

    let best = if b == 1 {
        (0..=resolution).map(|i| loss(&[grid(eps, i)])).fold(f64::INFINITY, f64::min)
    } else if config.p == PNorm::Infinity {
        let mut best = f64::INFINITY;
        for i in 0..=resolution {
            for k in 0..=resolution {
                best = best.min(loss(&[grid(eps, i), grid(eps, k)]));
            }
        }
        best
    } else {
        let p = if config.p == PNorm::One { 1.0 } else { 2.0 };
        let budget = 2.0 * eps.powf(p);
        let partner = |m1: f64| (budget - m1.powf(p)).max(0.0).powf(1.0 / p);
        let m1_max = budget.powf(1.0 / p);
        let mut best = f64::INFINITY;
        let mut best_m1 = 0.0;
        for i in 0..=resolution {
            let m1 = grid(m1_max, i);
            let m2_max = partner(m1);
            for k in 0..=resolution {
                let v = loss(&[m1, grid(m2_max, k)]);
                if v < best {
                    best = v;
                    best_m1 = m1;
                }
            }
        }
        let step = m1_max / resolution as f64;
        let refined = golden_min(
            |m1| loss(&[m1, partner(m1)]),
            (best_m1 - step).max(0.0),
            (best_m1 + step).min(m1_max),
        );
        best.min(refined)
    };
    Ok(nominal + best)
}

/// Approximate `min_{|u| = 1} <g, u>` over a direction grid, then polished by
/// a shrinking local search.
fn min_on_sphere(g: &[f64], resolution: usize) -> f64 {
    let dot = |u: &[f64]| u.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
    match g.len() {
        0 => 0.0,
        1 => g[0].min(-g[0]),
        2 => {
            let at = |a: f64| dot(&[a.cos(), a.sin()]);
            let n = 2 * resolution;
            let step = 2.0 * PI / n as f64;
            let a0 = (0..n).map(|i| i as f64 * step).min_by(|x, y| at(*x).total_cmp(&at(*y))).unwrap();
            golden_min(at, a0 - step, a0 + step).min(at(a0))
        }
        _ => {
            let at = |t: f64, f: f64| dot(&[t.sin() * f.cos(), t.sin() * f.sin(), t.cos()]);
            let (nt, nf) = (resolution, 2 * resolution);
            let (st, sf) = (PI / nt as f64, 2.0 * PI / nf as f64);
            let mut best = (f64::INFINITY, 0.0, 0.0);
            for i in 0..=nt {
                for k in 0..nf {
                    let (t, f) = (i as f64 * st, k as f64 * sf);
                    let v = at(t, f);
                    if v < best.0 {
                        best = (v, t, f);
                    }
                }
            }
            let (mut v, mut t, mut f) = best;
            let mut h = st;
            for _ in 0..60 {
                let mut moved = false;
                for (dt, df) in [(h, 0.0), (-h, 0.0), (0.0, h), (0.0, -h)] {
                    let w = at(t + dt, f + df);
                    if w < v {
                        (v, t, f) = (w, t + dt, f + df);
                        moved = true;
                    }
                }
                if !moved {
                    h *= 0.5;
                }
            }
            v
        }
    }
}

fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..100 {
        if fa < fb {
            hi = b;
            (b, fb) = (a, fa);
            a = hi - r * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            (a, fa) = (b, fb);
            b = lo + r * (hi - lo);
            fb = f(b);
        }
    }
    f(lo).min(f(hi)).min(fa).min(fb)
}
