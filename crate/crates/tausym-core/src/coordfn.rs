//! Smooth periodic coordinate functions with exact derivatives.
//!
//! Every x-dependent primitive in the engine (metric entries, Christoffel
//! components, potentials, localizers) is a `CoordFn`: a small expression
//! tree over trigonometric polynomials and compactly supported plateau
//! bumps.  Evaluation produces jets, so all derivatives are exact.

use crate::jet::{scalar, Jet};
use crate::multiindex::{table, IndexTable};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// One trigonometric term `amp * cos(k·x + phase)`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrigTerm {
    pub amp: f64,
    /// Integer frequency vector (periodicity is structural).
    pub freq: Vec<i32>,
    #[serde(default)]
    pub phase: f64,
}

/// Smooth expression in the spatial variable.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub enum CoordFn {
    Const(f64),
    /// `c + Σ amp cos(k·x + phase)`; frequencies are in lattice units, so the
    /// function has the box periodicity by construction.
    Trig { c: f64, terms: Vec<TrigTerm> },
    /// Plateau bump in coordinate `axis`: 0 outside `[lo, hi]`, 1 on
    /// `[lo+shoulder, hi-shoulder]`, with smooth monotone shoulders.
    /// Requires `hi - lo <` period; the bump is repeated periodically.
    Bump { axis: usize, lo: f64, hi: f64, shoulder: f64 },
    Sum(Vec<CoordFn>),
    Product(Vec<CoordFn>),
    Scale(f64, Box<CoordFn>),
    /// exp of the inner expression (conformal factors and the like).
    Exp(Box<CoordFn>),
    /// Partial derivative of the inner expression.
    Deriv(usize, Box<CoordFn>),
}

impl CoordFn {
    pub fn zero() -> CoordFn {
        CoordFn::Const(0.0)
    }

    pub fn cos(amp: f64, freq: Vec<i32>) -> CoordFn {
        CoordFn::Trig { c: 0.0, terms: vec![TrigTerm { amp, freq, phase: 0.0 }] }
    }

    pub fn sin(amp: f64, freq: Vec<i32>) -> CoordFn {
        CoordFn::Trig {
            c: 0.0,
            terms: vec![TrigTerm { amp, freq, phase: -std::f64::consts::FRAC_PI_2 }],
        }
    }

    /// Evaluate as a jet in the given x-jet arguments (one jet per
    /// coordinate; all must share a table).
    pub fn eval_jet(&self, period: f64, args: &[Jet<f64>]) -> Jet<f64> {
        let t = args[0].table.clone();
        let ord = t.order;
        match self {
            CoordFn::Const(v) => Jet::constant(t, *v),
            CoordFn::Trig { c, terms } => {
                let mut acc = Jet::constant(t.clone(), *c);
                let scale = 2.0 * std::f64::consts::PI / period;
                for tm in terms {
                    // u = k·x + phase as a jet
                    let mut u = Jet::constant(t.clone(), tm.phase);
                    for (k, &f) in tm.freq.iter().enumerate() {
                        if f != 0 {
                            u.add_assign(&args[k].scale(f as f64 * scale));
                        }
                    }
                    let cosj = u.compose_scalar(&scalar::cos_f(u.c[0], ord));
                    acc.add_assign(&cosj.scale(tm.amp));
                }
                acc
            }
            CoordFn::Bump { axis, lo, hi, shoulder } => {
                bump_jet(period, &args[*axis], *lo, *hi, *shoulder)
            }
            CoordFn::Sum(parts) => {
                let mut acc = Jet::zero(t);
                for p in parts {
                    acc.add_assign(&p.eval_jet(period, args));
                }
                acc
            }
            CoordFn::Product(parts) => {
                let mut acc = Jet::constant(t, 1.0);
                for p in parts {
                    acc = acc.mul(&p.eval_jet(period, args));
                }
                acc
            }
            CoordFn::Scale(s, inner) => inner.eval_jet(period, args).scale(*s),
            CoordFn::Exp(inner) => inner.eval_jet(period, args).exp(),
            CoordFn::Deriv(k, inner) => {
                // coordinate derivative along arbitrary jet arguments: seed a
                // fresh auxiliary variable into slot k and read off its
                // linear coefficient
                let aug = table(t.nv + 1, ord + 1);
                let eps = Jet::variable(aug.clone(), t.nv, 0.0);
                let lifted: Vec<Jet<f64>> = args
                    .iter()
                    .enumerate()
                    .map(|(j, a)| {
                        let mut v = a.extend_vars(aug.clone());
                        if j == *k {
                            v.add_assign(&eps);
                        }
                        v
                    })
                    .collect();
                inner.eval_jet(period, &lifted).last_var_linear(t)
            }
        }
    }

    /// Point evaluation.
    pub fn eval(&self, period: f64, x: &[f64]) -> f64 {
        let t = table(x.len(), 0);
        let args: Vec<Jet<f64>> = x.iter().map(|&v| Jet::constant(t.clone(), v)).collect();
        *self.eval_jet(period, &args).value()
    }

    /// Jet in all coordinates around the point x.
    pub fn jet_at(&self, period: f64, x: &[f64], order: usize) -> Jet<f64> {
        let t = table(x.len(), order);
        let args: Vec<Jet<f64>> =
            (0..x.len()).map(|k| Jet::variable(t.clone(), k, x[k])).collect();
        self.eval_jet(period, &args)
    }
}

/// Variable jets for a point, over a shared fresh table.
pub fn point_jets(x: &[f64], order: usize) -> (Arc<IndexTable>, Vec<Jet<f64>>) {
    let t = table(x.len(), order);
    let args = (0..x.len()).map(|k| Jet::variable(t.clone(), k, x[k])).collect();
    (t, args)
}

/// Smooth step: 0 for t <= 0, 1 for t >= 1, built from the normalized
/// integral of exp(-1/(t(1-t))).
pub fn smooth_step_derivs(t0: f64, jmax: usize) -> Vec<f64> {
    if t0 <= 1e-12 {
        return vec![0.0; jmax + 1];
    }
    if t0 >= 1.0 - 1e-12 {
        let mut v = vec![0.0; jmax + 1];
        v[0] = 1.0;
        return v;
    }
    let z = step_normalizer();
    let mut out = Vec::with_capacity(jmax + 1);
    out.push(step_integral(t0) / z);
    if jmax >= 1 {
        // derivative of the step is bump(t)/Z; higher derivatives via 1-jet
        // arithmetic on the bump itself
        let derivs = bump_exp_derivs(t0, jmax - 1);
        for d in derivs {
            out.push(d / z);
        }
    }
    out
}

/// exp(-1/(t(1-t))) and its derivatives at an interior point, via univariate
/// jet arithmetic (exact).
fn bump_exp_derivs(t0: f64, jmax: usize) -> Vec<f64> {
    let t = crate::jet::unijet(jmax.max(1), t0);
    let one = Jet::constant(t.table.clone(), 1.0);
    let prod = t.mul(&one.sub(&t)); // t(1-t), positive in (0,1)
    let w = prod.recip().neg();
    let b = w.sub(&Jet::constant(t.table.clone(), w.c[0])).exp_nilpotent().scale(w.c[0].exp());
    (0..=jmax).map(|k| b.derivative(&[k as u8])).collect()
}

fn bump_exp(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        (-1.0 / (t * (1.0 - t))).exp()
    }
}

fn step_integral(t0: f64) -> f64 {
    // the integrand is flat at 0; endpoint corrections at t0 push the
    // trapezoid error below 1e-16
    let n = 2000;
    let h = t0 / n as f64;
    let mut s = 0.0;
    for i in 0..=n {
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        s += w * bump_exp(i as f64 * h);
    }
    let mut out = s * h;
    if t0 < 1.0 {
        let d = bump_exp_derivs(t0, 3);
        out -= h * h / 12.0 * d[1];
        out += h.powi(4) / 720.0 * d[3];
    }
    out
}

use std::sync::OnceLock;
static STEP_Z: OnceLock<f64> = OnceLock::new();

fn step_normalizer() -> f64 {
    *STEP_Z.get_or_init(|| step_integral(1.0))
}

/// Plateau bump as a jet: product of an ascending shoulder at `lo` and a
/// descending shoulder at `hi`, evaluated on the periodic lift of x closest
/// to the bump's center.
fn bump_jet(period: f64, xj: &Jet<f64>, lo: f64, hi: f64, shoulder: f64) -> Jet<f64> {
    assert!(hi > lo && hi - lo < period, "bump support must fit in one period");
    assert!(2.0 * shoulder <= hi - lo, "shoulders overlap");
    let center = 0.5 * (lo + hi);
    let x0 = xj.c[0];
    let shift = ((x0 - center) / period).round() * period;
    let x = xj.sub(&Jet::constant(xj.table.clone(), shift));
    // ascending edge
    let ua = x.sub(&Jet::constant(x.table.clone(), lo)).scale(1.0 / shoulder);
    let sa = ua.compose_scalar(&smooth_step_derivs(ua.c[0], x.table.order));
    // descending edge
    let ub = Jet::constant(x.table.clone(), hi).sub(&x).scale(1.0 / shoulder);
    let sb = ub.compose_scalar(&smooth_step_derivs(ub.c[0], x.table.order));
    sa.mul(&sb)
}
