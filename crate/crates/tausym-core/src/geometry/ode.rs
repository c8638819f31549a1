//! Adaptive Dormand–Prince 5(4) integration over generic state vectors.
//!
//! The same integrator drives plain trajectories (`Vec<f64>` state) and
//! jet-transport problems (`Vec<Jet<f64>>` state), which is how two-point
//! maps get exact high-order derivatives: the whole truncated Taylor
//! expansion rides along as the ODE state.

use crate::error::{CalcError, Result};
use crate::jet::{Jet, Ring};

/// State vector for the integrator.
pub trait OdeState: Clone {
    /// self += a * other
    fn axpy(&mut self, a: f64, other: &Self);
    fn scale_mut(&mut self, a: f64);
    /// Max norm, for error control.
    fn norm(&self) -> f64;
}

impl OdeState for Vec<f64> {
    fn axpy(&mut self, a: f64, other: &Self) {
        for (s, o) in self.iter_mut().zip(other) {
            *s += a * o;
        }
    }
    fn scale_mut(&mut self, a: f64) {
        for s in self.iter_mut() {
            *s *= a;
        }
    }
    fn norm(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl<R: Ring> OdeState for Vec<Jet<R>> {
    fn axpy(&mut self, a: f64, other: &Self) {
        for (s, o) in self.iter_mut().zip(other) {
            for (c, d) in s.c.iter_mut().zip(&o.c) {
                *c = c.add(&d.scale(a));
            }
        }
    }
    fn scale_mut(&mut self, a: f64) {
        for s in self.iter_mut() {
            for c in s.c.iter_mut() {
                *c = c.scale(a);
            }
        }
    }
    fn norm(&self) -> f64 {
        self.iter().fold(0.0, |m, j| m.max(j.max_norm()))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    pub tol: f64,
    pub h0: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { tol: 1e-12, h0: 0.1, max_steps: 100_000 }
    }
}

/// Accepted integration nodes (t, state), endpoints included.
#[derive(Clone, Debug)]
pub struct OdePath<S> {
    pub nodes: Vec<(f64, S)>,
}

impl<S: OdeState> OdePath<S> {
    pub fn last(&self) -> &S {
        &self.nodes.last().expect("path is never empty").1
    }

    /// Node index with the largest t not exceeding the query.
    pub fn node_before(&self, t: f64) -> usize {
        match self.nodes.binary_search_by(|(s, _)| s.partial_cmp(&t).unwrap()) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        }
    }
}

const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];

/// 5th-order weights (last A row plus a zero k7 weight, FSAL).
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];

/// Embedded 4th-order weights.
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrate the autonomous system y' = f(y) from t0 to t1, recording
/// accepted nodes.
pub fn integrate<S, F>(f: F, y0: S, t0: f64, t1: f64, opt: &OdeOptions) -> Result<OdePath<S>>
where
    S: OdeState,
    F: Fn(&S) -> S,
{
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let span = (t1 - t0).abs();
    let mut nodes = vec![(t0, y0.clone())];
    if span == 0.0 {
        return Ok(OdePath { nodes });
    }
    let mut t = t0;
    let mut y = y0;
    let mut h = opt.h0.min(span) * dir;
    let mut k1 = f(&y);
    for _ in 0..opt.max_steps {
        if (t - t0).abs() >= span {
            break;
        }
        if (t + h - t0).abs() > span {
            h = t1 - t;
        }
        let mut k = Vec::with_capacity(7);
        k.push(k1.clone());
        for s in 0..6 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate() {
                let a = A[s][j];
                if a != 0.0 {
                    ys.axpy(h * a, kj);
                }
            }
            k.push(f(&ys));
        }
        let y5 = {
            let mut v = y.clone();
            for (j, kj) in k.iter().enumerate() {
                if B5[j] != 0.0 {
                    v.axpy(h * B5[j], kj);
                }
            }
            v
        };
        // embedded 4th-order error
        let err = {
            let mut e = y.clone();
            e.scale_mut(0.0);
            for (j, kj) in k.iter().enumerate() {
                let d = B5[j] - B4[j];
                if d != 0.0 {
                    e.axpy(h * d, kj);
                }
            }
            e.norm()
        };
        let scale = opt.tol * (1.0 + y.norm().max(y5.norm()));
        if err <= scale {
            t += h;
            y = y5;
            k1 = k.pop().expect("k7 present");
            nodes.push((t, y.clone()));
        }
        let ratio = if err > 0.0 { (scale / err).powf(0.2) } else { 5.0 };
        h *= (0.9 * ratio).clamp(0.2, 5.0);
        if h.abs() < 1e-14 * span {
            return Err(CalcError::NoConvergence(
                "step size underflow in Dormand-Prince integration".into(),
            ));
        }
    }
    if (t - t0).abs() < span {
        return Err(CalcError::NoConvergence(format!(
            "integration stopped at t={t} before reaching {t1}"
        )));
    }
    Ok(OdePath { nodes })
}

/// Final state only.
pub fn integrate_to<S, F>(f: F, y0: S, t0: f64, t1: f64, opt: &OdeOptions) -> Result<S>
where
    S: OdeState,
    F: Fn(&S) -> S,
{
    Ok(integrate(f, y0, t0, t1, opt)?.nodes.pop().expect("nonempty").1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_growth_to_machine_tolerance() {
        let f = |y: &Vec<f64>| vec![y[0]];
        let y = integrate_to(f, vec![1.0], 0.0, 1.0, &OdeOptions::default()).unwrap();
        assert!((y[0] - 1f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn harmonic_oscillator_round_trip() {
        let f = |y: &Vec<f64>| vec![y[1], -y[0]];
        let y = integrate_to(
            f,
            vec![1.0, 0.0],
            0.0,
            2.0 * std::f64::consts::PI,
            &OdeOptions::default(),
        )
        .unwrap();
        assert!((y[0] - 1.0).abs() < 1e-9);
        assert!(y[1].abs() < 1e-9);
    }

    #[test]
    fn jet_state_transports_derivatives() {
        // y' = y with y(0) = 1 + δ: y(1) = e (1 + δ), exact in the jet
        let t = crate::multiindex::table(1, 3);
        let y0 = vec![Jet::variable(t.clone(), 0, 1.0)];
        let f = |y: &Vec<Jet<f64>>| vec![y[0].clone()];
        let y = integrate_to(f, y0, 0.0, 1.0, &OdeOptions::default()).unwrap();
        let e = 1f64.exp();
        assert!((y[0].c[0] - e).abs() < 1e-10);
        assert!((y[0].c[1] - e).abs() < 1e-10);
        assert!(y[0].c[2].abs() < 1e-10);
    }

    #[test]
    fn backward_integration_reverses_forward() {
        let f = |y: &Vec<f64>| vec![y[1], -(y[0] + 0.3 * y[0] * y[0])];
        let fwd = integrate_to(f, vec![0.8, 0.1], 0.0, 1.0, &OdeOptions::default()).unwrap();
        let back = integrate_to(f, fwd, 1.0, 0.0, &OdeOptions::default()).unwrap();
        assert!((back[0] - 0.8).abs() < 1e-9);
        assert!((back[1] - 0.1).abs() < 1e-9);
    }

    #[test]
    fn unreachable_tolerance_reports_no_convergence() {
        let f = |y: &Vec<f64>| vec![1.0 / (1e-30 + y[0].abs()).sqrt(), 1.0];
        let r = integrate(f, vec![0.0, 0.0], 0.0, 1.0, &OdeOptions { tol: 1e-14, h0: 0.1, max_steps: 40 });
        assert!(r.is_err());
    }
}
