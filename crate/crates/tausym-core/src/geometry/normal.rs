//! Normal coordinate charts around a base point.
//!
//! The chart is carried as a pair of truncated Taylor expansions: the
//! forward map sends a chart offset to normal coordinates (the initial
//! velocity of the connecting geodesic) and the inverse map sends normal
//! coordinates back to chart coordinates via the exponential map.  Both are
//! read off the master two-point jets; the low orders are cross-checked
//! against Richardson-extrapolated finite differences of the pointwise
//! exponential map so a quietly diverging jet integration cannot slip
//! through.

use super::twopoint::master_jets;
use super::ManifoldModel;
use crate::error::{CalcError, Result};
use crate::jet::Jet;
use crate::multiindex::table;

#[derive(Clone, Debug)]
pub struct NormalChart {
    pub x: Vec<f64>,
    pub period: f64,
    pub order: usize,
    /// forward^i(δ): normal coordinates of the point x+δ (value 0 at δ=0).
    pub forward: Vec<Jet<f64>>,
    /// inverse^i(u): chart coordinates of the point with normal coordinates
    /// u (value x at u=0).
    pub inverse: Vec<Jet<f64>>,
}

pub fn normal_coordinates(m: &ManifoldModel, x: &[f64], order: usize) -> Result<NormalChart> {
    let n = m.dim;
    let mj = master_jets(m, x, order)?;
    let t = table(n, order);
    let forward: Vec<Jet<f64>> =
        (0..n).map(|i| mj.v[i].drop_leading_vars(n, t.clone())).collect();
    let inverse: Vec<Jet<f64>> =
        (0..n).map(|i| mj.e[i].drop_leading_vars(n, t.clone())).collect();
    let chart = NormalChart { x: x.to_vec(), period: m.period, order, forward, inverse };
    if order >= 2 {
        chart.cross_check(m)?;
    }
    Ok(chart)
}

impl NormalChart {
    /// Compare the order-1 and order-2 coefficients of the inverse map with
    /// Richardson-extrapolated central differences of the exponential map.
    fn cross_check(&self, m: &ManifoldModel) -> Result<()> {
        let n = self.x.len();
        let e = |u: &[f64]| super::exp_map(m, &self.x, u);
        let h0 = 1e-2;
        for i in 0..n {
            for j in 0..n {
                let fd = |h: f64| -> Result<f64> {
                    let mut up = vec![0.0; n];
                    let mut um = vec![0.0; n];
                    up[j] = h;
                    um[j] = -h;
                    Ok((e(&up)?[i] - e(&um)?[i]) / (2.0 * h))
                };
                let (val, est) = richardson2(fd(h0)?, fd(h0 / 2.0)?);
                let mut mi = vec![0u8; n];
                mi[j] = 1;
                compare(self.inverse[i].derivative(&mi), val, est, "first")?;
                for k in j..n {
                    let fd = |h: f64| -> Result<f64> {
                        if j == k {
                            let mut up = vec![0.0; n];
                            let mut um = vec![0.0; n];
                            up[j] = h;
                            um[j] = -h;
                            Ok((e(&up)?[i] - 2.0 * self.inverse[i].c[0] + e(&um)?[i])
                                / (h * h))
                        } else {
                            let mut pp = vec![0.0; n];
                            let mut pm = vec![0.0; n];
                            let mut mp = vec![0.0; n];
                            let mut mm = vec![0.0; n];
                            pp[j] = h;
                            pp[k] = h;
                            pm[j] = h;
                            pm[k] = -h;
                            mp[j] = -h;
                            mp[k] = h;
                            mm[j] = -h;
                            mm[k] = -h;
                            Ok((e(&pp)?[i] - e(&pm)?[i] - e(&mp)?[i] + e(&mm)?[i])
                                / (4.0 * h * h))
                        }
                    };
                    let (val, est) = richardson2(fd(h0)?, fd(h0 / 2.0)?);
                    let mut mi = vec![0u8; n];
                    mi[j] += 1;
                    mi[k] += 1;
                    compare(self.inverse[i].derivative(&mi), val, est, "second")?;
                }
            }
        }
        Ok(())
    }

    /// Normal coordinates of a chart point (truncated expansion in the
    /// wrapped offset).
    pub fn to_normal(&self, p: &[f64]) -> Vec<f64> {
        let n = self.x.len();
        let mut d: Vec<f64> = (0..n).map(|k| p[k] - self.x[k]).collect();
        for v in d.iter_mut() {
            *v -= (*v / self.period).round() * self.period;
        }
        self.forward.iter().map(|f| f.eval_offset(&d)).collect()
    }

    /// Chart coordinates of a normal-coordinate point.
    pub fn from_normal(&self, u: &[f64]) -> Vec<f64> {
        self.inverse.iter().map(|f| f.eval_offset(u)).collect()
    }
}

/// Richardson step for a second-order central difference: returns the
/// extrapolated value and an error estimate.
fn richardson2(d_h: f64, d_h2: f64) -> (f64, f64) {
    let val = (4.0 * d_h2 - d_h) / 3.0;
    (val, (d_h2 - d_h).abs() / 3.0)
}

fn compare(jet_val: f64, fd_val: f64, fd_est: f64, what: &str) -> Result<()> {
    let tol = (10.0 * fd_est).max(1e-6 * (1.0 + jet_val.abs()));
    if (jet_val - fd_val).abs() > tol {
        return Err(CalcError::JetUnstable(format!(
            "{what}-order normal-chart coefficient {jet_val:.9e} disagrees with \
             finite differences {fd_val:.9e} (estimate {fd_est:.1e})"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coordfn::CoordFn;
    use crate::geometry::ChristoffelSource;

    const TAU: f64 = 2.0 * std::f64::consts::PI;

    #[test]
    fn flat_chart_is_the_identity() {
        let m = ManifoldModel::flat(2, TAU);
        let ch = normal_coordinates(&m, &[0.4, 1.1], 4).unwrap();
        for i in 0..2 {
            for (p, mi) in ch.forward[i].table.list.iter().enumerate() {
                let deg: usize = mi.iter().map(|&v| v as usize).sum();
                let want = if deg == 1 && mi[i] == 1 { 1.0 } else { 0.0 };
                assert!((ch.forward[i].c[p] - want).abs() < 1e-11);
            }
        }
        assert!((ch.inverse[0].c[0] - 0.4).abs() < 1e-12);
        assert!((ch.inverse[1].c[0] - 1.1).abs() < 1e-12);
    }

    #[test]
    fn constant_gamma_chart_matches_logarithm() {
        // forward(δ) = (e^{cδ} − 1)/c, inverse(u) = x + ln(1 + cu)/c
        let c = 0.4;
        let m = ManifoldModel::new(
            1,
            TAU,
            None,
            ChristoffelSource::Explicit(vec![CoordFn::Const(c)]),
            0.5,
        )
        .unwrap();
        let ch = normal_coordinates(&m, &[0.7], 5).unwrap();
        for k in 1..=5u8 {
            let want = c.powi(k as i32 - 1) / crate::multiindex::factorial(k as usize);
            assert!((ch.forward[0].coeff(&[k]) - want).abs() < 1e-9, "forward k={k}");
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            let want = sign * c.powi(k as i32 - 1) / k as f64;
            assert!((ch.inverse[0].coeff(&[k]) - want).abs() < 1e-9, "inverse k={k}");
        }
    }

    #[test]
    fn quadratic_term_is_half_the_symmetrised_connection() {
        let mut gam = vec![CoordFn::Const(0.0); 8];
        gam[(0 * 2 + 1) * 2 + 1] = CoordFn::cos(0.3, vec![1, 0]);
        gam[(1 * 2 + 0) * 2 + 0] = CoordFn::sin(0.25, vec![0, 1]);
        gam[(0 * 2 + 0) * 2 + 1] = CoordFn::Const(0.15);
        let m =
            ManifoldModel::new(2, TAU, None, ChristoffelSource::Explicit(gam), 0.5).unwrap();
        let x = [0.3, 0.9];
        let ch = normal_coordinates(&m, &x, 3).unwrap();
        let g = m.gamma_at(&x);
        for i in 0..2 {
            for j in 0..2 {
                for k in j..2 {
                    let mut mi = vec![0u8; 2];
                    mi[j] += 1;
                    mi[k] += 1;
                    // ∂_j∂_k of ½Γ^i_{(ab)}δ^aδ^b is the symmetrised Γ
                    let sym = 0.5 * (g[(i * 2 + j) * 2 + k] + g[(i * 2 + k) * 2 + j]);
                    let got = ch.forward[i].derivative(&mi);
                    assert!(
                        (got - sym).abs() < 1e-8,
                        "({i},{j},{k}): {got} vs {sym}"
                    );
                }
            }
        }
    }

    #[test]
    fn forward_and_inverse_are_mutually_inverse_on_samples() {
        let mut gam = vec![CoordFn::Const(0.0); 8];
        gam[(0 * 2 + 1) * 2 + 1] = CoordFn::cos(0.3, vec![1, 0]);
        gam[(1 * 2 + 0) * 2 + 0] = CoordFn::sin(0.25, vec![0, 1]);
        let m =
            ManifoldModel::new(2, TAU, None, ChristoffelSource::Explicit(gam), 0.5).unwrap();
        let x = [0.3, 0.9];
        let ch = normal_coordinates(&m, &x, 6).unwrap();
        for &(d0, d1) in &[(0.05, -0.04), (-0.02, 0.06), (0.03, 0.03)] {
            let u = ch.to_normal(&[x[0] + d0, x[1] + d1]);
            let back = ch.from_normal(&u);
            assert!((back[0] - x[0] - d0).abs() < 1e-9, "{back:?}");
            assert!((back[1] - x[1] - d1).abs() < 1e-9);
        }
    }
}
