//! Exponential, inverse-exponential and transport maps as high-order jets
//! around a base point.
//!
//! One jet-valued integration of the geodesic + transport system in the
//! block variables (δa, δv) yields the endpoint map E(δa, δv) and the
//! transport matrix Φ along that geodesic.  The boundary-value velocity map
//! V(δa, δb) then comes from inverting E in its velocity slot by a graded
//! fixed-point iteration, and every two-point quantity downstream (phase
//! defects, densities, normal charts) is a substitution into these jets.

use super::geodesic::rhs_jets_with_transport;
use super::ode::{integrate_to, OdeOptions};
use super::ManifoldModel;
use crate::error::{CalcError, Result};
use crate::jet::{substitute_many, Jet};
use crate::multiindex::table;

/// Two-point geometry jets at a base point x.
///
/// Variable blocks: slots 0..n hold the base offset δa, slots n..2n hold
/// either the initial velocity δv (for `e`, `phi_av`) or the target offset
/// δb (for `v`, `phi`, `ups`).
#[derive(Clone, Debug)]
pub struct MasterJets {
    pub x: Vec<f64>,
    pub n: usize,
    pub order: usize,
    /// E^i(δa, δv): endpoint of the geodesic from x+δa with velocity δv.
    pub e: Vec<Jet<f64>>,
    /// Φ entries (row-major) along that geodesic: T*_{x+δa} → T*_{E(δa,δv)}.
    pub phi_av: Vec<Jet<f64>>,
    /// V^i(δa, δb): initial velocity of the geodesic (x+δa) → (x+δb).
    pub v: Vec<Jet<f64>>,
    /// Φ entries as a function of base/target offsets (δa, δb).
    pub phi: Vec<Jet<f64>>,
    /// det Φ(δa, δb); equals Υ near the diagonal where the det is positive.
    pub ups: Jet<f64>,
}

/// Integrate the two-point jets at x to the given total order.
pub fn master_jets(m: &ManifoldModel, x: &[f64], order: usize) -> Result<MasterJets> {
    let n = m.dim;
    assert_eq!(x.len(), n);
    let t = table(2 * n, order);
    let mut s0: Vec<Jet<f64>> = Vec::with_capacity(2 * n + n * n);
    for k in 0..n {
        s0.push(Jet::variable(t.clone(), k, x[k]));
    }
    for k in 0..n {
        s0.push(Jet::variable(t.clone(), n + k, 0.0));
    }
    for j in 0..n {
        for c in 0..n {
            s0.push(Jet::constant(t.clone(), if j == c { 1.0 } else { 0.0 }));
        }
    }
    let ode = OdeOptions { tol: 1e-12, ..Default::default() };
    let end = integrate_to(|s: &Vec<Jet<f64>>| rhs_jets_with_transport(m, s), s0, 0.0, 1.0, &ode)?;
    let e: Vec<Jet<f64>> = end[..n].to_vec();
    let phi_av: Vec<Jet<f64>> = end[2 * n..2 * n + n * n].to_vec();

    check_linear_structure(&e, x, n).map_err(CalcError::JetUnstable)?;

    // Invert E in the velocity slot: find V(δa, δb) with E(δa, V) = x + δb.
    // E − x − δa − δv has velocity-degree ≥ 2, so the iteration gains one
    // exact order per pass.
    let da: Vec<Jet<f64>> = (0..n).map(|k| Jet::variable(t.clone(), k, 0.0)).collect();
    let db: Vec<Jet<f64>> = (0..n).map(|k| Jet::variable(t.clone(), n + k, 0.0)).collect();
    let mut v: Vec<Jet<f64>> = (0..n).map(|k| db[k].sub(&da[k])).collect();
    let erefs: Vec<&Jet<f64>> = e.iter().collect();
    for _ in 0..order.max(1) {
        let mut args = da.clone();
        args.extend(v.iter().cloned());
        let e_at = substitute_many(&erefs, &args);
        for k in 0..n {
            // v += (x + δb) − E(δa, v)
            let mut corr = db[k].sub(&e_at[k]);
            corr.c[0] += x[k];
            v[k].add_assign(&corr);
        }
    }
    // residual check
    {
        let mut args = da.clone();
        args.extend(v.iter().cloned());
        let e_at = substitute_many(&erefs, &args);
        for k in 0..n {
            let mut r = e_at[k].sub(&db[k]);
            r.c[0] -= x[k];
            if r.max_norm() > 1e-8 {
                return Err(CalcError::JetUnstable(format!(
                    "velocity-map inversion residual {:.3e} at x={:?}",
                    r.max_norm(),
                    x
                )));
            }
        }
    }

    let mut args = da.clone();
    args.extend(v.iter().cloned());
    let prefs: Vec<&Jet<f64>> = phi_av.iter().collect();
    let phi = substitute_many(&prefs, &args);
    let ups = super::det_jets(n, &phi);
    if (ups.c[0] - 1.0).abs() > 1e-9 {
        return Err(CalcError::JetUnstable(format!(
            "transport determinant at the diagonal is {:.12}, expected 1",
            ups.c[0]
        )));
    }
    Ok(MasterJets { x: x.to_vec(), n, order, e, phi_av, v, phi, ups })
}

/// E must be tangent to the identity in both blocks: E(0,0) = x,
/// ∂E/∂δa = ∂E/∂δv = I at the origin.
fn check_linear_structure(e: &[Jet<f64>], x: &[f64], n: usize) -> std::result::Result<(), String> {
    for i in 0..n {
        if (e[i].c[0] - x[i]).abs() > 1e-9 {
            return Err(format!("E(0,0) misses the base point by {:.3e}", e[i].c[0] - x[i]));
        }
        for b in 0..2 * n {
            let mut mi = vec![0u8; 2 * n];
            mi[b] = 1;
            let want = if b == i || b == n + i { 1.0 } else { 0.0 };
            let got = e[i].coeff(&mi);
            if (got - want).abs() > 1e-9 {
                return Err(format!("linear block of E is off by {:.3e}", got - want));
            }
        }
    }
    Ok(())
}

impl MasterJets {
    /// Jets of ∂E^i/∂δv_j (row-major), one order lower than `e`.
    pub fn dexp(&self) -> Vec<Jet<f64>> {
        let n = self.n;
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(self.e[i].deriv(n + j));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coordfn::CoordFn;
    use crate::geometry::ChristoffelSource;

    const TAU: f64 = 2.0 * std::f64::consts::PI;

    fn const_gamma_1d(c: f64) -> ManifoldModel {
        ManifoldModel::new(
            1,
            TAU,
            None,
            ChristoffelSource::Explicit(vec![CoordFn::Const(c)]),
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn flat_master_jets_are_affine() {
        let m = ManifoldModel::flat(2, TAU);
        let mj = master_jets(&m, &[0.3, 1.2], 4).unwrap();
        // E = x + δa + δv exactly: no coefficients beyond degree 1
        for i in 0..2 {
            for (p, mi) in mj.e[i].table.list.iter().enumerate() {
                if mi.iter().map(|&v| v as usize).sum::<usize>() >= 2 {
                    assert!(mj.e[i].c[p].abs() < 1e-11);
                }
            }
        }
        // V = δb − δa, Φ = I, Υ = 1
        for i in 0..2 {
            let mut mi = vec![0u8; 4];
            mi[i] = 1;
            assert!((mj.v[i].coeff(&mi) + 1.0).abs() < 1e-11);
            mi[i] = 0;
            mi[2 + i] = 1;
            assert!((mj.v[i].coeff(&mi) - 1.0).abs() < 1e-11);
        }
        assert!((mj.ups.c[0] - 1.0).abs() < 1e-11);
        assert!(mj.ups.c[1..].iter().all(|c| c.abs() < 1e-11));
    }

    #[test]
    fn constant_gamma_exponential_matches_closed_form() {
        // E(δa, δv) = x + δa + ln(1 + c δv)/c: the δv^k coefficient is
        // (−1)^{k+1} c^{k−1}/k, independent of δa
        let c = 0.4;
        let m = const_gamma_1d(c);
        let mj = master_jets(&m, &[0.7], 6).unwrap();
        for k in 1..=6u8 {
            let got = mj.e[0].coeff(&[0, k]);
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            let want = sign * c.powi(k as i32 - 1) / k as f64;
            assert!((got - want).abs() < 1e-10, "k={k}: {got} vs {want}");
            // mixed δa δv^k coefficients vanish
            if k <= 5 {
                assert!(mj.e[0].coeff(&[1, k]).abs() < 1e-10);
            }
        }
        // Φ along the exp-geodesic is exactly 1 + c δv
        assert!((mj.phi_av[0].coeff(&[0, 1]) - c).abs() < 1e-10);
        assert!((mj.phi_av[0].coeff(&[0, 2])).abs() < 1e-10);
        assert!((mj.phi_av[0].coeff(&[0, 3])).abs() < 1e-10);
    }

    #[test]
    fn constant_gamma_velocity_map_matches_closed_form() {
        // V(δa, δb) = (e^{c(δb−δa)} − 1)/c: coefficient of δa^i δb^j is
        // (−1)^i c^{i+j−1}/(i! j!)
        let c = 0.4;
        let m = const_gamma_1d(c);
        let mj = master_jets(&m, &[0.7], 6).unwrap();
        for i in 0..=3u8 {
            for j in 0..=3u8 {
                if i + j == 0 || usize::from(i + j) > 6 {
                    continue;
                }
                let got = mj.v[0].coeff(&[i, j]);
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                let want = sign * c.powi(i as i32 + j as i32 - 1)
                    / (crate::multiindex::factorial(i as usize)
                        * crate::multiindex::factorial(j as usize));
                assert!((got - want).abs() < 1e-9, "({i},{j}): {got} vs {want}");
            }
        }
        // Φ(δa, δb) = e^{c(δb−δa)} and Υ agrees
        let got = mj.ups.coeff(&[2, 0]);
        assert!((got - c * c / 2.0).abs() < 1e-9);
        let got = mj.ups.coeff(&[1, 1]);
        assert!((got + c * c).abs() < 1e-9);
    }

    #[test]
    fn two_dimensional_master_jets_match_pointwise_solvers() {
        let mut gam = vec![CoordFn::Const(0.0); 8];
        gam[(0 * 2 + 1) * 2 + 1] = CoordFn::cos(0.3, vec![1, 0]);
        gam[(1 * 2 + 0) * 2 + 0] = CoordFn::sin(0.25, vec![0, 1]);
        gam[(0 * 2 + 0) * 2 + 1] = CoordFn::Const(0.15);
        let m =
            ManifoldModel::new(2, TAU, None, ChristoffelSource::Explicit(gam), 0.5).unwrap();
        let x = [0.3, 0.9];
        let mj = master_jets(&m, &x, 5).unwrap();
        // compare E against a plain endpoint integration at an offset
        let da = [0.04, -0.03];
        let dv = [0.11, 0.07];
        let base = [x[0] + da[0], x[1] + da[1]];
        let direct = crate::geometry::exp_map(&m, &base, &dv).unwrap();
        for i in 0..2 {
            let jet_val = mj.e[i].eval_offset(&[da[0], da[1], dv[0], dv[1]]);
            assert!(
                (jet_val - direct[i]).abs() < 5e-8,
                "component {i}: {jet_val} vs {}",
                direct[i]
            );
        }
        // compare V against the shooting solver
        let target = [x[0] + 0.08, x[1] - 0.05];
        let g = crate::geometry::solve_geodesic(&m, &base, &target, 1e-11).unwrap();
        for i in 0..2 {
            let jet_val = mj.v[i].eval_offset(&[da[0], da[1], 0.08, -0.05]);
            assert!(
                (jet_val - g.velocity[i]).abs() < 5e-8,
                "component {i}: {jet_val} vs {}",
                g.velocity[i]
            );
        }
        // compare Φ against the transport solver
        let tr = crate::geometry::parallel_displacement(&m, &g).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                let jet_val =
                    mj.phi[r * 2 + c].eval_offset(&[da[0], da[1], 0.08, -0.05]);
                assert!(
                    (jet_val - tr.matrix[r * 2 + c]).abs() < 5e-8,
                    "entry ({r},{c}): {jet_val} vs {}",
                    tr.matrix[r * 2 + c]
                );
            }
        }
    }
}
