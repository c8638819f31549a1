//! Geodesic boundary-value problems and parallel transport of covectors.
//!
//! Geodesics are solved by shooting with Newton updates whose Jacobians come
//! from integrating the variational system as an order-1 jet, so the
//! iteration sees exact sensitivities rather than finite differences.

use super::ode::{integrate, integrate_to, OdeOptions, OdePath};
use super::ManifoldModel;
use crate::error::{CalcError, Result};
use crate::jet::Jet;
use crate::multiindex::table;

/// Solved geodesic boundary-value problem.  `y` is the periodic image of
/// the requested endpoint closest to `x`; the path lives in the universal
/// cover.
#[derive(Clone, Debug)]
pub struct GeodesicSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Initial tangent γ̇(0).
    pub velocity: Vec<f64>,
    /// Accepted nodes of the state [γ, γ̇] on t ∈ [0, 1].
    pub path: OdePath<Vec<f64>>,
    /// Achieved endpoint residual (max norm).
    pub tol: f64,
}

/// Parallel displacement of covectors along a geodesic.
#[derive(Clone, Debug)]
pub struct Transport {
    /// Row-major n×n matrix taking covector components at the start point to
    /// components at the end point.
    pub matrix: Vec<f64>,
    /// |det matrix|.
    pub ups: f64,
}

impl Transport {
    pub fn apply(&self, xi: &[f64]) -> Vec<f64> {
        let n = xi.len();
        (0..n).map(|j| (0..n).map(|i| self.matrix[j * n + i] * xi[i]).sum()).collect()
    }
}

/// Geodesic right-hand side on the plain state [p, v].
fn rhs_plain(m: &ManifoldModel, s: &[f64]) -> Vec<f64> {
    let n = m.dim;
    let g = m.gamma_at(&s[..n]);
    let mut out = vec![0.0; 2 * n];
    out[..n].copy_from_slice(&s[n..2 * n]);
    for k in 0..n {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += g[(k * n + i) * n + j] * s[n + i] * s[n + j];
            }
        }
        out[n + k] = -acc;
    }
    out
}

/// Geodesic + covector-transport right-hand side on [p, v, Φ] (Φ row-major,
/// Φ̇_{jc} = Σ_{i,k} Γ^i_{kj} v^k Φ_{ic}).
fn rhs_with_transport(m: &ManifoldModel, s: &[f64]) -> Vec<f64> {
    let n = m.dim;
    let g = m.gamma_at(&s[..n]);
    let mut out = rhs_plain(m, &s[..2 * n]);
    out.resize(2 * n + n * n, 0.0);
    for j in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                for k in 0..n {
                    acc += g[(i * n + k) * n + j] * s[n + k] * s[2 * n + i * n + c];
                }
            }
            out[2 * n + j * n + c] = acc;
        }
    }
    out
}

/// Jet-valued geodesic right-hand side on [p, v].
pub(crate) fn rhs_jets(m: &ManifoldModel, s: &[Jet<f64>]) -> Vec<Jet<f64>> {
    let n = m.dim;
    let g = m.gamma_jets(&s[..n]);
    let mut out = Vec::with_capacity(2 * n);
    out.extend(s[n..2 * n].iter().cloned());
    for k in 0..n {
        let mut acc = Jet::zero(s[0].table.clone());
        for i in 0..n {
            for j in 0..n {
                acc.add_assign(&g[(k * n + i) * n + j].mul(&s[n + i]).mul(&s[n + j]));
            }
        }
        out.push(acc.neg());
    }
    out
}

/// Jet-valued [p, v, Φ] right-hand side.
pub(crate) fn rhs_jets_with_transport(m: &ManifoldModel, s: &[Jet<f64>]) -> Vec<Jet<f64>> {
    let n = m.dim;
    let g = m.gamma_jets(&s[..n]);
    let mut out = rhs_jets(m, &s[..2 * n]);
    for j in 0..n {
        for c in 0..n {
            let mut acc = Jet::zero(s[0].table.clone());
            for i in 0..n {
                for k in 0..n {
                    acc.add_assign(
                        &g[(i * n + k) * n + j].mul(&s[n + k]).mul(&s[2 * n + i * n + c]),
                    );
                }
            }
            out.push(acc);
        }
    }
    out
}

fn solve_small(n: usize, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    match n {
        1 => {
            if a[0].abs() < 1e-300 {
                return Err(CalcError::NoConvergence("singular shooting Jacobian".into()));
            }
            Ok(vec![b[0] / a[0]])
        }
        2 => {
            let det = a[0] * a[3] - a[1] * a[2];
            if det.abs() < 1e-300 {
                return Err(CalcError::NoConvergence("singular shooting Jacobian".into()));
            }
            Ok(vec![(b[0] * a[3] - b[1] * a[1]) / det, (b[1] * a[0] - b[0] * a[2]) / det])
        }
        _ => unreachable!("dim is 1 or 2"),
    }
}

/// Geodesic from x to (the nearest periodic image of) y, by shooting.
pub fn solve_geodesic(
    m: &ManifoldModel,
    x: &[f64],
    y: &[f64],
    tol: f64,
) -> Result<GeodesicSolution> {
    solve_geodesic_guarded(m, x, y, tol, m.injectivity_guard())
}

/// Same with an explicit bound on the admissible chart distance.
pub fn solve_geodesic_guarded(
    m: &ManifoldModel,
    x: &[f64],
    y: &[f64],
    tol: f64,
    guard: f64,
) -> Result<GeodesicSolution> {
    let n = m.dim;
    let mut d: Vec<f64> = (0..n).map(|k| y[k] - x[k]).collect();
    m.wrap_offset(&mut d);
    let dist = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    if dist > guard {
        return Err(CalcError::OutOfNeighbourhood(format!(
            "chart distance {dist:.3e} exceeds the bound {guard:.3e}"
        )));
    }
    let y_img: Vec<f64> = (0..n).map(|k| x[k] + d[k]).collect();
    let ode = OdeOptions { tol: (tol * 1e-2).min(1e-11), ..Default::default() };

    let mut v = d.clone();
    let mut converged = false;
    for _ in 0..30 {
        // order-1 jet in the shot velocity gives value and Jacobian at once
        let t1 = table(n, 1);
        let mut s0: Vec<Jet<f64>> = Vec::with_capacity(2 * n);
        for k in 0..n {
            s0.push(Jet::constant(t1.clone(), x[k]));
        }
        for k in 0..n {
            s0.push(Jet::variable(t1.clone(), k, v[k]));
        }
        let e = integrate_to(|s: &Vec<Jet<f64>>| rhs_jets(m, s), s0, 0.0, 1.0, &ode)?;
        let f: Vec<f64> = (0..n).map(|k| e[k].value() - y_img[k]).collect();
        let fmax = f.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if fmax <= 0.5 * tol {
            converged = true;
            break;
        }
        let mut jac = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                let mut mi = vec![0u8; n];
                mi[c] = 1;
                jac[r * n + c] = e[r].coeff(&mi);
            }
        }
        let step = solve_small(n, &jac, &f)?;
        for k in 0..n {
            v[k] -= step[k];
        }
        let vnorm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if !vnorm.is_finite() || vnorm > 20.0 * (guard + 1.0) {
            return Err(CalcError::NoConvergence(format!(
                "shooting iterate diverged, |v| = {vnorm:.3e}"
            )));
        }
    }
    if !converged {
        return Err(CalcError::NoConvergence(
            "shooting did not reach the endpoint tolerance in 30 iterations".into(),
        ));
    }

    let mut s0 = x.to_vec();
    s0.extend_from_slice(&v);
    let path = integrate(|s: &Vec<f64>| rhs_plain(m, s), s0, 0.0, 1.0, &ode)?;
    let end = path.last();
    let achieved =
        (0..n).map(|k| (end[k] - y_img[k]).abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    Ok(GeodesicSolution { x: x.to_vec(), y: y_img, velocity: v, path, tol: achieved })
}

impl GeodesicSolution {
    /// (γ(t), γ̇(t)) by re-integration from the nearest stored node.
    pub fn sample(&self, m: &ManifoldModel, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = m.dim;
        let i = self.path.node_before(t);
        let (t0, s0) = self.path.nodes[i].clone();
        let ode = OdeOptions { tol: 1e-12, ..Default::default() };
        let s = integrate_to(|s: &Vec<f64>| rhs_plain(m, s), s0, t0, t, &ode)?;
        Ok((s[..n].to_vec(), s[n..2 * n].to_vec()))
    }
}

/// Exponential map: endpoint of the geodesic with initial data (x, v).
pub fn exp_map(m: &ManifoldModel, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let mut s0 = x.to_vec();
    s0.extend_from_slice(v);
    let ode = OdeOptions { tol: 1e-12, ..Default::default() };
    let s = integrate_to(|s: &Vec<f64>| rhs_plain(m, s), s0, 0.0, 1.0, &ode)?;
    Ok(s[..m.dim].to_vec())
}

/// Parallel displacement of covectors along a solved geodesic.
pub fn parallel_displacement(m: &ManifoldModel, geod: &GeodesicSolution) -> Result<Transport> {
    let n = m.dim;
    let mut s0 = geod.x.clone();
    s0.extend_from_slice(&geod.velocity);
    for j in 0..n {
        for c in 0..n {
            s0.push(if j == c { 1.0 } else { 0.0 });
        }
    }
    let ode = OdeOptions { tol: 1e-12, ..Default::default() };
    let s = integrate_to(|s: &Vec<f64>| rhs_with_transport(m, s), s0, 0.0, 1.0, &ode)?;
    let matrix = s[2 * n..2 * n + n * n].to_vec();
    let ups = match n {
        1 => matrix[0].abs(),
        _ => (matrix[0] * matrix[3] - matrix[1] * matrix[2]).abs(),
    };
    Ok(Transport { matrix, ups })
}

/// Transport matrices Φ(τ): T*_x → T*_{γ(τ)} and the complementary leg
/// Φ_{y,γ(τ)}, from one pass over the geodesic.
fn transport_split(
    m: &ManifoldModel,
    geod: &GeodesicSolution,
    tau: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = m.dim;
    let mut s0 = geod.x.clone();
    s0.extend_from_slice(&geod.velocity);
    for j in 0..n {
        for c in 0..n {
            s0.push(if j == c { 1.0 } else { 0.0 });
        }
    }
    let ode = OdeOptions { tol: 1e-12, ..Default::default() };
    let mid = integrate_to(|s: &Vec<f64>| rhs_with_transport(m, s), s0, 0.0, tau, &ode)?;
    let phi_mid = mid[2 * n..].to_vec();
    // restart with identity to get the τ → 1 leg directly
    let mut s1 = mid[..2 * n].to_vec();
    for j in 0..n {
        for c in 0..n {
            s1.push(if j == c { 1.0 } else { 0.0 });
        }
    }
    let end = integrate_to(|s: &Vec<f64>| rhs_with_transport(m, s), s1, tau, 1.0, &ode)?;
    let phi_rest = end[2 * n..].to_vec();
    Ok((mid[..n].to_vec(), mid[n..2 * n].to_vec(), phi_mid, phi_rest))
}

/// Everything a kernel evaluation needs at one (x, y) pair, from a single
/// geodesic solve: the intermediate point z = γ_{y,x}(τ), the phase covector
/// direction u = −γ̇_{y,x}(τ) (so the phase is ⟨u, ζ⟩), and the density
/// weight Υ^{1−κ}_{y,z} Υ^{−κ}_{z,x}.
#[derive(Clone, Debug)]
pub struct KernelGeometry {
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub weight: f64,
}

pub fn kernel_geometry(
    m: &ManifoldModel,
    x: &[f64],
    y: &[f64],
    kappa: f64,
    tau: f64,
    tol: f64,
) -> Result<KernelGeometry> {
    let n = m.dim;
    let geod = solve_geodesic(m, x, y, tol)?;
    let det = |a: &[f64]| match n {
        1 => a[0],
        _ => a[0] * a[3] - a[1] * a[2],
    };
    // at the endpoints one transport leg is the identity
    if tau.abs() < 1e-12 {
        let ups_yx = parallel_displacement(m, &geod)?.ups;
        let u = geod.velocity.iter().map(|v| -v).collect();
        return Ok(KernelGeometry {
            z: geod.x.clone(),
            u,
            weight: ups_yx.powf(1.0 - kappa),
        });
    }
    let (z, vel, phi_mid, phi_rest) = transport_split(m, &geod, tau)?;
    let ups_zx = det(&phi_mid).abs();
    let ups_yz = det(&phi_rest).abs();
    Ok(KernelGeometry {
        z,
        u: vel.iter().map(|v| -v).collect(),
        weight: ups_yz.powf(1.0 - kappa) * ups_zx.powf(-kappa),
    })
}

/// Phase −⟨γ̇_{y,x}(τ), ζ⟩ with ζ a covector at the intermediate point.
pub fn phase(m: &ManifoldModel, x: &[f64], zeta: &[f64], y: &[f64], tau: f64) -> Result<f64> {
    let geod = solve_geodesic(m, x, y, 1e-10)?;
    let (_, vel) = geod.sample(m, tau)?;
    Ok(-vel.iter().zip(zeta).map(|(a, b)| a * b).sum::<f64>())
}

/// Density weight Υ^{1−κ}_{y,z_τ} Υ^{−κ}_{z_τ,x} with z_τ = γ_{y,x}(τ).
pub fn weight(m: &ManifoldModel, x: &[f64], y: &[f64], kappa: f64, tau: f64) -> Result<f64> {
    let n = m.dim;
    let geod = solve_geodesic(m, x, y, 1e-10)?;
    let (_, _, phi_mid, phi_rest) = transport_split(m, &geod, tau)?;
    let det = |a: &[f64]| match n {
        1 => a[0],
        _ => a[0] * a[3] - a[1] * a[2],
    };
    let ups_zx = det(&phi_mid).abs();
    let ups_yz = det(&phi_rest).abs();
    Ok(ups_yz.powf(1.0 - kappa) * ups_zx.powf(-kappa))
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
    fn flat_geodesics_are_straight() {
        let m = ManifoldModel::flat(1, TAU);
        let g = solve_geodesic(&m, &[0.0], &[0.3], 1e-10).unwrap();
        assert!((g.velocity[0] - 0.3).abs() < 1e-10);
        let (p, v) = g.sample(&m, 0.37).unwrap();
        assert!((p[0] - 0.3 * 0.37).abs() < 1e-10);
        assert!((v[0] - 0.3).abs() < 1e-10);
    }

    #[test]
    fn zero_length_geodesic_is_constant() {
        let m = const_gamma_1d(0.4);
        let g = solve_geodesic(&m, &[1.2], &[1.2], 1e-10).unwrap();
        assert!(g.velocity[0].abs() < 1e-10);
    }

    #[test]
    fn constant_gamma_velocity_matches_closed_form() {
        // ÿ + c ẏ² = 0 integrates to y(t) = x + ln(1 + c v t)/c, so the
        // shot velocity for Δ = 0.5, c = 0.4 is (e^{cΔ} − 1)/c
        let m = const_gamma_1d(0.4);
        let g = solve_geodesic(&m, &[0.0], &[0.5], 1e-11).unwrap();
        assert!((g.velocity[0] - 0.5535068954004247).abs() < 1e-10, "{}", g.velocity[0]);
        let (p, _) = g.sample(&m, 0.6).unwrap();
        let expect = (1.0_f64 + 0.4 * 0.5535068954004247 * 0.6).ln() / 0.4;
        assert!((p[0] - expect).abs() < 1e-10);
    }

    #[test]
    fn out_of_neighbourhood_is_refused() {
        let m = ManifoldModel::flat(1, TAU);
        let e = solve_geodesic(&m, &[0.0], &[2.0], 1e-10);
        assert!(matches!(e, Err(CalcError::OutOfNeighbourhood(_))));
    }

    #[test]
    fn targets_wrap_to_the_nearest_image() {
        let m = ManifoldModel::flat(1, TAU);
        let g = solve_geodesic(&m, &[0.1], &[TAU - 0.2], 1e-10).unwrap();
        assert!((g.velocity[0] + 0.3).abs() < 1e-10);
    }

    #[test]
    fn flat_transport_is_identity() {
        let m = ManifoldModel::flat(2, TAU);
        let g = solve_geodesic(&m, &[0.0, 0.0], &[0.4, -0.2], 1e-10).unwrap();
        let t = parallel_displacement(&m, &g).unwrap();
        assert!((t.matrix[0] - 1.0).abs() < 1e-10);
        assert!((t.matrix[3] - 1.0).abs() < 1e-10);
        assert!(t.matrix[1].abs() < 1e-10 && t.matrix[2].abs() < 1e-10);
        assert!((t.ups - 1.0).abs() < 1e-10);
    }

    #[test]
    fn constant_gamma_transport_matches_closed_form() {
        // η̇ = c ẏ η gives Φ = e^{c (y−x)} = e^{0.2} for c = 0.4, Δ = 0.5
        let m = const_gamma_1d(0.4);
        let g = solve_geodesic(&m, &[0.0], &[0.5], 1e-11).unwrap();
        let t = parallel_displacement(&m, &g).unwrap();
        assert!((t.matrix[0] - 1.2214027581601699).abs() < 1e-10, "{}", t.matrix[0]);
        assert!((t.ups - 1.2214027581601699).abs() < 1e-10);
    }

    #[test]
    fn reverse_transport_inverts_forward() {
        let mut gam = vec![CoordFn::Const(0.0); 8];
        gam[(0 * 2 + 1) * 2 + 1] = CoordFn::cos(0.3, vec![1, 0]);
        gam[(1 * 2 + 0) * 2 + 0] = CoordFn::sin(0.25, vec![0, 1]);
        let m =
            ManifoldModel::new(2, TAU, None, ChristoffelSource::Explicit(gam), 0.5).unwrap();
        let x = [0.3, 0.9];
        let y = [0.8, 0.55];
        let fwd = parallel_displacement(&m, &solve_geodesic(&m, &x, &y, 1e-11).unwrap()).unwrap();
        let back = parallel_displacement(&m, &solve_geodesic(&m, &y, &x, 1e-11).unwrap()).unwrap();
        let mut prod = [0.0; 4];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    prod[i * 2 + j] += back.matrix[i * 2 + k] * fwd.matrix[k * 2 + j];
                }
            }
        }
        assert!((prod[0] - 1.0).abs() < 1e-9);
        assert!((prod[3] - 1.0).abs() < 1e-9);
        assert!(prod[1].abs() < 1e-9 && prod[2].abs() < 1e-9);
    }

    #[test]
    fn levi_civita_transport_preserves_the_metric_norm() {
        let phi = CoordFn::Sum(vec![
            CoordFn::cos(0.2, vec![1, 0]),
            CoordFn::sin(0.15, vec![0, 1]),
        ]);
        let e2p = CoordFn::Exp(Box::new(CoordFn::Scale(2.0, Box::new(phi))));
        let g = vec![
            e2p.clone(),
            CoordFn::Const(0.0),
            CoordFn::Const(0.0),
            CoordFn::Sum(vec![CoordFn::Const(1.0), CoordFn::cos(0.2, vec![1, 1])]),
        ];
        let m =
            ManifoldModel::new(2, TAU, Some(g), ChristoffelSource::LeviCivita, 0.5).unwrap();
        let x = [0.7, 1.4];
        let y = [1.1, 1.1];
        let geod = solve_geodesic(&m, &x, &y, 1e-11).unwrap();
        let tr = parallel_displacement(&m, &geod).unwrap();
        let norm2 = |p: &[f64], xi: &[f64]| {
            let gi = m.metric_inv_at(p).unwrap();
            let mut s = 0.0;
            for j in 0..2 {
                for k in 0..2 {
                    s += gi[j * 2 + k] * xi[j] * xi[k];
                }
            }
            s
        };
        for xi in [[1.0, 0.0], [0.3, -0.8], [0.5, 0.5]] {
            let a = norm2(&x, &xi);
            let b = norm2(&y, &tr.apply(&xi));
            assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn flat_phase_and_weight_reduce_to_euclidean_values() {
        let m = ManifoldModel::flat(2, TAU);
        let x = [0.2, 0.4];
        let y = [0.5, 0.1];
        let zeta = [1.3, -0.7];
        let p = phase(&m, &x, &zeta, &y, 0.33).unwrap();
        let expect: f64 = (0..2).map(|k| (x[k] - y[k]) * zeta[k]).sum();
        assert!((p - expect).abs() < 1e-10);
        for kappa in [0.0, 0.5, 1.3] {
            let w = weight(&m, &x, &y, kappa, 0.33).unwrap();
            assert!((w - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn weight_composes_transport_determinants() {
        // 1-D constant Γ: Υ_{γ(τ),x} = e^{c(γ(τ)−x)}, Υ_{y,γ(τ)} = e^{c(y−γ(τ))}
        let c = 0.4;
        let m = const_gamma_1d(c);
        let x = [0.0];
        let y = [0.5];
        let kappa = 0.3;
        let tau = 0.45;
        let geod = solve_geodesic(&m, &x, &y, 1e-11).unwrap();
        let (z, _) = geod.sample(&m, tau).unwrap();
        let w = weight(&m, &x, &y, kappa, tau).unwrap();
        let expect = (c * (y[0] - z[0]) * (1.0 - kappa)).exp() * (c * (z[0] - x[0]) * -kappa).exp();
        assert!((w - expect).abs() < 1e-9, "{w} vs {expect}");
    }
}
