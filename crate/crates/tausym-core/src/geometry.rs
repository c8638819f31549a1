//! Linear-connection geometry on periodic model manifolds.
//!
//! A [`ManifoldModel`] is a torus `ℝ^n mod period` (n = 1 or 2) carrying a
//! linear connection given by Christoffel coefficients, optionally derived
//! from a Riemannian metric.  Everything downstream (geodesics, parallel
//! transport, normal coordinates, two-point jets at the diagonal) consumes
//! the model through its jet interface, so all derivatives are exact.

pub mod diagonal;
pub mod geodesic;
pub mod normal;
pub mod ode;
pub mod twopoint;

pub use diagonal::{diagonal_jets, diagonal_jets_centered, diagonal_jets_kappa, DiagonalJets};
pub use geodesic::{
    exp_map, kernel_geometry, parallel_displacement, phase, solve_geodesic,
    solve_geodesic_guarded, weight, GeodesicSolution, KernelGeometry, Transport,
};
pub use normal::{normal_coordinates, NormalChart};
pub use twopoint::{master_jets, MasterJets};

pub use crate::symbols::{horizontal_derivative, horizontal_derivative_multi, horizontal_taylor};

use crate::coordfn::CoordFn;
use crate::error::{CalcError, Result};
use crate::jet::Jet;
use crate::multiindex::table;

/// Where the connection coefficients come from.
#[derive(Clone, Debug)]
pub enum ChristoffelSource {
    /// Γ ≡ 0 in the chart.
    Flat,
    /// Explicit components Γ^i_{jk}, flattened as `[i][j][k]` (n³ entries).
    Explicit(Vec<CoordFn>),
    /// Levi-Civita connection of the model's metric.
    LeviCivita,
}

/// Periodic model manifold with a linear connection.
#[derive(Clone, Debug)]
pub struct ManifoldModel {
    pub dim: usize,
    /// Period of every coordinate; the chart is ℝ^n mod period.
    pub period: f64,
    /// Inverse metric g^{ij}, row-major n×n (symmetric), if the model is
    /// Riemannian.
    pub metric_inv: Option<Vec<CoordFn>>,
    pub christoffel: ChristoffelSource,
    /// Default density weight κ.
    pub kappa_default: f64,
}

impl ManifoldModel {
    pub fn new(
        dim: usize,
        period: f64,
        metric_inv: Option<Vec<CoordFn>>,
        christoffel: ChristoffelSource,
        kappa_default: f64,
    ) -> Result<ManifoldModel> {
        if dim != 1 && dim != 2 {
            return Err(CalcError::ConfigInvalid(format!("dim must be 1 or 2, got {dim}")));
        }
        if !(period > 0.0) {
            return Err(CalcError::ConfigInvalid(format!("period must be positive, got {period}")));
        }
        if let Some(g) = &metric_inv {
            if g.len() != dim * dim {
                return Err(CalcError::ConfigInvalid(format!(
                    "metric_inv needs {} entries, got {}",
                    dim * dim,
                    g.len()
                )));
            }
        }
        if matches!(christoffel, ChristoffelSource::LeviCivita) && metric_inv.is_none() {
            return Err(CalcError::ConfigInvalid(
                "Levi-Civita connection requires a metric".into(),
            ));
        }
        if let Some(e) = match &christoffel {
            ChristoffelSource::Explicit(c) if c.len() != dim * dim * dim => Some(format!(
                "explicit Christoffels need {} entries, got {}",
                dim * dim * dim,
                c.len()
            )),
            _ => None,
        } {
            return Err(CalcError::ConfigInvalid(e));
        }
        let m = ManifoldModel { dim, period, metric_inv, christoffel, kappa_default };
        m.check_metric_spd()?;
        Ok(m)
    }

    /// Euclidean model (Γ ≡ 0, g = identity).
    pub fn flat(dim: usize, period: f64) -> ManifoldModel {
        let mut g = vec![CoordFn::Const(0.0); dim * dim];
        for i in 0..dim {
            g[i * dim + i] = CoordFn::Const(1.0);
        }
        ManifoldModel {
            dim,
            period,
            metric_inv: Some(g),
            christoffel: ChristoffelSource::Flat,
            kappa_default: 0.5,
        }
    }

    /// Positive definiteness of g^{ij} on a sample grid.
    fn check_metric_spd(&self) -> Result<()> {
        let Some(_) = &self.metric_inv else { return Ok(()) };
        let np = 9;
        let mut idx = vec![0usize; self.dim];
        loop {
            let x: Vec<f64> =
                idx.iter().map(|&i| self.period * i as f64 / np as f64).collect();
            let g = self.metric_inv_at(&x)?;
            let ok = match self.dim {
                1 => g[0] > 0.0,
                _ => {
                    let sym = (g[1] - g[2]).abs() <= 1e-10 * (1.0 + g[1].abs());
                    sym && g[0] > 0.0 && g[0] * g[3] - g[1] * g[2] > 0.0
                }
            };
            if !ok {
                return Err(CalcError::ConfigInvalid(format!(
                    "metric_inv not symmetric positive definite at {x:?}"
                )));
            }
            let mut k = 0;
            while k < self.dim {
                idx[k] += 1;
                if idx[k] < np {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == self.dim {
                return Ok(());
            }
        }
    }

    /// Quarter-period bound on admissible geodesic targets.
    /// True only for the literal flat connection (all Γ ≡ 0 by construction).
    pub fn is_flat(&self) -> bool {
        matches!(self.christoffel, ChristoffelSource::Flat)
    }

    pub fn injectivity_guard(&self) -> f64 {
        self.period / 4.0
    }

    /// Wrap a chart offset into the centred fundamental domain.
    pub fn wrap_offset(&self, d: &mut [f64]) {
        for v in d.iter_mut() {
            *v -= (*v / self.period).round() * self.period;
        }
    }

    /// Inverse metric entries evaluated on jet arguments (row-major n²).
    pub fn metric_inv_jets(&self, args: &[Jet<f64>]) -> Result<Vec<Jet<f64>>> {
        let g = self
            .metric_inv
            .as_ref()
            .ok_or_else(|| CalcError::ConfigInvalid("model has no metric".into()))?;
        Ok(g.iter().map(|f| f.eval_jet(self.period, args)).collect())
    }

    /// Metric (lower indices) entries on jet arguments, by inverting g^{ij}.
    pub fn metric_lower_jets(&self, args: &[Jet<f64>]) -> Result<Vec<Jet<f64>>> {
        let gi = self.metric_inv_jets(args)?;
        Ok(invert_sym_jets(self.dim, &gi))
    }

    /// Canonical density g = |det g^{ij}|^{-1/2} on jet arguments.
    pub fn density_jet(&self, args: &[Jet<f64>]) -> Result<Jet<f64>> {
        let gi = self.metric_inv_jets(args)?;
        Ok(det_jets(self.dim, &gi).powf(-0.5))
    }

    pub fn metric_inv_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        let t = table(self.dim, 0);
        let args: Vec<Jet<f64>> = x.iter().map(|&v| Jet::constant(t.clone(), v)).collect();
        Ok(self.metric_inv_jets(&args)?.iter().map(|j| *j.value()).collect())
    }

    /// Connection coefficients Γ^i_{jk} on jet arguments, flattened `[i][j][k]`.
    pub fn gamma_jets(&self, args: &[Jet<f64>]) -> Vec<Jet<f64>> {
        let n = self.dim;
        let t = args[0].table.clone();
        match &self.christoffel {
            ChristoffelSource::Flat => vec![Jet::zero(t); n * n * n],
            ChristoffelSource::Explicit(c) => {
                c.iter().map(|f| f.eval_jet(self.period, args)).collect()
            }
            ChristoffelSource::LeviCivita => self.levi_civita_jets(args),
        }
    }

    /// Γ^k_{ij} = (1/2) g^{kl} (∂_i g_{jl} + ∂_j g_{il} − ∂_l g_{ij}),
    /// assembled at jet level.  Coordinate derivatives along arbitrary jet
    /// arguments are obtained by seeding one fresh variable per coordinate.
    fn levi_civita_jets(&self, args: &[Jet<f64>]) -> Vec<Jet<f64>> {
        let n = self.dim;
        let base = args[0].table.clone();
        let aug = table(base.nv + n, base.order + 1);
        let lifted: Vec<Jet<f64>> = (0..n)
            .map(|m| {
                let mut v = args[m].extend_vars(aug.clone());
                v.add_assign(&Jet::variable(aug.clone(), base.nv + m, 0.0));
                v
            })
            .collect();
        let gi_aug = self.metric_inv_jets(&lifted).expect("Levi-Civita requires a metric");
        let gl_aug = invert_sym_jets(n, &gi_aug);
        let down = |j: &Jet<f64>| j.truncate_vars(base.clone());
        let gi: Vec<Jet<f64>> = gi_aug.iter().map(&down).collect();
        // dg[m][j*n+l] = ∂_m g_{jl}
        let mut dg = vec![Vec::new(); n];
        for (m, row) in dg.iter_mut().enumerate() {
            *row = gl_aug.iter().map(|e| down(&e.deriv(base.nv + m))).collect();
        }
        let mut out = Vec::with_capacity(n * n * n);
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut s = Jet::zero(base.clone());
                    for l in 0..n {
                        let br = dg[i][j * n + l]
                            .add(&dg[j][i * n + l])
                            .sub(&dg[l][i * n + j]);
                        s.add_assign(&gi[k * n + l].mul(&br));
                    }
                    out.push(s.scale(0.5));
                }
            }
        }
        out
    }

    /// Γ^i_{jk}(x) as plain numbers.
    pub fn gamma_at(&self, x: &[f64]) -> Vec<f64> {
        let t = table(self.dim, 0);
        let args: Vec<Jet<f64>> = x.iter().map(|&v| Jet::constant(t.clone(), v)).collect();
        self.gamma_jets(&args).iter().map(|j| *j.value()).collect()
    }
}

/// Invert a symmetric n×n matrix of jets (n ≤ 2).
pub fn invert_sym_jets(n: usize, g: &[Jet<f64>]) -> Vec<Jet<f64>> {
    match n {
        1 => vec![g[0].recip()],
        2 => {
            let det = g[0].mul(&g[3]).sub(&g[1].mul(&g[2]));
            let inv = det.recip();
            vec![
                g[3].mul(&inv),
                g[1].neg().mul(&inv),
                g[2].neg().mul(&inv),
                g[0].mul(&inv),
            ]
        }
        _ => panic!("only dimensions 1 and 2 are supported"),
    }
}

/// Determinant of an n×n matrix of jets (n ≤ 2).
pub fn det_jets(n: usize, a: &[Jet<f64>]) -> Jet<f64> {
    match n {
        1 => a[0].clone(),
        2 => a[0].mul(&a[3]).sub(&a[1].mul(&a[2])),
        _ => panic!("only dimensions 1 and 2 are supported"),
    }
}

/// Tensor kinds carried by [`TensorValue`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    Torsion,
    Curvature,
    Metric,
    Custom,
}

/// Pointwise tensor components in the chart frame.
#[derive(Clone, Debug)]
pub struct TensorValue {
    pub kind: TensorKind,
    pub dim: usize,
    /// Row-major components; rank is implied by `comps.len() = dim^rank`.
    pub comps: Vec<f64>,
}

impl TensorValue {
    /// Component by index list (length = rank).
    pub fn get(&self, idx: &[usize]) -> f64 {
        let mut p = 0;
        for &i in idx {
            p = p * self.dim + i;
        }
        self.comps[p]
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Torsion tensor T^i_{jk} = Γ^i_{jk} − Γ^i_{kj} at x.
pub fn torsion(m: &ManifoldModel, x: &[f64]) -> TensorValue {
    let n = m.dim;
    let g = m.gamma_at(x);
    let mut comps = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                comps[(i * n + j) * n + k] = g[(i * n + j) * n + k] - g[(i * n + k) * n + j];
            }
        }
    }
    TensorValue { kind: TensorKind::Torsion, dim: n, comps }
}

/// Curvature tensor
/// R^i_{jkl} = ∂_k Γ^i_{lj} − ∂_l Γ^i_{kj} + Σ_p (Γ^i_{kp} Γ^p_{lj} − Γ^i_{lp} Γ^p_{kj})
/// at x, from exact first-order Christoffel jets.
pub fn curvature(m: &ManifoldModel, x: &[f64]) -> TensorValue {
    let n = m.dim;
    let t = table(n, 1);
    let args: Vec<Jet<f64>> = (0..n).map(|k| Jet::variable(t.clone(), k, x[k])).collect();
    let gj = m.gamma_jets(&args);
    let g = |i: usize, j: usize, k: usize| *gj[(i * n + j) * n + k].value();
    let dg = |d: usize, i: usize, j: usize, k: usize| {
        let mut e = vec![0u8; n];
        e[d] = 1;
        gj[(i * n + j) * n + k].derivative(&e)
    };
    let mut comps = vec![0.0; n * n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let mut r = dg(k, i, l, j) - dg(l, i, k, j);
                    for p in 0..n {
                        r += g(i, k, p) * g(p, l, j) - g(i, l, p) * g(p, k, j);
                    }
                    comps[((i * n + j) * n + k) * n + l] = r;
                }
            }
        }
    }
    TensorValue { kind: TensorKind::Curvature, dim: n, comps }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conformal_1d() -> ManifoldModel {
        // g^{11} = e^{2φ} with φ = 0.3 cos x: g_{11} = e^{-2φ},
        // Γ^1_{11} = -φ'
        let phi = CoordFn::cos(0.3, vec![1]);
        let g_inv = CoordFn::Exp(Box::new(CoordFn::Scale(2.0, Box::new(phi))));
        ManifoldModel::new(
            1,
            2.0 * std::f64::consts::PI,
            Some(vec![g_inv]),
            ChristoffelSource::LeviCivita,
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn levi_civita_matches_conformal_closed_form() {
        let m = conformal_1d();
        // Γ^1_{11} = -φ' = 0.3 sin x for φ = 0.3 cos x
        for &x in &[0.0, 0.7, 2.1, 4.4] {
            let g = m.gamma_at(&[x]);
            assert!((g[0] - 0.3 * x.sin()).abs() < 1e-12, "x={x}: {} vs {}", g[0], 0.3 * x.sin());
        }
    }

    #[test]
    fn metric_lower_inverts_metric_inv() {
        let m = conformal_1d();
        let (_, args) = crate::coordfn::point_jets(&[1.3], 3);
        let gi = m.metric_inv_jets(&args).unwrap();
        let gl = m.metric_lower_jets(&args).unwrap();
        let prod = gi[0].mul(&gl[0]);
        assert!((prod.c[0] - 1.0).abs() < 1e-12);
        assert!(prod.c[1..].iter().all(|c| c.abs() < 1e-10));
    }

    #[test]
    fn torsion_antisymmetry_and_explicit_values() {
        let c01 = CoordFn::cos(0.4, vec![1, 0]);
        let mut gam = vec![CoordFn::Const(0.0); 8];
        gam[0 * 4 + 0 * 2 + 1] = c01.clone(); // Γ^0_{01}
        gam[0 * 4 + 1 * 2 + 0] = CoordFn::Const(0.1); // Γ^0_{10}
        let m = ManifoldModel::new(
            2,
            2.0 * std::f64::consts::PI,
            None,
            ChristoffelSource::Explicit(gam),
            0.5,
        )
        .unwrap();
        let x = [0.3, 1.1];
        let t = torsion(&m, &x);
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let a = t.get(&[i, j, k]);
                    let b = t.get(&[i, k, j]);
                    assert!((a + b).abs() < 1e-14);
                }
            }
        }
        assert!((t.get(&[0, 0, 1]) - (0.4 * x[0].cos() - 0.1)).abs() < 1e-13);
    }

    #[test]
    fn curvature_antisymmetric_in_last_pair_and_flat_vanishes() {
        let m = ManifoldModel::flat(2, 2.0 * std::f64::consts::PI);
        assert!(curvature(&m, &[0.2, 0.5]).max_abs() == 0.0);

        let mut gam = vec![CoordFn::Const(0.0); 8];
        gam[0 * 4 + 1 * 2 + 1] = CoordFn::cos(0.3, vec![0, 1]); // Γ^0_{11}
        gam[1 * 4 + 0 * 2 + 0] = CoordFn::sin(0.2, vec![1, 0]); // Γ^1_{00}
        let m = ManifoldModel::new(
            2,
            2.0 * std::f64::consts::PI,
            None,
            ChristoffelSource::Explicit(gam),
            0.5,
        )
        .unwrap();
        let r = curvature(&m, &[0.9, 0.4]);
        assert!(r.max_abs() > 1e-3, "generic connection should be curved");
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        let a = r.get(&[i, j, k, l]);
                        let b = r.get(&[i, j, l, k]);
                        assert!((a + b).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn one_dimensional_curvature_vanishes() {
        let m = conformal_1d();
        assert!(curvature(&m, &[0.8]).max_abs() < 1e-12);
    }

    #[test]
    fn spd_validation_rejects_sign_changing_metric() {
        let g = CoordFn::Trig {
            c: 0.2,
            terms: vec![crate::coordfn::TrigTerm { amp: 1.0, freq: vec![1], phase: 0.0 }],
        };
        let err = ManifoldModel::new(
            1,
            2.0 * std::f64::consts::PI,
            Some(vec![g]),
            ChristoffelSource::LeviCivita,
            0.5,
        );
        assert!(matches!(err, Err(CalcError::ConfigInvalid(_))));
    }
}
