//! Jets of the composition phase defect ψ and the transport density Υ_κ at
//! the diagonal, in normal coordinates.
//!
//! With y = exp_c(u) and z = exp_c(w) around a centre c, the defect
//!
//!   ψ = ⟨u − w, ξ⟩ − ⟨γ̇_{y,z}, Φ_{z,c} ξ⟩
//!
//! measures the failure of the three-point phase to telescope, and
//!
//!   Υ_κ = Υ_{y,z}^{1−κ} Υ_{z,c}^{2−κ} Υ_{c,y}^{1−κ}
//!
//! collects the transport determinants taken in the normal frame of c.
//! Both vanish to the orders the composition formula requires: ψ has no
//! constant or linear part and Υ_κ equals 1 whenever y = z = c.  All jets
//! are obtained by substituting the master two-point jets, never by
//! differencing solver output.
//!
//! Determinants in the normal frame differ from chart-frame determinants
//! by ratios of det DE at the endpoints (E the exponential map of c).
//! In the triple product every such ratio cancels except a single factor
//! det[∂E/∂v](w)

use super::twopoint::master_jets;
use super::{det_jets, ManifoldModel};
use crate::error::{CalcError, Result};
use crate::jet::{substitute_many, Jet, Ring};
use crate::multiindex::{mi_degree, table};
use crate::xipoly::XiPoly;

/// ψ and Υ_κ as jets at the diagonal.
///
/// Variable layout: slots 0..n are the first normal coordinate u, slots
/// n..2n the second normal coordinate w, and (when `order_c > 0`) slots
/// 2n..3n the chart offset of the centre from the base point x.
#[derive(Clone, Debug)]
pub struct DiagonalJets {
    pub x: Vec<f64>,
    pub n: usize,
    /// Total (u,w)-order the jets are valid to.
    pub order: usize,
    /// Order of the centre-offset block (0: jets at the fixed centre x).
    pub order_c: usize,
    pub kappa: f64,
    /// ψ; coefficients are homogeneous of degree 1 in ξ.
    pub psi: Jet<XiPoly>,
    /// Υ_κ in the normal frame of the centre.
    pub ups_kappa: Jet<f64>,
}

/// Diagonal jets at centre x to total (y,z)-order `j`, with the model's
/// default κ.
pub fn diagonal_jets(m: &ManifoldModel, x: &[f64], j: usize) -> Result<DiagonalJets> {
    diagonal_jets_centered(m, x, j, 0, m.kappa_default)
}

/// Diagonal jets at centre x with an explicit κ.
pub fn diagonal_jets_kappa(
    m: &ManifoldModel,
    x: &[f64],
    j: usize,
    kappa: f64,
) -> Result<DiagonalJets> {
    diagonal_jets_centered(m, x, j, 0, kappa)
}

/// Diagonal jets around a movable centre x + δc, expanded to order `j` in
/// the normal coordinates and order `j_c` in the centre offset.  The extra
/// block makes every derived ξ-polynomial differentiable in the base point.
pub fn diagonal_jets_centered(
    m: &ManifoldModel,
    x: &[f64],
    j: usize,
    j_c: usize,
    kappa: f64,
) -> Result<DiagonalJets> {
    let n = m.dim;
    let nc = if j_c > 0 { n } else { 0 };
    let mj = master_jets(m, x, j + j_c + 1)?;
    let b = table(2 * n + nc, j + j_c);

    let u: Vec<Jet<f64>> = (0..n).map(|i| Jet::variable(b.clone(), i, 0.0)).collect();
    let w: Vec<Jet<f64>> = (0..n).map(|i| Jet::variable(b.clone(), n + i, 0.0)).collect();
    let dc: Vec<Jet<f64>> = (0..n)
        .map(|i| {
            if nc > 0 {
                Jet::variable(b.clone(), 2 * n + i, 0.0)
            } else {
                Jet::zero(b.clone())
            }
        })
        .collect();

    // chart offsets of y = exp_c(u) and z = exp_c(w) from the base point
    let mut srcs: Vec<&Jet<f64>> = mj.e.iter().collect();
    let mut args = dc.clone();
    args.extend(u.iter().cloned());
    let mut y_off = substitute_many(&srcs, &args);
    for (i, jet) in y_off.iter_mut().enumerate() {
        jet.c[0] -= x[i];
    }

    // the [dc, w] group: z, Φ_{z,c}, det Φ_{z,c}, det ∂E/∂v
    srcs = mj.e.iter().chain(mj.phi_av.iter()).collect();
    let ups_av = det_jets(n, &mj.phi_av);
    let dexp = mj.dexp();
    let det_dexp = det_jets(n, &dexp);
    srcs.push(&ups_av);
    srcs.push(&det_dexp);
    let mut args = dc.clone();
    args.extend(w.iter().cloned());
    let mut group = substitute_many(&srcs, &args);
    let d_factor = group.pop().expect("det dexp");
    let ups_zc = group.pop().expect("det phi");
    let phi_zc = group.split_off(n);
    let mut z_off = group;
    for (i, jet) in z_off.iter_mut().enumerate() {
        jet.c[0] -= x[i];
    }

    // the [z, y] group: velocity at z towards y, det Φ_{y,z}
    srcs = mj.v.iter().collect();
    srcs.push(&mj.ups);
    let mut args = z_off.clone();
    args.extend(y_off.iter().cloned());
    let mut group = substitute_many(&srcs, &args);
    let ups_yz = group.pop().expect("det phi");
    let v_yz = group;

    // det Φ_{c,y}
    let mut args = y_off;
    args.extend(dc.iter().cloned());
    let ups_cy = substitute_many(&[&mj.ups], &args).pop().expect("det phi");

    // ψ_k := coefficient of ξ_k; the ⟨u−w, ξ⟩ part is exact in normal
    // coordinates, the transport part is −Σ_j γ̇_{y,z}^j Φ_{z,c; j k}
    let mut psi_k: Vec<Jet<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let mut p = u[k].sub(&w[k]);
        for j_i in 0..n {
            p = p.sub(&v_yz[j_i].mul(&phi_zc[j_i * n + k]));
        }
        psi_k.push(p);
    }
    for p in &psi_k {
        for (pos, mi) in p.table.list.iter().enumerate() {
            if mi_degree(&mi[..2 * n]) <= 1 && p.c[pos].abs() > 1e-9 {
                return Err(CalcError::JetUnstable(format!(
                    "phase defect has a low-order term {:.3e} at {:?}",
                    p.c[pos], mi
                )));
            }
        }
    }
    let mut psi = Jet::<XiPoly>::zero(b.clone());
    for k in 0..n {
        let xi_k = XiPoly::xi(n, k);
        for pos in 0..b.len() {
            if psi_k[k].c[pos] != 0.0 {
                psi.c[pos] = psi.c[pos].add(&xi_k.scale(psi_k[k].c[pos]));
            }
        }
    }

    let ups_kappa = ups_yz
        .powf(1.0 - kappa)
        .mul(&ups_zc.powf(2.0 - kappa))
        .mul(&ups_cy.powf(1.0 - kappa))
        .mul(&d_factor);
    for (pos, mi) in b.list.iter().enumerate() {
        if mi_degree(&mi[..2 * n]) == 0 {
            let want = if mi_degree(mi) == 0 { 1.0 } else { 0.0 };
            if (ups_kappa.c[pos] - want).abs() > 1e-9 {
                return Err(CalcError::JetUnstable(format!(
                    "transport density at the diagonal is off by {:.3e} at {:?}",
                    ups_kappa.c[pos] - want,
                    mi
                )));
            }
        }
    }

    Ok(DiagonalJets { x: x.to_vec(), n, order: j, order_c: j_c, kappa, psi, ups_kappa })
}
