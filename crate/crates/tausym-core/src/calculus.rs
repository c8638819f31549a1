//! Symbol calculus on periodic models: amplitude reduction to τ-symbols,
//! τ-changes, adjoints, the flat and connection composition series, the
//! P_{β,γ} coefficient table, and oscillatory-integral kernel evaluation.
//!
//! Conventions, fixed once here:
//!   - D_ξ = −i ∂_ξ, so the flat composition series reads
//!     Σ_α ((−i)^{|α|}/α!) ∂_ξ^α σ_A ∂_x^α σ_B.
//!   - Composition inputs are left symbols (τ = 0); other τ values are
//!     reached with `change_tau`.
//!   - Expansions are truncated by term order, not by derivative count, so
//!     mixed-order inputs truncate consistently.
//!   - P-table entries are credited their ξ-degree when term orders are
//!     computed, which is what makes the connection series asymptotic under
//!     the declared class hypotheses.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::coordfn::smooth_step_derivs;
use crate::error::{CalcError, Result};
use crate::geometry::{diagonal_jets_centered, kernel_geometry, torsion, ManifoldModel};
use crate::jet::{Jet, Ring};
use crate::multiindex::{mi_degree, mi_factorial, table, Mi};
use crate::oracle::{check_grid_cap, DenseOperator, Grid};
use crate::symbols::{horizontal_derivative_multi, Expansion, Symbol};
use crate::xipoly::XiPoly;
use crate::C64;

const TAG_EPS: f64 = 1e-12;
const ORDER_EPS: f64 = 1e-9;

fn neg_i_pow(k: usize) -> C64 {
    match k % 4 {
        0 => C64::new(1.0, 0.0),
        1 => C64::new(0.0, -1.0),
        2 => C64::new(-1.0, 0.0),
        _ => C64::new(0.0, 1.0),
    }
}

/// Jet evaluator of a two-point amplitude a(x, y, ξ): returns the jet over
/// the (x|y|ξ) blocks, 3n variables, at the requested order.
type AmpFn = Arc<dyn Fn(&[f64], &[f64], &[f64], usize) -> Result<Jet<C64>> + Send + Sync>;

#[derive(Clone)]
pub struct TwoPointAmplitude {
    pub dim: usize,
    pub m: f64,
    pub rho: f64,
    pub delta: f64,
    f: AmpFn,
}

impl TwoPointAmplitude {
    pub fn new(
        dim: usize,
        m: f64,
        rho: f64,
        delta: f64,
        f: impl Fn(&[f64], &[f64], &[f64], usize) -> Result<Jet<C64>> + Send + Sync + 'static,
    ) -> TwoPointAmplitude {
        TwoPointAmplitude { dim, m, rho, delta, f: Arc::new(f) }
    }

    /// u(x) v(y) w(ξ) with trigonometric factors and a polynomial ξ-part.
    pub fn separable(
        period: f64,
        dim: usize,
        u: crate::coordfn::CoordFn,
        v: crate::coordfn::CoordFn,
        w: XiPoly,
        m: f64,
    ) -> TwoPointAmplitude {
        assert_eq!(w.dim, dim, "ξ-polynomial dimension mismatch");
        let f = move |x: &[f64], y: &[f64], xi: &[f64], order: usize| -> Result<Jet<C64>> {
            let n = x.len();
            let t = table(3 * n, order);
            let point = |slot: usize, val: f64| -> Jet<f64> {
                if t.order == 0 {
                    Jet::constant(t.clone(), val)
                } else {
                    Jet::variable(t.clone(), slot, val)
                }
            };
            let xa: Vec<Jet<f64>> = (0..n).map(|i| point(i, x[i])).collect();
            let ya: Vec<Jet<f64>> = (0..n).map(|i| point(n + i, y[i])).collect();
            let ju = u.eval_jet(period, &xa).to_complex();
            let jv = v.eval_jet(period, &ya).to_complex();
            let mut jw = Jet::<C64>::zero(t.clone());
            for (mi, c) in &w.terms {
                let mut mono = Jet::constant(t.clone(), *c);
                for (k, &e) in mi.iter().enumerate() {
                    for _ in 0..e {
                        mono = mono.mul(&point(2 * n + k, xi[k]).to_complex());
                    }
                }
                jw.add_assign(&mono);
            }
            Ok(ju.mul(&jv).mul(&jw))
        };
        TwoPointAmplitude::new(dim, m, 1.0, 0.0, f)
    }

    /// a(x, y, ξ) = sa(x, ξ) sb(y, ξ), the amplitude of the composition
    /// Op(sa)·Op(sb) in the dual quantization of the right factor.
    pub fn from_symbol_pair(dim: usize, sa: &Symbol, sb: &Symbol) -> TwoPointAmplitude {
        let m = sa.m + sb.m;
        let rho = sa.rho.min(sb.rho);
        let delta = sa.delta.max(sb.delta);
        let (sa, sb) = (sa.clone(), sb.clone());
        let f = move |x: &[f64], y: &[f64], xi: &[f64], order: usize| -> Result<Jet<C64>> {
            let n = x.len();
            let t3 = table(3 * n, order);
            let ja = embed_two_block(&sa.eval_jet(x, xi, order)?, n, &t3, 0);
            let jb = embed_two_block(&sb.eval_jet(y, xi, order)?, n, &t3, 1);
            Ok(ja.mul(&jb))
        };
        TwoPointAmplitude::new(dim, m, rho, delta, f)
    }

    pub fn eval_jet(&self, x: &[f64], y: &[f64], xi: &[f64], order: usize) -> Result<Jet<C64>> {
        let j = (self.f)(x, y, xi, order)?;
        if j.table.nv != 3 * self.dim || j.table.order != order {
            return Err(CalcError::InvalidInput(format!(
                "amplitude evaluator returned a ({}, {}) jet, expected ({}, {order})",
                j.table.nv,
                j.table.order,
                3 * self.dim
            )));
        }
        Ok(j)
    }
}

/// Map a (x|ξ)-block jet into the (x|y|ξ) table, with the first block at
/// position `first_to` and the ξ block at position 2.
fn embed_two_block(
    j: &Jet<C64>,
    n: usize,
    t3: &Arc<crate::multiindex::IndexTable>,
    first_to: usize,
) -> Jet<C64> {
    let mut out = Jet::zero(t3.clone());
    for (pos, mi) in j.table.list.iter().enumerate() {
        if j.c[pos].is_zero() {
            continue;
        }
        let mut e = vec![0u8; 3 * n];
        e[first_to * n..(first_to + 1) * n].copy_from_slice(&mi[..n]);
        e[2 * n..].copy_from_slice(&mi[n..]);
        if let Some(p) = t3.position(&e) {
            out.c[p] = j.c[pos];
        }
    }
    out
}

/// ∂_x^α ∂_y^β ∂_ξ^{α+β} a restricted to the diagonal y = x, as an
/// (x|ξ)-jet of the requested order.
fn diag_term_jet(
    a: &TwoPointAmplitude,
    alpha: &[u8],
    beta: &[u8],
    x: &[f64],
    xi: &[f64],
    order: usize,
) -> Result<Jet<C64>> {
    let n = a.dim;
    let d = mi_degree(alpha) + mi_degree(beta);
    let mut j = a.eval_jet(x, x, xi, order + 2 * d)?;
    for (i, &e) in alpha.iter().enumerate() {
        for _ in 0..e {
            j = j.deriv(i);
        }
    }
    for (i, &e) in beta.iter().enumerate() {
        for _ in 0..e {
            j = j.deriv(n + i);
        }
    }
    for (k, &e) in alpha.iter().enumerate() {
        for _ in 0..e {
            j = j.deriv(2 * n + k);
        }
    }
    for (k, &e) in beta.iter().enumerate() {
        for _ in 0..e {
            j = j.deriv(2 * n + k);
        }
    }
    let t2 = table(2 * n, order);
    if order == 0 {
        return Ok(Jet::constant(t2, *j.value()));
    }
    // diagonal restriction: x and y offsets are driven by the same variables
    let args: Vec<Jet<C64>> = (0..3 * n)
        .map(|v| {
            let slot = if v < n {
                v
            } else if v < 2 * n {
                v - n
            } else {
                v - n
            };
            Jet::variable(t2.clone(), slot, C64::new(0.0, 0.0))
        })
        .collect();
    Ok(j.substitute(&args))
}

/// Reduce a two-point amplitude over a flat model to its τ-symbol series,
/// truncated at total derivative order K:
/// Σ_{|α|+|β|≤K} ((−i)^{|α|+|β|} (−τ)^{|α|}(1−τ)^{|β|}/α!β!) ∂_x^α∂_y^β∂_ξ^{α+β} a|_{y=x}.
/// The x-offset in the Taylor step is x−z_τ = −τ(y−x), hence the sign on the
/// τ power; the τ-change series and exact Fourier-mode compositions both pin
/// it down.
pub fn tau_from_amplitude_flat(
    a: &TwoPointAmplitude,
    tau: f64,
    k_max: usize,
) -> Result<Expansion> {
    if a.delta >= a.rho {
        return Err(CalcError::ClassViolation(format!(
            "amplitude class has δ = {} ≥ ρ = {}",
            a.delta, a.rho
        )));
    }
    let n = a.dim;
    let step = a.rho - a.delta;
    let mut out = Expansion::empty(n, tau, 0.5, a.m - (k_max as f64 + 1.0) * step);
    for ab in &table(2 * n, k_max).list {
        let alpha: Mi = ab[..n].to_vec();
        let beta: Mi = ab[n..].to_vec();
        let (da, db) = (mi_degree(&alpha), mi_degree(&beta));
        let k = da + db;
        let c = neg_i_pow(k).scale(
            (-tau).powi(da as i32) * (1.0 - tau).powi(db as i32)
                / (mi_factorial(&alpha) * mi_factorial(&beta)),
        );
        if c.norm() == 0.0 {
            continue;
        }
        let amp = a.clone();
        let (al, be) = (alpha.clone(), beta.clone());
        let sym = Symbol::from_jet_fn(
            &format!("amp-diag[{alpha:?}|{beta:?}]"),
            a.m - step * k as f64,
            a.rho,
            a.delta,
            move |x, xi, order| diag_term_jet(&amp, &al, &be, x, xi, order),
        );
        out.push(a.m - step * k as f64, sym.scale(c));
    }
    Ok(out)
}

/// Series Σ_α ((−i·factor)^{|α|}/α!) ∂_ξ^α ∇_x^α applied to each term,
/// shared by the τ-change and the adjoint.
fn connection_series(
    e: &Expansion,
    model: &Arc<ManifoldModel>,
    k_max: usize,
    factor: f64,
    conj: bool,
    out_tau: f64,
) -> Result<Expansion> {
    if e.dim != model.dim {
        return Err(CalcError::TagMismatch(format!(
            "expansion dimension {} vs model dimension {}",
            e.dim, model.dim
        )));
    }
    let mut rem = e.remainder_order;
    for (m_t, s) in &e.terms {
        if s.delta >= s.rho {
            return Err(CalcError::ClassViolation(format!(
                "term of order {m_t} has δ = {} ≥ ρ = {}",
                s.delta, s.rho
            )));
        }
        // per-α order decrement: ρ from ∂_ξ, max(δ, 1−ρ) from ∇ off the flat case
        let cost = if model.is_flat() { s.delta } else { s.delta.max(1.0 - s.rho) };
        rem = rem.max(m_t - (k_max as f64 + 1.0) * (s.rho - cost));
    }
    let mut out = Expansion::empty(e.dim, out_tau, e.kappa, rem);
    for (_, s) in &e.terms {
        let s0 = if conj { s.conj() } else { s.clone() };
        for alpha in &table(e.dim, k_max).list {
            let k = mi_degree(alpha);
            let c = neg_i_pow(k).scale(factor.powi(k as i32) / mi_factorial(alpha));
            if c.norm() == 0.0 {
                continue;
            }
            let d = horizontal_derivative_multi(model, &s0, alpha).deriv_xi_multi(alpha);
            out.push(d.m, d.scale(c));
        }
    }
    Ok(out)
}

/// Re-express an expansion at quantization point s:
/// σ_s ~ Σ_α ((−i)^{|α|}(τ−s)^{|α|}/α!) ∂_ξ^α ∇_x^α σ_τ.
pub fn change_tau(
    e: &Expansion,
    s: f64,
    model: &Arc<ManifoldModel>,
    k_max: usize,
) -> Result<Expansion> {
    connection_series(e, model, k_max, e.tau - s, false, s)
}

/// Symbol of the adjoint, acting on (1−κ)-densities:
/// σ_{A*,τ} ~ Σ_α ((−i)^{|α|}(1−2τ)^{|α|}/α!) ∂_ξ^α ∇_x^α conj(σ_{A,τ}).
pub fn adjoint_symbol(
    e: &Expansion,
    kappa: f64,
    model: &Arc<ManifoldModel>,
    k_max: usize,
) -> Result<Expansion> {
    if (e.kappa - kappa).abs() > TAG_EPS {
        return Err(CalcError::TagMismatch(format!(
            "expansion carries κ = {}, adjoint requested for κ = {kappa}",
            e.kappa
        )));
    }
    connection_series(e, model, k_max, 1.0 - 2.0 * e.tau, true, e.tau)
}

/// One coefficient polynomial of the connection composition series.
#[derive(Clone)]
pub struct PEntry {
    pub beta: Mi,
    pub gamma: Mi,
    /// Observed ξ-degree on the sample grid (0 for zero entries).
    pub degree: usize,
    /// The class bound for this connection type.
    pub bound: usize,
    pub is_zero: bool,
    pub symbol: Symbol,
}

/// Table of P_{β,γ} up to |β|+|γ| ≤ max_order, with the invariants
/// (P_{0,0} = 1, one-sided entries vanish, degree bounds) verified on the
/// construction grid.
pub struct PTable {
    pub kappa: f64,
    pub max_order: usize,
    pub symmetric: bool,
    pub model: Arc<ManifoldModel>,
    entries: HashMap<(Mi, Mi), PEntry>,
}

impl PTable {
    pub fn entry(&self, beta: &[u8], gamma: &[u8]) -> Result<&PEntry> {
        self.entries.get(&(beta.to_vec(), gamma.to_vec())).ok_or_else(|| {
            CalcError::MissingPEntry(format!(
                "(β, γ) = ({beta:?}, {gamma:?}) is outside the table (max order {})",
                self.max_order
            ))
        })
    }

    /// Entries sorted by (|β|+|γ|, β, γ), for reporting.
    pub fn sorted_entries(&self) -> Vec<&PEntry> {
        let mut v: Vec<&PEntry> = self.entries.values().collect();
        v.sort_by_key(|e| {
            (mi_degree(&e.beta) + mi_degree(&e.gamma), e.beta.clone(), e.gamma.clone())
        });
        v
    }

    fn degree_bound(symmetric: bool, beta: &[u8], gamma: &[u8]) -> usize {
        let (b, g) = (mi_degree(beta), mi_degree(gamma));
        let mut d = b.min(g);
        if symmetric {
            d = d.min((b + g) / 3);
        }
        d
    }
}

/// Shared per-base-point jets of the composition defect amplitude
/// e^{iψ} Υ_κ, keyed by base point and centre-offset order.
struct PCache {
    model: Arc<ManifoldModel>,
    kappa: f64,
    /// (u, w)-order of the jets; 2·max_order covers every entry.
    jet_order: usize,
    amps: Mutex<HashMap<(Vec<u64>, usize), Arc<Jet<XiPoly>>>>,
}

fn float_key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

impl PCache {
    fn amp_at(&self, x: &[f64], order_c: usize) -> Result<Arc<Jet<XiPoly>>> {
        let key = (float_key(x), order_c);
        if let Some(a) = self.amps.lock().expect("amp cache").get(&key) {
            return Ok(a.clone());
        }
        let n = self.model.dim;
        let dj = diagonal_jets_centered(&self.model, x, self.jet_order, order_c, self.kappa)?;
        // ψ has no (u,w)-terms of degree ≤ 1 and Υ_κ is 1 at u = w = 0 for
        // any centre; both are verified at construction, so the structural
        // zeros can be installed exactly before exponentiating.
        let i = C64::new(0.0, 1.0);
        let mut psi = dj.psi.map(|p| p.scale_c(i));
        for (pos, mi) in psi.table.list.iter().enumerate() {
            if mi_degree(&mi[..2 * n]) <= 1 {
                psi.c[pos] = XiPoly::zero(n);
            }
        }
        let mut amp = psi.exp_nilpotent();
        let mut ups = Jet::zero(dj.ups_kappa.table.clone());
        for (pos, mi) in dj.ups_kappa.table.list.iter().enumerate() {
            ups.c[pos] = if mi_degree(&mi[..2 * n]) == 0 {
                XiPoly::constant(n, C64::new(if mi_degree(mi) == 0 { 1.0 } else { 0.0 }, 0.0))
            } else {
                XiPoly::constant(n, C64::new(dj.ups_kappa.c[pos], 0.0))
            };
        }
        amp = amp.mul(&ups);
        let amp = Arc::new(amp);
        self.amps.lock().expect("amp cache").insert(key, amp.clone());
        Ok(amp)
    }

    /// P_{β,γ} as a ξ-polynomial-valued jet in the centre offset:
    /// ((∂_u+∂_w)^β ∂_u^γ Σ_{|β′|≤|β|} (1/β′!) (−i)^{|β′|} ∂_ξ^{β′} ∂_u^{β′}
    /// (e^{iψ} Υ_κ))|_{u=w=0}.
    fn entry_jet(&self, beta: &[u8], gamma: &[u8], x: &[f64], order_c: usize) -> Result<Jet<XiPoly>> {
        let n = self.model.dim;
        let amp = self.amp_at(x, order_c)?;
        let mut g = Jet::zero(amp.table.clone());
        for beta_p in &table(n, mi_degree(beta)).list {
            let k = mi_degree(beta_p);
            let mut t = (*amp).clone();
            for (i, &e) in beta_p.iter().enumerate() {
                for _ in 0..e {
                    t = t.deriv(i);
                }
            }
            let bp = beta_p.clone();
            t = t.map(|p| {
                let mut q = p.clone();
                for (kk, &e) in bp.iter().enumerate() {
                    for _ in 0..e {
                        q = q.deriv(kk);
                    }
                }
                q
            });
            let c = neg_i_pow(k).scale(1.0 / mi_factorial(beta_p));
            g.add_assign(&t.map(|p| p.scale_c(c)));
        }
        for (i, &e) in beta.iter().enumerate() {
            for _ in 0..e {
                g = g.deriv(i).add(&g.deriv(n + i));
            }
        }
        for (i, &e) in gamma.iter().enumerate() {
            for _ in 0..e {
                g = g.deriv(i);
            }
        }
        Ok(g.drop_leading_vars(2 * n, table(if order_c > 0 { n } else { 0 }, order_c)))
    }
}

/// Convert a centre-offset jet of ξ-polynomials into an (x|ξ)-jet at ξ₀.
fn xipoly_jet_to_symbol_jet(entry: &Jet<XiPoly>, n: usize, xi: &[f64], order: usize) -> Jet<C64> {
    let t2 = table(2 * n, order);
    let mut out = Jet::zero(t2.clone());
    for (pos, mi) in t2.list.iter().enumerate() {
        let (a, b) = (&mi[..n], &mi[n..]);
        let mut p = if entry.table.nv == 0 {
            entry.c[0].clone()
        } else {
            entry.coeff(a)
        };
        if entry.table.nv == 0 && mi_degree(a) > 0 {
            continue;
        }
        for (k, &e) in b.iter().enumerate() {
            for _ in 0..e {
                p = p.deriv(k);
            }
        }
        out.c[pos] = p.eval(xi).scale(1.0 / mi_factorial(b));
    }
    out
}

/// Build the P_{β,γ} table for all |β|+|γ| ≤ max_order, validating the
/// structural invariants at every grid point.
pub fn p_table(
    model: &Arc<ManifoldModel>,
    kappa: f64,
    x_grid: &[Vec<f64>],
    max_order: usize,
) -> Result<PTable> {
    let n = model.dim;
    if x_grid.is_empty() || x_grid.iter().any(|x| x.len() != n) {
        return Err(CalcError::InvalidInput(
            "the sample grid must be nonempty with points of the model dimension".into(),
        ));
    }
    let symmetric = x_grid.iter().all(|x| torsion(model, x).max_abs() < 1e-10);
    let cache = Arc::new(PCache {
        model: model.clone(),
        kappa,
        jet_order: 2 * max_order,
        amps: Mutex::new(HashMap::new()),
    });
    // warm the per-point amplitude jets in parallel
    let warm: Result<Vec<_>> = x_grid.par_iter().map(|x| cache.amp_at(x, 0)).collect();
    warm?;

    let pairs: Vec<(Mi, Mi)> = table(2 * n, max_order)
        .list
        .iter()
        .map(|bg| (bg[..n].to_vec(), bg[n..].to_vec()))
        .collect();
    let checked: Result<Vec<PEntry>> = pairs
        .par_iter()
        .map(|(beta, gamma)| -> Result<PEntry> {
            let (db, dg) = (mi_degree(beta), mi_degree(gamma));
            let bound = PTable::degree_bound(symmetric, beta, gamma);
            let mut max_abs = 0.0f64;
            let mut degree = 0usize;
            let mut p00_dev = 0.0f64;
            for x in x_grid {
                let j = cache.entry_jet(beta, gamma, x, 0)?;
                let val = &j.c[0];
                if db + dg == 0 {
                    let dev = val.sub(&XiPoly::constant(n, C64::new(1.0, 0.0))).max_coeff();
                    p00_dev = p00_dev.max(dev);
                    continue;
                }
                max_abs = max_abs.max(val.max_coeff());
                if let Some(d) = val.degree(1e-8) {
                    degree = degree.max(d);
                }
            }
            if db + dg == 0 {
                if p00_dev > 1e-8 {
                    return Err(CalcError::DegreeViolation(format!(
                        "P[0|0] deviates from 1 by {p00_dev:.3e}"
                    )));
                }
                return Ok(PEntry {
                    beta: beta.clone(),
                    gamma: gamma.clone(),
                    degree: 0,
                    bound: 0,
                    is_zero: false,
                    symbol: Symbol::real_constant(1.0),
                });
            }
            let one_sided = db == 0 || dg == 0;
            if one_sided && max_abs > 1e-8 {
                return Err(CalcError::DegreeViolation(format!(
                    "P[{beta:?}|{gamma:?}] must vanish, found magnitude {max_abs:.3e}"
                )));
            }
            let is_zero = one_sided || max_abs <= 1e-8;
            if !is_zero && degree > bound {
                return Err(CalcError::DegreeViolation(format!(
                    "P[{beta:?}|{gamma:?}] has ξ-degree {degree}, bound {bound}"
                )));
            }
            let symbol = if is_zero {
                Symbol::real_constant(0.0)
            } else {
                let (c, be, ga) = (cache.clone(), beta.clone(), gamma.clone());
                Symbol::from_jet_fn(
                    &format!("P[{beta:?}|{gamma:?}]"),
                    degree as f64,
                    1.0,
                    0.0,
                    move |x, xi, order| {
                        let j = c.entry_jet(&be, &ga, x, order)?;
                        Ok(xipoly_jet_to_symbol_jet(&j, c.model.dim, xi, order))
                    },
                )
            };
            Ok(PEntry {
                beta: beta.clone(),
                gamma: gamma.clone(),
                degree: if is_zero { 0 } else { degree },
                bound,
                is_zero,
                symbol,
            })
        })
        .collect();
    let mut entries = HashMap::new();
    for e in checked? {
        entries.insert((e.beta.clone(), e.gamma.clone()), e);
    }
    Ok(PTable { kappa, max_order, symmetric, model: model.clone(), entries })
}

fn class_extremes(e: &Expansion) -> (f64, f64) {
    let mut rho = f64::INFINITY;
    let mut delta: f64 = 0.0;
    for (_, s) in &e.terms {
        rho = rho.min(s.rho);
        delta = delta.max(s.delta);
    }
    if rho == f64::INFINITY {
        rho = 1.0;
    }
    (rho, delta)
}

fn check_composable(a: &Expansion, b: &Expansion) -> Result<()> {
    a.check_tags(b)?;
    if a.tau.abs() > TAG_EPS {
        return Err(CalcError::TagMismatch(format!(
            "composition takes left symbols (τ = 0), got τ = {}",
            a.tau
        )));
    }
    for (m, s) in a.terms.iter().chain(b.terms.iter()) {
        if s.delta >= s.rho {
            return Err(CalcError::ClassViolation(format!(
                "term of order {m} has δ = {} ≥ ρ = {}",
                s.delta, s.rho
            )));
        }
    }
    Ok(())
}

fn input_remainder(a: &Expansion, b: &Expansion) -> f64 {
    if a.terms.is_empty() || b.terms.is_empty() {
        a.remainder_order + b.remainder_order
    } else {
        (a.remainder_order + b.leading_order()).max(a.leading_order() + b.remainder_order)
    }
}

/// Flat composition: Σ_{|α|≤K} ((−i)^{|α|}/α!) ∂_ξ^α σ_A ∂_x^α σ_B, keeping
/// terms of order above m₁+m₂−(K+1)(ρ−δ).
pub fn compose_flat(a: &Expansion, b: &Expansion, k_max: usize) -> Result<Expansion> {
    check_composable(a, b)?;
    let n = a.dim;
    let (rho_a, delta_a) = class_extremes(a);
    let (rho_b, delta_b) = class_extremes(b);
    let step = rho_a.min(rho_b) - delta_a.max(delta_b);
    let lead = a.leading_order() + b.leading_order();
    let threshold = lead - (k_max as f64 + 1.0) * step;
    let mut out = Expansion::empty(
        n,
        a.tau,
        a.kappa,
        if a.terms.is_empty() || b.terms.is_empty() {
            input_remainder(a, b)
        } else {
            threshold.max(input_remainder(a, b))
        },
    );
    for alpha in &table(n, k_max).list {
        let k = mi_degree(alpha);
        let c = neg_i_pow(k).scale(1.0 / mi_factorial(alpha));
        for (ma, sa) in &a.terms {
            for (mb, sb) in &b.terms {
                let order = ma + mb - sa.rho * k as f64 + sb.delta * k as f64;
                if order <= threshold + ORDER_EPS {
                    continue;
                }
                let term = sa.deriv_xi_multi(alpha).mul(&sb.deriv_x_multi(alpha));
                out.push(order, term.scale(c));
            }
        }
    }
    Ok(out)
}

/// Connection composition: Σ_{α,β,γ} (1/α!β!γ!) P_{β,γ} D_ξ^{α+β}σ_A
/// D_ξ^γ ∇_x^α σ_B, truncated so every retained term has order at least
/// m₁+m₂−K, with P-degrees credited in the order bookkeeping.
pub fn compose_global(
    a: &Expansion,
    b: &Expansion,
    model: &Arc<ManifoldModel>,
    kappa: f64,
    p: &PTable,
    k_max: usize,
) -> Result<Expansion> {
    check_composable(a, b)?;
    if a.dim != model.dim {
        return Err(CalcError::TagMismatch(format!(
            "expansion dimension {} vs model dimension {}",
            a.dim, model.dim
        )));
    }
    if (a.kappa - kappa).abs() > TAG_EPS || (p.kappa - kappa).abs() > TAG_EPS {
        return Err(CalcError::TagMismatch(format!(
            "κ tags disagree: expansion {}, table {}, requested {kappa}",
            a.kappa, p.kappa
        )));
    }
    if !Arc::ptr_eq(&p.model, model) {
        return Err(CalcError::TagMismatch(
            "the P-table was built for a different model".into(),
        ));
    }
    let n = model.dim;
    let (rho_a, delta_a) = class_extremes(a);
    let (rho_b, delta_b) = class_extremes(b);
    let rho = rho_a.min(rho_b);
    let delta = delta_a.max(delta_b);
    let h1 = rho > 0.5;
    let h2 = p.symmetric && rho > 1.0 / 3.0;
    let canonical = |e: &Expansion| {
        !e.terms.is_empty()
            && e.terms.iter().all(|(_, s)| (s.rho - 1.0).abs() < TAG_EPS && s.delta < TAG_EPS)
    };
    let h3 = canonical(a) || canonical(b);
    if !(h1 || h2 || h3) {
        return Err(CalcError::HypothesisViolation(format!(
            "composition needs ρ > 1/2, or a symmetric connection with ρ > 1/3, \
             or one factor of type (1, 0); got ρ = {rho}, δ = {delta}, symmetric = {}",
            p.symmetric
        )));
    }
    let lead = a.leading_order() + b.leading_order();
    let threshold = lead - k_max as f64;
    // per-unit order decrement floors, used only to bound the enumeration
    let mut step_bg: f64 = 0.0;
    if h1 {
        step_bg = step_bg.max(rho - 0.5);
    }
    if h2 {
        step_bg = step_bg.max(rho - 1.0 / 3.0);
    }
    if h3 {
        step_bg = step_bg.max(rho / 2.0);
    }
    let cap_alpha = (k_max as f64 / (rho - delta)).ceil() as usize;
    let cap_bg = ((k_max as f64 / step_bg).ceil() as usize).min(p.max_order + 1);

    // a deeper table would be needed only if terms beyond it can still clear
    // the threshold in the most optimistic (full degree credit) accounting
    if cap_bg > p.max_order {
        let l = p.max_order + 1;
        let dmax = if p.symmetric { l / 3 } else { l / 2 };
        let optimistic = lead - rho * l as f64 + dmax as f64;
        if optimistic >= threshold - ORDER_EPS {
            return Err(CalcError::MissingPEntry(format!(
                "terms with |β|+|γ| = {l} may reach order {optimistic:.3}, above the \
                 truncation threshold {threshold:.3}; build the table to max order {l}"
            )));
        }
    }

    let mut out = Expansion::empty(
        n,
        a.tau,
        a.kappa,
        if a.terms.is_empty() || b.terms.is_empty() {
            input_remainder(a, b)
        } else {
            threshold.max(input_remainder(a, b))
        },
    );
    for alpha in &table(n, cap_alpha).list {
        let ka = mi_degree(alpha);
        for bg in &table(2 * n, cap_bg.min(p.max_order)).list {
            let beta: Mi = bg[..n].to_vec();
            let gamma: Mi = bg[n..].to_vec();
            let (db, dg) = (mi_degree(&beta), mi_degree(&gamma));
            if (db == 0) != (dg == 0) {
                continue; // one-sided entries vanish identically
            }
            let entry = p.entry(&beta, &gamma)?;
            if entry.is_zero {
                continue;
            }
            let c = neg_i_pow(ka + db + dg).scale(
                1.0 / (mi_factorial(alpha) * mi_factorial(&beta) * mi_factorial(&gamma)),
            );
            let apb: Mi = alpha.iter().zip(&beta).map(|(x, y)| x + y).collect();
            for (ma, sa) in &a.terms {
                for (mb, sb) in &b.terms {
                    let order = ma + mb - sa.rho * (ka + db) as f64 - sb.rho * dg as f64
                        + sb.delta * ka as f64
                        + entry.degree as f64;
                    if order < threshold - ORDER_EPS {
                        continue;
                    }
                    let da = sa.deriv_xi_multi(&apb);
                    let dbm =
                        horizontal_derivative_multi(model, sb, alpha).deriv_xi_multi(&gamma);
                    out.push(order, entry.symbol.mul(&da).mul(&dbm).scale(c));
                }
            }
        }
    }
    Ok(out)
}

/// Compactly supported radial profile: 1 below `inner`, 0 above `outer`.
#[derive(Clone, Copy, Debug)]
pub struct Mollifier {
    pub inner: f64,
    pub outer: f64,
}

impl Default for Mollifier {
    fn default() -> Self {
        Mollifier { inner: 0.5, outer: 1.0 }
    }
}

impl Mollifier {
    /// Value and derivatives in t of the profile at t ≥ 0.
    pub fn derivs(&self, t: f64, jmax: usize) -> Vec<f64> {
        let w = self.outer - self.inner;
        let mut out = vec![0.0; jmax + 1];
        if t <= self.inner {
            out[0] = 1.0;
            return out;
        }
        if t >= self.outer {
            return out;
        }
        let s = smooth_step_derivs((t - self.inner) / w, jmax);
        out[0] = 1.0 - s[0];
        for (j, o) in out.iter_mut().enumerate().skip(1) {
            *o = -s[j] / w.powi(j as i32);
        }
        out
    }
}

/// Numerical kernel 𝒜(x, y) of an operator given by its τ-symbol expansion:
/// weight(x,y) (2π)^{−n} ∫ e^{i⟨u,ζ⟩} σ(z_τ, ζ) χ(|ζ|/Ξ) dζ with z_τ on the
/// geodesic from x to y and u = −γ̇(τ).  The mollifier χ makes the integral
/// absolutely convergent; for oscillatory pairs two integration-by-parts
/// passes in ζ damp the cutoff error.
pub struct KernelEvaluator {
    pub model: Arc<ManifoldModel>,
    pub sigma: Expansion,
    pub kappa: f64,
    pub tau: f64,
    pub xi_cut: f64,
    pub mollifier: Mollifier,
    geod_tol: f64,
    zeta_jets: Mutex<HashMap<(Vec<u64>, u64), Arc<Vec<Jet<C64>>>>>,
}

pub fn kernel_from_symbol(
    e: &Expansion,
    model: &Arc<ManifoldModel>,
    kappa: f64,
    tau: f64,
    xi_cut: f64,
    mollifier: Mollifier,
) -> Result<KernelEvaluator> {
    if e.dim != model.dim {
        return Err(CalcError::TagMismatch(format!(
            "expansion dimension {} vs model dimension {}",
            e.dim, model.dim
        )));
    }
    if (e.tau - tau).abs() > TAG_EPS || (e.kappa - kappa).abs() > TAG_EPS {
        return Err(CalcError::TagMismatch(format!(
            "expansion is tagged (τ = {}, κ = {}), kernel requested (τ = {tau}, κ = {kappa})",
            e.tau, e.kappa
        )));
    }
    if !(0.0..=1.0).contains(&tau) || xi_cut <= 0.0 || mollifier.inner <= 0.0
        || mollifier.outer <= mollifier.inner
    {
        return Err(CalcError::ConfigInvalid(
            "kernel needs τ ∈ [0,1], Ξ > 0 and 0 < inner < outer".into(),
        ));
    }
    Ok(KernelEvaluator {
        model: model.clone(),
        sigma: e.clone(),
        kappa,
        tau,
        xi_cut,
        mollifier,
        geod_tol: 1e-10,
        zeta_jets: Mutex::new(HashMap::new()),
    })
}

impl KernelEvaluator {
    /// 1-D node offsets and spacing for a half-width w, spacing ≤ 0.5.
    fn axis(w: f64) -> (usize, f64) {
        let q = (w / 0.5).ceil().max(4.0) as usize;
        (q, w / q as f64)
    }

    fn sigma_jets_at(&self, z: &[f64], cut: f64, nodes: &[Vec<f64>]) -> Result<Arc<Vec<Jet<C64>>>> {
        let key = (float_key(z), cut.to_bits());
        if self.model.dim == 1 {
            if let Some(j) = self.zeta_jets.lock().expect("jet cache").get(&key) {
                return Ok(j.clone());
            }
        }
        let jets: Result<Vec<Jet<C64>>> =
            nodes.iter().map(|zeta| self.sigma.eval_jet(z, zeta, 2)).collect();
        let jets = Arc::new(jets?);
        if self.model.dim == 1 {
            self.zeta_jets.lock().expect("jet cache").insert(key, jets.clone());
        }
        Ok(jets)
    }

    /// ∫ e^{i⟨u,ζ⟩} σ(z, ζ) χ(|ζ|/cut) dζ by trapezoid over the mollifier
    /// support, with two integration-by-parts passes once the phase
    /// oscillates: each pass maps g ↦ (i/|u|²) u·∇_ζ g exactly.
    fn zeta_integral(&self, z: &[f64], u: &[f64], cut: f64) -> Result<C64> {
        let n = self.model.dim;
        let w = self.mollifier.outer * cut;
        let (q, h) = Self::axis(w);
        let u_norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        let passes = if u_norm * w >= 8.0 { 2 } else { 0 };

        let mut nodes: Vec<Vec<f64>> = Vec::new();
        let axis_vals: Vec<f64> = (-(q as i64)..=q as i64).map(|i| i as f64 * h).collect();
        if n == 1 {
            for &a in &axis_vals {
                nodes.push(vec![a]);
            }
        } else {
            for &a in &axis_vals {
                for &b in &axis_vals {
                    if (a * a + b * b).sqrt() < w {
                        nodes.push(vec![a, b]);
                    }
                }
            }
        }
        let jets = self.sigma_jets_at(z, cut, &nodes)?;

        let mut acc = C64::new(0.0, 0.0);
        for (idx, zeta) in nodes.iter().enumerate() {
            let r = zeta.iter().map(|v| v * v).sum::<f64>().sqrt();
            let t = r / cut;
            if t >= self.mollifier.outer {
                continue;
            }
            let chi = self.mollifier.derivs(t, passes);
            let jet = &jets[idx];
            let g = if passes == 0 {
                *jet.value() * chi[0]
            } else {
                // (u·∇)² (σχ) / (i|u|²)² = −(Σ u_iu_j ∂_i∂_j (σχ)) / |u|⁴
                let mut d2 = C64::new(0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let mut mi = vec![0u8; 2 * n];
                        mi[n + i] += 1;
                        mi[n + j] += 1;
                        let s_ij = jet.derivative(&mi);
                        let mut mi_i = vec![0u8; 2 * n];
                        mi_i[n + i] = 1;
                        let mut mi_j = vec![0u8; 2 * n];
                        mi_j[n + j] = 1;
                        let s_i = jet.derivative(&mi_i);
                        let s_j = jet.derivative(&mi_j);
                        let s = *jet.value();
                        // radial chain rule, inactive where χ is flat
                        let (ci, cj, cij) = if r == 0.0 || chi[1] == 0.0 && chi[2] == 0.0 {
                            (0.0, 0.0, 0.0)
                        } else {
                            let ci = chi[1] * zeta[i] / (r * cut);
                            let cj = chi[1] * zeta[j] / (r * cut);
                            let cij = chi[2] * zeta[i] * zeta[j] / (r * r * cut * cut)
                                + chi[1]
                                    * ((if i == j { 1.0 } else { 0.0 }) / r
                                        - zeta[i] * zeta[j] / (r * r * r))
                                    / cut;
                            (ci, cj, cij)
                        };
                        let gij = s_ij * chi[0] + s_i * cj + s_j * ci + s * cij;
                        d2 += gij.scale(u[i] * u[j]);
                    }
                }
                -d2.scale(1.0 / (u_norm * u_norm * u_norm * u_norm))
            };
            let phase: f64 = u.iter().zip(zeta).map(|(a, b)| a * b).sum();
            acc += g * C64::new(0.0, phase).exp();
        }
        Ok(acc.scale(h.powi(n as i32)))
    }

    fn eval_at_cut(&self, x: &[f64], y: &[f64], cut: f64) -> Result<C64> {
        let kg = kernel_geometry(&self.model, x, y, self.kappa, self.tau, self.geod_tol)?;
        let i_val = self.zeta_integral(&kg.z, &kg.u, cut)?;
        let norm = (2.0 * std::f64::consts::PI).powi(self.model.dim as i32);
        Ok(i_val.scale(kg.weight / norm))
    }

    /// The mollified kernel at the configured cutoff; well defined for every
    /// admissible pair, including the diagonal.
    pub fn eval_mollified(&self, x: &[f64], y: &[f64]) -> Result<C64> {
        self.eval_at_cut(x, y, self.xi_cut)
    }

    /// The kernel value with a cutoff-doubling convergence estimate; away
    /// from the diagonal the mollified values converge and the doubled
    /// cutoff result is returned.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<C64> {
        let a = self.eval_at_cut(x, y, self.xi_cut)?;
        let b = self.eval_at_cut(x, y, 2.0 * self.xi_cut)?;
        // superpolynomially small off-diagonal values cannot be resolved
        // relatively, so the tolerance floors at a fraction of the kernel
        // peak scale Ξ^{m+n}
        let m_lead = self.sigma.leading_order();
        let scale = b.norm().max(
            1e-3 * self.xi_cut.powf(m_lead + self.model.dim as f64),
        );
        let err = (a - b).norm();
        if err > 1e-5 * scale {
            return Err(CalcError::QuadratureNotConverged(format!(
                "cutoff doubling changed the kernel by {err:.3e} against scale {scale:.3e} \
                 at |x−y| = {:.3e}",
                x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
            )));
        }
        Ok(b)
    }

    /// Smooth taper radii inside the geodesic guard: fully kept below the
    /// first radius, dropped beyond the second.
    fn taper_radii(&self) -> (f64, f64) {
        let g = self.model.injectivity_guard();
        (0.55 * g, 0.9 * g)
    }

    fn taper(&self, d: f64) -> f64 {
        let (r1, r2) = self.taper_radii();
        if d <= r1 {
            1.0
        } else if d >= r2 {
            0.0
        } else {
            1.0 - smooth_step_derivs((d - r1) / (r2 - r1), 0)[0]
        }
    }

    /// One kernel row against the grid, tapered to the diagonal
    /// neighbourhood: out[j] = θ(|x−y_j|) 𝒜(x, y_j).
    fn row(&self, x: &[f64], grid: &Grid) -> Result<Vec<C64>> {
        let (_, r2) = self.taper_radii();
        let mut out = vec![C64::new(0.0, 0.0); grid.len()];
        for (j, o) in out.iter_mut().enumerate() {
            let y = grid.point(j);
            let mut off: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
            self.model.wrap_offset(&mut off);
            let d = off.iter().map(|v| v * v).sum::<f64>().sqrt();
            if d >= r2 {
                continue;
            }
            *o = self.eval_mollified(x, &y)?.scale(self.taper(d));
        }
        Ok(out)
    }

    /// Apply the tapered kernel to a grid function by the trapezoid rule.
    pub fn apply(&self, grid: &Grid, u: &[C64]) -> Result<Vec<C64>> {
        if grid.dim != self.model.dim || (grid.period - self.model.period).abs() > TAG_EPS {
            return Err(CalcError::InvalidInput(
                "grid does not match the model geometry".into(),
            ));
        }
        if u.len() != grid.len() {
            return Err(CalcError::InvalidInput(format!(
                "grid function has {} samples, expected {}",
                u.len(),
                grid.len()
            )));
        }
        let hn = grid.h().powi(grid.dim as i32);
        let pts = grid.points();
        pts.par_iter()
            .map(|x| {
                let row = self.row(x, grid)?;
                Ok(row.iter().zip(u).map(|(k, v)| k * v).sum::<C64>().scale(hn))
            })
            .collect()
    }

    /// Dense matrix of the tapered kernel quadrature on a grid.
    pub fn discretize(&self, grid: &Grid) -> Result<DenseOperator> {
        if grid.dim != self.model.dim || (grid.period - self.model.period).abs() > TAG_EPS {
            return Err(CalcError::InvalidInput(
                "grid does not match the model geometry".into(),
            ));
        }
        check_grid_cap(grid)?;
        let hn = grid.h().powi(grid.dim as i32);
        let pts = grid.points();
        let rows: Result<Vec<Vec<C64>>> = pts
            .par_iter()
            .map(|x| Ok(self.row(x, grid)?.iter().map(|v| v.scale(hn)).collect()))
            .collect();
        let rows = rows?;
        let flat: Vec<C64> = rows.into_iter().flatten().collect();
        Ok(DenseOperator {
            grid: grid.clone(),
            matrix: nalgebra::DMatrix::from_row_slice(grid.len(), grid.len(), &flat),
            meta: format!(
                "kernel quadrature, τ = {}, κ = {}, Ξ = {}",
                self.tau, self.kappa, self.xi_cut
            ),
        })
    }
}

/// Convenience wrapper: build the kernel at the default mollifier and apply.
pub fn apply_pdo_global(
    e: &Expansion,
    model: &Arc<ManifoldModel>,
    kappa: f64,
    tau: f64,
    grid: &Grid,
    u: &[C64],
    xi_cut: f64,
) -> Result<Vec<C64>> {
    kernel_from_symbol(e, model, kappa, tau, xi_cut, Mollifier::default())?.apply(grid, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coordfn::CoordFn;
    use crate::geometry::ChristoffelSource;
    use crate::oracle::{
        band_limited, discretize_flat, effective_symbol, fit_decay, lattice_apply, spectrum,
    };

    const TAU2: f64 = 2.0 * std::f64::consts::PI;

    fn flat1() -> Arc<ManifoldModel> {
        Arc::new(ManifoldModel::flat(1, TAU2))
    }

    /// 1-D Levi-Civita model of the conformal metric g^{11} = e^{−2φ}.
    fn curved1() -> Arc<ManifoldModel> {
        let phi = CoordFn::sin(0.25, vec![1]);
        let ginv = CoordFn::Exp(Box::new(CoordFn::Scale(-2.0, Box::new(phi))));
        Arc::new(
            ManifoldModel::new(1, TAU2, Some(vec![ginv]), ChristoffelSource::LeviCivita, 0.5)
                .unwrap(),
        )
    }

    fn torsionful2() -> Arc<ManifoldModel> {
        let mut gam = vec![CoordFn::Const(0.0); 8];
        gam[(0 * 2 + 1) * 2 + 1] = CoordFn::cos(0.3, vec![1, 0]);
        gam[(1 * 2 + 0) * 2 + 0] = CoordFn::sin(0.25, vec![0, 1]);
        gam[(0 * 2 + 0) * 2 + 1] = CoordFn::Const(0.15);
        gam[(0 * 2 + 1) * 2 + 0] = CoordFn::Const(-0.1);
        Arc::new(ManifoldModel::new(2, TAU2, None, ChristoffelSource::Explicit(gam), 0.5).unwrap())
    }

    fn one_plus_sq(model: &Arc<ManifoldModel>) -> Symbol {
        Symbol::xi_bracket(model)
    }

    fn grid_points_1d(k: usize) -> Vec<Vec<f64>> {
        (0..k).map(|i| vec![0.2 + TAU2 * i as f64 / k as f64]).collect()
    }

    #[test]
    fn constant_in_space_amplitude_is_its_own_symbol_for_every_tau() {
        let w = XiPoly::monomial(1, &[1], C64::new(0.0, 1.0))
            .add(&XiPoly::constant(1, C64::new(2.0, 0.0)));
        let a = TwoPointAmplitude::separable(
            TAU2,
            1,
            CoordFn::Const(1.0),
            CoordFn::Const(1.0),
            w.clone(),
            1.0,
        );
        for tau in [0.0, 0.3, 1.0] {
            let e = tau_from_amplitude_flat(&a, tau, 3).unwrap();
            assert!((e.tau - tau).abs() < 1e-15);
            for (x, xi) in [(0.4, 3.0), (2.0, -7.0)] {
                let got = e.eval(&[x], &[xi]).unwrap();
                let want = w.eval(&[xi]);
                assert!((got - want).norm() < 1e-12, "τ={tau}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn left_reduction_matches_the_classical_one_sided_series() {
        let u = CoordFn::Sum(vec![CoordFn::Const(1.0), CoordFn::sin(0.3, vec![1])]);
        let v = CoordFn::Sum(vec![CoordFn::Const(1.0), CoordFn::cos(0.2, vec![2])]);
        let w = XiPoly::monomial(1, &[2], C64::new(1.0, 0.0));
        let a = TwoPointAmplitude::separable(TAU2, 1, u.clone(), v.clone(), w.clone(), 2.0);
        let e = tau_from_amplitude_flat(&a, 0.0, 3).unwrap();
        // at τ = 0 only Σ_k ((−i)^k/k!) u(x) v^{(k)}(x) ∂_ξ^k w survives
        for (x, xi) in [(0.7, 5.0), (3.1, -2.0)] {
            let uj = u.jet_at(TAU2, &[x], 1).c[0];
            let vj = v.jet_at(TAU2, &[x], 3);
            let mut want = C64::new(0.0, 0.0);
            let mut wk = w.clone();
            for k in 0..=3usize {
                let vk = vj.derivative(&[k as u8]);
                want += neg_i_pow(k).scale(uj * vk / mi_factorial(&[k as u8])) * wk.eval(&[xi]);
                wk = wk.deriv(0);
            }
            let got = e.eval(&[x], &[xi]).unwrap();
            assert!((got - want).norm() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn amplitude_expansion_matches_probed_operator_to_remainder_order() {
        let g = Grid::new(1, 128, TAU2).unwrap();
        let u = CoordFn::Sum(vec![CoordFn::Const(1.0), CoordFn::sin(0.3, vec![1])]);
        let v = CoordFn::Sum(vec![CoordFn::Const(1.0), CoordFn::cos(0.2, vec![2])]);
        // a(x, y, ζ) = u(x) v(y) (1+ζ²)^{1/2}: the ζ-factor never terminates,
        // so the truncation error is visible above roundoff
        let a = {
            let (u, v) = (u.clone(), v.clone());
            TwoPointAmplitude::new(1, 1.0, 1.0, 0.0, move |x, y, xi, order| {
                let t = table(3, order);
                let point = |slot: usize, val: f64| -> Jet<f64> {
                    if t.order == 0 {
                        Jet::constant(t.clone(), val)
                    } else {
                        Jet::variable(t.clone(), slot, val)
                    }
                };
                let ju = u.eval_jet(TAU2, &[point(0, x[0])]);
                let jv = v.eval_jet(TAU2, &[point(1, y[0])]);
                let z = point(2, xi[0]);
                let q = Jet::constant(t.clone(), 1.0).add(&z.mul(&z));
                Ok(ju.mul(&jv).mul(&q.powf(0.5)).to_complex())
            })
        };
        let k = 2usize;
        let e = tau_from_amplitude_flat(&a, 0.0, k).unwrap();

        // operator route: f ↦ u ⊙ B(D)(v ⊙ f) with the multiplier (1+ζ²)^{1/2}
        let us: Vec<C64> =
            g.points().iter().map(|x| C64::new(1.0 + 0.3 * x[0].sin(), 0.0)).collect();
        let vs: Vec<C64> =
            g.points().iter().map(|x| C64::new(1.0 + 0.2 * (2.0 * x[0]).cos(), 0.0)).collect();
        let apply = |f: &[C64]| -> Result<Vec<C64>> {
            let vf: Vec<C64> = f.iter().zip(&vs).map(|(a, b)| a * b).collect();
            let mut c = spectrum(&g, &vf);
            for (kk, cv) in c.iter_mut().enumerate() {
                let xi = g.xi(&[g.freq_int(kk)])[0];
                *cv = cv.scale((1.0 + xi * xi).sqrt());
            }
            let wvf = crate::oracle::synthesis(&g, &c);
            Ok(wvf.iter().zip(&us).map(|(a, b)| a * b).collect())
        };
        let freqs: Vec<Vec<i64>> = [6i64, 10, 16, 26, 40, 60].iter().map(|&m| vec![m]).collect();
        let probed = effective_symbol(&apply, &g, &freqs).unwrap();
        let mut pairs = Vec::new();
        for (fi, m) in freqs.iter().enumerate() {
            let xi = g.xi(m);
            let mut worst = 0.0f64;
            for (i, x) in g.points().iter().enumerate() {
                let series = e.eval(x, &xi).unwrap();
                worst = worst.max((series - probed.values[fi][i]).norm());
            }
            pairs.push((xi[0], worst));
        }
        let fit = fit_decay(&pairs).unwrap();
        assert!(fit.slope <= 1.0 - (k as f64 + 1.0) + 0.3, "slope {:.3}", fit.slope);
    }

    #[test]
    fn change_tau_identity_and_amplitude_route_agree_term_by_term() {
        let m = flat1();
        let u = CoordFn::Sum(vec![CoordFn::Const(1.0), CoordFn::sin(0.3, vec![1])]);
        let v = CoordFn::Sum(vec![CoordFn::Const(1.0), CoordFn::cos(0.2, vec![2])]);
        let w = XiPoly::monomial(1, &[2], C64::new(1.0, 0.0));
        let a = TwoPointAmplitude::separable(TAU2, 1, u, v, w, 2.0);
        let k = 3usize;
        let e0 = tau_from_amplitude_flat(&a, 0.0, k).unwrap();

        let same = change_tau(&e0, 0.0, &m, k).unwrap();
        assert_eq!(same.terms.len(), e0.terms.len());
        for (x, xi) in [(0.4, 9.0), (2.7, -4.0)] {
            let d = (same.eval(&[x], &[xi]).unwrap() - e0.eval(&[x], &[xi]).unwrap()).norm();
            assert!(d < 1e-13);
        }

        let direct = tau_from_amplitude_flat(&a, 0.5, k).unwrap();
        let routed = change_tau(&e0, 0.5, &m, k).unwrap();
        assert!((routed.tau - 0.5).abs() < 1e-15);
        // asymptotic expansions are unique: matching orders must agree
        for j in 0..=k {
            let order = 2.0 - j as f64;
            let td: Vec<&Symbol> = direct
                .terms
                .iter()
                .filter(|(o, _)| (o - order).abs() < 1e-9)
                .map(|(_, s)| s)
                .collect();
            let tr: Vec<&Symbol> = routed
                .terms
                .iter()
                .filter(|(o, _)| (o - order).abs() < 1e-9)
                .map(|(_, s)| s)
                .collect();
            assert_eq!(td.len(), 1, "missing direct term at order {order}");
            assert_eq!(tr.len(), 1, "missing routed term at order {order}");
            for (x, xi) in [(0.9, 11.0), (4.0, 6.0)] {
                let a_v = td[0].eval(&[x], &[xi]).unwrap();
                let b_v = tr[0].eval(&[x], &[xi]).unwrap();
                let scale = a_v.norm().max(1.0);
                assert!(
                    (a_v - b_v).norm() <= 1e-10 * scale,
                    "order {order}: {a_v} vs {b_v}"
                );
            }
        }
    }

    #[test]
    fn tau_roundtrip_residual_decays_at_remainder_order() {
        let m = curved1();
        let c = Symbol::coord_fn(
            TAU2,
            CoordFn::Sum(vec![CoordFn::Const(1.0), CoordFn::sin(0.2, vec![1])]),
        );
        let s = c.mul(&one_plus_sq(&m)).with_class(1.0, 1.0, 0.0);
        let e = Expansion::single(1, 1.0, s, 0.0, 0.5, f64::NEG_INFINITY);
        let k = 2usize;
        let half = change_tau(&e, 0.5, &m, k).unwrap();
        let back = change_tau(&half, 0.0, &m, k).unwrap();
        let lam = [10.0, 22.0, 46.0, 100.0, 215.0, 464.0, 1000.0];
        let xs = [0.3, 1.7, 4.4];
        let mut pairs = Vec::new();
        for &l in &lam {
            let mut worst = 0.0f64;
            for &x in &xs {
                let d = (back.eval(&[x], &[l]).unwrap() - e.eval(&[x], &[l]).unwrap()).norm();
                worst = worst.max(d);
            }
            pairs.push((l, worst));
        }
        let fit = fit_decay(&pairs).unwrap();
        assert!(fit.slope <= 1.0 - (k as f64 + 1.0) + 0.3, "slope {:.3}", fit.slope);
    }

    #[test]
    fn weyl_adjoint_of_a_real_symbol_is_the_identity() {
        let m = curved1();
        let c = Symbol::coord_fn(
            TAU2,
            CoordFn::Sum(vec![CoordFn::Const(2.0), CoordFn::cos(0.4, vec![1])]),
        );
        let s = c.mul(&one_plus_sq(&m)).with_class(1.0, 1.0, 0.0);
        let e = Expansion::single(1, 1.0, s, 0.5, 0.5, f64::NEG_INFINITY);
        let adj = adjoint_symbol(&e, 0.5, &m, 3).unwrap();
        assert_eq!(adj.terms.len(), e.terms.len());
        assert!((adj.tau - 0.5).abs() < 1e-15);
        for (x, xi) in [(0.8, 13.0), (3.3, -20.0)] {
            let d = (adj.eval(&[x], &[xi]).unwrap() - e.eval(&[x], &[xi]).unwrap()).norm();
            assert!(d < 1e-13);
        }
    }

    #[test]
    fn adjoint_involution_and_dense_adjoint_cross_check() {
        let m = flat1();
        let phase = Symbol::coord_fn(TAU2, CoordFn::sin(0.3, vec![1]))
            .add(&Symbol::real_constant(1.0));
        let s = phase.mul(&one_plus_sq(&m)).with_class(1.0, 1.0, 0.0);
        let e = Expansion::single(1, 1.0, s, 0.0, 0.5, f64::NEG_INFINITY);
        let k = 2usize;

        // involution: residual decays at the remainder order
        let twice = adjoint_symbol(&adjoint_symbol(&e, 0.5, &m, k).unwrap(), 0.5, &m, k).unwrap();
        let mut pairs = Vec::new();
        for &l in &[10.0, 20.0, 40.0, 80.0, 160.0, 320.0] {
            let mut worst = 0.0f64;
            for &x in &[0.5, 2.9] {
                worst = worst
                    .max((twice.eval(&[x], &[l]).unwrap() - e.eval(&[x], &[l]).unwrap()).norm());
            }
            pairs.push((l, worst));
        }
        let fit = fit_decay(&pairs).unwrap();
        assert!(fit.slope <= 1.0 - (k as f64 + 1.0) + 0.3, "involution slope {:.3}", fit.slope);

        // dense conjugate-transpose oracle
        let g = Grid::new(1, 128, TAU2).unwrap();
        let dense = discretize_flat(&e, &g).unwrap().adjoint();
        let adj = adjoint_symbol(&e, 0.5, &m, k).unwrap();
        let freqs: Vec<Vec<i64>> = [6i64, 10, 16, 26, 40, 60].iter().map(|&f| vec![f]).collect();
        let probed = effective_symbol(&|v| Ok(dense.apply(v)), &g, &freqs).unwrap();
        let mut pairs = Vec::new();
        for (fi, f) in freqs.iter().enumerate() {
            let xi = g.xi(f);
            let mut worst = 0.0f64;
            for (i, x) in g.points().iter().enumerate() {
                worst =
                    worst.max((adj.eval(x, &xi).unwrap() - probed.values[fi][i]).norm());
            }
            pairs.push((xi[0], worst));
        }
        let fit = fit_decay(&pairs).unwrap();
        assert!(fit.slope <= 1.0 - k as f64 + 0.3, "dense-adjoint slope {:.3}", fit.slope);
    }

    #[test]
    fn p_table_is_trivial_for_flat_and_one_dimensional_models() {
        for model in [flat1(), curved1()] {
            let t = p_table(&model, 0.5, &grid_points_1d(3), 4).unwrap();
            assert!(t.symmetric);
            for e in t.sorted_entries() {
                let total = mi_degree(&e.beta) + mi_degree(&e.gamma);
                if total == 0 {
                    assert!(!e.is_zero);
                    let v = e.symbol.eval(&[0.4], &[3.0]).unwrap();
                    assert!((v - C64::new(1.0, 0.0)).norm() < 1e-12);
                } else {
                    assert!(e.is_zero, "entry ({:?},{:?})", e.beta, e.gamma);
                }
            }
        }
        let flat2 = Arc::new(ManifoldModel::flat(2, TAU2));
        let t = p_table(&flat2, 0.3, &[vec![0.3, 1.1]], 3).unwrap();
        for e in t.sorted_entries() {
            let total = mi_degree(&e.beta) + mi_degree(&e.gamma);
            assert_eq!(e.is_zero, total > 0);
        }
    }

    #[test]
    fn p_table_on_a_torsionful_surface_has_bounded_nonzero_entries() {
        let m = torsionful2();
        let grid = vec![vec![0.3, 0.9], vec![2.0, 4.1]];
        let t = p_table(&m, 0.5, &grid, 3).unwrap();
        assert!(!t.symmetric);
        let mut nonzero = 0usize;
        for e in t.sorted_entries() {
            let (db, dg) = (mi_degree(&e.beta), mi_degree(&e.gamma));
            if db == 0 || dg == 0 {
                if db + dg > 0 {
                    assert!(e.is_zero);
                }
                continue;
            }
            assert!(e.degree <= db.min(dg));
            if !e.is_zero {
                nonzero += 1;
            }
        }
        assert!(nonzero > 0, "a torsionful connection must produce corrections");
    }

    #[test]
    fn p_entry_jets_differentiate_consistently_in_the_base_point() {
        let m = torsionful2();
        let grid = vec![vec![0.3, 0.9]];
        let t = p_table(&m, 0.5, &grid, 2).unwrap();
        let e = t.entry(&[1, 0], &[0, 1]).unwrap();
        assert!(!e.is_zero);
        // finite-difference the entry value in x₁ and compare with the jet
        let xi = [1.3, -0.7];
        let x0 = [0.3, 0.9];
        let h = 1e-4;
        let vp = e.symbol.eval(&[0.3 + h, 0.9], &xi).unwrap();
        let vm = e.symbol.eval(&[0.3 - h, 0.9], &xi).unwrap();
        let fd = (vp - vm).scale(1.0 / (2.0 * h));
        let dx = e.symbol.derivative(&x0, &xi, &[1, 0], &[0, 0]).unwrap();
        assert!((fd - dx).norm() < 1e-6 * (1.0 + dx.norm()), "{fd} vs {dx}");
    }

    #[test]
    fn flat_composition_obeys_the_product_rule_exactly() {
        let i = C64::new(0.0, 1.0);
        let sa = Symbol::xi(1, 0).scale(i);
        let v = CoordFn::Sum(vec![CoordFn::Const(1.0), CoordFn::sin(0.7, vec![1])]);
        let sb = Symbol::coord_fn(TAU2, v.clone());
        let ea = Expansion::single(1, 1.0, sa, 0.0, 0.5, f64::NEG_INFINITY);
        let eb = Expansion::single(1, 0.0, sb.clone(), 0.0, 0.5, f64::NEG_INFINITY);
        let ab = compose_flat(&ea, &eb, 1).unwrap();
        for (x, xi) in [(0.9f64, 4.0), (2.2, -6.0)] {
            let want = C64::new(0.0, xi) * C64::new(1.0 + 0.7 * x.sin(), 0.0)
                + C64::new(0.7 * x.cos(), 0.0);
            let got = ab.eval(&[x], &[xi]).unwrap();
            assert!((got - want).norm() < 1e-13, "{got} vs {want}");
        }
    }

    #[test]
    fn flat_composition_matches_the_fourier_oracle_at_remainder_order() {
        let g = Grid::new(1, 256, TAU2).unwrap();
        let ca = Symbol::coord_fn(
            TAU2,
            CoordFn::Sum(vec![CoordFn::Const(1.0), CoordFn::sin(0.3, vec![1])]),
        );
        let cb = Symbol::coord_fn(
            TAU2,
            CoordFn::Sum(vec![CoordFn::Const(1.0), CoordFn::cos(0.2, vec![2])]),
        );
        let m = flat1();
        let sa = ca.mul(&one_plus_sq(&m)).with_class(1.0, 1.0, 0.0);
        let sb = cb.mul(&one_plus_sq(&m)).with_class(1.0, 1.0, 0.0);
        let ea = Expansion::single(1, 1.0, sa, 0.0, 0.5, f64::NEG_INFINITY);
        let eb = Expansion::single(1, 1.0, sb, 0.0, 0.5, f64::NEG_INFINITY);
        let mut slopes = Vec::new();
        for k in [1usize, 2] {
            let ab = compose_flat(&ea, &eb, k).unwrap();
            let mut pairs = Vec::new();
            for &l in &[10i64, 18, 32, 56, 100] {
                let xi = g.xi(&[l]);
                let mut worst = 0.0f64;
                for x in [[0.4], [1.9], [5.0]] {
                    let probe =
                        crate::oracle::compose_effective_probe(&ea, &eb, &g, &x, &[l]).unwrap();
                    let s = ab.eval(&x, &xi).unwrap();
                    worst = worst.max((s - probe).norm());
                }
                pairs.push((xi[0], worst));
            }
            let fit = fit_decay(&pairs).unwrap();
            assert!(
                fit.slope <= 2.0 - (k as f64 + 1.0) + 0.3,
                "K = {k}: slope {:.3}",
                fit.slope
            );
            slopes.push(fit.slope);
        }
        assert!(slopes[1] < slopes[0], "more terms must decay faster: {slopes:?}");
    }

    #[test]
    fn connection_composition_reduces_to_the_flat_series_on_flat_models() {
        let m = flat1();
        let t = p_table(&m, 0.5, &grid_points_1d(2), 4).unwrap();
        let ca = Symbol::coord_fn(TAU2, CoordFn::sin(0.4, vec![1]))
            .add(&Symbol::real_constant(1.0));
        let cb = Symbol::coord_fn(TAU2, CoordFn::cos(0.3, vec![1]))
            .add(&Symbol::real_constant(2.0));
        let sa = ca.mul(&one_plus_sq(&m)).with_class(1.0, 1.0, 0.0);
        let sb = cb.mul(&one_plus_sq(&m)).with_class(1.0, 1.0, 0.0);
        let ea = Expansion::single(1, 1.0, sa, 0.0, 0.5, f64::NEG_INFINITY);
        let eb = Expansion::single(1, 1.0, sb, 0.0, 0.5, f64::NEG_INFINITY);
        let k = 3usize;
        let flat = compose_flat(&ea, &eb, k).unwrap();
        let global = compose_global(&ea, &eb, &m, 0.5, &t, k).unwrap();
        let of: Vec<f64> = flat.terms.iter().map(|(o, _)| *o).collect();
        let og: Vec<f64> = global.terms.iter().map(|(o, _)| *o).collect();
        assert_eq!(of.len(), og.len(), "{of:?} vs {og:?}");
        for ((oa, sa), (ob, sb)) in flat.terms.iter().zip(global.terms.iter()) {
            assert!((oa - ob).abs() < 1e-12);
            for (x, xi) in [(0.8, 17.0), (3.9, -9.0)] {
                let va = sa.eval(&[x], &[xi]).unwrap();
                let vb = sb.eval(&[x], &[xi]).unwrap();
                assert!(
                    (va - vb).norm() <= 1e-10 * va.norm().max(1.0),
                    "order {oa}: {va} vs {vb}"
                );
            }
        }
    }

    #[test]
    fn composing_with_one_is_the_identity_and_errors_are_reported() {
        let m = torsionful2();
        let t = p_table(&m, 0.5, &[vec![0.3, 0.9]], 2).unwrap();
        let one = Expansion::single(2, 0.0, Symbol::real_constant(1.0), 0.0, 0.5, f64::NEG_INFINITY);
        let sb = Symbol::xi(2, 0)
            .scale(C64::new(0.0, 1.0))
            .mul(&Symbol::coord_fn(TAU2, CoordFn::sin(0.3, vec![1, 0])));
        let eb = Expansion::single(2, 1.0, sb, 0.0, 0.5, f64::NEG_INFINITY);
        let ab = compose_global(&one, &eb, &m, 0.5, &t, 1).unwrap();
        for (x, xi) in [([0.4, 1.0], [3.0, -1.0]), ([2.0, 0.2], [0.5, 6.0])] {
            let d = (ab.eval(&x, &xi).unwrap() - eb.eval(&x, &xi).unwrap()).norm();
            assert!(d < 1e-12);
        }

        // too small a table for the requested depth
        let err = compose_global(&eb, &eb, &m, 0.5, &t, 8).unwrap_err();
        assert!(matches!(err, CalcError::MissingPEntry(_)), "{err}");

        // no hypothesis covers ρ = 0.45 on a torsionful connection
        let weak = Expansion::single(
            2,
            1.0,
            Symbol::xi(2, 0).with_class(1.0, 0.45, 0.0),
            0.0,
            0.5,
            f64::NEG_INFINITY,
        );
        let err = compose_global(&weak, &weak, &m, 0.5, &t, 1).unwrap_err();
        assert!(matches!(err, CalcError::HypothesisViolation(_)), "{err}");
    }

    #[test]
    fn flat_kernel_has_unit_mass_and_differentiates() {
        let m = flat1();
        let g = Grid::new(1, 128, TAU2).unwrap();

        let one = Expansion::single(1, 0.0, Symbol::real_constant(1.0), 0.0, 0.5, f64::NEG_INFINITY);
        let ker = kernel_from_symbol(&one, &m, 0.5, 0.0, 64.0, Mollifier::default()).unwrap();
        // Op(1) = identity: applying to the constant function must return it
        let ones = vec![C64::new(1.0, 0.0); g.len()];
        let mass = ker.apply(&g, &ones).unwrap();
        for v in &mass {
            assert!((v - C64::new(1.0, 0.0)).norm() < 1e-6, "mass {v}");
        }

        let ixi = Expansion::single(
            1,
            1.0,
            Symbol::xi(1, 0).scale(C64::new(0.0, 1.0)),
            0.0,
            0.5,
            f64::NEG_INFINITY,
        );
        let u = band_limited(&g, 6, 11);
        let du = apply_pdo_global(&ixi, &m, 0.5, 0.0, &g, &u, 64.0).unwrap();
        let c = spectrum(&g, &u);
        let want: Vec<C64> = {
            let mut cc = c.clone();
            for (k, v) in cc.iter_mut().enumerate() {
                *v *= C64::new(0.0, g.xi(&[g.freq_int(k)])[0]);
            }
            crate::oracle::synthesis(&g, &cc)
        };
        let scale = want.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (a, b) in du.iter().zip(&want) {
            assert!((a - b).norm() < 2e-5 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn flat_kernel_discretization_matches_the_fourier_route() {
        let m = flat1();
        let g = Grid::new(1, 96, TAU2).unwrap();
        let s = Symbol::coord_fn(TAU2, CoordFn::sin(0.3, vec![1]))
            .add(&Symbol::real_constant(1.0))
            .mul(&Symbol::xi(1, 0).scale(C64::new(0.0, 1.0)));
        let e = Expansion::single(1, 1.0, s, 0.0, 0.5, f64::NEG_INFINITY);
        let ker = kernel_from_symbol(&e, &m, 0.5, 0.0, 64.0, Mollifier::default()).unwrap();
        let u = band_limited(&g, 5, 3);
        let via_kernel = ker.apply(&g, &u).unwrap();
        let via_fourier = lattice_apply(&e, &g, &u).unwrap();
        let scale = via_fourier.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (a, b) in via_kernel.iter().zip(&via_fourier) {
            assert!((a - b).norm() < 2e-5 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn kernel_quadrature_flags_nonconvergence_on_the_diagonal() {
        let m = flat1();
        let one = Expansion::single(1, 0.0, Symbol::real_constant(1.0), 0.0, 0.5, f64::NEG_INFINITY);
        let ker = kernel_from_symbol(&one, &m, 0.5, 0.0, 32.0, Mollifier::default()).unwrap();
        // on the diagonal the integral grows with the cutoff
        let err = ker.eval(&[0.5], &[0.5]).unwrap_err();
        assert!(matches!(err, CalcError::QuadratureNotConverged(_)), "{err}");
        // far off the diagonal the doubled cutoff agrees once the mollifier
        // tail has decayed below the convergence tolerance
        let ker2 = kernel_from_symbol(&one, &m, 0.5, 0.0, 256.0, Mollifier::default()).unwrap();
        let v = ker2.eval(&[0.5], &[1.6]).unwrap();
        assert!(v.norm() < 1e-3, "off-diagonal kernel should be tiny, got {v}");
    }

    #[test]
    fn tau_representations_produce_the_same_operator_within_remainder() {
        let m = curved1();
        let g = Grid::new(1, 96, TAU2).unwrap();
        let c = Symbol::coord_fn(
            TAU2,
            CoordFn::Sum(vec![CoordFn::Const(1.0), CoordFn::sin(0.2, vec![1])]),
        );
        let s = c
            .mul(&Symbol::xi(1, 0).scale(C64::new(0.0, 1.0)))
            .add(&Symbol::coord_fn(TAU2, CoordFn::cos(0.3, vec![1])))
            .with_class(1.0, 1.0, 0.0);
        let e0 = Expansion::single(1, 1.0, s, 0.0, 0.5, f64::NEG_INFINITY);
        let eh = change_tau(&e0, 0.5, &m, 3).unwrap();
        let k0 = kernel_from_symbol(&e0, &m, 0.5, 0.0, 48.0, Mollifier::default()).unwrap();
        let kh = kernel_from_symbol(&eh, &m, 0.5, 0.5, 48.0, Mollifier::default()).unwrap();
        let u = band_limited(&g, 5, 17);
        let a0 = k0.apply(&g, &u).unwrap();
        let ah = kh.apply(&g, &u).unwrap();
        let scale = a0.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let worst = a0.iter().zip(&ah).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(worst < 2e-2 * scale, "τ-routes differ by {worst:.3e} against {scale:.3e}");
    }

    #[test]
    fn adjoint_of_a_composition_matches_the_reversed_composition() {
        let m = curved1();
        let t = p_table(&m, 0.5, &grid_points_1d(2), 4).unwrap();
        // τ = 0 keeps the adjoint series nontrivial, and the elliptic weight
        // keeps the expansions from terminating, so the gap genuinely decays
        let mk = |amp: f64, freq: Vec<i32>| {
            Expansion::single(
                1,
                1.0,
                Symbol::coord_fn(TAU2, CoordFn::Sum(vec![CoordFn::Const(1.0), CoordFn::sin(amp, freq)]))
                    .mul(&one_plus_sq(&m))
                    .with_class(1.0, 1.0, 0.0),
                0.0,
                0.5,
                f64::NEG_INFINITY,
            )
        };
        let (ea, eb) = (mk(0.3, vec![1]), mk(0.25, vec![2]));
        let k = 3usize;
        let lhs =
            adjoint_symbol(&compose_global(&ea, &eb, &m, 0.5, &t, k).unwrap(), 0.5, &m, k).unwrap();
        let rhs = compose_global(
            &adjoint_symbol(&eb, 0.5, &m, k).unwrap(),
            &adjoint_symbol(&ea, 0.5, &m, k).unwrap(),
            &m,
            0.5,
            &t,
            k,
        )
        .unwrap();
        let mut pairs = Vec::new();
        for &l in &[20.0, 40.0, 80.0, 160.0] {
            let mut worst = 0.0f64;
            for &x in &[0.6, 2.8] {
                let d = (lhs.eval(&[x], &[l]).unwrap() - rhs.eval(&[x], &[l]).unwrap()).norm();
                worst = worst.max(d);
            }
            pairs.push((l, worst));
        }
        let fit = fit_decay(&pairs).unwrap();
        // both routes agree with the adjoint of the product through K kept orders
        assert!(fit.slope <= 2.0 - k as f64 + 0.45, "adjoint-composition gap slope {:.3}", fit.slope);
    }

    #[test]
    fn composition_is_associative_to_truncation_order() {
        let m = curved1();
        let t = p_table(&m, 0.5, &grid_points_1d(2), 4).unwrap();
        let i = C64::new(0.0, 1.0);
        let mk = |amp: f64, freq: Vec<i32>| {
            Expansion::single(
                1,
                1.0,
                Symbol::coord_fn(TAU2, CoordFn::Sum(vec![CoordFn::Const(1.0), CoordFn::sin(amp, freq)]))
                    .mul(&Symbol::xi(1, 0).scale(i))
                    .with_class(1.0, 1.0, 0.0),
                0.0,
                0.5,
                f64::NEG_INFINITY,
            )
        };
        let (ea, eb, ec) = (mk(0.3, vec![1]), mk(0.2, vec![2]), mk(0.15, vec![1]));
        let k = 2usize;
        let left = compose_global(&compose_global(&ea, &eb, &m, 0.5, &t, k).unwrap(), &ec, &m, 0.5, &t, k).unwrap();
        let right = compose_global(&ea, &compose_global(&eb, &ec, &m, 0.5, &t, k).unwrap(), &m, 0.5, &t, k).unwrap();
        let mut pairs = Vec::new();
        for &l in &[20.0, 40.0, 80.0, 160.0] {
            let mut worst = 0.0f64;
            for &x in &[0.6, 2.8] {
                let d = (left.eval(&[x], &[l]).unwrap() - right.eval(&[x], &[l]).unwrap()).norm();
                worst = worst.max(d);
            }
            pairs.push((l, worst));
        }
        let fit = fit_decay(&pairs).unwrap();
        // both orderings keep all terms above 3−K, so the gap decays below it
        assert!(fit.slope <= 3.0 - k as f64 + 0.3, "associativity gap slope {:.3}", fit.slope);
    }
}
