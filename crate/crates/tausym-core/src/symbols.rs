//! Symbols on the cotangent bundle and truncated asymptotic expansions.
//!
//! A `Symbol` is an immutable expression DAG that can evaluate itself as a
//! truncated Taylor jet in (x, ξ) to any order, so every mixed derivative
//! ∂_x^α ∂_ξ^β is exact up to solver tolerance.  Class membership data
//! (order m, ρ, δ) rides along through the constructors with conservative
//! bookkeeping and can be overridden where sharper information is known.
//! Shared subexpressions are evaluated once per call via pointer-keyed
//! memoization, which keeps the derivative chains produced by horizontal
//! differentiation and composition series affordable.
//!
//! An `Expansion` is a finite, order-sorted list of symbol terms with a
//! remainder order and quantization tags (τ, κ); the series combinators
//! enforce tag compatibility and use weakest-link remainder bookkeeping.

use std::collections::HashMap;
use std::sync::Arc;

use crate::coordfn::{smooth_step_derivs, CoordFn};
use crate::error::{CalcError, Result};
use crate::geometry::ManifoldModel;
use crate::jet::{unijet, Jet};
use crate::multiindex::{mi_degree, mi_factorial, multiset_orderings, table, Mi};
use crate::C64;

/// A scalar function s ↦ ω(s) with exact derivatives, tagged with the class
/// S^m_ρ it belongs to on the relevant ray.
pub trait ScalarFunction: Send + Sync {
    fn name(&self) -> &str;
    /// [ω(s), ω′(s), …, ω^{(jmax)}(s)].
    fn derivs(&self, s: f64, jmax: usize) -> Vec<f64>;
    fn order(&self) -> f64;
    fn rho(&self) -> f64;
}

/// ω(s) = (1 + s²)^{p/2}.
#[derive(Clone, Debug)]
pub struct PowerOnePlusSq {
    pub p: f64,
}

impl ScalarFunction for PowerOnePlusSq {
    fn name(&self) -> &str {
        "(1+s^2)^(p/2)"
    }
    fn derivs(&self, s: f64, jmax: usize) -> Vec<f64> {
        let u = unijet(jmax.max(1), s);
        let v = u.mul(&u).add(&Jet::constant(u.table.clone(), 1.0)).powf(self.p / 2.0);
        (0..=jmax).map(|k| v.c.get(k).copied().unwrap_or(0.0) * mi_factorial(&[k as u8])).collect()
    }
    fn order(&self) -> f64 {
        self.p
    }
    fn rho(&self) -> f64 {
        1.0
    }
}

/// Smooth step: identically 0 for s ≤ lo, identically 1 for s ≥ hi.
#[derive(Clone, Debug)]
pub struct SmoothStep {
    pub lo: f64,
    pub hi: f64,
}

impl ScalarFunction for SmoothStep {
    fn name(&self) -> &str {
        "smooth-step"
    }
    fn derivs(&self, s: f64, jmax: usize) -> Vec<f64> {
        let w = self.hi - self.lo;
        let base = smooth_step_derivs((s - self.lo) / w, jmax);
        base.iter().enumerate().map(|(j, d)| d / w.powi(j as i32)).collect()
    }
    fn order(&self) -> f64 {
        0.0
    }
    fn rho(&self) -> f64 {
        1.0
    }
}

type CustomFn = Arc<dyn Fn(&[f64], &[f64], usize) -> Result<Jet<C64>> + Send + Sync>;

enum Node {
    Const(C64),
    /// Function of x alone.
    CoordFn { period: f64, f: CoordFn },
    /// Monomial ξ^μ.
    XiMono { mi: Mi },
    /// |ξ|_x = sqrt(Σ g^{ij} ξ_i ξ_j); requires a metric.
    MetricNorm { model: Arc<ManifoldModel> },
    /// Γ^k_{ij}(x) (upper, then the two lower indices in order).
    Gamma { model: Arc<ManifoldModel>, upper: usize, d1: usize, d2: usize },
    Add(Symbol, Symbol),
    Mul(Symbol, Symbol),
    Scale(Symbol, C64),
    Conj(Symbol),
    DerivX(Symbol, usize),
    DerivXi(Symbol, usize),
    /// f^p for real-valued positive f.
    Power(Symbol, f64),
    /// ω(f) for real-valued f.
    Compose { f: Arc<dyn ScalarFunction>, inner: Symbol },
    /// Externally supplied jet evaluator (x, ξ, order) ↦ jet over (x|ξ).
    Custom { name: String, f: CustomFn },
}

/// A symbol a(x, ξ) with exact derivative jets and class tags.
#[derive(Clone)]
pub struct Symbol {
    node: Arc<Node>,
    /// Class order m (a ∈ S^m_{ρ,δ} as declared).
    pub m: f64,
    pub rho: f64,
    pub delta: f64,
    /// Exact |ξ|-homogeneity degree, where known.
    pub homogeneity: Option<f64>,
}

impl std::fmt::Debug for Symbol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Symbol(m={}, rho={}, delta={})", self.m, self.rho, self.delta)
    }
}

fn node(n: Node, m: f64, rho: f64, delta: f64, hom: Option<f64>) -> Symbol {
    Symbol { node: Arc::new(n), m, rho, delta, homogeneity: hom }
}

impl Symbol {
    pub fn constant(v: C64) -> Symbol {
        node(Node::Const(v), 0.0, 1.0, 0.0, Some(0.0))
    }

    pub fn real_constant(v: f64) -> Symbol {
        Symbol::constant(C64::new(v, 0.0))
    }

    /// A function of x alone (order 0).
    pub fn coord_fn(period: f64, f: CoordFn) -> Symbol {
        node(Node::CoordFn { period, f }, 0.0, 1.0, 0.0, Some(0.0))
    }

    /// ξ_k.
    pub fn xi(n: usize, k: usize) -> Symbol {
        let mut mi = vec![0u8; n];
        mi[k] = 1;
        Symbol::xi_mono(mi)
    }

    /// ξ^μ.
    pub fn xi_mono(mi: Mi) -> Symbol {
        let d = mi_degree(&mi) as f64;
        node(Node::XiMono { mi }, d, 1.0, 0.0, Some(d))
    }

    /// |ξ|_x for the model metric.
    pub fn metric_norm(model: &Arc<ManifoldModel>) -> Symbol {
        node(Node::MetricNorm { model: model.clone() }, 1.0, 1.0, 0.0, Some(1.0))
    }

    /// ⟨ξ⟩_x = (1 + |ξ|_x²)^{1/2}, an order-1 elliptic weight that stays
    /// smooth through ξ = 0 (unlike compositions with |ξ|_x).
    pub fn xi_bracket(model: &Arc<ManifoldModel>) -> Symbol {
        let m = model.clone();
        Symbol::from_jet_fn("xi-bracket", 1.0, 1.0, 0.0, move |x, xi, order| {
            let n = m.dim;
            let t = table(2 * n, order);
            let point = |k: usize, v: f64| -> Jet<f64> {
                if t.order == 0 {
                    Jet::constant(t.clone(), v)
                } else {
                    Jet::variable(t.clone(), k, v)
                }
            };
            let xa: Vec<Jet<f64>> = (0..n).map(|k| point(k, x[k])).collect();
            let g = m.metric_inv_jets(&xa)?;
            let xiv: Vec<Jet<f64>> = (0..n).map(|k| point(n + k, xi[k])).collect();
            let mut q = Jet::constant(t.clone(), 1.0);
            for i in 0..n {
                for j in 0..n {
                    q.add_assign(&g[i * n + j].mul(&xiv[i]).mul(&xiv[j]));
                }
            }
            Ok(q.powf(0.5).to_complex())
        })
    }

    /// Γ^k_{ij}(x).
    pub fn gamma_coeff(model: &Arc<ManifoldModel>, upper: usize, d1: usize, d2: usize) -> Symbol {
        node(Node::Gamma { model: model.clone(), upper, d1, d2 }, 0.0, 1.0, 0.0, Some(0.0))
    }

    /// Wrap an external jet evaluator; class tags must be supplied.
    pub fn from_jet_fn(
        name: &str,
        m: f64,
        rho: f64,
        delta: f64,
        f: impl Fn(&[f64], &[f64], usize) -> Result<Jet<C64>> + Send + Sync + 'static,
    ) -> Symbol {
        node(Node::Custom { name: name.to_string(), f: Arc::new(f) }, m, rho, delta, None)
    }

    pub fn add(&self, o: &Symbol) -> Symbol {
        let hom = match (self.homogeneity, o.homogeneity) {
            (Some(a), Some(b)) if a == b => Some(a),
            _ => None,
        };
        node(
            Node::Add(self.clone(), o.clone()),
            self.m.max(o.m),
            self.rho.min(o.rho),
            self.delta.max(o.delta),
            hom,
        )
    }

    pub fn sub(&self, o: &Symbol) -> Symbol {
        self.add(&o.scale(C64::new(-1.0, 0.0)))
    }

    pub fn mul(&self, o: &Symbol) -> Symbol {
        let hom = match (self.homogeneity, o.homogeneity) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
        node(
            Node::Mul(self.clone(), o.clone()),
            self.m + o.m,
            self.rho.min(o.rho),
            self.delta.max(o.delta),
            hom,
        )
    }

    pub fn scale(&self, v: C64) -> Symbol {
        node(Node::Scale(self.clone(), v), self.m, self.rho, self.delta, self.homogeneity)
    }

    pub fn scale_re(&self, v: f64) -> Symbol {
        self.scale(C64::new(v, 0.0))
    }

    pub fn conj(&self) -> Symbol {
        node(Node::Conj(self.clone()), self.m, self.rho, self.delta, self.homogeneity)
    }

    pub fn deriv_x(&self, i: usize) -> Symbol {
        node(
            Node::DerivX(self.clone(), i),
            self.m + self.delta,
            self.rho,
            self.delta,
            self.homogeneity,
        )
    }

    pub fn deriv_xi(&self, k: usize) -> Symbol {
        node(
            Node::DerivXi(self.clone(), k),
            self.m - self.rho,
            self.rho,
            self.delta,
            self.homogeneity.map(|h| h - 1.0),
        )
    }

    pub fn deriv_x_multi(&self, alpha: &[u8]) -> Symbol {
        let mut out = self.clone();
        for (i, &e) in alpha.iter().enumerate() {
            for _ in 0..e {
                out = out.deriv_x(i);
            }
        }
        out
    }

    pub fn deriv_xi_multi(&self, beta: &[u8]) -> Symbol {
        let mut out = self.clone();
        for (k, &e) in beta.iter().enumerate() {
            for _ in 0..e {
                out = out.deriv_xi(k);
            }
        }
        out
    }

    /// f^p; the symbol must evaluate to positive reals.
    pub fn power(&self, p: f64) -> Symbol {
        node(
            Node::Power(self.clone(), p),
            self.m * p,
            self.rho,
            self.delta,
            self.homogeneity.map(|h| h * p),
        )
    }

    /// ω(f); the inner symbol must evaluate to reals.
    pub fn compose_scalar(&self, f: Arc<dyn ScalarFunction>) -> Symbol {
        let m = f.order() * self.m.max(0.0);
        let rho = self.rho.min(f.rho());
        node(Node::Compose { f, inner: self.clone() }, m, rho, self.delta, None)
    }

    /// Override the declared class.
    pub fn with_class(mut self, m: f64, rho: f64, delta: f64) -> Symbol {
        self.m = m;
        self.rho = rho;
        self.delta = delta;
        self
    }

    pub fn with_homogeneity(mut self, h: Option<f64>) -> Symbol {
        self.homogeneity = h;
        self
    }

    /// Jet over (x-offsets | ξ-offsets) at (x, ξ) to total order `order`.
    pub fn eval_jet(&self, x: &[f64], xi: &[f64], order: usize) -> Result<Jet<C64>> {
        let mut cache = HashMap::new();
        self.eval_rec(x, xi, order, &mut cache)
    }

    pub fn eval(&self, x: &[f64], xi: &[f64]) -> Result<C64> {
        Ok(*self.eval_jet(x, xi, 0)?.value())
    }

    /// ∂_x^α ∂_ξ^β a(x, ξ).
    pub fn derivative(&self, x: &[f64], xi: &[f64], alpha: &[u8], beta: &[u8]) -> Result<C64> {
        let j = self.eval_jet(x, xi, mi_degree(alpha) + mi_degree(beta))?;
        let mut mi = alpha.to_vec();
        mi.extend_from_slice(beta);
        Ok(j.derivative(&mi))
    }

    fn eval_rec(
        &self,
        x: &[f64],
        xi: &[f64],
        order: usize,
        cache: &mut HashMap<(usize, usize), Jet<C64>>,
    ) -> Result<Jet<C64>> {
        let key = (Arc::as_ptr(&self.node) as usize, order);
        if let Some(j) = cache.get(&key) {
            return Ok(j.clone());
        }
        let n = x.len();
        let t = table(2 * n, order);
        // an order-0 table cannot hold a variable jet; fall back to the value
        let point = |tt: &Arc<crate::multiindex::IndexTable>, k: usize, v: f64| -> Jet<f64> {
            if tt.order == 0 {
                Jet::constant(tt.clone(), v)
            } else {
                Jet::variable(tt.clone(), k, v)
            }
        };
        let x_args = |tt: &Arc<crate::multiindex::IndexTable>| -> Vec<Jet<f64>> {
            (0..n).map(|i| point(tt, i, x[i])).collect()
        };
        let jet: Jet<C64> = match &*self.node {
            Node::Const(v) => Jet::constant(t, *v),
            Node::CoordFn { period, f } => f.eval_jet(*period, &x_args(&t)).to_complex(),
            Node::XiMono { mi } => {
                let mut acc = Jet::constant(t.clone(), 1.0);
                for (k, &e) in mi.iter().enumerate() {
                    if e > 0 {
                        acc = acc.mul(&point(&t, n + k, xi[k]).pow(e as usize));
                    }
                }
                acc.to_complex()
            }
            Node::MetricNorm { model } => {
                let g = model.metric_inv_jets(&x_args(&t))?;
                let xiv: Vec<Jet<f64>> = (0..n).map(|k| point(&t, n + k, xi[k])).collect();
                let mut s = Jet::zero(t);
                for i in 0..n {
                    for j in 0..n {
                        s.add_assign(&g[i * n + j].mul(&xiv[i]).mul(&xiv[j]));
                    }
                }
                if *s.value() <= 0.0 {
                    return Err(CalcError::InvalidInput(format!(
                        "metric norm evaluated at |ξ|² = {:.3e} ≤ 0",
                        s.value()
                    )));
                }
                s.sqrt().to_complex()
            }
            Node::Gamma { model, upper, d1, d2 } => {
                let g = model.gamma_jets(&x_args(&t));
                g[(upper * n + d1) * n + d2].to_complex()
            }
            Node::Add(a, b) => {
                a.eval_rec(x, xi, order, cache)?.add(&b.eval_rec(x, xi, order, cache)?)
            }
            Node::Mul(a, b) => {
                a.eval_rec(x, xi, order, cache)?.mul(&b.eval_rec(x, xi, order, cache)?)
            }
            Node::Scale(a, v) => a.eval_rec(x, xi, order, cache)?.scale_c(*v),
            Node::Conj(a) => a.eval_rec(x, xi, order, cache)?.conj(),
            Node::DerivX(a, i) => a.eval_rec(x, xi, order + 1, cache)?.deriv(*i).retable(t),
            Node::DerivXi(a, k) => a.eval_rec(x, xi, order + 1, cache)?.deriv(n + *k).retable(t),
            Node::Power(a, p) => {
                let r = a.eval_rec(x, xi, order, cache)?.real_part();
                if *r.value() <= 0.0 {
                    return Err(CalcError::InvalidInput(format!(
                        "power base evaluated at {:.3e} ≤ 0",
                        r.value()
                    )));
                }
                r.powf(*p).to_complex()
            }
            Node::Compose { f, inner } => {
                let g = inner.eval_rec(x, xi, order, cache)?.real_part();
                let d = f.derivs(*g.value(), order);
                g.compose_scalar(&d).to_complex()
            }
            Node::Custom { name, f } => {
                let j = f(x, xi, order)?;
                if j.table.nv != 2 * n || j.table.order != order {
                    return Err(CalcError::InvalidInput(format!(
                        "jet evaluator '{name}' returned a jet over ({}, {}), expected ({}, {})",
                        j.table.nv,
                        j.table.order,
                        2 * n,
                        order
                    )));
                }
                j
            }
        };
        cache.insert(key, jet.clone());
        Ok(jet)
    }
}

/// ∇_i a = ∂_{x^i} a + Σ_{k,j} Γ^k_{ij} ξ_k ∂_{ξ_j} a
pub fn horizontal_derivative(model: &Arc<ManifoldModel>, a: &Symbol, i: usize) -> Symbol {
    let n = model.dim;
    let mut out = a.deriv_x(i);
    if !model.is_flat() {
        for k in 0..n {
            for j in 0..n {
                let g = Symbol::gamma_coeff(model, k, i, j);
                out = out.add(&g.mul(&Symbol::xi(n, k)).mul(&a.deriv_xi(j)));
            }
        }
    }
    // the vertical part has order m + 1 − ρ, the base part m + δ
    let m = if model.is_flat() { a.m + a.delta } else { (a.m + a.delta).max(a.m + 1.0 - a.rho) };
    out.with_class(m, a.rho, a.delta).with_homogeneity(a.homogeneity)
}

/// Symmetrized iterated horizontal derivative ∇^α: the average over all
/// distinct orderings of the index multiset, so the flat case is exactly
/// ∂_x^α.
pub fn horizontal_derivative_multi(model: &Arc<ManifoldModel>, a: &Symbol, alpha: &[u8]) -> Symbol {
    if mi_degree(alpha) == 0 {
        return a.clone();
    }
    let orderings = multiset_orderings(alpha);
    let mut acc: Option<Symbol> = None;
    for ord in &orderings {
        let mut s = a.clone();
        // innermost derivative applied first
        for &i in ord.iter().rev() {
            s = horizontal_derivative(model, &s, i);
        }
        acc = Some(match acc {
            None => s,
            Some(t) => t.add(&s),
        });
    }
    acc.expect("nonempty orderings").scale_re(1.0 / orderings.len() as f64)
}

/// Truncated horizontal Taylor series of a(y, Φ_{y,x}ξ) in normal
/// coordinates u at x: Σ_{|α|≤J} (1/α!) u^α ∇^α a(x, ξ), as a jet in u.
pub fn horizontal_taylor(
    model: &Arc<ManifoldModel>,
    a: &Symbol,
    x: &[f64],
    xi: &[f64],
    j_max: usize,
) -> Result<Jet<C64>> {
    let n = model.dim;
    let t = table(n, j_max);
    let mut out = Jet::zero(t.clone());
    for (pos, alpha) in t.list.iter().enumerate() {
        let d = horizontal_derivative_multi(model, a, alpha);
        out.c[pos] = d.eval(x, xi)?.scale(1.0 / mi_factorial(alpha));
    }
    Ok(out)
}

/// A finite asymptotic series: order-sorted symbol terms, a remainder
/// order, and the quantization tags it is valid for.
#[derive(Clone, Debug)]
pub struct Expansion {
    /// Base dimension n; symbols take n x-arguments and n ξ-arguments.
    pub dim: usize,
    /// (order, term), strictly decreasing in order after merging.
    pub terms: Vec<(f64, Symbol)>,
    pub remainder_order: f64,
    pub tau: f64,
    pub kappa: f64,
}

const ORDER_EPS: f64 = 1e-9;

impl Expansion {
    pub fn empty(dim: usize, tau: f64, kappa: f64, remainder_order: f64) -> Expansion {
        Expansion { dim, terms: Vec::new(), remainder_order, tau, kappa }
    }

    pub fn single(
        dim: usize,
        m: f64,
        s: Symbol,
        tau: f64,
        kappa: f64,
        remainder_order: f64,
    ) -> Expansion {
        Expansion { dim, terms: vec![(m, s)], remainder_order, tau, kappa }
    }

    /// Insert a term, merging with an existing term of equal order.
    pub fn push(&mut self, m: f64, s: Symbol) {
        for (om, os) in self.terms.iter_mut() {
            if (*om - m).abs() < ORDER_EPS {
                *os = os.add(&s);
                return;
            }
        }
        self.terms.push((m, s));
        self.terms.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite orders"));
    }

    pub fn leading_order(&self) -> f64 {
        self.terms.first().map(|t| t.0).unwrap_or(f64::NEG_INFINITY)
    }

    pub(crate) fn check_tags(&self, o: &Expansion) -> Result<()> {
        if self.dim != o.dim {
            return Err(CalcError::TagMismatch(format!(
                "dimension {} vs {}",
                self.dim, o.dim
            )));
        }
        if (self.tau - o.tau).abs() > 1e-12 || (self.kappa - o.kappa).abs() > 1e-12 {
            return Err(CalcError::TagMismatch(format!(
                "(τ={}, κ={}) vs (τ={}, κ={})",
                self.tau, self.kappa, o.tau, o.kappa
            )));
        }
        Ok(())
    }

    pub fn series_add(&self, o: &Expansion) -> Result<Expansion> {
        self.check_tags(o)?;
        let mut out = Expansion::empty(
            self.dim,
            self.tau,
            self.kappa,
            self.remainder_order.max(o.remainder_order),
        );
        for (m, s) in self.terms.iter().chain(o.terms.iter()) {
            out.push(*m, s.clone());
        }
        Ok(out)
    }

    pub fn series_mul(&self, o: &Expansion) -> Result<Expansion> {
        self.check_tags(o)?;
        // weakest link: either factor's remainder times the other's leading term
        let rem = if self.terms.is_empty() || o.terms.is_empty() {
            self.remainder_order + o.remainder_order
        } else {
            (self.remainder_order + o.leading_order())
                .max(self.leading_order() + o.remainder_order)
        };
        let mut out = Expansion::empty(self.dim, self.tau, self.kappa, rem);
        for (ma, sa) in &self.terms {
            for (mb, sb) in &o.terms {
                out.push(ma + mb, sa.mul(sb));
            }
        }
        Ok(out)
    }

    /// Drop all terms of order below `min_order`; the remainder absorbs the
    /// highest order dropped.
    pub fn truncate(&self, min_order: f64) -> Expansion {
        let mut out = self.clone();
        let max_dropped = out
            .terms
            .iter()
            .filter(|(m, _)| *m < min_order - ORDER_EPS)
            .map(|(m, _)| *m)
            .fold(f64::NEG_INFINITY, f64::max);
        out.terms.retain(|(m, _)| *m >= min_order - ORDER_EPS);
        out.remainder_order = out.remainder_order.max(max_dropped);
        out
    }

    pub fn eval(&self, x: &[f64], xi: &[f64]) -> Result<C64> {
        let mut acc = C64::new(0.0, 0.0);
        for (_, s) in &self.terms {
            acc += s.eval(x, xi)?;
        }
        Ok(acc)
    }

    pub fn eval_jet(&self, x: &[f64], xi: &[f64], order: usize) -> Result<Jet<C64>> {
        let n = x.len();
        let mut acc = Jet::zero(table(2 * n, order));
        for (_, s) in &self.terms {
            acc = acc.add(&s.eval_jet(x, xi, order)?);
        }
        Ok(acc)
    }

    /// Collapse to a single symbol (sum of all terms) tagged with the
    /// leading order.
    pub fn as_symbol(&self) -> Symbol {
        let mut acc: Option<Symbol> = None;
        for (_, s) in &self.terms {
            acc = Some(match acc {
                None => s.clone(),
                Some(t) => t.add(s),
            });
        }
        acc.unwrap_or_else(|| Symbol::real_constant(0.0))
    }
}

/// Grid specification for seminorm estimation: |ξ| = r along fixed unit
/// directions, r log-spaced.
#[derive(Clone, Debug)]
pub struct SeminormGrid {
    pub x_samples: Vec<Vec<f64>>,
    pub xi_dirs: Vec<Vec<f64>>,
    pub r_min: f64,
    pub r_max: f64,
    pub r_count: usize,
    pub max_alpha: usize,
    pub max_beta: usize,
}

#[derive(Clone, Debug)]
pub struct SeminormEntry {
    pub alpha: Mi,
    pub beta: Mi,
    /// Fitted growth exponent of |∂^α_x ∂^β_ξ a| against |ξ|.
    pub fitted: f64,
    /// Class bound m + δ|α| − ρ|β|.
    pub allowed: f64,
    /// Estimated constant sup |∂a| / (1+|ξ|)^allowed.
    pub constant: f64,
    /// Derivative is numerically indistinguishable from zero, so the fitted
    /// exponent reflects roundoff and carries no information.
    pub negligible: bool,
    pub violation: bool,
}

#[derive(Clone, Debug)]
pub struct SeminormReport {
    pub entries: Vec<SeminormEntry>,
    pub slack: f64,
}

/// Fitted-exponent report of the symbol's derivative growth on a log grid.
/// A report, not a proof: class membership is gated with the given slack.
pub fn seminorm_report(a: &Symbol, grid: &SeminormGrid, slack: f64) -> Result<SeminormReport> {
    let n = grid.x_samples[0].len();
    let order = grid.max_alpha + grid.max_beta;
    let t = table(2 * n, order);
    let rs: Vec<f64> = (0..grid.r_count)
        .map(|i| {
            let f = i as f64 / (grid.r_count - 1).max(1) as f64;
            grid.r_min * (grid.r_max / grid.r_min).powf(f)
        })
        .collect();
    // sup over (x, direction) of each derivative magnitude, per radius
    let mut sup: Vec<Vec<f64>> = vec![vec![0.0; t.len()]; rs.len()];
    for (ri, &r) in rs.iter().enumerate() {
        for x in &grid.x_samples {
            for d in &grid.xi_dirs {
                let xi: Vec<f64> = d.iter().map(|v| v * r).collect();
                let jet = a.eval_jet(x, &xi, order)?;
                for (pos, mi) in t.list.iter().enumerate() {
                    let v = jet.c[pos].norm() * mi_factorial(mi);
                    if v > sup[ri][pos] {
                        sup[ri][pos] = v;
                    }
                }
            }
        }
    }
    // the value's own constant sets the scale separating structure from noise
    let value_scale = rs
        .iter()
        .enumerate()
        .map(|(ri, &r)| sup[ri][0] / (1.0 + r).powf(a.m))
        .fold(0.0, f64::max);
    let mut entries = Vec::new();
    for (pos, mi) in t.list.iter().enumerate() {
        let alpha: Mi = mi[..n].to_vec();
        let beta: Mi = mi[n..].to_vec();
        if mi_degree(&alpha) > grid.max_alpha || mi_degree(&beta) > grid.max_beta {
            continue;
        }
        let allowed = a.m + a.delta * mi_degree(&alpha) as f64 - a.rho * mi_degree(&beta) as f64;
        let pts: Vec<(f64, f64)> = rs
            .iter()
            .enumerate()
            .filter(|(ri, _)| sup[*ri][pos] > 0.0)
            .map(|(ri, &r)| (r.ln(), sup[ri][pos].ln()))
            .collect();
        let fitted = if pts.len() >= 2 { fit_slope(&pts) } else { f64::NEG_INFINITY };
        let constant = rs
            .iter()
            .enumerate()
            .map(|(ri, &r)| sup[ri][pos] / (1.0 + r).powf(allowed))
            .fold(0.0, f64::max);
        let negligible = constant <= 1e-9 * value_scale;
        entries.push(SeminormEntry {
            alpha,
            beta,
            fitted,
            allowed,
            constant,
            negligible,
            violation: !negligible && fitted > allowed + slack,
        });
    }
    Ok(SeminormReport { entries, slack })
}

/// Least-squares slope of y against x.
pub fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}
