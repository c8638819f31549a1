//! Truncated multivariate Taylor expansions (jets) over a coefficient ring.
//!
//! A `Jet` stores the Taylor coefficients `c_α = ∂^α f / α!` of a function at
//! a base point, for every multi-index `|α| <=` the table order.  Arithmetic
//! on jets is exact calculus on the truncated polynomial ring, which is how
//! the engine obtains high-order mixed derivatives without subtractive
//! cancellation.  Coefficients are `f64` for geometric quantities, complex
//! for symbols, and polynomials in the covariable for phase expansions.

use crate::multiindex::{self, factorial, IndexTable};
use crate::C64;
use std::sync::Arc;

/// Coefficient ring for jets.
pub trait Ring: Clone + std::fmt::Debug + PartialEq {
    fn zero() -> Self;
    fn one() -> Self;
    fn is_zero(&self) -> bool;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    /// Multiply by a real scalar.
    fn scale(&self, s: f64) -> Self;
    /// `self += a * b`; the inner loop of jet products.
    fn mul_acc(&mut self, a: &Self, b: &Self);
    /// Magnitude used for error metrics and negligibility tests.
    fn norm(&self) -> f64;
}

impl Ring for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn scale(&self, s: f64) -> Self {
        self * s
    }
    #[inline]
    fn mul_acc(&mut self, a: &Self, b: &Self) {
        *self += a * b;
    }
    fn norm(&self) -> f64 {
        self.abs()
    }
}

impl Ring for C64 {
    fn zero() -> Self {
        C64::new(0.0, 0.0)
    }
    fn one() -> Self {
        C64::new(1.0, 0.0)
    }
    fn is_zero(&self) -> bool {
        self.re == 0.0 && self.im == 0.0
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn scale(&self, s: f64) -> Self {
        self * s
    }
    #[inline]
    fn mul_acc(&mut self, a: &Self, b: &Self) {
        self.re += a.re * b.re - a.im * b.im;
        self.im += a.re * b.im + a.im * b.re;
    }
    fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }
}

/// Truncated Taylor expansion at a base point.
#[derive(Clone, Debug)]
pub struct Jet<R: Ring> {
    pub table: Arc<IndexTable>,
    /// Taylor coefficients `∂^α f / α!`, indexed by table position.
    pub c: Vec<R>,
}

impl<R: Ring> Jet<R> {
    pub fn zero(table: Arc<IndexTable>) -> Self {
        let n = table.len();
        Jet { table, c: vec![R::zero(); n] }
    }

    pub fn constant(table: Arc<IndexTable>, v: R) -> Self {
        let mut j = Jet::zero(table);
        j.c[0] = v;
        j
    }

    /// Jet of `base + δ_k` (the k-th variable around `base`).
    pub fn variable(table: Arc<IndexTable>, k: usize, base: R) -> Self {
        let mut j = Jet::zero(table.clone());
        j.c[0] = base;
        let mut e = vec![0u8; table.nv];
        e[k] = 1;
        let p = table.position(&e).expect("order >= 1 required for a variable jet");
        j.c[p] = R::one();
        j
    }

    pub fn value(&self) -> &R {
        &self.c[0]
    }

    pub fn nv(&self) -> usize {
        self.table.nv
    }

    pub fn order(&self) -> usize {
        self.table.order
    }

    fn assert_compatible(&self, o: &Self) {
        debug_assert!(
            Arc::ptr_eq(&self.table, &o.table)
                || (self.table.nv == o.table.nv && self.table.order == o.table.order),
            "jet table mismatch"
        );
    }

    pub fn add(&self, o: &Self) -> Self {
        self.assert_compatible(o);
        let c = self.c.iter().zip(&o.c).map(|(a, b)| a.add(b)).collect();
        Jet { table: self.table.clone(), c }
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.assert_compatible(o);
        let c = self.c.iter().zip(&o.c).map(|(a, b)| a.sub(b)).collect();
        Jet { table: self.table.clone(), c }
    }

    pub fn neg(&self) -> Self {
        Jet { table: self.table.clone(), c: self.c.iter().map(|a| a.neg()).collect() }
    }

    pub fn scale(&self, s: f64) -> Self {
        Jet { table: self.table.clone(), c: self.c.iter().map(|a| a.scale(s)).collect() }
    }

    pub fn map<F: Fn(&R) -> R>(&self, f: F) -> Self {
        Jet { table: self.table.clone(), c: self.c.iter().map(f).collect() }
    }

    pub fn add_assign(&mut self, o: &Self) {
        self.assert_compatible(o);
        for (a, b) in self.c.iter_mut().zip(&o.c) {
            *a = a.add(b);
        }
    }

    /// Truncated product.  Degrees add; coefficients beyond the table order
    /// are dropped, which is the correct truncation for Taylor arithmetic.
    pub fn mul(&self, o: &Self) -> Self {
        self.assert_compatible(o);
        let t = &self.table;
        let mut out = vec![R::zero(); t.len()];
        for i in 0..t.len() {
            if self.c[i].is_zero() {
                continue;
            }
            let deg_i = t.degree_of(i);
            let jmax = t.len_upto_degree(t.order - deg_i);
            for j in 0..jmax {
                if o.c[j].is_zero() {
                    continue;
                }
                let p = t.prod_pos(i, j).expect("degree bound enforced by jmax");
                out[p].mul_acc(&self.c[i], &o.c[j]);
            }
        }
        Jet { table: self.table.clone(), c: out }
    }

    pub fn pow(&self, n: usize) -> Self {
        let mut out = Jet::constant(self.table.clone(), R::one());
        for _ in 0..n {
            out = out.mul(self);
        }
        out
    }

    /// Partial derivative in variable `k` (still truncated at the table
    /// order; the top-degree information is lost, as expected).
    pub fn deriv(&self, k: usize) -> Self {
        let t = &self.table;
        let mut out = vec![R::zero(); t.len()];
        for (i, mi) in t.list.iter().enumerate() {
            if let Some(q) = t.up_pos(i, k) {
                out[i] = self.c[q].scale(mi[k] as f64 + 1.0);
            }
        }
        Jet { table: self.table.clone(), c: out }
    }

    /// Coefficient of a multi-index (zero if outside the table).
    pub fn coeff(&self, mi: &[u8]) -> R {
        match self.table.position(mi) {
            Some(p) => self.c[p].clone(),
            None => R::zero(),
        }
    }

    /// ∂^α f at the base point (coefficient times α!).
    pub fn derivative(&self, mi: &[u8]) -> R {
        self.coeff(mi).scale(multiindex::mi_factorial(mi))
    }

    /// Embed into a table with extra trailing variables (and any order),
    /// truncating coefficients the target cannot hold.
    pub fn extend_vars(&self, table: Arc<IndexTable>) -> Self {
        assert!(table.nv >= self.table.nv, "extend_vars cannot drop variables");
        let mut out = Jet::zero(table);
        for (i, mi) in self.table.list.iter().enumerate() {
            if self.c[i].is_zero() {
                continue;
            }
            let mut e = mi.clone();
            e.resize(out.table.nv, 0);
            if let Some(p) = out.table.position(&e) {
                out.c[p] = self.c[i].clone();
            }
        }
        out
    }

    /// Coefficient of the first power of the last variable, as a jet over a
    /// table in the remaining variables.
    pub fn last_var_linear(&self, target: Arc<IndexTable>) -> Self {
        let nv = self.table.nv - 1;
        assert_eq!(target.nv, nv, "target must cover the remaining variables");
        let mut out = Jet::zero(target);
        for (i, mi) in self.table.list.iter().enumerate() {
            if mi[nv] != 1 || self.c[i].is_zero() {
                continue;
            }
            if let Some(p) = out.table.position(&mi[..nv]) {
                out.c[p] = self.c[i].clone();
            }
        }
        out
    }

    /// Drop trailing variables, keeping only coefficients in which the
    /// dropped variables do not appear (restriction to their zero set).
    pub fn truncate_vars(&self, target: Arc<IndexTable>) -> Self {
        assert!(target.nv <= self.table.nv, "truncate_vars cannot add variables");
        let keep = target.nv;
        let mut out = Jet::zero(target);
        for (i, mi) in self.table.list.iter().enumerate() {
            if self.c[i].is_zero() || mi[keep..].iter().any(|&e| e > 0) {
                continue;
            }
            if let Some(p) = out.table.position(&mi[..keep]) {
                out.c[p] = self.c[i].clone();
            }
        }
        out
    }

    /// Drop the first `skip` variables (restriction to their zero set) and
    /// reindex the remaining ones into `target`.
    pub fn drop_leading_vars(&self, skip: usize, target: Arc<IndexTable>) -> Self {
        assert_eq!(self.table.nv - skip, target.nv, "variable count mismatch");
        let mut out = Jet::zero(target);
        for (i, mi) in self.table.list.iter().enumerate() {
            if self.c[i].is_zero() || mi[..skip].iter().any(|&e| e > 0) {
                continue;
            }
            if let Some(p) = out.table.position(&mi[skip..]) {
                out.c[p] = self.c[i].clone();
            }
        }
        out
    }

    /// Copy into another table (same variable count), truncating or padding.
    pub fn retable(&self, table: Arc<IndexTable>) -> Self {
        assert_eq!(self.table.nv, table.nv, "retable requires same variable count");
        let mut out = Jet::zero(table);
        for (i, mi) in self.table.list.iter().enumerate() {
            if let Some(p) = out.table.position(mi) {
                out.c[p] = self.c[i].clone();
            }
        }
        out
    }

    /// Set the listed variables to zero (dropping all coefficients that
    /// involve them).  The table is unchanged.
    pub fn restrict(&self, zeroed: &[usize]) -> Self {
        let mut out = self.clone();
        for (i, mi) in self.table.list.iter().enumerate() {
            if zeroed.iter().any(|&k| mi[k] > 0) {
                out.c[i] = R::zero();
            }
        }
        out
    }

    /// Substitute jets for the variables: returns `f(args_0, ..., args_{nv-1})`
    /// as a jet over the argument table.  Every argument must have vanishing
    /// constant term, so that truncation commutes with the substitution.
    pub fn substitute(&self, args: &[Jet<R>]) -> Jet<R> {
        substitute_many(&[self], args).pop().expect("one input")
    }

    /// Composition with a scalar function: given `derivs[k] = f^{(k)}(u_0)`
    /// where `u_0` is this jet's constant term, returns the jet of `f ∘ u`.
    pub fn compose_scalar(&self, derivs: &[R]) -> Jet<R> {
        let ord = self.table.order;
        assert!(derivs.len() > ord, "need derivatives up to the table order");
        let mut v = self.clone();
        v.c[0] = R::zero();
        // Horner evaluation of sum_k derivs[k]/k! v^k
        let mut out = Jet::constant(self.table.clone(), derivs[ord].scale(1.0 / factorial(ord)));
        for k in (0..ord).rev() {
            out = out.mul(&v);
            out.c[0] = out.c[0].add(&derivs[k].scale(1.0 / factorial(k)));
        }
        out
    }

    /// exp of a jet with vanishing constant term (nilpotent in the truncated
    /// ring, so the series is finite).
    pub fn exp_nilpotent(&self) -> Jet<R> {
        assert!(self.c[0].is_zero() || self.c[0].norm() < 1e-12, "constant term must vanish");
        let mut v = self.clone();
        v.c[0] = R::zero();
        let ord = self.table.order;
        let mut out = Jet::constant(self.table.clone(), R::one());
        let mut pw = Jet::constant(self.table.clone(), R::one());
        for k in 1..=ord {
            pw = pw.mul(&v);
            out.add_assign(&pw.scale(1.0 / factorial(k)));
        }
        out
    }

    pub fn max_norm(&self) -> f64 {
        self.c.iter().map(|r| r.norm()).fold(0.0, f64::max)
    }

    /// Evaluate the truncated polynomial at an offset from the base point.
    pub fn eval_offset(&self, dx: &[f64]) -> R {
        let mut acc = R::zero();
        for (i, mi) in self.table.list.iter().enumerate() {
            if self.c[i].is_zero() {
                continue;
            }
            let mut w = 1.0;
            for (k, &e) in mi.iter().enumerate() {
                w *= dx[k].powi(e as i32);
            }
            acc = acc.add(&self.c[i].scale(w));
        }
        acc
    }
}

/// Substitute the same constant-free arguments into several jets over a
/// shared source table, building each source monomial only once.
pub fn substitute_many<R: Ring>(jets: &[&Jet<R>], args: &[Jet<R>]) -> Vec<Jet<R>> {
    let src = jets[0].table.clone();
    assert_eq!(args.len(), src.nv);
    for j in jets {
        debug_assert!(Arc::ptr_eq(&j.table, &src) || (j.table.nv == src.nv && j.table.order == src.order));
    }
    for a in args {
        debug_assert!(a.value().norm() < 1e-9, "substitution argument must be constant-free");
    }
    let out_t = args[0].table.clone();
    let n = src.len();
    // Monomials of the source table evaluated on the arguments, built
    // incrementally in graded order.
    let mut monos: Vec<Option<Jet<R>>> = vec![None; n];
    monos[0] = Some(Jet::constant(out_t.clone(), R::one()));
    let mut outs = vec![Jet::zero(out_t.clone()); jets.len()];
    for i in 0..n {
        if monos[i].is_none() {
            // decompose α = β + e_k with k the first nonzero slot
            let mi = src.list[i].clone();
            let k = mi.iter().position(|&x| x > 0).expect("nonzero index");
            let mut down = mi.clone();
            down[k] -= 1;
            let dpos = src.position(&down).expect("downward closed");
            let base = monos[dpos].clone().expect("graded order");
            monos[i] = Some(base.mul(&args[k]));
        }
        for (j, out) in jets.iter().zip(outs.iter_mut()) {
            if !j.c[i].is_zero() {
                let term = monos[i].as_ref().unwrap().map(|r| r.mul(&j.c[i]));
                out.add_assign(&term);
            }
        }
    }
    outs
}

/// Derivative sequences of common scalar functions, for `compose_scalar`.
pub mod scalar {
    use super::*;

    /// d^k/dt^k of t^p at t0, k = 0..=jmax.
    pub fn powf_f(t0: f64, p: f64, jmax: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(jmax + 1);
        let mut coef = 1.0;
        for k in 0..=jmax {
            out.push(coef * t0.powf(p - k as f64));
            coef *= p - k as f64;
        }
        out
    }

    /// d^k/dt^k of 1/t at t0: (-1)^k k! t0^{-k-1}.
    pub fn recip_c(t0: C64, jmax: usize) -> Vec<C64> {
        let inv = C64::new(1.0, 0.0) / t0;
        let mut v = Vec::with_capacity(jmax + 1);
        let mut tpow = inv;
        for k in 0..=jmax {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            v.push(tpow * factorial(k) * sign);
            tpow *= inv;
        }
        v
    }

    pub fn exp_c(t0: C64, jmax: usize) -> Vec<C64> {
        vec![t0.exp(); jmax + 1]
    }

    pub fn sin_f(t0: f64, jmax: usize) -> Vec<f64> {
        (0..=jmax)
            .map(|k| match k % 4 {
                0 => t0.sin(),
                1 => t0.cos(),
                2 => -t0.sin(),
                _ => -t0.cos(),
            })
            .collect()
    }

    pub fn cos_f(t0: f64, jmax: usize) -> Vec<f64> {
        (0..=jmax)
            .map(|k| match k % 4 {
                0 => t0.cos(),
                1 => -t0.sin(),
                2 => -t0.cos(),
                _ => t0.sin(),
            })
            .collect()
    }

    pub fn log_f(t0: f64, jmax: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(jmax + 1);
        out.push(t0.ln());
        for k in 1..=jmax {
            let sign = if (k - 1) % 2 == 0 { 1.0 } else { -1.0 };
            out.push(sign * factorial(k - 1) * t0.powi(-(k as i32)));
        }
        out
    }
}

/// 1-variable jets (used for scalar-function plumbing).
pub fn unijet(order: usize, t0: f64) -> Jet<f64> {
    Jet::variable(multiindex::table(1, order), 0, t0)
}

impl Jet<f64> {
    pub fn sqrt(&self) -> Jet<f64> {
        self.compose_scalar(&scalar::powf_f(self.c[0], 0.5, self.table.order))
    }

    pub fn recip(&self) -> Jet<f64> {
        self.compose_scalar(&scalar::powf_f(self.c[0], -1.0, self.table.order))
    }

    pub fn powf(&self, p: f64) -> Jet<f64> {
        self.compose_scalar(&scalar::powf_f(self.c[0], p, self.table.order))
    }

    pub fn exp(&self) -> Jet<f64> {
        let e = self.c[0].exp();
        self.compose_scalar(&vec![e; self.table.order + 1])
    }

    pub fn to_complex(&self) -> Jet<C64> {
        Jet {
            table: self.table.clone(),
            c: self.c.iter().map(|&x| C64::new(x, 0.0)).collect(),
        }
    }
}

impl Jet<C64> {
    pub fn conj(&self) -> Jet<C64> {
        self.map(|z| z.conj())
    }

    pub fn scale_c(&self, s: C64) -> Jet<C64> {
        self.map(|z| z * s)
    }

    pub fn recip(&self) -> Jet<C64> {
        self.compose_scalar(&scalar::recip_c(self.c[0], self.table.order))
    }

    pub fn real_part(&self) -> Jet<f64> {
        Jet { table: self.table.clone(), c: self.c.iter().map(|z| z.re).collect() }
    }
}
