//! Sparse polynomials in the covariable ξ with complex coefficients.
//!
//! These serve as jet coefficients when expanding phase factors: the degree
//! in ξ is tracked structurally (a product's degree is the sum of the factor
//! degrees), which is what the degree-bound checks on composition tables
//! measure against.

use crate::jet::Ring;
use crate::multiindex::{mi_degree, Mi};
use crate::C64;

#[derive(Clone, Debug, PartialEq)]
pub struct XiPoly {
    pub dim: usize,
    /// Sorted by exponent vector; no duplicate exponents.
    pub terms: Vec<(Mi, C64)>,
}

impl XiPoly {
    pub fn zero(dim: usize) -> Self {
        XiPoly { dim, terms: Vec::new() }
    }

    pub fn constant(dim: usize, v: C64) -> Self {
        if v.norm() == 0.0 {
            return Self::zero(dim);
        }
        XiPoly { dim, terms: vec![(vec![0; dim], v)] }
    }

    /// The monomial ξ_k.
    pub fn xi(dim: usize, k: usize) -> Self {
        let mut e = vec![0u8; dim];
        e[k] = 1;
        XiPoly { dim, terms: vec![(e, C64::new(1.0, 0.0))] }
    }

    pub fn monomial(dim: usize, mi: &[u8], v: C64) -> Self {
        if v.norm() == 0.0 {
            return Self::zero(dim);
        }
        XiPoly { dim, terms: vec![(mi.to_vec(), v)] }
    }

    fn normalize(mut self) -> Self {
        self.terms.sort_by(|a, b| a.0.cmp(&b.0));
        let mut out: Vec<(Mi, C64)> = Vec::with_capacity(self.terms.len());
        for (mi, v) in self.terms {
            if let Some(last) = out.last_mut() {
                if last.0 == mi {
                    last.1 += v;
                    continue;
                }
            }
            out.push((mi, v));
        }
        out.retain(|(_, v)| v.norm() != 0.0);
        XiPoly { dim: self.dim, terms: out }
    }

    /// Largest total degree among terms with coefficient above `tol` times
    /// the largest coefficient magnitude; -1 (as None) for a numerical zero.
    pub fn degree(&self, rel_tol: f64) -> Option<usize> {
        let max = self.terms.iter().map(|(_, v)| v.norm()).fold(0.0, f64::max);
        if max == 0.0 {
            return None;
        }
        self.terms
            .iter()
            .filter(|(_, v)| v.norm() > rel_tol * max)
            .map(|(mi, _)| mi_degree(mi))
            .max()
    }

    pub fn max_coeff(&self) -> f64 {
        self.terms.iter().map(|(_, v)| v.norm()).fold(0.0, f64::max)
    }

    /// Partial derivative in ξ_k.
    pub fn deriv(&self, k: usize) -> Self {
        let terms = self
            .terms
            .iter()
            .filter(|(mi, _)| mi[k] > 0)
            .map(|(mi, v)| {
                let mut m = mi.clone();
                m[k] -= 1;
                (m, v * mi[k] as f64)
            })
            .collect();
        XiPoly { dim: self.dim, terms }.normalize()
    }

    pub fn scale_c(&self, s: C64) -> Self {
        if s == C64::new(0.0, 0.0) {
            return XiPoly::zero(self.dim);
        }
        let terms = self.terms.iter().map(|(mi, v)| (mi.clone(), v * s)).collect();
        XiPoly { dim: self.dim, terms }
    }

    pub fn eval(&self, xi: &[f64]) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for (mi, v) in &self.terms {
            let mut w = 1.0;
            for (k, &e) in mi.iter().enumerate() {
                w *= xi[k].powi(e as i32);
            }
            acc += v * w;
        }
        acc
    }
}

impl Ring for XiPoly {
    fn zero() -> Self {
        // Dimension is resolved on first combination with a sized operand.
        XiPoly { dim: 0, terms: Vec::new() }
    }
    fn one() -> Self {
        XiPoly { dim: 0, terms: vec![(Vec::new(), C64::new(1.0, 0.0))] }
    }
    fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }
    fn add(&self, o: &Self) -> Self {
        let dim = self.dim.max(o.dim);
        let mut terms: Vec<(Mi, C64)> = Vec::with_capacity(self.terms.len() + o.terms.len());
        for (mi, v) in self.terms.iter().chain(&o.terms) {
            let mut m = mi.clone();
            m.resize(dim, 0);
            terms.push((m, *v));
        }
        XiPoly { dim, terms }.normalize()
    }
    fn sub(&self, o: &Self) -> Self {
        self.add(&o.neg())
    }
    fn mul(&self, o: &Self) -> Self {
        let dim = self.dim.max(o.dim);
        let mut terms = Vec::with_capacity(self.terms.len() * o.terms.len());
        for (a, va) in &self.terms {
            for (b, vb) in &o.terms {
                let mut m = vec![0u8; dim];
                for (k, slot) in m.iter_mut().enumerate() {
                    let ea = a.get(k).copied().unwrap_or(0);
                    let eb = b.get(k).copied().unwrap_or(0);
                    *slot = ea + eb;
                }
                terms.push((m, va * vb));
            }
        }
        XiPoly { dim, terms }.normalize()
    }
    fn neg(&self) -> Self {
        XiPoly {
            dim: self.dim,
            terms: self.terms.iter().map(|(mi, v)| (mi.clone(), -v)).collect(),
        }
    }
    fn scale(&self, s: f64) -> Self {
        if s == 0.0 {
            return XiPoly::zero(self.dim);
        }
        XiPoly {
            dim: self.dim,
            terms: self.terms.iter().map(|(mi, v)| (mi.clone(), v * s)).collect(),
        }
    }
    fn mul_acc(&mut self, a: &Self, b: &Self) {
        *self = self.add(&a.mul(b));
    }
    fn norm(&self) -> f64 {
        self.terms.iter().map(|(_, v)| v.norm()).sum()
    }
}
