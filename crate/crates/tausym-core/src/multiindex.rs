//! Multi-index enumeration and shared index tables for jet arithmetic.
//!
//! A table fixes a variable count `nv` and a truncation order `order` and
//! enumerates every multi-index of total degree at most `order` in graded
//! order (by total degree, lexicographically within each degree).  Tables
//! precompute the position arithmetic used by jet products and derivative
//! shifts and are cached globally, so jets only carry an `Arc` to them.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Exponent vector of a multi-index.  Entries are small; `u8` suffices for
/// every truncation order the engine supports.
pub type Mi = Vec<u8>;

pub fn mi_degree(a: &[u8]) -> usize {
    a.iter().map(|&x| x as usize).sum()
}

/// α! as f64 (exact for the small degrees used here).
pub fn mi_factorial(a: &[u8]) -> f64 {
    a.iter().map(|&x| factorial(x as usize)).product()
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// Multinomial coefficient |α|! / α!.
pub fn mi_multinomial(a: &[u8]) -> f64 {
    factorial(mi_degree(a)) / mi_factorial(a)
}

/// All exponent vectors of length `nv` with total degree exactly `d`,
/// lexicographically ascending.
pub fn compositions(nv: usize, d: usize) -> Vec<Mi> {
    let mut out = Vec::new();
    let mut cur = vec![0u8; nv];
    fn rec(out: &mut Vec<Mi>, cur: &mut Mi, slot: usize, rem: usize) {
        if slot + 1 == cur.len() {
            cur[slot] = rem as u8;
            out.push(cur.clone());
            return;
        }
        for v in 0..=rem {
            cur[slot] = v as u8;
            rec(out, cur, slot + 1, rem - v);
        }
    }
    if nv == 0 {
        if d == 0 {
            out.push(Vec::new());
        }
        return out;
    }
    rec(&mut out, &mut cur, 0, d);
    out
}

/// Index table over `nv` variables truncated at total degree `order`.
#[derive(Debug)]
pub struct IndexTable {
    pub nv: usize,
    pub order: usize,
    /// Multi-indices in graded order; `list[0]` is the zero index.
    pub list: Vec<Mi>,
    pos: HashMap<Mi, u32>,
    /// `prod[i * len + j]` is the position of `list[i] + list[j]`, or -1 when
    /// the sum exceeds the truncation order.
    prod: Vec<i32>,
    /// `up[i * nv + k]` is the position of `list[i] + e_k`, or -1.
    up: Vec<i32>,
    /// `deg_cum[d]` is the number of positions with degree <= d.
    deg_cum: Vec<usize>,
}

impl IndexTable {
    fn build(nv: usize, order: usize) -> IndexTable {
        let mut list = Vec::new();
        for d in 0..=order {
            list.extend(compositions(nv, d));
        }
        let mut pos = HashMap::with_capacity(list.len());
        for (i, mi) in list.iter().enumerate() {
            pos.insert(mi.clone(), i as u32);
        }
        let n = list.len();
        let mut prod = vec![-1i32; n * n];
        let mut sum = vec![0u8; nv];
        for i in 0..n {
            for j in 0..n {
                if mi_degree(&list[i]) + mi_degree(&list[j]) > order {
                    continue;
                }
                for k in 0..nv {
                    sum[k] = list[i][k] + list[j][k];
                }
                prod[i * n + j] = pos[&sum] as i32;
            }
        }
        let mut up = vec![-1i32; n * nv];
        for i in 0..n {
            if mi_degree(&list[i]) >= order {
                continue;
            }
            for k in 0..nv {
                let mut m = list[i].clone();
                m[k] += 1;
                up[i * nv + k] = pos[&m] as i32;
            }
        }
        let mut deg_cum = vec![0usize; order + 1];
        for mi in &list {
            for d in mi_degree(mi)..=order {
                deg_cum[d] += 1;
            }
        }
        IndexTable { nv, order, list, pos, prod, up, deg_cum }
    }

    /// Number of leading positions whose degree is at most `d`.
    #[inline]
    pub fn len_upto_degree(&self, d: usize) -> usize {
        if d >= self.order {
            self.list.len()
        } else {
            self.deg_cum[d]
        }
    }

    pub fn len(&self) -> usize {
        self.list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.list.is_empty()
    }

    /// Position of a multi-index, if it is within the truncation order.
    pub fn position(&self, mi: &[u8]) -> Option<usize> {
        self.pos.get(mi).map(|&p| p as usize)
    }

    /// Position of `list[i] + list[j]`, if within order.
    #[inline]
    pub fn prod_pos(&self, i: usize, j: usize) -> Option<usize> {
        let p = self.prod[i * self.list.len() + j];
        (p >= 0).then_some(p as usize)
    }

    /// Position of `list[i] + e_k`, if within order.
    #[inline]
    pub fn up_pos(&self, i: usize, k: usize) -> Option<usize> {
        let p = self.up[i * self.nv + k];
        (p >= 0).then_some(p as usize)
    }

    pub fn degree_of(&self, i: usize) -> usize {
        mi_degree(&self.list[i])
    }
}

static REGISTRY: OnceLock<Mutex<HashMap<(usize, usize), Arc<IndexTable>>>> = OnceLock::new();

/// Shared table for `nv` variables at truncation `order`.
pub fn table(nv: usize, order: usize) -> Arc<IndexTable> {
    let reg = REGISTRY.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = reg.lock().expect("index table registry poisoned");
    map.entry((nv, order))
        .or_insert_with(|| Arc::new(IndexTable::build(nv, order)))
        .clone()
}

/// Distinct orderings of the index multiset of α (each ordering is a list of
/// variable indices).  Used for symmetrized iterated derivatives.
pub fn multiset_orderings(alpha: &[u8]) -> Vec<Vec<usize>> {
    let mut pool: Vec<usize> = Vec::new();
    for (i, &cnt) in alpha.iter().enumerate() {
        for _ in 0..cnt {
            pool.push(i);
        }
    }
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(pool.len());
    fn rec(remaining: &mut Vec<usize>, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if remaining.is_empty() {
            out.push(cur.clone());
            return;
        }
        let mut seen = Vec::new();
        for idx in 0..remaining.len() {
            let v = remaining[idx];
            if seen.contains(&v) {
                continue;
            }
            seen.push(v);
            remaining.remove(idx);
            cur.push(v);
            rec(remaining, cur, out);
            cur.pop();
            remaining.insert(idx, v);
        }
    }
    rec(&mut pool, &mut cur, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graded_enumeration_and_lookup_roundtrip() {
        let t = table(2, 4);
        assert_eq!(t.list[0], vec![0, 0]);
        for (i, mi) in t.list.iter().enumerate() {
            assert_eq!(t.position(mi), Some(i));
        }
        // degrees are non-decreasing along the enumeration
        for w in t.list.windows(2) {
            assert!(mi_degree(&w[0]) <= mi_degree(&w[1]));
        }
        assert_eq!(t.len(), 15); // C(4+2,2)
    }

    #[test]
    fn product_positions_match_componentwise_sums() {
        let t = table(3, 5);
        for i in 0..t.len() {
            for j in 0..t.len() {
                let expect: Mi = t.list[i]
                    .iter()
                    .zip(&t.list[j])
                    .map(|(a, b)| a + b)
                    .collect();
                match t.prod_pos(i, j) {
                    Some(p) => assert_eq!(t.list[p], expect),
                    None => assert!(mi_degree(&expect) > 5),
                }
            }
        }
    }

    #[test]
    fn orderings_count_matches_multinomial() {
        let ords = multiset_orderings(&[2, 1]);
        assert_eq!(ords.len(), 3); // 3!/2!1!
        let ords = multiset_orderings(&[1, 1, 1]);
        assert_eq!(ords.len(), 6);
        assert_eq!(multiset_orderings(&[0, 0]).len(), 1); // empty ordering
    }
}
