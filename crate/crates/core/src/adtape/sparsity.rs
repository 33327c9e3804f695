use std::collections::HashSet;

use super::tape::{Op, Tape};

/// Symmetric Hessian sparsity pattern, stored as upper-triangle pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    pub(crate) n: usize,
    pub(crate) source: u64,
    /// Sorted `(i, j)` with `i <= j`.
    pub(crate) entries: Vec<(u32, u32)>,
}

impl SparsityPattern {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn source_tape(&self) -> u64 {
        self.source
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.entries.iter().map(|&(i, j)| (i as usize, j as usize))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        let key = if i <= j { (i as u32, j as u32) } else { (j as u32, i as u32) };
        self.entries.binary_search(&key).is_ok()
    }

    /// Union of two patterns over the same inputs. The result keeps the
    /// source of `self`.
    pub fn union(&self, other: &SparsityPattern) -> SparsityPattern {
        let mut set: HashSet<(u32, u32)> = self.entries.iter().copied().collect();
        set.extend(other.entries.iter().copied());
        let mut entries: Vec<_> = set.into_iter().collect();
        entries.sort_unstable();
        SparsityPattern {
            n: self.n.max(other.n),
            source: self.source,
            entries,
        }
    }
}

fn merge_sorted(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

fn add_product(set: &mut HashSet<(u32, u32)>, a: &[u32], b: &[u32]) {
    for &i in a {
        for &j in b {
            set.insert(if i <= j { (i, j) } else { (j, i) });
        }
    }
}

impl Tape {
    /// Nonlinear-interaction propagation. The result is a superset of the
    /// structural nonzeros of the Hessian at every point.
    pub fn sparsity(&self) -> SparsityPattern {
        let n = self.output as usize + 1;
        let mut live = vec![false; n];
        let mut needed = vec![false; n];
        live[self.output as usize] = true;
        for i in (0..n).rev() {
            if !live[i] {
                continue;
            }
            let nonlinear = matches!(
                self.ops[i],
                Op::Mul(..) | Op::Div(..) | Op::Pow(..) | Op::PowConst(..) | Op::Exp(_) | Op::Log(_)
            );
            let propagate = nonlinear || needed[i];
            for p in self.parents(i) {
                live[p] = true;
                if propagate {
                    needed[p] = true;
                }
            }
        }

        let mut deps: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut pairs: HashSet<(u32, u32)> = HashSet::new();
        for i in 0..n {
            if !live[i] {
                continue;
            }
            match self.ops[i] {
                Op::Input => {
                    if needed[i] {
                        deps[i] = vec![i as u32];
                    }
                }
                Op::Const(_) => {}
                Op::Add(a, b) | Op::Sub(a, b) => {
                    if needed[i] {
                        deps[i] = merge_sorted(&deps[a as usize], &deps[b as usize]);
                    }
                }
                Op::Neg(a) => {
                    if needed[i] {
                        deps[i] = deps[a as usize].clone();
                    }
                }
                Op::Linear { start, len, .. } => {
                    if needed[i] {
                        let mut acc: Vec<u32> = Vec::new();
                        for &(k, _) in &self.terms[start as usize..(start + len) as usize] {
                            acc = merge_sorted(&acc, &deps[k as usize]);
                        }
                        deps[i] = acc;
                    }
                }
                Op::Exp(a) | Op::Log(a) | Op::PowConst(a, _) => {
                    let da = &deps[a as usize];
                    add_product(&mut pairs, da, da);
                    if needed[i] {
                        deps[i] = da.clone();
                    }
                }
                Op::Mul(a, b) => {
                    add_product(&mut pairs, &deps[a as usize], &deps[b as usize]);
                    if needed[i] {
                        deps[i] = merge_sorted(&deps[a as usize], &deps[b as usize]);
                    }
                }
                Op::Div(a, b) => {
                    let (da, db) = (&deps[a as usize], &deps[b as usize]);
                    add_product(&mut pairs, da, db);
                    add_product(&mut pairs, db, db);
                    if needed[i] {
                        deps[i] = merge_sorted(da, db);
                    }
                }
                Op::Pow(a, b) => {
                    let all = merge_sorted(&deps[a as usize], &deps[b as usize]);
                    add_product(&mut pairs, &all, &all);
                    if needed[i] {
                        deps[i] = all;
                    }
                }
            }
        }
        let mut entries: Vec<_> = pairs.into_iter().collect();
        entries.sort_unstable();
        SparsityPattern {
            n: self.n_inputs,
            source: self.id,
            entries,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::tape::TapeBuilder;

    #[test]
    fn product_pattern() {
        let mut b = TapeBuilder::new(&[1.0, 1.0]);
        let (x, y) = (b.input(0), b.input(1));
        let f = b.mul(x, y);
        let p = b.finish(f).sparsity();
        assert_eq!(p.entries().collect::<Vec<_>>(), vec![(0, 1)]);
    }

    #[test]
    fn disjoint_terms_are_block_diagonal() {
        let mut b = TapeBuilder::new(&[0.1, 0.2, 0.3, 0.4]);
        let v: Vec<_> = (0..4).map(|k| b.input(k)).collect();
        let g1 = b.mul(v[0], v[1]);
        let g1 = b.exp(g1);
        let s = b.add(v[2], v[3]);
        let g2 = b.ln(s);
        let f = b.sum(&[g1, g2]);
        let p = b.finish(f).sparsity();
        for (i, j) in p.entries() {
            assert_eq!(i / 2, j / 2, "cross-block entry ({i},{j})");
        }
        assert!(p.contains(0, 1) && p.contains(2, 3) && p.contains(0, 0));
    }

    #[test]
    fn linear_tape_has_empty_pattern() {
        let mut b = TapeBuilder::new(&[1.0, 2.0]);
        let (x, y) = (b.input(0), b.input(1));
        let f = b.linear(&[(x, 2.0), (y, -3.0)], 1.0);
        assert!(b.finish(f).sparsity().is_empty());
    }

    #[test]
    fn dead_branches_do_not_contribute() {
        let mut b = TapeBuilder::new(&[1.0, 2.0]);
        let (x, y) = (b.input(0), b.input(1));
        let _unused = b.mul(x, y);
        let f = b.mul(x, x);
        let p = b.finish(f).sparsity();
        assert_eq!(p.entries().collect::<Vec<_>>(), vec![(0, 0)]);
    }
}
