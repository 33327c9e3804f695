use super::sparsity::SparsityPattern;
use super::tape::{Tape, Workspace};
use crate::error::{Error, Result};

/// Directions pushed through one forward-over-reverse sweep.
const BATCH: usize = 16;

/// Sparse symmetric matrix as upper-triangle triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetric {
    pub n: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseSymmetric {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.entries
            .iter()
            .find(|&&(a, b, _)| a == i && b == j)
            .map_or(0.0, |e| e.2)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for &(i, j, v) in &self.entries {
            m[i][j] = v;
            m[j][i] = v;
        }
        m
    }
}

/// Colour assignment with a recovery route for every pattern entry.
#[derive(Debug, Clone)]
pub struct Coloring {
    pub color_of: Vec<usize>,
    pub n_colors: usize,
    /// For each entry, the (row, colour) whose compressed product holds it.
    pub recovery: Vec<(usize, usize)>,
}

/// Greedy colouring for symmetric direct recovery.
///
/// Adjacent columns get distinct colours. An off-diagonal entry `(i, j)`
/// is read either from row `j` at `color(i)` or from row `i` at
/// `color(j)`, whichever keeps that row/colour product a single term.
/// Diagonal entries are read from row `j` at `color(j)`. Once a
/// row/colour product is used for recovery it is locked against further
/// contributions.
pub fn color_symmetric(n: usize, entries: &[(usize, usize)]) -> Coloring {
    let mut adj = vec![Vec::new(); n];
    let mut diag = vec![false; n];
    for &(i, j) in entries {
        if i == j {
            diag[i] = true;
        } else {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();

    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by(|&a, &b| degree[b].cmp(&degree[a]).then(a.cmp(&b)));

    // Columns adjacent to more than half the others first, then the rest
    // by ascending degree; suits arrow-shaped patterns.
    let dense_cut = n / 2;
    let mut arrow: Vec<usize> = (0..n).collect();
    arrow.sort_by(|&a, &b| {
        let (da, db) = (degree[a] > dense_cut, degree[b] > dense_cut);
        db.cmp(&da)
            .then_with(|| {
                if da && db {
                    degree[b].cmp(&degree[a])
                } else {
                    degree[a].cmp(&degree[b])
                }
            })
            .then(a.cmp(&b))
    });

    let mut best: Option<Coloring> = None;
    for order in [by_degree, arrow] {
        let c = color_in_order(n, entries, &adj, &diag, &order);
        if best.as_ref().is_none_or(|b| c.n_colors < b.n_colors) {
            best = Some(c);
        }
    }
    best.unwrap_or(Coloring {
        color_of: vec![],
        n_colors: 0,
        recovery: vec![],
    })
}

fn color_in_order(
    n: usize,
    entries: &[(usize, usize)],
    adj: &[Vec<usize>],
    diag: &[bool],
    order: &[usize],
) -> Coloring {
    use std::collections::{HashMap, HashSet};

    const NONE: usize = usize::MAX;
    let mut color = vec![NONE; n];
    let mut count: HashMap<(usize, usize), u32> = HashMap::new();
    let mut locked: HashSet<(usize, usize)> = HashSet::new();
    let mut route: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
    let mut n_colors = 0;

    let cnt = |count: &HashMap<(usize, usize), u32>, r: usize, c: usize| {
        count.get(&(r, c)).copied().unwrap_or(0)
    };

    for &j in order {
        let mut chosen = None;
        'colors: for c in 0..=n_colors {
            if diag[j] && (locked.contains(&(j, c)) || cnt(&count, j, c) != 0) {
                continue;
            }
            for &r in &adj[j] {
                if color[r] == c || locked.contains(&(r, c)) {
                    continue 'colors;
                }
            }
            // Every coloured neighbour needs a route.
            let mut routes = Vec::new();
            let mut new_locks: Vec<(usize, usize)> = Vec::new();
            for &i in &adj[j] {
                let ci = color[i];
                if ci == NONE {
                    continue;
                }
                if cnt(&count, j, ci) == 1 {
                    routes.push(((i, j), (j, ci)));
                    new_locks.push((j, ci));
                } else if cnt(&count, i, c) == 0 {
                    routes.push(((i, j), (i, c)));
                    new_locks.push((i, c));
                } else {
                    continue 'colors;
                }
            }
            // Route A locks (i, c) where row i will hold exactly column j.
            // Two neighbours cannot both lock the same (i, c) since i differs.
            chosen = Some((c, routes, new_locks));
            break;
        }
        let (c, routes, new_locks) = chosen.expect("a fresh colour is always feasible");
        if c == n_colors {
            n_colors += 1;
        }
        color[j] = c;
        for &r in &adj[j] {
            *count.entry((r, c)).or_insert(0) += 1;
        }
        if diag[j] {
            *count.entry((j, c)).or_insert(0) += 1;
            locked.insert((j, c));
            route.insert((j, j), (j, c));
        }
        for (e, rc) in routes {
            route.insert(e, rc);
        }
        locked.extend(new_locks);
    }

    let recovery = entries
        .iter()
        .map(|&(i, j)| {
            let key = if i <= j { (i, j) } else { (j, i) };
            route
                .get(&key)
                .or_else(|| route.get(&(key.1, key.0)))
                .copied()
                .expect("every pattern entry receives a route")
        })
        .collect();
    Coloring {
        color_of: color,
        n_colors,
        recovery,
    }
}

/// Precomputed colouring and recovery for evaluating the Hessian block of
/// one tape over a chosen subset `w` of its inputs.
#[derive(Debug, Clone)]
pub struct HessianPlan {
    source: u64,
    n_inputs: usize,
    w: Vec<usize>,
    /// Local (position-in-`w`) upper-triangle entries.
    entries: Vec<(usize, usize)>,
    coloring: Coloring,
    /// Colour of each tape input, `usize::MAX` outside `w`.
    input_color: Vec<usize>,
}

impl HessianPlan {
    pub fn new(pattern: &SparsityPattern, w: &[usize]) -> Result<Self> {
        let mut local = vec![usize::MAX; pattern.n()];
        for (k, &g) in w.iter().enumerate() {
            if g >= pattern.n() {
                return Err(Error::Dimension(format!(
                    "index {g} outside the {} tape inputs",
                    pattern.n()
                )));
            }
            local[g] = k;
        }
        let mut entries: Vec<(usize, usize)> = pattern
            .entries()
            .filter_map(|(i, j)| {
                let (a, b) = (local[i], local[j]);
                (a != usize::MAX && b != usize::MAX).then_some((a.min(b), a.max(b)))
            })
            .collect();
        entries.sort_unstable();
        let coloring = color_symmetric(w.len(), &entries);
        let mut input_color = vec![usize::MAX; pattern.n()];
        for (k, &g) in w.iter().enumerate() {
            input_color[g] = coloring.color_of[k];
        }
        Ok(Self {
            source: pattern.source_tape(),
            n_inputs: pattern.n(),
            w: w.to_vec(),
            entries,
            coloring,
            input_color,
        })
    }

    /// Plan over every input.
    pub fn full(pattern: &SparsityPattern) -> Result<Self> {
        let w: Vec<usize> = (0..pattern.n()).collect();
        Self::new(pattern, &w)
    }

    pub fn w(&self) -> &[usize] {
        &self.w
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn n_colors(&self) -> usize {
        self.coloring.n_colors
    }

    pub fn source_tape(&self) -> u64 {
        self.source
    }

    /// Value, full gradient, and the `w`-block Hessian entries aligned with
    /// [`HessianPlan::entries`]. Hessian values are accumulated into `hess`.
    pub fn accumulate(
        &self,
        tape: &Tape,
        x: &[f64],
        ws: &mut Workspace,
        grad: &mut [f64],
        hess: &mut [f64],
    ) -> Result<f64> {
        if tape.id() != self.source || tape.n_inputs() != self.n_inputs {
            return Err(Error::PatternMismatch);
        }
        let value = tape.forward(x, &mut ws.values)?;
        tape.reverse(&ws.values, &mut ws.adjoints);
        let m = tape.n_inputs().min(ws.adjoints.len());
        for k in 0..m {
            let g = ws.adjoints[k];
            if !g.is_finite() {
                return Err(Error::NonFiniteNode { node: k });
            }
            grad[k] += g;
        }
        let nc = self.coloring.n_colors;
        let mut start = 0;
        while start < nc {
            let dirs = BATCH.min(nc - start);
            let ic = &self.input_color;
            tape.hessian_directions(ws, dirs, |k, out| {
                out.iter_mut().for_each(|o| *o = 0.0);
                let c = ic[k];
                if c != usize::MAX && c >= start && c < start + dirs {
                    out[c - start] = 1.0;
                }
            });
            let at = &ws.adjoint_tangents;
            for (e, &(row, c)) in self.coloring.recovery.iter().enumerate() {
                if c >= start && c < start + dirs {
                    let g = self.w[row];
                    let v = if g < m { at[g * dirs + c - start] } else { 0.0 };
                    hess[e] += v;
                }
            }
            start += dirs;
        }
        for (e, h) in hess.iter().enumerate() {
            if !h.is_finite() {
                return Err(Error::NonFiniteNode { node: self.w[self.entries[e].0] });
            }
        }
        Ok(value)
    }
}

impl Tape {
    /// Hessian restricted to `pattern`; entries outside it are exactly zero.
    pub fn hessian(&self, x: &[f64], pattern: &SparsityPattern) -> Result<SparseSymmetric> {
        if pattern.source_tape() != self.id() {
            return Err(Error::PatternMismatch);
        }
        self.check_len(x)?;
        let plan = HessianPlan::full(pattern)?;
        let mut ws = Workspace::new();
        let mut grad = vec![0.0; self.n_inputs()];
        let mut vals = vec![0.0; plan.entries().len()];
        plan.accumulate(self, x, &mut ws, &mut grad, &mut vals)?;
        Ok(SparseSymmetric {
            n: self.n_inputs(),
            entries: plan
                .entries()
                .iter()
                .zip(vals)
                .map(|(&(i, j), v)| (i, j, v))
                .collect(),
        })
    }
}
