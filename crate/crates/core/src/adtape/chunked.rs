use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;

use super::hessian::HessianPlan;
use super::sparsity::SparsityPattern;
use super::tape::{Tape, Workspace};
use crate::error::{Error, Result};

struct Part {
    tape: Tape,
    pattern: SparsityPattern,
    ws: Mutex<Workspace>,
}

/// A scalar objective recorded as a sum of independent part tapes over the
/// same inputs.
///
/// Parts are evaluated in parallel and combined by an ordered fold over
/// part index, so results are bit-identical for any thread count.
pub struct ChunkedTape {
    parts: Vec<Part>,
    n_inputs: usize,
}

/// Hessian plan for the `w` block of a [`ChunkedTape`].
pub struct ChunkedPlan {
    w: Vec<usize>,
    entries: Vec<(usize, usize)>,
    part_plans: Vec<HessianPlan>,
    part_maps: Vec<Vec<usize>>,
}

impl ChunkedPlan {
    pub fn w(&self) -> &[usize] {
        &self.w
    }

    /// Local upper-triangle entries, indexed by position in `w`.
    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn max_colors(&self) -> usize {
        self.part_plans.iter().map(HessianPlan::n_colors).max().unwrap_or(0)
    }
}

impl ChunkedTape {
    pub fn new(tapes: Vec<Tape>) -> Result<Self> {
        let n_inputs = tapes.first().map_or(0, Tape::n_inputs);
        if tapes.iter().any(|t| t.n_inputs() != n_inputs) {
            return Err(Error::Dimension("part tapes disagree on input count".into()));
        }
        let parts = tapes
            .into_iter()
            .map(|tape| {
                let pattern = tape.sparsity();
                Part {
                    tape,
                    pattern,
                    ws: Mutex::new(Workspace::new()),
                }
            })
            .collect();
        Ok(Self { parts, n_inputs })
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_parts(&self) -> usize {
        self.parts.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.parts.iter().map(|p| p.tape.n_nodes()).sum()
    }

    pub fn tapes(&self) -> impl Iterator<Item = &Tape> {
        self.parts.iter().map(|p| &p.tape)
    }

    /// Union of the part patterns.
    pub fn pattern_entries(&self) -> Vec<(usize, usize)> {
        let mut all: Vec<(usize, usize)> = self
            .parts
            .iter()
            .flat_map(|p| p.pattern.entries())
            .collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let vals: Vec<Result<f64>> = self
            .parts
            .par_iter()
            .map(|p| {
                let mut ws = p.ws.lock().expect("workspace lock");
                p.tape.forward(x, &mut ws.values)
            })
            .collect();
        vals.into_iter().try_fold(0.0, |acc, v| Ok(acc + v?))
    }

    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let n = self.n_inputs;
        let out: Vec<Result<(f64, Vec<f64>)>> = self
            .parts
            .par_iter()
            .map(|p| {
                let mut ws = p.ws.lock().expect("workspace lock");
                let mut g = vec![0.0; n];
                let v = p.tape.value_and_gradient_with(x, &mut ws, &mut g)?;
                Ok((v, g))
            })
            .collect();
        let mut total = 0.0;
        let mut grad = vec![0.0; n];
        for r in out {
            let (v, g) = r?;
            total += v;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        Ok((total, grad))
    }

    pub fn plan(&self, w: &[usize]) -> Result<ChunkedPlan> {
        let part_plans = self
            .parts
            .iter()
            .map(|p| HessianPlan::new(&p.pattern, w))
            .collect::<Result<Vec<_>>>()?;
        let mut entries: Vec<(usize, usize)> = part_plans
            .iter()
            .flat_map(|pp| pp.entries().iter().copied())
            .collect();
        entries.sort_unstable();
        entries.dedup();
        let index: HashMap<(usize, usize), usize> =
            entries.iter().enumerate().map(|(k, &e)| (e, k)).collect();
        let part_maps = part_plans
            .iter()
            .map(|pp| pp.entries().iter().map(|e| index[e]).collect())
            .collect();
        Ok(ChunkedPlan {
            w: w.to_vec(),
            entries,
            part_plans,
            part_maps,
        })
    }

    /// Value, gradient over all inputs, and `w`-block Hessian entries.
    pub fn value_gradient_hessian(
        &self,
        plan: &ChunkedPlan,
        x: &[f64],
    ) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        if plan.part_plans.len() != self.parts.len() {
            return Err(Error::PatternMismatch);
        }
        let n = self.n_inputs;
        let out: Vec<Result<(f64, Vec<f64>, Vec<f64>)>> = self
            .parts
            .par_iter()
            .zip(plan.part_plans.par_iter())
            .map(|(p, pp)| {
                let mut ws = p.ws.lock().expect("workspace lock");
                let mut g = vec![0.0; n];
                let mut h = vec![0.0; pp.entries().len()];
                let v = pp.accumulate(&p.tape, x, &mut ws, &mut g, &mut h)?;
                Ok((v, g, h))
            })
            .collect();
        let mut total = 0.0;
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; plan.entries.len()];
        for (r, map) in out.into_iter().zip(&plan.part_maps) {
            let (v, g, h) = r?;
            total += v;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            for (k, hv) in h.into_iter().enumerate() {
                hess[map[k]] += hv;
            }
        }
        Ok((total, grad, hess))
    }
}
