//! Branch and bound over LP or QP relaxations with binary variables.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DVector;

use super::problem::{Problem, Status};
use super::tol::TOL;
use super::{solve_lp, solve_qp, SolverError};

/// Problem whose variables listed in `binaries` must take values in {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct MipProblem {
    pub core: Problem,
    pub binaries: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum MipStatus {
    Optimal,
    Infeasible,
    /// Node budget exhausted; the incumbent (if any) and its gap are returned.
    NodeCapReached,
    /// A relaxation failed to solve (unbounded or iteration limit).
    RelaxationFailed,
}

#[derive(Debug, Clone)]
pub struct MipSolution {
    pub x: Option<DVector<f64>>,
    pub objective: f64,
    pub bound: f64,
    pub gap: f64,
    pub status: MipStatus,
    pub nodes: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct MipOptions {
    /// Relative gap `(incumbent - bound) / max(1, |incumbent|)` at which search stops.
    pub gap_tolerance: f64,
    pub node_cap: usize,
}

impl Default for MipOptions {
    fn default() -> Self {
        Self { gap_tolerance: 1e-9, node_cap: 200_000 }
    }
}

struct Node {
    bound: f64,
    seq: usize,
    // -1 free, 0 or 1 fixed; indexed like `binaries`
    fix: Vec<i8>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // max-heap: smallest bound first, then oldest node
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

enum Relaxed {
    Solved(DVector<f64>, f64),
    Infeasible,
    Failed,
}

fn relax(mip: &MipProblem, fix: &[i8]) -> Result<Relaxed, SolverError> {
    let mut p = mip.core.clone();
    for (k, &j) in mip.binaries.iter().enumerate() {
        match fix[k] {
            0 => {
                p.lower[j] = 0.0;
                p.upper[j] = 0.0;
            }
            1 => {
                p.lower[j] = 1.0;
                p.upper[j] = 1.0;
            }
            _ => {
                p.lower[j] = p.lower[j].max(0.0);
                p.upper[j] = p.upper[j].min(1.0);
            }
        }
    }
    let sol = if p.hessian.is_some() { solve_qp(&p)?.solution } else { solve_lp(&p)? };
    Ok(match sol.status {
        Status::Optimal => Relaxed::Solved(sol.x, sol.objective),
        Status::Infeasible => Relaxed::Infeasible,
        _ => Relaxed::Failed,
    })
}

fn gap_of(incumbent: f64, bound: f64) -> f64 {
    if incumbent.is_infinite() {
        return f64::INFINITY;
    }
    ((incumbent - bound) / incumbent.abs().max(1.0)).max(0.0)
}

/// Most fractional binary, lowest index on ties. `None` when integral.
fn branching_index(mip: &MipProblem, x: &DVector<f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, &j) in mip.binaries.iter().enumerate() {
        let frac = (x[j] - x[j].round()).abs();
        if frac > TOL.integrality && best.map_or(true, |(_, f)| frac > f) {
            best = Some((k, frac));
        }
    }
    best.map(|(k, _)| k)
}

/// Branch and bound. Dives depth first until a first incumbent exists, then
/// switches to best-bound selection. Fully deterministic.
pub fn solve_mip(mip: &MipProblem, options: MipOptions) -> Result<MipSolution, SolverError> {
    mip.core.validate()?;
    if mip.binaries.iter().any(|&j| j >= mip.core.num_vars()) {
        return Err(SolverError::Dimension);
    }
    let nb = mip.binaries.len();
    let mut incumbent: Option<DVector<f64>> = None;
    let mut inc_obj = f64::INFINITY;
    let mut dive: Vec<Node> = Vec::new();
    let mut heap: BinaryHeap<Node> = BinaryHeap::new();
    let mut seq = 0usize;
    let mut nodes = 0usize;
    let mut failed = false;
    dive.push(Node { bound: f64::NEG_INFINITY, seq, fix: vec![-1; nb] });

    let finish = |incumbent: Option<DVector<f64>>, inc_obj: f64, bound: f64, status: MipStatus, nodes| {
        let bound = bound.min(inc_obj);
        MipSolution { x: incumbent, objective: inc_obj, bound, gap: gap_of(inc_obj, bound), status, nodes }
    };

    loop {
        let node = if incumbent.is_none() && !dive.is_empty() {
            dive.pop()
        } else {
            // move any remaining dive nodes into the heap once an incumbent exists
            heap.extend(dive.drain(..));
            heap.pop()
        };
        let Some(node) = node else { break };
        if node.bound >= inc_obj - options.gap_tolerance * inc_obj.abs().max(1.0) {
            continue;
        }
        if nodes >= options.node_cap {
            let mut bound = node.bound;
            for n in heap.iter().chain(dive.iter()) {
                bound = bound.min(n.bound);
            }
            return Ok(finish(incumbent, inc_obj, bound, MipStatus::NodeCapReached, nodes));
        }
        nodes += 1;
        let (x, obj) = match relax(mip, &node.fix)? {
            Relaxed::Solved(x, obj) => (x, obj),
            Relaxed::Infeasible => continue,
            Relaxed::Failed => {
                failed = true;
                continue;
            }
        };
        if obj >= inc_obj - options.gap_tolerance * inc_obj.abs().max(1.0) {
            continue;
        }
        match branching_index(mip, &x) {
            None => {
                let mut xr = x;
                for &j in &mip.binaries {
                    xr[j] = xr[j].round();
                }
                inc_obj = obj;
                incumbent = Some(xr);
            }
            Some(k) => {
                let v = x[mip.binaries[k]];
                let near = if v >= 0.5 { 1 } else { 0 };
                let mut children = Vec::with_capacity(2);
                for val in [1 - near, near] {
                    let mut fix = node.fix.clone();
                    fix[k] = val as i8;
                    seq += 1;
                    children.push(Node { bound: obj, seq, fix });
                }
                if incumbent.is_none() {
                    // the child nearer the rounding is popped first
                    dive.extend(children);
                } else {
                    heap.extend(children);
                }
            }
        }
    }
    if failed && incumbent.is_none() {
        return Ok(finish(None, f64::INFINITY, f64::NEG_INFINITY, MipStatus::RelaxationFailed, nodes));
    }
    match incumbent {
        Some(x) => Ok(finish(Some(x), inc_obj, inc_obj, MipStatus::Optimal, nodes)),
        None => Ok(finish(None, f64::INFINITY, f64::INFINITY, MipStatus::Infeasible, nodes)),
    }
}
