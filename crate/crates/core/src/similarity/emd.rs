//! Exact balanced optimal transport by the transportation simplex method
//! (network simplex specialised to a complete bipartite graph).
//!
//! The basis is kept as a spanning tree over the `m + n` row and column
//! nodes with exactly `m + n - 1` basic cells, so degenerate (zero-flow)
//! basic cells are carried explicitly rather than dropped.

use crate::error::{Error, Result};

/// Optimal flow between two weight vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    /// Row-major `m x n` flow matrix.
    pub flow: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub cost: f64,
}

impl TransportPlan {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.flow[i * self.cols + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.flow[i * self.cols..(i + 1) * self.cols].iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j)).sum())
            .collect()
    }
}

const MAX_PIVOTS: usize = 100_000;
/// Consecutive degenerate pivots tolerated before switching to Bland's rule.
const DEGENERATE_LIMIT: usize = 50;

struct Basis {
    m: usize,
    n: usize,
    cells: Vec<(usize, usize)>,
    flow: Vec<f64>,
}

impl Basis {
    /// Northwest-corner start. Always produces `m + n - 1` cells forming a
    /// spanning tree (a staircase).
    fn northwest(supply: &[f64], demand: &[f64]) -> Self {
        let (m, n) = (supply.len(), demand.len());
        let mut a = supply.to_vec();
        let mut b = demand.to_vec();
        let mut cells = Vec::with_capacity(m + n - 1);
        let mut flow = Vec::with_capacity(m + n - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let x = a[i].min(b[j]).max(0.0);
            cells.push((i, j));
            flow.push(x);
            let row_done = a[i] <= b[j];
            a[i] -= x;
            b[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if i == m - 1 {
                j += 1;
            } else if j == n - 1 || row_done {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self { m, n, cells, flow }
    }

    /// Node ids: rows are `0..m`, columns are `m..m+n`.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for (e, &(i, j)) in self.cells.iter().enumerate() {
            adj[i].push((self.m + j, e));
            adj[self.m + j].push((i, e));
        }
        adj
    }

    fn potentials(&self, cost: &[f64], adj: &[Vec<(usize, usize)>]) -> (Vec<f64>, Vec<f64>) {
        let (m, n) = (self.m, self.n);
        let mut pot = vec![f64::NAN; m + n];
        pot[0] = 0.0;
        let mut stack = vec![0];
        while let Some(u) = stack.pop() {
            for &(v, e) in &adj[u] {
                if pot[v].is_nan() {
                    let (i, j) = self.cells[e];
                    let c = cost[i * n + j];
                    pot[v] = c - pot[u];
                    stack.push(v);
                }
            }
        }
        (pot[..m].to_vec(), pot[m..].to_vec())
    }

    /// Tree path (as basis edge ids) from node `from` to node `to`.
    fn path(&self, adj: &[Vec<(usize, usize)>], from: usize, to: usize) -> Vec<usize> {
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; self.m + self.n];
        let mut seen = vec![false; self.m + self.n];
        seen[from] = true;
        let mut stack = vec![from];
        while let Some(u) = stack.pop() {
            if u == to {
                break;
            }
            for &(v, e) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = Some((u, e));
                    stack.push(v);
                }
            }
        }
        let mut edges = Vec::new();
        let mut cur = to;
        while cur != from {
            let (p, e) = parent[cur].expect("basis is a spanning tree");
            edges.push(e);
            cur = p;
        }
        edges.reverse();
        edges
    }
}

/// Solves `min sum f_ij c_ij` subject to row sums `supply`, column sums
/// `demand`, `f >= 0`. Both weight vectors must be non-negative with equal
/// totals (within 1e-9 relative); `demand` is rescaled to the supply total.
pub fn transport(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<TransportPlan> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 {
        return Err(Error::precondition("transport needs non-empty weight vectors"));
    }
    if cost.len() != m * n {
        return Err(Error::shape(format!(
            "cost has {} entries, expected {m}x{n}",
            cost.len()
        )));
    }
    if supply.iter().chain(demand).any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::validation("transport weights must be finite and non-negative"));
    }
    let total_a: f64 = supply.iter().sum();
    let total_b: f64 = demand.iter().sum();
    if (total_a - total_b).abs() > 1e-9 * total_a.max(total_b).max(1.0) {
        return Err(Error::validation(format!(
            "unbalanced transport: supply {total_a} vs demand {total_b}"
        )));
    }
    let demand: Vec<f64> = if total_b > 0.0 {
        demand.iter().map(|d| d * total_a / total_b).collect()
    } else {
        demand.to_vec()
    };

    let scale = cost.iter().fold(0.0_f64, |a, c| a.max(c.abs())).max(1.0);
    let tol = 1e-12 * scale;
    let mut basis = Basis::northwest(supply, &demand);
    let mut in_basis = vec![false; m * n];
    for &(i, j) in &basis.cells {
        in_basis[i * n + j] = true;
    }

    let mut degenerate_run = 0;
    for _ in 0..MAX_PIVOTS {
        let adj = basis.adjacency();
        let (u, v) = basis.potentials(cost, &adj);
        let bland = degenerate_run >= DEGENERATE_LIMIT;
        let mut entering: Option<(usize, usize, f64)> = None;
        'scan: for i in 0..m {
            for j in 0..n {
                if in_basis[i * n + j] {
                    continue;
                }
                let rc = cost[i * n + j] - u[i] - v[j];
                if rc < -tol {
                    if bland {
                        entering = Some((i, j, rc));
                        break 'scan;
                    }
                    if entering.is_none_or(|(_, _, best)| rc < best) {
                        entering = Some((i, j, rc));
                    }
                }
            }
        }
        let Some((ei, ej, _)) = entering else {
            break;
        };

        // cycle: entering cell (+), then the tree path from row ei to column ej
        // alternating -, +, -, ...
        let path = basis.path(&adj, ei, m + ej);
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (k, &e) in path.iter().enumerate() {
            if k % 2 == 0 {
                let f = basis.flow[e];
                let better = f < theta
                    || (bland && f == theta && leave != usize::MAX && basis.cells[e] < basis.cells[leave]);
                if better {
                    theta = f;
                    leave = e;
                }
            }
        }
        let theta = theta.max(0.0);
        degenerate_run = if theta == 0.0 { degenerate_run + 1 } else { 0 };
        for (k, &e) in path.iter().enumerate() {
            if k % 2 == 0 {
                basis.flow[e] = (basis.flow[e] - theta).max(0.0);
            } else {
                basis.flow[e] += theta;
            }
        }
        let (li, lj) = basis.cells[leave];
        in_basis[li * n + lj] = false;
        in_basis[ei * n + ej] = true;
        basis.cells[leave] = (ei, ej);
        basis.flow[leave] = theta;
    }

    let mut flow = vec![0.0; m * n];
    for (&(i, j), &f) in basis.cells.iter().zip(&basis.flow) {
        flow[i * n + j] = f;
    }
    let cost_total = flow.iter().zip(cost).map(|(f, c)| f * c).sum();
    Ok(TransportPlan {
        flow,
        rows: m,
        cols: n,
        cost: cost_total,
    })
}
