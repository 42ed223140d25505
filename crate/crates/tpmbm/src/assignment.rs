//! Optimal 2-D assignment and Murty's k-best ranked assignments.
//!
//! The solver is a shortest-augmenting-path method (Jonker-Volgenant style)
//! for rectangular matrices with `rows <= cols`. Gated-out pairs are modeled
//! with a large finite sentinel so that all dual arithmetic stays overflow
//! free; any entry at or above [`CostMatrix::INFEASIBLE_THRESHOLD`] is
//! treated as forbidden.

use crate::error::{Result, TrackingError};

/// Rectangular cost matrix in negative-log-weight units.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    /// Sentinel used to mark forbidden row/column pairs.
    pub const INFEASIBLE: f64 = 1e15;
    /// Entries at or above this value are treated as forbidden.
    pub const INFEASIBLE_THRESHOLD: f64 = 1e14;

    /// Builds a matrix from row-major data. `f64::INFINITY` entries are
    /// mapped to the finite sentinel.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let nr = rows.len();
        let nc = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(nr * nc);
        for row in &rows {
            if row.len() != nc {
                return Err(TrackingError::invalid("ragged cost matrix"));
            }
            for &v in row {
                if v.is_nan() {
                    return Err(TrackingError::invalid("NaN cost entry"));
                }
                data.push(if v.is_infinite() || v >= Self::INFEASIBLE_THRESHOLD {
                    Self::INFEASIBLE
                } else {
                    v
                });
            }
        }
        Ok(Self {
            rows: nr,
            cols: nc,
            data,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    fn is_feasible_entry(v: f64) -> bool {
        v < Self::INFEASIBLE_THRESHOLD
    }
}

/// A full row-to-column assignment together with its total cost.
pub type Assignment = (Vec<usize>, f64);

/// Solves the minimum-cost injective row-to-column assignment.
///
/// Requires `rows <= cols` and at least one feasible complete assignment;
/// otherwise returns [`TrackingError::Infeasible`].
pub fn solve_assignment(cost: &CostMatrix) -> Result<Assignment> {
    match lsap_min(cost) {
        Some(sol) => Ok(sol),
        None => Err(TrackingError::Infeasible),
    }
}

/// Shortest-augmenting-path LSAP; returns `None` when infeasible.
fn lsap_min(cost: &CostMatrix) -> Option<Assignment> {
    let nr = cost.rows;
    let nc = cost.cols;
    if nr == 0 {
        return Some((Vec::new(), 0.0));
    }
    if nr > nc {
        return None;
    }

    let mut u = vec![0.0f64; nr];
    let mut v = vec![0.0f64; nc];
    let mut row2col = vec![usize::MAX; nr];
    let mut col2row = vec![usize::MAX; nc];
    let mut shortest = vec![0.0f64; nc];
    let mut path = vec![usize::MAX; nc];
    let mut in_tree_row = vec![false; nr];
    let mut in_tree_col = vec![false; nc];
    let mut remaining = vec![0usize; nc];

    for cur_row in 0..nr {
        for x in shortest.iter_mut() {
            *x = f64::INFINITY;
        }
        for x in in_tree_row.iter_mut() {
            *x = false;
        }
        for x in in_tree_col.iter_mut() {
            *x = false;
        }
        for (it, slot) in remaining.iter_mut().enumerate() {
            *slot = nc - it - 1;
        }
        let mut num_remaining = nc;
        let mut min_val = 0.0f64;
        let mut i = cur_row;
        let sink = loop {
            in_tree_row[i] = true;
            let mut lowest = f64::INFINITY;
            let mut index = usize::MAX;
            for it in 0..num_remaining {
                let j = remaining[it];
                let r = min_val + cost.get(i, j) - u[i] - v[j];
                if r < shortest[j] {
                    path[j] = i;
                    shortest[j] = r;
                }
                // Among equal costs, prefer a free column so augmentation ends.
                if shortest[j] < lowest || (shortest[j] == lowest && col2row[j] == usize::MAX) {
                    lowest = shortest[j];
                    index = it;
                }
            }
            min_val = lowest;
            if index == usize::MAX || min_val >= CostMatrix::INFEASIBLE_THRESHOLD {
                return None;
            }
            let j = remaining[index];
            in_tree_col[j] = true;
            num_remaining -= 1;
            remaining[index] = remaining[num_remaining];
            if col2row[j] == usize::MAX {
                break j;
            }
            i = col2row[j];
        };

        u[cur_row] += min_val;
        for r in 0..nr {
            if in_tree_row[r] && r != cur_row {
                u[r] += min_val - shortest[row2col[r]];
            }
        }
        for j in 0..nc {
            if in_tree_col[j] {
                v[j] -= min_val - shortest[j];
            }
        }

        let mut j = sink;
        loop {
            let i = path[j];
            col2row[j] = i;
            std::mem::swap(&mut row2col[i], &mut j);
            if i == cur_row {
                break;
            }
        }
    }

    let mut total = 0.0;
    for (r, &c) in row2col.iter().enumerate() {
        let entry = cost.get(r, c);
        if !CostMatrix::is_feasible_entry(entry) {
            return None;
        }
        total += entry;
    }
    Some((row2col, total))
}

/// One node of Murty's partition tree.
struct MurtyNode {
    cost: CostMatrix,
    solution: Vec<usize>,
    total: f64,
    /// Rows already forced in this node (in partition order).
    forced_rows: Vec<usize>,
}

/// Returns up to `k` distinct assignments in nondecreasing total cost.
///
/// The first entry equals [`solve_assignment`]'s optimum; if fewer than `k`
/// feasible assignments exist, all of them are returned. An infeasible
/// matrix yields an empty list. Cost ties are broken by lexicographic
/// assignment order.
pub fn murty_kbest(cost: &CostMatrix, k: usize) -> Result<Vec<Assignment>> {
    if k == 0 {
        return Err(TrackingError::invalid("k must be at least 1"));
    }
    let mut out: Vec<Assignment> = Vec::new();
    let root = match lsap_min(cost) {
        Some((solution, total)) => MurtyNode {
            cost: cost.clone(),
            solution,
            total,
            forced_rows: Vec::new(),
        },
        None => return Ok(out),
    };

    // Ordered frontier keyed by (cost, lexicographic assignment).
    let mut frontier: Vec<MurtyNode> = vec![root];
    let better = |a: &MurtyNode, b: &MurtyNode| -> std::cmp::Ordering {
        a.total
            .total_cmp(&b.total)
            .then_with(|| a.solution.cmp(&b.solution))
    };

    while out.len() < k && !frontier.is_empty() {
        let best_idx = frontier
            .iter()
            .enumerate()
            .min_by(|a, b| better(a.1, b.1))
            .map(|(i, _)| i)
            .expect("frontier nonempty");
        let node = frontier.swap_remove(best_idx);
        out.push((node.solution.clone(), node.total));
        if out.len() == k {
            break;
        }

        // Partition the node around its best solution.
        let mut forced = node.cost.clone();
        let mut forced_rows = node.forced_rows.clone();
        for r in 0..node.cost.n_rows() {
            if node.forced_rows.contains(&r) {
                continue;
            }
            let banned_col = node.solution[r];
            let mut child_cost = forced.clone();
            child_cost.set(r, banned_col, CostMatrix::INFEASIBLE);
            if let Some((solution, total)) = lsap_min(&child_cost) {
                frontier.push(MurtyNode {
                    cost: child_cost,
                    solution,
                    total,
                    forced_rows: forced_rows.clone(),
                });
            }
            // Force (r, banned_col) for subsequent children: clear the rest
            // of row r and column banned_col.
            for c in 0..forced.n_cols() {
                if c != banned_col {
                    forced.set(r, c, CostMatrix::INFEASIBLE);
                }
            }
            for rr in 0..forced.n_rows() {
                if rr != r {
                    forced.set(rr, banned_col, CostMatrix::INFEASIBLE);
                }
            }
            forced_rows.push(r);
        }
    }

    Ok(out)
}
