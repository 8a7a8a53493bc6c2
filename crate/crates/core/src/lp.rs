//! Dense two-phase simplex for small standard-form LPs:
//! maximize `c·x` subject to `A x = b`, `x ≥ 0`.
//!
//! Only used on the policy simplex (tens of variables, a handful of rows),
//! so a plain tableau with Bland's rule is plenty.

const EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Infeasible,
    Unbounded,
    Optimal { x: Vec<f64>, value: f64 },
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    /// columns that may enter the basis
    allowed: Vec<bool>,
}

impl Tableau {
    fn rhs(&self, r: usize) -> f64 {
        *self.rows[r].last().unwrap()
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let piv = self.rows[pr][pc];
        self.rows[pr].iter_mut().for_each(|v| *v /= piv);
        let pivot_row = self.rows[pr].clone();
        for (r, row) in self.rows.iter_mut().enumerate() {
            if r == pr {
                continue;
            }
            let f = row[pc];
            if f != 0.0 {
                row.iter_mut().zip(&pivot_row).for_each(|(v, p)| *v -= f * p);
            }
        }
        self.basis[pr] = pc;
    }

    /// Maximizes `obj · x` from the current basic feasible solution.
    fn optimize(&mut self, obj: &[f64]) -> Option<()> {
        let ncols = obj.len();
        for _ in 0..10_000 {
            // reduced cost of column j: obj_j - Σ_r obj_{basis r} a_rj
            let entering = (0..ncols).find(|&j| {
                self.allowed[j] && !self.basis.contains(&j) && {
                    let zj: f64 = self
                        .rows
                        .iter()
                        .zip(&self.basis)
                        .map(|(row, &bj)| obj[bj] * row[j])
                        .sum();
                    obj[j] - zj > EPS
                }
            });
            let Some(pc) = entering else {
                return Some(());
            };
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.rows.len() {
                let a = self.rows[r][pc];
                if a > EPS {
                    let ratio = self.rhs(r) / a;
                    let better = match best {
                        None => true,
                        Some((br, bv)) => ratio < bv - EPS || (ratio <= bv + EPS && self.basis[r] < self.basis[br]),
                    };
                    if better {
                        best = Some((r, ratio));
                    }
                }
            }
            let (pr, _) = best?;
            self.pivot(pr, pc);
        }
        Some(())
    }
}

/// Solves `max c·x  s.t.  A x = b, x ≥ 0`.
pub fn maximize(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> LpOutcome {
    let m = a.len();
    let n = c.len();
    debug_assert!(a.iter().all(|row| row.len() == n) && b.len() == m);

    // [x (n) | artificials (m) | rhs]
    let mut rows = Vec::with_capacity(m);
    for r in 0..m {
        let sign = if b[r] < 0.0 { -1.0 } else { 1.0 };
        let mut row: Vec<f64> = a[r].iter().map(|v| v * sign).collect();
        row.extend((0..m).map(|k| if k == r { 1.0 } else { 0.0 }));
        row.push(b[r] * sign);
        rows.push(row);
    }
    let mut t = Tableau {
        rows,
        basis: (n..n + m).collect(),
        allowed: vec![true; n + m],
    };

    let mut phase1 = vec![0.0; n + m];
    phase1[n..].iter_mut().for_each(|v| *v = -1.0);
    if t.optimize(&phase1).is_none() {
        return LpOutcome::Infeasible;
    }
    let infeasibility: f64 = (0..m).filter(|&r| t.basis[r] >= n).map(|r| t.rhs(r)).sum();
    if infeasibility > 1e-9 {
        return LpOutcome::Infeasible;
    }

    // drive zero-level artificials out of the basis; drop redundant rows
    let mut r = 0;
    while r < t.rows.len() {
        if t.basis[r] >= n {
            match (0..n).find(|&j| t.rows[r][j].abs() > EPS) {
                Some(pc) => {
                    t.pivot(r, pc);
                    r += 1;
                }
                None => {
                    t.rows.remove(r);
                    t.basis.remove(r);
                }
            }
        } else {
            r += 1;
        }
    }
    t.allowed[n..].iter_mut().for_each(|v| *v = false);

    let mut phase2 = c.to_vec();
    phase2.extend(std::iter::repeat_n(0.0, m));
    if t.optimize(&phase2).is_none() {
        return LpOutcome::Unbounded;
    }
    let mut x = vec![0.0; n];
    for (r, &bj) in t.basis.iter().enumerate() {
        if bj < n {
            x[bj] = t.rhs(r).max(0.0);
        }
    }
    let value = c.iter().zip(&x).map(|(a, b)| a * b).sum();
    LpOutcome::Optimal { x, value }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_max() {
        // max x0 + x1  s.t. x0 + 2 x1 + s = 4, x0 + s2 = 2
        let a = vec![vec![1.0, 2.0, 1.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]];
        let out = maximize(&a, &[4.0, 2.0], &[1.0, 1.0, 0.0, 0.0]);
        match out {
            LpOutcome::Optimal { x, value } => {
                assert!((value - 3.0).abs() < 1e-9);
                assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 1.0).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn detects_infeasible_simplex_constraint() {
        // p0 + p1 = 1, p0 - s = 1.5  (p0 >= 1.5)
        let a = vec![vec![1.0, 1.0, 0.0], vec![1.0, 0.0, -1.0]];
        assert_eq!(maximize(&a, &[1.0, 1.5], &[0.0, 0.0, 0.0]), LpOutcome::Infeasible);
    }

    #[test]
    fn redundant_rows_are_tolerated() {
        let a = vec![vec![1.0, 1.0], vec![2.0, 2.0]];
        match maximize(&a, &[1.0, 2.0], &[1.0, 0.0]) {
            LpOutcome::Optimal { value, .. } => assert!((value - 1.0).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unbounded() {
        let a = vec![vec![1.0, -1.0]];
        assert_eq!(maximize(&a, &[0.0], &[1.0, 0.0]), LpOutcome::Unbounded);
    }
}
