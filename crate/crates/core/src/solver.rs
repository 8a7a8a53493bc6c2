//! Local problem: minimize `Σ_h p_h ln p_h + p_h c_h` over the probability
//! simplex, optionally under linear constraints on `p`.
//!
//! Without constraints the minimizer is the Gibbs distribution
//! `p ∝ exp(-c)` with optimal value `-ln Σ exp(-c)`. With constraints the
//! primal keeps the same exponential-family form, `p ∝ exp(-c - Σ λ_l w_l)`,
//! and the multipliers are found by maximizing the concave dual: bisection
//! for a single constraint, projected Newton ascent otherwise.
//!
//! Coordinates that every feasible point sets to zero (e.g. inputs excluded
//! by a bound constraint with ε = 0) are found once per constraint set with
//! an LP and removed before the dual is solved, so they come out exactly 0.

use crate::error::{Error, Result};
use crate::grid::UniformGrid;
use crate::lp::{self, LpOutcome};
use crate::prob::log_sum_exp;

/// Reported solutions satisfy every constraint and KKT condition to this.
pub const KKT_TOLERANCE: f64 = 1e-7;
/// Dual iteration budget.
pub const MAX_ITERATIONS: usize = 10_000;
/// Stopping tolerance on multiplier updates.
pub const MULTIPLIER_TOLERANCE: f64 = 1e-9;

const FORCED_ZERO_TOLERANCE: f64 = 1e-10;

/// Per-input coefficients `c_h = d^x_h + r_h - a_h` of the local problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalCost(Vec<f64>);

impl LocalCost {
    pub fn new(c: Vec<f64>) -> Result<Self> {
        if c.is_empty() {
            return Err(Error::Dimension { expected: 1, actual: 0 });
        }
        if let Some((h, v)) = c.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Domain(format!("local cost entry {h} is {v}")));
        }
        Ok(Self(c))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    /// `w·p ≤ b`
    LessEqual,
    /// `w·p = b`
    Equal,
}

/// A linear functional constraint on one policy row.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub weights: Vec<f64>,
    pub bound: f64,
    pub kind: ConstraintKind,
    pub label: String,
}

impl LinearConstraint {
    pub fn less_equal(weights: Vec<f64>, bound: f64, label: impl Into<String>) -> Self {
        Self {
            weights,
            bound,
            kind: ConstraintKind::LessEqual,
            label: label.into(),
        }
    }

    pub fn equal(weights: Vec<f64>, bound: f64, label: impl Into<String>) -> Self {
        Self {
            weights,
            bound,
            kind: ConstraintKind::Equal,
            label: label.into(),
        }
    }

    pub fn value(&self, p: &[f64]) -> f64 {
        self.weights.iter().zip(p).map(|(w, x)| w * x).sum()
    }

    /// Amount by which `p` violates the constraint (0 when satisfied).
    pub fn violation(&self, p: &[f64]) -> f64 {
        let gap = self.value(p) - self.bound;
        match self.kind {
            ConstraintKind::LessEqual => gap.max(0.0),
            ConstraintKind::Equal => gap.abs(),
        }
    }
}

/// Constraints applied to every local problem.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintSet {
    constraints: Vec<LinearConstraint>,
}

impl ConstraintSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, c: LinearConstraint) {
        self.constraints.push(c);
    }

    pub fn with(mut self, c: LinearConstraint) -> Self {
        self.push(c);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LinearConstraint> {
        self.constraints.iter()
    }

    pub fn max_violation(&self, p: &[f64]) -> f64 {
        self.constraints.iter().map(|c| c.violation(p)).fold(0.0, f64::max)
    }

    /// Validates dimensions and feasibility, and finds the coordinates that
    /// the constraints force to zero. Done once per constraint set.
    pub fn prepare(&self, num_inputs: usize) -> Result<PreparedConstraints> {
        for c in &self.constraints {
            if c.weights.len() != num_inputs {
                return Err(Error::Dimension {
                    expected: num_inputs,
                    actual: c.weights.len(),
                });
            }
            if c.weights.iter().any(|w| !w.is_finite()) || !c.bound.is_finite() {
                return Err(Error::Config(format!("constraint '{}' has non-finite data", c.label)));
            }
        }
        for k in 0..self.constraints.len() {
            if matches!(
                max_coordinate_lp(num_inputs, &self.constraints[..=k], None),
                LpOutcome::Infeasible
            ) {
                return Err(Error::Infeasible {
                    index: k,
                    label: self.constraints[k].label.clone(),
                });
            }
        }

        let active: Vec<usize> = if self.constraints.is_empty() {
            (0..num_inputs).collect()
        } else {
            (0..num_inputs)
                .filter(|&h| match max_coordinate_lp(num_inputs, &self.constraints, Some(h)) {
                    LpOutcome::Optimal { value, .. } => value > FORCED_ZERO_TOLERANCE,
                    _ => true,
                })
                .collect()
        };

        let mut reduced = Vec::new();
        for (index, c) in self.constraints.iter().enumerate() {
            let weights: Vec<f64> = active.iter().map(|&h| c.weights[h]).collect();
            // constant on the reduced simplex: satisfied identically (feasibility was checked)
            let (lo, hi) = weights.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &w| {
                (lo.min(w), hi.max(w))
            });
            if hi - lo <= 1e-15 * (1.0 + lo.abs()) {
                continue;
            }
            reduced.push(ReducedConstraint {
                index,
                weights,
                bound: c.bound,
                kind: c.kind,
            });
        }
        Ok(PreparedConstraints {
            num_inputs,
            set: self.clone(),
            active,
            reduced,
        })
    }
}

/// `max p_h` (or just feasibility when `target` is `None`) over the simplex
/// intersected with `constraints`.
fn max_coordinate_lp(z: usize, constraints: &[LinearConstraint], target: Option<usize>) -> LpOutcome {
    let slacks: Vec<usize> = constraints
        .iter()
        .enumerate()
        .filter(|(_, c)| c.kind == ConstraintKind::LessEqual)
        .map(|(k, _)| k)
        .collect();
    let n = z + slacks.len();
    let mut a = Vec::with_capacity(constraints.len() + 1);
    let mut b = Vec::with_capacity(constraints.len() + 1);
    let mut simplex = vec![0.0; n];
    simplex[..z].iter_mut().for_each(|v| *v = 1.0);
    a.push(simplex);
    b.push(1.0);
    for (k, c) in constraints.iter().enumerate() {
        let mut row = vec![0.0; n];
        row[..z].copy_from_slice(&c.weights);
        if let Some(s) = slacks.iter().position(|&x| x == k) {
            row[z + s] = 1.0;
        }
        a.push(row);
        b.push(c.bound);
    }
    let mut obj = vec![0.0; n];
    if let Some(h) = target {
        obj[h] = 1.0;
    }
    lp::maximize(&a, &b, &obj)
}

#[derive(Debug, Clone, PartialEq)]
struct ReducedConstraint {
    index: usize,
    weights: Vec<f64>,
    bound: f64,
    kind: ConstraintKind,
}

/// A feasibility-checked constraint set with forced zeros eliminated.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedConstraints {
    num_inputs: usize,
    set: ConstraintSet,
    active: Vec<usize>,
    reduced: Vec<ReducedConstraint>,
}

/// Optimal policy row of one local problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSolution {
    pub p: Vec<f64>,
    /// Objective value at `p`, i.e. the cost-to-go of the state.
    pub cost: f64,
    pub kkt_residual: f64,
    /// Multipliers of the constraints, in input order (0 for dropped ones).
    pub multipliers: Vec<f64>,
    pub iterations: usize,
}

/// `Σ p ln p + p c` with `0 ln 0 = 0`.
pub fn objective(p: &[f64], c: &[f64]) -> f64 {
    p.iter()
        .zip(c)
        .filter(|(&x, _)| x > 0.0)
        .map(|(&x, &ch)| x * x.ln() + x * ch)
        .sum()
}

fn gibbs(c: &[f64]) -> (Vec<f64>, f64) {
    let neg: Vec<f64> = c.iter().map(|v| -v).collect();
    let lse = log_sum_exp(&neg);
    (neg.iter().map(|s| (s - lse).exp()).collect(), lse)
}

/// Closed-form minimizer `p_h = exp(-c_h) / Σ exp(-c_l)`, cost `-ln Σ exp(-c_l)`.
pub fn solve_unconstrained(cost: &LocalCost) -> LocalSolution {
    let (p, lse) = gibbs(cost.as_slice());
    LocalSolution {
        p,
        cost: -lse,
        kkt_residual: 0.0,
        multipliers: Vec::new(),
        iterations: 0,
    }
}

/// Convenience wrapper: prepares `constraints` and solves one problem.
pub fn solve_constrained(cost: &LocalCost, constraints: &ConstraintSet) -> Result<LocalSolution> {
    constraints.prepare(cost.len())?.solve(cost)
}

impl PreparedConstraints {
    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.set
    }

    /// Inputs not forced to zero by the constraints.
    pub fn active_inputs(&self) -> &[usize] {
        &self.active
    }

    pub fn solve(&self, cost: &LocalCost) -> Result<LocalSolution> {
        let z = self.num_inputs;
        if cost.len() != z {
            return Err(Error::Dimension {
                expected: z,
                actual: cost.len(),
            });
        }
        let c = cost.as_slice();
        if self.set.is_empty() {
            return Ok(solve_unconstrained(cost));
        }

        // a softmax is strictly positive, so with forced zeros it is never the answer
        let unconstrained = solve_unconstrained(cost);
        if self.active.len() == z && self.set.iter().all(|k| k.violation(&unconstrained.p) <= 1e-12) {
            let mut sol = unconstrained;
            sol.multipliers = vec![0.0; self.set.len()];
            return Ok(sol);
        }

        let reduced_cost: Vec<f64> = self.active.iter().map(|&h| c[h]).collect();
        let (lambda, iterations) = match self.reduced.len() {
            0 => (Vec::new(), 0),
            1 => bisect_single(&reduced_cost, &self.reduced[0])?,
            _ => projected_newton(&reduced_cost, &self.reduced)?,
        };
        let shifted = shifted_cost(&reduced_cost, &self.reduced, &lambda);
        let (reduced_p, _) = gibbs(&shifted);

        let mut p = vec![0.0; z];
        for (k, &h) in self.active.iter().enumerate() {
            p[h] = reduced_p[k];
        }
        let mut multipliers = vec![0.0; self.set.len()];
        for (rc, &l) in self.reduced.iter().zip(&lambda) {
            multipliers[rc.index] = l;
        }
        let kkt_residual = self.kkt_residual(c, &p, &multipliers);
        if kkt_residual > KKT_TOLERANCE {
            return Err(Error::NotConverged {
                iterations,
                residual: kkt_residual,
            });
        }
        Ok(LocalSolution {
            cost: objective(&p, c),
            p,
            kkt_residual,
            multipliers,
            iterations,
        })
    }

    /// Max of stationarity spread on the support, primal infeasibility,
    /// dual infeasibility and complementary slackness.
    pub fn kkt_residual(&self, c: &[f64], p: &[f64], multipliers: &[f64]) -> f64 {
        let mut residual: f64 = 0.0;
        // ln p_h + c_h + Σ λ w_h is constant over the support
        // subnormal entries carry too few bits for a meaningful logarithm
        let stationarity: Vec<f64> = (0..p.len())
            .filter(|&h| p[h] > f64::MIN_POSITIVE)
            .map(|h| {
                p[h].ln()
                    + c[h]
                    + self
                        .set
                        .iter()
                        .zip(multipliers)
                        .map(|(k, l)| l * k.weights[h])
                        .sum::<f64>()
            })
            .collect();
        if let (Some(lo), Some(hi)) = (
            stationarity.iter().copied().reduce(f64::min),
            stationarity.iter().copied().reduce(f64::max),
        ) {
            let scale = 1.0 + lo.abs().max(hi.abs());
            residual = residual.max((hi - lo) / scale);
        }
        residual = residual.max((p.iter().sum::<f64>() - 1.0).abs());
        residual = residual.max(p.iter().map(|&x| (-x).max(0.0)).fold(0.0, f64::max));
        for (k, &l) in self.set.iter().zip(multipliers) {
            residual = residual.max(k.violation(p));
            if k.kind == ConstraintKind::LessEqual {
                residual = residual.max((-l).max(0.0));
                residual = residual.max((l * (k.value(p) - k.bound)).abs());
            }
        }
        residual
    }
}

fn shifted_cost(c: &[f64], constraints: &[ReducedConstraint], lambda: &[f64]) -> Vec<f64> {
    let mut s = c.to_vec();
    for (k, &l) in constraints.iter().zip(lambda) {
        if l != 0.0 {
            s.iter_mut().zip(&k.weights).for_each(|(v, w)| *v += l * w);
        }
    }
    s
}

struct DualPoint {
    value: f64,
    grad: Vec<f64>,
    p: Vec<f64>,
}

fn dual(c: &[f64], constraints: &[ReducedConstraint], lambda: &[f64]) -> DualPoint {
    let shifted = shifted_cost(c, constraints, lambda);
    let (p, lse) = gibbs(&shifted);
    let value = -lse - constraints.iter().zip(lambda).map(|(k, l)| l * k.bound).sum::<f64>();
    let grad = constraints
        .iter()
        .map(|k| k.weights.iter().zip(&p).map(|(w, x)| w * x).sum::<f64>() - k.bound)
        .collect();
    DualPoint { value, grad, p }
}

fn grad_tolerance(k: &ReducedConstraint) -> f64 {
    let scale = k.weights.iter().fold(k.bound.abs(), |a, w| a.max(w.abs()));
    1e-12 * (1.0 + scale)
}

/// One multiplier: the dual derivative `w·p(λ) − b` is non-increasing in λ.
fn bisect_single(c: &[f64], k: &ReducedConstraint) -> Result<(Vec<f64>, usize)> {
    let grad = |l: f64| dual(c, std::slice::from_ref(k), &[l]).grad[0];
    let tol = grad_tolerance(k);
    let g0 = grad(0.0);
    if k.kind == ConstraintKind::LessEqual && g0 <= tol {
        return Ok((vec![0.0], 1));
    }
    if g0.abs() <= tol {
        return Ok((vec![0.0], 1));
    }
    // bracket the root with grad(lo) > 0 > grad(hi)
    let dir = if g0 > 0.0 { 1.0 } else { -1.0 };
    let mut near = 0.0;
    let mut far = dir;
    let mut iterations = 1;
    while grad(far) * dir > 0.0 {
        near = far;
        far *= 2.0;
        iterations += 1;
        if far.abs() > 1e15 {
            return Err(Error::NotConverged {
                iterations,
                residual: grad(far).abs(),
            });
        }
    }
    let (mut lo, mut hi) = if dir > 0.0 { (near, far) } else { (far, near) };
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let g = grad(mid);
        if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= MULTIPLIER_TOLERANCE * 1e-3 * (1.0 + hi.abs()) {
            break;
        }
    }
    // the upper end sits on the feasible side of an inequality
    Ok((vec![hi], iterations))
}

/// Projected Newton ascent on the dual with Armijo backtracking.
fn projected_newton(c: &[f64], constraints: &[ReducedConstraint]) -> Result<(Vec<f64>, usize)> {
    let l = constraints.len();
    let mut lambda = vec![0.0; l];
    let tols: Vec<f64> = constraints.iter().map(grad_tolerance).collect();
    let is_ineq: Vec<bool> = constraints
        .iter()
        .map(|k| k.kind == ConstraintKind::LessEqual)
        .collect();
    let mut point = dual(c, constraints, &lambda);

    for iteration in 1..=MAX_ITERATIONS {
        let converged = (0..l).all(|i| {
            let g = point.grad[i];
            if !is_ineq[i] {
                g.abs() <= tols[i]
            } else if lambda[i] > 0.0 {
                g.abs() <= tols[i] || (g < 0.0 && (lambda[i] * g).abs() <= tols[i])
            } else {
                g <= tols[i]
            }
        });
        if converged {
            return Ok((lambda, iteration));
        }

        let free: Vec<usize> = (0..l)
            .filter(|&i| !is_ineq[i] || lambda[i] > 0.0 || point.grad[i] > 0.0)
            .collect();
        // negative dual Hessian on the free set: covariance of the weights under p
        let means: Vec<f64> = constraints
            .iter()
            .map(|k| k.weights.iter().zip(&point.p).map(|(w, x)| w * x).sum())
            .collect();
        let nf = free.len();
        let mut h = vec![vec![0.0; nf]; nf];
        for (a, &ia) in free.iter().enumerate() {
            for (b, &ib) in free.iter().enumerate().skip(a) {
                let cov: f64 = point
                    .p
                    .iter()
                    .enumerate()
                    .map(|(x, &px)| {
                        px * (constraints[ia].weights[x] - means[ia]) * (constraints[ib].weights[x] - means[ib])
                    })
                    .sum();
                h[a][b] = cov;
                h[b][a] = cov;
            }
        }
        let trace: f64 = (0..nf).map(|a| h[a][a]).sum();
        let mu = 1e-12 * (1.0 + trace);
        (0..nf).for_each(|a| h[a][a] += mu);
        let rhs: Vec<f64> = free.iter().map(|&i| point.grad[i]).collect();
        let step_free = solve_dense(h, rhs).unwrap_or_else(|| free.iter().map(|&i| point.grad[i]).collect());
        let mut direction = vec![0.0; l];
        for (a, &i) in free.iter().enumerate() {
            direction[i] = step_free[a];
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..80 {
            let candidate: Vec<f64> = (0..l)
                .map(|i| {
                    let v = lambda[i] + t * direction[i];
                    if is_ineq[i] {
                        v.max(0.0)
                    } else {
                        v
                    }
                })
                .collect();
            let trial = dual(c, constraints, &candidate);
            let ascent: f64 = (0..l).map(|i| point.grad[i] * (candidate[i] - lambda[i])).sum();
            if trial.value >= point.value + 1e-4 * ascent && trial.value.is_finite() {
                accepted = Some((candidate, trial));
                break;
            }
            t *= 0.5;
        }
        let Some((candidate, trial)) = accepted else {
            break;
        };
        let change = (0..l)
            .map(|i| (candidate[i] - lambda[i]).abs() / (1.0 + lambda[i].abs()))
            .fold(0.0, f64::max);
        lambda = candidate;
        point = trial;
        if change <= MULTIPLIER_TOLERANCE * 1e-3 {
            return Ok((lambda, iteration));
        }
    }
    // stalled; the caller's KKT check decides whether this is good enough
    Ok((lambda, MAX_ITERATIONS))
}

/// Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// `E[u^order] ≤ bound` over the input cell centers.
pub fn make_moment_constraint(input_grid: &UniformGrid, order: u32, bound: f64) -> Result<LinearConstraint> {
    if order == 0 {
        return Err(Error::Config("moment order must be at least 1".into()));
    }
    if input_grid.dims() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            actual: input_grid.dims(),
        });
    }
    let weights = input_grid.centers_1d().iter().map(|u| u.powi(order as i32)).collect();
    Ok(LinearConstraint::less_equal(
        weights,
        bound,
        format!("moment order {order} <= {bound}"),
    ))
}

/// `P(u ∉ allowed) ≤ ε`, i.e. `E[1_allowed(u)] ≥ 1 − ε`.
pub fn make_bound_constraint(num_inputs: usize, allowed: &[usize], epsilon: f64) -> Result<LinearConstraint> {
    if allowed.is_empty() {
        return Err(Error::Config("bound constraint needs a non-empty allowed set".into()));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Config(format!(
            "bound constraint epsilon must be in [0, 1), got {epsilon}"
        )));
    }
    if let Some(&h) = allowed.iter().find(|&&h| h >= num_inputs) {
        return Err(Error::OutOfRange {
            index: h,
            len: num_inputs,
        });
    }
    let mut weights = vec![1.0; num_inputs];
    for &h in allowed {
        weights[h] = 0.0;
    }
    Ok(LinearConstraint::less_equal(
        weights,
        epsilon,
        format!("bound: mass outside {} allowed inputs <= {epsilon}", allowed.len()),
    ))
}

/// Input indices whose cell center satisfies `|u| ≤ max_abs`.
pub fn inputs_within(input_grid: &UniformGrid, max_abs: f64) -> Vec<usize> {
    input_grid
        .centers_1d()
        .iter()
        .enumerate()
        .filter(|(_, u)| u.abs() <= max_abs + 1e-12)
        .map(|(h, _)| h)
        .collect()
}
