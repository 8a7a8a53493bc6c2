//! Backward recursion over the horizon producing the first-step policy.
//!
//! At each step `k = n−1 … 0` and every state `i` the local problem is solved
//! with costs `c_h = d^x_{hi} + r_{hi} − ln Q_U(u_h|x_i)` where `d^x` is the
//! per-pair transition divergence and `r_{hi}` the expected cost-to-go under
//! the target transitions. The new cost table is committed only after the
//! whole state sweep.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::{PolicyModel, TransitionModel};
use crate::prob;
use crate::solver::{ConstraintSet, LocalCost, PreparedConstraints};

/// Models and options for one synthesis run. All models share the grids.
#[derive(Debug, Clone)]
pub struct SynthesisInputs<'a> {
    pub target_transitions: &'a TransitionModel,
    pub reference_transitions: &'a TransitionModel,
    pub reference_policy: &'a PolicyModel,
    pub horizon: usize,
    pub constraints: ConstraintSet,
    /// Keep the policy of every step, not only the first one.
    pub keep_all_steps: bool,
}

impl<'a> SynthesisInputs<'a> {
    pub fn new(
        target_transitions: &'a TransitionModel,
        reference_transitions: &'a TransitionModel,
        reference_policy: &'a PolicyModel,
        horizon: usize,
    ) -> Self {
        Self {
            target_transitions,
            reference_transitions,
            reference_policy,
            horizon,
            constraints: ConstraintSet::new(),
            keep_all_steps: false,
        }
    }

    pub fn with_constraints(mut self, constraints: ConstraintSet) -> Self {
        self.constraints = constraints;
        self
    }

    pub fn keep_all_steps(mut self, keep: bool) -> Self {
        self.keep_all_steps = keep;
        self
    }

    pub fn num_states(&self) -> usize {
        self.target_transitions.num_states()
    }

    pub fn num_inputs(&self) -> usize {
        self.target_transitions.num_inputs()
    }

    fn validate(&self) -> Result<()> {
        let (m, z) = (self.num_states(), self.num_inputs());
        for (mm, zz) in [
            (
                self.reference_transitions.num_states(),
                self.reference_transitions.num_inputs(),
            ),
            (self.reference_policy.num_states(), self.reference_policy.num_inputs()),
        ] {
            if mm != m {
                return Err(Error::Dimension {
                    expected: m,
                    actual: mm,
                });
            }
            if zz != z {
                return Err(Error::Dimension {
                    expected: z,
                    actual: zz,
                });
            }
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        Ok(())
    }
}

/// Cost-to-go per state, in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTable {
    pub d: Vec<f64>,
}

impl CostTable {
    pub fn zeros(num_states: usize) -> Self {
        Self {
            d: vec![0.0; num_states],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedPolicy {
    /// Policy to apply at every step (the first-step solution).
    pub policy: PolicyModel,
    /// Cost table at `k = 0`.
    pub cost_table: CostTable,
    /// Policies for `k = 0..n` when requested.
    pub per_step_policies: Option<Vec<PolicyModel>>,
    pub horizon: usize,
    /// Largest KKT residual over all local solves.
    pub max_kkt_residual: f64,
}

/// Reported after each completed backward step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub step: usize,
    pub horizon: usize,
    pub max_kkt_residual: f64,
}

/// `KL(P_X(·|x_i,u_h) || Q_X(·|x_i,u_h))`.
pub fn coefficient_dx(
    state: usize,
    input: usize,
    target: &TransitionModel,
    reference: &TransitionModel,
) -> Result<f64> {
    let m = target.num_states();
    target.row(state, input).kl_divergence(reference.row(state, input), m)
}

/// `Σ_j P_X(x_j|x_i,u_h) d(x_j)`.
pub fn coefficient_r(state: usize, input: usize, target: &TransitionModel, d: &CostTable) -> f64 {
    let total: f64 = d.d.iter().sum();
    target.row(state, input).expectation(&d.d, total)
}

/// `d^x` and `ln Q_U` for all pairs; both are step independent.
struct Coefficients {
    dx: Vec<f64>,
    log_reference_policy: Vec<f64>,
}

fn precompute(inputs: &SynthesisInputs) -> Result<Coefficients> {
    let (m, z) = (inputs.num_states(), inputs.num_inputs());
    let dx = (0..m * z)
        .into_par_iter()
        .map(|k| coefficient_dx(k / z, k % z, inputs.target_transitions, inputs.reference_transitions))
        .collect::<Result<Vec<f64>>>()?;
    let mut log_reference_policy = Vec::with_capacity(m * z);
    for i in 0..m {
        for (h, &q) in inputs.reference_policy.row(i).iter().enumerate() {
            if q <= 0.0 {
                return Err(Error::Domain(format!(
                    "reference policy assigns zero probability to input {h} in state {i}"
                )));
            }
            log_reference_policy.push(q.ln());
        }
    }
    Ok(Coefficients {
        dx,
        log_reference_policy,
    })
}

pub fn synthesize(inputs: &SynthesisInputs) -> Result<SynthesizedPolicy> {
    synthesize_with_progress(inputs, |_| {})
}

pub fn synthesize_with_progress<F>(inputs: &SynthesisInputs, mut progress: F) -> Result<SynthesizedPolicy>
where
    F: FnMut(Progress),
{
    inputs.validate()?;
    let (m, z, n) = (inputs.num_states(), inputs.num_inputs(), inputs.horizon);
    let prepared: Option<PreparedConstraints> = if inputs.constraints.is_empty() {
        None
    } else {
        Some(inputs.constraints.prepare(z)?)
    };
    let coeffs = precompute(inputs)?;

    let mut d = CostTable::zeros(m);
    let mut per_step = inputs.keep_all_steps.then(|| Vec::with_capacity(n));
    let mut first_policy = None;
    let mut max_residual: f64 = 0.0;

    for k in (0..n).rev() {
        let total: f64 = d.d.iter().sum();
        let d_prev = &d;
        let solutions = (0..m)
            .into_par_iter()
            .map(|i| {
                let c: Vec<f64> = (0..z)
                    .map(|h| {
                        let r = inputs.target_transitions.row(i, h).expectation(&d_prev.d, total);
                        coeffs.dx[i * z + h] + r - coeffs.log_reference_policy[i * z + h]
                    })
                    .collect();
                let cost = LocalCost::new(c)?;
                match &prepared {
                    None => Ok(crate::solver::solve_unconstrained(&cost)),
                    Some(p) => p.solve(&cost),
                }
                .map_err(|e| Error::LocalSolve {
                    step: k,
                    state: i,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut rows = Vec::with_capacity(m);
        let mut next = CostTable::zeros(m);
        let mut step_residual: f64 = 0.0;
        for (i, mut sol) in solutions.into_iter().enumerate() {
            let s: f64 = sol.p.iter().sum();
            sol.p.iter_mut().for_each(|x| *x /= s);
            next.d[i] = sol.cost;
            step_residual = step_residual.max(sol.kkt_residual);
            rows.push(sol.p);
        }
        // commit only after the full sweep
        d = next;
        max_residual = max_residual.max(step_residual);
        let policy = PolicyModel::from_rows(&rows)?;
        if let Some(v) = per_step.as_mut() {
            v.push(policy.clone());
        }
        if k == 0 {
            first_policy = Some(policy);
        }
        progress(Progress {
            step: k,
            horizon: n,
            max_kkt_residual: step_residual,
        });
    }

    if let Some(v) = per_step.as_mut() {
        v.reverse();
    }
    Ok(SynthesizedPolicy {
        policy: first_policy.expect("horizon is at least 1"),
        cost_table: d,
        per_step_policies: per_step,
        horizon: n,
        max_kkt_residual: max_residual,
    })
}

/// `KL(P^n || Q^n)` of the joint state/input trajectory distribution when
/// the target is driven by `policies[k]` at step `k`, against the reference
/// behaviour. Both start from `initial`, so the initial-state term vanishes.
pub fn evaluate_global_kl(policies: &[PolicyModel], inputs: &SynthesisInputs, initial: &[f64]) -> Result<f64> {
    inputs.validate()?;
    let (m, z) = (inputs.num_states(), inputs.num_inputs());
    if initial.len() != m {
        return Err(Error::Dimension {
            expected: m,
            actual: initial.len(),
        });
    }
    prob::check_pmf(initial)?;
    if policies.len() != inputs.horizon {
        return Err(Error::Dimension {
            expected: inputs.horizon,
            actual: policies.len(),
        });
    }
    let coeffs = precompute(inputs)?;

    let mut marginal = initial.to_vec();
    let mut total = 0.0;
    for policy in policies {
        if policy.num_states() != m || policy.num_inputs() != z {
            return Err(Error::Dimension {
                expected: m * z,
                actual: policy.num_states() * policy.num_inputs(),
            });
        }
        let mut next = vec![0.0; m];
        for (i, &mu) in marginal.iter().enumerate() {
            if mu == 0.0 {
                continue;
            }
            for (h, &p) in policy.row(i).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let w = mu * p;
                total += w * (p.ln() - coeffs.log_reference_policy[i * z + h] + coeffs.dx[i * z + h]);
                let row = inputs.target_transitions.row(i, h);
                let bg = row.background();
                if bg != 0.0 {
                    next.iter_mut().for_each(|x| *x += w * bg);
                }
                for &(j, pj) in row.entries() {
                    next[j] += w * (pj - bg);
                }
            }
        }
        marginal = next;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::SparseRow;
    use crate::solver::{solve_unconstrained, LinearConstraint};

    fn model(tensor: Vec<Vec<Vec<f64>>>) -> TransitionModel {
        TransitionModel::from_dense(&tensor).unwrap()
    }

    #[test]
    fn dx_examples() {
        let same = model(vec![vec![vec![0.5, 0.5]]; 2]);
        assert_eq!(coefficient_dx(0, 0, &same, &same).unwrap(), 0.0);

        let delta = 1e-6;
        let p = model(vec![vec![vec![1.0 - delta, delta]]; 2]);
        let dx = coefficient_dx(1, 0, &p, &same).unwrap();
        assert!((dx - std::f64::consts::LN_2).abs() < 1e-4, "{dx}");

        let p = model(vec![vec![vec![0.5, 0.5]]; 2]);
        let q = model(vec![vec![vec![0.25, 0.75]]; 2]);
        assert!((coefficient_dx(0, 0, &p, &q).unwrap() - 0.143841).abs() < 1e-6);
    }

    #[test]
    fn r_examples() {
        let p = model(vec![vec![vec![0.7222, 0.2778]]; 2]);
        assert_eq!(coefficient_r(0, 0, &p, &CostTable::zeros(2)), 0.0);
        let ones = CostTable { d: vec![1.0, 1.0] };
        assert!((coefficient_r(0, 0, &p, &ones) - 1.0).abs() < 1e-15);
        let d = CostTable { d: vec![1.0, 3.0] };
        assert!((coefficient_r(0, 0, &p, &d) - 1.5556).abs() < 1e-12);
    }

    #[test]
    fn r_on_sparse_rows_matches_dense() {
        let mut t = TransitionModel::uniform(4, 1);
        t.set_row(0, 0, Some(SparseRow::new(0.1, vec![(1, 0.5), (3, 0.3)]).unwrap()))
            .unwrap();
        let d = CostTable {
            d: vec![2.0, -1.0, 0.5, 4.0],
        };
        let dense: f64 = t.dense_row(0, 0).iter().zip(&d.d).map(|(p, v)| p * v).sum();
        assert!((coefficient_r(0, 0, &t, &d) - dense).abs() < 1e-14);
    }

    #[test]
    fn single_step_is_softmax() {
        let p = model(vec![
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            vec![vec![0.6, 0.4], vec![0.3, 0.7]],
        ]);
        let q = model(vec![
            vec![vec![0.5, 0.5], vec![0.4, 0.6]],
            vec![vec![0.7, 0.3], vec![0.1, 0.9]],
        ]);
        let qu = PolicyModel::from_rows(&[vec![0.3, 0.7], vec![0.6, 0.4]]).unwrap();
        let inputs = SynthesisInputs::new(&p, &q, &qu, 1);
        let out = synthesize(&inputs).unwrap();
        for i in 0..2 {
            let c: Vec<f64> = (0..2)
                .map(|h| coefficient_dx(i, h, &p, &q).unwrap() - qu.row(i)[h].ln())
                .collect();
            let expected = solve_unconstrained(&LocalCost::new(c).unwrap());
            for h in 0..2 {
                assert!((out.policy.row(i)[h] - expected.p[h]).abs() < 1e-12);
            }
            assert!((out.cost_table.d[i] - expected.cost).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = TransitionModel::uniform(2, 2);
        let q = TransitionModel::uniform(3, 2);
        let qu = PolicyModel::uniform(2, 2);
        assert!(synthesize(&SynthesisInputs::new(&p, &q, &qu, 1)).is_err());
        assert!(synthesize(&SynthesisInputs::new(&p, &p, &qu, 0)).is_err());
    }

    #[test]
    fn infeasibility_reports_state() {
        let p = TransitionModel::uniform(2, 2);
        let qu = PolicyModel::uniform(2, 2);
        let set = ConstraintSet::new().with(LinearConstraint::less_equal(vec![1.0, 1.0], 0.5, "impossible"));
        let err = synthesize(&SynthesisInputs::new(&p, &p, &qu, 2).with_constraints(set)).unwrap_err();
        assert!(matches!(err, Error::Infeasible { index: 0, .. }), "{err}");
    }

    #[test]
    fn progress_reports_every_step() {
        let p = TransitionModel::uniform(3, 2);
        let qu = PolicyModel::uniform(3, 2);
        let mut steps = Vec::new();
        synthesize_with_progress(&SynthesisInputs::new(&p, &p, &qu, 4), |pr| steps.push(pr.step)).unwrap();
        assert_eq!(steps, vec![3, 2, 1, 0]);
    }
}
