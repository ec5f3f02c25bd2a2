//! Levenberg-Marquardt on the right-multiplicative SE(3) parameterization.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DVector, Vector6};
use serde::{Deserialize, Serialize};

use super::linear::{factor_cost, BlockSystem, Damping, Numeric, Symbolic};
use super::{Graph, GraphError, VariableId};
use crate::geometry::Pose;

/// Below this many variables the damped system is solved densely.
const DENSE_LIMIT: usize = 60;
/// Pivot threshold, relative to the undamped diagonal, for declaring the
/// normal equations rank deficient.
const RANK_TOL: f64 = 1e-10;
const MAX_LAMBDA: f64 = 1e16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmParams {
    pub max_iters: usize,
    /// Stop once an accepted step lowers the objective by less than this
    /// fraction.
    pub rel_tol: f64,
    pub grad_tol: f64,
    pub initial_lambda: f64,
    /// Huber threshold on the Mahalanobis residual norm; `None` disables it.
    pub huber: Option<f64>,
}

impl Default for LmParams {
    fn default() -> Self {
        Self {
            max_iters: 50,
            rel_tol: 1e-9,
            grad_tol: 1e-10,
            initial_lambda: 1e-4,
            huber: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIters,
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimReport {
    pub initial_objective: f64,
    pub final_objective: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective after the start and after every accepted step.
    pub objective_trace: Vec<f64>,
}

fn retract(
    values: &BTreeMap<VariableId, Pose>,
    order: &[VariableId],
    step: &[Vector6<f64>],
) -> BTreeMap<VariableId, Pose> {
    let mut out = values.clone();
    for (id, d) in order.iter().zip(step) {
        if let Some(p) = out.get_mut(id) {
            *p = p.compose(&Pose::exp(d));
        }
    }
    out
}

fn total_cost(graph: &Graph, values: &BTreeMap<VariableId, Pose>, huber: Option<f64>) -> Option<f64> {
    let mut total = 0.0;
    for f in graph.factors() {
        total += factor_cost(f, values, huber).ok()?;
    }
    total.is_finite().then_some(total)
}

fn dense_solve(sys: &BlockSystem, mu: f64, scale: &[Vector6<f64>]) -> Option<Vec<Vector6<f64>>> {
    let n = sys.len();
    let mut h = sys.to_dense();
    for (i, s) in scale.iter().enumerate() {
        for c in 0..6 {
            h[(6 * i + c, 6 * i + c)] += mu * s[c];
        }
    }
    let rhs = -DVector::from_iterator(6 * n, sys.g.iter().flat_map(|v| v.iter().copied()));
    let x = h.cholesky()?.solve(&rhs);
    Some((0..n).map(|i| x.fixed_rows::<6>(6 * i).into_owned()).collect())
}

/// Minimizes the graph objective in place.
///
/// Fails with [`GraphError::RankDeficient`] when the undamped normal
/// equations at the starting point are singular, e.g. when no factor fixes
/// the gauge.
pub fn optimize(graph: &mut Graph, params: &LmParams) -> Result<OptimReport, GraphError> {
    if params.max_iters == 0 {
        return Err(GraphError::InvalidParameters);
    }
    for f in graph.factors() {
        f.validate()?;
    }
    let order: Vec<VariableId> = graph.values().keys().copied().collect();
    let index: HashMap<VariableId, usize> = order.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let mut values = graph.values().clone();

    let mut sys = BlockSystem::assemble(graph.factors(), &values, &index, params.huber)?;
    let sym = Symbolic::analyze(order.len(), sys.off.keys().copied());
    if let Err(failed) = Numeric::factorize(&sym, &sys, Damping::None, RANK_TOL, true) {
        let mut variables: Vec<VariableId> = failed.into_iter().map(|i| order[i]).collect();
        variables.sort();
        return Err(GraphError::RankDeficient { variables });
    }

    let initial = sys.cost;
    let mut report = OptimReport {
        initial_objective: initial,
        final_objective: initial,
        iterations: 0,
        termination: Termination::MaxIters,
        objective_trace: vec![initial],
    };
    let mut lambda = params.initial_lambda;
    let mut nu = 2.0;

    loop {
        if sys.cost == 0.0 || sys.gradient_inf_norm() < params.grad_tol {
            report.termination = Termination::Converged;
            break;
        }
        if report.iterations >= params.max_iters {
            report.termination = Termination::MaxIters;
            break;
        }
        report.iterations += 1;

        let max_diag = sys.diag.iter().map(|d| d.diagonal().amax()).fold(0.0, f64::max);
        let floor = 1e-12 * max_diag.max(1.0);
        let scale: Vec<Vector6<f64>> = sys.diag.iter().map(|d| d.diagonal().map(|x| x.max(floor))).collect();

        let step = if order.len() < DENSE_LIMIT {
            dense_solve(&sys, lambda, &scale)
        } else {
            None
        };
        let step = match step {
            Some(s) => s,
            None => {
                let damping = Damping::Marquardt { mu: lambda, scale: &scale };
                let num = Numeric::factorize(&sym, &sys, damping, 0.0, false).map_err(|failed| {
                    GraphError::LinearSolveFailed {
                        variables: failed.into_iter().map(|i| order[i]).collect(),
                    }
                })?;
                let neg_g: Vec<Vector6<f64>> = sys.g.iter().map(|g| -g).collect();
                num.solve(&neg_g)
            }
        };

        // Predicted decrease of the quadratic model F + 2 g.d + d.H.d.
        let mut predicted = 0.0;
        for (i, d) in step.iter().enumerate() {
            predicted -= 2.0 * sys.g[i].dot(d);
            predicted -= d.dot(&(sys.diag[i] * d));
        }
        for (&(i, j), b) in &sys.off {
            predicted -= 2.0 * step[i].dot(&(b * step[j]));
        }

        let candidate = retract(&values, &order, &step);
        let new_cost = total_cost(graph, &candidate, params.huber);
        match new_cost {
            Some(c) if c < sys.cost => {
                let rho = if predicted > 0.0 { (sys.cost - c) / predicted } else { 1.0 };
                let rel = (sys.cost - c) / sys.cost;
                values = candidate;
                sys = BlockSystem::assemble(graph.factors(), &values, &index, params.huber)?;
                report.objective_trace.push(sys.cost);
                lambda *= (1.0f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3));
                nu = 2.0;
                if rel < params.rel_tol {
                    report.termination = Termination::Converged;
                    break;
                }
            }
            _ => {
                lambda *= nu;
                nu *= 2.0;
                if lambda > MAX_LAMBDA {
                    report.termination = Termination::Stalled;
                    break;
                }
            }
        }
    }

    report.final_objective = sys.cost;
    for (id, pose) in values {
        graph.set_value(&id, pose)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor_graph::{diagonal_information, Factor};

    #[test]
    fn anchored_single_pose_is_a_fixed_point() {
        let mut g = Graph::new();
        g.add_variable(VariableId::ego(0), Pose::identity()).unwrap();
        g.add_factor(Factor::anchor(VariableId::ego(0), Pose::identity(), diagonal_information(1e8, 1e8)))
            .unwrap();
        let report = optimize(&mut g, &LmParams::default()).unwrap();
        assert_eq!(report.final_objective, 0.0);
        assert_eq!(report.termination, Termination::Converged);
        assert_eq!(g.value(&VariableId::ego(0)), Some(&Pose::identity()));
    }

    #[test]
    fn unanchored_chain_is_rank_deficient() {
        let mut g = Graph::new();
        for i in 0..3 {
            g.add_variable(VariableId::ego(i), Pose::identity()).unwrap();
        }
        for i in 1..3 {
            g.add_factor(Factor::odometry(
                VariableId::ego(i - 1),
                VariableId::ego(i),
                Pose::from_translation(1.0, 0.0, 0.0),
                diagonal_information(100.0, 100.0),
            ))
            .unwrap();
        }
        match optimize(&mut g, &LmParams::default()) {
            Err(GraphError::RankDeficient { variables }) => assert_eq!(variables.len(), 1),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn zero_iterations_is_invalid() {
        let mut g = Graph::new();
        let params = LmParams {
            max_iters: 0,
            ..LmParams::default()
        };
        assert_eq!(optimize(&mut g, &params), Err(GraphError::InvalidParameters));
    }
}
