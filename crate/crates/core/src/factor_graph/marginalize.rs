//! Schur-complement marginalization into a [`FactorKind::MarginalPrior`].

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::Serialize;

use super::linear::linearize_dense;
use super::{Factor, FactorKind, Graph, GraphError, VariableId};

/// Ridge added to a singular victim block before inverting it.
pub const VICTIM_DAMPING: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalizationReport {
    pub removed_variables: usize,
    pub absorbed_factors: usize,
    /// Variables the new prior couples; empty when nothing was transferred.
    #[serde(skip)]
    pub blanket: Vec<VariableId>,
    /// Damping applied to the victim block, if it had to be regularized.
    pub damping: Option<f64>,
}

/// Removes `victims` from the graph, folding every factor that touches them
/// into a single prior over the remaining neighbours. The prior is linearized
/// at the current estimates and never relinearized.
pub fn marginalize(
    graph: &mut Graph,
    victims: &BTreeSet<VariableId>,
) -> Result<MarginalizationReport, GraphError> {
    if let Some(v) = victims.iter().find(|v| !graph.contains(v)) {
        return Err(GraphError::UnknownVariable(*v));
    }
    let (absorbed, kept): (Vec<Factor>, Vec<Factor>) = graph
        .factors
        .drain(..)
        .partition(|f| f.variables.iter().any(|v| victims.contains(v)));
    graph.factors = kept;

    let blanket: Vec<VariableId> = absorbed
        .iter()
        .flat_map(|f| f.variables.iter().copied())
        .filter(|v| !victims.contains(v))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut report = MarginalizationReport {
        removed_variables: victims.len(),
        absorbed_factors: absorbed.len(),
        blanket: blanket.clone(),
        damping: None,
    };

    if !blanket.is_empty() {
        let order: Vec<VariableId> = victims.iter().chain(blanket.iter()).copied().collect();
        let (h, g, cost) = match linearize_dense(&absorbed, &graph.values, &order, None) {
            Ok(lin) => lin,
            Err(e) => {
                graph.factors.extend(absorbed);
                return Err(e);
            }
        };
        let m = 6 * victims.len();
        let r = 6 * blanket.len();
        let h_mm = h.view((0, 0), (m, m)).into_owned();
        let h_rm = h.view((m, 0), (r, m)).into_owned();
        let h_rr = h.view((m, m), (r, r)).into_owned();
        let g_m = g.rows(0, m).into_owned();
        let g_r = g.rows(m, r).into_owned();

        let chol = match h_mm.clone().cholesky() {
            Some(c) => c,
            None => {
                report.damping = Some(VICTIM_DAMPING);
                let damped = h_mm + DMatrix::identity(m, m) * VICTIM_DAMPING;
                match damped.cholesky() {
                    Some(c) => c,
                    None => {
                        graph.factors.extend(absorbed);
                        return Err(GraphError::SingularVictimBlock);
                    }
                }
            }
        };
        let inv_h_mr = chol.solve(&h_rm.transpose());
        let inv_g_m = chol.solve(&g_m);
        let mut info = h_rr - &h_rm * &inv_h_mr;
        info = (&info + info.transpose()) * 0.5;
        // Round-off in the complement can leave tiny negative eigenvalues.
        let eig = info.clone().symmetric_eigen();
        if eig.eigenvalues.min() < 0.0 {
            let clamped = eig.eigenvalues.map(|l| l.max(0.0));
            info = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
            info = (&info + info.transpose()) * 0.5;
        }
        let gradient = g_r - &h_rm * &inv_g_m;
        let constant = (cost - g_m.dot(&inv_g_m)).max(0.0);
        let linearization = blanket.iter().map(|v| graph.values[v]).collect();
        graph.factors.push(Factor {
            kind: FactorKind::MarginalPrior,
            variables: blanket,
            measurement: None,
            information: info,
            prior: Some(super::PriorState {
                linearization,
                gradient,
                constant,
            }),
        });
    }

    for v in victims {
        graph.values.remove(v);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor_graph::{diagonal_information, optimize, LmParams};
    use crate::geometry::Pose;

    #[test]
    fn prior_only_pose_leaves_graph_unchanged() {
        let mut g = Graph::new();
        g.add_variable(VariableId::ego(0), Pose::identity()).unwrap();
        g.add_variable(VariableId::ego(1), Pose::from_translation(1.0, 0.0, 0.0)).unwrap();
        g.add_factor(Factor::anchor(VariableId::ego(0), Pose::identity(), diagonal_information(1e8, 1e8)))
            .unwrap();
        g.add_factor(Factor::anchor(
            VariableId::ego(1),
            Pose::from_translation(1.0, 0.0, 0.0),
            diagonal_information(10.0, 10.0),
        ))
        .unwrap();
        let before = g.factors()[1].clone();
        let report = marginalize(&mut g, &BTreeSet::from([VariableId::ego(0)])).unwrap();
        assert!(report.blanket.is_empty());
        assert_eq!(g.factors(), &[before]);
        assert_eq!(g.variable_count(), 1);
    }

    #[test]
    fn retained_information_is_the_schur_complement() {
        let mut g = Graph::new();
        let poses = [
            Pose::identity(),
            Pose::from_xyz_yaw(1.0, 0.1, 0.0, 0.1),
            Pose::from_xyz_yaw(2.1, 0.3, 0.05, 0.25),
        ];
        for (i, p) in poses.iter().enumerate() {
            g.add_variable(VariableId::ego(i as u32), *p).unwrap();
        }
        g.add_factor(Factor::anchor(VariableId::ego(0), Pose::identity(), diagonal_information(1e4, 1e4)))
            .unwrap();
        for i in 1..3u32 {
            g.add_factor(Factor::odometry(
                VariableId::ego(i - 1),
                VariableId::ego(i),
                Pose::from_xyz_yaw(1.0, 0.0, 0.0, 0.1),
                diagonal_information(100.0, 50.0),
            ))
            .unwrap();
        }
        let all = [VariableId::ego(1), VariableId::ego(0), VariableId::ego(2)];
        let (h, b, _) = g.linearize_dense(&all).unwrap();
        let h_mm = h.view((0, 0), (6, 6)).into_owned();
        let h_rm = h.view((6, 0), (12, 6)).into_owned();
        let inv = h_mm.try_inverse().unwrap();
        let expected_h = h.view((6, 6), (12, 12)) - &h_rm * &inv * h_rm.transpose();
        let expected_b = b.rows(6, 12) - &h_rm * &inv * b.rows(0, 6);

        marginalize(&mut g, &BTreeSet::from([VariableId::ego(1)])).unwrap();
        let (h2, b2, _) = g.linearize_dense(&[VariableId::ego(0), VariableId::ego(2)]).unwrap();
        assert!((h2 - expected_h).amax() < 1e-8);
        assert!((b2 - expected_b).amax() < 1e-8);

        // The reduced problem keeps the same optimum.
        optimize(&mut g, &LmParams::default()).unwrap();
    }

    #[test]
    fn unknown_victim_is_rejected() {
        let mut g = Graph::new();
        assert_eq!(
            marginalize(&mut g, &BTreeSet::from([VariableId::ego(3)])),
            Err(GraphError::UnknownVariable(VariableId::ego(3)))
        );
    }
}
