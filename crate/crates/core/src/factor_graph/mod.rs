//! Pose factor graphs over ego poses, object poses and object motions.
//!
//! Every variable is an SE(3) pose with a six-dimensional right-multiplicative
//! tangent space. The objective is `sum_f r_f^T Omega_f r_f` where `r_f` is the
//! twist residual of factor `f`; marginal priors contribute the quadratic
//! `d^T H d + 2 b^T d + c` in the tangent offsets `d` from their
//! linearization points.

mod linear;
mod marginalize;
pub mod residuals;
mod solver;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector, Matrix6};
use thiserror::Error;

use crate::geometry::{GeometryError, Pose};

pub use marginalize::{marginalize, MarginalizationReport, VICTIM_DAMPING};
pub use solver::{optimize, LmParams, OptimReport, Termination};

/// Tracked-object identifier shared with the association stage.
pub type TrackId = u32;
/// Frame index in the input stream.
pub type FrameId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VariableKind {
    EgoPose,
    ObjectPose,
    ObjectMotion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VariableId {
    pub kind: VariableKind,
    pub frame: FrameId,
    pub object: Option<TrackId>,
}

impl VariableId {
    pub fn ego(frame: FrameId) -> Self {
        Self {
            kind: VariableKind::EgoPose,
            frame,
            object: None,
        }
    }

    pub fn object_pose(track: TrackId, frame: FrameId) -> Self {
        Self {
            kind: VariableKind::ObjectPose,
            frame,
            object: Some(track),
        }
    }

    /// Motion of `track` from `frame - 1` to `frame`.
    pub fn object_motion(track: TrackId, frame: FrameId) -> Self {
        Self {
            kind: VariableKind::ObjectMotion,
            frame,
            object: Some(track),
        }
    }

    fn is_well_formed(&self) -> bool {
        match self.kind {
            VariableKind::EgoPose => self.object.is_none(),
            _ => self.object.is_some(),
        }
    }
}

impl fmt::Display for VariableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.object) {
            (VariableKind::EgoPose, _) => write!(f, "x{}", self.frame),
            (VariableKind::ObjectPose, Some(o)) => write!(f, "b{}@{}", o, self.frame),
            (VariableKind::ObjectMotion, Some(o)) => write!(f, "c{}@{}", o, self.frame),
            (_, None) => write!(f, "?{}", self.frame),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FactorKind {
    Odometry,
    Observation,
    Motion,
    ConstVelocity,
    Loop,
    MarginalPrior,
}

impl FactorKind {
    pub fn name(&self) -> &'static str {
        match self {
            FactorKind::Odometry => "odometry",
            FactorKind::Observation => "observation",
            FactorKind::Motion => "motion",
            FactorKind::ConstVelocity => "const_velocity",
            FactorKind::Loop => "loop",
            FactorKind::MarginalPrior => "marginal_prior",
        }
    }

    fn expected_kinds(&self) -> Option<&'static [VariableKind]> {
        use VariableKind::*;
        match self {
            FactorKind::Odometry | FactorKind::Loop => Some(&[EgoPose, EgoPose]),
            FactorKind::Observation => Some(&[EgoPose, ObjectPose]),
            FactorKind::Motion => Some(&[ObjectPose, ObjectPose, ObjectMotion]),
            FactorKind::ConstVelocity => Some(&[ObjectMotion, ObjectMotion]),
            FactorKind::MarginalPrior => None,
        }
    }
}

/// Linearization state of a marginal prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorState {
    /// Estimates of the prior's variables when it was created.
    pub linearization: Vec<Pose>,
    /// Linear term `b` of the quadratic.
    pub gradient: DVector<f64>,
    /// Objective value at the linearization point.
    pub constant: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub kind: FactorKind,
    pub variables: Vec<VariableId>,
    pub measurement: Option<Pose>,
    /// Inverse covariance, `6k x 6k` for `k` residual poses.
    pub information: DMatrix<f64>,
    pub prior: Option<PriorState>,
}

impl Factor {
    fn binary(
        kind: FactorKind,
        a: VariableId,
        b: VariableId,
        measurement: Option<Pose>,
        information: Matrix6<f64>,
    ) -> Self {
        Self {
            kind,
            variables: vec![a, b],
            measurement,
            information: to_dmatrix(&information),
            prior: None,
        }
    }

    pub fn odometry(prev: VariableId, cur: VariableId, meas: Pose, info: Matrix6<f64>) -> Self {
        Self::binary(FactorKind::Odometry, prev, cur, Some(meas), info)
    }

    pub fn loop_closure(old: VariableId, new: VariableId, meas: Pose, info: Matrix6<f64>) -> Self {
        Self::binary(FactorKind::Loop, old, new, Some(meas), info)
    }

    /// `local` is the object pose measured in the ego frame.
    pub fn observation(ego: VariableId, object: VariableId, local: Pose, info: Matrix6<f64>) -> Self {
        Self::binary(FactorKind::Observation, ego, object, Some(local), info)
    }

    pub fn motion(
        prev: VariableId,
        cur: VariableId,
        motion: VariableId,
        info: Matrix6<f64>,
    ) -> Self {
        Self {
            kind: FactorKind::Motion,
            variables: vec![prev, cur, motion],
            measurement: None,
            information: to_dmatrix(&info),
            prior: None,
        }
    }

    pub fn const_velocity(prev: VariableId, cur: VariableId, info: Matrix6<f64>) -> Self {
        Self::binary(FactorKind::ConstVelocity, prev, cur, None, info)
    }

    /// Zero-mean prior holding `var` at `at` with the given information.
    pub fn anchor(var: VariableId, at: Pose, info: Matrix6<f64>) -> Self {
        Self {
            kind: FactorKind::MarginalPrior,
            variables: vec![var],
            measurement: None,
            information: to_dmatrix(&info),
            prior: Some(PriorState {
                linearization: vec![at],
                gradient: DVector::zeros(6),
                constant: 0.0,
            }),
        }
    }

    pub fn marginal_prior(
        variables: Vec<VariableId>,
        linearization: Vec<Pose>,
        information: DMatrix<f64>,
        gradient: DVector<f64>,
        constant: f64,
    ) -> Self {
        Self {
            kind: FactorKind::MarginalPrior,
            variables,
            measurement: None,
            information,
            prior: Some(PriorState {
                linearization,
                gradient,
                constant,
            }),
        }
    }

    pub fn touches(&self, var: &VariableId) -> bool {
        self.variables.contains(var)
    }

    fn validate(&self) -> Result<(), GraphError> {
        let n = self.variables.len();
        match self.kind.expected_kinds() {
            Some(kinds) => {
                if n != kinds.len() {
                    return Err(GraphError::Arity {
                        kind: self.kind,
                        expected: kinds.len(),
                        got: n,
                    });
                }
                for (v, k) in self.variables.iter().zip(kinds) {
                    if v.kind != *k {
                        return Err(GraphError::WrongVariableKind {
                            kind: self.kind,
                            variable: *v,
                        });
                    }
                }
                let needs_measurement = !matches!(self.kind, FactorKind::Motion | FactorKind::ConstVelocity);
                if needs_measurement != self.measurement.is_some() {
                    return Err(GraphError::MalformedFactor(self.kind));
                }
                if self.information.shape() != (6, 6) {
                    return Err(GraphError::MalformedFactor(self.kind));
                }
            }
            None => {
                let prior = self.prior.as_ref().ok_or(GraphError::MalformedFactor(self.kind))?;
                if n == 0
                    || prior.linearization.len() != n
                    || prior.gradient.len() != 6 * n
                    || self.information.shape() != (6 * n, 6 * n)
                {
                    return Err(GraphError::MalformedFactor(self.kind));
                }
            }
        }
        check_information(&self.information, self.kind)
    }
}

fn to_dmatrix(m: &Matrix6<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(6, 6, m.as_slice())
}

fn check_information(info: &DMatrix<f64>, kind: FactorKind) -> Result<(), GraphError> {
    let scale = info.amax().max(f64::MIN_POSITIVE);
    let asym = (info - info.transpose()).amax();
    if !asym.is_finite() || asym > 1e-12 * scale.max(1.0) {
        return Err(GraphError::NonPsdInformation(kind));
    }
    let min_eig = info.symmetric_eigenvalues().min();
    if min_eig < -1e-9 * scale {
        return Err(GraphError::NonPsdInformation(kind));
    }
    Ok(())
}

/// Diagonal information from rotation and translation weights.
pub fn diagonal_information(rot: f64, trans: f64) -> Matrix6<f64> {
    Matrix6::from_diagonal(&nalgebra::Vector6::new(rot, rot, rot, trans, trans, trans))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("variable {0} already exists")]
    DuplicateVariable(VariableId),
    #[error("variable {0} does not exist")]
    UnknownVariable(VariableId),
    #[error("variable id {0} has the wrong object field for its kind")]
    MalformedVariable(VariableId),
    #[error("{kind:?} factor expects {expected} variables, got {got}")]
    Arity {
        kind: FactorKind,
        expected: usize,
        got: usize,
    },
    #[error("{kind:?} factor cannot attach to {variable}")]
    WrongVariableKind {
        kind: FactorKind,
        variable: VariableId,
    },
    #[error("{0:?} factor has inconsistent measurement or matrix dimensions")]
    MalformedFactor(FactorKind),
    #[error("{0:?} factor information matrix is not symmetric positive semi-definite")]
    NonPsdInformation(FactorKind),
    #[error("normal equations are rank deficient; under-constrained: {}", list(.variables))]
    RankDeficient { variables: Vec<VariableId> },
    #[error("linear solve failed at {}", list(.variables))]
    LinearSolveFailed { variables: Vec<VariableId> },
    #[error("victim block is singular even after damping")]
    SingularVictimBlock,
    #[error("objective is not finite")]
    NonFiniteObjective,
    #[error("max_iters must be at least 1")]
    InvalidParameters,
}

fn list(vars: &[VariableId]) -> String {
    vars.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

/// Variables with their current estimates plus the factors over them.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    values: BTreeMap<VariableId, Pose>,
    factors: Vec<Factor>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, id: VariableId, estimate: Pose) -> Result<(), GraphError> {
        if !id.is_well_formed() {
            return Err(GraphError::MalformedVariable(id));
        }
        if self.values.contains_key(&id) {
            return Err(GraphError::DuplicateVariable(id));
        }
        self.values.insert(id, estimate);
        Ok(())
    }

    pub fn contains(&self, id: &VariableId) -> bool {
        self.values.contains_key(id)
    }

    pub fn value(&self, id: &VariableId) -> Option<&Pose> {
        self.values.get(id)
    }

    pub fn set_value(&mut self, id: &VariableId, pose: Pose) -> Result<(), GraphError> {
        let slot = self
            .values
            .get_mut(id)
            .ok_or(GraphError::UnknownVariable(*id))?;
        *slot = pose;
        Ok(())
    }

    pub fn values(&self) -> &BTreeMap<VariableId, Pose> {
        &self.values
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = (&VariableId, &mut Pose)> {
        self.values.iter_mut()
    }

    pub fn variable_count(&self) -> usize {
        self.values.len()
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn factors_mut(&mut self) -> &mut [Factor] {
        &mut self.factors
    }

    pub fn add_factor(&mut self, factor: Factor) -> Result<(), GraphError> {
        factor.validate()?;
        if let Some(v) = factor.variables.iter().find(|v| !self.values.contains_key(v)) {
            return Err(GraphError::UnknownVariable(*v));
        }
        self.factors.push(factor);
        Ok(())
    }

    /// Removes the variable together with every factor touching it, without
    /// preserving their information.
    pub fn remove_variable(&mut self, id: &VariableId) -> Option<Pose> {
        let pose = self.values.remove(id)?;
        self.factors.retain(|f| !f.touches(id));
        Some(pose)
    }

    pub fn objective(&self) -> Result<f64, GraphError> {
        let mut total = 0.0;
        for f in &self.factors {
            total += linear::factor_cost(f, &self.values, None)?;
        }
        if !total.is_finite() {
            return Err(GraphError::NonFiniteObjective);
        }
        Ok(total)
    }

    /// Dense `(H, b, c)` of the linearized objective over `order`, which must
    /// cover every variable touched by the graph's factors.
    pub fn linearize_dense(
        &self,
        order: &[VariableId],
    ) -> Result<(DMatrix<f64>, DVector<f64>, f64), GraphError> {
        linear::linearize_dense(&self.factors, &self.values, order, None)
    }

    /// One factor per line: kind, variables, measurement (12 floats or `-`),
    /// information diagonal.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> io::Result<()> {
        for f in &self.factors {
            write!(w, "{}", f.kind.name())?;
            for v in &f.variables {
                write!(w, " {v}")?;
            }
            match &f.measurement {
                Some(m) => {
                    for x in m.to_row_major_3x4() {
                        write!(w, " {x:.9}")?;
                    }
                }
                None => write!(w, " -")?,
            }
            for x in f.information.diagonal().iter() {
                write!(w, " {x:.6e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}
