//! Factor linearization and the block-sparse normal-equation solver.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};

use super::residuals::relative_residual;
use super::{Factor, FactorKind, GraphError, VariableId};
use crate::geometry::{se3_right_jacobian_inv, Pose, Twist};

/// Gauss-Newton terms of one factor: `cost`, `g = J^T W r` and `H = J^T W J`,
/// laid out over the factor's own variable list.
pub(crate) struct FactorTerms {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub cost: f64,
}

fn lookup<'a>(values: &'a BTreeMap<VariableId, Pose>, id: &VariableId) -> Result<&'a Pose, GraphError> {
    values.get(id).ok_or(GraphError::UnknownVariable(*id))
}

fn info6(f: &Factor) -> Matrix6<f64> {
    Matrix6::from_column_slice(f.information.as_slice())
}

/// Huber weight and robustified cost for a squared Mahalanobis norm.
fn robustify(sq: f64, huber: Option<f64>) -> (f64, f64) {
    match huber {
        Some(k) if sq > k * k => {
            let e = sq.sqrt();
            (k / e, 2.0 * k * e - k * k)
        }
        _ => (1.0, sq),
    }
}

fn prior_offsets(f: &Factor, values: &BTreeMap<VariableId, Pose>) -> Result<DVector<f64>, GraphError> {
    let prior = f.prior.as_ref().ok_or(GraphError::MalformedFactor(f.kind))?;
    let mut delta = DVector::zeros(6 * f.variables.len());
    for (k, (id, lin)) in f.variables.iter().zip(&prior.linearization).enumerate() {
        let d = lin.between(lookup(values, id)?).log()?;
        delta.fixed_rows_mut::<6>(6 * k).copy_from(&d);
    }
    Ok(delta)
}

fn residual_only(f: &Factor, values: &BTreeMap<VariableId, Pose>) -> Result<Twist, GraphError> {
    let a = lookup(values, &f.variables[0])?;
    let b = lookup(values, &f.variables[1])?;
    let r = match f.kind {
        FactorKind::Motion => {
            let c = lookup(values, &f.variables[2])?;
            a.between(b).compose(&c.inverse()).log()?
        }
        FactorKind::ConstVelocity => a.between(b).log()?,
        _ => {
            let m = f.measurement.as_ref().ok_or(GraphError::MalformedFactor(f.kind))?;
            a.between(b).compose(&m.inverse()).log()?
        }
    };
    Ok(r)
}

pub(crate) fn factor_cost(
    f: &Factor,
    values: &BTreeMap<VariableId, Pose>,
    huber: Option<f64>,
) -> Result<f64, GraphError> {
    if f.kind == FactorKind::MarginalPrior {
        let prior = f.prior.as_ref().ok_or(GraphError::MalformedFactor(f.kind))?;
        let delta = prior_offsets(f, values)?;
        let quad = (delta.transpose() * &f.information * &delta)[(0, 0)];
        return Ok(quad + 2.0 * prior.gradient.dot(&delta) + prior.constant);
    }
    let r = residual_only(f, values)?;
    let sq = r.dot(&(info6(f) * r));
    Ok(robustify(sq, huber).1)
}

pub(crate) fn factor_terms(
    f: &Factor,
    values: &BTreeMap<VariableId, Pose>,
    huber: Option<f64>,
) -> Result<FactorTerms, GraphError> {
    if f.kind == FactorKind::MarginalPrior {
        let prior = f.prior.as_ref().ok_or(GraphError::MalformedFactor(f.kind))?;
        let delta = prior_offsets(f, values)?;
        let n = delta.len();
        let mut jac = DMatrix::zeros(n, n);
        for k in 0..f.variables.len() {
            let d: Twist = delta.fixed_rows::<6>(6 * k).into_owned();
            jac.fixed_view_mut::<6, 6>(6 * k, 6 * k)
                .copy_from(&se3_right_jacobian_inv(&d));
        }
        let h_delta = &f.information * &delta;
        let cost = delta.dot(&h_delta) + 2.0 * prior.gradient.dot(&delta) + prior.constant;
        let g = jac.transpose() * (h_delta + &prior.gradient);
        let h = jac.transpose() * &f.information * &jac;
        return Ok(FactorTerms { h, g, cost });
    }

    let a = lookup(values, &f.variables[0])?;
    let b = lookup(values, &f.variables[1])?;
    let (r, jacs): (Twist, Vec<Matrix6<f64>>) = match f.kind {
        FactorKind::Motion => {
            let c = lookup(values, &f.variables[2])?;
            let (r, j) = relative_residual(a, b, c)?;
            (r, j.to_vec())
        }
        FactorKind::ConstVelocity => {
            let (r, j) = relative_residual(a, b, &Pose::identity())?;
            (r, vec![j[0], j[1]])
        }
        _ => {
            let m = f.measurement.as_ref().ok_or(GraphError::MalformedFactor(f.kind))?;
            let (r, j) = relative_residual(a, b, m)?;
            (r, vec![j[0], j[1]])
        }
    };
    let info = info6(f);
    let wr = info * r;
    let (w, cost) = robustify(r.dot(&wr), huber);
    let k = jacs.len();
    let mut h = DMatrix::zeros(6 * k, 6 * k);
    let mut g = DVector::zeros(6 * k);
    let wj: Vec<Matrix6<f64>> = jacs.iter().map(|j| info * j).collect();
    for (p, jp) in jacs.iter().enumerate() {
        g.fixed_rows_mut::<6>(6 * p).copy_from(&(w * jp.transpose() * wr));
        for (q, wq) in wj.iter().enumerate() {
            h.fixed_view_mut::<6, 6>(6 * p, 6 * q).copy_from(&(w * jp.transpose() * wq));
        }
    }
    Ok(FactorTerms { h, g, cost })
}

pub(crate) fn linearize_dense(
    factors: &[Factor],
    values: &BTreeMap<VariableId, Pose>,
    order: &[VariableId],
    huber: Option<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>, f64), GraphError> {
    let index: HashMap<VariableId, usize> = order.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let n = order.len();
    let mut h = DMatrix::zeros(6 * n, 6 * n);
    let mut g = DVector::zeros(6 * n);
    let mut cost = 0.0;
    for f in factors {
        let idx = f
            .variables
            .iter()
            .map(|v| index.get(v).copied().ok_or(GraphError::UnknownVariable(*v)))
            .collect::<Result<Vec<_>, _>>()?;
        let t = factor_terms(f, values, huber)?;
        cost += t.cost;
        for (p, &ip) in idx.iter().enumerate() {
            let mut gb = g.fixed_rows_mut::<6>(6 * ip);
            gb += t.g.fixed_rows::<6>(6 * p);
            for (q, &iq) in idx.iter().enumerate() {
                let mut hb = h.fixed_view_mut::<6, 6>(6 * ip, 6 * iq);
                hb += t.h.fixed_view::<6, 6>(6 * p, 6 * q);
            }
        }
    }
    Ok((h, g, cost))
}

/// Block normal equations `H d = -g` with 6x6 blocks.
pub(crate) struct BlockSystem {
    pub diag: Vec<Matrix6<f64>>,
    /// Off-diagonal blocks `H_ij` keyed by `(i, j)` with `i > j`.
    pub off: HashMap<(usize, usize), Matrix6<f64>>,
    pub g: Vec<Vector6<f64>>,
    pub cost: f64,
}

impl BlockSystem {
    pub fn assemble(
        factors: &[Factor],
        values: &BTreeMap<VariableId, Pose>,
        index: &HashMap<VariableId, usize>,
        huber: Option<f64>,
    ) -> Result<Self, GraphError> {
        let n = index.len();
        let mut sys = BlockSystem {
            diag: vec![Matrix6::zeros(); n],
            off: HashMap::new(),
            g: vec![Vector6::zeros(); n],
            cost: 0.0,
        };
        for f in factors {
            let idx = f
                .variables
                .iter()
                .map(|v| index.get(v).copied().ok_or(GraphError::UnknownVariable(*v)))
                .collect::<Result<Vec<_>, _>>()?;
            let t = factor_terms(f, values, huber)?;
            sys.cost += t.cost;
            for (p, &ip) in idx.iter().enumerate() {
                sys.g[ip] += t.g.fixed_rows::<6>(6 * p);
                for (q, &iq) in idx.iter().enumerate() {
                    let blk: Matrix6<f64> = t.h.fixed_view::<6, 6>(6 * p, 6 * q).into_owned();
                    if ip == iq {
                        sys.diag[ip] += blk;
                    } else if ip > iq {
                        *sys.off.entry((ip, iq)).or_insert_with(Matrix6::zeros) += blk;
                    }
                }
            }
        }
        if !sys.cost.is_finite() {
            return Err(GraphError::NonFiniteObjective);
        }
        Ok(sys)
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn gradient_inf_norm(&self) -> f64 {
        self.g.iter().map(|g| g.amax()).fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut h = DMatrix::zeros(6 * n, 6 * n);
        for (i, d) in self.diag.iter().enumerate() {
            h.fixed_view_mut::<6, 6>(6 * i, 6 * i).copy_from(d);
        }
        for (&(i, j), b) in &self.off {
            h.fixed_view_mut::<6, 6>(6 * i, 6 * j).copy_from(b);
            h.fixed_view_mut::<6, 6>(6 * j, 6 * i).copy_from(&b.transpose());
        }
        h
    }
}

/// Elimination order and fill pattern for a fixed block sparsity structure.
pub(crate) struct Symbolic {
    /// `perm[k]` is the original index eliminated at step `k`.
    perm: Vec<usize>,
    inv: Vec<usize>,
    /// Row indices (in elimination order) below the diagonal of each column.
    cols: Vec<Vec<usize>>,
    slots: HashMap<(usize, usize), usize>,
}

impl Symbolic {
    /// Greedy minimum-degree ordering on the block graph; ties go to the
    /// lowest index.
    pub fn analyze(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> Self {
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for (i, j) in edges {
            if i != j {
                adj[i].insert(j);
                adj[j].insert(i);
            }
        }
        let mut alive = vec![true; n];
        let mut perm = Vec::with_capacity(n);
        let mut neighbor_sets = Vec::with_capacity(n);
        for _ in 0..n {
            let v = (0..n)
                .filter(|&v| alive[v])
                .min_by_key(|&v| (adj[v].len(), v))
                .expect("at least one live node");
            alive[v] = false;
            let nbrs: Vec<usize> = adj[v].iter().copied().collect();
            for &a in &nbrs {
                adj[a].remove(&v);
            }
            for (x, &a) in nbrs.iter().enumerate() {
                for &b in &nbrs[x + 1..] {
                    adj[a].insert(b);
                    adj[b].insert(a);
                }
            }
            adj[v].clear();
            perm.push(v);
            neighbor_sets.push(nbrs);
        }
        let mut inv = vec![0; n];
        for (k, &v) in perm.iter().enumerate() {
            inv[v] = k;
        }
        let mut slots = HashMap::new();
        let mut cols = Vec::with_capacity(n);
        for (k, nbrs) in neighbor_sets.into_iter().enumerate() {
            let mut rows: Vec<usize> = nbrs.into_iter().map(|v| inv[v]).collect();
            rows.sort_unstable();
            for &r in &rows {
                let next = slots.len();
                slots.insert((r, k), next);
            }
            cols.push(rows);
        }
        Symbolic {
            perm,
            inv,
            cols,
            slots,
        }
    }
}

/// Numeric block Cholesky factor `L` in elimination order.
pub(crate) struct Numeric<'a> {
    sym: &'a Symbolic,
    diag: Vec<Matrix6<f64>>,
    blocks: Vec<Matrix6<f64>>,
}

/// Lower Cholesky of a 6x6 block. A pivot not exceeding `rel_tol` times the
/// reference diagonal entry counts as a failure.
fn chol6(a: &Matrix6<f64>, reference: &Vector6<f64>, rel_tol: f64) -> Option<Matrix6<f64>> {
    let mut l = Matrix6::zeros();
    for c in 0..6 {
        let mut s = a[(c, c)];
        for m in 0..c {
            s -= l[(c, m)] * l[(c, m)];
        }
        let floor = rel_tol * reference[c].abs().max(f64::MIN_POSITIVE);
        if !(s > floor) {
            return None;
        }
        let d = s.sqrt();
        l[(c, c)] = d;
        for r in c + 1..6 {
            let mut s = a[(r, c)];
            for m in 0..c {
                s -= l[(r, m)] * l[(c, m)];
            }
            l[(r, c)] = s / d;
        }
    }
    Some(l)
}

pub(crate) enum Damping<'a> {
    None,
    /// `H + mu * diag(D)`.
    Marquardt { mu: f64, scale: &'a [Vector6<f64>] },
}

impl<'a> Numeric<'a> {
    /// Factorizes `H (+ damping)`. Blocks whose pivots collapse are reported
    /// by original index; in `lenient` mode they are decoupled and the
    /// factorization continues so every failure is collected.
    pub fn factorize(
        sym: &'a Symbolic,
        sys: &BlockSystem,
        damping: Damping<'_>,
        rel_tol: f64,
        lenient: bool,
    ) -> Result<Self, Vec<usize>> {
        let n = sys.len();
        let mut diag: Vec<Matrix6<f64>> = (0..n).map(|k| sys.diag[sym.perm[k]]).collect();
        let mut reference: Vec<Vector6<f64>> = diag.iter().map(|d| d.diagonal()).collect();
        if let Damping::Marquardt { mu, scale } = damping {
            for k in 0..n {
                let s = scale[sym.perm[k]];
                for c in 0..6 {
                    diag[k][(c, c)] += mu * s[c];
                }
                reference[k] = diag[k].diagonal();
            }
        }
        let mut blocks = vec![Matrix6::zeros(); sym.slots.len()];
        for (&(i, j), b) in &sys.off {
            let (pi, pj) = (sym.inv[i], sym.inv[j]);
            let (r, c, blk) = if pi > pj { (pi, pj, *b) } else { (pj, pi, b.transpose()) };
            let slot = sym.slots[&(r, c)];
            blocks[slot] += blk;
        }

        let mut failed = Vec::new();
        for k in 0..n {
            let lkk = match chol6(&diag[k], &reference[k], rel_tol) {
                Some(l) => l,
                None => {
                    failed.push(sym.perm[k]);
                    if !lenient {
                        return Err(failed);
                    }
                    for &r in &sym.cols[k] {
                        blocks[sym.slots[&(r, k)]] = Matrix6::zeros();
                    }
                    diag[k] = Matrix6::identity();
                    continue;
                }
            };
            let linv = lkk
                .solve_lower_triangular(&Matrix6::identity())
                .expect("nonzero pivots");
            let linv_t = linv.transpose();
            diag[k] = lkk;
            let rows = &sym.cols[k];
            let slots: Vec<usize> = rows.iter().map(|&r| sym.slots[&(r, k)]).collect();
            for &s in &slots {
                blocks[s] *= linv_t;
            }
            for a in 0..rows.len() {
                let lik = blocks[slots[a]];
                diag[rows[a]] -= lik * lik.transpose();
                for b in 0..a {
                    let ljk = blocks[slots[b]];
                    let target = sym.slots[&(rows[a], rows[b])];
                    blocks[target] -= lik * ljk.transpose();
                }
            }
        }
        if failed.is_empty() {
            Ok(Numeric { sym, diag, blocks })
        } else {
            Err(failed)
        }
    }

    /// Solves `(L L^T) x = rhs`, both indexed in the original order.
    pub fn solve(&self, rhs: &[Vector6<f64>]) -> Vec<Vector6<f64>> {
        let sym = self.sym;
        let n = rhs.len();
        let mut y: Vec<Vector6<f64>> = (0..n).map(|k| rhs[sym.perm[k]]).collect();
        for k in 0..n {
            let yk = self.diag[k]
                .solve_lower_triangular(&y[k])
                .expect("nonzero pivots");
            y[k] = yk;
            for &r in &sym.cols[k] {
                let l = self.blocks[sym.slots[&(r, k)]];
                y[r] -= l * yk;
            }
        }
        for k in (0..n).rev() {
            let mut acc = y[k];
            for &r in &sym.cols[k] {
                let l = self.blocks[sym.slots[&(r, k)]];
                acc -= l.transpose() * y[r];
            }
            y[k] = self.diag[k]
                .tr_solve_lower_triangular(&acc)
                .expect("nonzero pivots");
        }
        let mut out = vec![Vector6::zeros(); n];
        for k in 0..n {
            out[sym.perm[k]] = y[k];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd_system(rng: &mut ChaCha8Rng, n: usize, edges: &[(usize, usize)]) -> BlockSystem {
        let mut sys = BlockSystem {
            diag: vec![Matrix6::zeros(); n],
            off: HashMap::new(),
            g: (0..n).map(|_| Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect(),
            cost: 0.0,
        };
        // Sum of random rank-12 "factors" over each edge plus a small ridge.
        for &(i, j) in edges {
            let j_mat = DMatrix::from_fn(12, 12, |_, _| rng.random_range(-1.0..1.0));
            let h = j_mat.transpose() * &j_mat;
            sys.diag[i] += h.fixed_view::<6, 6>(0, 0);
            sys.diag[j] += h.fixed_view::<6, 6>(6, 6);
            let (hi, lo, blk) = if i > j {
                (i, j, h.fixed_view::<6, 6>(0, 6).into_owned())
            } else {
                (j, i, h.fixed_view::<6, 6>(6, 0).into_owned())
            };
            *sys.off.entry((hi, lo)).or_insert_with(Matrix6::zeros) += blk;
        }
        for d in sys.diag.iter_mut() {
            *d += Matrix6::identity() * 0.1;
        }
        sys
    }

    #[test]
    fn block_solver_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 12;
        let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
        edges.extend([(0, 11), (3, 8), (5, 9)]);
        let sys = random_spd_system(&mut rng, n, &edges);
        let sym = Symbolic::analyze(n, sys.off.keys().copied());
        let num = Numeric::factorize(&sym, &sys, Damping::None, 1e-12, false).ok().unwrap();
        let x = num.solve(&sys.g);
        let dense = sys.to_dense();
        let rhs = DVector::from_iterator(6 * n, sys.g.iter().flat_map(|v| v.iter().copied()));
        let expected = dense.cholesky().unwrap().solve(&rhs);
        for i in 0..n {
            let e: Vector6<f64> = expected.fixed_rows::<6>(6 * i).into_owned();
            assert!((x[i] - e).norm() < 1e-9 * e.norm().max(1.0));
        }
    }

    #[test]
    fn reports_singular_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut sys = random_spd_system(&mut rng, 3, &[(0, 1)]);
        // Variable 2 receives no information at all.
        sys.diag[2] = Matrix6::zeros();
        let sym = Symbolic::analyze(3, sys.off.keys().copied());
        let failed = Numeric::factorize(&sym, &sys, Damping::None, 1e-10, true).err().unwrap();
        assert_eq!(failed, vec![2]);
    }
}
