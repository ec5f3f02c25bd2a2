//! Test-only oracles, independent of the library's solver paths.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use slot_core::geometry::{Pose, Twist};

/// A residual over a subset of variables, already whitened by the square
/// root of its (diagonal) information.
pub struct OracleTerm {
    pub vars: Vec<usize>,
    pub sqrt_info: [f64; 6],
    pub eval: Box<dyn Fn(&[Pose]) -> Twist>,
}

fn stacked(terms: &[OracleTerm], x: &[Pose]) -> DVector<f64> {
    let mut out = DVector::zeros(6 * terms.len());
    for (k, t) in terms.iter().enumerate() {
        let args: Vec<Pose> = t.vars.iter().map(|&i| x[i]).collect();
        let r = (t.eval)(&args);
        for c in 0..6 {
            out[6 * k + c] = t.sqrt_info[c] * r[c];
        }
    }
    out
}

pub fn oracle_cost(terms: &[OracleTerm], x: &[Pose]) -> f64 {
    stacked(terms, x).norm_squared()
}

/// Plain dense Gauss-Newton with central-difference Jacobians.
pub fn dense_gauss_newton(terms: &[OracleTerm], mut x: Vec<Pose>, iters: usize) -> Vec<Pose> {
    let n = x.len();
    let h = 1e-7;
    for _ in 0..iters {
        let r0 = stacked(terms, &x);
        let mut jac = DMatrix::zeros(r0.len(), 6 * n);
        for i in 0..n {
            for c in 0..6 {
                let mut d = Twist::zeros();
                d[c] = h;
                let mut xp = x.clone();
                xp[i] = x[i].compose(&Pose::exp(&d));
                let mut xm = x.clone();
                xm[i] = x[i].compose(&Pose::exp(&(-d)));
                let col = (stacked(terms, &xp) - stacked(terms, &xm)) / (2.0 * h);
                jac.set_column(6 * i + c, &col);
            }
        }
        let normal = jac.transpose() * &jac;
        let rhs = -(jac.transpose() * &r0);
        let step = normal.lu().solve(&rhs).expect("oracle normal equations");
        for i in 0..n {
            let d: Twist = step.fixed_rows::<6>(6 * i).into_owned();
            x[i] = x[i].compose(&Pose::exp(&d));
        }
        if step.amax() < 1e-13 {
            break;
        }
    }
    x
}

pub fn translation_gap(a: &Pose, b: &Pose) -> f64 {
    (a.translation - b.translation).norm()
}

pub fn rotation_gap(a: &Pose, b: &Pose) -> f64 {
    a.between(b).rotation_angle()
}
