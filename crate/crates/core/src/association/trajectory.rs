use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{AssociationError, Track};
use crate::factor_graph::FrameId;

/// Cubic coefficients `(t^3, t^2, t, 1)` over time re-indexed so the last
/// history frame sits at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Polynomial(pub [f64; 4]);

impl Polynomial {
    pub fn eval(&self, t: f64) -> f64 {
        let [a, b, c, d] = self.0;
        ((a * t + b) * t + c) * t + d
    }
}

fn fit_axis(times: &[f64], values: &[f64]) -> Polynomial {
    let degree = (times.len() - 1).min(3);
    let cols = degree + 1;
    // Columns ordered from the highest power down.
    let a = DMatrix::from_fn(times.len(), cols, |r, c| times[r].powi((degree - c) as i32));
    let y = DVector::from_column_slice(values);
    let normal = a.transpose() * &a;
    let rhs = a.transpose() * y;
    let sol = match normal.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => normal.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(cols)),
    };
    let mut coeffs = [0.0; 4];
    for (k, v) in sol.iter().enumerate() {
        coeffs[4 - cols + k] = *v;
    }
    Polynomial(coeffs)
}

/// Least-squares fit of `x(t)` and `y(t)` over `(frame, x, y)` samples.
/// Two or three samples fit a line or parabola; four or more a cubic.
pub fn fit_trajectory(
    history: &[(FrameId, f64, f64)],
) -> Result<(Polynomial, Polynomial), AssociationError> {
    if history.len() < 2 {
        return Err(AssociationError::InsufficientHistory(history.len()));
    }
    let last = history[history.len() - 1].0 as f64;
    let times: Vec<f64> = history.iter().map(|h| h.0 as f64 - last).collect();
    let xs: Vec<f64> = history.iter().map(|h| h.1).collect();
    let ys: Vec<f64> = history.iter().map(|h| h.2).collect();
    Ok((fit_axis(&times, &xs), fit_axis(&times, &ys)))
}

/// Position of an initialized track at `frame` from its fitted polynomials.
pub fn predict_position(track: &Track, frame: FrameId) -> Result<(f64, f64), AssociationError> {
    if !track.initialized {
        return Err(AssociationError::UninitializedTrack(track.id));
    }
    let t = frame as f64 - track.last_frame() as f64;
    Ok((track.poly_x.eval(t), track.poly_y.eval(t)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::association::{AssociationParams, ClassLabel, Detection, TrackPoint};
    use crate::geometry::Pose;
    use nalgebra::Vector3;

    fn track_from(points: &[(FrameId, f64, f64)]) -> Track {
        let params = AssociationParams::default();
        let det = Detection::new(points[0].0, Vector3::zeros(), 0.0, ClassLabel::Vehicle);
        let mut track = Track::new(1, &det, Pose::from_translation(points[0].1, points[0].2, 0.0));
        for &(f, x, y) in &points[1..] {
            track.push(
                TrackPoint {
                    frame: f,
                    world_pose: Pose::from_translation(x, y, 0.0),
                    supplementary: false,
                },
                &params,
            );
        }
        track
    }

    #[test]
    fn exact_cubic_and_line() {
        let pts: Vec<(FrameId, f64, f64)> = (0..6u32)
            .map(|f| {
                let t = f as f64 - 5.0;
                (f, t.powi(3), 2.0 * t + 1.0)
            })
            .collect();
        let (px, py) = fit_trajectory(&pts).unwrap();
        for (got, want) in px.0.iter().zip([1.0, 0.0, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-9, "{px:?}");
        }
        for (got, want) in py.0.iter().zip([0.0, 0.0, 2.0, 1.0]) {
            assert!((got - want).abs() < 1e-9, "{py:?}");
        }
    }

    #[test]
    fn short_histories_drop_degree() {
        let (px, _) = fit_trajectory(&[(3, 1.0, 0.0), (4, 3.0, 0.0)]).unwrap();
        assert_eq!(px.0[0], 0.0);
        assert_eq!(px.0[1], 0.0);
        assert!((px.0[2] - 2.0).abs() < 1e-12 && (px.0[3] - 3.0).abs() < 1e-12);
        let (px, _) = fit_trajectory(&[(0, 4.0, 0.0), (1, 1.0, 0.0), (2, 0.0, 0.0)]).unwrap();
        assert_eq!(px.0[0], 0.0);
        assert!((px.eval(1.0) - 1.0).abs() < 1e-9);
        assert_eq!(
            fit_trajectory(&[(0, 0.0, 0.0)]),
            Err(AssociationError::InsufficientHistory(1))
        );
    }

    // Normal equations formed and solved by Gaussian elimination with partial
    // pivoting, independent of the library's matrix routines.
    fn oracle_fit(ts: &[f64], ys: &[f64]) -> [f64; 4] {
        let mut m = [[0.0f64; 5]; 4];
        for (t, y) in ts.iter().zip(ys) {
            let basis = [t * t * t, t * t, *t, 1.0];
            for r in 0..4 {
                for c in 0..4 {
                    m[r][c] += basis[r] * basis[c];
                }
                m[r][4] += basis[r] * y;
            }
        }
        for col in 0..4 {
            let piv = (col..4).max_by(|a, b| m[*a][col].abs().total_cmp(&m[*b][col].abs())).unwrap();
            m.swap(col, piv);
            for r in 0..4 {
                if r != col {
                    let f = m[r][col] / m[col][col];
                    for c in col..5 {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
        [m[0][4] / m[0][0], m[1][4] / m[1][1], m[2][4] / m[2][2], m[3][4] / m[3][3]]
    }

    #[test]
    fn noisy_fit_matches_normal_equations() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let pts: Vec<(FrameId, f64, f64)> = (0..8u32)
                .map(|f| {
                    let t = f as f64;
                    (f + 20, 0.5 * t + rng.random_range(-0.3..0.3), -t * 0.1 * t + rng.random_range(-0.3..0.3))
                })
                .collect();
            let (px, py) = fit_trajectory(&pts).unwrap();
            let ts: Vec<f64> = pts.iter().map(|p| p.0 as f64 - 27.0).collect();
            let xs: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.2).collect();
            let (ox, oy) = (Polynomial(oracle_fit(&ts, &xs)), Polynomial(oracle_fit(&ts, &ys)));
            let rss = |p: &Polynomial, v: &[f64]| -> f64 {
                ts.iter().zip(v).map(|(t, y)| (p.eval(*t) - y).powi(2)).sum()
            };
            assert!((rss(&px, &xs) - rss(&ox, &xs)).abs() < 1e-9);
            assert!((rss(&py, &ys) - rss(&oy, &ys)).abs() < 1e-9);
            for k in 0..4 {
                assert!((px.0[k] - ox.0[k]).abs() < 1e-9 && (py.0[k] - oy.0[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn predictions() {
        let still = track_from(&(0..7).map(|f| (f, 4.0, -2.0)).collect::<Vec<_>>());
        let (x, y) = predict_position(&still, 7).unwrap();
        assert!((x - 4.0).abs() < 1e-9 && (y + 2.0).abs() < 1e-9);

        let line = track_from(&(0..7).map(|f| (f, 4.0 + f as f64, 0.0)).collect::<Vec<_>>());
        let (x, _) = predict_position(&line, 7).unwrap();
        assert!((x - 11.0).abs() < 1e-9);

        let cubic = |t: f64| 0.02 * t.powi(3) - 0.3 * t * t + t + 2.0;
        let c = track_from(&(0..8).map(|f| (f, cubic(f as f64), 0.0)).collect::<Vec<_>>());
        let (x, _) = predict_position(&c, 8).unwrap();
        assert!((x - cubic(8.0)).abs() < 1e-9);

        let young = track_from(&[(0, 0.0, 0.0), (1, 1.0, 0.0)]);
        assert_eq!(predict_position(&young, 2), Err(AssociationError::UninitializedTrack(1)));
    }
}
