//! Four-parameter monotonic logistic map and its least-squares fit.
//!
//! ```text
//! g(f) = (eta1 - eta2) / (1 + exp(-(f - eta3) / |eta4|)) + eta2
//! ```
//!
//! Used both to bring model scores onto a common perceptual scale and to
//! linearize predictions before computing PLCC.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub const MAX_ITERATIONS: usize = 500;
pub const REL_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Logistic4 {
    pub eta: [f64; 4],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogisticFit {
    pub map: Logistic4,
    pub rmse: f64,
    pub iterations: usize,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Logistic4 {
    pub fn eval(&self, f: f64) -> f64 {
        let [e1, e2, e3, e4] = self.eta;
        (e1 - e2) * sigmoid((f - e3) / e4.abs()) + e2
    }

    /// Non-decreasing in `f`.
    pub fn is_increasing(&self) -> bool {
        self.eta[0] > self.eta[1]
    }

    /// Value and partial derivatives with respect to the four parameters.
    fn eval_with_jacobian(&self, f: f64) -> (f64, [f64; 4]) {
        let [e1, e2, e3, e4] = self.eta;
        let z = (f - e3) / e4.abs();
        let s = sigmoid(z);
        let slope = (e1 - e2) * s * (1.0 - s);
        let value = (e1 - e2) * s + e2;
        (value, [s, 1.0 - s, -slope / e4.abs(), -slope * z / e4])
    }
}

fn sum_sq(map: &Logistic4, pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter()
        .zip(truth)
        .map(|(&f, &t)| (map.eval(f) - t).powi(2))
        .sum()
}

/// Solves the 4x4 system `a x = b` by Gaussian elimination with partial
/// pivoting. Returns `None` for a singular matrix.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..4 {
            let factor = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let tail: f64 = ((row + 1)..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fits the map by Levenberg-Marquardt from the standard starting point
/// (`eta1 = max truth`, `eta2 = min truth`, `eta3 = mean pred`,
/// `eta4 = std pred`), stopping when the relative change of the squared error
/// falls below [`REL_TOLERANCE`] or after [`MAX_ITERATIONS`].
pub fn fit_logistic(pred: &[f64], truth: &[f64]) -> Result<LogisticFit> {
    check_dim("logistic fit truth", pred.len(), truth.len())?;
    if pred.len() < 4 {
        return Err(Error::Insufficient(format!(
            "{} points for a four-parameter fit",
            pred.len()
        )));
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logistic fit input"));
    }
    let (mean, std) = mean_std(pred);
    if std == 0.0 {
        return Err(Error::Degenerate("constant predictions".into()));
    }
    let hi = truth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = truth.iter().copied().fold(f64::INFINITY, f64::min);
    let mut map = Logistic4 {
        eta: [hi, lo, mean, std],
    };
    let mut cost = sum_sq(&map, pred, truth);
    let mut lambda = 1e-3;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS && cost > 0.0 {
        iterations += 1;
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for (&f, &t) in pred.iter().zip(truth) {
            let (v, j) = map.eval_with_jacobian(f);
            let r = v - t;
            for a in 0..4 {
                jtr[a] += j[a] * r;
                for b in 0..4 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e16 {
            let mut damped = jtj;
            for (a, row) in damped.iter_mut().enumerate() {
                row[a] += lambda * jtj[a][a].max(1e-12);
            }
            let rhs = jtr.map(|v| -v);
            if let Some(step) = solve4(damped, rhs) {
                let mut next = map;
                for a in 0..4 {
                    next.eta[a] += step[a];
                }
                if next.eta[3] != 0.0 {
                    let next_cost = sum_sq(&next, pred, truth);
                    if next_cost.is_finite() && next_cost < cost {
                        let rel = (cost - next_cost) / cost;
                        map = next;
                        cost = next_cost;
                        lambda = (lambda / 10.0).max(1e-15);
                        improved = true;
                        if rel < REL_TOLERANCE {
                            return Ok(finish(map, cost, pred.len(), iterations));
                        }
                        break;
                    }
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Ok(finish(map, cost, pred.len(), iterations))
}

fn finish(map: Logistic4, cost: f64, n: usize, iterations: usize) -> LogisticFit {
    LogisticFit {
        map,
        rmse: (cost / n as f64).sqrt(),
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_logistic() {
        let truth_map = Logistic4 {
            eta: [100.0, 0.0, 0.0, 1.0],
        };
        let pred: Vec<f64> = (0..60).map(|i| -6.0 + i as f64 * 0.2).collect();
        let truth: Vec<f64> = pred.iter().map(|&f| truth_map.eval(f)).collect();
        let fit = fit_logistic(&pred, &truth).unwrap();
        assert!(fit.rmse < 1e-6, "rmse {}", fit.rmse);
        assert!(fit.map.is_increasing());
    }

    #[test]
    fn recovers_shifted_logistic() {
        let truth_map = Logistic4 {
            eta: [80.0, 10.0, 2.5, 0.7],
        };
        let pred: Vec<f64> = (0..40).map(|i| i as f64 * 0.13).collect();
        let truth: Vec<f64> = pred.iter().map(|&f| truth_map.eval(f)).collect();
        let fit = fit_logistic(&pred, &truth).unwrap();
        assert!(fit.rmse < 1e-6);
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(matches!(
            fit_logistic(&[1.0; 12], &(0..12).map(f64::from).collect::<Vec<_>>()),
            Err(Error::Degenerate(_))
        ));
        assert!(fit_logistic(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(fit_logistic(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let map = Logistic4 {
            eta: [70.0, 5.0, 0.3, -1.4],
        };
        let h = 1e-6;
        for &f in &[-2.0, 0.0, 0.5, 3.0] {
            let (_, j) = map.eval_with_jacobian(f);
            for a in 0..4 {
                let mut up = map;
                let mut dn = map;
                up.eta[a] += h;
                dn.eta[a] -= h;
                let fd = (up.eval(f) - dn.eval(f)) / (2.0 * h);
                assert!((fd - j[a]).abs() < 1e-5 * fd.abs().max(1.0));
            }
        }
    }
}
