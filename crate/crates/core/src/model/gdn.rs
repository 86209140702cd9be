//! Generalized divisive normalization.
//!
//! Each response is divided by the square root of a learned bias plus a
//! weighted sum of squared responses across channels:
//!
//! ```text
//! v_i = u_i / sqrt(omega_i + sum_j gamma_ij * u_j^2)
//! ```
//!
//! `omega` and `gamma` are kept at or above [`GDN_FLOOR`] and `gamma` is kept
//! symmetric. [`GdnLayer::project`] restores both after an unconstrained
//! optimizer update.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Lower bound applied to every `omega` and `gamma` entry (2^-10).
pub const GDN_FLOOR: f64 = 1.0 / 1024.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdnLayer {
    pub channels: usize,
    pub omega: Vec<f64>,
    /// Row-major `channels x channels`.
    pub gamma: Vec<f64>,
}

/// Gradients of a scalar objective with respect to a GDN layer's input and
/// parameters. `gamma` is already symmetrized: off-diagonal entries hold
/// `d/dgamma_ij + d/dgamma_ji`.
#[derive(Clone, Debug, PartialEq)]
pub struct GdnGrad {
    pub input: Vec<f64>,
    pub omega: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl GdnLayer {
    /// Builds a layer and checks its invariants.
    pub fn new(omega: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        let layer = Self {
            channels: omega.len(),
            omega,
            gamma,
        };
        layer.validate()?;
        Ok(layer)
    }

    /// `omega = 1`, `gamma = floor * I` lifted to the floor off-diagonal.
    pub fn identity_like(channels: usize) -> Self {
        let mut gamma = vec![GDN_FLOOR; channels * channels];
        for i in 0..channels {
            gamma[i * channels + i] = 2.0 * GDN_FLOOR;
        }
        Self {
            channels,
            omega: vec![1.0; channels],
            gamma,
        }
    }

    pub fn gamma_at(&self, i: usize, j: usize) -> f64 {
        self.gamma[i * self.channels + j]
    }

    pub fn num_params(&self) -> usize {
        self.channels + self.channels * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        check_dim("gdn omega", c, self.omega.len())?;
        check_dim("gdn gamma", c * c, self.gamma.len())?;
        for (i, &w) in self.omega.iter().enumerate() {
            if !w.is_finite() {
                return Err(Error::NonFinite("gdn omega"));
            }
            if w < GDN_FLOOR {
                return Err(Error::InvalidArgument(format!(
                    "gdn omega[{i}] = {w} below floor"
                )));
            }
        }
        for i in 0..c {
            for j in 0..c {
                let g = self.gamma_at(i, j);
                if !g.is_finite() {
                    return Err(Error::NonFinite("gdn gamma"));
                }
                if g < GDN_FLOOR {
                    return Err(Error::InvalidArgument(format!(
                        "gdn gamma[{i}][{j}] = {g} below floor"
                    )));
                }
                if g != self.gamma_at(j, i) {
                    return Err(Error::InvalidArgument(format!(
                        "gdn gamma not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Symmetrizes `gamma` by averaging with its transpose, then clamps
    /// `omega` and `gamma` to the floor. Idempotent.
    pub fn project(&mut self) {
        let c = self.channels;
        for i in 0..c {
            for j in (i + 1)..c {
                let avg = 0.5 * (self.gamma[i * c + j] + self.gamma[j * c + i]);
                self.gamma[i * c + j] = avg;
                self.gamma[j * c + i] = avg;
            }
        }
        for w in self.omega.iter_mut().chain(self.gamma.iter_mut()) {
            // max() also maps NaN to the floor.
            *w = w.max(GDN_FLOOR);
        }
    }

    fn denominators(&self, u: &[f64]) -> Vec<f64> {
        let c = self.channels;
        (0..c)
            .map(|i| {
                let row = &self.gamma[i * c..(i + 1) * c];
                self.omega[i] + row.iter().zip(u).map(|(g, x)| g * x * x).sum::<f64>()
            })
            .collect()
    }

    pub fn forward(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_dim("gdn input", self.channels, u.len())?;
        Ok(self
            .denominators(u)
            .iter()
            .zip(u)
            .map(|(d, x)| x / d.sqrt())
            .collect())
    }

    pub fn backward(&self, u: &[f64], grad_v: &[f64]) -> Result<GdnGrad> {
        let c = self.channels;
        check_dim("gdn input", c, u.len())?;
        check_dim("gdn output gradient", c, grad_v.len())?;
        let denom = self.denominators(u);

        // a_i = dL/domega_i = -1/2 * g_i * u_i * D_i^(-3/2)
        let a: Vec<f64> = (0..c)
            .map(|i| -0.5 * grad_v[i] * u[i] / (denom[i] * denom[i].sqrt()))
            .collect();

        let mut input = vec![0.0; c];
        for k in 0..c {
            let direct = grad_v[k] / denom[k].sqrt();
            let pooled: f64 = (0..c).map(|i| a[i] * self.gamma_at(i, k)).sum();
            input[k] = direct + 2.0 * u[k] * pooled;
        }

        let mut gamma = vec![0.0; c * c];
        for i in 0..c {
            gamma[i * c + i] = a[i] * u[i] * u[i];
            for j in (i + 1)..c {
                let g = a[i] * u[j] * u[j] + a[j] * u[i] * u[i];
                gamma[i * c + j] = g;
                gamma[j * c + i] = g;
            }
        }

        Ok(GdnGrad {
            input,
            omega: a,
            gamma,
        })
    }
}
