//! Positive RBF precision networks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Entries of `W` never drop below this.
pub const PRECISION_WEIGHT_FLOOR: f64 = 1e-8;

/// Default floor `zeta` added to the precision.
pub const DEFAULT_ZETA: f64 = 1e-6;

/// `beta(z) = W phi(z)` with `phi_k(z) = exp(-gamma_k/2 |z - c_k|^2)` and a
/// `D x K` weight matrix with positive entries. The variance is
/// `sigma^2 = 1/(beta + zeta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositiveRbf {
    pub centers: Vec<DVector<f64>>,
    pub gamma: Vec<f64>,
    pub weights: DMatrix<f64>,
    pub zeta: f64,
}

/// `sigma`, its Jacobian and the derivatives of that Jacobian.
pub struct SigmaTrace {
    pub sigma: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub hessian: Vec<DMatrix<f64>>,
}

impl PositiveRbf {
    /// Weights below the floor are clipped up to it.
    pub fn new(centers: Vec<DVector<f64>>, gamma: Vec<f64>, weights: DMatrix<f64>, zeta: f64) -> Result<Self> {
        let k = centers.len();
        if k == 0 {
            return Err(Error::config("a precision network needs at least one center"));
        }
        let d = centers[0].len();
        if centers.iter().any(|c| c.len() != d) {
            return Err(Error::config("precision centers have mixed dimensions"));
        }
        if gamma.len() != k || weights.ncols() != k {
            return Err(Error::config(format!(
                "precision network has {k} centers but {} bandwidths and {} weight columns",
                gamma.len(),
                weights.ncols()
            )));
        }
        if gamma.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(Error::config("precision bandwidths must be positive and finite"));
        }
        if !(zeta > 0.0 && zeta.is_finite()) {
            return Err(Error::config("zeta must be positive"));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::config("precision weights must be finite"));
        }
        let weights = weights.map(|w| w.max(PRECISION_WEIGHT_FLOOR));
        Ok(PositiveRbf {
            centers,
            gamma,
            weights,
            zeta,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_centers(&self) -> usize {
        self.centers.len()
    }

    pub fn phi(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.centers.len(),
            self.centers
                .iter()
                .zip(&self.gamma)
                .map(|(c, g)| (-0.5 * g * (z - c).norm_squared()).exp()),
        )
    }

    pub fn beta(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.weights * self.phi(z)
    }

    pub fn variance(&self, z: &DVector<f64>) -> DVector<f64> {
        self.beta(z).map(|b| 1.0 / (b + self.zeta))
    }

    pub fn sigma(&self, z: &DVector<f64>) -> DVector<f64> {
        self.beta(z).map(|b| (b + self.zeta).powf(-0.5))
    }

    pub fn jacobian_sigma(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let (beta, jb) = self.beta_jacobian(z);
        let mut j = jb;
        for i in 0..j.nrows() {
            let s = beta[i] + self.zeta;
            j.row_mut(i).scale_mut(-0.5 * s.powf(-1.5));
        }
        j
    }

    fn beta_jacobian(&self, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let phi = self.phi(z);
        let d = z.len();
        let k = self.centers.len();
        let mut gphi = DMatrix::zeros(k, d);
        for j in 0..k {
            let diff = z - &self.centers[j];
            gphi.row_mut(j).copy_from(&(diff.transpose() * (-self.gamma[j] * phi[j])));
        }
        (&self.weights * &phi, &self.weights * gphi)
    }

    pub fn trace(&self, z: &DVector<f64>) -> SigmaTrace {
        let d = z.len();
        let k = self.centers.len();
        let dout = self.output_dim();
        let phi = self.phi(z);
        let diffs: Vec<DVector<f64>> = self.centers.iter().map(|c| z - c).collect();
        let mut gphi = DMatrix::zeros(k, d);
        for j in 0..k {
            gphi.row_mut(j).copy_from(&(diffs[j].transpose() * (-self.gamma[j] * phi[j])));
        }
        let beta = &self.weights * &phi;
        let jb = &self.weights * &gphi;
        let s = beta.map(|b| b + self.zeta);
        let sigma = s.map(|v| v.powf(-0.5));
        let mut jac = jb.clone();
        for i in 0..dout {
            jac.row_mut(i).scale_mut(-0.5 * s[i].powf(-1.5));
        }
        let mut hessian = Vec::with_capacity(d);
        for l in 0..d {
            // d^2 phi_k / dz_l dz_m = phi_k (gamma^2 r_l r_m - gamma delta_lm)
            let hphi = DMatrix::from_fn(k, d, |j, m| {
                let g = self.gamma[j];
                let delta = if l == m { g } else { 0.0 };
                phi[j] * (g * g * diffs[j][l] * diffs[j][m] - delta)
            });
            let hb = &self.weights * hphi;
            let h = DMatrix::from_fn(dout, d, |i, m| {
                0.75 * s[i].powf(-2.5) * jb[(i, l)] * jb[(i, m)] - 0.5 * s[i].powf(-1.5) * hb[(i, m)]
            });
            hessian.push(h);
        }
        SigmaTrace {
            sigma,
            jacobian: jac,
            hessian,
        }
    }
}
