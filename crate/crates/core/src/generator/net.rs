//! Smooth multilayer perceptrons with exact forward-mode derivatives.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Softplus,
    Linear,
}

impl Activation {
    /// Value, first and second derivative at `a`.
    #[inline]
    pub fn eval3(self, a: f64) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let t = a.tanh();
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
            Activation::Softplus => {
                let v = if a > 30.0 { a + (-a).exp() } else { a.exp().ln_1p() };
                let s = if a >= 0.0 {
                    1.0 / (1.0 + (-a).exp())
                } else {
                    let e = a.exp();
                    e / (1.0 + e)
                };
                (v, s, s * (1.0 - s))
            }
            Activation::Linear => (a, 1.0, 0.0),
        }
    }

    #[inline]
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => a.tanh(),
            Activation::Softplus => {
                if a > 30.0 {
                    a + (-a).exp()
                } else {
                    a.exp().ln_1p()
                }
            }
            Activation::Linear => a,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub act: Activation,
}

/// `f(z) = W_L s(... s(W_1 z + b_1) ...) + b_L` with `s` in {tanh, softplus}
/// on the hidden layers and a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardNet {
    pub layers: Vec<Layer>,
}

/// Per-layer quantities kept for derivative propagation.
pub struct ForwardTrace {
    pub value: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    /// `dJ/dz_l` for every input coordinate `l`.
    pub hessian: Vec<DMatrix<f64>>,
}

impl FeedforwardNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("a network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.b.len() != l.w.nrows() {
                return Err(Error::config(format!("layer {i}: bias length does not match weight rows")));
            }
            if i > 0 && l.w.ncols() != layers[i - 1].w.nrows() {
                return Err(Error::config(format!("layer {i}: input width does not match previous layer")));
            }
        }
        if layers.last().map(|l| l.act) != Some(Activation::Linear) {
            return Err(Error::config("the output layer must be linear"));
        }
        if layers[..layers.len() - 1].iter().any(|l| l.act == Activation::Linear) {
            return Err(Error::config("hidden layers must use tanh or softplus"));
        }
        Ok(FeedforwardNet { layers })
    }

    /// Xavier-uniform weights and zero biases; `sizes = [d, h_1, ..., D]`.
    pub fn random(sizes: &[usize], act: Activation, seed: u64) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::config("layer sizes need an input and an output"));
        }
        if act == Activation::Linear {
            return Err(Error::config("hidden activation must be tanh or softplus"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        for i in 0..sizes.len() - 1 {
            let (nin, nout) = (sizes[i], sizes[i + 1]);
            let r = (6.0 / (nin + nout) as f64).sqrt();
            let w = DMatrix::from_fn(nout, nin, |_, _| rng.random_range(-r..=r));
            let a = if i + 2 == sizes.len() { Activation::Linear } else { act };
            layers.push(Layer {
                w,
                b: DVector::zeros(nout),
                act: a,
            });
        }
        FeedforwardNet::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.nrows())
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.w.nrows()));
        s
    }

    /// Widths never shrink from input to output, the usual sufficient shape
    /// for an immersion.
    pub fn widths_nondecreasing(&self) -> bool {
        self.sizes().windows(2).all(|w| w[0] <= w[1])
    }

    pub fn forward(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut h = z.clone();
        for l in &self.layers {
            let a = &l.w * &h + &l.b;
            h = a.map(|v| l.act.apply(v));
        }
        h
    }

    /// Forward pass on a batch, one point per row.
    pub fn forward_batch(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = z.transpose();
        for l in &self.layers {
            let mut a = &l.w * &h;
            for mut col in a.column_iter_mut() {
                col += &l.b;
            }
            h = a.map(|v| l.act.apply(v));
        }
        h.transpose()
    }

    pub fn jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let mut h = z.clone();
        let mut j = DMatrix::identity(z.len(), z.len());
        for l in &self.layers {
            let a = &l.w * &h + &l.b;
            let ja = &l.w * &j;
            let mut jh = ja;
            let mut hn = DVector::zeros(a.len());
            for i in 0..a.len() {
                let (v, d1, _) = l.act.eval3(a[i]);
                hn[i] = v;
                jh.row_mut(i).scale_mut(d1);
            }
            h = hn;
            j = jh;
        }
        j
    }

    /// Value, Jacobian and all second derivatives in one forward sweep.
    pub fn trace(&self, z: &DVector<f64>) -> ForwardTrace {
        let d = z.len();
        let mut h = z.clone();
        let mut j = DMatrix::identity(d, d);
        let mut hs: Vec<DMatrix<f64>> = vec![DMatrix::zeros(d, d); d];
        for l in &self.layers {
            let a = &l.w * &h + &l.b;
            let ja = &l.w * &j;
            let ha: Vec<DMatrix<f64>> = hs.iter().map(|m| &l.w * m).collect();
            let n = a.len();
            let mut hn = DVector::zeros(n);
            let mut jn = ja.clone();
            let mut hsn = ha;
            for i in 0..n {
                let (v, d1, d2) = l.act.eval3(a[i]);
                hn[i] = v;
                jn.row_mut(i).scale_mut(d1);
                for (lidx, hm) in hsn.iter_mut().enumerate() {
                    let sl = ja[(i, lidx)];
                    for m in 0..d {
                        hm[(i, m)] = d2 * sl * ja[(i, m)] + d1 * hm[(i, m)];
                    }
                }
            }
            h = hn;
            j = jn;
            hs = hsn;
        }
        ForwardTrace {
            value: h,
            jacobian: j,
            hessian: hs,
        }
    }
}
