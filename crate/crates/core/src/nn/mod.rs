//! Minimal dense layers with hand-written backward passes, shared by the
//! contrastive encoders and the ranking towers. Everything runs in f64;
//! checkpoints store f32.

pub mod checkpoint;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("input has {actual} columns, layer expects {expected}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("row {row} has zero norm before normalization")]
    ZeroNorm { row: usize },
    #[error("non-finite activation")]
    NonFinite,
}

/// Fully connected layer computing `x · Wᵀ + b` for row-major batches.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out × in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// He-normal weights, zero bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let std = (2.0 / input as f64).sqrt();
        let weight = Array2::from_shape_fn((output, input), |_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        });
        Self {
            weight,
            bias: Array1::zeros(output),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        if x.ncols() != self.input_dim() {
            return Err(NnError::DimMismatch {
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        Ok(x.dot(&self.weight.t()) + &self.bias)
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    pub fn backward(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &dy.t().dot(&x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }

    pub fn tensors(&self) -> [&[f64]; 2] {
        [
            self.weight.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 2] {
        [
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Masks `dy` by the positive entries of the pre-activation.
pub fn relu_backward(pre: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut out = dy.clone();
    out.zip_mut_with(pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
    out
}

/// Row-wise L2 normalization; returns the unit rows and the original norms.
pub fn normalize_rows(z: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>), NnError> {
    let norms = z.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    for (row, &n) in norms.iter().enumerate() {
        if !n.is_finite() {
            return Err(NnError::NonFinite);
        }
        if n == 0.0 {
            return Err(NnError::ZeroNorm { row });
        }
    }
    let y = z / &norms.view().insert_axis(Axis(1));
    Ok((y, norms))
}

/// Backward of `y = z / ‖z‖`: `∂L/∂z = (dy − y (y·dy)) / ‖z‖`.
pub fn normalize_rows_backward(y: &Array2<f64>, norms: &Array1<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let proj = (y * dy).sum_axis(Axis(1));
    let mut dz = dy - &(y * &proj.view().insert_axis(Axis(1)));
    dz /= &norms.view().insert_axis(Axis(1));
    dz
}

/// Stack of [`Linear`] layers with ReLU between them and L2-normalized output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Intermediate values kept by [`Mlp::forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
    norms: Array1<f64>,
}

impl Mlp {
    /// `dims = [input, hidden..., output]`.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output dims");
        Self {
            layers: dims.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(Linear::output_dim));
        d
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.forward_cached(x).map(|c| c.output)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<MlpCache, NnError> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(h.view())?;
            inputs.push(h);
            if i == last {
                h = z;
            } else {
                h = relu(&z);
                pre.push(z);
            }
        }
        let (output, norms) = normalize_rows(&h)?;
        Ok(MlpCache {
            inputs,
            pre,
            output,
            norms,
        })
    }

    /// Accumulates into `grad` and returns `∂L/∂x` given `∂L/∂output`.
    pub fn backward(&self, cache: &MlpCache, d_out: &Array2<f64>, grad: &mut Mlp) -> Array2<f64> {
        let mut d = normalize_rows_backward(&cache.output, &cache.norms, d_out);
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 {
                d = relu_backward(&cache.pre[i], &d);
            }
            d = self.layers[i].backward(cache.inputs[i].view(), d.view(), &mut grad.layers[i]);
        }
        d
    }

    /// Smallest |pre-activation| over all hidden units; distance to a ReLU kink.
    pub fn min_kink_distance(cache: &MlpCache) -> f64 {
        cache
            .pre
            .iter()
            .flat_map(|p| p.iter())
            .fold(f64::INFINITY, |m, &v| m.min(v.abs()))
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(Linear::tensors).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(Linear::tensors_mut).collect()
    }
}

/// `param -= lr * grad` over matching tensor lists.
pub fn sgd_step(params: Vec<&mut [f64]>, grads: Vec<&[f64]>, lr: f64) {
    assert_eq!(params.len(), grads.len());
    for (p, g) in params.into_iter().zip(grads) {
        for (pv, gv) in p.iter_mut().zip(g) {
            *pv -= lr * gv;
        }
    }
}

pub fn l2_norm_of(tensors: &[&[f64]]) -> f64 {
    tensors
        .iter()
        .flat_map(|t| t.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::seed::rng;
    use ndarray::array;

    #[test]
    fn normalize_backward_matches_finite_differences() {
        let z = array![[0.3, -1.2, 0.5], [2.0, 0.1, -0.4]];
        let w = array![[0.7, -0.2, 1.1], [-0.5, 0.9, 0.3]];
        let f = |z: &Array2<f64>| (normalize_rows(z).unwrap().0 * &w).sum();
        let (y, n) = normalize_rows(&z).unwrap();
        let g = normalize_rows_backward(&y, &n, &w);
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut zp = z.clone();
                zp[[i, j]] += h;
                let mut zm = z.clone();
                zm[[i, j]] -= h;
                let fd = (f(&zp) - f(&zm)) / (2.0 * h);
                assert!((fd - g[[i, j]]).abs() < 1e-8, "{fd} vs {}", g[[i, j]]);
            }
        }
    }

    #[test]
    fn mlp_output_is_unit_norm() {
        let mut r = rng(3);
        let mlp = Mlp::init(&[5, 7, 4], &mut r);
        let x = Array2::from_shape_fn((3, 5), |(i, j)| (i as f64 - j as f64) * 0.3 + 0.1);
        let y = mlp.forward(x.view()).unwrap();
        for row in y.rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mlp_rejects_wrong_width() {
        let mlp = Mlp::init(&[5, 4], &mut rng(0));
        assert_eq!(
            mlp.forward(Array2::zeros((1, 6)).view()),
            Err(NnError::DimMismatch { expected: 5, actual: 6 })
        );
    }
}
