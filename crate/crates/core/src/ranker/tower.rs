use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::{normalize_rows, normalize_rows_backward, relu, relu_backward, Linear, NnError};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-feature affine layer normalization over each row.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl LayerNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
        }
    }

    fn zeros(width: usize) -> Self {
        Self {
            gamma: Array1::zeros(width),
            beta: Array1::zeros(width),
        }
    }

    /// Returns `(output, x̂, 1/σ)`.
    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let n = x.ncols() as f64;
        let mean = x.mean_axis(Axis(1)).expect("non-empty rows");
        let centered = x - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / n;
        let inv = var.mapv(|v| 1.0 / (v + LAYER_NORM_EPS).sqrt());
        let xhat = &centered * &inv.view().insert_axis(Axis(1));
        let y = &xhat * &self.gamma + &self.beta;
        (y, xhat, inv)
    }

    /// `∂L/∂x = (1/σ)/n · (n·g − Σg − x̂ Σ(g·x̂))` with `g = dy·γ`.
    pub fn backward(&self, xhat: &Array2<f64>, inv: &Array1<f64>, dy: &Array2<f64>, grad: &mut LayerNorm) -> Array2<f64> {
        grad.gamma += &(dy * xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let n = xhat.ncols() as f64;
        let g = dy * &self.gamma;
        let sum_g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
        let sum_gx = (&g * xhat).sum_axis(Axis(1)).insert_axis(Axis(1));
        let mut dx = &g * n - &sum_g - &(xhat * &sum_gx);
        dx *= &(inv / n).insert_axis(Axis(1));
        dx
    }
}

/// Hidden blocks of linear → ReLU → LayerNorm → dropout, then a final linear
/// projection and L2 normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Tower {
    pub hidden: Vec<Linear>,
    pub norms: Vec<LayerNorm>,
    pub out: Linear,
}

pub(crate) struct TowerCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    xhat: Vec<Array2<f64>>,
    inv: Vec<Array1<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    out_input: Array2<f64>,
    pub output: Array2<f64>,
    out_norms: Array1<f64>,
}

impl TowerCache {
    pub(crate) fn min_kink_distance(&self) -> f64 {
        self.pre.iter().flat_map(|p| p.iter()).fold(f64::INFINITY, |m, &v| m.min(v.abs()))
    }
}

impl Tower {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: &[usize], output: usize, rng: &mut R) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        let layers: Vec<Linear> = dims.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        let norms = hidden.iter().map(|&h| LayerNorm::new(h)).collect();
        let out = Linear::init(*dims.last().expect("non-empty"), output, rng);
        Self {
            hidden: layers,
            norms,
            out,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hidden: self.hidden.iter().map(|l| Linear::zeros(l.input_dim(), l.output_dim())).collect(),
            norms: self.norms.iter().map(|n| LayerNorm::zeros(n.gamma.len())).collect(),
            out: Linear::zeros(self.out.input_dim(), self.out.output_dim()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.first().unwrap_or(&self.out).input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.out.output_dim()
    }

    pub(crate) fn forward_cached(
        &self,
        x: ArrayView2<f64>,
        mode: Mode,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<TowerCache, NnError> {
        let k = self.hidden.len();
        let mut c = TowerCache {
            inputs: Vec::with_capacity(k),
            pre: Vec::with_capacity(k),
            xhat: Vec::with_capacity(k),
            inv: Vec::with_capacity(k),
            masks: Vec::with_capacity(k),
            out_input: Array2::zeros((0, 0)),
            output: Array2::zeros((0, 0)),
            out_norms: Array1::zeros(0),
        };
        let mut h = x.to_owned();
        for (layer, ln) in self.hidden.iter().zip(&self.norms) {
            let z = layer.forward(h.view())?;
            let (y, xhat, inv) = ln.forward(&relu(&z));
            let mask = (mode == Mode::Train && dropout > 0.0).then(|| {
                let keep = 1.0 - dropout;
                Array2::from_shape_fn(y.dim(), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            });
            c.inputs.push(std::mem::replace(&mut h, y));
            if let Some(m) = &mask {
                h *= m;
            }
            c.pre.push(z);
            c.xhat.push(xhat);
            c.inv.push(inv);
            c.masks.push(mask);
        }
        let z = self.out.forward(h.view())?;
        let (output, norms) = normalize_rows(&z)?;
        c.out_input = h;
        c.output = output;
        c.out_norms = norms;
        Ok(c)
    }

    pub(crate) fn backward(&self, c: &TowerCache, d_out: &Array2<f64>, grad: &mut Tower) -> Array2<f64> {
        let dz = normalize_rows_backward(&c.output, &c.out_norms, d_out);
        let mut d = self.out.backward(c.out_input.view(), dz.view(), &mut grad.out);
        for i in (0..self.hidden.len()).rev() {
            if let Some(m) = &c.masks[i] {
                d *= m;
            }
            d = self.norms[i].backward(&c.xhat[i], &c.inv[i], &d, &mut grad.norms[i]);
            d = relu_backward(&c.pre[i], &d);
            d = self.hidden[i].backward(c.inputs[i].view(), d.view(), &mut grad.hidden[i]);
        }
        d
    }

    pub fn forward(&self, x: ArrayView2<f64>, mode: Mode, dropout: f64, seed: u64) -> Result<Array2<f64>, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(self.forward_cached(x, mode, dropout, &mut rng)?.output)
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut t = Vec::new();
        for (l, n) in self.hidden.iter().zip(&self.norms) {
            t.extend(l.tensors());
            t.push(n.gamma.as_slice().expect("contiguous"));
            t.push(n.beta.as_slice().expect("contiguous"));
        }
        t.extend(self.out.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = Vec::new();
        for (l, n) in self.hidden.iter_mut().zip(self.norms.iter_mut()) {
            t.extend(l.tensors_mut());
            t.push(n.gamma.as_slice_mut().expect("contiguous"));
            t.push(n.beta.as_slice_mut().expect("contiguous"));
        }
        t.extend(self.out.tensors_mut());
        t
    }
}
