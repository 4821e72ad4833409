//! Central finite-difference oracle. Knows nothing about the analytic
//! backward passes; it only evaluates losses at perturbed parameters.

#![allow(dead_code)]

pub const STEP: f64 = 1e-5;
/// Denominator floor so entries that are zero up to rounding compare on an
/// absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Outcome {
    pub max_rel: f64,
    pub checked: usize,
    /// Coordinates where the loss is not smooth inside the stencil.
    pub skipped: usize,
}

impl Outcome {
    pub fn merge(self, o: Outcome) -> Outcome {
        Outcome {
            max_rel: self.max_rel.max(o.max_rel),
            checked: self.checked + o.checked,
            skipped: self.skipped + o.skipped,
        }
    }
}

pub fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Compares `analytic[t][i]` with a central difference on coordinate `i` of
/// tensor `t`, over `coords`. A coordinate is skipped when the difference at
/// `STEP` and at `STEP / 2` disagree by more than `kink_tol` relative, which
/// signals a ReLU or hinge kink inside the stencil.
pub fn check_params<M: Clone>(
    model: &M,
    analytic: &[Vec<f64>],
    tensors_mut: for<'a> fn(&'a mut M) -> Vec<&'a mut [f64]>,
    loss: impl Fn(&M) -> f64,
    coords: &[(usize, usize)],
    kink_tol: f64,
) -> Outcome {
    let mut out = Outcome::default();
    let eval = |t: usize, i: usize, delta: f64| {
        let mut m = model.clone();
        tensors_mut(&mut m)[t][i] += delta;
        loss(&m)
    };
    for &(t, i) in coords {
        let fd = (eval(t, i, STEP) - eval(t, i, -STEP)) / (2.0 * STEP);
        let half = (eval(t, i, STEP / 2.0) - eval(t, i, -STEP / 2.0)) / STEP;
        if rel_err(fd, half) > kink_tol {
            out.skipped += 1;
            continue;
        }
        out.checked += 1;
        out.max_rel = out.max_rel.max(rel_err(analytic[t][i], fd));
    }
    out
}

/// Every coordinate of every tensor, or a deterministic stride sample when
/// there are more than `limit`.
pub fn coords(sizes: &[usize], limit: usize) -> Vec<(usize, usize)> {
    let total: usize = sizes.iter().sum();
    let stride = total.div_ceil(limit.max(1)).max(1);
    let mut out = Vec::new();
    let mut k = 0usize;
    for (t, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            if k % stride == 0 {
                out.push((t, i));
            }
            k += 1;
        }
    }
    out
}
