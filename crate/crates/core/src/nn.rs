//! Minimal dense/conv layers with explicit forward and backward passes.
//!
//! Layer math is f64 so analytic gradients agree with central finite
//! differences to near machine precision; the data path at the library
//! boundary stays f32.

use ndarray::{Array1, Array2, Array4, Axis};
use rand::Rng;

/// Fully connected layer `y = x W^T + b` with `w` stored `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    /// He-uniform initialization.
    pub fn init(out_dim: usize, in_dim: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / in_dim as f64).sqrt();
        let w = Array2::from_shape_simple_fn((out_dim, in_dim), || rng.gen_range(-limit..limit));
        Self { w, b: Array1::zeros(out_dim) }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    /// Given upstream `dy` and the cached input `x`, return `(dx, dw, db)`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let dx = dy.dot(&self.w);
        let dw = dy.t().dot(x);
        let db = dy.sum_axis(Axis(0));
        (dx, dw, db)
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Backward of relu: zero where the forward input was non-positive.
pub fn relu_backward(pre: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(pre, |d, &p| {
        if p <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

/// Valid-padding 2-D convolution, stride 1. Weights `(out_c, in_c, kh, kw)`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: Array4<f64>,
    pub b: Array1<f64>,
}

impl Conv2d {
    pub fn init(out_c: usize, in_c: usize, k: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_c * k * k;
        let limit = (6.0 / fan_in as f64).sqrt();
        let w = Array4::from_shape_simple_fn((out_c, in_c, k, k), || rng.gen_range(-limit..limit));
        Self { w, b: Array1::zeros(out_c) }
    }

    pub fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let (n, in_c, h, wd) = x.dim();
        let (out_c, _, kh, kw) = self.w.dim();
        let (oh, ow) = (h - kh + 1, wd - kw + 1);
        let mut y = Array4::zeros((n, out_c, oh, ow));
        for i in 0..n {
            for oc in 0..out_c {
                for r in 0..oh {
                    for c in 0..ow {
                        let mut acc = self.b[oc];
                        for ic in 0..in_c {
                            for kr in 0..kh {
                                for kc in 0..kw {
                                    acc += self.w[[oc, ic, kr, kc]] * x[[i, ic, r + kr, c + kc]];
                                }
                            }
                        }
                        y[[i, oc, r, c]] = acc;
                    }
                }
            }
        }
        y
    }

    pub fn backward(&self, x: &Array4<f64>, dy: &Array4<f64>) -> (Array4<f64>, Array4<f64>, Array1<f64>) {
        let (n, in_c, h, wd) = x.dim();
        let (out_c, _, kh, kw) = self.w.dim();
        let (oh, ow) = (h - kh + 1, wd - kw + 1);
        let mut dx = Array4::zeros((n, in_c, h, wd));
        let mut dw = Array4::zeros(self.w.raw_dim());
        let mut db = Array1::zeros(out_c);
        for i in 0..n {
            for oc in 0..out_c {
                for r in 0..oh {
                    for c in 0..ow {
                        let g = dy[[i, oc, r, c]];
                        if g == 0.0 {
                            continue;
                        }
                        db[oc] += g;
                        for ic in 0..in_c {
                            for kr in 0..kh {
                                for kc in 0..kw {
                                    dw[[oc, ic, kr, kc]] += g * x[[i, ic, r + kr, c + kc]];
                                    dx[[i, ic, r + kr, c + kc]] += g * self.w[[oc, ic, kr, kc]];
                                }
                            }
                        }
                    }
                }
            }
        }
        (dx, dw, db)
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// 2x2 max pooling, stride 2. Returns the pooled map and the argmax mask
/// needed by the backward pass.
pub fn maxpool2(x: &Array4<f64>) -> (Array4<f64>, Array4<u8>) {
    let (n, c, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Array4::zeros((n, c, oh, ow));
    let mut mask = Array4::zeros((n, c, oh, ow));
    for i in 0..n {
        for ch in 0..c {
            for r in 0..oh {
                for col in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut arg = 0u8;
                    for (k, (dr, dc)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
                        let v = x[[i, ch, 2 * r + dr, 2 * col + dc]];
                        if v > best {
                            best = v;
                            arg = k as u8;
                        }
                    }
                    y[[i, ch, r, col]] = best;
                    mask[[i, ch, r, col]] = arg;
                }
            }
        }
    }
    (y, mask)
}

pub fn maxpool2_backward(dy: &Array4<f64>, mask: &Array4<u8>, in_shape: (usize, usize, usize, usize)) -> Array4<f64> {
    let mut dx = Array4::zeros(in_shape);
    let (n, c, oh, ow) = dy.dim();
    let offsets = [(0, 0), (0, 1), (1, 0), (1, 1)];
    for i in 0..n {
        for ch in 0..c {
            for r in 0..oh {
                for col in 0..ow {
                    let (dr, dc) = offsets[mask[[i, ch, r, col]] as usize];
                    dx[[i, ch, 2 * r + dr, 2 * col + dc]] += dy[[i, ch, r, col]];
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::array;

    #[test]
    fn linear_forward_matches_hand_computation() {
        let l = Linear { w: array![[1.0, 2.0], [0.0, -1.0]], b: array![0.5, 0.0] };
        let y = l.forward(&array![[1.0, 1.0]]);
        assert_eq!(y, array![[3.5, -1.0]]);
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = stream(3, "lin");
        let l = Linear::init(3, 4, &mut rng);
        let x = Array2::from_shape_simple_fn((2, 4), || rng.gen_range(-1.0..1.0));
        // scalar objective: sum of outputs
        let dy = Array2::ones((2, 3));
        let (_, dw, db) = l.backward(&x, &dy);
        let eps = 1e-6;
        for idx in [(0, 0), (1, 2), (2, 3)] {
            let mut lp = l.clone();
            lp.w[idx] += eps;
            let mut lm = l.clone();
            lm.w[idx] -= eps;
            let fd = (lp.forward(&x).sum() - lm.forward(&x).sum()) / (2.0 * eps);
            assert!((fd - dw[idx]).abs() / fd.abs().max(1.0) < 1e-7, "dw {idx:?}: {fd} vs {}", dw[idx]);
        }
        assert!((db[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn conv_and_pool_gradients_match_finite_differences() {
        let mut rng = stream(5, "conv");
        let conv = Conv2d::init(2, 1, 3, &mut rng);
        let x = Array4::from_shape_simple_fn((1, 1, 6, 6), || rng.gen_range(-1.0..1.0));
        let objective = |c: &Conv2d, x: &Array4<f64>| -> f64 {
            let (y, _) = maxpool2(&c.forward(x));
            y.sum()
        };
        let y = conv.forward(&x);
        let (pooled, mask) = maxpool2(&y);
        let dy_pool = Array4::ones(pooled.raw_dim());
        let dy = maxpool2_backward(&dy_pool, &mask, y.dim());
        let (dx, dw, _) = conv.backward(&x, &dy);

        let eps = 1e-6;
        for idx in [(0, 0, 0, 0), (1, 0, 2, 1)] {
            let mut cp = conv.clone();
            cp.w[idx] += eps;
            let mut cm = conv.clone();
            cm.w[idx] -= eps;
            let fd = (objective(&cp, &x) - objective(&cm, &x)) / (2.0 * eps);
            assert!((fd - dw[idx]).abs() / fd.abs().max(1.0) < 1e-6, "dw {idx:?}: {fd} vs {}", dw[idx]);
        }
        for idx in [(0, 0, 1, 1), (0, 0, 4, 3)] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (objective(&conv, &xp) - objective(&conv, &xm)) / (2.0 * eps);
            assert!((fd - dx[idx]).abs() / fd.abs().max(1.0) < 1e-6, "dx {idx:?}: {fd} vs {}", dx[idx]);
        }
    }
}
