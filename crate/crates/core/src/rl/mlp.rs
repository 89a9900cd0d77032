//! Small dense network with tanh hidden layers and a linear output, with
//! batch forward/backward passes.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Inputs of every layer, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
}

impl Mlp {
    /// Uniform `±1/√fan_in` initialization; the output layer is additionally
    /// scaled by `out_gain` (small for a policy head).
    pub fn new<R: Rng>(sizes: &[usize], out_gain: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
                let bound = 1.0 / (fan_in as f64).sqrt() * if i + 1 == n { out_gain } else { 1.0 };
                let w = Array2::from_shape_fn((fan_out, fan_in), |_| {
                    if bound > 0.0 {
                        rng.random_range(-bound..bound)
                    } else {
                        0.0
                    }
                });
                Layer {
                    w,
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: Array1::zeros(l.b.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].w.ncols()];
        s.extend(self.layers.iter().map(|l| l.w.nrows()));
        s
    }

    /// Every layer's input width matches the previous output width.
    pub fn is_consistent(&self) -> bool {
        !self.layers.is_empty()
            && self.layers.iter().all(|l| l.b.len() == l.w.nrows())
            && self.layers.windows(2).all(|p| p[0].w.nrows() == p[1].w.ncols())
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().all(|v| v.is_finite()) && l.b.iter().all(|v| v.is_finite()))
    }

    /// Forward pass for a batch (`N × in`).
    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = h.dot(&l.w.t());
            z += &l.b;
            inputs.push(h);
            h = if i == last { z } else { z.mapv_into(f64::tanh) };
        }
        (h, MlpCache { inputs })
    }

    /// Single-sample forward pass without a cache.
    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z: Vec<f64> = l.b.to_vec();
            for (r, zr) in z.iter_mut().enumerate() {
                let row = l.w.row(r);
                *zr += row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
            }
            if i != last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            h = z;
        }
        h
    }

    /// Gradients of `Σ grad_out ⊙ output` with respect to every parameter.
    pub fn backward(&self, cache: &MlpCache, grad_out: ArrayView2<f64>) -> Mlp {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.to_owned();
        for i in (0..self.layers.len()).rev() {
            let input = &cache.inputs[i];
            let gw = g.t().dot(input);
            let gb = g.sum_axis(Axis(0));
            if i > 0 {
                let gh = g.dot(&self.layers[i].w);
                // Input of layer i is tanh output of layer i-1.
                g = gh * &input.mapv(|h| 1.0 - h * h);
            }
            grads.push(Layer { w: gw, b: gb });
        }
        grads.reverse();
        Mlp { layers: grads }
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
    }

    /// Reads parameters back from `src`, returning the number consumed.
    pub fn assign_from(&mut self, src: &[f64]) -> usize {
        let mut k = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut() {
                *v = src[k];
                k += 1;
            }
            for v in l.b.iter_mut() {
                *v = src[k];
                k += 1;
            }
        }
        k
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[3, 5, 4, 2], 1.0, &mut rng);
        let x = array![[0.1, -0.3, 0.7], [0.5, 0.2, -0.1]];
        let weights = array![[0.3, -1.0], [2.0, 0.5]];
        let loss = |n: &Mlp| (n.forward(x.view()).0 * &weights).sum();
        let (_, cache) = net.forward(x.view());
        let g = net.backward(&cache, weights.view());
        let mut flat = Vec::new();
        net.flatten_into(&mut flat);
        let mut gflat = Vec::new();
        g.flatten_into(&mut gflat);
        for k in 0..flat.len() {
            let mut p = net.clone();
            let h = 1e-6;
            let mut v = flat.clone();
            v[k] += h;
            p.assign_from(&v);
            let up = loss(&p);
            v[k] -= 2.0 * h;
            p.assign_from(&v);
            let dn = loss(&p);
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - gflat[k]).abs() < 1e-7 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", gflat[k]);
        }
    }

    #[test]
    fn single_and_batch_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[4, 8, 3], 0.5, &mut rng);
        let x = array![[0.1, 0.2, -0.3, 0.4]];
        let a = net.forward(x.view()).0;
        let b = net.forward_one(&[0.1, 0.2, -0.3, 0.4]);
        for i in 0..3 {
            assert!((a[[0, i]] - b[i]).abs() < 1e-14);
        }
        assert_eq!(net.n_params(), 4 * 8 + 8 + 8 * 3 + 3);
        assert_eq!(net.sizes(), vec![4, 8, 3]);
    }
}
