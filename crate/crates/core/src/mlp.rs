//! Fixed-architecture feed-forward network with a hand-written reverse pass.
//!
//! Parameters are a flat slice, layer-major: each layer's weight matrix
//! (`out × in`, row-major) followed by its bias vector.

use rand::Rng;

use crate::dual::Real;
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's own output.
    #[inline]
    fn slope<T: Real>(self, a: T) -> T {
        match self {
            Activation::Tanh => T::cst(1.0) - a * a,
            Activation::Identity => T::cst(1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        self.out_dim * self.in_dim + self.out_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<LayerSpec>,
    offsets: Vec<usize>,
    n_params: usize,
}

/// Activations recorded by [`Mlp::forward`]; entry 0 is the network input.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    acts: Vec<Vec<T>>,
}

impl<T: Real> Tape<T> {
    pub fn output(&self) -> &[T] {
        self.acts.last().expect("tape holds at least the input")
    }
}

impl Mlp {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidModel("network has no layers".into()));
        }
        let mut offsets = Vec::with_capacity(layers.len());
        let mut n = 0;
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(Error::InvalidModel(format!("layer {i} has a zero dimension")));
            }
            if i > 0 && layers[i - 1].out_dim != l.in_dim {
                return Err(Error::LayerMismatch {
                    layer: i,
                    expected: layers[i - 1].out_dim,
                    got: l.in_dim,
                });
            }
            offsets.push(n);
            n += l.param_count();
        }
        Ok(Self {
            layers,
            offsets,
            n_params: n,
        })
    }

    /// Builds a network from layer widths, `tanh` on every layer but the last.
    pub fn from_widths(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidModel(
                "need at least an input and an output width".into(),
            ));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerSpec {
                in_dim: w[0],
                out_dim: w[1],
                activation: if i == last {
                    Activation::Identity
                } else {
                    Activation::Tanh
                },
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.n_params
    }

    /// Uniform in `±1/√in_dim` per layer, weights and biases alike.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params);
        for l in &self.layers {
            let bound = 1.0 / (l.in_dim as f64).sqrt();
            for _ in 0..l.param_count() {
                p.push(rng.random_range(-bound..=bound));
            }
        }
        p
    }

    pub fn check_params(&self, params: &[f64]) -> Result<()> {
        check_len("network parameters", self.n_params, params.len())
    }

    pub fn forward<T: Real>(&self, params: &[f64], input: Vec<T>) -> Tape<T> {
        debug_assert_eq!(params.len(), self.n_params);
        debug_assert_eq!(input.len(), self.in_dim());
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input);
        for (l, &off) in self.layers.iter().zip(&self.offsets) {
            let prev = acts.last().unwrap();
            let (w, b) = params[off..off + l.param_count()].split_at(l.out_dim * l.in_dim);
            let next: Vec<T> = (0..l.out_dim)
                .map(|o| {
                    let row = &w[o * l.in_dim..(o + 1) * l.in_dim];
                    let mut z = T::cst(b[o]);
                    for (a, &wij) in prev.iter().zip(row) {
                        z += *a * wij;
                    }
                    l.activation.apply(z)
                })
                .collect();
            acts.push(next);
        }
        Tape { acts }
    }

    /// Pulls `upstream` (∂L/∂output) back through the recorded pass.
    ///
    /// Returns the input cotangent and, when `want_params` is set, the
    /// parameter cotangent in the flat layout.
    pub fn backward<T: Real>(
        &self,
        params: &[f64],
        tape: &Tape<T>,
        upstream: Vec<T>,
        want_params: bool,
    ) -> (Vec<T>, Option<Vec<T>>) {
        debug_assert_eq!(upstream.len(), self.out_dim());
        let mut grad_p = want_params.then(|| vec![T::cst(0.0); self.n_params]);
        let mut delta = upstream;
        for (i, l) in self.layers.iter().enumerate().rev() {
            let off = self.offsets[i];
            let a_in = &tape.acts[i];
            let a_out = &tape.acts[i + 1];
            let dz: Vec<T> = delta
                .iter()
                .zip(a_out)
                .map(|(&d, &a)| d * l.activation.slope(a))
                .collect();
            if let Some(gp) = grad_p.as_mut() {
                let (gw, gb) =
                    gp[off..off + l.param_count()].split_at_mut(l.out_dim * l.in_dim);
                for o in 0..l.out_dim {
                    let row = &mut gw[o * l.in_dim..(o + 1) * l.in_dim];
                    for (g, &a) in row.iter_mut().zip(a_in) {
                        *g = dz[o] * a;
                    }
                    gb[o] = dz[o];
                }
            }
            let w = &params[off..off + l.out_dim * l.in_dim];
            let mut prev = vec![T::cst(0.0); l.in_dim];
            for o in 0..l.out_dim {
                let row = &w[o * l.in_dim..(o + 1) * l.in_dim];
                for (p, &wij) in prev.iter_mut().zip(row) {
                    *p += dz[o] * wij;
                }
            }
            delta = prev;
        }
        (delta, grad_p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    #[test]
    fn mismatched_layers_name_the_offending_layer() {
        let layers = vec![
            LayerSpec {
                in_dim: 2,
                out_dim: 4,
                activation: Activation::Tanh,
            },
            LayerSpec {
                in_dim: 3,
                out_dim: 1,
                activation: Activation::Identity,
            },
        ];
        assert_eq!(
            Mlp::new(layers).unwrap_err(),
            Error::LayerMismatch {
                layer: 1,
                expected: 4,
                got: 3
            }
        );
    }

    #[test]
    fn param_count_sums_weights_and_biases() {
        let net = Mlp::from_widths(&[2, 16, 16, 1]).unwrap();
        assert_eq!(net.param_count(), 2 * 16 + 16 + 16 * 16 + 16 + 16 + 1);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let net = Mlp::from_widths(&[4, 32, 1]).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(7);
        let p = net.init_params(&mut rng);
        assert!(p[..4 * 32 + 32].iter().all(|v| v.abs() <= 0.5));
        assert!(p[4 * 32 + 32..].iter().all(|v| v.abs() <= 1.0 / 32f64.sqrt()));
    }

    #[test]
    fn vector_output_backward_matches_finite_differences() {
        let net = Mlp::from_widths(&[3, 5, 2]).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        let p = net.init_params(&mut rng);
        let x = vec![0.2, -0.4, 0.9];
        let up = vec![0.7, -1.3];
        let obj = |p: &[f64], x: &[f64]| {
            let t = net.forward(p, x.to_vec());
            t.output().iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
        };
        let tape = net.forward(&p, x.clone());
        let (gx, gp) = net.backward(&p, &tape, up.clone(), true);
        let h = 1e-6;
        for i in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (obj(&p, &xp) - obj(&p, &xm)) / (2.0 * h);
            assert!((fd - gx[i]).abs() < 1e-8);
        }
        let gp = gp.unwrap();
        for i in 0..p.len() {
            let mut pp = p.clone();
            let mut pm = p.clone();
            pp[i] += h;
            pm[i] -= h;
            let fd = (obj(&pp, &x) - obj(&pm, &x)) / (2.0 * h);
            assert!((fd - gp[i]).abs() < 1e-8, "param {i}");
        }
    }
}
