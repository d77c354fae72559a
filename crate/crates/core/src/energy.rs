//! Scalar energy functions `ε(u, x, w)` and their derivative products.
//!
//! Every product the adjoint needs comes out of one sweep: a forward pass
//! whose state input carries a tangent direction, then the reverse pass
//! run over the same dual numbers. The real parts are `ε`, `∂ₓε` and
//! `∂_w ε`; the tangent parts are `∂²ₓε·v` and `∂_w(vᵀ∂ₓε)`.

use crate::dual::{Dual, Real};
use crate::error::{check_len, Error, Result};
use crate::mlp::Mlp;

/// Output transformation applied to the last (scalar) layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// `o²`, bounded below by 0.
    Square,
    /// `σ(o)`, bounded in (0, 1).
    Sigmoid,
    Identity,
}

impl Head {
    pub const ALL: [Head; 3] = [Head::Square, Head::Sigmoid, Head::Identity];

    pub fn name(self) -> &'static str {
        match self {
            Head::Square => "square",
            Head::Sigmoid => "sigmoid",
            Head::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Head::ALL.into_iter().find(|h| h.name() == s)
    }

    #[inline]
    fn apply<T: Real>(self, o: T) -> (T, T) {
        match self {
            Head::Square => (o * o, o * 2.0),
            Head::Sigmoid => {
                let s = o.sigmoid();
                (s, s * (T::cst(1.0) - s))
            }
            Head::Identity => (o, T::cst(1.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyNet {
    mlp: Mlp,
    head: Head,
    data_dependent: bool,
    n_x: usize,
    n_u: usize,
}

impl EnergyNet {
    pub fn new(mlp: Mlp, head: Head, data_dependent: bool, n_x: usize, n_u: usize) -> Result<Self> {
        let expected_in = n_x + if data_dependent { n_u } else { 0 };
        if mlp.in_dim() != expected_in {
            return Err(Error::LayerMismatch {
                layer: 0,
                expected: expected_in,
                got: mlp.in_dim(),
            });
        }
        if mlp.out_dim() != 1 {
            let last = mlp.layers().len() - 1;
            return Err(Error::InvalidModel(format!(
                "energy network layer {last} must have out_dim 1, got {}",
                mlp.out_dim()
            )));
        }
        Ok(Self {
            mlp,
            head,
            data_dependent,
            n_x,
            n_u,
        })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn data_dependent(&self) -> bool {
        self.data_dependent
    }

    fn input<T: Real>(&self, u: &[f64], x: &[T]) -> Vec<T> {
        let mut v = Vec::with_capacity(self.mlp.in_dim());
        v.extend_from_slice(x);
        if self.data_dependent {
            v.extend(u.iter().map(|&ui| T::cst(ui)));
        }
        v
    }

    /// Returns `(ε, ∂ₓε, ∂_w ε)` generically over the scalar type.
    fn sweep<T: Real>(&self, u: &[f64], x: &[T], w: &[f64], want_params: bool) -> (T, Vec<T>, Option<Vec<T>>) {
        let tape = self.mlp.forward(w, self.input(u, x));
        let (e, de_do) = self.head.apply(tape.output()[0]);
        let (mut gin, gp) = self.mlp.backward(w, &tape, vec![de_do], want_params);
        gin.truncate(self.n_x);
        (e, gin, gp)
    }
}

/// `ε(x) = ½‖x − c‖²`, parameter-free; used as a closed-form anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticEnergy {
    pub center: Vec<f64>,
}

impl QuadraticEnergy {
    pub fn centered(n_x: usize) -> Self {
        Self {
            center: vec![0.0; n_x],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Energy {
    Net(EnergyNet),
    Quadratic(QuadraticEnergy),
}

/// Everything one tangent sweep yields at a point, along direction `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyProducts {
    pub value: f64,
    pub grad_x: Vec<f64>,
    /// `∂²ₓε · v`
    pub hvp: Vec<f64>,
    /// `vᵀ ∂_w ∂ₓε`
    pub mixed: Vec<f64>,
}

impl Energy {
    pub fn n_x(&self) -> usize {
        match self {
            Energy::Net(n) => n.n_x,
            Energy::Quadratic(q) => q.center.len(),
        }
    }

    pub fn n_u(&self) -> usize {
        match self {
            Energy::Net(n) => n.n_u,
            Energy::Quadratic(_) => 0,
        }
    }

    pub fn data_dependent(&self) -> bool {
        matches!(self, Energy::Net(n) if n.data_dependent)
    }

    pub fn param_count(&self) -> usize {
        match self {
            Energy::Net(n) => n.mlp.param_count(),
            Energy::Quadratic(_) => 0,
        }
    }

    /// Whether the head guarantees a lower bound of zero.
    pub fn bounded_below(&self) -> bool {
        match self {
            Energy::Net(n) => matches!(n.head, Head::Square | Head::Sigmoid),
            Energy::Quadratic(_) => true,
        }
    }

    fn check(&self, u: &[f64], x: &[f64], w: &[f64]) -> Result<()> {
        check_len("state x", self.n_x(), x.len())?;
        check_len("energy parameters", self.param_count(), w.len())?;
        if self.data_dependent() {
            check_len("input u", self.n_u(), u.len())?;
        }
        Ok(())
    }

    pub fn eval(&self, u: &[f64], x: &[f64], w: &[f64]) -> Result<f64> {
        self.check(u, x, w)?;
        Ok(match self {
            Energy::Net(n) => {
                let tape = n.mlp.forward(w, n.input(u, x));
                n.head.apply(tape.output()[0]).0
            }
            Energy::Quadratic(q) => {
                0.5 * x.iter().zip(&q.center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>()
            }
        })
    }

    pub fn grad_x(&self, u: &[f64], x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        self.check(u, x, w)?;
        Ok(match self {
            Energy::Net(n) => n.sweep(u, x, w, false).1,
            Energy::Quadratic(q) => x.iter().zip(&q.center).map(|(a, c)| a - c).collect(),
        })
    }

    /// `∂²ₓε · v`; equals `vᵀ∂²ₓε` by symmetry.
    pub fn hvp(&self, u: &[f64], x: &[f64], w: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.products(u, x, w, v, false)?.hvp)
    }

    /// `vᵀ ∂_w ∂ₓε`, one entry per energy parameter.
    pub fn mixed_vjp(&self, u: &[f64], x: &[f64], w: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.products(u, x, w, v, true)?.mixed)
    }

    /// Gradient of `ε` with respect to its own parameters.
    pub fn grad_w(&self, u: &[f64], x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        self.check(u, x, w)?;
        Ok(match self {
            Energy::Net(n) => n.sweep(u, x, w, true).2.unwrap(),
            Energy::Quadratic(_) => Vec::new(),
        })
    }

    /// Single tangent sweep along `v`. `mixed` is empty unless `want_mixed`.
    pub fn products(&self, u: &[f64], x: &[f64], w: &[f64], v: &[f64], want_mixed: bool) -> Result<EnergyProducts> {
        self.check(u, x, w)?;
        check_len("direction", self.n_x(), v.len())?;
        Ok(match self {
            Energy::Net(n) => {
                let xd: Vec<Dual> = x.iter().zip(v).map(|(&a, &d)| Dual::new(a, d)).collect();
                let (e, g, gp) = n.sweep(u, &xd, w, want_mixed);
                EnergyProducts {
                    value: e.re,
                    grad_x: g.iter().map(|d| d.re).collect(),
                    hvp: g.iter().map(|d| d.du).collect(),
                    mixed: gp.map(|p| p.iter().map(|d| d.du).collect()).unwrap_or_default(),
                }
            }
            Energy::Quadratic(q) => EnergyProducts {
                value: 0.5 * x.iter().zip(&q.center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>(),
                grad_x: x.iter().zip(&q.center).map(|(a, c)| a - c).collect(),
                hvp: v.to_vec(),
                mixed: Vec::new(),
            },
        })
    }
}
