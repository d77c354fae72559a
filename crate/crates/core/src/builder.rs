//! Assembling a seeded [`Model`] from a flat description.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::affine::{AffineMap, Projection};
use crate::dynamics::{FieldSpec, Variant, PH_DELTA};
use crate::energy::{Energy, EnergyNet, Head};
use crate::error::{Error, Result};
use crate::mlp::Mlp;
use crate::model::{Model, TrainFlags};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    /// Full width list of the network, input and output included.
    pub layers: Vec<usize>,
    pub head: Head,
    pub data_dependent: bool,
    pub alpha_init: f64,
    /// Initial value of every diagonal gain `aᵢ`.
    pub wa_init: f64,
    pub horizon: f64,
    pub train: TrainFlags,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Stable,
            n_x: 1,
            n_u: 1,
            n_y: 1,
            layers: vec![2, 16, 16, 1],
            head: Head::Square,
            data_dependent: true,
            alpha_init: 0.5,
            wa_init: 1.0,
            horizon: 1.0,
            train: TrainFlags::default(),
            seed: 0,
        }
    }
}

/// A trained projection starts at the identity when square and at a seeded
/// random map otherwise; a frozen one is the identity when square and a
/// fixed seeded map otherwise.
fn projection(out_dim: usize, in_dim: usize, trained: bool, rng: &mut Xoshiro256PlusPlus) -> Projection {
    match (out_dim == in_dim, trained) {
        (true, false) => Projection::Identity(in_dim),
        (true, true) => Projection::Affine(AffineMap::identity(in_dim)),
        (false, _) => Projection::Affine(AffineMap::random(out_dim, in_dim, rng)),
    }
}

impl ModelConfig {
    /// Input width the network must have for this variant.
    pub fn network_in_dim(&self) -> usize {
        let state = match self.variant {
            Variant::SecondOrder => self.n_x / 2,
            _ => self.n_x,
        };
        state + if self.data_dependent { self.n_u } else { 0 }
    }

    pub fn network_out_dim(&self) -> usize {
        match self.variant {
            Variant::Vanilla => self.n_x,
            _ => 1,
        }
    }

    pub fn build(&self) -> Result<Model> {
        if self.n_x == 0 || self.n_u == 0 || self.n_y == 0 {
            return Err(Error::InvalidModel("n_x, n_u and n_y must be positive".into()));
        }
        if self.variant == Variant::SecondOrder && self.n_x % 2 != 0 {
            return Err(Error::InvalidModel(format!(
                "second-order field needs an even state dimension, got {}",
                self.n_x
            )));
        }
        if self.layers.len() < 2 {
            return Err(Error::InvalidModel("energy_layers needs at least an input and an output width".into()));
        }
        let (first, last) = (self.layers[0], *self.layers.last().unwrap());
        if first != self.network_in_dim() {
            return Err(Error::LayerMismatch {
                layer: 0,
                expected: self.network_in_dim(),
                got: first,
            });
        }
        if last != self.network_out_dim() {
            return Err(Error::InvalidModel(format!(
                "network output width must be {} for the {} variant, got {last}",
                self.network_out_dim(),
                self.variant.name()
            )));
        }
        if self.alpha_init < 0.0 {
            return Err(Error::InvalidModel(format!("alpha_init must be non-negative, got {}", self.alpha_init)));
        }
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(self.seed);
        let mlp = Mlp::from_widths(&self.layers)?;
        let mut w = mlp.init_params(&mut rng);
        let energy = |n: usize| -> Result<Energy> {
            Ok(Energy::Net(EnergyNet::new(mlp.clone(), self.head, self.data_dependent, n, self.n_u)?))
        };
        let field = match self.variant {
            Variant::Vanilla => FieldSpec::vanilla(mlp.clone(), self.data_dependent, self.n_x, self.n_u)?,
            Variant::Stable => FieldSpec::Stable { energy: energy(self.n_x)? },
            Variant::PortHamiltonian => {
                w.extend(std::iter::repeat_n(self.wa_init, self.n_x));
                FieldSpec::PortHamiltonian {
                    energy: energy(self.n_x)?,
                    delta: PH_DELTA,
                }
            }
            Variant::SecondOrder => {
                w.push(self.alpha_init);
                FieldSpec::second_order(self.n_x, energy(self.n_x / 2)?)?
            }
        };
        let h_u = projection(self.n_x, self.n_u, self.train.v_u, &mut rng);
        let h_y = projection(self.n_y, self.n_x, self.train.v_y, &mut rng);
        Model::new(h_u, field, h_y, w, self.horizon, self.train)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negation_defaults_build() {
        let m = ModelConfig::default().build().unwrap();
        assert_eq!(m.w.len(), 2 * 16 + 16 + 16 * 16 + 16 + 16 + 1);
        assert_eq!(m.h_u, Projection::Identity(1));
        assert_eq!(m.h_y, Projection::Identity(1));
    }

    #[test]
    fn seeds_drive_initialization() {
        let a = ModelConfig::default().build().unwrap();
        let b = ModelConfig::default().build().unwrap();
        let c = ModelConfig {
            seed: 1,
            ..ModelConfig::default()
        }
        .build()
        .unwrap();
        assert_eq!(a, b);
        assert_ne!(a.w, c.w);
    }

    #[test]
    fn extras_sit_at_the_tail() {
        let cfg = ModelConfig {
            variant: Variant::PortHamiltonian,
            n_x: 2,
            n_u: 2,
            n_y: 1,
            layers: vec![2, 8, 1],
            head: Head::Sigmoid,
            data_dependent: false,
            wa_init: 0.7,
            train: TrainFlags::ALL,
            ..ModelConfig::default()
        };
        let m = cfg.build().unwrap();
        assert_eq!(&m.w[m.w.len() - 2..], &[0.7, 0.7]);
        assert_eq!(m.h_u, Projection::Affine(AffineMap::identity(2)));
        assert_eq!(m.block_len(crate::model::Block::Vy), 3);

        let so = ModelConfig {
            variant: Variant::SecondOrder,
            n_x: 2,
            layers: vec![2, 8, 1],
            alpha_init: 0.25,
            ..ModelConfig::default()
        };
        let m = so.build().unwrap();
        assert_eq!(*m.w.last().unwrap(), 0.25);
    }

    #[test]
    fn layer_mismatch_names_first_layer() {
        let cfg = ModelConfig {
            layers: vec![3, 16, 1],
            ..ModelConfig::default()
        };
        assert!(matches!(cfg.build(), Err(Error::LayerMismatch { layer: 0, expected: 2, got: 3 })));
        let odd = ModelConfig {
            variant: Variant::SecondOrder,
            n_x: 3,
            ..ModelConfig::default()
        };
        assert!(odd.build().is_err());
    }
}
