//! The full input → flow → output model and its trainable blocks.

use crate::adjoint::solve_forward;
use crate::affine::Projection;
use crate::dynamics::FieldSpec;
use crate::error::{check_len, Error, Result};
use crate::solver::{SolverConfig, Trajectory};

/// Lower clamp applied to the depth horizon after every update.
pub const MIN_HORIZON: f64 = 1e-2;

/// The four independently trainable parameter blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    W,
    Vu,
    Vy,
    Horizon,
}

impl Block {
    pub const ALL: [Block; 4] = [Block::W, Block::Vu, Block::Vy, Block::Horizon];

    pub fn name(self) -> &'static str {
        match self {
            Block::W => "w",
            Block::Vu => "v_u",
            Block::Vy => "v_y",
            Block::Horizon => "S",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainFlags {
    pub w: bool,
    pub v_u: bool,
    pub v_y: bool,
    pub horizon: bool,
}

impl TrainFlags {
    pub const ALL: TrainFlags = TrainFlags {
        w: true,
        v_u: true,
        v_y: true,
        horizon: true,
    };
    pub const NONE: TrainFlags = TrainFlags {
        w: false,
        v_u: false,
        v_y: false,
        horizon: false,
    };

    pub fn get(&self, b: Block) -> bool {
        match b {
            Block::W => self.w,
            Block::Vu => self.v_u,
            Block::Vy => self.v_y,
            Block::Horizon => self.horizon,
        }
    }
}

impl Default for TrainFlags {
    fn default() -> Self {
        TrainFlags {
            w: true,
            v_u: false,
            v_y: false,
            horizon: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub h_u: Projection,
    pub field: FieldSpec,
    pub h_y: Projection,
    pub w: Vec<f64>,
    /// Depth horizon `S`.
    pub horizon: f64,
    pub train: TrainFlags,
}

impl Model {
    pub fn new(h_u: Projection, field: FieldSpec, h_y: Projection, w: Vec<f64>, horizon: f64, train: TrainFlags) -> Result<Self> {
        let n_x = field.n_x();
        if h_u.out_dim() != n_x {
            return Err(Error::InvalidModel(format!(
                "input projection maps to {} but the state has dimension {n_x}",
                h_u.out_dim()
            )));
        }
        if h_y.in_dim() != n_x {
            return Err(Error::InvalidModel(format!(
                "output projection reads {} but the state has dimension {n_x}",
                h_y.in_dim()
            )));
        }
        check_len("field parameters", field.param_count(), w.len())?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidModel(format!("horizon must be positive, got {horizon}")));
        }
        if let Some(e) = field.energy() {
            if e.data_dependent() && e.n_u() != h_u.in_dim() {
                return Err(Error::InvalidModel(format!(
                    "energy reads an input of dimension {} but n_u = {}",
                    e.n_u(),
                    h_u.in_dim()
                )));
            }
        }
        Ok(Self {
            h_u,
            field,
            h_y,
            w,
            horizon,
            train,
        })
    }

    pub fn n_u(&self) -> usize {
        self.h_u.in_dim()
    }

    pub fn n_x(&self) -> usize {
        self.field.n_x()
    }

    pub fn n_y(&self) -> usize {
        self.h_y.out_dim()
    }

    pub fn initial_state(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.h_u.apply(u)
    }

    pub fn flow(&self, u: &[f64], cfg: &SolverConfig, dense: bool) -> Result<Trajectory> {
        let x0 = self.initial_state(u)?;
        solve_forward(&self.field, u, &self.w, &x0, self.horizon, cfg, dense)
    }

    pub fn predict(&self, u: &[f64], cfg: &SolverConfig) -> Result<Vec<f64>> {
        let t = self.flow(u, cfg, false)?;
        self.h_y.apply(t.last_state())
    }

    pub fn block_len(&self, b: Block) -> usize {
        match b {
            Block::W => self.w.len(),
            Block::Vu => self.h_u.param_count(),
            Block::Vy => self.h_y.param_count(),
            Block::Horizon => 1,
        }
    }

    pub fn block(&self, b: Block) -> Vec<f64> {
        match b {
            Block::W => self.w.clone(),
            Block::Vu => self.h_u.params().to_vec(),
            Block::Vy => self.h_y.params().to_vec(),
            Block::Horizon => vec![self.horizon],
        }
    }

    pub fn set_block(&mut self, b: Block, v: &[f64]) -> Result<()> {
        match b {
            Block::W => {
                check_len("field parameters", self.w.len(), v.len())?;
                self.w.copy_from_slice(v);
            }
            Block::Vu => self.h_u.set_params(v)?,
            Block::Vy => self.h_y.set_params(v)?,
            Block::Horizon => {
                check_len("horizon", 1, v.len())?;
                self.horizon = v[0];
            }
        }
        Ok(())
    }

    /// All parameters as one vector: `w`, `v_u`, `v_y`, then `S`.
    pub fn flatten(&self) -> Vec<f64> {
        Block::ALL.iter().flat_map(|&b| self.block(b)).collect()
    }

    pub fn flat_len(&self) -> usize {
        Block::ALL.iter().map(|&b| self.block_len(b)).sum()
    }

    pub fn set_flat(&mut self, theta: &[f64]) -> Result<()> {
        check_len("flattened parameters", self.flat_len(), theta.len())?;
        let mut off = 0;
        for b in Block::ALL {
            let n = self.block_len(b);
            self.set_block(b, &theta[off..off + n])?;
            off += n;
        }
        Ok(())
    }

    /// Restores the admissible set after an update: `S ≥ MIN_HORIZON` and a
    /// non-negative damping coefficient for the second-order field.
    pub fn project(&mut self) {
        if self.horizon < MIN_HORIZON {
            self.horizon = MIN_HORIZON;
        }
        if let FieldSpec::SecondOrder { .. } = self.field {
            if let Some(alpha) = self.w.last_mut() {
                if *alpha < 0.0 {
                    *alpha = 0.0;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::AffineMap;
    use crate::energy::{Energy, QuadraticEnergy};
    use proptest::prelude::*;

    fn model() -> Model {
        let field = FieldSpec::PortHamiltonian {
            energy: Energy::Quadratic(QuadraticEnergy::centered(2)),
            delta: 1e-3,
        };
        Model::new(
            Projection::Affine(AffineMap::identity(2)),
            field,
            Projection::Affine(AffineMap::zeros(1, 2)),
            vec![0.5, -0.5],
            1.0,
            TrainFlags::ALL,
        )
        .unwrap()
    }

    #[test]
    fn dimension_chain_is_checked() {
        let field = FieldSpec::Stable {
            energy: Energy::Quadratic(QuadraticEnergy::centered(2)),
        };
        let r = Model::new(
            Projection::Identity(3),
            field,
            Projection::Identity(2),
            vec![],
            1.0,
            TrainFlags::default(),
        );
        assert!(matches!(r, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn horizon_is_clamped() {
        let mut m = model();
        m.horizon = -3.0;
        m.project();
        assert_eq!(m.horizon, MIN_HORIZON);
    }

    proptest! {
        #[test]
        fn flatten_roundtrip(theta in proptest::collection::vec(-10.0f64..10.0, 12)) {
            let mut m = model();
            prop_assert_eq!(m.flat_len(), 12);
            m.set_flat(&theta).unwrap();
            prop_assert_eq!(m.flatten(), theta);
        }
    }
}
