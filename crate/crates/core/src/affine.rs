//! Input and output projections `y = W·v + b`.
//!
//! The parameter vector of a map is `vec(W)` (row-major) followed by `b`.

use rand::Rng;

use crate::error::{check_len, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    out_dim: usize,
    in_dim: usize,
    /// `out × in`, row-major, followed by the `out` bias entries.
    params: Vec<f64>,
}

impl AffineMap {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            out_dim,
            in_dim,
            params: vec![0.0; out_dim * in_dim + out_dim],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.params[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_parts(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self> {
        let out_dim = bias.len();
        check_len("affine rows", out_dim, weights.len())?;
        let in_dim = weights.first().map_or(0, Vec::len);
        let mut params = Vec::with_capacity(out_dim * in_dim + out_dim);
        for row in &weights {
            check_len("affine row", in_dim, row.len())?;
            params.extend_from_slice(row);
        }
        params.extend_from_slice(&bias);
        Ok(Self {
            out_dim,
            in_dim,
            params,
        })
    }

    /// Uniform in `±1/√in_dim`, like the network layers.
    pub fn random<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let params = (0..out_dim * in_dim + out_dim)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self {
            out_dim,
            in_dim,
            params,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        check_len("affine parameters", self.params.len(), p.len())?;
        self.params.copy_from_slice(p);
        Ok(())
    }

    fn weight(&self, o: usize, i: usize) -> f64 {
        self.params[o * self.in_dim + i]
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("affine input", self.in_dim, v.len())?;
        let bias = &self.params[self.out_dim * self.in_dim..];
        Ok((0..self.out_dim)
            .map(|o| bias[o] + (0..self.in_dim).map(|i| self.weight(o, i) * v[i]).sum::<f64>())
            .collect())
    }

    /// `upstreamᵀ · ∂(Wv + b)/∂(vec W, b)` = `(upstream ⊗ v, upstream)`.
    pub fn vjp_params(&self, v: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        check_len("affine input", self.in_dim, v.len())?;
        check_len("affine upstream", self.out_dim, upstream.len())?;
        let mut g = Vec::with_capacity(self.params.len());
        for &up in upstream {
            g.extend(v.iter().map(|&vi| up * vi));
        }
        g.extend_from_slice(upstream);
        Ok(g)
    }

    /// `upstreamᵀ · W`.
    pub fn vjp_input(&self, upstream: &[f64]) -> Result<Vec<f64>> {
        check_len("affine upstream", self.out_dim, upstream.len())?;
        Ok((0..self.in_dim)
            .map(|i| (0..self.out_dim).map(|o| upstream[o] * self.weight(o, i)).sum())
            .collect())
    }
}

/// A projection is either the fixed identity or a learnable affine map.
#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    Identity(usize),
    Affine(AffineMap),
}

impl Projection {
    pub fn in_dim(&self) -> usize {
        match self {
            Projection::Identity(n) => *n,
            Projection::Affine(m) => m.in_dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Projection::Identity(n) => *n,
            Projection::Affine(m) => m.out_dim(),
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Projection::Identity(_) => &[],
            Projection::Affine(m) => m.params(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().len()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        match self {
            Projection::Identity(_) => check_len("identity projection parameters", 0, p.len()),
            Projection::Affine(m) => m.set_params(p),
        }
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        match self {
            Projection::Identity(n) => {
                check_len("projection input", *n, v.len())?;
                Ok(v.to_vec())
            }
            Projection::Affine(m) => m.apply(v),
        }
    }

    pub fn vjp_params(&self, v: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        match self {
            Projection::Identity(_) => Ok(Vec::new()),
            Projection::Affine(m) => m.vjp_params(v, upstream),
        }
    }

    pub fn vjp_input(&self, upstream: &[f64]) -> Result<Vec<f64>> {
        match self {
            Projection::Identity(n) => {
                check_len("projection upstream", *n, upstream.len())?;
                Ok(upstream.to_vec())
            }
            Projection::Affine(m) => m.vjp_input(upstream),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    #[test]
    fn identity_map_returns_input() {
        assert_eq!(AffineMap::identity(2).apply(&[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn vjp_params_selects_row() {
        let m = AffineMap::from_parts(vec![vec![1.0, 2.0], vec![3.0, 4.0]], vec![0.5, -0.5]).unwrap();
        let (a, b) = (7.0, -2.0);
        assert_eq!(
            m.vjp_params(&[a, b], &[1.0, 0.0]).unwrap(),
            vec![a, b, 0.0, 0.0, 1.0, 0.0]
        );
        assert_eq!(m.vjp_input(&[1.0, 0.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn vjps_match_finite_differences() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(4);
        let m = AffineMap::random(3, 2, &mut rng);
        let v = [0.7, -1.1];
        let up = [0.3, -2.0, 1.5];
        let obj = |m: &AffineMap, v: &[f64]| -> f64 {
            m.apply(v).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        let gp = m.vjp_params(&v, &up).unwrap();
        for i in 0..m.param_count() {
            let mut mp = m.clone();
            let mut mm = m.clone();
            let mut p = m.params().to_vec();
            p[i] += h;
            mp.set_params(&p).unwrap();
            p[i] -= 2.0 * h;
            mm.set_params(&p).unwrap();
            let fd = (obj(&mp, &v) - obj(&mm, &v)) / (2.0 * h);
            assert!((fd - gp[i]).abs() < 1e-8);
        }
        let gi = m.vjp_input(&up).unwrap();
        for i in 0..2 {
            let mut vp = v;
            let mut vm = v;
            vp[i] += h;
            vm[i] -= h;
            let fd = (obj(&m, &vp) - obj(&m, &vm)) / (2.0 * h);
            assert!((fd - gi[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = AffineMap::identity(2);
        assert!(m.apply(&[1.0]).is_err());
        assert!(m.vjp_input(&[1.0, 2.0, 3.0]).is_err());
    }
}
