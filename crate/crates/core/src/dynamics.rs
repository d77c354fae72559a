//! Vector fields `f(u, x, w)` and the products the adjoint system needs.
//!
//! Parameter layout: the network parameters come first, then any
//! variant-specific extras (`a₁..a_n` for the port-Hamiltonian field, `α`
//! for the second-order field).

use crate::energy::Energy;
use crate::error::{check_len, Error, Result};
use crate::mlp::Mlp;

/// Margin keeping `A = −diag(|aᵢ| + δ)` strictly negative definite.
pub const PH_DELTA: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub enum FieldSpec {
    /// Unconstrained network field with identity output layer.
    Vanilla {
        net: Mlp,
        data_dependent: bool,
        n_x: usize,
        n_u: usize,
    },
    /// `ẋ = −∂ₓε`
    Stable { energy: Energy },
    /// `ẋ = A(w_A)·∂ₓε` with diagonal `A = −diag(|aᵢ| + δ)`.
    PortHamiltonian { energy: Energy, delta: f64 },
    /// `q̇ = p`, `ṗ = −αp − ∂_qε`; `energy` acts on `q` only.
    SecondOrder { energy: Energy },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Vanilla,
    Stable,
    PortHamiltonian,
    SecondOrder,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Vanilla,
        Variant::Stable,
        Variant::PortHamiltonian,
        Variant::SecondOrder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::Stable => "stable",
            Variant::PortHamiltonian => "port_hamiltonian",
            Variant::SecondOrder => "second_order",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }
}

/// `f`, `λᵀ∂f/∂x` and `λᵀ∂f/∂w` evaluated together at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldProducts {
    pub f: Vec<f64>,
    pub vjp_x: Vec<f64>,
    pub vjp_w: Vec<f64>,
}

#[inline]
fn subgrad_sign(a: f64) -> f64 {
    if a > 0.0 {
        1.0
    } else if a < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl FieldSpec {
    pub fn vanilla(net: Mlp, data_dependent: bool, n_x: usize, n_u: usize) -> Result<Self> {
        let expected_in = n_x + if data_dependent { n_u } else { 0 };
        if net.in_dim() != expected_in {
            return Err(Error::LayerMismatch {
                layer: 0,
                expected: expected_in,
                got: net.in_dim(),
            });
        }
        if net.out_dim() != n_x {
            return Err(Error::InvalidModel(format!(
                "vanilla field output width {} differs from n_x = {n_x}",
                net.out_dim()
            )));
        }
        Ok(FieldSpec::Vanilla {
            net,
            data_dependent,
            n_x,
            n_u,
        })
    }

    pub fn second_order(n_x: usize, energy: Energy) -> Result<Self> {
        if n_x % 2 != 0 {
            return Err(Error::InvalidModel(format!(
                "second-order field needs an even state dimension, got {n_x}"
            )));
        }
        if energy.n_x() != n_x / 2 {
            return Err(Error::InvalidModel(format!(
                "second-order energy acts on q of dimension {}, got {}",
                n_x / 2,
                energy.n_x()
            )));
        }
        Ok(FieldSpec::SecondOrder { energy })
    }

    pub fn variant(&self) -> Variant {
        match self {
            FieldSpec::Vanilla { .. } => Variant::Vanilla,
            FieldSpec::Stable { .. } => Variant::Stable,
            FieldSpec::PortHamiltonian { .. } => Variant::PortHamiltonian,
            FieldSpec::SecondOrder { .. } => Variant::SecondOrder,
        }
    }

    pub fn energy(&self) -> Option<&Energy> {
        match self {
            FieldSpec::Vanilla { .. } => None,
            FieldSpec::Stable { energy }
            | FieldSpec::PortHamiltonian { energy, .. }
            | FieldSpec::SecondOrder { energy } => Some(energy),
        }
    }

    pub fn n_x(&self) -> usize {
        match self {
            FieldSpec::Vanilla { n_x, .. } => *n_x,
            FieldSpec::Stable { energy } | FieldSpec::PortHamiltonian { energy, .. } => energy.n_x(),
            FieldSpec::SecondOrder { energy } => 2 * energy.n_x(),
        }
    }

    /// Parameters of the network part of `w`.
    pub fn net_param_count(&self) -> usize {
        match self {
            FieldSpec::Vanilla { net, .. } => net.param_count(),
            _ => self.energy().unwrap().param_count(),
        }
    }

    /// Number of trailing variant-specific parameters.
    pub fn extra_param_count(&self) -> usize {
        match self {
            FieldSpec::PortHamiltonian { energy, .. } => energy.n_x(),
            FieldSpec::SecondOrder { .. } => 1,
            _ => 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.net_param_count() + self.extra_param_count()
    }

    fn check(&self, x: &[f64], w: &[f64]) -> Result<()> {
        check_len("state x", self.n_x(), x.len())?;
        check_len("field parameters", self.param_count(), w.len())
    }

    fn vanilla_input(data_dependent: bool, u: &[f64], x: &[f64]) -> Vec<f64> {
        let mut v = x.to_vec();
        if data_dependent {
            v.extend_from_slice(u);
        }
        v
    }

    pub fn eval(&self, u: &[f64], x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        self.check(x, w)?;
        let n_net = self.net_param_count();
        let (wn, extra) = w.split_at(n_net);
        match self {
            FieldSpec::Vanilla {
                net,
                data_dependent,
                n_u,
                ..
            } => {
                if *data_dependent {
                    check_len("input u", *n_u, u.len())?;
                }
                let tape = net.forward(wn, Self::vanilla_input(*data_dependent, u, x));
                Ok(tape.output().to_vec())
            }
            FieldSpec::Stable { energy } => {
                Ok(energy.grad_x(u, x, wn)?.into_iter().map(|g| -g).collect())
            }
            FieldSpec::PortHamiltonian { energy, delta } => {
                let g = energy.grad_x(u, x, wn)?;
                Ok(g.iter()
                    .zip(extra)
                    .map(|(gi, ai)| -(ai.abs() + delta) * gi)
                    .collect())
            }
            FieldSpec::SecondOrder { energy } => {
                let nv = energy.n_x();
                let (q, p) = x.split_at(nv);
                let alpha = extra[0];
                let g = energy.grad_x(u, q, wn)?;
                let mut f = p.to_vec();
                f.extend(p.iter().zip(&g).map(|(pi, gi)| -alpha * pi - gi));
                Ok(f)
            }
        }
    }

    /// `f`, `λᵀ∂f/∂x` and, when `want_w`, `λᵀ∂f/∂w` (otherwise empty).
    pub fn products(&self, u: &[f64], x: &[f64], w: &[f64], lam: &[f64], want_w: bool) -> Result<FieldProducts> {
        self.check(x, w)?;
        check_len("costate", self.n_x(), lam.len())?;
        let n_net = self.net_param_count();
        let (wn, extra) = w.split_at(n_net);
        match self {
            FieldSpec::Vanilla {
                net,
                data_dependent,
                n_x,
                n_u,
            } => {
                if *data_dependent {
                    check_len("input u", *n_u, u.len())?;
                }
                let tape = net.forward(wn, Self::vanilla_input(*data_dependent, u, x));
                let f = tape.output().to_vec();
                let (mut gx, gp) = net.backward(wn, &tape, lam.to_vec(), want_w);
                gx.truncate(*n_x);
                Ok(FieldProducts {
                    f,
                    vjp_x: gx,
                    vjp_w: gp.unwrap_or_default(),
                })
            }
            FieldSpec::Stable { energy } => {
                let e = energy.products(u, x, wn, lam, want_w)?;
                Ok(FieldProducts {
                    f: e.grad_x.iter().map(|g| -g).collect(),
                    vjp_x: e.hvp.iter().map(|h| -h).collect(),
                    vjp_w: e.mixed.iter().map(|m| -m).collect(),
                })
            }
            FieldSpec::PortHamiltonian { energy, delta } => {
                let diag: Vec<f64> = extra.iter().map(|a| -(a.abs() + delta)).collect();
                // A is symmetric, so λᵀA∂²ε = (Aλ)ᵀ∂²ε.
                let a_lam: Vec<f64> = diag.iter().zip(lam).map(|(d, l)| d * l).collect();
                let e = energy.products(u, x, wn, &a_lam, want_w)?;
                let f = diag.iter().zip(&e.grad_x).map(|(d, g)| d * g).collect();
                let vjp_w = if want_w {
                    let mut v = e.mixed;
                    v.extend(
                        extra
                            .iter()
                            .zip(&e.grad_x)
                            .zip(lam)
                            .map(|((a, g), l)| -subgrad_sign(*a) * g * l),
                    );
                    v
                } else {
                    Vec::new()
                };
                Ok(FieldProducts {
                    f,
                    vjp_x: e.hvp,
                    vjp_w,
                })
            }
            FieldSpec::SecondOrder { energy } => {
                let nv = energy.n_x();
                let (q, p) = x.split_at(nv);
                let (lq, lp) = lam.split_at(nv);
                let alpha = extra[0];
                let e = energy.products(u, q, wn, lp, want_w)?;
                let mut f = p.to_vec();
                f.extend(p.iter().zip(&e.grad_x).map(|(pi, gi)| -alpha * pi - gi));
                let mut vjp_x: Vec<f64> = e.hvp.iter().map(|h| -h).collect();
                vjp_x.extend(lq.iter().zip(lp).map(|(a, b)| a - alpha * b));
                let vjp_w = if want_w {
                    let mut v: Vec<f64> = e.mixed.iter().map(|m| -m).collect();
                    v.push(-lp.iter().zip(p).map(|(a, b)| a * b).sum::<f64>());
                    v
                } else {
                    Vec::new()
                };
                Ok(FieldProducts { f, vjp_x, vjp_w })
            }
        }
    }

    pub fn vjp_x(&self, u: &[f64], x: &[f64], w: &[f64], lam: &[f64]) -> Result<Vec<f64>> {
        Ok(self.products(u, x, w, lam, false)?.vjp_x)
    }

    pub fn vjp_w(&self, u: &[f64], x: &[f64], w: &[f64], lam: &[f64]) -> Result<Vec<f64>> {
        Ok(self.products(u, x, w, lam, true)?.vjp_w)
    }

    /// Lyapunov quantity along the flow: `ε` for first-order energy fields,
    /// `½pᵀp + ε(q)` for the second-order field, `None` for vanilla.
    pub fn lyapunov(&self, u: &[f64], x: &[f64], w: &[f64]) -> Result<Option<f64>> {
        self.check(x, w)?;
        let wn = &w[..self.net_param_count()];
        match self {
            FieldSpec::Vanilla { .. } => Ok(None),
            FieldSpec::Stable { energy } | FieldSpec::PortHamiltonian { energy, .. } => {
                energy.eval(u, x, wn).map(Some)
            }
            FieldSpec::SecondOrder { energy } => {
                let nv = energy.n_x();
                let (q, p) = x.split_at(nv);
                let kinetic = 0.5 * p.iter().map(|v| v * v).sum::<f64>();
                Ok(Some(kinetic + energy.eval(u, q, wn)?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{EnergyNet, Head, QuadraticEnergy};
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn quad(n: usize) -> Energy {
        Energy::Quadratic(QuadraticEnergy::centered(n))
    }

    fn net_energy(n_x: usize, n_u: usize, dd: bool, head: Head, rng: &mut Xoshiro256PlusPlus) -> (Energy, Vec<f64>) {
        let in_dim = n_x + if dd { n_u } else { 0 };
        let mlp = Mlp::from_widths(&[in_dim, 10, 10, 1]).unwrap();
        let w = mlp.init_params(rng);
        (Energy::Net(EnergyNet::new(mlp, head, dd, n_x, n_u).unwrap()), w)
    }

    /// One seeded instance of every variant, with a data-dependent network.
    fn seeded_fields() -> Vec<(FieldSpec, Vec<f64>)> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(2024);
        let mut out = Vec::new();
        let net = Mlp::from_widths(&[3, 8, 2]).unwrap();
        let w = net.init_params(&mut rng);
        out.push((FieldSpec::vanilla(net, true, 2, 1).unwrap(), w));
        let (e, w) = net_energy(2, 1, true, Head::Sigmoid, &mut rng);
        out.push((FieldSpec::Stable { energy: e }, w));
        let (e, mut w) = net_energy(2, 1, true, Head::Square, &mut rng);
        w.extend([0.7, -1.3]);
        out.push((
            FieldSpec::PortHamiltonian {
                energy: e,
                delta: PH_DELTA,
            },
            w,
        ));
        let (e, mut w) = net_energy(1, 1, true, Head::Square, &mut rng);
        w.push(0.4);
        out.push((FieldSpec::second_order(2, e).unwrap(), w));
        out
    }

    #[test]
    fn stable_quadratic_field_is_negative_state() {
        let f = FieldSpec::Stable { energy: quad(2) };
        assert_eq!(f.eval(&[], &[1.0, 2.0], &[]).unwrap(), vec![-1.0, -2.0]);
        assert_eq!(f.vjp_x(&[], &[1.0, 2.0], &[], &[3.0, -1.0]).unwrap(), vec![-3.0, 1.0]);
    }

    #[test]
    fn port_hamiltonian_diagonal_product() {
        // ε = ½‖x − c‖² with x − c = (1, 1) gives ∂ₓε = (1, 1).
        let e = Energy::Quadratic(QuadraticEnergy {
            center: vec![0.0, 0.0],
        });
        let f = FieldSpec::PortHamiltonian {
            energy: e,
            delta: 1e-3,
        };
        let v = f.eval(&[], &[1.0, 1.0], &[1.0, 2.0]).unwrap();
        assert!((v[0] + 1.001).abs() < 1e-15 && (v[1] + 2.001).abs() < 1e-15);
    }

    #[test]
    fn second_order_substitution() {
        let f = FieldSpec::second_order(4, quad(2)).unwrap();
        let v = f.eval(&[], &[1.0, 0.0, 0.0, 1.0], &[0.5]).unwrap();
        assert_eq!(v, vec![0.0, 1.0, -1.0, -0.5]);
    }

    #[test]
    fn second_order_alpha_slot() {
        let f = FieldSpec::second_order(4, quad(2)).unwrap();
        let v = f.vjp_w(&[], &[0.3, -0.2, 2.0, 3.0], &[0.5], &[0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(v, vec![-5.0]);
    }

    #[test]
    fn second_order_rejects_odd_dimension() {
        assert!(matches!(
            FieldSpec::second_order(3, quad(1)),
            Err(Error::InvalidModel(_))
        ));
    }

    #[test]
    fn zero_costate_gives_zero_products() {
        for (f, w) in seeded_fields() {
            let n = f.n_x();
            let x: Vec<f64> = (0..n).map(|i| 0.3 - 0.2 * i as f64).collect();
            let p = f.products(&[0.25], &x, &w, &vec![0.0; n], true).unwrap();
            assert!(p.vjp_x.iter().all(|&v| v == 0.0), "{:?}", f.variant());
            assert!(p.vjp_w.iter().all(|&v| v == 0.0), "{:?}", f.variant());
        }
    }

    #[test]
    fn vjps_match_finite_differences_for_every_variant() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        let h = 1e-5;
        for (f, w) in seeded_fields() {
            let n = f.n_x();
            let u = [0.25];
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lam: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = f.products(&u, &x, &w, &lam, true).unwrap();
            let obj = |x: &[f64], w: &[f64]| -> f64 {
                f.eval(&u, x, w).unwrap().iter().zip(&lam).map(|(a, b)| a * b).sum()
            };
            for i in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (obj(&xp, &w) - obj(&xm, &w)) / (2.0 * h);
                let scale = fd.abs().max(p.vjp_x[i].abs()).max(1e-6);
                assert!((fd - p.vjp_x[i]).abs() / scale < 1e-5, "{:?} x{i}", f.variant());
            }
            for i in 0..w.len() {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[i] += h;
                wm[i] -= h;
                let fd = (obj(&x, &wp) - obj(&x, &wm)) / (2.0 * h);
                let scale = fd.abs().max(p.vjp_w[i].abs()).max(1e-6);
                assert!((fd - p.vjp_w[i]).abs() / scale < 1e-4, "{:?} w{i}: {fd} vs {}", f.variant(), p.vjp_w[i]);
            }
            assert_eq!(p.f, f.eval(&u, &x, &w).unwrap());
        }
    }

    #[test]
    fn stable_field_dissipates() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(8);
        let (e, w) = net_energy(2, 1, true, Head::Sigmoid, &mut rng);
        let f = FieldSpec::Stable { energy: e.clone() };
        for _ in 0..200 {
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let u = [rng.random_range(-1.0..1.0)];
            let g = e.grad_x(&u, &x, &w).unwrap();
            let v = f.eval(&u, &x, &w).unwrap();
            let inner: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
            let norm2: f64 = g.iter().map(|a| a * a).sum();
            assert!(inner <= 0.0);
            assert!((inner + norm2).abs() <= 1e-15 * norm2.max(1.0));
        }
    }

    #[test]
    fn port_hamiltonian_dissipates_even_at_zero_gains() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(10);
        let (e, mut w) = net_energy(2, 0, false, Head::Square, &mut rng);
        w.extend([0.0, 0.0]);
        let f = FieldSpec::PortHamiltonian {
            energy: e.clone(),
            delta: PH_DELTA,
        };
        let n_net = w.len() - 2;
        for _ in 0..200 {
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let g = e.grad_x(&[], &x, &w[..n_net]).unwrap();
            let v = f.eval(&[], &x, &w).unwrap();
            let inner: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
            if g.iter().any(|&gi| gi != 0.0) {
                assert!(inner < 0.0);
            }
        }
    }

    #[test]
    fn second_order_energy_identity() {
        // dφ/ds along the field equals −α‖p‖².
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(12);
        let (e, mut w) = net_energy(2, 2, true, Head::Sigmoid, &mut rng);
        let n_net = w.len();
        w.push(0.8);
        let f = FieldSpec::second_order(4, e.clone()).unwrap();
        for _ in 0..1000 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let u = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let (q, p) = x.split_at(2);
            let gq = e.grad_x(&u, q, &w[..n_net]).unwrap();
            let v = f.eval(&u, &x, &w).unwrap();
            let dphi: f64 = gq.iter().zip(&v[..2]).map(|(a, b)| a * b).sum::<f64>()
                + p.iter().zip(&v[2..]).map(|(a, b)| a * b).sum::<f64>();
            let expected = -0.8 * p.iter().map(|a| a * a).sum::<f64>();
            assert!((dphi - expected).abs() < 1e-10);
        }
    }
}
