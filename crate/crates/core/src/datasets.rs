//! Seeded generators for the negation, half-moons and spirals tasks.

use std::f64::consts::PI;
use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal, Uniform};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};

pub const DEFAULT_MOONS_NOISE: f64 = 0.08;
pub const DEFAULT_SPIRALS_NOISE: f64 = 0.02;
pub const DEFAULT_MOONS_N: usize = 512;
pub const DEFAULT_SPIRALS_N: usize = 600;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub task: Task,
    /// Zero for regression.
    pub n_classes: usize,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n_u(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn n_y(&self) -> usize {
        self.targets.first().map_or(0, Vec::len)
    }

    /// Class index of sample `i`: the argmax of a one-hot target, or the
    /// rounded scalar label for single-output classification.
    pub fn label(&self, i: usize) -> usize {
        label_of(&self.targets[i])
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i].clone()).collect(),
            task: self.task,
            n_classes: self.n_classes,
            seed: self.seed,
        }
    }

    /// Seeded shuffle-and-cut into `(train, test)`; the test part holds
    /// `round(test_fraction · n)` samples.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::InvalidArgument(format!(
                "test_fraction must lie in [0, 1), got {test_fraction}"
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut Xoshiro256PlusPlus::seed_from_u64(seed));
        let n_test = (test_fraction * self.len() as f64).round() as usize;
        let (test, train) = idx.split_at(n_test);
        Ok((self.subset(train), self.subset(test)))
    }

    /// Writes `u1,..,y1,..` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut header: Vec<String> = (1..=self.n_u()).map(|i| format!("u{i}")).collect();
        header.extend((1..=self.n_y()).map(|i| format!("y{i}")));
        writeln!(out, "{}", header.join(","))?;
        for (u, y) in self.inputs.iter().zip(&self.targets) {
            let row: Vec<String> = u.iter().chain(y).map(|v| fmt_f64(*v)).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Decimal float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn label_of(y: &[f64]) -> usize {
    if y.len() == 1 {
        return (y[0] > 0.5) as usize;
    }
    argmax(y)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn one_hot(k: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}

fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

fn noise(sigma: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sigma).map_err(|_| Error::InvalidArgument(format!("noise must be non-negative, got {sigma}")))
}

/// Equispaced points on `[a, b]`, both ends included.
fn linspace(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| if n == 1 { a } else { a + (b - a) * i as f64 / (n - 1) as f64 })
}

/// `u ~ U[−1, 1]`, `y = −u`.
pub fn gen_negation(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("negation dataset needs n ≥ 1".into()));
    }
    let mut r = rng(seed);
    let dist = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let inputs: Vec<Vec<f64>> = (0..n).map(|_| vec![dist.sample(&mut r)]).collect();
    let targets = inputs.iter().map(|u| vec![-u[0]]).collect();
    Ok(Dataset {
        inputs,
        targets,
        task: Task::Regression,
        n_classes: 0,
        seed,
    })
}

/// Two interleaved half circles with scalar 0/1 labels; class 0 first.
pub fn gen_halfmoons(n: usize, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::InvalidArgument(format!("half-moons needs a positive even n, got {n}")));
    }
    let mut r = rng(seed);
    let nd = noise(noise_sigma)?;
    let half = n / 2;
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for class in 0..2 {
        for t in linspace(0.0, PI, half) {
            let (a, b) = if class == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            inputs.push(vec![a + nd.sample(&mut r), b + nd.sample(&mut r)]);
            targets.push(vec![class as f64]);
        }
    }
    Ok(Dataset {
        inputs,
        targets,
        task: Task::Classification,
        n_classes: 2,
        seed,
    })
}

/// Interleaved spirals `r = t`, `θ = 3πt + 2πk/K`, `t ∈ [0.2, 1]`, one-hot targets.
pub fn gen_spirals(n: usize, n_classes: usize, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    if n_classes < 2 || n == 0 || n % n_classes != 0 {
        return Err(Error::InvalidArgument(format!(
            "spirals needs n divisible by n_classes ≥ 2, got n = {n}, n_classes = {n_classes}"
        )));
    }
    let mut r = rng(seed);
    let nd = noise(noise_sigma)?;
    let per = n / n_classes;
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for k in 0..n_classes {
        let phase = 2.0 * PI * k as f64 / n_classes as f64;
        for t in linspace(0.2, 1.0, per) {
            let theta = 3.0 * PI * t + phase;
            inputs.push(vec![t * theta.cos() + nd.sample(&mut r), t * theta.sin() + nd.sample(&mut r)]);
            targets.push(one_hot(k, n_classes));
        }
    }
    Ok(Dataset {
        inputs,
        targets,
        task: Task::Classification,
        n_classes,
        seed,
    })
}

/// `n` equispaced negation samples on `[−1, 1]`.
pub fn negation_grid(n: usize) -> Dataset {
    let inputs: Vec<Vec<f64>> = linspace(-1.0, 1.0, n).map(|u| vec![u]).collect();
    let targets = inputs.iter().map(|u| vec![-u[0]]).collect();
    Dataset {
        inputs,
        targets,
        task: Task::Regression,
        n_classes: 0,
        seed: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::is_one_hot;

    #[test]
    fn negation_relation_and_mean() {
        let d = gen_negation(10_000, 7).unwrap();
        assert!(d.inputs.iter().zip(&d.targets).all(|(u, y)| y[0] == -u[0]));
        let mean: f64 = d.inputs.iter().map(|u| u[0]).sum::<f64>() / 1e4;
        assert!(mean.abs() < 0.03, "{mean}");
        assert!(d.inputs.iter().all(|u| (-1.0..=1.0).contains(&u[0])));
    }

    #[test]
    fn determinism() {
        assert_eq!(gen_negation(3, 11).unwrap(), gen_negation(3, 11).unwrap());
        assert_eq!(gen_halfmoons(20, 0.1, 3).unwrap(), gen_halfmoons(20, 0.1, 3).unwrap());
        assert_eq!(gen_spirals(30, 3, 0.1, 3).unwrap(), gen_spirals(30, 3, 0.1, 3).unwrap());
        assert_ne!(gen_spirals(30, 3, 0.1, 3).unwrap(), gen_spirals(30, 3, 0.1, 4).unwrap());
    }

    #[test]
    fn moons_noise_free_points() {
        let d = gen_halfmoons(6, 0.0, 0).unwrap();
        assert_eq!(d.inputs[0], vec![1.0, 0.0]);
        assert_eq!(d.targets[0], vec![0.0]);
        // Class 1, middle point t = π/2.
        assert!((d.inputs[4][0] - 1.0).abs() < 1e-15);
        assert!((d.inputs[4][1] + 0.5).abs() < 1e-15);
        assert_eq!(d.targets[4], vec![1.0]);
        assert!(gen_halfmoons(7, 0.0, 0).is_err());
    }

    #[test]
    fn spirals_noise_free_points() {
        let d = gen_spirals(30, 3, 0.0, 0).unwrap();
        let p = &d.inputs[0];
        assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - 0.2).abs() < 1e-15);
        let angle = p[1].atan2(p[0]);
        assert!((angle - 0.6 * PI).abs() < 1e-12);
        assert_eq!(d.targets[10], vec![0.0, 1.0, 0.0]);
        assert!(d.targets.iter().all(|y| is_one_hot(y)));
        assert!(gen_spirals(31, 3, 0.0, 0).is_err());
    }

    #[test]
    fn spirals_are_rotations_of_each_other() {
        let d = gen_spirals(30, 3, 0.0, 0).unwrap();
        let rot = 2.0 * PI / 3.0;
        for k in 1..3 {
            for i in 0..10 {
                let (a, b) = (&d.inputs[i], &d.inputs[10 * k + i]);
                let c = (k as f64 * rot).cos();
                let s = (k as f64 * rot).sin();
                assert!((c * a[0] - s * a[1] - b[0]).abs() < 1e-12);
                assert!((s * a[0] + c * a[1] - b[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn split_partitions_samples() {
        let d = gen_halfmoons(100, 0.05, 1).unwrap();
        let (tr, te) = d.split(0.2, 9).unwrap();
        assert_eq!((tr.len(), te.len()), (80, 20));
        let mut all: Vec<_> = tr.inputs.iter().chain(&te.inputs).cloned().collect();
        let mut orig = d.inputs.clone();
        let key = |v: &Vec<f64>| (v[0].to_bits(), v[1].to_bits());
        all.sort_by_key(key);
        orig.sort_by_key(key);
        assert_eq!(all, orig);
    }

    #[test]
    fn csv_header_and_rows() {
        let d = gen_spirals(6, 3, 0.0, 0).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "u1,u2,y1,y2,y3");
        assert_eq!(lines.len(), 7);
        let first: f64 = lines[1].split(',').next().unwrap().parse().unwrap();
        assert_eq!(first, d.inputs[0][0]);
    }
}
