//! Scalar fields on `R^d`: exact solutions, sources, and test functions.

use std::f64::consts::PI;

/// A field that can be sampled pointwise (e.g. a right-hand side `f`).
pub trait ScalarField: Sync {
    fn value(&self, x: &[f64]) -> f64;
}

impl<F> ScalarField for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn value(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// A field with analytic derivatives.
pub trait SmoothField: ScalarField {
    fn gradient(&self, x: &[f64], grad: &mut [f64]);

    fn laplacian(&self, x: &[f64]) -> f64;

    /// `∂^alpha` at `x` when available (at least up to total order 3).
    fn partial(&self, _x: &[f64], _alpha: &[usize]) -> Option<f64> {
        None
    }
}

/// `-Δu` of a smooth field, usable as a load.
pub struct NegLaplacian<'a, F: ?Sized>(pub &'a F);

impl<F: SmoothField + ?Sized> ScalarField for NegLaplacian<'_, F> {
    fn value(&self, x: &[f64]) -> f64 {
        -self.0.laplacian(x)
    }
}

/// Sparse multivariate polynomial `Σ c_k x^{α_k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    dim: usize,
    terms: Vec<(f64, Vec<u32>)>,
}

impl Polynomial {
    pub fn new(dim: usize, terms: Vec<(f64, Vec<u32>)>) -> Self {
        assert!(terms.iter().all(|(_, e)| e.len() == dim));
        Self { dim, terms }
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(dim, Vec::new())
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::new(dim, vec![(c, vec![0; dim])])
    }

    /// `c0 + Σ_j c_j x_j`
    pub fn affine(c0: f64, coeffs: &[f64]) -> Self {
        let dim = coeffs.len();
        let mut terms = vec![(c0, vec![0; dim])];
        for (j, &c) in coeffs.iter().enumerate() {
            let mut e = vec![0; dim];
            e[j] = 1;
            terms.push((c, e));
        }
        Self::new(dim, terms)
    }

    pub fn monomial(coef: f64, exponents: Vec<u32>) -> Self {
        Self::new(exponents.len(), vec![(coef, exponents)])
    }

    /// All exponent vectors of total degree `<= degree` in `dim` variables.
    pub fn total_degree_exponents(dim: usize, degree: u32) -> Vec<Vec<u32>> {
        let mut out = Vec::new();
        let mut e = vec![0u32; dim];
        loop {
            if e.iter().sum::<u32>() <= degree {
                out.push(e.clone());
            }
            let mut j = 0;
            loop {
                if j == dim {
                    return out;
                }
                e[j] += 1;
                if e[j] <= degree {
                    break;
                }
                e[j] = 0;
                j += 1;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[(f64, Vec<u32>)] {
        &self.terms
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .filter(|(c, _)| *c != 0.0)
            .map(|(_, e)| e.iter().sum())
            .max()
            .unwrap_or(0)
    }

    pub fn derivative(&self, x: &[f64], alpha: &[usize]) -> f64 {
        self.terms
            .iter()
            .map(|(c, e)| {
                let mut v = *c;
                for j in 0..self.dim {
                    let (p, a) = (e[j] as usize, alpha[j]);
                    if a > p {
                        return 0.0;
                    }
                    // falling factorial p (p-1) ... (p-a+1)
                    v *= ((p - a + 1)..=p).product::<usize>() as f64;
                    v *= x[j].powi((p - a) as i32);
                }
                v
            })
            .sum()
    }
}

impl ScalarField for Polynomial {
    fn value(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, e)| c * e.iter().zip(x).map(|(&p, &xi)| xi.powi(p as i32)).product::<f64>())
            .sum()
    }
}

impl SmoothField for Polynomial {
    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        let mut alpha = vec![0; self.dim];
        for j in 0..self.dim {
            alpha[j] = 1;
            grad[j] = self.derivative(x, &alpha);
            alpha[j] = 0;
        }
    }

    fn laplacian(&self, x: &[f64]) -> f64 {
        let mut alpha = vec![0; self.dim];
        (0..self.dim)
            .map(|j| {
                alpha[j] = 2;
                let v = self.derivative(x, &alpha);
                alpha[j] = 0;
                v
            })
            .sum()
    }

    fn partial(&self, x: &[f64], alpha: &[usize]) -> Option<f64> {
        Some(self.derivative(x, alpha))
    }
}

/// One-dimensional factor of a separable field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Factor {
    /// `sin(k π t)`
    Sine { k: f64 },
    /// `t (1 - t)`
    Bubble,
}

impl Factor {
    pub fn derivative(&self, t: f64, order: usize) -> f64 {
        match *self {
            Factor::Sine { k } => {
                let w = k * PI;
                let (s, c) = (w * t).sin_cos();
                match order % 4 {
                    0 => w.powi(order as i32) * s,
                    1 => w.powi(order as i32) * c,
                    2 => -w.powi(order as i32) * s,
                    _ => -w.powi(order as i32) * c,
                }
            }
            Factor::Bubble => match order {
                0 => t * (1.0 - t),
                1 => 1.0 - 2.0 * t,
                2 => -2.0,
                _ => 0.0,
            },
        }
    }
}

/// `u(x) = Π_j g_j(x_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Separable {
    factors: Vec<Factor>,
}

impl Separable {
    pub fn new(factors: Vec<Factor>) -> Self {
        Self { factors }
    }

    /// `Π_j sin(π x_j)`
    pub fn sines(dim: usize) -> Self {
        Self::new(vec![Factor::Sine { k: 1.0 }; dim])
    }

    /// `Π_j x_j (1 - x_j)`
    pub fn bubble(dim: usize) -> Self {
        Self::new(vec![Factor::Bubble; dim])
    }

    pub fn dim(&self) -> usize {
        self.factors.len()
    }

    pub fn derivative(&self, x: &[f64], alpha: &[usize]) -> f64 {
        self.factors
            .iter()
            .zip(x)
            .zip(alpha)
            .map(|((g, &t), &a)| g.derivative(t, a))
            .product()
    }
}

impl ScalarField for Separable {
    fn value(&self, x: &[f64]) -> f64 {
        self.factors.iter().zip(x).map(|(g, &t)| g.derivative(t, 0)).product()
    }
}

impl SmoothField for Separable {
    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        let d = self.dim();
        let vals: Vec<f64> = (0..d).map(|j| self.factors[j].derivative(x[j], 0)).collect();
        for i in 0..d {
            let mut g = self.factors[i].derivative(x[i], 1);
            for (j, v) in vals.iter().enumerate() {
                if j != i {
                    g *= v;
                }
            }
            grad[i] = g;
        }
    }

    fn laplacian(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let vals: Vec<f64> = (0..d).map(|j| self.factors[j].derivative(x[j], 0)).collect();
        (0..d)
            .map(|i| {
                let mut g = self.factors[i].derivative(x[i], 2);
                for (j, v) in vals.iter().enumerate() {
                    if j != i {
                        g *= v;
                    }
                }
                g
            })
            .sum()
    }

    fn partial(&self, x: &[f64], alpha: &[usize]) -> Option<f64> {
        Some(self.derivative(x, alpha))
    }
}
