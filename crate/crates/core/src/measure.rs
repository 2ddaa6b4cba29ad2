//! Finite probability spaces and the weighted `L^p` norms measured against them.
//!
//! Every atom carries strictly positive mass, so "almost everywhere" reduces
//! to "at every atom" and the essential supremum is a plain maximum.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MASS_TOL: f64 = 1e-12;

/// Atoms `0..d` with masses `mu[i] > 0` summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpace")]
pub struct FiniteMeasureSpace {
    mu: Vec<f64>,
}

#[derive(Deserialize)]
struct RawSpace {
    mu: Vec<f64>,
}

impl TryFrom<RawSpace> for FiniteMeasureSpace {
    type Error = Error;

    fn try_from(raw: RawSpace) -> Result<Self> {
        FiniteMeasureSpace::new(raw.mu)
    }
}

impl FiniteMeasureSpace {
    pub fn new(mu: Vec<f64>) -> Result<Self> {
        if mu.is_empty() {
            return Err(Error::InvalidMeasure("space needs at least one atom".into()));
        }
        if let Some((i, w)) = mu.iter().enumerate().find(|(_, w)| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidMeasure(format!("atom {i} has non-positive mass {w}")));
        }
        let total: f64 = mu.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidMeasure(format!("masses sum to {total}, not 1")));
        }
        Ok(Self { mu })
    }

    pub fn uniform(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidMeasure("space needs at least one atom".into()));
        }
        Ok(Self {
            mu: vec![1.0 / d as f64; d],
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.mu
    }

    pub fn is_uniform(&self) -> bool {
        let w = 1.0 / self.dim() as f64;
        self.mu.iter().all(|m| (m - w).abs() <= MASS_TOL)
    }
}

/// A function on the atoms of a [`FiniteMeasureSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct Func {
    values: Vec<Complex64>,
    space: Arc<FiniteMeasureSpace>,
}

impl Func {
    pub fn new(space: &Arc<FiniteMeasureSpace>, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                actual: values.len(),
            });
        }
        Ok(Self {
            values,
            space: Arc::clone(space),
        })
    }

    pub fn from_real(space: &Arc<FiniteMeasureSpace>, values: &[f64]) -> Result<Self> {
        Self::new(space, values.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    pub fn zeros(space: &Arc<FiniteMeasureSpace>) -> Self {
        Self {
            values: vec![Complex64::new(0.0, 0.0); space.dim()],
            space: Arc::clone(space),
        }
    }

    pub fn constant(space: &Arc<FiniteMeasureSpace>, c: Complex64) -> Self {
        Self {
            values: vec![c; space.dim()],
            space: Arc::clone(space),
        }
    }

    /// Indicator of a single atom.
    pub fn unit(space: &Arc<FiniteMeasureSpace>, atom: usize) -> Self {
        let mut f = Self::zeros(space);
        f.values[atom] = Complex64::new(1.0, 0.0);
        f
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn space(&self) -> &Arc<FiniteMeasureSpace> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Same space, new values (length checked).
    pub fn with_values(&self, values: Vec<Complex64>) -> Result<Self> {
        Self::new(&self.space, values)
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * c).collect(),
            space: Arc::clone(&self.space),
        }
    }

    pub fn add(&self, other: &Func) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Func) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }

    pub fn abs(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| Complex64::new(v.norm(), 0.0)).collect(),
            space: Arc::clone(&self.space),
        }
    }

    fn zip(&self, other: &Func, op: impl Fn(Complex64, Complex64) -> Complex64) -> Result<Self> {
        if other.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(Self {
            values: self.values.iter().zip(&other.values).map(|(a, b)| op(*a, *b)).collect(),
            space: Arc::clone(&self.space),
        })
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::InvalidExponent(p));
    }
    Ok(())
}

/// `(Σ μ_i |f_i|^p)^{1/p}`.
pub fn norm_p(f: &Func, p: f64) -> Result<f64> {
    check_p(p)?;
    Ok(weighted_p_norm(f.space.weights(), &f.values, p))
}

pub fn norm_inf(f: &Func) -> f64 {
    sup_norm(&f.values)
}

/// Norm of `f` viewed as the functional `g ↦ Σ μ_i conj(f_i) g_i` on `L^p`,
/// i.e. the `L^{p'}` norm with `1/p + 1/p' = 1`.
pub fn dual_norm(phi: &Func, p: f64) -> Result<f64> {
    check_p(p)?;
    if p == 1.0 {
        return Ok(sup_norm(&phi.values));
    }
    let q = p / (p - 1.0);
    Ok(weighted_p_norm(phi.space.weights(), &phi.values, q))
}

/// `⟨φ, f⟩ = Σ μ_i conj(φ_i) f_i`; conjugate-linear in the functional slot.
pub fn pairing(phi: &Func, f: &Func) -> Result<Complex64> {
    if phi.dim() != f.dim() {
        return Err(Error::DimensionMismatch {
            expected: phi.dim(),
            actual: f.dim(),
        });
    }
    Ok(weighted_pairing(phi.space.weights(), &phi.values, &f.values))
}

pub(crate) fn weighted_pairing(mu: &[f64], phi: &[Complex64], f: &[Complex64]) -> Complex64 {
    mu.iter()
        .zip(phi)
        .zip(f)
        .map(|((w, a), b)| a.conj() * b * *w)
        .sum()
}

pub(crate) fn weighted_p_norm(mu: &[f64], values: &[Complex64], p: f64) -> f64 {
    if p == 1.0 {
        return mu.iter().zip(values).map(|(w, v)| w * v.norm()).sum();
    }
    if p == 2.0 {
        return mu.iter().zip(values).map(|(w, v)| w * v.norm_sqr()).sum::<f64>().sqrt();
    }
    // scale by the max to keep |f|^p away from overflow
    let scale = sup_norm(values);
    if scale == 0.0 {
        return 0.0;
    }
    let s: f64 = mu
        .iter()
        .zip(values)
        .map(|(w, v)| w * (v.norm() / scale).powf(p))
        .sum();
    scale * s.powf(1.0 / p)
}

pub(crate) fn sup_norm(values: &[Complex64]) -> f64 {
    values.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Seeded random function with entries uniform in `[-1, 1]` (real and, if
/// `complex`, imaginary parts).
pub fn random_func(space: &Arc<FiniteMeasureSpace>, seed: u64, complex: bool) -> Func {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let values = (0..space.dim())
        .map(|_| {
            let re = rng.gen_range(-1.0..1.0);
            let im = if complex { rng.gen_range(-1.0..1.0) } else { 0.0 };
            Complex64::new(re, im)
        })
        .collect();
    Func {
        values,
        space: Arc::clone(space),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn uniform(d: usize) -> Arc<FiniteMeasureSpace> {
        Arc::new(FiniteMeasureSpace::uniform(d).unwrap())
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(FiniteMeasureSpace::new(vec![]).is_err());
        assert!(FiniteMeasureSpace::new(vec![0.5, 0.0, 0.5]).is_err());
        assert!(FiniteMeasureSpace::new(vec![0.5, 0.6]).is_err());
        assert!(FiniteMeasureSpace::new(vec![-0.5, 1.5]).is_err());
        assert!(FiniteMeasureSpace::new(vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn norm_p_examples() {
        let s = uniform(2);
        let f = Func::from_real(&s, &[1.0, -1.0]).unwrap();
        assert!((norm_p(&f, 1.0).unwrap() - 1.0).abs() < 1e-15);
        let f = Func::from_real(&s, &[2.0, 0.0]).unwrap();
        assert!((norm_p(&f, 2.0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let s = Arc::new(FiniteMeasureSpace::new(vec![0.25, 0.75]).unwrap());
        let f = Func::from_real(&s, &[4.0, 0.0]).unwrap();
        assert!((norm_p(&f, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(norm_p(&f, 0.5), Err(Error::InvalidExponent(0.5)));
    }

    #[test]
    fn norm_inf_examples() {
        let s = uniform(2);
        assert_eq!(norm_inf(&Func::from_real(&s, &[1.0, -1.0]).unwrap()), 1.0);
        assert_eq!(norm_inf(&Func::zeros(&s)), 0.0);
        assert_eq!(norm_inf(&Func::new(&s, vec![c(0.0, 3.0), c(2.0, 0.0)]).unwrap()), 3.0);
    }

    #[test]
    fn dual_norm_examples() {
        let s = uniform(2);
        let phi = Func::from_real(&s, &[1.0, 1.0]).unwrap();
        assert!((dual_norm(&phi, 2.0).unwrap() - 1.0).abs() < 1e-15);
        let phi = Func::from_real(&s, &[1.0, 0.0]).unwrap();
        assert_eq!(dual_norm(&phi, 1.0).unwrap(), 1.0);
        let phi = Func::from_real(&s, &[2.0, -2.0]).unwrap();
        assert_eq!(dual_norm(&phi, 1.0).unwrap(), 2.0);
        assert!(dual_norm(&phi, f64::INFINITY).is_err());
        assert!(dual_norm(&phi, 0.9).is_err());
    }

    #[test]
    fn large_p_does_not_overflow() {
        let s = uniform(2);
        let f = Func::from_real(&s, &[1e200, 1e200]).unwrap();
        let n = norm_p(&f, 4.0).unwrap();
        assert!((n / 1e200 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn serde_shape() {
        let s: FiniteMeasureSpace = serde_json::from_str(r#"{"mu":[0.25,0.75]}"#).unwrap();
        assert_eq!(s.weights(), &[0.25, 0.75]);
        assert!(serde_json::from_str::<FiniteMeasureSpace>(r#"{"mu":[0.5,0.6]}"#).is_err());
    }
}
