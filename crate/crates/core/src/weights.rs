//! Weight sequences: trigonometric polynomials, linear sequences
//! `a_n = ⟨φ, T^n y⟩`, products and explicit lists, with the Cesàro and
//! Besicovitch diagnostics and weighted ergodic averages built on them.
//!
//! Sequences are indexed from `n = 1`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jdlg::{self, DEFAULT_UNIMODULAR_TOL};
use crate::measure::{self, Func};
use crate::operators::OperatorRep;
use crate::par::{self, Parallelism};
use crate::poly::PolynomialIndex;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const UNIT_TOL: f64 = 1e-12;
const PART_TOL: f64 = 1e-9;
const DS_TOL: f64 = 1e-9;
const EVAL_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JdlgPart {
    Stable,
    Reversible,
}

/// `a_n = ⟨φ, T^n y⟩` with `y` certified to lie in the tagged part of `T`.
#[derive(Debug, Clone)]
pub struct LinearSequence {
    t: OperatorRep,
    y: Func,
    phi: Func,
    tag: JdlgPart,
}

impl LinearSequence {
    pub fn operator(&self) -> &OperatorRep {
        &self.t
    }

    pub fn y(&self) -> &Func {
        &self.y
    }

    pub fn phi(&self) -> &Func {
        &self.phi
    }

    pub fn tag(&self) -> JdlgPart {
        self.tag
    }
}

#[derive(Debug, Clone)]
pub enum WeightSequence {
    TrigPoly { b: Vec<Complex64>, rho: Vec<Complex64> },
    Linear(Box<LinearSequence>),
    Product(Vec<WeightSequence>),
    Explicit(Vec<Complex64>),
}

impl WeightSequence {
    /// `a_n = Σ_j b_j ρ_j^n` with every `|ρ_j| = 1`.
    pub fn trig_poly(b: Vec<Complex64>, rho: Vec<Complex64>) -> Result<Self> {
        if b.len() != rho.len() {
            return Err(Error::DimensionMismatch {
                expected: b.len(),
                actual: rho.len(),
            });
        }
        if let Some((j, r)) = rho.iter().enumerate().find(|(_, r)| (r.norm() - 1.0).abs() > UNIT_TOL) {
            return Err(Error::InvalidArgument(format!(
                "rho[{}] has modulus {}, expected 1",
                j + 1,
                r.norm()
            )));
        }
        Ok(Self::TrigPoly { b, rho })
    }

    /// Single frequency `a_n = ρ^n`.
    pub fn eigen(rho: Complex64) -> Result<Self> {
        Self::trig_poly(vec![Complex64::new(1.0, 0.0)], vec![rho])
    }

    pub fn linear(t: &OperatorRep, y: &Func, phi: &Func, tag: JdlgPart) -> Result<Self> {
        t.require_dunford_schwartz("T", DS_TOL)?;
        if y.dim() != t.dim() || phi.dim() != t.dim() {
            return Err(Error::DimensionMismatch {
                expected: t.dim(),
                actual: if y.dim() != t.dim() { y.dim() } else { phi.dim() },
            });
        }
        let split = jdlg::spectral_split(t, DEFAULT_UNIMODULAR_TOL)?;
        let (fr, fs) = jdlg::split_function(&split, y)?;
        let (part, off) = match tag {
            JdlgPart::Stable => ("stable", &fr),
            JdlgPart::Reversible => ("reversible", &fs),
        };
        let residual = measure::norm_inf(off);
        if residual > PART_TOL * measure::norm_inf(y).max(1.0) {
            return Err(Error::NotInPart { part, residual });
        }
        Ok(Self::Linear(Box::new(LinearSequence {
            t: t.clone(),
            y: y.clone(),
            phi: phi.clone(),
            tag,
        })))
    }

    pub fn product(factors: Vec<WeightSequence>) -> Self {
        Self::Product(factors)
    }

    pub fn explicit(values: Vec<Complex64>) -> Self {
        Self::Explicit(values)
    }

    /// Values `a_n` at the given 1-based indices, in the given order.
    pub fn values_at(&self, indices: &[u64]) -> Result<Vec<Complex64>> {
        if indices.contains(&0) {
            return Err(Error::InvalidArgument("weight indices start at 1".into()));
        }
        match self {
            Self::TrigPoly { b, rho } => {
                let chunks = indices.len().div_ceil(EVAL_CHUNK);
                let parts = par::map_indices(Parallelism::default(), chunks, |c| {
                    indices[c * EVAL_CHUNK..((c + 1) * EVAL_CHUNK).min(indices.len())]
                        .iter()
                        .map(|&n| trig_value(b, rho, n))
                        .collect::<Vec<_>>()
                });
                Ok(parts.concat())
            }
            Self::Linear(lin) => {
                let mu = lin.y.space().weights();
                let mut out = vec![ZERO; indices.len()];
                for_each_power(&lin.t, lin.y.values(), indices, |i, g| {
                    out[i] = measure::weighted_pairing(mu, lin.phi.values(), g);
                });
                Ok(out)
            }
            Self::Product(factors) => {
                let mut out = vec![Complex64::new(1.0, 0.0); indices.len()];
                for w in factors {
                    for (o, v) in out.iter_mut().zip(w.values_at(indices)?) {
                        *o *= v;
                    }
                }
                Ok(out)
            }
            Self::Explicit(values) => indices
                .iter()
                .map(|&n| {
                    values.get(n as usize - 1).copied().ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "explicit weights have {} values, index {n} requested",
                            values.len()
                        ))
                    })
                })
                .collect(),
        }
    }
}

fn trig_value(b: &[Complex64], rho: &[Complex64], n: u64) -> Complex64 {
    b.iter().zip(rho).map(|(b, r)| b * complex_pow(*r, n)).sum()
}

/// Binary exponentiation; exact for `ρ ∈ {±1, ±i}`.
fn complex_pow(mut base: Complex64, mut n: u64) -> Complex64 {
    let mut acc = Complex64::new(1.0, 0.0);
    while n > 0 {
        if n & 1 == 1 {
            acc *= base;
        }
        base *= base;
        n >>= 1;
    }
    acc
}

/// Calls `visit(i, T^{exps[i]} x)` for every `i`, walking the orbit once in
/// increasing exponent order.
pub(crate) fn for_each_power<F>(t: &OperatorRep, x: &[Complex64], exps: &[u64], mut visit: F)
where
    F: FnMut(usize, &[Complex64]),
{
    let mut order: Vec<usize> = (0..exps.len()).collect();
    order.sort_by_key(|&i| exps[i]);
    let mut g = x.to_vec();
    let mut scratch = vec![ZERO; g.len()];
    let mut at = 0u64;
    for i in order {
        t.apply_power_in_place(&mut g, exps[i] - at, &mut scratch);
        at = exps[i];
        visit(i, &g);
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    Ok(())
}

fn sample_indices(subseq: Option<&PolynomialIndex>, n: usize) -> Result<Vec<u64>> {
    match subseq {
        Some(q) => q.positive_values(n),
        None => Ok((1..=n as u64).collect()),
    }
}

/// `(a_1, …, a_N)`.
pub fn eval_weights(w: &WeightSequence, n: usize) -> Result<Vec<Complex64>> {
    check_n(n)?;
    w.values_at(&(1..=n as u64).collect::<Vec<_>>())
}

/// `(1/N) Σ_{n≤N} |a_n|`.
pub fn cesaro_abs_mean(w: &WeightSequence, n: usize) -> Result<f64> {
    Ok(mean_abs(&eval_weights(w, n)?))
}

fn mean_abs(values: &[Complex64]) -> f64 {
    values.iter().map(|v| v.norm()).sum::<f64>() / values.len() as f64
}

/// Finite-`N` estimate `((1/N) Σ_{s≤N} |a_{q(s)}|^p)^{1/p}`, `q` the identity
/// when `subseq` is absent.
pub fn besicovitch_seminorm(w: &WeightSequence, p: f64, subseq: Option<&PolynomialIndex>, n: usize) -> Result<f64> {
    check_n(n)?;
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::InvalidExponent(p));
    }
    let values = w.values_at(&sample_indices(subseq, n)?)?;
    Ok(power_mean(&values, p))
}

fn power_mean(values: &[Complex64], p: f64) -> f64 {
    let s: f64 = values.iter().map(|v| v.norm().powf(p)).sum();
    (s / values.len() as f64).powf(1.0 / p)
}

/// Seminorm estimates at each checkpoint, from a single evaluation of the
/// longest prefix.
pub fn besicovitch_profile(
    w: &WeightSequence,
    p: f64,
    subseq: Option<&PolynomialIndex>,
    checkpoints: &[usize],
) -> Result<Vec<(usize, f64)>> {
    if checkpoints.is_empty() {
        return Ok(Vec::new());
    }
    if checkpoints[0] == 0 || checkpoints.windows(2).any(|c| c[1] <= c[0]) {
        return Err(Error::InvalidArgument("checkpoints must be positive and strictly increasing".into()));
    }
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::InvalidExponent(p));
    }
    let last = *checkpoints.last().expect("non-empty");
    let values = w.values_at(&sample_indices(subseq, last)?)?;
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut acc = 0.0;
    let mut next = 0;
    for (i, v) in values.iter().enumerate() {
        acc += v.norm().powf(p);
        if checkpoints[next] == i + 1 {
            out.push((i + 1, (acc / (i + 1) as f64).powf(1.0 / p)));
            next += 1;
        }
    }
    Ok(out)
}

/// `(1/N) Σ_{n≤N} a_{q(n)} T^{q(n)} f`, `q` the identity when absent.
pub fn weighted_average(
    t: &OperatorRep,
    f: &Func,
    w: &WeightSequence,
    subseq: Option<&PolynomialIndex>,
    n: usize,
) -> Result<Func> {
    check_n(n)?;
    t.require_dunford_schwartz("T", DS_TOL)?;
    if f.dim() != t.dim() {
        return Err(Error::DimensionMismatch {
            expected: t.dim(),
            actual: f.dim(),
        });
    }
    let exps = sample_indices(subseq, n)?;
    let a = w.values_at(&exps)?;
    // accumulate in index order so the rounding does not depend on q's shape
    let mut terms = vec![Vec::new(); n];
    for_each_power(t, f.values(), &exps, |i, g| {
        terms[i] = g.iter().map(|x| x * a[i]).collect();
    });
    let mut acc = vec![ZERO; f.dim()];
    for term in &terms {
        for (s, x) in acc.iter_mut().zip(term) {
            *s += x;
        }
    }
    f.with_values(acc.into_iter().map(|x| x / n as f64).collect())
}

/// Explicit sequence `⟨φ, A T^{q(n)} g⟩`, `n = 1..N`.
pub fn correlation_sequence(
    a: &OperatorRep,
    t: &OperatorRep,
    g: &Func,
    phi: &Func,
    subseq: Option<&PolynomialIndex>,
    n: usize,
) -> Result<WeightSequence> {
    check_n(n)?;
    t.require_dunford_schwartz("T", DS_TOL)?;
    for x in [g, phi] {
        if x.dim() != t.dim() {
            return Err(Error::DimensionMismatch {
                expected: t.dim(),
                actual: x.dim(),
            });
        }
    }
    let exps = sample_indices(subseq, n)?;
    let mu = g.space().weights();
    let mut out = vec![ZERO; n];
    let mut ag = vec![ZERO; g.dim()];
    for_each_power(t, g.values(), &exps, |i, x| {
        a.apply_into(x, &mut ag);
        out[i] = measure::weighted_pairing(mu, phi.values(), &ag);
    });
    Ok(WeightSequence::Explicit(out))
}
