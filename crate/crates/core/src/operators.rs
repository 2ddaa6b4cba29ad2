//! Dense operators on a finite probability space.
//!
//! An operator is a `d × d` complex matrix `M` acting by `f ↦ Mf`. Norms are
//! the exact weighted operator norms on `L^1(μ)` and `L^∞(μ)`; both are cached
//! at construction.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{FiniteMeasureSpace, Func};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };
const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    L1,
    Linf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomKind {
    DoublyStochastic,
    SignedContraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DsReport {
    pub is_ds: bool,
    pub l1: f64,
    pub linf: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorRep {
    d: usize,
    /// Row-major entries.
    entries: Vec<Complex64>,
    space: Arc<FiniteMeasureSpace>,
    l1: f64,
    linf: f64,
}

impl OperatorRep {
    /// Builds an operator from row-major entries.
    pub fn new(space: &Arc<FiniteMeasureSpace>, entries: Vec<Complex64>) -> Result<Self> {
        let d = space.dim();
        if entries.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                actual: entries.len(),
            });
        }
        let (l1, linf) = norms(space.weights(), &entries);
        Ok(Self {
            d,
            entries,
            space: Arc::clone(space),
            l1,
            linf,
        })
    }

    pub fn from_rows(space: &Arc<FiniteMeasureSpace>, rows: &[Vec<Complex64>]) -> Result<Self> {
        if rows.len() != space.dim() || rows.iter().any(|r| r.len() != space.dim()) {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                actual: rows.len(),
            });
        }
        Self::new(space, rows.concat())
    }

    pub fn from_real_rows(space: &Arc<FiniteMeasureSpace>, rows: &[&[f64]]) -> Result<Self> {
        let rows: Vec<Vec<Complex64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| Complex64::new(x, 0.0)).collect())
            .collect();
        Self::from_rows(space, &rows)
    }

    pub fn from_matrix(space: &Arc<FiniteMeasureSpace>, m: &DMatrix<Complex64>) -> Result<Self> {
        let d = space.dim();
        if m.nrows() != d || m.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: m.nrows().max(m.ncols()),
            });
        }
        let mut entries = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                entries.push(m[(i, j)]);
            }
        }
        Self::new(space, entries)
    }

    pub fn identity(space: &Arc<FiniteMeasureSpace>) -> Self {
        let d = space.dim();
        let mut e = vec![ZERO; d * d];
        for i in 0..d {
            e[i * d + i] = ONE;
        }
        Self::new(space, e).expect("square by construction")
    }

    pub fn zero(space: &Arc<FiniteMeasureSpace>) -> Self {
        let d = space.dim();
        Self::new(space, vec![ZERO; d * d]).expect("square by construction")
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn space(&self) -> &Arc<FiniteMeasureSpace> {
        &self.space
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        self.entries[i * self.d + j]
    }

    pub fn to_matrix(&self) -> DMatrix<Complex64> {
        DMatrix::from_row_slice(self.d, self.d, &self.entries)
    }

    pub fn apply(&self, f: &Func) -> Result<Func> {
        if f.dim() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                actual: f.dim(),
            });
        }
        let mut out = vec![ZERO; self.d];
        self.apply_into(f.values(), &mut out);
        f.with_values(out)
    }

    /// `y = M x` on raw slices; both of length `d`.
    #[inline]
    pub fn apply_into(&self, x: &[Complex64], y: &mut [Complex64]) {
        debug_assert_eq!(x.len(), self.d);
        debug_assert_eq!(y.len(), self.d);
        for (row, yi) in self.entries.chunks_exact(self.d).zip(y.iter_mut()) {
            let mut acc = ZERO;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *yi = acc;
        }
    }

    /// In-place `x ← M x` using `scratch` as a temporary.
    #[inline]
    pub fn apply_in_place(&self, x: &mut [Complex64], scratch: &mut [Complex64]) {
        self.apply_into(x, scratch);
        x.copy_from_slice(scratch);
    }

    /// In-place `x ← M^power x`.
    pub fn apply_power_in_place(&self, x: &mut [Complex64], power: u64, scratch: &mut [Complex64]) {
        for _ in 0..power {
            self.apply_in_place(x, scratch);
        }
    }

    pub fn operator_norm(&self, which: NormKind) -> f64 {
        match which {
            NormKind::L1 => self.l1,
            NormKind::Linf => self.linf,
        }
    }

    /// Operator norm on the μ-weighted `L^2`: the largest singular value of
    /// `D^{1/2} M D^{-1/2}`.
    pub fn l2_norm(&self) -> f64 {
        let mu = self.space.weights();
        let m = DMatrix::from_fn(self.d, self.d, |i, j| {
            self.entry(i, j) * (mu[i].sqrt() / mu[j].sqrt())
        });
        m.singular_values().iter().cloned().fold(0.0, f64::max)
    }

    pub fn is_dunford_schwartz(&self, tol: f64) -> DsReport {
        DsReport {
            is_ds: self.l1 <= 1.0 + tol && self.linf <= 1.0 + tol,
            l1: self.l1,
            linf: self.linf,
            tol,
        }
    }

    /// Returns an error naming the operator when it is not Dunford-Schwartz.
    pub fn require_dunford_schwartz(&self, name: &str, tol: f64) -> Result<()> {
        let r = self.is_dunford_schwartz(tol);
        if r.is_ds {
            Ok(())
        } else {
            Err(Error::NotDunfordSchwartz {
                name: name.to_string(),
                l1: r.l1,
                linf: r.linf,
            })
        }
    }

    /// Linear modulus; on an atomic space this is the entrywise absolute value.
    pub fn modulus(&self) -> Self {
        let e = self.entries.iter().map(|z| Complex64::new(z.norm(), 0.0)).collect();
        Self::new(&self.space, e).expect("same shape")
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        Self::new(&self.space, self.entries.iter().map(|z| z * c).collect()).expect("same shape")
    }

    /// Composition `self ∘ rhs`.
    pub fn compose(&self, rhs: &OperatorRep) -> Result<Self> {
        if rhs.d != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                actual: rhs.d,
            });
        }
        let d = self.d;
        let mut out = vec![ZERO; d * d];
        for i in 0..d {
            for k in 0..d {
                let a = self.entries[i * d + k];
                if a == ZERO {
                    continue;
                }
                for j in 0..d {
                    out[i * d + j] += a * rhs.entries[k * d + j];
                }
            }
        }
        Self::new(&self.space, out)
    }

    /// Matrix power; for certification and tests, never used by the averaging engine.
    pub fn matrix_power(&self, n: u32) -> Self {
        let mut acc = Self::identity(&self.space);
        for _ in 0..n {
            acc = acc.compose(self).expect("same space");
        }
        acc
    }

    pub fn sub(&self, rhs: &OperatorRep) -> Result<Self> {
        if rhs.d != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                actual: rhs.d,
            });
        }
        Self::new(
            &self.space,
            self.entries.iter().zip(&rhs.entries).map(|(a, b)| a - b).collect(),
        )
    }

    /// Adjoint with respect to the μ-weighted pairing `⟨φ, f⟩ = Σ μ_i conj(φ_i) f_i`,
    /// i.e. `D^{-1} M^H D`.
    pub fn adjoint(&self) -> Self {
        let d = self.d;
        let mu = self.space.weights();
        let mut out = vec![ZERO; d * d];
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = self.entries[j * d + i].conj() * (mu[j] / mu[i]);
            }
        }
        Self::new(&self.space, out).expect("same shape")
    }

    pub fn to_data(&self, space_name: &str) -> OperatorData {
        OperatorData {
            d: self.d,
            space: space_name.to_string(),
            entries: self.entries.iter().map(|z| [z.re, z.im]).collect(),
        }
    }

    pub fn from_data(space: &Arc<FiniteMeasureSpace>, data: &OperatorData) -> Result<Self> {
        if data.d != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                actual: data.d,
            });
        }
        Self::new(space, data.entries.iter().map(|[re, im]| Complex64::new(*re, *im)).collect())
    }
}

/// JSON form: `{"d":2,"space":"grid","entries":[[re,im],...]}`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorData {
    pub d: usize,
    pub space: String,
    pub entries: Vec<[f64; 2]>,
}

fn norms(mu: &[f64], e: &[Complex64]) -> (f64, f64) {
    let d = mu.len();
    let linf = e
        .chunks_exact(d)
        .map(|row| row.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let l1 = (0..d)
        .map(|j| (0..d).map(|i| mu[i] * e[i * d + j].norm()).sum::<f64>() / mu[j])
        .fold(0.0, f64::max);
    (l1, linf)
}

/// Koopman operator `(Tf)_i = f_{σ(i)}` of an atom map (0-based).
///
/// Rejects maps that do not preserve μ atom by atom.
pub fn koopman_from_map(map: &[usize], space: &Arc<FiniteMeasureSpace>) -> Result<OperatorRep> {
    let d = space.dim();
    if map.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: map.len(),
        });
    }
    let mu = space.weights();
    let mut preimage = vec![0.0; d];
    for (i, &s) in map.iter().enumerate() {
        if s >= d {
            return Err(Error::MapOutOfRange { index: i, value: s, d });
        }
        preimage[s] += mu[i];
    }
    for (atom, (&p, &m)) in preimage.iter().zip(mu).enumerate() {
        if (p - m).abs() > MASS_TOL {
            return Err(Error::NotMeasurePreserving {
                atom,
                preimage_mass: p,
                mass: m,
            });
        }
    }
    let mut e = vec![ZERO; d * d];
    for (i, &s) in map.iter().enumerate() {
        e[i * d + s] = ONE;
    }
    OperatorRep::new(space, e)
}

/// Koopman operator of the rotation `i ↦ i + shift (mod d)` on a uniform space.
pub fn cyclic_shift(space: &Arc<FiniteMeasureSpace>, shift: usize) -> Result<OperatorRep> {
    let d = space.dim();
    let map: Vec<usize> = (0..d).map(|i| (i + shift) % d).collect();
    koopman_from_map(&map, space)
}

/// Left-endpoint discretisation of `(Vf)(x) = ∫_0^x f`: `(Vf)_i = (1/d) Σ_{j<i} f_j`.
pub fn volterra_discrete(d: usize) -> Result<OperatorRep> {
    let space = Arc::new(FiniteMeasureSpace::uniform(d)?);
    volterra_on(&space)
}

pub fn volterra_on(space: &Arc<FiniteMeasureSpace>) -> Result<OperatorRep> {
    if !space.is_uniform() {
        return Err(Error::InvalidArgument("Volterra discretisation needs a uniform grid".into()));
    }
    let d = space.dim();
    let h = Complex64::new(1.0 / d as f64, 0.0);
    let mut e = vec![ZERO; d * d];
    for i in 0..d {
        for j in 0..i {
            e[i * d + j] = h;
        }
    }
    OperatorRep::new(space, e)
}

const MIXTURE_SIZE: usize = 3;

/// Reproducible random Dunford-Schwartz operator on the uniform space of size `d`.
///
/// Magnitudes come from a convex combination of random permutation matrices,
/// so both weighted norms equal one up to rounding. The signed variant
/// attaches an independent random phase to every entry.
pub fn random_ds(d: usize, seed: u64, kind: RandomKind) -> Result<OperatorRep> {
    let space = Arc::new(FiniteMeasureSpace::uniform(d)?);
    random_ds_on(&space, seed, kind)
}

pub fn random_ds_on(space: &Arc<FiniteMeasureSpace>, seed: u64, kind: RandomKind) -> Result<OperatorRep> {
    if !space.is_uniform() {
        return Err(Error::InvalidArgument("random_ds is defined on uniform spaces".into()));
    }
    let d = space.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..MIXTURE_SIZE).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut mag = vec![0.0; d * d];
    let mut perm: Vec<usize> = (0..d).collect();
    for w in &raw {
        perm.shuffle(&mut rng);
        for (i, &p) in perm.iter().enumerate() {
            mag[i * d + p] += w / total;
        }
    }
    let entries = mag
        .into_iter()
        .map(|m| match kind {
            RandomKind::DoublyStochastic => Complex64::new(m, 0.0),
            RandomKind::SignedContraction => {
                let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                Complex64::from_polar(m, theta)
            }
        })
        .collect();
    OperatorRep::new(space, entries)
}
