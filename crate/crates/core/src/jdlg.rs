//! Reversible/stable splitting `E = E_r ⊕ E_s` of a Dunford-Schwartz operator.
//!
//! `E_r` is spanned by eigenvectors with unimodular eigenvalues; `E_s` is the
//! complementary invariant subspace. On a finite space both are spectral
//! subspaces, so the projector onto `E_r` along `E_s` is assembled from right
//! and left eigenvectors, `P = V (W^H V)^{-1} W^H`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::{self, Func};
use crate::operators::{NormKind, OperatorRep};

pub const DEFAULT_UNIMODULAR_TOL: f64 = 1e-8;
/// Eigenvalues closer than this are grouped together.
pub const CLUSTER_TOL: f64 = 1e-8;
/// Largest singular value of `T - λI` still counted as a null direction.
const NULL_TOL: f64 = 1e-6;
const DS_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct SpectralSplit {
    eigenvalues: Vec<Complex64>,
    reversible: Vec<(Complex64, Func)>,
    stable_basis: Vec<Func>,
    projector_r: OperatorRep,
    unimodular_tol: f64,
}

impl SpectralSplit {
    /// All eigenvalues of the operator, in the order returned by the Schur form.
    pub fn eigenvalues(&self) -> &[Complex64] {
        &self.eigenvalues
    }

    /// Eigenvectors spanning `E_r`, each with its unimodular eigenvalue.
    pub fn reversible_basis(&self) -> &[(Complex64, Func)] {
        &self.reversible
    }

    pub fn stable_basis(&self) -> &[Func] {
        &self.stable_basis
    }

    pub fn projector_r(&self) -> &OperatorRep {
        &self.projector_r
    }

    pub fn unimodular_tol(&self) -> f64 {
        self.unimodular_tol
    }

    pub fn dim_reversible(&self) -> usize {
        self.reversible.len()
    }

    pub fn dim_stable(&self) -> usize {
        self.stable_basis.len()
    }

    pub fn to_export(&self) -> SplitExport {
        let pair = |z: &Complex64| [z.re, z.im];
        SplitExport {
            dim_reversible: self.dim_reversible(),
            dim_stable: self.dim_stable(),
            eigenvalues: self.eigenvalues.iter().map(pair).collect(),
            reversible_eigenvalues: self.reversible.iter().map(|(l, _)| pair(l)).collect(),
            reversible_basis: self
                .reversible
                .iter()
                .map(|(_, g)| g.values().iter().map(pair).collect())
                .collect(),
            stable_basis: self
                .stable_basis
                .iter()
                .map(|g| g.values().iter().map(pair).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitExport {
    pub dim_reversible: usize,
    pub dim_stable: usize,
    pub eigenvalues: Vec<[f64; 2]>,
    pub reversible_eigenvalues: Vec<[f64; 2]>,
    pub reversible_basis: Vec<Vec<[f64; 2]>>,
    pub stable_basis: Vec<Vec<[f64; 2]>>,
}

pub fn spectral_split(t: &OperatorRep, unimodular_tol: f64) -> Result<SpectralSplit> {
    t.require_dunford_schwartz("T", DS_TOL)?;
    let d = t.dim();
    let space = t.space();
    let m = t.to_matrix();
    let eigenvalues = eigenvalues(&m)?;

    let unimodular: Vec<Complex64> = eigenvalues
        .iter()
        .cloned()
        .filter(|l| l.norm() >= 1.0 - unimodular_tol)
        .collect();

    let (lambdas, right_cols, left_cols) = unimodular_eigenvectors(&m, &unimodular)?;
    let mut reversible = Vec::with_capacity(lambdas.len());
    for (lambda, right) in lambdas.iter().zip(&right_cols) {
        reversible.push((*lambda, Func::new(space, right.iter().cloned().collect())?));
    }

    let r = right_cols.len();
    let projector = if r == 0 {
        DMatrix::<Complex64>::zeros(d, d)
    } else {
        let v = DMatrix::from_columns(&right_cols);
        let w = DMatrix::from_columns(&left_cols);
        let gram = w.adjoint() * &v;
        let inv = gram.try_inverse().ok_or(Error::EigenFailure)?;
        &v * inv * w.adjoint()
    };
    let projector_r = OperatorRep::from_matrix(space, &projector)?;

    // E_s = range(I - P); its nonzero singular values are >= 1.
    let mut stable_basis = Vec::with_capacity(d - r);
    if r < d {
        let complement = DMatrix::<Complex64>::identity(d, d) - &projector;
        let svd = complement.svd(true, false);
        let u = svd.u.as_ref().ok_or(Error::EigenFailure)?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        for &idx in &order[..d - r] {
            stable_basis.push(Func::new(space, u.column(idx).iter().cloned().collect())?);
        }
    }

    Ok(SpectralSplit {
        eigenvalues,
        reversible,
        stable_basis,
        projector_r,
        unimodular_tol,
    })
}

/// Schur eigenvalues. Shifted QR can stall on permutation-like matrices, so
/// on failure the matrix is conjugated by seeded random unitaries first.
fn eigenvalues(m: &DMatrix<Complex64>) -> Result<Vec<Complex64>> {
    let max_iter = 100 * m.nrows().max(1);
    let schur = |a: DMatrix<Complex64>| {
        a.try_schur(f64::EPSILON, max_iter)
            .and_then(|s| s.eigenvalues())
            .map(|e| e.iter().cloned().collect::<Vec<_>>())
    };
    if let Some(e) = schur(m.clone()) {
        return Ok(e);
    }
    let d = m.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..4 {
        let g = DMatrix::from_fn(d, d, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let q = g.qr().q();
        if let Some(e) = schur(q.adjoint() * m * &q) {
            return Ok(e);
        }
    }
    Err(Error::EigenFailure)
}

type EigenBases = (Vec<Complex64>, Vec<DVector<Complex64>>, Vec<DVector<Complex64>>);

/// Right and left eigenvectors for every cluster of `unimodular`; errors when a
/// cluster's geometric multiplicity falls short of its size.
fn unimodular_eigenvectors(m: &DMatrix<Complex64>, unimodular: &[Complex64]) -> Result<EigenBases> {
    let d = m.nrows();
    let mut lambdas = Vec::new();
    let mut right_cols = Vec::new();
    let mut left_cols = Vec::new();
    for cluster in cluster_eigenvalues(unimodular) {
        let k = cluster.len();
        let lambda = cluster.iter().sum::<Complex64>() / k as f64;
        let shifted = m - DMatrix::<Complex64>::identity(d, d) * lambda;
        let svd = shifted.svd(true, true);
        let u = svd.u.as_ref().ok_or(Error::EigenFailure)?;
        let v_t = svd.v_t.as_ref().ok_or(Error::EigenFailure)?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
        let sigma_k = svd.singular_values[order[k - 1]];
        if sigma_k > NULL_TOL {
            return Err(Error::DefectiveEigenvalue {
                re: lambda.re,
                im: lambda.im,
                algebraic: k,
                sigma: sigma_k,
            });
        }
        for &idx in &order[..k] {
            lambdas.push(lambda);
            right_cols.push(v_t.row(idx).adjoint());
            left_cols.push(u.column(idx).into_owned());
        }
    }
    Ok((lambdas, right_cols, left_cols))
}

/// Single-linkage grouping of eigenvalues within [`CLUSTER_TOL`].
fn cluster_eigenvalues(values: &[Complex64]) -> Vec<Vec<Complex64>> {
    let n = values.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if (values[i] - values[j]).norm() <= CLUSTER_TOL {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<(usize, Vec<Complex64>)> = Vec::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        match groups.iter_mut().find(|(r, _)| *r == root) {
            Some((_, g)) => g.push(values[i]),
            None => groups.push((root, vec![values[i]])),
        }
    }
    groups.into_iter().map(|(_, g)| g).collect()
}

/// `(P f, f - P f)`.
pub fn split_function(s: &SpectralSplit, f: &Func) -> Result<(Func, Func)> {
    let fr = s.projector_r.apply(f)?;
    let fs = f.sub(&fr)?;
    Ok((fr, fs))
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitInvariants {
    pub dims_sum: usize,
    pub idempotence_error: f64,
    pub commutation_error: f64,
    pub max_eigen_residual: f64,
    pub max_eigen_modulus_gap: f64,
}

impl SplitInvariants {
    pub fn holds(&self, d: usize, tol: f64, unimodular_tol: f64) -> bool {
        self.dims_sum == d
            && self.idempotence_error <= tol
            && self.commutation_error <= tol
            && self.max_eigen_residual <= tol
            && self.max_eigen_modulus_gap <= unimodular_tol
    }
}

pub fn split_invariants(t: &OperatorRep, s: &SpectralSplit) -> Result<SplitInvariants> {
    let p = &s.projector_r;
    let p2 = p.compose(p)?;
    let idempotence_error = p2.sub(p)?.operator_norm(NormKind::Linf);
    let commutation_error = t.compose(p)?.sub(&p.compose(t)?)?.operator_norm(NormKind::Linf);
    let mut max_eigen_residual: f64 = 0.0;
    let mut max_eigen_modulus_gap: f64 = 0.0;
    for (lambda, g) in &s.reversible {
        let res = t.apply(g)?.sub(&g.scale(*lambda))?;
        max_eigen_residual = max_eigen_residual.max(measure::norm_p(&res, 2.0)?);
        max_eigen_modulus_gap = max_eigen_modulus_gap.max((lambda.norm() - 1.0).max(1.0 - lambda.norm()));
    }
    Ok(SplitInvariants {
        dims_sum: s.dim_reversible() + s.dim_stable(),
        idempotence_error,
        commutation_error,
        max_eigen_residual,
        max_eigen_modulus_gap,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayProfile {
    /// `(N, D_N)` with `D_N = (1/N) Σ_{n≤N} |⟨φ, T^n f_s⟩|`.
    pub checkpoints: Vec<(usize, f64)>,
    pub stable_norm: f64,
    pub decays: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitVerification {
    pub invariants: SplitInvariants,
    pub invariants_hold: bool,
    pub trials: Vec<DecayProfile>,
    pub all_decay: bool,
}

const DECAY_RATIO: f64 = 0.05;
const NEGLIGIBLE: f64 = 1e-12;

/// Re-checks the split invariants and samples Cesàro correlation means on the
/// stable part for `trials` random `(f, φ)` pairs up to horizon `horizon`.
pub fn verify_split(
    t: &OperatorRep,
    s: &SpectralSplit,
    trials: usize,
    horizon: usize,
    seed: u64,
) -> Result<SplitVerification> {
    let invariants = split_invariants(t, s)?;
    let invariants_hold = invariants.holds(t.dim(), 1e-9, s.unimodular_tol.max(1e-12));
    let space = t.space();
    let d = t.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_func = |rng: &mut ChaCha8Rng| {
        Func::new(
            space,
            (0..d)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect(),
        )
    };
    let marks = checkpoints(horizon);
    let mut profiles = Vec::with_capacity(trials);
    for _ in 0..trials {
        let f = random_func(&mut rng)?;
        let phi = random_func(&mut rng)?;
        let (_, fs) = split_function(s, &f)?;
        let stable_norm = measure::norm_inf(&fs);
        let mut g = fs.values().to_vec();
        let mut scratch = vec![Complex64::new(0.0, 0.0); d];
        let mut running = 0.0;
        let mut out = Vec::with_capacity(marks.len());
        let mut next = 0;
        for n in 1..=horizon {
            t.apply_in_place(&mut g, &mut scratch);
            running += measure::weighted_pairing(space.weights(), phi.values(), &g).norm();
            if next < marks.len() && marks[next] == n {
                out.push((n, running / n as f64));
                next += 1;
            }
        }
        let decays = decay_holds(&out, s.dim_stable(), stable_norm);
        profiles.push(DecayProfile {
            checkpoints: out,
            stable_norm,
            decays,
        });
    }
    let all_decay = profiles.iter().all(|p| p.decays);
    Ok(SplitVerification {
        invariants,
        invariants_hold,
        trials: profiles,
        all_decay,
    })
}

/// Powers of two up to `horizon`, plus `horizon` itself.
fn checkpoints(horizon: usize) -> Vec<usize> {
    let mut v: Vec<usize> = std::iter::successors(Some(1usize), |n| n.checked_mul(2))
        .take_while(|&n| n <= horizon)
        .collect();
    if v.last() != Some(&horizon) && horizon > 0 {
        v.push(horizon);
    }
    v
}

fn decay_holds(profile: &[(usize, f64)], dim_stable: usize, stable_norm: f64) -> bool {
    if dim_stable == 0 || stable_norm <= NEGLIGIBLE {
        return profile.iter().all(|(_, v)| *v <= NEGLIGIBLE);
    }
    let Some(&(_, first)) = profile.first() else {
        return true;
    };
    let last = profile.last().map(|p| p.1).unwrap_or(first);
    let tail = &profile[profile.len().saturating_sub(3)..];
    let tail_decreasing = tail.windows(2).all(|w| w[1].1 <= w[0].1 + NEGLIGIBLE);
    tail_decreasing && last <= DECAY_RATIO * first + NEGLIGIBLE
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::measure::FiniteMeasureSpace;
    use crate::operators::{cyclic_shift, random_ds, RandomKind};

    fn uniform(d: usize) -> Arc<FiniteMeasureSpace> {
        Arc::new(FiniteMeasureSpace::uniform(d).unwrap())
    }

    #[test]
    fn half_identity_is_stable() {
        let s = uniform(3);
        let t = OperatorRep::identity(&s).scaled(Complex64::new(0.5, 0.0));
        let split = spectral_split(&t, DEFAULT_UNIMODULAR_TOL).unwrap();
        assert_eq!(split.dim_reversible(), 0);
        assert_eq!(split.dim_stable(), 3);
        let f = Func::from_real(&s, &[1.0, -2.0, 3.0]).unwrap();
        let (fr, fs) = split_function(&split, &f).unwrap();
        assert_eq!(fr, Func::zeros(&s));
        assert_eq!(fs, f);
    }

    #[test]
    fn identity_is_reversible() {
        let s = uniform(5);
        let split = spectral_split(&OperatorRep::identity(&s), DEFAULT_UNIMODULAR_TOL).unwrap();
        assert_eq!(split.dim_reversible(), 5);
        assert_eq!(split.dim_stable(), 0);
    }

    #[test]
    fn swap_has_two_unimodular_eigenvalues() {
        let s = uniform(2);
        let swap = OperatorRep::from_real_rows(&s, &[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        let split = spectral_split(&swap, DEFAULT_UNIMODULAR_TOL).unwrap();
        assert_eq!(split.dim_reversible(), 2);
        let mut eig: Vec<f64> = split.reversible_basis().iter().map(|(l, _)| l.re).collect();
        eig.sort_by(f64::total_cmp);
        assert!((eig[0] + 1.0).abs() < 1e-12 && (eig[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_split_is_explicit() {
        let s = uniform(2);
        let t = OperatorRep::from_real_rows(&s, &[&[1.0, 0.0], &[0.0, 0.3]]).unwrap();
        let split = spectral_split(&t, DEFAULT_UNIMODULAR_TOL).unwrap();
        let f = Func::from_real(&s, &[1.0, 1.0]).unwrap();
        let (fr, fs) = split_function(&split, &f).unwrap();
        let expect_r = Func::from_real(&s, &[1.0, 0.0]).unwrap();
        let expect_s = Func::from_real(&s, &[0.0, 1.0]).unwrap();
        assert!(measure::norm_inf(&fr.sub(&expect_r).unwrap()) < 1e-9);
        assert!(measure::norm_inf(&fs.sub(&expect_s).unwrap()) < 1e-9);
    }

    #[test]
    fn reversible_functions_are_fixed() {
        let t = cyclic_shift(&uniform(6), 1).unwrap();
        let split = spectral_split(&t, DEFAULT_UNIMODULAR_TOL).unwrap();
        for (_, g) in split.reversible_basis() {
            let (fr, fs) = split_function(&split, g).unwrap();
            assert!(measure::norm_inf(&fr.sub(g).unwrap()) < 1e-9);
            assert!(measure::norm_inf(&fs) < 1e-9);
        }
    }

    #[test]
    fn defective_unimodular_eigenvalue_is_rejected() {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        let jordan = DMatrix::from_row_slice(2, 2, &[one, one, zero, one]);
        let err = unimodular_eigenvectors(&jordan, &[one, one]).unwrap_err();
        assert!(matches!(err, Error::DefectiveEigenvalue { algebraic: 2, .. }));
        let diag = DMatrix::from_row_slice(2, 2, &[one, zero, zero, one]);
        let (l, r, w) = unimodular_eigenvectors(&diag, &[one, one]).unwrap();
        assert_eq!((l.len(), r.len(), w.len()), (2, 2, 2));
    }

    #[test]
    fn non_ds_rejected() {
        let s = uniform(2);
        let t = OperatorRep::from_real_rows(&s, &[&[1.0, 1.0], &[0.0, 0.0]]).unwrap();
        assert!(matches!(
            spectral_split(&t, DEFAULT_UNIMODULAR_TOL),
            Err(Error::NotDunfordSchwartz { .. })
        ));
    }

    #[test]
    fn verify_split_examples() {
        let s = uniform(4);
        let contraction = random_ds(4, 3, RandomKind::SignedContraction)
            .unwrap()
            .scaled(Complex64::new(0.8, 0.0));
        let split = spectral_split(&contraction, DEFAULT_UNIMODULAR_TOL).unwrap();
        let report = verify_split(&contraction, &split, 4, 4096, 1).unwrap();
        assert!(report.invariants_hold);
        assert!(report.all_decay);
        for trial in &report.trials {
            // summable correlations, so the Cesàro mean falls like 1/N
            assert!(trial.checkpoints.last().unwrap().1 < 1e-2);
        }

        let id = OperatorRep::identity(&s);
        let split = spectral_split(&id, DEFAULT_UNIMODULAR_TOL).unwrap();
        let report = verify_split(&id, &split, 3, 64, 2).unwrap();
        assert!(report.trials.iter().all(|t| t.checkpoints.iter().all(|c| c.1 == 0.0)));

        let s2 = uniform(2);
        let swap = OperatorRep::from_real_rows(&s2, &[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        let split = spectral_split(&swap, DEFAULT_UNIMODULAR_TOL).unwrap();
        let report = verify_split(&swap, &split, 3, 64, 3).unwrap();
        assert!(report.all_decay);
        assert!(report.trials.iter().all(|t| t.checkpoints.iter().all(|c| c.1 < 1e-12)));
    }

    #[test]
    fn clusters_group_close_values() {
        let v = vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(1.0 + 1e-12, 0.0),
            Complex64::new(-1.0, 0.0),
        ];
        let c = cluster_eigenvalues(&v);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].len(), 2);
    }

    #[test]
    fn checkpoint_schedule() {
        assert_eq!(checkpoints(8), vec![1, 2, 4, 8]);
        assert_eq!(checkpoints(10), vec![1, 2, 4, 8, 10]);
    }
}
