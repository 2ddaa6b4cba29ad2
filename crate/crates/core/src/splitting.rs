//! Condition (A1) certificates and the recursive splitting tree used to bound
//! entangled averages.
//!
//! A certificate for `(A, T, f)` is a subspace `U = span(b_1..b_ℓ)` such that
//! every sampled orbit element `A T^n f` is within `ε` in `L^∞` of `U`, after
//! projecting along the μ-orthogonal complement `R`. The tree repeats this
//! stage by stage, handing each basis vector a budget
//! `c_w = c_parent / (u_parent · ℓ_parent)`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::engine::{self, Chain, EntangledProblem, EvalOptions, Stage, StageOp};
use crate::error::{Error, Result};
use crate::jdlg::{self, SpectralSplit, DEFAULT_UNIMODULAR_TOL};
use crate::measure::{self, Func};
use crate::operators::{NormKind, OperatorRep};
use crate::par::{self, Parallelism};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };
const DS_TOL: f64 = 1e-9;
const PART_TOL: f64 = 1e-9;
const ARITH_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct A1Options {
    /// Orbit samples `n = 1..=n_orbit`; `None` means `4·d`.
    pub n_orbit: Option<usize>,
    /// Exponent of the ambient `L^p` used for `u = ‖f‖·‖A^*‖·max‖φ_i‖`.
    pub p: f64,
}

impl Default for A1Options {
    fn default() -> Self {
        Self { n_orbit: None, p: 2.0 }
    }
}

#[derive(Debug, Clone)]
pub struct A1Certificate {
    f: Func,
    basis: Vec<Func>,
    duals: Vec<Func>,
    epsilon_requested: f64,
    epsilon_achieved: f64,
    u_const: f64,
    n_orbit: usize,
    p: f64,
    singular_values: Vec<f64>,
}

impl A1Certificate {
    pub fn seed(&self) -> &Func {
        &self.f
    }

    /// `b_1..b_ℓ`, orthonormal in the μ-weighted pairing.
    pub fn basis(&self) -> &[Func] {
        &self.basis
    }

    /// `φ_i` with `⟨φ_i, b_j⟩ = δ_ij` and `⟨φ_i, r⟩ = 0` on the complement.
    pub fn duals(&self) -> &[Func] {
        &self.duals
    }

    pub fn ell(&self) -> usize {
        self.basis.len()
    }

    /// Dimension of the μ-orthogonal complement `R`.
    pub fn complement_dim(&self) -> usize {
        self.f.dim() - self.ell()
    }

    pub fn epsilon_requested(&self) -> f64 {
        self.epsilon_requested
    }

    /// Largest sampled `‖r_n‖_∞`.
    pub fn epsilon_achieved(&self) -> f64 {
        self.epsilon_achieved
    }

    pub fn u_const(&self) -> f64 {
        self.u_const
    }

    pub fn n_orbit(&self) -> usize {
        self.n_orbit
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Weighted singular values of the orbit matrix, descending.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn to_export(&self) -> CertificateExport {
        CertificateExport {
            ell: self.ell(),
            complement_dim: self.complement_dim(),
            epsilon_requested: self.epsilon_requested,
            epsilon_achieved: self.epsilon_achieved,
            u_const: self.u_const,
            n_orbit: self.n_orbit,
            p: self.p,
            singular_values: self.singular_values.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateExport {
    pub ell: usize,
    pub complement_dim: usize,
    pub epsilon_requested: f64,
    pub epsilon_achieved: f64,
    pub u_const: f64,
    pub n_orbit: usize,
    pub p: f64,
    pub singular_values: Vec<f64>,
}

/// `‖A^*‖` on `L^{p'}` for the μ-weighted pairing. Exact for `p ∈ {1, 2}`;
/// otherwise the Riesz-Thorin interpolation bound between `L^1` and `L^∞`.
pub fn adjoint_norm(a: &OperatorRep, p: f64) -> Result<f64> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::InvalidExponent(p));
    }
    let adj = a.adjoint();
    if p == 2.0 {
        return Ok(adj.l2_norm());
    }
    if p == 1.0 {
        return Ok(adj.operator_norm(NormKind::Linf));
    }
    let inv_q = (p - 1.0) / p;
    let n1 = adj.operator_norm(NormKind::L1);
    let ninf = adj.operator_norm(NormKind::Linf);
    Ok(n1.powf(inv_q) * ninf.powf(1.0 - inv_q))
}

fn orbit(a: &OperatorRep, t: &OperatorRep, f: &Func, n_max: usize) -> Vec<Vec<Complex64>> {
    let d = f.dim();
    let mut g = f.values().to_vec();
    let mut scratch = vec![ZERO; d];
    let mut out = Vec::with_capacity(n_max);
    for _ in 0..n_max {
        t.apply_in_place(&mut g, &mut scratch);
        let mut y = vec![ZERO; d];
        a.apply_into(&g, &mut y);
        out.push(y);
    }
    out
}

/// `λ_i = ⟨φ_i, y⟩` and `r = y − Σ λ_i b_i`, subtracting in basis order.
fn split_element(mu: &[f64], basis: &[Func], duals: &[Func], y: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
    let lambda: Vec<Complex64> = duals
        .iter()
        .map(|phi| measure::weighted_pairing(mu, phi.values(), y))
        .collect();
    let mut r = y.to_vec();
    for (l, b) in lambda.iter().zip(basis) {
        for (ri, bi) in r.iter_mut().zip(b.values()) {
            *ri -= l * bi;
        }
    }
    (lambda, r)
}

fn check_operands(a: &OperatorRep, t: &OperatorRep, f: &Func) -> Result<()> {
    t.require_dunford_schwartz("T", DS_TOL)?;
    for dim in [a.dim(), f.dim()] {
        if dim != t.dim() {
            return Err(Error::DimensionMismatch {
                expected: t.dim(),
                actual: dim,
            });
        }
    }
    Ok(())
}

/// Smallest-rank certificate whose sampled `L^∞` residual is at most `epsilon`.
pub fn a1_certificate(
    a: &OperatorRep,
    t: &OperatorRep,
    f: &Func,
    epsilon: f64,
    opts: &A1Options,
) -> Result<A1Certificate> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    check_operands(a, t, f)?;
    let d = f.dim();
    let space = f.space();
    let mu = space.weights();
    let n_orbit = opts.n_orbit.unwrap_or(4 * d);
    if n_orbit == 0 {
        return Err(Error::InvalidArgument("n_orbit must be at least 1".into()));
    }
    let ys = orbit(a, t, f, n_orbit);
    let finish = |basis: Vec<Func>, duals: Vec<Func>, achieved: f64, sv: Vec<f64>| -> Result<A1Certificate> {
        let phi_max = duals
            .iter()
            .map(|phi| measure::dual_norm(phi, opts.p))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        let u_const = measure::norm_p(f, opts.p)? * adjoint_norm(a, opts.p)? * phi_max;
        Ok(A1Certificate {
            f: f.clone(),
            basis,
            duals,
            epsilon_requested: epsilon,
            epsilon_achieved: achieved,
            u_const,
            n_orbit,
            p: opts.p,
            singular_values: sv,
        })
    };

    if ys.iter().all(|y| measure::sup_norm(y) == 0.0) {
        let e1 = Func::unit(space, 0);
        let phi = e1.scale(Complex64::new(1.0 / mu[0], 0.0));
        return finish(vec![e1], vec![phi], 0.0, vec![0.0; d]);
    }

    // pad to at least d columns so the left factor is a full basis
    let cols = n_orbit.max(d);
    let z = DMatrix::from_fn(d, cols, |i, n| if n < n_orbit { ys[n][i] * mu[i].sqrt() } else { ZERO });
    let svd = z.svd(true, false);
    let u = svd.u.as_ref().ok_or(Error::EigenFailure)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();

    let mut basis = Vec::new();
    let mut residuals = ys.clone();
    let mut achieved = f64::INFINITY;
    for &col in order.iter().take(d) {
        let b = Func::new(
            space,
            u.column(col).iter().zip(mu).map(|(x, w)| x / w.sqrt()).collect(),
        )?;
        for (y, r) in ys.iter().zip(residuals.iter_mut()) {
            let l = measure::weighted_pairing(mu, b.values(), y);
            for (ri, bi) in r.iter_mut().zip(b.values()) {
                *ri -= l * bi;
            }
        }
        basis.push(b);
        achieved = residuals.iter().map(|r| measure::sup_norm(r)).fold(0.0, f64::max);
        if achieved <= epsilon {
            break;
        }
    }
    let duals = basis.clone();
    finish(basis, duals, achieved, sv)
}

/// `(λ(n), r_n)` with `A T^n f = Σ λ_i(n) b_i + r_n`.
pub fn decompose_orbit_element(
    cert: &A1Certificate,
    a: &OperatorRep,
    t: &OperatorRep,
    f: &Func,
    n: u64,
) -> Result<(Vec<Complex64>, Func)> {
    check_operands(a, t, f)?;
    let mut g = f.values().to_vec();
    let mut scratch = vec![ZERO; g.len()];
    t.apply_power_in_place(&mut g, n, &mut scratch);
    let mut y = vec![ZERO; g.len()];
    a.apply_into(&g, &mut y);
    let (lambda, r) = split_element(f.space().weights(), &cert.basis, &cert.duals, &y);
    Ok((lambda, f.with_values(r)?))
}

/// Coefficient and remainder sequences for `n = 1..=horizon`.
fn decompose_orbit(
    cert: &A1Certificate,
    a: &OperatorRep,
    t: &OperatorRep,
    horizon: usize,
) -> (Vec<Vec<Complex64>>, Vec<Vec<Complex64>>) {
    let mu = cert.f.space().weights();
    let ell = cert.ell();
    let mut lambdas = vec![Vec::with_capacity(horizon); ell];
    let mut rs = Vec::with_capacity(horizon);
    for y in orbit(a, t, &cert.f, horizon) {
        let (l, r) = split_element(mu, &cert.basis, &cert.duals, &y);
        for (seq, v) in lambdas.iter_mut().zip(l) {
            seq.push(v);
        }
        rs.push(r);
    }
    (lambdas, rs)
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateCheck {
    pub ell: usize,
    pub biorthogonality_error: f64,
    pub max_reconstruction_error: f64,
    pub max_sampled_residual: f64,
    pub residual_within_achieved: bool,
    pub achieved_within_requested: bool,
    pub extended_horizon: usize,
    pub max_abs_lambda: f64,
    pub u_const: f64,
    pub lambda_bound_holds: bool,
}

impl CertificateCheck {
    pub fn holds(&self) -> bool {
        self.biorthogonality_error <= PART_TOL
            && self.max_reconstruction_error <= PART_TOL
            && self.residual_within_achieved
            && self.achieved_within_requested
            && self.lambda_bound_holds
    }
}

/// Re-derives every certificate contract: biorthogonality, reconstruction
/// and residual on the sampled range, and `|λ_i(n)| ≤ u` for all
/// `n ≤ extension · n_orbit`.
pub fn check_certificate(
    cert: &A1Certificate,
    a: &OperatorRep,
    t: &OperatorRep,
    extension: usize,
) -> Result<CertificateCheck> {
    let f = &cert.f;
    check_operands(a, t, f)?;
    let mu = f.space().weights();
    let mut biorthogonality_error: f64 = 0.0;
    for (i, phi) in cert.duals.iter().enumerate() {
        for (j, b) in cert.basis.iter().enumerate() {
            let target = if i == j { ONE } else { ZERO };
            let v = measure::weighted_pairing(mu, phi.values(), b.values());
            biorthogonality_error = biorthogonality_error.max((v - target).norm());
        }
    }
    let extended = cert.n_orbit * extension.max(1);
    let ys = orbit(a, t, f, extended);
    let mut max_reconstruction_error: f64 = 0.0;
    let mut max_sampled_residual: f64 = 0.0;
    let mut max_abs_lambda: f64 = 0.0;
    for (idx, y) in ys.iter().enumerate() {
        let (lambda, r) = split_element(mu, &cert.basis, &cert.duals, y);
        max_abs_lambda = lambda.iter().map(|l| l.norm()).fold(max_abs_lambda, f64::max);
        if idx < cert.n_orbit {
            let mut rebuilt = r.clone();
            for (l, b) in lambda.iter().zip(&cert.basis) {
                for (x, bi) in rebuilt.iter_mut().zip(b.values()) {
                    *x += l * bi;
                }
            }
            let err = rebuilt.iter().zip(y).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
            max_reconstruction_error = max_reconstruction_error.max(err);
            max_sampled_residual = max_sampled_residual.max(measure::sup_norm(&r));
        }
    }
    Ok(CertificateCheck {
        ell: cert.ell(),
        biorthogonality_error,
        max_reconstruction_error,
        max_sampled_residual,
        residual_within_achieved: max_sampled_residual <= cert.epsilon_achieved,
        achieved_within_requested: cert.epsilon_achieved <= cert.epsilon_requested || cert.ell() == f.dim(),
        extended_horizon: extended,
        max_abs_lambda,
        u_const: cert.u_const,
        lambda_bound_holds: max_abs_lambda <= cert.u_const * (1.0 + ARITH_TOL) + f64::MIN_POSITIVE,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPart {
    /// Seed in the stable part of `T_1`; absolute averages tend to zero.
    Part1,
    /// Seed in the reversible part of `T_1`; basis vectors are split again.
    Part2,
}

#[derive(Debug, Clone)]
pub struct SplitNode {
    /// 1-based path from the root; empty at the root.
    pub index: Vec<usize>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// The function carried to the next stage.
    pub f: Func,
    /// Part 2 only: the basis vector `g = f + q` and its stable part `q`.
    pub g: Option<Func>,
    pub q: Option<Func>,
    pub c: f64,
    /// Absent on the last level.
    pub certificate: Option<A1Certificate>,
    /// Part 1 leaves: `c_w · ε / |I_{m-1}|` for the bounded approximant.
    pub approximation_budget: Option<f64>,
}

impl SplitNode {
    pub fn level(&self) -> usize {
        self.index.len()
    }

    pub fn u(&self) -> Option<f64> {
        self.certificate.as_ref().map(|c| c.u_const)
    }

    pub fn ell(&self) -> Option<usize> {
        self.certificate.as_ref().map(|c| c.ell())
    }

    /// The function entering the next operator stage at a leaf.
    pub fn leaf_function(&self) -> &Func {
        self.g.as_ref().unwrap_or(&self.f)
    }
}

#[derive(Debug, Clone)]
pub struct SplittingTree {
    pub part: SplitPart,
    pub epsilon: f64,
    /// The joint bound `C ≥ 1`.
    pub joint_c: f64,
    /// `c = ε C^{-m}`.
    pub c: f64,
    pub m: usize,
    pub nodes: Vec<SplitNode>,
    /// Node indices per level `0..m`.
    pub levels: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy)]
pub struct SplitOptions {
    pub a1: A1Options,
    /// Horizon for the joint bound when the problem carries none.
    pub joint_horizon: Option<usize>,
    pub parallelism: Parallelism,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            a1: A1Options::default(),
            joint_horizon: None,
            parallelism: Parallelism::default(),
        }
    }
}

fn part_residual(split: &SpectralSplit, f: &Func, part: SplitPart) -> Result<(f64, &'static str)> {
    let (fr, fs) = jdlg::split_function(split, f)?;
    Ok(match part {
        SplitPart::Part1 => (measure::norm_inf(&fr), "stable"),
        SplitPart::Part2 => (measure::norm_inf(&fs), "reversible"),
    })
}

pub fn build_splitting_tree(
    p: &EntangledProblem,
    f: &Func,
    epsilon: f64,
    part: SplitPart,
    opts: &SplitOptions,
) -> Result<SplittingTree> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    if f.dim() != p.space().dim() {
        return Err(Error::DimensionMismatch {
            expected: p.space().dim(),
            actual: f.dim(),
        });
    }
    let m = p.m();
    let bound = match p.bound().certified_up_to {
        Some(_) => p.bound(),
        None => {
            let mut q = p.clone();
            q.certify_joint_bound(opts.joint_horizon.unwrap_or(4 * f.dim()))
        }
    };
    let joint_c = bound.c;

    let splits = p
        .t()
        .iter()
        .map(|t| jdlg::spectral_split(t, DEFAULT_UNIMODULAR_TOL))
        .collect::<Result<Vec<_>>>()?;
    let (residual, name) = part_residual(&splits[0], f, part)?;
    if residual > PART_TOL * measure::norm_inf(f).max(1.0) {
        return Err(Error::NotInPart { part: name, residual });
    }

    let c = epsilon * joint_c.powi(-(m as i32));
    let mut nodes = vec![SplitNode {
        index: Vec::new(),
        parent: None,
        children: Vec::new(),
        f: f.clone(),
        g: None,
        q: None,
        c,
        certificate: None,
        approximation_budget: None,
    }];
    let mut levels = vec![vec![0usize]];

    for d in 0..m.saturating_sub(1) {
        let current = levels[d].clone();
        let (a, t) = (&p.a()[d], &p.t()[d]);
        let certs = par::map_indices(opts.parallelism, current.len(), |i| {
            let v = &nodes[current[i]];
            a1_certificate(a, t, &v.f, v.c, &opts.a1)
        });
        let mut next = Vec::new();
        for (&v, cert) in current.iter().zip(certs) {
            let cert = cert?;
            let (u, ell) = (cert.u_const, cert.ell());
            // u = 0 forces every coefficient to vanish; any finite budget works
            let child_c = if u > 0.0 { nodes[v].c / (u * ell as f64) } else { nodes[v].c / ell as f64 };
            for (j, b) in cert.basis.iter().enumerate() {
                let mut index = nodes[v].index.clone();
                index.push(j + 1);
                let (fw, g, q) = match part {
                    SplitPart::Part1 => (b.clone(), None, None),
                    SplitPart::Part2 => {
                        let (fr, fs) = jdlg::split_function(&splits[d + 1], b)?;
                        (fr, Some(b.clone()), Some(fs))
                    }
                };
                let id = nodes.len();
                next.push(id);
                nodes[v].children.push(id);
                nodes.push(SplitNode {
                    index,
                    parent: Some(v),
                    children: Vec::new(),
                    f: fw,
                    g,
                    q,
                    c: child_c,
                    certificate: None,
                    approximation_budget: None,
                });
            }
            nodes[v].certificate = Some(cert);
        }
        levels.push(next);
    }

    if part == SplitPart::Part1 {
        let leaves = levels[m - 1].clone();
        let count = leaves.len() as f64;
        for v in leaves {
            nodes[v].approximation_budget = Some(nodes[v].c * epsilon / count);
        }
    }

    Ok(SplittingTree {
        part,
        epsilon,
        joint_c,
        c,
        m,
        nodes,
        levels,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TreeInvariants {
    pub level_sizes: Vec<usize>,
    /// `|Σ_{I_0} c_w − ε C^{-m}|`.
    pub root_budget_error: f64,
    /// Relative error of `c_w = c_parent / (u_parent ℓ_parent)`.
    pub max_recursion_error: f64,
    /// Relative error of `Σ_children c_w u_v = c_v`.
    pub max_telescoping_error: f64,
    /// Part 2: `‖g − f − q‖_∞`.
    pub max_split_error: f64,
    /// Part 2: distance of `f` from the reversible and of `q` from the stable part.
    pub max_part_error: f64,
    pub holds: bool,
}

pub fn tree_invariants(tree: &SplittingTree, p: &EntangledProblem) -> Result<TreeInvariants> {
    let splits: Vec<Option<SpectralSplit>> = match tree.part {
        SplitPart::Part1 => vec![None; tree.m],
        SplitPart::Part2 => p
            .t()
            .iter()
            .map(|t| jdlg::spectral_split(t, DEFAULT_UNIMODULAR_TOL).map(Some))
            .collect::<Result<_>>()?,
    };
    let root_budget_error = (tree.levels[0].iter().map(|&v| tree.nodes[v].c).sum::<f64>() - tree.c).abs();
    let mut max_recursion_error: f64 = 0.0;
    let mut max_telescoping_error: f64 = 0.0;
    let mut max_split_error: f64 = 0.0;
    let mut max_part_error: f64 = 0.0;
    for node in &tree.nodes {
        if let Some(cert) = &node.certificate {
            let u = cert.u_const;
            if u > 0.0 {
                let total: f64 = node.children.iter().map(|&w| tree.nodes[w].c * u).sum();
                max_telescoping_error = max_telescoping_error.max((total - node.c).abs() / node.c);
                for &w in &node.children {
                    let expect = node.c / (u * cert.ell() as f64);
                    max_recursion_error = max_recursion_error.max((tree.nodes[w].c - expect).abs() / expect);
                }
            }
        }
        if let (Some(g), Some(q)) = (&node.g, &node.q) {
            max_split_error = max_split_error.max(measure::norm_inf(&g.sub(&node.f)?.sub(q)?));
            if let Some(split) = &splits[node.level()] {
                let (_, fs) = jdlg::split_function(split, &node.f)?;
                let (qr, _) = jdlg::split_function(split, q)?;
                max_part_error = max_part_error.max(measure::norm_inf(&fs)).max(measure::norm_inf(&qr));
            }
        }
    }
    let holds = root_budget_error <= ARITH_TOL
        && max_recursion_error <= ARITH_TOL
        && max_telescoping_error <= ARITH_TOL
        && max_split_error <= PART_TOL
        && max_part_error <= PART_TOL;
    Ok(TreeInvariants {
        level_sizes: tree.levels.iter().map(Vec::len).collect(),
        root_budget_error,
        max_recursion_error,
        max_telescoping_error,
        max_split_error,
        max_part_error,
        holds,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TreeReport {
    pub invariants: TreeInvariants,
    /// `(node, check)` for every node carrying a certificate.
    pub certificates: Vec<(usize, CertificateCheck)>,
    pub all_hold: bool,
}

/// Tree invariants plus [`check_certificate`] at every internal node.
pub fn check_tree(tree: &SplittingTree, p: &EntangledProblem, extension: usize) -> Result<TreeReport> {
    let invariants = tree_invariants(tree, p)?;
    let mut certificates = Vec::new();
    for (v, node) in tree.nodes.iter().enumerate() {
        if let Some(cert) = &node.certificate {
            let d = node.level();
            certificates.push((v, check_certificate(cert, &p.a()[d], &p.t()[d], extension)?));
        }
    }
    let all_hold = invariants.holds && certificates.iter().all(|(_, c)| c.holds());
    Ok(TreeReport {
        invariants,
        certificates,
        all_hold,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ProofBoundReport {
    pub part: SplitPart,
    pub n: usize,
    /// Part 1: `Σ_w C^m c_w · mean Π|λ|`. Part 2: `L^∞` norm of the summed
    /// remainder terms.
    pub lhs: f64,
    /// Part 1: `ε`. Part 2: `ε(m−2)`.
    pub rhs: f64,
    /// Part 2: the per-level estimate summed over levels `0..m−2`, `ε(m−1)`.
    pub derived_rhs: Option<f64>,
    /// Part 2 only; part 1 is an asymptotic statement.
    pub holds: Option<bool>,
    /// Contribution of each level `0..m−2` to `lhs`.
    pub level_terms: Vec<f64>,
    /// `‖leaf + q + r terms − entangled average‖_∞`.
    pub identity_error: f64,
}

struct Expansion {
    /// Per internal node: coefficient sequences (per child) and remainders.
    lambdas: Vec<Option<Vec<Vec<Complex64>>>>,
    remainders: Vec<Option<Vec<Vec<Complex64>>>>,
}

fn expand(tree: &SplittingTree, p: &EntangledProblem, n: usize, mode: Parallelism) -> Expansion {
    let parts = par::map_indices(mode, tree.nodes.len(), |v| {
        tree.nodes[v].certificate.as_ref().map(|cert| {
            let d = tree.nodes[v].level();
            decompose_orbit(cert, &p.a()[d], &p.t()[d], n)
        })
    });
    let (lambdas, remainders) = parts
        .into_iter()
        .map(|x| match x {
            Some((l, r)) => (Some(l), Some(r)),
            None => (None, None),
        })
        .unzip();
    Expansion { lambdas, remainders }
}

/// `(variable, λ_x sequence)` for every non-root ancestor-or-self `x` of `v`.
fn path_weights<'e>(tree: &SplittingTree, p: &EntangledProblem, ex: &'e Expansion, v: usize) -> Vec<(usize, &'e [Complex64])> {
    let alpha = p.entanglement().alpha();
    let mut out = Vec::new();
    let mut x = v;
    while let Some(parent) = tree.nodes[x].parent {
        let level = tree.nodes[x].level();
        let slot = *tree.nodes[x].index.last().expect("non-root") - 1;
        let seq = &ex.lambdas[parent].as_ref().expect("internal node")[slot];
        out.push((alpha[level - 1] - 1, seq.as_slice()));
        x = parent;
    }
    out.reverse();
    out
}

/// Operator stages `from..m` (0-based), each followed by its transition.
fn tail_stages<'a>(p: &'a EntangledProblem, from: usize) -> Vec<Stage<'a>> {
    let alpha = p.entanglement().alpha();
    (from..p.m())
        .map(|s| Stage {
            var: Some(alpha[s] - 1),
            op: StageOp::Power {
                op: &p.t()[s],
                post: p.a().get(s),
            },
        })
        .collect()
}

fn eval_chain(p: &EntangledProblem, stages: Vec<Stage<'_>>, n: usize, opts: &EvalOptions) -> Result<Vec<Complex64>> {
    let chain = Chain::new(stages, vec![(1..=n as u64).collect(); p.entanglement().k()], n)?;
    chain.evaluate(&[ONE], opts.parallelism, opts.limits())
}

fn add_into(acc: &mut [Complex64], x: &[Complex64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

/// Evaluates the proof's remainder estimate at horizon `n` together with the
/// exact decomposition of the entangled average into leaf, stable and
/// remainder terms.
pub fn verify_proof_bounds(
    tree: &SplittingTree,
    p: &EntangledProblem,
    f: &Func,
    n: usize,
    opts: &EvalOptions,
) -> Result<ProofBoundReport> {
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let m = tree.m;
    let d = f.dim();
    let ex = expand(tree, p, n, opts.parallelism);
    let mut level_terms = vec![0.0; m.saturating_sub(1)];
    let mut r_levels = vec![vec![ZERO; d]; m.saturating_sub(1)];
    let mut decomposition = vec![ZERO; d];

    for (v, node) in tree.nodes.iter().enumerate() {
        let weights = path_weights(tree, p, &ex, v);
        let weight_stages = || {
            weights
                .iter()
                .map(|&(var, seq)| Stage {
                    var: Some(var),
                    op: StageOp::Weight(seq),
                })
                .collect::<Vec<_>>()
        };
        let level = node.level();
        if let Some(rs) = &ex.remainders[v] {
            let mut stages = weight_stages();
            stages.push(Stage {
                var: Some(p.entanglement().alpha()[level] - 1),
                op: StageOp::Source(rs),
            });
            stages.extend(tail_stages(p, level + 1));
            let term = eval_chain(p, stages, n, opts)?;
            add_into(&mut r_levels[level], &term);
            add_into(&mut decomposition, &term);
        }
        if level == m - 1 {
            let mut stages = weight_stages();
            stages.push(Stage {
                var: None,
                op: StageOp::Lift(node.leaf_function().values()),
            });
            stages.extend(tail_stages(p, level));
            add_into(&mut decomposition, &eval_chain(p, stages, n, opts)?);
        } else if let Some(q) = &node.q {
            let mut stages = weight_stages();
            stages.push(Stage {
                var: None,
                op: StageOp::Lift(q.values()),
            });
            stages.extend(tail_stages(p, level));
            add_into(&mut decomposition, &eval_chain(p, stages, n, opts)?);
        }
    }

    let average = engine::entangled_average(p, f, n, opts)?;
    let identity_error = decomposition
        .iter()
        .zip(average.values())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);

    let eps = tree.epsilon;
    match tree.part {
        SplitPart::Part2 => {
            let mut total = vec![ZERO; d];
            for (l, r) in r_levels.iter().enumerate() {
                level_terms[l] = measure::sup_norm(r);
                add_into(&mut total, r);
            }
            let lhs = measure::sup_norm(&total);
            let rhs = eps * m.saturating_sub(2) as f64;
            Ok(ProofBoundReport {
                part: SplitPart::Part2,
                n,
                lhs,
                rhs,
                derived_rhs: Some(eps * m.saturating_sub(1) as f64),
                holds: Some(lhs <= rhs + PART_TOL),
                level_terms,
                identity_error,
            })
        }
        SplitPart::Part1 => {
            let k = p.entanglement().k();
            let cm = tree.joint_c.powi(m as i32);
            for (v, node) in tree.nodes.iter().enumerate() {
                if node.level() + 1 >= m {
                    continue;
                }
                // the product splits over summation variables
                let mut per_var: Vec<Option<Vec<f64>>> = vec![None; k];
                for (var, seq) in path_weights(tree, p, &ex, v) {
                    let acc = per_var[var].get_or_insert_with(|| vec![1.0; n]);
                    for (a, l) in acc.iter_mut().zip(seq) {
                        *a *= l.norm();
                    }
                }
                let mean: f64 = per_var
                    .iter()
                    .flatten()
                    .map(|s| s.iter().sum::<f64>() / n as f64)
                    .product();
                level_terms[node.level()] += cm * node.c * mean;
            }
            Ok(ProofBoundReport {
                part: SplitPart::Part1,
                n,
                lhs: level_terms.iter().sum(),
                rhs: eps,
                derived_rhs: None,
                holds: None,
                level_terms,
                identity_error,
            })
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeExport {
    pub id: String,
    pub level: usize,
    pub parent: Option<usize>,
    pub c: f64,
    pub ell: Option<usize>,
    pub u: Option<f64>,
    pub epsilon_achieved: Option<f64>,
    pub approximation_budget: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TreeExport {
    pub part: SplitPart,
    pub epsilon: f64,
    pub joint_c: f64,
    pub c: f64,
    pub m: usize,
    pub nodes: Vec<NodeExport>,
}

impl SplittingTree {
    pub fn leaf_count(&self) -> usize {
        self.levels.last().map_or(0, Vec::len)
    }

    pub fn to_export(&self) -> TreeExport {
        let nodes = self
            .nodes
            .iter()
            .map(|node| NodeExport {
                id: node.index.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("."),
                level: node.level(),
                parent: node.parent,
                c: node.c,
                ell: node.ell(),
                u: node.u(),
                epsilon_achieved: node.certificate.as_ref().map(|c| c.epsilon_achieved),
                approximation_budget: node.approximation_budget,
            })
            .collect();
        TreeExport {
            part: self.part,
            epsilon: self.epsilon,
            joint_c: self.joint_c,
            c: self.c,
            m: self.m,
            nodes,
        }
    }
}

/// The three-stage rotation/Volterra problem on eight atoms: cyclic shifts,
/// `A_1 = A_2 = V`, `α = (1, 2, 1)`, with an eigenvector of the shift as seed.
pub fn reference_problem() -> Result<(EntangledProblem, Func)> {
    use crate::measure::FiniteMeasureSpace;
    use crate::operators::{cyclic_shift, volterra_discrete};
    use std::sync::Arc;

    let d = 8;
    let space = Arc::new(FiniteMeasureSpace::uniform(d)?);
    let shift = cyclic_shift(&space, 1)?;
    let v = volterra_discrete(d)?;
    let mut p = EntangledProblem::new(
        vec![shift.clone(), shift.clone(), shift],
        vec![v.clone(), v],
        engine::EntanglementMap::new(2, vec![1, 2, 1])?,
    )?;
    p.certify_joint_bound(4 * d);
    let theta = std::f64::consts::TAU / d as f64;
    let f = Func::new(
        &space,
        (0..d).map(|j| Complex64::from_polar(1.0, theta * j as f64)).collect(),
    )?;
    Ok((p, f))
}
