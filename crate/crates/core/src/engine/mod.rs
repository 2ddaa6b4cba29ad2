//! Entangled ergodic averages
//!
//! ```text
//! (1/N^k) Σ_{1≤n_1..n_k≤N} T_m^{n_{α(m)}} A_{m-1} T_{m-1}^{n_{α(m-1)}} … A_1 T_1^{n_{α(1)}} f
//! ```
//!
//! evaluated exactly by tuple enumeration ([`naive_average`]) and efficiently
//! by variable elimination ([`entangled_average`]), together with the
//! absolute-value and polynomial-exponent variants and convergence
//! trajectories.

mod chain;
mod naive;
mod schedule;

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use chain::{Chain, ChainLimits, Stage, StageOp};
pub use schedule::{elimination_schedule, EliminationSchedule};

use crate::error::{Error, Result};
use crate::measure::{self, FiniteMeasureSpace, Func};
use crate::operators::{NormKind, OperatorRep};
use crate::par::Parallelism;
use crate::poly::PolynomialIndex;

pub const DEFAULT_NAIVE_BUDGET: u128 = 10_000_000;
pub const DEFAULT_MEMORY_CAP: u128 = 1 << 26;
const DS_TOL: f64 = 1e-9;

/// `α : {1..m} → {1..k}`, stored 1-based. Surjectivity is not required.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawMap")]
pub struct EntanglementMap {
    k: usize,
    alpha: Vec<usize>,
}

#[derive(Deserialize)]
struct RawMap {
    k: usize,
    alpha: Vec<usize>,
}

impl TryFrom<RawMap> for EntanglementMap {
    type Error = Error;

    fn try_from(raw: RawMap) -> Result<Self> {
        EntanglementMap::new(raw.k, raw.alpha)
    }
}

impl EntanglementMap {
    pub fn new(k: usize, alpha: Vec<usize>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidEntanglement("k must be at least 1".into()));
        }
        if alpha.is_empty() {
            return Err(Error::InvalidEntanglement("alpha must have at least one stage".into()));
        }
        if let Some((i, &v)) = alpha.iter().enumerate().find(|(_, &v)| v == 0 || v > k) {
            return Err(Error::InvalidEntanglement(format!(
                "alpha[{}] = {v} is outside 1..={k}",
                i + 1
            )));
        }
        Ok(Self { k, alpha })
    }

    pub fn m(&self) -> usize {
        self.alpha.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn alpha(&self) -> &[usize] {
        &self.alpha
    }

    pub(crate) fn alpha_zero_based(&self) -> Vec<usize> {
        self.alpha.iter().map(|a| a - 1).collect()
    }
}

/// Operators `T_1..T_m`, transitions `A_1..A_{m-1}` and the entanglement map.
#[derive(Debug, Clone)]
pub struct EntangledProblem {
    space: Arc<FiniteMeasureSpace>,
    t: Vec<OperatorRep>,
    a: Vec<OperatorRep>,
    ent: EntanglementMap,
    bound: JointBound,
}

/// Constant `C ≥ 1` with `‖A_j T_j^n‖_{∞→∞} ≤ C` for all sampled `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JointBound {
    pub c: f64,
    /// Largest `n` the bound was checked for; `None` when not certified.
    pub certified_up_to: Option<usize>,
    /// Observed supremum before clamping to `C ≥ 1`.
    pub observed_sup: f64,
}

impl EntangledProblem {
    pub fn new(t: Vec<OperatorRep>, a: Vec<OperatorRep>, ent: EntanglementMap) -> Result<Self> {
        let m = ent.m();
        if t.len() != m {
            return Err(Error::InvalidProblem(format!("expected {m} operators T, got {}", t.len())));
        }
        if a.len() + 1 != m {
            return Err(Error::InvalidProblem(format!(
                "expected {} transition operators A, got {}",
                m - 1,
                a.len()
            )));
        }
        let space = Arc::clone(t[0].space());
        for (i, op) in t.iter().chain(&a).enumerate() {
            if **op.space() != *space {
                return Err(Error::InvalidProblem(format!("operator {i} lives on a different space")));
            }
        }
        for (i, op) in t.iter().enumerate() {
            op.require_dunford_schwartz(&format!("T_{}", i + 1), DS_TOL)?;
        }
        Ok(Self {
            space,
            t,
            a,
            ent,
            bound: JointBound {
                c: 1.0,
                certified_up_to: None,
                observed_sup: f64::NAN,
            },
        })
    }

    pub fn space(&self) -> &Arc<FiniteMeasureSpace> {
        &self.space
    }

    pub fn t(&self) -> &[OperatorRep] {
        &self.t
    }

    pub fn a(&self) -> &[OperatorRep] {
        &self.a
    }

    pub fn entanglement(&self) -> &EntanglementMap {
        &self.ent
    }

    pub fn m(&self) -> usize {
        self.ent.m()
    }

    pub fn bound(&self) -> JointBound {
        self.bound
    }

    /// Checks the joint `L^∞` bound on `A_j T_j^n` for `n ≤ horizon` by
    /// incremental matrix products and records `C = max(1, sup)`.
    pub fn certify_joint_bound(&mut self, horizon: usize) -> JointBound {
        let mut sup: f64 = 0.0;
        for (a, t) in self.a.iter().zip(&self.t) {
            let mut prod = a.clone();
            for _ in 0..horizon {
                prod = prod.compose(t).expect("validated dimensions");
                sup = sup.max(prod.operator_norm(NormKind::Linf));
            }
        }
        self.bound = JointBound {
            c: sup.max(1.0),
            certified_up_to: Some(horizon),
            observed_sup: sup,
        };
        self.bound
    }

    fn check_func(&self, f: &Func) -> Result<()> {
        if f.dim() != self.space.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.space.dim(),
                actual: f.dim(),
            });
        }
        Ok(())
    }

    /// The evaluation chain with per-variable exponent tables.
    pub fn chain(&self, exponents: Vec<Vec<u64>>, horizon: usize) -> Result<Chain<'_>> {
        let m = self.m();
        let stages = (0..m)
            .map(|i| Stage {
                var: Some(self.ent.alpha[i] - 1),
                op: StageOp::Power {
                    op: &self.t[i],
                    post: self.a.get(i),
                },
            })
            .collect();
        Chain::new(stages, exponents, horizon)
    }

    pub(crate) fn linear_exponents(&self, horizon: usize) -> Vec<Vec<u64>> {
        vec![(1..=horizon as u64).collect(); self.ent.k()]
    }

    pub(crate) fn polynomial_exponents(&self, polys: &[PolynomialIndex], horizon: usize) -> Result<Vec<Vec<u64>>> {
        if polys.len() != self.ent.k() {
            return Err(Error::InvalidArgument(format!(
                "expected {} polynomials, got {}",
                self.ent.k(),
                polys.len()
            )));
        }
        polys.iter().map(|q| q.positive_values(horizon)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub parallelism: Parallelism,
    /// Maximum `N^k · m` stage applications for tuple enumeration.
    pub naive_budget: u128,
    /// Maximum `N^width · d` complex entries held by elimination tables.
    pub memory_cap: u128,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            parallelism: Parallelism::default(),
            naive_budget: DEFAULT_NAIVE_BUDGET,
            memory_cap: DEFAULT_MEMORY_CAP,
        }
    }
}

impl EvalOptions {
    pub fn sequential() -> Self {
        Self {
            parallelism: Parallelism::Sequential,
            ..Self::default()
        }
    }

    pub fn limits(&self) -> ChainLimits {
        ChainLimits {
            memory_cap: self.memory_cap,
        }
    }
}

fn check_horizon(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    Ok(())
}

/// Exact enumeration over all `N^k` tuples.
pub fn naive_average(p: &EntangledProblem, f: &Func, n: usize, opts: &EvalOptions) -> Result<Func> {
    p.check_func(f)?;
    check_horizon(n)?;
    let values = naive::naive_sum(p, f.values(), &p.linear_exponents(n), n, false, opts)?;
    f.with_values(values)
}

/// Exact enumeration with exponents `q_j(n_j)`.
pub fn naive_polynomial_average(
    p: &EntangledProblem,
    f: &Func,
    polys: &[PolynomialIndex],
    n: usize,
    opts: &EvalOptions,
) -> Result<Func> {
    p.check_func(f)?;
    check_horizon(n)?;
    let exps = p.polynomial_exponents(polys, n)?;
    let values = naive::naive_sum(p, f.values(), &exps, n, false, opts)?;
    f.with_values(values)
}

/// Variable-elimination evaluation of the entangled average.
pub fn entangled_average(p: &EntangledProblem, f: &Func, n: usize, opts: &EvalOptions) -> Result<Func> {
    p.check_func(f)?;
    check_horizon(n)?;
    let chain = p.chain(p.linear_exponents(n), n)?;
    f.with_values(chain.evaluate(f.values(), opts.parallelism, opts.limits())?)
}

/// Per-atom Cesàro mean of `|T_m^{n_{α(m)}} … A_1 T_1^{n_{α(1)}} f|`.
///
/// The absolute value is taken per tuple, so no variable can be summed out
/// early and only the enumerating path applies.
pub fn absolute_entangled_average(p: &EntangledProblem, f: &Func, n: usize, opts: &EvalOptions) -> Result<Func> {
    p.check_func(f)?;
    check_horizon(n)?;
    let values = naive::naive_sum(p, f.values(), &p.linear_exponents(n), n, true, opts)?;
    f.with_values(values)
}

/// Entangled average with exponents `q_{α(i)}(n_{α(i)})`.
pub fn polynomial_entangled_average(
    p: &EntangledProblem,
    f: &Func,
    polys: &[PolynomialIndex],
    n: usize,
    opts: &EvalOptions,
) -> Result<Func> {
    p.check_func(f)?;
    check_horizon(n)?;
    let chain = p.chain(p.polynomial_exponents(polys, n)?, n)?;
    f.with_values(chain.evaluate(f.values(), opts.parallelism, opts.limits())?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variant {
    Plain,
    Absolute,
    Polynomial { polys: Vec<PolynomialIndex> },
}

#[derive(Debug, Clone)]
pub struct TrajectoryPoint {
    pub n: usize,
    pub value: Func,
    pub linf: f64,
    /// `‖A_{N_i} f − A_{N_{i-1}} f‖_∞`; absent at the first checkpoint.
    pub cauchy_gap: Option<f64>,
}

/// Recomputes the chosen average at every checkpoint.
pub fn average_trajectory(
    p: &EntangledProblem,
    f: &Func,
    checkpoints: &[usize],
    variant: &Variant,
    opts: &EvalOptions,
) -> Result<Vec<TrajectoryPoint>> {
    if checkpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("checkpoints must be strictly increasing".into()));
    }
    let mut out: Vec<TrajectoryPoint> = Vec::with_capacity(checkpoints.len());
    for &n in checkpoints {
        let value = match variant {
            Variant::Plain => entangled_average(p, f, n, opts)?,
            Variant::Absolute => absolute_entangled_average(p, f, n, opts)?,
            Variant::Polynomial { polys } => polynomial_entangled_average(p, f, polys, n, opts)?,
        };
        let cauchy_gap = match out.last() {
            Some(prev) => Some(measure::norm_inf(&value.sub(&prev.value)?)),
            None => None,
        };
        out.push(TrajectoryPoint {
            n,
            linf: measure::norm_inf(&value),
            value,
            cauchy_gap,
        });
    }
    Ok(out)
}

/// `(1/N) Σ_{n≤N} T^n f`, computed directly.
pub fn ergodic_average(t: &OperatorRep, f: &Func, n: usize) -> Result<Func> {
    check_horizon(n)?;
    let mut g = f.values().to_vec();
    let mut scratch = vec![Complex64::new(0.0, 0.0); g.len()];
    let mut acc = vec![Complex64::new(0.0, 0.0); g.len()];
    for _ in 0..n {
        t.apply_in_place(&mut g, &mut scratch);
        for (a, x) in acc.iter_mut().zip(&g) {
            *a += x;
        }
    }
    f.with_values(acc.into_iter().map(|x| x / n as f64).collect())
}

/// Seeded random problem on the uniform space of size `d`: `T_i` alternate
/// between doubly stochastic and signed contractions, `A_i` are dense complex
/// matrices with entries in the square of half-width `1/d`. `α` is uniform.
pub fn random_problem(seed: u64, d: usize, m: usize, k: usize) -> Result<(EntangledProblem, Func)> {
    use rand::{Rng, SeedableRng};
    use crate::operators::{random_ds_on, RandomKind};

    let space = Arc::new(FiniteMeasureSpace::uniform(d)?);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let t = (0..m)
        .map(|i| {
            let kind = if i % 2 == 0 {
                RandomKind::SignedContraction
            } else {
                RandomKind::DoublyStochastic
            };
            random_ds_on(&space, rng.gen(), kind)
        })
        .collect::<Result<Vec<_>>>()?;
    let scale = 1.0 / d as f64;
    let a = (0..m.saturating_sub(1))
        .map(|_| {
            let entries = (0..d * d)
                .map(|_| Complex64::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)))
                .collect();
            OperatorRep::new(&space, entries)
        })
        .collect::<Result<Vec<_>>>()?;
    let alpha = (0..m).map(|_| rng.gen_range(1..=k)).collect();
    let problem = EntangledProblem::new(t, a, EntanglementMap::new(k, alpha)?)?;
    let f = measure::random_func(&space, rng.gen(), true);
    Ok((problem, f))
}

#[cfg(test)]
mod tests;
