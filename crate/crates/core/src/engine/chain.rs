//! Variable-elimination evaluation of multi-index Cesàro sums over a chain of
//! stages.
//!
//! A chain is a sequence of stages applied to an initial vector. Each stage is
//! either bound to one of `k` summation variables (and then depends on the
//! current value `n ∈ 1..=N` of that variable) or is a fixed map. The value of
//! the chain is
//!
//! ```text
//! (1/N^{#used vars}) Σ_{n_1..n_k} stage_last(n_·) ∘ … ∘ stage_1(n_·) (initial)
//! ```
//!
//! Stages are processed left to right while a table keyed by the live
//! variables holds one vector per assignment. A variable is summed out (and
//! divided by `N`) at its last occurrence. Powers are produced by repeated
//! operator application only: incremental orbits for freshly introduced
//! variables, Horner's scheme for variables eliminated at an operator stage.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::operators::OperatorRep;
use crate::par::{self, Parallelism};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, Copy)]
pub enum StageOp<'a> {
    /// `g ↦ post · op^{e(n)} g`.
    Power {
        op: &'a OperatorRep,
        post: Option<&'a OperatorRep>,
    },
    /// `g ↦ w_n g`; `w` indexed from `n = 1`.
    Weight(&'a [Complex64]),
    /// Scalar-to-vector: `g ↦ g_0 · v_n`.
    Source(&'a [Vec<Complex64>]),
    /// Scalar-to-vector, independent of any variable: `g ↦ g_0 · v`.
    Lift(&'a [Complex64]),
    /// `g ↦ M g`, independent of any variable.
    Transform(&'a OperatorRep),
}

#[derive(Debug, Clone, Copy)]
pub struct Stage<'a> {
    /// Summation variable (0-based) or `None` for fixed stages.
    pub var: Option<usize>,
    pub op: StageOp<'a>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainLimits {
    /// Cap on the number of complex entries an elimination table may hold.
    pub memory_cap: u128,
}

#[derive(Debug, Clone)]
pub struct Chain<'a> {
    stages: Vec<Stage<'a>>,
    /// Per variable: exponents `e(1..=N)` used by `Power` stages.
    exponents: Vec<Vec<u64>>,
    horizon: usize,
    /// Per variable: indices `0..N` sorted by exponent.
    order: Vec<Vec<usize>>,
}

impl<'a> Chain<'a> {
    pub fn new(stages: Vec<Stage<'a>>, exponents: Vec<Vec<u64>>, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("N must be at least 1".into()));
        }
        for (s, stage) in stages.iter().enumerate() {
            match (stage.var, &stage.op) {
                (None, StageOp::Lift(_) | StageOp::Transform(_)) => {}
                (None, _) => {
                    return Err(Error::InvalidArgument(format!("stage {s} needs a summation variable")))
                }
                (Some(_), StageOp::Lift(_) | StageOp::Transform(_)) => {
                    return Err(Error::InvalidArgument(format!("stage {s} takes no summation variable")))
                }
                (Some(j), StageOp::Power { .. }) => {
                    if exponents.get(j).map(|e| e.len()) != Some(horizon) {
                        return Err(Error::InvalidArgument(format!(
                            "variable {j} needs {horizon} exponents"
                        )));
                    }
                }
                (Some(_), StageOp::Weight(w)) if w.len() < horizon => {
                    return Err(Error::InvalidArgument(format!("stage {s} has {} weights", w.len())))
                }
                (Some(_), StageOp::Source(v)) if v.len() < horizon => {
                    return Err(Error::InvalidArgument(format!("stage {s} has {} sources", v.len())))
                }
                _ => {}
            }
        }
        let order = exponents
            .iter()
            .map(|e| {
                let mut idx: Vec<usize> = (0..e.len()).collect();
                idx.sort_by_key(|&i| e[i]);
                idx
            })
            .collect();
        Ok(Self {
            stages,
            exponents,
            horizon,
            order,
        })
    }

    /// Largest number of simultaneously live variables, counting the variable
    /// of the current stage.
    pub fn width(&self) -> usize {
        let spans = self.spans();
        (0..self.stages.len())
            .map(|s| spans.iter().flatten().filter(|(a, b)| *a <= s && s <= *b).count())
            .max()
            .unwrap_or(0)
    }

    fn spans(&self) -> Vec<Option<(usize, usize)>> {
        let nvars = self
            .stages
            .iter()
            .filter_map(|s| s.var)
            .max()
            .map_or(0, |m| m + 1)
            .max(self.exponents.len());
        let mut spans: Vec<Option<(usize, usize)>> = vec![None; nvars];
        for (s, stage) in self.stages.iter().enumerate() {
            if let Some(j) = stage.var {
                spans[j] = Some(match spans[j] {
                    None => (s, s),
                    Some((a, _)) => (a, s),
                });
            }
        }
        spans
    }

    /// Upper estimate of table entries: `N^width · max dim`.
    pub fn memory_estimate(&self, initial_dim: usize) -> u128 {
        let mut dim = initial_dim;
        let mut max_dim = dim;
        for stage in &self.stages {
            dim = match stage.op {
                StageOp::Source(v) => v.first().map_or(dim, |x| x.len()),
                StageOp::Lift(v) => v.len(),
                StageOp::Power { op, .. } | StageOp::Transform(op) => op.dim(),
                StageOp::Weight(_) => dim,
            };
            max_dim = max_dim.max(dim);
        }
        (self.horizon as u128)
            .checked_pow(self.width() as u32)
            .map_or(u128::MAX, |p| p.saturating_mul(max_dim as u128))
    }

    pub fn evaluate(&self, initial: &[Complex64], mode: Parallelism, limits: ChainLimits) -> Result<Vec<Complex64>> {
        let estimate = self.memory_estimate(initial.len());
        if estimate > limits.memory_cap {
            return Err(Error::MemoryCapExceeded {
                estimate,
                cap: limits.memory_cap,
            });
        }
        let spans = self.spans();
        let n = self.horizon;
        let mut live: Vec<usize> = Vec::new();
        let mut dim = initial.len();
        let mut data = initial.to_vec();

        for (s, stage) in self.stages.iter().enumerate() {
            let count = data.len() / dim.max(1);
            let out_dim = self.out_dim(stage, dim)?;
            data = match stage.var {
                None => {
                    let mut out = vec![ZERO; count * out_dim];
                    par::for_each_chunk(mode, &mut out, out_dim, |e, o| {
                        self.apply_fixed(stage, &data[e * dim..(e + 1) * dim], o)
                    });
                    out
                }
                Some(j) => {
                    let last = spans[j].map(|(_, b)| b) == Some(s);
                    match (live.iter().position(|&v| v == j), last) {
                        (None, true) => {
                            let mut out = vec![ZERO; count * out_dim];
                            par::for_each_chunk(mode, &mut out, out_dim, |e, o| {
                                self.orbit_sum(stage, j, &data[e * dim..(e + 1) * dim], o)
                            });
                            out
                        }
                        (None, false) => {
                            let mut out = vec![ZERO; count * n * out_dim];
                            par::for_each_chunk(mode, &mut out, n * out_dim, |e, o| {
                                self.orbit_expand(stage, j, &data[e * dim..(e + 1) * dim], o, out_dim)
                            });
                            live.push(j);
                            out
                        }
                        (Some(p), true) => {
                            let inner = n.pow((live.len() - 1 - p) as u32);
                            let mut out = vec![ZERO; (count / n) * out_dim];
                            par::for_each_chunk(mode, &mut out, out_dim, |o_idx, o| {
                                let base = (o_idx / inner) * n * inner + o_idx % inner;
                                let get = |k: usize| {
                                    let e = base + k * inner;
                                    &data[e * dim..(e + 1) * dim]
                                };
                                self.eliminate(stage, j, &get, o)
                            });
                            live.remove(p);
                            out
                        }
                        (Some(p), false) => {
                            let inner = n.pow((live.len() - 1 - p) as u32);
                            let mut out = vec![ZERO; count * out_dim];
                            par::for_each_chunk(mode, &mut out, out_dim, |e, o| {
                                let k = (e / inner) % n;
                                self.apply_at(stage, j, k, &data[e * dim..(e + 1) * dim], o)
                            });
                            out
                        }
                    }
                }
            };
            dim = out_dim;
        }
        debug_assert!(live.is_empty());
        Ok(data)
    }

    fn out_dim(&self, stage: &Stage<'_>, dim: usize) -> Result<usize> {
        let need = |expected: usize| {
            if dim == expected {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { expected, actual: dim })
            }
        };
        match stage.op {
            StageOp::Power { op, post } => {
                need(op.dim())?;
                if let Some(a) = post {
                    if a.dim() != op.dim() {
                        return Err(Error::DimensionMismatch {
                            expected: op.dim(),
                            actual: a.dim(),
                        });
                    }
                }
                Ok(op.dim())
            }
            StageOp::Transform(op) => {
                need(op.dim())?;
                Ok(op.dim())
            }
            StageOp::Weight(_) => Ok(dim),
            StageOp::Source(v) => {
                need(1)?;
                Ok(v.first().map_or(0, |x| x.len()))
            }
            StageOp::Lift(v) => {
                need(1)?;
                Ok(v.len())
            }
        }
    }

    fn apply_fixed(&self, stage: &Stage<'_>, g: &[Complex64], out: &mut [Complex64]) {
        match stage.op {
            StageOp::Lift(v) => scaled_copy(out, v, g[0]),
            StageOp::Transform(op) => op.apply_into(g, out),
            _ => unreachable!("validated in Chain::new"),
        }
    }

    /// `stage(n_k, g)` for a single assignment.
    fn apply_at(&self, stage: &Stage<'_>, j: usize, k: usize, g: &[Complex64], out: &mut [Complex64]) {
        match stage.op {
            StageOp::Power { op, post } => {
                let mut cur = g.to_vec();
                let mut scratch = vec![ZERO; cur.len()];
                op.apply_power_in_place(&mut cur, self.exponents[j][k], &mut scratch);
                finish_power(post, &cur, out);
            }
            StageOp::Weight(w) => scaled_copy(out, g, w[k]),
            StageOp::Source(v) => scaled_copy(out, &v[k], g[0]),
            _ => unreachable!("validated in Chain::new"),
        }
    }

    /// `(1/N) Σ_n stage(n, g)` for a variable that is introduced and
    /// eliminated at this stage.
    fn orbit_sum(&self, stage: &Stage<'_>, j: usize, g: &[Complex64], out: &mut [Complex64]) {
        let inv_n = 1.0 / self.horizon as f64;
        match stage.op {
            StageOp::Power { op, post } => {
                let mut cur = g.to_vec();
                let mut scratch = vec![ZERO; cur.len()];
                let mut acc = vec![ZERO; cur.len()];
                let mut prev = 0;
                for &k in &self.order[j] {
                    let e = self.exponents[j][k];
                    op.apply_power_in_place(&mut cur, e - prev, &mut scratch);
                    prev = e;
                    add_assign(&mut acc, &cur);
                }
                finish_power(post, &acc, out);
            }
            StageOp::Weight(w) => {
                let total: Complex64 = w[..self.horizon].iter().sum();
                scaled_copy(out, g, total);
            }
            StageOp::Source(v) => {
                out.fill(ZERO);
                for src in &v[..self.horizon] {
                    add_assign(out, src);
                }
                for o in out.iter_mut() {
                    *o *= g[0];
                }
            }
            _ => unreachable!("validated in Chain::new"),
        }
        scale_in_place(out, inv_n);
    }

    /// Writes `stage(n, g)` for every `n` into consecutive `out_dim` slots.
    fn orbit_expand(&self, stage: &Stage<'_>, j: usize, g: &[Complex64], out: &mut [Complex64], out_dim: usize) {
        match stage.op {
            StageOp::Power { op, post } => {
                let mut cur = g.to_vec();
                let mut scratch = vec![ZERO; cur.len()];
                let mut prev = 0;
                for &k in &self.order[j] {
                    let e = self.exponents[j][k];
                    op.apply_power_in_place(&mut cur, e - prev, &mut scratch);
                    prev = e;
                    finish_power(post, &cur, &mut out[k * out_dim..(k + 1) * out_dim]);
                }
            }
            StageOp::Weight(w) => {
                for k in 0..self.horizon {
                    scaled_copy(&mut out[k * out_dim..(k + 1) * out_dim], g, w[k]);
                }
            }
            StageOp::Source(v) => {
                for k in 0..self.horizon {
                    scaled_copy(&mut out[k * out_dim..(k + 1) * out_dim], &v[k], g[0]);
                }
            }
            _ => unreachable!("validated in Chain::new"),
        }
    }

    /// `(1/N) Σ_n stage(n, G_n)` where `G_n = get(n - 1)`.
    fn eliminate<'g, F>(&self, stage: &Stage<'_>, j: usize, get: &F, out: &mut [Complex64])
    where
        F: Fn(usize) -> &'g [Complex64],
    {
        let n = self.horizon;
        match stage.op {
            StageOp::Power { op, post } => {
                // Σ_k T^{e_k} G_k = T^{e_1}(G_1 + T^{e_2 - e_1}(G_2 + …)) over sorted exponents
                let order = &self.order[j];
                let exps = &self.exponents[j];
                let mut acc = get(order[n - 1]).to_vec();
                let mut scratch = vec![ZERO; acc.len()];
                for w in (0..n - 1).rev() {
                    let (lo, hi) = (order[w], order[w + 1]);
                    op.apply_power_in_place(&mut acc, exps[hi] - exps[lo], &mut scratch);
                    add_assign(&mut acc, get(lo));
                }
                op.apply_power_in_place(&mut acc, exps[order[0]], &mut scratch);
                finish_power(post, &acc, out);
            }
            StageOp::Weight(w) => {
                out.fill(ZERO);
                for (k, wk) in w[..n].iter().enumerate() {
                    for (o, x) in out.iter_mut().zip(get(k)) {
                        *o += wk * x;
                    }
                }
            }
            StageOp::Source(v) => {
                out.fill(ZERO);
                for (k, src) in v[..n].iter().enumerate() {
                    let c = get(k)[0];
                    for (o, x) in out.iter_mut().zip(src) {
                        *o += c * x;
                    }
                }
            }
            _ => unreachable!("validated in Chain::new"),
        }
        scale_in_place(out, 1.0 / n as f64);
    }
}

fn finish_power(post: Option<&OperatorRep>, cur: &[Complex64], out: &mut [Complex64]) {
    match post {
        Some(a) => a.apply_into(cur, out),
        None => out.copy_from_slice(cur),
    }
}

fn scaled_copy(out: &mut [Complex64], src: &[Complex64], c: Complex64) {
    for (o, x) in out.iter_mut().zip(src) {
        *o = c * x;
    }
}

fn add_assign(acc: &mut [Complex64], x: &[Complex64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

fn scale_in_place(v: &mut [Complex64], s: f64) {
    for x in v.iter_mut() {
        *x *= s;
    }
}
