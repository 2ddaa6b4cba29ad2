//! Experiment configuration: JSON schema, validation and construction.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use ergolab::engine::{EntangledProblem, EntanglementMap, EvalOptions, Variant};
use ergolab::operators::{self, RandomKind};
use ergolab::splitting::SplitPart;
use ergolab::weights::{JdlgPart, WeightSequence};
use ergolab::{measure, FiniteMeasureSpace, Func, OperatorRep, Parallelism, PolynomialIndex};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

type Pair = [f64; 2];

fn c(z: &Pair) -> Complex64 {
    Complex64::new(z[0], z[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub space: SpaceSpec,
    pub operators: BTreeMap<String, OperatorSpec>,
    /// Operator names for `T_1, …, T_m`.
    pub t: Vec<String>,
    /// Operator names for `A_1, …, A_{m-1}`.
    #[serde(default)]
    pub a: Vec<String>,
    pub alpha: Vec<usize>,
    /// Defaults to `max(alpha)`.
    #[serde(default)]
    pub k: Option<usize>,
    pub f: FuncSpec,
    #[serde(default = "plain")]
    pub variant: Variant,
    #[serde(default)]
    pub checkpoints: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub weights: Option<WeightsSpec>,
    #[serde(default)]
    pub split: Option<SplitSpec>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub limits: Limits,
    /// Overridden by `--out`; not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

fn plain() -> Variant {
    Variant::Plain
}

/// Exactly one of `uniform` (atom count) or `mu` (atom masses).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    /// Atom map `i ↦ map[i]` (0-based) or the rotation by `shift`.
    Koopman {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        map: Option<Vec<usize>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shift: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<f64>,
    },
    Volterra {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        d: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<f64>,
    },
    /// Row-major `[re, im]` pairs.
    Matrix {
        entries: Vec<Pair>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<f64>,
    },
    RandomDs {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default = "doubly_stochastic")]
        variant: RandomKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<f64>,
    },
    Identity {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<f64>,
    },
}

fn doubly_stochastic() -> RandomKind {
    RandomKind::DoublyStochastic
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FuncSpec {
    Random {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default = "yes")]
        complex: bool,
    },
    Values {
        values: Vec<Pair>,
    },
    /// `j ↦ exp(2πi · freq · j / d)`.
    Eigenvector {
        freq: usize,
    },
    Unit {
        atom: usize,
    },
    Constant {
        value: Pair,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightSpec {
    TrigPoly { b: Vec<Pair>, rho: Vec<Pair> },
    Eigen { rho: Pair },
    Linear { operator: String, y: FuncSpec, phi: FuncSpec, tag: JdlgPart },
    Product { factors: Vec<WeightSpec> },
    Explicit { values: Vec<Pair> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSpec {
    #[serde(default = "one")]
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subseq: Option<PolynomialIndex>,
    pub checkpoints: Vec<usize>,
    pub sequences: BTreeMap<String, WeightSpec>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub epsilon: f64,
    pub part: SplitPart,
    /// Horizons for the proof-bound verification.
    #[serde(default)]
    pub horizons: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_orbit: Option<usize>,
    #[serde(default = "two")]
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_horizon: Option<usize>,
    /// Multiple of the sampled orbit on which certificates are re-checked.
    #[serde(default = "ten")]
    pub extension: usize,
}

fn two() -> f64 {
    2.0
}

fn ten() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "unimodular_tol")]
    pub unimodular: f64,
    #[serde(default = "ds_tol")]
    pub ds: f64,
}

fn unimodular_tol() -> f64 {
    ergolab::jdlg::DEFAULT_UNIMODULAR_TOL
}

fn ds_tol() -> f64 {
    1e-9
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            unimodular: unimodular_tol(),
            ds: ds_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    #[serde(default = "naive_budget")]
    pub naive_budget: u64,
    #[serde(default = "memory_cap")]
    pub memory_cap: u64,
    #[serde(default)]
    pub sequential: bool,
}

fn naive_budget() -> u64 {
    ergolab::engine::DEFAULT_NAIVE_BUDGET as u64
}

fn memory_cap() -> u64 {
    ergolab::engine::DEFAULT_MEMORY_CAP as u64
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            naive_budget: naive_budget(),
            memory_cap: memory_cap(),
            sequential: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Canonical JSON: defaults filled in, keys sorted, `output_dir` dropped.
    pub fn canonical_json(&self) -> String {
        let mut copy = self.clone();
        copy.output_dir = None;
        let value = serde_json::to_value(&copy).expect("config serialises");
        serde_json::to_string(&value).expect("value serialises")
    }

    /// SHA-256 of [`canonical_json`](Self::canonical_json), hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            parallelism: if self.limits.sequential {
                Parallelism::Sequential
            } else {
                Parallelism::default()
            },
            naive_budget: self.limits.naive_budget as u128,
            memory_cap: self.limits.memory_cap as u128,
        }
    }
}

/// A validated configuration with every object constructed.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub space: Arc<FiniteMeasureSpace>,
    pub operators: BTreeMap<String, OperatorRep>,
    pub problem: EntangledProblem,
    pub f: Func,
    pub weights: BTreeMap<String, WeightSequence>,
}

pub fn load_config(path: &Path) -> Result<Experiment> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Experiment::build(ExperimentConfig::from_json(&text)?)
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

impl Experiment {
    pub fn build(config: ExperimentConfig) -> Result<Self> {
        let space = Arc::new(build_space(&config.space)?);

        let mut ops = BTreeMap::new();
        for (ordinal, (name, spec)) in config.operators.iter().enumerate() {
            let default_seed = config.seed.wrapping_add(ordinal as u64);
            let op = build_operator(&space, spec, default_seed).map_err(|e| invalid(&format!("operators.{name}"), e))?;
            ops.insert(name.clone(), op);
        }
        let lookup = |field: &str, name: &String| {
            ops.get(name)
                .cloned()
                .ok_or_else(|| invalid(field, format!("unknown operator '{name}'")))
        };

        let mut t = Vec::with_capacity(config.t.len());
        for name in &config.t {
            let op = lookup("t", name)?;
            op.require_dunford_schwartz(name, config.tolerances.ds)?;
            t.push(op);
        }
        let a = config.a.iter().map(|name| lookup("a", name)).collect::<Result<Vec<_>>>()?;

        if config.alpha.len() != config.t.len() {
            return Err(invalid(
                "alpha",
                format!("has {} entries but t names {} operators", config.alpha.len(), config.t.len()),
            ));
        }
        let k = config.k.unwrap_or_else(|| config.alpha.iter().copied().max().unwrap_or(0));
        let ent = EntanglementMap::new(k, config.alpha.clone()).map_err(|e| invalid("alpha", e))?;
        let problem = EntangledProblem::new(t, a, ent)?;

        if let Variant::Polynomial { polys } = &config.variant {
            if polys.len() != k {
                return Err(invalid("variant.polys", format!("needs {k} polynomials, got {}", polys.len())));
            }
        }
        if let Some(i) = config.checkpoints.iter().position(|&n| n == 0) {
            return Err(invalid("checkpoints", format!("entry {i} is zero")));
        }
        if config.checkpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("checkpoints", "must be strictly increasing"));
        }

        let f = build_func(&space, &config.f, config.seed).map_err(|e| invalid("f", e))?;

        let mut weights = BTreeMap::new();
        if let Some(ws) = &config.weights {
            if ws.checkpoints.windows(2).any(|w| w[1] <= w[0]) || ws.checkpoints.first() == Some(&0) {
                return Err(invalid("weights.checkpoints", "must be positive and strictly increasing"));
            }
            for (name, spec) in &ws.sequences {
                let field = format!("weights.sequences.{name}");
                let w = build_weight(&space, &ops, spec, config.seed).map_err(|e| invalid(&field, e))?;
                weights.insert(name.clone(), w);
            }
        }

        if let Some(split) = &config.split {
            if !(split.epsilon > 0.0) {
                return Err(invalid("split.epsilon", "must be positive"));
            }
            if split.horizons.contains(&0) {
                return Err(invalid("split.horizons", "entries must be positive"));
            }
        }

        Ok(Self {
            config,
            space,
            operators: ops,
            problem,
            f,
            weights,
        })
    }
}

fn build_space(spec: &SpaceSpec) -> Result<FiniteMeasureSpace> {
    match (spec.uniform, &spec.mu) {
        (Some(d), None) => FiniteMeasureSpace::uniform(d).map_err(|e| invalid("space.uniform", e)),
        (None, Some(mu)) => FiniteMeasureSpace::new(mu.clone()).map_err(|e| invalid("space.mu", e)),
        _ => Err(invalid("space", "give exactly one of 'uniform' or 'mu'")),
    }
}

fn build_operator(space: &Arc<FiniteMeasureSpace>, spec: &OperatorSpec, default_seed: u64) -> ergolab::Result<OperatorRep> {
    use ergolab::Error;
    let (op, scale) = match spec {
        OperatorSpec::Koopman { map, shift, scale } => {
            let op = match (map, shift) {
                (Some(map), None) => operators::koopman_from_map(map, space)?,
                (None, Some(s)) => operators::cyclic_shift(space, *s)?,
                _ => return Err(Error::InvalidArgument("koopman needs exactly one of 'map' or 'shift'".into())),
            };
            (op, scale)
        }
        OperatorSpec::Volterra { d, scale } => {
            if let Some(d) = d {
                if *d != space.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: space.dim(),
                        actual: *d,
                    });
                }
            }
            (operators::volterra_on(space)?, scale)
        }
        OperatorSpec::Matrix { entries, scale } => (OperatorRep::new(space, entries.iter().map(c).collect())?, scale),
        OperatorSpec::RandomDs { seed, variant, scale } => {
            (operators::random_ds_on(space, seed.unwrap_or(default_seed), *variant)?, scale)
        }
        OperatorSpec::Identity { scale } => (OperatorRep::identity(space), scale),
    };
    Ok(match scale {
        Some(s) => op.scaled(Complex64::new(*s, 0.0)),
        None => op,
    })
}

fn build_func(space: &Arc<FiniteMeasureSpace>, spec: &FuncSpec, default_seed: u64) -> ergolab::Result<Func> {
    let d = space.dim();
    match spec {
        FuncSpec::Random { seed, complex } => Ok(measure::random_func(space, seed.unwrap_or(default_seed), *complex)),
        FuncSpec::Values { values } => Func::new(space, values.iter().map(c).collect()),
        FuncSpec::Eigenvector { freq } => {
            let theta = std::f64::consts::TAU * *freq as f64 / d as f64;
            Func::new(space, (0..d).map(|j| Complex64::from_polar(1.0, theta * j as f64)).collect())
        }
        FuncSpec::Unit { atom } => {
            if *atom >= d {
                return Err(ergolab::Error::InvalidArgument(format!("atom {atom} is outside 0..{d}")));
            }
            Ok(Func::unit(space, *atom))
        }
        FuncSpec::Constant { value } => Ok(Func::constant(space, c(value))),
    }
}

fn build_weight(
    space: &Arc<FiniteMeasureSpace>,
    ops: &BTreeMap<String, OperatorRep>,
    spec: &WeightSpec,
    seed: u64,
) -> ergolab::Result<WeightSequence> {
    match spec {
        WeightSpec::TrigPoly { b, rho } => {
            WeightSequence::trig_poly(b.iter().map(c).collect(), rho.iter().map(c).collect())
        }
        WeightSpec::Eigen { rho } => WeightSequence::eigen(c(rho)),
        WeightSpec::Linear { operator, y, phi, tag } => {
            let t = ops
                .get(operator)
                .ok_or_else(|| ergolab::Error::InvalidArgument(format!("unknown operator '{operator}'")))?;
            let y = build_func(space, y, seed)?;
            let phi = build_func(space, phi, seed.wrapping_add(1))?;
            WeightSequence::linear(t, &y, &phi, *tag)
        }
        WeightSpec::Product { factors } => Ok(WeightSequence::product(
            factors
                .iter()
                .map(|f| build_weight(space, ops, f, seed))
                .collect::<ergolab::Result<Vec<_>>>()?,
        )),
        WeightSpec::Explicit { values } => Ok(WeightSequence::explicit(values.iter().map(c).collect())),
    }
}
