//! Subcommand dispatch, result files and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ergolab::engine::{self, EvalOptions, TrajectoryPoint, Variant};
use ergolab::jdlg;
use ergolab::measure;
use ergolab::splitting::{self, A1Options, SplitOptions};
use ergolab::weights;
use ergolab::Parallelism;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{Experiment, ExperimentConfig};
use crate::error::{io_err, CliError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.json";
pub const TRAJECTORY_HEADER: &str = "N,atom,re,im,linf,cauchy_gap";
pub const PROFILE_HEADER: &str = "N,estimate";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Simulate,
    Decompose,
    Split,
    Weights,
    Check,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Simulate => "simulate",
            Subcommand::Decompose => "decompose",
            Subcommand::Split => "split",
            Subcommand::Weights => "weights",
            Subcommand::Check => "check",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    /// Paths relative to the result directory.
    pub files: Vec<String>,
    pub wall_clock_secs: f64,
    pub checks: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultManifest {
    pub config_hash: String,
    pub artifact_version: String,
    pub runs: BTreeMap<String, RunRecord>,
}

impl ResultManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(dir, MANIFEST, &to_json(self))
    }

    /// Names of failed checks in `subcommand`'s run.
    pub fn failed_checks(&self, subcommand: Subcommand) -> Vec<String> {
        self.runs
            .get(subcommand.name())
            .map(|r| r.checks.iter().filter(|(_, ok)| !**ok).map(|(k, _)| k.clone()).collect())
            .unwrap_or_default()
    }

    /// Every listed file exists and parses, and the stored config hashes to
    /// `config_hash`.
    pub fn validate(&self, dir: &Path) -> Result<()> {
        let path = dir.join(CONFIG);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let hash = ExperimentConfig::from_json(&text)?.hash();
        if hash != self.config_hash {
            return Err(CliError::Config(format!(
                "stored config hashes to {hash}, manifest says {}",
                self.config_hash
            )));
        }
        for run in self.runs.values() {
            for file in &run.files {
                let path = dir.join(file);
                let text = fs::read_to_string(&path).map_err(io_err(&path))?;
                let parsed = if file.ends_with(".json") {
                    serde_json::from_str::<serde_json::Value>(&text).is_ok()
                } else {
                    csv_parses(&text)
                };
                if !parsed {
                    return Err(CliError::Config(format!("{} does not parse", path.display())));
                }
            }
        }
        Ok(())
    }
}

fn csv_parses(text: &str) -> bool {
    let mut lines = text.lines();
    let Some(header) = lines.next() else {
        return false;
    };
    let width = header.split(',').count();
    lines.all(|line| {
        let fields: Vec<&str> = line.split(',').collect();
        fields.len() == width && fields.iter().all(|f| f.is_empty() || f.parse::<f64>().is_ok())
    })
}

/// Shortest exact representation is not what we want in CSV; fix the digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable");
    s.push('\n');
    s
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(io_err(path))
}

pub fn trajectory_csv(points: &[TrajectoryPoint]) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for pt in points {
        let gap = pt.cauchy_gap.map(fmt_float).unwrap_or_default();
        let linf = fmt_float(pt.linf);
        for (atom, z) in pt.value.values().iter().enumerate() {
            out.push_str(&format!(
                "{},{atom},{},{},{linf},{gap}\n",
                pt.n,
                fmt_float(z.re),
                fmt_float(z.im)
            ));
        }
    }
    out
}

pub fn profile_csv(profile: &[(usize, f64)]) -> String {
    let mut out = String::from(PROFILE_HEADER);
    out.push('\n');
    for (n, est) in profile {
        out.push_str(&format!("{n},{}\n", fmt_float(*est)));
    }
    out
}

struct Output {
    files: Vec<(String, String)>,
    checks: BTreeMap<String, bool>,
}

/// Runs `subcommand` and records it in `<out>/<config hash>/manifest.json`.
///
/// A directory that already holds a run of the same subcommand is left alone
/// unless `force` is set.
pub fn run(exp: &Experiment, subcommand: Subcommand, out: &Path, force: bool) -> Result<ResultManifest> {
    let hash = exp.config.hash();
    let dir: PathBuf = out.join(&hash);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut manifest = if dir.join(MANIFEST).exists() {
        ResultManifest::read(&dir)?
    } else {
        ResultManifest {
            config_hash: hash.clone(),
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            runs: BTreeMap::new(),
        }
    };
    if manifest.runs.contains_key(subcommand.name()) && !force {
        return Err(CliError::AlreadyExists {
            dir,
            subcommand: subcommand.name().to_string(),
        });
    }

    let start = Instant::now();
    let output = match subcommand {
        Subcommand::Simulate => simulate(exp)?,
        Subcommand::Decompose => decompose(exp)?,
        Subcommand::Split => split(exp)?,
        Subcommand::Weights => weight_profiles(exp)?,
        Subcommand::Check => check(exp)?,
    };
    let wall_clock_secs = start.elapsed().as_secs_f64();

    let value: serde_json::Value = serde_json::from_str(&exp.config.canonical_json()).expect("canonical JSON");
    write_file(&dir, CONFIG, &to_json(&value))?;
    let mut files = Vec::with_capacity(output.files.len());
    for (name, contents) in &output.files {
        write_file(&dir, name, contents)?;
        files.push(name.clone());
    }
    manifest.runs.insert(
        subcommand.name().to_string(),
        RunRecord {
            seed: exp.config.seed,
            files,
            wall_clock_secs,
            checks: output.checks,
        },
    );
    manifest.write(&dir)?;
    Ok(manifest)
}

fn simulate(exp: &Experiment) -> Result<Output> {
    let cfg = &exp.config;
    let points = engine::average_trajectory(&exp.problem, &exp.f, &cfg.checkpoints, &cfg.variant, &cfg.eval_options())?;
    let summary = json!({
        "variant": cfg.variant,
        "points": points
            .iter()
            .map(|pt| json!({"n": pt.n, "linf": pt.linf, "cauchy_gap": pt.cauchy_gap}))
            .collect::<Vec<_>>(),
    });
    Ok(Output {
        files: vec![
            ("trajectory.csv".into(), trajectory_csv(&points)),
            ("trajectory.json".into(), to_json(&summary)),
        ],
        checks: BTreeMap::new(),
    })
}

/// Each distinct name in `t`, in first-use order.
fn t_names(cfg: &ExperimentConfig) -> Vec<&String> {
    let mut names: Vec<&String> = Vec::new();
    for name in &cfg.t {
        if !names.contains(&name) {
            names.push(name);
        }
    }
    names
}

fn decompose(exp: &Experiment) -> Result<Output> {
    let tol = exp.config.tolerances.unimodular;
    let mut files = Vec::new();
    let mut checks = BTreeMap::new();
    for name in t_names(&exp.config) {
        let t = &exp.operators[name];
        let split = jdlg::spectral_split(t, tol)?;
        let invariants = jdlg::split_invariants(t, &split)?;
        let holds = invariants.holds(t.dim(), 1e-9, tol.max(1e-12));
        checks.insert(format!("decompose.{name}"), holds);
        let doc = json!({
            "operator": name,
            "split": split.to_export(),
            "invariants": invariants,
            "invariants_hold": holds,
        });
        files.push((format!("decompose_{name}.json"), to_json(&doc)));
    }
    Ok(Output { files, checks })
}

fn split_options(exp: &Experiment) -> Result<(SplitOptions, &crate::config::SplitSpec)> {
    let spec = exp
        .config
        .split
        .as_ref()
        .ok_or_else(|| CliError::Config("split: section missing".into()))?;
    let opts = SplitOptions {
        a1: A1Options {
            n_orbit: spec.n_orbit,
            p: spec.p,
        },
        joint_horizon: spec.joint_horizon,
        parallelism: exp.config.eval_options().parallelism,
    };
    Ok((opts, spec))
}

fn split(exp: &Experiment) -> Result<Output> {
    let (opts, spec) = split_options(exp)?;
    let tree = splitting::build_splitting_tree(&exp.problem, &exp.f, spec.epsilon, spec.part, &opts)?;
    let report = splitting::check_tree(&tree, &exp.problem, spec.extension)?;
    let mut checks = BTreeMap::new();
    checks.insert("split.tree".to_string(), report.all_hold);
    let mut bounds = Vec::with_capacity(spec.horizons.len());
    for &n in &spec.horizons {
        let b = splitting::verify_proof_bounds(&tree, &exp.problem, &exp.f, n, &exp.config.eval_options())?;
        if let Some(holds) = b.holds {
            checks.insert(format!("split.bound.N{n}"), holds);
        }
        bounds.push(b);
    }
    Ok(Output {
        files: vec![
            ("tree.json".into(), to_json(&tree.to_export())),
            ("tree_check.json".into(), to_json(&report)),
            ("proof_bounds.json".into(), to_json(&bounds)),
        ],
        checks,
    })
}

fn weight_profiles(exp: &Experiment) -> Result<Output> {
    let spec = exp
        .config
        .weights
        .as_ref()
        .ok_or_else(|| CliError::Config("weights: section missing".into()))?;
    let mut files = Vec::new();
    for (name, w) in &exp.weights {
        let profile = weights::besicovitch_profile(w, spec.p, spec.subseq.as_ref(), &spec.checkpoints)?;
        files.push((format!("weights_{name}.csv"), profile_csv(&profile)));
    }
    Ok(Output {
        files,
        checks: BTreeMap::new(),
    })
}

const CHECK_TRIALS: usize = 4;
const CHECK_HORIZON: usize = 1024;
const ORACLE_TOL: f64 = 1e-10;
const PARALLEL_TOL: f64 = 1e-12;

fn rel_gap(a: &ergolab::Func, b: &ergolab::Func) -> Result<f64> {
    Ok(measure::norm_inf(&a.sub(b)?) / measure::norm_inf(b).max(1.0))
}

/// Largest `N ≤ 6` whose tuple enumeration fits the naive budget.
fn oracle_horizon(exp: &Experiment, opts: &EvalOptions) -> usize {
    let k = exp.problem.entanglement().k() as u32;
    let m = exp.problem.m() as u128;
    (1..=6usize)
        .rev()
        .find(|&n| (n as u128).pow(k) * m <= opts.naive_budget)
        .unwrap_or(1)
}

fn check(exp: &Experiment) -> Result<Output> {
    let cfg = &exp.config;
    let opts = cfg.eval_options();
    let mut checks = BTreeMap::new();
    let mut details = serde_json::Map::new();

    let mut ds = serde_json::Map::new();
    for (name, op) in &exp.operators {
        let report = op.is_dunford_schwartz(cfg.tolerances.ds);
        if cfg.t.contains(name) {
            checks.insert(format!("ds.{name}"), report.is_ds);
        }
        ds.insert(name.clone(), json!(report));
    }
    details.insert("dunford_schwartz".into(), ds.into());

    let mut jd = serde_json::Map::new();
    for (i, name) in t_names(cfg).into_iter().enumerate() {
        let t = &exp.operators[name];
        let split = jdlg::spectral_split(t, cfg.tolerances.unimodular)?;
        let v = jdlg::verify_split(t, &split, CHECK_TRIALS, CHECK_HORIZON, cfg.seed.wrapping_add(i as u64))?;
        checks.insert(format!("jdlg.{name}"), v.invariants_hold && v.all_decay);
        jd.insert(name.clone(), json!(v));
    }
    details.insert("jdlg".into(), jd.into());

    let n = oracle_horizon(exp, &opts);
    let naive = engine::naive_average(&exp.problem, &exp.f, n, &opts)?;
    let fast = engine::entangled_average(&exp.problem, &exp.f, n, &opts)?;
    let mut oracle_gap = rel_gap(&fast, &naive)?;
    if let Variant::Polynomial { polys } = &cfg.variant {
        let naive = engine::naive_polynomial_average(&exp.problem, &exp.f, polys, n, &opts)?;
        let fast = engine::polynomial_entangled_average(&exp.problem, &exp.f, polys, n, &opts)?;
        oracle_gap = oracle_gap.max(rel_gap(&fast, &naive)?);
    }
    checks.insert("engine.oracle".into(), oracle_gap <= ORACLE_TOL);

    let n_par = cfg.checkpoints.first().copied().unwrap_or(16);
    let seq = EvalOptions {
        parallelism: Parallelism::Sequential,
        ..opts
    };
    let par = EvalOptions {
        parallelism: Parallelism::Rayon,
        ..opts
    };
    let a = engine::entangled_average(&exp.problem, &exp.f, n_par, &seq)?;
    let b = engine::entangled_average(&exp.problem, &exp.f, n_par, &par)?;
    let parallel_gap = measure::norm_inf(&a.sub(&b)?);
    checks.insert("engine.parallel".into(), parallel_gap <= PARALLEL_TOL);
    details.insert(
        "engine".into(),
        json!({"oracle_n": n, "oracle_rel_gap": oracle_gap, "parallel_n": n_par, "parallel_gap": parallel_gap}),
    );

    if cfg.split.is_some() {
        let (sopts, spec) = split_options(exp)?;
        let tree = splitting::build_splitting_tree(&exp.problem, &exp.f, spec.epsilon, spec.part, &sopts)?;
        let report = splitting::check_tree(&tree, &exp.problem, spec.extension)?;
        checks.insert("split.tree".into(), report.all_hold);
        details.insert("split".into(), json!(report));
    }

    if let Some(spec) = &cfg.weights {
        let mut wd = serde_json::Map::new();
        let n = spec.checkpoints.last().copied().unwrap_or(256);
        for (name, w) in &exp.weights {
            let sup = weights::eval_weights(w, n)?.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let semi = weights::besicovitch_seminorm(w, spec.p, None, n)?;
            checks.insert(format!("weights.{name}"), semi <= sup + 1e-12);
            wd.insert(name.clone(), json!({"n": n, "seminorm": semi, "sup": sup}));
        }
        details.insert("weights".into(), wd.into());
    }

    let doc = json!({"checks": checks, "details": details});
    Ok(Output {
        files: vec![("check.json".into(), to_json(&doc))],
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_carry_seventeen_significant_digits() {
        assert_eq!(fmt_float(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_float(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(fmt_float(-2.0), "-2.0000000000000000e0");
    }

    #[test]
    fn csv_shape_check() {
        assert!(csv_parses("N,estimate\n1,0.5\n"));
        assert!(csv_parses("N,estimate\n"));
        assert!(!csv_parses(""));
        assert!(!csv_parses("N,estimate\n1\n"));
        assert!(!csv_parses("N,estimate\n1,abc\n"));
    }

    #[test]
    fn empty_profile_is_header_only() {
        assert_eq!(profile_csv(&[]), "N,estimate\n");
        assert_eq!(trajectory_csv(&[]), format!("{TRAJECTORY_HEADER}\n"));
    }
}
