//! Config-driven experiment pipeline behind the command-line tool:
//! generate the one-shot dataset, train local operators, evaluate the
//! prediction backends on seeded test forcings and write the tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::fpi::{fpi_solve, FpiConfig};
use crate::grf::{make_training_forcing, GrfParams, TestForcings, TEST_CORRELATION_LENGTH};
use crate::grid::{l2_relative_error, restrict, EquationKind, EquationSpec, Field, Grid, Grid1D, GridST};
use crate::local_operator::{extract_dataset, train_local_operator, LocalOperator, StencilSpec, TrainBudget};
use crate::loinn::{balanced_interior_weight, train_loinn, Collocation, LoinnConfig};
use crate::metrics::{emit_curves, emit_table, CurveAxis, ErrorSummary, Labels};
use crate::neural::{AdamConfig, MlpConfig, TrainRecord};
use crate::solvers;

/// Base forcing `amplitude * sin(2 pi x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForcingSpec {
    Sin2pi { amplitude: f64 },
}

impl ForcingSpec {
    pub fn field(&self, grid: Grid1D) -> Field {
        match *self {
            ForcingSpec::Sin2pi { amplitude } => {
                Field::from_fn(grid, |x, _| amplitude * (2.0 * std::f64::consts::PI * x).sin())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Fpi,
    Loinn,
    Cloinn,
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Fpi => "fpi",
            Backend::Loinn => "loinn",
            Backend::Cloinn => "cloinn",
        }
    }
}

/// One local operator to train and the backends that use it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    /// Stencil preset name.
    pub stencil: String,
    pub depth: usize,
    pub width: usize,
    pub budget: TrainBudget,
    pub backends: Vec<Backend>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSpec {
    pub sigmas: Vec<f64>,
    pub count: usize,
    /// Forcing `i` uses seed `base_seed + i`.
    pub base_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoinnSettings {
    pub depth: usize,
    pub width: usize,
    /// `None` reuses the operator's iteration count.
    #[serde(default)]
    pub iterations: Option<usize>,
    pub lbfgs_fraction: f64,
    pub adam: AdamConfig,
    pub collocation: Collocation,
    /// `None` uses [`balanced_interior_weight`].
    #[serde(default)]
    pub interior_weight: Option<f64>,
    pub boundary_weight: f64,
    /// Use only the first `n` test forcings for LOINN/cLOINN.
    #[serde(default)]
    pub max_forcings: Option<usize>,
}

impl Default for LoinnSettings {
    fn default() -> Self {
        Self {
            depth: 2,
            width: 32,
            iterations: None,
            lbfgs_fraction: 0.5,
            adam: AdamConfig { lr: 1e-2, final_lr_ratio: 1e-2, ..AdamConfig::default() },
            collocation: Collocation::Grid,
            interior_weight: None,
            boundary_weight: 1.0,
            max_forcings: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub equation: EquationSpec,
    /// Nodes per dimension of the reference grid. Resolutions that do not nest
    /// into it use the smallest larger grid that does.
    pub dense: usize,
    /// Coarse (learning/prediction) nodes per dimension.
    pub resolutions: Vec<usize>,
    pub f0: ForcingSpec,
    pub train_grf: GrfParams,
    /// Seed of the training forcing; also offsets all network seeds.
    pub seed: u64,
    pub test: TestSpec,
    pub operators: Vec<OperatorSpec>,
    pub fpi: FpiConfig,
    pub loinn: LoinnSettings,
    /// Multiplies every optimizer iteration count.
    pub budget_scale: f64,
    pub out: PathBuf,
}

fn budget(iterations: usize) -> TrainBudget {
    TrainBudget { iterations, ..TrainBudget::default() }
}

fn op_spec(stencil: &str, width: usize, iterations: usize) -> OperatorSpec {
    OperatorSpec {
        stencil: stencil.into(),
        depth: 2,
        width,
        budget: budget(iterations),
        backends: vec![Backend::Fpi, Backend::Loinn, Backend::Cloinn],
    }
}

impl ExperimentConfig {
    /// Full-scale defaults of the three benchmark experiments.
    pub fn preset(name: &str) -> Result<Self> {
        let base = |name: &str, equation, amplitude, train_sigma, sigmas: Vec<f64>, operators| Self {
            name: name.into(),
            equation,
            dense: 1001,
            resolutions: vec![101],
            f0: ForcingSpec::Sin2pi { amplitude },
            train_grf: GrfParams::new(train_sigma, 0.01),
            seed: 0,
            test: TestSpec { sigmas, count: 100, base_seed: 1000 },
            operators,
            fpi: FpiConfig::default(),
            loinn: LoinnSettings::default(),
            budget_scale: 1.0,
            out: PathBuf::from("runs").join(name),
        };
        match name {
            "poisson" => Ok(base(
                name,
                EquationSpec::poisson(),
                1.0,
                0.5,
                vec![0.02, 0.05, 0.10, 0.15],
                vec![op_spec("poisson_g1", 64, 200_000), op_spec("poisson_g2", 32, 200_000)],
            )),
            "diffusion" => Ok(base(
                name,
                EquationSpec::linear_diffusion(0.01),
                0.9,
                0.1,
                vec![0.10, 0.30, 0.50, 0.80],
                vec![op_spec("diffusion_g1", 32, 100_000), op_spec("diffusion_g2", 32, 100_000)],
            )),
            "nonlinear-dr" => {
                let mut c = base(
                    name,
                    EquationSpec::nonlinear_diffusion_reaction(0.01, 0.01),
                    0.9,
                    0.1,
                    vec![0.10, 0.30, 0.50, 0.80],
                    vec![op_spec("diffusion_g1", 64, 150_000)],
                );
                c.resolutions = vec![101, 51, 26, 21, 16];
                Ok(c)
            }
            other => Err(Error::Config(format!("unknown experiment `{other}` (expected poisson, diffusion or nonlinear-dr)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.equation.validate()?;
        self.train_grf.validate()?;
        self.fpi.validate()?;
        if self.resolutions.is_empty() || self.test.sigmas.is_empty() || self.operators.is_empty() {
            return Err(Error::Config("resolutions, sigma list and operator list must be nonempty".into()));
        }
        if self.test.sigmas.iter().any(|s| !(*s >= 0.0)) || !(self.budget_scale >= 0.0) {
            return Err(Error::Config("sigmas and budget scale must be nonnegative".into()));
        }
        for &n in &self.resolutions {
            if n < 3 || n > self.dense {
                return Err(Error::Config(format!("resolution {n} must lie in [3, dense = {}]", self.dense)));
            }
        }
        for op in &self.operators {
            let st = StencilSpec::preset(&op.stencil)?;
            if st.space_time != self.equation.is_time_dependent() {
                return Err(Error::Config(format!("stencil `{}` does not fit {:?}", op.stencil, self.equation.kind)));
            }
        }
        Ok(())
    }

    fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn scaled(&self, iterations: usize) -> usize {
        (iterations as f64 * self.budget_scale).round() as usize
    }

    fn space_grid(&self, n: usize) -> Grid {
        if self.equation.is_time_dependent() {
            GridST::square(n).expect("validated size").into()
        } else {
            Grid1D::new(n).expect("validated size").into()
        }
    }

    /// Reference grid size for a coarse resolution: the smallest size at or
    /// above `dense` that nests `n`.
    pub fn dense_for(&self, n: usize) -> usize {
        let step = n - 1;
        (self.dense - 1).div_ceil(step) * step + 1
    }

    fn data_dir(&self, n: usize) -> PathBuf {
        self.out.join("data").join(format!("n{n}"))
    }

    fn operator_path(&self, n: usize, stencil: &str) -> PathBuf {
        self.out.join("operators").join(format!("n{n}_{stencil}.json"))
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn read_field(path: &Path) -> Result<Field> {
    Field::from_csv(&fs::read_to_string(path)?)
}

/// Solves on the dense grid and restricts to `coarse`.
fn reference(eq: &EquationSpec, f_dense: &Field, dense: Grid, coarse: Grid) -> Result<Field> {
    let (u, _) = solvers::solve(eq, f_dense, dense)?;
    restrict(&u, coarse)
}

/// Seconds spent per step, kept apart from the deterministic artifacts.
fn log_timing(cfg: &ExperimentConfig, step: &str, seconds: f64) -> Result<()> {
    let path = cfg.out.join("timing.json");
    let mut all: BTreeMap<String, f64> =
        fs::read_to_string(&path).ok().and_then(|t| serde_json::from_str(&t).ok()).unwrap_or_default();
    all.insert(step.into(), seconds);
    write_json(&path, &json!(all))
}

/// Writes `f_T`, `u_T`, `f0`, `u0` on every coarse grid plus provenance.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let start = Instant::now();
    write(&cfg.out.join("config.json"), &(cfg.to_json() + "\n"))?;
    for &n in &cfg.resolutions {
        let nd = cfg.dense_for(n);
        let (dense, coarse) = (cfg.space_grid(nd), cfg.space_grid(n));
        let f0 = cfg.f0.field(dense.spatial());
        let f_t = make_training_forcing(&f0, &cfg.train_grf, cfg.seed)?;
        let (u_t, report) = solvers::solve(&cfg.equation, &f_t, dense)?;
        let (u0, _) = solvers::solve(&cfg.equation, &f0, dense)?;
        let dir = cfg.data_dir(n);
        let sp = coarse.spatial();
        write(&dir.join("f_train.csv"), &restrict(&f_t, sp)?.to_csv())?;
        write(&dir.join("u_train.csv"), &restrict(&u_t, coarse)?.to_csv())?;
        write(&dir.join("f0.csv"), &restrict(&f0, sp)?.to_csv())?;
        write(&dir.join("u0.csv"), &restrict(&u0, coarse)?.to_csv())?;
        write_json(
            &dir.join("provenance.json"),
            &json!({
                "config": cfg,
                "dense_nodes": nd,
                "coarse_nodes": n,
                "train_seed": cfg.seed,
                "solver": report,
            }),
        )?;
    }
    log_timing(cfg, "gen-data", start.elapsed().as_secs_f64())
}

/// Trains every configured operator on every resolution and writes checkpoints.
pub fn cmd_train_local(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let start = Instant::now();
    for &n in &cfg.resolutions {
        let dir = cfg.data_dir(n);
        let f_t = read_field(&dir.join("f_train.csv"))?;
        let u_t = read_field(&dir.join("u_train.csv"))?;
        for (k, spec) in cfg.operators.iter().enumerate() {
            let stencil = StencilSpec::preset(&spec.stencil)?;
            let data = extract_dataset(&u_t, &f_t, &stencil)?;
            let net = MlpConfig::new(stencil.input_dim(), spec.depth, spec.width, cfg.seed.wrapping_add(k as u64));
            let mut budget = spec.budget;
            budget.iterations = cfg.scaled(budget.iterations);
            let t = Instant::now();
            let (op, mut record) = train_local_operator(&data, net, &budget, &stencil, &cfg.equation, u_t.grid())?;
            log_timing(cfg, &format!("train n{n} {}", spec.stencil), t.elapsed().as_secs_f64())?;
            record.wall_time_s = 0.0;
            let path = cfg.operator_path(n, &spec.stencil);
            if let Some(d) = path.parent() {
                fs::create_dir_all(d)?;
            }
            op.save(&path)?;
            write_json(
                &path.with_extension("record.json"),
                &json!({ "config": cfg, "operator": spec, "record": record,
                         "train_mse": op.train_mse, "validation_mse": op.validation_mse }),
            )?;
            eprintln!(
                "trained {} on n={n}: loss {:.3e}, validation mse {:.3e}",
                spec.stencil,
                record.final_loss,
                op.validation_mse.unwrap_or(f64::NAN)
            );
        }
    }
    log_timing(cfg, "train-local", start.elapsed().as_secs_f64())
}

/// Outcome of one backend on one forcing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub u: Field,
    pub diverged: bool,
    pub detail: serde_json::Value,
}

/// Runs one backend with a trained operator on the coarse grid of `u0`.
pub fn predict(
    cfg: &ExperimentConfig,
    op: &LocalOperator,
    backend: Backend,
    f: &Field,
    u0: &Field,
    iterations: usize,
    seed: u64,
) -> Result<Prediction> {
    match backend {
        Backend::Fpi => {
            let r = fpi_solve(op, f, u0, &cfg.equation, &cfg.fpi)?;
            let detail = r.metadata_json();
            Ok(Prediction { diverged: r.diverged || !r.converged, u: r.u, detail })
        }
        Backend::Loinn | Backend::Cloinn => {
            let grid = *u0.grid();
            let s = &cfg.loinn;
            let lc = LoinnConfig {
                net: MlpConfig::new(grid.dimension(), s.depth, s.width, seed),
                corrected: backend == Backend::Cloinn,
                collocation: s.collocation,
                interior_weight: s.interior_weight.unwrap_or_else(|| balanced_interior_weight(op)),
                boundary_weight: s.boundary_weight,
                budget: TrainBudget {
                    iterations: cfg.scaled(s.iterations.unwrap_or(iterations)),
                    lbfgs_fraction: s.lbfgs_fraction,
                    adam: s.adam,
                    batch: None,
                    validation_fraction: 0.0,
                    seed,
                },
            };
            let fit = train_loinn(op, f, (backend == Backend::Cloinn).then_some(u0), grid, &lc)?;
            let detail = json!({ "final_loss": fit.record.final_loss, "iterations": fit.record.iterations });
            Ok(Prediction { u: fit.u, diverged: false, detail })
        }
    }
}

/// Per-forcing errors written next to the tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ForcingRecord {
    resolution: usize,
    stencil: String,
    backend: Backend,
    sigma: f64,
    seed: u64,
    error: Option<f64>,
    detail: serde_json::Value,
}

fn equation_name(kind: EquationKind) -> &'static str {
    match kind {
        EquationKind::Poisson1D => "poisson",
        EquationKind::LinearDiffusion => "linear_diffusion",
        EquationKind::NonlinearDiffusionReaction => "nonlinear_dr",
    }
}

/// Evaluates every (resolution, operator, backend, sigma) cell on the seeded
/// test forcings and writes `summary.csv`, `summary.md`, the SVG curves and
/// the per-forcing errors. Checkpoints are only read.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<Vec<ErrorSummary>> {
    cfg.validate()?;
    let start = Instant::now();
    let mut summaries = Vec::new();
    let mut records = Vec::new();
    for &n in &cfg.resolutions {
        let nd = cfg.dense_for(n);
        let (dense, coarse) = (cfg.space_grid(nd), cfg.space_grid(n));
        let f0 = cfg.f0.field(dense.spatial());
        let u0 = read_field(&cfg.data_dir(n).join("u0.csv"))?;
        let forcings = TestForcings::new(&f0)?;
        let ops: Vec<LocalOperator> = cfg
            .operators
            .iter()
            .map(|s| LocalOperator::load(&cfg.operator_path(n, &s.stencil)))
            .collect::<Result<_>>()?;
        for &sigma in &cfg.test.sigmas {
            let mut cells: BTreeMap<(usize, Backend), Vec<(u64, Option<f64>)>> = BTreeMap::new();
            for i in 0..cfg.test.count {
                let seed = cfg.test.base_seed + i as u64;
                let f_dense = forcings.forcing(sigma, seed);
                let u_ref = reference(&cfg.equation, &f_dense, dense, coarse)?;
                let f = restrict(&f_dense, coarse.spatial())?;
                for (k, (spec, op)) in cfg.operators.iter().zip(&ops).enumerate() {
                    for &backend in &spec.backends {
                        if backend != Backend::Fpi && cfg.loinn.max_forcings.is_some_and(|m| i >= m) {
                            continue;
                        }
                        let net_seed = cfg.seed.wrapping_add(seed);
                        let (error, detail) = match predict(cfg, op, backend, &f, &u0, spec.budget.iterations, net_seed) {
                            Ok(p) if !p.diverged => (Some(l2_relative_error(&p.u, &u_ref)?), p.detail),
                            Ok(p) => (None, p.detail),
                            Err(e) => (None, json!({ "error": e.to_string(), "kind": e.kind() })),
                        };
                        if error.is_none() {
                            eprintln!("n={n} {} {} sigma={sigma} seed={seed}: failed {detail}", spec.stencil, backend.name());
                        }
                        cells.entry((k, backend)).or_default().push((seed, error));
                        records.push(ForcingRecord {
                            resolution: n,
                            stencil: spec.stencil.clone(),
                            backend,
                            sigma,
                            seed,
                            error,
                            detail,
                        });
                    }
                }
            }
            for ((k, backend), outcomes) in cells {
                let labels = Labels {
                    equation: equation_name(cfg.equation.kind).into(),
                    backend: backend.name().into(),
                    stencil: cfg.operators[k].stencil.clone(),
                    resolution: n,
                    sigma,
                };
                let s = ErrorSummary::from_outcomes(&outcomes, labels)?;
                eprintln!(
                    "n={n} {} {} sigma={sigma}: mean {:.3}% over {} ({} failed)",
                    s.labels.stencil,
                    s.labels.backend,
                    100.0 * s.mean.unwrap_or(f64::NAN),
                    s.count,
                    s.failed.len()
                );
                summaries.push(s);
            }
        }
    }
    let (csv, md) = emit_table(&summaries);
    let dir = cfg.out.join("results");
    write(&dir.join("summary.csv"), &csv)?;
    write(&dir.join("summary.md"), &md)?;
    write(&dir.join("by_sigma.svg"), &emit_curves(&summaries, CurveAxis::Sigma))?;
    write(&dir.join("by_resolution.svg"), &emit_curves(&summaries, CurveAxis::Resolution))?;
    write_json(
        &dir.join("errors.json"),
        &json!({
            "config": cfg,
            "test_correlation_length": TEST_CORRELATION_LENGTH,
            "summaries": summaries,
            "forcings": records,
        }),
    )?;
    log_timing(cfg, "evaluate", start.elapsed().as_secs_f64())?;
    Ok(summaries)
}

/// Runs gen-data, train-local and evaluate for a named preset.
pub fn cmd_reproduce(name: &str, budget_scale: f64, out: Option<&Path>) -> Result<Vec<ErrorSummary>> {
    let mut cfg = ExperimentConfig::preset(name)?;
    cfg.budget_scale = budget_scale;
    if let Some(out) = out {
        cfg.out = out.to_path_buf();
    }
    run_all(&cfg)
}

/// The three pipeline steps for an explicit config.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Vec<ErrorSummary>> {
    cmd_gen_data(cfg)?;
    cmd_train_local(cfg)?;
    cmd_evaluate(cfg)
}

/// Single prediction behind the `predict` command: the first
/// resolution and operator, forcing `f0 + GRF(sigma)` with `seed`, or the
/// forcing read from `forcing` when given. Writes one CSV and one metadata
/// JSON per configured backend.
pub fn cmd_predict(cfg: &ExperimentConfig, sigma: f64, seed: u64, forcing: Option<&Path>) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let n = cfg.resolutions[0];
    let spec = &cfg.operators[0];
    let op = LocalOperator::load(&cfg.operator_path(n, &spec.stencil))?;
    let u0 = read_field(&cfg.data_dir(n).join("u0.csv"))?;
    let coarse = *u0.grid();
    let (f, u_ref) = match forcing {
        Some(path) => (read_field(path)?, None),
        None => {
            let nd = cfg.dense_for(n);
            let dense = cfg.space_grid(nd);
            let f_dense = TestForcings::new(&cfg.f0.field(dense.spatial()))?.forcing(sigma, seed);
            (restrict(&f_dense, coarse.spatial())?, Some(reference(&cfg.equation, &f_dense, dense, coarse)?))
        }
    };
    let mut written = Vec::new();
    for &backend in &spec.backends {
        let p = predict(cfg, &op, backend, &f, &u0, spec.budget.iterations, cfg.seed.wrapping_add(seed))?;
        let error = u_ref.as_ref().map(|r| l2_relative_error(&p.u, r)).transpose()?;
        let base = cfg.out.join("predictions").join(format!("n{n}_{}_{}_s{seed}", spec.stencil, backend.name()));
        write(&base.with_extension("csv"), &p.u.to_csv())?;
        write_json(
            &base.with_extension("json"),
            &json!({ "config": cfg, "sigma": sigma, "seed": seed, "diverged": p.diverged,
                     "l2_relative_error": error, "detail": p.detail }),
        )?;
        written.push(base.with_extension("csv"));
    }
    Ok(written)
}

/// Loss record of a trained operator, as written by [`cmd_train_local`].
pub fn load_record(cfg: &ExperimentConfig, n: usize, stencil: &str) -> Result<TrainRecord> {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(cfg.operator_path(n, stencil).with_extension("record.json"))?)?;
    Ok(serde_json::from_value(v["record"].clone())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(out: &Path) -> ExperimentConfig {
        let mut c = ExperimentConfig::preset("poisson").unwrap();
        c.dense = 41;
        c.resolutions = vec![21];
        c.test = TestSpec { sigmas: vec![0.0, 0.1], count: 2, base_seed: 5 };
        c.operators.truncate(1);
        c.operators[0].width = 8;
        c.operators[0].budget.iterations = 200;
        c.loinn.iterations = Some(50);
        c.loinn.width = 8;
        c.out = out.to_path_buf();
        c
    }

    #[test]
    fn presets_validate_and_round_trip() {
        for name in ["poisson", "diffusion", "nonlinear-dr"] {
            let c = ExperimentConfig::preset(name).unwrap();
            c.validate().unwrap();
            assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
        }
        assert!(ExperimentConfig::preset("heat").is_err());
        let p = ExperimentConfig::preset("poisson").unwrap();
        assert_eq!(p.operators[0].budget.iterations, 200_000);
        assert_eq!((p.operators[0].depth, p.operators[0].width), (2, 64));
    }

    #[test]
    fn dense_grid_nests_every_resolution() {
        let c = ExperimentConfig::preset("nonlinear-dr").unwrap();
        assert_eq!(c.dense_for(101), 1001);
        assert_eq!(c.dense_for(26), 1001);
        assert_eq!(c.dense_for(16), 1006);
        for &n in &c.resolutions {
            assert_eq!((c.dense_for(n) - 1) % (n - 1), 0);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = ExperimentConfig::preset("diffusion").unwrap();
        c.operators[0].stencil = "poisson_g1".into();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::preset("diffusion").unwrap();
        c.test.sigmas.clear();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::preset("poisson").unwrap();
        c.operators[0].stencil = "nope".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_training_sigma_reproduces_base_data() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny(dir.path());
        c.train_grf.sigma = 0.0;
        cmd_gen_data(&c).unwrap();
        let d = c.data_dir(21);
        let read = |name: &str| fs::read_to_string(d.join(name)).unwrap();
        assert_eq!(read("f_train.csv"), read("f0.csv"));
        assert_eq!(read("u_train.csv"), read("u0.csv"));
    }

    #[test]
    fn zero_budget_checkpoint_is_initialisation() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny(dir.path());
        c.operators[0].budget.iterations = 0;
        cmd_gen_data(&c).unwrap();
        cmd_train_local(&c).unwrap();
        let op = LocalOperator::load(&c.operator_path(21, "poisson_g1")).unwrap();
        let init = crate::neural::Mlp::init(MlpConfig::new(3, 2, 8, c.seed)).unwrap();
        assert_eq!(op.net_params().unwrap(), init.params());
    }

    #[test]
    fn pipeline_is_bit_reproducible_and_read_only() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ca = tiny(a.path());
        let cb = tiny(b.path());
        let sa = run_all(&ca).unwrap();
        let ckpt = fs::read(ca.operator_path(21, "poisson_g1")).unwrap();
        cmd_evaluate(&ca).unwrap();
        assert_eq!(fs::read(ca.operator_path(21, "poisson_g1")).unwrap(), ckpt);
        run_all(&cb).unwrap();
        for f in ["results/summary.csv", "results/summary.md", "results/by_sigma.svg", "data/n21/u_train.csv"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        // 2 sigmas x 3 backends
        assert_eq!(sa.len(), 6);
        let errs = fs::read_to_string(a.path().join("results/errors.json")).unwrap();
        assert!(errs.contains("\"budget_scale\""));
    }

    #[test]
    fn predict_writes_fields() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny(dir.path());
        cmd_gen_data(&c).unwrap();
        cmd_train_local(&c).unwrap();
        let files = cmd_predict(&c, 0.05, 3, None).unwrap();
        assert_eq!(files.len(), 3);
        let u = Field::from_csv(&fs::read_to_string(&files[0]).unwrap()).unwrap();
        assert_eq!(u.values().len(), 21);
    }
}
