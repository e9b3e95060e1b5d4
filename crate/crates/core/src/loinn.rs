//! Meshfree prediction: a coordinate network `u(x)` (LOINN), or a
//! correction `N(x) + u0(x)` around a known solution (cLOINN), trained so
//! that it is a fixed point of the frozen local operator on the collocation
//! anchors and satisfies the boundary/initial conditions.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{EquationKind, Field, Grid};
use crate::local_operator::{forcing_view, ForcingView, LocalOperator, TrainBudget};
use crate::neural::{adam, lbfgs, LbfgsConfig, Mlp, MlpConfig, Objective, Tape, TrainRecord};

/// Where the two loss terms are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Collocation {
    /// Every admissible anchor and every boundary/initial node.
    Grid,
    /// A seeded uniform subset of the grid sets, at least one node of each.
    Subsample { fraction: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoinnConfig {
    /// Coordinate network; `input_dim` must equal the grid dimension.
    pub net: MlpConfig,
    /// `true` selects the corrected form `N(x) + u0(x)`.
    pub corrected: bool,
    pub collocation: Collocation,
    pub interior_weight: f64,
    pub boundary_weight: f64,
    pub budget: TrainBudget,
}

impl LoinnConfig {
    pub fn new(net: MlpConfig, corrected: bool, budget: TrainBudget) -> Self {
        Self { net, corrected, collocation: Collocation::Grid, interior_weight: 1.0, boundary_weight: 1.0, budget }
    }
}

/// Interior weight that puts the fixed-point residual in forcing units.
///
/// Near a solution `u - G(u, f)` is roughly `c * (PDE residual)`, with `c`
/// the forcing coefficient of the discrete relation (`h^2 / 2` for Poisson,
/// `ht / (1 + 2r)` for diffusion). With unit weights the boundary term then
/// outweighs the interior term by `1 / c^2` and the optimiser settles on
/// `u = 0`; weighting the interior term by `1 / c^2` removes the imbalance.
pub fn balanced_interior_weight(op: &LocalOperator) -> f64 {
    let (hx, ht) = op.spacing;
    let c = match op.equation.kind {
        EquationKind::Poisson1D => 0.5 * hx * hx,
        EquationKind::LinearDiffusion | EquationKind::NonlinearDiffusionReaction => {
            let r = op.equation.diffusion * ht / (hx * hx);
            ht / (1.0 + 2.0 * r)
        }
    };
    1.0 / (c * c)
}

/// Loss value split into its two terms, with the parameter gradient of the total.
#[derive(Debug, Clone, PartialEq)]
pub struct LoinnLoss {
    pub total: f64,
    pub interior: f64,
    pub boundary: f64,
    pub grad: Vec<f64>,
}

/// Precomputed geometry and buffers for evaluating the loss repeatedly.
struct Problem<'a> {
    op: &'a LocalOperator,
    net: &'a Mlp,
    f: ForcingView<'a>,
    u0: Option<&'a [f64]>,
    nx: usize,
    coords: Vec<f64>,
    n_nodes: usize,
    interior: Vec<usize>,
    boundary: Vec<(usize, f64)>,
    shifts: Vec<isize>,
    output_scale: f64,
    interior_weight: f64,
    boundary_weight: f64,
    tape: Tape,
    inputs: Vec<f64>,
}

/// Coordinates mapped affinely from `[0, 1]` to `[-1, 1]`, one row per node.
fn scaled_coords(grid: &Grid) -> Vec<f64> {
    let dim = grid.dimension();
    let mut out = Vec::with_capacity(grid.len() * dim);
    for k in 0..grid.len() {
        let (x, t) = grid.coords(k);
        out.push(2.0 * x - 1.0);
        if dim == 2 {
            out.push(2.0 * t - 1.0);
        }
    }
    out
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

impl<'a> Problem<'a> {
    fn new(net: &'a Mlp, op: &'a LocalOperator, f: &'a Field, u0: Option<&'a Field>, grid: Grid, cfg: &LoinnConfig, output_scale: f64) -> Result<Self> {
        if net.config().input_dim != grid.dimension() || net.config().output_dim != 1 {
            return Err(Error::DimensionMismatch { expected: grid.dimension(), got: net.config().input_dim });
        }
        if let Some(u0) = u0 {
            if *u0.grid() != grid {
                return Err(Error::GridMismatch("u0 must live on the prediction grid".into()));
            }
        }
        let view = forcing_view(f, &grid)?;
        let mut interior = op.stencil.anchors(&grid)?;
        let mut boundary: Vec<usize> = grid.boundary_indices();
        if let Collocation::Subsample { fraction, seed } = cfg.collocation {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pick = |set: &mut Vec<usize>| {
                let keep = ((set.len() as f64 * fraction).round() as usize).clamp(1, set.len());
                let mut idx: Vec<usize> = sample(&mut rng, set.len(), keep).into_iter().map(|i| set[i]).collect();
                idx.sort_unstable();
                *set = idx;
            };
            pick(&mut interior);
            pick(&mut boundary);
        }
        if interior.is_empty() {
            return Err(Error::DegenerateCollocation("interior set is empty"));
        }
        if boundary.is_empty() {
            return Err(Error::DegenerateCollocation("boundary set is empty"));
        }
        let boundary = boundary
            .into_iter()
            .map(|k| {
                let (x, t) = grid.coords(k);
                (k, op.equation.bc.value(x, t))
            })
            .collect();
        let nx = grid.shape().0;
        Ok(Self {
            op,
            net,
            f: view,
            u0: u0.map(Field::values),
            nx,
            coords: scaled_coords(&grid),
            n_nodes: grid.len(),
            shifts: op.stencil.u_shifts(nx),
            interior,
            boundary,
            output_scale,
            interior_weight: cfg.interior_weight,
            boundary_weight: cfg.boundary_weight,
            tape: Tape::default(),
            inputs: Vec::new(),
        })
    }

    /// `u_hat` at every grid node for the given parameters.
    fn predict(&mut self, params: &[f64]) -> Vec<f64> {
        self.net.forward_with_params(params, &self.coords, self.n_nodes, &mut self.tape);
        let mut u: Vec<f64> = self.tape.output().iter().map(|v| v * self.output_scale).collect();
        if let Some(u0) = self.u0 {
            u.iter_mut().zip(u0).for_each(|(a, b)| *a += b);
        }
        u
    }

    fn evaluate(&mut self, params: &[f64], grad: &mut [f64]) -> (f64, f64) {
        let u = self.predict(params);
        let d = self.op.input_dim();
        let m = self.interior.len();
        self.inputs.resize(m * d, 0.0);
        for (row, &a) in self.inputs.chunks_exact_mut(d).zip(&self.interior) {
            self.op.stencil.gather(&u, &self.f, self.nx, a, row);
        }
        let pred = self.op.apply_batch(&self.inputs, m);

        let mut du = vec![0.0; self.n_nodes];
        let ci = 2.0 * self.interior_weight / m as f64;
        let mut interior_loss = 0.0;
        let mut upstream = Vec::with_capacity(m);
        for (&a, p) in self.interior.iter().zip(&pred) {
            let r = u[a] - p;
            interior_loss += r * r;
            du[a] += ci * r;
            upstream.push(-ci * r);
        }
        interior_loss /= m as f64;
        let op_grad = self.op.apply_grad_batch(&self.inputs, m, &upstream);
        let nu = self.shifts.len();
        for (row, &a) in op_grad.chunks_exact(nu).zip(&self.interior) {
            for (g, s) in row.iter().zip(&self.shifts) {
                du[(a as isize + s) as usize] += g;
            }
        }

        let nb = self.boundary.len();
        let cb = 2.0 * self.boundary_weight / nb as f64;
        let mut boundary_loss = 0.0;
        for &(k, v) in &self.boundary {
            let r = u[k] - v;
            boundary_loss += r * r;
            du[k] += cb * r;
        }
        boundary_loss /= nb as f64;

        du.iter_mut().for_each(|v| *v *= self.output_scale);
        self.net.backward(params, &self.tape, &du, grad, false);
        (interior_loss, boundary_loss)
    }
}

/// Objective handed to the optimizers: the loss times a constant factor.
struct Scaled<'a> {
    problem: Problem<'a>,
    factor: f64,
}

impl Objective for Scaled<'_> {
    fn dim(&self) -> usize {
        self.problem.net.params().len()
    }

    fn value_grad(&mut self, params: &[f64], grad: &mut [f64]) -> f64 {
        let (li, lb) = self.problem.evaluate(params, grad);
        grad.iter_mut().for_each(|g| *g *= self.factor);
        self.factor * (self.problem.interior_weight * li + self.problem.boundary_weight * lb)
    }
}

fn output_scale(op: &LocalOperator, u0: Option<&Field>) -> f64 {
    let s = match (&op.map, u0) {
        (_, Some(u0)) => rms(u0.values()),
        (crate::local_operator::OperatorMap::Trained { normalization, .. }, None) => {
            normalization.target_std.hypot(normalization.target_mean)
        }
        _ => 1.0,
    };
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

/// Exact two-term loss `w_l mean_l (u - G(u, f))^2 + w_b mean_b (B u)^2` of
/// the current network and its gradient with respect to the network
/// parameters. The network output is used unscaled here.
pub fn loinn_loss(net: &Mlp, op: &LocalOperator, f: &Field, u0: Option<&Field>, grid: Grid, cfg: &LoinnConfig) -> Result<LoinnLoss> {
    if cfg.corrected != u0.is_some() {
        return Err(Error::Config("u0 is required exactly when the corrected form is used".into()));
    }
    let mut p = Problem::new(net, op, f, u0, grid, cfg, 1.0)?;
    let mut grad = vec![0.0; net.params().len()];
    let (interior, boundary) = p.evaluate(net.params(), &mut grad);
    Ok(LoinnLoss {
        total: cfg.interior_weight * interior + cfg.boundary_weight * boundary,
        interior,
        boundary,
        grad,
    })
}

/// Result of training a coordinate network.
#[derive(Debug, Clone)]
pub struct LoinnFit {
    /// Prediction on the grid (boundary nodes come from the network too).
    pub u: Field,
    pub record: TrainRecord,
    pub net: Mlp,
    /// Factor applied to the raw network output before adding `u0`.
    pub output_scale: f64,
}

/// Trains LOINN / cLOINN on `grid` and returns the prediction there.
///
/// The network output is multiplied by the RMS of `u0` (cLOINN) or of the
/// operator's training targets (LOINN), and the optimiser sees the loss
/// divided by its initial value. Neither changes the minimiser. For cLOINN
/// the output layer starts at zero so training starts from `u0`.
pub fn train_loinn(op: &LocalOperator, f: &Field, u0: Option<&Field>, grid: Grid, cfg: &LoinnConfig) -> Result<LoinnFit> {
    if cfg.corrected != u0.is_some() {
        return Err(Error::Config("u0 is required exactly when the corrected form is used".into()));
    }
    let mut net = Mlp::init(cfg.net)?;
    if cfg.corrected {
        net.zero_output_layer();
    }
    let scale = output_scale(op, u0);
    let shape = net.clone();
    let problem = Problem::new(&shape, op, f, u0, grid, cfg, scale)?;
    let mut obj = Scaled { problem, factor: 1.0 };
    let mut params = net.params().to_vec();
    let initial = obj.value(&params);
    if initial > 0.0 && initial.is_finite() {
        obj.factor = 1.0 / initial;
    }
    let (n_adam, n_lbfgs) = cfg.budget.split();
    let record = adam(&mut obj, &mut params, n_adam, &cfg.budget.adam)?;
    let refine = lbfgs(&mut obj, &mut params, n_lbfgs, &LbfgsConfig::default());
    let mut record = if n_adam == 0 { refine } else { record.chain(refine) };
    let factor = obj.factor;
    record.final_loss /= factor;
    record.losses.iter_mut().for_each(|(_, l)| *l /= factor);
    net.set_params(&params);
    let u = obj.problem.predict(&params);
    Ok(LoinnFit { u: Field::new(grid, u)?, record, net, output_scale: scale })
}
