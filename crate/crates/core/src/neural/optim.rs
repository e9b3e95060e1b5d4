use std::collections::VecDeque;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Mlp, Tape};
use crate::error::{Error, Result};

/// Loss history of one optimizer run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    /// `(iteration, loss)` pairs at the logging interval.
    pub losses: Vec<(usize, f64)>,
    pub final_loss: f64,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub termination: String,
}

impl TrainRecord {
    /// Concatenates a follow-up stage (e.g. L-BFGS after Adam).
    pub fn chain(mut self, next: TrainRecord) -> TrainRecord {
        let base = self.iterations;
        self.losses.extend(next.losses.into_iter().map(|(i, l)| (i + base, l)));
        self.final_loss = next.final_loss;
        self.iterations += next.iterations;
        self.wall_time_s += next.wall_time_s;
        self.termination = next.termination;
        self
    }
}

/// A differentiable scalar objective over a flat parameter vector.
pub trait Objective {
    fn dim(&self) -> usize;

    /// Returns the loss and writes its gradient into `grad`.
    fn value_grad(&mut self, params: &[f64], grad: &mut [f64]) -> f64;

    /// Loss without a gradient; defaults to discarding the gradient.
    fn value(&mut self, params: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.value_grad(params, &mut g)
    }

    /// Switches stochastic objectives to their deterministic full-batch form.
    fn set_full_batch(&mut self) {}
}

/// Mean squared error of a network over a fixed dataset, optionally on a
/// seeded uniform subsample per evaluation.
pub struct MseObjective<'a> {
    net: &'a Mlp,
    inputs: &'a [f64],
    targets: &'a [f64],
    n: usize,
    batch: Option<usize>,
    rng: ChaCha8Rng,
    tape: Tape,
    gather_x: Vec<f64>,
    gather_t: Vec<f64>,
}

impl<'a> MseObjective<'a> {
    /// `net` fixes the architecture; its parameters are ignored.
    pub fn new(net: &'a Mlp, inputs: &'a [f64], targets: &'a [f64], batch: Option<usize>, seed: u64) -> Result<Self> {
        let d = net.config().input_dim;
        let n = targets.len();
        if n == 0 {
            return Err(Error::Empty("training set"));
        }
        if inputs.len() != n * d {
            return Err(Error::DimensionMismatch { expected: n * d, got: inputs.len() });
        }
        let batch = batch.filter(|&b| b > 0 && b < n);
        Ok(Self {
            net,
            inputs,
            targets,
            n,
            batch,
            rng: ChaCha8Rng::seed_from_u64(seed),
            tape: Tape::default(),
            gather_x: Vec::new(),
            gather_t: Vec::new(),
        })
    }
}

impl Objective for MseObjective<'_> {
    fn dim(&self) -> usize {
        self.net.params().len()
    }

    fn value_grad(&mut self, params: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.net.config().input_dim;
        let (x, t): (&[f64], &[f64]) = match self.batch {
            Some(b) => {
                let idx = sample(&mut self.rng, self.n, b);
                self.gather_x.clear();
                self.gather_t.clear();
                for i in idx.iter() {
                    self.gather_x.extend_from_slice(&self.inputs[i * d..(i + 1) * d]);
                    self.gather_t.push(self.targets[i]);
                }
                (&self.gather_x, &self.gather_t)
            }
            None => (self.inputs, self.targets),
        };
        let m = t.len();
        self.net.forward_with_params(params, x, m, &mut self.tape);
        let out = self.tape.output();
        let mut loss = 0.0;
        let scale = 2.0 / m as f64;
        let upstream: Vec<f64> = out
            .iter()
            .zip(t)
            .map(|(y, t)| {
                let r = y - t;
                loss += r * r;
                scale * r
            })
            .collect();
        self.net.backward(params, &self.tape, &upstream, grad, false);
        loss / m as f64
    }

    fn set_full_batch(&mut self) {
        self.batch = None;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning rate at the last iteration relative to `lr`; the rate decays
    /// geometrically in between. `1.0` keeps it constant.
    #[serde(default = "unit")]
    pub final_lr_ratio: f64,
    /// Loss is recorded every `log_every` iterations.
    pub log_every: usize,
}

fn unit() -> f64 {
    1.0
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, final_lr_ratio: 1.0, log_every: 100 }
    }
}

/// Runs `iters` Adam steps on `params` in place.
pub fn adam(obj: &mut dyn Objective, params: &mut [f64], iters: usize, cfg: &AdamConfig) -> Result<TrainRecord> {
    let start = Instant::now();
    let n = params.len();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut record = TrainRecord { termination: "iteration budget".into(), ..Default::default() };
    let log_every = cfg.log_every.max(1);
    let (mut b1t, mut b2t) = (1.0, 1.0);
    let decay = if iters > 1 { cfg.final_lr_ratio.powf(1.0 / (iters - 1) as f64) } else { 1.0 };
    let mut lr = cfg.lr;
    for it in 0..iters {
        let loss = obj.value_grad(params, &mut g);
        if !loss.is_finite() || g.iter().any(|x| !x.is_finite()) {
            record.iterations = it;
            record.final_loss = loss;
            record.termination = "non-finite loss".into();
            record.wall_time_s = start.elapsed().as_secs_f64();
            return Err(Error::TrainingDiverged(Box::new(record)));
        }
        if it % log_every == 0 {
            record.losses.push((it, loss));
        }
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        let step = lr * (1.0 - b2t).sqrt() / (1.0 - b1t);
        lr *= decay;
        for i in 0..n {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            params[i] -= step * m[i] / (v[i].sqrt() + cfg.eps);
        }
        record.iterations = it + 1;
    }
    obj.set_full_batch();
    record.final_loss = if iters > 0 { obj.value(params) } else { f64::NAN };
    if iters > 0 && !record.final_loss.is_finite() {
        record.termination = "non-finite loss".into();
        return Err(Error::TrainingDiverged(Box::new(record)));
    }
    record.wall_time_s = start.elapsed().as_secs_f64();
    Ok(record)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsConfig {
    pub history: usize,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    pub max_backtracks: usize,
    /// Stop once the loss falls below this value.
    pub loss_floor: f64,
    /// Stop once the largest gradient entry falls below this value.
    pub grad_tol: f64,
    pub log_every: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self { history: 10, c1: 1e-4, max_backtracks: 40, loss_floor: 1e-14, grad_tol: 1e-14, log_every: 10 }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Full-batch L-BFGS (two-loop recursion, backtracking Armijo search).
/// Accepted steps strictly decrease the loss, so the final loss never
/// exceeds the initial one.
pub fn lbfgs(obj: &mut dyn Objective, params: &mut [f64], max_iters: usize, cfg: &LbfgsConfig) -> TrainRecord {
    let start = Instant::now();
    obj.set_full_batch();
    let n = params.len();
    let mut g = vec![0.0; n];
    let mut f = obj.value_grad(params, &mut g);
    let mut record = TrainRecord { termination: "iteration budget".into(), ..Default::default() };
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.history);
    let mut trial = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let log_every = cfg.log_every.max(1);
    let mut it = 0;
    if !f.is_finite() {
        record.termination = "non-finite initial loss".into();
        record.final_loss = f;
        return record;
    }
    while it < max_iters {
        if it % log_every == 0 {
            record.losses.push((it, f));
        }
        if f <= cfg.loss_floor {
            record.termination = "loss floor reached".into();
            break;
        }
        if g.iter().fold(0.0_f64, |a, v| a.max(v.abs())) <= cfg.grad_tol {
            record.termination = "gradient tolerance reached".into();
            break;
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = hist.back().map(|(s, y, _)| dot(s, y) / dot(y, y)).unwrap_or_else(|| {
            // first step: unit length in parameter space
            1.0 / dot(&g, &g).sqrt().max(1e-300)
        });
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.into_iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            hist.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = 1.0;
        let mut accepted = false;
        let mut f_new = f;
        for _ in 0..cfg.max_backtracks {
            for i in 0..n {
                trial[i] = params[i] + step * dir[i];
            }
            f_new = obj.value_grad(&trial, &mut g_new);
            if f_new.is_finite() && f_new <= f + cfg.c1 * step * slope && f_new < f {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            record.termination = "line search failed".into();
            break;
        }
        let s: Vec<f64> = trial.iter().zip(params.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&y, &y).max(1e-300) && sy > 0.0 {
            if hist.len() == cfg.history {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        params.copy_from_slice(&trial);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
        it += 1;
    }
    record.iterations = it;
    record.final_loss = f;
    record.wall_time_s = start.elapsed().as_secs_f64();
    record
}
