//! Finite-difference reference solvers (central differences in space,
//! backward Euler in time) that produce ground-truth solutions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{EquationKind, EquationSpec, Field, Grid, Grid1D, GridST};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub grid: Grid,
    pub scheme: String,
    /// Euclidean norm of the discrete residual (last time step for evolution problems).
    pub residual_norm: f64,
    pub time_steps: usize,
}

/// LU factors of a constant-coefficient tridiagonal matrix
/// (`lower` on the sub-diagonal, `diag`, `upper` on the super-diagonal).
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    lower: f64,
    upper: f64,
    /// Modified super-diagonal of the forward sweep.
    c: Vec<f64>,
    /// Pivots of the forward sweep.
    pivot: Vec<f64>,
}

impl Tridiagonal {
    pub fn new(n: usize, lower: f64, diag: f64, upper: f64) -> Self {
        let mut c = vec![0.0; n];
        let mut pivot = vec![0.0; n];
        pivot[0] = diag;
        c[0] = upper / diag;
        for i in 1..n {
            pivot[i] = diag - lower * c[i - 1];
            c[i] = upper / pivot[i];
        }
        Self { lower, upper, c, pivot }
    }

    pub fn len(&self) -> usize {
        self.pivot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pivot.is_empty()
    }

    /// Thomas algorithm; `rhs` is overwritten with the solution.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = self.len();
        debug_assert_eq!(rhs.len(), n);
        rhs[0] /= self.pivot[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.lower * rhs[i - 1]) / self.pivot[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= self.c[i] * rhs[i + 1];
        }
    }

    pub fn apply(&self, diag: f64, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|i| {
                let mut v = diag * x[i];
                if i > 0 {
                    v += self.lower * x[i - 1];
                }
                if i + 1 < n {
                    v += self.upper * x[i + 1];
                }
                v
            })
            .collect()
    }
}

fn expect_spatial(f: &Field, n: usize) -> Result<Grid1D> {
    match f.grid() {
        Grid::Line(g) if g.n() == n => Ok(*g),
        _ => Err(Error::GridMismatch(format!("forcing must be a spatial field with {n} nodes"))),
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `u'' = f` on `[0, 1]` with `u(0) = u(1) = 0`.
pub fn solve_poisson(f: &Field) -> Result<(Field, SolverReport)> {
    let grid = match f.grid() {
        Grid::Line(g) => *g,
        Grid::SpaceTime(_) => return Err(Error::GridMismatch("Poisson forcing must be 1D".into())),
    };
    let n = grid.n();
    let h2 = grid.h() * grid.h();
    let fv = f.values();
    let m = n - 2;
    let tri = Tridiagonal::new(m, 1.0, -2.0, 1.0);
    let mut rhs: Vec<f64> = (1..n - 1).map(|i| h2 * fv[i]).collect();
    tri.solve_in_place(&mut rhs);
    let mut u = vec![0.0; n];
    u[1..n - 1].copy_from_slice(&rhs);

    let residual: Vec<f64> = (1..n - 1).map(|i| (u[i - 1] - 2.0 * u[i] + u[i + 1]) / h2 - fv[i]).collect();
    let report = SolverReport {
        grid: grid.into(),
        scheme: "central differences, Thomas solve".into(),
        residual_norm: norm(&residual),
        time_steps: 0,
    };
    Ok((Field::new(grid, u)?, report))
}

/// Backward-Euler stepping for `u_t = D u_xx + k u^2 + f(x)`, with the
/// reaction term lagged one step. `k = 0` gives the linear equation.
fn march(f: &[f64], diffusion: f64, reaction: f64, grid: GridST, initial: &[f64]) -> Result<(Vec<f64>, f64)> {
    let (nx, nt) = (grid.nx(), grid.nt());
    let (hx, ht) = (grid.hx(), grid.ht());
    let r = diffusion * ht / (hx * hx);
    let m = nx - 2;
    let tri = Tridiagonal::new(m, -r, 1.0 + 2.0 * r, -r);
    let mut u = vec![0.0; nx * nt];
    u[..nx].copy_from_slice(initial);
    u[0] = 0.0;
    u[nx - 1] = 0.0;
    let mut rhs = vec![0.0; m];
    let mut last_residual = 0.0;
    for j in 1..nt {
        let (prev_rows, cur_rows) = u.split_at_mut(j * nx);
        let prev = &prev_rows[(j - 1) * nx..];
        for i in 1..nx - 1 {
            let p = prev[i];
            rhs[i - 1] = p + ht * (reaction * p * p + f[i]);
        }
        let source = rhs.clone();
        tri.solve_in_place(&mut rhs);
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { step: j });
        }
        let cur = &mut cur_rows[..nx];
        cur[0] = 0.0;
        cur[nx - 1] = 0.0;
        cur[1..nx - 1].copy_from_slice(&rhs);
        if j == nt - 1 {
            let applied = tri.apply(1.0 + 2.0 * r, &rhs);
            let res: Vec<f64> = applied.iter().zip(&source).map(|(a, b)| a - b).collect();
            last_residual = norm(&res);
        }
    }
    Ok((u, last_residual))
}

/// `u_t = D u_xx + f(x)`, zero boundary and initial data.
pub fn solve_linear_diffusion(f: &Field, eq: &EquationSpec, grid: GridST) -> Result<(Field, SolverReport)> {
    if eq.kind != EquationKind::LinearDiffusion {
        return Err(Error::Unsupported(format!("{:?} is not linear diffusion", eq.kind)));
    }
    expect_spatial(f, grid.nx())?;
    let (u, residual_norm) = march(f.values(), eq.diffusion, 0.0, grid, &vec![0.0; grid.nx()])?;
    let report = SolverReport {
        grid: grid.into(),
        scheme: "central differences, backward Euler".into(),
        residual_norm,
        time_steps: grid.nt() - 1,
    };
    Ok((Field::new(grid, u)?, report))
}

/// `u_t = D u_xx + k u^2 + f(x)`, zero boundary and initial data; diffusion
/// implicit, reaction explicit.
pub fn solve_nonlinear_dr(f: &Field, eq: &EquationSpec, grid: GridST) -> Result<(Field, SolverReport)> {
    if eq.kind != EquationKind::NonlinearDiffusionReaction {
        return Err(Error::Unsupported(format!("{:?} is not diffusion-reaction", eq.kind)));
    }
    expect_spatial(f, grid.nx())?;
    let (u, residual_norm) = march(f.values(), eq.diffusion, eq.reaction_rate(), grid, &vec![0.0; grid.nx()])?;
    let report = SolverReport {
        grid: grid.into(),
        scheme: "central differences, backward Euler diffusion, explicit reaction".into(),
        residual_norm,
        time_steps: grid.nt() - 1,
    };
    Ok((Field::new(grid, u)?, report))
}

/// Dispatches on the equation kind. `grid` must be a line grid for Poisson
/// and a space-time grid otherwise; `f` is always spatial.
pub fn solve(eq: &EquationSpec, f: &Field, grid: Grid) -> Result<(Field, SolverReport)> {
    match (eq.kind, grid) {
        (EquationKind::Poisson1D, Grid::Line(g)) => {
            expect_spatial(f, g.n())?;
            solve_poisson(f)
        }
        (EquationKind::LinearDiffusion, Grid::SpaceTime(g)) => solve_linear_diffusion(f, eq, g),
        (EquationKind::NonlinearDiffusionReaction, Grid::SpaceTime(g)) => solve_nonlinear_dr(f, eq, g),
        _ => Err(Error::GridMismatch(format!("{:?} cannot be solved on {grid:?}", eq.kind))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn tridiagonal_matches_dense_product() {
        let tri = Tridiagonal::new(6, -0.3, 2.5, -0.7);
        let x: Vec<f64> = (0..6).map(|i| (i as f64).cos()).collect();
        let mut b = tri.apply(2.5, &x);
        tri.solve_in_place(&mut b);
        for (a, e) in b.iter().zip(&x) {
            assert!((a - e).abs() < 1e-14);
        }
    }

    #[test]
    fn poisson_zero_and_constant_forcing() {
        let g = Grid1D::new(11).unwrap();
        let (u, _) = solve_poisson(&Field::zeros(g)).unwrap();
        assert!(u.values().iter().all(|v| *v == 0.0));
        let (u, report) = solve_poisson(&Field::from_fn(g, |_, _| 1.0)).unwrap();
        for i in 0..11 {
            let x = g.x(i);
            assert!((u.values()[i] - x * (x - 1.0) / 2.0).abs() < 1e-14);
        }
        assert!(report.residual_norm <= 1e-10 * (11f64).sqrt());
    }

    #[test]
    fn poisson_second_order_convergence() {
        let mut errors = Vec::new();
        for n in [11, 101, 1001] {
            let g = Grid1D::new(n).unwrap();
            let f = Field::from_fn(g, |x, _| -4.0 * PI * PI * (2.0 * PI * x).sin());
            let (u, report) = solve_poisson(&f).unwrap();
            assert!(report.residual_norm <= 1e-10 * f.values().iter().map(|v| v * v).sum::<f64>().sqrt());
            let err = (0..n).map(|i| (u.values()[i] - (2.0 * PI * g.x(i)).sin()).abs()).fold(0.0, f64::max);
            errors.push(err);
        }
        // h shrinks 10x per level: O(h^2) means ~100x error reduction
        for w in errors.windows(2) {
            let order = (w[0] / w[1]).log10();
            assert!((1.9..2.1).contains(&order), "order {order}, errors {errors:?}");
        }
    }

    #[test]
    fn poisson_maximum_principle() {
        let g = Grid1D::new(64).unwrap();
        let f = Field::from_fn(g, |x, _| -(3.0 * x).sin().abs() - 0.1 * x);
        let (u, _) = solve_poisson(&f).unwrap();
        assert!(u.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn diffusion_zero_forcing_is_zero() {
        let g = GridST::square(21).unwrap();
        let eq = EquationSpec::linear_diffusion(0.01);
        let (u, _) = solve_linear_diffusion(&Field::zeros(g.space()), &eq, g).unwrap();
        assert!(u.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn diffusion_grows_toward_steady_state() {
        // u_t = D u_xx + f0 with a long horizon approaches s = 0.9 sin(2 pi x) / (4 pi^2 D).
        // With D = 0.01 the decay rate is 4 pi^2 D ~ 0.39, so at t = 1 only
        // 1 - exp(-0.39) of the steady amplitude has built up.
        let d = 0.01;
        let g = GridST::new(1001, 1001).unwrap();
        let eq = EquationSpec::linear_diffusion(d);
        let f0 = Field::from_fn(g.space(), |x, _| 0.9 * (2.0 * PI * x).sin());
        let (u, _) = solve_linear_diffusion(&f0, &eq, g).unwrap();
        let last = &u.values()[1000 * 1001..];
        let lambda = 4.0 * PI * PI * d;
        let amp = 0.9 / lambda * (1.0 - (-lambda).exp());
        let x = 250; // x = 0.25, where sin(2 pi x) = 1
        assert!((last[x] - amp).abs() / amp < 0.02, "{} vs {}", last[x], amp);

        // and at a horizon where the transient has died out, the steady state
        let g_long = GridST::new(1001, 1001).unwrap();
        let steady = 0.9 / lambda;
        let slow = EquationSpec::linear_diffusion(d);
        let f_scaled = f0.scale(1.0);
        // rescale time: t in [0, 1] with coefficient D*T and forcing*T, T = 20
        let t_end = 20.0;
        let eq_long = EquationSpec { diffusion: slow.diffusion * t_end, ..slow };
        let (u_long, _) = solve_linear_diffusion(&f_scaled.scale(t_end), &eq_long, g_long).unwrap();
        let v = u_long.values()[1000 * 1001 + x];
        assert!((v - steady).abs() / steady < 0.02, "{v} vs {steady}");
    }

    #[test]
    fn diffusion_is_first_order_in_time() {
        let eq = EquationSpec::linear_diffusion(0.01);
        let f = Field::from_fn(Grid1D::new(101).unwrap(), |x, _| 0.9 * (2.0 * PI * x).sin() + x * (1.0 - x));
        let final_row = |nt: usize| {
            let g = GridST::new(101, nt).unwrap();
            let (u, _) = solve_linear_diffusion(&f, &eq, g).unwrap();
            u.values()[(nt - 1) * 101..].to_vec()
        };
        let a = final_row(26);
        let b = final_row(51);
        let c = final_row(101);
        let d_ab = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let d_bc = b.iter().zip(&c).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let ratio = d_ab / d_bc;
        assert!((1.8..2.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn diffusion_decays_monotonically_without_forcing() {
        let g = GridST::new(51, 200).unwrap();
        let init: Vec<f64> = (0..51).map(|i| ((i as f64) * 0.37).sin().abs()).collect();
        let (u, _) = march(&[0.0; 51], 0.05, 0.0, g, &init).unwrap();
        let mut prev = f64::INFINITY;
        for j in 0..200 {
            let m = u[j * 51..(j + 1) * 51].iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            assert!(m <= prev + 1e-15);
            prev = m;
        }
    }

    #[test]
    fn nonlinear_with_zero_rate_matches_linear() {
        let g = GridST::new(101, 51).unwrap();
        let f = Field::from_fn(g.space(), |x, _| (7.0 * x).cos());
        let lin = solve_linear_diffusion(&f, &EquationSpec::linear_diffusion(0.01), g).unwrap().0;
        let non = solve_nonlinear_dr(&f, &EquationSpec::nonlinear_diffusion_reaction(0.01, 0.0), g).unwrap().0;
        for (a, b) in lin.values().iter().zip(non.values()) {
            assert!((a - b).abs() <= 1e-12);
        }
        let zero = solve_nonlinear_dr(&Field::zeros(g.space()), &EquationSpec::nonlinear_diffusion_reaction(0.01, 0.01), g)
            .unwrap()
            .0;
        assert!(zero.values().iter().all(|v| *v == 0.0));
    }

    /// Fully implicit backward Euler with Newton iterations per step.
    fn implicit_newton(f: &[f64], d: f64, k: f64, grid: GridST) -> Vec<f64> {
        let (nx, nt) = (grid.nx(), grid.nt());
        let r = d * grid.ht() / (grid.hx() * grid.hx());
        let ht = grid.ht();
        let m = nx - 2;
        let mut u = vec![0.0; nx * nt];
        let mut prev = vec![0.0; m];
        for j in 1..nt {
            let mut w = prev.clone();
            for _ in 0..50 {
                // F(w) = (1+2r) w - r(w_-1 + w_+1) - ht k w^2 - prev - ht f
                let mut resid = vec![0.0; m];
                for i in 0..m {
                    let left = if i > 0 { w[i - 1] } else { 0.0 };
                    let right = if i + 1 < m { w[i + 1] } else { 0.0 };
                    resid[i] = (1.0 + 2.0 * r) * w[i] - r * (left + right) - ht * k * w[i] * w[i] - prev[i] - ht * f[i + 1];
                }
                // Jacobian tridiagonal with varying diagonal: solve with a dense Thomas sweep.
                let diag: Vec<f64> = (0..m).map(|i| 1.0 + 2.0 * r - 2.0 * ht * k * w[i]).collect();
                let mut cp = vec![0.0; m];
                let mut dp = vec![0.0; m];
                cp[0] = -r / diag[0];
                dp[0] = resid[0] / diag[0];
                for i in 1..m {
                    let den = diag[i] + r * cp[i - 1];
                    cp[i] = -r / den;
                    dp[i] = (resid[i] + r * dp[i - 1]) / den;
                }
                for i in (0..m - 1).rev() {
                    dp[i] -= cp[i] * dp[i + 1];
                }
                let mut step = 0.0_f64;
                for i in 0..m {
                    w[i] -= dp[i];
                    step = step.max(dp[i].abs());
                }
                if step < 1e-15 {
                    break;
                }
            }
            u[j * nx + 1..j * nx + 1 + m].copy_from_slice(&w);
            prev = w;
        }
        u
    }

    #[test]
    fn semi_implicit_matches_fully_implicit_oracle() {
        let g = GridST::square(1001).unwrap();
        let eq = EquationSpec::nonlinear_diffusion_reaction(0.01, 0.01);
        let f0 = Field::from_fn(g.space(), |x, _| 0.9 * (2.0 * PI * x).sin());
        let (u, report) = solve_nonlinear_dr(&f0, &eq, g).unwrap();
        assert!(report.residual_norm < 1e-10);
        let oracle = implicit_newton(f0.values(), 0.01, 0.01, g);
        let num: f64 = u.values().iter().zip(&oracle).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = oracle.iter().map(|b| b * b).sum();
        assert!((num / den).sqrt() < 1e-4);
    }

    #[test]
    fn nonlinear_blow_up_is_reported() {
        let g = GridST::new(11, 101).unwrap();
        let eq = EquationSpec::nonlinear_diffusion_reaction(0.01, 1e4);
        let f = Field::from_fn(g.space(), |_, _| 1e3);
        assert!(matches!(solve_nonlinear_dr(&f, &eq, g), Err(Error::BlowUp { .. })));
    }

    #[test]
    fn solvers_are_deterministic() {
        let g = GridST::new(51, 31).unwrap();
        let eq = EquationSpec::nonlinear_diffusion_reaction(0.01, 0.01);
        let f = Field::from_fn(g.space(), |x, _| (9.0 * x).sin());
        assert_eq!(solve_nonlinear_dr(&f, &eq, g).unwrap().0, solve_nonlinear_dr(&f, &eq, g).unwrap().0);
    }
}
