//! Gaussian random field forcings with a squared-exponential kernel.

use nalgebra::{Cholesky, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, Grid1D};

/// Correlation length used for test perturbations.
pub const TEST_CORRELATION_LENGTH: f64 = 0.1;
const MAX_JITTER: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrfParams {
    pub sigma: f64,
    pub ell: f64,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_jitter() -> f64 {
    1e-10
}

impl GrfParams {
    pub fn new(sigma: f64, ell: f64) -> Self {
        Self { sigma, ell, jitter: default_jitter() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !(self.ell > 0.0) || !(self.jitter >= 0.0) {
            return Err(Error::Config(format!("invalid GRF parameters {self:?}")));
        }
        Ok(())
    }
}

/// `K[i][j] = sigma^2 exp(-(x_i - x_j)^2 / (2 l^2))`.
pub fn kernel_matrix(grid: &Grid1D, p: &GrfParams) -> DMatrix<f64> {
    let x = grid.nodes();
    let s2 = p.sigma * p.sigma;
    let inv = 1.0 / (2.0 * p.ell * p.ell);
    DMatrix::from_fn(x.len(), x.len(), |i, j| {
        if i == j {
            s2
        } else {
            let d = x[i] - x[j];
            s2 * (-d * d * inv).exp()
        }
    })
}

/// Holds the Cholesky factor of the unit-variance kernel so that many
/// samples can be drawn cheaply. A sample is `sigma * L z`.
#[derive(Debug, Clone)]
pub struct GrfSampler {
    grid: Grid1D,
    sigma: f64,
    lower: DMatrix<f64>,
    jitter_used: f64,
}

impl GrfSampler {
    pub fn new(grid: Grid1D, p: &GrfParams) -> Result<Self> {
        p.validate()?;
        let unit = kernel_matrix(&grid, &GrfParams { sigma: 1.0, ..*p });
        let mut jitter = p.jitter;
        loop {
            let mut m = unit.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(m) {
                return Ok(Self { grid, sigma: p.sigma, lower: chol.unpack(), jitter_used: jitter });
            }
            jitter = if jitter == 0.0 { 1e-12 } else { jitter * 10.0 };
            if jitter > MAX_JITTER * (1.0 + 1e-9) {
                return Err(Error::NotPositiveDefinite { jitter });
            }
        }
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn grid(&self) -> Grid1D {
        self.grid
    }

    /// Draws the standard-normal vector for `seed` and returns `L z` (unit variance).
    pub fn sample_unit(&self, seed: u64) -> Vec<f64> {
        let n = self.grid.n();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        (0..n)
            .map(|i| {
                let row = self.lower.row(i);
                (0..=i).map(|k| row[k] * z[k]).sum()
            })
            .collect()
    }

    pub fn sample(&self, seed: u64) -> Field {
        self.sample_scaled(self.sigma, seed)
    }

    /// Same draw as `sample`, with the standard deviation replaced by `sigma`.
    pub fn sample_scaled(&self, sigma: f64, seed: u64) -> Field {
        let values = self.sample_unit(seed).into_iter().map(|v| sigma * v).collect();
        Field::new(self.grid, values).expect("finite GRF sample")
    }
}

pub fn sample_grf(grid: &Grid1D, p: &GrfParams, seed: u64) -> Result<Field> {
    Ok(GrfSampler::new(*grid, p)?.sample(seed))
}

fn spatial_grid(f0: &Field) -> Result<Grid1D> {
    match f0.grid() {
        Grid::Line(g) => Ok(*g),
        Grid::SpaceTime(_) => Err(Error::GridMismatch("forcings are functions of x only".into())),
    }
}

/// `f_T = f0 + GRF(sigma, l)`.
pub fn make_training_forcing(f0: &Field, p: &GrfParams, seed: u64) -> Result<Field> {
    let grid = spatial_grid(f0)?;
    f0.add(&sample_grf(&grid, p, seed)?)
}

/// `f = f0 + delta_f`, with `delta_f ~ GRF(sigma, l = 0.1)`.
pub fn make_test_forcing(f0: &Field, sigma: f64, seed: u64) -> Result<Field> {
    let grid = spatial_grid(f0)?;
    let p = GrfParams::new(sigma, TEST_CORRELATION_LENGTH);
    f0.add(&sample_grf(&grid, &p, seed)?)
}

/// Test-forcing generator that factors the kernel once and reuses it across seeds and sigmas.
#[derive(Debug, Clone)]
pub struct TestForcings {
    f0: Field,
    sampler: GrfSampler,
}

impl TestForcings {
    pub fn new(f0: &Field) -> Result<Self> {
        let grid = spatial_grid(f0)?;
        let sampler = GrfSampler::new(grid, &GrfParams::new(1.0, TEST_CORRELATION_LENGTH))?;
        Ok(Self { f0: f0.clone(), sampler })
    }

    pub fn forcing(&self, sigma: f64, seed: u64) -> Field {
        self.f0.add(&self.sampler.sample_scaled(sigma, seed)).expect("same grid")
    }
}
