use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

/// Relative node offset `(space, time)`. Line grids only use `dt = 0`.
pub type Offset = (i32, i32);

/// A local domain: which neighbouring `u` and `f` values feed the local
/// operator that predicts `u` at the centre node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StencilSpec {
    pub name: String,
    pub u_offsets: Vec<Offset>,
    pub f_offsets: Vec<Offset>,
    pub space_time: bool,
}

impl StencilSpec {
    pub fn new(name: impl Into<String>, u_offsets: Vec<Offset>, f_offsets: Vec<Offset>, space_time: bool) -> Result<Self> {
        let name = name.into();
        if u_offsets.contains(&(0, 0)) {
            return Err(Error::Config(format!("stencil `{name}` uses the target node as an input")));
        }
        if !space_time && u_offsets.iter().chain(&f_offsets).any(|o| o.1 != 0) {
            return Err(Error::Config(format!("1D stencil `{name}` has time offsets")));
        }
        if u_offsets.is_empty() && f_offsets.is_empty() {
            return Err(Error::Config(format!("stencil `{name}` has no inputs")));
        }
        Ok(Self { name, u_offsets, f_offsets, space_time })
    }

    /// `{u(x_{i-1}), u(x_{i+1}), f(x_i)} -> u(x_i)`.
    pub fn poisson_g1() -> Self {
        Self::new("poisson_g1", vec![(-1, 0), (1, 0)], vec![(0, 0)], false).expect("valid preset")
    }

    /// `{u(x_{i-1}), u(x_{i+1}), f(x_{i-1}), f(x_i), f(x_{i+1})} -> u(x_i)`.
    pub fn poisson_g2() -> Self {
        Self::new("poisson_g2", vec![(-1, 0), (1, 0)], vec![(-1, 0), (0, 0), (1, 0)], false).expect("valid preset")
    }

    /// Four nodes: the previous time level and both spatial neighbours.
    pub fn diffusion_g1() -> Self {
        Self::new("diffusion_g1", vec![(0, -1), (-1, 0), (1, 0)], vec![(0, 0)], true).expect("valid preset")
    }

    /// Six nodes: three at the previous time level and both spatial neighbours.
    pub fn diffusion_g2() -> Self {
        Self::new("diffusion_g2", vec![(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0)], vec![(0, 0)], true)
            .expect("valid preset")
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "poisson_g1" => Ok(Self::poisson_g1()),
            "poisson_g2" => Ok(Self::poisson_g2()),
            "diffusion_g1" => Ok(Self::diffusion_g1()),
            "diffusion_g2" => Ok(Self::diffusion_g2()),
            other => Err(Error::Config(format!("unknown stencil preset `{other}`"))),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.u_offsets.len() + self.f_offsets.len()
    }

    fn check_grid(&self, grid: &Grid) -> Result<(usize, usize)> {
        match (grid, self.space_time) {
            (Grid::Line(g), false) => Ok((g.n(), 1)),
            (Grid::SpaceTime(g), true) => Ok((g.nx(), g.nt())),
            _ => Err(Error::GridMismatch(format!("stencil `{}` does not fit grid {grid:?}", self.name))),
        }
    }

    fn fits(&self, i: usize, j: usize, nx: usize, nt: usize) -> bool {
        let inside = |&(dx, dt): &Offset| {
            let (a, b) = (i as i64 + dx as i64, j as i64 + dt as i64);
            a >= 0 && a < nx as i64 && b >= 0 && b < nt as i64
        };
        self.u_offsets.iter().all(inside) && self.f_offsets.iter().all(inside)
    }

    /// Whether `(i, j)` is a non-boundary node whose whole stencil lies on the grid.
    pub fn is_admissible(&self, grid: &Grid, i: usize, j: usize) -> bool {
        let Ok((nx, nt)) = self.check_grid(grid) else { return false };
        if i >= nx || j >= nt {
            return false;
        }
        let idx = j * nx + i;
        !grid.is_boundary(idx) && self.fits(i, j, nx, nt)
    }

    /// Flat indices of every admissible anchor, time-major.
    pub fn anchors(&self, grid: &Grid) -> Result<Vec<usize>> {
        let (nx, nt) = self.check_grid(grid)?;
        let out: Vec<usize> = (0..nt)
            .flat_map(|j| (0..nx).map(move |i| (i, j)))
            .filter(|&(i, j)| !grid.is_boundary(j * nx + i) && self.fits(i, j, nx, nt))
            .map(|(i, j)| j * nx + i)
            .collect();
        if out.is_empty() {
            return Err(Error::GridTooSmall(self.name.clone()));
        }
        Ok(out)
    }

    /// Per-input flat-index shifts relative to the anchor for the `u` inputs.
    pub fn u_shifts(&self, nx: usize) -> Vec<isize> {
        self.u_offsets.iter().map(|&(dx, dt)| dx as isize + dt as isize * nx as isize).collect()
    }

    /// Fills `out` with the stencil inputs at `anchor`, `u` values first.
    pub fn gather(&self, u: &[f64], f: &ForcingView<'_>, nx: usize, anchor: usize, out: &mut [f64]) {
        let (i, j) = ((anchor % nx) as i64, (anchor / nx) as i64);
        let mut k = 0;
        for &(dx, dt) in &self.u_offsets {
            out[k] = u[((j + dt as i64) * nx as i64 + i + dx as i64) as usize];
            k += 1;
        }
        for &(dx, dt) in &self.f_offsets {
            out[k] = f.at((i + dx as i64) as usize, (j + dt as i64) as usize);
            k += 1;
        }
    }

    /// Gathers the inputs of many anchors into one row-major matrix.
    pub fn gather_all(&self, u: &[f64], f: &ForcingView<'_>, nx: usize, anchors: &[usize]) -> Vec<f64> {
        let d = self.input_dim();
        let mut out = vec![0.0; anchors.len() * d];
        for (row, &a) in out.chunks_exact_mut(d).zip(anchors) {
            self.gather(u, f, nx, a, row);
        }
        out
    }
}

/// Forcing values as seen by a stencil: either a spatial profile that is
/// constant in time, or a full space-time field.
#[derive(Debug, Clone, Copy)]
pub enum ForcingView<'a> {
    Spatial(&'a [f64]),
    Full { values: &'a [f64], nx: usize },
}

impl ForcingView<'_> {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        match self {
            ForcingView::Spatial(v) => v[i],
            ForcingView::Full { values, nx } => values[j * nx + i],
        }
    }
}

/// Interprets `f` relative to the solution grid `grid`.
pub fn forcing_view<'a>(f: &'a Field, grid: &Grid) -> Result<ForcingView<'a>> {
    match (f.grid(), grid) {
        (Grid::Line(fg), g) if fg.n() == g.shape().0 => Ok(ForcingView::Spatial(f.values())),
        (Grid::SpaceTime(fg), Grid::SpaceTime(g)) if fg == g => {
            Ok(ForcingView::Full { values: f.values(), nx: g.nx() })
        }
        _ => Err(Error::GridMismatch("forcing does not match the solution grid".into())),
    }
}
