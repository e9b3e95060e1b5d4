//! Structured grids on the unit interval / unit square, nodal fields, and
//! the equation descriptors shared by every other module.
//!
//! Space-time fields are stored time-major: node `(i, j)` (space index `i`,
//! time index `j`) lives at `values[j * nx + i]`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Equispaced grid on `[0, 1]` with `n` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid1D {
    n: usize,
}

impl Grid1D {
    pub fn new(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidGrid(format!("need at least 3 nodes, got {n}")));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.n - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 / (self.n - 1) as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }
}

/// Equispaced space-time grid on `[0, 1] x [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridST {
    nx: usize,
    nt: usize,
}

impl GridST {
    pub fn new(nx: usize, nt: usize) -> Result<Self> {
        if nx < 3 || nt < 2 {
            return Err(Error::InvalidGrid(format!(
                "space-time grid needs nx >= 3 and nt >= 2, got {nx}x{nt}"
            )));
        }
        Ok(Self { nx, nt })
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn hx(&self) -> f64 {
        1.0 / (self.nx - 1) as f64
    }

    pub fn ht(&self) -> f64 {
        1.0 / (self.nt - 1) as f64
    }

    pub fn space(&self) -> Grid1D {
        Grid1D { n: self.nx }
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }
}

/// Either kind of grid a field can live on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Grid {
    Line(Grid1D),
    SpaceTime(GridST),
}

impl From<Grid1D> for Grid {
    fn from(g: Grid1D) -> Self {
        Grid::Line(g)
    }
}

impl From<GridST> for Grid {
    fn from(g: GridST) -> Self {
        Grid::SpaceTime(g)
    }
}

impl Grid {
    pub fn len(&self) -> usize {
        match self {
            Grid::Line(g) => g.n,
            Grid::SpaceTime(g) => g.nx * g.nt,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(nx, nt)`; `nt == 1` for a line grid.
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Grid::Line(g) => (g.n, 1),
            Grid::SpaceTime(g) => (g.nx, g.nt),
        }
    }

    pub fn spatial(&self) -> Grid1D {
        match self {
            Grid::Line(g) => *g,
            Grid::SpaceTime(g) => g.space(),
        }
    }

    /// Node coordinates `(x, t)` of a flat index; `t = 0` on line grids.
    pub fn coords(&self, idx: usize) -> (f64, f64) {
        match self {
            Grid::Line(g) => (g.x(idx), 0.0),
            Grid::SpaceTime(g) => {
                let (i, j) = (idx % g.nx, idx / g.nx);
                (i as f64 * g.hx(), j as f64 * g.ht())
            }
        }
    }

    /// Spatial boundary nodes, plus the initial time level for space-time grids.
    pub fn is_boundary(&self, idx: usize) -> bool {
        match self {
            Grid::Line(g) => idx == 0 || idx == g.n - 1,
            Grid::SpaceTime(g) => {
                let (i, j) = (idx % g.nx, idx / g.nx);
                i == 0 || i == g.nx - 1 || j == 0
            }
        }
    }

    pub fn boundary_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.is_boundary(k)).collect()
    }

    pub fn dimension(&self) -> usize {
        match self {
            Grid::Line(_) => 1,
            Grid::SpaceTime(_) => 2,
        }
    }
}

/// Nodal values on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: impl Into<Grid>, values: Vec<f64>) -> Result<Self> {
        let grid = grid.into();
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid("field contains non-finite values".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: impl Into<Grid>) -> Self {
        let grid = grid.into();
        Self { values: vec![0.0; grid.len()], grid }
    }

    /// Samples `f(x, t)` at every node.
    pub fn from_fn(grid: impl Into<Grid>, f: impl Fn(f64, f64) -> f64) -> Self {
        let grid = grid.into();
        let values = (0..grid.len())
            .map(|k| {
                let (x, t) = grid.coords(k);
                f(x, t)
            })
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Pointwise sum; both fields must share a grid.
    pub fn add(&self, other: &Field) -> Result<Field> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("cannot add fields on different grids".into()));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(Field { grid: self.grid, values })
    }

    pub fn scale(&self, a: f64) -> Field {
        Field { grid: self.grid, values: self.values.iter().map(|v| a * v).collect() }
    }

    /// Repeats a spatial field at every time level of `grid`.
    pub fn broadcast_in_time(&self, grid: GridST) -> Result<Field> {
        match self.grid {
            Grid::Line(g) if g.n == grid.nx => {
                let mut values = Vec::with_capacity(grid.nx * grid.nt);
                for _ in 0..grid.nt {
                    values.extend_from_slice(&self.values);
                }
                Ok(Field { grid: grid.into(), values })
            }
            _ => Err(Error::GridMismatch("broadcast requires a matching spatial field".into())),
        }
    }

    /// Writes the CSV form: a `# grid: .. spacing: ..` header then one value per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 24 + 64);
        match self.grid {
            Grid::Line(g) => {
                let _ = writeln!(out, "# grid: {} spacing: {}", g.n, g.h());
            }
            Grid::SpaceTime(g) => {
                let _ = writeln!(out, "# grid: {},{} spacing: {},{}", g.nx, g.nt, g.hx(), g.ht());
            }
        }
        for v in &self.values {
            let _ = writeln!(out, "{v}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Field> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty field file".into()))?;
        let rest = header
            .strip_prefix("# grid:")
            .ok_or_else(|| Error::Parse(format!("bad header `{header}`")))?;
        let (dims, _) = rest
            .split_once("spacing:")
            .ok_or_else(|| Error::Parse(format!("bad header `{header}`")))?;
        let dims: Vec<usize> = dims
            .trim()
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| Error::Parse(format!("bad grid size `{s}`"))))
            .collect::<Result<_>>()?;
        let grid: Grid = match dims.as_slice() {
            [n] => Grid1D::new(*n)?.into(),
            [nx, nt] => GridST::new(*nx, *nt)?.into(),
            _ => return Err(Error::Parse(format!("bad header `{header}`"))),
        };
        let values = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad value `{l}`"))))
            .collect::<Result<Vec<_>>>()?;
        Field::new(grid, values)
    }
}

/// Which of the three benchmark equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquationKind {
    Poisson1D,
    LinearDiffusion,
    NonlinearDiffusionReaction,
}

/// Boundary / initial condition descriptor. Every benchmark uses homogeneous Dirichlet data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    #[default]
    ZeroDirichlet,
}

impl BoundaryCondition {
    pub fn value(&self, _x: f64, _t: f64) -> f64 {
        match self {
            BoundaryCondition::ZeroDirichlet => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquationSpec {
    pub kind: EquationKind,
    /// Diffusion coefficient; unused by Poisson.
    pub diffusion: f64,
    /// Reaction rate, present only for the nonlinear equation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reaction: Option<f64>,
    #[serde(default)]
    pub bc: BoundaryCondition,
}

impl EquationSpec {
    pub fn poisson() -> Self {
        Self { kind: EquationKind::Poisson1D, diffusion: 1.0, reaction: None, bc: BoundaryCondition::ZeroDirichlet }
    }

    pub fn linear_diffusion(diffusion: f64) -> Self {
        Self { kind: EquationKind::LinearDiffusion, diffusion, reaction: None, bc: BoundaryCondition::ZeroDirichlet }
    }

    pub fn nonlinear_diffusion_reaction(diffusion: f64, reaction: f64) -> Self {
        Self {
            kind: EquationKind::NonlinearDiffusionReaction,
            diffusion,
            reaction: Some(reaction),
            bc: BoundaryCondition::ZeroDirichlet,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.diffusion > 0.0) {
            return Err(Error::Config(format!("diffusion must be positive, got {}", self.diffusion)));
        }
        match (self.kind, self.reaction) {
            (EquationKind::NonlinearDiffusionReaction, None) => {
                Err(Error::Config("nonlinear equation requires a reaction rate".into()))
            }
            (EquationKind::NonlinearDiffusionReaction, Some(_)) => Ok(()),
            (_, Some(_)) => Err(Error::Config("reaction rate only applies to the nonlinear equation".into())),
            (_, None) => Ok(()),
        }
    }

    pub fn is_time_dependent(&self) -> bool {
        self.kind != EquationKind::Poisson1D
    }

    pub fn reaction_rate(&self) -> f64 {
        self.reaction.unwrap_or(0.0)
    }
}

fn nesting_ratio(dense: usize, coarse: usize) -> Result<usize> {
    let (d, c) = (dense - 1, coarse - 1);
    if c == 0 || d % c != 0 {
        return Err(Error::NonNestedGrids { ratio: d as f64 / c as f64 });
    }
    Ok(d / c)
}

/// Injects a dense field onto a nested coarse grid (no averaging).
pub fn restrict(dense: &Field, coarse: impl Into<Grid>) -> Result<Field> {
    let coarse = coarse.into();
    match (dense.grid, coarse) {
        (Grid::Line(d), Grid::Line(c)) => {
            let r = nesting_ratio(d.n, c.n)?;
            let values = (0..c.n).map(|i| dense.values[i * r]).collect();
            Ok(Field { grid: coarse, values })
        }
        (Grid::SpaceTime(d), Grid::SpaceTime(c)) => {
            let rx = nesting_ratio(d.nx, c.nx)?;
            let rt = nesting_ratio(d.nt, c.nt)?;
            let mut values = Vec::with_capacity(c.nx * c.nt);
            for j in 0..c.nt {
                for i in 0..c.nx {
                    values.push(dense.values[d.index(i * rx, j * rt)]);
                }
            }
            Ok(Field { grid: coarse, values })
        }
        _ => Err(Error::GridMismatch("cannot restrict between line and space-time grids".into())),
    }
}

/// `||pred - reference||_2 / ||reference||_2` over all nodes.
pub fn l2_relative_error(pred: &Field, reference: &Field) -> Result<f64> {
    if pred.grid != reference.grid {
        return Err(Error::GridMismatch("prediction and reference grids differ".into()));
    }
    let (num, den) = pred
        .values
        .iter()
        .zip(&reference.values)
        .fold((0.0, 0.0), |(n, d), (p, r)| (n + (p - r) * (p - r), d + r * r));
    if den == 0.0 {
        return Err(Error::DegenerateReference);
    }
    Ok((num / den).sqrt())
}
