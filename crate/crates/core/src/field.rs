//! Cell-centered scalar fields with a one-deep ghost layer and face-staggered
//! (MAC) vector fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Side};

/// Boundary closure used to populate the ghost layer of a scalar field.
///
/// Ghost values are placed so that the face-midpoint value is
/// `(ghost + interior) / 2` and the outward normal derivative is
/// `(ghost - interior) / h`.
#[derive(Debug, Clone, Copy)]
pub enum BoundaryClosure<'a> {
    /// Zero normal derivative: ghost equals interior.
    Neumann,
    /// Prescribed face value per boundary face.
    Dirichlet(&'a [f64]),
    /// Prescribed face value, identical on every face.
    DirichletConst(f64),
    /// `d_n f + tau f = xi` with `xi` per boundary face.
    Robin { tau: f64, xi: &'a [f64] },
}

impl BoundaryClosure<'_> {
    /// Ghost value for one face given the interior value and normal spacing.
    #[inline]
    pub fn ghost(&self, face: usize, interior: f64, h: f64) -> f64 {
        match *self {
            BoundaryClosure::Neumann => interior,
            BoundaryClosure::Dirichlet(vals) => 2.0 * vals[face] - interior,
            BoundaryClosure::DirichletConst(v) => 2.0 * v - interior,
            BoundaryClosure::Robin { tau, xi } => robin_ghost(interior, xi[face], tau, h),
        }
    }
}

/// Closed-form ghost satisfying `(g - p)/h + tau (g + p)/2 = xi`.
#[inline]
pub fn robin_ghost(interior: f64, xi: f64, tau: f64, h: f64) -> f64 {
    (xi + interior * (1.0 / h - 0.5 * tau)) / (1.0 / h + 0.5 * tau)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
    ghosts: Vec<f64>,
    ghosts_valid: bool,
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Grid, value: f64) -> Self {
        Self {
            grid: *grid,
            values: vec![value; grid.num_cells()],
            ghosts: vec![0.0; grid.num_boundary_faces()],
            ghosts_valid: false,
        }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.num_cells() {
            return Err(Error::FieldMismatch(format!(
                "expected {} cell values, got {}",
                grid.num_cells(),
                values.len()
            )));
        }
        Ok(Self {
            grid: *grid,
            values,
            ghosts: vec![0.0; grid.num_boundary_faces()],
            ghosts_valid: false,
        })
    }

    /// Sample `f` at cell centers.
    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.num_cells()).map(|c| f(grid.cell_center(c))).collect();
        Self {
            grid: *grid,
            values,
            ghosts: vec![0.0; grid.num_boundary_faces()],
            ghosts_valid: false,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable interior access. Invalidates the ghost layer.
    pub fn values_mut(&mut self) -> &mut [f64] {
        self.ghosts_valid = false;
        &mut self.values
    }

    pub fn ghosts(&self) -> &[f64] {
        &self.ghosts
    }

    pub fn ghosts_valid(&self) -> bool {
        self.ghosts_valid
    }

    /// Total stored length: interior cells plus ghosts.
    pub fn len(&self) -> usize {
        self.values.len() + self.ghosts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Overwrite the ghost layer directly (one value per boundary face).
    pub fn set_ghosts(&mut self, ghosts: Vec<f64>) -> Result<()> {
        if ghosts.len() != self.grid.num_boundary_faces() {
            return Err(Error::FieldMismatch(format!(
                "expected {} ghost values, got {}",
                self.grid.num_boundary_faces(),
                ghosts.len()
            )));
        }
        self.ghosts = ghosts;
        self.ghosts_valid = true;
        Ok(())
    }

    pub fn fill_ghosts(&mut self, closure: BoundaryClosure<'_>) {
        let g = self.grid;
        for (fi, face) in g.boundary_faces().iter().enumerate() {
            self.ghosts[fi] = closure.ghost(fi, self.values[face.cell], g.h(face.axis));
        }
        self.ghosts_valid = true;
    }

    /// Face-midpoint values `(ghost + interior) / 2` on every boundary face.
    pub fn boundary_face_values(&self) -> Result<Vec<f64>> {
        if !self.ghosts_valid {
            return Err(Error::GhostsNotPopulated("scalar field"));
        }
        Ok(self
            .grid
            .boundary_faces()
            .iter()
            .enumerate()
            .map(|(fi, f)| 0.5 * (self.ghosts[fi] + self.values[f.cell]))
            .collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
            && (!self.ghosts_valid || self.ghosts.iter().all(|v| v.is_finite()))
    }

    /// Discrete L^p norm by cell quadrature.
    pub fn lp_norm(&self, p: f64) -> f64 {
        let vol = self.grid.cell_volume();
        let s: f64 = self.values.iter().map(|v| v.abs().powf(p)).sum();
        (s * vol).powf(1.0 / p)
    }

    pub fn l2_norm(&self) -> f64 {
        integrate_cells_by(&self.grid, self.values.iter().map(|v| v * v)).sqrt()
    }
}

/// `sum_cells f * cell_volume`.
pub fn integrate_cells(f: &ScalarField) -> f64 {
    integrate_cells_by(f.grid(), f.values().iter().copied())
}

/// Cell quadrature of an arbitrary per-cell sequence.
pub fn integrate_cells_by(grid: &Grid, values: impl Iterator<Item = f64>) -> f64 {
    values.sum::<f64>() * grid.cell_volume()
}

/// `sum_faces g * face_area` over the canonical boundary-face enumeration.
pub fn integrate_boundary(grid: &Grid, g: &[f64]) -> Result<f64> {
    if g.len() != grid.num_boundary_faces() {
        return Err(Error::FieldMismatch(format!(
            "expected {} boundary values, got {}",
            grid.num_boundary_faces(),
            g.len()
        )));
    }
    Ok(grid
        .boundary_faces()
        .iter()
        .zip(g)
        .map(|(f, v)| v * f.area)
        .sum())
}

/// Face-difference approximation of `int |grad f|^2`.
///
/// Interior faces carry the full dual volume `area * h`; boundary faces use the
/// ghost difference `(ghost - interior)/h` over the half cell `area * h / 2`.
pub fn gradient_squared_norm(f: &ScalarField) -> Result<f64> {
    if !f.ghosts_valid() {
        return Err(Error::GhostsNotPopulated("gradient operand"));
    }
    let g = f.grid();
    let v = f.values();
    let vol = g.cell_volume();
    let mut total = 0.0;
    for axis in 0..g.dim() {
        let h = g.h(axis);
        let stride = g.stride(axis);
        let mut s = 0.0;
        for p in 0..g.num_cells() {
            if !g.touches(axis, Side::High, p) {
                let d = v[p + stride] - v[p];
                s += d * d;
            }
        }
        let mut b = 0.0;
        for side in [Side::Low, Side::High] {
            let off = g.boundary_block_offset(axis, side);
            for t in 0..g.faces_per_side(axis) {
                let fi = off + t;
                let cell = g.boundary_cell(axis, side, t);
                let d = f.ghosts()[fi] - v[cell];
                b += d * d;
            }
        }
        total += (s + 0.5 * b) * vol / (h * h);
    }
    Ok(total)
}

/// Face-staggered vector field: component `a` lives on faces normal to axis `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaggeredVectorField {
    grid: Grid,
    comps: Vec<Vec<f64>>,
    no_slip: bool,
}

impl StaggeredVectorField {
    pub fn zeros(grid: &Grid) -> Self {
        let comps = (0..grid.dim())
            .map(|a| vec![0.0; Self::face_count(grid, a)])
            .collect();
        Self {
            grid: *grid,
            comps,
            no_slip: true,
        }
    }

    pub fn face_count(grid: &Grid, axis: usize) -> usize {
        grid.num_cells() / grid.n(axis) * (grid.n(axis) + 1)
    }

    /// Face shape for `axis`: the cell shape with one extra entry along `axis`.
    pub fn face_shape(grid: &Grid, axis: usize) -> [usize; 3] {
        let mut s = grid.shape();
        s[axis] += 1;
        s
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn no_slip(&self) -> bool {
        self.no_slip
    }

    pub fn set_no_slip(&mut self, on: bool) {
        self.no_slip = on;
        if on {
            self.enforce_no_slip();
        }
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.comps[axis]
    }

    pub fn component_mut(&mut self, axis: usize) -> &mut [f64] {
        &mut self.comps[axis]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.comps
    }

    #[inline]
    pub fn face_index(&self, axis: usize, c: [usize; 3]) -> usize {
        let s = Self::face_shape(&self.grid, axis);
        c[0] + s[0] * (c[1] + s[1] * c[2])
    }

    #[inline]
    pub fn face_coords(&self, axis: usize, idx: usize) -> [usize; 3] {
        let s = Self::face_shape(&self.grid, axis);
        let i = idx % s[0];
        let r = idx / s[0];
        [i, r % s[1], r / s[1]]
    }

    /// Whether face `idx` of `axis` lies on the domain boundary.
    #[inline]
    pub fn is_boundary_face(&self, axis: usize, idx: usize) -> bool {
        let c = self.face_coords(axis, idx)[axis];
        c == 0 || c == self.grid.n(axis)
    }

    /// Physical position of a face center.
    pub fn face_center(&self, axis: usize, idx: usize) -> [f64; 3] {
        let c = self.face_coords(axis, idx);
        let mut x = [0.0; 3];
        for b in 0..self.grid.dim() {
            let off = if b == axis { 0.0 } else { 0.5 };
            x[b] = (c[b] as f64 + off) * self.grid.h(b);
        }
        x
    }

    pub fn enforce_no_slip(&mut self) {
        for axis in 0..self.grid.dim() {
            for idx in 0..self.comps[axis].len() {
                if self.is_boundary_face(axis, idx) {
                    self.comps[axis][idx] = 0.0;
                }
            }
        }
    }

    /// Faces of the two ends of `cell` along `axis`: (low, high).
    #[inline]
    pub fn cell_faces(&self, axis: usize, cell: usize) -> (usize, usize) {
        let c = self.grid.coords(cell);
        let lo = self.face_index(axis, c);
        let mut c2 = c;
        c2[axis] += 1;
        (lo, self.face_index(axis, c2))
    }

    pub fn divergence(&self) -> Vec<f64> {
        let g = self.grid;
        let mut div = vec![0.0; g.num_cells()];
        for axis in 0..g.dim() {
            let h = g.h(axis);
            let comp = &self.comps[axis];
            for (cell, d) in div.iter_mut().enumerate() {
                let (lo, hi) = self.cell_faces(axis, cell);
                *d += (comp[hi] - comp[lo]) / h;
            }
        }
        div
    }

    pub fn max_divergence(&self) -> f64 {
        self.divergence().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `sum_faces u^2 * cell_volume` over interior faces.
    pub fn l2_norm_sq(&self) -> f64 {
        let vol = self.grid.cell_volume();
        let mut s = 0.0;
        for axis in 0..self.grid.dim() {
            for (idx, u) in self.comps[axis].iter().enumerate() {
                if !self.is_boundary_face(axis, idx) {
                    s += u * u;
                }
            }
        }
        s * vol
    }

    pub fn max_abs(&self, axis: usize) -> f64 {
        self.comps[axis].iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.comps.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }
}
