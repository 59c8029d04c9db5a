//! Structured box-domain grid.
//!
//! Cells are stored with axis 0 varying fastest: the flat index of cell
//! `(i, j, k)` is `i + n0 * (j + n1 * k)`. A 2D grid is a 3D grid with a single
//! layer along axis 2 whose boundary faces are never enumerated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which end of an axis a boundary face sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Low,
    High,
}

impl Side {
    /// Sign of the outward normal along the owning axis.
    pub fn normal_sign(self) -> f64 {
        match self {
            Side::Low => -1.0,
            Side::High => 1.0,
        }
    }
}

/// One boundary face of the box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFace {
    pub axis: usize,
    pub side: Side,
    /// Interior cell adjacent to the face.
    pub cell: usize,
    pub center: [f64; 3],
    pub area: f64,
}

impl BoundaryFace {
    /// Outward unit normal.
    pub fn normal(&self) -> [f64; 3] {
        let mut n = [0.0; 3];
        n[self.axis] = self.side.normal_sign();
        n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    n: [usize; 3],
    lengths: [f64; 3],
    h: [f64; 3],
}

impl Grid {
    pub fn new(dim: usize, cells_per_axis: &[usize], lengths: &[f64]) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidGrid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if cells_per_axis.len() != dim || lengths.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} cell counts and lengths, got {} and {}",
                cells_per_axis.len(),
                lengths.len()
            )));
        }
        let mut n = [1usize; 3];
        let mut l = [1.0f64; 3];
        let mut h = [1.0f64; 3];
        for a in 0..dim {
            if cells_per_axis[a] < 2 {
                return Err(Error::InvalidGrid(format!(
                    "axis {a} needs at least 2 cells, got {}",
                    cells_per_axis[a]
                )));
            }
            if !(lengths[a] > 0.0 && lengths[a].is_finite()) {
                return Err(Error::InvalidGrid(format!(
                    "axis {a} length must be positive and finite, got {}",
                    lengths[a]
                )));
            }
            n[a] = cells_per_axis[a];
            l[a] = lengths[a];
            h[a] = lengths[a] / cells_per_axis[a] as f64;
        }
        // The unused third axis of a 2D grid gets unit thickness so that
        // volumes and areas reduce to their 2D meaning.
        Ok(Self {
            dim,
            n,
            lengths: l,
            h,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.n[..self.dim]
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.h[..self.dim]
    }

    /// Padded shape `[n0, n1, n2]` with `n2 = 1` in 2D.
    pub fn shape(&self) -> [usize; 3] {
        self.n
    }

    pub fn h(&self, axis: usize) -> f64 {
        self.h[axis]
    }

    pub fn n(&self, axis: usize) -> usize {
        self.n[axis]
    }

    pub fn num_cells(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn cell_volume(&self) -> f64 {
        self.h[..self.dim].iter().product()
    }

    pub fn domain_volume(&self) -> f64 {
        self.lengths[..self.dim].iter().product()
    }

    /// Area of a face normal to `axis`.
    pub fn face_area(&self, axis: usize) -> f64 {
        (0..self.dim).filter(|&b| b != axis).map(|b| self.h[b]).product()
    }

    /// Smallest spacing over the active axes.
    pub fn min_spacing(&self) -> f64 {
        self.spacing().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Flat stride of `axis` in the cell array.
    pub fn stride(&self, axis: usize) -> usize {
        match axis {
            0 => 1,
            1 => self.n[0],
            _ => self.n[0] * self.n[1],
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n[0] * (j + self.n[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.n[0];
        let r = idx / self.n[0];
        [i, r % self.n[1], r / self.n[1]]
    }

    /// Physical position of a cell center.
    pub fn cell_center(&self, idx: usize) -> [f64; 3] {
        let c = self.coords(idx);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = (c[a] as f64 + 0.5) * self.h[a];
        }
        x
    }

    /// Number of boundary faces normal to `axis` on one side.
    pub fn faces_per_side(&self, axis: usize) -> usize {
        self.num_cells() / self.n[axis]
    }

    pub fn num_boundary_faces(&self) -> usize {
        (0..self.dim).map(|a| 2 * self.faces_per_side(a)).sum()
    }

    /// Offset of the (axis, side) block in the boundary-face enumeration.
    pub fn boundary_block_offset(&self, axis: usize, side: Side) -> usize {
        let before: usize = (0..axis).map(|a| 2 * self.faces_per_side(a)).sum();
        match side {
            Side::Low => before,
            Side::High => before + self.faces_per_side(axis),
        }
    }

    /// Position of a cell within the plane transverse to `axis`.
    #[inline]
    pub fn transverse_index(&self, axis: usize, idx: usize) -> usize {
        let [i, j, k] = self.coords(idx);
        match axis {
            0 => j + self.n[1] * k,
            1 => i + self.n[0] * k,
            _ => i + self.n[0] * j,
        }
    }

    /// Boundary-face index of the face on `side` of `axis` adjacent to cell `idx`.
    /// The cell must touch that side.
    #[inline]
    pub fn boundary_face_index(&self, axis: usize, side: Side, idx: usize) -> usize {
        self.boundary_block_offset(axis, side) + self.transverse_index(axis, idx)
    }

    /// Whether cell `idx` touches `side` of `axis`.
    #[inline]
    pub fn touches(&self, axis: usize, side: Side, idx: usize) -> bool {
        let c = self.coords(idx)[axis];
        match side {
            Side::Low => c == 0,
            Side::High => c + 1 == self.n[axis],
        }
    }

    /// Interior cell behind boundary face `t` of block (axis, side).
    #[inline]
    pub fn boundary_cell(&self, axis: usize, side: Side, t: usize) -> usize {
        let [n0, n1, _] = self.n;
        let fixed = match side {
            Side::Low => 0,
            Side::High => self.n[axis] - 1,
        };
        match axis {
            0 => self.index(fixed, t % n1, t / n1),
            1 => self.index(t % n0, fixed, t / n0),
            _ => self.index(t % n0, t / n0, fixed),
        }
    }

    /// All boundary faces in canonical order: axis, then side (low, high),
    /// then transverse cell order.
    pub fn boundary_faces(&self) -> Vec<BoundaryFace> {
        let mut out = Vec::with_capacity(self.num_boundary_faces());
        for axis in 0..self.dim {
            for side in [Side::Low, Side::High] {
                let cells = (0..self.faces_per_side(axis)).map(|t| self.boundary_cell(axis, side, t));
                for cell in cells {
                    let mut center = self.cell_center(cell);
                    center[axis] = match side {
                        Side::Low => 0.0,
                        Side::High => self.lengths[axis],
                    };
                    out.push(BoundaryFace {
                        axis,
                        side,
                        cell,
                        center,
                        area: self.face_area(axis),
                    });
                }
            }
        }
        out
    }
}

/// Convenience constructor mirroring [`Grid::new`].
pub fn make_grid(dim: usize, cells_per_axis: &[usize], lengths: &[f64]) -> Result<Grid> {
    Grid::new(dim, cells_per_axis, lengths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_four_by_four() {
        let g = make_grid(2, &[4, 4], &[1.0, 1.0]).unwrap();
        assert_eq!(g.spacing(), &[0.25, 0.25]);
        assert_eq!(g.num_cells(), 16);
        assert_eq!(g.num_boundary_faces(), 16);
        assert_eq!(g.boundary_faces().len(), 16);
    }

    #[test]
    fn anisotropic_box() {
        let g = make_grid(3, &[2, 2, 2], &[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(g.spacing(), &[0.5, 1.0, 2.0]);
        assert_eq!(g.num_cells(), 8);
        assert_eq!(g.num_boundary_faces(), 24);

        let g = make_grid(2, &[64, 32], &[2.0, 1.0]).unwrap();
        assert_eq!(g.spacing(), &[0.03125, 0.03125]);
        assert_eq!(g.cell_volume(), 9.765625e-4);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(make_grid(1, &[4], &[1.0]).is_err());
        assert!(make_grid(4, &[4, 4, 4, 4], &[1.0; 4]).is_err());
        assert!(make_grid(2, &[1, 4], &[1.0, 1.0]).is_err());
        assert!(make_grid(2, &[4, 4], &[0.0, 1.0]).is_err());
        assert!(make_grid(2, &[4, 4], &[1.0, -2.0]).is_err());
    }

    #[test]
    fn boundary_enumeration_is_consistent() {
        for g in [
            make_grid(2, &[5, 3], &[1.0, 0.7]).unwrap(),
            make_grid(3, &[3, 4, 2], &[1.0, 2.0, 0.5]).unwrap(),
        ] {
            let faces = g.boundary_faces();
            let mut seen = vec![false; faces.len()];
            for f in &faces {
                assert!(g.touches(f.axis, f.side, f.cell));
                let idx = g.boundary_face_index(f.axis, f.side, f.cell);
                assert!(!seen[idx]);
                seen[idx] = true;
                assert_eq!(faces[idx], *f);
                let n = f.normal();
                assert_eq!(n[f.axis].abs(), 1.0);
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn surface_measure_is_exact() {
        let g = make_grid(3, &[4, 8, 2], &[1.0, 1.0, 1.0]).unwrap();
        let area: f64 = g.boundary_faces().iter().map(|f| f.area).sum();
        assert_eq!(area, 6.0);
        let g = make_grid(2, &[8, 4], &[2.0, 1.0]).unwrap();
        let perim: f64 = g.boundary_faces().iter().map(|f| f.area).sum();
        assert_eq!(perim, 6.0);
    }
}
