use crate::problem::{DomainGeometry, Point};

use super::FemError;

/// Structured grid of bilinear quadrilaterals over `[0, width] × [0, height]`.
///
/// Elements are numbered row-major from the bottom-left corner
/// (`e = ey·nx + ex`), nodes likewise (`n = j·(nx+1) + i`), and node `n`
/// carries dofs `2n` (x) and `2n+1` (y). Elements whose centroid lies in a
/// void rectangle stay in the mesh but are flagged inactive.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredMesh {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    active: Vec<bool>,
    n_active: usize,
}

pub fn build_mesh(geometry: &DomainGeometry) -> Result<StructuredMesh, FemError> {
    let (nx, ny) = (geometry.nx, geometry.ny);
    if nx == 0 || ny == 0 {
        return Err(FemError::DegenerateDomain("mesh needs at least one element per direction".into()));
    }
    let dx = geometry.dx();
    let dy = geometry.dy();
    let mut active = Vec::with_capacity(nx * ny);
    for ey in 0..ny {
        for ex in 0..nx {
            let c = Point::new((ex as f64 + 0.5) * dx, (ey as f64 + 0.5) * dy);
            active.push(!geometry.void_regions.iter().any(|r| r.contains(c)));
        }
    }
    StructuredMesh::with_mask(nx, ny, dx, dy, active)
}

impl StructuredMesh {
    pub fn with_mask(nx: usize, ny: usize, dx: f64, dy: f64, active: Vec<bool>) -> Result<Self, FemError> {
        assert_eq!(active.len(), nx * ny, "mask length must equal the element count");
        let n_active = active.iter().filter(|&&a| a).count();
        if n_active == 0 {
            return Err(FemError::DegenerateDomain("every element lies inside a void region".into()));
        }
        Ok(Self { nx, ny, dx, dy, active, n_active })
    }

    pub fn n_elements(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.n_nodes()
    }

    pub fn n_active(&self) -> usize {
        self.n_active
    }

    pub fn is_active(&self, e: usize) -> bool {
        self.active[e]
    }

    pub fn active_mask(&self) -> &[bool] {
        &self.active
    }

    pub fn element_index(&self, ex: usize, ey: usize) -> usize {
        ey * self.nx + ex
    }

    /// `(ex, ey)` grid position of element `e`.
    pub fn element_position(&self, e: usize) -> (usize, usize) {
        (e % self.nx, e / self.nx)
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn node_position(&self, n: usize) -> (usize, usize) {
        (n % (self.nx + 1), n / (self.nx + 1))
    }

    pub fn node_coords(&self, n: usize) -> Point {
        let (i, j) = self.node_position(n);
        Point::new(i as f64 * self.dx, j as f64 * self.dy)
    }

    /// Corner nodes counter-clockwise from the bottom-left one.
    pub fn element_nodes(&self, e: usize) -> [usize; 4] {
        let (ex, ey) = self.element_position(e);
        let n0 = self.node_index(ex, ey);
        let n3 = self.node_index(ex, ey + 1);
        [n0, n0 + 1, n3 + 1, n3]
    }

    pub fn element_dofs(&self, e: usize) -> [usize; 8] {
        let nodes = self.element_nodes(e);
        let mut dofs = [0; 8];
        for (a, n) in nodes.iter().enumerate() {
            dofs[2 * a] = 2 * n;
            dofs[2 * a + 1] = 2 * n + 1;
        }
        dofs
    }

    pub fn centroid(&self, e: usize) -> Point {
        let (ex, ey) = self.element_position(e);
        Point::new((ex as f64 + 0.5) * self.dx, (ey as f64 + 0.5) * self.dy)
    }

    /// Elements sharing node `n` (up to four).
    pub fn node_elements(&self, n: usize) -> impl Iterator<Item = usize> + '_ {
        let (i, j) = self.node_position(n);
        let candidates = [
            (i.checked_sub(1), j.checked_sub(1)),
            (Some(i), j.checked_sub(1)),
            (i.checked_sub(1), Some(j)),
            (Some(i), Some(j)),
        ];
        candidates.into_iter().filter_map(move |(ex, ey)| match (ex, ey) {
            (Some(ex), Some(ey)) if ex < self.nx && ey < self.ny => Some(self.element_index(ex, ey)),
            _ => None,
        })
    }

    pub fn active_elements_at_node(&self, n: usize) -> usize {
        self.node_elements(n).filter(|&e| self.active[e]).count()
    }

    /// Element mirrored about the vertical centre line.
    pub fn mirror_element(&self, e: usize) -> usize {
        let (ex, ey) = self.element_position(e);
        self.element_index(self.nx - 1 - ex, ey)
    }

    pub fn mirror_node(&self, n: usize) -> usize {
        let (i, j) = self.node_position(n);
        self.node_index(self.nx - i, j)
    }
}
