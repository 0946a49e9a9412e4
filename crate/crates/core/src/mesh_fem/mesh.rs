use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

use super::sparse::SparsityPattern;

/// Label carried by every boundary facet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SurfaceTag {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
    /// One of the flow ports Γ₁…Γ₄.
    Port(u8),
}

impl SurfaceTag {
    fn face(axis: usize, upper: bool) -> Self {
        match (axis, upper) {
            (0, false) => SurfaceTag::XMin,
            (0, true) => SurfaceTag::XMax,
            (1, false) => SurfaceTag::YMin,
            (1, true) => SurfaceTag::YMax,
            (2, false) => SurfaceTag::ZMin,
            _ => SurfaceTag::ZMax,
        }
    }
}

impl fmt::Display for SurfaceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SurfaceTag::XMin => f.write_str("x-"),
            SurfaceTag::XMax => f.write_str("x+"),
            SurfaceTag::YMin => f.write_str("y-"),
            SurfaceTag::YMax => f.write_str("y+"),
            SurfaceTag::ZMin => f.write_str("z-"),
            SurfaceTag::ZMax => f.write_str("z+"),
            SurfaceTag::Port(k) => write!(f, "port{k}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryFacet {
    /// Vertex indices; only the first `dim` entries are meaningful.
    pub nodes: [usize; 3],
    /// The single cell owning this facet.
    pub cell: usize,
    pub tag: SurfaceTag,
}

impl BoundaryFacet {
    pub fn vertices(&self, dim: usize) -> &[usize] {
        &self.nodes[..dim]
    }
}

/// Conforming simplicial mesh in 2D (triangles) or 3D (tetrahedra).
#[derive(Clone, Debug)]
pub struct Mesh {
    dim: usize,
    coords: Vec<f64>,
    cells: Vec<usize>,
    facets: Vec<BoundaryFacet>,
    cell_size: Vec<f64>,
    // connectivity-only, so shared by meshes that differ in coordinates
    patterns: Arc<Mutex<Vec<(usize, Arc<SparsityPattern>)>>>,
}

impl Mesh {
    /// Builds a mesh and checks orientation and boundary consistency.
    pub fn new(
        dim: usize,
        coords: Vec<f64>,
        cells: Vec<usize>,
        facets: Vec<BoundaryFacet>,
    ) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::invalid(format!("unsupported dimension {dim}")));
        }
        if coords.len() % dim != 0 || cells.len() % (dim + 1) != 0 {
            return Err(Error::invalid(
                "coordinate or connectivity array has a ragged length",
            ));
        }
        let n_nodes = coords.len() / dim;
        if cells.iter().any(|&v| v >= n_nodes) {
            return Err(Error::invalid("cell references a missing vertex"));
        }
        let mut mesh = Mesh {
            dim,
            coords,
            cells,
            facets,
            cell_size: Vec::new(),
            patterns: Arc::default(),
        };
        mesh.validate_topology()?;
        mesh.refresh_geometry()?;
        Ok(mesh)
    }

    fn validate_topology(&self) -> Result<()> {
        let dim = self.dim;
        let mut owners: HashMap<Vec<usize>, (usize, usize)> = HashMap::new();
        for c in 0..self.n_cells() {
            let cell = self.cell(c);
            for skip in 0..=dim {
                let mut face: Vec<usize> =
                    (0..=dim).filter(|&k| k != skip).map(|k| cell[k]).collect();
                face.sort_unstable();
                owners.entry(face).or_insert((c, 0)).1 += 1;
            }
        }
        let mut seen = HashMap::new();
        for (i, facet) in self.facets.iter().enumerate() {
            let mut key = facet.vertices(dim).to_vec();
            key.sort_unstable();
            match owners.get(&key) {
                Some(&(cell, 1)) if cell == facet.cell => {}
                _ => {
                    return Err(Error::invalid(format!(
                        "facet {i} is not a boundary face of cell {}",
                        facet.cell
                    )))
                }
            }
            if seen.insert(key, i).is_some() {
                return Err(Error::invalid(format!("facet {i} is listed twice")));
            }
        }
        let boundary_faces = owners.values().filter(|&&(_, n)| n == 1).count();
        if boundary_faces != self.facets.len() {
            return Err(Error::invalid(format!(
                "{} boundary faces but {} tagged facets",
                boundary_faces,
                self.facets.len()
            )));
        }
        Ok(())
    }

    fn refresh_geometry(&mut self) -> Result<()> {
        let mut sizes = Vec::with_capacity(self.n_cells());
        for c in 0..self.n_cells() {
            let x = self.cell_coords(c);
            let geo = super::geometry::cell_geometry::<f64>(self.dim, &x);
            if !(geo.volume > 0.0) {
                return Err(Error::invalid(format!(
                    "cell {c} has non-positive signed volume {}",
                    geo.volume
                )));
            }
            sizes.push(geo.size);
        }
        self.cell_size = sizes;
        Ok(())
    }

    /// Same topology and tags, new vertex positions.
    pub fn with_coords(&self, coords: Vec<f64>) -> Result<Mesh> {
        if coords.len() != self.coords.len() {
            return Err(Error::invalid("coordinate array length changed"));
        }
        let mut mesh = Mesh {
            dim: self.dim,
            coords,
            cells: self.cells.clone(),
            facets: self.facets.clone(),
            cell_size: Vec::new(),
            patterns: self.patterns.clone(),
        };
        mesh.refresh_geometry()?;
        Ok(mesh)
    }

    /// Re-labels every boundary facet. The closure receives the current
    /// facet and its centroid.
    pub fn retag(&mut self, mut f: impl FnMut(&BoundaryFacet, &[f64]) -> SurfaceTag) {
        let dim = self.dim;
        for i in 0..self.facets.len() {
            let mut centroid = [0.0; 3];
            for &v in self.facets[i].vertices(dim) {
                for k in 0..dim {
                    centroid[k] += self.coords[v * dim + k] / dim as f64;
                }
            }
            let tag = f(&self.facets[i], &centroid[..dim]);
            self.facets[i].tag = tag;
        }
    }

    /// Cached sparsity pattern for `block` unknowns per node.
    pub fn pattern(&self, block: usize) -> Arc<SparsityPattern> {
        let mut cache = self.patterns.lock().unwrap_or_else(|e| e.into_inner());
        if let Some((_, p)) = cache.iter().find(|(b, _)| *b == block) {
            return p.clone();
        }
        let p = SparsityPattern::from_mesh(self, block);
        cache.push((block, p.clone()));
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len() / (self.dim + 1)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        let n = self.dim + 1;
        &self.cells[c * n..(c + 1) * n]
    }

    /// Vertex coordinates of a cell padded to 3 components.
    pub fn cell_coords(&self, c: usize) -> [[f64; 3]; 4] {
        let mut x = [[0.0; 3]; 4];
        for (a, &v) in self.cell(c).iter().enumerate() {
            x[a][..self.dim].copy_from_slice(self.point(v));
        }
        x
    }

    pub fn facets(&self) -> &[BoundaryFacet] {
        &self.facets
    }

    pub fn tagged_facets(&self, tag: SurfaceTag) -> impl Iterator<Item = &BoundaryFacet> {
        self.facets.iter().filter(move |f| f.tag == tag)
    }

    pub fn has_tag(&self, tag: SurfaceTag) -> bool {
        self.facets.iter().any(|f| f.tag == tag)
    }

    /// Sorted, de-duplicated vertices of all facets carrying `tag`.
    pub fn tagged_nodes(&self, tag: SurfaceTag) -> Vec<usize> {
        let mut nodes: Vec<usize> = self
            .tagged_facets(tag)
            .flat_map(|f| f.vertices(self.dim).iter().copied())
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        let mut nodes: Vec<usize> = self
            .facets
            .iter()
            .flat_map(|f| f.vertices(self.dim).iter().copied())
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    /// Element size h: the longest cell edge.
    pub fn cell_size(&self, c: usize) -> f64 {
        self.cell_size[c]
    }

    pub fn cell_volume(&self, c: usize) -> f64 {
        super::geometry::cell_geometry::<f64>(self.dim, &self.cell_coords(c)).volume
    }

    pub fn volume(&self) -> f64 {
        (0..self.n_cells()).map(|c| self.cell_volume(c)).sum()
    }

    /// Per-node lists of cells sharing that node.
    pub fn node_cells(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_nodes()];
        for c in 0..self.n_cells() {
            for &v in self.cell(c) {
                out[v].push(c);
            }
        }
        out
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for p in self.coords.chunks(self.dim) {
            for k in 0..self.dim {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }
}

/// Box `[0, extent₀] × … ` split into simplices: crossed diagonals in 2D
/// (four triangles around a cell-centre vertex), six Kuhn tetrahedra per
/// hexahedron in 3D. Boundary facets are tagged by box face.
pub fn build_structured_mesh(resolution: &[usize], extent: &[f64]) -> Result<Mesh> {
    if resolution.len() != extent.len() || !(2..=3).contains(&resolution.len()) {
        return Err(Error::invalid(
            "resolution and extent must both have 2 or 3 entries",
        ));
    }
    if resolution.iter().any(|&n| n == 0) {
        return Err(Error::invalid("every axis needs at least one cell"));
    }
    if extent.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::invalid("every axis extent must be positive"));
    }
    let dim = resolution.len();
    let (cells, coords) = if dim == 2 {
        crossed_triangles(resolution, extent)
    } else {
        kuhn_tetrahedra(resolution, extent)
    };
    let facets = box_facets(dim, &coords, &cells, extent);
    Mesh::new(dim, coords, cells, facets)
}

fn crossed_triangles(res: &[usize], ext: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let (nx, ny) = (res[0], res[1]);
    let (hx, hy) = (ext[0] / nx as f64, ext[1] / ny as f64);
    let corner = |i: usize, j: usize| j * (nx + 1) + i;
    let n_corners = (nx + 1) * (ny + 1);
    let mut coords = Vec::with_capacity(2 * (n_corners + nx * ny));
    for j in 0..=ny {
        for i in 0..=nx {
            coords.push(i as f64 * hx);
            coords.push(j as f64 * hy);
        }
    }
    for j in 0..ny {
        for i in 0..nx {
            coords.push((i as f64 + 0.5) * hx);
            coords.push((j as f64 + 0.5) * hy);
        }
    }
    let mut cells = Vec::with_capacity(12 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let m = n_corners + j * nx + i;
            let a = corner(i, j);
            let b = corner(i + 1, j);
            let c = corner(i + 1, j + 1);
            let d = corner(i, j + 1);
            cells.extend_from_slice(&[a, b, m, b, c, m, c, d, m, d, a, m]);
        }
    }
    (cells, coords)
}

fn kuhn_tetrahedra(res: &[usize], ext: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let (nx, ny, nz) = (res[0], res[1], res[2]);
    let h = [ext[0] / nx as f64, ext[1] / ny as f64, ext[2] / nz as f64];
    let idx = |i: usize, j: usize, k: usize| (k * (ny + 1) + j) * (nx + 1) + i;
    let mut coords = Vec::with_capacity(3 * (nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                coords.extend_from_slice(&[i as f64 * h[0], j as f64 * h[1], k as f64 * h[2]]);
            }
        }
    }
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut cells = Vec::with_capacity(24 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                for perm in PERMS {
                    let mut p = [i, j, k];
                    let mut tet = [idx(i, j, k), 0, 0, 0];
                    for (s, &axis) in perm.iter().enumerate() {
                        p[axis] += 1;
                        tet[s + 1] = idx(p[0], p[1], p[2]);
                    }
                    // odd permutations come out negatively oriented
                    let det = signed_volume_3d(&coords, &tet);
                    if det < 0.0 {
                        tet.swap(2, 3);
                    }
                    cells.extend_from_slice(&tet);
                }
            }
        }
    }
    (cells, coords)
}

fn signed_volume_3d(coords: &[f64], tet: &[usize; 4]) -> f64 {
    let p = |v: usize| [coords[3 * v], coords[3 * v + 1], coords[3 * v + 2]];
    let (a, b, c, d) = (p(tet[0]), p(tet[1]), p(tet[2]), p(tet[3]));
    let e1 = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let e2 = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let e3 = [d[0] - a[0], d[1] - a[1], d[2] - a[2]];
    e1[0] * (e2[1] * e3[2] - e2[2] * e3[1]) - e1[1] * (e2[0] * e3[2] - e2[2] * e3[0])
        + e1[2] * (e2[0] * e3[1] - e2[1] * e3[0])
}

fn box_facets(dim: usize, coords: &[f64], cells: &[usize], extent: &[f64]) -> Vec<BoundaryFacet> {
    let n = dim + 1;
    let mut faces: HashMap<Vec<usize>, (usize, Vec<usize>, usize)> = HashMap::new();
    for (c, cell) in cells.chunks(n).enumerate() {
        for skip in 0..n {
            let face: Vec<usize> = (0..n).filter(|&k| k != skip).map(|k| cell[k]).collect();
            let mut key = face.clone();
            key.sort_unstable();
            faces.entry(key).or_insert((c, face, 0)).2 += 1;
        }
    }
    let mut facets: Vec<BoundaryFacet> = faces
        .into_values()
        .filter(|(_, _, count)| *count == 1)
        .map(|(cell, face, _)| {
            let mut centroid = [0.0; 3];
            for &v in &face {
                for k in 0..dim {
                    centroid[k] += coords[v * dim + k] / dim as f64;
                }
            }
            // the face lies on the box side its centroid is closest to
            let mut best = (f64::INFINITY, SurfaceTag::XMin);
            for axis in 0..dim {
                let lo = centroid[axis].abs();
                let hi = (centroid[axis] - extent[axis]).abs();
                if lo < best.0 {
                    best = (lo, SurfaceTag::face(axis, false));
                }
                if hi < best.0 {
                    best = (hi, SurfaceTag::face(axis, true));
                }
            }
            let mut nodes = [0; 3];
            nodes[..dim].copy_from_slice(&face);
            BoundaryFacet {
                nodes,
                cell,
                tag: best.1,
            }
        })
        .collect();
    facets.sort_by_key(|f| (f.tag, f.cell, f.nodes));
    facets
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_cell_square_has_five_vertices_and_four_triangles() {
        let m = build_structured_mesh(&[1, 1], &[1.0, 1.0]).unwrap();
        assert_eq!(m.n_nodes(), 5);
        assert_eq!(m.n_cells(), 4);
        assert!((m.volume() - 1.0).abs() < 1e-15);
        assert_eq!(m.facets().len(), 4);
    }

    #[test]
    fn two_by_two_counts() {
        let m = build_structured_mesh(&[2, 2], &[1.0, 1.0]).unwrap();
        assert_eq!(m.n_nodes(), 13);
        assert_eq!(m.n_cells(), 16);
        assert!((m.volume() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn areas_partition_the_square() {
        for n in [1, 4, 16] {
            let m = build_structured_mesh(&[n, n], &[1.0, 1.0]).unwrap();
            assert!((m.volume() - 1.0).abs() < 1e-13, "n = {n}");
        }
    }

    #[test]
    fn every_face_tag_present_with_correct_measure() {
        let m = build_structured_mesh(&[3, 2], &[1.5, 0.5]).unwrap();
        for (tag, len) in [
            (SurfaceTag::XMin, 0.5),
            (SurfaceTag::XMax, 0.5),
            (SurfaceTag::YMin, 1.5),
            (SurfaceTag::YMax, 1.5),
        ] {
            let total: f64 = m
                .tagged_facets(tag)
                .map(|f| {
                    let (a, b) = (m.point(f.nodes[0]), m.point(f.nodes[1]));
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
                })
                .sum();
            assert!((total - len).abs() < 1e-14, "{tag}");
        }
    }

    #[test]
    fn cell_size_is_longest_edge() {
        let m = build_structured_mesh(&[4, 4], &[1.0, 1.0]).unwrap();
        for c in 0..m.n_cells() {
            assert!((m.cell_size(c) - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn kuhn_box_is_valid() {
        let m = build_structured_mesh(&[2, 3, 2], &[1.0, 1.0, 2.0]).unwrap();
        assert_eq!(m.n_cells(), 6 * 12);
        assert!((m.volume() - 2.0).abs() < 1e-13);
        // two triangles per boundary quad
        assert_eq!(m.facets().len(), 2 * 2 * (2 * 3 + 3 * 2 + 2 * 2));
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(build_structured_mesh(&[0, 2], &[1.0, 1.0]).is_err());
        assert!(build_structured_mesh(&[2, 2], &[1.0, -1.0]).is_err());
        assert!(build_structured_mesh(&[2], &[1.0]).is_err());
    }

    #[test]
    fn inverted_cell_is_rejected() {
        let m = build_structured_mesh(&[1, 1], &[1.0, 1.0]).unwrap();
        let mut coords = m.coords().to_vec();
        // push the centre vertex outside the square
        coords[8] = 2.0;
        assert!(m.with_coords(coords).is_err());
    }
}
