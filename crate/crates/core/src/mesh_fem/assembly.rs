use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};

use super::field::Field;
use super::geometry::{cell_geometry, facet_normal};
use super::mesh::{Mesh, SurfaceTag};
use super::quadrature::simplex_rule;
use super::sparse::{SparseOperator, SparsityPattern};

/// Element contribution in local node-major ordering: local unknown
/// `a * block + f` belongs to cell vertex `a`, field `f`.
#[derive(Clone, Debug, Default)]
pub struct LocalSystem {
    pub matrix: Vec<f64>,
    pub vector: Vec<f64>,
}

impl LocalSystem {
    pub fn zeros(n: usize) -> Self {
        LocalSystem {
            matrix: vec![0.0; n * n],
            vector: vec![0.0; n],
        }
    }
}

/// Sums element contributions into a global operator and load vector.
/// Kernels run in parallel; the scatter is sequential so results are
/// reproducible bit for bit.
pub fn assemble<K>(
    mesh: &Mesh,
    pattern: &Arc<SparsityPattern>,
    block: usize,
    kernel: K,
) -> Result<(SparseOperator, Vec<f64>)>
where
    K: Fn(usize) -> Result<LocalSystem> + Sync,
{
    let n_loc = (mesh.dim() + 1) * block;
    if pattern.dim() != mesh.n_nodes() * block {
        return Err(Error::invalid("sparsity pattern does not match the space"));
    }
    let locals: Vec<LocalSystem> = (0..mesh.n_cells())
        .into_par_iter()
        .map(|c| {
            let local = kernel(c)?;
            check_local(c, &local, n_loc)?;
            Ok(local)
        })
        .collect::<Result<_>>()?;
    let mut op = SparseOperator::zeros(pattern.clone());
    let mut rhs = vec![0.0; pattern.dim()];
    let mut dofs = vec![0usize; n_loc];
    for (c, local) in locals.iter().enumerate() {
        local_dofs(mesh, c, block, &mut dofs);
        if !local.matrix.is_empty() {
            for (r, &gi) in dofs.iter().enumerate() {
                for (s, &gj) in dofs.iter().enumerate() {
                    let v = local.matrix[r * n_loc + s];
                    if v != 0.0 {
                        op.add(gi, gj, v);
                    }
                }
            }
        }
        if !local.vector.is_empty() {
            for (r, &gi) in dofs.iter().enumerate() {
                rhs[gi] += local.vector[r];
            }
        }
    }
    Ok((op, rhs))
}

/// Vector-only assembly.
pub fn assemble_vector<K>(mesh: &Mesh, block: usize, kernel: K) -> Result<Vec<f64>>
where
    K: Fn(usize) -> Result<Vec<f64>> + Sync,
{
    let n_loc = (mesh.dim() + 1) * block;
    let locals: Vec<Vec<f64>> = (0..mesh.n_cells())
        .into_par_iter()
        .map(|c| {
            let v = kernel(c)?;
            if v.len() != n_loc {
                return Err(Error::AssemblyFailure {
                    cell: c,
                    reason: format!("kernel returned {} entries, expected {n_loc}", v.len()),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::AssemblyFailure {
                    cell: c,
                    reason: "non-finite vector entry".into(),
                });
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; mesh.n_nodes() * block];
    let mut dofs = vec![0usize; n_loc];
    for (c, v) in locals.iter().enumerate() {
        local_dofs(mesh, c, block, &mut dofs);
        for (r, &gi) in dofs.iter().enumerate() {
            out[gi] += v[r];
        }
    }
    Ok(out)
}

fn check_local(c: usize, local: &LocalSystem, n_loc: usize) -> Result<()> {
    let bad_len = (!local.matrix.is_empty() && local.matrix.len() != n_loc * n_loc)
        || (!local.vector.is_empty() && local.vector.len() != n_loc);
    if bad_len {
        return Err(Error::AssemblyFailure {
            cell: c,
            reason: "kernel output has the wrong size".into(),
        });
    }
    if local
        .matrix
        .iter()
        .chain(&local.vector)
        .any(|v| !v.is_finite())
    {
        return Err(Error::AssemblyFailure {
            cell: c,
            reason: "non-finite element entry".into(),
        });
    }
    Ok(())
}

pub fn local_dofs(mesh: &Mesh, c: usize, block: usize, out: &mut [usize]) {
    for (a, &v) in mesh.cell(c).iter().enumerate() {
        for f in 0..block {
            out[a * block + f] = v * block + f;
        }
    }
}

/// P1 mass matrix of one cell (scalar).
pub fn mass_kernel(mesh: &Mesh, c: usize) -> LocalSystem {
    let dim = mesh.dim();
    let n = dim + 1;
    let vol = mesh.cell_volume(c);
    let mut local = LocalSystem::zeros(n);
    // ∫ λ_a λ_b = vol · (1 + δ_ab) · d! / (d + 2)!
    let base = vol / ((dim + 1) * (dim + 2)) as f64;
    for a in 0..n {
        for b in 0..n {
            local.matrix[a * n + b] = if a == b { 2.0 * base } else { base };
        }
    }
    local
}

/// P1 stiffness matrix ∫ ∇λ_a · ∇λ_b of one cell (scalar).
pub fn stiffness_kernel(mesh: &Mesh, c: usize) -> LocalSystem {
    let dim = mesh.dim();
    let n = dim + 1;
    let geo = cell_geometry::<f64>(dim, &mesh.cell_coords(c));
    let mut local = LocalSystem::zeros(n);
    for a in 0..n {
        for b in 0..n {
            let g: f64 = (0..dim).map(|k| geo.grads[a][k] * geo.grads[b][k]).sum();
            local.matrix[a * n + b] = geo.volume * g;
        }
    }
    local
}

/// A quadrature point on a boundary facet.
pub struct FacetPoint<'a> {
    pub x: [f64; 3],
    /// Unit outward normal.
    pub normal: [f64; 3],
    /// Facet vertices and the barycentric weight of each at this point.
    pub nodes: &'a [usize],
    pub weights: &'a [f64],
}

impl FacetPoint<'_> {
    pub fn interpolate(&self, field: &Field, component: usize) -> f64 {
        self.nodes
            .iter()
            .zip(self.weights)
            .map(|(&v, w)| w * field.at(v)[component])
            .sum()
    }
}

/// ∫ over all facets tagged `tag` of `expr`, with a rule exact to `degree`.
pub fn integrate_boundary(
    mesh: &Mesh,
    tag: SurfaceTag,
    degree: usize,
    expr: impl Fn(&FacetPoint) -> f64,
) -> Result<f64> {
    if !mesh.has_tag(tag) {
        return Err(Error::invalid(format!(
            "no boundary facet carries tag {tag}"
        )));
    }
    let dim = mesh.dim();
    let rule = simplex_rule(dim - 1, degree);
    let mut total = 0.0;
    for facet in mesh.tagged_facets(tag) {
        let nodes = facet.vertices(dim);
        let mut fx = [[0.0; 3]; 3];
        for (a, &v) in nodes.iter().enumerate() {
            fx[a][..dim].copy_from_slice(mesh.point(v));
        }
        let opposite = opposite_vertex(mesh, facet.cell, nodes);
        let n = facet_normal::<f64>(dim, &fx, &opposite);
        let area = n.iter().map(|v| v * v).sum::<f64>().sqrt();
        let unit = [n[0] / area, n[1] / area, n[2] / area];
        for (p, w) in rule.iter() {
            let mut x = [0.0; 3];
            for a in 0..dim {
                for k in 0..dim {
                    x[k] += p[a] * fx[a][k];
                }
            }
            let point = FacetPoint {
                x,
                normal: unit,
                nodes,
                weights: &p[..dim],
            };
            total += area * w * expr(&point);
        }
    }
    Ok(total)
}

/// Coordinates of the cell vertex not on the facet.
pub fn opposite_vertex(mesh: &Mesh, cell: usize, facet_nodes: &[usize]) -> [f64; 3] {
    let dim = mesh.dim();
    let v = mesh
        .cell(cell)
        .iter()
        .copied()
        .find(|v| !facet_nodes.contains(v))
        .expect("facet owner has a vertex off the facet");
    let mut out = [0.0; 3];
    out[..dim].copy_from_slice(mesh.point(v));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh_fem::mesh::build_structured_mesh;
    use crate::mesh_fem::sparse::solve_linear;
    use crate::mesh_fem::Mesh;

    fn mass(mesh: &Mesh) -> SparseOperator {
        let p = SparsityPattern::from_mesh(mesh, 1);
        assemble(mesh, &p, 1, |c| Ok(mass_kernel(mesh, c)))
            .unwrap()
            .0
    }

    fn stiffness(mesh: &Mesh) -> SparseOperator {
        let p = SparsityPattern::from_mesh(mesh, 1);
        assemble(mesh, &p, 1, |c| Ok(stiffness_kernel(mesh, c)))
            .unwrap()
            .0
    }

    #[test]
    fn mass_sums_to_area() {
        for n in [1, 3, 8] {
            let m = build_structured_mesh(&[n, n], &[1.0, 1.0]).unwrap();
            assert!((mass(&m).sum() - 1.0).abs() < 1e-13);
        }
        let m3 = build_structured_mesh(&[2, 2, 3], &[1.0, 2.0, 1.0]).unwrap();
        assert!((mass(&m3).sum() - 2.0).abs() < 1e-13);
    }

    #[test]
    fn reference_triangle_mass_matrix() {
        let mesh = Mesh::new(
            2,
            vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0],
            vec![0, 1, 2],
            vec![
                crate::mesh_fem::BoundaryFacet {
                    nodes: [0, 1, 0],
                    cell: 0,
                    tag: SurfaceTag::YMin,
                },
                crate::mesh_fem::BoundaryFacet {
                    nodes: [1, 2, 0],
                    cell: 0,
                    tag: SurfaceTag::XMax,
                },
                crate::mesh_fem::BoundaryFacet {
                    nodes: [2, 0, 0],
                    cell: 0,
                    tag: SurfaceTag::XMin,
                },
            ],
        )
        .unwrap();
        let d = mass(&mesh).to_dense();
        for (a, row) in d.iter().enumerate() {
            for (b, &v) in row.iter().enumerate() {
                let exact = if a == b { 2.0 / 24.0 } else { 1.0 / 24.0 };
                assert!((v - exact).abs() < 1e-16);
            }
        }
    }

    #[test]
    fn stiffness_annihilates_constants() {
        let m = build_structured_mesh(&[5, 4], &[1.0, 2.0]).unwrap();
        let k = stiffness(&m);
        let y = k.matvec(&vec![1.0; m.n_nodes()]);
        assert!(crate::mesh_fem::sparse::norm(&y) < 1e-12);
    }

    #[test]
    fn assembly_is_linear_in_the_kernel() {
        let m = build_structured_mesh(&[4, 3], &[1.0, 1.0]).unwrap();
        let p = SparsityPattern::from_mesh(&m, 1);
        let (a, b) = (2.5, -0.75);
        let combo = assemble(&m, &p, 1, |c| {
            let (mm, kk) = (mass_kernel(&m, c), stiffness_kernel(&m, c));
            Ok(LocalSystem {
                matrix: mm
                    .matrix
                    .iter()
                    .zip(&kk.matrix)
                    .map(|(x, y)| a * x + b * y)
                    .collect(),
                vector: vec![],
            })
        })
        .unwrap()
        .0;
        let (mm, kk) = (
            assemble(&m, &p, 1, |c| Ok(mass_kernel(&m, c))).unwrap().0,
            assemble(&m, &p, 1, |c| Ok(stiffness_kernel(&m, c)))
                .unwrap()
                .0,
        );
        let sep = mm.linear_combination(a, &kk, b).unwrap();
        for (x, y) in combo.values().iter().zip(sep.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_kernel_reports_cell() {
        let m = build_structured_mesh(&[2, 2], &[1.0, 1.0]).unwrap();
        let p = SparsityPattern::from_mesh(&m, 1);
        let err = assemble(&m, &p, 1, |c| {
            let mut l = mass_kernel(&m, c);
            if c == 5 {
                l.matrix[0] = f64::NAN;
            }
            Ok(l)
        })
        .unwrap_err();
        assert!(matches!(err, Error::AssemblyFailure { cell: 5, .. }));
    }

    #[test]
    fn mass_plus_stiffness_solve_recovers_vector() {
        let m = build_structured_mesh(&[6, 6], &[1.0, 1.0]).unwrap();
        let a = stiffness(&m)
            .linear_combination(1.0, &mass(&m), 3.0)
            .unwrap();
        let x: Vec<f64> = (0..m.n_nodes())
            .map(|i| ((i * 37) % 11) as f64 - 5.0)
            .collect();
        let b = a.matvec(&x);
        let y = solve_linear(&a, &b).unwrap();
        let err = x
            .iter()
            .zip(&y)
            .map(|(p, q)| (p - q).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err / crate::mesh_fem::sparse::norm(&x) < 1e-9);
        let r: Vec<f64> = a.matvec(&y).iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(crate::mesh_fem::sparse::norm(&r) <= 1e-10 * crate::mesh_fem::sparse::norm(&b));
    }

    #[test]
    fn boundary_integrals_on_left_face() {
        let m = build_structured_mesh(&[3, 5], &[1.0, 1.0]).unwrap();
        let one = integrate_boundary(&m, SurfaceTag::XMin, 2, |_| 1.0).unwrap();
        let y = integrate_boundary(&m, SurfaceTag::XMin, 2, |p| p.x[1]).unwrap();
        let y2 = integrate_boundary(&m, SurfaceTag::XMin, 2, |p| p.x[1] * p.x[1]).unwrap();
        assert!((one - 1.0).abs() < 1e-14);
        assert!((y - 0.5).abs() < 1e-14);
        assert!((y2 - 1.0 / 3.0).abs() < 1e-14);
        let n = integrate_boundary(&m, SurfaceTag::XMin, 0, |p| p.normal[0]).unwrap();
        assert!((n + 1.0).abs() < 1e-14);
        assert!(integrate_boundary(&m, SurfaceTag::Port(1), 2, |_| 1.0).is_err());
    }
}
