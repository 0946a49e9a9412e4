//! Level-set design representation: indicators, Hamilton-Jacobi advection
//! and elliptic signed-distance reinitialization.
//!
//! The cold fluid occupies `φ < 0`, the hot fluid `φ ≥ 0`.

use crate::error::{Error, Result};
use crate::mesh_fem::geometry::cell_geometry;
use crate::mesh_fem::{
    apply_dirichlet, assemble, assemble_vector, norm, stiffness_kernel, DirichletBC, Field, Mesh,
};
use crate::thermal::{assemble_transport, TransportCoefficients};

/// Nodal indicators `(χ_H, χ_C)`: `χ_H = 1` where `φ ≥ 0`, `χ_C = 1 - χ_H`.
/// The cold fluid is penalized by `χ_H`, the hot fluid by `χ_C`.
pub fn indicator_from_levelset(phi: &Field) -> (Field, Field) {
    let hot: Vec<f64> = phi
        .values()
        .iter()
        .map(|&v| if v >= 0.0 { 1.0 } else { 0.0 })
        .collect();
    let cold: Vec<f64> = hot.iter().map(|h| 1.0 - h).collect();
    (
        Field::from_values(1, hot).expect("indicator is finite"),
        Field::from_values(1, cold).expect("indicator is finite"),
    )
}

/// Cells whose vertices carry both signs (zero counts as positive).
pub fn interface_cells(mesh: &Mesh, phi: &Field) -> Vec<usize> {
    let v = phi.values();
    (0..mesh.n_cells())
        .filter(|&c| {
            let cell = mesh.cell(c);
            let pos = cell.iter().filter(|&&n| v[n] >= 0.0).count();
            pos > 0 && pos < cell.len()
        })
        .collect()
}

/// Largest nodal 1-norm of a vector field.
pub fn theta_max(theta: &Field) -> f64 {
    theta
        .values()
        .chunks(theta.components())
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Orientation of the Hamilton-Jacobi update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvectionSign {
    /// `∂φ/∂t + θ̂·∇φ = k Δφ`: the zero isocontour travels along `θ`.
    #[default]
    Transport,
    /// `∂φ/∂t = θ̂·∇φ + k Δφ`: the zero isocontour travels along `-θ`.
    AsWritten,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdvectionSettings {
    pub pe_hj: f64,
    pub t_final: f64,
    pub initial_step: f64,
    pub growth: f64,
    pub shrink: f64,
    pub min_step: f64,
    pub sign: AdvectionSign,
}

impl AdvectionSettings {
    /// Defaults for a mesh with `cells_per_axis` cells along its longest axis.
    pub fn for_mesh(cells_per_axis: usize, t_final: f64) -> Self {
        AdvectionSettings {
            pe_hj: 50.0 * cells_per_axis as f64,
            t_final,
            initial_step: 0.01,
            growth: 1.5,
            shrink: 0.5,
            min_step: 1e-8,
            sign: AdvectionSign::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.pe_hj > 0.0
            && self.t_final > 0.0
            && self.t_final.is_finite()
            && self.initial_step > 0.0
            && self.growth >= 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.min_step > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "invalid advection settings {self:?}"
            )))
        }
    }
}

/// Moves `φ` for pseudo-time `t_final` with the normalized velocity
/// `θ / θ_max`, using backward Euler steps on the GLS-stabilized transport
/// equation with artificial diffusion `1/Pe_HJ`.
pub fn advect_levelset(
    mesh: &Mesh,
    phi: &Field,
    theta: &Field,
    settings: &AdvectionSettings,
) -> Result<Field> {
    settings.validate()?;
    if theta.components() != mesh.dim()
        || theta.n_nodes() != mesh.n_nodes()
        || phi.n_nodes() != mesh.n_nodes()
    {
        return Err(Error::invalid(
            "level set or velocity does not match the mesh",
        ));
    }
    let tmax = theta_max(theta);
    if tmax < 1e-12 {
        return Ok(phi.clone());
    }
    let scale = match settings.sign {
        AdvectionSign::Transport => 1.0 / tmax,
        AdvectionSign::AsWritten => -1.0 / tmax,
    };
    let velocity = Field::from_values(
        theta.components(),
        theta.values().iter().map(|v| v * scale).collect(),
    )?;

    let mut current = phi.values().to_vec();
    let mut time = 0.0;
    let mut step = settings.initial_step.min(settings.t_final);
    while time < settings.t_final * (1.0 - 1e-12) {
        let dt = step.min(settings.t_final - time);
        let coef = TransportCoefficients {
            kappa: 1.0 / settings.pe_hj,
            beta: 0.9,
            sigma: 1.0 / dt,
        };
        let attempt = assemble_transport(mesh, &velocity, Some(&current), &coef)
            .and_then(|(op, rhs)| op.factorize()?.solve(&rhs));
        match attempt {
            Ok(next) if next.iter().all(|v| v.is_finite()) => {
                current = next;
                time += dt;
                step = dt * settings.growth;
            }
            Ok(_) | Err(Error::SingularSystem { .. }) | Err(Error::AssemblyFailure { .. }) => {
                step = dt * settings.shrink;
                if step < settings.min_step {
                    return Err(Error::AdvectionFailure {
                        step,
                        min_step: settings.min_step,
                        time,
                    });
                }
            }
            Err(e) => return Err(e),
        }
    }
    Field::from_values(1, current)
}

/// Double-well potential `η` of the reinitialization functional and the
/// diffusion weight `ι` of its Euler-Lagrange equation.
pub fn reinit_potential(alpha: f64) -> (f64, f64) {
    if alpha > 1.0 {
        (0.5 * (alpha - 1.0).powi(2), 1.0 - 1.0 / alpha)
    } else {
        (
            alpha.powi(3) / 3.0 - alpha * alpha / 2.0 + 1.0 / 6.0,
            alpha - 1.0,
        )
    }
}

/// Per-cell `|∇φ|` (constant on P1 cells).
pub fn gradient_norms(mesh: &Mesh, phi: &Field) -> Vec<f64> {
    let dim = mesh.dim();
    let v = phi.values();
    (0..mesh.n_cells())
        .map(|c| {
            let geo = cell_geometry::<f64>(dim, &mesh.cell_coords(c));
            let mut g = [0.0; 3];
            for (a, &n) in mesh.cell(c).iter().enumerate() {
                for k in 0..dim {
                    g[k] += v[n] * geo.grads[a][k];
                }
            }
            g.iter().map(|x| x * x).sum::<f64>().sqrt()
        })
        .collect()
}

/// Signed-distance estimate on the interface cells.
#[derive(Clone, Debug, PartialEq)]
pub struct InterfaceProjection {
    pub nodes: Vec<usize>,
    pub values: Vec<f64>,
    /// Some interface cell had `|∇φ|` below the floor.
    pub floor_active: bool,
}

const GRADIENT_FLOOR: f64 = 1e-10;

/// Local L² projection of `φ/|∇φ|` onto the vertices of the interface
/// cells, with a row-lumped mass so each value keeps the sign of `φ`.
pub fn interface_projection(mesh: &Mesh, phi: &Field) -> Result<InterfaceProjection> {
    let cells = interface_cells(mesh, phi);
    if cells.is_empty() {
        return Err(Error::NoInterface);
    }
    let grads = gradient_norms(mesh, phi);
    let v = phi.values();
    let weight = 1.0 / (mesh.dim() + 1) as f64;
    let mut mass = vec![0.0; mesh.n_nodes()];
    let mut load = vec![0.0; mesh.n_nodes()];
    let mut floor_active = false;
    for &c in &cells {
        let g = if grads[c] < GRADIENT_FLOOR {
            floor_active = true;
            GRADIENT_FLOOR
        } else {
            grads[c]
        };
        let m = mesh.cell_volume(c) * weight;
        for &n in mesh.cell(c) {
            mass[n] += m;
            load[n] += m * v[n] / g;
        }
    }
    let nodes: Vec<usize> = (0..mesh.n_nodes()).filter(|&n| mass[n] > 0.0).collect();
    let values = nodes.iter().map(|&n| load[n] / mass[n]).collect();
    Ok(InterfaceProjection {
        nodes,
        values,
        floor_active,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReinitSettings {
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for ReinitSettings {
    fn default() -> Self {
        ReinitSettings {
            tolerance: 1e-4,
            max_iter: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reinitialization {
    pub phi: Field,
    pub iterations: usize,
    /// Relative update norm of every Picard iterate.
    pub update_norms: Vec<f64>,
    pub floor_active: bool,
}

pub fn reinitialize(mesh: &Mesh, phi: &Field, settings: &ReinitSettings) -> Result<Field> {
    reinitialize_detailed(mesh, phi, settings).map(|r| r.phi)
}

/// Picard iteration `∫∇φᵐ·∇v = ∫(1 - ι(|∇φᵐ⁻¹|))∇φᵐ⁻¹·∇v` with the projected
/// distance held fixed on the interface cells.
pub fn reinitialize_detailed(
    mesh: &Mesh,
    phi: &Field,
    settings: &ReinitSettings,
) -> Result<Reinitialization> {
    if settings.tolerance <= 0.0 || settings.max_iter == 0 {
        return Err(Error::invalid(
            "reinitialization needs a positive tolerance and at least one iteration",
        ));
    }
    let projection = interface_projection(mesh, phi)?;
    let mut bc = DirichletBC::new();
    for (&n, &v) in projection.nodes.iter().zip(&projection.values) {
        bc.insert(n, v)?;
    }
    let dim = mesh.dim();
    let pattern = mesh.pattern(1);
    let (stiffness, _) = assemble(mesh, &pattern, 1, |c| {
        let mut l = stiffness_kernel(mesh, c);
        l.vector.clear();
        Ok(l)
    })?;
    let mut constrained = stiffness.clone();
    apply_dirichlet(&mut constrained, &mut vec![0.0; mesh.n_nodes()], &bc)?;
    let factor = constrained.factorize()?;

    let mut current = phi.values().to_vec();
    bc.impose(&mut current);
    let mut norms = Vec::new();
    for it in 1..=settings.max_iter {
        let rhs = assemble_vector(mesh, 1, |c| {
            let geo = cell_geometry::<f64>(dim, &mesh.cell_coords(c));
            let cell = mesh.cell(c);
            let mut g = [0.0; 3];
            for (a, &n) in cell.iter().enumerate() {
                for k in 0..dim {
                    g[k] += current[n] * geo.grads[a][k];
                }
            }
            let alpha = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            let w = 1.0 - reinit_potential(alpha).1;
            Ok((0..=dim)
                .map(|b| geo.volume * w * (0..dim).map(|k| g[k] * geo.grads[b][k]).sum::<f64>())
                .collect())
        })?;
        let mut rhs = rhs;
        let mut scratch = stiffness.clone();
        apply_dirichlet(&mut scratch, &mut rhs, &bc)?;
        let mut next = factor.solve(&rhs)?;
        // thin regions can overshoot through zero; the sign pattern is the
        // design and must survive
        for (x, &x0) in next.iter_mut().zip(phi.values()) {
            if (*x >= 0.0) != (x0 >= 0.0) {
                *x = x0;
            }
        }
        let diff: Vec<f64> = next.iter().zip(&current).map(|(a, b)| a - b).collect();
        let rel = norm(&diff) / norm(&next).max(f64::MIN_POSITIVE);
        norms.push(rel);
        current = next;
        if rel <= settings.tolerance {
            return Ok(Reinitialization {
                phi: Field::from_values(1, current)?,
                iterations: it,
                update_norms: norms,
                floor_active: projection.floor_active,
            });
        }
    }
    Err(Error::ReinitFailure { norms })
}

/// Cell-averaged `η(|∇φ|)` weighted by volume, divided by the domain volume.
pub fn mean_eikonal_potential(mesh: &Mesh, phi: &Field) -> f64 {
    let g = gradient_norms(mesh, phi);
    let total: f64 = (0..mesh.n_cells())
        .map(|c| mesh.cell_volume(c) * reinit_potential(g[c]).0)
        .sum();
    total / mesh.volume()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh_fem::build_structured_mesh;

    #[test]
    fn indicators_partition_unity() {
        let phi = Field::from_values(1, vec![-0.3, 0.7, 0.0, -1e-9]).unwrap();
        let (h, c) = indicator_from_levelset(&phi);
        assert_eq!(h.values(), &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(c.values(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn theta_max_examples() {
        assert_eq!(theta_max(&Field::zeros(5, 2)), 0.0);
        let c = Field::from_values(2, [3.0, -4.0].repeat(4)).unwrap();
        assert_eq!(theta_max(&c), 7.0);
        let mut v = vec![0.0; 8];
        v[2] = 0.2;
        v[3] = 0.1;
        assert!((theta_max(&Field::from_values(2, v).unwrap()) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn potential_examples() {
        let (e, i) = reinit_potential(1.0);
        assert!(e.abs() < 1e-15 && i.abs() < 1e-15);
        let (e, i) = reinit_potential(1.0 + 1e-12);
        assert!(e.abs() < 1e-15 && i.abs() < 1e-11);
        let (e, i) = reinit_potential(0.0);
        assert!((e - 1.0 / 6.0).abs() < 1e-15 && (i + 1.0).abs() < 1e-15);
        let (e, i) = reinit_potential(2.0);
        assert!((e - 0.5).abs() < 1e-15 && (i - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_velocity_leaves_levelset_untouched() {
        let mesh = build_structured_mesh(&[4, 4], &[1.0, 1.0]).unwrap();
        let phi = Field::scalar(&mesh, |x| x[0] - 0.3);
        let out = advect_levelset(
            &mesh,
            &phi,
            &Field::zeros(mesh.n_nodes(), 2),
            &AdvectionSettings::for_mesh(4, 0.1),
        )
        .unwrap();
        assert_eq!(out, phi);
    }

    #[test]
    fn constant_levelset_is_stationary() {
        let mesh = build_structured_mesh(&[6, 6], &[1.0, 1.0]).unwrap();
        let phi = Field::scalar(&mesh, |_| 0.25);
        let theta = Field::interpolate(&mesh, 2, |x| vec![x[1] - 0.5, 0.3]);
        let out =
            advect_levelset(&mesh, &phi, &theta, &AdvectionSettings::for_mesh(6, 0.2)).unwrap();
        assert!(out.values().iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn projection_of_scaled_distance() {
        let mesh = build_structured_mesh(&[8, 8], &[1.0, 1.0]).unwrap();
        let phi = Field::scalar(&mesh, |x| x[0] - 0.43);
        let p = interface_projection(&mesh, &phi).unwrap();
        for (&n, &v) in p.nodes.iter().zip(&p.values) {
            assert!((v - phi.values()[n]).abs() < 1e-12);
        }
        let phi2 = Field::scalar(&mesh, |x| 2.0 * (x[0] - 0.43));
        let p2 = interface_projection(&mesh, &phi2).unwrap();
        for (&n, &v) in p2.nodes.iter().zip(&p2.values) {
            assert!((v - phi2.values()[n] / 2.0).abs() < 1e-12);
        }
        assert!(!p.floor_active);
        assert!(matches!(
            interface_projection(&mesh, &Field::scalar(&mesh, |_| 1.0)),
            Err(Error::NoInterface)
        ));
    }

    #[test]
    fn flat_crossing_cell_trips_the_floor() {
        let mesh = build_structured_mesh(&[2, 2], &[1.0, 1.0]).unwrap();
        let phi = Field::scalar(&mesh, |x| {
            if x[0] < 0.3 && x[1] < 0.3 {
                -1e-14
            } else {
                1e-14
            }
        });
        let p = interface_projection(&mesh, &phi).unwrap();
        assert!(p.values.iter().all(|v| v.is_finite()));
        assert!(p.floor_active);
    }

    #[test]
    fn signed_distance_is_a_fixed_point() {
        let mesh = build_structured_mesh(&[10, 10], &[1.0, 1.0]).unwrap();
        let phi = Field::scalar(&mesh, |x| 0.37 - x[1]);
        let r = reinitialize_detailed(&mesh, &phi, &ReinitSettings::default()).unwrap();
        for (a, b) in r.phi.values().iter().zip(phi.values()) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}
