//! GLS-stabilized steady advection-diffusion of temperature over the whole
//! domain, driven by the sum of both fluids' velocities.

use crate::dual::{Dual, Scalar};
use crate::error::{Error, Result};
use crate::flow::STABILIZED_DEGREE;
use crate::mesh_fem::geometry::cell_geometry;
use crate::mesh_fem::quadrature::cached_rule;
use crate::mesh_fem::{
    apply_dirichlet, assemble, DirichletBC, Field, LocalSystem, Mesh, SparseOperator, SurfaceTag,
};

#[derive(Clone, Debug, PartialEq)]
pub struct ThermalParams {
    pub pe: f64,
    pub beta_gls: f64,
    /// Prescribed temperature per tag; every other facet is adiabatic.
    pub inlets: Vec<(SurfaceTag, f64)>,
}

impl ThermalParams {
    pub fn new(pe: f64, cold_inlet: SurfaceTag, hot_inlet: SurfaceTag) -> Self {
        ThermalParams {
            pe,
            beta_gls: 0.9,
            inlets: vec![(cold_inlet, 0.0), (hot_inlet, 1.0)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pe > 0.0) {
            return Err(Error::invalid(format!(
                "Peclet number must be positive, got {}",
                self.pe
            )));
        }
        if !(self.beta_gls > 0.0 && self.beta_gls <= 2.0) {
            return Err(Error::invalid(format!(
                "beta_gls must lie in (0, 2], got {}",
                self.beta_gls
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThermalState {
    pub temperature: Field,
}

/// GLS parameter for the temperature equation.
pub fn gls_parameter_t(u: &[f64], h: f64, pe: f64, beta_gls: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!(
            "element size must be positive, got {h}"
        )));
    }
    let uu: f64 = u.iter().map(|v| v * v).sum();
    let d = delta_ad(uu, h, 1.0 / pe, 0.0, beta_gls);
    if d.is_finite() && d > 0.0 {
        Ok(d)
    } else {
        Err(Error::DegenerateStabilization)
    }
}

/// β(4u·u/h² + (36κ/h²)² + σ²)^(-1/2).
#[inline]
pub(crate) fn delta_ad<S: Scalar>(uu: S, h: S, kappa: f64, sigma: f64, beta: f64) -> S {
    let h2 = h * h;
    let diff = h2.recip() * (36.0 * kappa);
    (uu * 4.0 / h2 + diff * diff + sigma * sigma).sqrt().recip() * beta
}

/// Constants of the scalar transport residual
/// `σ(T - T_old) + u·∇T - κΔT`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct TransportCoefficients {
    pub kappa: f64,
    pub beta: f64,
    pub sigma: f64,
}

/// Element residual of the stabilized scalar transport equation, the
/// Laplacian dropped from the least-squares term.
pub(crate) fn transport_cell_residual<S: Scalar>(
    dim: usize,
    x: &[[S; 3]; 4],
    u: &[[S; 3]; 4],
    t: &[S; 4],
    t_old: &[f64; 4],
    c: &TransportCoefficients,
) -> [S; 4] {
    let zero = S::zero();
    let nv = dim + 1;
    let geo = cell_geometry(dim, x);
    let g = &geo.grads;
    let mut dt = [zero; 3];
    for a in 0..nv {
        for l in 0..dim {
            dt[l] += t[a] * g[a][l];
        }
    }
    let inv_nv = 1.0 / nv as f64;
    let mut uu_bar = zero;
    for k in 0..dim {
        let mut m = zero;
        for a in 0..nv {
            m += u[a][k];
        }
        m *= inv_nv;
        uu_bar += m * m;
    }
    let delta = delta_ad(uu_bar, geo.size, c.kappa, c.sigma, c.beta);

    let mut out = [zero; 4];
    for b in 0..nv {
        let mut s = zero;
        for l in 0..dim {
            s += dt[l] * g[b][l];
        }
        out[b] += s * geo.volume * c.kappa;
    }
    for (lam, w) in cached_rule(dim, STABILIZED_DEGREE).iter() {
        let dv = geo.volume * w;
        let mut uq = [zero; 3];
        let mut react = zero;
        for a in 0..nv {
            for k in 0..dim {
                uq[k] += u[a][k] * lam[a];
            }
            if c.sigma != 0.0 {
                react += (t[a] - t_old[a]) * lam[a];
            }
        }
        let mut r = react * c.sigma;
        for l in 0..dim {
            r += uq[l] * dt[l];
        }
        for b in 0..nv {
            let mut adv = zero;
            for l in 0..dim {
                adv += uq[l] * g[b][l];
            }
            out[b] += (r * lam[b] + delta * r * adv) * dv;
        }
    }
    out
}

pub(crate) fn gather_scalar(mesh: &Mesh, c: usize, values: &[f64]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (a, &v) in mesh.cell(c).iter().enumerate() {
        out[a] = values[v];
    }
    out
}

pub(crate) fn gather_vector(mesh: &Mesh, c: usize, field: &Field) -> [[f64; 3]; 4] {
    let dim = field.components();
    let mut out = [[0.0; 3]; 4];
    for (a, &v) in mesh.cell(c).iter().enumerate() {
        out[a][..dim].copy_from_slice(field.at(v));
    }
    out
}

/// Linear operator and load of the transport equation (no constraints).
pub(crate) fn assemble_transport(
    mesh: &Mesh,
    u: &Field,
    t_old: Option<&[f64]>,
    c: &TransportCoefficients,
) -> Result<(SparseOperator, Vec<f64>)> {
    let dim = mesh.dim();
    let pattern = mesh.pattern(1);
    let (op, r0) = assemble(mesh, &pattern, 1, |cell| {
        let x = mesh.cell_coords(cell).map(|r| r.map(Dual::<4>::constant));
        let uc = gather_vector(mesh, cell, u).map(|r| r.map(Dual::<4>::constant));
        let old = t_old
            .map(|t| gather_scalar(mesh, cell, t))
            .unwrap_or([0.0; 4]);
        let t: [Dual<4>; 4] = std::array::from_fn(|a| Dual::variable(0.0, a));
        let r = transport_cell_residual(dim, &x, &uc, &t, &old, c);
        let n = dim + 1;
        let mut local = LocalSystem::zeros(n);
        for i in 0..n {
            local.vector[i] = -r[i].re;
            local.matrix[i * n..(i + 1) * n].copy_from_slice(&r[i].eps[..n]);
        }
        Ok(local)
    })?;
    Ok((op, r0))
}

/// Temperature constraints on the inlet tags.
pub fn thermal_boundary(mesh: &Mesh, params: &ThermalParams) -> Result<DirichletBC> {
    let mut bc = DirichletBC::new();
    for &(tag, value) in &params.inlets {
        let nodes = mesh.tagged_nodes(tag);
        if nodes.is_empty() {
            return Err(Error::invalid(format!(
                "no boundary facet carries inlet tag {tag}"
            )));
        }
        for v in nodes {
            bc.insert(v, value)?;
        }
    }
    Ok(bc)
}

pub fn solve_temperature(
    mesh: &Mesh,
    u_combined: &Field,
    params: &ThermalParams,
) -> Result<ThermalState> {
    let bc = thermal_boundary(mesh, params)?;
    solve_temperature_with(mesh, u_combined, params, &bc)
}

pub fn solve_temperature_with(
    mesh: &Mesh,
    u_combined: &Field,
    params: &ThermalParams,
    bc: &DirichletBC,
) -> Result<ThermalState> {
    params.validate()?;
    if u_combined.components() != mesh.dim() || u_combined.n_nodes() != mesh.n_nodes() {
        return Err(Error::invalid("velocity field does not match the mesh"));
    }
    if !u_combined.is_finite() {
        return Err(Error::invalid("velocity field is not finite"));
    }
    let coef = TransportCoefficients {
        kappa: 1.0 / params.pe,
        beta: params.beta_gls,
        sigma: 0.0,
    };
    let (mut op, mut rhs) = assemble_transport(mesh, u_combined, None, &coef)?;
    apply_dirichlet(&mut op, &mut rhs, bc)?;
    let t = op.factorize()?.solve(&rhs).map_err(|e| match e {
        Error::SingularSystem { .. } => Error::SolverFailure {
            solver: "temperature",
            history: Vec::new(),
        },
        other => other,
    })?;
    Ok(ThermalState {
        temperature: Field::from_values(1, t)?,
    })
}
