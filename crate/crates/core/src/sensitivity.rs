//! Discrete adjoints of the coupled flow-thermal system, shape derivatives
//! with respect to nodal coordinates, and their Hilbertian regularization.
//!
//! The discrete Lagrangian is `F - λ_T·R_T - λ_C·R_C - λ_H·R_H`. Nodal data
//! (indicators, prescribed boundary values) ride with the nodes, so the
//! shape derivative is the plain coordinate derivative of that Lagrangian.

use crate::dual::{Dual, Scalar};
use crate::error::{Error, Result};
use crate::flow::{
    flow_boundary, gather, ns_cell_residual, solve_flow_with, FlowParams, FlowState, NsCoefficients,
};
use crate::levelset::indicator_from_levelset;
use crate::mesh_fem::geometry::{facet_measure, facet_normal};
use crate::mesh_fem::quadrature::cached_rule;
use crate::mesh_fem::{
    apply_dirichlet, assemble, dot, mass_kernel, opposite_vertex, stiffness_kernel, DirichletBC,
    Factorization, Field, LocalSystem, Mesh, SparseOperator, SurfaceTag,
};
use crate::thermal::{
    assemble_transport, gather_scalar, gather_vector, solve_temperature_with, thermal_boundary,
    transport_cell_residual, ThermalParams, ThermalState, TransportCoefficients,
};

/// The three design functionals: heat flux through the cold outlet and the
/// pressure drop of each fluid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Functional {
    HeatFlux,
    ColdPressureDrop,
    HotPressureDrop,
}

impl Functional {
    pub const ALL: [Functional; 3] = [
        Functional::HeatFlux,
        Functional::ColdPressureDrop,
        Functional::HotPressureDrop,
    ];
}

/// Both fluids and the temperature, with constraints frozen on the
/// reference mesh so they ride with the nodes under perturbation.
#[derive(Clone, Debug)]
pub struct CoupledSystem {
    pub cold: FlowParams,
    pub hot: FlowParams,
    pub thermal: ThermalParams,
    pub cold_bc: DirichletBC,
    pub hot_bc: DirichletBC,
    pub thermal_bc: DirichletBC,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrimalState {
    pub cold: FlowState,
    pub hot: FlowState,
    pub thermal: ThermalState,
    /// Penalizes the cold fluid (1 in the hot region).
    pub chi_hot: Field,
    /// Penalizes the hot fluid.
    pub chi_cold: Field,
}

impl PrimalState {
    pub fn combined_velocity(&self) -> Field {
        self.cold
            .velocity
            .add(&self.hot.velocity)
            .expect("both fluids live on one mesh")
    }
}

impl CoupledSystem {
    pub fn new(
        mesh: &Mesh,
        cold: FlowParams,
        hot: FlowParams,
        thermal: ThermalParams,
    ) -> Result<Self> {
        Ok(CoupledSystem {
            cold_bc: flow_boundary(mesh, &cold)?,
            hot_bc: flow_boundary(mesh, &hot)?,
            thermal_bc: thermal_boundary(mesh, &thermal)?,
            cold,
            hot,
            thermal,
        })
    }

    /// Solves both fluids and then the temperature for the design `φ`.
    pub fn solve(
        &self,
        mesh: &Mesh,
        phi: &Field,
        guess: Option<&PrimalState>,
    ) -> Result<PrimalState> {
        let (chi_hot, chi_cold) = indicator_from_levelset(phi);
        self.solve_with_indicators(mesh, chi_hot, chi_cold, guess)
    }

    pub fn solve_with_indicators(
        &self,
        mesh: &Mesh,
        chi_hot: Field,
        chi_cold: Field,
        guess: Option<&PrimalState>,
    ) -> Result<PrimalState> {
        let (cold, hot) = rayon::join(
            || {
                solve_flow_with(
                    mesh,
                    &chi_hot,
                    &self.cold,
                    &self.cold_bc,
                    guess.map(|g| &g.cold),
                )
            },
            || {
                solve_flow_with(
                    mesh,
                    &chi_cold,
                    &self.hot,
                    &self.hot_bc,
                    guess.map(|g| &g.hot),
                )
            },
        );
        let (cold, hot) = (cold?, hot?);
        let u = cold.velocity.add(&hot.velocity)?;
        let thermal = solve_temperature_with(mesh, &u, &self.thermal, &self.thermal_bc)?;
        Ok(PrimalState {
            cold,
            hot,
            thermal,
            chi_hot,
            chi_cold,
        })
    }

    pub fn evaluate(
        &self,
        mesh: &Mesh,
        primal: &PrimalState,
        functional: Functional,
    ) -> Result<f64> {
        Ok(self
            .functional_parts(mesh, primal, functional, false)?
            .value)
    }

    fn facets_of(&self, mesh: &Mesh, functional: Functional) -> Result<Vec<(usize, f64)>> {
        let tags: Vec<(SurfaceTag, f64)> = match functional {
            Functional::HeatFlux => vec![(self.cold.outlet, 1.0)],
            Functional::ColdPressureDrop => vec![(self.cold.inlet, 1.0), (self.cold.outlet, -1.0)],
            Functional::HotPressureDrop => vec![(self.hot.inlet, 1.0), (self.hot.outlet, -1.0)],
        };
        let mut out = Vec::new();
        for (tag, sign) in tags {
            if !mesh.has_tag(tag) {
                return Err(Error::invalid(format!(
                    "no boundary facet carries tag {tag}"
                )));
            }
            out.extend(
                mesh.facets()
                    .iter()
                    .enumerate()
                    .filter(|(_, f)| f.tag == tag)
                    .map(|(i, _)| (i, sign)),
            );
        }
        Ok(out)
    }

    /// Value and, optionally, all partial derivatives of a functional.
    fn functional_parts(
        &self,
        mesh: &Mesh,
        primal: &PrimalState,
        functional: Functional,
        derivatives: bool,
    ) -> Result<FunctionalParts> {
        let dim = mesh.dim();
        let nb = dim + 1;
        let mut parts = FunctionalParts {
            value: 0.0,
            thermal: vec![0.0; if derivatives { mesh.n_nodes() } else { 0 }],
            cold: vec![0.0; if derivatives { mesh.n_nodes() * nb } else { 0 }],
            hot: vec![0.0; if derivatives { mesh.n_nodes() * nb } else { 0 }],
            coords: vec![0.0; if derivatives { mesh.n_nodes() * dim } else { 0 }],
        };
        let flow = match functional {
            Functional::HotPressureDrop => &primal.hot,
            _ => &primal.cold,
        };
        let t = primal.thermal.temperature.values();
        for (fi, sign) in self.facets_of(mesh, functional)? {
            let facet = &mesh.facets()[fi];
            let nodes = facet.vertices(dim);
            let opposite = opposite_vertex(mesh, facet.cell, nodes);
            let mut fx = [[0.0; 3]; 3];
            let mut ft = [0.0; 3];
            let mut fu = [[0.0; 3]; 3];
            let mut fp = [0.0; 3];
            for (a, &v) in nodes.iter().enumerate() {
                fx[a][..dim].copy_from_slice(mesh.point(v));
                ft[a] = t[v];
                fu[a][..dim].copy_from_slice(flow.velocity.at(v));
                fp[a] = flow.pressure.values()[v];
            }
            let value = facet_integrand(functional, dim, &fx, &opposite, &ft, &fu, &fp);
            parts.value += sign * value;
            if !derivatives {
                continue;
            }
            // state derivatives: T then u for the heat flux, p for pressure drops
            let xs = fx.map(|r| r.map(Dual::<12>::constant));
            let mut ts = ft.map(Dual::<12>::constant);
            let mut us = fu.map(|r| r.map(Dual::<12>::constant));
            let mut ps = fp.map(Dual::<12>::constant);
            for a in 0..dim {
                match functional {
                    Functional::HeatFlux => {
                        ts[a] = Dual::variable(ft[a], a);
                        for k in 0..dim {
                            us[a][k] = Dual::variable(fu[a][k], dim + a * dim + k);
                        }
                    }
                    _ => ps[a] = Dual::variable(fp[a], a),
                }
            }
            let d = facet_integrand(functional, dim, &xs, &opposite, &ts, &us, &ps);
            let target = match functional {
                Functional::HotPressureDrop => &mut parts.hot,
                _ => &mut parts.cold,
            };
            for (a, &v) in nodes.iter().enumerate() {
                match functional {
                    Functional::HeatFlux => {
                        parts.thermal[v] += sign * d.eps[a];
                        for k in 0..dim {
                            target[v * nb + k] += sign * d.eps[dim + a * dim + k];
                        }
                    }
                    _ => target[v * nb + dim] += sign * d.eps[a],
                }
            }
            // coordinate derivative
            let mut xs = fx.map(|r| r.map(Dual::<12>::constant));
            for a in 0..dim {
                for k in 0..dim {
                    xs[a][k] = Dual::variable(fx[a][k], a * dim + k);
                }
            }
            let d = facet_integrand(
                functional,
                dim,
                &xs,
                &opposite,
                &ft.map(Dual::constant),
                &fu.map(|r| r.map(Dual::constant)),
                &fp.map(Dual::constant),
            );
            for (a, &v) in nodes.iter().enumerate() {
                for k in 0..dim {
                    parts.coords[v * dim + k] += sign * d.eps[a * dim + k];
                }
            }
        }
        Ok(parts)
    }
}

struct FunctionalParts {
    value: f64,
    thermal: Vec<f64>,
    cold: Vec<f64>,
    hot: Vec<f64>,
    coords: Vec<f64>,
}

/// Contribution of one boundary facet: `∫ T u·n` or `∫ p`.
fn facet_integrand<S: Scalar>(
    functional: Functional,
    dim: usize,
    fx: &[[S; 3]; 3],
    opposite: &[f64; 3],
    t: &[S; 3],
    u: &[[S; 3]; 3],
    p: &[S; 3],
) -> S {
    match functional {
        Functional::HeatFlux => {
            let n = facet_normal(dim, fx, opposite);
            let mut total = S::zero();
            for (lam, w) in cached_rule(dim - 1, 2).iter() {
                let mut tq = S::zero();
                let mut un = S::zero();
                for a in 0..dim {
                    tq += t[a] * lam[a];
                    for k in 0..dim {
                        un += u[a][k] * n[k] * lam[a];
                    }
                }
                total += tq * un * w;
            }
            total
        }
        _ => {
            let mut mean = S::zero();
            for a in 0..dim {
                mean += p[a];
            }
            facet_measure(dim, fx) * mean / dim as f64
        }
    }
}

/// Adjoint variables in the unknown layouts of the primal solves.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointState {
    pub functional: Functional,
    /// Interleaved `[u, p]` per node, cold fluid.
    pub cold: Vec<f64>,
    pub hot: Vec<f64>,
    pub thermal: Vec<f64>,
}

/// Factorized Jacobians of the converged primal state, shared by the
/// adjoints of all functionals.
pub struct Linearization {
    cold: Factorization,
    hot: Factorization,
    thermal: Factorization,
    cold_mask: Vec<bool>,
    hot_mask: Vec<bool>,
    thermal_mask: Vec<bool>,
}

impl Linearization {
    pub fn new(mesh: &Mesh, system: &CoupledSystem, primal: &PrimalState) -> Result<Self> {
        let dim = mesh.dim();
        let flow_jacobian = |params: &FlowParams,
                             state: &FlowState,
                             chi: &Field,
                             bc: &DirichletBC|
         -> Result<Factorization> {
            let (_, mut jac) = crate::flow::assemble_ns_system(mesh, chi, params, state)?;
            let mut scratch = vec![0.0; jac.dim()];
            apply_dirichlet(&mut jac, &mut scratch, &bc.map_values(|_, _| 0.0))?;
            jac.factorize()
        };
        let (cold, hot) = rayon::join(
            || flow_jacobian(&system.cold, &primal.cold, &primal.chi_hot, &system.cold_bc),
            || flow_jacobian(&system.hot, &primal.hot, &primal.chi_cold, &system.hot_bc),
        );
        let coef = thermal_coefficients(&system.thermal);
        let (mut top, _) = assemble_transport(mesh, &primal.combined_velocity(), None, &coef)?;
        let mut scratch = vec![0.0; top.dim()];
        apply_dirichlet(
            &mut top,
            &mut scratch,
            &system.thermal_bc.map_values(|_, _| 0.0),
        )?;
        let n_flow = mesh.n_nodes() * (dim + 1);
        Ok(Linearization {
            cold: cold?,
            hot: hot?,
            thermal: top.factorize()?,
            cold_mask: system.cold_bc.mask(n_flow),
            hot_mask: system.hot_bc.mask(n_flow),
            thermal_mask: system.thermal_bc.mask(mesh.n_nodes()),
        })
    }

    /// Thermal adjoint first; its coupling through the advecting velocity
    /// then drives both flow adjoints.
    pub fn adjoint(
        &self,
        mesh: &Mesh,
        system: &CoupledSystem,
        primal: &PrimalState,
        functional: Functional,
    ) -> Result<AdjointState> {
        let parts = system.functional_parts(mesh, primal, functional, true)?;
        let masked = |v: &[f64], mask: &[bool]| -> Vec<f64> {
            v.iter()
                .zip(mask)
                .map(|(x, &m)| if m { 0.0 } else { *x })
                .collect()
        };
        let thermal = if parts.thermal.iter().any(|v| *v != 0.0) {
            self.thermal
                .solve_transpose(&masked(&parts.thermal, &self.thermal_mask))?
        } else {
            vec![0.0; mesh.n_nodes()]
        };
        let coupling = if thermal.iter().any(|v| *v != 0.0) {
            thermal_velocity_coupling(mesh, system, primal, &thermal)?
        } else {
            vec![0.0; mesh.n_nodes() * (mesh.dim() + 1)]
        };
        let flow_adjoint = |dfds: &[f64], fac: &Factorization, mask: &[bool]| -> Result<Vec<f64>> {
            let rhs: Vec<f64> = dfds.iter().zip(&coupling).map(|(a, b)| a - b).collect();
            if rhs.iter().all(|v| *v == 0.0) {
                return Ok(vec![0.0; rhs.len()]);
            }
            fac.solve_transpose(&masked(&rhs, mask))
        };
        Ok(AdjointState {
            functional,
            cold: flow_adjoint(&parts.cold, &self.cold, &self.cold_mask)?,
            hot: flow_adjoint(&parts.hot, &self.hot, &self.hot_mask)?,
            thermal,
        })
    }
}

fn thermal_coefficients(params: &ThermalParams) -> TransportCoefficients {
    TransportCoefficients {
        kappa: 1.0 / params.pe,
        beta: params.beta_gls,
        sigma: 0.0,
    }
}

/// `(∂R_T/∂u)ᵀ λ_T` in the flow unknown layout (pressure slots zero).
fn thermal_velocity_coupling(
    mesh: &Mesh,
    system: &CoupledSystem,
    primal: &PrimalState,
    lambda: &[f64],
) -> Result<Vec<f64>> {
    let dim = mesh.dim();
    let nb = dim + 1;
    let coef = thermal_coefficients(&system.thermal);
    let u = primal.combined_velocity();
    let t = primal.thermal.temperature.values();
    let per_cell = |c: usize| -> Vec<f64> {
        match dim {
            2 => velocity_coupling_cell::<6>(mesh, c, &u, t, lambda, &coef),
            _ => velocity_coupling_cell::<12>(mesh, c, &u, t, lambda, &coef),
        }
    };
    let mut out = vec![0.0; mesh.n_nodes() * nb];
    let locals: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        (0..mesh.n_cells()).into_par_iter().map(per_cell).collect()
    };
    for (c, local) in locals.iter().enumerate() {
        for (a, &v) in mesh.cell(c).iter().enumerate() {
            for k in 0..dim {
                out[v * nb + k] += local[a * dim + k];
            }
        }
    }
    Ok(out)
}

fn velocity_coupling_cell<const M: usize>(
    mesh: &Mesh,
    c: usize,
    u: &Field,
    t: &[f64],
    lambda: &[f64],
    coef: &TransportCoefficients,
) -> Vec<f64> {
    let dim = mesh.dim();
    let x = mesh.cell_coords(c).map(|r| r.map(Dual::<M>::constant));
    let uc = gather_vector(mesh, c, u);
    let mut us = [[Dual::<M>::constant(0.0); 3]; 4];
    for a in 0..=dim {
        for k in 0..dim {
            us[a][k] = Dual::variable(uc[a][k], a * dim + k);
        }
    }
    let ts = gather_scalar(mesh, c, t).map(Dual::<M>::constant);
    let r = transport_cell_residual(dim, &x, &us, &ts, &[0.0; 4], coef);
    let lam = gather_scalar(mesh, c, lambda);
    let mut acc = Dual::<M>::constant(0.0);
    for a in 0..=dim {
        acc += r[a] * lam[a];
    }
    acc.eps[..dim * (dim + 1)].to_vec()
}

pub fn solve_adjoints(
    mesh: &Mesh,
    system: &CoupledSystem,
    primal: &PrimalState,
    functional: Functional,
) -> Result<AdjointState> {
    Linearization::new(mesh, system, primal)?.adjoint(mesh, system, primal, functional)
}

/// Linear functional over nodal perturbation fields: one coefficient per
/// node and component.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeDerivative {
    pub coefficients: Field,
}

impl ShapeDerivative {
    pub fn apply(&self, xi: &Field) -> f64 {
        dot(self.coefficients.values(), xi.values())
    }
}

/// Coordinate derivative of the discrete Lagrangian.
pub fn assemble_shape_derivative(
    mesh: &Mesh,
    system: &CoupledSystem,
    primal: &PrimalState,
    adjoint: &AdjointState,
) -> Result<ShapeDerivative> {
    let dim = mesh.dim();
    let parts = system.functional_parts(mesh, primal, adjoint.functional, true)?;
    let mut out = parts.coords;
    let cold_dofs = primal.cold.to_dofs();
    let hot_dofs = primal.hot.to_dofs();
    let u = primal.combined_velocity();
    let ctx = ShapeContext {
        mesh,
        cold: (
            NsCoefficients::new(&system.cold),
            &cold_dofs,
            primal.chi_hot.values(),
            &adjoint.cold,
        ),
        hot: (
            NsCoefficients::new(&system.hot),
            &hot_dofs,
            primal.chi_cold.values(),
            &adjoint.hot,
        ),
        thermal: (
            thermal_coefficients(&system.thermal),
            &u,
            primal.thermal.temperature.values(),
            &adjoint.thermal,
        ),
    };
    let locals: Vec<[[f64; 3]; 4]> = {
        use rayon::prelude::*;
        (0..mesh.n_cells())
            .into_par_iter()
            .map(|c| match dim {
                2 => ctx.cell::<6>(c),
                _ => ctx.cell::<12>(c),
            })
            .collect()
    };
    for (c, g) in locals.iter().enumerate() {
        for (a, &v) in mesh.cell(c).iter().enumerate() {
            for k in 0..dim {
                out[v * dim + k] += g[a][k];
            }
        }
    }
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::AssemblyFailure {
            cell: usize::MAX,
            reason: format!("shape derivative entry {i} is not finite"),
        });
    }
    Ok(ShapeDerivative {
        coefficients: Field::from_values(dim, out)?,
    })
}

struct ShapeContext<'a> {
    mesh: &'a Mesh,
    cold: (NsCoefficients, &'a [f64], &'a [f64], &'a [f64]),
    hot: (NsCoefficients, &'a [f64], &'a [f64], &'a [f64]),
    thermal: (TransportCoefficients, &'a Field, &'a [f64], &'a [f64]),
}

impl ShapeContext<'_> {
    /// `-∂/∂x (λ_C·R_C + λ_H·R_H + λ_T·R_T)` on one cell.
    fn cell<const M: usize>(&self, c: usize) -> [[f64; 3]; 4] {
        let mesh = self.mesh;
        let dim = mesh.dim();
        let nb = dim + 1;
        let coords = mesh.cell_coords(c);
        let mut x = coords.map(|r| r.map(Dual::<M>::constant));
        for a in 0..=dim {
            for k in 0..dim {
                x[a][k] = Dual::variable(coords[a][k], a * dim + k);
            }
        }
        let mut acc = Dual::<M>::constant(0.0);
        for (coef, dofs, chi, lambda) in [&self.cold, &self.hot] {
            let local: Vec<f64> = mesh
                .cell(c)
                .iter()
                .flat_map(|&v| lambda[v * nb..(v + 1) * nb].iter().copied())
                .collect();
            if local.iter().all(|v| *v == 0.0) {
                continue;
            }
            let d = gather(mesh, c, dofs, chi);
            let u = d.u.map(|r| r.map(Dual::<M>::constant));
            let p = d.p.map(Dual::<M>::constant);
            let r = ns_cell_residual(dim, &x, &u, &p, &d.chi, coef);
            for (i, l) in local.iter().enumerate() {
                acc += r[i] * *l;
            }
        }
        let (coef, vel, t, lambda) = &self.thermal;
        let lam = gather_scalar(mesh, c, lambda);
        if lam.iter().any(|v| *v != 0.0) {
            let u = gather_vector(mesh, c, vel).map(|r| r.map(Dual::<M>::constant));
            let ts = gather_scalar(mesh, c, t).map(Dual::<M>::constant);
            let r = transport_cell_residual(dim, &x, &u, &ts, &[0.0; 4], coef);
            for a in 0..=dim {
                acc += r[a] * lam[a];
            }
        }
        let mut g = [[0.0; 3]; 4];
        for a in 0..=dim {
            for k in 0..dim {
                g[a][k] = -acc.eps[a * dim + k];
            }
        }
        g
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtensionSettings {
    pub gamma: f64,
    pub c1: f64,
}

impl Default for ExtensionSettings {
    fn default() -> Self {
        ExtensionSettings {
            gamma: 0.4,
            c1: 1e4,
        }
    }
}

/// Riesz map of the inner product
/// `b(ζ, ξ) = γ∫∇ζ:∇ξ + ∫ζ·ξ + c₁∮(ζ·n)(ξ·n)`, factorized once per mesh.
pub struct HilbertianExtension {
    op: SparseOperator,
    factor: Factorization,
    fixed: Vec<bool>,
}

impl HilbertianExtension {
    pub fn new(mesh: &Mesh, settings: &ExtensionSettings) -> Result<Self> {
        Self::with_fixed_nodes(mesh, settings, &[])
    }

    /// Extension into the fields vanishing on `fixed` nodes.
    pub fn with_fixed_nodes(
        mesh: &Mesh,
        settings: &ExtensionSettings,
        fixed: &[usize],
    ) -> Result<Self> {
        if !(settings.gamma > 0.0) || !(settings.c1 >= 0.0) {
            return Err(Error::invalid("extension needs gamma > 0 and c1 >= 0"));
        }
        let dim = mesh.dim();
        let pattern = mesh.pattern(dim);
        let (mut op, _) = assemble(mesh, &pattern, dim, |c| {
            let (m, k) = (mass_kernel(mesh, c), stiffness_kernel(mesh, c));
            let n = dim + 1;
            let nl = n * dim;
            let mut local = LocalSystem::zeros(nl);
            local.vector.clear();
            for a in 0..n {
                for b in 0..n {
                    let v = settings.gamma * k.matrix[a * n + b] + m.matrix[a * n + b];
                    for f in 0..dim {
                        local.matrix[(a * dim + f) * nl + b * dim + f] = v;
                    }
                }
            }
            Ok(local)
        })?;
        // boundary normal penalty: ∫ λ_a λ_b = |F|(1 + δ_ab)/(d(d+1)) on a facet
        for facet in mesh.facets() {
            let nodes = facet.vertices(dim);
            let mut fx = [[0.0; 3]; 3];
            for (a, &v) in nodes.iter().enumerate() {
                fx[a][..dim].copy_from_slice(mesh.point(v));
            }
            let nvec = facet_normal::<f64>(dim, &fx, &opposite_vertex(mesh, facet.cell, nodes));
            let area = nvec.iter().map(|v| v * v).sum::<f64>().sqrt();
            let unit = nvec.map(|v| v / area);
            let base = area / (dim * (dim + 1)) as f64;
            for (a, &va) in nodes.iter().enumerate() {
                for (b, &vb) in nodes.iter().enumerate() {
                    let m = if a == b { 2.0 * base } else { base };
                    for f in 0..dim {
                        for g in 0..dim {
                            op.add(
                                va * dim + f,
                                vb * dim + g,
                                settings.c1 * m * unit[f] * unit[g],
                            );
                        }
                    }
                }
            }
        }
        let mut bc = DirichletBC::new();
        for &v in fixed {
            for k in 0..dim {
                bc.insert(v * dim + k, 0.0)?;
            }
        }
        let mut constrained = op.clone();
        let mut scratch = vec![0.0; op.dim()];
        apply_dirichlet(&mut constrained, &mut scratch, &bc)?;
        let factor = constrained.factorize()?;
        Ok(HilbertianExtension {
            fixed: bc.mask(op.dim()),
            op,
            factor,
        })
    }

    /// ζ with `b(ζ, ξ) = dJ[ξ]` for every ξ.
    pub fn extend(&self, derivative: &ShapeDerivative) -> Result<Field> {
        let d = &derivative.coefficients;
        if d.values().len() != self.op.dim() {
            return Err(Error::invalid(
                "shape derivative does not match the extension space",
            ));
        }
        if d.values().iter().all(|v| *v == 0.0) {
            return Ok(Field::zeros(d.n_nodes(), d.components()));
        }
        let rhs: Vec<f64> = d
            .values()
            .iter()
            .zip(&self.fixed)
            .map(|(v, &f)| if f { 0.0 } else { *v })
            .collect();
        Field::from_values(d.components(), self.factor.solve(&rhs)?)
    }

    /// `b(a, b)`.
    pub fn inner(&self, a: &Field, b: &Field) -> f64 {
        dot(&self.op.matvec(a.values()), b.values())
    }

    pub fn operator(&self) -> &SparseOperator {
        &self.op
    }
}

pub fn hilbertian_extension(
    derivative: &ShapeDerivative,
    settings: &ExtensionSettings,
    mesh: &Mesh,
) -> Result<Field> {
    HilbertianExtension::new(mesh, settings)?.extend(derivative)
}
