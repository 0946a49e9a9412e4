use rayon::prelude::*;

use super::config::ProblemConfig;
use crate::error::{Error, Result};
use crate::flow::FlowParams;
use crate::levelset::{
    advect_levelset, indicator_from_levelset, reinitialize, AdvectionSettings, ReinitSettings,
};
use crate::mesh_fem::{build_structured_mesh, integrate_boundary, Field, Mesh, SurfaceTag};
use crate::optimizer::{DesignProblem, Evaluation, IterationRecord};
use crate::sensitivity::{
    assemble_shape_derivative, CoupledSystem, ExtensionSettings, Functional, HilbertianExtension,
    Linearization, PrimalState,
};
use crate::thermal::{ThermalParams, ThermalState};

/// Tags of the four flow surfaces of one configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PortRoles {
    pub cold_in: SurfaceTag,
    pub hot_in: SurfaceTag,
    pub cold_out: SurfaceTag,
    pub hot_out: SurfaceTag,
}

/// Which fixed channel a buffer node belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BufferZone {
    Cold,
    Hot,
    Solid,
}

/// A ready-to-solve heat exchanger: mesh with tagged ports, fixed buffer
/// channels, solver settings and the initial design.
pub struct HxProblem {
    pub config: ProblemConfig,
    pub mesh: Mesh,
    pub system: CoupledSystem,
    pub roles: PortRoles,
    /// Buffer nodes and the channel they belong to.
    pub buffers: Vec<(usize, BufferZone)>,
    pub initial_phi: Field,
    pub advection: AdvectionSettings,
    pub reinit: ReinitSettings,
    pub extension: HilbertianExtension,
    buffer_phi: Vec<(usize, f64)>,
    /// Recent solutions, most recent last.
    cache: Vec<Cached>,
    observer: Option<Box<dyn FnMut(&IterationRecord, &Field, &PrimalState) -> Result<()> + Send>>,
}

/// Line searches often come back to a phase pattern solved a few trials ago.
const CACHE_SIZE: usize = 4;

struct Cached {
    chi_hot: Vec<f64>,
    da: f64,
    primal: PrimalState,
    evaluation: Evaluation,
}

/// Magnitude of the fixed level-set value inside buffer channels.
const BUFFER_PHI: f64 = 0.05;

pub fn build_problem(config: &ProblemConfig) -> Result<HxProblem> {
    config
        .validate()
        .map_err(|(key, msg)| Error::invalid(format!("{key}: {msg}")))?;
    let dim = config.dim();
    let n = &config.resolution;
    let len = &config.extent;
    let hx = len[0] / n[0] as f64;
    let nb = ((config.buffer_length / hx).round() as usize).max(1);
    let buffer = nb as f64 * hx;

    let mut res = n.clone();
    res[0] += 2 * nb;
    let mut ext = len.clone();
    ext[0] += 2.0 * buffer;
    let base = build_structured_mesh(&res, &ext)?;
    let coords: Vec<f64> = base
        .coords()
        .chunks(dim)
        .flat_map(|p| {
            let mut q = p.to_vec();
            q[0] -= buffer;
            q
        })
        .collect();
    let mut mesh = base.with_coords(coords)?;

    // ports: 1, 2 on the left (lower, upper), 3, 4 on the right (upper, lower)
    let [lo, hi] = config.port_centers;
    let w = config.port_width;
    let in_strip = |c: &[f64], center: f64| -> bool {
        let y = c[1] / len[1];
        let z_ok = dim == 2 || ((c[2] / len[2]) - 0.5).abs() <= w / 2.0;
        (y - center).abs() <= w / 2.0 && z_ok
    };
    mesh.retag(|f, c| match f.tag {
        SurfaceTag::XMin if in_strip(c, lo) => SurfaceTag::Port(1),
        SurfaceTag::XMin if in_strip(c, hi) => SurfaceTag::Port(2),
        SurfaceTag::XMax if in_strip(c, hi) => SurfaceTag::Port(3),
        SurfaceTag::XMax if in_strip(c, lo) => SurfaceTag::Port(4),
        t => t,
    });
    for k in 1..=4 {
        if !mesh.has_tag(SurfaceTag::Port(k)) {
            return Err(Error::invalid(format!(
                "port {k} covers no facet; refine the mesh or widen the ports"
            )));
        }
    }
    let [ci, hi_, co, ho] = config.configuration.roles();
    let roles = PortRoles {
        cold_in: SurfaceTag::Port(ci),
        hot_in: SurfaceTag::Port(hi_),
        cold_out: SurfaceTag::Port(co),
        hot_out: SurfaceTag::Port(ho),
    };
    let cold_port = |k: u8| k == ci || k == co;

    // buffer channels follow the realized port facets
    let spans: Vec<(u8, Vec<f64>, Vec<f64>)> = (1..=4u8)
        .map(|k| {
            let nodes = mesh.tagged_nodes(SurfaceTag::Port(k));
            let mut lo = vec![f64::INFINITY; dim];
            let mut hi = vec![f64::NEG_INFINITY; dim];
            for v in nodes {
                for d in 0..dim {
                    lo[d] = lo[d].min(mesh.point(v)[d]);
                    hi[d] = hi[d].max(mesh.point(v)[d]);
                }
            }
            (k, lo, hi)
        })
        .collect();
    let eps = 1e-9 * len[0];
    let mut buffers = Vec::new();
    for v in 0..mesh.n_nodes() {
        let x = mesh.point(v);
        let left = x[0] < -eps;
        let right = x[0] > len[0] + eps;
        if !left && !right {
            continue;
        }
        let zone = spans
            .iter()
            .filter(|(k, _, _)| if left { *k <= 2 } else { *k >= 3 })
            .find(|(_, lo, hi)| (1..dim).all(|d| x[d] > lo[d] + eps && x[d] < hi[d] - eps))
            .map_or(BufferZone::Solid, |(k, _, _)| {
                if cold_port(*k) {
                    BufferZone::Cold
                } else {
                    BufferZone::Hot
                }
            });
        buffers.push((v, zone));
    }

    let initial_phi = initial_design(&mesh, config);
    let buffer_phi = buffers
        .iter()
        .map(|&(v, zone)| match zone {
            BufferZone::Cold => (v, -BUFFER_PHI),
            BufferZone::Hot => (v, BUFFER_PHI),
            BufferZone::Solid => (v, initial_phi.values()[v]),
        })
        .collect();

    let flow = |inlet, outlet, own: BufferZone| {
        let mut p = FlowParams::new(config.re, config.da, inlet, outlet);
        p.beta_gls = config.beta_gls;
        p.v_max = config.v_max;
        p.no_flow_nodes = buffers
            .iter()
            .filter(|(_, z)| *z != own)
            .map(|(v, _)| *v)
            .collect();
        // functionals are needed to ~1e-6; this saves one factorization per re-solve
        p.newton.rel_tol = 1e-6;
        p
    };
    let mut thermal = ThermalParams::new(config.pe, roles.cold_in, roles.hot_in);
    thermal.beta_gls = config.beta_gls;
    let system = CoupledSystem::new(
        &mesh,
        flow(roles.cold_in, roles.cold_out, BufferZone::Cold),
        flow(roles.hot_in, roles.hot_out, BufferZone::Hot),
        thermal,
    )?;
    let fixed: Vec<usize> = buffers.iter().map(|(v, _)| *v).collect();
    let extension = HilbertianExtension::with_fixed_nodes(
        &mesh,
        &ExtensionSettings {
            gamma: config.gamma,
            c1: config.c1,
        },
        &fixed,
    )?;
    let mut advection = AdvectionSettings::for_mesh(n[0], config.t_hat);
    if let Some(p) = config.pe_hj {
        advection.pe_hj = p;
    }
    advection.sign = config.advection_sign;

    let mut problem = HxProblem {
        config: config.clone(),
        mesh,
        system,
        roles,
        buffers,
        initial_phi,
        advection,
        // periodic reinitialization is a regularization; a looser tolerance
        // keeps it cheap on designs with thin features
        reinit: ReinitSettings {
            tolerance: 1e-3,
            max_iter: 100,
        },
        extension,
        buffer_phi,
        cache: Vec::new(),
        observer: None,
    };
    problem.initial_phi = problem.restore_buffers(problem.initial_phi.clone());
    Ok(problem)
}

/// `sin(kπy)cos(kπx)[sin(kπz)] + offset` in design-region coordinates.
pub fn initial_design(mesh: &Mesh, config: &ProblemConfig) -> Field {
    let k = config.initial_frequency * std::f64::consts::PI;
    Field::scalar(mesh, |x| {
        let mut v = (k * x[1]).sin() * (k * x[0]).cos();
        if x.len() == 3 {
            v *= (k * x[2]).sin();
        }
        v + config.initial_offset
    })
}

/// `∫_outlet T u_C·n`.
pub fn cost_functional(
    mesh: &Mesh,
    temperature: &ThermalState,
    u_cold: &Field,
    outlet: SurfaceTag,
) -> Result<f64> {
    let dim = mesh.dim();
    let t = &temperature.temperature;
    integrate_boundary(mesh, outlet, 2, |p| {
        let un: f64 = (0..dim)
            .map(|k| p.interpolate(u_cold, k) * p.normal[k])
            .sum();
        p.interpolate(t, 0) * un
    })
}

/// `∫_inlet p - ∫_outlet p` as raw area integrals.
pub fn pressure_drop(
    mesh: &Mesh,
    pressure: &Field,
    inlet: SurfaceTag,
    outlet: SurfaceTag,
) -> Result<f64> {
    let a = integrate_boundary(mesh, inlet, 1, |p| p.interpolate(pressure, 0))?;
    let b = integrate_boundary(mesh, outlet, 1, |p| p.interpolate(pressure, 0))?;
    Ok(a - b)
}

impl HxProblem {
    /// Registers a callback receiving every record with the current design
    /// and its states.
    pub fn set_observer(
        &mut self,
        f: impl FnMut(&IterationRecord, &Field, &PrimalState) -> Result<()> + Send + 'static,
    ) {
        self.observer = Some(Box::new(f));
    }

    pub fn restore_buffers(&self, mut phi: Field) -> Field {
        let values = phi.values_mut();
        for &(v, x) in &self.buffer_phi {
            values[v] = x;
        }
        phi
    }

    /// Solves both fluids and the temperature for `phi`, reusing the last
    /// solution when the indicator has not changed.
    pub fn solve(&mut self, phi: &Field) -> Result<&PrimalState> {
        self.ensure(phi)?;
        Ok(&self.current().primal)
    }

    fn ensure(&mut self, phi: &Field) -> Result<()> {
        let (chi_hot, chi_cold) = self.indicators(phi);
        let da = self.system.cold.da;
        if let Some(k) = self
            .cache
            .iter()
            .position(|c| c.da == da && c.chi_hot == chi_hot.values())
        {
            let hit = self.cache.remove(k);
            self.cache.push(hit);
            return Ok(());
        }
        let guess = self.cache.last().map(|c| &c.primal);
        let primal =
            self.system
                .solve_with_indicators(&self.mesh, chi_hot.clone(), chi_cold, guess)?;
        let evaluation = self.functionals(&primal)?;
        if self.cache.len() == CACHE_SIZE {
            self.cache.remove(0);
        }
        self.cache.push(Cached {
            chi_hot: chi_hot.into_values(),
            da,
            primal,
            evaluation,
        });
        Ok(())
    }

    fn current(&self) -> &Cached {
        self.cache.last().expect("solved before use")
    }

    /// Brinkmann indicators of `phi`. Buffer channels are walled off by
    /// velocity constraints instead, so neither fluid is penalized there.
    pub fn indicators(&self, phi: &Field) -> (Field, Field) {
        let (mut hot, mut cold) = indicator_from_levelset(phi);
        for &(v, _) in &self.buffers {
            hot.values_mut()[v] = 0.0;
            cold.values_mut()[v] = 0.0;
        }
        (hot, cold)
    }

    pub fn functionals(&self, primal: &PrimalState) -> Result<Evaluation> {
        let r = &self.roles;
        Ok(Evaluation {
            j: cost_functional(
                &self.mesh,
                &primal.thermal,
                &primal.cold.velocity,
                r.cold_out,
            )?,
            g: vec![
                pressure_drop(&self.mesh, &primal.cold.pressure, r.cold_in, r.cold_out)?,
                pressure_drop(&self.mesh, &primal.hot.pressure, r.hot_in, r.hot_out)?,
            ],
        })
    }

    /// Share of each fluid's velocity (lumped L1 norm) found where the other
    /// fluid lives, i.e. where it is penalized; the larger of the two.
    pub fn non_mixing_leakage(&self, primal: &PrimalState) -> f64 {
        let mesh = &self.mesh;
        let mut lumped = vec![0.0; mesh.n_nodes()];
        for c in 0..mesh.n_cells() {
            let share = mesh.cell_volume(c) / (mesh.dim() + 1) as f64;
            for &v in mesh.cell(c) {
                lumped[v] += share;
            }
        }
        let leakage = |u: &Field, penalized: &Field| {
            let speed = u.node_norms();
            let (mut inside, mut total) = (0.0, 0.0);
            for v in 0..mesh.n_nodes() {
                total += lumped[v] * speed[v];
                inside += lumped[v] * speed[v] * penalized.values()[v];
            }
            inside / total.max(f64::MIN_POSITIVE)
        };
        leakage(&primal.cold.velocity, &primal.chi_hot)
            .max(leakage(&primal.hot.velocity, &primal.chi_cold))
    }

    /// Regularized shape gradients `(ζ_J, ζ_G1, ζ_G2)` at `phi`.
    pub fn shape_gradients(&mut self, phi: &Field) -> Result<[Field; 3]> {
        self.ensure(phi)?;
        let primal = &self.current().primal;
        let lin = Linearization::new(&self.mesh, &self.system, primal)?;
        let out: Vec<Result<Field>> = Functional::ALL
            .par_iter()
            .map(|&f| {
                let adj = lin.adjoint(&self.mesh, &self.system, primal, f)?;
                let d = assemble_shape_derivative(&self.mesh, &self.system, primal, &adj)?;
                self.extension.extend(&d)
            })
            .collect();
        let mut it = out.into_iter();
        Ok([
            it.next().unwrap()?,
            it.next().unwrap()?,
            it.next().unwrap()?,
        ])
    }
}

impl DesignProblem for HxProblem {
    fn evaluate(&mut self, phi: &Field) -> Result<Evaluation> {
        self.ensure(phi)?;
        Ok(self.current().evaluation.clone())
    }

    fn gradients(&mut self, phi: &Field) -> Result<(Field, Vec<Field>)> {
        let [j, g1, g2] = self.shape_gradients(phi)?;
        Ok((j, vec![g1, g2]))
    }

    fn inner(&self, a: &Field, b: &Field) -> f64 {
        self.extension.inner(a, b)
    }

    fn advect(&self, phi: &Field, theta: &Field, t_hat: f64) -> Result<Field> {
        let mut settings = self.advection.clone();
        settings.t_final = t_hat;
        Ok(self.restore_buffers(advect_levelset(&self.mesh, phi, theta, &settings)?))
    }

    fn reinitialize(&self, phi: &Field) -> Result<Field> {
        Ok(self.restore_buffers(reinitialize(&self.mesh, phi, &self.reinit)?))
    }

    fn darcy(&self) -> f64 {
        self.system.cold.da
    }

    fn set_darcy(&mut self, da: f64) {
        self.system.cold.da = da;
        self.system.hot.da = da;
    }

    fn observe(&mut self, record: &IterationRecord, phi: &Field) -> Result<()> {
        let Some(mut f) = self.observer.take() else {
            return Ok(());
        };
        let result = self
            .ensure(phi)
            .and_then(|_| f(record, phi, &self.current().primal));
        self.observer = Some(f);
        result
    }
}
