//! Self-checks against closed-form solutions and finite differences, run by
//! the `verify` subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Configuration, ProblemConfig};
use super::problem::build_problem;
use crate::error::Result;
use crate::flow::{solve_flow, FlowParams};
use crate::levelset::{gradient_norms, interface_cells, reinitialize_detailed, ReinitSettings};
use crate::mesh_fem::{build_structured_mesh, integrate_boundary, Field, Mesh, SurfaceTag};
use crate::optimizer::DesignProblem;
use crate::sensitivity::{assemble_shape_derivative, Functional, Linearization, ShapeDerivative};
use crate::thermal::{solve_temperature, ThermalParams};

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {}", self.name, self.detail)
    }
}

type Suite = (&'static str, fn() -> Result<(bool, String)>);

pub const SUITES: [Suite; 6] = [
    ("poiseuille", poiseuille),
    ("advection-diffusion", advection_diffusion),
    ("brinkmann", brinkmann),
    ("taylor", taylor),
    ("reinitialization", reinitialization),
    ("extension", extension),
];

/// Runs every suite; a suite that errors counts as failed.
pub fn run_verification(mut progress: impl FnMut(&SuiteReport)) -> Vec<SuiteReport> {
    SUITES
        .iter()
        .map(|&(name, suite)| {
            let report = match suite() {
                Ok((passed, detail)) => SuiteReport {
                    name,
                    passed,
                    detail,
                },
                Err(e) => SuiteReport {
                    name,
                    passed: false,
                    detail: format!("error: {e}"),
                },
            };
            progress(&report);
            report
        })
        .collect()
}

fn poiseuille() -> Result<(bool, String)> {
    let mesh = build_structured_mesh(&[96, 32], &[3.0, 1.0])?;
    let chi = Field::zeros(mesh.n_nodes(), 1);
    let s = solve_flow(
        &mesh,
        &chi,
        &FlowParams::new(10.0, 1e-5, SurfaceTag::XMin, SurfaceTag::XMax),
    )?;
    let err = (0..mesh.n_nodes())
        .filter(|&v| (mesh.point(v)[0] - 1.5).abs() < 1e-12)
        .map(|v| {
            let y = mesh.point(v)[1];
            (s.velocity.at(v)[0] - 4.0 * y * (1.0 - y)).abs()
        })
        .fold(0.0, f64::max);
    let p = &s.pressure;
    let dp = integrate_boundary(&mesh, SurfaceTag::XMin, 2, |q| q.interpolate(p, 0))?
        - integrate_boundary(&mesh, SurfaceTag::XMax, 2, |q| q.interpolate(p, 0))?;
    let rel = (dp - 2.4).abs() / 2.4;
    Ok((
        err <= 0.02 && rel <= 0.03,
        format!(
            "profile error {err:.2e} (<= 2e-2), pressure drop {dp:.4} vs 2.4 ({:.2}% <= 3%)",
            100.0 * rel
        ),
    ))
}

fn advection_diffusion() -> Result<(bool, String)> {
    let mesh = build_structured_mesh(&[200, 2], &[1.0, 0.05])?;
    let u = Field::interpolate(&mesh, 2, |_| vec![1.0, 0.0]);
    let t = solve_temperature(
        &mesh,
        &u,
        &ThermalParams::new(10.0, SurfaceTag::XMin, SurfaceTag::XMax),
    )?
    .temperature;
    let exact = |x: f64| ((10.0 * x).exp() - 1.0) / (10f64.exp() - 1.0);
    let err = (0..mesh.n_nodes())
        .map(|v| (t.values()[v] - exact(mesh.point(v)[0])).abs())
        .fold(0.0, f64::max);
    Ok((
        err <= 0.01,
        format!("sup error {err:.2e} (<= 1e-2) at Pe = 10"),
    ))
}

fn brinkmann() -> Result<(bool, String)> {
    // upper half of a channel penalized away from the entry and exit
    let mesh = build_structured_mesh(&[48, 16], &[3.0, 1.0])?;
    let solid = |x: &[f64]| x[1] > 0.5 && x[0] > 0.25 && x[0] < 2.75;
    let chi = Field::scalar(&mesh, |x| if solid(x) { 1.0 } else { 0.0 });
    let speed = |da: f64| -> Result<f64> {
        let s = solve_flow(
            &mesh,
            &chi,
            &FlowParams::new(10.0, da, SurfaceTag::XMin, SurfaceTag::XMax),
        )?;
        let norms = s.velocity.node_norms();
        Ok((0..mesh.n_nodes())
            .filter(|&v| solid(mesh.point(v)))
            .map(|v| norms[v])
            .fold(0.0, f64::max))
    };
    let (a, b) = (speed(1e-5)?, speed(1e-6)?);
    Ok((
        a <= 0.05 && b <= a,
        format!("max speed in penalized region {a:.2e} (<= 5e-2), {b:.2e} after Da/10"),
    ))
}

fn perturbed(mesh: &Mesh, xi: &Field, eps: f64) -> Result<Mesh> {
    mesh.with_coords(
        mesh.coords()
            .iter()
            .zip(xi.values())
            .map(|(x, d)| x + eps * d)
            .collect(),
    )
}

fn taylor() -> Result<(bool, String)> {
    let config = ProblemConfig {
        resolution: vec![8, 8],
        ..ProblemConfig::desk(Configuration::Parallel)
    };
    let mut problem = build_problem(&config)?;
    for p in [&mut problem.system.cold, &mut problem.system.hot] {
        p.newton.abs_tol = 1e-10;
        p.newton.rel_tol = 1e-14;
    }
    let phi = problem.initial_phi.clone();
    let primal = problem.solve(&phi)?.clone();
    let (mesh, system) = (&problem.mesh, &problem.system);
    let lin = Linearization::new(mesh, system, &primal)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let dim = mesh.dim();
    let xis: Vec<Field> = (0..3)
        .map(|_| {
            Field::from_values(
                dim,
                (0..mesh.n_nodes() * dim)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect(),
            )
        })
        .collect::<Result<_>>()?;
    let eps = [1e-2, 1e-3, 1e-4];
    let (mut worst, mut pairwise) = (f64::INFINITY, f64::INFINITY);
    for f in Functional::ALL {
        let j0 = system.evaluate(mesh, &primal, f)?;
        let adj = lin.adjoint(mesh, system, &primal, f)?;
        let dj: ShapeDerivative = assemble_shape_derivative(mesh, system, &primal, &adj)?;
        for xi in &xis {
            let slope = dj.apply(xi);
            let mut rem = Vec::new();
            for &e in &eps {
                let m = perturbed(mesh, xi, e)?;
                let s = system.solve_with_indicators(
                    &m,
                    primal.chi_hot.clone(),
                    primal.chi_cold.clone(),
                    Some(&primal),
                )?;
                rem.push((system.evaluate(&m, &s, f)? - j0 - e * slope).abs());
            }
            // least-squares slope of log rem against log ε (equally spaced in log)
            worst = worst.min((rem[0] / rem[2]).log10() / 2.0);
            for w in rem.windows(2) {
                pairwise = pairwise.min((w[0] / w[1]).log10());
            }
        }
    }
    Ok((worst >= 1.9, format!(
        "smallest fitted order {worst:.3} (>= 1.9) over J, G1, G2 x 3 fields, smallest pairwise {pairwise:.3}"
    )))
}

fn reinitialization() -> Result<(bool, String)> {
    let mesh = build_structured_mesh(&[64, 64], &[1.0, 1.0])?;
    let phi = Field::scalar(&mesh, |x| {
        2.0 * (((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)).sqrt() - 0.25)
    });
    let r = reinitialize_detailed(&mesh, &phi, &ReinitSettings::default())?;
    let same = interface_cells(&mesh, &phi) == interface_cells(&mesh, &r.phi);
    let g = gradient_norms(&mesh, &r.phi);
    let interior: Vec<usize> = (0..mesh.n_cells())
        .filter(|&c| {
            mesh.cell(c)
                .iter()
                .all(|&v| mesh.point(v).iter().all(|&t| t > 0.05 && t < 0.95))
        })
        .collect();
    let good = interior
        .iter()
        .filter(|&&c| (0.93..=1.07).contains(&g[c]))
        .count() as f64
        / interior.len() as f64;
    Ok((
        same && good >= 0.95 && r.iterations <= 10,
        format!(
            "{:.1}% of interior cells with |grad phi| in [0.93, 1.07] (>= 95%), {} Picard iterations (<= 10), interface {}",
            100.0 * good,
            r.iterations,
            if same { "unchanged" } else { "CHANGED" }
        ),
    ))
}

fn extension() -> Result<(bool, String)> {
    let config = ProblemConfig {
        resolution: vec![16, 16],
        ..ProblemConfig::desk(Configuration::Parallel)
    };
    let mut problem = build_problem(&config)?;
    let phi = problem.initial_phi.clone();
    let primal = problem.solve(&phi)?.clone();
    let lin = Linearization::new(&problem.mesh, &problem.system, &primal)?;
    let adj = lin.adjoint(
        &problem.mesh,
        &problem.system,
        &primal,
        Functional::HeatFlux,
    )?;
    let dj = assemble_shape_derivative(&problem.mesh, &problem.system, &primal, &adj)?;
    let zeta = problem.extension.extend(&dj)?;
    let (b, d) = (problem.inner(&zeta, &zeta), dj.apply(&zeta));
    let galerkin = (b - d).abs() / d.abs().max(f64::MIN_POSITIVE);
    let normal = boundary_normal_ratio(&problem.mesh, &zeta);
    Ok((
        galerkin <= 1e-10 && normal <= 1e-2,
        format!("Galerkin defect {galerkin:.1e} (<= 1e-10), max |zeta.n| / max |zeta| = {normal:.1e} (<= 1e-2)"),
    ))
}

/// `max |ζ·n|` over boundary nodes relative to `max |ζ|`.
pub fn boundary_normal_ratio(mesh: &Mesh, zeta: &Field) -> f64 {
    let dim = mesh.dim();
    let mut worst: f64 = 0.0;
    for f in mesh.facets() {
        let axis = match f.tag {
            SurfaceTag::XMin | SurfaceTag::XMax | SurfaceTag::Port(_) => 0,
            SurfaceTag::YMin | SurfaceTag::YMax => 1,
            SurfaceTag::ZMin | SurfaceTag::ZMax => 2,
        };
        for &v in f.vertices(dim) {
            worst = worst.max(zeta.at(v)[axis].abs());
        }
    }
    let max = zeta.node_norms().into_iter().fold(0.0, f64::max);
    if max == 0.0 {
        0.0
    } else {
        worst / max
    }
}
