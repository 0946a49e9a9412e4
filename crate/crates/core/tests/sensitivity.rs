use hxtopo::flow::FlowParams;
use hxtopo::mesh_fem::{build_structured_mesh, Field, Mesh, SurfaceTag};
use hxtopo::sensitivity::{
    assemble_shape_derivative, CoupledSystem, ExtensionSettings, Functional, HilbertianExtension,
    Linearization, PrimalState, ShapeDerivative,
};
use hxtopo::thermal::ThermalParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn two_stream(n: usize) -> (Mesh, CoupledSystem, Field) {
    let mut mesh = build_structured_mesh(&[n, n], &[1.0, 1.0]).unwrap();
    mesh.retag(|f, c| match (f.tag, c[1] < 0.5) {
        (SurfaceTag::XMin, true) => SurfaceTag::Port(1),
        (SurfaceTag::XMax, true) => SurfaceTag::Port(2),
        (SurfaceTag::XMax, false) => SurfaceTag::Port(3),
        (SurfaceTag::XMin, false) => SurfaceTag::Port(4),
        (t, _) => t,
    });
    let flow = |inlet, outlet| {
        let mut p = FlowParams::new(10.0, 1e-3, inlet, outlet);
        p.v_max = 1.0;
        p.newton.abs_tol = 1e-12;
        p.newton.rel_tol = 1e-14;
        p
    };
    let system = CoupledSystem::new(
        &mesh,
        flow(SurfaceTag::Port(1), SurfaceTag::Port(2)),
        flow(SurfaceTag::Port(3), SurfaceTag::Port(4)),
        ThermalParams::new(50.0, SurfaceTag::Port(1), SurfaceTag::Port(3)),
    )
    .unwrap();
    // wavy interface between the streams
    let phi = Field::scalar(&mesh, |x| {
        x[1] - 0.5 - 0.1 * (2.0 * std::f64::consts::PI * x[0]).sin()
    });
    (mesh, system, phi)
}

fn perturbed(mesh: &Mesh, xi: &Field, eps: f64) -> Mesh {
    let coords: Vec<f64> = mesh
        .coords()
        .iter()
        .zip(xi.values())
        .map(|(x, d)| x + eps * d)
        .collect();
    mesh.with_coords(coords).unwrap()
}

fn random_field(mesh: &Mesh, rng: &mut ChaCha8Rng) -> Field {
    let values = (0..mesh.n_nodes() * 2)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    Field::from_values(2, values).unwrap()
}

fn derivative(
    mesh: &Mesh,
    system: &CoupledSystem,
    primal: &PrimalState,
    f: Functional,
) -> ShapeDerivative {
    let lin = Linearization::new(mesh, system, primal).unwrap();
    let adj = lin.adjoint(mesh, system, primal, f).unwrap();
    assemble_shape_derivative(mesh, system, primal, &adj).unwrap()
}

#[test]
fn taylor_remainders_are_second_order() {
    let (mesh, system, phi) = two_stream(8);
    let primal = system.solve(&mesh, &phi, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let xis: Vec<Field> = (0..3).map(|_| random_field(&mesh, &mut rng)).collect();
    for f in Functional::ALL {
        let j0 = system.evaluate(&mesh, &primal, f).unwrap();
        let dj = derivative(&mesh, &system, &primal, f);
        for xi in &xis {
            let slope = dj.apply(xi);
            let rem: Vec<f64> = [1e-2, 1e-3]
                .iter()
                .map(|&eps| {
                    let m = perturbed(&mesh, xi, eps);
                    let s = system
                        .solve_with_indicators(
                            &m,
                            primal.chi_hot.clone(),
                            primal.chi_cold.clone(),
                            Some(&primal),
                        )
                        .unwrap();
                    (system.evaluate(&m, &s, f).unwrap() - j0 - eps * slope).abs()
                })
                .collect();
            let order = (rem[0] / rem[1]).log10();
            assert!(
                order >= 1.9,
                "{f:?}: remainders {rem:?}, slope {slope}, order {order}"
            );
        }
    }
}

#[test]
fn cold_pressure_drop_has_no_hot_adjoint() {
    let (mesh, system, phi) = two_stream(8);
    let primal = system.solve(&mesh, &phi, None).unwrap();
    let lin = Linearization::new(&mesh, &system, &primal).unwrap();
    let adj = lin
        .adjoint(&mesh, &system, &primal, Functional::ColdPressureDrop)
        .unwrap();
    assert!(adj.hot.iter().all(|v| *v == 0.0));
    assert!(adj.thermal.iter().all(|v| *v == 0.0));
    assert!(adj.cold.iter().any(|v| *v != 0.0));
}

#[test]
fn extension_satisfies_galerkin_identity_and_slips() {
    let (mesh, system, phi) = two_stream(8);
    let primal = system.solve(&mesh, &phi, None).unwrap();
    let dj = derivative(&mesh, &system, &primal, Functional::HeatFlux);
    let ext = HilbertianExtension::new(&mesh, &ExtensionSettings::default()).unwrap();
    let zeta = ext.extend(&dj).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..3 {
        let xi = random_field(&mesh, &mut rng);
        let (lhs, rhs) = (ext.inner(&zeta, &xi), dj.apply(&xi));
        assert!(
            (lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1.0),
            "{lhs} vs {rhs}"
        );
    }
    // normal component on the boundary is penalized away
    let zmax = zeta.max_abs();
    for f in mesh.facets() {
        let k = match f.tag {
            SurfaceTag::YMin | SurfaceTag::YMax => 1,
            _ => 0,
        };
        for &v in f.vertices(2) {
            assert!(zeta.at(v)[k].abs() <= 1e-2 * zmax);
        }
    }
}

#[test]
fn extension_is_linear_and_smoother_for_larger_gamma() {
    let (mesh, system, phi) = two_stream(8);
    let primal = system.solve(&mesh, &phi, None).unwrap();
    let a = derivative(&mesh, &system, &primal, Functional::HeatFlux);
    let b = derivative(&mesh, &system, &primal, Functional::ColdPressureDrop);
    let ext = HilbertianExtension::new(&mesh, &ExtensionSettings::default()).unwrap();
    let combo = ShapeDerivative {
        coefficients: Field::from_values(
            2,
            a.coefficients
                .values()
                .iter()
                .zip(b.coefficients.values())
                .map(|(x, y)| 2.0 * x - 0.5 * y)
                .collect(),
        )
        .unwrap(),
    };
    let (za, zb, zc) = (
        ext.extend(&a).unwrap(),
        ext.extend(&b).unwrap(),
        ext.extend(&combo).unwrap(),
    );
    let scale = zc.max_abs();
    for i in 0..zc.values().len() {
        let expect = 2.0 * za.values()[i] - 0.5 * zb.values()[i];
        assert!((zc.values()[i] - expect).abs() <= 1e-10 * scale);
    }
    // Dirichlet-to-L² energy ratio of the extension drops as gamma grows
    let mass = HilbertianExtension::new(
        &mesh,
        &ExtensionSettings {
            gamma: 1e-12,
            c1: 0.0,
        },
    )
    .unwrap();
    let unit = HilbertianExtension::new(
        &mesh,
        &ExtensionSettings {
            gamma: 1.0,
            c1: 0.0,
        },
    )
    .unwrap();
    let stiffness_ratio = |gamma: f64| {
        let z = HilbertianExtension::new(&mesh, &ExtensionSettings { gamma, c1: 1e4 })
            .unwrap()
            .extend(&a)
            .unwrap();
        let l2 = mass.inner(&z, &z);
        (unit.inner(&z, &z) - l2) / l2
    };
    assert!(stiffness_ratio(4.0) < stiffness_ratio(0.04));
}
