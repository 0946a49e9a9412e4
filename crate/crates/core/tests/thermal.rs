use hxtopo::flow::{solve_flow, FlowParams};
use hxtopo::mesh_fem::{build_structured_mesh, Field, Mesh, SurfaceTag};
use hxtopo::thermal::{solve_temperature, ThermalParams};

fn exact(x: f64, pe: f64) -> f64 {
    ((pe * x).exp() - 1.0) / (pe.exp() - 1.0)
}

fn strip_error(nx: usize) -> f64 {
    let mesh = build_structured_mesh(&[nx, 2], &[1.0, 0.05]).unwrap();
    let u = Field::interpolate(&mesh, 2, |_| vec![1.0, 0.0]);
    let params = ThermalParams::new(10.0, SurfaceTag::XMin, SurfaceTag::XMax);
    let t = solve_temperature(&mesh, &u, &params).unwrap().temperature;
    (0..mesh.n_nodes())
        .map(|v| (t.values()[v] - exact(mesh.point(v)[0], 10.0)).abs())
        .fold(0.0, f64::max)
}

#[test]
fn pure_diffusion_is_linear() {
    let mesh = build_structured_mesh(&[7, 5], &[1.0, 1.0]).unwrap();
    let u = Field::zeros(mesh.n_nodes(), 2);
    let params = ThermalParams::new(5000.0, SurfaceTag::XMin, SurfaceTag::XMax);
    let t = solve_temperature(&mesh, &u, &params).unwrap().temperature;
    for v in 0..mesh.n_nodes() {
        assert!((t.values()[v] - mesh.point(v)[0]).abs() < 1e-8);
    }
}

#[test]
fn advection_diffusion_matches_exponential_layer() {
    let err = strip_error(200);
    assert!(err <= 0.01, "sup error {err}");
}

#[test]
fn refinement_reduces_error() {
    let e: Vec<f64> = [25, 50, 100].iter().map(|&n| strip_error(n)).collect();
    assert!(e[1] < e[0] && e[2] < e[1], "{e:?}");
}

fn two_stream_problem() -> (Mesh, Field, ThermalParams) {
    // cold fluid enters left-bottom, hot fluid right-top, counterflow
    let mut mesh = build_structured_mesh(&[24, 24], &[1.0, 1.0]).unwrap();
    mesh.retag(|f, c| match (f.tag, c[1] < 0.5) {
        (SurfaceTag::XMin, true) => SurfaceTag::Port(1),
        (SurfaceTag::XMax, true) => SurfaceTag::Port(2),
        (SurfaceTag::XMax, false) => SurfaceTag::Port(3),
        (SurfaceTag::XMin, false) => SurfaceTag::Port(4),
        (t, _) => t,
    });
    let hot = Field::scalar(&mesh, |x| if x[1] >= 0.5 { 1.0 } else { 0.0 });
    let cold = Field::scalar(&mesh, |x| if x[1] >= 0.5 { 0.0 } else { 1.0 });
    let mut pc = FlowParams::new(10.0, 1e-5, SurfaceTag::Port(1), SurfaceTag::Port(2));
    pc.v_max = 1.0;
    let mut ph = FlowParams::new(10.0, 1e-5, SurfaceTag::Port(3), SurfaceTag::Port(4));
    ph.v_max = 1.0;
    let uc = solve_flow(&mesh, &hot, &pc).unwrap().velocity;
    let uh = solve_flow(&mesh, &cold, &ph).unwrap().velocity;
    let u = uc.add(&uh).unwrap();
    (
        mesh,
        u,
        ThermalParams::new(1000.0, SurfaceTag::Port(1), SurfaceTag::Port(3)),
    )
}

#[test]
fn overshoot_stays_within_budget() {
    let (mesh, u, params) = two_stream_problem();
    let t = solve_temperature(&mesh, &u, &params).unwrap().temperature;
    let (lo, hi) = t
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    assert!(lo >= -0.02 && hi <= 1.02, "range [{lo}, {hi}]");
}
