use std::path::Path;

use hxtopo::hx_app::{
    build_problem, cost_functional, export_fields, pressure_drop, read_vtk, BufferZone,
    Configuration, HistoryWriter, ProblemConfig, HISTORY_HEADER,
};
use hxtopo::mesh_fem::{build_structured_mesh, Field, SurfaceTag};
use hxtopo::optimizer::{DesignProblem, IterationRecord};
use hxtopo::sensitivity::Functional;
use hxtopo::thermal::ThermalState;

fn small(kind: Configuration) -> ProblemConfig {
    ProblemConfig {
        resolution: vec![16, 16],
        ..ProblemConfig::desk(kind)
    }
}

#[test]
fn cost_functional_of_unit_temperature_is_the_outflow() {
    let mesh = build_structured_mesh(&[4, 4], &[1.0, 1.0]).unwrap();
    let t = ThermalState {
        temperature: Field::scalar(&mesh, |_| 1.0),
    };
    let u = Field::interpolate(&mesh, 2, |_| vec![1.0, 0.0]);
    let j = cost_functional(&mesh, &t, &u, SurfaceTag::XMax).unwrap();
    assert!((j - 1.0).abs() < 1e-14, "{j}");
    // inflow counts negatively
    let j = cost_functional(&mesh, &t, &u, SurfaceTag::XMin).unwrap();
    assert!((j + 1.0).abs() < 1e-14, "{j}");
}

#[test]
fn cost_functional_of_linear_fields_is_exact() {
    let mesh = build_structured_mesh(&[3, 5], &[1.0, 1.0]).unwrap();
    let t = ThermalState {
        temperature: Field::scalar(&mesh, |x| x[1]),
    };
    let u = Field::interpolate(&mesh, 2, |x| vec![x[1], 0.0]);
    let j = cost_functional(&mesh, &t, &u, SurfaceTag::XMax).unwrap();
    assert!((j - 1.0 / 3.0).abs() < 1e-14, "{j}");
}

#[test]
fn pressure_drop_examples() {
    let mesh = build_structured_mesh(&[8, 4], &[2.0, 1.0]).unwrap();
    let p = Field::scalar(&mesh, |x| 3.0 - x[0]);
    let g = pressure_drop(&mesh, &p, SurfaceTag::XMin, SurfaceTag::XMax).unwrap();
    assert!((g - 2.0).abs() < 1e-14, "{g}");
    let flat = Field::scalar(&mesh, |_| 7.0);
    assert!(
        pressure_drop(&mesh, &flat, SurfaceTag::XMin, SurfaceTag::XMax)
            .unwrap()
            .abs()
            < 1e-14
    );
    assert!(pressure_drop(&mesh, &p, SurfaceTag::Port(9), SurfaceTag::XMax).is_err());
}

#[test]
fn ports_follow_the_role_table() {
    for kind in Configuration::ALL {
        let problem = build_problem(&small(kind)).unwrap();
        let r = problem.roles;
        let tags = [r.cold_in, r.hot_in, r.cold_out, r.hot_out];
        let ports: Vec<u8> = tags
            .iter()
            .map(|t| match t {
                SurfaceTag::Port(k) => *k,
                other => panic!("{other:?}"),
            })
            .collect();
        assert_eq!(ports, kind.roles());
        assert_eq!(problem.system.cold.inlet, r.cold_in);
        assert_eq!(problem.system.hot.outlet, r.hot_out);
        // ports 1, 2 on the left, 3, 4 on the right
        for k in 1..=4u8 {
            let nodes = problem.mesh.tagged_nodes(SurfaceTag::Port(k));
            assert!(!nodes.is_empty());
            let (lo, _) = problem.mesh.bounding_box();
            for v in nodes {
                let x = problem.mesh.point(v)[0];
                assert_eq!((x - lo[0]).abs() < 1e-12, k <= 2, "port {k} at x = {x}");
            }
        }
    }
}

#[test]
fn buffer_channels_carry_fixed_signs() {
    let problem = build_problem(&small(Configuration::Counter)).unwrap();
    let phi = problem.initial_phi.values();
    let mut seen = [false; 3];
    for &(v, zone) in &problem.buffers {
        match zone {
            BufferZone::Cold => {
                assert!(phi[v] < 0.0);
                seen[0] = true;
            }
            BufferZone::Hot => {
                assert!(phi[v] > 0.0);
                seen[1] = true;
            }
            BufferZone::Solid => seen[2] = true,
        }
        let x = problem.mesh.point(v)[0];
        assert!(!(0.0..=1.0).contains(&x) || x.abs() < 1e-12 || (x - 1.0).abs() < 1e-12);
    }
    assert_eq!(seen, [true; 3]);
    // advection cannot move the fixed channels
    let scrambled = Field::scalar(&problem.mesh, |x| x[0] - 0.5);
    let restored = problem.restore_buffers(scrambled);
    for &(v, zone) in &problem.buffers {
        if zone != BufferZone::Solid {
            assert_eq!(restored.values()[v], phi[v]);
        }
    }
}

#[test]
fn problem_functionals_match_the_coupled_system() {
    let mut problem = build_problem(&small(Configuration::Parallel)).unwrap();
    let phi = problem.initial_phi.clone();
    let e = problem.evaluate(&phi).unwrap();
    let primal = problem.solve(&phi).unwrap().clone();
    let fs = [
        Functional::HeatFlux,
        Functional::ColdPressureDrop,
        Functional::HotPressureDrop,
    ];
    let expected = [e.j, e.g[0], e.g[1]];
    for (f, want) in fs.into_iter().zip(expected) {
        let got = problem.system.evaluate(&problem.mesh, &primal, f).unwrap();
        assert!(
            (got - want).abs() <= 1e-12 * want.abs().max(1.0),
            "{f:?}: {got} vs {want}"
        );
    }
    assert!(e.g.iter().all(|g| *g > 0.0), "{:?}", e.g);
    let leak = problem.non_mixing_leakage(&primal);
    assert!((0.0..=1.0).contains(&leak));
}

#[test]
fn vtk_export_round_trips_and_is_deterministic() {
    let mut problem = build_problem(&small(Configuration::UFlow)).unwrap();
    let phi = problem.initial_phi.clone();
    let primal = problem.solve(&phi).unwrap().clone();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.vtk"), dir.path().join("b.vtk"));
    export_fields(&problem.mesh, &phi, &primal, &a).unwrap();
    export_fields(&problem.mesh, &phi, &primal, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let data = read_vtk(&a).unwrap();
    assert_eq!(data.n_points, problem.mesh.n_nodes());
    assert_eq!(data.n_cells, problem.mesh.n_cells());
    for name in ["phi", "chi_H", "p_C", "p_H", "T", "u_C", "u_H", "u"] {
        assert!(data.field(name).is_some(), "{name} missing");
    }
    assert!(data
        .field("chi_H")
        .unwrap()
        .iter()
        .all(|&c| c == 0.0 || c == 1.0));
    for (x, y) in data.field("phi").unwrap().iter().zip(phi.values()) {
        assert!((x - y).abs() <= 1e-15 * y.abs().max(1.0));
    }
    let t = data.field("T").unwrap();
    assert!(t.iter().all(|v| v.is_finite()));
    assert!(read_vtk(Path::new("/nonexistent/file.vtk")).is_err());
}

#[test]
fn history_rows_follow_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("history.csv");
    let mut w = HistoryWriter::create(&path).unwrap();
    let record = IterationRecord {
        iter: 1,
        j: 0.5,
        g: vec![1.5, 2.5],
        merit: -0.5,
        trial_merit: -0.6,
        t_hat: 0.05,
        theta_max: 0.25,
        theta_norm: 1.0,
        tau: 0.0125,
        reinit: true,
        da: 1e-5,
        accepted: true,
    };
    w.append(&record).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], HISTORY_HEADER);
    assert_eq!(lines[1], "1,0.5,1.5,2.5,-0.5,0.05,0.25,0.0125,1,0.00001");
    assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
}
