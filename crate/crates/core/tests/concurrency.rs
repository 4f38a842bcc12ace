//! Concurrent invocation on distinct inputs must be safe and agree with
//! sequential results (all operations are pure given their inputs).

use thintube_core::cross_section::{solve_modes, CrossSectionDomain};
use thintube_core::effective1d::{
    assemble_t, c_constant, scaled_spectrum, BoundaryCondition,
};
use thintube_core::geometry::{Interval, ScalarFunction, TubeGeometry};

#[test]
fn concurrent_solves_match_sequential() {
    let geometry = TubeGeometry::new(
        Interval::bounded(-1.0, 1.0).unwrap(),
        ScalarFunction::poly(vec![0.3, 0.0, -0.3]),
        ScalarFunction::constant(0.0),
        ScalarFunction::poly(vec![0.0, 0.5]),
        ScalarFunction::parabola_cap(2.0),
        None,
    )
    .unwrap();
    let modes = solve_modes(&CrossSectionDomain::unit_disk(), 32).unwrap();
    let consts = modes.constants();
    let c = c_constant(&geometry, &consts, (-1.0, 1.0), 1024);

    let eps_list = [0.1, 0.05, 0.025, 0.0125];
    let solve = |eps: f64| {
        let op = assemble_t(
            &geometry,
            &consts,
            modes.lambda0,
            eps,
            (-1.0, 1.0),
            BoundaryCondition::Dirichlet,
            c,
            Some(300),
        )
        .unwrap();
        scaled_spectrum(&op, 1).unwrap()
    };

    let sequential: Vec<Vec<f64>> = eps_list.iter().map(|&e| solve(e)).collect();
    let concurrent: Vec<Vec<f64>> = std::thread::scope(|scope| {
        let handles: Vec<_> = eps_list.iter().map(|&e| scope.spawn(move || solve(e))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(sequential, concurrent);
}
