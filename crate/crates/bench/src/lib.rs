//! Shared fixtures for the criterion benchmarks.

use thintube_core::cross_section::CrossSectionDomain;
use thintube_core::geometry::{Interval, ScalarFunction, TubeGeometry};

/// Curved, twisted, deformed catalog tube used across the benches.
pub fn catalog_geometry() -> TubeGeometry {
    TubeGeometry::new(
        Interval::bounded(-1.0, 1.0).unwrap(),
        ScalarFunction::poly(vec![0.45, 0.0, -0.45]),
        ScalarFunction::constant(0.0),
        ScalarFunction::poly(vec![0.0, 0.5]),
        ScalarFunction::parabola_cap(2.0),
        None,
    )
    .unwrap()
}

pub fn disk_section() -> CrossSectionDomain {
    CrossSectionDomain::unit_disk()
}
