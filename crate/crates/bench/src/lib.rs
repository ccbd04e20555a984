//! Shared fixtures for the kernel benchmarks.

use ksm_core::geometry::{build_grid, Field};
use ksm_core::motility::{MotilitySpec, RegularizedMotility};
use ksm_core::stepper::State;
use std::f64::consts::PI;

pub fn state_1d(n: usize) -> State {
    let grid = build_grid(1, &[1.0], &[n]).unwrap();
    let u = Field::from_fn(grid, |x| 1.0 + 0.4 * (PI * x[0]).cos());
    let v = Field::from_fn(grid, |x| 1.0 + 0.2 * (2.0 * PI * x[0]).cos());
    State::initial(u, v, 0.01).unwrap()
}

pub fn state_2d(n: usize) -> State {
    let grid = build_grid(2, &[1.0, 1.0], &[n, n]).unwrap();
    let u = Field::from_fn(grid, |x| 1.0 + 0.4 * (PI * x[0]).cos() * (PI * x[1]).cos());
    let v = Field::from_fn(grid, |x| 1.0 + 0.2 * (PI * x[0]).cos());
    State::initial(u, v, 0.01).unwrap()
}

pub fn motility() -> RegularizedMotility {
    RegularizedMotility::new(&MotilitySpec::power(1.0, 1.0).unwrap(), 0.01).unwrap()
}
