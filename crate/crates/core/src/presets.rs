//! Ready-made example systems used by the docs, tests, and benches.

use nalgebra::{dmatrix, DMatrix};

use crate::estimation::ProcessModel;
use crate::mdp::SystemConfig;

/// Scalar unstable sensor: `x[k+1] = 1.4 x[k] + w`, unit noise everywhere,
/// packet length 3.
pub fn scalar_sensor() -> ProcessModel {
    ProcessModel::new(
        dmatrix![1.4],
        dmatrix![1.0],
        dmatrix![1.0],
        dmatrix![1.0],
        dmatrix![1.0],
        3,
    )
    .expect("scalar example model is valid")
}

/// Planar sensor with one unstable mode (1.2) coupled to an integrator,
/// observed in its first coordinate only; packet length 4.
pub fn planar_sensor() -> ProcessModel {
    ProcessModel::new(
        dmatrix![1.2, 1.0; 0.0, 1.0],
        dmatrix![1.0, 0.0],
        DMatrix::identity(2, 2),
        dmatrix![1.0],
        DMatrix::identity(2, 2),
        4,
    )
    .expect("planar example model is valid")
}

/// The two-sensor benchmark system: the scalar and planar sensors share a
/// channel that fits one packet per step.
pub fn two_sensor_config(tau_max: u32) -> SystemConfig {
    SystemConfig::new(vec![scalar_sensor(), planar_sensor()], 1, tau_max)
        .expect("two-sensor example config is valid")
}

/// Two identical copies of the scalar sensor, each with packet length 1.
/// By symmetry the optimal schedule strictly alternates.
pub fn identical_pair_config(tau_max: u32) -> SystemConfig {
    let mut sensor = scalar_sensor();
    sensor.d = 1;
    SystemConfig::new(vec![sensor.clone(), sensor], 1, tau_max)
        .expect("identical-pair example config is valid")
}
