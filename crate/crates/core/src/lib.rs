//! Simulator of an amplitude-modulated nonlinear magneto-optical rotation
//! magnetometer probed with coherent or polarization-squeezed light.
//!
//! The pipeline runs spin dynamics ([`spin`]) into a polarization-rotation
//! signal, adds probe noise ([`noise`]), detects it with software lock-in and
//! spectrum-analyzer emulations ([`dsp`]) and turns the result into a
//! magnetic sensitivity ([`sensitivity`]). [`scenario`] drives complete runs
//! from an [`config::ExperimentConfig`].

pub mod config;
pub mod dsp;
pub mod noise;
pub mod physics;
pub mod scenario;
pub mod sensitivity;
pub mod spin;
