pub mod asymptotics;
pub mod cli;
pub mod config;
pub mod error;
pub mod grid;
pub mod lyapunov;
pub mod noise;
pub mod output;
pub mod projective;
pub mod propagator;
pub mod rng;
pub mod spectral;
pub mod stats;
