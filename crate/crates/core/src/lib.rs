pub mod curve;
pub mod error;
pub mod numerics;
pub mod spread_model;
pub mod ctd_engine;
pub mod montecarlo;
pub mod instruments;
pub mod sensitivity;
pub mod hedging;
