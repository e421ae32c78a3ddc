pub mod algebra;
pub mod bench;
pub mod bpsm;
pub mod counters;
pub mod curve;
pub mod escrow;
mod fast;
pub mod harness;
pub mod pairing;
pub mod params;
pub mod sm;
