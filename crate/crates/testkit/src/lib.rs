//! Test support: brute-force oracles and seeded generators.

pub mod gen;
pub mod oracle;
