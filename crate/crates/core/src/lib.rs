//! Multi-server secure aggregation with colluding users.
//!
//! Users are split across `U` servers, `V` per server. Each user masks its input with an
//! individual key derived linearly from a shared source key; servers exchange partial sums so
//! that every server recovers the total while learning nothing else, even when up to `T` users
//! reveal their inputs and keys to it.

pub mod assurance;
pub mod cli;
pub mod collusion;
pub mod entropy;
pub mod field;
pub mod keyplan;
pub mod oracle;
pub mod params;
pub mod protocol;
pub mod rng;

pub use collusion::ColludingSet;
pub use field::{FieldMatrix, PrimeField};
pub use keyplan::{generate_table, validate_table, CoefficientTable};
pub use params::{SystemParams, UserId};
