#![allow(dead_code)]

mod invariants;
mod oracles;

#[allow(unused_imports)]
pub use invariants::*;
#[allow(unused_imports)]
pub use oracles::*;
