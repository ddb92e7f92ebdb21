mod check;
mod tape;

pub use check::{grad_check, grad_check_coords, relative_error, Coords};
pub use tape::{Ewise, Gradients, Tape, Var};
