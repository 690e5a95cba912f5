//! Exact symbolic and numerical tools for deformations of bihamiltonian
//! structures of hydrodynamic type and their reducing transformations.

// Index loops over small dense matrices read better than iterator chains here.
#![allow(clippy::needless_range_loop, clippy::type_complexity)]

pub mod catalog;
pub mod diffop;
pub mod expr;
pub mod hodograph;
pub mod io;
pub mod jet;
pub mod lame;
pub mod linsolve;
pub mod localgeom;
pub mod miura;
pub mod pencil;
