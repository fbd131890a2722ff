pub mod asymptotics;
pub mod error;
pub mod field;
pub mod io;
pub mod linalg;
pub mod newton;
pub mod operator;
pub mod quasilattice;
pub mod ring;
