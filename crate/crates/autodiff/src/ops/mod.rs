pub mod attention;
pub mod conv;
mod elementwise;
mod linalg;
pub mod nn;
mod reduce;
mod shape;
mod spectral;
