pub mod attacks;
pub mod catmap;
pub mod corpus;
pub mod harness;
pub mod isa;
pub mod transform;
pub mod vm;
