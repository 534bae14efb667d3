pub mod gradcases;
pub mod oracles;
