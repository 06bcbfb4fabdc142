pub mod exec;
pub mod features;
pub mod graphio;
pub mod net;
pub mod numcore;
pub mod pipeline;
pub mod seed;
pub mod synthgen;

pub use exec::Exec;
