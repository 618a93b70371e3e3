pub mod demix;
pub mod demo;
pub mod eval_cmd;
pub mod gen;
pub mod mix;
pub mod sweep;

mod data;
