pub mod autodiff;
pub mod models;
pub mod tasks;
pub mod meta;
pub mod diagnostics;
pub mod selftest;
