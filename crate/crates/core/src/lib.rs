pub mod tensorcore;
pub mod nets;
pub mod synthlang;
pub mod evalkit;
pub mod pipeline;
pub mod experiment;
