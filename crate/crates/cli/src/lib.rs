//! Pipeline orchestration, reporting and the collection service behind the
//! `choicelab` binary.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod server;
