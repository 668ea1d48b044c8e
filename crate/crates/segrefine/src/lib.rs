//! IO and file-format companion to `segrefine-core`: Y4M video reading
//! and writing, numbered image sequences, the `.srf` sidecar parameter
//! stream, and the pieces behind the `segrefine` CLI.

pub mod commands;
pub mod config;
pub mod imgseq;
pub mod report;
pub mod sidecar;
pub mod y4m;

pub use y4m::FrameSequence;
