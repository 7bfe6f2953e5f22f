//! Configuration, file formats, parallel drivers and the command line for
//! `fascicle-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod commands;
pub mod config;
pub mod manifest;
pub mod output;
pub mod parallel;
