//! Support library for the `mfseg` binary: file formats, structured text
//! records, and the shared run pipelines the subcommands and the
//! acceptance suite both drive.

pub mod io;
pub mod report;
pub mod run;
