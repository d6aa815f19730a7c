//! File formats, reports and the command-line front end for
//! [`bcpnet_core`].

pub mod checkpoint;
pub mod cli;
pub mod io;
pub mod oracle;
pub mod report;
pub mod selftest;

pub use io::{load_image, save_image, IoError};
