pub mod attention;
pub mod cli;
pub mod colormap;
pub mod coordembed;
pub mod datapipe;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod posealign;
pub mod selftest;
pub mod synthoracle;
pub mod warpcore;

pub use error::{Error, Result};
