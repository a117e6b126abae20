//! File formats, services and the command-line front end around
//! [`smoj_core`].

pub mod asset_io;
pub mod bench;
pub mod cameras;
pub mod cli;
pub mod config;
pub mod exec;
pub mod image;
pub mod serve;
pub mod smim;
pub mod stylizer;
pub mod synth;
pub mod timeline;
pub mod weights;

pub use asset_io::{load_asset, read_asset, save_asset, AssetIoError};
pub use exec::RayonExecutor;
