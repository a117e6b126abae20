//! Reading and writing SMOJ asset files.

use std::path::{Path, PathBuf};

use smoj_core::codec::{self, DecodeError, EncodeError};
use smoj_core::{validate_asset, AvatarAsset, Violation};

#[derive(Debug, thiserror::Error)]
pub enum AssetIoError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Parse { path: PathBuf, source: DecodeError },
    #[error("{}: asset fails validation ({} violation(s))", path.display(), report.len())]
    Invalid {
        path: PathBuf,
        report: Vec<Violation>,
    },
    #[error("{}: {source}", path.display())]
    Encode { path: PathBuf, source: EncodeError },
}

/// Validates and writes `asset`, returning the file size in bytes. Invalid
/// assets are refused before anything is written.
pub fn save_asset(asset: &AvatarAsset, path: impl AsRef<Path>) -> Result<usize, AssetIoError> {
    let path = path.as_ref();
    let bytes = codec::encode(asset).map_err(|source| match source {
        EncodeError::Invalid(report) => AssetIoError::Invalid {
            path: path.into(),
            report,
        },
        source => AssetIoError::Encode {
            path: path.into(),
            source,
        },
    })?;
    std::fs::write(path, &bytes).map_err(|source| AssetIoError::Io {
        path: path.into(),
        source,
    })?;
    Ok(bytes.len())
}

/// Parses an asset file without checking value ranges.
pub fn read_asset(path: impl AsRef<Path>) -> Result<AvatarAsset, AssetIoError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| AssetIoError::Io {
        path: path.into(),
        source,
    })?;
    codec::decode(&bytes).map_err(|source| AssetIoError::Parse {
        path: path.into(),
        source,
    })
}

/// Parses and validates an asset file.
pub fn load_asset(path: impl AsRef<Path>) -> Result<AvatarAsset, AssetIoError> {
    let path = path.as_ref();
    let asset = read_asset(path)?;
    let report = validate_asset(&asset);
    if report.is_empty() {
        Ok(asset)
    } else {
        Err(AssetIoError::Invalid {
            path: path.into(),
            report,
        })
    }
}
