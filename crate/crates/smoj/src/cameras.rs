//! Camera list files: one camera per line holding the 16 row-major
//! world-to-camera matrix entries, `fx fy cx cy`, then `width height`, all
//! space-separated. Blank lines and lines starting with `#` are skipped.

use std::fmt::Write as _;
use std::path::Path;

use smoj_core::camera::CameraError;
use smoj_core::Camera;

#[derive(Debug, thiserror::Error)]
pub enum CameraFileError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected 22 values, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: cannot parse {value:?}")]
    Number { line: usize, value: String },
    #[error("line {line}: {source}")]
    Camera { line: usize, source: CameraError },
}

/// Formats cameras so that parsing gives back bit-identical values.
pub fn format_cameras(cams: &[Camera]) -> String {
    let mut out = String::from("# extrinsic[16] fx fy cx cy width height\n");
    for cam in cams {
        let values = cam
            .extrinsic_matrix()
            .into_iter()
            .chain([cam.fx, cam.fy, cam.cx, cam.cy]);
        for v in values {
            write!(out, "{v:?} ").unwrap();
        }
        writeln!(out, "{} {}", cam.width, cam.height).unwrap();
    }
    out
}

pub fn parse_cameras(text: &str) -> Result<Vec<Camera>, CameraFileError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !(l.trim().is_empty() || l.trim_start().starts_with('#')))
        .map(|(i, l)| {
            let line = i + 1;
            let fields: Vec<&str> = l.split_ascii_whitespace().collect();
            if fields.len() != 22 {
                return Err(CameraFileError::FieldCount {
                    line,
                    found: fields.len(),
                });
            }
            let number = |s: &str| {
                s.parse::<f64>().map_err(|_| CameraFileError::Number {
                    line,
                    value: s.into(),
                })
            };
            let size = |s: &str| {
                s.parse::<u32>().map_err(|_| CameraFileError::Number {
                    line,
                    value: s.into(),
                })
            };
            let mut extrinsic = [0.0; 16];
            for (e, f) in extrinsic.iter_mut().zip(&fields[..16]) {
                *e = number(f)?;
            }
            let mut intrinsic = [0.0; 4];
            for (e, f) in intrinsic.iter_mut().zip(&fields[16..20]) {
                *e = number(f)?;
            }
            Camera::from_matrix(&extrinsic, intrinsic, size(fields[20])?, size(fields[21])?)
                .map_err(|source| CameraFileError::Camera { line, source })
        })
        .collect()
}

pub fn write_cameras(path: impl AsRef<Path>, cams: &[Camera]) -> Result<(), CameraFileError> {
    Ok(std::fs::write(path, format_cameras(cams))?)
}

pub fn read_cameras(path: impl AsRef<Path>) -> Result<Vec<Camera>, CameraFileError> {
    parse_cameras(&std::fs::read_to_string(path)?)
}
