//! Expression-pipeline weights: a TOML manifest declaring dimensions and
//! naming SMWT matrix files, relative to the manifest's directory.
//!
//! An SMWT file is an ASCII line `SMWT v1 rows cols` followed by
//! `rows·cols` little-endian f32 values in row-major order. Biases are
//! stored as `1 × n` matrices.
//!
//! ```toml
//! identity_dim = 8
//!
//! [projection]
//! weight = "projection.smwt"  # 16 × 116
//! bias = "projection_bias.smwt"
//!
//! [[mlp]]
//! weight = "mlp0.smwt"
//! bias = "mlp0_bias.smwt"
//! activation = "silu"
//!
//! [[attention]]
//! name = "generation"
//! d_k = 8
//! w_q = "gen_q.smwt"
//! w_k = "gen_k.smwt"
//! w_v = "gen_v.smwt"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smoj_core::expression::{
    Activation, AttentionSite, ExpressionError, Layer, Matrix, PipelineWeights,
};

#[derive(Debug, thiserror::Error)]
pub enum WeightsError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(#[from] toml::de::Error),
    #[error("manifest: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("{}: {reason}", path.display())]
    Smwt { path: PathBuf, reason: String },
    #[error("{}: expected a {expected} matrix, found {rows}×{cols}", path.display())]
    MatrixShape {
        path: PathBuf,
        expected: String,
        rows: usize,
        cols: usize,
    },
    #[error(transparent)]
    Expression(#[from] ExpressionError),
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ActivationName {
    Identity,
    Silu,
}

impl From<ActivationName> for Activation {
    fn from(a: ActivationName) -> Self {
        match a {
            ActivationName::Identity => Activation::Identity,
            ActivationName::Silu => Activation::Silu,
        }
    }
}

impl From<Activation> for ActivationName {
    fn from(a: Activation) -> Self {
        match a {
            Activation::Identity => ActivationName::Identity,
            Activation::Silu => ActivationName::Silu,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct AffineEntry {
    pub weight: PathBuf,
    pub bias: PathBuf,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct LayerEntry {
    pub weight: PathBuf,
    pub bias: PathBuf,
    pub activation: ActivationName,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct AttentionEntry {
    pub name: String,
    pub d_k: usize,
    pub w_q: PathBuf,
    pub w_k: PathBuf,
    pub w_v: PathBuf,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub identity_dim: usize,
    pub projection: AffineEntry,
    #[serde(default)]
    pub mlp: Vec<LayerEntry>,
    #[serde(default)]
    pub attention: Vec<AttentionEntry>,
}

pub fn encode_smwt(m: &Matrix) -> Vec<u8> {
    let mut out = format!("SMWT v1 {} {}\n", m.rows(), m.cols()).into_bytes();
    out.extend(m.data().iter().flat_map(|v| (*v as f32).to_le_bytes()));
    out
}

pub fn decode_smwt(bytes: &[u8], path: &Path) -> Result<Matrix, WeightsError> {
    let fail = |reason: String| WeightsError::Smwt {
        path: path.into(),
        reason,
    };
    let end = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| fail("missing header line".into()))?;
    let header =
        std::str::from_utf8(&bytes[..end]).map_err(|_| fail("header is not UTF-8".into()))?;
    let (rows, cols) = match header
        .split_ascii_whitespace()
        .collect::<Vec<_>>()
        .as_slice()
    {
        ["SMWT", "v1", r, c] => (
            r.parse::<usize>()
                .map_err(|_| fail(format!("bad row count {r:?}")))?,
            c.parse::<usize>()
                .map_err(|_| fail(format!("bad column count {c:?}")))?,
        ),
        _ => return Err(fail(format!("bad header {header:?}"))),
    };
    let payload = &bytes[end + 1..];
    if payload.len() != 4 * rows * cols {
        return Err(fail(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            4 * rows * cols
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Matrix::from_f32(rows, cols, &data)?)
}

pub fn read_smwt(path: &Path) -> Result<Matrix, WeightsError> {
    let bytes = std::fs::read(path).map_err(|source| WeightsError::Io {
        path: path.into(),
        source,
    })?;
    decode_smwt(&bytes, path)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), WeightsError> {
    std::fs::write(path, bytes).map_err(|source| WeightsError::Io {
        path: path.into(),
        source,
    })
}

fn read_bias(path: &Path) -> Result<Vec<f64>, WeightsError> {
    let m = read_smwt(path)?;
    if m.rows() != 1 {
        return Err(WeightsError::MatrixShape {
            path: path.into(),
            expected: "1 × n".into(),
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    Ok(m.data().to_vec())
}

/// Loads and validates the weights described by the manifest at `path`.
pub fn load_weights(path: impl AsRef<Path>) -> Result<PipelineWeights, WeightsError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| WeightsError::Io {
        path: path.into(),
        source,
    })?;
    let manifest: Manifest = toml::from_str(&text)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let at = |p: &Path| dir.join(p);
    let weights = PipelineWeights {
        projection: read_smwt(&at(&manifest.projection.weight))?,
        projection_bias: read_bias(&at(&manifest.projection.bias))?,
        mlp: manifest
            .mlp
            .iter()
            .map(|l| {
                Ok(Layer {
                    weight: read_smwt(&at(&l.weight))?,
                    bias: read_bias(&at(&l.bias))?,
                    activation: l.activation.into(),
                })
            })
            .collect::<Result<_, WeightsError>>()?,
        identity_dim: manifest.identity_dim,
        attention: manifest
            .attention
            .iter()
            .map(|a| {
                Ok((
                    a.name.clone(),
                    AttentionSite {
                        w_q: read_smwt(&at(&a.w_q))?,
                        w_k: read_smwt(&at(&a.w_k))?,
                        w_v: read_smwt(&at(&a.w_v))?,
                        d_k: a.d_k,
                    },
                ))
            })
            .collect::<Result<_, WeightsError>>()?,
    };
    weights.validate()?;
    Ok(weights)
}

/// Writes `weights` as `manifest.toml` plus one SMWT file per matrix into
/// `dir`, returning the manifest path. Values are stored as f32.
pub fn save_weights(
    weights: &PipelineWeights,
    dir: impl AsRef<Path>,
) -> Result<PathBuf, WeightsError> {
    let dir = dir.as_ref();
    weights.validate()?;
    let put = |name: String, m: &Matrix| -> Result<PathBuf, WeightsError> {
        write_file(&dir.join(&name), &encode_smwt(m))?;
        Ok(PathBuf::from(name))
    };
    let row = |v: &[f64]| Matrix::new(1, v.len(), v.to_vec());
    let manifest = Manifest {
        identity_dim: weights.identity_dim,
        projection: AffineEntry {
            weight: put("projection.smwt".into(), &weights.projection)?,
            bias: put(
                "projection_bias.smwt".into(),
                &row(&weights.projection_bias)?,
            )?,
        },
        mlp: weights
            .mlp
            .iter()
            .enumerate()
            .map(|(i, l)| {
                Ok(LayerEntry {
                    weight: put(format!("mlp{i}.smwt"), &l.weight)?,
                    bias: put(format!("mlp{i}_bias.smwt"), &row(&l.bias)?)?,
                    activation: l.activation.into(),
                })
            })
            .collect::<Result<_, WeightsError>>()?,
        attention: weights
            .attention
            .iter()
            .enumerate()
            .map(|(i, (name, s))| {
                Ok(AttentionEntry {
                    name: name.clone(),
                    d_k: s.d_k,
                    w_q: put(format!("attention{i}_q.smwt"), &s.w_q)?,
                    w_k: put(format!("attention{i}_k.smwt"), &s.w_k)?,
                    w_v: put(format!("attention{i}_v.smwt"), &s.w_v)?,
                })
            })
            .collect::<Result<_, WeightsError>>()?,
    };
    let path = dir.join("manifest.toml");
    write_file(&path, toml::to_string(&manifest)?.as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smwt_round_trip() {
        let m = Matrix::new(2, 3, vec![0.5, -1.0, 2.25, 0.0, 3.0, -0.125]).unwrap();
        let bytes = encode_smwt(&m);
        assert!(bytes.starts_with(b"SMWT v1 2 3\n"));
        assert_eq!(decode_smwt(&bytes, Path::new("m")).unwrap(), m);
        assert!(decode_smwt(&bytes[..bytes.len() - 1], Path::new("m")).is_err());
        assert!(decode_smwt(b"SMWT v2 1 1\n\0\0\0\0", Path::new("m")).is_err());
    }
}
