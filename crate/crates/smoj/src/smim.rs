//! Raw float image dumps: an ASCII header line `SMIM v1 H W C` followed by
//! `H·W·C` little-endian f32 values, row-major with interleaved channels.

use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

#[derive(Debug, thiserror::Error)]
pub enum SmimError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad SMIM header: {0}")]
    Header(String),
    #[error("payload has {found} bytes, expected {expected}")]
    Length { expected: usize, found: usize },
    #[error("buffer has {found} values, expected {expected}")]
    Shape { expected: usize, found: usize },
}

impl RawImage {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self, SmimError> {
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(SmimError::Shape {
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = format!("SMIM v1 {} {} {}\n", self.height, self.width, self.channels);
        let mut out = Vec::with_capacity(header.len() + 4 * self.data.len());
        out.extend_from_slice(header.as_bytes());
        out.extend(self.data.iter().flat_map(|v| v.to_le_bytes()));
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, SmimError> {
        let end = bytes
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| SmimError::Header("missing header line".into()))?;
        let header = std::str::from_utf8(&bytes[..end])
            .map_err(|_| SmimError::Header("header is not UTF-8".into()))?;
        let fields: Vec<&str> = header.split_ascii_whitespace().collect();
        let dims: Vec<usize> = match fields.as_slice() {
            ["SMIM", "v1", rest @ ..] if rest.len() == 3 => rest
                .iter()
                .map(|f| {
                    f.parse()
                        .map_err(|_| SmimError::Header(format!("bad dimension {f:?}")))
                })
                .collect::<Result<_, _>>()?,
            _ => return Err(SmimError::Header(format!("{header:?}"))),
        };
        let payload = &bytes[end + 1..];
        let count = dims[0] * dims[1] * dims[2];
        if payload.len() != 4 * count {
            return Err(SmimError::Length {
                expected: 4 * count,
                found: payload.len(),
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(dims[0], dims[1], dims[2], data)
    }
}

pub fn write_smim(path: impl AsRef<Path>, image: &RawImage) -> Result<(), SmimError> {
    Ok(std::fs::write(path, image.encode())?)
}

pub fn read_smim(path: impl AsRef<Path>) -> Result<RawImage, SmimError> {
    RawImage::decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let img =
            RawImage::new(2, 3, 1, vec![0.0, -0.0, 1.5, f32::MIN_POSITIVE, 7.25, -3.0]).unwrap();
        let bytes = img.encode();
        assert!(bytes.starts_with(b"SMIM v1 2 3 1\n"));
        let back = RawImage::decode(&bytes).unwrap();
        assert_eq!(
            back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            img.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn malformed_input_is_rejected() {
        assert!(RawImage::decode(b"SMIM v2 1 1 1\n\0\0\0\0").is_err());
        assert!(RawImage::decode(b"SMIM v1 1 1 1\n\0\0\0").is_err());
        assert!(RawImage::decode(b"no header").is_err());
        assert!(RawImage::new(2, 2, 3, vec![0.0; 11]).is_err());
    }
}
