//! SMOJ binary asset encoding.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "SMOJ" | version u32 | M u32 | K u32 | flags u32
//! K × (name length u16 | UTF-8 name bytes)
//! for rest, then each component:
//!     positions f32×3M | scales f32×3M | orientations f32×4M | colors f32×3M | opacities f32×M
//! CRC32 (IEEE) of the payload section, u32
//! ```
//!
//! With flag bit 0 set, component payloads hold `θ_i − θ_rest` instead of
//! full sets. Asset metadata is not part of the format.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::asset::{validate_asset, AvatarAsset, Violation};
use crate::gaussian::{Gaussian, GaussianSet};

pub const MAGIC: [u8; 4] = *b"SMOJ";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;
pub const FLAG_DELTA_COMPONENTS: u32 = 1;
/// Scalars stored per splat.
pub const FLOATS_PER_SPLAT: usize = 14;

const ARRAYS: [(&str, usize); 5] = [
    ("positions", 3),
    ("scales", 3),
    ("orientations", 4),
    ("colors", 3),
    ("opacities", 1),
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EncodeOptions {
    /// Store components as differences from the rest pose. Decoding adds
    /// the rest pose back in f32, which is not guaranteed bit-exact.
    pub delta_components: bool,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum EncodeError {
    #[error("asset fails validation ({} violation(s))", .0.len())]
    Invalid(Vec<Violation>),
    #[error("channel name {0:?} longer than 65535 bytes")]
    NameTooLong(String),
    #[error("{0} does not fit in a u32 header field")]
    TooLarge(&'static str),
}

#[derive(Clone, Debug, PartialEq)]
pub enum DecodeErrorKind {
    BadMagic,
    UnsupportedVersion(u32),
    Truncated { section: String },
    InvalidName,
    NonFinite { array: String },
    CrcMismatch { stored: u32, computed: u32 },
    TrailingBytes,
}

/// A parse failure at a byte offset of the input.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("offset {offset}: {kind}")]
pub struct DecodeError {
    pub offset: usize,
    pub kind: DecodeErrorKind,
}

impl fmt::Display for DecodeErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeErrorKind::BadMagic => f.write_str("bad magic, not a SMOJ file"),
            DecodeErrorKind::UnsupportedVersion(v) => {
                write!(
                    f,
                    "unsupported format version {v} (expected {FORMAT_VERSION})"
                )
            }
            DecodeErrorKind::Truncated { section } => write!(f, "truncated in {section}"),
            DecodeErrorKind::InvalidName => f.write_str("channel name is not valid UTF-8"),
            DecodeErrorKind::NonFinite { array } => write!(f, "non-finite value in {array}"),
            DecodeErrorKind::CrcMismatch { stored, computed } => {
                write!(
                    f,
                    "payload CRC mismatch (stored {stored:08x}, computed {computed:08x})"
                )
            }
            DecodeErrorKind::TrailingBytes => f.write_str("unexpected bytes after CRC"),
        }
    }
}

/// Exact encoded size of an asset with `m` splats and the given names.
pub fn encoded_len<S: AsRef<str>>(m: usize, names: &[S]) -> usize {
    let names_len: usize = names.iter().map(|n| 2 + n.as_ref().len()).sum();
    HEADER_LEN + names_len + (1 + names.len()) * FLOATS_PER_SPLAT * 4 * m + 4
}

/// Encodes a valid asset; invalid assets are refused.
pub fn encode(asset: &AvatarAsset) -> Result<Vec<u8>, EncodeError> {
    let report = validate_asset(asset);
    if !report.is_empty() {
        return Err(EncodeError::Invalid(report));
    }
    encode_unchecked(asset, EncodeOptions::default())
}

/// Encodes without validation. Structural requirements (equal splat counts,
/// one name per component) are still needed for a decodable file.
pub fn encode_unchecked(
    asset: &AvatarAsset,
    options: EncodeOptions,
) -> Result<Vec<u8>, EncodeError> {
    let m = asset.rest.len();
    let k = asset.components.len();
    let m32 = u32::try_from(m).map_err(|_| EncodeError::TooLarge("splat count"))?;
    let k32 = u32::try_from(k).map_err(|_| EncodeError::TooLarge("channel count"))?;
    let mut out = Vec::with_capacity(encoded_len(m, &asset.channel_names));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&m32.to_le_bytes());
    out.extend_from_slice(&k32.to_le_bytes());
    let flags = if options.delta_components {
        FLAG_DELTA_COMPONENTS
    } else {
        0
    };
    out.extend_from_slice(&flags.to_le_bytes());
    for name in &asset.channel_names {
        let len = u16::try_from(name.len()).map_err(|_| EncodeError::NameTooLong(name.clone()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    let payload_start = out.len();
    write_set(&mut out, &asset.rest, None);
    for comp in &asset.components {
        let base = options.delta_components.then_some(&asset.rest);
        write_set(&mut out, comp, base);
    }
    let crc = crc32fast::hash(&out[payload_start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn write_set(out: &mut Vec<u8>, set: &GaussianSet, base: Option<&GaussianSet>) {
    let rows: Vec<[f32; FLOATS_PER_SPLAT]> = set
        .gaussians
        .iter()
        .enumerate()
        .map(|(j, g)| {
            let mut a = g.to_array();
            if let Some(b) = base.and_then(|b| b.gaussians.get(j)) {
                let ba = b.to_array();
                for f in 0..FLOATS_PER_SPLAT {
                    a[f] -= ba[f];
                }
            }
            a
        })
        .collect();
    let mut offset = 0;
    for &(_, width) in &ARRAYS {
        for row in &rows {
            for v in &row[offset..offset + width] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        offset += width;
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(
        &mut self,
        n: usize,
        section: impl FnOnce() -> String,
    ) -> Result<&'a [u8], DecodeError> {
        if self.bytes.len() - self.pos < n {
            return Err(DecodeError {
                offset: self.bytes.len(),
                kind: DecodeErrorKind::Truncated { section: section() },
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, section: &str) -> Result<u32, DecodeError> {
        let b = self.take(4, || String::from(section))?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses SMOJ bytes. Only the structure is checked; run
/// [`validate_asset`] on the result for the value-range invariants.
pub fn decode(bytes: &[u8]) -> Result<AvatarAsset, DecodeError> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(DecodeError {
            offset: 0,
            kind: DecodeErrorKind::BadMagic,
        });
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32("header")?;
    if version != FORMAT_VERSION {
        return Err(DecodeError {
            offset: 4,
            kind: DecodeErrorKind::UnsupportedVersion(version),
        });
    }
    let m = r.u32("header")? as usize;
    let k = r.u32("header")? as usize;
    let flags = r.u32("header")?;

    let mut channel_names = Vec::with_capacity(k.min(1 << 16));
    for i in 0..k {
        let len_bytes = r.take(2, || format!("name table entry {i}"))?;
        let len = u16::from_le_bytes([len_bytes[0], len_bytes[1]]) as usize;
        let start = r.pos;
        let raw = r.take(len, || format!("name table entry {i}"))?;
        let name = core::str::from_utf8(raw).map_err(|_| DecodeError {
            offset: start,
            kind: DecodeErrorKind::InvalidName,
        })?;
        channel_names.push(String::from(name));
    }

    let payload_start = r.pos;
    let payload_len = (1 + k)
        .checked_mul(FLOATS_PER_SPLAT * 4)
        .and_then(|x| x.checked_mul(m));
    // Reject impossible headers before allocating for them.
    if payload_len.is_none_or(|len| len > bytes.len() - payload_start) {
        let section = first_truncated_array(bytes.len() - payload_start, m, k);
        return Err(DecodeError {
            offset: bytes.len(),
            kind: DecodeErrorKind::Truncated { section },
        });
    }

    let rest = read_set(&mut r, m, "rest")?;
    let mut components = Vec::with_capacity(k);
    for i in 0..k {
        let mut set = read_set(&mut r, m, &format!("component {i}"))?;
        if flags & FLAG_DELTA_COMPONENTS != 0 {
            for (g, base) in set.gaussians.iter_mut().zip(&rest.gaussians) {
                let mut a = g.to_array();
                let b = base.to_array();
                for f in 0..FLOATS_PER_SPLAT {
                    a[f] += b[f];
                }
                *g = Gaussian::from_array(&a);
            }
        }
        components.push(set);
    }
    let payload_end = r.pos;
    let crc_offset = r.pos;
    let stored = r.u32("payload CRC")?;
    let computed = crc32fast::hash(&bytes[payload_start..payload_end]);
    if stored != computed {
        return Err(DecodeError {
            offset: crc_offset,
            kind: DecodeErrorKind::CrcMismatch { stored, computed },
        });
    }
    if r.pos != bytes.len() {
        return Err(DecodeError {
            offset: r.pos,
            kind: DecodeErrorKind::TrailingBytes,
        });
    }
    Ok(AvatarAsset {
        rest,
        components,
        channel_names,
        metadata: Default::default(),
    })
}

fn first_truncated_array(available: usize, m: usize, k: usize) -> String {
    let mut used = 0usize;
    for set in 0..=k {
        for &(name, width) in &ARRAYS {
            used = used.saturating_add(width * 4 * m);
            if used > available {
                return if set == 0 {
                    format!("rest {name}")
                } else {
                    format!("component {} {name}", set - 1)
                };
            }
        }
    }
    String::from("payload")
}

fn read_set(r: &mut Reader<'_>, m: usize, label: &str) -> Result<GaussianSet, DecodeError> {
    let mut rows = alloc::vec![[0.0f32; FLOATS_PER_SPLAT]; m];
    let mut offset = 0;
    for &(name, width) in &ARRAYS {
        let start = r.pos;
        let raw = r.take(width * 4 * m, || format!("{label} {name}"))?;
        for (i, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(DecodeError {
                    offset: start + i * 4,
                    kind: DecodeErrorKind::NonFinite {
                        array: format!("{label} {name}"),
                    },
                });
            }
            rows[i / width][offset + i % width] = v;
        }
        offset += width;
    }
    Ok(GaussianSet::new(
        rows.iter().map(Gaussian::from_array).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asset::facs_channel_names;

    fn asset(m: usize) -> AvatarAsset {
        let rest = GaussianSet::new(
            (0..m)
                .map(|i| {
                    Gaussian::new(
                        [i as f32, -0.5, 0.25],
                        [0.1, 0.2, 0.001],
                        [0.5, 0.5, 0.5, 0.5],
                        [0.0, 0.5, 1.0],
                        0.75,
                    )
                })
                .collect(),
        );
        let mut a = AvatarAsset::from_rest(rest);
        if m > 0 {
            a.components[2].gaussians[0].position[1] = 0.125;
        }
        a
    }

    #[test]
    fn single_splat_file_size_follows_layout() {
        let a = asset(1);
        let bytes = encode(&a).unwrap();
        let names: usize = facs_channel_names().iter().map(|n| 2 + n.len()).sum();
        // header + name table + 17 sets of 14 f32 + CRC
        assert_eq!(bytes.len(), 20 + names + 17 * 14 * 4 + 4);
        assert_eq!(bytes.len(), encoded_len(1, &a.channel_names));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let a = asset(3);
        let b = decode(&encode(&a).unwrap()).unwrap();
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn empty_asset_round_trips() {
        let a = asset(0);
        let bytes = encode(&a).unwrap();
        assert_eq!(bytes.len(), encoded_len(0, &a.channel_names));
        let b = decode(&bytes).unwrap();
        assert_eq!(b.splat_count(), 0);
        assert_eq!(b.channel_count(), 16);
    }

    #[test]
    fn corrupted_magic_fails_at_offset_zero() {
        let mut bytes = encode(&asset(2)).unwrap();
        bytes[1] = b'X';
        let err = decode(&bytes).unwrap_err();
        assert_eq!(err.offset, 0);
        assert_eq!(err.kind, DecodeErrorKind::BadMagic);
    }

    #[test]
    fn version_mismatch_is_reported() {
        let mut bytes = encode(&asset(2)).unwrap();
        bytes[4] = 9;
        assert_eq!(
            decode(&bytes).unwrap_err().kind,
            DecodeErrorKind::UnsupportedVersion(9)
        );
    }

    #[test]
    fn truncation_names_the_array() {
        let bytes = encode(&asset(4)).unwrap();
        let names: usize = facs_channel_names().iter().map(|n| 2 + n.len()).sum();
        // Cut inside the rest orientations: positions and scales are 2×12×4 bytes.
        let cut = HEADER_LEN + names + 2 * 12 * 4 + 5;
        let err = decode(&bytes[..cut]).unwrap_err();
        match err.kind {
            DecodeErrorKind::Truncated { section } => assert_eq!(section, "rest orientations"),
            other => panic!("unexpected {other:?}"),
        }
        let err = decode(&bytes[..bytes.len() - 2]).unwrap_err();
        assert_eq!(
            err.kind,
            DecodeErrorKind::Truncated {
                section: "payload CRC".into()
            }
        );
    }

    #[test]
    fn nan_in_payload_is_rejected() {
        let mut bytes = encode(&asset(2)).unwrap();
        let names: usize = facs_channel_names().iter().map(|n| 2 + n.len()).sum();
        let at = HEADER_LEN + names + 8;
        bytes[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = decode(&bytes).unwrap_err();
        assert_eq!(err.offset, at);
        assert!(matches!(err.kind, DecodeErrorKind::NonFinite { .. }));
    }

    #[test]
    fn crc_detects_payload_flip() {
        let mut bytes = encode(&asset(2)).unwrap();
        let at = bytes.len() - 10;
        bytes[at] ^= 0x01;
        assert!(matches!(
            decode(&bytes).unwrap_err().kind,
            DecodeErrorKind::CrcMismatch { .. }
        ));
    }

    #[test]
    fn invalid_asset_is_refused() {
        let mut a = asset(2);
        a.rest.gaussians[0].opacity = 2.0;
        assert!(matches!(encode(&a), Err(EncodeError::Invalid(_))));
        // The unchecked path still writes it, e.g. for diagnostics fixtures.
        let bytes = encode_unchecked(&a, EncodeOptions::default()).unwrap();
        assert_eq!(decode(&bytes).unwrap().rest.gaussians[0].opacity, 2.0);
    }

    #[test]
    fn delta_encoding_reconstructs_components() {
        let a = asset(3);
        let bytes = encode_unchecked(
            &a,
            EncodeOptions {
                delta_components: true,
            },
        )
        .unwrap();
        let b = decode(&bytes).unwrap();
        for (ca, cb) in a.components.iter().zip(&b.components) {
            for (ga, gb) in ca.gaussians.iter().zip(&cb.gaussians) {
                for (x, y) in ga.to_array().iter().zip(gb.to_array().iter()) {
                    assert!((x - y).abs() <= 1e-6);
                }
            }
        }
    }
}
