//! 8-bit PNG previews and in-memory PNG coding.

use std::io::Cursor;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("png encoding: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decoding: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("buffer has {found} values, expected {expected}")]
    Shape { expected: usize, found: usize },
    #[error("unsupported channel count {0}")]
    Channels(usize),
}

/// Interleaved 8-bit pixels with 3 (RGB) or 4 (RGBA) channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image8 {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image8 {
    pub fn new(
        width: u32,
        height: u32,
        channels: usize,
        data: Vec<u8>,
    ) -> Result<Self, ImageError> {
        if !(channels == 3 || channels == 4) {
            return Err(ImageError::Channels(channels));
        }
        let expected = width as usize * height as usize * channels;
        if data.len() != expected {
            return Err(ImageError::Shape {
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Quantizes values in `[0, 1]` (clamped) to 8 bits.
    pub fn from_unit_floats(
        width: u32,
        height: u32,
        channels: usize,
        values: &[f32],
    ) -> Result<Self, ImageError> {
        let data = values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Self::new(width, height, channels, data)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImageError> {
        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, self.width, self.height);
        enc.set_color(if self.channels == 4 {
            png::ColorType::Rgba
        } else {
            png::ColorType::Rgb
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&self.data)?;
        writer.finish()?;
        Ok(out)
    }

    /// Decodes any PNG to 8-bit RGB or RGBA.
    pub fn decode_png(bytes: &[u8]) -> Result<Self, ImageError> {
        let mut dec = png::Decoder::new(Cursor::new(bytes));
        dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = dec.read_info()?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader.next_frame(&mut buf)?;
        buf.truncate(info.buffer_size());
        let (w, h) = (info.width, info.height);
        let data = match info.color_type {
            png::ColorType::Rgb => return Self::new(w, h, 3, buf),
            png::ColorType::Rgba => return Self::new(w, h, 4, buf),
            png::ColorType::Grayscale => buf.iter().flat_map(|g| [*g, *g, *g]).collect(),
            png::ColorType::GrayscaleAlpha => buf
                .chunks_exact(2)
                .flat_map(|p| [p[0], p[0], p[0], p[1]])
                .collect(),
            png::ColorType::Indexed => return Err(ImageError::Channels(1)),
        };
        let channels = if info.color_type == png::ColorType::Grayscale {
            3
        } else {
            4
        };
        Self::new(w, h, channels, data)
    }
}

pub fn write_png(path: impl AsRef<Path>, image: &Image8) -> Result<(), ImageError> {
    Ok(std::fs::write(path, image.encode_png()?)?)
}

pub fn read_png(path: impl AsRef<Path>) -> Result<Image8, ImageError> {
    Image8::decode_png(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let img = Image8::new(3, 2, 3, (0..18).map(|v| v * 13).collect()).unwrap();
        assert_eq!(Image8::decode_png(&img.encode_png().unwrap()).unwrap(), img);
        let rgba = Image8::new(1, 2, 4, vec![1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
        assert_eq!(
            Image8::decode_png(&rgba.encode_png().unwrap()).unwrap(),
            rgba
        );
    }

    #[test]
    fn quantization_clamps_and_rounds() {
        let img = Image8::from_unit_floats(1, 1, 3, &[-0.5, 0.5, 2.0]).unwrap();
        assert_eq!(img.data, vec![0, 128, 255]);
    }
}
