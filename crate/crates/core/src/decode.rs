//! Pixel decoding, delegated to an external JPEG decoder.

use zune_core::bytestream::ZCursor;
use zune_core::colorspace::ColorSpace;
use zune_core::options::DecoderOptions;

/// An interleaved 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height * 3, "RGB buffer size");
        RgbImage {
            width,
            height,
            data,
        }
    }

    /// BT.601 luma of every pixel, row-major, in `0.0..=255.0`.
    pub fn luma(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("JPEG decode failed: {0}")]
pub struct DecodeError(pub String);

/// Converts a JPEG byte stream into RGB pixels.
pub trait ImageDecoder: Send + Sync {
    fn decode_rgb(&self, jpeg: &[u8]) -> Result<RgbImage, DecodeError>;
}

/// [`ImageDecoder`] backed by `zune-jpeg` in strict mode.
#[derive(Clone, Copy, Debug, Default)]
pub struct JpegDecoder;

impl ImageDecoder for JpegDecoder {
    fn decode_rgb(&self, jpeg: &[u8]) -> Result<RgbImage, DecodeError> {
        let opts = DecoderOptions::default()
            .jpeg_set_out_colorspace(ColorSpace::RGB)
            .set_strict_mode(true);
        let mut dec = zune_jpeg::JpegDecoder::new_with_options(ZCursor::new(jpeg), opts);
        let data = dec.decode().map_err(|e| DecodeError(format!("{e:?}")))?;
        let (w, h) = dec
            .dimensions()
            .ok_or_else(|| DecodeError("missing frame dimensions".into()))?;
        if data.len() != w * h * 3 {
            return Err(DecodeError(format!(
                "decoder returned {} bytes for {w}x{h} RGB",
                data.len()
            )));
        }
        Ok(RgbImage::new(w, h, data))
    }
}
