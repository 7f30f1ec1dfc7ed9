//! PFM (float) and 8-bit PNG serialization of fields.
//!
//! PFM files are little-endian (scale `-1.0`) with rows stored bottom to top.
//! PNG samples map `[0, 1]` to `0..=255`; masks are written as 0/255.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use super::Field2D;
use crate::error::{Error, Result};

pub fn encode_pfm(f: &Field2D) -> Result<Vec<u8>> {
    let tag = match f.channels() {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::invalid(format!("PFM supports 1 or 3 channels, got {c}"))),
    };
    let (w, h, ch) = (f.width(), f.height(), f.channels());
    let mut out = format!("{tag}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * ch * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            for c in 0..ch {
                out.extend_from_slice(&(f.get(x, y, c) as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Field2D> {
    let bad = |m: &str| Error::Parse {
        location: "pfm header".into(),
        message: m.to_string(),
    };
    // three whitespace-terminated header tokens: tag, "w h", scale
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    pos += 1; // single whitespace byte after the scale
    let channels = match tokens[0] {
        "Pf" => 1,
        "PF" => 3,
        t => return Err(bad(&format!("unknown tag {t:?}"))),
    };
    let w: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| bad("bad scale"))?;
    let little = scale < 0.0;
    let need = w * h * channels * 4;
    let body = bytes.get(pos..pos + need).ok_or_else(|| Error::Parse {
        location: format!("pfm body offset {pos}"),
        message: format!("expected {need} bytes, found {}", bytes.len().saturating_sub(pos)),
    })?;
    let mut data = vec![0.0; w * h * channels];
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let row_from_bottom = i / (w * channels);
        let rest = i % (w * channels);
        data[(h - 1 - row_from_bottom) * w * channels + rest] = v as f64;
    }
    // depth maps legitimately carry +inf on background pixels
    Ok(Field2D::from_vec_unchecked(w, h, channels, data))
}

pub fn write_pfm(path: impl AsRef<Path>, f: &Field2D) -> Result<()> {
    fs::write(path, encode_pfm(f)?)?;
    Ok(())
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Field2D> {
    let path = path.as_ref();
    decode_pfm(&fs::read(path)?).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Rounds every sample to the nearest 8-bit level, as a PNG round trip would.
pub fn quantize8(f: &Field2D) -> Field2D {
    f.map(|v| to_u8(v) as f64 / 255.0)
}

pub fn encode_png(f: &Field2D) -> Result<Vec<u8>> {
    let color = match f.channels() {
        1 => png::ColorType::Grayscale,
        2 => png::ColorType::GrayscaleAlpha,
        3 => png::ColorType::Rgb,
        4 => png::ColorType::Rgba,
        c => return Err(Error::invalid(format!("PNG supports 1-4 channels, got {c}"))),
    };
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, f.width() as u32, f.height() as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::invalid(format!("png encode: {e}")))?;
        let bytes: Vec<u8> = f.data().iter().map(|&v| to_u8(v)).collect();
        writer
            .write_image_data(&bytes)
            .map_err(|e| Error::invalid(format!("png encode: {e}")))?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<Field2D> {
    let perr = |e: png::DecodingError| Error::Parse {
        location: "png stream".into(),
        message: e.to_string(),
    };
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(perr)?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(perr)?;
    let channels = info.color_type.samples();
    let (w, h) = (info.width as usize, info.height as usize);
    let data = buf[..w * h * channels].iter().map(|&b| b as f64 / 255.0).collect();
    Field2D::from_vec(w, h, channels, data)
}

pub fn write_png(path: impl AsRef<Path>, f: &Field2D) -> Result<()> {
    fs::write(path, encode_png(f)?)?;
    Ok(())
}

pub fn read_png(path: impl AsRef<Path>) -> Result<Field2D> {
    let path = path.as_ref();
    decode_png(&fs::read(path)?).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads a mask PNG (any channel count) and binarizes the first channel at 0.5.
pub fn read_mask_png(path: impl AsRef<Path>) -> Result<Field2D> {
    let img = read_png(path)?;
    Ok(img.channel(0).map(|v| if v >= 0.5 { 1.0 } else { 0.0 }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_is_exact_for_f32_values() {
        let f = Field2D::from_fn(5, 3, 3, |x, y, c| (x as f32 * 0.5 - y as f32 + c as f32 * 0.125) as f64);
        let g = decode_pfm(&encode_pfm(&f).unwrap()).unwrap();
        assert_eq!(f, g);
        let one = Field2D::from_fn(4, 2, 1, |x, y, _| (x * 2 + y) as f64);
        assert_eq!(decode_pfm(&encode_pfm(&one).unwrap()).unwrap(), one);
    }

    #[test]
    fn pfm_rows_bottom_to_top() {
        let f = Field2D::from_vec(1, 2, 1, vec![1.0, 2.0]).unwrap();
        let bytes = encode_pfm(&f).unwrap();
        let body = &bytes[bytes.len() - 8..];
        assert_eq!(&body[..4], &2.0f32.to_le_bytes());
    }

    #[test]
    fn pfm_keeps_infinity() {
        let f = Field2D::from_vec_unchecked(2, 1, 1, vec![f64::INFINITY, 0.5]);
        let g = decode_pfm(&encode_pfm(&f).unwrap()).unwrap();
        assert!(g.get(0, 0, 0).is_infinite());
    }

    #[test]
    fn pfm_rejects_truncated() {
        let f = Field2D::zeros(4, 4, 1);
        let bytes = encode_pfm(&f).unwrap();
        assert!(decode_pfm(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_pfm(b"P6\n1 1\n-1.0\n0000").is_err());
    }

    #[test]
    fn png_round_trip_quantized() {
        let f = Field2D::from_fn(6, 4, 4, |x, y, c| ((x + y + c) % 5) as f64 / 4.0);
        let g = decode_png(&encode_png(&f).unwrap()).unwrap();
        assert_eq!(g.shape(), f.shape());
        assert!(g.max_abs_diff(&f) <= 0.5 / 255.0 + 1e-12);
    }
}
