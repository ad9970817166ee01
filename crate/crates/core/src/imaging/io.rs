//! File formats: 8-bit PNG for photographs and masks, PFM (32-bit float,
//! little-endian, bottom-up scanlines) for disparity and defocus maps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Encoding, Image, ScalarMap};
use crate::{Error, Result};

/// Write a display-encoded image as 8-bit grayscale or RGB PNG.
pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let w = BufWriter::new(file);
    let mut encoder = png::Encoder::new(w, img.width() as u32, img.height() as u32);
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_color(match img.channels() {
        1 => png::ColorType::Grayscale,
        _ => png::ColorType::Rgb,
    });
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Format(format!("png header: {e}")))?;
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::Format(format!("png data: {e}")))?;
    Ok(())
}

/// Load an 8-bit grayscale or RGB PNG as a display-encoded image.
/// Other bit depths and color types are rejected with a format error.
pub fn load_png(path: &Path) -> Result<Image> {
    let file = File::open(path)?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("png decode `{}`: {e}", path.display())))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("png frame `{}`: {e}", path.display())))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "`{}`: only 8-bit PNGs are supported, got {:?}",
            path.display(),
            info.bit_depth
        )));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::Format(format!(
                "`{}`: unsupported PNG color type {other:?}",
                path.display()
            )))
        }
    };
    let n = info.width as usize * info.height as usize * channels;
    let data: Vec<f64> = buf[..n].iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(
        info.height as usize,
        info.width as usize,
        channels,
        Encoding::Display,
        data,
    )
}

/// Write a scalar map as a grayscale PFM (scale -1.0 marks little-endian;
/// rows are stored bottom-up per the de-facto convention).
pub fn save_pfm(map: &ScalarMap, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write!(w, "Pf\n{} {}\n-1.0\n", map.width(), map.height())?;
    for y in (0..map.height()).rev() {
        for x in 0..map.width() {
            w.write_all(&(map.get(y, x) as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_pfm(path: &Path) -> Result<ScalarMap> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = Vec::new();
    // Three whitespace-terminated tokens: magic, "w h", scale.
    let mut tokens = Vec::new();
    let mut token = Vec::new();
    let mut byte = [0u8; 1];
    while tokens.len() < 4 {
        r.read_exact(&mut byte)?;
        if byte[0].is_ascii_whitespace() {
            if !token.is_empty() {
                tokens.push(String::from_utf8_lossy(&token).to_string());
                token.clear();
            }
        } else {
            token.push(byte[0]);
        }
        header.push(byte[0]);
    }
    if tokens[0] != "Pf" {
        return Err(Error::Format(format!(
            "`{}`: expected grayscale PFM magic `Pf`, got `{}`",
            path.display(),
            tokens[0]
        )));
    }
    let width: usize = tokens[1]
        .parse()
        .map_err(|_| Error::Format("pfm width".into()))?;
    let height: usize = tokens[2]
        .parse()
        .map_err(|_| Error::Format("pfm height".into()))?;
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| Error::Format("pfm scale".into()))?;
    if scale >= 0.0 {
        return Err(Error::Format(
            "big-endian PFM files are not supported".into(),
        ));
    }
    let mut raw = vec![0u8; width * height * 4];
    r.read_exact(&mut raw)?;
    let mut data = vec![0.0f64; width * height];
    for y in 0..height {
        let src_row = height - 1 - y;
        for x in 0..width {
            let off = (src_row * width + x) * 4;
            let bits = [raw[off], raw[off + 1], raw[off + 2], raw[off + 3]];
            data[y * width + x] = f32::from_le_bytes(bits) as f64;
        }
    }
    ScalarMap::new(height, width, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn png_round_trip_is_exact_on_the_8bit_grid() {
        let mut rng = Rng::new(30);
        let data: Vec<f64> = (0..12 * 10 * 3)
            .map(|_| (rng.f64() * 255.0).round() / 255.0)
            .collect();
        let img = Image::new(12, 10, 3, Encoding::Display, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        save_png(&img, &path).unwrap();
        let back = load_png(&path).unwrap();
        assert_eq!(img.data(), back.data());
        assert_eq!(back.channels(), 3);
    }

    #[test]
    fn grayscale_png_round_trip() {
        let data: Vec<f64> = (0..64).map(|i| (i as f64 * 4.0) / 255.0).collect();
        let img = Image::new(8, 8, 1, Encoding::Display, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        save_png(&img, &path).unwrap();
        let back = load_png(&path).unwrap();
        assert_eq!(img.data(), back.data());
        assert_eq!(back.channels(), 1);
    }

    #[test]
    fn corrupt_png_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.png");
        std::fs::write(&path, b"definitely not a png").unwrap();
        assert!(matches!(load_png(&path), Err(Error::Format(_))));
    }

    #[test]
    fn pfm_round_trip_preserves_f32_values() {
        let mut rng = Rng::new(31);
        let data: Vec<f64> = (0..9 * 7).map(|_| rng.f64() as f32 as f64).collect();
        let map = ScalarMap::new(9, 7, data.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        save_pfm(&map, &path).unwrap();
        let back = load_pfm(&path).unwrap();
        assert_eq!(back.height(), 9);
        assert_eq!(back.width(), 7);
        for (a, b) in data.iter().zip(back.data()) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn pfm_rejects_color_and_big_endian() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pfm");
        std::fs::write(&path, b"PF\n2 2\n-1.0\n0000000000000000").unwrap();
        assert!(matches!(load_pfm(&path), Err(Error::Format(_))));
        std::fs::write(&path, b"Pf\n2 2\n1.0\n0000000000000000").unwrap();
        assert!(matches!(load_pfm(&path), Err(Error::Format(_))));
    }
}
