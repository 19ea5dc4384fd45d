//! 8-bit PNG helpers for imagery (RGB) and masks (grayscale).

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};

pub fn write_rgb(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    if data.len() != width * height * 3 {
        return Err(Error::Png {
            path: path.into(),
            message: format!("rgb buffer {} != {width}x{height}x3", data.len()),
        });
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::Png {
        path: path.into(),
        message: e.to_string(),
    })?;
    writer.write_image_data(data).map_err(|e| Error::Png {
        path: path.into(),
        message: e.to_string(),
    })
}

pub fn write_gray(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    if data.len() != width * height {
        return Err(Error::Png {
            path: path.into(),
            message: format!("gray buffer {} != {width}x{height}", data.len()),
        });
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::Png {
        path: path.into(),
        message: e.to_string(),
    })?;
    writer.write_image_data(data).map_err(|e| Error::Png {
        path: path.into(),
        message: e.to_string(),
    })
}

fn read_png(path: &Path, expect: png::ColorType) -> Result<(usize, usize, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(file);
    let mut reader = decoder.read_info().map_err(|e| Error::Png {
        path: path.into(),
        message: e.to_string(),
    })?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Png {
        path: path.into(),
        message: e.to_string(),
    })?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Png {
            path: path.into(),
            message: format!("expected 8-bit depth, found {:?}", info.bit_depth),
        });
    }
    if info.color_type != expect {
        return Err(Error::Png {
            path: path.into(),
            message: format!("expected {expect:?} color, found {:?}", info.color_type),
        });
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, buf))
}

/// Read an 8-bit RGB PNG; returns (width, height, interleaved rgb bytes).
pub fn read_rgb(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    read_png(path, png::ColorType::Rgb)
}

/// Read an 8-bit grayscale PNG; returns (width, height, bytes).
pub fn read_gray(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    read_png(path, png::ColorType::Grayscale)
}
