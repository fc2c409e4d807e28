//! Portable graymap/pixmap I/O. All rasters here are top-origin, row-major.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageReader};

use crate::error::{Error, Result};

pub fn write_gray(path: impl AsRef<Path>, width: u32, height: u32, data: &[u8]) -> Result<()> {
    if data.len() != width as usize * height as usize {
        return Err(Error::shape("graymap", width as usize * height as usize, data.len()));
    }
    let out = BufWriter::new(File::create(path)?);
    PnmEncoder::new(out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(data, width, height, ExtendedColorType::L8)?;
    Ok(())
}

pub fn write_rgb(path: impl AsRef<Path>, width: u32, height: u32, data: &[u8]) -> Result<()> {
    if data.len() != 3 * width as usize * height as usize {
        return Err(Error::shape("pixmap", 3 * width as usize * height as usize, data.len()));
    }
    let out = BufWriter::new(File::create(path)?);
    PnmEncoder::new(out)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(data, width, height, ExtendedColorType::Rgb8)?;
    Ok(())
}

/// Reads any supported raster as 8-bit luminance.
pub fn read_gray(path: impl AsRef<Path>) -> Result<(u32, u32, Vec<u8>)> {
    let img = ImageReader::open(path)?.with_guessed_format()?.decode()?.to_luma8();
    Ok((img.width(), img.height(), img.into_raw()))
}

/// Reads any supported raster as interleaved 8-bit RGB; graymaps are replicated.
pub fn read_rgb(path: impl AsRef<Path>) -> Result<(u32, u32, Vec<u8>)> {
    let img = ImageReader::open(path)?.with_guessed_format()?.decode()?.to_rgb8();
    Ok((img.width(), img.height(), img.into_raw()))
}
