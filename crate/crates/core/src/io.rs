//! Portable float files for images and sinograms.
//!
//! Both formats are little-endian 32-bit floats, row-major, after a fixed
//! header:
//!
//! ```text
//! image    (16 bytes): "CTIMG1" | 2 zero bytes | side: u32 | pixel_size_mm: f32
//! sinogram (24 bytes): "CTSIN1" | 2 zero bytes | n_views: u32 | n_channels: u32 | fingerprint: u64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CtError, Result};
use crate::geometry::Sinogram;
use crate::grid::ImageGrid;

pub const IMAGE_MAGIC: &[u8; 6] = b"CTIMG1";
pub const SINOGRAM_MAGIC: &[u8; 6] = b"CTSIN1";
pub const IMAGE_HEADER_LEN: usize = 16;
pub const SINOGRAM_HEADER_LEN: usize = 24;

fn format_error(path: &Path, reason: impl Into<String>) -> CtError {
    CtError::Format { path: path.to_path_buf(), reason: reason.into() }
}

fn write_floats(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    for &v in values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_floats(path: &Path, bytes: &[u8], count: usize) -> Result<Vec<f64>> {
    if bytes.len() != count * 4 {
        return Err(format_error(path, format!("expected {} payload bytes, found {}", count * 4, bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

pub fn encode_image(img: &ImageGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(IMAGE_HEADER_LEN + 4 * img.values().len());
    out.extend_from_slice(IMAGE_MAGIC);
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&(img.side() as u32).to_le_bytes());
    out.extend_from_slice(&(img.pixel_size_mm() as f32).to_le_bytes());
    write_floats(&mut out, img.values()).expect("writing to a Vec cannot fail");
    out
}

pub fn write_image(path: &Path, img: &ImageGrid) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_image(img))?;
    w.flush()?;
    Ok(())
}

pub fn read_image(path: &Path) -> Result<ImageGrid> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < IMAGE_HEADER_LEN || &bytes[..6] != IMAGE_MAGIC {
        return Err(format_error(path, "missing CTIMG1 header"));
    }
    let side = u32_at(&bytes, 8) as usize;
    let pixel = f32::from_le_bytes(bytes[12..16].try_into().unwrap()) as f64;
    let values = read_floats(path, &bytes[IMAGE_HEADER_LEN..], side * side)?;
    ImageGrid::new(side, pixel, values)
}

pub fn write_sinogram(path: &Path, s: &Sinogram) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SINOGRAM_MAGIC)?;
    w.write_all(&[0, 0])?;
    w.write_all(&(s.n_views() as u32).to_le_bytes())?;
    w.write_all(&(s.n_channels() as u32).to_le_bytes())?;
    w.write_all(&s.geometry_fingerprint().to_le_bytes())?;
    write_floats(&mut w, s.values())?;
    w.flush()?;
    Ok(())
}

pub fn read_sinogram(path: &Path) -> Result<Sinogram> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < SINOGRAM_HEADER_LEN || &bytes[..6] != SINOGRAM_MAGIC {
        return Err(format_error(path, "missing CTSIN1 header"));
    }
    let n_views = u32_at(&bytes, 8) as usize;
    let n_channels = u32_at(&bytes, 12) as usize;
    let fingerprint = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let values = read_floats(path, &bytes[SINOGRAM_HEADER_LEN..], n_views * n_channels)?;
    Sinogram::new(n_views, n_channels, values, fingerprint)
}
