//! Readers and writers for images, displacement fields, affine transforms,
//! and landmark CSVs.
//!
//! The field container is a fixed little-endian layout so repeated runs can
//! be compared byte for byte: magic `DF2D`, u32 width, u32 height, then
//! `width*height` f32 `dx` values row-major followed by the `dy` values.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::core::{AffineTransform2D, DisplacementField, LandmarkSet, RgbImage, ScalarImage};
use crate::error::{Error, Result};

pub const FIELD_MAGIC: [u8; 4] = *b"DF2D";

/// Image loaded from disk; grayscale sources stay single-channel.
#[derive(Debug, Clone)]
pub enum LoadedImage {
    Gray(ScalarImage),
    Rgb(RgbImage),
}

impl LoadedImage {
    pub fn width(&self) -> usize {
        match self {
            LoadedImage::Gray(i) => i.width(),
            LoadedImage::Rgb(i) => i.width(),
        }
    }

    pub fn height(&self) -> usize {
        match self {
            LoadedImage::Gray(i) => i.height(),
            LoadedImage::Rgb(i) => i.height(),
        }
    }

    /// Converts to RGB, replicating the gray channel if needed.
    pub fn into_rgb(self) -> RgbImage {
        match self {
            LoadedImage::Gray(i) => RgbImage::from_scalar(&i),
            LoadedImage::Rgb(i) => i,
        }
    }
}

/// Reads a PNG, PGM, or PPM file (8 bits per channel).
pub fn read_image(path: &Path) -> Result<LoadedImage> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        return read_pnm(&bytes);
    }
    if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        return read_png(&bytes);
    }
    Err(Error::UnsupportedImage(format!(
        "{}: not a PNG, PGM, or PPM file",
        path.display()
    )))
}

fn read_png(bytes: &[u8]) -> Result<LoadedImage> {
    let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::CorruptImage(e.to_string()))?;
    match decoded {
        image::DynamicImage::ImageLuma8(img) => {
            let (w, h) = (img.width() as usize, img.height() as usize);
            let data = img.into_raw().iter().map(|&v| v as f64 / 255.0).collect();
            Ok(LoadedImage::Gray(ScalarImage::new(w, h, data)?))
        }
        image::DynamicImage::ImageRgb8(img) => {
            let (w, h) = (img.width() as usize, img.height() as usize);
            Ok(LoadedImage::Rgb(RgbImage::new(w, h, img.into_raw())?))
        }
        other => Err(Error::UnsupportedImage(format!(
            "PNG color type {:?} (only 8-bit gray and RGB are supported)",
            other.color()
        ))),
    }
}

/// Binary PGM (P5) and PPM (P6) with maxval 255.
fn read_pnm(bytes: &[u8]) -> Result<LoadedImage> {
    let mut pos = 2usize; // past the magic
    let width = read_pnm_int(bytes, &mut pos)?;
    let height = read_pnm_int(bytes, &mut pos)?;
    let maxval = read_pnm_int(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(Error::UnsupportedImage(format!(
            "PNM maxval {maxval} (only 255 is supported)"
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos = pos
        .checked_add(1)
        .filter(|&p| p <= bytes.len())
        .ok_or_else(|| Error::CorruptImage("truncated PNM header".into()))?;
    let channels = if bytes.starts_with(b"P5") { 1 } else { 3 };
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::CorruptImage("PNM dimensions overflow".into()))?;
    let raster = &bytes[pos..];
    if raster.len() < expected {
        return Err(Error::CorruptImage(format!(
            "PNM payload has {} bytes, expected {expected}",
            raster.len()
        )));
    }
    let raster = &raster[..expected];
    if channels == 1 {
        let data = raster.iter().map(|&v| v as f64 / 255.0).collect();
        Ok(LoadedImage::Gray(ScalarImage::new(width, height, data)?))
    } else {
        Ok(LoadedImage::Rgb(RgbImage::new(
            width,
            height,
            raster.to_vec(),
        )?))
    }
}

fn read_pnm_int(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    // Skip whitespace and '#' comments.
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            Some(_) => break,
            None => return Err(Error::CorruptImage("truncated PNM header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| b.is_ascii_digit()) {
        *pos += 1;
    }
    if *pos == start {
        return Err(Error::CorruptImage("missing PNM header field".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::CorruptImage("bad PNM header field".into()))
}

/// Writes a scalar image; `.png` extension selects PNG, anything else PGM.
pub fn write_scalar_image(path: &Path, img: &ScalarImage) -> Result<()> {
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, bytes)
            .expect("sized buffer");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        return Ok(());
    }
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{} {}\n255\n", img.width(), img.height())?;
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

/// Writes an RGB image; `.png` extension selects PNG, anything else PPM.
pub fn write_rgb_image(path: &Path, img: &RgbImage) -> Result<()> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        let buf = image::RgbImage::from_raw(
            img.width() as u32,
            img.height() as u32,
            img.data().to_vec(),
        )
        .expect("sized buffer");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        return Ok(());
    }
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P6\n{} {}\n255\n", img.width(), img.height())?;
    out.write_all(img.data())?;
    out.flush()?;
    Ok(())
}

pub fn write_field(path: &Path, field: &DisplacementField) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_field_to(&mut out, field)?;
    out.flush()?;
    Ok(())
}

pub fn write_field_to<W: Write>(out: &mut W, field: &DisplacementField) -> Result<()> {
    out.write_all(&FIELD_MAGIC)?;
    out.write_all(&(field.width() as u32).to_le_bytes())?;
    out.write_all(&(field.height() as u32).to_le_bytes())?;
    for &v in field.dx() {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    for &v in field.dy() {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_field(path: &Path) -> Result<DisplacementField> {
    let mut reader = BufReader::new(File::open(path)?);
    read_field_from(&mut reader)
}

pub fn read_field_from<R: Read>(reader: &mut R) -> Result<DisplacementField> {
    let mut header = [0u8; 12];
    reader
        .read_exact(&mut header)
        .map_err(|_| Error::BadHeader("field file shorter than its header".into()))?;
    if header[0..4] != FIELD_MAGIC {
        return Err(Error::BadHeader(format!(
            "field magic {:?}, expected {:?}",
            &header[0..4],
            FIELD_MAGIC
        )));
    }
    let width = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    if width == 0 || height == 0 {
        return Err(Error::BadHeader(format!(
            "field dimensions {width}x{height}"
        )));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::BadHeader("field dimensions overflow".into()))?;
    let mut payload = vec![0u8; 2 * n * 4];
    reader
        .read_exact(&mut payload)
        .map_err(|_| Error::CorruptImage("field payload shorter than header promises".into()))?;
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing)? != 0 {
        return Err(Error::CorruptImage(
            "field payload longer than header promises".into(),
        ));
    }
    let read_f32 = |chunk: &[u8]| f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
    let dx = payload[..n * 4].chunks_exact(4).map(read_f32).collect();
    let dy = payload[n * 4..].chunks_exact(4).map(read_f32).collect();
    DisplacementField::new(width, height, dx, dy)
}

/// Landmark CSV: header line `,X,Y`, then `index,x,y` rows.
pub fn read_landmarks(path: &Path) -> Result<LandmarkSet> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::BadHeader("empty landmark file".into()))?;
    if header.trim_end() != ",X,Y" {
        return Err(Error::BadHeader(format!(
            "landmark header {:?}, expected \",X,Y\"",
            header.trim_end()
        )));
    }
    let mut points = Vec::new();
    for line in lines {
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse(format!(
                "landmark row has {} fields, expected 3: {line:?}",
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("non-numeric landmark field {s:?}")))
        };
        parse(fields[0])?;
        points.push((parse(fields[1])?, parse(fields[2])?));
    }
    LandmarkSet::new(points)
}

pub fn write_landmarks(path: &Path, set: &LandmarkSet) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, ",X,Y")?;
    for (i, (x, y)) in set.points().iter().enumerate() {
        writeln!(out, "{i},{x:.6},{y:.6}")?;
    }
    out.flush()?;
    Ok(())
}

/// Affine text file: 8 whitespace-separated decimals
/// `a11 a12 a21 a22 tx ty cx cy`. The shortest-round-trip float formatting
/// makes read(write(T)) exact.
pub fn write_affine(path: &Path, t: &AffineTransform2D) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(
        out,
        "{} {} {} {} {} {} {} {}",
        t.a11, t.a12, t.a21, t.a22, t.tx, t.ty, t.cx, t.cy
    )?;
    out.flush()?;
    Ok(())
}

pub fn read_affine(path: &Path) -> Result<AffineTransform2D> {
    let text = std::fs::read_to_string(path)?;
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Parse(format!("non-numeric affine field {s:?}")))
        })
        .collect::<Result<_>>()?;
    if values.len() != 8 {
        return Err(Error::Parse(format!(
            "affine file has {} values, expected 8",
            values.len()
        )));
    }
    AffineTransform2D::new(
        values[0], values[1], values[2], values[3], values[4], values[5], values[6], values[7],
    )
}
