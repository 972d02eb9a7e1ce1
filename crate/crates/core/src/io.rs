//! File formats: the GRD1 float grid, 8-bit binary PGM and PPM.
//!
//! GRD1 layout: `b"GRD1"`, `u32` rows, `u32` cols, `f64` spacing, then
//! `rows * cols` `f32` values in row-major order. All little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::ScalarField;

const GRD1_MAGIC: &[u8; 4] = b"GRD1";

pub fn write_grd1<W: Write>(mut w: W, f: &ScalarField) -> Result<()> {
    w.write_all(GRD1_MAGIC)?;
    w.write_all(&(f.rows() as u32).to_le_bytes())?;
    w.write_all(&(f.cols() as u32).to_le_bytes())?;
    w.write_all(&f.spacing().to_le_bytes())?;
    let mut buf = Vec::with_capacity(f.len() * 4);
    for &v in f.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_grd1<R: Read>(mut r: R) -> Result<ScalarField> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != GRD1_MAGIC {
        return Err(Error::Format("missing GRD1 magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let rows = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let cols = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let spacing = f64::from_le_bytes(b8);
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("grid dimensions overflow".into()))?;
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    ScalarField::with_spacing(rows, cols, spacing, data)
}

pub fn save_grd1(path: impl AsRef<Path>, f: &ScalarField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_grd1(&mut w, f)?;
    w.flush()?;
    Ok(())
}

pub fn load_grd1(path: impl AsRef<Path>) -> Result<ScalarField> {
    read_grd1(BufReader::new(File::open(path)?))
}

/// How field values are mapped onto 0..=255 when writing a PGM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GrayMapping {
    /// `v > 0.5` becomes 255, everything else 0.
    Mask,
    /// Linear stretch of `[min, max]` onto `[0, 255]`.
    Stretch,
    /// Values are rounded and clamped to `[0, 255]`.
    Raw,
}

pub fn to_gray_bytes(f: &ScalarField, mapping: GrayMapping) -> Vec<u8> {
    match mapping {
        GrayMapping::Mask => f.data().iter().map(|&v| if v > 0.5 { 255 } else { 0 }).collect(),
        GrayMapping::Raw => f.data().iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect(),
        GrayMapping::Stretch => {
            let (lo, hi) = (f.min(), f.max());
            let span = hi - lo;
            f.data()
                .iter()
                .map(|&v| {
                    if span > 0.0 {
                        (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8
                    } else {
                        0
                    }
                })
                .collect()
        }
    }
}

pub fn write_pgm<W: Write>(mut w: W, f: &ScalarField, mapping: GrayMapping) -> Result<()> {
    write!(w, "P5\n{} {}\n255\n", f.cols(), f.rows())?;
    w.write_all(&to_gray_bytes(f, mapping))?;
    Ok(())
}

pub fn save_pgm(path: impl AsRef<Path>, f: &ScalarField, mapping: GrayMapping) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pgm(&mut w, f, mapping)?;
    w.flush()?;
    Ok(())
}

fn next_token<R: Read>(r: &mut R) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)?;
        let ch = byte[0];
        if ch == b'#' && tok.is_empty() {
            // comment runs to end of line
            while byte[0] != b'\n' {
                r.read_exact(&mut byte)?;
            }
            continue;
        }
        if ch.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return Ok(tok);
        }
        tok.push(ch as char);
    }
}

/// Reads an 8-bit binary PGM; values are returned on the 0..=255 scale.
pub fn read_pgm<R: Read>(mut r: R) -> Result<ScalarField> {
    if next_token(&mut r)? != "P5" {
        return Err(Error::Format("only binary PGM (P5) is supported".into()));
    }
    let parse = |s: String| {
        s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM header token '{s}'")))
    };
    let cols = parse(next_token(&mut r)?)?;
    let rows = parse(next_token(&mut r)?)?;
    let maxval = parse(next_token(&mut r)?)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
    }
    let mut raw = vec![0u8; rows * cols];
    r.read_exact(&mut raw)?;
    ScalarField::new(rows, cols, raw.into_iter().map(f64::from).collect())
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<ScalarField> {
    read_pgm(BufReader::new(File::open(path)?))
}

/// Loads a 0/255 PGM as a binary 0/1 mask.
pub fn load_mask_pgm(path: impl AsRef<Path>) -> Result<ScalarField> {
    Ok(load_pgm(path)?.map(|v| if v > 127.0 { 1.0 } else { 0.0 }))
}

pub fn write_ppm<W: Write>(mut w: W, rows: usize, cols: usize, rgb: &[[u8; 3]]) -> Result<()> {
    if rgb.len() != rows * cols {
        return Err(Error::Format("pixel count does not match dimensions".into()));
    }
    write!(w, "P6\n{cols} {rows}\n255\n")?;
    let flat: Vec<u8> = rgb.iter().flat_map(|p| p.iter().copied()).collect();
    w.write_all(&flat)?;
    Ok(())
}

pub fn save_ppm(path: impl AsRef<Path>, rows: usize, cols: usize, rgb: &[[u8; 3]]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ppm(&mut w, rows, cols, rgb)?;
    w.flush()?;
    Ok(())
}
