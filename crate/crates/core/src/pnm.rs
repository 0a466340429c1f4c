//! Binary portable-pixmap (P6) and portable-graymap (P5) files.
//!
//! Headers are written as `P6\n{width} {height}\n255\n` (resp. `P5`)
//! followed by raw bytes, row-major, top-left first; pixmaps interleave
//! RGB per pixel. The reader tolerates `#` comments and arbitrary
//! whitespace between header tokens.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::audit;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    debug_assert_eq!(rgb.len(), 3 * width * height);
    write_pnm(path, b"P6", width, height, rgb)
}

pub fn write_pgm(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    debug_assert_eq!(gray.len(), width * height);
    write_pnm(path, b"P5", width, height, gray)
}

fn write_pnm(path: &Path, magic: &[u8], width: usize, height: usize, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut run = || -> std::io::Result<()> {
        w.write_all(magic)?;
        w.write_all(format!("\n{width} {height}\n255\n").as_bytes())?;
        w.write_all(data)?;
        w.flush()
    };
    run().map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    read_pnm(path, b"P6", 3)
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    read_pnm(path, b"P5", 1)
}

fn read_pnm(path: &Path, magic: &[u8], channels: usize) -> Result<(usize, usize, Vec<u8>)> {
    let file = audit::open_read(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;

    let mut pos = 0;
    let mut token = |bytes: &[u8]| -> Result<Vec<u8>> {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated header"));
        }
        Ok(bytes[start..pos].to_vec())
    };

    let got_magic = token(&bytes)?;
    if got_magic != magic {
        return Err(Error::format(
            path,
            format!(
                "expected {} file, found magic {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&got_magic)
            ),
        ));
    }
    let parse = |t: Vec<u8>| -> Result<usize> {
        String::from_utf8_lossy(&t)
            .parse::<usize>()
            .map_err(|_| Error::format(path, "non-numeric header field"))
    };
    let width = parse(token(&bytes)?)?;
    let height = parse(token(&bytes)?)?;
    let maxval = parse(token(&bytes)?)?;
    if maxval != 255 {
        return Err(Error::format(path, format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = channels * width * height;
    if bytes.len() < pos + need {
        return Err(Error::format(path, "raster shorter than header promises"));
    }
    Ok((width, height, bytes[pos..pos + need].to_vec()))
}

/// Interleaved RGB bytes to planar `[0,1]` floats (`3 x side x side`).
pub fn rgb_to_planar<T: Scalar>(rgb: &[u8], width: usize, height: usize) -> Vec<T> {
    let n = width * height;
    let mut out = vec![T::zero(); 3 * n];
    let scale = T::from_f(1.0 / 255.0);
    for i in 0..n {
        for c in 0..3 {
            out[c * n + i] = T::from_f(rgb[i * 3 + c] as f64) * scale;
        }
    }
    out
}

/// Planar `[0,1]` floats to interleaved RGB bytes, rounding to nearest.
pub fn planar_to_rgb<T: Scalar>(planar: &[T], width: usize, height: usize) -> Vec<u8> {
    let n = width * height;
    debug_assert_eq!(planar.len(), 3 * n);
    let mut out = vec![0u8; 3 * n];
    for i in 0..n {
        for c in 0..3 {
            let v = planar[c * n + i].to_f().clamp(0.0, 1.0);
            out[i * 3 + c] = (v * 255.0).round() as u8;
        }
    }
    out
}
