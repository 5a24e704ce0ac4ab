//! Template and image file formats.
//!
//! Template text format, one file per template:
//!
//! ```text
//! MINUTIAE <count> <width> <height> <dpi>
//! x y theta [quality]
//! ...
//! ```
//!
//! `x`, `y` are non-negative integers, `theta` is a decimal in radians
//! (wrapped to `[0, 2π)` on load), `quality` is an optional decimal in
//! `[0, 1]`. Lines starting with `#` are comments. UTF-8, LF line endings.

use crate::types::{GrayscaleImage, Minutia, MinutiaeSet};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("line {line}: malformed header (expected 'MINUTIAE <count> <width> <height> <dpi>')")]
    MalformedHeader { line: usize },
    #[error("missing header line")]
    MissingHeader,
    #[error("line {line}: malformed minutia record: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("header declares {expected} minutiae but file contains {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("line {line}: minutia ({x}, {y}) outside image bounds {width}x{height}")]
    OutOfBounds {
        line: usize,
        x: i64,
        y: i64,
        width: u32,
        height: u32,
    },
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse { path: String, source: ParseError },
    #[error("{path}: {source}")]
    Image {
        path: String,
        source: image::ImageError,
    },
}

/// Parse a template from text.
pub fn parse_template(text: &str) -> Result<MinutiaeSet, ParseError> {
    let mut header: Option<(usize, u32, u32, u32)> = None;
    let mut records: Vec<(usize, Minutia)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if header.is_none() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 || fields[0] != "MINUTIAE" {
                return Err(ParseError::MalformedHeader { line: line_no });
            }
            let count: usize = fields[1]
                .parse()
                .map_err(|_| ParseError::MalformedHeader { line: line_no })?;
            let width: u32 = fields[2]
                .parse()
                .map_err(|_| ParseError::MalformedHeader { line: line_no })?;
            let height: u32 = fields[3]
                .parse()
                .map_err(|_| ParseError::MalformedHeader { line: line_no })?;
            let dpi: u32 = fields[4]
                .parse()
                .map_err(|_| ParseError::MalformedHeader { line: line_no })?;
            header = Some((count, width, height, dpi));
            continue;
        }

        let (_, width, height, _) = header.unwrap();
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(ParseError::MalformedRecord {
                line: line_no,
                message: format!("expected 3 or 4 fields, got {}", fields.len()),
            });
        }
        let x: i64 = fields[0].parse().map_err(|_| ParseError::MalformedRecord {
            line: line_no,
            message: format!("bad x coordinate {:?}", fields[0]),
        })?;
        let y: i64 = fields[1].parse().map_err(|_| ParseError::MalformedRecord {
            line: line_no,
            message: format!("bad y coordinate {:?}", fields[1]),
        })?;
        if x < 0 || y < 0 {
            return Err(ParseError::MalformedRecord {
                line: line_no,
                message: "coordinates must be non-negative".into(),
            });
        }
        let theta: f64 = fields[2].parse().map_err(|_| ParseError::MalformedRecord {
            line: line_no,
            message: format!("bad theta {:?}", fields[2]),
        })?;
        let quality: Option<f64> = match fields.get(3) {
            Some(q) => Some(q.parse().map_err(|_| ParseError::MalformedRecord {
                line: line_no,
                message: format!("bad quality {:?}", q),
            })?),
            None => None,
        };
        if x as u64 >= u64::from(width) || y as u64 >= u64::from(height) {
            return Err(ParseError::OutOfBounds {
                line: line_no,
                x,
                y,
                width,
                height,
            });
        }
        let minutia = Minutia::new(x as f64, y as f64, theta, quality).map_err(|e| {
            ParseError::MalformedRecord {
                line: line_no,
                message: e.to_string(),
            }
        })?;
        records.push((line_no, minutia));
    }

    let (count, width, height, dpi) = header.ok_or(ParseError::MissingHeader)?;
    if records.len() != count {
        return Err(ParseError::CountMismatch {
            expected: count,
            got: records.len(),
        });
    }
    MinutiaeSet::new(records.into_iter().map(|(_, m)| m).collect(), width, height, dpi).map_err(
        |e| ParseError::MalformedRecord {
            line: 0,
            message: e.to_string(),
        },
    )
}

/// Render a template to text.
///
/// Coordinates are rounded to the nearest integer and clamped into the image
/// frame, so out-of-frame minutiae from perturbed sets land on the border.
pub fn render_template(set: &MinutiaeSet) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "MINUTIAE {} {} {} {}",
        set.len(),
        set.width(),
        set.height(),
        set.resolution()
    )
    .unwrap();
    for m in set.minutiae() {
        let x = (m.x.round() as i64).clamp(0, i64::from(set.width()) - 1);
        let y = (m.y.round() as i64).clamp(0, i64::from(set.height()) - 1);
        match m.quality {
            Some(q) => writeln!(out, "{} {} {} {}", x, y, m.theta, q).unwrap(),
            None => writeln!(out, "{} {} {}", x, y, m.theta).unwrap(),
        }
    }
    out
}

pub fn load_template(path: &Path) -> Result<MinutiaeSet, IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_template(&text).map_err(|source| IoError::Parse {
        path: path.display().to_string(),
        source,
    })
}

pub fn save_template(set: &MinutiaeSet, path: &Path) -> Result<(), IoError> {
    std::fs::write(path, render_template(set)).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })
}

/// Load an 8-bit grayscale image (PNG or PGM); resolution comes from the
/// caller since embedded dpi metadata is unreliable.
pub fn load_image(path: &Path, resolution: u32) -> Result<GrayscaleImage, IoError> {
    let img = image::open(path)
        .map_err(|source| IoError::Image {
            path: path.display().to_string(),
            source,
        })?
        .into_luma8();
    GrayscaleImage::new(img.as_raw().clone(), img.width(), img.height(), resolution).map_err(|e| {
        IoError::Parse {
            path: path.display().to_string(),
            source: ParseError::MalformedRecord {
                line: 0,
                message: e.to_string(),
            },
        }
    })
}

pub fn save_image(img: &GrayscaleImage, path: &Path) -> Result<(), IoError> {
    let buffer =
        image::GrayImage::from_raw(img.width(), img.height(), img.pixels().to_vec()).expect("size");
    buffer.save(path).map_err(|source| IoError::Image {
        path: path.display().to_string(),
        source,
    })
}
