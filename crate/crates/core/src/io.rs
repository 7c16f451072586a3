//! File formats: binary PGM images, annotation CSV, weight map text and
//! score heat maps.
//!
//! Readers are strict: anything after the declared payload is an error.
//! Writers are canonical, so equal values always serialize to equal bytes.

use std::fmt::Write as _;

use crate::error::{arg, Error, Result};
use crate::image::{GrayImage, Point};
use crate::synth::Annotation;
use crate::weightmaps::WeightMap;

pub const ANNOTATION_HEADER: &str = "image_path,right_eye_x,right_eye_y,left_eye_x,left_eye_y";

fn parse_at(offset: usize, message: impl Into<String>) -> Error {
    Error::ParseAt {
        offset,
        message: message.into(),
    }
}

fn parse_line(line: usize, message: impl Into<String>) -> Error {
    Error::ParseLine {
        line,
        message: message.into(),
    }
}

/// Parses a binary (`P5`) PGM with `maxval <= 255`. Header comments
/// (`#` to end of line) may appear between any two header tokens.
pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(parse_at(0, "missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (slot, name) in ["width", "height", "maxval"].iter().enumerate() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(parse_at(pos, format!("header ends before {name}"))),
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        let token = &bytes[start..pos];
        if !token.iter().all(u8::is_ascii_digit) {
            return Err(parse_at(
                start,
                format!(
                    "{name} `{}` is not a number",
                    String::from_utf8_lossy(token)
                ),
            ));
        }
        fields[slot] = std::str::from_utf8(token)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_at(start, format!("{name} out of range")))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(parse_at(
            pos,
            format!("zero image dimension {width}x{height}"),
        ));
    }
    if maxval == 0 || maxval > 255 {
        return Err(parse_at(pos, format!("maxval {maxval} not in 1..=255")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(parse_at(pos, "expected one whitespace byte after maxval")),
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| parse_at(pos, "image dimensions overflow"))?;
    let raster = &bytes[pos..];
    if raster.len() < n {
        return Err(parse_at(
            bytes.len(),
            format!("truncated raster: {} of {n} bytes", raster.len()),
        ));
    }
    if raster.len() > n {
        return Err(parse_at(
            pos + n,
            format!("{} trailing bytes", raster.len() - n),
        ));
    }
    GrayImage::from_bytes(width, height, raster)
}

/// Canonical `P5\n<w> <h>\n255\n` PGM; intensities are rounded.
pub fn write_pgm(image: &GrayImage) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", image.width(), image.height());
    let mut out = Vec::with_capacity(header.len() + image.pixels().len());
    out.extend_from_slice(header.as_bytes());
    out.extend(
        image
            .pixels()
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8),
    );
    out
}

fn split_lines(text: &str) -> Vec<&str> {
    let mut lines: Vec<&str> = text.split('\n').collect();
    if lines.last() == Some(&"") {
        lines.pop();
    }
    lines
        .into_iter()
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .collect()
}

fn parse_coord(field: &str, line: usize, name: &str) -> Result<usize> {
    if field.is_empty() || !field.bytes().all(|b| b.is_ascii_digit()) {
        return Err(parse_line(
            line,
            format!("{name} `{field}` is not a non-negative integer"),
        ));
    }
    field
        .parse()
        .map_err(|_| parse_line(line, format!("{name} `{field}` out of range")))
}

pub fn read_annotations(text: &str) -> Result<Vec<Annotation>> {
    let lines = split_lines(text);
    match lines.first() {
        Some(&h) if h == ANNOTATION_HEADER => {}
        Some(h) => return Err(parse_line(1, format!("bad header `{h}`"))),
        None => return Err(parse_line(1, "missing header")),
    }
    let mut out = Vec::with_capacity(lines.len() - 1);
    for (i, line) in lines.iter().enumerate().skip(1) {
        let n = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(parse_line(
                n,
                format!("expected 5 columns, found {}", fields.len()),
            ));
        }
        if fields[0].is_empty() {
            return Err(parse_line(n, "empty image_path"));
        }
        out.push(Annotation {
            image_id: fields[0].to_string(),
            right_eye: Point::new(
                parse_coord(fields[1], n, "right_eye_x")?,
                parse_coord(fields[2], n, "right_eye_y")?,
            ),
            left_eye: Point::new(
                parse_coord(fields[3], n, "left_eye_x")?,
                parse_coord(fields[4], n, "left_eye_y")?,
            ),
        });
    }
    Ok(out)
}

pub fn write_annotations(annotations: &[Annotation]) -> Result<String> {
    let mut out = String::from(ANNOTATION_HEADER);
    out.push('\n');
    for a in annotations {
        if a.image_id.is_empty() || a.image_id.contains([',', '\n', '\r']) {
            return Err(arg(format!(
                "image path `{}` cannot be written to CSV",
                a.image_id
            )));
        }
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            a.image_id, a.right_eye.x, a.right_eye.y, a.left_eye.x, a.left_eye.y
        );
    }
    Ok(out)
}

/// At least nine significant digits: fixed point with 8 decimals for
/// values that round to 1 or more, scientific notation below that.
fn format_weight(v: f64) -> String {
    let fixed = format!("{v:.8}");
    let digits = fixed.trim_start_matches('-');
    if v == 0.0 || !digits.starts_with("0.") {
        fixed
    } else {
        format!("{v:.8e}")
    }
}

pub fn write_weightmap(map: &WeightMap) -> String {
    let mut out = format!("{} {}\n", map.width(), map.height());
    for row in map.weights().chunks(map.width()) {
        let cells: Vec<String> = row.iter().map(|&v| format_weight(v)).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_weightmap(text: &str) -> Result<WeightMap> {
    let lines = split_lines(text);
    let dims: Vec<&str> = lines
        .first()
        .ok_or_else(|| parse_line(1, "missing dimension line"))?
        .split_ascii_whitespace()
        .collect();
    let parse_dim = |s: &str| s.parse::<usize>().ok().filter(|&d| d > 0);
    let (width, height) = match dims.as_slice() {
        [w, h] => match (parse_dim(w), parse_dim(h)) {
            (Some(w), Some(h)) => (w, h),
            _ => return Err(parse_line(1, format!("bad dimensions `{} {}`", w, h))),
        },
        _ => return Err(parse_line(1, "dimension line must be `width height`")),
    };
    if lines.len() != height + 1 {
        return Err(parse_line(
            lines.len().min(height + 1) + 1,
            format!("expected {height} rows, found {}", lines.len() - 1),
        ));
    }
    let mut weights = Vec::with_capacity(width * height);
    for (i, line) in lines.iter().enumerate().skip(1) {
        let before = weights.len();
        for token in line.split_ascii_whitespace() {
            let v: f64 = token
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| parse_line(i + 1, format!("bad weight `{token}`")))?;
            weights.push(v);
        }
        if weights.len() - before != width {
            return Err(parse_line(
                i + 1,
                format!("expected {width} values, found {}", weights.len() - before),
            ));
        }
    }
    WeightMap::from_weights(width, height, weights)
}

/// Rescales finite scores affinely onto `[0, 255]` (min to 0, max to 255).
/// Missing or non-finite cells become 0; a constant field becomes 128.
pub fn write_heatmap(scores: &[Option<f64>], width: usize, height: usize) -> Result<GrayImage> {
    if scores.len() != width * height {
        return Err(arg(format!(
            "{} scores for a {width}x{height} heat map",
            scores.len()
        )));
    }
    let finite = || scores.iter().filter_map(|s| s.filter(|v| v.is_finite()));
    let lo = finite().fold(f64::INFINITY, f64::min);
    let hi = finite().fold(f64::NEG_INFINITY, f64::max);
    let pixels = scores
        .iter()
        .map(|s| match s.filter(|v| v.is_finite()) {
            None => 0.0,
            Some(_) if hi == lo => 128.0,
            Some(v) => ((v - lo) / (hi - lo) * 255.0).round(),
        })
        .collect();
    GrayImage::new(width, height, pixels)
}

/// Heat map of a weight map's values.
pub fn weightmap_heatmap(map: &WeightMap) -> Result<GrayImage> {
    let cells: Vec<Option<f64>> = map.weights().iter().map(|&w| Some(w)).collect();
    write_heatmap(&cells, map.width(), map.height())
}
