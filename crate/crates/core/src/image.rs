//! Raster, template and patch types shared by every other module.
//!
//! Coordinates follow raster order: the origin is the top-left pixel, `x`
//! grows to the right and `y` grows downward.

use std::fmt;

use crate::error::{arg, Error, Result};

/// Integer pixel position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Point {
    pub x: usize,
    pub y: usize,
}

impl Point {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Continuous position, used for template anchors and detected centers.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PointF {
    pub x: f64,
    pub y: f64,
}

impl PointF {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: PointF) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<Point> for PointF {
    fn from(p: Point) -> Self {
        PointF::new(p.x as f64, p.y as f64)
    }
}

/// Axis-aligned integer rectangle `[x, x + width) × [y, y + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub const fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn right(&self) -> usize {
        self.x + self.width
    }

    pub fn bottom(&self) -> usize {
        self.y + self.height
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }
}

/// Which eye a template depicts, from the subject's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Eye {
    Right,
    Left,
}

impl Eye {
    pub const BOTH: [Eye; 2] = [Eye::Right, Eye::Left];

    pub fn as_str(&self) -> &'static str {
        match self {
            Eye::Right => "right",
            Eye::Left => "left",
        }
    }
}

impl fmt::Display for Eye {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Eye {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "right" => Ok(Eye::Right),
            "left" => Ok(Eye::Left),
            other => Err(arg(format!("unknown eye label `{other}`"))),
        }
    }
}

/// Grayscale raster with real-valued intensities in `[0, 255]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(arg(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width
            .checked_mul(height)
            .ok_or_else(|| arg("image dimensions overflow"))?;
        if pixels.len() != expected {
            return Err(arg(format!(
                "expected {expected} pixels for {width}x{height}, got {}",
                pixels.len()
            )));
        }
        if let Some(i) = pixels
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 255.0)
        {
            return Err(Error::Range(format!(
                "pixel {i} has intensity {} outside [0, 255]",
                pixels[i]
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, bytes.iter().map(|&b| f64::from(b)).collect())
    }

    /// Image filled with a single intensity.
    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width.saturating_mul(height)])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(0, 0, self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    /// Copy of the sub-rectangle `rect`.
    pub fn crop(&self, rect: Rect) -> Result<GrayImage> {
        let patch = extract_patch(self, Point::new(rect.x, rect.y), rect.width, rect.height)?;
        GrayImage::new(rect.width, rect.height, patch.into_values())
    }

    /// Pixel mean, accumulated in double precision.
    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }
}

/// Flat list of intensities taken from a rectangular window.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    values: Vec<f64>,
}

impl Patch {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(arg("patch must contain at least one value"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(arg("patch values must be finite"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl From<&GrayImage> for Patch {
    fn from(image: &GrayImage) -> Self {
        Patch {
            values: image.pixels.clone(),
        }
    }
}

/// Returns the `width * height` intensities of the window at `top_left`,
/// in row-major order.
pub fn extract_patch(
    image: &GrayImage,
    top_left: Point,
    width: usize,
    height: usize,
) -> Result<Patch> {
    if width == 0 || height == 0 {
        return Err(arg(format!(
            "window dimensions must be positive, got {width}x{height}"
        )));
    }
    let right = top_left.x.checked_add(width);
    if right.is_none_or(|r| r > image.width) {
        return Err(Error::Range(format!(
            "window x range {}..{} exceeds image width {}",
            top_left.x,
            top_left.x.saturating_add(width),
            image.width
        )));
    }
    let bottom = top_left.y.checked_add(height);
    if bottom.is_none_or(|b| b > image.height) {
        return Err(Error::Range(format!(
            "window y range {}..{} exceeds image height {}",
            top_left.y,
            top_left.y.saturating_add(height),
            image.height
        )));
    }
    let mut values = Vec::with_capacity(width * height);
    for y in top_left.y..top_left.y + height {
        values.extend_from_slice(&image.row(y)[top_left.x..top_left.x + width]);
    }
    Ok(Patch { values })
}

/// Eye template: an image patch plus the anchor that marks the eye center.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    image: GrayImage,
    anchor: PointF,
    label: Eye,
    id: usize,
}

impl Template {
    /// Template anchored at its geometric center `((w - 1) / 2, (h - 1) / 2)`.
    pub fn new(image: GrayImage, label: Eye, id: usize) -> Self {
        let anchor = PointF::new(
            (image.width() as f64 - 1.0) / 2.0,
            (image.height() as f64 - 1.0) / 2.0,
        );
        Self {
            image,
            anchor,
            label,
            id,
        }
    }

    pub fn with_anchor(image: GrayImage, anchor: PointF, label: Eye, id: usize) -> Result<Self> {
        let inside = |v: f64, extent: usize| v.is_finite() && v >= 0.0 && v < extent as f64;
        if !inside(anchor.x, image.width()) || !inside(anchor.y, image.height()) {
            return Err(Error::Range(format!(
                "anchor ({}, {}) outside {}x{} template",
                anchor.x,
                anchor.y,
                image.width(),
                image.height()
            )));
        }
        Ok(Self {
            image,
            anchor,
            label,
            id,
        })
    }

    pub fn image(&self) -> &GrayImage {
        &self.image
    }

    pub fn anchor(&self) -> PointF {
        self.anchor
    }

    pub fn label(&self) -> Eye {
        self.label
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn with_id(mut self, id: usize) -> Self {
        self.id = id;
        self
    }
}
