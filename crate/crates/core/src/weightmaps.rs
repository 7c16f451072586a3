//! Per-pixel weight maps for weighted correlation.
//!
//! Generated maps are clamped from below at 1, so a weight map only ever
//! emphasizes pixels relative to the uniform baseline; the amplitude is the
//! largest weight a generated map can hold.

use std::fmt;
use std::str::FromStr;

use crate::error::{arg, Error, Result};
use crate::image::{PointF, Template};

/// Elliptical Gaussian bump `A * exp(-((x-x0)^2 / 2sx^2 + (y-y0)^2 / 2sy^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    pub amplitude: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    /// Explicit center; `None` means the template anchor (or the geometric
    /// center for a bare map).
    pub center: Option<PointF>,
}

impl GaussianParams {
    pub fn new(amplitude: f64, sigma_x: f64, sigma_y: f64) -> Self {
        Self {
            amplitude,
            sigma_x,
            sigma_y,
            center: None,
        }
    }

    /// Eye-wide ellipse tuned for a 44x22 template.
    pub fn elliptical() -> Self {
        Self::new(5.0, 16.0, 8.0)
    }

    /// Iris-centered disc.
    pub fn circular() -> Self {
        Self::new(5.0, 8.0, 8.0)
    }

    fn validate(&self) -> Result<()> {
        check_amplitude(self.amplitude)?;
        check_positive("sigma_x", self.sigma_x)?;
        check_positive("sigma_y", self.sigma_y)
    }
}

/// Exponential decay away from the center with decay lengths `b` and `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialParams {
    pub amplitude: f64,
    pub b: f64,
    pub c: f64,
    pub center: Option<PointF>,
    /// Use `A * exp(-|dx/b + dy/c|)` (a ridge along the anti-diagonal)
    /// instead of the separable `A * exp(-(|dx|/b + |dy|/c))`.
    pub literal_form: bool,
}

impl ExponentialParams {
    pub fn new(amplitude: f64, b: f64, c: f64) -> Self {
        Self {
            amplitude,
            b,
            c,
            center: None,
            literal_form: false,
        }
    }

    fn validate(&self) -> Result<()> {
        check_amplitude(self.amplitude)?;
        check_positive("b", self.b)?;
        check_positive("c", self.c)
    }
}

impl Default for ExponentialParams {
    fn default() -> Self {
        Self::new(5.0, 10.0, 10.0)
    }
}

fn check_amplitude(a: f64) -> Result<()> {
    if a.is_finite() && a >= 1.0 {
        Ok(())
    } else {
        Err(arg(format!("amplitude must be finite and >= 1, got {a}")))
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(arg(format!("{name} must be finite and > 0, got {v}")))
    }
}

/// How a weight map is (or was) produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightSpec {
    Uniform,
    Gaussian(GaussianParams),
    Exponential(ExponentialParams),
}

impl WeightSpec {
    /// Preset names used on the command line and in reports.
    pub const PRESETS: [&'static str; 4] = ["uniform", "gauss-ellipse", "gauss-circle", "exp"];

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "uniform" => Ok(WeightSpec::Uniform),
            "gauss-ellipse" => Ok(WeightSpec::Gaussian(GaussianParams::elliptical())),
            "gauss-circle" => Ok(WeightSpec::Gaussian(GaussianParams::circular())),
            "exp" => Ok(WeightSpec::Exponential(ExponentialParams::default())),
            other => Err(arg(format!(
                "unknown weight kind `{other}` (expected one of {})",
                Self::PRESETS.join(", ")
            ))),
        }
    }

    pub fn kind(&self) -> WeightKind {
        match self {
            WeightSpec::Uniform => WeightKind::Uniform,
            WeightSpec::Gaussian(_) => WeightKind::Gaussian,
            WeightSpec::Exponential(_) => WeightKind::Exponential,
        }
    }

    /// Generates a `width x height` map, centered on `center` unless the
    /// parameters carry their own center.
    pub fn generate(&self, width: usize, height: usize, center: PointF) -> Result<WeightMap> {
        match *self {
            WeightSpec::Uniform => uniform_map(width, height),
            WeightSpec::Gaussian(mut p) => {
                p.center.get_or_insert(center);
                gaussian_map(width, height, p)
            }
            WeightSpec::Exponential(mut p) => {
                p.center.get_or_insert(center);
                exponential_map(width, height, p)
            }
        }
    }
}

impl fmt::Display for WeightSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightSpec::Uniform => write!(f, "uniform"),
            WeightSpec::Gaussian(p) => write!(
                f,
                "gaussian(A={}, sigma_x={}, sigma_y={})",
                p.amplitude, p.sigma_x, p.sigma_y
            ),
            WeightSpec::Exponential(p) => write!(
                f,
                "exponential(A={}, b={}, c={}{})",
                p.amplitude,
                p.b,
                p.c,
                if p.literal_form { ", literal" } else { "" }
            ),
        }
    }
}

impl FromStr for WeightSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::preset(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightKind {
    Uniform,
    Gaussian,
    Exponential,
    /// Loaded from a file or built from raw values.
    Custom,
}

/// Row-major grid of per-pixel weights, one per template pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    width: usize,
    height: usize,
    weights: Vec<f64>,
    spec: Option<WeightSpec>,
}

impl WeightMap {
    /// Map from raw values. Values must be finite; positivity is checked
    /// where the weights are used.
    pub fn from_weights(width: usize, height: usize, weights: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        if weights.len() != width * height {
            return Err(arg(format!(
                "expected {} weights for {width}x{height}, got {}",
                width * height,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(arg("weights must be finite"));
        }
        Ok(Self {
            width,
            height,
            weights,
            spec: None,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn spec(&self) -> Option<&WeightSpec> {
        self.spec.as_ref()
    }

    pub fn kind(&self) -> WeightKind {
        self.spec.map_or(WeightKind::Custom, |s| s.kind())
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.weights[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// True when every weight equals the first one.
    pub fn is_constant(&self) -> bool {
        let first = self.weights[0];
        self.weights.iter().all(|&w| w == first)
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        Err(arg(format!(
            "weight map dimensions must be positive, got {width}x{height}"
        )))
    } else {
        Ok(())
    }
}

fn geometric_center(width: usize, height: usize) -> PointF {
    PointF::new((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
}

fn tabulate(width: usize, height: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let mut weights = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            weights.push(f(x as f64, y as f64).max(1.0));
        }
    }
    weights
}

/// Every weight is exactly 1.
pub fn uniform_map(width: usize, height: usize) -> Result<WeightMap> {
    check_dims(width, height)?;
    Ok(WeightMap {
        width,
        height,
        weights: vec![1.0; width * height],
        spec: Some(WeightSpec::Uniform),
    })
}

/// `W(x, y) = max(1, A * exp(-((x-x0)^2 / (2 sx^2) + (y-y0)^2 / (2 sy^2))))`
/// at integer pixel coordinates.
pub fn gaussian_map(width: usize, height: usize, params: GaussianParams) -> Result<WeightMap> {
    check_dims(width, height)?;
    params.validate()?;
    let c = params
        .center
        .unwrap_or_else(|| geometric_center(width, height));
    let (two_sx2, two_sy2) = (
        2.0 * params.sigma_x * params.sigma_x,
        2.0 * params.sigma_y * params.sigma_y,
    );
    let weights = tabulate(width, height, |x, y| {
        let (dx, dy) = (x - c.x, y - c.y);
        params.amplitude * (-(dx * dx / two_sx2 + dy * dy / two_sy2)).exp()
    });
    Ok(WeightMap {
        width,
        height,
        weights,
        spec: Some(WeightSpec::Gaussian(GaussianParams {
            center: Some(c),
            ..params
        })),
    })
}

/// Separable `max(1, A * exp(-(|x-x0|/b + |y-y0|/c)))`, or with
/// `literal_form` the ridge `max(1, A * exp(-|(x-x0)/b + (y-y0)/c|))`.
pub fn exponential_map(
    width: usize,
    height: usize,
    params: ExponentialParams,
) -> Result<WeightMap> {
    check_dims(width, height)?;
    params.validate()?;
    let c = params
        .center
        .unwrap_or_else(|| geometric_center(width, height));
    let weights = if params.literal_form {
        tabulate(width, height, |x, y| {
            params.amplitude * (-((x - c.x) / params.b + (y - c.y) / params.c).abs()).exp()
        })
    } else {
        tabulate(width, height, |x, y| {
            params.amplitude * (-((x - c.x).abs() / params.b + (y - c.y).abs() / params.c)).exp()
        })
    };
    Ok(WeightMap {
        width,
        height,
        weights,
        spec: Some(WeightSpec::Exponential(ExponentialParams {
            center: Some(c),
            ..params
        })),
    })
}

/// Map with the template's dimensions, centered at its anchor. Generator
/// parameters are used as given, whatever the template size.
pub fn map_for_template(template: &Template, spec: &WeightSpec) -> Result<WeightMap> {
    spec.generate(template.width(), template.height(), template.anchor())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{Eye, GrayImage};

    // Scalar evaluations of the generator formulas, written out longhand.
    fn gauss_raw(a: f64, sx: f64, sy: f64, x0: f64, y0: f64, x: f64, y: f64) -> f64 {
        a * f64::exp(
            -((x - x0).powi(2) / (2.0 * sx.powi(2)) + (y - y0).powi(2) / (2.0 * sy.powi(2))),
        )
    }

    #[test]
    fn uniform_examples() {
        let m = uniform_map(3, 2).unwrap();
        assert_eq!(m.weights(), &[1.0; 6]);
        assert_eq!(uniform_map(1, 1).unwrap().weights(), &[1.0]);
        assert_eq!(uniform_map(44, 22).unwrap().sum(), 968.0);
        assert!(uniform_map(0, 2).is_err());
        assert!(m.is_constant());
    }

    #[test]
    fn gaussian_center_and_corner() {
        let m = gaussian_map(44, 22, GaussianParams::elliptical()).unwrap();
        let expected = 5.0 * f64::exp(-(0.25 / 512.0 + 0.25 / 128.0));
        assert!((m.get(21, 10) - expected).abs() < 1e-12);
        assert!((m.get(21, 10) - 4.987808).abs() < 1e-6);
        let raw = gauss_raw(5.0, 16.0, 8.0, 21.5, 10.5, 0.0, 0.0);
        assert!((raw - 0.856653).abs() < 1e-6, "raw corner {raw}");
        assert_eq!(m.get(0, 0), 1.0);
        assert_eq!(m.kind(), WeightKind::Gaussian);
    }

    #[test]
    fn gaussian_peak_at_odd_center() {
        let m = gaussian_map(5, 5, GaussianParams::new(3.5, 1.3, 0.7)).unwrap();
        assert_eq!(m.get(2, 2), 3.5);
    }

    #[test]
    fn gaussian_rejects_bad_sigma() {
        assert!(gaussian_map(4, 4, GaussianParams::new(5.0, 0.0, 1.0)).is_err());
        assert!(gaussian_map(4, 4, GaussianParams::new(5.0, 1.0, -1.0)).is_err());
        assert!(gaussian_map(4, 4, GaussianParams::new(0.5, 1.0, 1.0)).is_err());
    }

    #[test]
    fn exponential_examples() {
        let m = exponential_map(7, 5, ExponentialParams::default()).unwrap();
        assert_eq!(m.get(3, 2), 5.0);
        let m = exponential_map(44, 22, ExponentialParams::default()).unwrap();
        assert!((m.get(21, 10) - 5.0 * f64::exp(-0.1)).abs() < 1e-12);
        assert!((m.get(21, 10) - 4.524187).abs() < 1e-6);
        assert!(exponential_map(4, 4, ExponentialParams::new(5.0, 0.0, 1.0)).is_err());
        assert!(exponential_map(4, 4, ExponentialParams::new(5.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn literal_exponential_ridge() {
        // b == c: the exponent vanishes wherever dx == -dy.
        let p = ExponentialParams {
            literal_form: true,
            ..ExponentialParams::new(5.0, 3.0, 3.0)
        };
        let m = exponential_map(9, 9, p).unwrap();
        for k in 0..9 {
            assert_eq!(m.get(k, 8 - k), 5.0, "anti-diagonal cell {k}");
        }
        // ...and the main diagonal decays.
        assert!(m.get(0, 0) < 5.0);
    }

    #[test]
    fn map_follows_template_anchor() {
        let img = GrayImage::filled(10, 10, 3.0).unwrap();
        let t = Template::new(img.clone(), Eye::Left, 0);
        let m = map_for_template(&t, &WeightSpec::Uniform).unwrap();
        assert_eq!(m.weights().len(), 100);

        let t = Template::with_anchor(img, PointF::new(2.0, 7.0), Eye::Left, 0).unwrap();
        let m = map_for_template(&t, &WeightSpec::preset("gauss-circle").unwrap()).unwrap();
        assert_eq!(m.get(2, 7), 5.0);
    }

    #[test]
    fn circular_map_is_isotropic() {
        let t = Template::new(GrayImage::filled(44, 22, 0.0).unwrap(), Eye::Right, 0);
        let m = map_for_template(&t, &WeightSpec::Gaussian(GaussianParams::circular())).unwrap();
        // Equal distance along x and y from (21.5, 10.5) gives equal weight.
        assert!((m.get(25, 10) - m.get(21, 14)).abs() < 1e-12);
    }

    #[test]
    fn presets_parse() {
        for name in WeightSpec::PRESETS {
            assert!(WeightSpec::preset(name).is_ok());
        }
        assert!("triangle".parse::<WeightSpec>().is_err());
    }
}
