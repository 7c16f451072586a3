//! Sliding-window weighted correlation from precomputed sums.
//!
//! Per template the X side of the score is constant, so it is folded into
//! [`TemplateStats`] and a coefficient table `W * (X - mean(X))`. Per window
//! the score then needs only `sum(Y)`, `sum(W Y)`, `sum(W Y^2)` and the cross
//! term `sum(W (X - mean(X)) Y)`:
//!
//! ```text
//! num  = sum(c Y) - mean(Y) * sum(c)
//! ssY  = sum(W Y^2) - 2 mean(Y) sum(W Y) + mean(Y)^2 sum(W)
//! r    = num / (sqrt(ssX) * sqrt(ssY))
//! ```
//!
//! `sum(Y)` comes from a summed-area table. The weighted sums are
//! accumulated for a whole row of windows at once, one template cell at a
//! time, which turns the inner loop into a contiguous multiply-add. With a
//! constant weight map the weighted sums also come from summed-area tables.
//!
//! All sums run on the image minus its mean, which keeps the expansion above
//! from cancelling catastrophically. Windows whose variance is still small
//! relative to their magnitude are re-scored with the reference formula, so
//! the set of skipped windows matches the reference matcher exactly. So are
//! the windows that come within rounding of the best score, which makes the
//! argmax identical too.

use rayon::prelude::*;

use crate::error::{arg, Error, Result};
use crate::image::{GrayImage, Point, Rect, Template};
use crate::matcher::{search_area, weighted_r, MatchResult, ScoreField, VARIANCE_EPSILON};
use crate::weightmaps::WeightMap;

/// Windows with `ssY < RESCORE_RATIO * sum(W Yc^2)` are re-scored directly.
const RESCORE_RATIO: f64 = 1e-4;

/// Windows within this (relative) distance of the best score are re-scored
/// directly before the argmax is taken.
const FINALIST_MARGIN: f64 = 1e-8;

/// X-side constants of the weighted correlation for one (template, map) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemplateStats {
    pub sum_w: f64,
    pub sum_wx: f64,
    pub sum_wxx: f64,
    /// Unweighted template mean.
    pub mean_x: f64,
    /// `sum(W (X - mean_x)^2)`.
    pub template_ss: f64,
}

pub fn precompute_template(template: &Template, map: &WeightMap) -> Result<TemplateStats> {
    if map.width() != template.width() || map.height() != template.height() {
        return Err(arg(format!(
            "weight map is {}x{} but template is {}x{}",
            map.width(),
            map.height(),
            template.width(),
            template.height()
        )));
    }
    let xs = template.image().pixels();
    let ws = map.weights();
    let mean_x = xs.iter().sum::<f64>() / xs.len() as f64;
    let (mut sum_w, mut sum_wx, mut sum_wxx, mut template_ss) = (0.0, 0.0, 0.0, 0.0);
    for (&x, &w) in xs.iter().zip(ws) {
        let dx = x - mean_x;
        sum_w += w;
        sum_wx += w * x;
        sum_wxx += w * x * x;
        template_ss += w * dx * dx;
    }
    if template_ss / sum_w < VARIANCE_EPSILON {
        return Err(Error::DegenerateTemplate {
            threshold: VARIANCE_EPSILON,
        });
    }
    Ok(TemplateStats {
        sum_w,
        sum_wx,
        sum_wxx,
        mean_x,
        template_ss,
    })
}

/// Summed-area table with a zero top row and left column.
struct SummedArea {
    stride: usize,
    table: Vec<f64>,
}

impl SummedArea {
    fn new(values: &[f64], width: usize, height: usize) -> Self {
        let stride = width + 1;
        let mut table = vec![0.0; stride * (height + 1)];
        for y in 0..height {
            let mut row_sum = 0.0;
            for x in 0..width {
                row_sum += values[y * width + x];
                table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row_sum;
            }
        }
        Self { stride, table }
    }

    #[inline]
    fn sum(&self, x: usize, y: usize, w: usize, h: usize) -> f64 {
        let s = self.stride;
        self.table[(y + h) * s + x + w] - self.table[y * s + x + w] - self.table[(y + h) * s + x]
            + self.table[y * s + x]
    }
}

/// Per-window sums over every placement in a search area.
///
/// Sums are held relative to `offset` (the search-area mean); the accessors
/// return them in image units.
#[derive(Debug, Clone, PartialEq)]
pub struct SlidingSums {
    pub origin: Point,
    pub cols: usize,
    pub rows: usize,
    pub offset: f64,
    n: usize,
    sum_w: f64,
    sum_y: Vec<f64>,
    sum_wy: Vec<f64>,
    sum_wyy: Vec<f64>,
    sum_cy: Vec<f64>,
}

impl SlidingSums {
    pub fn len(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `sum(Y)` over window `i` (row-major index).
    pub fn sum_y(&self, i: usize) -> f64 {
        self.sum_y[i] + self.n as f64 * self.offset
    }

    pub fn mean_y(&self, i: usize) -> f64 {
        self.sum_y[i] / self.n as f64 + self.offset
    }

    pub fn sum_wy(&self, i: usize) -> f64 {
        self.sum_wy[i] + self.offset * self.sum_w
    }

    pub fn sum_wyy(&self, i: usize) -> f64 {
        let g = self.offset;
        self.sum_wyy[i] + 2.0 * g * self.sum_wy[i] + g * g * self.sum_w
    }
}

/// `acc[x] += sum_j coef[j] * row[x + j]`, four taps per pass over `acc`.
#[inline(always)]
fn correlate_row(acc: &mut [f64], row: &[f64], coef: &[f64]) {
    let n = acc.len();
    let mut quads = coef.chunks_exact(4);
    let mut j = 0;
    for q in &mut quads {
        let (c0, c1, c2, c3) = (q[0], q[1], q[2], q[3]);
        let r0 = &row[j..j + n];
        let r1 = &row[j + 1..j + 1 + n];
        let r2 = &row[j + 2..j + 2 + n];
        let r3 = &row[j + 3..j + 3 + n];
        for ((((a, &v0), &v1), &v2), &v3) in acc.iter_mut().zip(r0).zip(r1).zip(r2).zip(r3) {
            *a += c0 * v0 + c1 * v1 + c2 * v2 + c3 * v3;
        }
        j += 4;
    }
    for &c in quads.remainder() {
        for (a, &v) in acc.iter_mut().zip(&row[j..j + n]) {
            *a += c * v;
        }
        j += 1;
    }
}

/// Adds one row of windows' correlation with `taps` (a `tw`-wide table)
/// into `acc`, reading `values` with row stride `stride`.
fn window_row(acc: &mut [f64], values: &[f64], stride: usize, y: usize, taps: &[f64], tw: usize) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2.
        unsafe { window_row_avx2(acc, values, stride, y, taps, tw) };
        return;
    }
    window_row_generic(acc, values, stride, y, taps, tw);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn window_row_avx2(
    acc: &mut [f64],
    values: &[f64],
    stride: usize,
    y: usize,
    taps: &[f64],
    tw: usize,
) {
    window_row_generic(acc, values, stride, y, taps, tw);
}

#[inline(always)]
fn window_row_generic(
    acc: &mut [f64],
    values: &[f64],
    stride: usize,
    y: usize,
    taps: &[f64],
    tw: usize,
) {
    let span = tw - 1 + acc.len();
    for (r, row_taps) in taps.chunks_exact(tw).enumerate() {
        let base = (y + r) * stride;
        correlate_row(acc, &values[base..base + span], row_taps);
    }
}

/// Image-side sums for one image, search area and weight map.
///
/// They do not depend on template content, so one set serves every
/// template that shares the map.
#[derive(Debug, Clone)]
pub struct ImageSums {
    area: Rect,
    map: WeightMap,
    /// Search-area pixels, row-major.
    raw: Vec<f64>,
    /// `raw - offset`.
    centered: Vec<f64>,
    offset: f64,
    cols: usize,
    rows: usize,
    sum_y: Vec<f64>,
    sum_wy: Vec<f64>,
    sum_wyy: Vec<f64>,
}

impl ImageSums {
    /// Validates like [`crate::matcher::match_template`]; `template` only
    /// supplies the window size.
    pub fn new(
        image: &GrayImage,
        template: &Template,
        map: &WeightMap,
        region: Option<Rect>,
    ) -> Result<Self> {
        let area = search_area(image, template, map, region)?;
        let (tw, th) = (map.width(), map.height());
        let (aw, ah) = (area.width, area.height);
        let cols = aw - tw + 1;
        let rows = ah - th + 1;

        let mut raw = Vec::with_capacity(aw * ah);
        for y in area.y..area.bottom() {
            raw.extend_from_slice(&image.row(y)[area.x..area.right()]);
        }
        let offset = raw.iter().sum::<f64>() / raw.len() as f64;
        let centered: Vec<f64> = raw.iter().map(|v| v - offset).collect();
        let squared: Vec<f64> = centered.iter().map(|v| v * v).collect();

        let sat = SummedArea::new(&centered, aw, ah);
        let box_sums = |t: &SummedArea| {
            let mut out = Vec::with_capacity(cols * rows);
            for y in 0..rows {
                for x in 0..cols {
                    out.push(t.sum(x, y, tw, th));
                }
            }
            out
        };
        let sum_y = box_sums(&sat);

        let (sum_wy, sum_wyy) = if map.is_constant() {
            let w = map.weights()[0];
            let sq = box_sums(&SummedArea::new(&squared, aw, ah));
            (
                sum_y.iter().map(|v| w * v).collect(),
                sq.iter().map(|v| w * v).collect(),
            )
        } else {
            let correlate = |values: &[f64]| {
                let mut out = vec![0.0; cols * rows];
                out.par_chunks_mut(cols)
                    .enumerate()
                    .for_each(|(y, acc)| window_row(acc, values, aw, y, map.weights(), tw));
                out
            };
            (correlate(&centered), correlate(&squared))
        };

        Ok(Self {
            area,
            map: map.clone(),
            raw,
            centered,
            offset,
            cols,
            rows,
            sum_y,
            sum_wy,
            sum_wyy,
        })
    }

    pub fn map(&self) -> &WeightMap {
        &self.map
    }

    pub fn area(&self) -> Rect {
        self.area
    }

    fn check_template(&self, template: &Template) -> Result<()> {
        if (template.width(), template.height()) != (self.map.width(), self.map.height()) {
            return Err(arg(format!(
                "template is {}x{} but these sums are for {}x{} windows",
                template.width(),
                template.height(),
                self.map.width(),
                self.map.height()
            )));
        }
        Ok(())
    }

    /// `sum(c Y)` over every window, on the centered image.
    fn cross_term(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols * self.rows];
        out.par_chunks_mut(self.cols)
            .enumerate()
            .for_each(|(y, acc)| {
                window_row(
                    acc,
                    &self.centered,
                    self.area.width,
                    y,
                    coeffs,
                    self.map.width(),
                )
            });
        out
    }

    fn reference(&self, template: &Template, i: usize, window: &mut Vec<f64>) -> Option<f64> {
        let (tw, th) = (self.map.width(), self.map.height());
        let (x, y) = (i % self.cols, i / self.cols);
        window.clear();
        for row in y..y + th {
            let start = row * self.area.width + x;
            window.extend_from_slice(&self.raw[start..start + tw]);
        }
        weighted_r(template.image().pixels(), window, self.map.weights())
    }

    /// Weighted correlation of `template` at every placement.
    pub fn score_field(&self, template: &Template) -> Result<ScoreField> {
        self.check_template(template)?;
        let origin = Point::new(self.area.x, self.area.y);
        let (cols, rows) = (self.cols, self.rows);
        let stats = match precompute_template(template, &self.map) {
            Ok(s) => s,
            Err(Error::DegenerateTemplate { .. }) => {
                return Ok(ScoreField {
                    origin,
                    cols,
                    rows,
                    scores: vec![None; cols * rows],
                })
            }
            Err(e) => return Err(e),
        };

        let coeffs = coefficients(template, &self.map, stats.mean_x);
        let sum_c: f64 = coeffs.iter().sum();
        let sum_cy = self.cross_term(&coeffs);
        let n = (self.map.width() * self.map.height()) as f64;
        let sqrt_ssx = stats.template_ss.sqrt();

        let mut window = Vec::with_capacity(self.map.weights().len());
        let mut scores = Vec::with_capacity(cols * rows);
        for (i, &cy) in sum_cy.iter().enumerate() {
            let mean = self.sum_y[i] / n;
            let a = self.sum_wy[i];
            let b = self.sum_wyy[i];
            let ss_y = b - 2.0 * mean * a + mean * mean * stats.sum_w;
            if ss_y < RESCORE_RATIO * b || ss_y < 1e-6 * stats.sum_w {
                scores.push(self.reference(template, i, &mut window));
                continue;
            }
            let num = cy - mean * sum_c;
            scores.push(Some(num / (sqrt_ssx * ss_y.sqrt())));
        }

        // Near-ties are settled with the reference scores, so the argmax and
        // its tie-break agree with the reference matcher exactly.
        if let Some(top) = scores.iter().flatten().copied().reduce(f64::max) {
            let floor = top - FINALIST_MARGIN * top.abs().max(1.0);
            for (i, score) in scores.iter_mut().enumerate() {
                if score.is_some_and(|r| r >= floor) {
                    *score = self.reference(template, i, &mut window);
                }
            }
        }

        Ok(ScoreField {
            origin,
            cols,
            rows,
            scores,
        })
    }

    pub fn best(&self, template: &Template) -> Result<MatchResult> {
        self.score_field(template)?.best(template)
    }

    /// All per-window sums for `template`, for inspection.
    pub fn window_sums(&self, template: &Template) -> Result<SlidingSums> {
        self.check_template(template)?;
        let xs = template.image().pixels();
        let mean_x = xs.iter().sum::<f64>() / xs.len() as f64;
        let coeffs = coefficients(template, &self.map, mean_x);
        Ok(SlidingSums {
            origin: Point::new(self.area.x, self.area.y),
            cols: self.cols,
            rows: self.rows,
            offset: self.offset,
            n: xs.len(),
            sum_w: self.map.sum(),
            sum_y: self.sum_y.clone(),
            sum_wy: self.sum_wy.clone(),
            sum_wyy: self.sum_wyy.clone(),
            sum_cy: self.cross_term(&coeffs),
        })
    }
}

fn coefficients(template: &Template, map: &WeightMap, mean_x: f64) -> Vec<f64> {
    template
        .image()
        .pixels()
        .iter()
        .zip(map.weights())
        .map(|(&x, &w)| w * (x - mean_x))
        .collect()
}

/// Weighted correlation at every placement, from precomputed sums.
pub fn fast_score_field(
    image: &GrayImage,
    template: &Template,
    map: &WeightMap,
    region: Option<Rect>,
) -> Result<ScoreField> {
    ImageSums::new(image, template, map, region)?.score_field(template)
}

/// Same contract as [`crate::matcher::match_template`], computed from sums.
pub fn fast_match(
    image: &GrayImage,
    template: &Template,
    map: &WeightMap,
    region: Option<Rect>,
) -> Result<MatchResult> {
    fast_score_field(image, template, map, region)?.best(template)
}

/// Per-window sums for inspection and testing.
pub fn window_sums(
    image: &GrayImage,
    template: &Template,
    map: &WeightMap,
    region: Option<Rect>,
) -> Result<SlidingSums> {
    ImageSums::new(image, template, map, region)?.window_sums(template)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{Eye, PointF};
    use crate::matcher::{match_template, score_field};
    use crate::weightmaps::{uniform_map, WeightSpec};

    fn tpl(values: &[f64], w: usize, h: usize) -> Template {
        Template::new(
            GrayImage::new(w, h, values.to_vec()).unwrap(),
            Eye::Right,
            0,
        )
    }

    fn textured(width: usize, height: usize, seed: u64) -> GrayImage {
        let mut s = seed;
        let pixels = (0..width * height)
            .map(|_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((s >> 33) % 256) as f64
            })
            .collect();
        GrayImage::new(width, height, pixels).unwrap()
    }

    #[test]
    fn stats_uniform() {
        let t = tpl(&[1., 2., 3., 4.], 2, 2);
        let s = precompute_template(&t, &uniform_map(2, 2).unwrap()).unwrap();
        assert_eq!(s.sum_w, 4.0);
        assert_eq!(s.sum_wx, 10.0);
        assert_eq!(s.mean_x, 2.5);
        assert_eq!(s.template_ss, 5.0);
    }

    #[test]
    fn stats_weighted() {
        let t = tpl(&[1., 2., 3., 4.], 2, 2);
        let m = WeightMap::from_weights(2, 2, vec![1., 1., 1., 5.]).unwrap();
        let s = precompute_template(&t, &m).unwrap();
        assert_eq!(s.sum_w, 8.0);
        assert_eq!(s.sum_wx, 26.0);
        assert_eq!(s.sum_wxx, 94.0);
        let expanded = s.sum_wxx - 2.0 * s.mean_x * s.sum_wx + s.mean_x * s.mean_x * s.sum_w;
        assert!((s.template_ss - expanded).abs() <= 1e-9 * s.template_ss);
    }

    #[test]
    fn constant_template_is_degenerate() {
        let t = tpl(&[9.0; 6], 3, 2);
        assert!(matches!(
            precompute_template(&t, &uniform_map(3, 2).unwrap()),
            Err(Error::DegenerateTemplate { .. })
        ));
        let img = textured(10, 10, 1);
        assert_eq!(
            fast_match(&img, &t, &uniform_map(3, 2).unwrap(), None),
            Err(Error::NoValidWindow)
        );
    }

    #[test]
    fn planted_recovery() {
        let img = textured(48, 40, 21);
        let t = Template::new(img.crop(Rect::new(12, 7, 11, 9)).unwrap(), Eye::Left, 3);
        for name in WeightSpec::PRESETS {
            let m = WeightSpec::preset(name)
                .unwrap()
                .generate(11, 9, t.anchor())
                .unwrap();
            let fast = fast_match(&img, &t, &m, None).unwrap();
            let naive = match_template(&img, &t, &m, None).unwrap();
            assert_eq!(fast.top_left, Point::new(12, 7));
            assert_eq!(fast.top_left, naive.top_left);
            assert!((fast.score.value() - 1.0).abs() < 1e-9);
            assert_eq!(fast.center, PointF::new(17.0, 11.0));
        }
    }

    #[test]
    fn skip_set_matches_reference() {
        // Flat blocks produce degenerate windows; a noisy stripe does not.
        let mut px = vec![40.0; 30 * 24];
        for y in 0..24 {
            for x in 0..30 {
                if x >= 18 {
                    px[y * 30 + x] = ((x * 37 + y * 11) % 200) as f64;
                } else if y >= 12 {
                    px[y * 30 + x] = 200.0;
                }
            }
        }
        let img = GrayImage::new(30, 24, px).unwrap();
        let t = Template::new(textured(5, 4, 9), Eye::Left, 0);
        for name in WeightSpec::PRESETS {
            let m = WeightSpec::preset(name)
                .unwrap()
                .generate(5, 4, t.anchor())
                .unwrap();
            let fast = fast_score_field(&img, &t, &m, None).unwrap();
            let naive = score_field(&img, &t, &m, None).unwrap();
            let fast_mask: Vec<bool> = fast.scores.iter().map(Option::is_none).collect();
            let naive_mask: Vec<bool> = naive.scores.iter().map(Option::is_none).collect();
            assert_eq!(fast_mask, naive_mask);
            assert!(naive_mask.iter().any(|&m| m));
            for (a, b) in fast.scores.iter().zip(&naive.scores) {
                if let (Some(a), Some(b)) = (a, b) {
                    assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn sliding_sums_match_direct() {
        let img = textured(26, 19, 4);
        let t = Template::new(textured(7, 5, 5), Eye::Left, 0);
        for name in WeightSpec::PRESETS {
            let m = WeightSpec::preset(name)
                .unwrap()
                .generate(7, 5, t.anchor())
                .unwrap();
            let region = Rect::new(2, 3, 20, 14);
            let sums = window_sums(&img, &t, &m, Some(region)).unwrap();
            assert_eq!((sums.cols, sums.rows), (14, 10));
            for i in 0..sums.len() {
                let (x0, y0) = (2 + i % 14, 3 + i / 14);
                let (mut sy, mut swy, mut swyy) = (0.0, 0.0, 0.0);
                for r in 0..5 {
                    for c in 0..7 {
                        let v = img.get(x0 + c, y0 + r);
                        let w = m.get(c, r);
                        sy += v;
                        swy += w * v;
                        swyy += w * v * v;
                    }
                }
                assert!((sums.sum_y(i) - sy).abs() <= 1e-9 * sy.abs());
                assert!((sums.mean_y(i) - sy / 35.0).abs() <= 1e-9 * (sy / 35.0).abs());
                assert!((sums.sum_wy(i) - swy).abs() <= 1e-9 * swy.abs());
                assert!((sums.sum_wyy(i) - swyy).abs() <= 1e-9 * swyy.abs());
            }
        }
    }

    #[test]
    fn region_and_errors_match_reference() {
        let img = textured(20, 20, 8);
        let t = Template::new(textured(21, 2, 1), Eye::Left, 0);
        let m = uniform_map(21, 2).unwrap();
        assert_eq!(
            fast_match(&img, &t, &m, None).unwrap_err(),
            match_template(&img, &t, &m, None).unwrap_err()
        );
        let t = Template::new(textured(4, 4, 3), Eye::Left, 0);
        let m = uniform_map(4, 4).unwrap();
        let region = Some(Rect::new(5, 6, 9, 7));
        assert_eq!(
            fast_match(&img, &t, &m, region).unwrap().top_left,
            match_template(&img, &t, &m, region).unwrap().top_left
        );
    }
}
