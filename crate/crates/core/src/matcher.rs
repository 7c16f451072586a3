//! Reference correlation scores and exhaustive sliding-window search.
//!
//! Everything here evaluates the correlation formulas literally, window by
//! window. It is the oracle the accelerated search in `fastmatch` is
//! checked against.

use std::cmp::Ordering;

use crate::error::{arg, Error, Result};
use crate::fastmatch;
use crate::image::{extract_patch, GrayImage, Patch, Point, PointF, Rect, Template};
use crate::weightmaps::WeightMap;

/// Windows (and templates) whose variance per unit weight falls below this
/// are degenerate: their correlation is undefined.
pub const VARIANCE_EPSILON: f64 = 1e-12;

/// Correlation coefficient in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct MatchScore(f64);

impl MatchScore {
    pub fn new(r: f64) -> Result<Self> {
        if r.is_finite() && r.abs() <= 1.0 + 1e-12 {
            Ok(Self(r))
        } else {
            Err(Error::Range(format!("correlation {r} outside [-1, 1]")))
        }
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// Best window found for one template.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    pub top_left: Point,
    /// `top_left + anchor`: the detected eye location.
    pub center: PointF,
    pub score: MatchScore,
    pub template_id: usize,
}

impl MatchResult {
    pub(crate) fn new(top_left: Point, template: &Template, r: f64) -> Self {
        let a = template.anchor();
        Self {
            top_left,
            center: PointF::new(top_left.x as f64 + a.x, top_left.y as f64 + a.y),
            score: MatchScore(r),
            template_id: template.id(),
        }
    }

    /// Total order used to pick winners: higher score first, then smaller
    /// `y`, smaller `x`, smaller template id.
    pub fn rank(&self, other: &MatchResult) -> Ordering {
        other
            .score
            .0
            .total_cmp(&self.score.0)
            .then(self.top_left.y.cmp(&other.top_left.y))
            .then(self.top_left.x.cmp(&other.top_left.x))
            .then(self.template_id.cmp(&other.template_id))
    }
}

/// Pearson correlation of two equally sized patches.
pub fn ncc(x: &Patch, y: &Patch) -> Result<MatchScore> {
    check_lengths(x.len(), y.len())?;
    let (xs, ys) = (x.values(), y.values());
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let (mut num, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in xs.iter().zip(ys) {
        let (dx, dy) = (a - mean_x, b - mean_y);
        num += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx / n < VARIANCE_EPSILON || syy / n < VARIANCE_EPSILON {
        return Err(Error::DegenerateWindow {
            threshold: VARIANCE_EPSILON,
        });
    }
    MatchScore::new(num / (sxx.sqrt() * syy.sqrt()))
}

/// Weighted correlation: every deviation product is scaled by its pixel
/// weight, while the means stay unweighted.
pub fn weighted_ncc(x: &Patch, y: &Patch, w: &WeightMap) -> Result<MatchScore> {
    check_lengths(x.len(), y.len())?;
    if w.weights().len() != x.len() {
        return Err(arg(format!(
            "weight map has {} cells but patches have {}",
            w.weights().len(),
            x.len()
        )));
    }
    check_weights(w)?;
    match weighted_r(x.values(), y.values(), w.weights()) {
        Some(r) => MatchScore::new(r),
        None => Err(Error::DegenerateWindow {
            threshold: VARIANCE_EPSILON,
        }),
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(arg(format!("patch lengths differ: {a} vs {b}")));
    }
    if a < 2 {
        return Err(arg("correlation needs at least two pixels"));
    }
    Ok(())
}

pub(crate) fn check_weights(w: &WeightMap) -> Result<()> {
    match w.weights().iter().position(|&v| v <= 0.0) {
        Some(i) => Err(arg(format!(
            "weight {i} is {} (must be > 0)",
            w.weights()[i]
        ))),
        None => Ok(()),
    }
}

/// Unchecked weighted correlation; `None` for a degenerate side.
pub(crate) fn weighted_r(xs: &[f64], ys: &[f64], ws: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let (mut num, mut sxx, mut syy, mut sw) = (0.0, 0.0, 0.0, 0.0);
    for ((&a, &b), &w) in xs.iter().zip(ys).zip(ws) {
        let (dx, dy) = (a - mean_x, b - mean_y);
        num += w * (dx * dy);
        sxx += w * dx * dx;
        syy += w * dy * dy;
        sw += w;
    }
    if sxx / sw < VARIANCE_EPSILON || syy / sw < VARIANCE_EPSILON {
        return None;
    }
    Some(num / (sxx.sqrt() * syy.sqrt()))
}

/// Scores of every window placement inside a search area. Skipped
/// (degenerate) windows are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreField {
    /// Top-left of the first placement, in image coordinates.
    pub origin: Point,
    pub cols: usize,
    pub rows: usize,
    pub scores: Vec<Option<f64>>,
}

impl ScoreField {
    pub fn get(&self, col: usize, row: usize) -> Option<f64> {
        self.scores[row * self.cols + col]
    }

    /// Row-major argmax; the first maximum wins, so ties resolve to the
    /// smallest `y`, then the smallest `x`.
    pub fn best(&self, template: &Template) -> Result<MatchResult> {
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in self.scores.iter().enumerate() {
            if let Some(r) = *s {
                if best.is_none_or(|(_, b)| r > b) {
                    best = Some((i, r));
                }
            }
        }
        let (i, r) = best.ok_or(Error::NoValidWindow)?;
        let top_left = Point::new(self.origin.x + i % self.cols, self.origin.y + i / self.cols);
        Ok(MatchResult::new(top_left, template, r))
    }
}

/// Validates a search request and returns the area to scan.
pub(crate) fn search_area(
    image: &GrayImage,
    template: &Template,
    map: &WeightMap,
    region: Option<Rect>,
) -> Result<Rect> {
    if map.width() != template.width() || map.height() != template.height() {
        return Err(arg(format!(
            "weight map is {}x{} but template is {}x{}",
            map.width(),
            map.height(),
            template.width(),
            template.height()
        )));
    }
    if template.width() * template.height() < 2 {
        return Err(arg("template must contain at least two pixels"));
    }
    check_weights(map)?;
    let area = match region {
        Some(r) => {
            if !image.bounds().contains_rect(&r) {
                return Err(Error::Range(format!(
                    "region {}x{} at {} exceeds {}x{} image",
                    r.width,
                    r.height,
                    Point::new(r.x, r.y),
                    image.width(),
                    image.height()
                )));
            }
            r
        }
        None => image.bounds(),
    };
    if template.width() > area.width || template.height() > area.height {
        return Err(arg(format!(
            "template {}x{} larger than search area {}x{}",
            template.width(),
            template.height(),
            area.width,
            area.height
        )));
    }
    Ok(area)
}

/// Weighted correlation at every placement, evaluated from scratch per window.
pub fn score_field(
    image: &GrayImage,
    template: &Template,
    map: &WeightMap,
    region: Option<Rect>,
) -> Result<ScoreField> {
    let area = search_area(image, template, map, region)?;
    let (tw, th) = (template.width(), template.height());
    let cols = area.width - tw + 1;
    let rows = area.height - th + 1;
    let xs = template.image().pixels();
    let ws = map.weights();
    let mut scores = Vec::with_capacity(cols * rows);
    for y in area.y..area.y + rows {
        for x in area.x..area.x + cols {
            let window = extract_patch(image, Point::new(x, y), tw, th)?;
            scores.push(weighted_r(xs, window.values(), ws));
        }
    }
    Ok(ScoreField {
        origin: Point::new(area.x, area.y),
        cols,
        rows,
        scores,
    })
}

/// Exhaustive search for the window that best correlates with `template`.
pub fn match_template(
    image: &GrayImage,
    template: &Template,
    map: &WeightMap,
    region: Option<Rect>,
) -> Result<MatchResult> {
    score_field(image, template, map, region)?.best(template)
}

/// Which search implementation to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchMode {
    /// Window-by-window reference evaluation.
    Naive,
    /// Precomputed sums; same results within 1e-9.
    #[default]
    Fast,
}

impl SearchMode {
    pub fn run(
        self,
        image: &GrayImage,
        template: &Template,
        map: &WeightMap,
        region: Option<Rect>,
    ) -> Result<MatchResult> {
        match self {
            SearchMode::Naive => match_template(image, template, map, region),
            SearchMode::Fast => fastmatch::fast_match(image, template, map, region),
        }
    }
}

/// Runs one search mode over many templates on a single image. In fast
/// mode the image-side sums are kept while consecutive templates share a
/// weight map.
pub struct Searcher<'a> {
    mode: SearchMode,
    image: &'a GrayImage,
    region: Option<Rect>,
    sums: Option<fastmatch::ImageSums>,
}

impl<'a> Searcher<'a> {
    pub fn new(mode: SearchMode, image: &'a GrayImage, region: Option<Rect>) -> Self {
        Self {
            mode,
            image,
            region,
            sums: None,
        }
    }

    pub fn run(&mut self, template: &Template, map: &WeightMap) -> Result<MatchResult> {
        if self.mode == SearchMode::Naive {
            return match_template(self.image, template, map, self.region);
        }
        let sums = match self.sums.take() {
            Some(s) if s.map() == map => s,
            _ => fastmatch::ImageSums::new(self.image, template, map, self.region)?,
        };
        let result = sums.best(template);
        self.sums = Some(sums);
        result
    }
}

/// Best match over several templates, searched with the reference matcher.
pub fn match_ensemble(image: &GrayImage, entries: &[(Template, WeightMap)]) -> Result<MatchResult> {
    match_ensemble_with(image, entries, None, SearchMode::Naive)
}

pub fn match_ensemble_with(
    image: &GrayImage,
    entries: &[(Template, WeightMap)],
    region: Option<Rect>,
    mode: SearchMode,
) -> Result<MatchResult> {
    if entries.is_empty() {
        return Err(arg("ensemble needs at least one template"));
    }
    let mut searcher = Searcher::new(mode, image, region);
    let mut best: Option<MatchResult> = None;
    for (template, map) in entries {
        match searcher.run(template, map) {
            Ok(m) => {
                if best.is_none_or(|b| m.rank(&b) == Ordering::Less) {
                    best = Some(m);
                }
            }
            Err(Error::NoValidWindow) => {}
            Err(e) => return Err(e),
        }
    }
    best.ok_or(Error::NoValidWindow)
}
