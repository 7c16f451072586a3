//! Seeded synthetic eye scenes with exact ground truth.
//!
//! A scene is a flat background with two eyes (a bright sclera ellipse, a
//! dark iris disc with a darker pupil, and a dark tear-duct spot on the
//! nose side), a few dark distractor blobs, and additive Gaussian noise.
//!
//! Every random draw comes from PCG32 (XSH RR, 64-bit state, multiplier
//! 6364136223846793005) seeded as `Pcg32::new(seed, 0xa02bdbf7bb3c0a7)`,
//! which makes scenes reproducible in any language. Derived values:
//!
//! - unit uniform: `(u32 + 0.5) / 2^32`, in `(0, 1)`
//! - integer in `[lo, hi]`: `lo + ((u32 * (hi - lo + 1)) >> 32)`
//! - standard normal: Box-Muller, `sqrt(-2 ln u1) * cos(2 pi u2)` then
//!   `sqrt(-2 ln u1) * sin(2 pi u2)` from the same pair
//!
//! Draw order per scene: right-eye jitter (dx, dy), left-eye jitter
//! (dx, dy), right-eye gaze (gx, gy), left-eye gaze (gx, gy), distractors
//! (x, y, radius per attempt), then one normal per pixel in raster order
//! when `noise_sigma > 0`.

use rand_core::Rng;
use rand_pcg::Pcg32;

use crate::error::{arg, Error, Result};
use crate::image::{Eye, GrayImage, Point, PointF, Template};

const PCG_STREAM: u64 = 0x0a02_bdbf_7bb3_c0a7;

/// Contrast of sclera and iris against the background.
const EYE_CONTRAST: f64 = 70.0;

/// Deterministic random source used for scenes and label jitter.
#[derive(Debug, Clone)]
pub struct SceneRng {
    pcg: Pcg32,
    spare_normal: Option<f64>,
}

impl SceneRng {
    pub fn new(seed: u64) -> Self {
        Self {
            pcg: Pcg32::new(seed, PCG_STREAM),
            spare_normal: None,
        }
    }

    pub fn next_u32(&mut self) -> u32 {
        self.pcg.next_u32()
    }

    pub fn unit(&mut self) -> f64 {
        (f64::from(self.next_u32()) + 0.5) / 4_294_967_296.0
    }

    /// Integer in `[lo, hi]` (inclusive).
    pub fn int_in(&mut self, lo: i64, hi: i64) -> i64 {
        debug_assert!(lo <= hi);
        let span = (hi - lo + 1) as u64;
        lo + ((u64::from(self.next_u32()) * span) >> 32) as i64
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.unit();
        let u2 = self.unit();
        let radius = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(radius * theta.sin());
        radius * theta.cos()
    }
}

/// SplitMix64 finalizer over `base + stream * 2^32 + index`; used to give
/// every scene of a corpus its own seed.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream << 32)
        .wrapping_add(index)
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub image_w: usize,
    pub image_h: usize,
    pub iris_radius: f64,
    /// Sclera ellipse radii.
    pub eye_rx: f64,
    pub eye_ry: f64,
    /// Standard deviation of the additive noise, in intensity units.
    pub noise_sigma: f64,
    pub background_level: f64,
    pub seed: u64,
    /// Maximum eye displacement from its nominal position, per axis.
    pub placement_jitter: usize,
    pub distractors: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            image_w: 120,
            image_h: 80,
            iris_radius: 5.0,
            eye_rx: 16.0,
            eye_ry: 8.0,
            noise_sigma: 12.75,
            background_level: 110.0,
            seed: 0,
            placement_jitter: 4,
            distractors: 2,
        }
    }
}

impl SceneParams {
    fn validate(&self) -> Result<()> {
        if self.image_w == 0 || self.image_h == 0 {
            return Err(arg("scene dimensions must be positive"));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.iris_radius) || !positive(self.eye_rx) || !positive(self.eye_ry) {
            return Err(arg("eye radii must be finite and positive"));
        }
        if self.iris_radius >= self.eye_rx.min(self.eye_ry) {
            return Err(arg(format!(
                "iris radius {} must be smaller than both sclera radii ({}, {})",
                self.iris_radius, self.eye_rx, self.eye_ry
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(arg("noise_sigma must be finite and >= 0"));
        }
        let bg = self.background_level;
        if !(EYE_CONTRAST..=255.0 - EYE_CONTRAST).contains(&bg) {
            return Err(arg(format!(
                "background level {bg} leaves no room for eye contrast (need {EYE_CONTRAST}..={})",
                255.0 - EYE_CONTRAST
            )));
        }
        Ok(())
    }

    fn sclera_level(&self) -> f64 {
        (self.background_level + EYE_CONTRAST).round()
    }

    fn iris_level(&self) -> f64 {
        (self.background_level - EYE_CONTRAST).round()
    }

    /// Largest sclera offset from the iris center, per axis.
    fn gaze_limits(&self) -> (f64, f64) {
        (
            0.3 * (self.eye_rx - self.iris_radius),
            0.3 * (self.eye_ry - self.iris_radius),
        )
    }

    fn nominal_center(&self, eye: Eye) -> Point {
        // The subject's right eye appears on the image's left.
        let fx = match eye {
            Eye::Right => 0.3,
            Eye::Left => 0.7,
        };
        Point::new(
            (fx * self.image_w as f64).round() as usize,
            (0.42 * self.image_h as f64).round() as usize,
        )
    }
}

/// Ground-truth eye centers of one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub image_id: String,
    pub right_eye: Point,
    pub left_eye: Point,
}

impl Annotation {
    pub fn eye(&self, eye: Eye) -> Point {
        match eye {
            Eye::Right => self.right_eye,
            Eye::Left => self.left_eye,
        }
    }
}

/// A rendered scene, with the noise-free rendering kept alongside.
#[derive(Debug, Clone)]
pub struct Scene {
    pub image: GrayImage,
    pub clean: GrayImage,
    pub annotation: Annotation,
}

#[derive(Debug, Clone, Copy)]
struct EyeShape {
    iris: Point,
    sclera: PointF,
    /// +1 when the nose is toward +x.
    nasal: f64,
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    x: f64,
    y: f64,
    r: f64,
}

/// Renders a scene; a pure function of `params`.
pub fn render_scene(params: &SceneParams) -> Result<Scene> {
    params.validate()?;
    let mut rng = SceneRng::new(params.seed);
    let j = params.placement_jitter as i64;

    let mut irises = [Point::default(); 2];
    for (slot, eye) in Eye::BOTH.iter().enumerate() {
        let nominal = params.nominal_center(*eye);
        let dx = rng.int_in(-j, j);
        let dy = rng.int_in(-j, j);
        let x = nominal.x as i64 + dx;
        let y = nominal.y as i64 + dy;
        if x < 0 || y < 0 || x >= params.image_w as i64 || y >= params.image_h as i64 {
            return Err(Error::Placement(format!(
                "{eye} eye center ({x}, {y}) outside image"
            )));
        }
        irises[slot] = Point::new(x as usize, y as usize);
    }

    let (gx_max, gy_max) = params.gaze_limits();
    let mut eyes = Vec::with_capacity(2);
    for (slot, eye) in Eye::BOTH.iter().enumerate() {
        let gx = (2.0 * rng.unit() - 1.0) * gx_max;
        let gy = (2.0 * rng.unit() - 1.0) * gy_max;
        let iris = irises[slot];
        let sclera = PointF::new(iris.x as f64 + gx, iris.y as f64 + gy);
        let (w, h) = (params.image_w as f64, params.image_h as f64);
        if sclera.x - params.eye_rx < 0.0
            || sclera.x + params.eye_rx > w - 1.0
            || sclera.y - params.eye_ry < 0.0
            || sclera.y + params.eye_ry > h - 1.0
        {
            return Err(Error::Placement(format!(
                "{eye} eye ellipse around ({:.1}, {:.1}) leaves the {}x{} image",
                sclera.x, sclera.y, params.image_w, params.image_h
            )));
        }
        let nasal = match eye {
            Eye::Right => 1.0,
            Eye::Left => -1.0,
        };
        eyes.push(EyeShape {
            iris,
            sclera,
            nasal,
        });
    }
    let gap = (eyes[1].sclera.x - eyes[0].sclera.x).abs();
    if gap <= 2.0 * params.eye_rx + 1.0 {
        return Err(Error::Placement(format!(
            "eyes overlap: centers {gap:.1} px apart, sclera width {}",
            2.0 * params.eye_rx
        )));
    }

    let blobs = place_distractors(params, &eyes, &mut rng);
    let clean = render_clean(params, &eyes, &blobs)?;

    let image = if params.noise_sigma > 0.0 {
        let pixels = clean
            .pixels()
            .iter()
            .map(|&v| {
                (v + params.noise_sigma * rng.normal())
                    .round()
                    .clamp(0.0, 255.0)
            })
            .collect();
        GrayImage::new(params.image_w, params.image_h, pixels)?
    } else {
        clean.clone()
    };

    Ok(Scene {
        image,
        clean,
        annotation: Annotation {
            image_id: format!("seed_{}", params.seed),
            right_eye: eyes[0].iris,
            left_eye: eyes[1].iris,
        },
    })
}

/// Renders a scene and returns the noisy image with its ground truth.
pub fn generate_scene(params: &SceneParams) -> Result<(GrayImage, Annotation)> {
    let scene = render_scene(params)?;
    Ok((scene.image, scene.annotation))
}

fn place_distractors(params: &SceneParams, eyes: &[EyeShape], rng: &mut SceneRng) -> Vec<Blob> {
    const ATTEMPTS: usize = 32;
    let mut blobs = Vec::with_capacity(params.distractors);
    let (w, h) = (params.image_w as i64, params.image_h as i64);
    for _ in 0..params.distractors {
        for _ in 0..ATTEMPTS {
            let x = rng.int_in(0, w - 1) as f64;
            let y = rng.int_in(0, h - 1) as f64;
            let r = params.iris_radius * (1.0 + rng.unit());
            let clear = eyes.iter().all(|e| {
                (x - e.sclera.x).abs() > params.eye_rx + r + 2.0
                    || (y - e.sclera.y).abs() > params.eye_ry + r + 2.0
            });
            if clear {
                blobs.push(Blob { x, y, r });
                break;
            }
        }
    }
    blobs
}

fn render_clean(params: &SceneParams, eyes: &[EyeShape], blobs: &[Blob]) -> Result<GrayImage> {
    let bg = params.background_level.round();
    let sclera = params.sclera_level();
    let iris = params.iris_level();
    let pupil = (iris - 30.0).max(0.0);
    let duct = (bg - 40.0).max(0.0);
    let blob_level = (iris + 20.0).min(bg);
    let pupil_r = params.iris_radius * 0.5;
    let duct_r = params.eye_ry * 0.4;

    let mut pixels = Vec::with_capacity(params.image_w * params.image_h);
    for y in 0..params.image_h {
        for x in 0..params.image_w {
            let (fx, fy) = (x as f64, y as f64);
            let mut v = bg;
            for b in blobs {
                if (fx - b.x).powi(2) + (fy - b.y).powi(2) <= b.r * b.r {
                    v = blob_level;
                }
            }
            for e in eyes {
                let ex = (fx - e.sclera.x) / params.eye_rx;
                let ey = (fy - e.sclera.y) / params.eye_ry;
                if ex * ex + ey * ey <= 1.0 {
                    v = sclera;
                }
                let duct_x = e.sclera.x + e.nasal * 0.85 * params.eye_rx;
                if (fx - duct_x).powi(2) + (fy - e.sclera.y).powi(2) <= duct_r * duct_r {
                    v = duct;
                }
                let d2 = (fx - e.iris.x as f64).powi(2) + (fy - e.iris.y as f64).powi(2);
                if d2 <= params.iris_radius * params.iris_radius {
                    v = if d2 <= pupil_r * pupil_r { pupil } else { iris };
                }
            }
            pixels.push(v);
        }
    }
    GrayImage::new(params.image_w, params.image_h, pixels)
}

/// Cuts a `width x height` template whose anchor is `center` (the labeled
/// eye position). The window starts at `center - (width / 2, height / 2)`.
pub fn extract_template(
    image: &GrayImage,
    center: Point,
    width: usize,
    height: usize,
    label: Eye,
) -> Result<Template> {
    if width * height < 2 {
        return Err(arg(format!(
            "template {width}x{height} needs at least two pixels"
        )));
    }
    let (hw, hh) = (width / 2, height / 2);
    if center.x < hw || center.y < hh {
        return Err(Error::Range(format!(
            "{width}x{height} template around {center} starts before the image origin"
        )));
    }
    let top_left = Point::new(center.x - hw, center.y - hh);
    let crop = image
        .crop(crate::image::Rect::new(
            top_left.x, top_left.y, width, height,
        ))
        .map_err(|_| {
            Error::Range(format!(
                "{width}x{height} template around {center} exceeds {}x{} image",
                image.width(),
                image.height()
            ))
        })?;
    Template::with_anchor(crop, PointF::new(hw as f64, hh as f64), label, 0)
}

/// Offsets `center` by a seeded integer amount in `[-max_offset, max_offset]`
/// per axis, modelling an imprecise hand label.
pub fn jitter_label(center: Point, max_offset: usize, rng: &mut SceneRng) -> Point {
    let m = max_offset as i64;
    let dx = rng.int_in(-m, m);
    let dy = rng.int_in(-m, m);
    Point::new(
        (center.x as i64 + dx).max(0) as usize,
        (center.y as i64 + dy).max(0) as usize,
    )
}

/// Test scenes plus templates cut from separate training scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusParams {
    pub scene: SceneParams,
    pub test_scenes: usize,
    pub templates_per_side: usize,
    pub template_w: usize,
    pub template_h: usize,
    pub label_jitter: usize,
    pub seed: u64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self {
            scene: SceneParams::default(),
            test_scenes: 50,
            templates_per_side: 80,
            template_w: 45,
            template_h: 23,
            label_jitter: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub scenes: Vec<(GrayImage, Annotation)>,
    /// Left templates get ids `0..k`, right templates `k..2k`, the order
    /// their file names (`left_###`, `right_###`) sort in.
    pub templates: Vec<Template>,
}

/// File name of test scene `index`.
pub fn scene_file_name(index: usize) -> String {
    format!("scene_{index:04}.pgm")
}

pub fn template_file_name(eye: Eye, index: usize) -> String {
    format!("{eye}_{index:03}.pgm")
}

/// Builds a corpus. Test scene `k` uses seed `derive_seed(seed, 0, k)`,
/// training scene `k` uses `derive_seed(seed, 1, k)` and its label jitter
/// draws from `derive_seed(seed, 2, k)` (right eye first).
pub fn generate_corpus(params: &CorpusParams) -> Result<Corpus> {
    let mut scenes = Vec::with_capacity(params.test_scenes);
    for k in 0..params.test_scenes {
        let sp = SceneParams {
            seed: derive_seed(params.seed, 0, k as u64),
            ..params.scene.clone()
        };
        let (image, mut annotation) = generate_scene(&sp)?;
        annotation.image_id = scene_file_name(k);
        scenes.push((image, annotation));
    }

    let k_max = params.templates_per_side;
    let mut right = Vec::with_capacity(k_max);
    let mut left = Vec::with_capacity(k_max);
    for k in 0..k_max {
        let sp = SceneParams {
            seed: derive_seed(params.seed, 1, k as u64),
            ..params.scene.clone()
        };
        let (image, truth) = generate_scene(&sp)?;
        let mut rng = SceneRng::new(derive_seed(params.seed, 2, k as u64));
        for eye in Eye::BOTH {
            let labeled = jitter_label(truth.eye(eye), params.label_jitter, &mut rng);
            let t = extract_template(&image, labeled, params.template_w, params.template_h, eye)?;
            match eye {
                Eye::Right => right.push(t.with_id(k_max + k)),
                Eye::Left => left.push(t.with_id(k)),
            }
        }
    }
    left.extend(right);
    Ok(Corpus {
        scenes,
        templates: left,
    })
}
