//! `weightmatch` command line: weight map generation, matching, synthetic
//! corpora, detection-rate evaluation and benchmarking.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use crate::eval::{self, ExperimentConfig, KindConfig};
use crate::fastmatch::fast_score_field;
use crate::image::{Eye, GrayImage, Rect, Template};
use crate::io;
use crate::matcher::{score_field, MatchResult, SearchMode};
use crate::synth::{self, CorpusParams, SceneParams};
use crate::weightmaps::{
    map_for_template, ExponentialParams, GaussianParams, WeightMap, WeightSpec,
};

#[derive(Debug, Parser)]
#[command(
    name = "weightmatch",
    version,
    about = "Weighted template matching for eye detection"
)]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a weight map (and optionally its heat map).
    GenWeights(GenWeightsArgs),
    /// Find the best window for one template in one image.
    Match(MatchArgs),
    /// Detection rates over template counts and weight kinds.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic corpus of scenes, annotations and templates.
    Synth(SynthArgs),
    /// Time the reference matcher against the fast matcher.
    Bench(BenchArgs),
}

/// Weight map kind and generator parameters.
#[derive(Debug, Clone, Args)]
pub struct WeightArgs {
    /// uniform, gauss-ellipse, gauss-circle or exp.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long, default_value_t = 5.0)]
    pub amplitude: f64,
    /// Default 16 for gauss-ellipse, 8 for gauss-circle.
    #[arg(long)]
    pub sigma_x: Option<f64>,
    /// Default 8.
    #[arg(long)]
    pub sigma_y: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    pub b: f64,
    #[arg(long, default_value_t = 10.0)]
    pub c: f64,
    /// Use the exponential form exp(-|dx/b + dy/c|).
    #[arg(long)]
    pub literal_abs_sum: bool,
}

impl WeightArgs {
    pub fn spec(&self) -> anyhow::Result<WeightSpec> {
        let kind = self.kind.as_deref().unwrap_or("uniform");
        Ok(match kind {
            "uniform" => WeightSpec::Uniform,
            "gauss-ellipse" | "gauss-circle" => {
                let default_sx = if kind == "gauss-ellipse" { 16.0 } else { 8.0 };
                WeightSpec::Gaussian(GaussianParams::new(
                    self.amplitude,
                    self.sigma_x.unwrap_or(default_sx),
                    self.sigma_y.unwrap_or(8.0),
                ))
            }
            "exp" => WeightSpec::Exponential(ExponentialParams {
                literal_form: self.literal_abs_sum,
                ..ExponentialParams::new(self.amplitude, self.b, self.c)
            }),
            other => bail!(
                "unknown kind `{other}` (expected one of {})",
                WeightSpec::PRESETS.join(", ")
            ),
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenWeightsArgs {
    #[command(flatten)]
    pub weights: WeightArgs,
    #[arg(long, default_value_t = 44)]
    pub width: usize,
    #[arg(long, default_value_t = 22)]
    pub height: usize,
    /// Weight map text file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional PGM heat map of the weights.
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct MatchArgs {
    pub image: PathBuf,
    pub template: PathBuf,
    /// Weight map file; overrides --kind.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[command(flatten)]
    pub generated: WeightArgs,
    /// Use the precomputed-sums matcher.
    #[arg(long)]
    pub fast: bool,
    /// Restrict the search to x,y,w,h.
    #[arg(long, value_parser = parse_region)]
    pub region: Option<Rect>,
    /// Optional PGM heat map of all window scores.
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Directory holding the images named in the annotation file.
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    /// Directory of `left_*.pgm` / `right_*.pgm` templates.
    #[arg(long)]
    pub templates: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "10,45,80")]
    pub counts: Vec<usize>,
    #[arg(long, default_value_t = 8.0)]
    pub threshold: f64,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "uniform,gauss-ellipse,gauss-circle,exp"
    )]
    pub kinds: Vec<String>,
    /// Output directory for report.txt, report.csv and matches.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Use the reference matcher instead of the fast one.
    #[arg(long)]
    pub naive: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Number of test scenes.
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 80)]
    pub templates_per_side: usize,
    #[arg(long, default_value_t = 120)]
    pub image_width: usize,
    #[arg(long, default_value_t = 80)]
    pub image_height: usize,
    #[arg(long, default_value_t = 45)]
    pub template_width: usize,
    #[arg(long, default_value_t = 23)]
    pub template_height: usize,
    #[arg(long, default_value_t = 12.75)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 5.0)]
    pub iris_radius: f64,
    #[arg(long, default_value_t = 16.0)]
    pub eye_rx: f64,
    #[arg(long, default_value_t = 8.0)]
    pub eye_ry: f64,
    #[arg(long, default_value_t = 110.0)]
    pub background: f64,
    /// Maximum eye displacement from its nominal position, per axis.
    #[arg(long, default_value_t = 4)]
    pub placement_jitter: usize,
    /// Maximum template label error, per axis.
    #[arg(long, default_value_t = 2)]
    pub label_jitter: usize,
    #[arg(long, default_value_t = 2)]
    pub distractors: usize,
}

impl SynthArgs {
    pub fn corpus_params(&self) -> CorpusParams {
        CorpusParams {
            scene: SceneParams {
                image_w: self.image_width,
                image_h: self.image_height,
                iris_radius: self.iris_radius,
                eye_rx: self.eye_rx,
                eye_ry: self.eye_ry,
                noise_sigma: self.noise_sigma,
                background_level: self.background,
                seed: 0,
                placement_jitter: self.placement_jitter,
                distractors: self.distractors,
            },
            test_scenes: self.count,
            templates_per_side: self.templates_per_side,
            template_w: self.template_width,
            template_h: self.template_height,
            label_jitter: self.label_jitter,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Image to search; a synthetic 256x256 scene when omitted.
    pub image: Option<PathBuf>,
    /// Template; a 44x22 crop around the scene's right eye when omitted.
    pub template: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub iters: usize,
    #[command(flatten)]
    pub generated: WeightArgs,
    /// Seed of the synthetic scene.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_region(s: &str) -> Result<Rect, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("region `{s}`: {e}"))?;
    match parts.as_slice() {
        [x, y, w, h] if *w > 0 && *h > 0 => Ok(Rect::new(*x, *y, *w, *h)),
        _ => Err(format!(
            "region `{s}` must be x,y,w,h with positive w and h"
        )),
    }
}

pub fn load_pgm(path: &Path) -> anyhow::Result<GrayImage> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    io::read_pgm(&bytes).with_context(|| format!("parsing {}", path.display()))
}

pub fn save_pgm(path: &Path, image: &GrayImage) -> anyhow::Result<()> {
    fs::write(path, io::write_pgm(image)).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Loads `left_*.pgm` and `right_*.pgm` from `dir`, sorted by file name;
/// ids follow that order and anchors sit at the geometric center.
pub fn load_templates(dir: &Path) -> anyhow::Result<Vec<Template>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if name.ends_with(".pgm") {
            names.push(name);
        }
    }
    names.sort();
    let mut templates = Vec::with_capacity(names.len());
    for (id, name) in names.iter().enumerate() {
        let label = if name.starts_with("left") {
            Eye::Left
        } else if name.starts_with("right") {
            Eye::Right
        } else {
            bail!("template {name} must start with `left` or `right`");
        };
        let image = load_pgm(&dir.join(name))?;
        templates.push(Template::new(image, label, id));
    }
    Ok(templates)
}

pub fn gen_weights(args: &GenWeightsArgs) -> anyhow::Result<WeightMap> {
    let spec = args.weights.spec()?;
    info!(
        "gen-weights: kind={} spec={spec} size={}x{} out={} heatmap={:?}",
        args.weights.kind.as_deref().unwrap_or("uniform"),
        args.width,
        args.height,
        args.out.display(),
        args.heatmap
    );
    let center = crate::image::PointF::new(
        (args.width as f64 - 1.0) / 2.0,
        (args.height as f64 - 1.0) / 2.0,
    );
    let map = spec.generate(args.width, args.height, center)?;
    write_text(&args.out, &io::write_weightmap(&map))?;
    if let Some(path) = &args.heatmap {
        save_pgm(path, &io::weightmap_heatmap(&map)?)?;
    }
    Ok(map)
}

pub fn match_line(m: &MatchResult) -> String {
    format!(
        "{} {} {} {} {}",
        m.top_left.x,
        m.top_left.y,
        m.center.x,
        m.center.y,
        m.score.value()
    )
}

pub fn run_match(args: &MatchArgs) -> anyhow::Result<MatchResult> {
    let image = load_pgm(&args.image)?;
    let template = Template::new(load_pgm(&args.template)?, Eye::Right, 0);
    let map = match &args.weights {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            io::read_weightmap(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => map_for_template(&template, &args.generated.spec()?)?,
    };
    info!(
        "match: image={} template={} weights={} fast={} region={:?}",
        args.image.display(),
        args.template.display(),
        args.weights.as_ref().map_or_else(
            || args
                .generated
                .spec()
                .map(|s| s.to_string())
                .unwrap_or_default(),
            |p| p.display().to_string()
        ),
        args.fast,
        args.region
    );
    let field = if args.fast {
        fast_score_field(&image, &template, &map, args.region)?
    } else {
        score_field(&image, &template, &map, args.region)?
    };
    if let Some(path) = &args.heatmap {
        save_pgm(
            path,
            &io::write_heatmap(&field.scores, field.cols, field.rows)?,
        )?;
    }
    Ok(field.best(&template)?)
}

pub fn run_evaluate(args: &EvaluateArgs) -> anyhow::Result<eval::EvalReport> {
    let kinds = args
        .kinds
        .iter()
        .map(|k| KindConfig::preset(k))
        .collect::<crate::Result<Vec<_>>>()?;
    let config = ExperimentConfig {
        template_counts: args.counts.clone(),
        threshold_px: args.threshold,
        kinds,
        mode: if args.naive {
            SearchMode::Naive
        } else {
            SearchMode::Fast
        },
        ..ExperimentConfig::default()
    };
    info!(
        "evaluate: images={} annotations={} templates={} counts={:?} threshold={} kinds={:?} mode={:?} out={}",
        args.images.display(),
        args.annotations.display(),
        args.templates.display(),
        config.template_counts,
        config.threshold_px,
        args.kinds,
        config.mode,
        args.out.display()
    );
    let text = fs::read_to_string(&args.annotations)
        .with_context(|| format!("reading {}", args.annotations.display()))?;
    let annotations = io::read_annotations(&text)
        .with_context(|| format!("parsing {}", args.annotations.display()))?;
    let mut scenes = Vec::with_capacity(annotations.len());
    for a in annotations {
        let image = load_pgm(&args.images.join(&a.image_id))?;
        scenes.push((image, a));
    }
    let templates = load_templates(&args.templates)?;
    let report = eval::run_experiment(&scenes, &templates, &config)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_text(&args.out.join("report.txt"), &eval::format_report(&report))?;
    write_text(&args.out.join("report.csv"), &eval::report_csv(&report))?;
    write_text(&args.out.join("matches.csv"), &eval::match_log_csv(&report))?;
    Ok(report)
}

pub fn run_synth(args: &SynthArgs) -> anyhow::Result<()> {
    let params = args.corpus_params();
    info!("synth: {params:?} out={}", args.out.display());
    let corpus = synth::generate_corpus(&params)?;
    let images = args.out.join("images");
    let templates = args.out.join("templates");
    fs::create_dir_all(&images).with_context(|| format!("creating {}", images.display()))?;
    fs::create_dir_all(&templates).with_context(|| format!("creating {}", templates.display()))?;
    let mut annotations = Vec::with_capacity(corpus.scenes.len());
    for (image, a) in &corpus.scenes {
        save_pgm(&images.join(&a.image_id), image)?;
        annotations.push(a.clone());
    }
    write_text(
        &args.out.join("annotations.csv"),
        &io::write_annotations(&annotations)?,
    )?;
    let k = params.templates_per_side;
    for t in &corpus.templates {
        let index = match t.label() {
            Eye::Left => t.id(),
            Eye::Right => t.id() - k,
        };
        save_pgm(
            &templates.join(synth::template_file_name(t.label(), index)),
            t.image(),
        )?;
    }
    Ok(())
}

/// Timings of one bench run.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub kind: String,
    pub image_size: (usize, usize),
    pub template_size: (usize, usize),
    pub windows: usize,
    pub iters: usize,
    pub naive_ns_per_window: f64,
    pub fast_ns_per_window: f64,
    pub speedup: f64,
}

/// Speedup the fast matcher is expected to reach.
pub const SPEEDUP_TARGET: f64 = 5.0;

impl BenchReport {
    pub fn render(&self) -> String {
        let mut out = format!(
            "bench: {} map, image {}x{}, template {}x{}, {} windows, {} iteration(s)\n",
            self.kind,
            self.image_size.0,
            self.image_size.1,
            self.template_size.0,
            self.template_size.1,
            self.windows,
            self.iters
        );
        out.push_str(&format!(
            "{:<8}{:>14}{:>14}\n",
            "method", "total ms", "ns/window"
        ));
        for (name, ns) in [
            ("naive", self.naive_ns_per_window),
            ("fast", self.fast_ns_per_window),
        ] {
            out.push_str(&format!(
                "{:<8}{:>14.3}{:>14.1}\n",
                name,
                ns * self.windows as f64 / 1e6,
                ns
            ));
        }
        out.push_str(&format!(
            "speedup {:.2}x (target {SPEEDUP_TARGET}x)\n",
            self.speedup
        ));
        if self.speedup < SPEEDUP_TARGET {
            out.push_str(
                "note: below target. The fast path still does three multiply-adds per \
                 template pixel per window for sum(W Y), sum(W Y^2) and the cross term, \
                 because a non-constant weight map cannot be reduced to box sums; the \
                 reference does roughly four passes with dependent accumulations, so the \
                 attainable single-thread ratio depends on the CPU's vector width.\n",
            );
        }
        out
    }
}

pub fn run_bench(args: &BenchArgs) -> anyhow::Result<BenchReport> {
    if args.iters == 0 {
        bail!("--iters must be at least 1");
    }
    let (image, template) = match (&args.image, &args.template) {
        (Some(i), Some(t)) => (load_pgm(i)?, Template::new(load_pgm(t)?, Eye::Right, 0)),
        (None, None) => {
            let params = SceneParams {
                image_w: 256,
                image_h: 256,
                seed: args.seed,
                ..SceneParams::default()
            };
            let (image, truth) = synth::generate_scene(&params)?;
            let t = synth::extract_template(&image, truth.right_eye, 44, 22, Eye::Right)?;
            (image, t)
        }
        _ => bail!("pass both an image and a template, or neither"),
    };
    let spec = args.generated.spec()?;
    info!(
        "bench: image={:?} template={:?} iters={} spec={spec} seed={}",
        args.image, args.template, args.iters, args.seed
    );
    let map = map_for_template(&template, &spec)?;

    let naive = score_field(&image, &template, &map, None)?;
    let fast = fast_score_field(&image, &template, &map, None)?;
    let (nb, fb) = (naive.best(&template)?, fast.best(&template)?);
    if nb.top_left != fb.top_left
        || (nb.score.value() - fb.score.value()).abs() > 1e-9 * nb.score.value().abs().max(1.0)
    {
        bail!(
            "fast and naive disagree: naive {} vs fast {}",
            match_line(&nb),
            match_line(&fb)
        );
    }

    let time = |f: &dyn Fn() -> crate::Result<()>| -> anyhow::Result<f64> {
        let start = Instant::now();
        for _ in 0..args.iters {
            f()?;
        }
        Ok(start.elapsed().as_nanos() as f64 / args.iters as f64)
    };
    let naive_ns = time(&|| score_field(&image, &template, &map, None).map(drop))?;
    let fast_ns = time(&|| fast_score_field(&image, &template, &map, None).map(drop))?;
    let windows = naive.scores.len();
    Ok(BenchReport {
        kind: args
            .generated
            .kind
            .clone()
            .unwrap_or_else(|| "uniform".into()),
        image_size: (image.width(), image.height()),
        template_size: (template.width(), template.height()),
        windows,
        iters: args.iters,
        naive_ns_per_window: naive_ns / windows as f64,
        fast_ns_per_window: fast_ns / windows as f64,
        speedup: naive_ns / fast_ns,
    })
}

/// Runs a parsed command line, printing results on stdout.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    info!("threads: {}", pool.current_num_threads());
    pool.install(|| match &cli.command {
        Command::GenWeights(a) => gen_weights(a).map(drop),
        Command::Match(a) => {
            println!("{}", match_line(&run_match(a)?));
            Ok(())
        }
        Command::Evaluate(a) => {
            print!("{}", eval::format_report(&run_evaluate(a)?));
            Ok(())
        }
        Command::Synth(a) => run_synth(a),
        Command::Bench(a) => {
            print!("{}", run_bench(a)?.render());
            Ok(())
        }
    })
}
