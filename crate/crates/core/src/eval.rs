//! Detection-rate experiments.
//!
//! For every eye, weight-map kind and template count `N`, each test image is
//! searched with the first `N` same-side templates (ascending id) and the
//! best-scoring window's center is compared with the annotated eye. An eye
//! counts as detected when the error is strictly below the threshold.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{arg, Error, Result};
use crate::image::{Eye, GrayImage, Point, PointF, Rect, Template};
use crate::matcher::{MatchResult, SearchMode, Searcher};
use crate::synth::Annotation;
use crate::weightmaps::{map_for_template, WeightMap, WeightSpec};

/// A weight-map kind under a report name.
#[derive(Debug, Clone, PartialEq)]
pub struct KindConfig {
    pub name: String,
    pub spec: WeightSpec,
}

impl KindConfig {
    pub fn new(name: impl Into<String>, spec: WeightSpec) -> Self {
        Self {
            name: name.into(),
            spec,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        Ok(Self::new(name, WeightSpec::preset(name)?))
    }

    /// Uniform, elliptical Gaussian, circular Gaussian and exponential.
    pub fn standard_grid() -> Vec<Self> {
        WeightSpec::PRESETS
            .iter()
            .map(|n| Self::preset(n).expect("preset names are valid"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub template_counts: Vec<usize>,
    pub threshold_px: f64,
    pub kinds: Vec<KindConfig>,
    pub eyes: Vec<Eye>,
    pub mode: SearchMode,
    pub region: Option<Rect>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            template_counts: vec![10, 45, 80],
            threshold_px: 8.0,
            kinds: KindConfig::standard_grid(),
            eyes: Eye::BOTH.to_vec(),
            mode: SearchMode::Fast,
            region: None,
        }
    }
}

/// Outcome for one (image, eye, kind, count) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchRecord {
    pub image_id: String,
    pub eye: Eye,
    pub kind: String,
    pub count: usize,
    /// `None` when every window of every template was degenerate.
    pub best: Option<MatchResult>,
    pub truth: Point,
    /// Euclidean pixel error; infinite without a match.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub counts: Vec<usize>,
    pub kinds: Vec<String>,
    pub eyes: Vec<Eye>,
    /// Name of the uniform kind the deltas are taken against.
    pub baseline: String,
    pub threshold_px: f64,
    pub images: usize,
    pub mode: SearchMode,
    pub rates: BTreeMap<(Eye, String, usize), f64>,
    /// `rate(kind) - rate(baseline)` at the same eye and count.
    pub deltas: BTreeMap<(Eye, String, usize), f64>,
    pub records: Vec<MatchRecord>,
}

impl EvalReport {
    pub fn rate(&self, eye: Eye, kind: &str, count: usize) -> Option<f64> {
        self.rates.get(&(eye, kind.to_string(), count)).copied()
    }

    pub fn delta(&self, eye: Eye, kind: &str, count: usize) -> Option<f64> {
        self.deltas.get(&(eye, kind.to_string(), count)).copied()
    }
}

pub fn detection_error(predicted: PointF, truth: Point) -> f64 {
    predicted.distance(PointF::from(truth))
}

/// Fraction of errors strictly below `threshold`.
pub fn detection_rate(errors: &[f64], threshold: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(arg("detection rate of an empty error list"));
    }
    let hits = errors.iter().filter(|&&e| e < threshold).count();
    Ok(hits as f64 / errors.len() as f64)
}

fn validate(config: &ExperimentConfig) -> Result<()> {
    if config.template_counts.is_empty() || config.template_counts.contains(&0) {
        return Err(arg(
            "template counts must be a non-empty list of positive integers",
        ));
    }
    if !(config.threshold_px.is_finite() && config.threshold_px > 0.0) {
        return Err(arg(format!(
            "threshold must be > 0, got {}",
            config.threshold_px
        )));
    }
    if config.kinds.is_empty() {
        return Err(arg("at least one weight-map kind is required"));
    }
    if config.eyes.is_empty() {
        return Err(arg("at least one eye is required"));
    }
    for (i, k) in config.kinds.iter().enumerate() {
        if config.kinds[..i].iter().any(|o| o.name == k.name) {
            return Err(arg(format!("duplicate kind name `{}`", k.name)));
        }
    }
    Ok(())
}

type Bank<'a> = (Eye, usize, Vec<(&'a Template, WeightMap)>);

/// Runs the sweep. If no uniform kind is configured, one named `uniform`
/// is added as the delta baseline.
pub fn run_experiment(
    scenes: &[(GrayImage, Annotation)],
    templates: &[Template],
    config: &ExperimentConfig,
) -> Result<EvalReport> {
    validate(config)?;
    if scenes.is_empty() {
        return Err(arg("no test images"));
    }
    let mut kinds = config.kinds.clone();
    let baseline = match kinds.iter().find(|k| k.spec == WeightSpec::Uniform) {
        Some(k) => k.name.clone(),
        None => {
            if kinds.iter().any(|k| k.name == "uniform") {
                return Err(arg("kind `uniform` must use the uniform weight map"));
            }
            kinds.push(KindConfig::new("uniform", WeightSpec::Uniform));
            "uniform".to_string()
        }
    };

    let max_count = *config
        .template_counts
        .iter()
        .max()
        .expect("validated non-empty");
    let mut sorted: Vec<&Template> = templates.iter().collect();
    sorted.sort_by_key(|t| t.id());

    // (eye, kind index) -> first `max_count` templates with their maps.
    let mut banks: Vec<Bank> = Vec::new();
    for &eye in &config.eyes {
        let side: Vec<&Template> = sorted
            .iter()
            .copied()
            .filter(|t| t.label() == eye)
            .collect();
        if side.len() < max_count {
            return Err(arg(format!(
                "{max_count} {eye}-eye templates requested, {} available",
                side.len()
            )));
        }
        for (ki, kind) in kinds.iter().enumerate() {
            let entries = side[..max_count]
                .iter()
                .map(|&t| Ok((t, map_for_template(t, &kind.spec)?)))
                .collect::<Result<Vec<_>>>()?;
            banks.push((eye, ki, entries));
        }
    }

    let per_image: Vec<Vec<MatchRecord>> = scenes
        .par_iter()
        .map(|(image, truth)| {
            let mut records = Vec::new();
            for (eye, ki, entries) in &banks {
                let mut searcher = Searcher::new(config.mode, image, config.region);
                let mut results = Vec::with_capacity(entries.len());
                for (t, map) in entries {
                    match searcher.run(t, map) {
                        Ok(m) => results.push(Some(m)),
                        Err(Error::NoValidWindow) => results.push(None),
                        Err(e) => return Err(e),
                    }
                }
                for &count in &config.template_counts {
                    let best = results[..count]
                        .iter()
                        .flatten()
                        .copied()
                        .min_by(|a, b| a.rank(b));
                    let truth_point = truth.eye(*eye);
                    let error =
                        best.map_or(f64::INFINITY, |m| detection_error(m.center, truth_point));
                    records.push(MatchRecord {
                        image_id: truth.image_id.clone(),
                        eye: *eye,
                        kind: kinds[*ki].name.clone(),
                        count,
                        best,
                        truth: truth_point,
                        error,
                    });
                }
            }
            Ok(records)
        })
        .collect::<Result<_>>()?;
    let records: Vec<MatchRecord> = per_image.into_iter().flatten().collect();

    let mut errors: BTreeMap<(Eye, String, usize), Vec<f64>> = BTreeMap::new();
    for r in &records {
        errors
            .entry((r.eye, r.kind.clone(), r.count))
            .or_default()
            .push(r.error);
    }
    let mut rates = BTreeMap::new();
    for (key, errs) in &errors {
        rates.insert(key.clone(), detection_rate(errs, config.threshold_px)?);
    }
    let mut deltas = BTreeMap::new();
    for ((eye, kind, count), rate) in &rates {
        let base = rates[&(*eye, baseline.clone(), *count)];
        deltas.insert((*eye, kind.clone(), *count), rate - base);
    }

    Ok(EvalReport {
        counts: config.template_counts.clone(),
        kinds: kinds.into_iter().map(|k| k.name).collect(),
        eyes: config.eyes.clone(),
        baseline,
        threshold_px: config.threshold_px,
        images: scenes.len(),
        mode: config.mode,
        rates,
        deltas,
        records,
    })
}

/// Whole percent, rounding halves upward. The small bias absorbs binary
/// representation error (e.g. 0.94 * 100 = 93.99999999999999).
pub fn percent(rate: f64) -> i64 {
    (rate * 100.0 + 0.5 + 1e-9).floor() as i64
}

fn eye_row_label(eye: Eye) -> &'static str {
    match eye {
        Eye::Right => "Right eye",
        Eye::Left => "Left eye",
    }
}

fn write_table(
    out: &mut String,
    title: &str,
    report: &EvalReport,
    cell: impl Fn(Eye, usize) -> String,
) {
    let _ = writeln!(out, "{title}");
    let _ = write!(out, "{:<10}", "");
    for c in &report.counts {
        let _ = write!(out, "{c:>6}");
    }
    out.push('\n');
    for &eye in &report.eyes {
        let _ = write!(out, "{:<10}", eye_row_label(eye));
        for &c in &report.counts {
            let _ = write!(out, "{:>6}", cell(eye, c));
        }
        out.push('\n');
    }
    out.push('\n');
}

/// Text tables: one rate table per kind, then one delta table per
/// non-baseline kind. Columns are template counts, rows are eyes.
pub fn format_report(report: &EvalReport) -> String {
    let threshold = format_threshold(report.threshold_px);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# {} images, {} search, templates for count N: first N by ascending id",
        report.images,
        match report.mode {
            SearchMode::Naive => "naive",
            SearchMode::Fast => "fast",
        }
    );
    out.push('\n');
    for kind in &report.kinds {
        let title = format!("Detection percentage (error < {threshold} pixels): {kind}");
        write_table(&mut out, &title, report, |eye, c| {
            format!("{}%", percent(report.rates[&(eye, kind.clone(), c)]))
        });
    }
    for kind in report.kinds.iter().filter(|k| **k != report.baseline) {
        let title = format!("Detection rate increase vs {}: {kind}", report.baseline);
        write_table(&mut out, &title, report, |eye, c| {
            format!("{:+}%", percent(report.deltas[&(eye, kind.clone(), c)]))
        });
    }
    out
}

fn format_threshold(t: f64) -> String {
    if t.fract() == 0.0 {
        format!("{t:.0}")
    } else {
        format!("{t}")
    }
}

pub const REPORT_CSV_HEADER: &str = "eye,kind,count,rate,delta";

/// `eye,kind,count,rate,delta` rows at full precision.
pub fn report_csv(report: &EvalReport) -> String {
    let mut out = format!("{REPORT_CSV_HEADER}\n");
    for &eye in &report.eyes {
        for kind in &report.kinds {
            for &c in &report.counts {
                let key = (eye, kind.clone(), c);
                let _ = writeln!(
                    out,
                    "{eye},{kind},{c},{},{}",
                    report.rates[&key], report.deltas[&key]
                );
            }
        }
    }
    out
}

pub const MATCH_LOG_HEADER: &str =
    "image_path,eye,kind,count,template_id,pred_x,pred_y,truth_x,truth_y,error,score";

/// Per-image match log; cells without a match leave the prediction empty.
pub fn match_log_csv(report: &EvalReport) -> String {
    let mut out = format!("{MATCH_LOG_HEADER}\n");
    let mut records: Vec<&MatchRecord> = report.records.iter().collect();
    let kind_pos = |k: &str| report.kinds.iter().position(|n| n == k);
    records.sort_by(|a, b| {
        (a.eye, kind_pos(&a.kind), a.count).cmp(&(b.eye, kind_pos(&b.kind), b.count))
    });
    for r in records {
        let (tid, px, py, score) = match &r.best {
            Some(m) => (
                m.template_id.to_string(),
                m.center.x.to_string(),
                m.center.y.to_string(),
                m.score.value().to_string(),
            ),
            None => Default::default(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{tid},{px},{py},{},{},{},{score}",
            r.image_id, r.eye, r.kind, r.count, r.truth.x, r.truth.y, r.error
        );
    }
    out
}
