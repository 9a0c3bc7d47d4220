use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ledger::{min_tokens_within_drop, performance_drop, CurvePoint};
use super::SweepError;
use crate::trainer::StageKind;

/// One evaluated (cell, stage) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: String,
    pub strategy: String,
    pub image_reduce: String,
    pub text_reduce: String,
    /// Pre-training token lengths of the cell; they index the record on
    /// its curve for both stages.
    pub img_tokens: usize,
    pub txt_tokens: usize,
    pub stage: String,
    pub seed: u64,
    pub top1: f64,
    pub r1_image_to_text: Option<f64>,
    pub r1_text_to_image: Option<f64>,
    /// At this stage's own token lengths.
    pub gflops_per_sample: f64,
    /// GFLOPs times samples, summed over the cell's stages so far.
    pub cumulative_gflops: f64,
    pub wallclock_s: f64,
}

impl RunRecord {
    pub fn is_stage(&self, kind: StageKind) -> bool {
        self.stage == kind.to_string()
    }

    /// Token length that indexes this record on its curve: image tokens for
    /// image strategies, text tokens for text-only strategies.
    pub fn curve_tokens(&self) -> usize {
        if self.image_reduce == "none" && self.text_reduce != "none" {
            self.txt_tokens
        } else {
            self.img_tokens
        }
    }
}

/// Drops of one (model, strategy) pair, averaged over seeds unless `seed`
/// is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub model: String,
    pub strategy: String,
    pub seed: Option<u64>,
    /// Baseline top-1 in points.
    pub baseline: f64,
    /// Sorted by decreasing token length; the first point is the baseline.
    pub points: Vec<CurvePoint>,
    pub min_tokens: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub threshold: f64,
    pub curves: Vec<Curve>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl ScalingReport {
    /// Curves from the records of `stage`, in points (top-1 x 100). Models
    /// without a baseline record are skipped.
    pub fn build(records: &[RunRecord], stage: StageKind, threshold: f64) -> Result<Self, SweepError> {
        // (model, strategy, seed) -> tokens -> top1 values
        let mut cells: BTreeMap<(String, String, Option<u64>), BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
        // (model, seed) -> (image tokens, text tokens, top1 values)
        let mut bases: BTreeMap<(String, Option<u64>), (usize, usize, Vec<f64>)> = BTreeMap::new();
        for r in records.iter().filter(|r| r.is_stage(stage)) {
            for seed in [Some(r.seed), None] {
                if r.strategy == "baseline" {
                    let e = bases.entry((r.model.clone(), seed)).or_insert((r.img_tokens, r.txt_tokens, Vec::new()));
                    e.2.push(100.0 * r.top1);
                    continue;
                }
                cells
                    .entry((r.model.clone(), r.strategy.clone(), seed))
                    .or_default()
                    .entry(r.curve_tokens())
                    .or_default()
                    .push(100.0 * r.top1);
            }
        }
        let mut curves = Vec::new();
        for ((model, strategy, seed), by_tokens) in &cells {
            let Some((img, txt, base_vals)) = bases.get(&(model.clone(), *seed)) else { continue };
            let base_tokens = if strategy.starts_with("text-") { *txt } else { *img };
            let baseline = mean(base_vals);
            let mut points = vec![CurvePoint { tokens: base_tokens, drop: 0.0 }];
            for (&tokens, vals) in by_tokens.iter().rev() {
                points.push(CurvePoint { tokens, drop: performance_drop(baseline, mean(vals)) });
            }
            let min_tokens = min_tokens_within_drop(&points, threshold)?;
            curves.push(Curve { model: model.clone(), strategy: strategy.clone(), seed: *seed, baseline, points, min_tokens });
        }
        Ok(Self { threshold, curves })
    }

    /// Drop of `model` under `strategy` at `tokens` for one seed.
    pub fn drop_at(&self, model: &str, strategy: &str, seed: Option<u64>, tokens: usize) -> Option<f64> {
        self.curves
            .iter()
            .find(|c| c.model == model && c.strategy == strategy && c.seed == seed)?
            .points
            .iter()
            .find(|p| p.tokens == tokens)
            .map(|p| p.drop)
    }

    /// `model,strategy,seed,tokens,drop,baseline,min_tokens` rows; seed is
    /// `mean` for the seed-averaged curves.
    pub fn to_csv(&self) -> Result<String, SweepError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "strategy", "seed", "tokens", "drop", "baseline", "min_tokens"])?;
        for c in &self.curves {
            let seed = c.seed.map_or_else(|| "mean".to_string(), |s| s.to_string());
            for p in &c.points {
                w.write_record([
                    c.model.as_str(),
                    &c.strategy,
                    &seed,
                    &p.tokens.to_string(),
                    &format!("{:.4}", p.drop),
                    &format!("{:.4}", c.baseline),
                    &c.min_tokens.to_string(),
                ])?;
            }
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| SweepError::Grid(e.to_string()))?).expect("csv is utf-8"))
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart of drop against token length for one seed-averaged curve,
/// with the per-seed curves drawn faintly behind it.
pub fn render_svg(curve: &Curve, per_seed: &[&Curve], threshold: f64) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const M: f64 = 48.0;
    let all = std::iter::once(curve).chain(per_seed.iter().copied());
    let (mut tmin, mut tmax, mut dmin, mut dmax) = (f64::MAX, f64::MIN, 0f64, threshold.max(0.0));
    for c in all {
        for p in &c.points {
            tmin = tmin.min(p.tokens as f64);
            tmax = tmax.max(p.tokens as f64);
            dmin = dmin.min(p.drop);
            dmax = dmax.max(p.drop);
        }
    }
    if tmax <= tmin {
        tmax = tmin + 1.0;
    }
    if dmax <= dmin {
        dmax = dmin + 1.0;
    }
    let x = |t: f64| M + (t - tmin) / (tmax - tmin) * (W - 2.0 * M);
    let y = |d: f64| H - M - (d - dmin) / (dmax - dmin) * (H - 2.0 * M);
    let path = |c: &Curve| {
        let mut pts: Vec<_> = c.points.iter().map(|p| (p.tokens as f64, p.drop)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.iter().map(|&(t, d)| format!("{:.1},{:.1}", x(t), y(d))).collect::<Vec<_>>().join(" ")
    };

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{} / {}</text>"#,
        W / 2.0,
        escape(&curve.model),
        escape(&curve.strategy)
    );
    let _ = writeln!(s, r#"<line x1="{M}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - M, W - M, H - M);
    let _ = writeln!(s, r#"<line x1="{M}" y1="{M}" x2="{M}" y2="{}" stroke="black"/>"#, H - M);
    let _ = writeln!(
        s,
        r#"<line x1="{M}" y1="{0:.1}" x2="{1}" y2="{0:.1}" stroke="gray" stroke-dasharray="4 3"/>"#,
        y(threshold),
        W - M
    );
    for c in per_seed {
        let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#9ab" stroke-width="1"/>"##, path(c));
    }
    let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#c33" stroke-width="2"/>"##, path(curve));
    for p in &curve.points {
        let _ = writeln!(
            s,
            r##"<circle cx="{:.1}" cy="{:.1}" r="3" fill="#c33"/><text x="{:.1}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="10">{}</text>"##,
            x(p.tokens as f64),
            y(p.drop),
            x(p.tokens as f64),
            H - M + 14.0,
            p.tokens
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">tokens</text>"#,
        W / 2.0,
        H - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{0}" transform="rotate(-90 14 {0})" text-anchor="middle" font-family="sans-serif" font-size="11">drop (points), {1:.2} to {2:.2}</text>"#,
        H / 2.0,
        dmin,
        dmax
    );
    s.push_str("</svg>\n");
    s
}
