//! Analysis products built from attributions: global importance (bar),
//! summary scatter, dependence, per-instance force/waterfall, and the
//! light/heavy trust check. JSON records are canonical; SVG is a rendering.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{DgKind, NetworkModel};
use crate::shapley::{pearson, ShapleyAttribution};

/// Steps shown individually in a waterfall before the rolled-up tail.
pub const WATERFALL_TOP: usize = 10;

/// `P<bus>` for every load bus, then `Q<bus>`.
pub fn feature_names(net: &NetworkModel) -> Vec<String> {
    let ids = net.load_bus_ids();
    ids.iter()
        .map(|id| format!("P{id}"))
        .chain(ids.iter().map(|id| format!("Q{id}")))
        .collect()
}

/// `tap`, `cb<bus>` per bank, `qwt<bus>` / `qpv<bus>` per DG unit.
pub fn output_names(net: &NetworkModel) -> Vec<String> {
    let mut out = Vec::with_capacity(net.n_controls());
    if net.transformer.is_some() {
        out.push("tap".to_string());
    }
    out.extend(
        net.capacitor_banks
            .iter()
            .map(|cb| format!("cb{}", cb.at_bus)),
    );
    out.extend(net.dg_units.iter().map(|dg| match dg.kind {
        DgKind::Wind => format!("qwt{}", dg.at_bus),
        DgKind::Pv => format!("qpv{}", dg.at_bus),
    }));
    out
}

pub fn output_index(net: &NetworkModel, name: &str) -> Result<usize> {
    output_names(net)
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::UnknownOutput(name.to_string()))
}

fn feature_index(names: &[String], name: &str) -> Result<usize> {
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::UnknownFeature(name.to_string()))
}

fn check_dims(attrs: &[ShapleyAttribution], names: &[String]) -> Result<()> {
    if attrs.is_empty() {
        return Err(Error::Empty("attribution collection"));
    }
    for a in attrs {
        if a.phi.len() != names.len() || a.instance.len() != names.len() {
            return Err(Error::Dimension {
                what: "attribution",
                expected: names.len(),
                found: a.phi.len(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub index: usize,
    pub mean_abs_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalImportance {
    pub output: String,
    /// Non-increasing by `mean_abs_phi`, ties by feature index.
    pub ranking: Vec<FeatureImportance>,
}

fn rank_features(names: &[String], scores: Vec<f64>) -> Vec<FeatureImportance> {
    let mut ranking: Vec<FeatureImportance> = scores
        .into_iter()
        .enumerate()
        .map(|(index, mean_abs_phi)| FeatureImportance {
            feature: names[index].clone(),
            index,
            mean_abs_phi,
        })
        .collect();
    ranking.sort_by(|a, b| {
        b.mean_abs_phi
            .total_cmp(&a.mean_abs_phi)
            .then(a.index.cmp(&b.index))
    });
    ranking
}

/// Mean |φ| per feature over the collection.
pub fn global_importance(
    attrs: &[ShapleyAttribution],
    names: &[String],
    output: &str,
) -> Result<GlobalImportance> {
    check_dims(attrs, names)?;
    let mut sums = vec![0.0; names.len()];
    for a in attrs {
        for (s, v) in sums.iter_mut().zip(&a.phi) {
            *s += v.abs();
        }
    }
    let n = attrs.len() as f64;
    Ok(GlobalImportance {
        output: output.to_string(),
        ranking: rank_features(names, sums.into_iter().map(|s| s / n).collect()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedImportance {
    /// Mean |φ| summed across outputs.
    pub ranking: Vec<FeatureImportance>,
    pub per_output: Vec<GlobalImportance>,
}

pub fn combined_importance(
    per_output: Vec<GlobalImportance>,
    names: &[String],
) -> Result<CombinedImportance> {
    if per_output.is_empty() {
        return Err(Error::Empty("per-output importance"));
    }
    let mut scores = vec![0.0; names.len()];
    for g in &per_output {
        if g.ranking.len() != names.len() {
            return Err(Error::Dimension {
                what: "importance ranking",
                expected: names.len(),
                found: g.ranking.len(),
            });
        }
        for f in &g.ranking {
            scores[f.index] += f.mean_abs_phi;
        }
    }
    Ok(CombinedImportance {
        ranking: rank_features(names, scores),
        per_output,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryPoint {
    pub value: f64,
    pub phi: f64,
    /// Rank of `value` among this feature's values, in [0, 1].
    pub percentile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub feature: String,
    pub mean_abs_phi: f64,
    pub points: Vec<SummaryPoint>,
}

fn percentiles(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n == 1 {
        return vec![0.5];
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; n];
    for (rank, &i) in idx.iter().enumerate() {
        out[i] = rank as f64 / (n - 1) as f64;
    }
    out
}

/// (value, φ) scatter for the `top_k` most important features.
pub fn summary_records(
    attrs: &[ShapleyAttribution],
    names: &[String],
    top_k: usize,
) -> Result<Vec<SummaryRecord>> {
    if top_k > names.len() {
        return Err(Error::InvalidInput {
            what: "top_k",
            reason: format!("{top_k} exceeds the {} features", names.len()),
        });
    }
    let global = global_importance(attrs, names, "")?;
    Ok(global
        .ranking
        .iter()
        .take(top_k)
        .map(|f| {
            let values: Vec<f64> = attrs.iter().map(|a| a.instance[f.index]).collect();
            let pct = percentiles(&values);
            SummaryRecord {
                feature: f.feature.clone(),
                mean_abs_phi: f.mean_abs_phi,
                points: attrs
                    .iter()
                    .zip(values.iter().zip(pct))
                    .map(|(a, (&value, percentile))| SummaryPoint {
                        value,
                        phi: a.phi[f.index],
                        percentile,
                    })
                    .collect(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependencePoint {
    pub value_a: f64,
    pub phi_a: f64,
    pub value_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceRecords {
    pub feature_a: String,
    pub feature_b: String,
    pub points: Vec<DependencePoint>,
    /// Pearson correlation of the two feature values across samples.
    pub value_correlation: f64,
}

pub fn dependence_records(
    attrs: &[ShapleyAttribution],
    names: &[String],
    feature_a: &str,
    feature_b: &str,
) -> Result<DependenceRecords> {
    let a = feature_index(names, feature_a)?;
    let b = feature_index(names, feature_b)?;
    check_dims(attrs, names)?;
    let points: Vec<DependencePoint> = attrs
        .iter()
        .map(|s| DependencePoint {
            value_a: s.instance[a],
            phi_a: s.phi[a],
            value_b: s.instance[b],
        })
        .collect();
    let va: Vec<f64> = points.iter().map(|p| p.value_a).collect();
    let vb: Vec<f64> = points.iter().map(|p| p.value_b).collect();
    Ok(DependenceRecords {
        feature_a: feature_a.to_string(),
        feature_b: feature_b.to_string(),
        value_correlation: pearson(&va, &vb),
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub feature: String,
    pub value: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfallStep {
    pub label: String,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceExplanation {
    pub instance: usize,
    pub output_dim: usize,
    pub phi0: f64,
    pub prediction: f64,
    pub residual: f64,
    /// Ordered by |φ| descending, ties by feature index.
    pub contributions: Vec<Contribution>,
    /// Cumulative path from `phi0`: the top contributions, then one
    /// "other features" step for the rest.
    pub waterfall: Vec<WaterfallStep>,
    /// `phi0` plus every φ, added in contribution order.
    pub endpoint: f64,
}

pub fn instance_explanation(
    index: usize,
    attr: &ShapleyAttribution,
    names: &[String],
) -> Result<InstanceExplanation> {
    check_dims(std::slice::from_ref(attr), names)?;
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| {
        attr.phi[b]
            .abs()
            .total_cmp(&attr.phi[a].abs())
            .then(a.cmp(&b))
    });
    let contributions: Vec<Contribution> = order
        .iter()
        .map(|&i| Contribution {
            feature: names[i].clone(),
            value: attr.instance[i],
            phi: attr.phi[i],
        })
        .collect();
    let mut waterfall = Vec::new();
    let mut acc = attr.phi0;
    for c in contributions.iter().take(WATERFALL_TOP) {
        let start = acc;
        acc += c.phi;
        waterfall.push(WaterfallStep {
            label: c.feature.clone(),
            start,
            end: acc,
        });
    }
    if contributions.len() > WATERFALL_TOP {
        let start = acc;
        for c in &contributions[WATERFALL_TOP..] {
            acc += c.phi;
        }
        waterfall.push(WaterfallStep {
            label: format!("{} other features", contributions.len() - WATERFALL_TOP),
            start,
            end: acc,
        });
    }
    Ok(InstanceExplanation {
        instance: index,
        output_dim: attr.output_dim,
        phi0: attr.phi0,
        prediction: attr.prediction,
        residual: attr.reconstruction_residual,
        contributions,
        waterfall,
        endpoint: acc,
    })
}

/// Per-feature median of a set of rows.
pub fn feature_medians(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = rows.first() else {
        return Err(Error::Empty("threshold rows"));
    };
    Ok((0..first.len())
        .map(|k| {
            let mut col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            col.sort_by(f64::total_cmp);
            let mid = col.len() / 2;
            if col.len() % 2 == 1 {
                col[mid]
            } else {
                0.5 * (col[mid - 1] + col[mid])
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Marker {
    Light,
    Heavy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustCheckResult {
    pub markers: Vec<Vec<Marker>>,
    pub signs: Vec<Vec<Sign>>,
    pub agreement_fraction: f64,
    /// How the thresholds were chosen, e.g. `train-median`.
    pub threshold_mode: String,
    pub thresholds: Vec<f64>,
}

/// A feature is heavy when its value is at or above its threshold. A cell
/// agrees when heavy pairs with φ > 0 or light with φ < 0; φ = 0 disagrees.
pub fn trust_check(
    attrs: &[ShapleyAttribution],
    thresholds: &[f64],
    threshold_mode: &str,
) -> Result<TrustCheckResult> {
    if attrs.is_empty() {
        return Err(Error::Empty("trust check input"));
    }
    let p = thresholds.len();
    let mut agree = 0usize;
    let mut markers = Vec::with_capacity(attrs.len());
    let mut signs = Vec::with_capacity(attrs.len());
    for a in attrs {
        if a.phi.len() != p || a.instance.len() != p {
            return Err(Error::Dimension {
                what: "trust check attribution",
                expected: p,
                found: a.phi.len(),
            });
        }
        let m: Vec<Marker> = a
            .instance
            .iter()
            .zip(thresholds)
            .map(|(x, t)| if x < t { Marker::Light } else { Marker::Heavy })
            .collect();
        let s: Vec<Sign> = a
            .phi
            .iter()
            .map(|&v| {
                if v > 0.0 {
                    Sign::Positive
                } else if v < 0.0 {
                    Sign::Negative
                } else {
                    Sign::Zero
                }
            })
            .collect();
        agree += m
            .iter()
            .zip(&s)
            .filter(|pair| {
                matches!(
                    pair,
                    (Marker::Heavy, Sign::Positive) | (Marker::Light, Sign::Negative)
                )
            })
            .count();
        markers.push(m);
        signs.push(s);
    }
    Ok(TrustCheckResult {
        markers,
        signs,
        agreement_fraction: agree as f64 / (attrs.len() * p).max(1) as f64,
        threshold_mode: threshold_mode.to_string(),
        thresholds: thresholds.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "product", rename_all = "lowercase")]
pub enum Product {
    Bar(GlobalImportance),
    Summary { records: Vec<SummaryRecord> },
    Dependence(DependenceRecords),
    Force(InstanceExplanation),
    Waterfall(InstanceExplanation),
}

const WIDTH: f64 = 800.0;
const ROW: f64 = 22.0;
const LEFT: f64 = 140.0;
const RIGHT: f64 = 40.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Blue (0) to red (1).
fn color(t: f64) -> String {
    let t = if t.is_finite() {
        t.clamp(0.0, 1.0)
    } else {
        0.5
    };
    let r = (30.0 + 225.0 * t).round() as u8;
    let b = (255.0 - 225.0 * t).round() as u8;
    format!("#{r:02x}40{b:02x}")
}

struct Canvas {
    out: String,
    height: f64,
}

impl Canvas {
    fn new(title: &str, rows: usize) -> Self {
        let height = TOP + BOTTOM + ROW * rows.max(4) as f64;
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
        Self { out, height }
    }

    fn plot_bottom(&self) -> f64 {
        self.height - BOTTOM
    }

    fn axes(&mut self, x_label: &str, lo: f64, hi: f64) {
        let y = self.plot_bottom();
        let _ = writeln!(
            self.out,
            r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{y}" stroke="black"/>"#
        );
        let _ = writeln!(
            self.out,
            r#"<line x1="{LEFT}" y1="{y}" x2="{}" y2="{y}" stroke="black"/>"#,
            WIDTH - RIGHT
        );
        for k in 0..=4 {
            let v = lo + (hi - lo) * k as f64 / 4.0;
            let x = LEFT + (WIDTH - LEFT - RIGHT) * k as f64 / 4.0;
            let _ = writeln!(
                self.out,
                r#"<line x1="{x:.2}" y1="{y}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
                y + 4.0
            );
            let _ = writeln!(
                self.out,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                y + 16.0,
                fmt_num(v)
            );
        }
        let _ = writeln!(
            self.out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            (LEFT + WIDTH - RIGHT) / 2.0,
            y + 34.0,
            escape(x_label)
        );
    }

    fn no_data(&mut self) {
        let _ = writeln!(
            self.out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" fill="gray">no data</text>"#,
            (LEFT + WIDTH - RIGHT) / 2.0,
            (TOP + self.plot_bottom()) / 2.0
        );
    }

    fn row_label(&mut self, row: usize, label: &str) {
        let _ = writeln!(
            self.out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            row_mid(row) + 4.0,
            escape(label)
        );
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn row_mid(row: usize) -> f64 {
    TOP + ROW * (row as f64 + 0.5)
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Maps [lo, hi] onto the plot's x extent.
struct Scale {
    lo: f64,
    hi: f64,
}

impl Scale {
    fn over(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Self { lo: 0.0, hi: 1.0 };
        }
        if hi - lo < 1e-12 {
            let pad = lo.abs().max(1.0) * 0.5;
            return Self {
                lo: lo - pad,
                hi: hi + pad,
            };
        }
        Self { lo, hi }
    }

    fn x(&self, v: f64) -> f64 {
        LEFT + (WIDTH - LEFT - RIGHT) * (v - self.lo) / (self.hi - self.lo)
    }
}

pub fn render_svg(product: &Product) -> String {
    match product {
        Product::Bar(g) => {
            let mut c = Canvas::new(&format!("mean |phi| ({})", g.output), g.ranking.len());
            let scale = Scale::over(g.ranking.iter().map(|f| f.mean_abs_phi).chain([0.0]));
            c.axes("mean |phi|", scale.lo, scale.hi);
            if g.ranking.is_empty() {
                c.no_data();
            }
            for (row, f) in g.ranking.iter().enumerate() {
                c.row_label(row, &f.feature);
                let _ = writeln!(
                    c.out,
                    r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#d0406f"/>"##,
                    scale.x(0.0),
                    row_mid(row) - ROW * 0.35,
                    scale.x(f.mean_abs_phi) - scale.x(0.0),
                    ROW * 0.7
                );
            }
            c.finish()
        }
        Product::Summary { records } => {
            let mut c = Canvas::new("summary", records.len());
            let scale = Scale::over(
                records
                    .iter()
                    .flat_map(|r| r.points.iter().map(|p| p.phi))
                    .chain([0.0]),
            );
            c.axes("phi (color: feature value percentile)", scale.lo, scale.hi);
            if records.iter().all(|r| r.points.is_empty()) {
                c.no_data();
            }
            let zero = scale.x(0.0);
            let _ = writeln!(
                c.out,
                r#"<line x1="{zero:.2}" y1="{TOP}" x2="{zero:.2}" y2="{:.2}" stroke="gray"/>"#,
                c.plot_bottom()
            );
            for (row, r) in records.iter().enumerate() {
                c.row_label(row, &r.feature);
                for p in &r.points {
                    let _ = writeln!(
                        c.out,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}"/>"#,
                        scale.x(p.phi),
                        row_mid(row),
                        color(p.percentile)
                    );
                }
            }
            c.finish()
        }
        Product::Dependence(d) => {
            let mut c = Canvas::new(
                &format!("{} dependence (color: {})", d.feature_a, d.feature_b),
                16,
            );
            let xs = Scale::over(d.points.iter().map(|p| p.value_a));
            let ys = Scale::over(d.points.iter().map(|p| p.phi_a));
            let cs = Scale::over(d.points.iter().map(|p| p.value_b));
            c.axes(&d.feature_a, xs.lo, xs.hi);
            let bottom = c.plot_bottom();
            let _ = writeln!(
                c.out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">phi {}</text>"#,
                LEFT - 6.0,
                TOP + 4.0,
                escape(&d.feature_a)
            );
            if d.points.is_empty() {
                c.no_data();
            }
            for p in &d.points {
                let y = bottom - (bottom - TOP) * (p.phi_a - ys.lo) / (ys.hi - ys.lo);
                let t = (p.value_b - cs.lo) / (cs.hi - cs.lo);
                let _ = writeln!(
                    c.out,
                    r#"<circle cx="{:.2}" cy="{y:.2}" r="3" fill="{}"/>"#,
                    xs.x(p.value_a),
                    color(t)
                );
            }
            c.finish()
        }
        Product::Force(e) => {
            let shown: Vec<&Contribution> = e.contributions.iter().take(WATERFALL_TOP).collect();
            let mut c = Canvas::new(
                &format!("force: instance {} (base {})", e.instance, fmt_num(e.phi0)),
                shown.len(),
            );
            let scale = Scale::over(shown.iter().map(|k| k.phi).chain([0.0]));
            c.axes("phi", scale.lo, scale.hi);
            if shown.is_empty() {
                c.no_data();
            }
            for (row, k) in shown.iter().enumerate() {
                c.row_label(row, &format!("{} = {}", k.feature, fmt_num(k.value)));
                let (x0, x1) = (scale.x(0.0), scale.x(k.phi));
                let fill = if k.phi >= 0.0 { "#ff0051" } else { "#008bfb" };
                let _ = writeln!(
                    c.out,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                    x0.min(x1),
                    row_mid(row) - ROW * 0.35,
                    (x1 - x0).abs(),
                    ROW * 0.7
                );
            }
            c.finish()
        }
        Product::Waterfall(e) => {
            let mut c = Canvas::new(
                &format!(
                    "waterfall: instance {} (f = {})",
                    e.instance,
                    fmt_num(e.endpoint)
                ),
                e.waterfall.len(),
            );
            let scale = Scale::over(
                e.waterfall
                    .iter()
                    .flat_map(|s| [s.start, s.end])
                    .chain([e.phi0]),
            );
            c.axes("model output", scale.lo, scale.hi);
            if e.waterfall.is_empty() {
                c.no_data();
            }
            for (row, s) in e.waterfall.iter().enumerate() {
                c.row_label(row, &s.label);
                let (x0, x1) = (scale.x(s.start), scale.x(s.end));
                let fill = if s.end >= s.start {
                    "#ff0051"
                } else {
                    "#008bfb"
                };
                let _ = writeln!(
                    c.out,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                    x0.min(x1),
                    row_mid(row) - ROW * 0.35,
                    (x1 - x0).abs().max(0.5),
                    ROW * 0.7
                );
            }
            c.finish()
        }
    }
}

pub fn emit_svg(product: &Product, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_svg(product)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regressor::FnPredictor;
    use crate::shapley::{exact_shapley, Background, Method};

    fn attr(phi: Vec<f64>, instance: Vec<f64>, phi0: f64) -> ShapleyAttribution {
        let prediction = phi0 + phi.iter().sum::<f64>();
        ShapleyAttribution {
            phi,
            phi0,
            output_dim: 0,
            instance,
            prediction,
            method: Method::Exact,
            reconstruction_residual: 0.0,
            sigma: None,
            degenerate_kernel: false,
        }
    }

    fn names(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("f{i}")).collect()
    }

    #[test]
    fn ieee33_names() {
        let net = NetworkModel::ieee33();
        let f = feature_names(&net);
        assert_eq!(f.len(), 64);
        assert_eq!(
            (
                f[0].as_str(),
                f[31].as_str(),
                f[32].as_str(),
                f[63].as_str()
            ),
            ("P2", "P33", "Q2", "Q33")
        );
        assert_eq!(
            output_names(&net),
            ["tap", "cb18", "cb33", "qwt10", "qwt25", "qpv22"]
        );
        assert_eq!(output_index(&net, "cb33").unwrap(), 2);
        assert!(matches!(
            output_index(&net, "nope"),
            Err(Error::UnknownOutput(_))
        ));
    }

    #[test]
    fn global_ranking_sorts_absolutes() {
        let g = global_importance(
            &[attr(vec![0.0, -5.0, 2.0], vec![0.0; 3], 0.0)],
            &names(3),
            "tap",
        )
        .unwrap();
        let order: Vec<&str> = g.ranking.iter().map(|f| f.feature.as_str()).collect();
        assert_eq!(order, ["f2", "f3", "f1"]);
        assert_eq!(g.ranking[0].mean_abs_phi, 5.0);
        assert!(global_importance(&[attr(vec![1.0], vec![0.0], 0.0)], &names(3), "tap").is_err());
    }

    #[test]
    fn combined_sums_outputs() {
        let n = names(2);
        let a = global_importance(&[attr(vec![1.0, 0.5], vec![0.0; 2], 0.0)], &n, "a").unwrap();
        let b = global_importance(&[attr(vec![0.0, -1.0], vec![0.0; 2], 0.0)], &n, "b").unwrap();
        let c = combined_importance(vec![a, b], &n).unwrap();
        assert_eq!(c.ranking[0].feature, "f2");
        assert_eq!(c.ranking[0].mean_abs_phi, 1.5);
        assert_eq!(c.per_output.len(), 2);
    }

    #[test]
    fn summary_shape_and_errors() {
        let n = names(3);
        let one = [attr(vec![0.1, 0.2, 0.3], vec![1.0, 2.0, 3.0], 0.0)];
        let s = summary_records(&one, &n, 1).unwrap();
        assert_eq!((s.len(), s[0].points.len()), (1, 1));
        assert_eq!(s[0].feature, "f3");
        assert!(summary_records(&one, &n, 4).is_err());
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(
            serde_json::from_str::<Vec<SummaryRecord>>(&json).unwrap(),
            s
        );
    }

    #[test]
    fn dependence_records_constant_b() {
        let n = names(2);
        let attrs: Vec<_> = (0..5)
            .map(|k| attr(vec![k as f64, 0.0], vec![k as f64, 3.0], 0.0))
            .collect();
        let d = dependence_records(&attrs, &n, "f1", "f2").unwrap();
        assert_eq!(d.points.len(), 5);
        assert!(d.points.iter().all(|p| p.value_b == 3.0));
        assert!(matches!(
            dependence_records(&attrs, &n, "f1", "zz"),
            Err(Error::UnknownFeature(_))
        ));
    }

    #[test]
    fn waterfall_paths() {
        let e =
            instance_explanation(0, &attr(vec![2.0, -1.0], vec![0.0; 2], 5.0), &names(2)).unwrap();
        let path: Vec<(f64, f64)> = e.waterfall.iter().map(|s| (s.start, s.end)).collect();
        assert_eq!(path, [(5.0, 7.0), (7.0, 6.0)]);
        assert_eq!(e.endpoint, 6.0);
        let flat =
            instance_explanation(0, &attr(vec![0.0; 3], vec![0.0; 3], 1.5), &names(3)).unwrap();
        assert!(flat
            .waterfall
            .iter()
            .all(|s| s.start == 1.5 && s.end == 1.5));
    }

    #[test]
    fn waterfall_rolls_up_tail() {
        let phi: Vec<f64> = (0..14).map(|k| (k as f64 - 6.5) * 0.1).collect();
        let e =
            instance_explanation(3, &attr(phi.clone(), vec![0.0; 14], 0.0), &names(14)).unwrap();
        assert_eq!(e.waterfall.len(), WATERFALL_TOP + 1);
        assert_eq!(e.waterfall.last().unwrap().label, "4 other features");
        let abs: Vec<f64> = e.contributions.iter().map(|c| c.phi.abs()).collect();
        let sorted = {
            let mut s = abs.clone();
            s.sort_by(|a, b| b.total_cmp(a));
            s
        };
        assert_eq!(abs, sorted);
        assert_eq!(e.waterfall.last().unwrap().end, e.endpoint);
    }

    #[test]
    fn exact_endpoint_matches_prediction() {
        let f = FnPredictor::new("f", 12, |x: &[f64]| {
            x.iter()
                .enumerate()
                .map(|(i, v)| (i as f64 + 1.0) * v * v)
                .sum()
        });
        let bg = Background::new(vec![vec![0.1; 12], vec![-0.3; 12]]).unwrap();
        let x: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
        let a = exact_shapley(&f, &x, 0, &bg).unwrap();
        let e = instance_explanation(0, &a, &names(12)).unwrap();
        assert!((e.endpoint - a.prediction).abs() <= 1e-9 * a.prediction.abs().max(1.0));
    }

    #[test]
    fn trust_additive_model_agrees_fully() {
        // background symmetric around the medians so exact φ_i = x_i − median_i
        let med = vec![1.0, 2.0, 3.0];
        let f = FnPredictor::new("f", 3, {
            let med = med.clone();
            move |x: &[f64]| x.iter().zip(&med).map(|(a, m)| a - m).sum()
        });
        let bg = Background::new(vec![vec![0.0, 1.0, 2.0], vec![2.0, 3.0, 4.0]]).unwrap();
        let xs = [vec![0.5, 2.5, 9.0], vec![1.5, 0.0, 2.0]];
        let attrs: Vec<_> = xs
            .iter()
            .map(|x| exact_shapley(&f, x, 0, &bg).unwrap())
            .collect();
        let t = trust_check(&attrs, &med, "train-median").unwrap();
        assert_eq!(t.agreement_fraction, 1.0);
        let scaled: Vec<_> = attrs
            .iter()
            .map(|a| ShapleyAttribution {
                phi: a.phi.iter().map(|v| v * 7.5).collect(),
                ..a.clone()
            })
            .collect();
        assert_eq!(
            trust_check(&scaled, &med, "train-median")
                .unwrap()
                .agreement_fraction,
            1.0
        );
    }

    #[test]
    fn trust_zero_phi_disagrees() {
        let t = trust_check(
            &[attr(vec![0.0, 1.0], vec![5.0, 5.0], 0.0)],
            &[1.0, 1.0],
            "train-median",
        )
        .unwrap();
        assert_eq!(t.agreement_fraction, 0.5);
        assert_eq!(t.signs[0][0], Sign::Zero);
        assert!(trust_check(&[], &[1.0], "m").is_err());
    }

    #[test]
    fn trust_random_signs_near_half() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let attrs: Vec<_> = (0..500)
            .map(|_| {
                let x: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..2.0)).collect();
                let phi: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
                attr(phi, x, 0.0)
            })
            .collect();
        let t = trust_check(&attrs, &vec![1.0; 64], "train-median").unwrap();
        assert!((t.agreement_fraction - 0.5).abs() < 0.05);
    }

    #[test]
    fn medians() {
        assert_eq!(
            feature_medians(&[vec![1.0], vec![3.0], vec![2.0]]).unwrap(),
            vec![2.0]
        );
        assert_eq!(feature_medians(&[vec![1.0], vec![4.0]]).unwrap(), vec![2.5]);
    }

    #[test]
    fn svg_bars_empty_and_determinism() {
        let n = names(20);
        let phi: Vec<f64> = (0..20).map(|k| k as f64).collect();
        let g = global_importance(&[attr(phi, vec![0.0; 20], 0.0)], &n, "tap").unwrap();
        let svg = render_svg(&Product::Bar(g.clone()));
        assert_eq!(svg.matches("<rect x=").count(), 20);
        assert_eq!(svg, render_svg(&Product::Bar(g)));
        let empty = render_svg(&Product::Summary { records: vec![] });
        assert!(empty.contains("no data") && empty.contains("<line"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.svg");
        emit_svg(&Product::Summary { records: vec![] }, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), empty);
        assert!(emit_svg(
            &Product::Summary { records: vec![] },
            dir.path().join("no/such/dir.svg")
        )
        .is_err());
    }
}
