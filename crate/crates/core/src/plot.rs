//! SVG segmentation bars: ground truth first, predictions recolored through
//! their Hungarian matching against the ground truth.

use crate::cluster::run_lengths;
use crate::data_io::LabelSequence;
use crate::error::{Result, TsaError};
use crate::evaluate::match_labels;

const PALETTE: &[&str] = &[
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
    "#9c755f", "#bab0ac", "#1f77b4", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#17becf",
];

const WIDTH: f64 = 800.0;
const LABEL_WIDTH: f64 = 120.0;
const BAR_HEIGHT: f64 = 24.0;
const BAR_GAP: f64 = 12.0;

pub fn color(i: usize) -> String {
    if i < PALETTE.len() {
        PALETTE[i].to_string()
    } else {
        // golden-angle hues past the fixed palette
        format!("hsl({:.0},55%,55%)", (i as f64 * 137.508) % 360.0)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders one bar per sequence. Predicted label `p` takes the color of its
/// matched ground-truth class; unmatched labels get colors past the
/// ground-truth range.
pub fn segmentation_svg(gt: &LabelSequence, preds: &[(String, Vec<usize>)]) -> Result<String> {
    let n = gt.len();
    if n == 0 {
        return Err(TsaError::EmptyLabels);
    }
    let k_gt = gt.num_classes();
    let mut bars: Vec<(String, Vec<usize>)> = vec![("ground truth".into(), gt.labels.clone())];
    for (name, pred) in preds {
        if pred.len() != n {
            return Err(TsaError::DimensionMismatch(format!(
                "{name}: {} frames, ground truth has {n}",
                pred.len()
            )));
        }
        let m = match_labels(pred, &gt.labels)?;
        let mut extra = k_gt;
        let recolor: Vec<usize> = m
            .mapping
            .iter()
            .map(|g| {
                g.unwrap_or_else(|| {
                    extra += 1;
                    extra - 1
                })
            })
            .collect();
        bars.push((name.clone(), pred.iter().map(|&p| recolor[p]).collect()));
    }

    let scale = WIDTH / n as f64;
    let legend_y = bars.len() as f64 * (BAR_HEIGHT + BAR_GAP) + BAR_GAP;
    let height = legend_y + 20.0 * k_gt.div_ceil(4) as f64 + BAR_GAP;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{height}\" viewBox=\"0 0 {w} {height}\" font-family=\"sans-serif\" font-size=\"12\">\n",
        w = LABEL_WIDTH + WIDTH + BAR_GAP
    );
    for (b, (name, labels)) in bars.iter().enumerate() {
        let y = BAR_GAP + b as f64 * (BAR_HEIGHT + BAR_GAP);
        svg.push_str(&format!(
            "<text x=\"4\" y=\"{:.1}\">{}</text>\n<g class=\"bar\" id=\"bar-{b}\">\n",
            y + BAR_HEIGHT * 0.7,
            escape(name)
        ));
        for seg in run_lengths(labels) {
            svg.push_str(&format!(
                "<rect x=\"{:.3}\" y=\"{y:.1}\" width=\"{:.3}\" height=\"{BAR_HEIGHT}\" fill=\"{}\"/>\n",
                LABEL_WIDTH + seg.start as f64 * scale,
                (seg.end - seg.start) as f64 * scale,
                color(seg.label)
            ));
        }
        svg.push_str("</g>\n");
    }
    svg.push_str("<g class=\"legend\">\n");
    for (c, name) in gt.names.iter().enumerate() {
        let x = LABEL_WIDTH + (c % 4) as f64 * (WIDTH / 4.0);
        let y = legend_y + (c / 4) as f64 * 20.0;
        svg.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"6\" fill=\"{}\"/><text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
            x + 6.0,
            y + 6.0,
            color(c),
            x + 16.0,
            y + 10.0,
            escape(name)
        ));
    }
    svg.push_str("</g>\n</svg>\n");
    Ok(svg)
}
