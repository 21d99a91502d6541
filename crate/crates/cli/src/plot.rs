//! Plot-data emission: labeled scatter CSVs for external tooling and a
//! small self-contained SVG scatter for a quick look at 2-D samples.
//! Output is a pure function of the inputs — coordinates use shortest
//! round-trip formatting and pixel positions are rounded to 1/100 px —
//! so identical runs write identical bytes.

use anyhow::Result;
use vdu_core::eval::{classify, ClassifierModel};

/// CSV rows of `x,y,label` for 2-D samples.
pub fn samples_csv(samples: &[Vec<f64>], classifier: &ClassifierModel) -> Result<String> {
    let mut out = String::from("x,y,label\n");
    for s in samples {
        let label = classify(classifier, s)?;
        out.push_str(&format!("{},{},{}\n", s[0], s[1], label));
    }
    Ok(out)
}

const PALETTE: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b4", "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
    "#9c755f", "#bab0ac",
];

const SIZE: f64 = 480.0;
const MARGIN: f64 = 8.0;

/// A fixed-viewport scatter of labeled 2-D samples. `extent` is the
/// half-width of the data window around the origin; points outside it
/// are clamped to the frame so divergent samples stay visible at the
/// edge instead of vanishing.
pub fn scatter_svg(
    title: &str,
    samples: &[Vec<f64>],
    classifier: &ClassifierModel,
    extent: f64,
) -> Result<String> {
    let span = SIZE - 2.0 * MARGIN;
    let to_px = |v: f64| -> f64 {
        let unit = ((v + extent) / (2.0 * extent)).clamp(0.0, 1.0);
        MARGIN + unit * span
    };
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{s}\" height=\"{s}\" \
         viewBox=\"0 0 {s} {s}\">\n",
        s = SIZE
    ));
    svg.push_str(&format!(
        "<rect width=\"{s}\" height=\"{s}\" fill=\"white\" stroke=\"#333\"/>\n",
        s = SIZE
    ));
    svg.push_str(&format!(
        "<text x=\"12\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
        title
    ));
    for s in samples {
        let label = classify(classifier, s)?;
        let color = PALETTE[label as usize % PALETTE.len()];
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.2\" fill=\"{}\" fill-opacity=\"0.55\"/>\n",
            to_px(s[0]),
            // SVG's y axis points down.
            SIZE - to_px(s[1]),
            color
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
