//! Self-contained SVG scatter plots of 2-D projections.

use std::fmt::Write as _;

use fairaudit_core::{AgeBin, Attribute, Gender, Race, SampleAnnotation};

pub const SIZE: f64 = 800.0;
const MARGIN: f64 = 40.0;
const LEGEND_WIDTH: f64 = 150.0;

const RACE_COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"];
const GENDER_COLORS: [&str; 2] = ["#1f77b4", "#e377c2"];
const AGE_COLORS: [&str; 6] = ["#440154", "#414487", "#2a788e", "#22a884", "#7ad151", "#fde725"];

/// Legend entries for an attribute in palette order.
pub fn legend(attribute: Attribute) -> Vec<(&'static str, &'static str)> {
    match attribute {
        Attribute::Race => Race::ALL.iter().map(|r| r.as_str()).zip(RACE_COLORS).collect(),
        Attribute::Gender => Gender::ALL.iter().map(|g| g.as_str()).zip(GENDER_COLORS).collect(),
        Attribute::AgeBin => AgeBin::all().map(|b| b.label()).zip(AGE_COLORS).collect(),
    }
}

pub fn label_of(a: &SampleAnnotation, attribute: Attribute) -> &'static str {
    match attribute {
        Attribute::Race => a.race.as_str(),
        Attribute::Gender => a.gender.as_str(),
        Attribute::AgeBin => a.age_bin.label(),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One circle per point, colored by `labels` (which must come from
/// [`legend`] for `attribute`), with the legend on the right.
pub fn scatter_svg(title: &str, coords: &[[f64; 2]], labels: &[&str], attribute: Attribute) -> String {
    let entries = legend(attribute);
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for c in coords {
        for k in 0..2 {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    let plot = SIZE - 2.0 * MARGIN - LEGEND_WIDTH;
    let span = (0..2).map(|k| hi[k] - lo[k]).fold(0.0f64, f64::max);
    let scale = if span > 0.0 { plot / span } else { 1.0 };
    let map = |k: usize, v: f64| {
        let off = if span > 0.0 { (plot - (hi[k] - lo[k]) * scale) / 2.0 } else { plot / 2.0 };
        MARGIN + off + (v - lo[k]) * scale
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        SIZE / 2.0,
        escape(title)
    );
    for (c, label) in coords.iter().zip(labels) {
        let color = entries.iter().find(|(l, _)| l == label).map_or("#7f7f7f", |(_, c)| c);
        // Flip y so larger values sit higher.
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}" fill-opacity="0.8"/>"#,
            map(0, c[0]),
            SIZE - map(1, c[1])
        );
    }
    let x = SIZE - MARGIN - LEGEND_WIDTH + 20.0;
    for (i, (label, color)) in entries.iter().enumerate() {
        let y = MARGIN + 20.0 + 22.0 * i as f64;
        let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="6" fill="{color}"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="13">{}</text>"#,
            x + 14.0,
            y + 4.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn has_one_marker_per_point_plus_legend() {
        let coords = [[0.0, 0.0], [1.0, 2.0], [-1.0, 0.5]];
        let svg = scatter_svg("t", &coords, &["Male", "Female", "Male"], Attribute::Gender);
        assert!(svg.starts_with("<svg") && svg.contains(r#"width="800""#));
        assert_eq!(svg.matches("<circle").count(), 3 + 2);
        assert!(svg.contains(">Female</text>"));
        let palette: Vec<_> = legend(Attribute::Race).iter().map(|e| e.0).collect();
        assert_eq!(palette, ["Caucasian", "African", "Asian", "Indian"]);
    }
}
