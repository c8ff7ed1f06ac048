use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lane::Lane;

/// Stroke style of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStyle {
    pub color: String,
    pub stroke_width: f64,
    pub dashed: bool,
    pub opacity: f64,
}

impl LayerStyle {
    pub fn ground_truth() -> Self {
        Self {
            color: "#2e7d32".into(),
            stroke_width: 6.0,
            dashed: false,
            opacity: 0.6,
        }
    }

    pub fn candidates() -> Self {
        Self {
            color: "#9e9e9e".into(),
            stroke_width: 1.0,
            dashed: false,
            opacity: 0.5,
        }
    }

    pub fn detections() -> Self {
        Self {
            color: "#d32f2f".into(),
            stroke_width: 2.5,
            dashed: true,
            opacity: 1.0,
        }
    }
}

/// A named set of polylines drawn with one style.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub style: LayerStyle,
    pub lanes: Vec<Vec<(f64, f64)>>,
}

impl Layer {
    /// Draws the valid part of each lane.
    pub fn from_lanes(name: &str, style: LayerStyle, lanes: &[Lane]) -> Self {
        Self {
            name: name.into(),
            style,
            lanes: lanes.iter().map(|l| l.valid_points().collect()).collect(),
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// SVG document with a frame, one polyline per lane, and a legend.
///
/// Coordinates are written with two decimals, so the output is a pure
/// function of the input.
pub fn svg_string(title: &str, image_size: (u32, u32), layers: &[Layer]) -> String {
    let (w, h) = image_size;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, "<title>{}</title>", escape(title));
    let _ = writeln!(
        s,
        r##"<rect class="frame" x="0" y="0" width="{w}" height="{h}" fill="#ffffff" stroke="#000000" stroke-width="2"/>"##
    );
    for layer in layers {
        let st = &layer.style;
        let dash = if st.dashed {
            r#" stroke-dasharray="8 4""#
        } else {
            ""
        };
        let _ = writeln!(
            s,
            r#"<g class="layer" id="{}" fill="none" stroke="{}" stroke-width="{:.2}" stroke-opacity="{:.2}"{dash}>"#,
            escape(&layer.name),
            escape(&st.color),
            st.stroke_width,
            st.opacity
        );
        for lane in &layer.lanes {
            let pts: Vec<String> = lane.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let _ = writeln!(s, r#"<polyline points="{}"/>"#, pts.join(" "));
        }
        s.push_str("</g>\n");
    }
    s.push_str("<g class=\"legend\" font-family=\"sans-serif\" font-size=\"16\">\n");
    for (i, layer) in layers.iter().enumerate() {
        let y = 24 + 24 * i;
        let _ = writeln!(
            s,
            r#"<line x1="12" y1="{y}" x2="40" y2="{y}" stroke="{}" stroke-width="4"/>"#,
            escape(&layer.style.color)
        );
        let _ = writeln!(
            s,
            r#"<text x="48" y="{}">{} ({})</text>"#,
            y + 5,
            escape(&layer.name),
            layer.lanes.len()
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}

pub fn render_svg(
    path: &Path,
    title: &str,
    image_size: (u32, u32),
    layers: &[Layer],
) -> Result<()> {
    fs::write(path, svg_string(title, image_size, layers))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lane::SamplingGrid;
    use std::sync::Arc;

    #[test]
    fn empty_render_has_frame_only() {
        let svg = svg_string("empty", (1280, 720), &[]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("class=\"frame\""));
        assert!(!svg.contains("<polyline"));
    }

    #[test]
    fn one_lane_one_polyline() {
        let grid = Arc::new(SamplingGrid::uniform(1280, 720, 50, 710.0, 220.0).unwrap());
        let lane = Lane::full(grid, vec![640.0; 50]).unwrap();
        let layer = Layer::from_lanes("gt", LayerStyle::ground_truth(), &[lane]);
        let svg = svg_string("one", (1280, 720), &[layer]);
        assert_eq!(svg.matches("<polyline").count(), 1);
        let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        assert_eq!(line.matches(',').count(), 50);
    }
}
