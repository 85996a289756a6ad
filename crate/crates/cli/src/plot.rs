use std::fmt::Write as _;

/// One model's forecast for the plotted day.
pub struct Curve<'a> {
    pub label: &'a str,
    pub values: &'a [f64],
}

const W: f64 = 900.0;
const H: f64 = 420.0;
const PAD: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

struct Frame {
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, i: f64) -> f64 {
        PAD + i / self.x_max.max(1.0) * (W - 2.0 * PAD)
    }

    fn y(&self, v: f64) -> f64 {
        let span = (self.y_max - self.y_min).max(1e-12);
        H - PAD - (v - self.y_min) / span * (H - 2.0 * PAD)
    }
}

fn polyline(out: &mut String, f: &Frame, start: usize, values: &[f64], color: &str, width: f64, label: &str) {
    let pts: Vec<String> = values
        .iter()
        .enumerate()
        .map(|(i, v)| format!("{:.2},{:.2}", f.x((start + i) as f64), f.y(*v)))
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{}"><title>{label}</title></polyline>"#,
        pts.join(" ")
    );
}

/// Input tail, true continuation and every forecast of one test day. Each
/// forecast also gets a shaded band between it and the truth; a thin band
/// means a close forecast.
pub fn day_svg(title: &str, tail: &[f64], truth: &[f64], curves: &[Curve]) -> String {
    let start = tail.len();
    let all = tail.iter().chain(truth).chain(curves.iter().flat_map(|c| c.values.iter()));
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let margin = 0.05 * (hi - lo).max(1e-9);
    let f = Frame {
        x_max: (start + truth.len()).saturating_sub(1) as f64,
        y_min: lo - margin,
        y_max: hi + margin,
    };
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{PAD}" y="25" font-family="sans-serif" font-size="15">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r##"<line x1="{x}" y1="{PAD}" x2="{x}" y2="{y}" stroke="#999" stroke-dasharray="4 3"/>"##,
        x = f.x(start as f64 - 0.5),
        y = H - PAD
    );
    for (k, c) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let upper: Vec<String> = c
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{:.2},{:.2}", f.x((start + i) as f64), f.y(*v)))
            .collect();
        let lower: Vec<String> = truth
            .iter()
            .enumerate()
            .rev()
            .map(|(i, v)| format!("{:.2},{:.2}", f.x((start + i) as f64), f.y(*v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polygon fill="{color}" fill-opacity="0.18" stroke="none" points="{} {}"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
    }
    let mut joined = tail.to_vec();
    joined.extend_from_slice(truth);
    polyline(&mut s, &f, 0, &joined, "black", 1.5, "observed");
    for (k, c) in curves.iter().enumerate() {
        polyline(&mut s, &f, start, c.values, COLORS[k % COLORS.len()], 1.8, c.label);
    }
    let mut y = PAD;
    for (k, label) in std::iter::once("observed").chain(curves.iter().map(|c| c.label)).enumerate() {
        let color = if k == 0 { "black" } else { COLORS[(k - 1) % COLORS.len()] };
        let x = W - PAD - 170.0;
        let _ = writeln!(s, r#"<rect x="{x}" y="{}" width="14" height="4" fill="{color}"/>"#, y - 4.0);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" font-family="sans-serif" font-size="12">{}</text>"#,
            x + 20.0,
            escape(label)
        );
        y += 16.0;
    }
    let _ = writeln!(
        s,
        r#"<text x="{PAD}" y="{}" font-family="sans-serif" font-size="11">range {lo:.3} .. {hi:.3}</text>"#,
        H - 15.0
    );
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_has_one_band_and_line_per_model() {
        let s = day_svg(
            "day 0 <test>",
            &[1.0, 2.0, 3.0],
            &[2.0, 1.0],
            &[Curve { label: "gru", values: &[2.5, 1.5] }, Curve { label: "tcn", values: &[2.0, 0.5] }],
        );
        assert!(s.starts_with("<svg"));
        assert_eq!(s.matches("<polygon").count(), 2);
        assert_eq!(s.matches("<polyline").count(), 3);
        assert!(s.contains("&lt;test&gt;"));
    }
}
