//! Small static SVG charts. The CSV files are the contract; these are for eyeballing.

use std::fmt::Write as _;

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 280.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Panel {
    pub title: String,
    pub xlabel: String,
    pub ylabel: String,
    pub series: Vec<Series>,
}

struct Frame {
    x0: f64,
    y0: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Frame {
    fn new(x0: f64, y0: f64, xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        Self { x0, y0, xr: range(xs), yr: range(ys) }
    }

    fn px(&self, x: f64) -> f64 {
        self.x0 + MARGIN + (x - self.xr.0) / (self.xr.1 - self.xr.0) * (PANEL_W - 1.5 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        self.y0 + PANEL_H - MARGIN - (y - self.yr.0) / (self.yr.1 - self.yr.0) * (PANEL_H - 1.7 * MARGIN)
    }

    fn axes(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let (l, r) = (self.x0 + MARGIN, self.x0 + PANEL_W - MARGIN / 2.0);
        let (t, b) = (self.y0 + 0.7 * MARGIN, self.y0 + PANEL_H - MARGIN);
        writeln!(
            out,
            r##"<rect x="{l:.1}" y="{t:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#444"/>"##,
            r - l,
            b - t
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="13">{}</text>"#,
            (l + r) / 2.0,
            self.y0 + 20.0,
            esc(title)
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11">{}</text>"#,
            (l + r) / 2.0,
            b + 32.0,
            esc(xlabel)
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
            self.x0 + 12.0,
            (t + b) / 2.0,
            self.x0 + 12.0,
            (t + b) / 2.0,
            esc(ylabel)
        )
        .unwrap();
        for (v, anchor_x) in [(self.xr.0, l), (self.xr.1, r)] {
            writeln!(
                out,
                r#"<text x="{anchor_x:.1}" y="{:.1}" text-anchor="middle" font-size="9">{}</text>"#,
                b + 14.0,
                tick(v)
            )
            .unwrap();
        }
        for (v, anchor_y) in [(self.yr.0, b), (self.yr.1, t + 8.0)] {
            writeln!(
                out,
                r#"<text x="{:.1}" y="{anchor_y:.1}" text-anchor="end" font-size="9">{}</text>"#,
                l - 4.0,
                tick(v)
            )
            .unwrap();
        }
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn document(width: f64, height: f64, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

/// Side-by-side line plots.
pub fn line_panels(panels: &[Panel]) -> String {
    let mut body = String::new();
    for (i, panel) in panels.iter().enumerate() {
        let pts = || panel.series.iter().flat_map(|s| s.points.iter());
        let frame = Frame::new(i as f64 * PANEL_W, 0.0, pts().map(|p| p.0), pts().map(|p| p.1));
        frame.axes(&mut body, &panel.title, &panel.xlabel, &panel.ylabel);
        for (k, s) in panel.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let path: Vec<String> = s
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|&(x, y)| format!("{:.1},{:.1}", frame.px(x), frame.py(y)))
                .collect();
            writeln!(
                body,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                path.join(" ")
            )
            .unwrap();
            if panel.series.len() > 1 {
                let ly = 0.7 * MARGIN + 14.0 + 13.0 * k as f64;
                let lx = frame.x0 + PANEL_W - MARGIN / 2.0 - 8.0;
                writeln!(
                    body,
                    r#"<text x="{lx:.1}" y="{ly:.1}" text-anchor="end" font-size="10" fill="{color}">{}</text>"#,
                    esc(&s.name)
                )
                .unwrap();
            }
        }
    }
    document(PANEL_W * panels.len().max(1) as f64, PANEL_H, &body)
}

/// Scatter plot with optional per-point labels.
pub fn scatter(title: &str, xlabel: &str, ylabel: &str, points: &[(f64, f64)], labels: Option<&[String]>) -> String {
    let mut body = String::new();
    let frame = Frame::new(0.0, 0.0, points.iter().map(|p| p.0), points.iter().map(|p| p.1));
    frame.axes(&mut body, title, xlabel, ylabel);
    for (i, &(x, y)) in points.iter().enumerate() {
        if !(x.is_finite() && y.is_finite()) {
            continue;
        }
        let (cx, cy) = (frame.px(x), frame.py(y));
        writeln!(body, r#"<circle cx="{cx:.1}" cy="{cy:.1}" r="3" fill="{}"/>"#, COLORS[0]).unwrap();
        if let Some(l) = labels.and_then(|l| l.get(i)) {
            writeln!(body, r#"<text x="{:.1}" y="{:.1}" font-size="8">{}</text>"#, cx + 4.0, cy - 4.0, esc(l)).unwrap();
        }
    }
    document(PANEL_W, PANEL_H, &body)
}

/// Overlaid histograms on shared bins `edges` (length `counts[k].len() + 1`).
pub fn histogram(title: &str, xlabel: &str, edges: &[f64], groups: &[(String, Vec<f64>)]) -> String {
    let mut body = String::new();
    let ymax = groups.iter().flat_map(|g| g.1.iter().cloned()).fold(0.0, f64::max).max(1.0);
    let frame = Frame::new(0.0, 0.0, edges.iter().cloned(), [0.0, ymax].into_iter());
    frame.axes(&mut body, title, xlabel, "count");
    for (k, (name, counts)) in groups.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        for (b, &c) in counts.iter().enumerate() {
            if c <= 0.0 {
                continue;
            }
            let (x0, x1) = (frame.px(edges[b]), frame.px(edges[b + 1]));
            let (y0, y1) = (frame.py(c), frame.py(0.0));
            writeln!(
                body,
                r#"<rect x="{x0:.1}" y="{y0:.1}" width="{:.1}" height="{:.1}" fill="{color}" fill-opacity="0.45"/>"#,
                (x1 - x0).max(0.5),
                y1 - y0
            )
            .unwrap();
        }
        writeln!(
            body,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10" fill="{color}">{}</text>"#,
            PANEL_W - MARGIN / 2.0 - 8.0,
            0.7 * MARGIN + 14.0 + 13.0 * k as f64,
            esc(name)
        )
        .unwrap();
    }
    document(PANEL_W, PANEL_H, &body)
}

/// Two orthographic views (x–y and x–z) of a point set coloured by `values`.
pub fn point_map(title: &str, points: &[[f64; 3]], values: &[f64], value_label: &str) -> String {
    let mut body = String::new();
    let (lo, hi) = range(values.iter().cloned());
    for (v, (a, b, name)) in [(0usize, 1usize, "x-y"), (0, 2, "x-z")].into_iter().enumerate() {
        let frame = Frame::new(v as f64 * PANEL_W, 0.0, points.iter().map(|p| p[a]), points.iter().map(|p| p[b]));
        frame.axes(&mut body, &format!("{title} ({name})"), &name[..1], &name[2..]);
        // draw far points first so the near side stays visible
        let depth = 3 - a - b;
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&i, &j| points[i][depth].total_cmp(&points[j][depth]).then(i.cmp(&j)));
        for i in order {
            let t = ((values[i] - lo) / (hi - lo)).clamp(0.0, 1.0);
            writeln!(
                body,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{}"/>"#,
                frame.px(points[i][a]),
                frame.py(points[i][b]),
                ramp(if t.is_finite() { t } else { 0.0 })
            )
            .unwrap();
        }
    }
    writeln!(
        body,
        r#"<text x="{:.1}" y="{:.1}" font-size="10">{}: {} (blue) .. {} (red)</text>"#,
        MARGIN,
        PANEL_H - 6.0,
        esc(value_label),
        tick(lo),
        tick(hi)
    )
    .unwrap();
    document(2.0 * PANEL_W, PANEL_H, &body)
}

/// Blue to red through light grey.
fn ramp(t: f64) -> String {
    let (r, g, b) = if t < 0.5 {
        let s = t * 2.0;
        (40.0 + s * 180.0, 90.0 + s * 130.0, 200.0 + s * 20.0)
    } else {
        let s = (t - 0.5) * 2.0;
        (220.0 + s * 10.0, 220.0 - s * 180.0, 220.0 - s * 180.0)
    };
    format!("#{:02x}{:02x}{:02x}", r as u8, g as u8, b as u8)
}
