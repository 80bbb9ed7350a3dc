//! Self-contained SVG emission: histogram overlays, trajectory fans, and
//! metric-vs-w sweeps. Vector primitives only, no renderer dependency, and
//! fully deterministic output for byte-level reproducibility.

use std::fmt::Write as _;

use igct::Real;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 20.0;
const MARGIN_B: f64 = 50.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        let pad = |lo: f64, hi: f64| {
            if lo == hi {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        let (x_min, x_max) = pad(x_min, x_max);
        let (y_min, y_max) = pad(y_min, y_max);
        Self {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_B
            - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn open_svg(out: &mut String) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="monospace" font-size="12">"#
    );
    let _ = writeln!(
        out,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (x0, y0) = (MARGIN_L, HEIGHT - MARGIN_B);
    let _ = writeln!(
        out,
        r#"<line x1="{x0}" y1="{y0}" x2="{:.2}" y2="{y0}" stroke="black"/>"#,
        WIDTH - MARGIN_R
    );
    let _ = writeln!(
        out,
        r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{MARGIN_T}" stroke="black"/>"#
    );
    for i in 0..=4 {
        let fx = f.x_min + (f.x_max - f.x_min) * i as f64 / 4.0;
        let px = f.px(fx);
        let _ = writeln!(
            out,
            r#"<line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#,
            y0 + 5.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{fx:.3}</text>"#,
            y0 + 20.0
        );
        let fy = f.y_min + (f.y_max - f.y_min) * i as f64 / 4.0;
        let py = f.py(fy);
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="black"/>"#,
            x0 - 5.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{fy:.3}</text>"#,
            x0 - 8.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x_label}</text>"#,
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{y_label}</text>"#,
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0
    );
}

fn polyline(out: &mut String, f: &Frame, points: &[(f64, f64)], color: &str) {
    let mut path = String::new();
    for (x, y) in points {
        let _ = write!(path, "{:.2},{:.2} ", f.px(*x), f.py(*y));
    }
    let _ = writeln!(
        out,
        r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
        path.trim_end()
    );
}

fn legend(out: &mut String, labels: &[String]) {
    for (i, label) in labels.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = MARGIN_T + 16.0 * i as f64 + 10.0;
        let x = WIDTH - MARGIN_R - 170.0;
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="3"/>"#,
            x + 22.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}">{label}</text>"#,
            x + 28.0,
            y + 4.0
        );
    }
}

/// Overlaid density histograms, one stepped polyline per labeled series.
pub fn histogram(series: &[(String, Vec<Real>)], bins: usize) -> igct::Result<String> {
    if series.is_empty() || series.iter().any(|(_, v)| v.is_empty()) {
        return Err(igct::Error::EmptyInput("histogram series"));
    }
    if bins == 0 {
        return Err(igct::Error::InvalidConfig {
            field: "plot.bins".into(),
            reason: "must be >= 1".into(),
        });
    }
    let lo = series
        .iter()
        .flat_map(|(_, v)| v.iter())
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let hi = series
        .iter()
        .flat_map(|(_, v)| v.iter())
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo == hi { (lo - 1.0, hi + 1.0) } else { (lo, hi) };
    let bin_w = (hi - lo) / bins as f64;

    let mut curves: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut y_max: f64 = 0.0;
    for (_, values) in series {
        let mut counts = vec![0usize; bins];
        for &v in values {
            let idx = (((v - lo) / bin_w) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        let n = values.len() as f64;
        let mut pts = Vec::with_capacity(2 * bins + 2);
        pts.push((lo, 0.0));
        for (i, &c) in counts.iter().enumerate() {
            let density = c as f64 / (n * bin_w);
            y_max = y_max.max(density);
            pts.push((lo + i as f64 * bin_w, density));
            pts.push((lo + (i + 1) as f64 * bin_w, density));
        }
        pts.push((hi, 0.0));
        curves.push(pts);
    }

    let frame = Frame::new(lo, hi, 0.0, y_max * 1.05);
    let mut out = String::new();
    open_svg(&mut out);
    axes(&mut out, &frame, "x", "density");
    for (i, pts) in curves.iter().enumerate() {
        polyline(&mut out, &frame, pts, PALETTE[i % PALETTE.len()]);
    }
    legend(&mut out, &series.iter().map(|(l, _)| l.clone()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    Ok(out)
}

/// Trajectory fan: x against log10(t), one polyline per trajectory.
pub fn trajectories(trajs: &[Vec<(Real, Real)>], max_shown: usize) -> igct::Result<String> {
    if trajs.is_empty() || trajs.iter().any(|t| t.is_empty()) {
        return Err(igct::Error::EmptyInput("trajectories"));
    }
    let shown = &trajs[..trajs.len().min(max_shown)];
    let mut x_lo = f64::INFINITY;
    let mut x_hi = f64::NEG_INFINITY;
    let mut t_lo = f64::INFINITY;
    let mut t_hi = f64::NEG_INFINITY;
    for traj in shown {
        for &(t, x) in traj {
            x_lo = x_lo.min(x);
            x_hi = x_hi.max(x);
            t_lo = t_lo.min(t.log10());
            t_hi = t_hi.max(t.log10());
        }
    }
    let frame = Frame::new(x_lo, x_hi, t_lo, t_hi);
    let mut out = String::new();
    open_svg(&mut out);
    axes(&mut out, &frame, "x", "log10 t");
    for traj in shown {
        let pts: Vec<(f64, f64)> = traj.iter().map(|&(t, x)| (x, t.log10())).collect();
        polyline(&mut out, &frame, &pts, "#1f77b480");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Metric against guidance strength, one polyline per labeled group.
pub fn sweep(groups: &[(String, Vec<(Real, Real)>)], metric: &str) -> igct::Result<String> {
    if groups.is_empty() || groups.iter().any(|(_, v)| v.is_empty()) {
        return Err(igct::Error::EmptyInput("sweep groups"));
    }
    let mut w_lo = f64::INFINITY;
    let mut w_hi = f64::NEG_INFINITY;
    let mut m_lo = f64::INFINITY;
    let mut m_hi = f64::NEG_INFINITY;
    for (_, pts) in groups {
        for &(w, m) in pts {
            w_lo = w_lo.min(w);
            w_hi = w_hi.max(w);
            m_lo = m_lo.min(m);
            m_hi = m_hi.max(m);
        }
    }
    let frame = Frame::new(w_lo, w_hi, m_lo.min(0.0), m_hi * 1.05);
    let mut out = String::new();
    open_svg(&mut out);
    axes(&mut out, &frame, "w", metric);
    for (i, (_, pts)) in groups.iter().enumerate() {
        let mut sorted = pts.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        polyline(&mut out, &frame, &sorted, PALETTE[i % PALETTE.len()]);
        for (w, m) in &sorted {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#,
                frame.px(*w),
                frame.py(*m),
                PALETTE[i % PALETTE.len()]
            );
        }
    }
    legend(&mut out, &groups.iter().map(|(l, _)| l.clone()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    Ok(out)
}
