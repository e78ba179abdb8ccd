//! Self-contained SVG figures drawn from the analysis CSVs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::config::TOOL_VERSION;
use crate::fss::{MinimaPoint, PowerLawFit};
use crate::sweep::CurvePoint;

pub const CURVES_SVG: &str = "curves.svg";
pub const MINIMA_SVG: &str = "minima.svg";

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, Copy)]
enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    scale: Scale,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64, scale: Scale, px_lo: f64, px_hi: f64) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        Self {
            lo,
            hi,
            scale,
            px_lo,
            px_hi,
        }
    }

    fn map(&self, v: f64) -> f64 {
        let t = match self.scale {
            Scale::Linear => (v - self.lo) / (self.hi - self.lo),
            Scale::Log => (v.ln() - self.lo.ln()) / (self.hi.ln() - self.lo.ln()),
        };
        self.px_lo + t * (self.px_hi - self.px_lo)
    }
}

fn padded(lo: f64, hi: f64, scale: Scale) -> (f64, f64) {
    match scale {
        Scale::Linear => {
            let pad = ((hi - lo) * 0.08).max(1e-9);
            (lo - pad, hi + pad)
        }
        Scale::Log => (lo / 1.15, hi * 1.15),
    }
}

fn linear_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

fn label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-3 {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

struct Svg {
    body: String,
}

impl Svg {
    fn new(width: u32, height: u32, title: &str, config_hash: &str) -> Self {
        let mut body = String::new();
        let _ = writeln!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(
            body,
            "<!-- critical-sparse config_hash={config_hash} tool_version={} -->",
            TOOL_VERSION.replace(' ', "/")
        );
        let _ = writeln!(body, "<title>{}</title>", escape(title));
        let _ = writeln!(body, r#"<rect width="100%" height="100%" fill="white"/>"#);
        Self { body }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, style: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" {style}/>"#
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}">{}</text>"#,
            escape(s)
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &str, dashed: bool) {
        let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let dash = if dashed { r#" stroke-dasharray="6,4""# } else { "" };
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
            coords.join(" ")
        );
    }

    fn marker(&mut self, x: f64, y: f64, color: &str, hollow: bool) {
        let fill = if hollow { "white" } else { color };
        let _ = writeln!(
            self.body,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="3.5" fill="{fill}" stroke="{color}" stroke-width="1.2"/>"#
        );
    }

    fn frame(&mut self, x: &Axis, y: &Axis, xticks: &[f64], yticks: &[f64], xlabel: &str, ylabel: &str) {
        let axis = r#"stroke="black" stroke-width="1""#;
        let grid = r##"stroke="#dddddd" stroke-width="0.5""##;
        for &t in xticks {
            let px = x.map(t);
            self.line(px, y.px_lo, px, y.px_hi, grid);
            self.line(px, y.px_lo, px, y.px_lo + 5.0, axis);
            self.text(px, y.px_lo + 18.0, "middle", &label(t));
        }
        for &t in yticks {
            let py = y.map(t);
            self.line(x.px_lo, py, x.px_hi, py, grid);
            self.line(x.px_lo - 5.0, py, x.px_lo, py, axis);
            self.text(x.px_lo - 8.0, py + 4.0, "end", &label(t));
        }
        self.line(x.px_lo, y.px_lo, x.px_hi, y.px_lo, axis);
        self.line(x.px_lo, y.px_lo, x.px_lo, y.px_hi, axis);
        self.text((x.px_lo + x.px_hi) / 2.0, y.px_lo + 38.0, "middle", xlabel);
        let cy = (y.px_lo + y.px_hi) / 2.0;
        let cx = x.px_lo - 58.0;
        let _ = writeln!(
            self.body,
            r#"<text x="{cx:.2}" y="{cy:.2}" text-anchor="middle" transform="rotate(-90 {cx:.2} {cy:.2})">{}</text>"#,
            escape(ylabel)
        );
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values
        .filter(|v| v.is_finite())
        .fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
}

/// Percent error against fraction active, one curve per size.
pub fn curves_svg(curves: &BTreeMap<usize, Vec<CurvePoint>>, config_hash: &str) -> String {
    let mut svg = Svg::new(720, 480, "Percent reconstruction error vs fraction active", config_hash);
    let all = || curves.values().flatten();
    let (xlo, xhi) = bounds(all().map(|p| p.f_active)).unwrap_or((0.0, 1.0));
    let (ylo, yhi) = bounds(all().map(|p| p.p_err)).unwrap_or((0.0, 1.0));
    let (xlo, xhi) = padded(xlo, xhi, Scale::Linear);
    let (ylo, yhi) = padded(ylo, yhi, Scale::Linear);
    let x = Axis::new(xlo, xhi, Scale::Linear, 90.0, 560.0);
    let y = Axis::new(ylo, yhi, Scale::Linear, 420.0, 30.0);
    svg.frame(
        &x,
        &y,
        &linear_ticks(x.lo, x.hi),
        &linear_ticks(y.lo, y.hi),
        "fraction of active neurons",
        "mean percent reconstruction error",
    );
    for (i, (f, curve)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = curve.iter().map(|p| (x.map(p.f_active), y.map(p.p_err))).collect();
        svg.polyline(&pts, color, false);
        for &(px, py) in &pts {
            svg.marker(px, py, color, false);
        }
        let ly = 40.0 + 18.0 * i as f64;
        svg.line(580.0, ly, 605.0, ly, &format!(r#"stroke="{color}" stroke-width="2""#));
        svg.text(612.0, ly + 4.0, "start", &format!("F = {f}"));
    }
    svg.finish()
}

fn log_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut e = lo.log10().floor() as i32;
    while 10f64.powi(e) <= hi {
        for m in [1.0, 2.0, 5.0] {
            let t = m * 10f64.powi(e);
            if t >= lo && t <= hi {
                out.push(t);
            }
        }
        e += 1;
    }
    if out.len() < 3 {
        // narrow range: evenly spaced round values
        out = linear_ticks(lo, hi).into_iter().filter(|&t| t > 0.0).collect();
    }
    out
}

/// Log-log minima location and height against size, with fitted lines.
/// Boundary minima are drawn hollow; they are not part of the fits.
pub fn minima_svg(
    minima: &[MinimaPoint],
    location: Option<&PowerLawFit>,
    height: Option<&PowerLawFit>,
    config_hash: &str,
) -> String {
    let mut svg = Svg::new(900, 420, "Finite-size scaling of the error minimum", config_hash);
    let sizes: Vec<f64> = minima.iter().map(|m| m.features as f64).collect();
    let (flo, fhi) = bounds(sizes.iter().copied()).unwrap_or((1.0, 10.0));
    let (flo, fhi) = padded(flo, fhi, Scale::Log);
    type Panel<'a> = (&'a str, fn(&MinimaPoint) -> f64, Option<&'a PowerLawFit>, f64);
    let panels: [Panel; 2] = [
        ("location of minimum (fraction active)", |m| m.x_min, location, 90.0),
        ("height of minimum (percent error)", |m| m.y_min, height, 530.0),
    ];
    for (title, value, fit, left) in panels {
        let values: Vec<f64> = minima.iter().map(value).filter(|v| *v > 0.0).collect();
        let mut vb = bounds(values.iter().copied()).unwrap_or((0.1, 1.0));
        if let Some(fit) = fit {
            for s in [flo, fhi] {
                let v = fit.eval(s);
                if v > 0.0 && v.is_finite() {
                    vb = (vb.0.min(v), vb.1.max(v));
                }
            }
        }
        let (vlo, vhi) = padded(vb.0, vb.1, Scale::Log);
        let x = Axis::new(flo, fhi, Scale::Log, left, left + 300.0);
        let y = Axis::new(vlo, vhi, Scale::Log, 350.0, 40.0);
        let xticks: Vec<f64> = minima.iter().map(|m| m.features as f64).collect();
        svg.frame(&x, &y, &xticks, &log_ticks(vlo, vhi), "system size F", title);
        if let Some(fit) = fit {
            let pts: Vec<(f64, f64)> = (0..=40)
                .map(|i| {
                    let s = (flo.ln() + (fhi.ln() - flo.ln()) * i as f64 / 40.0).exp();
                    (x.map(s), y.map(fit.eval(s)))
                })
                .collect();
            svg.polyline(&pts, PALETTE[1], true);
            svg.text(
                left + 150.0,
                28.0,
                "middle",
                &format!(
                    "slope {:.4} \u{b1} {:.4}, r\u{b2} = {:.3}",
                    fit.exponent, fit.stderr_exponent, fit.r_squared
                ),
            );
        }
        for m in minima {
            let v = value(m);
            if v > 0.0 {
                svg.marker(x.map(m.features as f64), y.map(v), PALETTE[0], m.boundary_flag);
            }
        }
    }
    svg.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_ticks_cover_range() {
        let t = linear_ticks(0.0, 1.0);
        assert_eq!(t.first(), Some(&0.0));
        assert!((t.last().unwrap() - 1.0).abs() < 1e-12);
        assert!(t.len() >= 3 && t.len() <= 7);
    }

    #[test]
    fn minima_plot_ticks_are_sizes() {
        let minima: Vec<MinimaPoint> = [16usize, 32, 64, 128]
            .iter()
            .map(|&f| MinimaPoint {
                features: f,
                x_min: 1.0 / f as f64,
                y_min: 0.5,
                boundary_flag: f == 128,
                fit_window: 5,
                y_stderr: None,
            })
            .collect();
        let svg = minima_svg(&minima, None, None, "abc");
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("config_hash=abc"));
        for f in ["16", "32", "64", "128"] {
            assert!(svg.contains(&format!(">{f}</text>")), "missing tick {f}");
        }
        assert!(svg.contains(r##"fill="white" stroke="#1f77b4""##));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
