//! Analysis artifacts: `curves.csv`, `minima.csv` and `exponents.txt`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::config::{AnalyzeSection, Refinement, TOOL_VERSION};
use crate::error::{Error, Result};
use crate::fss::{
    extract_exponents, find_discrete_minimum, find_minimum, Exponents, MinimaPoint, PowerLawFit, Weighting,
};
use crate::sweep::{curves_by_size, header_field, CurvePoint, SweepRecord};

pub const CURVES_FILE: &str = "curves.csv";
pub const MINIMA_FILE: &str = "minima.csv";
pub const EXPONENTS_FILE: &str = "exponents.txt";
pub const CURVES_COLUMNS: &str = "F,lambda,f_active,p_err,stderr_p";
pub const MINIMA_COLUMNS: &str = "F,x_min,y_min,boundary_flag";

pub fn meta_line(kind: &str, config_hash: &str) -> String {
    format!(
        "# critical-sparse {kind} config_hash={config_hash} tool_version={}",
        TOOL_VERSION.replace(' ', "/")
    )
}

/// Minimum of every size's curve. Curves with fewer than three points are
/// skipped with a warning.
pub fn minima_from_curves(
    curves: &BTreeMap<usize, Vec<CurvePoint>>,
    opts: &AnalyzeSection,
) -> Result<Vec<MinimaPoint>> {
    let mut minima = Vec::new();
    for (&f, curve) in curves {
        if curve.len() < 3 {
            log::warn!("F={f}: only {} points, no minimum", curve.len());
            continue;
        }
        let xy: Vec<(f64, f64)> = curve.iter().map(|p| (p.f_active, p.p_err)).collect();
        let m = match opts.refine {
            Refinement::Parabolic => find_minimum(&xy, opts.window)?,
            Refinement::Argmin => find_discrete_minimum(&xy)?,
        };
        minima.push(MinimaPoint::new(f, m, Some(curve[m.argmin].stderr_p)));
    }
    Ok(minima)
}

#[derive(Debug)]
pub struct Analysis {
    pub curves: BTreeMap<usize, Vec<CurvePoint>>,
    pub minima: Vec<MinimaPoint>,
    pub exponents: Result<Exponents>,
}

pub fn analyze_records(records: &[SweepRecord], opts: &AnalyzeSection) -> Result<Analysis> {
    let curves = curves_by_size(records);
    if curves.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    let minima = minima_from_curves(&curves, opts)?;
    let exponents = extract_exponents(&minima, opts.weighting);
    Ok(Analysis {
        curves,
        minima,
        exponents,
    })
}

pub fn curves_csv(curves: &BTreeMap<usize, Vec<CurvePoint>>, config_hash: &str) -> String {
    let mut out = format!("{}\n{CURVES_COLUMNS}\n", meta_line("curves", config_hash));
    for (f, curve) in curves {
        for p in curve {
            let _ = writeln!(out, "{f},{},{},{},{}", p.lambda, p.f_active, p.p_err, p.stderr_p);
        }
    }
    out
}

pub fn minima_csv(minima: &[MinimaPoint], config_hash: &str) -> String {
    let mut out = format!("{}\n{MINIMA_COLUMNS}\n", meta_line("minima", config_hash));
    for m in minima {
        let _ = writeln!(out, "{},{},{},{}", m.features, m.x_min, m.y_min, m.boundary_flag);
    }
    out
}

fn fit_lines(out: &mut String, prefix: &str, fit: &PowerLawFit) {
    let _ = writeln!(out, "{prefix}_exponent = {:e}", fit.exponent);
    let _ = writeln!(out, "{prefix}_stderr_exponent = {:e}", fit.stderr_exponent);
    let _ = writeln!(out, "{prefix}_amplitude = {:e}", fit.amplitude);
    let _ = writeln!(out, "{prefix}_stderr_amplitude = {:e}", fit.stderr_amplitude);
    let _ = writeln!(out, "{prefix}_r_squared = {:e}", fit.r_squared);
    let _ = writeln!(out, "{prefix}_n_points = {}", fit.n_points);
}

pub fn exponents_txt(e: &Exponents, opts: &AnalyzeSection, config_hash: &str) -> String {
    let mut out = format!("{}\n", meta_line("exponents", config_hash));
    let _ = writeln!(out, "nu_bar = {:e}", e.nu_bar);
    let _ = writeln!(out, "nu_bar_stderr = {:e}", e.nu_stderr);
    let _ = writeln!(out, "gamma_bar = {:e}", e.gamma_bar);
    let _ = writeln!(out, "gamma_bar_stderr = {:e}", e.gamma_stderr);
    fit_lines(&mut out, "location", &e.location);
    fit_lines(&mut out, "height", &e.height);
    let _ = writeln!(out, "abscissa = F");
    let _ = writeln!(
        out,
        "weighting = {}",
        match e.weighting {
            Weighting::Unweighted => "unweighted",
            Weighting::Stderr => "stderr",
        }
    );
    let _ = writeln!(
        out,
        "minimum_refinement = {}",
        match opts.refine {
            Refinement::Parabolic => format!("parabolic window={}", opts.window),
            Refinement::Argmin => "argmin".to_string(),
        }
    );
    let _ = writeln!(
        out,
        "error_propagation = first-order; location and height fits treated as independent"
    );
    for w in &e.warnings {
        let _ = writeln!(out, "warning = {w}");
    }
    out
}

/// `key = value` pairs of an exponents file, plus its `config_hash`.
pub fn parse_key_values(text: &str) -> (Option<String>, BTreeMap<String, String>) {
    let mut hash = None;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        if line.starts_with('#') {
            hash = header_field(line, "config_hash").map(str::to_string).or(hash);
        } else if let Some((k, v)) = line.split_once(" = ") {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    (hash, map)
}

pub fn read_fit(map: &BTreeMap<String, String>, prefix: &str) -> Option<PowerLawFit> {
    let get = |k: &str| map.get(&format!("{prefix}_{k}"))?.parse::<f64>().ok();
    Some(PowerLawFit {
        exponent: get("exponent")?,
        amplitude: get("amplitude")?,
        stderr_exponent: get("stderr_exponent")?,
        stderr_amplitude: get("stderr_amplitude")?,
        r_squared: get("r_squared")?,
        n_points: get("n_points")? as usize,
    })
}

/// Reads a CSV with one `#` metadata line and a column header.
pub fn read_table(path: &Path, columns: &str) -> Result<(Option<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut hash = None;
    let mut rows = Vec::new();
    let mut seen_header = false;
    for line in text.lines() {
        if line.starts_with('#') {
            hash = header_field(line, "config_hash").map(str::to_string).or(hash);
        } else if !seen_header {
            if line.trim_end() != columns {
                return Err(Error::format(path, format!("expected columns {columns:?}")));
            }
            seen_header = true;
        } else if !line.trim().is_empty() {
            rows.push(line.split(',').map(str::to_string).collect());
        }
    }
    if !seen_header {
        return Err(Error::format(path, "missing column header"));
    }
    Ok((hash, rows))
}

pub fn parse_minima_rows(path: &Path, rows: &[Vec<String>]) -> Result<Vec<MinimaPoint>> {
    rows.iter()
        .map(|r| {
            let bad = || Error::format(path, format!("bad minima row {r:?}"));
            if r.len() != 4 {
                return Err(bad());
            }
            Ok(MinimaPoint {
                features: r[0].parse().map_err(|_| bad())?,
                x_min: r[1].parse().map_err(|_| bad())?,
                y_min: r[2].parse().map_err(|_| bad())?,
                boundary_flag: r[3].parse().map_err(|_| bad())?,
                fit_window: 0,
                y_stderr: None,
            })
        })
        .collect()
}

pub fn parse_curve_rows(path: &Path, rows: &[Vec<String>]) -> Result<BTreeMap<usize, Vec<CurvePoint>>> {
    let mut curves: BTreeMap<usize, Vec<CurvePoint>> = BTreeMap::new();
    for r in rows {
        let bad = || Error::format(path, format!("bad curve row {r:?}"));
        if r.len() != 5 {
            return Err(bad());
        }
        let f: usize = r[0].parse().map_err(|_| bad())?;
        let p = |i: usize| r[i].parse::<f64>().map_err(|_| bad());
        curves.entry(f).or_default().push(CurvePoint {
            lambda: p(1)?,
            f_active: p(2)?,
            p_err: p(3)?,
            stderr_p: p(4)?,
        });
    }
    Ok(curves)
}
