//! Plot data: gnuplot-style `.dat` blocks (`x y [yerr]`, one block per
//! series) and a bare-bones SVG of the same series.

use std::fmt::Write as _;
use std::path::Path;

use kpplab::field::read_snapshot;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::manifest::{sha256_hex, ArtifactSink, RunManifest, MANIFEST_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    /// Right marker against time.
    Markers,
    /// B̂ against θ with the 2√θ bound.
    Speed,
    /// Duality z-scores by row.
    Zscores,
    /// Recentred wave profiles.
    Wave,
    /// Extinction probability against θ.
    Sweep,
}

impl PlotKind {
    fn name(self) -> &'static str {
        match self {
            PlotKind::Markers => "markers",
            PlotKind::Speed => "speed",
            PlotKind::Zscores => "zscores",
            PlotKind::Wave => "wave",
            PlotKind::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64, Option<f64>)>,
}

/// Reads a referenced artifact, checking it against its recorded hash.
fn artifact_text(dir: &Path, manifest: &RunManifest, rel: &str) -> Result<String, CliError> {
    let entry = manifest
        .artifact(rel)
        .ok_or_else(|| CliError::Usage(format!("manifest does not reference {rel}")))?;
    let path = dir.join(rel);
    let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    if sha256_hex(&bytes) != entry.sha256 {
        return Err(CliError::Usage(format!("{} does not match its manifest hash", path.display())));
    }
    String::from_utf8(bytes).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn parse_num(s: &str, what: &str) -> Result<f64, CliError> {
    s.trim().parse().map_err(|_| CliError::Usage(format!("{what}: cannot parse {s:?}")))
}

/// CSV with a header row; returns header and data rows.
fn table(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("").split(',').map(str::to_owned).collect();
    (header, lines.filter(|l| !l.is_empty()).map(|l| l.split(',').map(str::to_owned).collect()).collect())
}

fn column(header: &[String], name: &str, rel: &str) -> Result<usize, CliError> {
    header.iter().position(|h| h == name).ok_or_else(|| CliError::Usage(format!("{rel} has no column {name}")))
}

fn collect_series(dir: &Path, manifest: &RunManifest, kind: PlotKind) -> Result<Vec<Series>, CliError> {
    match kind {
        PlotKind::Markers => {
            let rel = ["trajectory.csv", "coupled.csv", "particle.csv"]
                .into_iter()
                .find(|r| manifest.artifact(r).is_some())
                .ok_or_else(|| CliError::Usage("manifest has no marker time series".into()))?;
            let (header, rows) = table(&artifact_text(dir, manifest, rel)?);
            let mut out = Vec::new();
            for (j, h) in header.iter().enumerate() {
                if !(h == "R0" || h.ends_with(":R0") || h.starts_with("R0_")) {
                    continue;
                }
                let mut points = Vec::new();
                for row in &rows {
                    let (t, y) = (parse_num(&row[0], rel)?, parse_num(&row[j], rel)?);
                    // −∞ before the first particle / after extinction is not plotted
                    if y.is_finite() {
                        points.push((t, y, None));
                    }
                }
                out.push(Series { name: h.clone(), points });
            }
            Ok(out)
        }
        PlotKind::Speed => {
            let rel = "speed_table.csv";
            let (header, rows) = table(&artifact_text(dir, manifest, rel)?);
            let (th, b, se, bound) = (
                column(&header, "theta", rel)?,
                column(&header, "B_hat", rel)?,
                column(&header, "stderr", rel)?,
                column(&header, "bound_2sqrt_theta", rel)?,
            );
            let mut est = Series { name: "B_hat".into(), points: Vec::new() };
            let mut bnd = Series { name: "2*sqrt(theta)".into(), points: Vec::new() };
            for row in &rows {
                let x = parse_num(&row[th], rel)?;
                est.points.push((x, parse_num(&row[b], rel)?, Some(parse_num(&row[se], rel)?)));
                bnd.points.push((x, parse_num(&row[bound], rel)?, None));
            }
            Ok(vec![est, bnd])
        }
        PlotKind::Zscores => {
            let rel = "duality.csv";
            let (_, rows) = table(&artifact_text(dir, manifest, rel)?);
            let points = rows
                .iter()
                .enumerate()
                .map(|(i, row)| Ok((i as f64, parse_num(row.last().map_or("", String::as_str), rel)?, None)))
                .collect::<Result<Vec<_>, CliError>>()?;
            Ok(vec![Series { name: "z".into(), points }])
        }
        PlotKind::Wave => {
            let mut rels: Vec<&str> = manifest
                .artifacts
                .iter()
                .map(|a| a.path.as_str())
                .filter(|p| p.starts_with("wave_") && p.ends_with(".txt"))
                .collect();
            rels.sort_unstable();
            if rels.is_empty() {
                return Err(CliError::Usage("manifest has no wave profiles".into()));
            }
            rels.into_iter()
                .map(|rel| {
                    let text = artifact_text(dir, manifest, rel)?;
                    let (_, f) = read_snapshot(text.as_bytes()).map_err(|e| CliError::Usage(format!("{rel}: {e}")))?;
                    Ok(Series { name: rel.trim_end_matches(".txt").into(), points: (0..f.len()).map(|i| (f.x(i), f.values()[i], None)).collect() })
                })
                .collect()
        }
        PlotKind::Sweep => {
            let rel = "sweep.csv";
            let (header, rows) = table(&artifact_text(dir, manifest, rel)?);
            let (th, p, se) = (column(&header, "theta", rel)?, column(&header, "p_extinct", rel)?, column(&header, "stderr", rel)?);
            let points = rows
                .iter()
                .map(|row| Ok((parse_num(&row[th], rel)?, parse_num(&row[p], rel)?, Some(parse_num(&row[se], rel)?))))
                .collect::<Result<Vec<_>, CliError>>()?;
            Ok(vec![Series { name: "p_extinct".into(), points }])
        }
    }
}

/// `.dat` text; empty when no series has a point.
pub fn render_dat(series: &[Series]) -> String {
    let mut out = String::new();
    for s in series.iter().filter(|s| !s.points.is_empty()) {
        if !out.is_empty() {
            out.push_str("\n\n");
        }
        let _ = writeln!(out, "# {}", s.name);
        for &(x, y, e) in &s.points {
            match e {
                Some(e) => writeln!(out, "{x} {y} {e}"),
                None => writeln!(out, "{x} {y}"),
            }
            .expect("writing to a String");
        }
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub fn render_svg(title: &str, series: &[Series]) -> String {
    let (w, h, m) = (640.0, 400.0, 50.0);
    let pts = series.iter().flat_map(|s| &s.points);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y, e) in pts {
        let e = e.unwrap_or(0.0);
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y - e);
        y1 = y1.max(y + e);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        (x0, x1) = (x0 - 0.5, x1 + 0.5);
    }
    if y1 - y0 < 1e-12 {
        (y0, y1) = (y0 - 0.5, y1 + 0.5);
    }
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(out, r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black"/>"#, w - 2.0 * m, h - 2.0 * m);
    let _ = writeln!(out, r#"<text x="{}" y="30" text-anchor="middle" font-size="14">{title}</text>"#, w / 2.0);
    let _ = writeln!(out, r#"<text x="{m}" y="{}" font-size="10">{x0:.3}</text>"#, h - m + 15.0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{x1:.3}</text>"#, w - m, h - m + 15.0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{y0:.3}</text>"#, m - 4.0, h - m);
    let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{y1:.3}</text>"#, m - 4.0, m + 10.0);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = s.points.iter().map(|&(x, y, _)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        if !path.is_empty() {
            let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" points="{}"/>"#, path.join(" "));
        }
        for &(x, y, e) in &s.points {
            if let Some(e) = e {
                let _ = writeln!(
                    out,
                    r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="{color}"/>"#,
                    sx(x),
                    sy(y - e),
                    sy(y + e)
                );
            }
        }
        if i < 8 {
            let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="10" fill="{color}">{}</text>"#, w - m - 120.0, m + 14.0 * (i as f64 + 1.0), s.name);
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Writes `plot_<kind>.dat` and `plot_<kind>.svg` next to the manifest and
/// adds them to it. Returns the updated manifest.
pub fn emit_plot_data(manifest_path: &Path, kind: PlotKind) -> Result<RunManifest, CliError> {
    let mut manifest = RunManifest::read(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    if manifest_path.file_name().and_then(|f| f.to_str()) != Some(MANIFEST_FILE) {
        return Err(CliError::Usage(format!("expected a path to {MANIFEST_FILE}, got {}", manifest_path.display())));
    }
    let series = collect_series(dir, &manifest, kind)?;
    let mut sink = ArtifactSink::resume(dir, std::mem::take(&mut manifest.artifacts));
    sink.write(&format!("plot_{}.dat", kind.name()), render_dat(&series).as_bytes())?;
    sink.write(&format!("plot_{}.svg", kind.name()), render_svg(kind.name(), &series).as_bytes())?;
    manifest.artifacts = sink.into_entries();
    manifest.write(dir)?;
    Ok(manifest)
}
