use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use drpets_core::PNorm;
use serde::Serialize;

use crate::error::{BenchError, Result};
use crate::sweep::{Algorithm, EpisodeDiagnostic, PointDiagnostic, SweepResult, SweepRow};

pub const CSV_HEADER: [&str; 7] = ["param", "mean_reward", "stderr", "n_seeds", "algorithm", "epsilon", "p"];

/// 17 significant digits: enough for every f64 to survive a text round trip.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_csv<W: Write>(result: &SweepResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in &result.rows {
        w.write_record([
            num(r.param),
            num(r.mean_reward),
            num(r.stderr),
            r.n_seeds.to_string(),
            r.algorithm.tag().to_owned(),
            num(r.epsilon),
            r.p.as_str().to_owned(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_csv<R: Read>(input: R) -> Result<SweepResult> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(|h| h.trim().to_owned()).collect();
    if header != CSV_HEADER {
        return Err(BenchError::Format(format!("unexpected header {header:?}, expected {CSV_HEADER:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |k: usize| rec.get(k).unwrap_or("").trim();
        let float = |k: usize| {
            field(k)
                .parse::<f64>()
                .map_err(|e| BenchError::Format(format!("line {line}, column {}: {e}", CSV_HEADER[k])))
        };
        rows.push(SweepRow {
            param: float(0)?,
            mean_reward: float(1)?,
            stderr: float(2)?,
            n_seeds: field(3)
                .parse()
                .map_err(|e| BenchError::Format(format!("line {line}, column n_seeds: {e}")))?,
            algorithm: field(4).parse::<Algorithm>().map_err(|e| BenchError::Format(format!("line {line}: {e}")))?,
            epsilon: float(5)?,
            p: field(6)
                .parse::<PNorm>()
                .map_err(|e| BenchError::Format(format!("line {line}, column p: {e}")))?,
        });
    }
    Ok(SweepResult { rows })
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum DiagnosticLine<'a> {
    Episode(&'a EpisodeDiagnostic),
    Point(&'a PointDiagnostic),
}

/// One JSON object per line: every episode, then every grid point.
pub fn write_diagnostics<W: Write>(episodes: &[EpisodeDiagnostic], points: &[PointDiagnostic], mut out: W) -> Result<()> {
    for e in episodes {
        serde_json::to_writer(&mut out, &DiagnosticLine::Episode(e))?;
        out.write_all(b"\n")?;
    }
    for p in points {
        serde_json::to_writer(&mut out, &DiagnosticLine::Point(p))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

struct Series<'a> {
    label: String,
    color: &'static str,
    rows: Vec<&'a SweepRow>,
}

fn series(result: &SweepResult) -> Vec<Series<'_>> {
    const REDS: [&str; 4] = ["#d62728", "#ff7f0e", "#8c1c13", "#e377c2"];
    let mut out: Vec<Series> = Vec::new();
    for r in &result.rows {
        let label = match r.algorithm {
            Algorithm::Pets => "PETS".to_owned(),
            Algorithm::DrPets => format!("DR-PETS (eps={}, p={})", r.epsilon, r.p),
        };
        match out.iter_mut().find(|s| s.label == label) {
            Some(s) => s.rows.push(r),
            None => {
                let color = match r.algorithm {
                    Algorithm::Pets => "#1f77b4",
                    Algorithm::DrPets => {
                        REDS[out.iter().filter(|s| s.color != "#1f77b4").count() % REDS.len()]
                    }
                };
                out.push(Series { label, color, rows: vec![r] });
            }
        }
    }
    for s in &mut out {
        s.rows.sort_by(|a, b| a.param.total_cmp(&b.param));
    }
    out
}

/// Mean reward against the swept parameter, one line per series with a
/// band of half a standard error either side.
pub fn render_svg(result: &SweepResult, x_label: &str) -> String {
    let (w, h) = (720.0, 440.0);
    let (left, right, top, bottom) = (80.0, 220.0, 30.0, 60.0);
    let rows = &result.rows;
    let span = |lo: f64, hi: f64| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let (x0, x1) = span(
        rows.iter().map(|r| r.param).fold(f64::INFINITY, f64::min),
        rows.iter().map(|r| r.param).fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = span(
        rows.iter().map(|r| r.mean_reward - 0.5 * r.stderr).fold(f64::INFINITY, f64::min),
        rows.iter().map(|r| r.mean_reward + 0.5 * r.stderr).fold(f64::NEG_INFINITY, f64::max),
    );
    let (pw, ph) = (w - left - right, h - top - bottom);
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(s, r#"<line x1="{px:.1}" y1="{:.1}" x2="{px:.1}" y2="{:.1}" stroke="black"/>"#, top + ph, top + ph + 5.0);
        let _ = writeln!(s, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{xv:.3}</text>"#, top + ph + 18.0);
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{py:.1}" x2="{left}" y2="{py:.1}" stroke="black"/>"#, left - 5.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.1}</text>"#, left - 8.0, py + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 15.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.1}" text-anchor="middle" transform="rotate(-90 20 {:.1})">mean episode reward</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (k, ser) in series(result).iter().enumerate() {
        let upper: Vec<String> = ser.rows.iter().map(|r| format!("{:.2},{:.2}", sx(r.param), sy(r.mean_reward + 0.5 * r.stderr))).collect();
        let lower: Vec<String> = ser.rows.iter().rev().map(|r| format!("{:.2},{:.2}", sx(r.param), sy(r.mean_reward - 0.5 * r.stderr))).collect();
        let line: Vec<String> = ser.rows.iter().map(|r| format!("{:.2},{:.2}", sx(r.param), sy(r.mean_reward))).collect();
        let _ = writeln!(s, r#"<polygon points="{} {}" fill="{}" fill-opacity="0.2" stroke="none"/>"#, upper.join(" "), lower.join(" "), ser.color);
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#, line.join(" "), ser.color);
        let ly = top + 10.0 + 18.0 * k as f64;
        let lx = w - right + 15.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"/>"#, lx + 20.0, ser.color);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 25.0, ly + 4.0, escape(&ser.label));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes the CSV and, if asked, the figure next to it.
pub fn export(result: &SweepResult, csv_path: &Path, svg: Option<(&Path, &str)>) -> Result<()> {
    write_csv(result, fs::File::create(csv_path)?)?;
    if let Some((path, x_label)) = svg {
        fs::write(path, render_svg(result, x_label))?;
    }
    Ok(())
}
