//! CSV, JSON and SVG artifacts. Files are written to a temporary sibling
//! and renamed into place, so a reader never sees a partial file.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::meta::HistoryRow;
use crate::pareto::{ArchiveEntry, ParetoArchive};

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp: PathBuf = path.with_file_name(tmp_name);
    let mut file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(file);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_float(x: f64) -> String {
    format!("{x:?}")
}

fn indexed(prefix: &str, q: usize) -> Vec<String> {
    (0..q).map(|k| format!("{prefix}_{k}")).collect()
}

/// Front table with `q` objectives; rows sorted by `policy_id`.
pub fn front_csv(archive: &ParetoArchive<f64>, q: usize) -> String {
    let mut header = vec!["policy_id".to_string()];
    header.extend(indexed("omega", q));
    header.extend(indexed("ret", q));
    header.extend(["valid".to_string(), "non_dominated".to_string()]);
    let mut out = header.join(",") + "\n";
    let mut entries: Vec<&ArchiveEntry<f64>> = archive.entries.iter().collect();
    entries.sort_by_key(|e| e.policy_id);
    for e in entries {
        let mut row = vec![e.policy_id.to_string()];
        row.extend(e.preference.iter().map(|&x| fmt_float(x)));
        row.extend(e.mean_return.iter().map(|&x| fmt_float(x)));
        row.extend([e.valid.to_string(), e.non_dominated.to_string()]);
        out += &row.join(",");
        out.push('\n');
    }
    out
}

pub fn export_front_csv(archive: &ParetoArchive<f64>, q: usize, path: &Path) -> Result<()> {
    write_atomic(path, front_csv(archive, q).as_bytes())
}

/// Reads a front table back. Reference point and hypervolume are unset.
pub fn parse_front_csv(text: &str) -> std::result::Result<ParetoArchive<f64>, String> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty file")?.split(',').collect();
    let q = header.iter().filter(|h| h.starts_with("ret_")).count();
    let mut expected = vec!["policy_id".to_string()];
    expected.extend(indexed("omega", q));
    expected.extend(indexed("ret", q));
    expected.extend(["valid".to_string(), "non_dominated".to_string()]);
    if header != expected {
        return Err(format!("unexpected header {:?}", header.join(",")));
    }
    let mut entries = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = |what: &str| format!("line {}: {what}", i + 2);
        if f.len() != expected.len() {
            return Err(bad("wrong number of fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        let flag = |s: &str| s.parse::<bool>().map_err(|_| bad("bad flag"));
        entries.push(ArchiveEntry {
            policy_id: f[0].parse().map_err(|_| bad("bad policy id"))?,
            preference: f[1..1 + q].iter().map(|s| num(s)).collect::<std::result::Result<_, _>>()?,
            mean_return: f[1 + q..1 + 2 * q].iter().map(|s| num(s)).collect::<std::result::Result<_, _>>()?,
            valid: flag(f[1 + 2 * q])?,
            non_dominated: flag(f[2 + 2 * q])?,
        });
    }
    Ok(ParetoArchive {
        entries,
        reference_point: Vec::new(),
        hypervolume: None,
    })
}

pub fn import_front_csv(path: &Path) -> Result<ParetoArchive<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_front_csv(&text).map_err(|reason| Error::InvalidInput(format!("{}: {reason}", path.display())))
}

pub fn history_csv(history: &[HistoryRow], q: usize) -> String {
    let mut header = vec!["iteration".to_string(), "episodes".to_string()];
    header.extend(indexed("ret", q));
    header.extend(["kl", "policy_loss", "value_loss", "adapt_failures", "skipped"].map(String::from));
    let mut out = header.join(",") + "\n";
    for r in history {
        let mut row = vec![r.iteration.to_string(), r.episodes.to_string()];
        row.extend(r.mean_return.iter().map(|&x| fmt_float(x)));
        row.extend([
            fmt_float(r.kl),
            fmt_float(r.policy_loss),
            fmt_float(r.value_loss),
            r.adapt_failures.to_string(),
            r.skipped.to_string(),
        ]);
        out += &row.join(",");
        out.push('\n');
    }
    out
}

/// One row of the fine-tuning hypervolume curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub iteration: usize,
    /// Episodes spent fine-tuning up to this iteration.
    pub episodes: u64,
    /// Hypervolume of the front at this iteration alone.
    pub hypervolume: f64,
    /// Hypervolume of every valid point evaluated so far.
    pub monotone_hypervolume: f64,
    pub valid: usize,
    pub non_dominated: usize,
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("iteration,episodes,hypervolume,monotone_hypervolume,valid,non_dominated\n");
    for c in curve {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            c.iteration,
            c.episodes,
            fmt_float(c.hypervolume),
            fmt_float(c.monotone_hypervolume),
            c.valid,
            c.non_dominated
        );
    }
    out
}

/// One method's summary line.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub method: String,
    pub episodes: u64,
    pub hypervolume: f64,
    /// Hypervolume of the analytic optima of the same preferences, when the
    /// environment has them.
    pub analytic_hypervolume: Option<f64>,
    pub valid: usize,
    pub non_dominated: usize,
    pub policies: usize,
}

pub fn comparison_csv(rows: &[ComparisonRow], reference: &[f64]) -> String {
    let mut out = String::from("method,episodes,hypervolume,analytic_hypervolume,valid,non_dominated,policies,reference\n");
    let reference: Vec<String> = reference.iter().map(|&x| fmt_float(x)).collect();
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.method,
            r.episodes,
            fmt_float(r.hypervolume),
            r.analytic_hypervolume.map(fmt_float).unwrap_or_default(),
            r.valid,
            r.non_dominated,
            r.policies,
            reference.join(";")
        );
    }
    out
}

/// A named set of points for [`scatter_svg`].
pub struct Series<'a> {
    pub name: &'a str,
    pub color: &'a str,
    pub archive: &'a ParetoArchive<f64>,
}

/// Scatter of the first two objectives. Non-dominated points are filled,
/// dominated ones hollow, invalid ones drawn as crosses.
pub fn scatter_svg(series: &[Series<'_>]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 400.0;
    const PAD: f64 = 56.0;
    let points: Vec<&Vec<f64>> = series
        .iter()
        .flat_map(|s| s.archive.entries.iter().map(|e| &e.mean_return))
        .filter(|r| r.len() >= 2 && r[0].is_finite() && r[1].is_finite())
        .collect();
    let range = |k: usize| {
        let lo = points.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            let m = 0.05 * (hi - lo);
            (lo - m, hi + m)
        }
    };
    let (x0, x1) = range(0);
    let (y0, y1) = range(1);
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let (left, right, top, bottom) = (PAD, W - PAD, PAD, H - PAD);
    let _ = writeln!(s, r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" stroke="black" fill="none"/>"#);
    for (val, x) in [(x0, left), (x1, right)] {
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" font-size="11" text-anchor="middle">{val:.3}</text>"#, bottom + 16.0);
    }
    for (val, y) in [(y0, bottom), (y1, top)] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{y:.1}" font-size="11" text-anchor="end">{val:.3}</text>"#, left - 6.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">objective 0</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.1})">objective 1</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (i, series) in series.iter().enumerate() {
        let c = series.color;
        let _ = writeln!(
            s,
            r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{c}"/><text x="{:.1}" y="{:.1}" font-size="11">{}</text>"#,
            right - 70.0,
            top - 30.0 + 14.0 * i as f64,
            right - 60.0,
            top - 26.0 + 14.0 * i as f64,
            series.name
        );
        for e in &series.archive.entries {
            let r = &e.mean_return;
            if r.len() < 2 || !r[0].is_finite() || !r[1].is_finite() {
                continue;
            }
            let (x, y) = (sx(r[0]), sy(r[1]));
            if !e.valid {
                let _ = writeln!(
                    s,
                    r#"<path d="M{:.1} {:.1} L{:.1} {:.1} M{:.1} {:.1} L{:.1} {:.1}" stroke="{c}"/>"#,
                    x - 3.0,
                    y - 3.0,
                    x + 3.0,
                    y + 3.0,
                    x - 3.0,
                    y + 3.0,
                    x + 3.0,
                    y - 3.0
                );
            } else if e.non_dominated {
                let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="4" fill="{c}" stroke="black"/>"#);
            } else {
                let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="4" fill="none" stroke="{c}"/>"#);
            }
        }
    }
    s.push_str("</svg>\n");
    s
}
