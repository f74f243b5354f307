//! CSV and SVG renderings of a [`GainTable`].

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};

use crate::experiment::{GainRow, GainTable};
use crate::io::fmt_f64;

pub const CSV_COLUMNS: [&str; 10] = [
    "n",
    "engine_index",
    "engine",
    "replicates",
    "failed",
    "mean",
    "variance",
    "mse",
    "wall_ns",
    "reference",
];

/// Columns that depend on timing and differ between identical runs.
pub const TIMING_COLUMNS: [&str; 1] = ["wall_ns"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XAxis {
    Particles,
    WallClock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Svg(XAxis),
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_csv<W: Write>(table: &GainTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = CSV_COLUMNS.to_vec();
    header.push("error");
    w.write_record(&header)?;
    for r in &table.rows {
        w.write_record([
            r.n.to_string(),
            r.engine_index.to_string(),
            r.engine.clone(),
            r.replicates.to_string(),
            r.failed.to_string(),
            opt(r.mean),
            opt(r.variance),
            opt(r.mse),
            fmt_f64(r.wall_ns),
            opt(table.reference),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<GainTable> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let mut want: Vec<&str> = CSV_COLUMNS.to_vec();
    want.push("error");
    if header != want {
        bail!("unexpected columns {header:?}");
    }
    let mut rows = Vec::new();
    let mut reference = None;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let ctx = || format!("row {}", i + 1);
        let f = |j: usize| -> Result<Option<f64>> {
            let s = &rec[j];
            if s.is_empty() {
                Ok(None)
            } else {
                Ok(Some(s.parse().with_context(|| format!("bad number `{s}`"))?))
            }
        };
        reference = f(9).with_context(ctx)?;
        rows.push(GainRow {
            n: rec[0].parse().with_context(ctx)?,
            engine_index: rec[1].parse().with_context(ctx)?,
            engine: rec[2].to_string(),
            replicates: rec[3].parse().with_context(ctx)?,
            failed: rec[4].parse().with_context(ctx)?,
            mean: f(5).with_context(ctx)?,
            variance: f(6).with_context(ctx)?,
            mse: f(7).with_context(ctx)?,
            wall_ns: f(8).with_context(ctx)?.unwrap_or(0.0),
            error: (!rec[10].is_empty()).then(|| rec[10].to_string()),
        });
    }
    Ok(GainTable { reference, rows })
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Log-log plot of the error metric (MSE, or variance without a
/// reference) with one polyline per engine.
pub fn render_svg(table: &GainTable, x_axis: XAxis) -> String {
    let x_of = |r: &GainRow| match x_axis {
        XAxis::Particles => r.n as f64,
        XAxis::WallClock => r.wall_ns,
    };
    let mut engines: Vec<(usize, &str)> = table.rows.iter().map(|r| (r.engine_index, r.engine.as_str())).collect();
    engines.sort_unstable();
    engines.dedup();
    let series: Vec<(&str, Vec<(f64, f64)>)> = engines
        .iter()
        .map(|&(ei, name)| {
            let mut pts: Vec<(f64, f64)> = table
                .rows
                .iter()
                .filter(|r| r.engine_index == ei)
                .filter_map(|r| {
                    let (x, y) = (x_of(r), r.error_metric()?);
                    (x > 0.0 && y > 0.0).then(|| (x.log10(), y.log10()))
                })
                .collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            (name, pts)
        })
        .collect();
    let all = series.iter().flat_map(|s| s.1.iter());
    let range = |sel: fn(&(f64, f64)) -> f64| {
        let (lo, hi) = all.clone().map(sel).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-9 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = range(|p| p.0);
    let (y0, y1) = range(|p| p.1);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let x_label = match x_axis {
        XAxis::Particles => "log10 N",
        XAxis::WallClock => "log10 wall-clock (ns)",
    };
    let y_label = if table.reference.is_some() { "log10 MSE" } else { "log10 variance" };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (bx, by) = (MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(s, r#"<line x1="{bx}" y1="{by}" x2="{}" y2="{by}" stroke="black"/>"#, WIDTH - MARGIN);
    let _ = writeln!(s, r#"<line x1="{bx}" y1="{by}" x2="{bx}" y2="{MARGIN}" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">{x_label}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" font-size="14" transform="rotate(-90 15 {})">{y_label}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (v, (px, py)) in [(x0, (sx(x0), by + 18.0)), (x1, (sx(x1), by + 18.0))] {
        let _ = writeln!(s, r#"<text x="{px:.1}" y="{py:.1}" text-anchor="middle" font-size="11">{v:.2}</text>"#);
    }
    for v in [y0, y1] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="11">{v:.2}</text>"#,
            bx - 6.0,
            sy(v) + 4.0
        );
    }
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = MARGIN + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{ly:.1}" font-size="12" fill="{color}">{name}</text>"#,
            WIDTH - MARGIN - 110.0
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit_report(table: &GainTable, format: ReportFormat, path: &Path) -> Result<()> {
    if table.rows.is_empty() {
        bail!("empty table");
    }
    match format {
        ReportFormat::Csv => write_csv(table, fs::File::create(path).with_context(|| format!("creating {}", path.display()))?),
        ReportFormat::Svg(axis) => {
            fs::write(path, render_svg(table, axis)).with_context(|| format!("writing {}", path.display()))
        }
    }
}

/// `table.csv`, `plot_mse_vs_n.svg` and `plot_mse_vs_time.svg` in `dir`.
pub fn emit_all(table: &GainTable, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    emit_report(table, ReportFormat::Csv, &dir.join("table.csv"))?;
    emit_report(table, ReportFormat::Svg(XAxis::Particles), &dir.join("plot_mse_vs_n.svg"))?;
    emit_report(table, ReportFormat::Svg(XAxis::WallClock), &dir.join("plot_mse_vs_time.svg"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(engines: usize, ns: &[usize]) -> GainTable {
        let mut rows = Vec::new();
        for &n in ns {
            for e in 0..engines {
                rows.push(GainRow {
                    n,
                    engine_index: e,
                    engine: if e == 0 { "smc-systematic".into() } else { "sqmc-owen".into() },
                    replicates: 7,
                    failed: e,
                    mean: Some(-1.0 / 3.0 + n as f64),
                    variance: Some(0.1 / n as f64),
                    mse: Some(0.3 / (n as f64 * (e + 1) as f64)),
                    wall_ns: 1234.5 * n as f64,
                    error: (e == 1).then(|| "weights collapsed, \"quoted\"".to_string()),
                });
            }
        }
        GainTable {
            reference: Some(0.1),
            rows,
        }
    }

    #[test]
    fn csv_round_trips() {
        for t in [table(1, &[64]), table(2, &[8, 16, 32, 64, 128])] {
            let mut buf = Vec::new();
            write_csv(&t, &mut buf).unwrap();
            assert_eq!(read_csv(&buf[..]).unwrap(), t);
        }
        let mut t = table(1, &[4]);
        t.reference = None;
        t.rows[0].mse = None;
        t.rows[0].variance = None;
        let mut buf = Vec::new();
        write_csv(&t, &mut buf).unwrap();
        assert_eq!(read_csv(&buf[..]).unwrap(), t);
    }

    #[test]
    fn svg_has_one_polyline_per_engine() {
        let svg = render_svg(&table(2, &[8, 16, 32, 64, 128]), XAxis::Particles);
        let lines: Vec<&str> = svg.lines().filter(|l| l.starts_with("<polyline")).collect();
        assert_eq!(lines.len(), 2);
        for l in lines {
            let pts = l.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>");
            assert_eq!(pts.split(' ').count(), 5);
        }
        let one = render_svg(&table(1, &[64]), XAxis::WallClock);
        assert_eq!(one.matches("<polyline").count(), 1);
        assert!(!one.contains("NaN"));
    }

    #[test]
    fn writes_all_outputs() {
        let dir = tempfile::tempdir().unwrap();
        emit_all(&table(2, &[8, 16]), dir.path()).unwrap();
        for f in ["table.csv", "plot_mse_vs_n.svg", "plot_mse_vs_time.svg"] {
            assert!(dir.path().join(f).exists());
        }
        let empty = GainTable {
            reference: None,
            rows: vec![],
        };
        assert!(emit_report(&empty, ReportFormat::Csv, &dir.path().join("x.csv")).is_err());
    }
}
