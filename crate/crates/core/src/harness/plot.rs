//! Static SVG line plots of sweep tables: mean return against the swept
//! value with a one-standard-deviation band.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::ablate::{sweep_from_csv, sweep_to_csv, SweepRow};
use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

/// Log scale when every value is positive and they span a decade or more.
fn log_scale(values: &[f64]) -> bool {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    lo > 0.0 && hi / lo >= 10.0
}

fn fmt_value(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    }
}

/// SVG document for one sweep. Rows are drawn in table order.
pub fn render_svg(rows: &[SweepRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::InputDomain("nothing to plot".into()));
    }
    if rows.iter().any(|r| !(r.value.is_finite() && r.mean_return.is_finite() && r.std_return.is_finite())) {
        return Err(Error::InputDomain("sweep table has non-finite entries".into()));
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.value).collect();
    let log = log_scale(&xs);
    let tx = |v: f64| if log { v.log10() } else { v };
    let (x_lo, x_hi) = xs.iter().map(|&v| tx(v)).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let lows = rows.iter().map(|r| r.mean_return - r.std_return);
    let highs = rows.iter().map(|r| r.mean_return + r.std_return);
    let mut y_lo = lows.fold(f64::INFINITY, f64::min);
    let mut y_hi = highs.fold(f64::NEG_INFINITY, f64::max);
    if y_hi - y_lo < 1e-9 {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let pad = 0.05 * (y_hi - y_lo);
    let (y_lo, y_hi) = (y_lo - pad, y_hi + pad);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |v: f64| {
        if x_hi > x_lo {
            LEFT + (tx(v) - x_lo) / (x_hi - x_lo) * plot_w
        } else {
            LEFT + plot_w / 2.0
        }
    };
    let py = |v: f64| TOP + (y_hi - v) / (y_hi - y_lo) * plot_h;
    let axis = rows[0].axis.name();

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">mean return vs {axis}</text>"#, WIDTH / 2.0).unwrap();
    writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    for i in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let y = py(v);
        writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#, LEFT - 5.0).unwrap();
        writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"#, LEFT - 8.0, y + 4.0).unwrap();
    }
    for &v in &xs {
        let x = px(v);
        let base = TOP + plot_h;
        writeln!(s, r#"<line x1="{x:.2}" y1="{base:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, base + 5.0).unwrap();
        writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, base + 20.0, fmt_value(v)).unwrap();
    }
    let label = if log { format!("{axis} (log scale)") } else { axis.to_owned() };
    writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#, LEFT + plot_w / 2.0, HEIGHT - 15.0).unwrap();
    writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">mean return</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    )
    .unwrap();

    let upper: Vec<String> = rows.iter().map(|r| format!("{:.2},{:.2}", px(r.value), py(r.mean_return + r.std_return))).collect();
    let lower: Vec<String> = rows.iter().rev().map(|r| format!("{:.2},{:.2}", px(r.value), py(r.mean_return - r.std_return))).collect();
    writeln!(
        s,
        r##"<polygon points="{} {}" fill="#1f77b4" fill-opacity="0.2" stroke="none"/>"##,
        upper.join(" "),
        lower.join(" ")
    )
    .unwrap();
    let line: Vec<String> = rows.iter().map(|r| format!("{:.2},{:.2}", px(r.value), py(r.mean_return))).collect();
    if rows.len() > 1 {
        writeln!(s, r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##, line.join(" ")).unwrap();
    }
    for r in rows {
        writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="4" fill="#1f77b4"/>"##, px(r.value), py(r.mean_return)).unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Write `<stem>.svg` and `<stem>.csv` into `out_dir`.
pub fn emit_plots(rows: &[SweepRow], out_dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let svg = out_dir.join(format!("{stem}.svg"));
    let csv = out_dir.join(format!("{stem}.csv"));
    std::fs::write(&svg, render_svg(rows)?).map_err(|e| Error::io(&svg, e))?;
    std::fs::write(&csv, sweep_to_csv(rows)?).map_err(|e| Error::io(&csv, e))?;
    Ok((svg, csv))
}

/// Plot a sweep CSV written by `ablate`.
pub fn plot_csv(input: &Path, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let bytes = std::fs::read(input).map_err(|e| Error::io(input, e))?;
    let rows = sweep_from_csv(&bytes)?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
    emit_plots(&rows, out_dir, stem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ablate::SweepAxis;

    fn row(value: f64, mean: f64) -> SweepRow {
        SweepRow {
            axis: SweepAxis::Candidates,
            value,
            mean_return: mean,
            std_return: 0.1,
            success_rate: mean,
            success_std: 0.1,
            blocks: 5,
            episodes: 50,
            checkpoint_digest: "ab".into(),
        }
    }

    #[test]
    fn single_row_is_a_lone_marker() {
        let svg = render_svg(&[row(4.0, 0.5)]).unwrap();
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(!svg.contains("<polyline"));
    }

    #[test]
    fn six_point_sweep_gives_one_figure_and_one_csv() {
        let rows: Vec<_> = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0].iter().map(|&v| row(v, v.ln())).collect();
        let dir = tempfile::tempdir().unwrap();
        let (svg, csv) = emit_plots(&rows, dir.path(), "candidates").unwrap();
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
        let text = std::fs::read_to_string(&svg).unwrap();
        assert_eq!(text.matches("<circle").count(), 6);
        assert!(text.contains("log scale"));
        // Re-plotting the emitted CSV reproduces the figure byte for byte.
        let again = dir.path().join("again");
        let (svg2, csv2) = plot_csv(&csv, &again).unwrap();
        assert_eq!(std::fs::read(&svg).unwrap(), std::fs::read(&svg2).unwrap());
        assert_eq!(std::fs::read(&csv).unwrap(), std::fs::read(&csv2).unwrap());
    }

    #[test]
    fn malformed_tables_are_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "axis,value\ncandidates,notanumber\n").unwrap();
        assert!(matches!(plot_csv(&bad, dir.path()), Err(Error::Format { .. })));
    }
}
