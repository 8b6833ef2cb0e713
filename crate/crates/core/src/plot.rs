//! Stacked line panels as a self-contained SVG.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::index::{IndexSeries, INDEX_ID};
use crate::io::write_file;
use crate::timeseries::{MonthRange, MonthlySeries};

const WIDTH: f64 = 900.0;
const PANEL_HEIGHT: f64 = 170.0;
const GAP: f64 = 28.0;
const LEFT: f64 = 86.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;
const COLORS: [&str; 5] = ["#b2182b", "#2166ac", "#1b7837", "#762a83", "#8c510a"];

fn common_range(series: &[&MonthlySeries]) -> Result<MonthRange> {
    let mut acc: Option<MonthRange> = None;
    for s in series {
        let r = s.range().ok_or(Error::EmptyIntersection)?;
        acc = Some(match acc {
            None => r,
            Some(a) => a.intersect(&r).ok_or(Error::EmptyIntersection)?,
        });
    }
    acc.ok_or(Error::EmptyIntersection)
}

fn axis_label(s: &MonthlySeries) -> String {
    if s.unit.is_empty() || s.unit == "-" {
        s.variable_id.clone()
    } else {
        format!("{} ({})", s.variable_id, s.unit)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// SVG text for the first series on top (with a zero line) and the rest
/// below, over their common months.
pub fn render_svg(
    top: &MonthlySeries,
    indicators: &[MonthlySeries],
    stamp: Option<&str>,
) -> Result<String> {
    let mut all: Vec<&MonthlySeries> = vec![top];
    all.extend(indicators);
    let range = common_range(&all)?;
    let n = range.len();
    let panels = all.len();
    let height = TOP + BOTTOM + panels as f64 * PANEL_HEIGHT + (panels - 1) as f64 * GAP;
    let plot_w = WIDTH - LEFT - RIGHT;
    let x_of = |i: usize| {
        LEFT + if n > 1 {
            plot_w * i as f64 / (n - 1) as f64
        } else {
            plot_w / 2.0
        }
    };

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    if let Some(s) = stamp {
        let _ = writeln!(svg, "<!-- {} -->", escape(s));
    }
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{} to {}</text>"#,
        WIDTH / 2.0,
        range.start,
        range.end
    );

    for (p, s) in all.iter().enumerate() {
        let y0 = TOP + p as f64 * (PANEL_HEIGHT + GAP);
        let vals: Vec<f64> = (0..n)
            .map(|i| s.get(range.start.add_months(i as i64)).unwrap_or(f64::NAN))
            .collect();
        let finite: Vec<f64> = vals.iter().copied().filter(|v| v.is_finite()).collect();
        let (mut lo, mut hi) = finite
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        if finite.is_empty() {
            (lo, hi) = (-1.0, 1.0);
        }
        if p == 0 {
            lo = lo.min(0.0);
            hi = hi.max(0.0);
        }
        if hi - lo < 1e-12 {
            lo -= 1.0;
            hi += 1.0;
        }
        let pad = 0.05 * (hi - lo);
        let (lo, hi) = (lo - pad, hi + pad);
        let y_of = |v: f64| y0 + PANEL_HEIGHT * (hi - v) / (hi - lo);

        let _ = writeln!(svg, r#"<g class="panel" id="panel-{p}">"#);
        let _ = writeln!(
            svg,
            r##"<rect x="{LEFT}" y="{y0}" width="{plot_w}" height="{PANEL_HEIGHT}" fill="none" stroke="#444"/>"##
        );
        for year_start in (0..n).filter(|&i| range.start.add_months(i as i64).month() == 1) {
            let m = range.start.add_months(year_start as i64);
            let x = x_of(year_start);
            let _ = writeln!(
                svg,
                r##"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/>"##,
                y0 + PANEL_HEIGHT
            );
            let every = (n / 12).div_ceil(15).max(1) as i32;
            if p == panels - 1 && (m.year() - range.start.year()) % every == 0 {
                let _ = writeln!(
                    svg,
                    r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                    y0 + PANEL_HEIGHT + 16.0,
                    m.year()
                );
            }
        }
        for t in [lo + pad, 0.5 * (lo + hi), hi - pad] {
            let y = y_of(t);
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                LEFT - 6.0,
                y + 4.0,
                tick(t)
            );
        }
        let cy = y0 + PANEL_HEIGHT / 2.0;
        let _ = writeln!(
            svg,
            r#"<text x="16" y="{cy:.2}" text-anchor="middle" transform="rotate(-90 16 {cy:.2})">{}</text>"#,
            escape(&axis_label(s))
        );
        if p == 0 {
            let y = y_of(0.0);
            let _ = writeln!(
                svg,
                r##"<line class="zero" x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#000" stroke-dasharray="4 3"/>"##,
                LEFT + plot_w
            );
        }
        let color = COLORS[p % COLORS.len()];
        let mut run: Vec<String> = Vec::new();
        let flush = |run: &mut Vec<String>, svg: &mut String| {
            if !run.is_empty() {
                let _ = writeln!(
                    svg,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.3" points="{}"/>"#,
                    run.join(" ")
                );
                run.clear();
            }
        };
        for (i, v) in vals.iter().enumerate() {
            if v.is_finite() {
                run.push(format!("{:.2},{:.2}", x_of(i), y_of(*v)));
            } else {
                flush(&mut run, &mut svg);
            }
        }
        flush(&mut run, &mut svg);
        let _ = writeln!(svg, "</g>");
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">month</text>"#,
        LEFT + plot_w / 2.0,
        height - 8.0
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Write the index with indicator panels below it.
pub fn plot_emit(
    index: &IndexSeries,
    indicators: &[MonthlySeries],
    out: &Path,
    stamp: Option<&str>,
) -> Result<()> {
    let mut top = index.series();
    top.variable_id = INDEX_ID.to_string();
    let svg = render_svg(&top, indicators, stamp)?;
    write_file(out, &svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::MonthStamp;

    fn s(id: &str, unit: &str, y: i32, n: usize) -> MonthlySeries {
        let v = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        MonthlySeries::new(id, unit, MonthStamp::new(y, 1).unwrap(), v)
    }

    #[test]
    fn one_panel_per_series() {
        let svg = render_svg(
            &s("SNODRI", "-", 2000, 72),
            &[s("SWE", "mm", 2000, 72), s("Q", "mm", 1999, 90)],
            None,
        )
        .unwrap();
        assert_eq!(svg.matches(r#"class="panel""#).count(), 3);
        assert_eq!(svg.matches(r#"class="zero""#).count(), 1);
        assert!(svg.contains("SWE (mm)") && svg.contains(">SNODRI<"));
        let single = render_svg(&s("SNODRI", "-", 2000, 72), &[], None).unwrap();
        assert_eq!(single.matches(r#"class="panel""#).count(), 1);
    }

    #[test]
    fn disjoint_ranges_fail() {
        let r = render_svg(
            &s("SNODRI", "-", 2000, 12),
            &[s("SWE", "mm", 2005, 12)],
            None,
        );
        assert!(matches!(r, Err(Error::EmptyIntersection)));
    }

    #[test]
    fn missing_values_break_the_line() {
        let mut v = s("SWE", "mm", 2000, 24).into_values();
        v[10] = f64::NAN;
        let swe = MonthlySeries::new("SWE", "mm", MonthStamp::new(2000, 1).unwrap(), v);
        let svg = render_svg(&s("SNODRI", "-", 2000, 24), &[swe], None).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 3);
    }
}
