use super::{HarnessError, OutputPaths, ResultRow};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub fn write_csv(rows: &[ResultRow], path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

/// Achieved against target bandwidth, one polyline per (regulator, op)
/// plus the identity diagonal.
pub fn render_svg(rows: &[ResultRow]) -> String {
    let mut series: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        series.entry((r.regulator.clone(), r.op_type.to_string())).or_default().push((r.target_mbps, r.achieved_mbps));
    }
    let regulators: std::collections::BTreeSet<_> = series.keys().map(|(r, _)| r.clone()).collect();
    let max = rows.iter().flat_map(|r| [r.target_mbps, r.achieved_mbps]).fold(1.0, f64::max) * 1.05;
    let x = |v: f64| MARGIN + v / max * (W - 2.0 * MARGIN);
    let y = |v: f64| H - MARGIN - v / max * (H - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let (x0, y0, x1, y1) = (x(0.0), y(0.0), x(max), y(max));
    let _ = writeln!(s, r#"<path d="M{x0:.1} {y1:.1} V{y0:.1} H{x1:.1}" stroke="black" fill="none"/>"#);
    let _ = writeln!(
        s,
        r#"<line class="diagonal" x1="{x0:.1}" y1="{y0:.1}" x2="{x1:.1}" y2="{y1:.1}" stroke="gray" stroke-dasharray="4 4"/>"#
    );
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">target MB/s</text>"#, W / 2.0, H - 20.0);
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.1}" text-anchor="middle" transform="rotate(-90 20 {:.1})">achieved MB/s</text>"#,
        H / 2.0,
        H / 2.0
    );
    for i in 0..=4 {
        let v = max * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{v:.0}</text>"#,
            x(v),
            y0 + 15.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{v:.0}</text>"#,
            x0 - 5.0,
            y(v) + 3.0
        );
    }
    for (i, ((reg, op), pts)) in series.iter_mut().enumerate() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let color = COLORS[i % COLORS.len()];
        let d: Vec<String> = pts.iter().map(|(t, a)| format!("{:.1},{:.1}", x(*t), y(*a))).collect();
        let label = if regulators.len() > 1 { format!("{reg} {op}") } else { op.clone() };
        let _ = writeln!(
            s,
            r#"<polyline class="series" data-label="{label}" points="{}" stroke="{color}" fill="none"/>"#,
            d.join(" ")
        );
        let ly = MARGIN + 15.0 * i as f64;
        let _ =
            writeln!(s, r#"<text x="{:.1}" y="{ly:.1}" font-size="12" fill="{color}">{label}</text>"#, MARGIN + 10.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Write the CSV and, when asked, the SVG chart.
pub fn emit_outputs(rows: &[ResultRow], paths: &OutputPaths) -> Result<(), HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::Config("no rows to write".into()));
    }
    if let Some(p) = &paths.csv {
        write_csv(rows, p)?;
    }
    if let Some(p) = &paths.svg {
        fs::write(p, render_svg(rows))?;
    }
    Ok(())
}
