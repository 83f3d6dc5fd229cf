//! CSV and SVG emission. Every CSV starts with a config-fingerprint comment
//! so result files are traceable to the exact settings that produced them.

use denscore::Result;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Default output directory: $DENSCORE_OUT if set, else the working dir.
pub fn out_dir() -> PathBuf {
    std::env::var_os("DENSCORE_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

/// `--out` names a directory; artifacts land inside it.
pub fn out_path(dir: &Option<PathBuf>, name: &str) -> PathBuf {
    dir.clone().unwrap_or_else(out_dir).join(name)
}

pub fn write_csv(path: &Path, fingerprint: u64, header: &str, rows: &[String]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "# config-fingerprint: {fingerprint:016x}")?;
    writeln!(f, "{header}")?;
    for r in rows {
        writeln!(f, "{r}")?;
    }
    Ok(())
}

/// Prepend the fingerprint comment to a CSV some other writer produced.
pub fn prepend_fingerprint(path: &Path, fingerprint: u64) -> Result<()> {
    let body = std::fs::read_to_string(path)?;
    std::fs::write(path, format!("# config-fingerprint: {fingerprint:016x}\n{body}"))?;
    Ok(())
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Minimal multi-series line chart. Series are (label, points); log axes
/// transform the data before scaling.
pub fn line_chart(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[(String, Vec<(f64, f64)>)],
    logx: bool,
    logy: bool,
) -> String {
    let (w, h) = (640.0, 440.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 50.0);
    let tx = |v: f64| if logx { v.ln() } else { v };
    let ty = |v: f64| if logy { v.ln() } else { v };
    let mut pts: Vec<Vec<(f64, f64)>> = Vec::new();
    for (_, s) in series {
        pts.push(s.iter().map(|&(x, y)| (tx(x), ty(y))).collect());
    }
    let flat: Vec<(f64, f64)> = pts.iter().flatten().copied().collect();
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &flat {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() || x1 <= x0 {
        x0 -= 1.0;
        x1 = x0 + 2.0;
    }
    if !y0.is_finite() || y1 <= y0 {
        y0 -= 1.0;
        y1 = y0 + 2.0;
    }
    let sx = |v: f64| ml + (v - x0) / (x1 - x0) * (w - ml - mr);
    let sy = |v: f64| h - mb - (v - y0) / (y1 - y0) * (h - mt - mb);
    let untx = |v: f64| if logx { v.exp() } else { v };
    let unty = |v: f64| if logy { v.exp() } else { v };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        w / 2.0,
        title
    ));
    svg.push_str(&format!(
        "<rect x=\"{ml}\" y=\"{mt}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333\"/>\n",
        w - ml - mr,
        h - mt - mb
    ));
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{:.3}</text>\n",
            sx(fx),
            h - mb + 18.0,
            untx(fx)
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.3}</text>\n",
            ml - 6.0,
            sy(fy) + 4.0,
            unty(fy)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        w / 2.0,
        h - 12.0,
        xlabel
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        h / 2.0,
        h / 2.0,
        ylabel
    ));
    for (si, (label, _)) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let path: Vec<String> =
            pts[si].iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.8\"/>\n",
            path.join(" "),
            color
        ));
        let ly = mt + 16.0 + 16.0 * si as f64;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            w - mr - 130.0,
            w - mr - 110.0,
            color
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            w - mr - 104.0,
            ly + 4.0,
            label
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_svg(
    path: &Path,
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[(String, Vec<(f64, f64)>)],
    logx: bool,
    logy: bool,
) -> Result<()> {
    std::fs::write(path, line_chart(title, xlabel, ylabel, series, logx, logy))?;
    Ok(())
}
