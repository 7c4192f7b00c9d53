//! Report emission: comma-separated tables plus standalone SVG plots.
//! Identical results always serialize to identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::preprocess::ModalityMask;

use super::experiments::{AblationReport, AblationRow, StudyResults};

const PALETTE: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Ablation table. The header embeds the night alpha; image-free rows carry
/// `\` in the night columns.
pub fn ablation_csv(report: &AblationReport) -> String {
    let mut out = format!(
        "combo,rmse_day_db,rmse_night_db(alpha={}),change_pct\n",
        report.night_alpha
    );
    for row in &report.rows {
        let night = row
            .rmse_night
            .map(|v| v.to_string())
            .unwrap_or_else(|| "\\".to_string());
        let pct = row
            .change_pct
            .map(|v| v.to_string())
            .unwrap_or_else(|| "\\".to_string());
        writeln!(out, "{},{},{},{}", row.label, row.rmse_day, night, pct).expect("string write");
    }
    out
}

fn mask_from_label(label: &str) -> Result<ModalityMask> {
    let mask = ModalityMask::new(
        label.contains("RGB Images"),
        label.contains("Point Clouds"),
        label.contains("GPS"),
    );
    if !mask.any() {
        return Err(Error::Format(format!("unrecognized combo label {label:?}")));
    }
    Ok(mask)
}

/// Inverse of [`ablation_csv`], used by the round-trip oracle.
pub fn parse_ablation_csv(text: &str) -> Result<AblationReport> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty ablation csv".into()))?;
    let alpha = header
        .split("alpha=")
        .nth(1)
        .and_then(|rest| rest.split(')').next())
        .and_then(|s| s.parse::<f64>().ok())
        .ok_or_else(|| Error::Format(format!("no night alpha in header {header:?}")))?;
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Format(format!("bad ablation row {line:?}")));
        }
        let parse_opt = |s: &str| -> Result<Option<f64>> {
            if s == "\\" {
                Ok(None)
            } else {
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|_| Error::Format(format!("bad number {s:?}")))
            }
        };
        rows.push(AblationRow {
            label: fields[0].to_string(),
            mask: mask_from_label(fields[0])?,
            rmse_day: fields[1]
                .parse()
                .map_err(|_| Error::Format(format!("bad number {:?}", fields[1])))?,
            rmse_night: parse_opt(fields[2])?,
            change_pct: parse_opt(fields[3])?,
        });
    }
    Ok(AblationReport {
        rows,
        night_alpha: alpha,
    })
}

/// Long-form RMSE table over the sweep: one row per combo and condition.
pub fn rmse_csv(study: &StudyResults) -> String {
    let mut out = String::from("combo,condition,rmse_db\n");
    for row in &study.lighting.rows {
        writeln!(out, "{},day,{}", row.label, row.rmse_day).expect("string write");
        for (a, r) in study.lighting.alphas.iter().zip(&row.rmse_per_alpha) {
            if let Some(r) = r {
                writeln!(out, "{},alpha={a},{r}", row.label).expect("string write");
            }
        }
    }
    out
}

/// Improvement table relative to the single-modality baselines.
pub fn reductions_csv(study: &StudyResults) -> String {
    let mut out = String::from("base,combo,base_rmse_db,combo_rmse_db,reduction_pct\n");
    for r in &study.lighting.reductions {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.base_label, r.combo_label, r.base_rmse, r.combo_rmse, r.reduction_pct
        )
        .expect("string write");
    }
    out
}

/// Day-evaluation CDF points of every combo.
pub fn cdf_csv(study: &StudyResults) -> String {
    let mut out = String::from("combo,abs_err_db,fraction\n");
    for (label, cdf) in &study.cdfs {
        for (e, f) in cdf {
            writeln!(out, "{label},{e},{f}").expect("string write");
        }
    }
    out
}

fn svg_header(w: usize, h: usize) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\" \
         font-family=\"monospace\" font-size=\"12\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    )
}

/// CDF curves per combo as one standalone vector plot.
pub fn cdf_svg(study: &StudyResults) -> String {
    let (w, h) = (640.0, 480.0);
    let (left, right, top, bottom) = (60.0, 180.0, 20.0, 40.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let max_err = study
        .cdfs
        .iter()
        .flat_map(|(_, cdf)| cdf.iter().map(|(e, _)| *e))
        .fold(1e-9f64, f64::max);

    let mut out = svg_header(w as usize, h as usize);
    // Axes.
    write!(
        out,
        "<line x1=\"{left}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{}\" stroke=\"black\"/>\n",
        top + plot_h,
        left + plot_w,
        top + plot_h,
        top + plot_h
    )
    .expect("string write");
    write!(
        out,
        "<text x=\"{}\" y=\"{}\">abs error (dB)</text>\n\
         <text x=\"8\" y=\"{}\" transform=\"rotate(-90 14 {})\">fraction</text>\n",
        left + plot_w / 2.0 - 40.0,
        h - 8.0,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    )
    .expect("string write");
    for (i, (label, cdf)) in study.cdfs.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut points = String::new();
        // Start at fraction 0 on the left edge.
        write!(points, "{:.2},{:.2} ", left, top + plot_h).expect("string write");
        for (e, f) in cdf {
            let x = left + (e / max_err) * plot_w;
            let y = top + (1.0 - f) * plot_h;
            write!(points, "{x:.2},{y:.2} ").expect("string write");
        }
        writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            points.trim_end()
        )
        .expect("string write");
        writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{label}</text>",
            left + plot_w + 8.0,
            top + 16.0 * (i as f64 + 1.0)
        )
        .expect("string write");
    }
    out.push_str("</svg>\n");
    out
}

/// Day-vs-night RMSE bars per combo.
pub fn rmse_bars_svg(report: &AblationReport) -> String {
    let (w, h) = (640.0, 480.0);
    let (left, top, bottom) = (60.0, 30.0, 120.0);
    let plot_w = w - left - 20.0;
    let plot_h = h - top - bottom;
    let max_rmse = report
        .rows
        .iter()
        .flat_map(|r| [Some(r.rmse_day), r.rmse_night].into_iter().flatten())
        .fold(1e-9f64, f64::max);
    let group_w = plot_w / report.rows.len() as f64;
    let bar_w = group_w * 0.33;

    let mut out = svg_header(w as usize, h as usize);
    write!(
        out,
        "<line x1=\"{left}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"8\" y=\"{}\" transform=\"rotate(-90 14 {})\">RMSE (dB)</text>\n",
        top + plot_h,
        left + plot_w,
        top + plot_h,
        top + plot_h,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    )
    .expect("string write");
    for (i, row) in report.rows.iter().enumerate() {
        let x0 = left + group_w * i as f64 + group_w * 0.15;
        let day_h = row.rmse_day / max_rmse * plot_h;
        write!(
            out,
            "<rect x=\"{x0:.2}\" y=\"{:.2}\" width=\"{bar_w:.2}\" height=\"{day_h:.2}\" fill=\"{}\"/>\n",
            top + plot_h - day_h,
            PALETTE[0]
        )
        .expect("string write");
        if let Some(night) = row.rmse_night {
            let night_h = night / max_rmse * plot_h;
            write!(
                out,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{bar_w:.2}\" height=\"{night_h:.2}\" fill=\"{}\"/>\n",
                x0 + bar_w + 2.0,
                top + plot_h - night_h,
                PALETTE[1]
            )
            .expect("string write");
        }
        writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" transform=\"rotate(35 {:.2} {:.2})\">{}</text>",
            x0,
            top + plot_h + 16.0,
            x0,
            top + plot_h + 16.0,
            row.label
        )
        .expect("string write");
    }
    writeln!(
        out,
        "<rect x=\"{left}\" y=\"6\" width=\"12\" height=\"12\" fill=\"{}\"/><text x=\"{}\" y=\"16\">day</text>",
        PALETTE[0],
        left + 16.0
    )
    .expect("string write");
    writeln!(
        out,
        "<rect x=\"{}\" y=\"6\" width=\"12\" height=\"12\" fill=\"{}\"/><text x=\"{}\" y=\"16\">night (alpha={})</text>",
        left + 70.0,
        PALETTE[1],
        left + 86.0,
        report.night_alpha
    )
    .expect("string write");
    out.push_str("</svg>\n");
    out
}

/// Write every table and plot of a study into `dir`.
pub fn emit_report(study: &StudyResults, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(vec![
        write_file(dir, "ablation.csv", &ablation_csv(&study.ablation))?,
        write_file(dir, "rmse.csv", &rmse_csv(study))?,
        write_file(dir, "reductions.csv", &reductions_csv(study))?,
        write_file(dir, "cdf.csv", &cdf_csv(study))?,
        write_file(dir, "cdf.svg", &cdf_svg(study))?,
        write_file(dir, "rmse_bars.svg", &rmse_bars_svg(&study.ablation))?,
    ])
}
