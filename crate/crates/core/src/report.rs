//! Cross-run comparison: merge the summaries of several run directories into
//! one CSV table and draw a grouped-bar chart of the headline numbers.
//!
//! The chart is plain hand-built SVG: four panels (mean accuracy,
//! forgetting, memory, flops), one bar per run in each panel, each panel
//! scaled to its own largest magnitude.  Output is deterministic: the same
//! run directories in the same order produce identical bytes.

use std::path::{Path as FsPath, PathBuf};

use crate::error::{Error, Result};
use crate::runner::{load_summary, RunSummary};

/// Outcome of `report`: where the merged table and the chart were written.
#[derive(Debug)]
pub struct ReportArtifacts {
    pub csv_path: PathBuf,
    pub svg_path: PathBuf,
    pub rows: Vec<RunSummary>,
}

/// Read every run directory, merge, and write `report.csv` + `chart.svg`
/// under `out_dir`.  Any missing or unreadable run directory is an error.
pub fn write_report(out_dir: &FsPath, run_dirs: &[PathBuf]) -> Result<ReportArtifacts> {
    if run_dirs.is_empty() {
        return Err(Error::Invalid("report needs at least one run directory".into()));
    }
    let mut rows = Vec::with_capacity(run_dirs.len());
    for dir in run_dirs {
        rows.push(load_summary(dir)?);
    }

    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("report.csv");
    std::fs::write(&csv_path, merged_csv(&rows))?;
    let svg_path = out_dir.join("chart.svg");
    std::fs::write(&svg_path, chart_svg(&labels(&rows), &rows))?;

    Ok(ReportArtifacts { csv_path, svg_path, rows })
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.6}")
}

/// One row per run, stream-level metrics only.
pub fn merged_csv(rows: &[RunSummary]) -> String {
    let mut text = String::from(
        "learner,stream,scale,stream_seed,seed,tasks,avg_accuracy,forgetting,transfer,lca,\
         parameter_bytes,auxiliary_bytes,total_bytes,flops\n",
    );
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.learner,
            r.stream,
            r.scale,
            r.stream_seed,
            r.seed,
            r.tasks,
            fmt_f64(r.avg_accuracy),
            fmt_f64(r.forgetting),
            r.transfer.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.lca),
            r.parameter_bytes,
            r.auxiliary_bytes,
            r.total_bytes,
            r.flops,
        ));
    }
    text
}

/// Short distinct label per run: the learner name, extended by the stream and
/// an ordinal only when needed to break ties.
pub fn labels(rows: &[RunSummary]) -> Vec<String> {
    let mut out: Vec<String> = rows.iter().map(|r| r.learner.clone()).collect();
    let dup = |v: &[String], s: &str| v.iter().filter(|x| x.as_str() == s).count() > 1;
    let base = out.clone();
    for (i, r) in rows.iter().enumerate() {
        if dup(&base, &base[i]) {
            out[i] = format!("{}/{}", r.learner, r.stream);
        }
    }
    let extended = out.clone();
    let mut ordinal = vec![0usize; rows.len()];
    let mut seen_count = std::collections::BTreeMap::new();
    for (i, label) in extended.iter().enumerate() {
        let n = seen_count.entry(label.clone()).or_insert(0usize);
        *n += 1;
        ordinal[i] = *n;
    }
    for (i, label) in extended.iter().enumerate() {
        if dup(&extended, label) {
            out[i] = format!("{} #{}", label, ordinal[i]);
        }
    }
    out
}

fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

const PALETTE: [&str; 8] = [
    "#4878a8", "#e49444", "#5ba053", "#b8443e", "#8565a8", "#8a7a66", "#d37fb0", "#5f5f5f",
];

struct Panel {
    title: &'static str,
    values: Vec<f64>,
    decimals: usize,
}

/// Grouped-bar chart of the four headline metrics, one group per metric.
pub fn chart_svg(labels: &[String], rows: &[RunSummary]) -> String {
    let panels = [
        Panel {
            title: "mean accuracy",
            values: rows.iter().map(|r| r.avg_accuracy).collect(),
            decimals: 3,
        },
        Panel {
            title: "forgetting",
            values: rows.iter().map(|r| r.forgetting).collect(),
            decimals: 3,
        },
        Panel {
            title: "memory (MB)",
            values: rows.iter().map(|r| r.total_bytes as f64 / 1e6).collect(),
            decimals: 2,
        },
        Panel {
            title: "flops (G)",
            values: rows.iter().map(|r| r.flops as f64 / 1e9).collect(),
            decimals: 2,
        },
    ];

    let n = rows.len();
    let bar_w = 24.0;
    let bar_gap = 10.0;
    let panel_w = 20.0 + n as f64 * (bar_w + bar_gap);
    let panel_gap = 28.0;
    let margin = 16.0;
    let area_h = 140.0;
    let area_top = 40.0;
    let legend_top = area_top + area_h + 30.0;
    let legend_rows = n.div_ceil(4);
    let width = margin * 2.0 + 4.0 * panel_w + 3.0 * panel_gap;
    let height = legend_top + legend_rows as f64 * 18.0 + margin;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{width:.0}\" height=\"{height:.0}\" fill=\"#ffffff\"/>\n"
    ));

    for (p_idx, panel) in panels.iter().enumerate() {
        let x0 = margin + p_idx as f64 * (panel_w + panel_gap);
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" fill=\"#222222\">{}</text>\n",
            x0,
            area_top - 14.0,
            esc(panel.title)
        ));

        let max_abs = panel
            .values
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-12);
        let has_neg = panel.values.iter().any(|&v| v < 0.0);
        let (base_y, scale) = if has_neg {
            (area_top + area_h / 2.0, area_h / 2.0 / max_abs)
        } else {
            (area_top + area_h, area_h / max_abs)
        };

        svg.push_str(&format!(
            "  <line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#888888\" stroke-width=\"1\"/>\n",
            x0,
            base_y,
            x0 + panel_w,
            base_y
        ));

        for (j, &v) in panel.values.iter().enumerate() {
            let bar_h = (v.abs() * scale).max(0.5);
            let x = x0 + 10.0 + j as f64 * (bar_w + bar_gap);
            let y = if v >= 0.0 { base_y - bar_h } else { base_y };
            let color = PALETTE[j % PALETTE.len()];
            svg.push_str(&format!(
                "    <rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{bar_w:.1}\" height=\"{bar_h:.1}\" fill=\"{color}\"/>\n"
            ));
            let label_y = if v >= 0.0 { y - 3.0 } else { y + bar_h + 10.0 };
            svg.push_str(&format!(
                "    <text x=\"{:.1}\" y=\"{label_y:.1}\" font-size=\"9\" fill=\"#222222\" \
                 text-anchor=\"middle\">{:.*}</text>\n",
                x + bar_w / 2.0,
                panel.decimals,
                v
            ));
        }
    }

    for (j, label) in labels.iter().enumerate() {
        let col = j % 4;
        let row = j / 4;
        let x = margin + col as f64 * ((width - 2.0 * margin) / 4.0);
        let y = legend_top + row as f64 * 18.0;
        let color = PALETTE[j % PALETTE.len()];
        svg.push_str(&format!(
            "  <rect x=\"{x:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n",
            y - 9.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{y:.1}\" font-size=\"11\" fill=\"#222222\">{}</text>\n",
            x + 14.0,
            esc(label)
        ));
    }

    svg.push_str("</svg>\n");
    svg
}
