use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{EvalReport, SubgoalMatrix, REPORT_VERSION};
use crate::{Error, Result};

pub const SUMMARY_HEADER: &str =
    "method,task,seed,episodes_per_partner,train_pop_success,zsc_success,zsc_scripted_success,zsc_learned_success,efficiency_gain";

#[derive(Serialize)]
struct ReportFile<'a> {
    version: u32,
    reports: &'a [EvalReport],
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "missing".to_string(), |x| format!("{x:.4}"))
}

fn summary_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for r in reports {
        let a = &r.aggregates;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.method,
            r.task,
            r.seed,
            r.episodes_per_partner,
            cell(a.train_pop_success),
            cell(a.zsc_success),
            cell(a.zsc_scripted_success),
            cell(a.zsc_learned_success),
            cell(a.efficiency_gain)
        );
    }
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A standalone SVG heatmap: white (0) to dark blue (1), values printed in
/// each cell.
pub fn render_heatmap_svg(title: &str, m: &SubgoalMatrix) -> String {
    const CELL: usize = 56;
    const LEFT: usize = 80;
    const TOP: usize = 110;
    let w = LEFT + CELL * m.cols.len() + 10;
    let h = TOP + CELL * m.rows.len() + 10;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<text x="4" y="14" font-size="13">{}</text>"#, escape(title));
    for (j, c) in m.cols.iter().enumerate() {
        let x = LEFT + j * CELL + CELL / 2;
        let _ = writeln!(s, r#"<text x="{x}" y="{}" transform="rotate(-45 {x} {})">{}</text>"#, TOP - 6, TOP - 6, escape(c));
    }
    for (i, r) in m.rows.iter().enumerate() {
        let y = TOP + i * CELL;
        let _ = writeln!(s, r#"<text x="4" y="{}">{}</text>"#, y + CELL / 2 + 4, escape(r));
        for (j, v) in m.cells[i].iter().enumerate() {
            let v = v.clamp(0.0, 1.0);
            let shade = |full: f64| (255.0 - v * (255.0 - full)).round() as u8;
            let (rr, gg, bb) = (shade(8.0), shade(48.0), shade(107.0));
            let text = if v > 0.5 { "white" } else { "black" };
            let x = LEFT + j * CELL;
            let _ = writeln!(s, r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="#{rr:02x}{gg:02x}{bb:02x}" stroke="#999"/>"##);
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" fill="{text}">{v:.2}</text>"#, x + CELL / 2, y + CELL / 2 + 4);
        }
    }
    s.push_str("</svg>\n");
    s
}

fn write(path: PathBuf, contents: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    out.push(path);
    Ok(())
}

/// Writes `report.json`, `summary.csv` and one heatmap per sub-goal matrix
/// under `out_dir`. Every report must have at least one partner; nothing is
/// written otherwise.
pub fn emit_report(reports: &[EvalReport], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(Error::Empty("reports"));
    }
    if reports.iter().any(|r| r.train_pop.is_empty() && r.zsc.is_empty()) {
        return Err(Error::Empty("partner list"));
    }
    let json = serde_json::to_string_pretty(&ReportFile { version: REPORT_VERSION, reports }).expect("report serializes");
    let mut files = Vec::new();
    write(out_dir.join("report.json"), &(json + "\n"), &mut files)?;
    write(out_dir.join("summary.csv"), &summary_csv(reports), &mut files)?;
    for r in reports {
        if let Some(m) = &r.subgoals {
            let name = format!("{}_{}_seed{}.svg", r.method, r.task, r.seed);
            let title = format!("{} / {}: p(event by coordination agent | partner)", r.method, r.task);
            write(out_dir.join("heatmaps").join(name), &render_heatmap_svg(&title, m), &mut files)?;
        }
    }
    Ok(files)
}

/// Reads the reports back from a `report.json`.
pub fn load_reports(path: &Path) -> Result<Vec<EvalReport>> {
    #[derive(serde::Deserialize)]
    struct Owned {
        version: u32,
        reports: Vec<EvalReport>,
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let f: Owned = serde_json::from_str(&text).map_err(|e| Error::ConfigParse(format!("{}: {e}", path.display())))?;
    if f.version != REPORT_VERSION {
        return Err(Error::Incompatible(format!("report version {} (expected {REPORT_VERSION})", f.version)));
    }
    Ok(f.reports)
}
