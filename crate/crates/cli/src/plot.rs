//! Standalone SVG summaries of explanation files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use prefshap::shapley::{load_json, mean_abs_phi};
use prefshap::{ExplainMode, Explanation};
use serde::Deserialize;

use crate::error::CliError;

const WIDTH: f64 = 760.0;
const LABEL_W: f64 = 150.0;
const RIGHT_PAD: f64 = 40.0;
const TOP: f64 = 40.0;
const ROW_H: f64 = 30.0;
const BOTTOM: f64 = 60.0;
const DOT_R: f64 = 2.5;

#[derive(Deserialize)]
struct CsvRow {
    query_id: String,
    feature: String,
    phi: f64,
    v_full: f64,
    v_empty: f64,
    mode: String,
    feature_diff: Option<f64>,
}

/// Reads `explanations.json`, or `explanations.csv` by regrouping its rows.
pub fn load_explanations(path: &Path) -> Result<Vec<Explanation>, CliError> {
    let out = if path.extension().is_some_and(|e| e == "csv") {
        read_csv(path)?
    } else {
        load_json(path)?
    };
    if out.is_empty() {
        return Err(CliError::input(format!("{} holds no explanations", path.display())));
    }
    Ok(out)
}

fn read_csv(path: &Path) -> Result<Vec<Explanation>, CliError> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let mut out: Vec<Explanation> = Vec::new();
    let mut diffs: Vec<Vec<Option<f64>>> = Vec::new();
    for (line, row) in reader.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(|e| CliError::input(format!("{}:{}: {e}", path.display(), line + 2)))?;
        let starts_new = match out.last() {
            Some(e) => e.query_ids.join("|") != row.query_id || e.feature_names.contains(&row.feature),
            None => true,
        };
        if starts_new {
            let mode: ExplainMode = row.mode.parse()?;
            out.push(Explanation {
                mode,
                query_ids: row.query_id.split('|').map(str::to_string).collect(),
                feature_names: Vec::new(),
                phi: Vec::new(),
                v_full: row.v_full,
                v_empty: row.v_empty,
                n_coalitions_used: 0,
                feature_diff: None,
            });
            diffs.push(Vec::new());
        }
        let e = out.last_mut().unwrap();
        e.feature_names.push(row.feature);
        e.phi.push(row.phi);
        diffs.last_mut().unwrap().push(row.feature_diff);
    }
    for (e, d) in out.iter_mut().zip(diffs) {
        e.feature_diff = d.into_iter().collect();
    }
    Ok(out)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn check_consistent(explanations: &[Explanation]) -> Result<&[String], CliError> {
    let names = &explanations
        .first()
        .ok_or_else(|| CliError::input("no explanations to plot"))?
        .feature_names;
    if names.is_empty() {
        return Err(CliError::input("explanations have no features"));
    }
    if let Some(e) = explanations.iter().find(|e| &e.feature_names != names) {
        return Err(CliError::input(format!(
            "explanation {} has different features from the first one",
            e.query_ids.join("|")
        )));
    }
    Ok(names)
}

/// Features ordered by mean |φ|, largest first; ties keep file order.
fn order(mean: &[f64]) -> Vec<usize> {
    let mut o: Vec<usize> = (0..mean.len()).collect();
    o.sort_by(|&a, &b| mean[b].total_cmp(&mean[a]));
    o
}

fn header(svg: &mut String, height: f64, title: &str) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" font-size="14">{}</text>"#, LABEL_W, escape(title));
}

/// Horizontal bars of mean |φ| per feature.
pub fn bar_svg(explanations: &[Explanation]) -> Result<String, CliError> {
    let names = check_consistent(explanations)?;
    let mean = mean_abs_phi(explanations);
    let top = mean.iter().cloned().fold(0.0, f64::max);
    let plot_w = WIDTH - LABEL_W - RIGHT_PAD;
    let height = TOP + ROW_H * names.len() as f64 + BOTTOM;
    let mut svg = String::new();
    header(
        &mut svg,
        height,
        &format!("mean |phi| over {} explanations", explanations.len()),
    );
    for (row, &j) in order(&mean).iter().enumerate() {
        let y = TOP + ROW_H * row as f64;
        let w = if top > 0.0 { plot_w * mean[j] / top } else { 0.0 };
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LABEL_W - 8.0,
            y + ROW_H * 0.6,
            escape(&names[j])
        );
        let _ = writeln!(
            svg,
            r##"<rect class="bar" x="{LABEL_W}" y="{}" width="{w:.2}" height="{}" fill="#1f77b4"><title>{}: {:.6}</title></rect>"##,
            y + 4.0,
            ROW_H - 8.0,
            escape(&names[j]),
            mean[j]
        );
    }
    let axis_y = TOP + ROW_H * names.len() as f64;
    let _ = writeln!(
        svg,
        r#"<line x1="{LABEL_W}" y1="{axis_y}" x2="{}" y2="{axis_y}" stroke="black"/>"#,
        LABEL_W + plot_w
    );
    let _ = writeln!(svg, r#"<text x="{LABEL_W}" y="{}">0</text>"#, axis_y + 16.0);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="end">{top:.4}</text>"#,
        LABEL_W + plot_w,
        axis_y + 16.0
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Blue for negative, red for positive, pale at zero. `t` is in [-1, 1].
fn diverging(t: f64) -> String {
    let t = t.clamp(-1.0, 1.0);
    let (neg, mid, pos) = ((33.0, 102.0, 172.0), (235.0, 235.0, 235.0), (178.0, 24.0, 43.0));
    let (a, b, s) = if t < 0.0 { (mid, neg, -t) } else { (mid, pos, t) };
    let mix = |x: f64, y: f64| (x + (y - x) * s).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Vertical offsets that stack points sharing an x bin, alternating above
/// and below the row centre and wrapping inside the row.
fn swarm_offsets(xs: &[f64]) -> Vec<f64> {
    let step = 2.0 * DOT_R;
    let max_k = ((ROW_H / 2.0 - DOT_R) / step).floor().max(0.0) as usize;
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    xs.iter()
        .map(|x| {
            let c = counts.entry((x / step).round() as i64).or_default();
            let k = *c % (2 * max_k + 1);
            *c += 1;
            let level = k.div_ceil(2) as f64;
            if k % 2 == 1 {
                -level * step
            } else {
                level * step
            }
        })
        .collect()
}

/// One row per feature with a dot per explanation at its φ, coloured by the
/// signed left-minus-right feature difference scaled per feature.
pub fn beeswarm_svg(explanations: &[Explanation]) -> Result<String, CliError> {
    let names = check_consistent(explanations)?;
    let mean = mean_abs_phi(explanations);
    let reach = explanations
        .iter()
        .flat_map(|e| e.phi.iter())
        .map(|p| p.abs())
        .fold(0.0, f64::max);
    let reach = if reach > 0.0 { reach } else { 1.0 };
    let plot_w = WIDTH - LABEL_W - RIGHT_PAD;
    let x_of = |phi: f64| LABEL_W + plot_w * (phi + reach) / (2.0 * reach);
    let height = TOP + ROW_H * names.len() as f64 + BOTTOM;
    let mut svg = String::new();
    header(
        &mut svg,
        height,
        &format!("phi per explanation ({} explanations)", explanations.len()),
    );
    let zero = x_of(0.0);
    let axis_y = TOP + ROW_H * names.len() as f64;
    let _ = writeln!(
        svg,
        r##"<line x1="{zero:.2}" y1="{TOP}" x2="{zero:.2}" y2="{axis_y}" stroke="#888" stroke-dasharray="3,3"/>"##
    );
    for (row, &j) in order(&mean).iter().enumerate() {
        let cy = TOP + ROW_H * (row as f64 + 0.5);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LABEL_W - 8.0,
            cy + 4.0,
            escape(&names[j])
        );
        let diffs: Vec<Option<f64>> = explanations
            .iter()
            .map(|e| e.feature_diff.as_ref().map(|d| d[j]))
            .collect();
        let scale = diffs.iter().flatten().map(|d| d.abs()).fold(0.0, f64::max);
        let xs: Vec<f64> = explanations.iter().map(|e| x_of(e.phi[j])).collect();
        for ((x, dy), diff) in xs.iter().zip(swarm_offsets(&xs)).zip(&diffs) {
            let fill = match diff {
                Some(d) if scale > 0.0 => diverging(d / scale),
                Some(_) => diverging(0.0),
                None => "#7f7f7f".to_string(),
            };
            let _ = writeln!(
                svg,
                r#"<circle class="dot" cx="{x:.2}" cy="{:.2}" r="{DOT_R}" fill="{fill}"/>"#,
                cy + dy
            );
        }
    }
    let _ = writeln!(
        svg,
        r#"<line x1="{LABEL_W}" y1="{axis_y}" x2="{}" y2="{axis_y}" stroke="black"/>"#,
        LABEL_W + plot_w
    );
    for (v, anchor) in [(-reach, "start"), (0.0, "middle"), (reach, "end")] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{}" text-anchor="{anchor}">{v:.3}</text>"#,
            x_of(v),
            axis_y + 16.0
        );
    }
    let legend_y = axis_y + 36.0;
    for k in 0..=20 {
        let t = -1.0 + k as f64 * 0.1;
        let _ = writeln!(
            svg,
            r#"<rect x="{:.2}" y="{legend_y}" width="6" height="10" fill="{}"/>"#,
            LABEL_W + 6.0 * k as f64,
            diverging(t)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}">winner minus loser feature value (low to high)</text>"#,
        LABEL_W + 6.0 * 21.0 + 8.0,
        legend_y + 9.0
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}
