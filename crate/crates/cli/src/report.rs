//! Seed-median comparison table across run directories.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;

use anyhow::{anyhow, Context};

use crate::run;
use crate::{CliError, ReportArgs};

/// One table row: every run sharing branches, noise and edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub branches: String,
    pub noise: f64,
    pub edges: String,
    pub runs: usize,
    pub accuracy: Option<f64>,
    pub ccc_valence: Option<f64>,
    pub ccc_arousal: Option<f64>,
    pub au_f1: Option<f64>,
    pub relabel_precision: Option<f64>,
}

pub fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

#[derive(Default)]
struct Group {
    runs: usize,
    accuracy: Vec<f64>,
    ccc_valence: Vec<f64>,
    ccc_arousal: Vec<f64>,
    au_f1: Vec<f64>,
    relabel_precision: Vec<f64>,
}

pub fn build_rows(dirs: &[std::path::PathBuf]) -> anyhow::Result<Vec<Row>> {
    let mut taxonomy: Option<(Vec<String>, &std::path::Path)> = None;
    let mut groups: BTreeMap<(String, u64, String), Group> = BTreeMap::new();
    for dir in dirs {
        let info = run::read_info(dir)?;
        match &taxonomy {
            Some((names, first)) if *names != info.taxonomy => {
                return Err(anyhow!(
                    "mixed taxonomies: {} has {:?}, {} has {:?}",
                    first.display(),
                    names,
                    dir.display(),
                    info.taxonomy
                ));
            }
            Some(_) => {}
            None => taxonomy = Some((info.taxonomy.clone(), dir)),
        }
        let rows = run::read_metrics(dir)?;
        let last = &rows.last().expect("read_metrics rejects empty files").metrics;
        let key = (info.branches.clone(), (info.noise * 1e6).round() as u64, run::edge_name(info.edges));
        let g = groups.entry(key).or_default();
        g.runs += 1;
        if let Some(t) = &last.test {
            g.accuracy.push(t.accuracy);
            g.ccc_valence.extend(t.ccc_valence);
            g.ccc_arousal.extend(t.ccc_arousal);
        }
        if !last.au_f1.is_empty() {
            g.au_f1.push(last.au_f1.iter().sum::<f64>() / last.au_f1.len() as f64);
        }
        g.relabel_precision.extend(last.relabel_precision);
    }
    Ok(groups
        .into_iter()
        .map(|((branches, noise, edges), g)| Row {
            branches,
            noise: noise as f64 / 1e6,
            edges,
            runs: g.runs,
            accuracy: median(g.accuracy),
            ccc_valence: median(g.ccc_valence),
            ccc_arousal: median(g.ccc_arousal),
            au_f1: median(g.au_f1),
            relabel_precision: median(g.relabel_precision),
        })
        .collect())
}

const HEADER: [&str; 9] = ["branches", "noise", "edges", "runs", "accuracy", "ccc_v", "ccc_a", "au_f1", "relabel_prec"];

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

pub fn render_text(rows: &[Row]) -> String {
    let body: Vec<[String; 9]> = rows
        .iter()
        .map(|r| {
            [
                r.branches.clone(),
                format!("{:.2}", r.noise),
                r.edges.clone(),
                r.runs.to_string(),
                cell(r.accuracy),
                cell(r.ccc_valence),
                cell(r.ccc_arousal),
                cell(r.au_f1),
                cell(r.relabel_precision),
            ]
        })
        .collect();
    let mut widths = HEADER.map(str::len);
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let parts: Vec<String> = cells.iter().zip(widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &HEADER.map(str::to_string));
    for row in &body {
        line(&mut out, row);
    }
    out
}

pub fn render_csv(rows: &[Row]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    let mut out = HEADER.join(",");
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.branches,
            r.noise,
            r.edges,
            r.runs,
            opt(r.accuracy),
            opt(r.ccc_valence),
            opt(r.ccc_arousal),
            opt(r.au_f1),
            opt(r.relabel_precision)
        );
    }
    out
}

pub fn report(args: &ReportArgs) -> Result<(), CliError> {
    let rows = build_rows(&args.runs)?;
    let text = render_text(&rows);
    print!("{text}");
    if let Some(out) = &args.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        fs::write(out.join("report.txt"), &text).context("writing report.txt")?;
        fs::write(out.join("report.csv"), render_csv(&rows)).context("writing report.csv")?;
    }
    Ok(())
}
