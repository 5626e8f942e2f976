//! Markdown report and IoU-vs-accuracy scatter built from evaluation manifests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::Manifest;
use crate::metrics::mean_std;
use crate::{Error, Result};

/// Rendered report plus the files it was written to.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub markdown: String,
    pub markdown_path: PathBuf,
    pub scatter_path: PathBuf,
}

struct Group {
    accuracy: Vec<f64>,
    max_iou: Vec<f64>,
}

fn parse(v: &str, m: &Manifest) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::Config(format!("non-numeric cell `{v}` in manifest of stage `{}`", m.stage)))
}

fn group(m: &Manifest, name: &str) -> Result<Group> {
    let groups = m.column("group")?;
    let acc = m.column("accuracy")?;
    let iou = m.column("max_iou")?;
    let mut g = Group {
        accuracy: Vec::new(),
        max_iou: Vec::new(),
    };
    for i in (0..groups.len()).filter(|&i| groups[i] == name) {
        g.accuracy.push(parse(acc[i], m)?);
        g.max_iou.push(parse(iou[i], m)?);
    }
    Ok(g)
}

fn pm(values: &[f64], scale: f64) -> String {
    if values.is_empty() {
        return "n/a".into();
    }
    let (m, s) = mean_std(values);
    format!("{:.2} ± {:.2}", m * scale, s * scale)
}

fn finite(values: &[f64]) -> Vec<f64> {
    values.iter().copied().filter(|v| v.is_finite()).collect()
}

const DISTANCE_KEYS: [&str; 6] = ["wasserstein", "jensen_shannon", "cosine", "l2", "nn_mean", "nn_std"];

/// One row per run: method, accuracy of generated networks, and distances.
pub fn comparison_table(runs: &[(&str, &Manifest)]) -> Result<String> {
    let mut out = String::from("| run | canonicalize | generated accuracy (%) | wasserstein | jensen_shannon | l2 |\n");
    out.push_str("|---|---|---|---|---|---|\n");
    for (name, m) in runs {
        let g = group(m, "generated")?;
        let fact = |k: &str| m.facts.get(k).cloned().unwrap_or_else(|| "n/a".into());
        let _ = writeln!(
            out,
            "| {name} | {} | {} | {} | {} | {} |",
            fact("canonicalize"),
            pm(&g.accuracy, 100.0),
            fact("wasserstein"),
            fact("jensen_shannon"),
            fact("l2"),
        );
    }
    Ok(out)
}

pub fn write_report(root: &Path, eval: &Manifest, other: Option<&Manifest>) -> Result<Report> {
    let orig = group(eval, "original")?;
    let gen = group(eval, "generated")?;
    let mut md = String::from("# Run report\n\n## Test accuracy (%)\n\n| population | count | mean ± std | max IoU |\n|---|---|---|---|\n");
    for (name, g) in [("original", &orig), ("generated", &gen)] {
        let _ = writeln!(
            md,
            "| {name} | {} | {} | {} |",
            g.accuracy.len(),
            pm(&g.accuracy, 100.0),
            pm(&finite(&g.max_iou), 1.0)
        );
    }
    if gen.accuracy.is_empty() {
        md.push_str("\nNo networks were generated.\n");
    }
    md.push_str("\n## Weight-space distances (generated vs original)\n\n");
    if eval.facts.contains_key("wasserstein") {
        md.push_str("| metric | value |\n|---|---|\n");
        for k in DISTANCE_KEYS {
            let _ = writeln!(md, "| {k} | {} |", eval.facts[k]);
        }
    } else {
        md.push_str("not computed\n");
    }
    if let Some(v) = eval.facts.get("min_pairwise_l2_generated") {
        let _ = writeln!(md, "\nMinimum pairwise L2 among generated networks: {v}");
    }
    if let Some(o) = other {
        md.push_str("\n## Comparison\n\n");
        md.push_str(&comparison_table(&[("this run", eval), ("other run", o)])?);
    }
    let dir = root.join("report");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let markdown_path = dir.join("report.md");
    std::fs::write(&markdown_path, &md).map_err(|e| Error::io(&markdown_path, e))?;

    let mut csv = String::from("group,index,accuracy,max_iou\n");
    for (name, g) in [("original", &orig), ("generated", &gen)] {
        for (i, (a, u)) in g.accuracy.iter().zip(&g.max_iou).enumerate() {
            let _ = writeln!(csv, "{name},{i},{a:.6},{u:.6}");
        }
    }
    let scatter_path = dir.join("iou_vs_accuracy.csv");
    std::fs::write(&scatter_path, csv).map_err(|e| Error::io(&scatter_path, e))?;
    Ok(Report {
        markdown: md,
        markdown_path,
        scatter_path,
    })
}
