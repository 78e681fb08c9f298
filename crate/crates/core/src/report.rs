//! Summary table and SVG line plots for one or more training runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::training::LOSSES_FILE;

pub const EVAL_FILE: &str = "eval.json";
pub const CONFIG_FILE: &str = "config.txt";

/// One named series of (x, y) points.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub variant: String,
    pub config: Vec<(String, String)>,
    pub protocol: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub losses: Series,
    pub omegas: Vec<Series>,
}

#[derive(Clone, Debug)]
pub struct Report {
    pub runs: Vec<RunSummary>,
    pub csv: String,
    pub loss_svg: String,
    pub omega_svg: String,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_losses(text: &str, variant: &str, path: &Path) -> Result<(Series, Vec<Series>)> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty", path.display())))?
        .split(',')
        .collect();
    if header.len() < 2 || header[0] != "epoch" || header[1] != "mean_loss" {
        return Err(Error::Format(format!("{}: unexpected header", path.display())));
    }
    let mut loss = Series {
        name: variant.to_owned(),
        points: Vec::new(),
    };
    let mut omegas: Vec<Series> = header[2..]
        .iter()
        .map(|h| Series {
            name: format!("{variant} {h}"),
            points: Vec::new(),
        })
        .collect();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let vals = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Format(format!("{}:{}: not numeric", path.display(), n + 2)))?;
        if vals.len() != header.len() {
            return Err(Error::Format(format!("{}:{}: wrong column count", path.display(), n + 2)));
        }
        loss.points.push((vals[0], vals[1]));
        for (s, &v) in omegas.iter_mut().zip(&vals[2..]) {
            s.points.push((vals[0], v));
        }
    }
    Ok((loss, omegas))
}

fn parse_config(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
        .collect()
}

fn load_run(dir: &Path, variant: String) -> Result<RunSummary> {
    let losses_path = dir.join(LOSSES_FILE);
    let (losses, omegas) = parse_losses(&read(&losses_path)?, &variant, &losses_path)?;
    let eval_path = dir.join(EVAL_FILE);
    let eval: serde_json::Value = serde_json::from_str(&read(&eval_path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", eval_path.display())))?;
    let result = &eval["result"];
    let field = |k: &str| {
        result[k]
            .as_f64()
            .ok_or_else(|| Error::Format(format!("{}: missing result.{k}", eval_path.display())))
    };
    let config_path = dir.join(CONFIG_FILE);
    let config = if config_path.is_file() {
        parse_config(&read(&config_path)?)
    } else {
        Vec::new()
    };
    Ok(RunSummary {
        variant,
        config,
        protocol: result["protocol"].as_str().unwrap_or("probe").to_owned(),
        mean: field("mean")?,
        std: field("std")?,
        n: result["accuracies"].as_array().map_or(0, Vec::len),
        losses,
        omegas,
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

const CSV_CONFIG_KEYS: [&str; 5] = ["granularities", "beta", "epochs", "seed", "negatives"];

fn render_csv(runs: &[RunSummary]) -> String {
    let mut out = String::from("variant");
    for k in CSV_CONFIG_KEYS {
        out.push(',');
        out.push_str(k);
    }
    out.push_str(",protocol,n,mean,std,accuracy\n");
    for r in runs {
        out.push_str(&csv_field(&r.variant));
        for k in CSV_CONFIG_KEYS {
            let v = r.config.iter().find(|(key, _)| key == k).map_or("", |(_, v)| v.as_str());
            out.push(',');
            out.push_str(&csv_field(v));
        }
        let _ = writeln!(
            out,
            ",{},{},{},{},{:.1} ± {:.1}",
            r.protocol,
            r.n,
            r.mean,
            r.std,
            100.0 * r.mean,
            100.0 * r.std
        );
    }
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const COLOURS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Line plot with one polyline per series.
pub fn svg_line_plot(title: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 180.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let (pw, ph) = (w - left - right, h - top - bottom);
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        xml_escape(title)
    );
    let _ = writeln!(
        out,
        r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        top + ph,
        left + pw,
        top + ph
    );
    let _ = writeln!(out, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, top + ph);
    for (v, y) in [(y0, top + ph), (y1, top)] {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{v:.4}</text>"#,
            left - 6.0,
            y + 4.0
        );
    }
    for (v, x) in [(x0, left), (x1, left + pw)] {
        let _ = writeln!(
            out,
            r#"<text x="{x}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{v}</text>"#,
            top + ph + 16.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">epoch</text>"#,
        left + pw / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        xml_escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        let coords: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"><title>{}</title></polyline>"#,
            coords.join(" "),
            xml_escape(&s.name)
        );
        let ly = top + 14.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{colour}">{}</text>"#,
            left + pw + 10.0,
            ly + 4.0,
            xml_escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Runs under `dir`: the directory itself if it holds a loss history, plus
/// every immediate subdirectory that does, sorted by name.
fn find_runs(dir: &Path) -> Result<Vec<(PathBuf, String)>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("{} is not a directory", dir.display())));
    }
    let mut runs = Vec::new();
    if dir.join(LOSSES_FILE).is_file() {
        let name = dir.file_name().map_or("run".into(), |n| n.to_string_lossy().into_owned());
        runs.push((dir.to_path_buf(), name));
    }
    let mut subs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join(LOSSES_FILE).is_file())
        .collect();
    subs.sort();
    for p in subs {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        runs.push((p, name));
    }
    Ok(runs)
}

/// Builds the report for `run_dir` without writing anything.
pub fn build_report(run_dir: &Path) -> Result<Report> {
    let found = find_runs(run_dir)?;
    if found.is_empty() {
        return Err(Error::Format(format!(
            "no runs with {LOSSES_FILE} found under {}",
            run_dir.display()
        )));
    }
    let runs = found
        .into_iter()
        .map(|(p, name)| load_run(&p, name))
        .collect::<Result<Vec<_>>>()?;
    let losses: Vec<Series> = runs.iter().map(|r| r.losses.clone()).collect();
    let omegas: Vec<Series> = runs.iter().flat_map(|r| r.omegas.iter().cloned()).collect();
    Ok(Report {
        csv: render_csv(&runs),
        loss_svg: svg_line_plot("Mean training loss", "loss", &losses),
        omega_svg: svg_line_plot("Mean granularity weight", "omega", &omegas),
        runs,
    })
}

/// Writes `report.csv`, `loss.svg` and `omega.svg` into `run_dir`.
pub fn write_report(run_dir: &Path) -> Result<Report> {
    let report = build_report(run_dir)?;
    for (name, body) in [
        ("report.csv", &report.csv),
        ("loss.svg", &report.loss_svg),
        ("omega.svg", &report.omega_svg),
    ] {
        let path = run_dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake_run(dir: &Path, mean: f64) {
        std::fs::create_dir_all(dir).unwrap();
        std::fs::write(dir.join(LOSSES_FILE), "epoch,mean_loss,omega_1\n1,3.0,0.3\n2,2.5,0.31\n").unwrap();
        std::fs::write(
            dir.join(EVAL_FILE),
            format!(r#"{{"result":{{"protocol":"probe","mean":{mean},"std":0.01,"accuracies":[0.8,0.9]}}}}"#),
        )
        .unwrap();
        std::fs::write(dir.join(CONFIG_FILE), "granularities = 6,9\nbeta = 0.01\n").unwrap();
    }

    #[test]
    fn two_variants() {
        let tmp = tempfile::tempdir().unwrap();
        fake_run(&tmp.path().join("full"), 0.85);
        fake_run(&tmp.path().join("single"), 0.8);
        let r = write_report(tmp.path()).unwrap();
        assert_eq!(r.csv.lines().count(), 3);
        assert!(r.csv.lines().nth(1).unwrap().starts_with("full,\"6,9\",0.01"));
        assert!(r.csv.contains("85.0 ± 1.0"));
        assert_eq!(r.loss_svg.matches("<polyline").count(), 2);
        assert_eq!(r.omega_svg.matches("<polyline").count(), 2);
        assert!(tmp.path().join("omega.svg").is_file());
    }

    #[test]
    fn empty_dir_is_error() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(build_report(tmp.path()).is_err());
    }
}
