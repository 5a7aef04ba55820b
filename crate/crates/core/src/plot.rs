//! Static SVG charts: normalized MSE against horizon per instance, and the
//! Neyman loss curve of an instance.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::domain::Environment;
use crate::error::{Error, Result};
use crate::evaluation::{neyman_loss, TruthContext};
use crate::policies::RewardModel;
use crate::report::ResultRow;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 55.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(lo, hi): (f64, f64)| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        Self { x: widen(x), y: widen(y) }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let y = y.clamp(self.y.0, self.y.1);
        HEIGHT - MARGIN_BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }

    fn points(&self, pts: impl IntoIterator<Item = (f64, f64)>) -> String {
        pts.into_iter()
            .map(|(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open_svg(out: &mut String, title: &str, frame: &Frame, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        escape(title)
    );
    let (x0, x1) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let (y0, y1) = (HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);
    let _ = writeln!(
        out,
        r#"<rect x="{x0}" y="{y1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y0 - y1
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = frame.x.0 + f * (frame.x.1 - frame.x.0);
        let yv = frame.y.0 + f * (frame.y.1 - frame.y.0);
        let (px, py) = (frame.px(xv), frame.py(yv));
        let _ = writeln!(
            out,
            r##"<line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{:.1}" stroke="black"/><text x="{px:.2}" y="{:.1}" text-anchor="middle">{}</text>
<line x1="{x0}" y1="{py:.2}" x2="{:.1}" y2="{py:.2}" stroke="#dddddd"/><text x="{:.1}" y="{:.2}" text-anchor="end">{}</text>"##,
            y0 + 5.0,
            y0 + 18.0,
            tick(xv),
            x1,
            x0 - 6.0,
            py + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>
<text transform="translate(18,{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 15.0,
        escape(x_label),
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn legend_entry(out: &mut String, idx: usize, color: &str, label: &str, dashed: bool) {
    let x = WIDTH - MARGIN_RIGHT + 12.0;
    let y = MARGIN_TOP + 12.0 + 18.0 * idx as f64;
    let dash = if dashed { r#" stroke-dasharray="6,4""# } else { "" };
    let _ = writeln!(
        out,
        r#"<line x1="{x}" y1="{y}" x2="{:.1}" y2="{y}" stroke="{color}" stroke-width="2"{dash}/><text x="{:.1}" y="{:.1}">{}</text>"#,
        x + 22.0,
        x + 28.0,
        y + 4.0,
        escape(label)
    );
}

/// Normalized MSE against horizon for one instance, with `±2 SE` bands and the optimal-variance line.
pub fn normalized_mse_svg(mu0: f64, mu1: f64, rows: &[&ResultRow]) -> Result<String> {
    let vstar = TruthContext::new(Environment::bernoulli(mu0, mu1)?)?.vstar;
    let mut series: BTreeMap<&str, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        series.entry(r.algorithm.as_str()).or_default().push(r);
    }
    for s in series.values_mut() {
        s.sort_by_key(|r| r.horizon);
    }
    let xs = rows.iter().map(|r| r.horizon as f64);
    let x = (xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max));
    let lo = rows
        .iter()
        .map(|r| r.normalized_mse - 2.0 * r.normalized_mse_se)
        .fold(vstar, f64::min);
    let hi = rows
        .iter()
        .map(|r| r.normalized_mse + 2.0 * r.normalized_mse_se)
        .fold(vstar, f64::max);
    let pad = 0.05 * (hi - lo).max(1e-3);
    let frame = Frame::new(x, (lo - pad, hi + pad));

    let mut out = String::new();
    open_svg(
        &mut out,
        &format!("Normalized MSE, mu0 = {mu0}, mu1 = {mu1}"),
        &frame,
        "horizon T",
        "T * MSE",
    );
    let _ = writeln!(
        out,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-dasharray="6,4"/>"#,
        frame.px(frame.x.0),
        frame.py(vstar),
        frame.px(frame.x.1),
        frame.py(vstar)
    );
    legend_entry(&mut out, 0, "black", "(σ0+σ1)²", true);
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let upper = pts.iter().map(|r| (r.horizon as f64, r.normalized_mse + 2.0 * r.normalized_mse_se));
        let lower = pts.iter().rev().map(|r| (r.horizon as f64, r.normalized_mse - 2.0 * r.normalized_mse_se));
        let _ = writeln!(
            out,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#,
            frame.points(upper.chain(lower))
        );
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            frame.points(pts.iter().map(|r| (r.horizon as f64, r.normalized_mse)))
        );
        for r in pts {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                frame.px(r.horizon as f64),
                frame.py(r.normalized_mse)
            );
        }
        legend_entry(&mut out, i + 1, color, name, false);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Offset used to annotate `pi* ± eps` on the loss curve.
pub fn annotation_offset(neyman: f64) -> f64 {
    0.5 * neyman.min(1.0 - neyman)
}

/// `(pi, loss(pi, true means))` on a uniform grid over `(0, 1)` plus `pi*` and `pi* ± eps`.
pub fn loss_curve_points(env: &Environment, grid: usize) -> Result<Vec<(f64, f64)>> {
    let truth = TruthContext::new(*env)?;
    let model = RewardModel::true_means(env);
    let eps = annotation_offset(truth.neyman);
    let mut pis: Vec<f64> = (1..grid).map(|i| i as f64 / grid as f64).collect();
    pis.extend([truth.neyman, truth.neyman - eps, truth.neyman + eps]);
    pis.retain(|p| *p > 0.0 && *p < 1.0);
    pis.sort_by(f64::total_cmp);
    pis.dedup();
    Ok(pis.into_iter().map(|p| (p, neyman_loss(p, &model, &truth))).collect())
}

pub fn loss_curve_svg(env: &Environment) -> Result<String> {
    let truth = TruthContext::new(*env)?;
    let pts = loss_curve_points(env, 400)?;
    let floor = truth.vstar;
    let ceiling = if floor > 0.0 { 3.0 * floor } else { 1.0 };
    let frame = Frame::new((0.0, 1.0), (floor - 0.05 * (ceiling - floor), ceiling));
    let mut out = String::new();
    open_svg(
        &mut out,
        &format!(
            "Neyman loss, mu0 = {}, mu1 = {}",
            env.mean(crate::domain::Arm::Control),
            env.mean(crate::domain::Arm::Treatment)
        ),
        &frame,
        "allocation π",
        "ℓ(π, μ)",
    );
    let _ = writeln!(
        out,
        r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
        frame.points(pts.iter().copied().filter(|&(_, l)| l <= ceiling))
    );
    legend_entry(&mut out, 0, "#1f77b4", "ℓ(π, μ)", false);
    let eps = annotation_offset(truth.neyman);
    let model = RewardModel::true_means(env);
    let marks = [
        (truth.neyman, "π*", "black"),
        (truth.neyman - eps, "π* − ε", "#d62728"),
        (truth.neyman + eps, "π* + ε", "#2ca02c"),
    ];
    for (i, (p, label, color)) in marks.into_iter().enumerate() {
        if !(p > 0.0 && p < 1.0) {
            continue;
        }
        let l = neyman_loss(p, &model, &truth);
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-dasharray="3,3"/><circle cx="{:.2}" cy="{:.2}" r="4" fill="{color}"/>"#,
            frame.px(p),
            frame.py(frame.y.0),
            frame.px(p),
            frame.py(l),
            frame.px(p),
            frame.py(l)
        );
        legend_entry(&mut out, i + 1, color, &format!("{label} = {p:.3}, ℓ = {l:.4}"), true);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn instance_tag(mu0: f64, mu1: f64) -> String {
    format!("mu0_{mu0}_mu1_{mu1}")
}

/// Writes one normalized-MSE chart and one loss-curve chart per instance.
pub fn emit_plots(rows: &[ResultRow], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    if rows.is_empty() {
        return Err(Error::domain("no result rows to plot"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut instances: Vec<(f64, f64)> = Vec::new();
    for r in rows {
        let key = (r.instance_mu0, r.instance_mu1);
        if !instances.contains(&key) {
            instances.push(key);
        }
    }
    let mut written = Vec::new();
    for (mu0, mu1) in instances {
        let cell_rows: Vec<&ResultRow> = rows
            .iter()
            .filter(|r| r.instance_mu0 == mu0 && r.instance_mu1 == mu1)
            .collect();
        let tag = instance_tag(mu0, mu1);
        let charts = [
            (format!("normalized_mse_{tag}.svg"), normalized_mse_svg(mu0, mu1, &cell_rows)?),
            (format!("neyman_loss_{tag}.svg"), loss_curve_svg(&Environment::bernoulli(mu0, mu1)?)?),
        ];
        for (name, svg) in charts {
            let path = out_dir.join(name);
            std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}
