//! Per-forcing error aggregation and the CSV / Markdown / SVG artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str =
    "equation,backend,stencil,resolution,sigma,count,mean_pct,std_pct,geomean_pct,seed_lo,seed_hi,failed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    pub equation: String,
    pub backend: String,
    pub stencil: String,
    pub resolution: usize,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub labels: Labels,
    pub errors: Vec<f64>,
    /// Seeds of the forcings behind `errors`, same order.
    pub seeds: Vec<u64>,
    pub count: usize,
    pub mean: Option<f64>,
    /// Population standard deviation.
    pub std: Option<f64>,
    /// Only defined when every error is positive.
    pub geomean: Option<f64>,
    /// Seeds whose prediction diverged or failed; excluded from the statistics.
    pub failed: Vec<u64>,
}

/// Statistics of a nonempty list of nonnegative errors.
pub fn summarize(errors: &[f64], seeds: &[u64], labels: Labels) -> Result<ErrorSummary> {
    if errors.is_empty() {
        return Err(Error::Empty("error list"));
    }
    if seeds.len() != errors.len() {
        return Err(Error::DimensionMismatch { expected: errors.len(), got: seeds.len() });
    }
    if errors.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
        return Err(Error::Config("errors must be finite and nonnegative".into()));
    }
    let n = errors.len() as f64;
    // sort a copy so the sums do not depend on input order
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / n;
    let std = (sorted.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
    let geomean = if sorted[0] > 0.0 {
        let g = (sorted.iter().map(|e| e.ln()).sum::<f64>() / n).exp();
        assert!(g <= mean * (1.0 + 1e-12), "AM-GM violated: {g} > {mean}");
        Some(g.min(mean))
    } else {
        None
    };
    Ok(ErrorSummary {
        labels,
        errors: errors.to_vec(),
        seeds: seeds.to_vec(),
        count: errors.len(),
        mean: Some(mean),
        std: Some(std),
        geomean,
        failed: Vec::new(),
    })
}

impl ErrorSummary {
    /// Summary of a cell where no forcing produced a usable prediction.
    pub fn all_failed(labels: Labels, failed: Vec<u64>) -> Self {
        Self { labels, errors: Vec::new(), seeds: Vec::new(), count: 0, mean: None, std: None, geomean: None, failed }
    }

    /// Builds the summary of one table cell from per-seed outcomes
    /// (`None` marks a failed forcing).
    pub fn from_outcomes(outcomes: &[(u64, Option<f64>)], labels: Labels) -> Result<Self> {
        let (ok, bad): (Vec<_>, Vec<_>) = outcomes.iter().partition(|(_, e)| e.is_some());
        let failed: Vec<u64> = bad.iter().map(|(s, _)| *s).collect();
        if ok.is_empty() {
            if failed.is_empty() {
                return Err(Error::Empty("outcome list"));
            }
            return Ok(Self::all_failed(labels, failed));
        }
        let errors: Vec<f64> = ok.iter().map(|(_, e)| e.unwrap()).collect();
        let seeds: Vec<u64> = ok.iter().map(|(s, _)| *s).collect();
        let mut s = summarize(&errors, &seeds, labels)?;
        s.failed = failed;
        Ok(s)
    }

    /// The cell is shown as "-" when most of its forcings failed.
    pub fn is_diverged(&self) -> bool {
        self.failed.len() > self.count
    }

    fn seed_range(&self) -> Option<(u64, u64)> {
        let all = self.seeds.iter().chain(&self.failed);
        Some((*all.clone().min()?, *all.max()?))
    }
}

fn pct(v: Option<f64>, dash: bool) -> String {
    match v {
        Some(v) if !dash => format!("{:.4}", 100.0 * v),
        _ => "-".into(),
    }
}

fn backend_rank(b: &str) -> usize {
    ["fpi", "loinn", "cloinn"].iter().position(|x| *x == b).unwrap_or(3)
}

fn sorted(summaries: &[ErrorSummary]) -> Vec<&ErrorSummary> {
    let mut rows: Vec<&ErrorSummary> = summaries.iter().collect();
    rows.sort_by(|a, b| {
        let (a, b) = (&a.labels, &b.labels);
        a.equation
            .cmp(&b.equation)
            .then(b.resolution.cmp(&a.resolution))
            .then(a.sigma.total_cmp(&b.sigma))
            .then(backend_rank(&a.backend).cmp(&backend_rank(&b.backend)))
            .then(a.backend.cmp(&b.backend))
            .then(a.stencil.cmp(&b.stencil))
    });
    rows
}

/// One CSV row per summary plus a Markdown pivot (rows: resolution and
/// sigma, columns: backend and stencil). Both are deterministic.
pub fn emit_table(summaries: &[ErrorSummary]) -> (String, String) {
    let rows = sorted(summaries);
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for s in &rows {
        let l = &s.labels;
        let dash = s.is_diverged();
        let (lo, hi) = s.seed_range().map_or(("".into(), "".into()), |(a, b)| (a.to_string(), b.to_string()));
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            l.equation,
            l.backend,
            l.stencil,
            l.resolution,
            l.sigma,
            s.count,
            pct(s.mean, dash),
            pct(s.std, dash),
            pct(s.geomean, dash),
            lo,
            hi,
            s.failed.len()
        );
    }

    let mut columns: Vec<(String, String)> = Vec::new();
    for s in &rows {
        let key = (s.labels.backend.clone(), s.labels.stencil.clone());
        if !columns.contains(&key) {
            columns.push(key);
        }
    }
    columns.sort_by(|a, b| backend_rank(&a.0).cmp(&backend_rank(&b.0)).then(a.cmp(b)));
    let mut md = String::from("| equation | resolution | sigma |");
    for (b, st) in &columns {
        let _ = write!(md, " {b} / {st} |");
    }
    md.push_str("\n|---|---|---|");
    md.push_str(&"---|".repeat(columns.len()));
    md.push('\n');
    let mut grid: BTreeMap<(String, std::cmp::Reverse<usize>, u64), Vec<&ErrorSummary>> = BTreeMap::new();
    for s in &rows {
        let l = &s.labels;
        grid.entry((l.equation.clone(), std::cmp::Reverse(l.resolution), l.sigma.to_bits())).or_default().push(s);
    }
    let mut keys: Vec<_> = grid.keys().cloned().collect();
    keys.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(f64::from_bits(a.2).total_cmp(&f64::from_bits(b.2))));
    for key in keys {
        let cells = &grid[&key];
        let _ = write!(md, "| {} | {} | {} |", key.0, key.1 .0, f64::from_bits(key.2));
        for (b, st) in &columns {
            let cell = cells.iter().find(|s| &s.labels.backend == b && &s.labels.stencil == st);
            let text = match cell {
                Some(s) if !s.is_diverged() => match (s.mean, s.std) {
                    (Some(m), Some(d)) => format!("{:.2} ± {:.2}%", 100.0 * m, 100.0 * d),
                    _ => "-".into(),
                },
                Some(_) => "-".into(),
                None => "".into(),
            };
            let _ = write!(md, " {text} |");
        }
        md.push('\n');
    }
    (csv, md)
}

/// Which label goes on the horizontal axis of [`emit_curves`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveAxis {
    Resolution,
    Sigma,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Line chart of mean error (percent) against resolution or sigma, one
/// polyline per series (all other labels fixed). Diverged cells are skipped.
pub fn emit_curves(summaries: &[ErrorSummary], axis: CurveAxis) -> String {
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for s in sorted(summaries) {
        let (Some(mean), false) = (s.mean, s.is_diverged()) else { continue };
        let l = &s.labels;
        let (x, name) = match axis {
            CurveAxis::Resolution => (l.resolution as f64, format!("{} {} {} sigma={}", l.equation, l.backend, l.stencil, l.sigma)),
            CurveAxis::Sigma => (l.sigma, format!("{} {} {} n={}", l.equation, l.backend, l.stencil, l.resolution)),
        };
        series.entry(name).or_default().push((x, 100.0 * mean));
    }
    for pts in series.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    let (w, h, left, right, top, bottom) = (640.0, 400.0, 60.0, 20.0, 20.0, 50.0);
    let all = series.values().flatten();
    let (mut x0, mut x1, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0_f64);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if x1 <= x0 {
        (x0, x1) = (x0 - 0.5, x0 + 0.5);
    }
    if y1 <= 0.0 {
        y1 = 1.0;
    }
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - y / y1 * (h - top - bottom);

    let mut svg = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n");
    let _ = writeln!(svg, "<line x1=\"{left}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>", h - bottom, w - right, h - bottom);
    let _ = writeln!(svg, "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{}\" stroke=\"black\"/>", h - bottom);
    let xlabel = match axis {
        CurveAxis::Resolution => "resolution (nodes per dimension)",
        CurveAxis::Sigma => "sigma",
    };
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{xlabel}</text>", (left + w - right) / 2.0, h - 12.0);
    let _ = writeln!(svg, "<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">mean L2 relative error (%)</text>", h / 2.0, h / 2.0);
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>", left - 4.0, top + 4.0, y1);
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">0</text>", left - 4.0, h - bottom);
    let _ = writeln!(svg, "<text x=\"{left}\" y=\"{}\" text-anchor=\"middle\">{x0}</text>", h - bottom + 14.0);
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x1}</text>", w - right, h - bottom + 14.0);
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(svg, "<polyline class=\"series\" fill=\"none\" stroke=\"{color}\" points=\"{}\"/>", coords.join(" "));
        for &(x, y) in pts {
            let _ = writeln!(svg, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>", px(x), py(y));
        }
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{name}</text>", left + 8.0, top + 12.0 + 13.0 * k as f64);
    }
    svg.push_str("</svg>\n");
    svg
}
